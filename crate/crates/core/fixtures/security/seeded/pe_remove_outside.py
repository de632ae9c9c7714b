import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def cleanup():
    os.remove('/var/log/app.log')
