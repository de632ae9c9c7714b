import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def cleanup():
    os.remove('/srv/run/app.log')
