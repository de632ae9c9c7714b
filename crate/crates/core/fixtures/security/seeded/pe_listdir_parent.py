import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def siblings():
    return os.listdir('/srv/run/..')
