import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def disk_usage(directory):
    target = directory
    command = 'du -sh ' + target
    return subprocess.check_output(command, shell=True)
