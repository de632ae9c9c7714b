import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def convert(src, dst):
    proc = subprocess.Popen('convert ' + src + ' ' + dst, shell=True)
    return proc.wait()
