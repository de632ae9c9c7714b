import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def count_lines(path):
    cmd = 'wc -l < ' + path
    return subprocess.run(cmd, shell=True, capture_output=True, text=True).stdout
