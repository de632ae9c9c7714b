import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def count_lines(path):
    return subprocess.run(['wc', '-l', path], capture_output=True, text=True).stdout
