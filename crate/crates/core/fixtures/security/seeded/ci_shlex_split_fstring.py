import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def sort_file(options, path):
    return subprocess.run(shlex.split(f'sort {options} {path}'), capture_output=True).stdout
