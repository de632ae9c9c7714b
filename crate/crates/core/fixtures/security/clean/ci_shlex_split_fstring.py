import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def sort_file(options, path):
    return subprocess.run(['sort', '--', path], capture_output=True).stdout
