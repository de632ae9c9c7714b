import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def grep(pattern, path):
    return subprocess.check_output(['grep', '--', pattern, path], text=True)
