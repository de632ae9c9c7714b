import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def touch(name):
    logging.info(f'touching {name}')
    return subprocess.call(['touch', name])
