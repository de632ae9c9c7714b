import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def ping(host):
    return subprocess.run(['ping', '-c', '1', host], capture_output=True, text=True).stdout
