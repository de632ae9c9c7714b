import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def checksum(path):
    return subprocess.run(['sha256sum', path], capture_output=True, text=True).stdout
