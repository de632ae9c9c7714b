import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def checksum(path):
    status, out = subprocess.getstatusoutput('sha256sum ' + path)
    return out
