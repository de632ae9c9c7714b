import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def archive(name):
    return subprocess.call(['tar', 'czf', 'out.tgz', '--', name])
