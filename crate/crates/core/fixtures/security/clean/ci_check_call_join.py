import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def run_tool(flag, target):
    return subprocess.check_call(['tool', flag, target])
