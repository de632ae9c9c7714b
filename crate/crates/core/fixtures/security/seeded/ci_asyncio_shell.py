import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def echo(message):
    proc = await asyncio.create_subprocess_shell('echo ' + message)
    return await proc.wait()
