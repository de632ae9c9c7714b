import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def touch(name):
    return os.system(f'touch {name}')
