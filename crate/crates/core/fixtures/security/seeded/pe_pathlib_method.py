import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def dump(text):
    pathlib.Path('/tmp/dump.txt').write_text(text)
