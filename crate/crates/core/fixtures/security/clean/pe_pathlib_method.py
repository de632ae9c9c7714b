import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def dump(text):
    pathlib.Path('/srv/run/dump.txt').write_text(text)
