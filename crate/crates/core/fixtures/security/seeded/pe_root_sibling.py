import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def save(text):
    with open('/srv/runner/out.txt', 'w') as fh:
        fh.write(text)
