import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def read_config():
    return open('../../etc/passwd').read()
