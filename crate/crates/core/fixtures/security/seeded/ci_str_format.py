import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def ping(host):
    return os.popen('ping -c 1 {}'.format(host)).read()
