import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def wipe():
    shutil.rmtree('/srv/run/../shared')
