import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def archive(name):
    return os.system('tar czf out.tgz %s' % name)
