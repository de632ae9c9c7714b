import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def read_hosts():
    return open('/srv/run/hosts.txt').read()
