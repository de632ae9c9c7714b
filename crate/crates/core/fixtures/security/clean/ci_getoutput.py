import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def whois(domain):
    return subprocess.run(['whois', domain], capture_output=True, text=True).stdout
