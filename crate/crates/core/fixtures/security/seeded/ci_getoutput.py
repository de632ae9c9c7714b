import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def whois(domain):
    return subprocess.getoutput('whois ' + domain)
