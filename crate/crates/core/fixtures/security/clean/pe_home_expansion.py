import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def load_key():
    return open('/srv/run/keys/public.pem').read()
