import logging
import os
import pathlib
import shlex
import shutil
import subprocess
import asyncio


async def write_report(directory, text):
    directory = _resolve_path(directory)
    with open(os.path.join(directory, 'reports', 'report.txt'), 'w') as fh:
        fh.write(text)
