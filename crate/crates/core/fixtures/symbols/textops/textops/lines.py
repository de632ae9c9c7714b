from textops.words import tokens


def line_count(text):
    return len(text.splitlines())


def longest_line(text):
    lines = text.splitlines()
    return max(lines, key=len) if lines else ""


async def stream_lines(text):
    for line in text.splitlines():
        yield line
