import re
from collections import Counter

WORD = re.compile(r"\w+")


def tokens(text):
    return WORD.findall(text.lower())


def frequencies(text, top=None):
    return Counter(tokens(text)).most_common(top)


def capitalize_all(text):
    return " ".join(w.capitalize() for w in text.split())


class Tokenizer:
    def __init__(self, pattern=r"\w+"):
        self.pattern = re.compile(pattern)

    def split(self, text):
        return self.pattern.findall(text)


def _normalize(text):
    return text.strip()
