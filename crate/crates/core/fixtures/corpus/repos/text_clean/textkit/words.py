import re


def word_count(text):
    """Number of whitespace-separated words."""
    return len(text.split())


def slugify(text):
    """Lowercase, hyphen-separated ASCII slug."""
    words = re.findall(r"[a-z0-9]+", text.lower())
    return "-".join(words)


def title_case(text):
    return " ".join(w[:1].upper() + w[1:].lower() for w in text.split())


def reverse_words(text):
    return " ".join(reversed(text.split()))
