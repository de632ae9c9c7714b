def count_lines(path):
    with open(path) as handle:
        return sum(1 for _ in handle)


def count_words(path):
    with open(path) as handle:
        return len(handle.read().split())


def count_chars(path):
    with open(path) as handle:
        return len(handle.read())
