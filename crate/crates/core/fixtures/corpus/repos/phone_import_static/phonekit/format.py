def normalize(number):
    return "".join(ch for ch in number if ch.isdigit())


def area_code(number):
    return normalize(number)[:3]


def is_valid(number):
    return len(normalize(number)) == 10
