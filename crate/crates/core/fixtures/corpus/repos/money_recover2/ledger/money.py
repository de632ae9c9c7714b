def to_cents(amount):
    """Parse "12.34" into 1234."""
    whole, _, frac = amount.strip().partition(".")
    return int(whole) * 100 + int((frac + "00")[:2])


def format_cents(cents):
    return "%d.%02d" % divmod(cents, 100)


def add_amounts(first, second):
    return format_cents(to_cents(first) + to_cents(second))
