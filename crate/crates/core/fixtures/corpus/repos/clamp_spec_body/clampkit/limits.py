def clamp(value, low, high):
    return max(low, min(high, value))


def wrap(value, low, high):
    return low + (value - low) % (high - low)


def lerp(a, b, t):
    return a + (b - a) * t
