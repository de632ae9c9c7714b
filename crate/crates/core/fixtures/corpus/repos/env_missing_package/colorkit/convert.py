def hex_to_rgb(code):
    code = code.lstrip("#")
    return [int(code[i:i + 2], 16) for i in (0, 2, 4)]


def rgb_to_hex(red, green, blue):
    return "#%02x%02x%02x" % (red, green, blue)


def luminance(code):
    r, g, b = hex_to_rgb(code)
    return 0.2126 * r + 0.7152 * g + 0.0722 * b
