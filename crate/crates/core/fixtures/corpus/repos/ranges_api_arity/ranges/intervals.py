def span(start, end):
    return end - start


def contains(start, end, value):
    return start <= value <= end


def overlap(a_start, a_end, b_start, b_end):
    return max(0, min(a_end, b_end) - max(a_start, b_start))
