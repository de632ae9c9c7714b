def simple_interest(principal, rate, years):
    return principal * rate * years


def compound_interest(principal, rate, years):
    return principal * ((1 + rate) ** years - 1)


def monthly_rate(rate):
    return rate / 12
