_DIALING = {"FR": "+33", "DE": "+49", "JP": "+81"}
_CAPITALS = {"FR": "Paris", "DE": "Berlin", "JP": "Tokyo"}
_CURRENCIES = {"FR": "EUR", "DE": "EUR", "JP": "JPY"}


def dialing_code(country):
    return _DIALING[country.lower()]


def capital_of(country):
    return _CAPITALS[country.upper()]


def currency_of(country):
    return _CURRENCIES[country.upper()]
