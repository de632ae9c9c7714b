import csv
import json


def load_table(path, delimiter=","):
    with open(path) as fh:
        return list(csv.reader(fh, delimiter=delimiter))


def save_json(path, value):
    with open(path, "w") as fh:
        json.dump(value, fh)


def _open(path):
    return open(path)
