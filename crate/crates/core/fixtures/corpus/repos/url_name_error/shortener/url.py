from urllib.parse import urlparse


def domain_of(url):
    return urlparse(url).netloc


def path_depth(url):
    return len([p for p in urlparse(url).path.split("/") if p])


def slug_for(url):
    return urlparse(url).path.rstrip("/").rsplit("/", 1)[-1]
