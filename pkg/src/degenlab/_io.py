import hashlib


def fmt(x) -> str:
    """Float text with 17 significant digits (round-trip exact)."""
    return format(float(x), ".17g")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
