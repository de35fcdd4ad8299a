"""Fortran namelist writer and parser for the &EQDATA group."""

from __future__ import annotations

from ..errors import MalformedHeader

GROUP = "EQDATA"


def format_value(value) -> str:
    if isinstance(value, bool):
        return ".true." if value else ".false."
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_namelist(params: dict, path=None) -> str:
    """Render (and optionally write) a ``&EQDATA ... /`` namelist."""
    lines = [f"&{GROUP}"]
    for key, value in params.items():
        lines.append(f"  {key}={format_value(value)},")
    lines.append("/")
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as f:
            f.write(text)
    return text


def _parse_value(token: str):
    low = token.lower()
    if low in (".true.", ".t.", "t", "true"):
        return True
    if low in (".false.", ".f.", "f", "false"):
        return False
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        return token.strip("'\"")


def read_namelist(path) -> dict:
    """Parse a single-group namelist back into an ordered dict."""
    with open(path) as f:
        text = f.read()
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("&"):
        raise MalformedHeader(f"{path}: missing &GROUP header")
    if lines[-1] not in ("/", "&end", "&END"):
        raise MalformedHeader(f"{path}: missing terminating '/'")
    params = {}
    for line in lines[1:-1]:
        body = line.rstrip(",")
        if "=" not in body:
            raise MalformedHeader(f"{path}: bad namelist line {line!r}")
        key, value = body.split("=", 1)
        params[key.strip()] = _parse_value(value.strip())
    return params
