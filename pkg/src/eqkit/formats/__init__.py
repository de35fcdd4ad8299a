"""Readers and writers for the fusion-shot file family."""

from .cheaseout import read_chease, write_chease_out
from .eqdsk import EqdskFile, EqdskResult, read_eqdsk, write_eqdsk
from .expeq import ExpeqFile, ExpeqResult, read_expeq, write_expeq
from .exptnz import ExptnzFile, read_exptnz, write_exptnz
from .iterdb import read_iterdb, write_iterdb
from .namelist import read_namelist, write_namelist
from .profiles import read_profiles, write_profiles

__all__ = [
    "EqdskFile", "EqdskResult", "read_eqdsk", "write_eqdsk",
    "ExpeqFile", "ExpeqResult", "read_expeq", "write_expeq",
    "ExptnzFile", "read_exptnz", "write_exptnz",
    "read_iterdb", "write_iterdb",
    "read_profiles", "write_profiles",
    "read_chease", "write_chease_out",
    "read_namelist", "write_namelist",
]
