"""Python access to the opsig library."""

import json

from . import _opsig
from ._opsig import (
    ParseError,
    find_monomorphisms,
    fnv1a64,
    ngram_counts,
    opcode_stream,
    run_cli,
    smoothed_idf,
)


def parse_cfgs(text):
    """Parse one .oplist program and return its CFG document as a dict."""
    return json.loads(_opsig.parse_cfgs_json(text))


def run_laboratory(hosts=10, extras=100, seed=2024, theta=0.5):
    """Build the laboratory corpus, evaluate each variant dictionary, return rows."""
    return json.loads(_opsig.run_laboratory_json(hosts, extras, seed, theta))


__all__ = [
    "ParseError",
    "find_monomorphisms",
    "fnv1a64",
    "ngram_counts",
    "opcode_stream",
    "parse_cfgs",
    "run_cli",
    "run_laboratory",
    "smoothed_idf",
]
