"""Built-in network datasets and a JSON loader for external ones."""

from __future__ import annotations

import json
from pathlib import Path

from . import kundur

BUILTIN = {"kundur": kundur.load}


def load_dataset(ref: str) -> dict:
    """Return the dataset dict for a built-in name or a JSON file path."""
    if ref in BUILTIN:
        return BUILTIN[ref]()
    path = Path(ref)
    if not path.is_file():
        raise FileNotFoundError(f"no built-in dataset or file named {ref!r} (built-ins: {sorted(BUILTIN)})")
    return json.loads(path.read_text())
