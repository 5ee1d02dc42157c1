"""Locating the benchmark interaction files.

The files are not shipped. Point ``NTGCF_LASTFM`` / ``NTGCF_MOVIELENS`` at
preprocessed ``user item [...]`` lists (whitespace or ``::`` separated; a
first line whose leading field is not an integer is taken as a header).
``data/raw/ml-100k.txt`` is a smaller MovieLens release used only for
informational stand-in numbers; scripts/fetch_ml100k.py creates it.
"""

from __future__ import annotations

import os
from functools import lru_cache
from pathlib import Path

from ntgcf.data import load_interactions, split_dataset

ROOT = Path(__file__).resolve().parent.parent
ENV = {"lastfm": "NTGCF_LASTFM", "movielens": "NTGCF_MOVIELENS"}
STANDIN = ROOT / "data" / "raw" / "ml-100k.txt"
SPLIT_SEED = 42
RATIOS = (0.7, 0.1, 0.2)


def dataset_path(name: str) -> Path | None:
    value = os.environ.get(ENV[name])
    if not value:
        return None
    p = Path(value)
    return p if p.is_file() else None


def missing_message(name: str) -> str:
    return f"{name} interactions unavailable (set {ENV[name]} to the interaction file)"


def _has_header(path: Path) -> bool:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            fields = line.strip().split("::") if "::" in line else line.split()
            if fields and fields != [""]:
                return not fields[0].lstrip("-").isdigit()
    return False


@lru_cache(maxsize=None)
def load_raw(path: str):
    return load_interactions(path, skip_header=_has_header(Path(path)))


@lru_cache(maxsize=None)
def load_split(path: str):
    return split_dataset(load_raw(path), RATIOS, SPLIT_SEED)
