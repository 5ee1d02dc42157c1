"""Interaction-log ingestion, deterministic per-user splitting, and bundle persistence."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from ._rng import stream
from .errors import DataError

log = logging.getLogger(__name__)

BUNDLE_FORMAT = "ntgcf-bundle/1"
SPLIT_NAMES = ("train", "valid", "test")


@dataclass(frozen=True)
class RawInteractions:
    records: list[tuple[str, str]]
    source_path: str | None = None

    def __len__(self) -> int:
        return len(self.records)


@dataclass(eq=False)
class DatasetBundle:
    num_users: int
    num_items: int
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    user_keys: list[str]
    item_keys: list[str]
    split_seed: int
    ratios: tuple[float, float, float]
    cold_users: int = 0
    cold_items: int = 0
    split_strategy: str = "per-user"
    _user_map: dict | None = field(default=None, repr=False)
    _item_map: dict | None = field(default=None, repr=False)

    @property
    def user_map(self) -> dict[str, int]:
        if self._user_map is None:
            self._user_map = {k: n for n, k in enumerate(self.user_keys)}
        return self._user_map

    @property
    def item_map(self) -> dict[str, int]:
        if self._item_map is None:
            self._item_map = {k: n for n, k in enumerate(self.item_keys)}
        return self._item_map

    def split(self, which: str) -> np.ndarray:
        if which not in SPLIT_NAMES:
            raise ValueError(f"unknown split {which!r}")
        return getattr(self, which)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DatasetBundle):
            return NotImplemented
        return (
            self.num_users == other.num_users
            and self.num_items == other.num_items
            and all(np.array_equal(self.split(s), other.split(s)) for s in SPLIT_NAMES)
            and self.user_keys == other.user_keys
            and self.item_keys == other.item_keys
            and self.split_seed == other.split_seed
            and tuple(self.ratios) == tuple(other.ratios)
            and self.cold_users == other.cold_users
            and self.cold_items == other.cold_items
            and self.split_strategy == other.split_strategy
        )

    def stats(self) -> dict:
        total = len(self.train) + len(self.valid) + len(self.test)
        return {
            "num_users": self.num_users,
            "num_items": self.num_items,
            "interactions": total,
            "train": len(self.train),
            "valid": len(self.valid),
            "test": len(self.test),
            "density": total / max(1, self.num_users * self.num_items),
        }


def load_interactions(path, skip_header: bool = False) -> RawInteractions:
    """Read ``user item [extra...]`` lines, dropping exact duplicate pairs.

    Fields are separated by whitespace, or by ``::`` on lines that contain
    it. Extra columns (ratings, timestamps) are ignored. With ``skip_header``
    the first non-empty line is discarded.
    """
    seen: set[tuple[str, str]] = set()
    records: list[tuple[str, str]] = []
    header_pending = skip_header
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.strip().split("::") if "::" in line else line.split()
            if not fields or fields == [""]:
                continue
            if header_pending:
                header_pending = False
                continue
            if len(fields) < 2:
                raise DataError(f"line {lineno}: expected at least 2 fields, got {len(fields)}")
            pair = (fields[0], fields[1])
            if pair not in seen:
                seen.add(pair)
                records.append(pair)
    return RawInteractions(records, str(path))


def _as_fraction(x: float) -> Fraction:
    return Fraction(repr(float(x)))


def allocate_counts(n: int, ratios) -> tuple[int, ...]:
    """Split ``n`` items into parts proportional to ``ratios``.

    Each part gets ``floor(n * r)``; leftover units go to the largest
    fractional remainders, earlier parts winning ties. If that leaves a
    user with three or more interactions and no training part, one unit is
    moved to training from the largest other part.
    """
    fr = [_as_fraction(r) for r in ratios]
    exact = [n * r for r in fr]
    counts = [int(e) for e in exact]  # floor, exact > 0
    leftover = n - sum(counts)
    order = sorted(range(len(fr)), key=lambda k: (-(exact[k] - counts[k]), k))
    k = 0
    while leftover > 0:
        counts[order[k % len(order)]] += 1
        leftover -= 1
        k += 1
    if n >= 3 and counts[0] == 0:
        donor = max(range(1, len(counts)), key=lambda j: (counts[j], -j))
        counts[donor] -= 1
        counts[0] += 1
    return tuple(counts)


def split_dataset(raw: RawInteractions, ratios=(0.7, 0.1, 0.2), seed: int = 0) -> DatasetBundle:
    """Per-user stratified split.

    User and item indices are assigned in first-seen order. Each user's
    interactions are shuffled with a stream keyed by (seed, user index) and
    cut into train/valid/test by :func:`allocate_counts`.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3:
        raise ValueError("ratios must have three entries (train, valid, test)")
    if any(not np.isfinite(r) or r <= 0 for r in ratios):
        raise ValueError(f"ratios must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)!r}")

    user_map: dict[str, int] = {}
    item_map: dict[str, int] = {}
    per_user: list[list[int]] = []
    for ukey, ikey in raw.records:
        if not ukey or not ikey:
            raise DataError(f"empty key in record ({ukey!r}, {ikey!r})")
        u = user_map.setdefault(ukey, len(user_map))
        i = item_map.setdefault(ikey, len(item_map))
        if u == len(per_user):
            per_user.append([])
        per_user[u].append(i)

    parts: list[list[np.ndarray]] = [[], [], []]
    for u, items in enumerate(per_user):
        arr = np.asarray(items, dtype=np.int64)
        perm = stream(seed, "split", u).permutation(len(arr))
        arr = arr[perm]
        counts = allocate_counts(len(arr), ratios)
        start = 0
        for k, c in enumerate(counts):
            chunk = arr[start:start + c]
            start += c
            if c:
                parts[k].append(np.column_stack([np.full(c, u, dtype=np.int64), chunk]))

    def stack(chunks):
        if not chunks:
            return np.empty((0, 2), dtype=np.int64)
        return np.ascontiguousarray(np.vstack(chunks), dtype=np.int64)

    train, valid, test = (stack(p) for p in parts)
    num_users, num_items = len(user_map), len(item_map)
    cold_users = num_users - len(np.unique(train[:, 0]))
    cold_items = num_items - len(np.unique(train[:, 1]))
    if cold_users or cold_items:
        log.warning("split left %d users and %d items without training interactions",
                    cold_users, cold_items)
    return DatasetBundle(
        num_users=num_users,
        num_items=num_items,
        train=train,
        valid=valid,
        test=test,
        user_keys=list(user_map),
        item_keys=list(item_map),
        split_seed=int(seed),
        ratios=ratios,
        cold_users=int(cold_users),
        cold_items=int(cold_items),
    )


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_edges(path: Path, edges: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u, i in edges.tolist():
            fh.write(f"{u}\t{i}\n")


def _read_edges(path: Path) -> np.ndarray:
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        return np.empty((0, 2), dtype=np.int64)
    arr = np.array(text.split(), dtype=np.int64)
    if arr.size % 2:
        raise DataError(f"{path.name}: odd number of fields")
    return arr.reshape(-1, 2)


def save_bundle(bundle: DatasetBundle, directory) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for name in SPLIT_NAMES:
        _write_edges(out / f"{name}.txt", bundle.split(name))
    (out / "users.txt").write_text("".join(f"{k}\n" for k in bundle.user_keys), encoding="utf-8")
    (out / "items.txt").write_text("".join(f"{k}\n" for k in bundle.item_keys), encoding="utf-8")
    files = [f"{n}.txt" for n in SPLIT_NAMES] + ["users.txt", "items.txt"]
    manifest = {
        "format": BUNDLE_FORMAT,
        "num_users": bundle.num_users,
        "num_items": bundle.num_items,
        "counts": {n: int(len(bundle.split(n))) for n in SPLIT_NAMES},
        "split_seed": bundle.split_seed,
        "ratios": list(bundle.ratios),
        "split_strategy": bundle.split_strategy,
        "cold_users": bundle.cold_users,
        "cold_items": bundle.cold_items,
        "checksums": {f: _sha256(out / f) for f in files},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    return out


def load_bundle(directory) -> DatasetBundle:
    src = Path(directory)
    mpath = src / "manifest.json"
    if not mpath.is_file():
        raise DataError(f"missing manifest in {src}")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"unreadable manifest: {exc}") from exc
    if manifest.get("format") != BUNDLE_FORMAT:
        raise DataError(f"unsupported bundle format {manifest.get('format')!r}")

    for fname, digest in manifest["checksums"].items():
        fpath = src / fname
        if not fpath.is_file():
            raise DataError(f"missing file {fname}")
        if _sha256(fpath) != digest:
            raise DataError(f"checksum mismatch for {fname}")

    num_users, num_items = int(manifest["num_users"]), int(manifest["num_items"])
    splits = {n: _read_edges(src / f"{n}.txt") for n in SPLIT_NAMES}
    for name, edges in splits.items():
        if len(edges) != manifest["counts"][name]:
            raise DataError(f"{name}: expected {manifest['counts'][name]} edges, found {len(edges)}")
        if len(edges) and (edges.min() < 0 or edges[:, 0].max() >= num_users
                           or edges[:, 1].max() >= num_items):
            raise DataError(f"index out of range in {name}.txt "
                            f"(num_users={num_users}, num_items={num_items})")
    user_keys = (src / "users.txt").read_text(encoding="utf-8").splitlines()
    item_keys = (src / "items.txt").read_text(encoding="utf-8").splitlines()
    if len(user_keys) != num_users or len(item_keys) != num_items:
        raise DataError(f"index out of range: key tables have {len(user_keys)} users / "
                        f"{len(item_keys)} items, manifest declares {num_users} / {num_items}")
    return DatasetBundle(
        num_users=num_users,
        num_items=num_items,
        train=splits["train"],
        valid=splits["valid"],
        test=splits["test"],
        user_keys=user_keys,
        item_keys=item_keys,
        split_seed=int(manifest["split_seed"]),
        ratios=tuple(float(r) for r in manifest["ratios"]),
        cold_users=int(manifest.get("cold_users", 0)),
        cold_items=int(manifest.get("cold_items", 0)),
        split_strategy=manifest.get("split_strategy", "per-user"),
    )


def bundle_from_edges(num_users: int, num_items: int, train, valid=None, test=None,
                      seed: int = 0) -> DatasetBundle:
    """Wrap explicit index arrays as a bundle (synthetic instances and tests)."""

    def arr(x):
        if x is None or len(x) == 0:
            return np.empty((0, 2), dtype=np.int64)
        return np.ascontiguousarray(np.asarray(x, dtype=np.int64).reshape(-1, 2))

    tr, va, te = arr(train), arr(valid), arr(test)
    for name, e in (("train", tr), ("valid", va), ("test", te)):
        if len(e) and (e.min() < 0 or e[:, 0].max() >= num_users or e[:, 1].max() >= num_items):
            raise DataError(f"index out of range in {name}")
    return DatasetBundle(
        num_users=num_users,
        num_items=num_items,
        train=tr,
        valid=va,
        test=te,
        user_keys=[f"u{n}" for n in range(num_users)],
        item_keys=[f"i{n}" for n in range(num_items)],
        split_seed=seed,
        ratios=(0.7, 0.1, 0.2),
        cold_users=int(num_users - len(np.unique(tr[:, 0]))),
        cold_items=int(num_items - len(np.unique(tr[:, 1]))),
    )
