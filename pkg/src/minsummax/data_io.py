"""Dataset ingestion, seeded RNG streams, and trace persistence.

Randomness is organized as counter-based (Philox) substreams keyed by a
purpose tag plus integer indices, all derived from one root seed.  Any piece
of work can therefore be scheduled on any worker in any order and still
produce bit-identical results.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ParseError

_MASK64 = (1 << 64) - 1


def _tag64(tag: str) -> int:
    return int.from_bytes(hashlib.sha256(tag.encode("utf-8")).digest()[:8], "little")


@dataclass(frozen=True)
class RngSpec:
    """Root seed plus substream derivation.

    ``stream(tag, *indices)`` always returns the same generator for the same
    key, independent of every other stream that has been drawn from.
    """

    root_seed: int

    def stream(self, tag: str, *indices: int) -> np.random.Generator:
        entropy = (
            int(self.root_seed) & _MASK64,
            _tag64(tag),
            *((int(i) & _MASK64) for i in indices),
        )
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@dataclass
class ColumnStats:
    mean: np.ndarray
    std: np.ndarray  # population (ddof=0)
    min: np.ndarray
    max: np.ndarray
    constant: np.ndarray  # True where std == 0


def _column_stats(features: np.ndarray) -> ColumnStats:
    std = features.std(axis=0)
    return ColumnStats(
        mean=features.mean(axis=0),
        std=std,
        min=features.min(axis=0),
        max=features.max(axis=0),
        constant=std == 0.0,
    )


@dataclass
class Dataset:
    features: np.ndarray  # (n, q)
    targets: np.ndarray  # (n,)
    column_stats: ColumnStats = field(init=False)

    def __post_init__(self):
        feats = np.atleast_2d(np.asarray(self.features, dtype=float))
        targs = np.asarray(self.targets, dtype=float).reshape(-1)
        if feats.shape[0] != targs.shape[0]:
            raise DomainError(
                f"{feats.shape[0]} feature rows vs {targs.shape[0]} targets"
            )
        if feats.shape[0] == 0:
            raise DomainError("dataset needs at least one row")
        self.features = feats
        self.targets = targs
        self.column_stats = _column_stats(feats)

    @property
    def n(self) -> int:
        return self.features.shape[0]


# --- sparse regression text format --------------------------------------
#
# One example per line:  target index:value index:value ...
# Indices are 1-based and strictly increasing within a line; absent indices
# are zero.  The dense width is the largest index seen anywhere in the file.

_FLOAT_RE = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?\Z")
_INT_RE = re.compile(r"\d+\Z")

MAX_SPARSE_COLUMNS = 10_000


def _parse_float(token: str, line: int, col: int) -> float:
    if not _FLOAT_RE.match(token):
        raise ParseError(f"expected a decimal number, got {token!r}", line, col)
    return float(token)


def parse_sparse_regression_text(text, max_columns: int = MAX_SPARSE_COLUMNS) -> Dataset:
    """Parse the one-line-per-example sparse text format into a dense dataset.

    Raises ParseError with 1-based line/column positions for anything outside
    the grammar; the width cap guards against pathological index values.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ParseError(f"not valid UTF-8: {e.reason}", 1, 1) from e
    rows: list[dict[int, float]] = []
    targets: list[float] = []
    width = 0
    for lineno, raw in enumerate(text.split("\n"), start=1):
        stripped = raw.rstrip("\r")
        if not stripped.strip():
            continue
        col = 1
        entries: dict[int, float] = {}
        prev_index = 0
        target = None
        for token in re.finditer(r"[^ \t]+", stripped):
            tok, col = token.group(), token.start() + 1
            if target is None:
                target = _parse_float(tok, lineno, col)
                continue
            if ":" not in tok:
                raise ParseError(f"expected index:value, got {tok!r}", lineno, col)
            idx_s, _, val_s = tok.partition(":")
            if not _INT_RE.match(idx_s):
                raise ParseError(f"bad feature index {idx_s!r}", lineno, col)
            idx = int(idx_s)
            if idx < 1:
                raise ParseError("feature indices are 1-based", lineno, col)
            if idx > max_columns:
                raise ParseError(
                    f"feature index {idx} exceeds the column cap {max_columns}",
                    lineno, col,
                )
            if idx <= prev_index:
                raise ParseError(
                    f"feature index {idx} is not strictly increasing", lineno, col
                )
            value = _parse_float(val_s, lineno, col + len(idx_s) + 1)
            entries[idx] = value
            prev_index = idx
        if target is None:
            continue
        targets.append(target)
        rows.append(entries)
        width = max(width, prev_index)
    if not rows:
        raise ParseError("no examples found", 1, 1)
    features = np.zeros((len(rows), width))
    for i, entries in enumerate(rows):
        for idx, value in entries.items():
            features[i, idx - 1] = value
    return Dataset(features=features, targets=np.asarray(targets))


def _fmt(x: float) -> str:
    if not math.isfinite(x):
        raise DomainError("cannot serialize nonfinite values")
    return repr(float(x))


def serialize_sparse_regression_text(dataset: Dataset) -> str:
    """Canonical form: ascending indices, zeros omitted, shortest round-trip decimals."""
    lines = []
    for target, row in zip(dataset.targets, dataset.features):
        parts = [_fmt(target)]
        for j in np.nonzero(row)[0]:
            parts.append(f"{j + 1}:{_fmt(row[j])}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def train_test_split(dataset: Dataset, test_fraction: float, seed: int):
    """Seeded shuffle split into (train, test); sizes floor/ceil of the fraction."""
    if not (0.0 < test_fraction < 1.0):
        raise DomainError("test_fraction must be in (0, 1)")
    if dataset.n < 2:
        raise DomainError("need at least two rows to split")
    perm = RngSpec(seed).stream("split").permutation(dataset.n)
    n_train = int(math.floor((1.0 - test_fraction) * dataset.n))
    n_train = max(1, min(dataset.n - 1, n_train))
    tr, te = perm[:n_train], perm[n_train:]
    return (
        Dataset(dataset.features[tr], dataset.targets[tr]),
        Dataset(dataset.features[te], dataset.targets[te]),
    )


def standard_scale_fit_transform(train: Dataset, test: Dataset, mode: str = "train"):
    """Zero-mean unit-variance feature scaling.

    ``mode="train"`` fits statistics on the training rows and applies them to
    both splits; ``mode="self"`` scales each split by its own statistics.
    Constant columns are passed through unchanged (they stay flagged in the
    returned stats).
    """
    if mode not in ("train", "self"):
        raise DomainError(f"unknown scaling mode {mode!r}")

    def apply(ds: Dataset, stats: ColumnStats) -> Dataset:
        safe = np.where(stats.constant, 1.0, stats.std)
        feats = (ds.features - np.where(stats.constant, 0.0, stats.mean)) / safe
        return Dataset(feats, ds.targets)

    stats = train.column_stats
    if mode == "train":
        return apply(train, stats), apply(test, stats), stats
    return apply(train, stats), apply(test, test.column_stats), stats


def gen_exponential_demand(n: int, rate: float, seed: int) -> np.ndarray:
    """n exponential draws with the given rate, from the "demand" stream."""
    if n < 1 or not (rate > 0):
        raise DomainError("need n >= 1 and rate > 0")
    u = RngSpec(seed).stream("demand").random(n)
    return -np.log1p(-u) / rate


# --- trace persistence ----------------------------------------------------

TRACE_COLUMNS = (
    "iter",
    "mu",
    "alpha",
    "obj_smoothed",
    "obj_primal_est",
    "lambda",
    "stationarity_sq",
    "wallclock_ms",
)


@dataclass
class ConvergenceRecord:
    """One solver iteration as persisted to the trace CSV.

    Optional diagnostics are None on iterations where they were not computed
    and serialize as empty fields.
    """

    iter: int
    mu: float
    alpha: float
    obj_smoothed: float
    obj_primal_est: float | None = None
    lambda_value: float | None = None
    stationarity_sq: float | None = None
    wallclock_ms: float = 0.0


def _cell(x) -> str:
    return "" if x is None else _fmt(x)


def trace_to_text(records) -> str:
    lines = [",".join(TRACE_COLUMNS)]
    for r in records:
        lines.append(
            ",".join(
                (
                    str(r.iter),
                    _fmt(r.mu),
                    _fmt(r.alpha),
                    _fmt(r.obj_smoothed),
                    _cell(r.obj_primal_est),
                    _cell(r.lambda_value),
                    _cell(r.stationarity_sq),
                    _fmt(r.wallclock_ms),
                )
            )
        )
    return "\n".join(lines) + "\n"


def write_trace_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(trace_to_text(records))


def read_trace_csv(path) -> list[ConvergenceRecord]:
    """Read a trace written by write_trace_csv; lossless for finite values."""
    with open(path, "r", newline="") as fh:
        text = fh.read()
    lines = [ln for ln in text.split("\n") if ln]
    if not lines or tuple(lines[0].split(",")) != TRACE_COLUMNS:
        raise ParseError("missing or malformed trace header", 1, 1)
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(TRACE_COLUMNS):
            raise ParseError(
                f"expected {len(TRACE_COLUMNS)} fields, got {len(cells)}", lineno, 1
            )
        opt = lambda s: None if s == "" else float(s)
        records.append(
            ConvergenceRecord(
                iter=int(cells[0]),
                mu=float(cells[1]),
                alpha=float(cells[2]),
                obj_smoothed=float(cells[3]),
                obj_primal_est=opt(cells[4]),
                lambda_value=opt(cells[5]),
                stationarity_sq=opt(cells[6]),
                wallclock_ms=float(cells[7]),
            )
        )
    return records
