"""Data model, deterministic splitting, half-vectorization and seeded RNG streams.

Everything downstream of ingestion works on immutable numpy arrays: the
:class:`Dataset` constructor validates shapes and finiteness once and marks
the arrays read-only, so views can be shared freely across threads.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Dataset",
    "DataSplit",
    "SeededRng",
    "split",
    "vech",
    "math",
    "vech_length",
    "vech_dim",
    "load_csv",
]

_MASK64 = 0xFFFFFFFFFFFFFFFF


def _splitmix64(z: int) -> int:
    """One round of the splitmix64 mixer; full-period permutation of uint64."""
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class SeededRng:
    """A reproducible random stream identified by (seed, stream_id).

    The generator is counter-based (Philox keyed by the pair), so identical
    identifiers reproduce identical draw sequences regardless of platform,
    process or thread count.  Parallel tasks must each use their own derived
    stream; a SeededRng itself is never shared.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.seed <= _MASK64:
            raise ValueError("seed must fit in 64 unsigned bits")
        if not 0 <= self.stream_id <= _MASK64:
            raise ValueError("stream_id must fit in 64 unsigned bits")

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def derive(self, index: int) -> "SeededRng":
        """Child stream `index`; distinct indexes give independent streams."""
        if index < 0:
            raise ValueError("stream index must be nonnegative")
        mixed = _splitmix64(_splitmix64(self.stream_id) ^ ((index + 1) & _MASK64))
        return SeededRng(self.seed, mixed)


class Dataset:
    """An n x d covariate matrix paired with a length-n response vector.

    Rejects non-finite entries at construction; silently imputing would
    change the estimand.  Arrays are stored read-only.
    """

    __slots__ = ("x", "y")

    def __init__(self, x: np.ndarray, y: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2 or y.ndim != 1:
            raise ValueError("x must be 2-d and y 1-d")
        if x.shape[0] != y.shape[0]:
            raise ValueError(
                f"row mismatch: x has {x.shape[0]} rows, y has {y.shape[0]}"
            )
        if not np.isfinite(x).all() or not np.isfinite(y).all():
            raise ValueError("non-finite values in data; clean the input first")
        x = x.copy() if not x.flags.owndata or x.flags.writeable else x
        y = y.copy() if not y.flags.owndata or y.flags.writeable else y
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __setattr__(self, name, value):  # pragma: no cover - guard
        raise AttributeError("Dataset is immutable")

    @property
    def n_rows(self) -> int:
        return self.x.shape[0]

    @property
    def n_cols(self) -> int:
        return self.x.shape[1]

    def take(self, indices: np.ndarray) -> "Dataset":
        """Row subset preserving the given order."""
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.x[idx], self.y[idx])

    def centered(self) -> "Dataset":
        """Subtract column means from x and the mean from y (changes the estimand)."""
        return Dataset(self.x - self.x.mean(axis=0), self.y - self.y.mean())

    def __repr__(self) -> str:
        return f"Dataset(n={self.n_rows}, d={self.n_cols})"


@dataclass(frozen=True)
class DataSplit:
    """Random equipartition of a parent dataset into two halves."""

    first: Dataset
    second: Dataset
    first_indices: np.ndarray = field(repr=False)
    second_indices: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        total = self.first.n_rows + self.second.n_rows
        union = np.sort(np.concatenate([self.first_indices, self.second_indices]))
        if not np.array_equal(union, np.arange(total)):
            raise ValueError("split indices do not partition the parent rows")


def split(data: Dataset, rng: SeededRng) -> DataSplit:
    """Uniform random equipartition of `data` into two halves.

    Row order within each half follows the parent order.  Odd sizes put the
    extra row in the first half.
    """
    n = data.n_rows
    if n < 2:
        raise ValueError("insufficient data to split")
    n_first = (n + 1) // 2
    perm = rng.generator().permutation(n)
    first_idx = np.sort(perm[:n_first])
    second_idx = np.sort(perm[n_first:])
    return DataSplit(
        first=data.take(first_idx),
        second=data.take(second_idx),
        first_indices=first_idx,
        second_indices=second_idx,
    )


def vech_length(k: int) -> int:
    return k * (k + 1) // 2


def vech_dim(length: int) -> int:
    """Matrix dimension k with k(k+1)/2 == length; raises if none exists."""
    k = int((np.sqrt(8 * length + 1) - 1) / 2 + 0.5)
    if k * (k + 1) // 2 != length:
        raise ValueError(f"{length} is not a triangular number")
    return k


def _vech_indices(k: int) -> tuple[np.ndarray, np.ndarray]:
    # triu_indices enumerates row-major over the upper triangle; transposing
    # the pair yields the column-major lower triangle: (1,1),(2,1),...,(k,k).
    r, c = np.triu_indices(k)
    return c, r


def vech(m: np.ndarray) -> np.ndarray:
    """Half-vectorization: stack the on-and-below-diagonal entries, column-major."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("vech expects a square matrix")
    if not np.array_equal(m, m.T):
        raise ValueError("vech expects an exactly symmetric matrix")
    rows, cols = _vech_indices(m.shape[0])
    return m[rows, cols].copy()


def math(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`vech`: rebuild the symmetric matrix."""
    v = np.asarray(v, dtype=np.float64).ravel()
    k = vech_dim(v.size)
    m = np.zeros((k, k))
    rows, cols = _vech_indices(k)
    m[rows, cols] = v
    m[cols, rows] = v
    return m


def load_csv(
    path: str | Path,
    response: str | int | None = None,
    header: bool = True,
) -> tuple[Dataset, list[str]]:
    """Read a numeric CSV into a Dataset.

    `response` names the response column (header name or 0-based position);
    by default the last column is the response.  Returns the dataset and the
    covariate column names (synthesized as x0, x1, ... without a header).
    Parsing uses `float()`, which is locale-independent.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    if not rows:
        raise ValueError(f"{path}: empty file")

    names: list[str]
    if header:
        names = [c.strip() for c in rows[0]]
        body = rows[1:]
    else:
        names = [f"x{i}" for i in range(len(rows[0]))]
        body = rows

    if response is None:
        resp_idx = len(names) - 1
    elif isinstance(response, int):
        resp_idx = response
    else:
        try:
            resp_idx = names.index(response)
        except ValueError:
            raise ValueError(f"response column {response!r} not found in header") from None
    if not 0 <= resp_idx < len(names):
        raise ValueError(f"response column index {resp_idx} out of range")

    try:
        values = np.array([[float(cell) for cell in row] for row in body])
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric cell ({exc})") from None
    if values.ndim != 2 or values.shape[1] != len(names):
        raise ValueError(f"{path}: ragged rows")

    y = values[:, resp_idx]
    x = np.delete(values, resp_idx, axis=1)
    covariates = [nm for i, nm in enumerate(names) if i != resp_idx]
    return Dataset(x, y), covariates
