"""LIBSVM ingestion, synthetic data, and sharding across nodes."""
from __future__ import annotations

import gzip
import io
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np
import scipy.sparse as sp

from .objectives import PLQuadratic, Sample, stack

log = logging.getLogger(__name__)

A9A_DIM = 123
DATA_DIR = Path(__file__).resolve().parent / "data"


class LibsvmError(ValueError):
    pass


def parse_libsvm(stream: "TextIO | Iterable[str]", expected_d: int | None = None) -> list[Sample]:
    samples = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label = float(tokens[0])
        except ValueError:
            raise LibsvmError(f"line {lineno}: non-numeric label {tokens[0]!r}") from None
        if label == 0:
            label = -1.0
        if label not in (-1.0, 1.0):
            raise LibsvmError(f"line {lineno}: label {tokens[0]!r} is not +1/-1/0")
        idx, val = [], []
        for tok in tokens[1:]:
            k, sep, v = tok.partition(":")
            try:
                k_int, v_f = int(k), float(v)
            except ValueError:
                raise LibsvmError(f"line {lineno}: malformed pair {tok!r}") from None
            if not sep:
                raise LibsvmError(f"line {lineno}: malformed pair {tok!r}")
            if k_int <= 0:
                raise LibsvmError(f"line {lineno}: feature index {k_int} must be >= 1")
            if expected_d is not None and k_int > expected_d:
                raise LibsvmError(f"line {lineno}: feature index {k_int} exceeds d={expected_d}")
            idx.append(k_int - 1)
            val.append(v_f)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            log.warning("line %d: feature indices not strictly ascending; sorting", lineno)
            order = np.argsort(idx, kind="stable")
            idx = [idx[o] for o in order]
            val = [val[o] for o in order]
        samples.append(Sample(np.array(idx, dtype=np.int64), np.array(val), label))
    return samples


def infer_dim(samples: list[Sample]) -> int:
    return max((int(s.indices.max()) + 1 for s in samples if s.indices.size), default=0)


def format_libsvm(samples: Iterable[Sample]) -> str:
    out = io.StringIO()
    for s in samples:
        parts = ["+1" if s.label > 0 else "-1"]
        parts += [f"{k + 1}:{v!r}" for k, v in zip(s.indices.tolist(), s.values.tolist())]
        out.write(" ".join(parts) + "\n")
    return out.getvalue()


def read_libsvm(path: "str | os.PathLike", expected_d: int | None = None) -> list[Sample]:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt") as fh:
        return parse_libsvm(fh, expected_d)


@dataclass(frozen=True)
class Dataset:
    """Immutable sparse sample table with source row ids."""

    X: sp.csr_matrix
    y: np.ndarray
    rows: np.ndarray

    @classmethod
    def from_samples(cls, samples: list[Sample], d: int, rows=None) -> "Dataset":
        X, y = stack(samples, d)
        rows = np.arange(len(samples)) if rows is None else np.asarray(rows, dtype=np.int64)
        return cls(X, y, rows)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.X.shape[0]

    def sample(self, k: int) -> Sample:
        lo, hi = self.X.indptr[k], self.X.indptr[k + 1]
        return Sample(self.X.indices[lo:hi].copy(), self.X.data[lo:hi].copy(), float(self.y[k]))

    def samples(self) -> list[Sample]:
        return [self.sample(k) for k in range(len(self))]

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.rows[idx])


@dataclass(frozen=True)
class ShardedDataset:
    shards: tuple
    pool: Dataset
    test: Dataset | None = None
    _dense: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def m(self) -> int:
        return len(self.shards)

    @property
    def n(self) -> int:
        return len(self.shards[0])

    @property
    def d(self) -> int:
        return self.shards[0].d

    def train(self) -> Dataset:
        """All shard samples stacked in node order."""
        return Dataset(sp.vstack([s.X for s in self.shards], format="csr"),
                       np.concatenate([s.y for s in self.shards]),
                       np.concatenate([s.rows for s in self.shards]))

    def dense_tensor(self) -> tuple[np.ndarray, np.ndarray]:
        """(m, n, d) features and (m, n) labels, cached.

        The engine gathers one row per node per step; a dense copy makes that
        a single fancy-index instead of m sparse row extractions.
        """
        if "F" not in self._dense:
            self._dense["F"] = np.stack([s.X.toarray() for s in self.shards])
            self._dense["Y"] = np.stack([s.y for s in self.shards])
        return self._dense["F"], self._dense["Y"]

    def replace(self, node: int, local: int, sample: Sample, row_id: int = -1) -> "ShardedDataset":
        shard = self.shards[node]
        samples = shard.samples()
        samples[local] = sample
        rows = shard.rows.copy()
        rows[local] = row_id
        new = Dataset.from_samples(samples, self.d, rows)
        shards = list(self.shards)
        shards[node] = new
        out = ShardedDataset(tuple(shards), self.pool, self.test)
        if "F" in self._dense:
            F, Y = self._dense["F"].copy(), self._dense["Y"].copy()
            F[node, local] = sample.dense(self.d)
            Y[node, local] = sample.label
            out._dense.update(F=F, Y=Y)
        return out

    def manifest(self) -> str:
        lines = ["shard,row"]
        for k, s in enumerate(self.shards):
            lines += [f"{k},{r}" for r in s.rows.tolist()]
        return "\n".join(lines) + "\n"


def shard(dataset: Dataset, m: int, n: int, seed: int, test: Dataset | None = None) -> ShardedDataset:
    """Permute by seed, deal the first m*n samples round-robin, keep the rest as pool."""
    if m < 1 or n < 1:
        raise ValueError("m and n must be positive")
    if m * n > len(dataset):
        raise ValueError(f"need m*n = {m * n} samples, dataset has {len(dataset)}")
    perm = np.random.default_rng(np.random.SeedSequence([seed, 0x5A4D])).permutation(len(dataset))
    used = perm[: m * n]
    shards = tuple(dataset.take(used[k::m]) for k in range(m))
    return ShardedDataset(shards, dataset.take(perm[m * n:]), test)


def synth_logistic(d: int, count: int, margin: float, seed: int) -> list[Sample]:
    """Unit-sphere features; labels from a planted separator with logistic noise."""
    if d < 1 or count < 1:
        raise ValueError("d and count must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x106]))
    w_true = rng.standard_normal(d)
    w_true /= np.linalg.norm(w_true)
    X = rng.standard_normal((count, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    score = X @ w_true
    if np.isinf(margin):
        y = np.where(score >= 0, 1.0, -1.0)
    else:
        p = 1.0 / (1.0 + np.exp(-margin * score))
        y = np.where(rng.random(count) < p, 1.0, -1.0)
    return [Sample(np.arange(d), X[k], y[k]) for k in range(count)]


def synth_pl(d: int, alpha: float, L: float, seed: int) -> PLQuadratic:
    """Quadratic with spectrum spread evenly over [alpha, L] in a random basis."""
    if d < 1 or not (0 < alpha <= L):
        raise ValueError("need d >= 1 and 0 < alpha <= L")
    if d == 1 and alpha != L:
        raise ValueError("d = 1 admits a single eigenvalue; need alpha == L")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x91]))
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    Q = Q * np.sign(np.diag(R))
    spectrum = np.linspace(alpha, L, d)
    A = (Q * spectrum) @ Q.T
    A = 0.5 * (A + A.T)
    return PLQuadratic(A, rng.standard_normal(d))


def bundled_a9a(split: str = "train") -> Path:
    name = {"train": "a9a.gz", "test": "a9a.t.gz"}[split]
    return DATA_DIR / name


def load_a9a(train_path=None, test_path=None) -> tuple[Dataset, Dataset]:
    train_path = Path(train_path) if train_path else bundled_a9a("train")
    test_path = Path(test_path) if test_path else bundled_a9a("test")
    train = read_libsvm(train_path, A9A_DIM)
    test = read_libsvm(test_path, A9A_DIM)
    return Dataset.from_samples(train, A9A_DIM), Dataset.from_samples(test, A9A_DIM)


def carve_test(dataset: Dataset, frac: float, seed: int) -> tuple[Dataset, Dataset]:
    """Fallback split when no companion test file exists."""
    perm = np.random.default_rng(np.random.SeedSequence([seed, 0x7E57])).permutation(len(dataset))
    k = int(round(frac * len(dataset)))
    return dataset.take(np.sort(perm[k:])), dataset.take(np.sort(perm[:k]))
