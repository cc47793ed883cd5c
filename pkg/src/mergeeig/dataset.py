"""Tabular causal datasets: covariates, binary treatment, optional outcomes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonBinaryTreatment


@dataclass(frozen=True)
class TabularDataset:
    X: np.ndarray
    t: np.ndarray
    y: np.ndarray | None = None
    tau: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1) if X.size else X.reshape(0, 0)
        t = np.asarray(self.t, dtype=float).ravel()
        if X.shape[0] != t.shape[0]:
            raise DimensionMismatch(f"X has {X.shape[0]} rows, t has {t.shape[0]}")
        if not np.all((t == 0) | (t == 1)):
            raise NonBinaryTreatment("treatment must be 0 or 1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "t", t)
        for name in ("y", "tau"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float).ravel()
                if v.shape[0] != t.shape[0]:
                    raise DimensionMismatch(f"{name} has {v.shape[0]} rows, expected {t.shape[0]}")
                object.__setattr__(self, name, v)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def n_treated(self) -> int:
        return int(self.t.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    def subset(self, idx) -> "TabularDataset":
        idx = np.asarray(idx, dtype=int)
        pick = lambda v: None if v is None else v[idx]
        return TabularDataset(self.X[idx], self.t[idx], pick(self.y), pick(self.tau))

    def masked(self) -> "TabularDataset":
        """Copy with outcomes and true effects removed."""
        return TabularDataset(self.X, self.t)

    def concat(self, other: "TabularDataset") -> "TabularDataset":
        if self.n and other.n and self.d != other.d:
            raise DimensionMismatch("datasets have different covariate counts")

        def join(a, b):
            if a is None or b is None:
                return None
            return np.concatenate([a, b])

        X = np.vstack([self.X, other.X]) if self.n and other.n else (self.X if self.n else other.X)
        return TabularDataset(X, np.concatenate([self.t, other.t]), join(self.y, other.y), join(self.tau, other.tau))

    @classmethod
    def empty(cls, d: int) -> "TabularDataset":
        return cls(np.zeros((0, d)), np.zeros(0), np.zeros(0), np.zeros(0))
