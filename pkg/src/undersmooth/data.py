"""Datasets and the slot layout of the heterogeneous-effects linear model.

With ``k`` covariates and a treatment indicator ``d`` the full parameter
vector has ``2k + 2`` slots ordered as ``(1, x_1..x_k, d, d*x_1..d*x_k)``.
Without a treatment only the first ``k + 1`` slots exist.
"""
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Dataset:
    y: np.ndarray
    X: np.ndarray
    d: np.ndarray = None
    names: tuple = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64).ravel()
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise ValueError("y and X must be finite")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        if self.d is not None:
            d = np.asarray(self.d, dtype=np.float64).ravel()
            if d.shape != y.shape:
                raise ValueError("treatment length differs from y")
            if not np.all((d == 0) | (d == 1)):
                raise ValueError("treatment must be binary (0/1)")
            object.__setattr__(self, "d", d)
        names = self.names
        if names is None:
            names = tuple(f"x{j + 1}" for j in range(X.shape[1]))
        names = tuple(str(s) for s in names)
        if len(names) != X.shape[1]:
            raise ValueError(f"{len(names)} names for {X.shape[1]} columns")
        if len(set(names)) != len(names):
            raise ValueError("duplicate column names")
        object.__setattr__(self, "names", names)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def k(self):
        return self.X.shape[1]

    @property
    def has_treatment(self):
        return self.d is not None

    @property
    def n_slots(self):
        return 2 * self.k + 2 if self.has_treatment else self.k + 1

    def subset(self, rows):
        rows = np.asarray(rows)
        d = None if self.d is None else self.d[rows]
        return Dataset(self.y[rows], self.X[rows], d, self.names)

    def slot_name(self, s):
        k = self.k
        if s == 0:
            return "const"
        if 1 <= s <= k:
            return self.names[s - 1]
        if s == k + 1 and self.has_treatment:
            return "d"
        if self.has_treatment and k + 2 <= s <= 2 * k + 1:
            return f"d*{self.names[s - k - 2]}"
        raise IndexError(f"slot {s} out of range")

    def slot_column(self, s):
        k = self.k
        if s == 0:
            return np.ones(self.n)
        if 1 <= s <= k:
            return self.X[:, s - 1]
        if s == k + 1 and self.has_treatment:
            return self.d
        if self.has_treatment and k + 2 <= s <= 2 * k + 1:
            return self.d * self.X[:, s - k - 2]
        raise IndexError(f"slot {s} out of range")

    def design(self, slots):
        """Columns of the full design for ``slots`` (any integer array shape
        ``s``; result has shape ``(n, *s)``)."""
        slots = np.asarray(slots, dtype=np.intp)
        k = self.k
        if slots.size and (slots.min() < 0 or slots.max() >= self.n_slots):
            raise IndexError(f"slot out of range 0..{self.n_slots - 1}")
        flat = slots.ravel()
        is_int = flat >= k + 2
        col = np.where(is_int, flat - k - 2, flat - 1)
        col = np.clip(col, 0, max(k - 1, 0))
        out = self.X[:, col] if k else np.zeros((self.n, flat.size))
        if self.has_treatment:
            out = np.where(is_int[None, :], self.d[:, None] * out, out)
            out[:, flat == k + 1] = self.d[:, None]
        out[:, flat == 0] = 1.0
        return out.reshape((self.n,) + slots.shape)


def base_slot(j):
    return 1 + j


def treatment_slot(k):
    return k + 1


def interaction_slot(j, k):
    return k + 2 + j


@dataclass(frozen=True)
class HetModelSpec:
    """A model: which covariates enter through their level (``base``) and
    which through their treatment interaction (``interact``)."""

    base_indices: tuple = ()
    interact_indices: tuple = ()
    includes_constant: bool = True
    includes_main_treatment: bool = True

    def __post_init__(self):
        object.__setattr__(self, "base_indices", tuple(sorted({int(j) for j in self.base_indices})))
        object.__setattr__(
            self, "interact_indices", tuple(sorted({int(j) for j in self.interact_indices}))
        )

    def slots(self, k):
        out = []
        if self.includes_constant:
            out.append(0)
        out.extend(base_slot(j) for j in self.base_indices)
        if self.includes_main_treatment:
            out.append(treatment_slot(k))
        out.extend(interaction_slot(j, k) for j in self.interact_indices)
        for j in self.base_indices + self.interact_indices:
            if not 0 <= j < k:
                raise ValueError(f"covariate index {j} outside 0..{k - 1}")
        return out

    def size(self):
        return (
            len(self.base_indices)
            + len(self.interact_indices)
            + int(self.includes_constant)
            + int(self.includes_main_treatment)
        )

    def add(self, base=(), interact=()):
        return HetModelSpec(
            self.base_indices + tuple(base),
            self.interact_indices + tuple(interact),
            self.includes_constant,
            self.includes_main_treatment,
        )

    @classmethod
    def from_slots(cls, slots, k, has_treatment=True):
        slots = set(int(s) for s in slots)
        base = [s - 1 for s in slots if 1 <= s <= k]
        inter = [s - k - 2 for s in slots if has_treatment and k + 2 <= s <= 2 * k + 1]
        return cls(base, inter, 0 in slots, has_treatment and (k + 1) in slots)

    @classmethod
    def paired(cls, indices):
        idx = tuple(indices)
        return cls(idx, idx, True, True)

    def to_dict(self):
        return {
            "base": list(self.base_indices),
            "interact": list(self.interact_indices),
            "constant": self.includes_constant,
            "treatment": self.includes_main_treatment,
        }


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    names: tuple
    provenance: tuple = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("feature values must be a 2-d array")
        names = tuple(self.names)
        if len(names) != v.shape[1]:
            raise ValueError(f"{len(names)} names for {v.shape[1]} columns")
        if len(set(names)) != len(names):
            raise ValueError("duplicate feature names")
        prov = self.provenance
        if prov is None:
            prov = ("raw",) * v.shape[1]
        prov = tuple(prov)
        if len(prov) != v.shape[1]:
            raise ValueError("provenance length differs from column count")
        hw = [j for j, tag in enumerate(prov) if tag.startswith("hadamard")]
        if hw and not np.all(np.abs(v[:, hw]) == 1):
            raise ValueError("hadamard columns must take values in {-1, +1}")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "provenance", prov)

    def select(self, columns):
        cols = list(columns)
        return FeatureMatrix(
            self.values[:, cols],
            tuple(self.names[c] for c in cols),
            tuple(self.provenance[c] for c in cols),
        )

    def hstack(self, other):
        return FeatureMatrix(
            np.hstack([self.values, other.values]),
            self.names + other.names,
            self.provenance + other.provenance,
        )
