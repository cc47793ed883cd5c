"""Dataset loading, synthetic generators and selection-function subsampling."""
from __future__ import annotations

import csv
import json
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from .dataset import TabularDataset
from .errors import InfeasibleConstraints, InsufficientRows, NonBinaryTreatment, ParseError, SchemaViolation


# -- csv -----------------------------------------------------------------
@dataclass(frozen=True)
class CsvSchema:
    covariates: tuple[str, ...] | None = None
    treatment: str = "t"
    outcome: str | None = None
    tau: str | None = None


def load_csv(path, schema: CsvSchema | None = None) -> TabularDataset:
    """Read ``x1..xd, t[, y][, tau]`` columns (header required).

    ``schema.covariates=None`` picks every column named ``x<number>`` in
    numeric order. Without a schema ``y`` and ``tau`` are read when present;
    with an explicit schema every named column must exist.
    """
    strict = schema is not None
    schema = schema or CsvSchema(outcome="y", tau="tau")
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    col = {name: i for i, name in enumerate(header)}
    if schema.covariates is None:
        xs = sorted((h for h in header if re.fullmatch(r"x\d+", h)), key=lambda h: int(h[1:]))
    else:
        xs = list(schema.covariates)
    if not xs:
        raise SchemaViolation("no covariate columns found")
    required = xs + [schema.treatment]
    if strict:
        required += [n for n in (schema.outcome, schema.tau) if n]
    for name in required:
        if name not in col:
            raise SchemaViolation(f"missing column {name!r}")
    try:
        data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
    except ValueError as exc:
        raise ParseError(f"non-numeric or ragged row in {path}: {exc}") from exc
    if not np.all(np.isfinite(data)):
        raise ParseError("non-finite values in file")
    t = data[:, col[schema.treatment]]
    bad = np.flatnonzero((t != 0) & (t != 1))
    if len(bad):
        raise NonBinaryTreatment(f"row {bad[0] + 1} has treatment {t[bad[0]]:g}")

    def optional(name):
        return data[:, col[name]] if name and name in col else None

    return TabularDataset(data[:, [col[x] for x in xs]], t, optional(schema.outcome), optional(schema.tau))


def write_csv(path, data: TabularDataset) -> None:
    header = [f"x{j + 1}" for j in range(data.d)] + ["t"]
    cols = [data.X, data.t[:, None]]
    for name, v in (("y", data.y), ("tau", data.tau)):
        if v is not None:
            header.append(name)
            cols.append(v[:, None])
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(np.hstack(cols).tolist())


# -- synthetic outcome models -------------------------------------------
def _draw_covariate(spec: dict, n: int, rng: np.random.Generator) -> np.ndarray:
    kind = spec["dist"]
    if kind == "beta":
        return rng.beta(spec["a"], spec["b"], n)
    if kind == "normal":
        return rng.normal(spec.get("mean", 0.0), spec.get("sd", 1.0), n)
    if kind == "bernoulli":
        return (rng.random(n) < spec["p"]).astype(float)
    if kind == "uniform":
        return rng.uniform(spec.get("low", 0.0), spec.get("high", 1.0), n)
    raise SchemaViolation(f"unknown covariate distribution {kind!r}")


@dataclass(frozen=True)
class DgpConfig:
    """``y = intercept + x.beta + t (tau0 + x.gamma) + N(0, noise_sd^2)``."""

    covariates: tuple[dict, ...]
    intercept: float
    beta: tuple[float, ...]
    tau0: float
    gamma: tuple[float, ...]
    noise_sd: float = 1.0
    p_treat: float = 0.5

    @classmethod
    def illustrative(cls) -> "DgpConfig":
        return cls(
            covariates=(
                {"dist": "beta", "a": 12, "b": 3},
                {"dist": "normal", "mean": 4.0, "sd": 1.0},
                {"dist": "beta", "a": 1, "b": 7},
            ),
            intercept=1.0,
            beta=(1.0, -1.0, 1.0),
            tau0=5.0,
            gamma=(2.0, 2.0, -4.0),
        )

    def cate(self, X: np.ndarray) -> np.ndarray:
        return self.tau0 + X @ np.asarray(self.gamma, dtype=float)

    def outcome_mean(self, X: np.ndarray, t: np.ndarray) -> np.ndarray:
        return self.intercept + X @ np.asarray(self.beta, dtype=float) + t * self.cate(X)


def synth_rct(cfg: DgpConfig, n: int, seed: int) -> TabularDataset:
    rng = np.random.default_rng(seed)
    d = len(cfg.covariates)
    X = np.column_stack([_draw_covariate(s, n, rng) for s in cfg.covariates]) if n else np.zeros((0, d))
    t = (rng.random(n) < cfg.p_treat).astype(float)
    y = cfg.outcome_mean(X, t) + rng.normal(0.0, cfg.noise_sd, n)
    return TabularDataset(X, t, y, cfg.cate(X))


def ihdp_surrogate(seed: int = 0, n: int = 747, n_continuous: int = 6, n_binary: int = 18) -> TabularDataset:
    """Synthetic stand-in shaped like IHDP: 747 rows, 6 continuous and 18
    binary covariates, about 19% treated, and a linear outcome with a
    heterogeneous linear CATE."""
    rng = np.random.default_rng([seed, 747])
    d = n_continuous + n_binary
    A = rng.normal(size=(n_continuous, n_continuous)) * 0.4 + np.eye(n_continuous)
    Xc = rng.normal(size=(n, n_continuous)) @ A.T
    Xc = (Xc - Xc.mean(0)) / Xc.std(0)
    Xb = (rng.random((n, n_binary)) < rng.uniform(0.1, 0.6, n_binary)).astype(float)
    X = np.hstack([Xc, Xb])
    t = (rng.random(n) < 0.19).astype(float)
    beta = rng.choice([0.0, 0.5, 1.0, 1.5, 2.0], size=d, p=[0.5, 0.2, 0.15, 0.1, 0.05])
    gamma = np.zeros(d)
    active = rng.choice(d, size=8, replace=False)
    gamma[active] = rng.normal(0.0, 1.0, 8)
    tau = 4.0 + X @ gamma
    y = 1.0 + X @ beta + t * tau + rng.normal(0.0, 1.0, n)
    return TabularDataset(X, t, y, tau)


# -- selection functions -------------------------------------------------
@dataclass(frozen=True)
class SelectionFunction:
    """``sigmoid(intercept + sum_j mask_j c_j x_j^p_j + c_t t)``, or one minus it."""

    active_mask: tuple[bool, ...]
    coefficients: tuple[float, ...]
    powers: tuple[int, ...]
    treatment_coefficient: float = 0.0
    intercept: float = 0.0
    complemented: bool = False

    def logit(self, X: np.ndarray, t: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        mask = np.asarray(self.active_mask, dtype=bool)
        z = np.full(X.shape[0], float(self.intercept))
        if mask.any():
            P = np.asarray(self.powers)[mask]
            z = z + (X[:, mask] ** P) @ np.asarray(self.coefficients, dtype=float)[mask]
        return z + self.treatment_coefficient * np.asarray(t, dtype=float)

    def __call__(self, X, t) -> np.ndarray:
        p = expit(self.logit(X, t))
        return 1.0 - p if self.complemented else p

    def to_dict(self) -> dict:
        return asdict(self)


def illustrative_host_selection() -> SelectionFunction:
    return SelectionFunction((True, True, False), (2.0, -1.0, 0.0), (1, 1, 1), 2.0, 1.0)


def twin_complement(host_S: SelectionFunction) -> tuple[SelectionFunction, SelectionFunction]:
    return host_S, replace(host_S, complemented=not host_S.complemented)


def random_selection_fn(dim: int, seed: int, coef_scale: float = 1.0, max_power: int = 3) -> SelectionFunction:
    """Random active subset, normal coefficients and powers in ``1..max_power``.

    Coefficients are divided by the square root of the number of active
    covariates so the logit stays on a unit scale for standardized inputs.
    """
    rng = np.random.default_rng([seed, 5151])
    mask = rng.random(dim) < 0.5
    if not mask.any():
        mask[rng.integers(dim)] = True
    coef = rng.normal(0.0, coef_scale, dim) / np.sqrt(mask.sum())
    powers = rng.integers(1, max_power + 1, dim)
    return SelectionFunction(
        tuple(bool(m) for m in mask),
        tuple(float(c) if m else 0.0 for c, m in zip(coef, mask)),
        tuple(int(p) for p in powers),
        float(rng.normal(0.0, coef_scale)),
        float(rng.normal(0.0, 0.5)),
    )


def subsample(data: TabularDataset, S: SelectionFunction, n_target: int, seed: int) -> TabularDataset:
    """Weighted draw without replacement, weights ``S(x_i, t_i)``."""
    if n_target > data.n:
        raise InsufficientRows(f"asked for {n_target} rows from {data.n}")
    w = S(data.X, data.t)
    w = np.clip(w, 1e-300, None)
    rng = np.random.default_rng([seed, 2718])
    idx = rng.choice(data.n, size=n_target, replace=False, p=w / w.sum())
    return data.subset(np.sort(idx))


def weighted_holdout(data: TabularDataset, S: SelectionFunction, n: int, seed: int) -> TabularDataset:
    """Draw ``n`` rows with replacement from the selection-weighted source."""
    w = S(data.X, data.t)
    rng = np.random.default_rng([seed, 3141])
    return data.subset(rng.choice(data.n, size=n, replace=True, p=w / w.sum()))


# -- site collections ----------------------------------------------------
@dataclass
class SiteCollection:
    """Host (with outcomes), masked candidates and the per-site manifest.

    Candidate outcomes are held privately and released only through
    :meth:`unmasked`, which the ground-truth harness calls.
    """

    host: TabularDataset
    candidates: list[TabularDataset]
    manifest: list[dict]
    host_selection: SelectionFunction
    _truth: list[TabularDataset] = field(repr=False, default_factory=list)

    def unmasked(self, i: int) -> TabularDataset:
        return self._truth[i]

    def write_manifest(self, path) -> None:
        Path(path).write_text(json.dumps(self.manifest, indent=2))


def _site_ok(site: TabularDataset, min_per_arm: int) -> bool:
    return site.n_treated >= min_per_arm and site.n_control >= min_per_arm


def make_sites(
    source: TabularDataset,
    K: int,
    host_size: int,
    size_range: tuple[int, int],
    min_per_arm: int,
    seed: int,
    max_retries: int = 50,
    coef_scale: float = 1.0,
) -> SiteCollection:
    """Host and ``K`` candidates, each drawn from ``source`` with its own
    random selection function. Sites violating ``min_per_arm`` are redrawn
    with a fresh function, up to ``max_retries`` times."""
    rng = np.random.default_rng([seed, 1618])
    manifest = []

    def draw(role: str, size: int):
        for attempt in range(max_retries + 1):
            s = int(rng.integers(2**31))
            S = random_selection_fn(source.d, s, coef_scale)
            site = subsample(source, S, size, s)
            if min_per_arm <= 0 or _site_ok(site, min_per_arm):
                manifest.append(
                    {
                        "role": role,
                        "seed": s,
                        "size": site.n,
                        "n_treated": site.n_treated,
                        "n_control": site.n_control,
                        "attempts": attempt + 1,
                        "selection": S.to_dict(),
                    }
                )
                return S, site
        raise InfeasibleConstraints(f"{role}: no site with {min_per_arm} per arm after {max_retries} retries")

    host_S, host = draw("host", host_size)
    truth = []
    lo, hi = size_range
    for k in range(K):
        _, site = draw(f"candidate_{k}", int(rng.integers(lo, hi + 1)))
        truth.append(site)
    return SiteCollection(host, [s.masked() for s in truth], manifest, host_S, truth)
