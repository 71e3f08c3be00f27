"""Causal datasets: synthetic generation, CSV ingestion, splitting, diagnostics."""
import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import expit

from .exceptions import (
    ConfigError,
    GroundTruthUnavailableError,
    ParseError,
    SingleGroupError,
    SplitError,
)
from .numeric import as_matrix, make_rng

logger = logging.getLogger(__name__)


@dataclass
class CausalDataset:
    """Covariates, binary treatment and factual outcome for ``n`` units.

    ``y0``/``y1`` hold ground-truth potential outcomes when known (synthetic
    data, IHDP ``mu0``/``mu1``). ``rct_mask`` marks units drawn from a
    randomized subset, which is what policy risk is evaluated on.
    """

    X: np.ndarray
    t: np.ndarray
    y: np.ndarray
    y0: Optional[np.ndarray] = None
    y1: Optional[np.ndarray] = None
    rct_mask: Optional[np.ndarray] = None
    name: str = "dataset"
    outcome: str = "continuous"
    check_composition: bool = True

    def __post_init__(self):
        self.X = as_matrix(self.X, "X")
        n = self.X.shape[0]
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if self.t.shape[0] != n or self.y.shape[0] != n:
            raise ConfigError("X, t and y must have the same number of rows")
        if not np.all((self.t == 0) | (self.t == 1)):
            raise ConfigError("treatment must be binary")
        if n and (self.t.min() == self.t.max()):
            raise SingleGroupError("dataset must contain treated and control units")
        if (self.y0 is None) != (self.y1 is None):
            raise ConfigError("y0 and y1 must be given together")
        if self.y0 is not None:
            self.y0 = np.asarray(self.y0, dtype=np.float64).reshape(-1)
            self.y1 = np.asarray(self.y1, dtype=np.float64).reshape(-1)
            if self.y0.shape[0] != n or self.y1.shape[0] != n:
                raise ConfigError("potential outcomes must have n entries")
            if self.check_composition:
                composed = (1 - self.t) * self.y0 + self.t * self.y1
                if not np.array_equal(composed, self.y):
                    raise ConfigError("y must equal (1-t)*y0 + t*y1")
        if self.rct_mask is not None:
            self.rct_mask = np.asarray(self.rct_mask, dtype=bool).reshape(-1)
            if self.rct_mask.shape[0] != n:
                raise ConfigError("rct_mask must have n entries")
        if self.outcome not in ("continuous", "binary"):
            raise ConfigError(f"unknown outcome type {self.outcome!r}")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def has_ground_truth(self):
        return self.y0 is not None

    def group_sizes(self):
        """(n_treated, n_control)."""
        n1 = int(self.t.sum())
        return n1, self.n - n1

    def subset(self, idx, name=None):
        idx = np.asarray(idx)
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return replace(
            self,
            X=self.X[idx],
            t=self.t[idx],
            y=self.y[idx],
            y0=pick(self.y0),
            y1=pick(self.y1),
            rct_mask=pick(self.rct_mask),
            name=name or self.name,
        )


def concat(a, b, name=None):
    """Stack two datasets row-wise."""
    def cat(u, v):
        if u is None or v is None:
            return None
        return np.concatenate([u, v])

    return CausalDataset(
        X=np.vstack([a.X, b.X]),
        t=np.concatenate([a.t, b.t]),
        y=np.concatenate([a.y, b.y]),
        y0=cat(a.y0, b.y0),
        y1=cat(a.y1, b.y1),
        rct_mask=cat(a.rct_mask, b.rct_mask),
        name=name or a.name,
        outcome=a.outcome,
        check_composition=a.check_composition and b.check_composition,
    )


@dataclass
class SyntheticConfig:
    """Parameters of the equicorrelated-Gaussian benchmark generator.

    ``gamma_disp`` scales the covariate covariance; it is unrelated to the
    diversity-loss weight used in training. ``noise`` toggles the shared
    outcome noise term (off gives a noiseless variant for exact-recovery tests).
    """

    p: int = 10
    n: int = 800
    rho: float = 0.2
    sigma2: float = 3.0
    gamma_disp: float = 1.0
    beta0: Optional[np.ndarray] = None
    beta1: Optional[np.ndarray] = None
    seed: int = 0
    noise: bool = True

    def __post_init__(self):
        if self.beta0 is None:
            self.beta0 = np.full(self.p, 0.2)
        if self.beta1 is None:
            self.beta1 = np.full(self.p, 1.2)
        self.beta0 = np.broadcast_to(np.asarray(self.beta0, dtype=np.float64), (self.p,)).copy()
        self.beta1 = np.broadcast_to(np.asarray(self.beta1, dtype=np.float64), (self.p,)).copy()
        self.validate()

    def validate(self):
        if self.p < 1 or self.n < 1:
            raise ConfigError("p and n must be positive")
        if not (0.0 <= self.rho < 1.0):
            raise ConfigError(f"rho must lie in [0, 1), got {self.rho}")
        if self.sigma2 <= 0 or self.gamma_disp <= 0:
            raise ConfigError("sigma2 and gamma_disp must be positive")

    def covariance(self):
        ones = np.ones((self.p, self.p))
        eye = np.eye(self.p)
        return self.gamma_disp * self.sigma2 * (self.rho * ones + (1 - self.rho) * eye)


def generate_synthetic(cfg):
    """Draw one synthetic dataset.

    Treatment follows a logistic model on the covariate sum and both potential
    outcomes are linear in ``x`` with a single shared noise draw per unit, so
    the true effect is noiseless.
    """
    cfg.validate()
    rng = make_rng(cfg.seed)
    chol = np.linalg.cholesky(cfg.covariance())
    X = rng.standard_normal((cfg.n, cfg.p)) @ chol.T
    prop = expit(X.sum(axis=1))
    t = (rng.random(cfg.n) < prop).astype(np.float64)
    xi = rng.standard_normal(cfg.n) if cfg.noise else np.zeros(cfg.n)
    y0 = X @ cfg.beta0 + xi
    y1 = X @ cfg.beta1 + xi
    y = (1 - t) * y0 + t * y1
    return CausalDataset(
        X=X, t=t, y=y, y0=y0, y1=y1,
        name=f"synthetic_gamma{cfg.gamma_disp:g}_seed{cfg.seed}",
    )


def true_ite(ds):
    if not ds.has_ground_truth:
        raise GroundTruthUnavailableError(f"{ds.name} has no potential outcomes")
    return ds.y1 - ds.y0


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.63
    valid_frac: float = 0.27
    test_frac: float = 0.10
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_frac, self.valid_frac, self.test_frac)
        if any(f <= 0 for f in fr):
            raise ConfigError("split fractions must be positive")
        if abs(sum(fr) - 1.0) > 1e-12:
            raise ConfigError(f"split fractions sum to {sum(fr)!r}, not 1")

    def sizes(self, n):
        n_valid = round(self.valid_frac * n)
        n_test = round(self.test_frac * n)
        return n - n_valid - n_test, n_valid, n_test


def split_indices(n, spec):
    """Disjoint shuffled (train, valid, test) index arrays; remainder goes to train."""
    if n < 10:
        raise SplitError(f"need at least 10 rows to split, got {n}")
    n_train, n_valid, n_test = spec.sizes(n)
    if min(n_train, n_valid, n_test) <= 0:
        raise SplitError(f"split sizes {(n_train, n_valid, n_test)} contain an empty part")
    perm = make_rng(spec.seed).permutation(n)
    return (
        np.sort(perm[:n_train]),
        np.sort(perm[n_train:n_train + n_valid]),
        np.sort(perm[n_train + n_valid:]),
    )


def split(ds, spec):
    parts = []
    for label, idx in zip(("train", "valid", "test"), split_indices(ds.n, spec)):
        t = ds.t[idx]
        if t.min() == t.max():
            # CausalDataset refuses single-group data, so this split is unusable
            raise SplitError(f"{label} split of {ds.name} holds a single treatment group")
        parts.append(ds.subset(idx, name=f"{ds.name}/{label}"))
    return tuple(parts)


_POTENTIAL_PAIRS = (("mu0", "mu1"), ("y0", "y1"))


def load_csv(path, outcome=None, name=None):
    """Read a dataset from ``x1..xd,t,y[,mu0,mu1|,y0,y1][,e]``.

    ``mu0``/``mu1`` are noiseless potential-outcome means (IHDP convention);
    with them the factual ``y`` is noisy, so the composition identity is not
    enforced. An optional ``e`` column flags rows from a randomized subset.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path} is empty") from None
        rows = list(reader)

    xcols = sorted(
        (h for h in header if h.startswith("x") and h[1:].isdigit()),
        key=lambda h: int(h[1:]),
    )
    if not xcols:
        raise ParseError(f"{path}: no covariate columns x1..xd", column="x1")
    expected = [f"x{j}" for j in range(1, len(xcols) + 1)]
    if xcols != expected:
        missing = sorted(set(expected) - set(xcols), key=lambda h: int(h[1:]))
        raise ParseError(f"{path}: covariate columns are not contiguous", column=missing[0])
    for col in ("t", "y"):
        if col not in header:
            raise ParseError(f"{path}: missing mandatory column", column=col)
    pair = next((p for p in _POTENTIAL_PAIRS if p[0] in header and p[1] in header), None)

    pos = {h: i for i, h in enumerate(header)}
    wanted = xcols + ["t", "y"] + (list(pair) if pair else []) + (["e"] if "e" in pos else [])
    data = {c: np.empty(len(rows)) for c in wanted}
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ParseError(f"{path}: expected {len(header)} fields, got {len(row)}", row=r)
        for c in wanted:
            cell = row[pos[c]].strip()
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"{path}: non-numeric cell {cell!r}", row=r, column=c) from None
            if not math.isfinite(v):
                raise ParseError(f"{path}: non-finite cell {cell!r}", row=r, column=c)
            data[c][r - 1] = v
        if data["t"][r - 1] not in (0.0, 1.0):
            raise ParseError(f"{path}: treatment must be 0 or 1", row=r, column="t")
        if "e" in data and data["e"][r - 1] not in (0.0, 1.0):
            raise ParseError(f"{path}: e must be 0 or 1", row=r, column="e")

    if outcome is None:
        outcome = "binary" if np.all(np.isin(data["y"], (0.0, 1.0))) and pair is None else "continuous"
    y0 = y1 = None
    if pair:
        y0, y1 = data[pair[0]], data[pair[1]]
    ds = CausalDataset(
        X=np.column_stack([data[c] for c in xcols]),
        t=data["t"],
        y=data["y"],
        y0=y0,
        y1=y1,
        rct_mask=data["e"].astype(bool) if "e" in data else None,
        name=name or path.stem,
        outcome=outcome,
        check_composition=pair == ("y0", "y1"),
    )
    n1, n0 = ds.group_sizes()
    logger.info("loaded %s: n=%d d=%d treated=%d control=%d", ds.name, ds.n, ds.d, n1, n0)
    return ds


def _fmt(v):
    return repr(float(v))


def save_csv(ds, path, potential="y0y1"):
    """Write ``ds`` in the ingestion schema; ``potential`` picks the y0/y1 or mu0/mu1 header."""
    header = [f"x{j}" for j in range(1, ds.d + 1)] + ["t", "y"]
    cols = [ds.X[:, j] for j in range(ds.d)] + [ds.t, ds.y]
    if ds.has_ground_truth:
        header += ["y0", "y1"] if potential == "y0y1" else ["mu0", "mu1"]
        cols += [ds.y0, ds.y1]
    if ds.rct_mask is not None:
        header.append("e")
        cols.append(ds.rct_mask.astype(np.float64))
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(ds.n):
            w.writerow([_fmt(c[i]) for c in cols])


@dataclass
class OverlapReport:
    edges: np.ndarray
    counts: np.ndarray
    treated_fraction: np.ndarray
    flagged: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.flagged


def overlap_diagnostic(ds, bins=10):
    """Treated fraction per bin of a fitted logistic propensity score.

    Bins whose treated fraction is exactly 0 or 1 are flagged as positivity
    violations. Empty bins are neither counted nor flagged.
    """
    from sklearn.linear_model import LogisticRegression

    if bins < 2:
        raise ConfigError("bins must be >= 2")
    clf = LogisticRegression(C=1e6, max_iter=1000)
    clf.fit(ds.X, ds.t.astype(int))
    score = clf.decision_function(ds.X)
    edges = np.quantile(score, np.linspace(0, 1, bins + 1))
    which = np.clip(np.searchsorted(edges, score, side="right") - 1, 0, bins - 1)
    counts = np.bincount(which, minlength=bins)
    treated = np.bincount(which, weights=ds.t, minlength=bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(counts > 0, treated / np.maximum(counts, 1), np.nan)
    flagged = [b for b in range(bins) if counts[b] > 0 and frac[b] in (0.0, 1.0)]
    return OverlapReport(edges=edges, counts=counts, treated_fraction=frac, flagged=flagged)
