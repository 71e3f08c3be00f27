"""Effect-estimation metrics and the representation uniformity diagnostic."""
import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from .dataset import true_ite
from .exceptions import (
    GroundTruthUnavailableError,
    NumericError,
    ShapeError,
    SingleGroupError,
    UsageError,
)
from .numeric import as_matrix, pairwise_sq_dist

logger = logging.getLogger(__name__)


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.size == 0:
        raise ShapeError("need at least one unit")
    return a, b


def pehe(tau_true, tau_hat):
    """Mean squared effect error. Report its square root."""
    a, b = _pair(tau_true, tau_hat)
    return float(np.mean((a - b) ** 2))


def ate_error(tau_true, tau_hat):
    a, b = _pair(tau_true, tau_hat)
    return float(abs(np.mean(a) - np.mean(b)))


def _cond_mean(y, mask, label):
    if not mask.any():
        logger.warning("policy risk: no units with %s; cell contributes 0", label)
        return 0.0
    return float(np.mean(y[mask]))


def policy_risk(ds, tau_hat):
    """One minus the value of treating exactly when ``tau_hat > 0``.

    Evaluated on the randomized units of ``ds`` (its ``rct_mask``); each
    conditional mean uses the factual arm only.
    """
    if ds.rct_mask is None:
        raise UsageError(f"{ds.name} carries no randomized-subset mask")
    tau_hat = np.asarray(tau_hat, dtype=np.float64).reshape(-1)
    if tau_hat.shape[0] != ds.n:
        raise ShapeError("tau_hat must have one entry per unit")
    m = ds.rct_mask
    t, y, policy = ds.t[m], ds.y[m], tau_hat[m] > 0
    if t.size == 0:
        raise UsageError("randomized subset is empty")
    p_treat = float(np.mean(policy))
    v1 = _cond_mean(y, policy & (t == 1), "policy=1, t=1")
    v0 = _cond_mean(y, ~policy & (t == 0), "policy=0, t=0")
    return 1.0 - (p_treat * v1 + (1.0 - p_treat) * v0)


def att_error(ds, tau_hat):
    """``| |mean_T1 y - mean_T0 y| - |mean_T1 tau_hat| |`` on the factual outcomes of ``ds``."""
    tau_hat = np.asarray(tau_hat, dtype=np.float64).reshape(-1)
    if tau_hat.shape[0] != ds.n:
        raise ShapeError("tau_hat must have one entry per unit")
    treated = ds.t == 1
    if treated.all() or not treated.any():
        raise SingleGroupError("ATT error needs treated and control units")
    att = abs(ds.y[treated].mean() - ds.y[~treated].mean())
    return float(abs(att - abs(tau_hat[treated].mean())))


def project_2d(phi):
    """First two principal-component scores; each loading's largest entry is made positive."""
    phi = as_matrix(phi, "phi")
    centred = phi - phi.mean(axis=0)
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    comps = vt[:2].copy()
    for c in comps:
        if c[np.argmax(np.abs(c))] < 0:
            c *= -1
    scores = centred @ comps.T
    if scores.shape[1] < 2:
        scores = np.column_stack([scores, np.zeros(scores.shape[0])])
    return scores


def uniformity(phi, t=2.0, projection=False):
    """Log mean Gaussian potential over unordered pairs of L2-normalised rows.

    Lower is more uniform; 0 means every row maps to the same point.
    """
    phi = as_matrix(phi, "phi")
    if projection:
        phi = project_2d(phi)
    if phi.shape[0] < 2:
        raise ShapeError("uniformity needs at least two rows")
    norms = np.linalg.norm(phi, axis=1)
    if np.any(norms <= 0):
        raise NumericError("cannot normalise a zero-norm representation")
    z = phi / norms[:, None]
    d2 = pairwise_sq_dist(z, z)
    iu = np.triu_indices(z.shape[0], k=1)
    vals = -t * d2[iu]
    # log-mean-exp, stable for widely spread points
    top = vals.max()
    return float(top + np.log(np.mean(np.exp(vals - top))))


@dataclass
class EvalReport:
    sqrt_pehe_within: Optional[float] = None
    ate_err_within: Optional[float] = None
    sqrt_pehe_out: Optional[float] = None
    ate_err_out: Optional[float] = None
    r_pol_within: Optional[float] = None
    att_err_within: Optional[float] = None
    r_pol: Optional[float] = None
    att_err: Optional[float] = None
    uniformity: Optional[float] = None
    n_within: int = 0
    n_out: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name.startswith("n_") or f.name == "uniformity" or v is None:
                continue
            if not (v >= 0):
                raise NumericError(f"{f.name} must be non-negative, got {v}")

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def csv_header(cls):
        return [f.name for f in fields(cls)]

    def csv_row(self):
        buf = io.StringIO()
        csv.writer(buf, lineterminator="").writerow(
            ["" if v is None else v for v in asdict(self).values()]
        )
        return buf.getvalue()


EFFECT_METRICS = ("pehe", "ate")
POLICY_METRICS = ("policy_risk", "att")


def _effect(ds, tau):
    truth = true_ite(ds)
    p = pehe(truth, tau)
    a = ate_error(truth, tau)
    # Jensen: |mean(e)| <= sqrt(mean(e^2))
    assert a <= math.sqrt(p) + 1e-12 * max(1.0, a), "ATE error exceeds sqrt-PEHE"
    return math.sqrt(p), a


def _policy(ds, tau):
    sub = ds.subset(np.flatnonzero(ds.rct_mask))
    return policy_risk(ds, tau), att_error(sub, tau[ds.rct_mask])


def evaluate(within, out, tau_within, tau_out, phi_out=None, metrics=None, projection=False):
    """Within-sample metrics on ``within`` (train+valid), out-of-sample on ``out`` (test).

    By default effect metrics are computed when potential outcomes are known
    and policy metrics when outcomes are binary with a randomized subset.
    Explicitly requested metrics that cannot be computed raise.
    """
    requested = set(metrics or ())
    rep = EvalReport(n_within=within.n, n_out=out.n)
    gt = within.has_ground_truth and out.has_ground_truth
    if requested & set(EFFECT_METRICS) and not gt:
        raise GroundTruthUnavailableError("PEHE/ATE requested but potential outcomes are missing")
    if gt and (not requested or requested & set(EFFECT_METRICS)):
        rep.sqrt_pehe_within, rep.ate_err_within = _effect(within, np.asarray(tau_within))
        rep.sqrt_pehe_out, rep.ate_err_out = _effect(out, np.asarray(tau_out))

    policy_ok = within.outcome == "binary" and within.rct_mask is not None and out.rct_mask is not None
    if requested & set(POLICY_METRICS) and not policy_ok:
        raise UsageError("policy metrics need binary outcomes and a randomized-subset mask")
    if policy_ok and (not requested or requested & set(POLICY_METRICS)):
        if within.rct_mask.any():
            rep.r_pol_within, rep.att_err_within = _policy(within, np.asarray(tau_within))
        if out.rct_mask.any():
            rep.r_pol, rep.att_err = _policy(out, np.asarray(tau_out))

    if phi_out is not None:
        rep.uniformity = uniformity(phi_out, projection=projection)
    EvalReport.__post_init__(rep)
    return rep
