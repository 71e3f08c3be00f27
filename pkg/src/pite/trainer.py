"""Total objective, mini-batch training with early stopping, and ITE estimates."""
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from . import model as M
from . import prototypes as P
from .exceptions import ConfigError, SingleGroupError, TrainingError

logger = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "momentum", "adam")


@dataclass
class TrainConfig:
    """Training hyperparameters.

    ``lam`` weights the L2 penalty (sum of squared weights, biases excluded).
    ``gamma_div`` weights the diversity term; it is not the data-generating
    dispersion.
    """

    alpha: float = 1.0
    beta: float = 1.0
    gamma_div: float = 0.1
    lam: float = 1e-4
    K: int = 5
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 400
    patience: int = 30
    rematch_strategy: str = "index"
    seed: int = 0
    proto_seed: int = None
    optimizer: str = "adam"
    momentum: float = 0.9
    assign_every: str = "batch"
    stratify: bool = False

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma_div, self.lam) < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.patience < 1 or self.max_epochs < 1:
            raise ConfigError("patience and max_epochs must be >= 1")
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.rematch_strategy not in P.REMATCH_STRATEGIES:
            raise ConfigError(f"unknown rematch strategy {self.rematch_strategy!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.assign_every not in ("batch", "epoch"):
            raise ConfigError("assign_every must be 'batch' or 'epoch'")

    def to_dict(self):
        return asdict(self)


@dataclass
class LossBreakdown:
    l_pred: float
    l_cluster: float
    l_align: float
    l_div: float
    l_reg: float
    alpha: float
    beta: float
    gamma_div: float
    lam: float

    @property
    def l_proto(self):
        return self.l_cluster + self.beta * self.l_align + self.gamma_div * self.l_div

    @property
    def l_total(self):
        return self.l_pred + self.alpha * self.l_proto + self.lam * self.l_reg

    def to_dict(self):
        return {
            "l_pred": self.l_pred,
            "l_cluster": self.l_cluster,
            "l_align": self.l_align,
            "l_div": self.l_div,
            "l_reg": self.l_reg,
            "l_total": self.l_total,
        }


def treatment_weights(t):
    """``t/(2u) + (1-t)/(2(1-u))`` with ``u`` the treated fraction."""
    t = np.asarray(t, dtype=np.float64)
    u = t.mean() if t.size else 0.0
    if u <= 0.0 or u >= 1.0:
        raise SingleGroupError(f"treated fraction u={u} must lie strictly in (0, 1)")
    return t / (2 * u) + (1 - t) / (2 * (1 - u))


def _factual_loss(out0, out1, t, y, outcome):
    """Weighted factual loss and its gradients w.r.t. both heads' raw outputs."""
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = t.shape[0]
    w = treatment_weights(t)
    z = np.where(t == 1, out1, out0)
    if outcome == "binary":
        # logits; softplus(z) - y*z is the cross-entropy
        per = np.logaddexp(0.0, z) - y * z
        dz = expit(z) - y
    else:
        r = z - y
        per = r * r
        dz = 2.0 * r
    loss = float(np.sum(w * per) / n)
    g = w * dz / n
    return loss, np.where(t == 0, g, 0.0), np.where(t == 1, g, 0.0)


def prediction_loss(params, phi, t, y, outcome="continuous"):
    out0 = M.predict(params, phi, 0)
    out1 = M.predict(params, phi, 1)
    return _factual_loss(out0, out1, t, y, outcome)[0]


def l2_reg(params):
    return float(sum(np.sum(W * W) for W in params.weight_blocks()))


def total_loss(params, protos, X, t, y, cfg, table=None, outcome="continuous"):
    """Loss breakdown on ``(X, t, y)``; assignments are refreshed unless ``table`` is given."""
    return total_loss_and_grads(params, protos, X, t, y, cfg, table, outcome, grads=False)[0]


def total_loss_and_grads(params, protos, X, t, y, cfg, table=None, outcome="continuous", grads=True):
    """Return ``(breakdown, param_grads, mu_grad, table)``.

    Assignments in ``table`` are treated as constants.
    """
    cache = M.forward(params, X)
    l_pred, d0, d1 = _factual_loss(cache.out0, cache.out1, t, y, outcome)
    use_protos = cfg.alpha > 0 and protos is not None
    if protos is not None and table is None:
        table = P.assign(cache.phi, t, protos)
    if protos is not None:
        pl = P.proto_loss(cache.phi, table, protos, cfg.beta, cfg.gamma_div)
        parts = (pl.cluster, pl.align, pl.div)
    else:
        parts = (0.0, 0.0, 0.0)
    bd = LossBreakdown(l_pred, *parts, l2_reg(params), cfg.alpha, cfg.beta, cfg.gamma_div, cfg.lam)
    if not grads:
        return bd, None, None, table

    d_phi = None
    g_mu = None if protos is None else np.zeros_like(protos.mu)
    if use_protos:
        g_phi, g_mu = P.proto_loss_grads(cache.phi, table, protos, cfg.beta, cfg.gamma_div)
        d_phi = cfg.alpha * g_phi
        g_mu *= cfg.alpha
    pg = M.backward(params, cache, M.LossGrads(d_out0=d0, d_out1=d1, d_phi=d_phi))
    if cfg.lam:
        for g, W in zip(pg.weight_blocks(), params.weight_blocks()):
            g += 2.0 * cfg.lam * W
    return bd, pg, g_mu, table


class _Optimizer:
    """Plain, heavy-ball momentum or Adam updates over a list of arrays, in place."""

    def __init__(self, kind, lr, momentum=0.9, b1=0.9, b2=0.999, eps=1e-8):
        self.kind, self.lr, self.momentum = kind, lr, momentum
        self.b1, self.b2, self.eps = b1, b2, eps
        self.state = {}
        self.steps = 0

    def reset(self, slot):
        self.state.pop(slot, None)

    def step(self, arrays, grads):
        self.steps += 1
        for slot, (a, g) in enumerate(zip(arrays, grads)):
            if self.kind == "sgd":
                a -= self.lr * g
            elif self.kind == "momentum":
                v = self.state.get(slot)
                v = g.copy() if v is None else self.momentum * v + g
                self.state[slot] = v
                a -= self.lr * v
            else:
                m, v, k = self.state.get(slot, (np.zeros_like(a), np.zeros_like(a), 0))
                k += 1
                m = self.b1 * m + (1 - self.b1) * g
                v = self.b2 * v + (1 - self.b2) * g * g
                self.state[slot] = (m, v, k)
                mhat = m / (1 - self.b1 ** k)
                vhat = v / (1 - self.b2 ** k)
                a -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _batches(t, batch_size, stratify, rng):
    n = t.shape[0]
    n_batches = max(1, int(np.ceil(n / batch_size)))
    if not stratify:
        return np.array_split(rng.permutation(n), n_batches)
    parts = []
    for g in (0, 1):
        idx = np.flatnonzero(t == g)
        parts.append(np.array_split(idx[rng.permutation(idx.size)], n_batches))
    return [np.concatenate([a, b]) for a, b in zip(*parts)]


@dataclass
class FitResult:
    params: M.ModelParams
    protos: P.PrototypeSet
    history: list = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best_valid_loss(self):
        return self.history[self.best_epoch - 1]["valid_loss"] if self.history else float("nan")


def _seeds(cfg):
    ss = np.random.SeedSequence(cfg.seed)
    init_ss, proto_ss, batch_ss = ss.spawn(3)
    if cfg.proto_seed is not None:
        proto_ss = np.random.SeedSequence(cfg.proto_seed)
    gen = lambda s: np.random.Generator(np.random.PCG64(s))  # noqa: E731
    return gen(init_ss), gen(proto_ss), gen(batch_ss)


def initial_params(mcfg, tcfg):
    """The untrained network :func:`fit` starts from for this configuration."""
    return M.init_params(mcfg, _seeds(tcfg)[0])


def fit(train, valid, mcfg, tcfg, callback=None):
    """Minimise the total loss by mini-batch gradient descent.

    Assignments are refreshed every batch (or once per epoch with
    ``assign_every='epoch'``). After each epoch empty clusters are reseeded
    and the control prototypes are re-paired with the treated ones using
    ``rematch_strategy``. Training stops once the weighted factual
    validation loss has not improved for ``patience`` epochs; the best
    snapshot is returned.
    """
    outcome = train.outcome
    init_rng, proto_rng, batch_rng = _seeds(tcfg)
    params = M.init_params(mcfg, init_rng)
    protos = P.init_prototypes(M.encode(params, train.X), train.t, tcfg.K, proto_rng)
    opt = _Optimizer(tcfg.optimizer, tcfg.learning_rate, tcfg.momentum)
    n_param_blocks = len(params.blocks())
    mu_slot = n_param_blocks

    history = []
    best = (np.inf, 0, params.copy(), protos.copy())
    epoch_table = None
    for epoch in range(1, tcfg.max_epochs + 1):
        if tcfg.assign_every == "epoch":
            epoch_table = P.assign(M.encode(params, train.X), train.t, protos)
        sums = np.zeros(5)
        for idx in _batches(train.t, tcfg.batch_size, tcfg.stratify, batch_rng):
            table = None
            if epoch_table is not None:
                table = P.AssignmentTable(k=epoch_table.k[idx], t=epoch_table.t[idx], K=protos.K)
            bd, pg, g_mu, _ = total_loss_and_grads(
                params, protos, train.X[idx], train.t[idx], train.y[idx], tcfg, table, outcome
            )
            if not np.isfinite(bd.l_total):
                raise TrainingError("non-finite training loss", epoch=epoch)
            sums += len(idx) * np.array([bd.l_pred, bd.l_cluster, bd.l_align, bd.l_div, bd.l_reg])
            opt.step(list(params.blocks().values()) + [protos.mu],
                     list(pg.blocks().values()) + [g_mu])

        phi = M.encode(params, train.X)
        table = P.assign(phi, train.t, protos)
        new_protos, _ = P.handle_empty_cluster(protos, table, phi)
        perm = P.rematch_prototypes(new_protos, tcfg.rematch_strategy)
        if new_protos is not protos or not np.array_equal(perm, np.arange(protos.K)):
            protos = P.apply_rematch(new_protos, perm)
            opt.reset(mu_slot)

        vphi = M.encode(params, valid.X)
        valid_loss = prediction_loss(params, vphi, valid.t, valid.y, outcome)
        if not np.isfinite(valid_loss):
            raise TrainingError("non-finite validation loss", epoch=epoch)
        avg = sums / train.n
        bd = LossBreakdown(*avg, tcfg.alpha, tcfg.beta, tcfg.gamma_div, tcfg.lam)
        rec = {"epoch": epoch, **bd.to_dict(), "valid_loss": valid_loss}
        history.append(rec)
        if callback is not None:
            callback(rec)
        if valid_loss < best[0]:
            best = (valid_loss, epoch, params.copy(), protos.copy())
        elif epoch - best[1] >= tcfg.patience:
            break
    logger.info("fit stopped after %d epochs, best epoch %d (valid %.6g)", len(history), best[1], best[0])
    return FitResult(params=best[2], protos=best[3], history=history, best_epoch=best[1])


def estimate_ite(params, X, outcome="continuous"):
    """``h1(phi(x)) - h0(phi(x))``; probabilities are differenced for binary outcomes."""
    phi = M.encode(params, X)
    o1 = M.predict(params, phi, 1)
    o0 = M.predict(params, phi, 0)
    if outcome == "binary":
        return expit(o1) - expit(o0)
    return o1 - o0


def potential_outcomes(params, X, outcome="continuous"):
    phi = M.encode(params, X)
    o0 = M.predict(params, phi, 0)
    o1 = M.predict(params, phi, 1)
    if outcome == "binary":
        return expit(o0), expit(o1)
    return o0, o1
