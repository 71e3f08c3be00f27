"""Finite-difference verification of the total-loss gradients.

Assignments are computed once and frozen, so the loss is smooth in every
parameter within the difference stencil.
"""
import numpy as np

from . import model as M
from . import prototypes as P
from . import trainer as T
from .numeric import finite_diff_grad, make_rng, relative_error


def random_instance(seed, n=16, d=4, d_h=5, K=2, hidden=(6,), head_hidden=(4,), outcome="continuous"):
    """Small random problem: ``(params, protos, X, t, y)``."""
    rng = make_rng(seed)
    cfg = M.ModelConfig(
        input_dim=d,
        encoder_layers=tuple(hidden) + (d_h,),
        head_layers=tuple(head_hidden) + (1,),
    )
    params = M.init_params(cfg, rng)
    for b in params.blocks().values():
        if b.ndim == 1:
            b[...] = 0.1 * rng.standard_normal(b.shape)
    X = rng.standard_normal((n, d))
    t = np.zeros(n)
    t[rng.permutation(n)[: max(K, n // 2)]] = 1
    if outcome == "binary":
        y = (rng.random(n) < 0.5).astype(float)
    else:
        y = rng.standard_normal(n)
    phi = M.encode(params, X)
    protos = P.init_prototypes(phi, t, K, rng, lloyd_iters=2)
    protos.mu += 0.05 * rng.standard_normal(protos.mu.shape)
    return params, protos, X, t, y


def total_loss_gradcheck(params, protos, X, t, y, cfg, outcome="continuous", h=1e-5):
    """Relative error per parameter block (plus ``'mu'``) between backprop and central differences."""
    table = P.assign(M.encode(params, X), t, protos)
    _, pg, g_mu, _ = T.total_loss_and_grads(params, protos, X, t, y, cfg, table, outcome)

    def loss_with(block_name, value):
        trial = params.copy()
        trial.blocks()[block_name][...] = value
        return T.total_loss(trial, protos, X, t, y, cfg, table, outcome).l_total

    errors = {}
    analytic = pg.blocks()
    for name, block in params.blocks().items():
        fd = finite_diff_grad(lambda v: loss_with(name, v), block, h)
        errors[name] = relative_error(analytic[name], fd)
    fd_mu = finite_diff_grad(
        lambda m: T.total_loss(params, P.PrototypeSet(m), X, t, y, cfg, table, outcome).l_total,
        protos.mu,
        h,
    )
    errors["mu"] = relative_error(g_mu, fd_mu)
    return errors
