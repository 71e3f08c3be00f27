import numpy as np
import pytest

from pite import model as M
from pite import prototypes as P
from pite import trainer as T
from pite.baselines import ols2
from pite.dataset import CausalDataset, SplitSpec, SyntheticConfig, generate_synthetic, split
from pite.exceptions import ConfigError, SingleGroupError, TrainingError
from pite.numeric import make_rng

SMALL = dict(encoder_layers=(32, 16), head_layers=(16, 1))


def small_data(seed=0, n=200):
    ds = generate_synthetic(SyntheticConfig(p=4, n=n, gamma_disp=0.4, seed=seed))
    return split(ds, SplitSpec(0.6, 0.3, 0.1, seed=seed))


def test_weights_balanced_and_hand_values():
    np.testing.assert_array_equal(T.treatment_weights([1, 0, 1, 0]), np.ones(4))
    w = T.treatment_weights([1, 0, 0, 0])
    assert w[0] == pytest.approx(2.0) and w[1] == pytest.approx(2.0 / 3.0)
    with pytest.raises(SingleGroupError):
        T.treatment_weights([1, 1])


def test_prediction_loss_perfect_and_hand():
    cfg = M.ModelConfig(input_dim=1, encoder_layers=(1,), head_layers=(1,), activation="linear")
    p = M.init_params(cfg, make_rng(0))
    p.head0_W[0][...] = 1.0
    p.head1_W[0][...] = 2.0
    phi = np.array([[1.0], [2.0], [3.0], [4.0]])
    t = np.array([1, 0, 0, 0])
    assert T.prediction_loss(p, phi, t, [2.0, 2.0, 3.0, 4.0]) == 0.0
    # treated residual 1 with weight 2; control residual 1 at row 2 with weight 2/3
    val = T.prediction_loss(p, phi, t, [1.0, 2.0, 2.0, 4.0])
    assert val == pytest.approx((2.0 * 1.0 + (2.0 / 3.0) * 1.0) / 4)


def test_l2_reg():
    cfg = M.ModelConfig(input_dim=2, encoder_layers=(1,), head_layers=(1,))
    p = M.init_params(cfg, None)
    assert T.l2_reg(p) == 0.0
    p.encoder_W[0][...] = [[3.0], [4.0]]
    assert T.l2_reg(p) == 25.0
    p.encoder_b[0][...] = 10.0
    assert T.l2_reg(p) == 25.0


def test_total_loss_breakdown_identity(rng):
    tr, va, _ = small_data()
    cfg = T.TrainConfig(alpha=0.7, beta=1.3, gamma_div=0.2, lam=1e-3, K=3)
    p = M.init_params(M.ModelConfig(input_dim=4, **SMALL), rng)
    ps = P.init_prototypes(M.encode(p, tr.X), tr.t, 3, rng)
    bd = T.total_loss(p, ps, tr.X, tr.t, tr.y, cfg)
    expected = bd.l_pred + 0.7 * (bd.l_cluster + 1.3 * bd.l_align + 0.2 * bd.l_div) + 1e-3 * bd.l_reg
    assert abs(bd.l_total - expected) < 1e-10
    assert np.isfinite(bd.l_total)
    bare = T.total_loss(p, ps, tr.X, tr.t, tr.y, T.TrainConfig(alpha=0.0, lam=0.0))
    assert bare.l_total == bare.l_pred


def test_train_config_validation():
    with pytest.raises(ConfigError):
        T.TrainConfig(alpha=-1)
    with pytest.raises(ConfigError):
        T.TrainConfig(batch_size=1)
    with pytest.raises(ConfigError):
        T.TrainConfig(rematch_strategy="nearest")


def test_fit_history_contract_and_determinism():
    tr, va, _ = small_data(1)
    mcfg = M.ModelConfig(input_dim=4, **SMALL)
    tcfg = T.TrainConfig(max_epochs=25, patience=5, K=3, seed=3)
    a = T.fit(tr, va, mcfg, tcfg)
    b = T.fit(tr, va, mcfg, tcfg)
    assert a.history == b.history
    assert len(a.history) <= 25
    vl = [h["valid_loss"] for h in a.history]
    assert a.best_valid_loss == min(vl)
    assert all(a.best_valid_loss <= v for v in vl[a.best_epoch - 1:])
    for h in a.history:
        rec = h["l_pred"] + 1.0 * (h["l_cluster"] + 1.0 * h["l_align"] + 0.1 * h["l_div"]) + 1e-4 * h["l_reg"]
        assert abs(h["l_total"] - rec) < 1e-10


def test_fit_learns_linear_problem():
    tr, va, _ = small_data(2, n=400)
    mcfg = M.ModelConfig(input_dim=4, **SMALL)
    res = T.fit(tr, va, mcfg, T.TrainConfig(alpha=0.0, max_epochs=200, patience=200, seed=1))
    first, last = res.history[0]["l_pred"], min(h["l_pred"] for h in res.history)
    assert last <= 0.5 * first
    # OLS-2 is the correctly specified model; the network should reach its order of loss
    ref = ols2(tr, tr.X)
    w = T.treatment_weights(tr.t)
    ols_loss = np.mean(w * (np.where(tr.t == 1, ref.yhat1, ref.yhat0) - tr.y) ** 2)
    assert last < 3 * ols_loss


def test_alpha_zero_ignores_prototypes():
    tr, va, _ = small_data(3)
    mcfg = M.ModelConfig(input_dim=4, **SMALL)
    a = T.fit(tr, va, mcfg, T.TrainConfig(alpha=0.0, max_epochs=8, patience=8, proto_seed=1))
    b = T.fit(tr, va, mcfg, T.TrainConfig(alpha=0.0, max_epochs=8, patience=8, proto_seed=2))
    assert not np.array_equal(a.protos.mu, b.protos.mu)
    for x, y in zip(a.params.blocks().values(), b.params.blocks().values()):
        np.testing.assert_array_equal(x, y)


@pytest.mark.parametrize("opts", [
    dict(rematch_strategy="optimal", assign_every="epoch"),
    dict(rematch_strategy="greedy", stratify=True),
    dict(optimizer="momentum", learning_rate=1e-4),
    dict(optimizer="sgd", learning_rate=1e-4),
])
def test_fit_variants_run(opts):
    tr, va, _ = small_data(4)
    res = T.fit(tr, va, M.ModelConfig(input_dim=4, **SMALL), T.TrainConfig(max_epochs=5, K=2, **opts))
    assert 1 <= len(res.history) <= 5


def test_divergence_reported_with_epoch():
    tr, va, _ = small_data(5)
    with pytest.raises(TrainingError, match="epoch"):
        T.fit(tr, va, M.ModelConfig(input_dim=4, **SMALL),
              T.TrainConfig(optimizer="sgd", learning_rate=1e6, max_epochs=20, K=2))


def test_binary_outcome_training_runs():
    rng = make_rng(0)
    X = rng.standard_normal((120, 3))
    t = (rng.random(120) < 0.5).astype(float)
    y = (X[:, 0] + t > 0).astype(float)
    tr = CausalDataset(X[:80], t[:80], y[:80], outcome="binary")
    va = CausalDataset(X[80:], t[80:], y[80:], outcome="binary")
    res = T.fit(tr, va, M.ModelConfig(input_dim=3, **SMALL), T.TrainConfig(max_epochs=10, K=2))
    tau = T.estimate_ite(res.params, X, outcome="binary")
    assert np.all(np.abs(tau) <= 1)


def test_estimate_ite_linear_heads():
    cfg = M.ModelConfig(input_dim=2, encoder_layers=(2,), head_layers=(1,), activation="linear")
    p = M.init_params(cfg, make_rng(0))
    p.encoder_W[0][...] = np.eye(2)
    p.head1_W[0][...] = [[1.0], [2.0]]
    p.head0_W[0][...] = [[0.5], [-1.0]]
    X = np.array([[1.0, 1.0], [2.0, -1.0]])
    np.testing.assert_allclose(T.estimate_ite(p, X), X @ np.array([0.5, 3.0]))
    np.testing.assert_array_equal(T.estimate_ite(p, X), T.estimate_ite(p, X))
    for w1, w0 in zip(p.head1_W, p.head0_W):
        w1[...] = w0
    np.testing.assert_array_equal(T.estimate_ite(p, X), np.zeros(2))
