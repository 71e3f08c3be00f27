"""Shared representation encoder and two outcome heads with manual backprop."""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import ConfigError, ShapeError, UsageError
from .numeric import as_matrix, elu, elu_grad

CHECKPOINT_VERSION = 1

_ACTIVATIONS = {
    "elu": (elu, elu_grad),
    "linear": (lambda x: x, lambda x: np.ones_like(x)),
}


@dataclass
class ModelConfig:
    """Architecture.

    Every encoder layer is followed by the activation; the representation
    width is the last encoder width. Head layers end with a linear unit of
    width 1.
    """

    input_dim: int
    encoder_layers: tuple = (200, 200, 200)
    head_layers: tuple = (100, 100, 100, 1)
    activation: str = "elu"
    weight_init_scale: float = 1.0

    def __post_init__(self):
        self.encoder_layers = tuple(int(w) for w in self.encoder_layers)
        self.head_layers = tuple(int(w) for w in self.head_layers)
        if self.input_dim < 1:
            raise ConfigError("input_dim must be >= 1")
        if not self.encoder_layers or not self.head_layers:
            raise ConfigError("encoder and head need at least one layer")
        if min(self.encoder_layers + self.head_layers) < 1:
            raise ConfigError("layer widths must be >= 1")
        if self.head_layers[-1] != 1:
            raise ConfigError("final head width must be 1")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.weight_init_scale <= 0:
            raise ConfigError("weight_init_scale must be positive")

    @property
    def repr_dim(self):
        return self.encoder_layers[-1]

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "encoder_layers": list(self.encoder_layers),
            "head_layers": list(self.head_layers),
            "activation": self.activation,
            "weight_init_scale": self.weight_init_scale,
        }


@dataclass
class ModelParams:
    """Weight and bias blocks. ``W`` blocks are (fan_in, fan_out)."""

    config: ModelConfig
    encoder_W: list
    encoder_b: list
    head0_W: list
    head0_b: list
    head1_W: list
    head1_b: list

    def blocks(self):
        """Name -> array mapping in a fixed order. Arrays are live references."""
        out = {}
        for part in ("encoder", "head0", "head1"):
            for i, (W, b) in enumerate(zip(getattr(self, f"{part}_W"), getattr(self, f"{part}_b"))):
                out[f"{part}.W{i}"] = W
                out[f"{part}.b{i}"] = b
        return out

    def weight_blocks(self):
        return [v for k, v in self.blocks().items() if ".W" in k]

    def copy(self):
        return ModelParams(
            config=self.config,
            **{k: [a.copy() for a in getattr(self, k)] for k in
               ("encoder_W", "encoder_b", "head0_W", "head0_b", "head1_W", "head1_b")},
        )

    def zeros_like(self):
        z = self.copy()
        for a in z.blocks().values():
            a[...] = 0.0
        return z

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "blocks": {
                k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
                for k, v in self.blocks().items()
            },
        }

    @classmethod
    def from_dict(cls, d):
        cfg = ModelConfig(**d["config"])
        params = init_params(cfg, None)
        for k, arr in params.blocks().items():
            blk = d["blocks"][k]
            vals = np.asarray(blk["data"], dtype=np.float64).reshape(blk["shape"])
            if vals.shape != arr.shape:
                raise ShapeError(f"checkpoint block {k} has shape {vals.shape}, expected {arr.shape}")
            arr[...] = vals
        return params


def _layer_shapes(cfg):
    enc, dims = [], cfg.input_dim
    for w in cfg.encoder_layers:
        enc.append((dims, w))
        dims = w
    head, dims = [], cfg.repr_dim
    for w in cfg.head_layers:
        head.append((dims, w))
        dims = w
    return enc, head


def init_params(cfg, rng):
    """Uniform fan-in initialisation, bound ``scale * sqrt(6 / fan_in)``; zero biases.

    ``rng=None`` returns all-zero weights (used as a shape template).
    """
    enc_shapes, head_shapes = _layer_shapes(cfg)

    def draw(shapes):
        Ws, bs = [], []
        for fan_in, fan_out in shapes:
            if rng is None:
                Ws.append(np.zeros((fan_in, fan_out)))
            else:
                bound = cfg.weight_init_scale * np.sqrt(6.0 / fan_in)
                Ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            bs.append(np.zeros(fan_out))
        return Ws, bs

    eW, eb = draw(enc_shapes)
    h0W, h0b = draw(head_shapes)
    h1W, h1b = draw(head_shapes)
    return ModelParams(cfg, eW, eb, h0W, h0b, h1W, h1b)


def _mlp_forward(Ws, bs, X, act, last_linear):
    f, _ = _ACTIVATIONS[act]
    cache = []
    h = X
    for i, (W, b) in enumerate(zip(Ws, bs)):
        z = h @ W + b
        cache.append((h, z))
        h = z if (last_linear and i == len(Ws) - 1) else f(z)
    return h, cache


def _mlp_backward(Ws, cache, grad_out, act, last_linear):
    _, df = _ACTIVATIONS[act]
    gWs = [None] * len(Ws)
    gbs = [None] * len(Ws)
    g = grad_out
    for i in reversed(range(len(Ws))):
        h_in, z = cache[i]
        if not (last_linear and i == len(Ws) - 1):
            g = g * df(z)
        gWs[i] = h_in.T @ g
        gbs[i] = g.sum(axis=0)
        g = g @ Ws[i].T
    return g, gWs, gbs


def _check_input(params, X):
    X = as_matrix(X, "X")
    if X.shape[1] != params.config.input_dim:
        raise ShapeError(f"X has {X.shape[1]} columns, model expects {params.config.input_dim}")
    return X


def encode(params, X):
    X = _check_input(params, X)
    phi, _ = _mlp_forward(params.encoder_W, params.encoder_b, X, params.config.activation, False)
    return phi


def predict(params, phi, arm):
    """Scalar output of head ``arm`` for every row of ``phi`` (raw, no link)."""
    phi = as_matrix(phi, "phi")
    if phi.shape[1] != params.config.repr_dim:
        raise ShapeError(f"phi has {phi.shape[1]} columns, expected {params.config.repr_dim}")
    if arm not in (0, 1):
        raise ValueError("arm must be 0 or 1")
    Ws, bs = (params.head1_W, params.head1_b) if arm == 1 else (params.head0_W, params.head0_b)
    out, _ = _mlp_forward(Ws, bs, phi, params.config.activation, True)
    return out[:, 0]


@dataclass
class ForwardCache:
    phi: np.ndarray
    out0: np.ndarray
    out1: np.ndarray
    _enc: list = field(repr=False, default=None)
    _h0: list = field(repr=False, default=None)
    _h1: list = field(repr=False, default=None)


def forward(params, X):
    """Encode ``X`` and run both heads on every row, keeping activations for backprop."""
    X = _check_input(params, X)
    act = params.config.activation
    phi, enc = _mlp_forward(params.encoder_W, params.encoder_b, X, act, False)
    o0, h0 = _mlp_forward(params.head0_W, params.head0_b, phi, act, True)
    o1, h1 = _mlp_forward(params.head1_W, params.head1_b, phi, act, True)
    return ForwardCache(phi=phi, out0=o0[:, 0], out1=o1[:, 0], _enc=enc, _h0=h0, _h1=h1)


@dataclass
class LossGrads:
    """Upstream gradients: w.r.t. each head's raw output and directly w.r.t. phi."""

    d_out0: Optional[np.ndarray] = None
    d_out1: Optional[np.ndarray] = None
    d_phi: Optional[np.ndarray] = None


def backward(params, cache, loss_grads):
    """Propagate ``loss_grads`` to every parameter block.

    ``d_phi`` carries representation-level terms (the cluster pull); it is
    added to what flows back from the heads before entering the encoder.
    """
    if cache is None or cache._enc is None:
        raise UsageError("backward called without a forward cache")
    act = params.config.activation
    n = cache.phi.shape[0]
    grads = params.zeros_like()
    g_phi = np.zeros_like(cache.phi)
    for arm, d_out in ((0, loss_grads.d_out0), (1, loss_grads.d_out1)):
        if d_out is None:
            continue
        d_out = np.asarray(d_out, dtype=np.float64).reshape(n, 1)
        Ws = params.head1_W if arm else params.head0_W
        g_in, gWs, gbs = _mlp_backward(Ws, cache._h1 if arm else cache._h0, d_out, act, True)
        g_phi += g_in
        for dst, src in zip(getattr(grads, f"head{arm}_W"), gWs):
            dst[...] = src
        for dst, src in zip(getattr(grads, f"head{arm}_b"), gbs):
            dst[...] = src
    if loss_grads.d_phi is not None:
        g_phi += loss_grads.d_phi
    _, gWs, gbs = _mlp_backward(params.encoder_W, cache._enc, g_phi, act, False)
    for dst, src in zip(grads.encoder_W, gWs):
        dst[...] = src
    for dst, src in zip(grads.encoder_b, gbs):
        dst[...] = src
    return grads


def save_checkpoint(path, params, protos=None, extra=None):
    """JSON checkpoint. Floats are written with ``repr`` so reloading is bit-exact."""
    doc = {"format": "pite-checkpoint", "version": CHECKPOINT_VERSION, "params": params.to_dict()}
    if protos is not None:
        doc["prototypes"] = protos.to_dict()
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")


def load_checkpoint(path):
    """Return ``(params, protos_or_None, doc)``."""
    from .prototypes import PrototypeSet

    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != "pite-checkpoint":
        raise UsageError(f"{path} is not a checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise UsageError(f"unsupported checkpoint version {doc.get('version')}")
    params = ModelParams.from_dict(doc["params"])
    protos = PrototypeSet.from_dict(doc["prototypes"]) if "prototypes" in doc else None
    return params, protos, doc
