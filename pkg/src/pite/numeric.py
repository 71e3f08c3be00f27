"""Dense float64 helpers, activations, seeded RNG and a finite-difference oracle.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. The
functions here refuse to broadcast: mismatched shapes raise ``ShapeError``.
"""
import numpy as np

from .exceptions import NumericError, ShapeError

RNG_NAME = "numpy.random.PCG64"


def as_matrix(a, name="array"):
    """Return ``a`` as a C-contiguous 2-D float64 array."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def make_rng(seed):
    """Seeded generator. PCG64 streams are identical across platforms."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def matmul(a, b):
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def elu(x, alpha=1.0):
    x = np.asarray(x, dtype=np.float64)
    # expm1 on the clipped argument avoids overflow warnings for large positive x
    return np.where(x > 0, x, alpha * np.expm1(np.minimum(x, 0.0)))


def elu_grad(x, alpha=1.0):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, 1.0, alpha * np.exp(np.minimum(x, 0.0)))


def pairwise_sq_dist(a, b):
    """Squared Euclidean distances between the rows of ``a`` and ``b``.

    Computed from explicit differences rather than the expanded
    ``|a|^2 - 2ab + |b|^2`` form, so coincident rows give exactly zero.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"column mismatch: {a.shape} vs {b.shape}")
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def finite_diff_grad(f, at, h=1e-5):
    """Central-difference gradient of scalar ``f`` at ``at``.

    Parameters
    ----------
    f : callable
        Maps an array shaped like ``at`` to a float.
    at : array_like
        Evaluation point; any shape.
    h : float
        Step size.

    Returns
    -------
    ndarray
        Same shape as ``at``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.array(at, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value near entry {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a, b, floor=1e-12):
    """Norm-wise relative error ``|a-b| / max(|a|, |b|, floor)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)
