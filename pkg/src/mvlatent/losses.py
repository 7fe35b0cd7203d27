"""Training objectives and latent masking.

Cosine objectives work on per-clip flattened subspaces: a batch argument of
shape ``(B, ...)`` is reshaped to ``(B, m)``. Log-of-similarity terms use the
remapped similarity ``(1 + cos) / 2`` clamped to ``[eps, 1 - eps]``.

Every loss has a ``*_grad`` twin returning ``(value, grad_a, grad_b, ...)``
with gradients w.r.t. the inputs in their original shapes. Values and
gradients are computed in float64.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MVLatentError, make_rng

EPS = 1e-7
NORM_GUARD = 1e-12


class LossConfigError(MVLatentError, ValueError):
    pass


class EmptyBatchError(MVLatentError, ValueError):
    pass


@dataclass(frozen=True)
class MaskSpec:
    target: str = "private"
    ratio: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.target not in ("private", "shared"):
            raise LossConfigError(f"mask target must be private or shared, got {self.target!r}")
        if not 0.0 <= self.ratio <= 1.0:
            raise LossConfigError(f"mask ratio must lie in [0, 1], got {self.ratio}")


@dataclass(frozen=True)
class LossConfig:
    use_rec: bool = True
    cos_mode: str = "none"
    cos_level: str = "sample"
    mask: MaskSpec | None = None
    epsilon: float = EPS

    def __post_init__(self):
        if self.cos_mode not in ("none", "plus", "minus"):
            raise LossConfigError(f"cos_mode must be none, plus or minus, got {self.cos_mode!r}")
        if self.cos_level not in ("sample", "batch"):
            raise LossConfigError(f"cos_level must be sample or batch, got {self.cos_level!r}")
        if not self.use_rec and self.cos_mode == "none":
            raise LossConfigError("loss config enables no objective")

    @property
    def cos_name(self) -> str | None:
        if self.cos_mode == "none":
            return None
        return f"cos_{self.cos_mode}_{self.cos_level}"


# -- helpers -----------------------------------------------------------------

def _flat_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 0 or a.shape[0] == 0:
        raise EmptyBatchError("empty batch")
    return a.reshape(len(a), -1), b.reshape(len(b), -1), a.shape


def _unit(u):
    n = np.maximum(np.linalg.norm(u, axis=-1, keepdims=True), NORM_GUARD)
    return u / n, n


def _cos_matrix(u, v):
    uh, nu = _unit(u)
    vh, nv = _unit(v)
    return uh @ vh.T, (uh, nu, vh, nv)


def _cos_matrix_backward(g, c, parts):
    """Map dL/dC (B, B) to dL/du and dL/dv."""
    uh, nu, vh, nv = parts
    du = (g @ vh - (g * c).sum(axis=1, keepdims=True) * uh) / nu
    dv = (g.T @ uh - (g * c).sum(axis=0)[:, None] * vh) / nv
    return du, dv


def _remap(c, eps):
    s = 0.5 * (1.0 + c)
    inside = (s > eps) & (s < 1.0 - eps)
    return np.clip(s, eps, 1.0 - eps), inside


def _neg_log_sim(c, eps):
    """-log s~ and its derivative w.r.t. the cosine."""
    s, inside = _remap(c, eps)
    return -np.log(s), np.where(inside, -0.5 / s, 0.0)


def _neg_log_dissim(c, eps):
    """-log(1 - s~) with (1 - s~) clamped to [eps, 1], and its derivative."""
    s, inside = _remap(c, eps)
    q = 1.0 - s
    inside_q = inside & (q > eps) & (q < 1.0)
    q = np.clip(q, eps, 1.0)
    return -np.log(q), np.where(inside_q, 0.5 / q, 0.0)


# -- similarity --------------------------------------------------------------

def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.size} vs {v.size}")
    nu = max(np.linalg.norm(u), NORM_GUARD)
    nv = max(np.linalg.norm(v), NORM_GUARD)
    return float(u @ v / (nu * nv))


def remapped_sim(u, v, eps: float = EPS) -> float:
    """``(1 + cos(u, v)) / 2`` clamped to ``[eps, 1 - eps]``; a zero vector gives 0.5."""
    return float(np.clip(0.5 * (1.0 + cosine(u, v)), eps, 1.0 - eps))


# -- reconstruction ----------------------------------------------------------

def rec_loss_grad(x1, x2, xh1, xh2):
    total = 0.0
    grads = []
    for x, xh in ((x1, xh1), (x2, xh2)):
        x = np.asarray(x, dtype=np.float64)
        xh = np.asarray(xh, dtype=np.float64)
        if x.shape != xh.shape:
            raise ValueError(f"shape mismatch: {x.shape} vs {xh.shape}")
        diff = xh - x
        total += float(np.mean(diff * diff))
        grads.append(2.0 * diff / diff.size)
    return total, grads[0], grads[1]


def rec_loss(x1, x2, xh1, xh2) -> float:
    """Per-view mean squared error over all entries and samples, summed over both views."""
    return rec_loss_grad(x1, x2, xh1, xh2)[0]


def single_rec_loss_grad(x, xh):
    x = np.asarray(x, dtype=np.float64)
    xh = np.asarray(xh, dtype=np.float64)
    if x.shape != xh.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {xh.shape}")
    diff = xh - x
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


# -- sample-level cosine -----------------------------------------------------

def _sample_level(term, a, b, eps):
    u, v, shape = _flat_pair(a, b)
    uh, nu = _unit(u)
    vh, nv = _unit(v)
    c = np.sum(uh * vh, axis=1)
    vals, dc = term(c, eps)
    dc = dc / len(c)
    du = (dc[:, None] * (vh - c[:, None] * uh)) / nu
    dv = (dc[:, None] * (uh - c[:, None] * vh)) / nv
    return float(np.mean(vals)), du.reshape(shape), dv.reshape(shape)


def cos_plus_sample_grad(zs1, zs2, eps: float = EPS):
    return _sample_level(_neg_log_sim, zs1, zs2, eps)


def cos_plus_sample(zs1, zs2, eps: float = EPS) -> float:
    """Mean over the batch of ``-log s~(zs1[j], zs2[j])``."""
    return cos_plus_sample_grad(zs1, zs2, eps)[0]


def cos_minus_sample_grad(zp1, zp2, eps: float = EPS):
    return _sample_level(_neg_log_dissim, zp1, zp2, eps)


def cos_minus_sample(zp1, zp2, eps: float = EPS) -> float:
    """Mean over the batch of ``-log(1 - s~(zp1[j], zp2[j]))``."""
    return cos_minus_sample_grad(zp1, zp2, eps)[0]


# -- batch-level cosine ------------------------------------------------------

def cos_plus_batch_grad(zs1, zs2):
    u, v, shape = _flat_pair(zs1, zs2)
    c, parts = _cos_matrix(u, v)
    m = c.max(axis=1, keepdims=True)
    e = np.exp(c - m)
    z = e.sum(axis=1, keepdims=True)
    lse = (m + np.log(z))[:, 0]
    b = len(c)
    value = float(np.mean(lse - np.diag(c)))
    g = (e / z - np.eye(b)) / b
    du, dv = _cos_matrix_backward(g, c, parts)
    return value, du.reshape(shape), dv.reshape(shape)


def cos_plus_batch(zs1, zs2) -> float:
    """Softmax cross-entropy over raw cosines; row j's positive is column j."""
    return cos_plus_batch_grad(zs1, zs2)[0]


def cos_minus_batch_grad(zp1, zp2, eps: float = EPS):
    u, v, shape = _flat_pair(zp1, zp2)
    c, parts = _cos_matrix(u, v)
    vals, dc = _neg_log_dissim(c, eps)
    du, dv = _cos_matrix_backward(dc / c.size, c, parts)
    return float(np.mean(vals)), du.reshape(shape), dv.reshape(shape)


def cos_minus_batch(zp1, zp2, eps: float = EPS) -> float:
    """Mean over all B*B ordered pairs (diagonal included) of ``-log(1 - s~)``."""
    return cos_minus_batch_grad(zp1, zp2, eps)[0]


infonce_loss_grad = cos_plus_batch_grad


def infonce_loss(z1, z2) -> float:
    """InfoNCE on full joint latents; same formula as :func:`cos_plus_batch`."""
    return cos_plus_batch_grad(z1, z2)[0]


# -- masking -----------------------------------------------------------------

def draw_mask(shape, spec: MaskSpec, step: int = 0) -> np.ndarray:
    """Keep-mask (1 keep, 0 drop); each entry dropped with probability ``spec.ratio``."""
    if spec.ratio == 0.0:
        return np.ones(shape, dtype=np.float32)
    rng = make_rng(spec.seed, 30, step)
    return (rng.random(shape) >= spec.ratio).astype(np.float32)


def apply_mask(batch, spec: MaskSpec, step: int = 0) -> np.ndarray:
    """Zero entries of ``batch`` independently with probability ``spec.ratio``; no rescaling."""
    batch = np.asarray(batch)
    if spec.ratio == 0.0:
        return batch.copy()
    return batch * draw_mask(batch.shape, spec, step).astype(batch.dtype)


# -- composition -------------------------------------------------------------

_COS_GRADS = {
    "cos_plus_sample": lambda a, b, eps: cos_plus_sample_grad(a, b, eps),
    "cos_minus_sample": lambda a, b, eps: cos_minus_sample_grad(a, b, eps),
    "cos_plus_batch": lambda a, b, eps: cos_plus_batch_grad(a, b),
    "cos_minus_batch": lambda a, b, eps: cos_minus_batch_grad(a, b, eps),
}


def total_loss_grad(cfg: LossConfig, out) -> tuple[float, dict[str, float], dict[str, np.ndarray]]:
    """Combine the active terms for one forward pass.

    ``out`` needs ``x1, x2, xh1, xh2`` for reconstruction and ``zp1, zp2`` /
    ``zs1, zs2`` (post-masking) for the cosine term. Returns the total, the
    per-term values and gradients keyed by those same field names.
    """
    components: dict[str, float] = {}
    grads: dict[str, np.ndarray] = {}
    if cfg.use_rec:
        if getattr(out, "xh1", None) is None:
            raise LossConfigError("reconstruction requested but the forward pass has no decoder output")
        val, g1, g2 = rec_loss_grad(out.x1, out.x2, out.xh1, out.xh2)
        components["rec"] = val
        grads["xh1"], grads["xh2"] = g1, g2
    name = cfg.cos_name
    if name is not None:
        a, b = ("zs1", "zs2") if cfg.cos_mode == "plus" else ("zp1", "zp2")
        if getattr(out, a, None) is None:
            raise LossConfigError(f"{name} requested but the forward pass has no {a}")
        val, ga, gb = _COS_GRADS[name](getattr(out, a), getattr(out, b), cfg.epsilon)
        components[name] = val
        grads[a], grads[b] = ga, gb
    total = float(sum(components.values()))
    return total, components, grads


def total_loss(cfg: LossConfig, out) -> tuple[float, dict[str, float]]:
    total, components, _ = total_loss_grad(cfg, out)
    return total, components
