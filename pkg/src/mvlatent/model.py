"""Multi-view autoencoder over precomputed latents.

One encoder maps each frame ``x_t`` (length d) to a d-vector whose first half
is the private subspace and second half the shared subspace. For a pair the
two shared halves are averaged; the decoder sees ``[z_p_i, z_S]`` per view.
The same class also backs the baselines: an encoder-only model (contrastive),
and an encoder plus linear classification head (supervised).
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import (DTYPE, DimensionError, EmbeddingMatrix, LatentBundle, MVLatentError,
                   ViewPair, make_rng, split_subspaces)
from .losses import MaskSpec, draw_mask
from .nn import init_mlp, mlp_backward, mlp_forward

CKPT_MAGIC = b"MVCK"
CKPT_VERSION = 1


class CheckpointError(MVLatentError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    d_in: int
    hidden_sizes: tuple[int, ...] | None = None
    activation: str = "gelu"
    seed: int = 0
    init: str = "uniform"

    def sizes(self) -> list[int]:
        hidden = (self.d_in,) if self.hidden_sizes is None else tuple(self.hidden_sizes)
        return [self.d_in, *hidden, self.d_in]


DecoderConfig = EncoderConfig


@dataclass
class MultiViewModel:
    encoder: EncoderConfig
    decoder: DecoderConfig | None
    head_classes: int = 0
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def build(cls, encoder: EncoderConfig, decoder: DecoderConfig | None = None,
              head_classes: int = 0) -> "MultiViewModel":
        if encoder.d_in % 2:
            raise DimensionError(f"d_in must be even, got {encoder.d_in}")
        params = init_mlp(encoder.sizes(), make_rng(encoder.seed, 20), "encoder", encoder.init)
        if decoder is not None:
            if decoder.d_in != encoder.d_in:
                raise DimensionError("decoder width must equal encoder width")
            params.update(init_mlp(decoder.sizes(), make_rng(decoder.seed, 21), "decoder",
                                   decoder.init))
        if head_classes:
            params.update(init_mlp([encoder.d_in, head_classes], make_rng(encoder.seed, 22),
                                   "head"))
        return cls(encoder, decoder, head_classes, params)

    @property
    def d(self) -> int:
        return self.encoder.d_in

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "MultiViewModel":
        return MultiViewModel(self.encoder, self.decoder, self.head_classes,
                              {k: v.copy() for k, v in self.params.items()})

    def describe(self) -> dict:
        return {"encoder": _cfg_dict(self.encoder),
                "decoder": None if self.decoder is None else _cfg_dict(self.decoder),
                "head_classes": self.head_classes}


def _cfg_dict(cfg: EncoderConfig) -> dict:
    out = asdict(cfg)
    if out["hidden_sizes"] is not None:
        out["hidden_sizes"] = list(out["hidden_sizes"])
    return out


def _check_width(model: MultiViewModel, x: np.ndarray) -> None:
    if x.shape[-1] != model.d:
        raise DimensionError(f"input feature dim {x.shape[-1]} != model d_in {model.d}")


def _encode_rows(model, x: np.ndarray):
    """Encoder over any leading shape; returns (h, cache)."""
    lead = x.shape[:-1]
    h, cache = mlp_forward(model.params, "encoder", x.reshape(-1, model.d).astype(DTYPE),
                           model.encoder.activation)
    return h.reshape(*lead, model.d), cache


def _decode_rows(model, z: np.ndarray):
    if model.decoder is None:
        raise MVLatentError("model has no decoder")
    lead = z.shape[:-1]
    y, cache = mlp_forward(model.params, "decoder", z.reshape(-1, model.d).astype(DTYPE),
                           model.decoder.activation)
    return y.reshape(*lead, model.d), cache


# -- public single-clip API ---------------------------------------------------

def encode(model: MultiViewModel, x: EmbeddingMatrix) -> LatentBundle:
    _check_width(model, x.values)
    h, _ = _encode_rows(model, x.values)
    zp, zs = split_subspaces(h)
    return LatentBundle(zp, zs, x.clip_id)


def average_shared(zs1: np.ndarray, zs2: np.ndarray) -> np.ndarray:
    if np.shape(zs1) != np.shape(zs2):
        raise DimensionError(f"shape mismatch: {np.shape(zs1)} vs {np.shape(zs2)}")
    return (zs1 + zs2) / 2


def decode(model: MultiViewModel, z_p: np.ndarray, z_shared: np.ndarray) -> EmbeddingMatrix:
    if z_p.shape != z_shared.shape or 2 * z_p.shape[-1] != model.d:
        raise DimensionError(f"decoder inputs {z_p.shape}, {z_shared.shape} do not fit d={model.d}")
    y, _ = _decode_rows(model, np.concatenate([z_p, z_shared], axis=-1))
    return EmbeddingMatrix(y, "")


def infer_single(model: MultiViewModel, x: EmbeddingMatrix):
    """Encode one clip without a partner. Returns ``(z_p, z_s, joint)``."""
    b = encode(model, x)
    return b.z_p, b.z_s, np.concatenate([b.z_p, b.z_s], axis=-1)


def forward_pair(model: MultiViewModel, pair: ViewPair, mask: MaskSpec | None = None,
                 step: int = 0):
    """Full two-view pass. Returns ``(xh1, xh2, (bundle1, bundle2), z_S)``."""
    if pair.view1.d != pair.view2.d:
        raise DimensionError("views differ in feature dim")
    fwd = forward_batch(model, pair.view1.values[None], pair.view2.values[None], mask, step)
    bundles = (LatentBundle(fwd.zp1[0], fwd.zs1[0], pair.view1.clip_id),
               LatentBundle(fwd.zp2[0], fwd.zs2[0], pair.view2.clip_id))
    return fwd.xh1[0], fwd.xh2[0], bundles, fwd.zS[0]


# -- batched passes with backward --------------------------------------------

@dataclass
class PairForward:
    x1: np.ndarray
    x2: np.ndarray
    zp1: np.ndarray
    zp2: np.ndarray
    zs1: np.ndarray
    zs2: np.ndarray
    zS: np.ndarray | None = None
    xh1: np.ndarray | None = None
    xh2: np.ndarray | None = None
    keep: np.ndarray | None = None
    mask_target: str | None = None
    enc_cache: list | None = None
    dec_cache: list | None = None


def forward_batch(model: MultiViewModel, x1: np.ndarray, x2: np.ndarray,
                  mask: MaskSpec | None = None, step: int = 0, decode_views: bool = True) -> PairForward:
    """Two-view pass over ``(B, n, d)`` batches, keeping caches for backward.

    The mask (training only) is drawn over both views of the targeted
    subspace and applied before averaging and before any loss sees it.
    """
    _check_width(model, x1)
    if x1.shape != x2.shape:
        raise DimensionError(f"view batches differ: {x1.shape} vs {x2.shape}")
    h, enc_cache = _encode_rows(model, np.stack([x1, x2]))
    zp, zs = split_subspaces(h)
    keep = None
    if mask is not None and mask.ratio > 0:
        keep = draw_mask(zp.shape, mask, step)
        if mask.target == "private":
            zp = zp * keep
        else:
            zs = zs * keep
    fwd = PairForward(x1, x2, zp[0], zp[1], zs[0], zs[1], keep=keep,
                      mask_target=None if keep is None else mask.target, enc_cache=enc_cache)
    if decode_views and model.decoder is not None:
        zS = average_shared(zs[0], zs[1])
        dec_in = np.concatenate([zp, np.broadcast_to(zS, zp.shape)], axis=-1)
        y, fwd.dec_cache = _decode_rows(model, dec_in)
        fwd.zS, fwd.xh1, fwd.xh2 = zS, y[0], y[1]
    return fwd


def backward_batch(model: MultiViewModel, fwd: PairForward, grads: dict) -> dict[str, np.ndarray]:
    """Parameter gradients given loss gradients keyed by PairForward field names."""
    half = model.d // 2
    shape = fwd.zp1.shape
    dzp = np.zeros((2, *shape), dtype=np.float64)
    dzs = np.zeros((2, *shape), dtype=np.float64)
    out: dict[str, np.ndarray] = {}
    if "xh1" in grads or "xh2" in grads:
        dy = np.stack([grads.get("xh1", np.zeros(fwd.xh1.shape)),
                       grads.get("xh2", np.zeros(fwd.xh2.shape))]).astype(DTYPE)
        d_in, dec_grads = mlp_backward(model.params, "decoder", fwd.dec_cache,
                                       dy.reshape(-1, model.d))
        out.update(dec_grads)
        d_in = d_in.reshape(2, *shape[:-1], model.d)
        dzp += d_in[..., :half]
        dzS = d_in[..., half:].sum(axis=0)
        dzs += 0.5 * dzS
    for i, key in ((0, "zp1"), (1, "zp2")):
        if key in grads:
            dzp[i] += grads[key]
    for i, key in ((0, "zs1"), (1, "zs2")):
        if key in grads:
            dzs[i] += grads[key]
    if fwd.keep is not None:
        if fwd.mask_target == "private":
            dzp *= fwd.keep
        else:
            dzs *= fwd.keep
    dh = np.concatenate([dzp, dzs], axis=-1).astype(DTYPE)
    _, enc_grads = mlp_backward(model.params, "encoder", fwd.enc_cache, dh.reshape(-1, model.d))
    out.update(enc_grads)
    return out


def autoencode_batch(model: MultiViewModel, x: np.ndarray):
    """Single-view pass ``x -> decoder(encoder(x))``. Returns (xh, caches)."""
    _check_width(model, x)
    h, enc_cache = _encode_rows(model, x)
    xh, dec_cache = _decode_rows(model, h)
    return xh, (enc_cache, dec_cache)


def autoencode_backward(model, caches, dxh: np.ndarray) -> dict[str, np.ndarray]:
    enc_cache, dec_cache = caches
    dh, grads = mlp_backward(model.params, "decoder", dec_cache,
                             dxh.reshape(-1, model.d).astype(DTYPE))
    _, enc_grads = mlp_backward(model.params, "encoder", enc_cache, dh)
    grads.update(enc_grads)
    return grads


def classify_batch(model: MultiViewModel, x: np.ndarray):
    """Encoder, frame-mean pooling, linear head. Returns (logits, caches)."""
    if not model.head_classes:
        raise MVLatentError("model has no classification head")
    h, enc_cache = _encode_rows(model, x)
    pooled = h.mean(axis=1)
    logits, head_cache = mlp_forward(model.params, "head", pooled, "identity")
    return logits, (enc_cache, head_cache, h.shape)


def classify_backward(model, caches, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    enc_cache, head_cache, hshape = caches
    dpooled, grads = mlp_backward(model.params, "head", head_cache, dlogits.astype(DTYPE))
    dh = np.broadcast_to(dpooled[:, None, :] / hshape[1], hshape)
    _, enc_grads = mlp_backward(model.params, "encoder", enc_cache,
                                np.ascontiguousarray(dh).reshape(-1, model.d))
    grads.update(enc_grads)
    return grads


# -- checkpoints ---------------------------------------------------------------

_CK_HEADER = struct.Struct("<4sII")


def save_checkpoint(path, model: MultiViewModel, config_digest: str, meta: dict | None = None) -> None:
    """Binary checkpoint: ``b"MVCK"``, u32 version, u32 header length, JSON
    header, then each tensor as little-endian float32 in header order."""
    names = sorted(model.params)
    header = {"config_digest": config_digest, "model": model.describe(),
              "meta": meta or {},
              "tensors": [[n, list(model.params[n].shape)] for n in names]}
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CK_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(model.params[n], "<f4").tobytes())


def _cfg_from(d: dict | None):
    if d is None:
        return None
    d = dict(d)
    if d.get("hidden_sizes") is not None:
        d["hidden_sizes"] = tuple(d["hidden_sizes"])
    return EncoderConfig(**d)


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read(_CK_HEADER.size)
        if len(raw) < _CK_HEADER.size:
            raise CheckpointError(f"{path}: truncated")
        magic, version, hlen = _CK_HEADER.unpack(raw)
        if magic != CKPT_MAGIC or version != CKPT_VERSION:
            raise CheckpointError(f"{path}: not a version-{CKPT_VERSION} checkpoint")
        return json.loads(fh.read(hlen))


def load_checkpoint(path) -> tuple[MultiViewModel, dict]:
    blob = Path(path).read_bytes()
    magic, version, hlen = _CK_HEADER.unpack_from(blob)
    if magic != CKPT_MAGIC or version != CKPT_VERSION:
        raise CheckpointError(f"{path}: not a version-{CKPT_VERSION} checkpoint")
    header = json.loads(blob[_CK_HEADER.size:_CK_HEADER.size + hlen])
    offset = _CK_HEADER.size + hlen
    params = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape))
        params[name] = np.frombuffer(blob, "<f4", count, offset).reshape(shape).astype(DTYPE)
        offset += 4 * count
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    m = header["model"]
    model = MultiViewModel(_cfg_from(m["encoder"]), _cfg_from(m["decoder"]),
                           m["head_classes"], params)
    return model, header
