"""Scene-context decoder: upsample-and-attend blocks back to full resolution,
max-pooled multi-level scene context, and the per-point saliency head.

Each UT step interpolates coarser features onto the finer level's coords,
concatenates with that level's features, fuses linearly to the finer width,
and runs a transformer over all points at that resolution. The MCA context
compresses every encoder level to a shared width, max-pools each over its
points, and concatenates the five vectors. The head broadcasts the context
onto every point and applies a two-layer MLP to one logit per point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import TransParams, glorot, init_trans, trans_block
from .autodiff import (
    ContractError,
    ShapeError,
    Tensor,
    as_tensor,
    column_max,
    concat,
    gather_rows,
    interp_apply,
    relu,
    sigmoid,
)
from .encoder import EncoderLevelOutput
from .pointcloud import PointCloud, interp_weights


@dataclass
class UTParams:
    fuse_w: Tensor                 # (d_up + d_skip, d_skip)
    fuse_b: Tensor                 # (d_skip,)
    trans: TransParams | None = None   # None disables the transformer (ablation)

    def named(self, prefix: str) -> dict:
        out = {f"{prefix}.fuse.w": self.fuse_w, f"{prefix}.fuse.b": self.fuse_b}
        if self.trans is not None:
            out.update(self.trans.named(f"{prefix}.trans"))
        return out


@dataclass
class DecoderParams:
    stem_w: Tensor        # (9, d_dec), lifts the raw input channels
    stem_b: Tensor        # (d_dec,)
    uts: list             # 5 UTParams, coarsest-to-finest order

    def named(self) -> dict:
        out = {"stem.w": self.stem_w, "stem.b": self.stem_b}
        for i, ut in enumerate(self.uts, start=1):
            out.update(ut.named(f"ut{i}"))
        return out


@dataclass
class MCAParams:
    w: list   # per level, (d_level, compress_dim)
    b: list   # per level, (compress_dim,)

    def named(self) -> dict:
        out = {}
        for i, (w, b) in enumerate(zip(self.w, self.b), start=1):
            out[f"mca{i}.w"] = w
            out[f"mca{i}.b"] = b
        return out


@dataclass
class HeadParams:
    w1: Tensor   # (d_point [+ context width], d_hidden)
    b1: Tensor
    w2: Tensor   # (d_hidden, 1)
    b2: Tensor

    def named(self) -> dict:
        return {"head.w1": self.w1, "head.b1": self.b1,
                "head.w2": self.w2, "head.b2": self.b2}


@dataclass
class SceneContext:
    vector: Tensor   # (5 * compress_dim,)

    @property
    def width(self) -> int:
        return self.vector.shape[0]


@dataclass
class SaliencyPrediction:
    logits: Tensor             # (N,), kept differentiable for the loss
    probabilities: np.ndarray  # (N,) sigmoid of logits
    mask: np.ndarray           # (N,) probabilities > threshold, strict
    threshold: float


def init_ut(rng: np.random.Generator, d_up: int, d_skip: int,
            use_trans: bool = True) -> UTParams:
    return UTParams(
        fuse_w=glorot(rng, d_up + d_skip, d_skip),
        fuse_b=Tensor(np.zeros(d_skip), requires_grad=True),
        trans=init_trans(rng, d_skip) if use_trans else None,
    )


def init_mca(rng: np.random.Generator, level_widths, compress_dim: int) -> MCAParams:
    return MCAParams(
        w=[glorot(rng, d, compress_dim) for d in level_widths],
        b=[Tensor(np.zeros(compress_dim), requires_grad=True) for _ in level_widths],
    )


def init_head(rng: np.random.Generator, d_in: int, d_hidden: int) -> HeadParams:
    return HeadParams(
        w1=glorot(rng, d_in, d_hidden),
        b1=Tensor(np.zeros(d_hidden), requires_grad=True),
        w2=glorot(rng, d_hidden, 1),
        b2=Tensor(np.zeros(1), requires_grad=True),
    )


def _chunked_trans(f: Tensor, params: TransParams, cap: int) -> Tensor:
    """Attention over index-contiguous chunks of at most cap points. An opt-in
    cost control for full-resolution sets; cap <= 0 means whole-set attention."""
    s = f.shape[0]
    if cap <= 0 or s <= cap:
        return trans_block(f, params)
    pieces = []
    for lo in range(0, s, cap):
        hi = min(lo + cap, s)
        pieces.append(trans_block(gather_rows(f, np.arange(lo, hi)), params))
    return concat(pieces, axis=0)


def ut_block(upper: EncoderLevelOutput, skip: EncoderLevelOutput, params: UTParams,
             interp: tuple | None = None, attn_cap: int = 0) -> EncoderLevelOutput:
    """Trans(C(U(upper), skip)) at the skip resolution.

    interp optionally supplies precomputed (indices, weights) for the
    upsampling step so callers can cache coordinate-only work.
    """
    if interp is None:
        interp = interp_weights(upper.coords, skip.coords)
    idx, w = interp
    up = interp_apply(upper.features, idx, w)
    cat = concat([up, skip.features], axis=-1)
    if cat.shape[-1] != params.fuse_w.shape[0]:
        raise ShapeError(
            f"ut_block: concatenated width {cat.shape[-1]} does not match "
            f"fuse weights {params.fuse_w.shape}")
    fused = cat @ params.fuse_w + params.fuse_b
    if params.trans is not None:
        fused = _chunked_trans(fused, params.trans, attn_cap)
    return EncoderLevelOutput(coords=skip.coords, features=fused)


def decode(levels, cloud: PointCloud, params: DecoderParams,
           interp_chain=None, attn_cap: int = 0) -> Tensor:
    """Chain ut_block from the coarsest level down through level 1, then one
    more step onto the original points with the lifted 9-channel input as the
    final skip. Returns (N, d_dec) per-point features."""
    if len(levels) != len(params.uts):
        raise ContractError(
            f"decode: {len(levels)} levels but {len(params.uts)} UT blocks")
    stem = Tensor(cloud.features9()) @ params.stem_w + params.stem_b
    skips = list(levels[:-1])[::-1] + [EncoderLevelOutput(cloud.coords, stem)]
    current = levels[-1]
    for i, (skip, ut) in enumerate(zip(skips, params.uts)):
        interp = interp_chain[i] if interp_chain is not None else None
        current = ut_block(current, skip, ut, interp=interp, attn_cap=attn_cap)
    return current.features


def mca(levels, params: MCAParams) -> SceneContext:
    """Per level: one linear + ReLU to the shared compress width, channelwise
    max over that level's points; concatenate the five vectors in level order."""
    if len(levels) != len(params.w):
        raise ContractError(f"mca: {len(levels)} levels but {len(params.w)} MLPs")
    pieces = []
    for level, w, b in zip(levels, params.w, params.b):
        h = relu(level.features @ w + b)
        pieces.append(column_max(h))
    return SceneContext(vector=concat(pieces, axis=0))


def predict_head(point_features, context: SceneContext | None, params: HeadParams,
                 threshold: float = 0.5) -> SaliencyPrediction:
    """Broadcast-concat the scene context onto every point row, then a
    two-layer MLP to one logit per point. context=None drops the context
    columns (the no-context ablation); parameter widths must agree."""
    f = as_tensor(point_features)
    n = f.shape[0]
    if context is not None:
        ctx_rows = gather_rows(context.vector.reshape(1, context.width),
                               np.zeros(n, dtype=np.int64))
        f = concat([f, ctx_rows], axis=-1)
    if f.shape[-1] != params.w1.shape[0]:
        raise ShapeError(
            f"predict_head: input width {f.shape[-1]} does not match head "
            f"weights {params.w1.shape}")
    h = relu(f @ params.w1 + params.b1)
    logits = (h @ params.w2 + params.b2).reshape(n)
    probs = sigmoid(logits).data
    return SaliencyPrediction(
        logits=logits,
        probabilities=probs,
        mask=probs > threshold,
        threshold=threshold,
    )
