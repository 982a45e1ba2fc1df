"""Full encoder-decoder model: parameter construction, geometry caching, and
the forward pass from a point cloud to per-point saliency."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import glorot
from .autodiff import ContractError, Tensor
from .config import ModelConfig
from .decoder import (
    DecoderParams,
    HeadParams,
    MCAParams,
    SaliencyPrediction,
    decode,
    init_head,
    init_mca,
    init_ut,
    mca,
    predict_head,
)
from .encoder import (
    LevelGeometry,
    PCTLevelConfig,
    build_level_geometry,
    encode_features,
    init_level,
)
from .pointcloud import PointCloud, interp_weights


@dataclass
class ModelGeometry:
    """Every coordinate-only byproduct of one cloud: FPS/grouping per level
    and the interpolation targets of each UT step. Depends on coords alone,
    so it is reused across parameter updates and finite-difference evals."""

    levels: list            # N_LEVELS LevelGeometry
    level_coords: list      # coords after each level's sampling
    interp: list            # N_LEVELS (indices, weights) pairs, coarsest first


class PSFormer:
    """Parameter container plus forward pass. Parameters exist only for
    enabled stages, so ablated variants have genuinely smaller models."""

    def __init__(self, config: ModelConfig, seed: int | None = None):
        config.validate()
        self.config = config
        m = config.model
        self.level_cfgs = [
            PCTLevelConfig(lv.m, lv.radius, lv.k, lv.d_out,
                           use_fn=m.use_fn, use_psi_pre=m.use_psi_pre,
                           use_psi_post=m.use_psi_post)
            for lv in config.levels
        ]
        rng = np.random.default_rng(m.seed if seed is None else seed)

        widths = config.level_widths
        d_in = 9
        self.level_params = []
        for cfg in self.level_cfgs:
            self.level_params.append(init_level(rng, d_in, cfg, fn_eps=m.fn_eps))
            d_in = cfg.d_out

        d_dec = widths[0]
        stem_w = glorot(rng, 9, d_dec)
        stem_b = Tensor(np.zeros(d_dec), requires_grad=True)
        uppers = widths[::-1]                    # 5, 4, 3, 2, 1
        skips = widths[-2::-1] + [d_dec]         # 4, 3, 2, 1, stem
        uts = [init_ut(rng, du, ds, use_trans=m.use_ut)
               for du, ds in zip(uppers, skips)]
        self.dec_params = DecoderParams(stem_w=stem_w, stem_b=stem_b, uts=uts)

        self.mca_params = init_mca(rng, widths, m.compress_dim) if m.use_mca else None
        head_in = d_dec + (config.context_width if m.use_mca else 0)
        self.head_params = init_head(rng, head_in, d_dec)

    # parameters ---------------------------------------------------------

    def parameters(self) -> dict:
        """Stable name -> Tensor mapping over every trainable parameter."""
        out = {}
        for i, p in enumerate(self.level_params, start=1):
            out.update(p.named(f"enc{i}"))
        out.update(self.dec_params.named())
        if self.mca_params is not None:
            out.update(self.mca_params.named())
        out.update(self.head_params.named())
        return out

    def load_parameters(self, arrays: dict) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(arrays))
        extra = sorted(set(arrays) - set(params))
        if missing or extra:
            raise ContractError(
                f"parameter set mismatch: missing {missing}, unexpected {extra}")
        for name, p in params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ContractError(
                    f"parameter {name}: shape {arr.shape} != expected {p.data.shape}")
            p.data = arr.copy()

    # geometry -----------------------------------------------------------

    def build_geometry(self, cloud: PointCloud) -> ModelGeometry:
        scale = cloud.extent if cloud.extent > 0 else 1.0
        geoms, coords_chain = [], []
        coords = cloud.coords
        for cfg in self.level_cfgs:
            g = build_level_geometry(coords, cfg, radius_scale=scale)
            geoms.append(g)
            coords = coords[g.centroid_idx]
            coords_chain.append(coords)
        dsts = coords_chain[-2::-1] + [cloud.coords]
        srcs = coords_chain[::-1]
        interp = [interp_weights(s, d) for s, d in zip(srcs, dsts)]
        return ModelGeometry(levels=geoms, level_coords=coords_chain, interp=interp)

    # forward ------------------------------------------------------------

    def forward(self, cloud: PointCloud, geometry: ModelGeometry | None = None,
                threshold: float | None = None) -> SaliencyPrediction:
        if cloud.n < self.config.levels[0].m:
            raise ContractError(
                f"cloud has {cloud.n} points, level 1 needs {self.config.levels[0].m}")
        if geometry is None:
            geometry = self.build_geometry(cloud)
        scale = cloud.extent if cloud.extent > 0 else 1.0
        levels = encode_features(cloud.coords, Tensor(cloud.features9()),
                                 self.level_cfgs, self.level_params,
                                 geometry=geometry.levels, radius_scale=scale)
        feats = decode(levels, cloud, self.dec_params,
                       interp_chain=geometry.interp,
                       attn_cap=self.config.model.attn_cap)
        ctx = mca(levels, self.mca_params) if self.mca_params is not None else None
        thr = self.config.model.threshold if threshold is None else threshold
        return predict_head(feats, ctx, self.head_params, threshold=thr)

    def logits(self, cloud: PointCloud,
               geometry: ModelGeometry | None = None) -> Tensor:
        return self.forward(cloud, geometry=geometry).logits
