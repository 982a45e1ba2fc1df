"""Feature normalization: centroid-relative standardization of grouped
features with learnable per-channel affine parameters.

One scalar standard deviation per level per cloud, taken over every group,
member, and channel against each group's centroid feature. This is per-cloud
normalization, not batch normalization; no running statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import ContractError, Tensor, sqrt
from .pointcloud import GroupedSet


@dataclass
class FNParams:
    alpha: Tensor   # (d,), starts at 1
    beta: Tensor    # (d,), starts at 0
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ContractError(f"FN epsilon must be positive, got {self.epsilon}")

    def named(self, prefix: str) -> dict:
        return {f"{prefix}.alpha": self.alpha, f"{prefix}.beta": self.beta}


def init_fn(d: int, epsilon: float = 1e-5) -> FNParams:
    return FNParams(
        alpha=Tensor(np.ones(d), requires_grad=True),
        beta=Tensor(np.zeros(d), requires_grad=True),
        epsilon=epsilon,
    )


def group_std(groups: GroupedSet) -> Tensor:
    """sigma = sqrt(mean over all (group, member, channel) of (f_ij - f_i)^2),
    deviations against each group's centroid feature. Padded members count,
    consistent with the fixed k-member sum."""
    m, k, d = groups.neighbor_features.shape
    if m < 1 or k < 1 or d < 1:
        raise ContractError(f"group_std: empty grouped set {(m, k, d)}")
    diff = groups.neighbor_features - groups.centroid_features.reshape(m, 1, d)
    return sqrt((diff * diff).mean())


def fn_apply(groups: GroupedSet, params: FNParams) -> GroupedSet:
    """neighbor_features become alpha * (f_ij - f_i) / (sigma + eps) + beta.
    Centroid features and all geometry are untouched."""
    m, _, d = groups.neighbor_features.shape
    sigma = group_std(groups)
    diff = groups.neighbor_features - groups.centroid_features.reshape(m, 1, d)
    normed = params.alpha * (diff / (sigma + params.epsilon)) + params.beta
    return replace(groups, neighbor_features=normed)
