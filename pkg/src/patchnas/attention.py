"""Input-specific architecture parameters via patchwise dot-product attention.

For one node with ``k+1`` inputs and ``M`` candidate operations there are
``E = (k+1) * M`` candidate edges.  Each candidate activation map is pooled
per spatial patch and projected to a key; the concatenated node inputs are
pooled and projected to a query.  Scores over unordered candidate-edge
pairs (distinct inputs) are softmaxed per patch, patch distributions are
averaged into an image-level pair distribution, and marginalizing over
pairs yields per-edge weights that sum to 2 per sample.

The attention tokens are the candidate edges, never the spatial positions,
so the work per node scales with the number of patches only.
"""

from __future__ import annotations

import math
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .space import PAIRWISE, PER_EDGE, PairIndex, pair_edge_arrays

__all__ = [
    "patch_pool",
    "pool_to_grid",
    "ProjectionMLP",
    "compute_keys",
    "compute_query",
    "pair_scores",
    "pair_softmax",
    "average_patches",
    "marginalize",
    "per_edge_scores",
    "NodeAttention",
]


def patch_pool(feature: Tensor, patch_size: int, partial_edges: bool = True) -> Tensor:
    """Mean-pool ``[B, C, H, W]`` into a ``[B, P_h, P_w, C]`` patch grid.

    Patches are non-overlapping ``patch_size`` x ``patch_size`` blocks.
    When the extent does not divide evenly, trailing blocks at the right and
    bottom edge are smaller and averaged over their true element count;
    pass ``partial_edges=False`` to make non-divisible shapes an error.
    """
    if patch_size < 1:
        raise ValueError(f"patch_size must be >= 1, got {patch_size}")
    b, c, h, w = feature.shape
    if h % patch_size == 0 and w % patch_size == 0:
        pooled = F.avg_pool2d(feature, patch_size)
        return pooled.permute(0, 2, 3, 1).contiguous()
    if not partial_edges:
        raise ValueError(
            f"spatial extent ({h}x{w}) not divisible by patch_size {patch_size}"
        )
    ph = -(-h // patch_size)
    pw = -(-w // patch_size)
    out = feature.new_empty((b, ph, pw, c))
    for u in range(ph):
        for v in range(pw):
            block = feature[:, :, u * patch_size:(u + 1) * patch_size,
                            v * patch_size:(v + 1) * patch_size]
            out[:, u, v, :] = block.mean(dim=(2, 3))
    return out


def pool_to_grid(feature: Tensor, grid_h: int, grid_w: int) -> Tensor:
    """Mean-pool ``[B, C, H, W]`` onto a fixed ``grid_h`` x ``grid_w`` grid.

    Used for the query path in reduction cells, where node inputs live at
    twice the candidate-map resolution: every input is pooled to the same
    patch grid as the keys.  Block boundaries are ``floor(i * H / P)``,
    which reduces to exact ``patch_pool`` blocks for divisible extents.
    """
    b, c, h, w = feature.shape
    if h % grid_h == 0 and w % grid_w == 0:
        pooled = F.avg_pool2d(feature, (h // grid_h, w // grid_w))
        return pooled.permute(0, 2, 3, 1).contiguous()
    out = feature.new_empty((b, grid_h, grid_w, c))
    rows = [h * i // grid_h for i in range(grid_h + 1)]
    cols = [w * i // grid_w for i in range(grid_w + 1)]
    for u in range(grid_h):
        for v in range(grid_w):
            block = feature[:, :, rows[u]:rows[u + 1], cols[v]:cols[v + 1]]
            out[:, u, v, :] = block.mean(dim=(2, 3))
    return out


class ProjectionMLP(nn.Module):
    """Two bias-free linear maps around a leaky rectifier.

    ``score_gain`` scales the second layer's init so that initial attention
    scores are near zero and the initial architecture distribution is near
    uniform (the dynamic analogue of zero-initialized static parameters).
    """

    def __init__(
        self,
        in_features: int,
        out_features: int,
        hidden_features: int | None = None,
        negative_slope: float = 0.01,
        score_gain: float = 0.01,
    ) -> None:
        super().__init__()
        hidden = out_features if hidden_features is None else hidden_features
        self.negative_slope = negative_slope
        self.fc1 = nn.Linear(in_features, hidden, bias=False)
        self.fc2 = nn.Linear(hidden, out_features, bias=False)
        nn.init.kaiming_uniform_(self.fc1.weight, a=negative_slope, nonlinearity="leaky_relu")
        nn.init.kaiming_uniform_(self.fc2.weight, a=negative_slope, nonlinearity="leaky_relu")
        with torch.no_grad():
            self.fc2.weight.mul_(score_gain)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(F.leaky_relu(self.fc1(x), negative_slope=self.negative_slope))


def compute_keys(pooled: Tensor, mlp: ProjectionMLP) -> Tensor:
    """Project pooled candidate features ``[..., E, C]`` to keys ``[..., E, C]``."""
    if pooled.shape[-1] != mlp.fc1.in_features:
        raise ValueError(
            f"pooled channel dim {pooled.shape[-1]} != key MLP input {mlp.fc1.in_features}"
        )
    return mlp(pooled)


def compute_query(
    node_inputs: Sequence[Tensor],
    patch_size: int,
    mlp: ProjectionMLP,
    partial_edges: bool = True,
) -> Tensor:
    """Concatenate node inputs on channels, patch-pool, project to a query.

    All inputs must share ``[B, C, H, W]``; the MLP input width must equal
    ``C * len(node_inputs)``.
    """
    shapes = {tuple(x.shape) for x in node_inputs}
    if len(shapes) != 1:
        raise ValueError(f"node inputs must share shapes, got {sorted(shapes)}")
    stacked = torch.cat(list(node_inputs), dim=1)
    if stacked.shape[1] != mlp.fc1.in_features:
        raise ValueError(
            f"concatenated channels {stacked.shape[1]} != query MLP input {mlp.fc1.in_features}"
        )
    pooled = patch_pool(stacked, patch_size, partial_edges=partial_edges)
    return mlp(pooled)


def pair_scores(keys: Tensor, query: Tensor, pairs: Sequence[PairIndex]) -> Tensor:
    """Attention score per candidate-edge pair: ``(k1 + k2) . q / sqrt(C)``.

    ``keys`` is ``[B, P_h, P_w, E, C]``, ``query`` ``[B, P_h, P_w, C]``;
    output is ``[B, P_h, P_w, N_pairs]`` in enumeration order.  Computed as
    the sum of per-edge dot products, which is algebraically identical to
    forming the key sums explicitly but linear in E rather than in pairs.
    """
    c = keys.shape[-1]
    e = keys.shape[-2]
    dots = torch.einsum("...ec,...c->...e", keys, query) / math.sqrt(c)
    e1 = torch.tensor([p.e1 for p in pairs], dtype=torch.long, device=keys.device)
    e2 = torch.tensor([p.e2 for p in pairs], dtype=torch.long, device=keys.device)
    if len(pairs) and int(max(e1.max(), e2.max())) >= e:
        raise ValueError("pair index out of range for the key tensor")
    return dots[..., e1] + dots[..., e2]


def pair_softmax(scores: Tensor) -> Tensor:
    """Numerically stable softmax along the trailing pair axis."""
    return torch.softmax(scores, dim=-1)


def average_patches(patch_probs: Tensor) -> Tensor:
    """Mean of patch-level distributions ``[B, P_h, P_w, N]`` over the grid."""
    return patch_probs.mean(dim=(1, 2))


def marginalize(image_probs: Tensor, pairs: Sequence[PairIndex], num_edges: int) -> Tensor:
    """Per-edge marginals of a pair distribution; rows sum to 2.

    Every pair contributes its probability to both member edges, so the
    marginal of edge ``e`` is the total mass of pairs containing ``e``.
    """
    e1 = torch.tensor([p.e1 for p in pairs], dtype=torch.long, device=image_probs.device)
    e2 = torch.tensor([p.e2 for p in pairs], dtype=torch.long, device=image_probs.device)
    out = image_probs.new_zeros(image_probs.shape[:-1] + (num_edges,))
    out.index_add_(-1, e1, image_probs)
    out.index_add_(-1, e2, image_probs)
    return out


def per_edge_scores(keys: Tensor, query: Tensor, num_inputs: int, num_ops: int) -> Tensor:
    """Per-edge weights for fixed-topology spaces: softmax over ops per input.

    Returns the same leading shape as the scores with trailing dim
    ``E = num_inputs * num_ops``; each input's block sums to 1.
    """
    c = keys.shape[-1]
    dots = torch.einsum("...ec,...c->...e", keys, query) / math.sqrt(c)
    shaped = dots.reshape(dots.shape[:-1] + (num_inputs, num_ops))
    probs = torch.softmax(shaped, dim=-1)
    return probs.reshape(dots.shape)


class AttentionResult:
    """Per-batch attention output of one node."""

    __slots__ = ("marginals", "pair_probs", "patch_probs")

    def __init__(self, marginals: Tensor, pair_probs: Tensor | None, patch_probs: Tensor | None):
        self.marginals = marginals
        self.pair_probs = pair_probs
        self.patch_probs = patch_probs


class NodeAttention(nn.Module):
    """Attention module of one node; parameters are not shared across nodes.

    ``patch_size=None`` disables the patch partition (a single global patch,
    the ablation baseline).  In pairwise mode ``forward`` returns marginals
    summing to 2 per sample; in per-edge mode, per-input softmax weights.
    """

    def __init__(
        self,
        channels: int,
        num_inputs: int,
        num_ops: int,
        patch_size: int | None,
        mode: str = PAIRWISE,
        negative_slope: float = 0.01,
        score_gain: float = 0.01,
    ) -> None:
        super().__init__()
        if num_inputs < 2 and mode == PAIRWISE:
            raise ValueError("pairwise attention needs at least 2 node inputs")
        self.channels = channels
        self.num_inputs = num_inputs
        self.num_ops = num_ops
        self.patch_size = patch_size
        self.mode = mode
        self.key_mlp = ProjectionMLP(
            channels, channels, negative_slope=negative_slope, score_gain=score_gain
        )
        self.query_mlp = ProjectionMLP(
            channels * num_inputs, channels, hidden_features=channels,
            negative_slope=negative_slope, score_gain=score_gain,
        )
        if mode == PAIRWISE:
            e1, e2 = pair_edge_arrays(num_inputs, num_ops)
            self.register_buffer("pair_e1", torch.tensor(e1, dtype=torch.long))
            self.register_buffer("pair_e2", torch.tensor(e2, dtype=torch.long))

    @property
    def num_edges(self) -> int:
        return self.num_inputs * self.num_ops

    @property
    def num_pairs(self) -> int:
        return int(self.pair_e1.shape[0]) if self.mode == PAIRWISE else 0

    @property
    def token_count(self) -> int:
        """Number of attention tokens; independent of spatial extent."""
        return self.num_edges

    def _grid(self, height: int, width: int) -> tuple[int, int]:
        ps = self.patch_size
        if ps is None:
            return 1, 1
        return -(-height // ps), -(-width // ps)

    def flops_estimate(self, height: int, width: int) -> int:
        """Rough multiply count per sample; linear in the number of patches."""
        ph, pw = self._grid(height, width)
        c, e = self.channels, self.num_edges
        key_mlp = e * 2 * c * c
        query_mlp = c * self.num_inputs * c + c * c
        dots = e * c
        combine = self.num_pairs if self.mode == PAIRWISE else e
        return ph * pw * (key_mlp + query_mlp + dots + combine)

    def forward(self, node_inputs: Sequence[Tensor], candidate_maps: Tensor) -> AttentionResult:
        b, e, c, h, w = candidate_maps.shape
        if e != self.num_edges or c != self.channels:
            raise ValueError(
                f"candidate maps [{e}, {c}] do not match attention sized "
                f"[{self.num_edges}, {self.channels}]"
            )
        if len(node_inputs) != self.num_inputs:
            raise ValueError(
                f"got {len(node_inputs)} node inputs, expected {self.num_inputs}"
            )
        ph, pw = self._grid(h, w)

        flat = candidate_maps.reshape(b * e, c, h, w)
        pooled = pool_to_grid(flat, ph, pw).reshape(b, e, ph, pw, c)
        pooled = pooled.permute(0, 2, 3, 1, 4)  # [B, Ph, Pw, E, C]
        keys = self.key_mlp(pooled)

        # Inputs of a reduction-cell node may sit at twice the candidate-map
        # resolution; pooling each one onto the shared patch grid before
        # concatenation is equivalent to concat-then-pool for aligned inputs.
        pooled_inputs = [pool_to_grid(x, ph, pw) for x in node_inputs]
        query = self.query_mlp(torch.cat(pooled_inputs, dim=-1))

        dots = torch.einsum("bpqec,bpqc->bpqe", keys, query) / math.sqrt(c)
        if self.mode == PAIRWISE:
            scores = dots[..., self.pair_e1] + dots[..., self.pair_e2]
            patch_probs = pair_softmax(scores)
            pair_probs = average_patches(patch_probs)
            marginals = pair_probs.new_zeros((b, e))
            marginals.index_add_(1, self.pair_e1, pair_probs)
            marginals.index_add_(1, self.pair_e2, pair_probs)
            return AttentionResult(marginals, pair_probs, patch_probs)

        shaped = dots.reshape(b, ph, pw, self.num_inputs, self.num_ops)
        patch_probs = torch.softmax(shaped, dim=-1).reshape(b, ph, pw, e)
        marginals = average_patches(patch_probs)
        return AttentionResult(marginals, None, patch_probs)
