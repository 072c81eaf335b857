"""The differentiable search network.

A stack of cells; each cell is a DAG of nodes whose outputs are weighted
sums of all candidate activation maps, with the weights produced per sample
by that node's own attention module (parameters are not shared across
nodes).  Forward passes can record every node's image-level marginals for
decoding and analysis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import torch
from torch import Tensor, nn

from .attention import AttentionResult, NodeAttention
from .ops import FactorizedReduce, ReLUConvBN, build_op
from .space import PAIRWISE, SearchSpace

__all__ = [
    "SupernetConfig",
    "NodeMixture",
    "SearchCell",
    "Supernet",
    "NodeRecord",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
]


@dataclass(frozen=True)
class SupernetConfig:
    num_cells: int = 8
    reduction_cell_positions: tuple[int, ...] = (1, 4)
    init_channels: int = 16
    nodes_per_cell: int = 4
    patch_size: int = 8  # 0 disables the patch partition (global pooling)
    num_classes: int = 10
    in_channels: int = 3
    stem_multiplier: int = 3
    score_gain: float = 0.01

    def __post_init__(self) -> None:
        if self.init_channels < 1:
            raise ValueError("init_channels must be >= 1")
        if any(p >= self.num_cells or p < 0 for p in self.reduction_cell_positions):
            raise ValueError("reduction positions must lie inside [0, num_cells)")

    def to_dict(self) -> dict:
        return {
            "num_cells": self.num_cells,
            "reduction_cell_positions": list(self.reduction_cell_positions),
            "init_channels": self.init_channels,
            "nodes_per_cell": self.nodes_per_cell,
            "patch_size": self.patch_size,
            "num_classes": self.num_classes,
            "in_channels": self.in_channels,
            "stem_multiplier": self.stem_multiplier,
            "score_gain": self.score_gain,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SupernetConfig":
        doc = dict(doc)
        doc["reduction_cell_positions"] = tuple(doc["reduction_cell_positions"])
        return cls(**doc)


@dataclass
class NodeRecord:
    """Recorded attention output of one node for one batch."""

    cell: int
    node: int
    marginals: Tensor           # [B, E], detached
    pair_probs: Tensor | None   # [B, N_pairs], detached (pairwise mode only)


class NodeMixture(nn.Module):
    """One node: all candidate ops plus the node's attention module."""

    def __init__(
        self,
        space: SearchSpace,
        channels: int,
        node_index: int,
        reduction: bool,
        patch_size: int | None,
        score_gain: float,
    ) -> None:
        super().__init__()
        self.num_inputs = space.inputs_to_node(node_index)
        self.num_ops = space.num_ops
        ops = []
        for i in range(self.num_inputs):
            stride = 2 if reduction and i < 2 else 1
            for kind in space.ops:
                ops.append(build_op(kind.name, channels, stride, affine=False))
        self.edge_ops = nn.ModuleList(ops)
        self.attention = NodeAttention(
            channels, self.num_inputs, self.num_ops, patch_size,
            mode=space.mode, score_gain=score_gain,
        )

    def forward(self, states: Sequence[Tensor]) -> tuple[Tensor, AttentionResult]:
        maps = []
        for e, op in enumerate(self.edge_ops):
            maps.append(op(states[e // self.num_ops]))
        candidate_maps = torch.stack(maps, dim=1)  # [B, E, C, H, W]
        attn = self.attention(list(states), candidate_maps)
        out = torch.einsum("be,bechw->bchw", attn.marginals, candidate_maps)
        return out, attn


def node_forward(
    states: Sequence[Tensor], node: NodeMixture
) -> tuple[Tensor, AttentionResult]:
    """Functional alias for one node's mixed forward pass."""
    return node(states)


class SearchCell(nn.Module):
    def __init__(
        self,
        space: SearchSpace,
        c_prev_prev: int,
        c_prev: int,
        channels: int,
        reduction: bool,
        reduction_prev: bool,
        patch_size: int | None,
        score_gain: float,
    ) -> None:
        super().__init__()
        self.reduction = reduction
        self.num_nodes = space.nodes_per_cell
        if reduction_prev:
            self.preprocess0 = FactorizedReduce(c_prev_prev, channels, affine=False)
        else:
            self.preprocess0 = ReLUConvBN(c_prev_prev, channels, 1, 1, 0, affine=False)
        self.preprocess1 = ReLUConvBN(c_prev, channels, 1, 1, 0, affine=False)
        self.nodes = nn.ModuleList(
            NodeMixture(space, channels, t, reduction, patch_size, score_gain)
            for t in range(self.num_nodes)
        )

    def forward(self, s0: Tensor, s1: Tensor) -> tuple[Tensor, list[AttentionResult]]:
        states = [self.preprocess0(s0), self.preprocess1(s1)]
        results = []
        for node in self.nodes:
            out, attn = node(states)
            states.append(out)
            results.append(attn)
        return torch.cat(states[2:], dim=1), results


class Supernet(nn.Module):
    """Stem, stacked search cells, global pooling, linear classifier."""

    def __init__(self, space: SearchSpace, config: SupernetConfig) -> None:
        super().__init__()
        if space.nodes_per_cell != config.nodes_per_cell:
            raise ValueError(
                f"space has {space.nodes_per_cell} nodes per cell, "
                f"config says {config.nodes_per_cell}"
            )
        self.space = space
        self.config = config
        patch_size = config.patch_size if config.patch_size > 0 else None

        c_cur = config.stem_multiplier * config.init_channels
        self.stem = nn.Sequential(
            nn.Conv2d(config.in_channels, c_cur, 3, padding=1, bias=False),
            nn.BatchNorm2d(c_cur),
        )
        c_pp, c_p, c = c_cur, c_cur, config.init_channels
        self.cells = nn.ModuleList()
        reduction_prev = False
        self.cell_roles: list[str] = []
        for idx in range(config.num_cells):
            reduction = idx in config.reduction_cell_positions
            if reduction:
                c *= 2
            cell = SearchCell(
                space, c_pp, c_p, c, reduction, reduction_prev, patch_size,
                config.score_gain,
            )
            self.cells.append(cell)
            self.cell_roles.append("reduction" if reduction else "normal")
            reduction_prev = reduction
            c_pp, c_p = c_p, c * config.nodes_per_cell
        self.global_pooling = nn.AdaptiveAvgPool2d(1)
        self.classifier = nn.Linear(c_p, config.num_classes)

    def forward(self, images: Tensor, record: bool = False) -> tuple[Tensor, list[NodeRecord]]:
        s0 = s1 = self.stem(images)
        records: list[NodeRecord] = []
        for cell_idx, cell in enumerate(self.cells):
            out, results = cell(s0, s1)
            s0, s1 = s1, out
            if record:
                for node_idx, attn in enumerate(results):
                    records.append(
                        NodeRecord(
                            cell=cell_idx,
                            node=node_idx,
                            marginals=attn.marginals.detach(),
                            pair_probs=None if attn.pair_probs is None
                            else attn.pair_probs.detach(),
                        )
                    )
        pooled = self.global_pooling(s1).flatten(1)
        return self.classifier(pooled), records

    def attention_parameters(self) -> list[nn.Parameter]:
        return [p for name, p in self.named_parameters() if ".attention." in name]

    def weight_parameters(self) -> list[nn.Parameter]:
        return [p for name, p in self.named_parameters() if ".attention." not in name]

    def attention_modules(self) -> list[tuple[int, int, NodeAttention]]:
        out = []
        for cell_idx, cell in enumerate(self.cells):
            for node_idx, node in enumerate(cell.nodes):
                out.append((cell_idx, node_idx, node.attention))
        return out


CHECKPOINT_MAGIC = "patchnas-supernet"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, model: Supernet, extra: dict | None = None) -> None:
    """Serialize the supernet (weights + attention + config) to one blob."""
    space = model.space
    blob = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "space": {
            "ops": [
                {"id": o.id, "name": o.name, "kernel_extent": o.kernel_extent,
                 "learnable": o.learnable}
                for o in space.ops
            ],
            "nodes_per_cell": space.nodes_per_cell,
            "mode": space.mode,
        },
        "state_dict": model.state_dict(),
        "extra": dict(extra or {}),
    }
    torch.save(blob, path)


def load_checkpoint(path) -> tuple[Supernet, dict]:
    """Rebuild a supernet from :func:`save_checkpoint` output."""
    from .space import OperationKind  # local import to keep module deps one-way

    blob = torch.load(path, map_location="cpu", weights_only=True)
    if blob.get("magic") != CHECKPOINT_MAGIC:
        raise ValueError(f"not a supernet checkpoint: {path}")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')}")
    space = SearchSpace(
        ops=tuple(
            OperationKind(o["id"], o["name"], o["kernel_extent"], o["learnable"])
            for o in blob["space"]["ops"]
        ),
        nodes_per_cell=blob["space"]["nodes_per_cell"],
        mode=blob["space"]["mode"],
    )
    config = SupernetConfig.from_dict(blob["config"])
    model = Supernet(space, config)
    model.load_state_dict(blob["state_dict"])
    return model, blob["extra"]
