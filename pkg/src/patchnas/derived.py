"""Fixed networks built from decoded genotypes for retraining."""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .ops import DropPath, FactorizedReduce, Identity, ReLUConvBN, build_op
from .space import Genotype, SearchSpace, validate_genotype

__all__ = ["DerivedCell", "DerivedNetwork", "build_derived_network", "count_parameters"]


class DerivedCell(nn.Module):
    """A decoded cell: each node sums its chosen edges."""

    def __init__(self, cell_genotype, op_names, c_prev_prev, c_prev, channels,
                 reduction, reduction_prev, drop_path_p=0.0):
        super().__init__()
        self.reduction = reduction
        self.num_nodes = len(cell_genotype.nodes)
        if reduction_prev:
            self.preprocess0 = FactorizedReduce(c_prev_prev, channels)
        else:
            self.preprocess0 = ReLUConvBN(c_prev_prev, channels, 1, 1, 0)
        self.preprocess1 = ReLUConvBN(c_prev, channels, 1, 1, 0)
        self.inputs: list[list[int]] = []
        self.ops = nn.ModuleList()
        self.drop_path = DropPath(drop_path_p)
        for node in cell_genotype.nodes:
            self.inputs.append([i for i, _ in node])
            for i, j in node:
                stride = 2 if reduction and i < 2 else 1
                self.ops.append(build_op(op_names[j], channels, stride, affine=True))

    def forward(self, s0: Tensor, s1: Tensor) -> Tensor:
        states = [self.preprocess0(s0), self.preprocess1(s1)]
        k = 0
        for inputs in self.inputs:
            parts = []
            for i in inputs:
                op = self.ops[k]
                h = op(states[i])
                if not isinstance(op, Identity):
                    h = self.drop_path(h)
                parts.append(h)
                k += 1
            states.append(sum(parts))
        return torch.cat(states[2:], dim=1)


class AuxiliaryHead(nn.Module):
    """Small classifier head attached at 2/3 depth (expects 8x8 features)."""

    def __init__(self, channels, num_classes):
        super().__init__()
        self.features = nn.Sequential(
            nn.ReLU(inplace=False),
            nn.AvgPool2d(5, stride=3, padding=0, count_include_pad=False),
            nn.Conv2d(channels, 128, 1, bias=False),
            nn.BatchNorm2d(128),
            nn.ReLU(inplace=False),
            nn.Conv2d(128, 768, 2, bias=False),
            nn.BatchNorm2d(768),
            nn.ReLU(inplace=False),
        )
        self.classifier = nn.Linear(768, num_classes)

    def forward(self, x: Tensor) -> Tensor:
        return self.classifier(self.features(x).flatten(1))


def _cell_plan(genotype: Genotype, depth: int) -> list:
    """Map stack positions to cell genotypes.

    A two-cell genotype (one normal, one reduction) follows the standard
    layout with reductions at depth//3 and 2*depth//3.  A grouped genotype
    of alternating normal/reduction cells (e.g. three normals and two
    reductions decoded per spatial level) is stacked segment-wise, normal
    segments sized as evenly as possible.
    """
    normals = genotype.normal_cells()
    reductions = genotype.reduction_cells()
    if len(normals) == 1 and len(reductions) <= 1:
        if depth >= 3 and reductions:
            cut = {depth // 3, 2 * depth // 3}
        else:
            cut = set()
        return [reductions[0] if i in cut else normals[0] for i in range(depth)]
    if len(normals) == len(reductions) + 1:
        segments = len(normals)
        n_normal = depth - len(reductions)
        base, rem = divmod(n_normal, segments)
        plan = []
        for s, cell in enumerate(normals):
            size = base + (1 if s < rem else 0)
            plan.extend([cell] * size)
            if s < len(reductions):
                plan.append(reductions[s])
        return plan
    raise ValueError(
        f"cannot stack genotype with {len(normals)} normal and "
        f"{len(reductions)} reduction cells"
    )


class DerivedNetwork(nn.Module):
    def __init__(self, genotype: Genotype, depth: int, channels: int, num_classes: int,
                 space: SearchSpace | None = None, in_channels: int = 3,
                 stem_multiplier: int = 3, auxiliary: bool = False,
                 drop_path_p: float = 0.0):
        super().__init__()
        if space is None:
            space = SearchSpace(nodes_per_cell=len(genotype.cells[0].nodes))
        violations = validate_genotype(genotype, space)
        if violations:
            raise ValueError(f"invalid genotype: {violations}")
        op_names = [o.name for o in space.ops]
        plan = _cell_plan(genotype, depth)

        c_cur = stem_multiplier * channels
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, c_cur, 3, padding=1, bias=False),
            nn.BatchNorm2d(c_cur),
        )
        c_pp, c_p, c = c_cur, c_cur, channels
        self.cells = nn.ModuleList()
        reduction_prev = False
        self.aux_position = (2 * depth) // 3 if auxiliary else -1
        aux_channels = 0
        for idx, cell_genotype in enumerate(plan):
            reduction = cell_genotype.role == "reduction"
            if reduction:
                c *= 2
            cell = DerivedCell(cell_genotype, op_names, c_pp, c_p, c,
                               reduction, reduction_prev, drop_path_p)
            self.cells.append(cell)
            reduction_prev = reduction
            c_pp, c_p = c_p, c * cell.num_nodes
            if idx == self.aux_position:
                aux_channels = c_p
        self.auxiliary_head = (
            AuxiliaryHead(aux_channels, num_classes) if auxiliary else None
        )
        self.global_pooling = nn.AdaptiveAvgPool2d(1)
        self.classifier = nn.Linear(c_p, num_classes)

    def forward(self, images: Tensor) -> tuple[Tensor, Tensor | None]:
        s0 = s1 = self.stem(images)
        aux_logits = None
        for idx, cell in enumerate(self.cells):
            s0, s1 = s1, cell(s0, s1)
            if idx == self.aux_position and self.auxiliary_head is not None and self.training:
                aux_logits = self.auxiliary_head(s1)
        pooled = self.global_pooling(s1).flatten(1)
        return self.classifier(pooled), aux_logits

    def set_drop_path(self, p: float) -> None:
        for module in self.modules():
            if isinstance(module, DropPath):
                module.p = p


def build_derived_network(genotype: Genotype, depth: int, channels: int,
                          num_classes: int, **kwargs) -> DerivedNetwork:
    return DerivedNetwork(genotype, depth, channels, num_classes, **kwargs)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
