"""Candidate operations, cell topology, pair enumeration and genotypes.

The searchable cell is a densely connected DAG: intermediate node ``t``
(0-based) receives the two cell inputs plus every earlier node output,
i.e. ``t + 2`` inputs.  A *candidate edge* is an ``(input, op)`` choice;
in the pairwise topology mode a node is decoded to exactly two candidate
edges with distinct inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable

__all__ = [
    "OperationKind",
    "SearchSpace",
    "PairIndex",
    "CellGenotype",
    "Genotype",
    "default_catalog",
    "enumerate_pairs",
    "pair_edge_arrays",
    "validate_genotype",
]


@dataclass(frozen=True)
class OperationKind:
    """One candidate operation of the cell search space."""

    id: int
    name: str
    kernel_extent: int  # spatial receptive field in cells, documentation only
    learnable: bool     # convolutions are learnable, pooling/skip are not


def default_catalog() -> list[OperationKind]:
    """The standard seven-operation catalog, in fixed order.

    There is deliberately no "zero" operation: the pairwise topology mode
    selects connectivity directly, so pruning-by-zero is unnecessary.
    """
    return [
        OperationKind(0, "avg_pool_3x3", 3, False),
        OperationKind(1, "max_pool_3x3", 3, False),
        OperationKind(2, "skip_connect", 1, False),
        OperationKind(3, "sep_conv_3x3", 3, True),
        OperationKind(4, "sep_conv_5x5", 5, True),
        OperationKind(5, "dil_conv_3x3", 5, True),   # 3 + (3-1)*(2-1), dilation 2
        OperationKind(6, "dil_conv_5x5", 9, True),   # 5 + (5-1)*(2-1), dilation 2
    ]


PAIRWISE = "pairwise-topology"
PER_EDGE = "per-edge"


@dataclass(frozen=True)
class SearchSpace:
    """Operation catalog plus cell DAG shape.

    ``mode`` selects how architecture weights are normalized:
    ``pairwise-topology`` distributes probability over unordered pairs of
    candidate edges with distinct inputs (decodes two edges per node),
    ``per-edge`` softmaxes over operations independently per input (for
    fixed-topology spaces that keep every incoming edge).
    """

    ops: tuple[OperationKind, ...] = field(
        default_factory=lambda: tuple(default_catalog())
    )
    nodes_per_cell: int = 4
    mode: str = PAIRWISE

    def __post_init__(self) -> None:
        if len(self.ops) < 2:
            raise ValueError("need at least 2 candidate operations")
        if self.nodes_per_cell < 1:
            raise ValueError("need at least 1 node per cell")
        if self.mode not in (PAIRWISE, PER_EDGE):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def num_ops(self) -> int:
        return len(self.ops)

    def inputs_to_node(self, node: int) -> int:
        """Number of inputs of 0-based intermediate node ``node``."""
        return node + 2

    def num_edges(self, node: int) -> int:
        return self.inputs_to_node(node) * self.num_ops

    def op_by_name(self, name: str) -> OperationKind:
        for op in self.ops:
            if op.name == name:
                return op
        raise KeyError(name)


@dataclass(frozen=True)
class PairIndex:
    """An unordered pair of candidate edges with distinct inputs.

    Canonical form has ``i1 < i2``; the same op may appear on both sides.
    ``e1``/``e2`` are flat edge indices in the input-major layout
    ``edge = input * num_ops + op``.
    """

    i1: int
    j1: int
    i2: int
    j2: int
    e1: int
    e2: int


def enumerate_pairs(num_inputs: int, num_ops: int) -> list[PairIndex]:
    """All valid candidate-edge pairs, lexicographic on (i1, j1, i2, j2).

    Count is C(num_inputs, 2) * num_ops**2.  The ordering is stable and is
    the index layout used by the vectorized scorer.
    """
    if num_inputs < 2:
        raise ValueError("pairwise topology needs at least 2 inputs per node")
    if num_ops < 1:
        raise ValueError("need at least 1 operation")
    pairs = []
    for i1, i2 in combinations(range(num_inputs), 2):
        for j1 in range(num_ops):
            for j2 in range(num_ops):
                pairs.append(
                    PairIndex(i1, j1, i2, j2, i1 * num_ops + j1, i2 * num_ops + j2)
                )
    return pairs


def pair_edge_arrays(num_inputs: int, num_ops: int) -> tuple[list[int], list[int]]:
    """Flat (e1, e2) index lists of :func:`enumerate_pairs`, same order."""
    pairs = enumerate_pairs(num_inputs, num_ops)
    return [p.e1 for p in pairs], [p.e2 for p in pairs]


NORMAL = "normal"
REDUCTION = "reduction"


@dataclass(frozen=True)
class CellGenotype:
    """Decoded cell: per node, the chosen (input, op) edges."""

    role: str
    nodes: tuple[tuple[tuple[int, int], ...], ...]

    def __post_init__(self) -> None:
        if self.role not in (NORMAL, REDUCTION):
            raise ValueError(f"unknown cell role {self.role!r}")


@dataclass(frozen=True)
class Genotype:
    """A decoded fixed architecture: one CellGenotype per distinct cell."""

    cells: tuple[CellGenotype, ...]

    def to_json(self) -> str:
        doc = {
            "cells": [
                {
                    "role": cell.role,
                    "nodes": [[[int(i), int(j)] for (i, j) in node] for node in cell.nodes],
                }
                for cell in self.cells
            ]
        }
        return json.dumps(doc, separators=(", ", ": "))

    @classmethod
    def from_json(cls, text: str) -> "Genotype":
        doc = json.loads(text)
        cells = []
        for cell in doc["cells"]:
            nodes = tuple(
                tuple((int(i), int(j)) for i, j in node) for node in cell["nodes"]
            )
            cells.append(CellGenotype(role=cell["role"], nodes=nodes))
        return cls(cells=tuple(cells))

    def normal_cells(self) -> list[CellGenotype]:
        return [c for c in self.cells if c.role == NORMAL]

    def reduction_cells(self) -> list[CellGenotype]:
        return [c for c in self.cells if c.role == REDUCTION]


@dataclass(frozen=True)
class Violation:
    cell: int
    node: int
    message: str


def validate_genotype(genotype: Genotype, space: SearchSpace) -> list[Violation]:
    """Report all rule violations; an empty list means the genotype is valid.

    Validation never raises.  In pairwise mode each node must have exactly
    two edges on distinct inputs; in per-edge mode each node keeps one op
    per input, every input exactly once.
    """
    violations: list[Violation] = []

    def bad(cell: int, node: int, message: str) -> None:
        violations.append(Violation(cell, node, message))

    for c_idx, cell in enumerate(genotype.cells):
        if len(cell.nodes) != space.nodes_per_cell:
            bad(c_idx, -1, f"expected {space.nodes_per_cell} nodes, got {len(cell.nodes)}")
        for n_idx, node in enumerate(cell.nodes):
            n_inputs = space.inputs_to_node(n_idx)
            inputs = [i for i, _ in node]
            if space.mode == PAIRWISE:
                if len(node) != 2:
                    bad(c_idx, n_idx, f"expected 2 edges, got {len(node)}")
                if len(set(inputs)) != len(inputs):
                    bad(c_idx, n_idx, "duplicate input index")
            else:
                if sorted(inputs) != list(range(n_inputs)):
                    bad(c_idx, n_idx, "per-edge mode requires each input exactly once")
            for i, j in node:
                if not 0 <= i < n_inputs:
                    bad(c_idx, n_idx, f"input index {i} out of range")
                if not 0 <= j < space.num_ops:
                    bad(c_idx, n_idx, f"op index {j} out of range")
    return violations


def genotype_edges(genotype: Genotype) -> Iterable[tuple[int, int, int, int]]:
    """Flat iteration over (cell, node, input, op) of every decoded edge."""
    for c_idx, cell in enumerate(genotype.cells):
        for n_idx, node in enumerate(cell.nodes):
            for i, j in node:
                yield c_idx, n_idx, i, j
