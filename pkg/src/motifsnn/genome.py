"""Gene-expression / genetic-rule parameterization of layered weights.

A :class:`Genome` holds one expression block ``X^l`` per layer (rows are the
neurons of that layer, columns are genes) and a rule matrix ``O`` shared by
all layers.  The weights from layer ``l-1`` into layer ``l`` are
``X^l @ O @ X^{l-1}.T``.  The binary side (:class:`BinaryGenome`) builds the
thresholded connectome and decomposes it into bipartite motifs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tensor, matmul, transpose


@dataclass
class Genome:
    widths: tuple[int, ...]
    blocks: list[Tensor]
    rules: list[Tensor]
    seed_lineage: list = field(default_factory=list)

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) < 2:
            raise ValueError("a genome needs at least two layers")
        if len(self.blocks) != len(self.widths):
            raise ValueError(f"{len(self.blocks)} expression blocks for {len(self.widths)} layers")
        genes = self.genes
        for w, b in zip(self.widths, self.blocks):
            if b.shape != (w, genes):
                raise ValueError(f"expression block {b.shape} does not match ({w}, {genes})")
        if len(self.rules) not in (1, len(self.widths) - 1):
            raise ValueError(f"need 1 shared or {len(self.widths) - 1} per-layer rule matrices")
        for o in self.rules:
            if o.shape != (genes, genes):
                raise ValueError(f"rule matrix {o.shape} is not ({genes}, {genes})")

    @property
    def genes(self) -> int:
        return self.blocks[0].shape[1]

    @property
    def shared_rules(self) -> bool:
        return len(self.rules) == 1

    @property
    def x(self) -> np.ndarray:
        return np.vstack([b.values for b in self.blocks])

    @property
    def o(self) -> np.ndarray:
        return self.rules[0].values

    @property
    def layer_offsets(self) -> list[tuple[int, int]]:
        edges = np.cumsum((0,) + self.widths)
        return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]

    def rule(self, layer: int) -> Tensor:
        return self.rules[0] if self.shared_rules else self.rules[layer - 1]

    def effective_weights(self, layer: int) -> Tensor:
        """``X^l O X^{l-1}.T`` for ``1 <= layer <= H-1``; differentiable."""
        if not 1 <= layer < len(self.widths):
            raise IndexError(f"layer must be in [1, {len(self.widths) - 1}], got {layer}")
        return matmul(matmul(self.blocks[layer], self.rule(layer)), transpose(self.blocks[layer - 1]))

    def all_weights(self) -> list[Tensor]:
        return [self.effective_weights(l) for l in range(1, len(self.widths))]

    def parameters(self) -> list[Tensor]:
        return list(self.blocks) + list(self.rules)

    def n_parameters(self) -> int:
        return sum(p.values.size for p in self.parameters())

    def to_dict(self) -> dict:
        return {
            "widths": list(self.widths),
            "genes": self.genes,
            "x": self.x.ravel().tolist(),
            "o": [r.values.ravel().tolist() for r in self.rules],
            "seed_lineage": list(self.seed_lineage),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Genome":
        widths = tuple(d["widths"])
        genes = int(d["genes"])
        x = np.asarray(d["x"], dtype=np.float64).reshape(sum(widths), genes)
        edges = np.cumsum((0,) + widths)
        blocks = [Tensor(x[a:b], requires_grad=True) for a, b in zip(edges[:-1], edges[1:])]
        rules = [Tensor(np.asarray(o, dtype=np.float64).reshape(genes, genes), requires_grad=True)
                 for o in d["o"]]
        return cls(widths, blocks, rules, list(d.get("seed_lineage", [])))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Genome":
        return cls.from_dict(json.loads(text))


def init_genome(widths: Sequence[int], genes: int, rng: np.random.Generator,
                per_layer_rules: bool = False, seed_lineage=()) -> Genome:
    """Random genome with ``Var(W) ~ 1/max fan-in`` at initialization.

    Expression and rule entries share one standard deviation ``s`` with
    ``genes**2 * s**6 = 1 / max_fan_in``.  Putting all of the scale on ``O``
    instead (unit-variance ``X``) leaves ``O`` so small that a single Adam
    step moves it by a large fraction of itself.
    """
    if genes < 1:
        raise ValueError(f"gene count must be >= 1, got {genes}")
    widths = tuple(int(w) for w in widths)
    fan_in = max(widths[:-1])
    std = (genes**2 * fan_in) ** (-1 / 6)
    blocks = [Tensor(rng.normal(0.0, std, (w, genes)), requires_grad=True) for w in widths]
    n_rules = len(widths) - 1 if per_layer_rules else 1
    rules = [Tensor(rng.normal(0.0, std, (genes, genes)), requires_grad=True) for _ in range(n_rules)]
    return Genome(widths, blocks, rules, list(seed_lineage))


@dataclass(frozen=True)
class BinaryGenome:
    """Binary expression ``x`` (N x G) and rule probabilities ``o`` (G x G)."""

    x: np.ndarray
    o: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        o = np.asarray(self.o, dtype=np.float64)
        if x.ndim != 2 or o.shape != (x.shape[1], x.shape[1]):
            raise ValueError(f"incompatible shapes x={x.shape}, o={o.shape}")
        if not np.isin(x, (0.0, 1.0)).all():
            raise ValueError("expression matrix must be binary")
        if (o < 0).any() or (o > 1).any():
            raise ValueError("rule matrix entries must lie in [0, 1]")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "o", o)


def heaviside(z) -> np.ndarray:
    """Step function with ``H(0) = 0``."""
    return (np.asarray(z) > 0).astype(np.int8)


def connectome_entry_oracle(g: BinaryGenome, u: int, v: int) -> int:
    """``B[u, v]`` by the explicit double sum over gene pairs."""
    n_genes = g.o.shape[0]
    s = 0.0
    for i in range(n_genes):
        for j in range(n_genes):
            s += g.x[u, i] * g.o[i, j] * g.x[v, j]
    return int(s > 0)


def binary_connectome(g: BinaryGenome) -> np.ndarray:
    """``H(X O X^T)`` as an int8 N x N matrix."""
    return heaviside(g.x @ g.o @ g.x.T)


@dataclass(frozen=True)
class Motif:
    """Complete bipartite block induced by rule ``(k, l)``.

    Every neuron expressing gene ``k`` (post) receives from every neuron
    expressing gene ``l`` (pre).
    """

    rule: tuple[int, int]
    post: frozenset[int]
    pre: frozenset[int]

    def edges(self) -> set[tuple[int, int]]:
        return {(u, v) for u in self.post for v in self.pre}


def extract_motifs(g: BinaryGenome) -> list[Motif]:
    motifs = []
    for k, l in zip(*np.nonzero(g.o > 0)):
        post = frozenset(np.flatnonzero(g.x[:, k]).tolist())
        pre = frozenset(np.flatnonzero(g.x[:, l]).tolist())
        if post and pre:
            motifs.append(Motif((int(k), int(l)), post, pre))
    return motifs


def binarize(genome: Genome, threshold: float = 0.0) -> BinaryGenome:
    """Threshold a real genome: ``x > threshold`` and ``O`` clipped to [0, 1].

    Only the shared (first) rule matrix is used.
    """
    x = (genome.x > threshold).astype(np.float64)
    return BinaryGenome(x, np.clip(genome.o, 0.0, 1.0))
