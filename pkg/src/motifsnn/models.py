"""The three network families compared in the experiments.

``cm``            weights built from a :class:`~motifsnn.genome.Genome`
``mlp``           weights learned directly
``mlp-hw-aware``  weights learned directly under train-time mismatch noise
"""

from __future__ import annotations

from dataclasses import asdict
from typing import Sequence

import numpy as np

from .autodiff import Tensor
from .genome import Genome, init_genome
from .snn import LifParams

FAMILIES = ("cm", "mlp", "mlp-hw-aware")


class MLP:
    family = "mlp"

    def __init__(self, widths: Sequence[int], matrices: Sequence[np.ndarray], lif: LifParams | None = None):
        self.widths = tuple(int(w) for w in widths)
        self.lif = lif or LifParams()
        if len(matrices) != len(self.widths) - 1:
            raise ValueError(f"{len(matrices)} weight matrices for {len(self.widths)} layers")
        self.layers = []
        for l, m in enumerate(matrices, start=1):
            m = np.asarray(m, dtype=np.float64)
            if m.shape != (self.widths[l], self.widths[l - 1]):
                raise ValueError(f"layer {l} weights {m.shape}, expected "
                                 f"{(self.widths[l], self.widths[l - 1])}")
            self.layers.append(Tensor(m, requires_grad=True))

    def weights(self) -> list[Tensor]:
        return list(self.layers)

    def parameters(self) -> list[Tensor]:
        return list(self.layers)

    def params_dict(self) -> dict:
        return {"weights": [w.values.tolist() for w in self.layers]}

    @classmethod
    def init(cls, widths, rng: np.random.Generator, lif=None, **kw):
        mats = [rng.normal(0.0, 1.0 / np.sqrt(widths[l - 1]), (widths[l], widths[l - 1]))
                for l in range(1, len(widths))]
        return cls(widths, mats, lif, **kw)


class HwAwareMLP(MLP):
    family = "mlp-hw-aware"

    def __init__(self, widths, matrices, lif=None, alpha_train: float = 0.1):
        super().__init__(widths, matrices, lif)
        if alpha_train < 0:
            raise ValueError("alpha_train must be non-negative")
        self.alpha_train = float(alpha_train)


class CMNet:
    family = "cm"

    def __init__(self, genome: Genome, lif: LifParams | None = None):
        self.genome = genome
        self.widths = genome.widths
        self.lif = lif or LifParams()

    @property
    def genes(self) -> int:
        return self.genome.genes

    def weights(self) -> list[Tensor]:
        return self.genome.all_weights()

    def parameters(self) -> list[Tensor]:
        return self.genome.parameters()

    def params_dict(self) -> dict:
        return {"genome": self.genome.to_dict()}

    @classmethod
    def init(cls, widths, rng: np.random.Generator, genes: int, lif=None, per_layer_rules=False):
        return cls(init_genome(widths, genes, rng, per_layer_rules), lif)


Model = MLP | HwAwareMLP | CMNet


def build_model(family: str, widths: Sequence[int], rng: np.random.Generator, *,
                genes: int | None = None, lif: LifParams | None = None,
                alpha_train: float = 0.1, per_layer_rules: bool = False) -> Model:
    if family == "cm":
        if genes is None:
            raise ValueError("cm models need a gene count")
        return CMNet.init(widths, rng, genes, lif, per_layer_rules)
    if family == "mlp":
        return MLP.init(widths, rng, lif)
    if family == "mlp-hw-aware":
        return HwAwareMLP.init(widths, rng, lif, alpha_train=alpha_train)
    raise ValueError(f"unknown model family {family!r}; expected one of {FAMILIES}")


def model_to_dict(model: Model) -> dict:
    d = {"family": model.family, "widths": list(model.widths), "lif": asdict(model.lif)}
    if isinstance(model, HwAwareMLP):
        d["alpha_train"] = model.alpha_train
    d.update(model.params_dict())
    return d


def model_from_dict(d: dict) -> Model:
    lif = LifParams(**d["lif"])
    family = d["family"]
    if family == "cm":
        return CMNet(Genome.from_dict(d["genome"]), lif)
    if family == "mlp":
        return MLP(d["widths"], d["weights"], lif)
    if family == "mlp-hw-aware":
        return HwAwareMLP(d["widths"], d["weights"], lif, d["alpha_train"])
    raise ValueError(f"unknown model family {family!r}")


def clone(model: Model) -> Model:
    return model_from_dict(model_to_dict(model))
