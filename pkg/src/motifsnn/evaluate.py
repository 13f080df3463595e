"""Simulated on-chip deployment and result reporting.

A simulated chip is one fixed draw of per-layer mismatch matrices.  Every
model family, including the genome-backed one, is evaluated through its
effective weights plus that draw.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import time_sum
from .data import DatasetSplit, rate_encode
from .models import Model
from .snn import forward, sample_errors
from .stats import BoxStats, Comparison, compare_group


def predict(output, steps: int | None = None) -> np.ndarray:
    """Class with the most output spikes; ties go to the lowest index.

    ``output`` is a ``(T, C)`` train, a ``(T, B, C)`` batch, or a flattened
    ``(T*B, C)`` tensor together with ``steps``.
    """
    if steps is not None:
        counts = time_sum(output, steps).values
    else:
        counts = np.asarray(output, dtype=np.float64).sum(axis=0)
    return np.argmax(counts, axis=-1)


def accuracy(model: Model, split: DatasetSplit, encoded: np.ndarray,
             errors: Sequence[np.ndarray] | None = None, batch_size: int = 64) -> float:
    """Fraction of correctly classified samples for pre-encoded inputs."""
    if len(split) == 0:
        raise ValueError("cannot evaluate an empty split")
    steps = encoded.shape[0]
    weights = [w.detach() for w in model.weights()]
    correct = 0
    for start in range(0, len(split), batch_size):
        sl = slice(start, start + batch_size)
        out = forward(model, encoded[:, sl], errors=errors, weights=weights)
        correct += int((predict(out, steps) == split.labels[sl]).sum())
    return correct / len(split)


def frozen_encoding(split: DatasetSplit, steps: int, base_seed: int) -> np.ndarray:
    return rate_encode(split.features, steps, np.random.default_rng([base_seed, 1]))


def chip_streams(base_seed: int, chip: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (mismatch, encoding) streams for one chip."""
    noise, enc = np.random.SeedSequence([base_seed, 0, chip]).spawn(2)
    return np.random.default_rng(noise), np.random.default_rng(enc)


@dataclass
class ChipTrial:
    chip: int
    seed: tuple[int, int]
    errors: list[np.ndarray]
    accuracy: float


def run_chip(model: Model, split: DatasetSplit, alpha: float, chip: int, steps: int, base_seed: int,
             encoded: np.ndarray | None = None, literal_mean: bool = False,
             batch_size: int = 64) -> ChipTrial:
    noise_rng, enc_rng = chip_streams(base_seed, chip)
    errors = sample_errors([w.values for w in model.weights()], alpha, noise_rng, literal_mean)
    if encoded is None:
        encoded = rate_encode(split.features, steps, enc_rng)
    acc = accuracy(model, split, encoded, errors, batch_size)
    return ChipTrial(chip, (base_seed, chip), errors, acc)


def _run_chip_star(args):
    return run_chip(*args)


def simulate_chips(model: Model, split: DatasetSplit, alpha: float, n_chips: int, steps: int,
                   base_seed: int, freeze_encodings: bool = False, literal_mean: bool = False,
                   batch_size: int = 64, jobs: int = 1) -> list[ChipTrial]:
    """Evaluate ``split`` on ``n_chips`` independent mismatch draws.

    Each chip re-encodes the inputs from its own stream unless
    ``freeze_encodings``, in which case all chips share one encoding.
    Results do not depend on ``jobs``.
    """
    if n_chips < 1:
        raise ValueError("n_chips must be >= 1")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if len(split) == 0:
        raise ValueError("cannot evaluate an empty split")
    encoded = frozen_encoding(split, steps, base_seed) if freeze_encodings else None
    args = [(model, split, alpha, c, steps, base_seed, encoded, literal_mean, batch_size)
            for c in range(n_chips)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            return list(pool.map(_run_chip_star, args))
    return [run_chip(*a) for a in args]


@dataclass
class ModelResult:
    name: str
    group: str
    family: str
    accuracies: list[float]
    genes: int | None = None
    hidden: int | None = None
    lr: float | None = None

    @property
    def box(self) -> BoxStats:
        return BoxStats.of(self.accuracies)

    @property
    def median(self) -> float:
        return float(np.median(self.accuracies))


class ReportError(ValueError):
    pass


@dataclass
class EvalReport:
    models: list[ModelResult]
    comparisons: list[Comparison] = field(default_factory=list)
    alpha: float | None = None
    n_chips: int | None = None

    def groups(self) -> list[str]:
        return list(dict.fromkeys(m.group for m in self.models))

    def model(self, name: str, group: str | None = None) -> ModelResult:
        for m in self.models:
            if m.name == name and (group is None or m.group == group):
                return m
        raise KeyError(name)

    def comparison(self, group: str, a: str, b: str) -> Comparison:
        for c in self.comparisons:
            if c.group == group and {c.a, c.b} == {a, b}:
                return c
        raise KeyError((group, a, b))

    def to_dict(self) -> dict:
        models = []
        for m in self.models:
            d = asdict(m)
            d["median"] = m.median
            d["box"] = asdict(m.box)
            models.append(d)
        return {"alpha": self.alpha, "n_chips": self.n_chips, "models": models,
                "comparisons": [asdict(c) for c in self.comparisons]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str, source: str = "<report>") -> "EvalReport":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ReportError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
        try:
            models = []
            for m in d["models"]:
                accs = [float(a) for a in m["accuracies"]]
                if not accs:
                    raise ReportError(f"{source}: model {m['name']!r} has an empty accuracy vector")
                models.append(ModelResult(m["name"], m["group"], m["family"], accs,
                                          m.get("genes"), m.get("hidden"), m.get("lr")))
            comps = [Comparison(**c) for c in d.get("comparisons", [])]
        except (KeyError, TypeError) as exc:
            raise ReportError(f"{source}: malformed report ({exc!r})") from None
        return cls(models, comps, d.get("alpha"), d.get("n_chips"))

    def accuracy_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group", "model", "chip", "accuracy"])
        for m in self.models:
            for chip, acc in enumerate(m.accuracies):
                w.writerow([m.group, m.name, chip, repr(acc)])
        return buf.getvalue()

    def box_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group", "model", "median", "q1", "q3", "whisker_low", "whisker_high", "outliers"])
        for m in self.models:
            b = m.box
            w.writerow([m.group, m.name, repr(b.median), repr(b.q1), repr(b.q3), repr(b.whisker_low),
                        repr(b.whisker_high), ";".join(repr(o) for o in b.outliers)])
        return buf.getvalue()


def summarize(results: Sequence[ModelResult], pairs: dict[str, list[tuple[str, str]]] | None = None,
              alpha: float | None = None, n_chips: int | None = None) -> EvalReport:
    """Box summaries plus Bonferroni-adjusted pairwise tests per group.

    ``m`` is the number of tests run within each group.
    """
    lengths = {len(r.accuracies) for r in results}
    if len(lengths) > 1:
        raise ValueError(f"accuracy vectors differ in length: {sorted(lengths)}")
    if 0 in lengths:
        raise ValueError("empty accuracy vector")
    report = EvalReport(list(results), [], alpha, n_chips)
    for group in report.groups():
        accs = {r.name: r.accuracies for r in results if r.group == group}
        group_pairs = None if pairs is None else pairs.get(group, [])
        report.comparisons.extend(compare_group(group, accs, group_pairs))
    return report
