"""End-to-end experiment pipeline: data, sweeps, chip simulation, report.

Output tree under ``out``::

    data/{training,validation,test}.csv
    checkpoints/<group>/<model>/arm-<i>.json   one per learning rate
    checkpoints/<group>/<model>/history-<i>.csv
    checkpoints/<group>/<model>/selected.json
    report.json  accuracies.csv  box.csv  plot.svg  manifest.json

Arm checkpoints carry a key over everything that determines them, so a
rerun with the same config and code reuses finished arms.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, ModelSpec, derive_seed
from .data import DatasetSplit, default_splits, read_csv, write_csv
from .evaluate import EvalReport, ModelResult, simulate_chips, summarize
from .models import Model, build_model, model_from_dict, model_to_dict
from .plot import box_plot_svg
from .train import ArmResult, History, SweepFailed, TrainConfig, run_arm, select_arm

log = logging.getLogger(__name__)

SPLITS = ("training", "validation", "test")


# modules whose contents decide what a training arm produces
NUMERIC_MODULES = ("autodiff.py", "snn.py", "genome.py", "models.py", "data.py", "train.py", "config.py")


def code_version() -> str:
    """Package version plus a digest of the sources that shape training."""
    h = hashlib.sha256()
    for name in NUMERIC_MODULES:
        path = Path(__file__).parent / name
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass(frozen=True)
class ArmTask:
    spec: ModelSpec
    arm: int
    lr: float
    init_seed: int
    train_seed: int
    val_seed: int

    def key(self, train: TrainConfig, data_digest: str, version: str) -> str:
        blob = json.dumps({
            "spec": [self.spec.family, self.spec.hidden, self.spec.genes],
            "arm": self.arm, "lr": self.lr, "seeds": [self.init_seed, self.train_seed, self.val_seed],
            "train": train.to_dict(), "data": data_digest, "code": version,
        }, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


def make_model(spec: ModelSpec, train: TrainConfig, seed: int) -> Model:
    return build_model(spec.family, spec.widths, np.random.default_rng(seed), genes=spec.genes,
                       lif=train.lif(), alpha_train=train.alpha_train)


def _train_arm(task: ArmTask, train: TrainConfig, splits: dict[str, DatasetSplit]) -> ArmResult:
    return run_arm(lambda: make_model(task.spec, train, task.init_seed), splits, train,
                   task.lr, task.train_seed, task.val_seed)


def _train_arm_star(args) -> tuple[ArmResult, float]:
    start = time.perf_counter()
    res = _train_arm(*args)
    return res, time.perf_counter() - start


class Runner:
    def __init__(self, cfg: ExperimentConfig, out, jobs: int = 1, resume: bool = True):
        self.cfg = cfg
        self.out = Path(out)
        self.jobs = max(1, int(jobs))
        self.resume = resume
        self.version = code_version()
        self.seeds: dict[str, int] = {}
        self.failures: dict[str, str] = {}
        self.train_seconds: dict[str, float] = {}
        self.started = _dt.datetime.now(_dt.timezone.utc).isoformat()

    # data -------------------------------------------------------------
    def generate_data(self) -> dict[str, DatasetSplit]:
        d = self.cfg.data
        splits = default_splits(d.sizes(), d.seeds(), d.balanced)
        data_dir = self.out / "data"
        data_dir.mkdir(parents=True, exist_ok=True)
        for name, split in splits.items():
            write_csv(split, data_dir / f"{name}.csv")
        return splits

    def load_data(self) -> dict[str, DatasetSplit]:
        data_dir = self.out / "data"
        if not all((data_dir / f"{s}.csv").exists() for s in SPLITS):
            return self.generate_data()
        return {s: read_csv(data_dir / f"{s}.csv", s) for s in SPLITS}

    def _data_digest(self) -> str:
        h = hashlib.sha256()
        for s in SPLITS:
            h.update((self.out / "data" / f"{s}.csv").read_bytes())
        return h.hexdigest()

    # training ---------------------------------------------------------
    def tasks(self) -> list[ArmTask]:
        master = self.cfg.seed
        out = []
        for spec in self.cfg.model_specs():
            init_seed = derive_seed(master, "init", spec.group, spec.name)
            val_seed = derive_seed(master, "validation", spec.group)
            self.seeds[f"init/{spec.group}/{spec.name}"] = init_seed
            self.seeds[f"validation/{spec.group}"] = val_seed
            for arm, lr in enumerate(self.cfg.train.learning_rates):
                train_seed = derive_seed(master, "train", spec.group, spec.name, arm)
                self.seeds[f"train/{spec.group}/{spec.name}/{arm}"] = train_seed
                out.append(ArmTask(spec, arm, lr, init_seed, train_seed, val_seed))
        return out

    def _model_dir(self, spec: ModelSpec) -> Path:
        return self.out / "checkpoints" / spec.group / spec.name

    def _load_arm(self, task: ArmTask, key: str) -> tuple[ArmResult, float] | None:
        path = self._model_dir(task.spec) / f"arm-{task.arm}.json"
        if not (self.resume and path.exists()):
            return None
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError:
            return None
        if d.get("key") != key:
            return None
        model = model_from_dict(d["model"]) if d.get("model") else None
        history = History.from_list(d["history"]) if d.get("history") is not None else None
        timing = path.with_suffix(".seconds")
        seconds = float(timing.read_text()) if timing.exists() else 0.0
        return ArmResult(d["lr"], model, history, d.get("error")), seconds

    def _save_arm(self, task: ArmTask, key: str, res: ArmResult, seconds: float) -> None:
        mdir = self._model_dir(task.spec)
        mdir.mkdir(parents=True, exist_ok=True)
        d = {
            "key": key, "family": task.spec.family, "hidden": task.spec.hidden, "genes": task.spec.genes,
            "lr": task.lr, "arm": task.arm, "config": self.cfg.train.to_dict(),
            "model": model_to_dict(res.model) if res.model is not None else None,
            "history": res.history.to_list() if res.history is not None else None,
            "error": res.error,
        }
        (mdir / f"arm-{task.arm}.json").write_text(json.dumps(d))
        # wall-clock time lives beside the checkpoint so the checkpoint itself is reproducible
        (mdir / f"arm-{task.arm}.seconds").write_text(f"{seconds:.3f}\n")
        if res.history is not None:
            (mdir / f"history-{task.arm}.csv").write_text(res.history.to_csv())

    @staticmethod
    def _arm_label(task: ArmTask) -> str:
        return f"{task.spec.group}/{task.spec.name}/{task.arm}"

    def train_all(self, splits) -> dict[ModelSpec, tuple[ArmResult, list[ArmResult]]]:
        data_digest = self._data_digest()
        tasks = self.tasks()
        keys = [t.key(self.cfg.train, data_digest, self.version) for t in tasks]
        loaded = [self._load_arm(t, k) for t, k in zip(tasks, keys)]
        todo = [i for i, r in enumerate(loaded) if r is None]
        results: list[ArmResult | None] = [r[0] if r else None for r in loaded]
        self.train_seconds = {self._arm_label(t): r[1] for t, r in zip(tasks, loaded) if r}
        log.info("%d of %d sweep arms cached, %d to train", len(tasks) - len(todo), len(tasks), len(todo))
        args = [(tasks[i], self.cfg.train, splits) for i in todo]
        if self.jobs > 1 and len(todo) > 1:
            with ProcessPoolExecutor(self.jobs) as pool:
                fresh = pool.map(_train_arm_star, args)
                for i, (res, secs) in zip(todo, fresh):
                    self._save_arm(tasks[i], keys[i], res, secs)
                    results[i] = res
                    self.train_seconds[self._arm_label(tasks[i])] = secs
        else:
            for i, a in zip(todo, args):
                t = tasks[i]
                log.info("training %s/%s lr=%g", t.spec.group, t.spec.name, t.lr)
                res, secs = _train_arm_star(a)
                self._save_arm(t, keys[i], res, secs)
                results[i] = res
                self.train_seconds[self._arm_label(t)] = secs
                if res.ok and res.history.records:
                    log.info("  done in %.0f s, final val loss %.4f, val acc %.3f", secs,
                             res.history.final_val_loss, res.history.records[-1].val_acc)
        selected = {}
        by_spec: dict[ModelSpec, list[ArmResult]] = {}
        for t, r in zip(tasks, results):
            by_spec.setdefault(t.spec, []).append(r)
        for spec, arms in by_spec.items():
            try:
                best = select_arm(arms)
            except SweepFailed as exc:
                self.failures[f"{spec.group}/{spec.name}"] = str(exc)
                log.error("%s/%s: %s", spec.group, spec.name, exc)
                continue
            selected[spec] = (best, arms)
            sel = {"lr": best.lr, "final_val_loss": best.history.final_val_loss,
                   "arms": [{"lr": a.lr, "final_val_loss": a.history.final_val_loss if a.ok else None,
                             "error": a.error} for a in arms],
                   "model": model_to_dict(best.model)}
            (self._model_dir(spec) / "selected.json").write_text(json.dumps(sel))
        return selected

    def load_selected(self) -> dict[ModelSpec, Model]:
        models = {}
        for spec in self.cfg.model_specs():
            path = self._model_dir(spec) / "selected.json"
            if not path.exists():
                self.failures.setdefault(f"{spec.group}/{spec.name}", f"no selected checkpoint at {path}")
                continue
            d = json.loads(path.read_text())
            models[spec] = (model_from_dict(d["model"]), d["lr"])
        return models

    # evaluation -------------------------------------------------------
    def evaluate_all(self, splits, models: dict[ModelSpec, tuple[Model, float]]) -> EvalReport:
        ev = self.cfg.eval
        results = []
        for spec, (model, lr) in models.items():
            base = derive_seed(self.cfg.seed, "eval", spec.group)
            self.seeds[f"eval/{spec.group}"] = base
            try:
                trials = simulate_chips(model, splits["test"], ev.alpha, ev.n_chips, self.cfg.train.steps,
                                        base, ev.freeze_encodings, self.cfg.train.literal_mean,
                                        jobs=self.jobs)
            except Exception as exc:  # recorded per model; the run continues
                self.failures[f"{spec.group}/{spec.name}"] = f"evaluation failed: {exc!r}"
                log.exception("evaluation of %s/%s failed", spec.group, spec.name)
                continue
            results.append(ModelResult(spec.name, spec.group, spec.family, [t.accuracy for t in trials],
                                       spec.genes, spec.hidden, lr))
        if not results:
            raise RuntimeError(f"no model could be evaluated: {self.failures}")
        report = summarize(results, alpha=ev.alpha, n_chips=ev.n_chips)
        self.write_report(report)
        return report

    def write_report(self, report: EvalReport) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "report.json").write_text(report.to_json())
        (self.out / "accuracies.csv").write_text(report.accuracy_csv())
        (self.out / "box.csv").write_text(report.box_csv())
        (self.out / "plot.svg").write_text(box_plot_svg(report, title=self.cfg.name))

    # bookkeeping ------------------------------------------------------
    def write_manifest(self) -> dict:
        files = {}
        for path in sorted(self.out.rglob("*")):
            if path.is_file() and path.name != "manifest.json" and path.suffix != ".seconds":
                files[str(path.relative_to(self.out))] = _sha256(path)
        manifest = {
            "config_hash": self.cfg.digest(),
            "code_version": self.version,
            "master_seed": self.cfg.seed,
            "seeds": dict(sorted(self.seeds.items())),
            "started": self.started,
            "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "failures": self.failures,
            "train_seconds": dict(sorted(self.train_seconds.items())),
            "files": files,
        }
        (self.out / "config.ini").write_text(self.cfg.to_ini())
        manifest["files"]["config.ini"] = _sha256(self.out / "config.ini")
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2))
        return manifest

    def run(self) -> EvalReport:
        splits = self.generate_data()
        selected = self.train_all(splits)
        report = self.evaluate_all(splits, {s: (b.model, b.lr) for s, (b, _) in selected.items()})
        self.write_manifest()
        return report
