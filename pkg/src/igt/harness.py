"""Training, evaluation and ablation runs.

A run is fully determined by (TrainConfig, dataset): bags are visited in a
seeded shuffled order, one optimizer step per bag, with per-epoch
validation; the checkpoint with the best validation accuracy (earliest
epoch on ties) is retained and scored on the test split.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .checkpoint import load_into_model, save_checkpoint
from .data import BagDataset, BagRecord
from .errors import ConfigurationError, TrainingError
from .graph import GraphConfig, WsiGraph, build_graph
from .metrics import EvalReport, evaluate_predictions
from .model import IgtModel
from .optim import LrSchedule, RAdam, lr_at
from .seeding import rng_for
from .tensor import DTYPES, Tensor, backward, no_grad

MODES = ("full", "no-attn", "no-gcn")


@dataclass
class TrainConfig:
    """Every run hyperparameter, serializable as flat key=value text."""

    d: int = 256
    d_in: int | None = None          # resolved from the dataset when unset
    n_blocks: int = 2
    n_heads: int = 8
    k: int = 8
    d_att: int = 128
    mode: str = "full"
    epochs: int = 40
    lr_initial: float = 1e-3
    lr_decayed: float = 1e-4
    lr_decay_epoch: int = 20
    weight_decay: float = 1e-5
    batch_size: int = 1              # fixed; no gradient accumulation
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    genconv_beta: float = 1.0
    genconv_epsilon: float = 1e-7
    seed: int = 0
    precision: str = "f32"
    kernel: str = "naive"
    kernel_block: int = 128
    repeats: int = 3
    neighbor_source: str = "coords"
    saturation_threshold: int = 15   # slide background filter level; recorded only

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.precision not in DTYPES:
            raise ConfigurationError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.kernel not in ("naive", "tiled"):
            raise ConfigurationError(f"kernel must be naive or tiled, got {self.kernel!r}")
        if self.batch_size != 1:
            raise ConfigurationError("batch_size is fixed at 1")
        for name in ("d", "n_blocks", "n_heads", "k", "d_att", "epochs", "kernel_block", "repeats"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.d % self.n_heads != 0:
            raise ConfigurationError(f"d={self.d} not divisible by n_heads={self.n_heads}")

    def to_flat(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_flat(cls, text: str) -> "TrainConfig":
        fields_by_name = {f.name: f for f in dataclasses.fields(cls)}
        values: dict = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"config line {lineno}: expected key=value, got {raw!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            val = val.strip()
            if key not in fields_by_name:
                raise ConfigurationError(f"config line {lineno}: unknown key {key!r}")
            values[key] = _parse_value(fields_by_name[key], val, lineno)
        return cls(**values)

    def config_hash(self) -> str:
        canonical = "\n".join(sorted(self.to_flat().splitlines()))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _parse_value(f: dataclasses.Field, val: str, lineno: int):
    base = f.type
    try:
        if base in ("int", "int | None"):
            return int(val)
        if base == "float":
            return float(val)
        return val
    except ValueError:
        raise ConfigurationError(f"config line {lineno}: cannot parse {val!r} for key {f.name!r}")


@dataclass
class RunRecord:
    config_hash: str
    mode: str
    seed: int
    train_loss: list[float]
    val_accuracy: list[float]
    val_auroc: list[float]
    selected_epoch: int
    test: EvalReport
    wall_clock: float

    def core_dict(self) -> dict:
        """Everything except wall-clock; this is the determinism contract."""
        return {
            "config_hash": self.config_hash,
            "mode": self.mode,
            "seed": self.seed,
            "train_loss": self.train_loss,
            "val_accuracy": self.val_accuracy,
            "val_auroc": self.val_auroc,
            "selected_epoch": self.selected_epoch,
            "test": self.test.to_dict(),
        }

    def to_dict(self) -> dict:
        d = self.core_dict()
        d["wall_clock"] = self.wall_clock
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def resolve_config(cfg: TrainConfig, data: BagDataset) -> TrainConfig:
    """Fill dataset-dependent fields and check consistency."""
    if cfg.d_in is None:
        cfg = replace(cfg, d_in=data.d_in)
    elif cfg.d_in != data.d_in:
        raise ConfigurationError(f"config d_in={cfg.d_in} but dataset d_in={data.d_in}")
    return cfg


def record_to_graph(rec: BagRecord, gcfg: GraphConfig, dtype: np.dtype) -> WsiGraph:
    features = Tensor(np.ascontiguousarray(rec.features.astype(dtype)))
    return build_graph(features, rec.coords, rec.label, gcfg, name=rec.name)


def build_split_graphs(cfg: TrainConfig, data: BagDataset) -> dict[str, list[WsiGraph]]:
    gcfg = GraphConfig(k=cfg.k, neighbor_source=cfg.neighbor_source)
    dtype = np.dtype(DTYPES[cfg.precision])
    return {split: [record_to_graph(r, gcfg, dtype) for r in records]
            for split, records in data.splits.items()}


def build_model(cfg: TrainConfig, n_classes: int) -> IgtModel:
    if cfg.d_in is None:
        raise ConfigurationError("d_in unresolved; call resolve_config first")
    return IgtModel(d_in=cfg.d_in, n_classes=n_classes, d=cfg.d, n_blocks=cfg.n_blocks,
                    n_heads=cfg.n_heads, d_att=cfg.d_att, mode=cfg.mode, seed=cfg.seed,
                    beta=cfg.genconv_beta, epsilon=cfg.genconv_epsilon,
                    kernel=cfg.kernel, block=cfg.kernel_block,
                    dtype=np.dtype(DTYPES[cfg.precision]))


def evaluate_model(model: IgtModel, graphs: list[WsiGraph], n_classes: int) -> EvalReport:
    """Deterministic inference over a list of bags."""
    logits = np.zeros((len(graphs), n_classes), dtype=np.float64)
    labels = np.zeros(len(graphs), dtype=np.int64)
    with no_grad():
        for i, g in enumerate(graphs):
            logits[i] = model.forward(g).data[0]
            labels[i] = g.label
    return evaluate_predictions(logits, labels, n_classes)


def train(cfg: TrainConfig, data: BagDataset, out_dir: str | Path | None = None,
          log=None) -> RunRecord:
    """Run the full loop; returns the record and optionally writes artifacts.

    Artifacts written under out_dir: checkpoint.igt1 (best-validation
    parameters), run_record.json, config.cfg (the resolved flat config).
    """
    for split in ("train", "val", "test"):
        if not data.splits.get(split):
            raise ConfigurationError(f"dataset split {split!r} is empty")
    cfg = resolve_config(cfg, data)
    started = time.perf_counter()

    graphs = build_split_graphs(cfg, data)
    n_classes = len(data.classes)
    model = build_model(cfg, n_classes)
    opt = RAdam(model.parameters(), beta1=cfg.beta1, beta2=cfg.beta2,
                eps=cfg.adam_eps, weight_decay=cfg.weight_decay)
    sched = LrSchedule(initial=cfg.lr_initial, decayed=cfg.lr_decayed,
                       decay_epoch=cfg.lr_decay_epoch)

    train_graphs = graphs["train"]
    train_loss: list[float] = []
    val_accuracy: list[float] = []
    val_auroc: list[float] = []
    best_acc = -1.0
    best_epoch = -1
    best_state: dict[str, np.ndarray] = {}

    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, sched)
        order = rng_for(cfg.seed, "shuffle", epoch).permutation(len(train_graphs))
        total = 0.0
        for idx in order:
            bag = train_graphs[idx]
            loss = model.loss(bag)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, bag {bag.name!r}")
            backward(loss)
            opt.step(lr)
            opt.zero_grad()
            total += value
        train_loss.append(total / len(train_graphs))

        report = evaluate_model(model, graphs["val"], n_classes)
        val_accuracy.append(report.accuracy)
        val_auroc.append(report.auroc)
        if report.accuracy > best_acc:
            best_acc = report.accuracy
            best_epoch = epoch
            best_state = model.state_arrays()
        if log is not None:
            log(f"epoch {epoch:3d}  lr {lr:.1e}  loss {train_loss[-1]:.4f}  "
                f"val acc {report.accuracy:.4f}  val auroc {report.auroc:.4f}")

    model.load_state_arrays(best_state)
    test_report = evaluate_model(model, graphs["test"], n_classes)
    record = RunRecord(config_hash=cfg.config_hash(), mode=cfg.mode, seed=cfg.seed,
                       train_loss=train_loss, val_accuracy=val_accuracy,
                       val_auroc=val_auroc, selected_epoch=best_epoch,
                       test=test_report, wall_clock=time.perf_counter() - started)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "checkpoint.igt1", model.state_arrays())
        (out / "run_record.json").write_text(record.to_json() + "\n")
        (out / "config.cfg").write_text(cfg.to_flat())
    return record


def evaluate_checkpoint(checkpoint_path: str | Path, cfg: TrainConfig, data: BagDataset,
                        split: str = "test") -> EvalReport:
    """Score a stored checkpoint on one dataset split."""
    cfg = resolve_config(cfg, data)
    if split not in data.splits:
        raise ConfigurationError(f"unknown split {split!r}, have {sorted(data.splits)}")
    model = build_model(cfg, len(data.classes))
    load_into_model(checkpoint_path, model)
    graphs = [record_to_graph(r, GraphConfig(k=cfg.k, neighbor_source=cfg.neighbor_source),
                              np.dtype(DTYPES[cfg.precision]))
              for r in data.splits[split]]
    return evaluate_model(model, graphs, len(data.classes))


@dataclass
class AblationResult:
    repeats: int
    modes: dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"repeats": self.repeats, "modes": self.modes}

    def table(self) -> str:
        lines = [f"{'mode':<10} {'ACC':>8} {'AUROC':>8}"]
        for mode, row in self.modes.items():
            lines.append(f"{mode:<10} {row['acc_mean']:>8.4f} {row['auroc_mean']:>8.4f}")
        return "\n".join(lines)


def ablate(cfg: TrainConfig, data: BagDataset, modes: tuple[str, ...] = MODES,
           log=None) -> AblationResult:
    """Train every mode with shared seeds; metrics averaged over repeats.

    Repeat r of every mode uses seed cfg.seed + r, so data order and the
    initialization streams of all shared parameters are identical across
    modes; the branch wiring is the only varying factor.
    """
    if cfg.repeats < 1:
        raise ConfigurationError("repeats must be >= 1")
    result = AblationResult(repeats=cfg.repeats)
    for mode in modes:
        accs, aurocs, records = [], [], []
        for r in range(cfg.repeats):
            run_cfg = replace(cfg, mode=mode, seed=cfg.seed + r)
            rec = train(run_cfg, data)
            if log is not None:
                log(f"{mode} seed {run_cfg.seed}: test acc {rec.test.accuracy:.4f} "
                    f"auroc {rec.test.auroc:.4f} (selected epoch {rec.selected_epoch})")
            accs.append(rec.test.accuracy)
            aurocs.append(rec.test.auroc)
            records.append(rec.core_dict())
        result.modes[mode] = {
            "acc_mean": float(np.mean(accs)),
            "auroc_mean": float(np.mean(aurocs)),
            "acc_runs": accs,
            "auroc_runs": aurocs,
            "records": records,
        }
    return result
