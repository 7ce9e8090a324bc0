"""Pretraining loop: masked next-token loss, sqrt-decay LR schedule, AdamW.

One optimizer step per freshly generated batch; the epoch count and
batches-per-epoch come from the run config so full-budget and scaled
schedules share code.  All randomness is keyed by (seed, purpose, epoch,
index), which makes checkpoint resume reproduce the non-resumed metric
stream bitwise.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .codec import Vocabulary, build_vocabulary, episode_length
from .datagen import Batch, EpisodeSpec, InputDistribution, make_batch
from .errors import ConfigError
from .hypotheses import ClassTuple
from .nn import autodiff as ad
from .nn import kernels
from .nn.autodiff import Tensor
from .nn.checkpoint import load_model, save_model
from .nn.models import SequenceModel

__all__ = [
    "MASK_MODES",
    "TrainConfig",
    "TaskBundle",
    "RunRecord",
    "AdamW",
    "loss_mask",
    "token_loss",
    "eq1_decomposed_loss",
    "lr_at_epoch",
    "apply_update",
    "train_run",
]

log = logging.getLogger("hypolab")

MASK_MODES = ("all-tokens", "z-only", "query-only", "y-only")


def loss_mask(
    mode: str,
    length: int,
    y_positions: Sequence[int],
    z_position: int,
    query_start: int,
) -> np.ndarray:
    """Float mask over target positions t (the loss predicts token t from t').

    Position 0 has no preceding context and is never active.
    """
    if mode not in MASK_MODES:
        raise ConfigError(f"mask mode must be one of {MASK_MODES}, got {mode!r}")
    mask = np.zeros(length, dtype=np.float64)
    if mode == "all-tokens":
        mask[1:] = 1.0
    elif mode == "z-only":
        mask[z_position] = 1.0
    elif mode == "y-only":
        mask[list(y_positions)] = 1.0
    else:  # query-only: every context-query position plus the index token
        mask[max(1, query_start):] = 1.0
    if mask.sum() == 0:
        raise ConfigError(f"mask mode {mode!r} selects no positions for this episode shape")
    return mask


def token_loss(logits: Tensor, tokens: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean cross-entropy of next-token prediction at masked target positions.

    ``logits`` has one row per *input* position (the model is fed
    ``tokens[:, :-1]``); target position t is scored by logits row t-1.
    """
    tokens = np.asarray(tokens)
    mask = np.asarray(mask)
    if logits.shape[:-1] != tokens[:, 1:].shape:
        raise ValueError(
            f"logits {logits.shape} do not match {tokens.shape[1] - 1} target positions"
        )
    return ad.cross_entropy(logits, tokens[:, 1:], mask[1:])


def _log_probs(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def eq1_decomposed_loss(
    logits: np.ndarray, tokens: np.ndarray, y_positions: Sequence[int], z_position: int
) -> tuple[float, list[float]]:
    """Per-component losses: the identification term and one term per pair.

    Returns (z-position loss, [y-position losses]); their average equals the
    masked loss over exactly those K+1 positions.
    """
    logp = _log_probs(np.asarray(logits))
    tokens = np.asarray(tokens)

    def at(pos: int) -> float:
        rows = logp[:, pos - 1, :]
        return float(-rows[np.arange(tokens.shape[0]), tokens[:, pos]].mean())

    return at(z_position), [at(p) for p in y_positions]


def lr_at_epoch(epoch: int, peak_lr: float, warmup: int = 64, total: int = 768) -> float:
    """Linear warmup to the peak, then sqrt decay: peak * sqrt(warmup/epoch)."""
    if warmup < 1 or total < warmup:
        raise ConfigError(f"need 1 <= warmup <= total, got warmup={warmup} total={total}")
    if not 1 <= epoch <= total:
        raise ValueError(f"epoch {epoch} outside [1, {total}]")
    if epoch <= warmup:
        return peak_lr * epoch / warmup
    return peak_lr * float(np.sqrt(warmup / epoch))


class AdamW:
    """Adaptive-moment update with decoupled weight decay.

    beta = (0.9, 0.999), eps = 1e-8; decay multiplies parameters by
    (1 - lr * wd) independently of the gradient-based step.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        weight_decay: float = 0.0,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = params
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
        self.step_count += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1**self.step_count
        bc2 = 1.0 - b2**self.step_count
        for name, p in self.params.items():
            kernels.adamw_update(
                p.data,
                np.asarray(grads[name], dtype=p.data.dtype),
                self.m[name],
                self.v[name],
                lr=lr,
                beta1=b1,
                beta2=b2,
                eps=self.eps,
                weight_decay=self.weight_decay,
                bc1=bc1,
                bc2=bc2,
            )

    def state_dict(self) -> dict:
        return {"step": self.step_count, "m": self.m, "v": self.v}

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step"])
        for name in self.params:
            self.m[name] = np.ascontiguousarray(state["m"][name])
            self.v[name] = np.ascontiguousarray(state["v"][name])


def apply_update(
    model: SequenceModel,
    grads: dict[str, np.ndarray],
    lr: float,
    weight_decay: float,
    optimizer: AdamW | None = None,
) -> AdamW:
    """One AdamW step on the model; creates the optimizer when not supplied."""
    if optimizer is None:
        optimizer = AdamW(model.parameters(), weight_decay=weight_decay)
    optimizer.weight_decay = weight_decay
    optimizer.step(grads, lr)
    return optimizer


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batches_per_epoch: int
    batch_size: int = 16
    peak_lr: float = 2e-4
    warmup_epochs: int = 8
    weight_decay: float = 5e-4
    mask: str = "all-tokens"
    seed: int = 0
    eval_every: int = 1  # identification (z) eval cadence, epochs
    y_eval_every: int = 8  # label-prediction (y) eval cadence, epochs
    eval_episodes: int = 256
    final_eval_episodes: int = 1024

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batches_per_epoch < 1 or self.batch_size < 1:
            raise ConfigError("epochs, batches_per_epoch and batch_size must be >= 1")
        if self.warmup_epochs > self.epochs:
            raise ConfigError("warmup_epochs cannot exceed epochs")
        if self.peak_lr < 0 or self.weight_decay < 0:
            raise ConfigError("rates must be non-negative")
        if self.mask not in MASK_MODES:
            raise ConfigError(f"mask must be one of {MASK_MODES}")


@dataclass(frozen=True)
class TaskBundle:
    """Classes and episode parameters shared by a training run and its evals."""

    n: int
    K: int
    L: int
    train_classes: tuple[ClassTuple, ...]
    eval_splits: dict[str, tuple[ClassTuple, ...]] = field(default_factory=dict)
    distribution: InputDistribution | None = None
    slots: int | None = None  # None = L; 0 trains the no-prefix twin

    def vocabulary(self) -> Vocabulary:
        return build_vocabulary(self.n, self.L)

    @property
    def prefix_slots(self) -> int:
        return self.L if self.slots is None else self.slots

    def sequence_length(self) -> int:
        return episode_length(self.n, self.prefix_slots, self.K)

    def spec(self, classes: tuple[ClassTuple, ...], generation: str) -> EpisodeSpec:
        return EpisodeSpec(
            n=self.n,
            K=self.K,
            L=self.L,
            classes=classes,
            generation=generation,
            distribution=self.distribution,
            slots=self.slots,
        )


@dataclass
class RunRecord:
    """Per-epoch metrics plus the run's identity; persisted as JSONL + CSV."""

    meta: dict
    epochs: list[dict] = field(default_factory=list)

    @property
    def seed(self) -> int:
        return int(self.meta.get("seed", 0))

    @property
    def config_hash(self) -> str:
        return str(self.meta.get("config_hash", ""))

    def final(self) -> dict:
        if not self.epochs:
            raise ValueError("run record is empty")
        return self.epochs[-1]

    def series(self, split: str, metric: str) -> tuple[list[int], list[float]]:
        xs, ys = [], []
        for rec in self.epochs:
            value = rec["splits"].get(split, {}).get(metric) if split != "train_loss" else None
            if metric == "loss" and split == "train":
                value = rec.get("train_loss")
            if value is not None:
                xs.append(rec["epoch"])
                ys.append(value)
        return xs, ys

    @classmethod
    def load(cls, run_dir: str | Path) -> "RunRecord":
        run_dir = Path(run_dir)
        meta = json.loads((run_dir / "run.json").read_text())
        epochs = []
        record_path = run_dir / "record.jsonl"
        if record_path.exists():
            for line in record_path.read_text().splitlines():
                if line.strip():
                    epochs.append(json.loads(line))
        return cls(meta=meta, epochs=epochs)

    def metrics_rows(self) -> list[tuple[int, str, str, float, int]]:
        rows = []
        seed = self.seed
        for rec in self.epochs:
            e = rec["epoch"]
            rows.append((e, "train", "lr", rec["lr"], seed))
            rows.append((e, "train", "loss", rec["train_loss"], seed))
            for split, metrics in rec["splits"].items():
                for name, value in metrics.items():
                    if name == "y_accuracy":
                        for k, v in enumerate(value, start=1):
                            rows.append((e, split, f"y_accuracy_{k}", v, seed))
                    else:
                        rows.append((e, split, name, value, seed))
        return rows

    def write_metrics_csv(self, path: str | Path) -> None:
        with open(path, "w") as f:
            f.write("epoch,split,metric,value,seed\n")
            for row in self.metrics_rows():
                f.write(f"{row[0]},{row[1]},{row[2]},{row[3]},{row[4]}\n")


def _evaluate_splits(
    model: SequenceModel,
    bundle: TaskBundle,
    cfg: TrainConfig,
    epoch: int,
    *,
    with_y: bool,
    episodes: int,
) -> dict[str, dict]:
    from .evaluation import eval_model  # local import to avoid a module cycle

    out: dict[str, dict] = {}
    splits = {"train": bundle.train_classes, **bundle.eval_splits}
    vocab = bundle.vocabulary()
    for idx, (name, classes) in enumerate(splits.items()):
        metrics: dict = {}
        z_spec = bundle.spec(classes, "opt-t")
        report = eval_model(
            model,
            z_spec,
            episodes,
            seed=cfg.seed,
            seed_path=("eval-z", epoch, idx),
            vocab=vocab,
        )
        metrics["z_accuracy"] = report.z_accuracy
        if with_y:
            y_spec = bundle.spec(classes, "iid")
            report = eval_model(
                model,
                y_spec,
                episodes,
                seed=cfg.seed,
                seed_path=("eval-y", epoch, idx),
                vocab=vocab,
            )
            metrics["y_accuracy"] = list(report.per_position_y)
            metrics["loss"] = report.mean_loss
        out[name] = metrics
    return out


def train_run(
    bundle: TaskBundle,
    model: SequenceModel,
    cfg: TrainConfig,
    out_dir: str | Path,
    *,
    resume: bool = False,
    run_meta: dict | None = None,
) -> RunRecord:
    """Run the pretraining loop, evaluating and checkpointing per epoch.

    Fresh i.i.d. batches are generated online from the training classes; the
    held-out splits are evaluated with teaching-set episodes for
    identification accuracy and i.i.d. episodes for per-position label
    accuracy.  The run directory holds run.json, record.jsonl, metrics.csv
    and checkpoints/{last,final}.npz, and a completed run can be resumed (or
    extended) from its last checkpoint.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    record_path = out_dir / "record.jsonl"

    expected_len = bundle.sequence_length()
    if model.config.max_len < expected_len - 1:
        raise ConfigError(
            f"model max_len={model.config.max_len} below episode input length {expected_len - 1}"
        )
    if model.config.vocab != bundle.vocabulary().size:
        raise ConfigError(
            f"model vocab={model.config.vocab} but episodes need {bundle.vocabulary().size}"
        )

    meta = dict(run_meta or {})
    meta.setdefault("seed", cfg.seed)
    meta["train_config"] = asdict(cfg)
    meta["model_config"] = model.config.to_dict()

    optimizer = AdamW(model.parameters(), weight_decay=cfg.weight_decay)
    start_epoch = 0
    records: list[dict] = []
    last_ckpt = ckpt_dir / "last.npz"
    if resume and last_ckpt.exists():
        loaded, opt_state, extra = load_model(last_ckpt, expect_config=model.config)
        for name, p in model.parameters().items():
            p.data = loaded.parameters()[name].data
        if opt_state is not None:
            optimizer.load_state_dict(opt_state)
        start_epoch = int(extra.get("epoch", 0))
        if record_path.exists():
            for line in record_path.read_text().splitlines():
                if line.strip():
                    rec = json.loads(line)
                    if rec["epoch"] <= start_epoch:
                        records.append(rec)
        log.info("resuming %s from epoch %d", out_dir, start_epoch)

    (out_dir / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    with open(record_path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")

    train_spec = bundle.spec(bundle.train_classes, "iid")
    vocab = bundle.vocabulary()
    mask: np.ndarray | None = None

    for epoch in range(start_epoch + 1, cfg.epochs + 1):
        lr = lr_at_epoch(epoch, cfg.peak_lr, cfg.warmup_epochs, cfg.epochs)
        t0 = time.time()
        loss_sum = 0.0
        for b in range(cfg.batches_per_epoch):
            batch = make_batch(
                train_spec, cfg.batch_size, cfg.seed, path=("batch", epoch, b), vocab=vocab
            )
            if mask is None:
                mask = loss_mask(
                    cfg.mask,
                    batch.tokens.shape[1],
                    batch.y_target_positions,
                    batch.z_target_position,
                    batch.query_start,
                )
            logits = model.forward(batch.tokens[:, :-1])
            loss = token_loss(logits, batch.tokens, mask)
            value = loss.item()
            if not np.isfinite(value):
                raise FloatingPointError(
                    f"non-finite loss {value} at epoch {epoch} batch {b}"
                )
            loss.backward()
            grads = {k: p.grad for k, p in model.parameters().items()}
            optimizer.step(grads, lr)
            model.zero_grad()
            loss_sum += value

        is_final = epoch == cfg.epochs
        rec: dict = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": loss_sum / cfg.batches_per_epoch,
            "splits": {},
        }
        if is_final or epoch % cfg.eval_every == 0:
            with_y = is_final or (cfg.y_eval_every > 0 and epoch % cfg.y_eval_every == 0)
            episodes = cfg.final_eval_episodes if is_final else cfg.eval_episodes
            rec["splits"] = _evaluate_splits(
                model, bundle, cfg, epoch, with_y=with_y, episodes=episodes
            )
            save_model(
                model,
                last_ckpt,
                optimizer_state=optimizer.state_dict(),
                extra={"epoch": epoch, "seed": cfg.seed},
            )
        records.append(rec)
        with open(record_path, "a") as f:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
        summary = " ".join(
            f"{name}.z={m['z_accuracy']:.3f}" for name, m in rec["splits"].items()
        )
        log.info(
            "epoch %d/%d loss=%.4f lr=%.2e %s (%.1fs)",
            epoch, cfg.epochs, rec["train_loss"], lr, summary, time.time() - t0,
        )

    run = RunRecord(meta=meta, epochs=records)
    run.write_metrics_csv(out_dir / "metrics.csv")
    save_model(
        model,
        ckpt_dir / "final.npz",
        optimizer_state=optimizer.state_dict(),
        extra={"epoch": cfg.epochs, "seed": cfg.seed},
    )
    return run
