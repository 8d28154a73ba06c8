"""Band-weighted MSE training loop, dataset split, and the evaluation harness.

The loss is a mean over every raster pixel of alpha_i * (y_i - yhat_i)^2,
where alpha_i is 10 inside a narrow elevation band around the horizon and
1 elsewhere.  Training uses Adam with a two-stage learning rate (1e-3 for
the first ten epochs, 1e-4 afterwards), seeded per-epoch shuffling, and
best-validation checkpoint selection.  Evaluation reports per-scenario and
overall MMSE next to an all-zeros baseline, matching the structure of the
headline comparison table.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from lidarsynth import formats
from lidarsynth import tensor as T
from lidarsynth.geometry import GridSpec, PolarRaster
from lidarsynth.model import MODALITIES, Model, ModelConfig
from lidarsynth.optim import adam_step
from lidarsynth.synthgen import RadarParams, build_sample, generate_scene, resolve_profiles
from lidarsynth.tensor import Tensor

log = logging.getLogger(__name__)

__all__ = [
    "Sample",
    "SplitSpec",
    "TrainConfig",
    "EvalReport",
    "Checkpoint",
    "EpochStats",
    "TrainResult",
    "TrainingDiverged",
    "weight_mask",
    "mmse_loss",
    "mmse_numpy",
    "lr_for_epoch",
    "split",
    "train",
    "evaluate",
    "baseline_all_zeros",
    "ablation_no_fusion",
    "model_from_checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "synthetic_dataset",
    "load_dataset",
]


@dataclass
class Sample:
    """One aligned multimodal observation with its LiDAR target."""

    camera: np.ndarray
    depth: np.ndarray
    range_angle: np.ndarray
    range_velocity: np.ndarray
    target: PolarRaster
    scenario_id: str

    def modality(self, name: str) -> np.ndarray:
        if name not in MODALITIES:
            raise KeyError(f"unknown modality {name!r}")
        return getattr(self, name)


@dataclass(frozen=True)
class SplitSpec:
    """Sequential per-scenario split fractions (no shuffling across boundaries)."""

    train: float = 0.6
    val: float = 0.2
    test: float = 0.2

    def __post_init__(self):
        if min(self.train, self.val, self.test) < 0.0:
            raise ValueError("split fractions must be non-negative")
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 20
    lr_early: float = 1e-3
    lr_late: float = 1e-4
    lr_switch_epoch: int = 10  # last epoch (1-based) that still uses lr_early
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    band: tuple[float, float] = (-1.71875, 2.1875)
    alpha: float = 10.0
    normalize_ranges: bool = False

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 (batch norm)")
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.band[0] >= self.band[1]:
            raise ValueError(f"empty weight band {self.band}")
        if self.alpha <= 0.0:
            raise ValueError("alpha must be positive")


def lr_for_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for a 1-based epoch index."""
    if epoch < 1:
        raise ValueError("epochs are 1-based")
    return cfg.lr_early if epoch <= cfg.lr_switch_epoch else cfg.lr_late


# -- loss ---------------------------------------------------------------------


def weight_mask(grid: GridSpec, band: tuple[float, float], alpha: float) -> np.ndarray:
    """Per-row weights: alpha where the row's elevation center falls in [lo, hi)."""
    lo, hi = band
    if lo >= hi:
        raise ValueError(f"empty band {band}")
    if lo < grid.phi_lo or hi > grid.phi_hi:
        raise ValueError(f"band {band} outside grid span [{grid.phi_lo}, {grid.phi_hi})")
    centers = grid.row_centers()
    return np.where((centers >= lo) & (centers < hi), alpha, 1.0).astype(np.float32)


def mmse_loss(pred: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean over all pixels of mask-weighted squared error; differentiable in pred.

    pred is [rows, cols] or [batch, rows, cols]; mask is one weight per row.
    """
    target = np.asarray(target, dtype=np.float32)
    if pred.shape != target.shape:
        raise ValueError(f"pred shape {pred.shape} vs target {target.shape}")
    n_rows = pred.shape[-2]
    mask = np.asarray(mask, dtype=np.float32)
    if mask.shape != (n_rows,):
        raise ValueError(f"mask must have one weight per row, got {mask.shape}")
    w = Tensor(mask.reshape(n_rows, 1))
    diff = T.sub(pred, Tensor(target))
    return T.mean(T.mul(T.mul(diff, diff), w))


def mmse_numpy(pred: np.ndarray, target: np.ndarray, mask: np.ndarray) -> float:
    """Plain-array twin of mmse_loss for evaluation and oracles."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"pred shape {pred.shape} vs target {target.shape}")
    w = np.asarray(mask, dtype=np.float64).reshape(-1, 1)
    return float(np.mean(w * (pred - target) ** 2))


# -- splitting ----------------------------------------------------------------


def split(samples: list[Sample], spec: SplitSpec = SplitSpec()) -> tuple[list[Sample], list[Sample], list[Sample]]:
    """Per-scenario sequential split: first train fraction, then val, rest test.

    Counts use floor for train and val; the remainder goes to test.  Original
    sample order is preserved inside every part.
    """
    by_scenario: dict[str, list[Sample]] = {}
    for s in samples:
        by_scenario.setdefault(s.scenario_id, []).append(s)
    tr: list[Sample] = []
    va: list[Sample] = []
    te: list[Sample] = []
    for group in by_scenario.values():
        n = len(group)
        n_tr = int(np.floor(spec.train * n))
        n_va = int(np.floor(spec.val * n))
        tr.extend(group[:n_tr])
        va.extend(group[n_tr : n_tr + n_va])
        te.extend(group[n_tr + n_va :])
    return tr, va, te


# -- training -----------------------------------------------------------------


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; training was aborted."""


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    bn_state: dict[str, np.ndarray]
    epoch: int
    val_mmse: float


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    lr: float
    train_mmse: float
    val_mmse: float


@dataclass
class TrainResult:
    best: Checkpoint
    final: Checkpoint
    history: list[EpochStats]
    model: Model  # carries the final parameters


def _sample_arrays(s: Sample) -> dict[str, np.ndarray]:
    return {name: s.modality(name) for name in MODALITIES}


def _batch_arrays(samples: list[Sample], idx: np.ndarray) -> dict[str, np.ndarray]:
    return {
        name: np.stack([samples[i].modality(name) for i in idx]) for name in MODALITIES
    }


def _snapshot(model: Model, epoch: int, val_mmse: float) -> Checkpoint:
    return Checkpoint(
        params=model.store.copy_values(),
        bn_state=model.bn_state_arrays(),
        epoch=epoch,
        val_mmse=val_mmse,
    )


def _cached_embeddings(model: Model, samples: list[Sample]) -> np.ndarray:
    """Precompute [N, 4, 768] embeddings once when every encoder is frozen."""
    out = np.empty((len(samples), len(MODALITIES), 768), dtype=np.float32)
    with T.no_grad():
        for i, s in enumerate(samples):
            out[i] = model.embed(_sample_arrays(s)).data
    return out


def _eval_mmse(
    model: Model,
    samples: list[Sample],
    targets: np.ndarray,
    mask: np.ndarray,
    batch_size: int,
    embeddings: np.ndarray | None = None,
) -> float:
    """Mean training-unit MMSE over a split, in eval mode, without gradients."""
    was_training = model.training
    model.eval_mode()
    total = 0.0
    with T.no_grad():
        for start in range(0, len(samples), batch_size):
            idx = np.arange(start, min(start + batch_size, len(samples)))
            if embeddings is not None:
                out = model.forward_batch(embeddings=Tensor(embeddings[idx]))
            else:
                out = model.forward_batch(_batch_arrays(samples, idx))
            total += mmse_numpy(out.data, targets[idx], mask) * len(idx)
    if was_training:
        model.train_mode()
    return total / max(len(samples), 1)


def train(
    dataset: list[Sample],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    split_spec: SplitSpec = SplitSpec(),
) -> TrainResult:
    """Mini-batch Adam on the band-weighted loss; returns best and final states.

    The dataset is split internally (sequential per scenario).  Batches are
    drawn in a seeded shuffled order each epoch; a trailing short batch is
    kept only if it has at least 2 samples.  Non-finite loss aborts.
    """
    tr, va, _ = split(dataset, split_spec)
    if not tr:
        raise ValueError("training split is empty")
    grid = model_cfg.grid
    mask = weight_mask(grid, train_cfg.band, train_cfg.alpha)
    scale = 1.0 / grid.max_range if train_cfg.normalize_ranges else 1.0

    seeds = np.random.SeedSequence(train_cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    dropout_rng = np.random.default_rng(seeds[1])

    model = Model(model_cfg)
    model.train_mode(rng=dropout_rng)

    targets_tr = np.stack([s.target.data for s in tr]).astype(np.float32) * scale
    targets_va = (
        np.stack([s.target.data for s in va]).astype(np.float32) * scale
        if va
        else np.zeros((0,) + targets_tr.shape[1:], dtype=np.float32)
    )

    frozen = all(model_cfg.encoder(m).frozen for m in MODALITIES)
    emb_tr = _cached_embeddings(model, tr) if frozen else None
    emb_va = _cached_embeddings(model, va) if frozen and va else None

    history: list[EpochStats] = []
    best: Checkpoint | None = None
    n = len(tr)
    for epoch in range(1, train_cfg.epochs + 1):
        lr = lr_for_epoch(train_cfg, epoch)
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        seen = 0
        for start in range(0, n, train_cfg.batch_size):
            idx = order[start : start + train_cfg.batch_size]
            if len(idx) < 2:
                break  # batch norm needs at least 2 samples
            model.store.zero_grad()
            if emb_tr is not None:
                out = model.forward_batch(embeddings=Tensor(emb_tr[idx]))
            else:
                out = model.forward_batch(_batch_arrays(tr, idx))
            loss = mmse_loss(out, targets_tr[idx], mask)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss {value} at epoch {epoch}, batch start {start}"
                )
            loss.backward()
            adam_step(model.store, lr, train_cfg.beta1, train_cfg.beta2, train_cfg.eps)
            loss_sum += value * len(idx)
            seen += len(idx)
        train_mmse = loss_sum / max(seen, 1)
        val_mmse = (
            _eval_mmse(model, va, targets_va, mask, train_cfg.batch_size, emb_va)
            if va
            else train_mmse
        )
        history.append(EpochStats(epoch=epoch, lr=lr, train_mmse=train_mmse, val_mmse=val_mmse))
        log.debug("epoch %d lr %.2g train %.6f val %.6f", epoch, lr, train_mmse, val_mmse)
        if best is None or val_mmse < best.val_mmse:
            best = _snapshot(model, epoch, val_mmse)

    final = _snapshot(model, train_cfg.epochs, history[-1].val_mmse)
    model.eval_mode()
    return TrainResult(best=best, final=final, history=history, model=model)


# -- evaluation ---------------------------------------------------------------


@dataclass
class EvalReport:
    """Per-scenario and overall MMSE, with the all-zeros baseline attached."""

    per_scenario: dict[str, float]
    overall: float
    baseline_zeros: float
    ablation_no_fusion: float | None = None

    def to_text(self) -> str:
        lines = [f"{sid}\t{v:.6f}" for sid, v in self.per_scenario.items()]
        lines.append(f"overall\t{self.overall:.6f}")
        lines.append(f"baseline_zeros\t{self.baseline_zeros:.6f}")
        if self.ablation_no_fusion is not None:
            lines.append(f"ablation_no_fusion\t{self.ablation_no_fusion:.6f}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        per: dict[str, float] = {}
        overall = baseline = ablation = None
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition("\t")
            if not value:
                raise ValueError(f"malformed report line {line!r}")
            v = float(value)
            if key == "overall":
                overall = v
            elif key == "baseline_zeros":
                baseline = v
            elif key == "ablation_no_fusion":
                ablation = v
            else:
                per[key] = v
        if overall is None or baseline is None:
            raise ValueError("report missing overall or baseline_zeros line")
        return cls(per, overall, baseline, ablation)


def model_from_checkpoint(model_cfg: ModelConfig, ckpt: Checkpoint) -> Model:
    model = Model(model_cfg)
    model.store.load_arrays(ckpt.params)
    model.load_bn_state_arrays(ckpt.bn_state)
    return model.eval_mode()


_META_NAME = "meta.state"
_ADAM_PREFIX = "adam."


def save_checkpoint(
    path,
    config_text: str,
    ckpt: Checkpoint,
    adam: dict[str, np.ndarray] | None = None,
) -> None:
    """Write parameters, running statistics, and (optionally) Adam state."""
    tensors: dict[str, np.ndarray] = dict(ckpt.params)
    tensors.update(ckpt.bn_state)
    tensors[_META_NAME] = np.array([float(ckpt.epoch), ckpt.val_mmse], dtype=np.float32)
    if adam:
        for name, arr in adam.items():
            tensors[_ADAM_PREFIX + name] = arr
    formats.write_lsck(path, config_text, tensors)


def load_checkpoint(path) -> tuple[str, Checkpoint, dict[str, np.ndarray]]:
    """Read back (config text, checkpoint, adam state) from an LSCK file."""
    config_text, tensors = formats.read_lsck(path)
    adam = {k[len(_ADAM_PREFIX):]: v for k, v in tensors.items() if k.startswith(_ADAM_PREFIX)}
    meta = tensors.get(_META_NAME)
    epoch, val = (int(meta[0]), float(meta[1])) if meta is not None else (0, float("nan"))
    params: dict[str, np.ndarray] = {}
    bn: dict[str, np.ndarray] = {}
    for name, arr in tensors.items():
        if name.startswith(_ADAM_PREFIX) or name == _META_NAME:
            continue
        if ".running_mean" in name or ".running_var" in name:
            bn[name] = arr
        else:
            params[name] = arr
    return config_text, Checkpoint(params=params, bn_state=bn, epoch=epoch, val_mmse=val), adam


def _predict_meters(
    model: Model,
    samples: list[Sample],
    batch_size: int,
    denormalize: bool,
) -> np.ndarray:
    grid = model.cfg.grid
    scale = grid.max_range if denormalize else 1.0
    preds = []
    model.eval_mode()
    with T.no_grad():
        for start in range(0, len(samples), batch_size):
            idx = np.arange(start, min(start + batch_size, len(samples)))
            out = model.forward_batch(_batch_arrays(samples, idx))
            preds.append(np.clip(out.data * scale, 0.0, grid.max_range))
    return np.concatenate(preds, axis=0)


def evaluate(
    model: Model,
    samples: list[Sample],
    train_cfg: TrainConfig,
    batch_size: int = 32,
) -> EvalReport:
    """Eval-mode forward per sample; MMSE in meters, grouped by scenario."""
    if not samples:
        raise ValueError("evaluation split is empty")
    grid = model.cfg.grid
    mask = weight_mask(grid, train_cfg.band, train_cfg.alpha)
    preds = _predict_meters(model, samples, batch_size, train_cfg.normalize_ranges)
    per_sample = np.array(
        [mmse_numpy(preds[i], s.target.data, mask) for i, s in enumerate(samples)]
    )
    per_scenario: dict[str, float] = {}
    counts: dict[str, int] = {}
    for value, s in zip(per_sample, samples):
        per_scenario[s.scenario_id] = per_scenario.get(s.scenario_id, 0.0) + value
        counts[s.scenario_id] = counts.get(s.scenario_id, 0) + 1
    per_scenario = {k: v / counts[k] for k, v in per_scenario.items()}
    return EvalReport(
        per_scenario=per_scenario,
        overall=float(per_sample.mean()),
        baseline_zeros=baseline_all_zeros(samples, grid, train_cfg.band, train_cfg.alpha),
    )


def baseline_all_zeros(
    samples: list[Sample],
    grid: GridSpec,
    band: tuple[float, float] = TrainConfig.band,
    alpha: float = TrainConfig.alpha,
) -> float:
    """MMSE of predicting zero everywhere, averaged over the split."""
    if not samples:
        raise ValueError("empty split")
    mask = weight_mask(grid, band, alpha)
    zeros = np.zeros((grid.n_rows, grid.n_cols), dtype=np.float32)
    return float(np.mean([mmse_numpy(zeros, s.target.data, mask) for s in samples]))


def ablation_no_fusion(
    dataset: list[Sample],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    split_spec: SplitSpec = SplitSpec(),
) -> tuple[EvalReport, TrainResult]:
    """Train and evaluate the variant that skips the fusion encoder layer.

    The four embeddings are concatenated and linearly projected straight to
    the decoder latent; everything else (data, split, schedule) is identical.
    """
    cfg = replace(model_cfg, fusion_bypass=True)
    result = train(dataset, cfg, train_cfg, split_spec)
    _, _, test = split(dataset, split_spec)
    model = model_from_checkpoint(cfg, result.best)
    report = evaluate(model, test, train_cfg, train_cfg.batch_size)
    return report, result


# -- dataset assembly ---------------------------------------------------------


def synthetic_dataset(
    n: int,
    profile_name: str,
    grid: GridSpec,
    radar: RadarParams,
    cam_width: int,
    cam_height: int,
    seed: int = 0,
) -> list[Sample]:
    """Generate n aligned samples; "mixed" cycles the four profiles round-robin."""
    profiles = resolve_profiles(profile_name)
    out = []
    for i in range(n):
        prof = profiles[i % len(profiles)]
        scene = generate_scene(seed + i, prof)
        radar_i = replace(radar, noise_sigma=prof.noise_sigma)
        arrays = build_sample(scene, grid, radar_i, cam_width, cam_height, seed + i)
        out.append(
            Sample(
                camera=arrays["camera"],
                depth=arrays["depth"],
                range_angle=arrays["range_angle"],
                range_velocity=arrays["range_velocity"],
                target=PolarRaster(grid=grid, data=arrays["target_raster"]),
                scenario_id=prof.name,
            )
        )
    return out


def load_dataset(root, grid: GridSpec) -> list[Sample]:
    """Read sample_* directories (LSTF arrays plus meta.txt) under root."""
    root = Path(root)
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("sample_"))
    if not dirs:
        raise ValueError(f"no sample_* directories under {root}")
    samples = []
    for d in dirs:
        arrays = {}
        for name in ("camera", "depth", "range_angle", "range_velocity", "target_raster"):
            path = d / f"{name}.lstf"
            if not path.exists():
                raise formats.MalformedFileError(f"missing {path}")
            arrays[name] = formats.read_lstf(path)
        scenario = ""
        meta_path = d / "meta.txt"
        if meta_path.exists():
            for line in meta_path.read_text(encoding="utf-8").splitlines():
                key, _, value = line.partition("=")
                if key.strip() == "scenario":
                    scenario = value.strip()
        samples.append(
            Sample(
                camera=arrays["camera"],
                depth=arrays["depth"],
                range_angle=arrays["range_angle"],
                range_velocity=arrays["range_velocity"],
                target=PolarRaster(grid=grid, data=arrays["target_raster"]),
                scenario_id=scenario,
            )
        )
    return samples
