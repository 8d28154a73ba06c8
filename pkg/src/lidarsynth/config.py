"""Line-oriented text configuration: `key = value`, `#` comments, dotted keys.

Every key has a documented default; unknown keys are rejected.  The same
text round-trips through checkpoints, so a training run's full recipe can
be recovered from its LSCK file.  Ranges with three fields use `lo:hi:step`
notation, elevation regions are separated by `;`, and lists use commas.
"""

from __future__ import annotations

from dataclasses import dataclass

from lidarsynth.geometry import GridSpec
from lidarsynth.model import (
    DecoderConfig,
    EncoderConfig,
    FusionConfig,
    MODALITIES,
    ModelConfig,
)
from lidarsynth.synthgen import RadarParams
from lidarsynth.training import SplitSpec, TrainConfig

__all__ = [
    "AppConfig",
    "parse_config",
    "config_text",
    "default_config",
    "toy_config",
    "TOY_OVERRIDES",
]

# (key, default, doc) in canonical output order
_REGISTRY: list[tuple[str, str, str]] = [
    ("grid.theta", "-180:180:0.25", "azimuth span and bin width, degrees (lo:hi:step)"),
    (
        "grid.phi_regions",
        "-60:-5:0.25;-5:5:0.015625;5:62:0.25",
        "contiguous elevation regions, each lo:hi:step in degrees, ascending",
    ),
    ("grid.max_range", "100.0", "sensor range cap in meters; 0 in a raster means no return"),
    ("radar.n_rx", "4", "receive antennas (angle axis of the cube)"),
    ("radar.n_samples", "256", "samples per chirp (range axis)"),
    ("radar.n_chirps", "128", "chirps per frame (velocity axis)"),
    ("radar.noise_sigma", "0.02", "circular Gaussian noise level of the simulated cube"),
    ("radar.r_max", "100.0", "range that maps to normalized frequency 1"),
    ("radar.v_max", "30.0", "radial speed that maps to normalized frequency 1, m/s"),
    ("camera.width", "224", "camera and depth image width, pixels"),
    ("camera.height", "224", "camera and depth image height, pixels"),
    ("encoder.camera.patch_size", "16", "camera encoder patch edge, pixels"),
    ("encoder.camera.depth", "4", "camera encoder transformer layers"),
    ("encoder.camera.n_heads", "12", "camera encoder attention heads"),
    ("encoder.camera.ffn_dim", "3072", "camera encoder feedforward width"),
    ("encoder.camera.frozen", "true", "exclude camera encoder weights from optimization"),
    ("encoder.depth.patch_size", "16", "depth encoder patch edge, pixels"),
    ("encoder.depth.depth", "4", "depth encoder transformer layers"),
    ("encoder.depth.n_heads", "12", "depth encoder attention heads"),
    ("encoder.depth.ffn_dim", "3072", "depth encoder feedforward width"),
    ("encoder.depth.frozen", "true", "exclude depth encoder weights from optimization"),
    ("encoder.range_angle.patch_size", "4", "range-angle encoder patch edge"),
    ("encoder.range_angle.depth", "4", "range-angle encoder transformer layers"),
    ("encoder.range_angle.n_heads", "12", "range-angle encoder attention heads"),
    ("encoder.range_angle.ffn_dim", "3072", "range-angle encoder feedforward width"),
    ("encoder.range_angle.frozen", "true", "exclude range-angle encoder weights from optimization"),
    ("encoder.range_velocity.patch_size", "16", "range-velocity encoder patch edge"),
    ("encoder.range_velocity.depth", "4", "range-velocity encoder transformer layers"),
    ("encoder.range_velocity.n_heads", "12", "range-velocity encoder attention heads"),
    ("encoder.range_velocity.ffn_dim", "3072", "range-velocity encoder feedforward width"),
    ("encoder.range_velocity.frozen", "true", "exclude range-velocity encoder weights from optimization"),
    ("fusion.n_heads", "12", "fusion encoder attention heads"),
    ("fusion.ffn_dim", "2048", "fusion encoder feedforward width"),
    ("fusion.dropout", "0.1", "fusion encoder dropout probability (training mode only)"),
    ("fusion.n_layers", "1", "fusion encoder layers"),
    ("fusion.latent_dim", "1024", "latent width fed to the decoder"),
    ("decoder.seed_h", "45", "decoder seed map height (azimuth axis); x32 gives output columns"),
    ("decoder.seed_w", "34", "decoder seed map width (elevation axis); x32 gives output rows"),
    ("decoder.filters", "256,128,64,64", "hidden channel widths of the four upsampling stages"),
    ("model.seed", "0", "parameter initialization seed"),
    (
        "model.fusion_bypass",
        "false",
        "skip the fusion encoder layer: concatenate embeddings and project directly",
    ),
    ("train.batch_size", "32", "samples per optimization step (at least 2, for batch norm)"),
    ("train.epochs", "20", "training epochs"),
    ("train.lr_early", "0.001", "learning rate through train.lr_switch_epoch"),
    ("train.lr_late", "0.0001", "learning rate after train.lr_switch_epoch"),
    ("train.lr_switch_epoch", "10", "last 1-based epoch that still uses lr_early"),
    ("train.beta1", "0.9", "Adam first-moment decay"),
    ("train.beta2", "0.999", "Adam second-moment decay"),
    ("train.eps", "1e-08", "Adam denominator epsilon"),
    ("train.seed", "0", "shuffling and dropout seed"),
    ("train.band", "-1.71875:2.1875", "elevation band (degrees, lo:hi) that gets extra loss weight"),
    ("train.alpha", "10.0", "loss weight inside train.band (1 elsewhere)"),
    ("train.normalize_ranges", "false", "train on ranges divided by grid.max_range"),
    ("split.train", "0.6", "leading fraction of each scenario used for training"),
    ("split.val", "0.2", "next fraction used for validation"),
    ("split.test", "0.2", "trailing fraction used for testing"),
]

_DEFAULTS = {key: value for key, value, _ in _REGISTRY}
_DOCS = {key: doc for key, _, doc in _REGISTRY}

# the desk-scale profile used by the end-to-end tests and example scripts
TOY_OVERRIDES: dict[str, str] = {
    "grid.theta": "-180:180:2.25",
    "grid.phi_regions": "-60:-5:2.75;-5:5:0.125;5:61:2",
    "radar.n_samples": "64",
    "radar.n_chirps": "64",
    "camera.width": "64",
    "camera.height": "64",
    "encoder.camera.depth": "1",
    "encoder.depth.depth": "1",
    "encoder.range_angle.depth": "1",
    "encoder.range_velocity.depth": "1",
    "decoder.seed_h": "5",
    "decoder.seed_w": "4",
    "decoder.filters": "8,8,4,4",
    "train.normalize_ranges": "true",
}


@dataclass(frozen=True)
class AppConfig:
    """Typed view of one configuration, plus its canonical raw key/value map."""

    grid: GridSpec
    radar: RadarParams
    cam_width: int
    cam_height: int
    model: ModelConfig
    train: TrainConfig
    split: SplitSpec
    raw: dict[str, str]


def _parse_int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"{key}: expected integer, got {raw!r}") from None


def _parse_float(key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ValueError(f"{key}: expected number, got {raw!r}") from None


def _parse_bool(key: str, raw: str) -> bool:
    if raw.lower() in ("true", "1", "yes"):
        return True
    if raw.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"{key}: expected true/false, got {raw!r}")


def _parse_triple(key: str, raw: str) -> tuple[float, float, float]:
    parts = raw.split(":")
    if len(parts) != 3:
        raise ValueError(f"{key}: expected lo:hi:step, got {raw!r}")
    return tuple(_parse_float(key, p) for p in parts)


def _parse_pair(key: str, raw: str) -> tuple[float, float]:
    parts = raw.split(":")
    if len(parts) != 2:
        raise ValueError(f"{key}: expected lo:hi, got {raw!r}")
    return (_parse_float(key, parts[0]), _parse_float(key, parts[1]))


def _parse_regions(key: str, raw: str) -> tuple[tuple[float, float, float], ...]:
    return tuple(_parse_triple(key, part) for part in raw.split(";") if part.strip())


def _parse_int_list(key: str, raw: str) -> tuple[int, ...]:
    return tuple(_parse_int(key, p.strip()) for p in raw.split(","))


def parse_values(text: str) -> dict[str, str]:
    """Overlay file text on the defaults; reject unknown keys and bad lines."""
    values = dict(_DEFAULTS)
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected key = value, got {line!r}")
        key = key.strip()
        if key not in _DEFAULTS:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        values[key] = value.strip()
    return values


def _build(values: dict[str, str]) -> AppConfig:
    theta = _parse_triple("grid.theta", values["grid.theta"])
    grid = GridSpec(
        theta_lo=theta[0],
        theta_hi=theta[1],
        theta_step=theta[2],
        phi_regions=_parse_regions("grid.phi_regions", values["grid.phi_regions"]),
        max_range=_parse_float("grid.max_range", values["grid.max_range"]),
    )
    radar = RadarParams(
        n_rx=_parse_int("radar.n_rx", values["radar.n_rx"]),
        n_samples=_parse_int("radar.n_samples", values["radar.n_samples"]),
        n_chirps=_parse_int("radar.n_chirps", values["radar.n_chirps"]),
        noise_sigma=_parse_float("radar.noise_sigma", values["radar.noise_sigma"]),
        r_max=_parse_float("radar.r_max", values["radar.r_max"]),
        v_max=_parse_float("radar.v_max", values["radar.v_max"]),
    )
    cam_w = _parse_int("camera.width", values["camera.width"])
    cam_h = _parse_int("camera.height", values["camera.height"])
    image_sizes = {
        "camera": (cam_h, cam_w),
        "depth": (cam_h, cam_w),
        "range_angle": (radar.n_rx, radar.n_samples),
        "range_velocity": (radar.n_chirps, radar.n_samples),
    }
    encoders = {}
    for name in MODALITIES:
        p = f"encoder.{name}"
        encoders[name] = EncoderConfig(
            image_size=image_sizes[name],
            patch_size=_parse_int(f"{p}.patch_size", values[f"{p}.patch_size"]),
            depth=_parse_int(f"{p}.depth", values[f"{p}.depth"]),
            n_heads=_parse_int(f"{p}.n_heads", values[f"{p}.n_heads"]),
            ffn_dim=_parse_int(f"{p}.ffn_dim", values[f"{p}.ffn_dim"]),
            frozen=_parse_bool(f"{p}.frozen", values[f"{p}.frozen"]),
        )
    fusion = FusionConfig(
        n_heads=_parse_int("fusion.n_heads", values["fusion.n_heads"]),
        ffn_dim=_parse_int("fusion.ffn_dim", values["fusion.ffn_dim"]),
        dropout=_parse_float("fusion.dropout", values["fusion.dropout"]),
        n_layers=_parse_int("fusion.n_layers", values["fusion.n_layers"]),
        latent_dim=_parse_int("fusion.latent_dim", values["fusion.latent_dim"]),
    )
    decoder = DecoderConfig(
        seed_h=_parse_int("decoder.seed_h", values["decoder.seed_h"]),
        seed_w=_parse_int("decoder.seed_w", values["decoder.seed_w"]),
        filters=_parse_int_list("decoder.filters", values["decoder.filters"]),
    )
    model = ModelConfig(
        camera=encoders["camera"],
        depth=encoders["depth"],
        range_angle=encoders["range_angle"],
        range_velocity=encoders["range_velocity"],
        fusion=fusion,
        decoder=decoder,
        grid=grid,
        seed=_parse_int("model.seed", values["model.seed"]),
        fusion_bypass=_parse_bool("model.fusion_bypass", values["model.fusion_bypass"]),
    )
    train = TrainConfig(
        batch_size=_parse_int("train.batch_size", values["train.batch_size"]),
        epochs=_parse_int("train.epochs", values["train.epochs"]),
        lr_early=_parse_float("train.lr_early", values["train.lr_early"]),
        lr_late=_parse_float("train.lr_late", values["train.lr_late"]),
        lr_switch_epoch=_parse_int("train.lr_switch_epoch", values["train.lr_switch_epoch"]),
        beta1=_parse_float("train.beta1", values["train.beta1"]),
        beta2=_parse_float("train.beta2", values["train.beta2"]),
        eps=_parse_float("train.eps", values["train.eps"]),
        seed=_parse_int("train.seed", values["train.seed"]),
        band=_parse_pair("train.band", values["train.band"]),
        alpha=_parse_float("train.alpha", values["train.alpha"]),
        normalize_ranges=_parse_bool("train.normalize_ranges", values["train.normalize_ranges"]),
    )
    spl = SplitSpec(
        train=_parse_float("split.train", values["split.train"]),
        val=_parse_float("split.val", values["split.val"]),
        test=_parse_float("split.test", values["split.test"]),
    )
    return AppConfig(
        grid=grid,
        radar=radar,
        cam_width=cam_w,
        cam_height=cam_h,
        model=model,
        train=train,
        split=spl,
        raw=dict(values),
    )


def parse_config(text: str) -> AppConfig:
    return _build(parse_values(text))


def config_text(cfg: AppConfig, docs: bool = False) -> str:
    """Canonical serialization, in registry order; optionally with doc comments."""
    lines = []
    for key, _, doc in _REGISTRY:
        if docs:
            lines.append(f"# {doc}")
        lines.append(f"{key} = {cfg.raw[key]}")
        if docs:
            lines.append("")
    return "\n".join(lines).rstrip("\n") + "\n"


def default_config() -> AppConfig:
    """Full-scale configuration: 1440x1088 grid, 45x34 seed, filters 256,128,64,64."""
    return _build(dict(_DEFAULTS))


def toy_config(overrides: dict[str, str] | None = None) -> AppConfig:
    """Desk-scale configuration used by the end-to-end suite (160x128 grid)."""
    values = dict(_DEFAULTS)
    values.update(TOY_OVERRIDES)
    if overrides:
        for key in overrides:
            if key not in _DEFAULTS:
                raise ValueError(f"unknown key {key!r}")
        values.update(overrides)
    return _build(values)
