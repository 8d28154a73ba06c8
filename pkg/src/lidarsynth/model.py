"""Multimodal network: four patch encoders, a fusion encoder, a LiDAR decoder.

Each modality image is split into fixed-size patches, linearly embedded,
and run through a small pre-norm transformer; the classification-token
output is projected to a common 768-wide embedding.  The four embeddings
form a 4-token sequence that one fusion encoder layer mixes (with learned
type embeddings so slots stay distinguishable), after which the tokens are
concatenated and projected to a 1024 latent.  The decoder expands that
latent through a fully connected layer to a small seed map and five
stride-2 transposed convolutions into the output raster.

The decoder's height axis runs along azimuth and its width axis along
elevation; ``Model.forward`` transposes into raster layout (rows =
elevation bins, columns = azimuth bins).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from lidarsynth import tensor as T
from lidarsynth.geometry import GridSpec, PolarRaster, default_grid
from lidarsynth.optim import ParamStore
from lidarsynth.tensor import AttentionParams, BatchNormState, Tensor

__all__ = [
    "MODALITIES",
    "EMBED_DIM",
    "EncoderConfig",
    "FusionConfig",
    "DecoderConfig",
    "ModelConfig",
    "Model",
    "init_params",
    "param_count",
    "param_breakdown",
    "default_model_config",
]

MODALITIES = ("camera", "depth", "range_angle", "range_velocity")
# every encoder projects its class token to this width; the fusion stage
# and its modality type embeddings are defined in terms of it
EMBED_DIM = 768
N_DECONV = 5
UPSCALE = 2 ** N_DECONV


@dataclass(frozen=True)
class EncoderConfig:
    """One modality encoder: patchify, embed, ``depth`` pre-norm layers, project."""

    image_size: tuple[int, int]
    channels: int = 1
    patch_size: int = 16
    depth: int = 4
    n_heads: int = 12
    d_model: int = 768
    ffn_dim: int = 3072
    frozen: bool = False

    def __post_init__(self):
        h, w = self.image_size
        if h < 1 or w < 1 or self.channels < 1:
            raise ValueError("image dims and channels must be positive")
        if h % self.patch_size or w % self.patch_size:
            raise ValueError(
                f"image size {self.image_size} not divisible by patch {self.patch_size}"
            )
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by {self.n_heads} heads")
        if self.depth < 0:
            raise ValueError("depth must be non-negative")
        if self.ffn_dim < 1:
            raise ValueError("ffn_dim must be positive")

    @property
    def n_patches(self) -> int:
        h, w = self.image_size
        return (h // self.patch_size) * (w // self.patch_size)

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels


@dataclass(frozen=True)
class FusionConfig:
    """The cross-modality encoder layer and the latent projection."""

    d_model: int = EMBED_DIM
    n_heads: int = 12
    ffn_dim: int = 2048
    dropout: float = 0.1
    n_layers: int = 1
    latent_dim: int = 1024

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by {self.n_heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout {self.dropout} outside [0, 1)")
        if self.n_layers < 1 or self.latent_dim < 1 or self.ffn_dim < 1:
            raise ValueError("n_layers, latent_dim, ffn_dim must be positive")


@dataclass(frozen=True)
class DecoderConfig:
    """Seed map dims plus the four hidden transposed-convolution widths."""

    seed_h: int = 45
    seed_w: int = 34
    filters: tuple[int, int, int, int] = (256, 128, 64, 64)
    kernel: int = 4
    stride: int = 2
    padding: int = 1

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple(self.filters))
        if self.seed_h < 1 or self.seed_w < 1:
            raise ValueError("seed dims must be positive")
        if len(self.filters) != 4 or any(f < 1 for f in self.filters):
            raise ValueError(f"filters must be four positive ints, got {self.filters}")
        if self.stride != 2 or self.kernel != self.stride + 2 * self.padding:
            # each layer must exactly double the spatial dims
            raise ValueError("decoder requires stride 2 and kernel = stride + 2*padding")

    @property
    def out_h(self) -> int:
        return self.seed_h * UPSCALE

    @property
    def out_w(self) -> int:
        return self.seed_w * UPSCALE

    @property
    def channel_chain(self) -> tuple[int, ...]:
        return (1,) + self.filters + (1,)


@dataclass(frozen=True)
class ModelConfig:
    camera: EncoderConfig
    depth: EncoderConfig
    range_angle: EncoderConfig
    range_velocity: EncoderConfig
    fusion: FusionConfig = field(default_factory=FusionConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    grid: GridSpec = field(default_factory=GridSpec)
    seed: int = 0
    fusion_bypass: bool = False

    def __post_init__(self):
        if self.fusion.d_model != EMBED_DIM:
            raise ValueError(f"fusion width must be {EMBED_DIM}, got {self.fusion.d_model}")
        # decoder height axis = azimuth (columns), width axis = elevation (rows)
        if self.decoder.out_h != self.grid.n_cols or self.decoder.out_w != self.grid.n_rows:
            raise ValueError(
                f"decoder output {self.decoder.out_h}x{self.decoder.out_w} does not match "
                f"grid {self.grid.n_cols} cols x {self.grid.n_rows} rows"
            )

    def encoder(self, name: str) -> EncoderConfig:
        if name not in MODALITIES:
            raise KeyError(f"unknown modality {name!r}")
        return getattr(self, name)


def default_model_config(grid: GridSpec | None = None) -> ModelConfig:
    """Full-scale configuration matching the production raster grid."""
    grid = grid if grid is not None else default_grid()
    return ModelConfig(
        camera=EncoderConfig(image_size=(224, 224), patch_size=16),
        depth=EncoderConfig(image_size=(224, 224), patch_size=16),
        range_angle=EncoderConfig(image_size=(4, 256), patch_size=4),
        range_velocity=EncoderConfig(image_size=(128, 256), patch_size=16),
        fusion=FusionConfig(),
        decoder=DecoderConfig(
            seed_h=grid.n_cols // UPSCALE,
            seed_w=grid.n_rows // UPSCALE,
        ),
        grid=grid,
    )


# -- parameter enumeration ----------------------------------------------------

_INIT_NORMAL = "normal"       # Normal(0, 0.02)
_INIT_BN_GAIN = "bn_gain"     # Normal(1, 0.02)
_INIT_ZEROS = "zeros"
_INIT_ONES = "ones"


def _encoder_shapes(name: str, cfg: EncoderConfig) -> list[tuple[str, tuple, str, bool]]:
    train = not cfg.frozen
    d = cfg.d_model
    out = [
        (f"{name}.patch_embed.weight", (cfg.patch_dim, d), _INIT_NORMAL, train),
        (f"{name}.patch_embed.bias", (d,), _INIT_ZEROS, train),
        (f"{name}.cls_token", (1, d), _INIT_NORMAL, train),
        (f"{name}.pos_embed", (cfg.n_patches + 1, d), _INIT_NORMAL, train),
    ]
    for i in range(cfg.depth):
        p = f"{name}.layers.{i}"
        out += [
            (f"{p}.ln1.gain", (d,), _INIT_ONES, train),
            (f"{p}.ln1.bias", (d,), _INIT_ZEROS, train),
        ]
        for proj in ("wq", "wk", "wv", "wo"):
            out.append((f"{p}.attn.{proj}", (d, d), _INIT_NORMAL, train))
        for b in ("bq", "bk", "bv", "bo"):
            out.append((f"{p}.attn.{b}", (d,), _INIT_ZEROS, train))
        out += [
            (f"{p}.ln2.gain", (d,), _INIT_ONES, train),
            (f"{p}.ln2.bias", (d,), _INIT_ZEROS, train),
            (f"{p}.ffn.w1", (d, cfg.ffn_dim), _INIT_NORMAL, train),
            (f"{p}.ffn.b1", (cfg.ffn_dim,), _INIT_ZEROS, train),
            (f"{p}.ffn.w2", (cfg.ffn_dim, d), _INIT_NORMAL, train),
            (f"{p}.ffn.b2", (d,), _INIT_ZEROS, train),
        ]
    out += [
        (f"{name}.final_ln.gain", (d,), _INIT_ONES, train),
        (f"{name}.final_ln.bias", (d,), _INIT_ZEROS, train),
        (f"{name}.head.weight", (d, EMBED_DIM), _INIT_NORMAL, train),
        (f"{name}.head.bias", (EMBED_DIM,), _INIT_ZEROS, train),
    ]
    return out


def _param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple, str, bool]]:
    """Every parameter's (name, shape, init kind, trainable), in creation order."""
    shapes: list[tuple[str, tuple, str, bool]] = []
    for name in MODALITIES:
        shapes.extend(_encoder_shapes(name, cfg.encoder(name)))

    f = cfg.fusion
    d = f.d_model
    if not cfg.fusion_bypass:
        shapes.append(("fusion.type_embed", (len(MODALITIES), d), _INIT_NORMAL, True))
        for i in range(f.n_layers):
            p = f"fusion.layers.{i}"
            shapes += [
                (f"{p}.ln1.gain", (d,), _INIT_ONES, True),
                (f"{p}.ln1.bias", (d,), _INIT_ZEROS, True),
            ]
            for proj in ("wq", "wk", "wv", "wo"):
                shapes.append((f"{p}.attn.{proj}", (d, d), _INIT_NORMAL, True))
            for b in ("bq", "bk", "bv", "bo"):
                shapes.append((f"{p}.attn.{b}", (d,), _INIT_ZEROS, True))
            shapes += [
                (f"{p}.ln2.gain", (d,), _INIT_ONES, True),
                (f"{p}.ln2.bias", (d,), _INIT_ZEROS, True),
                (f"{p}.ffn.w1", (d, f.ffn_dim), _INIT_NORMAL, True),
                (f"{p}.ffn.b1", (f.ffn_dim,), _INIT_ZEROS, True),
                (f"{p}.ffn.w2", (f.ffn_dim, d), _INIT_NORMAL, True),
                (f"{p}.ffn.b2", (d,), _INIT_ZEROS, True),
            ]
        shapes += [
            ("fusion.final_ln.gain", (d,), _INIT_ONES, True),
            ("fusion.final_ln.bias", (d,), _INIT_ZEROS, True),
        ]
    concat_dim = len(MODALITIES) * d
    shapes += [
        ("fusion.proj.weight", (concat_dim, f.latent_dim), _INIT_NORMAL, True),
        ("fusion.proj.bias", (f.latent_dim,), _INIT_ZEROS, True),
    ]

    dec = cfg.decoder
    shapes += [
        ("decoder.fc.weight", (f.latent_dim, dec.seed_h * dec.seed_w), _INIT_NORMAL, True),
        ("decoder.fc.bias", (dec.seed_h * dec.seed_w,), _INIT_ZEROS, True),
    ]
    chain = dec.channel_chain
    for i in range(N_DECONV):
        shapes += [
            (f"decoder.deconv.{i}.weight", (chain[i], chain[i + 1], dec.kernel, dec.kernel), _INIT_NORMAL, True),
            (f"decoder.deconv.{i}.bias", (chain[i + 1],), _INIT_ZEROS, True),
        ]
        if i < N_DECONV - 1:
            shapes += [
                (f"decoder.bn.{i}.gain", (chain[i + 1],), _INIT_BN_GAIN, True),
                (f"decoder.bn.{i}.bias", (chain[i + 1],), _INIT_ZEROS, True),
            ]
    return shapes


def init_params(cfg: ModelConfig, seed: int | None = None) -> ParamStore:
    """Fresh parameters: weights Normal(0, 0.02), batch-norm gains Normal(1, 0.02)."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    store = ParamStore()
    for name, shape, kind, trainable in _param_shapes(cfg):
        if kind == _INIT_NORMAL:
            data = rng.normal(0.0, 0.02, shape)
        elif kind == _INIT_BN_GAIN:
            data = rng.normal(1.0, 0.02, shape)
        elif kind == _INIT_ONES:
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        store.add(name, data, trainable=trainable)
    return store


def param_count(cfg: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape, _, _ in _param_shapes(cfg))


def param_breakdown(cfg: ModelConfig) -> dict[str, int]:
    """Parameter totals keyed by top-level component name."""
    out: dict[str, int] = {}
    for name, shape, _, _ in _param_shapes(cfg):
        top = name.split(".", 1)[0]
        out[top] = out.get(top, 0) + int(np.prod(shape))
    return out


# -- forward passes -----------------------------------------------------------


def _patchify(image: np.ndarray, cfg: EncoderConfig) -> np.ndarray:
    """[C, H, W] (or [H, W]) -> [n_patches, patch_dim], row-major patch order."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3:
        raise ValueError(f"expected 2-D or 3-D image, got shape {image.shape}")
    c, h, w = img.shape
    if c != cfg.channels or (h, w) != tuple(cfg.image_size):
        raise ValueError(
            f"image shape {img.shape} does not match configured "
            f"{cfg.channels}x{cfg.image_size[0]}x{cfg.image_size[1]}"
        )
    p = cfg.patch_size
    nh, nw = h // p, w // p
    patches = img.reshape(c, nh, p, nw, p).transpose(1, 3, 0, 2, 4)
    return np.ascontiguousarray(patches).reshape(nh * nw, c * p * p)


class Model:
    """A parameter store bound to its configuration, with mode handling.

    Evaluation mode is the default: dropout is off and batch norm uses
    running statistics, so forward passes are deterministic and safe to
    run concurrently.  Training mode requires an rng (for dropout) and
    mutates batch-norm running statistics.
    """

    def __init__(self, cfg: ModelConfig, store: ParamStore | None = None):
        self.cfg = cfg
        self.store = store if store is not None else init_params(cfg)
        for name, shape, _, _ in _param_shapes(cfg):
            if name not in self.store:
                raise ValueError(f"parameter store missing {name!r}")
            if self.store[name].shape != shape:
                raise ValueError(f"parameter {name!r} has shape {self.store[name].shape}, want {shape}")
        self.bn_states = [BatchNormState.create(c) for c in cfg.decoder.filters]
        self.training = False
        self.rng: np.random.Generator | None = None

    def train_mode(self, rng: np.random.Generator | None = None) -> "Model":
        self.training = True
        if rng is not None:
            self.rng = rng
        return self

    def eval_mode(self) -> "Model":
        self.training = False
        return self

    # encoders

    def encode_batch(self, name: str, images: np.ndarray) -> Tensor:
        """[B, H, W] (or [B, C, H, W]) -> [B, 768] class-token embeddings."""
        cfg = self.cfg.encoder(name)
        s = self.store
        tokens = np.stack([_patchify(img, cfg) for img in images])
        x = T.linear(Tensor(tokens), s[f"{name}.patch_embed.weight"], s[f"{name}.patch_embed.bias"])
        b = x.shape[0]
        ones = Tensor(np.ones((b, 1, 1), dtype=np.float32))
        cls = T.mul(T.reshape(s[f"{name}.cls_token"], (1, 1, cfg.d_model)), ones)
        x = T.concat([cls, x], axis=1)
        x = T.add(x, s[f"{name}.pos_embed"])
        for i in range(cfg.depth):
            x = self._encoder_layer(x, f"{name}.layers.{i}", cfg.n_heads)
        x = T.layer_norm(x, s[f"{name}.final_ln.gain"], s[f"{name}.final_ln.bias"])
        cls_out = x[:, 0]
        return T.linear(cls_out, s[f"{name}.head.weight"], s[f"{name}.head.bias"])

    def encode(self, name: str, image: np.ndarray) -> Tensor:
        """Single-image embedding of length 768."""
        out = self.encode_batch(name, np.asarray(image)[None])
        return T.reshape(out, (EMBED_DIM,))

    def _attn_params(self, prefix: str) -> AttentionParams:
        s = self.store
        return AttentionParams(
            wq=s[f"{prefix}.wq"], wk=s[f"{prefix}.wk"], wv=s[f"{prefix}.wv"], wo=s[f"{prefix}.wo"],
            bq=s[f"{prefix}.bq"], bk=s[f"{prefix}.bk"], bv=s[f"{prefix}.bv"], bo=s[f"{prefix}.bo"],
        )

    def _encoder_layer(self, x: Tensor, p: str, n_heads: int) -> Tensor:
        s = self.store
        h = T.layer_norm(x, s[f"{p}.ln1.gain"], s[f"{p}.ln1.bias"])
        x = T.add(x, T.multi_head_self_attention(h, self._attn_params(f"{p}.attn"), n_heads))
        h = T.layer_norm(x, s[f"{p}.ln2.gain"], s[f"{p}.ln2.bias"])
        h = T.relu(T.linear(h, s[f"{p}.ffn.w1"], s[f"{p}.ffn.b1"]))
        h = T.linear(h, s[f"{p}.ffn.w2"], s[f"{p}.ffn.b2"])
        return T.add(x, h)

    # fusion

    def fuse(self, embeddings: Tensor, return_attention: bool = False):
        """[4, 768] or [B, 4, 768] modality embeddings -> [B?, 1024] latent."""
        s = self.store
        f = self.cfg.fusion
        x = embeddings if embeddings.ndim == 3 else T.reshape(embeddings, (1,) + embeddings.shape)
        b, t, d = x.shape
        if t != len(MODALITIES) or d != f.d_model:
            raise ValueError(f"fuse expects [*, {len(MODALITIES)}, {f.d_model}], got {embeddings.shape}")
        squeeze = embeddings.ndim == 2
        attn_weights = None

        if self.cfg.fusion_bypass:
            if return_attention:
                raise ValueError("no attention weights in fusion-bypass mode")
        else:
            x = T.add(x, s["fusion.type_embed"])
            for i in range(f.n_layers):
                p = f"fusion.layers.{i}"
                h = T.layer_norm(x, s[f"{p}.ln1.gain"], s[f"{p}.ln1.bias"])
                att = T.multi_head_self_attention(
                    h, self._attn_params(f"{p}.attn"), f.n_heads, return_weights=return_attention
                )
                if return_attention:
                    att, w = att
                    if attn_weights is None:
                        attn_weights = w
                att = T.dropout(att, f.dropout, self.training, self.rng)
                x = T.add(x, att)
                h = T.layer_norm(x, s[f"{p}.ln2.gain"], s[f"{p}.ln2.bias"])
                h = T.relu(T.linear(h, s[f"{p}.ffn.w1"], s[f"{p}.ffn.b1"]))
                h = T.linear(h, s[f"{p}.ffn.w2"], s[f"{p}.ffn.b2"])
                h = T.dropout(h, f.dropout, self.training, self.rng)
                x = T.add(x, h)
            x = T.layer_norm(x, s["fusion.final_ln.gain"], s["fusion.final_ln.bias"])

        flat = T.reshape(x, (b, t * d))
        latent = T.linear(flat, s["fusion.proj.weight"], s["fusion.proj.bias"])
        if squeeze:
            latent = T.reshape(latent, (f.latent_dim,))
        if return_attention:
            return latent, attn_weights
        return latent

    # decoder

    def decode(self, latent: Tensor) -> Tensor:
        """[B?, 1024] -> [B?, 1, out_h, out_w], non-negative."""
        s = self.store
        dec = self.cfg.decoder
        squeeze = latent.ndim == 1
        x = latent if not squeeze else T.reshape(latent, (1,) + latent.shape)
        x = T.linear(x, s["decoder.fc.weight"], s["decoder.fc.bias"])
        x = T.reshape(x, (x.shape[0], 1, dec.seed_h, dec.seed_w))
        for i in range(N_DECONV):
            x = T.conv_transpose2d(
                x,
                s[f"decoder.deconv.{i}.weight"],
                s[f"decoder.deconv.{i}.bias"],
                stride=dec.stride,
                padding=dec.padding,
            )
            if i < N_DECONV - 1:
                x = T.batch_norm2d(
                    x,
                    s[f"decoder.bn.{i}.gain"],
                    s[f"decoder.bn.{i}.bias"],
                    self.bn_states[i],
                    self.training,
                )
            x = T.relu(x)
        if squeeze:
            x = T.reshape(x, x.shape[1:])
        return x

    # full pipeline

    def embed(self, sample: dict[str, np.ndarray]) -> Tensor:
        """Stack the four modality embeddings of one sample into [4, 768]."""
        embs = [self.encode(name, sample[name]) for name in MODALITIES]
        return T.stack(embs, axis=0)

    def forward_batch(
        self,
        batch: dict[str, np.ndarray] | None = None,
        embeddings: Tensor | None = None,
    ) -> Tensor:
        """Differentiable batched pass -> [B, n_rows, n_cols] raster values.

        Either raw modality arrays (each [B, ...]) or precomputed [B, 4, 768]
        embeddings (the frozen-encoder fast path) may be supplied.
        """
        if embeddings is None:
            if batch is None:
                raise ValueError("need batch arrays or precomputed embeddings")
            embs = [self.encode_batch(name, batch[name]) for name in MODALITIES]
            embeddings = T.stack(embs, axis=1)
        latent = self.fuse(embeddings)
        out = self.decode(latent)  # [B, 1, n_cols, n_rows]
        out = T.reshape(out, (out.shape[0], out.shape[2], out.shape[3]))
        return T.transpose(out, (0, 2, 1))

    def forward(self, sample: dict[str, np.ndarray]) -> PolarRaster:
        """Inference surface: one sample in, a raster on the model grid out."""
        with T.no_grad():
            batch = {name: np.asarray(sample[name])[None] for name in MODALITIES}
            out = self.forward_batch(batch)
        values = np.clip(out.data[0], 0.0, self.cfg.grid.max_range).astype(np.float32)
        return PolarRaster(grid=self.cfg.grid, data=values)

    # batch-norm running statistics (model state outside the ParamStore)

    def bn_state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, st in enumerate(self.bn_states):
            out[f"decoder.bn.{i}.running_mean"] = st.running_mean.copy()
            out[f"decoder.bn.{i}.running_var"] = st.running_var.copy()
        return out

    def load_bn_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for i, st in enumerate(self.bn_states):
            mean = arrays.get(f"decoder.bn.{i}.running_mean")
            var = arrays.get(f"decoder.bn.{i}.running_var")
            if mean is None or var is None:
                raise KeyError(f"missing running statistics for batch-norm layer {i}")
            if mean.shape != st.running_mean.shape or var.shape != st.running_var.shape:
                raise ValueError(f"running-stat shape mismatch for batch-norm layer {i}")
            st.running_mean = mean.astype(np.float32, copy=True)
            st.running_var = var.astype(np.float32, copy=True)
