"""Learnable components: the deterministic initial predictor, the graph
convolution transformer with scale/shift conditioning (SGCT), and the pose
refinement gate (PRM).

3D coordinates inside these networks live in model space: millimeters
divided by `ModelConfig.pose_scale_mm`, so pose magnitudes are comparable to
the unit-variance diffusion noise.  The pipeline wrappers (`Refiner`,
`InitialPredictor`) convert to and from millimeters at the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CheckpointError, ConfigError, ShapeError
from .rng import RngStream
from .skeleton import ROOT, make_skeleton, normalized_adjacency


@dataclass(frozen=True)
class ModelConfig:
    """Architecture sizes; the defaults train in minutes on one CPU core."""

    n_joints: int = 17
    channels: int = 32
    blocks: int = 2
    heads: int = 4
    t_embed_dim: int = 32
    learnable_adjacency: bool = True
    ffn_mult: int = 4
    prm_hidden: int = 32
    predictor_channels: int = 32
    predictor_layers: int = 3
    pose_scale_mm: float = 1000.0

    def __post_init__(self):
        if self.channels % self.heads != 0:
            raise ConfigError("channels must be divisible by heads")
        if self.blocks < 1 or self.predictor_layers < 1:
            raise ConfigError("block/layer counts must be >= 1")
        if self.t_embed_dim % 2 != 0:
            raise ConfigError("t_embed_dim must be even")
        if self.pose_scale_mm <= 0:
            raise ConfigError("pose_scale_mm must be positive")


@dataclass(frozen=True)
class Normalization2D:
    """Pixel-to-network input mapping, recorded in every checkpoint."""

    cx: float
    cy: float
    half_width: float

    @classmethod
    def from_camera(cls, camera) -> "Normalization2D":
        return cls(camera.cx, camera.cy, camera.cx)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.empty_like(x)
        out[..., 0] = (x[..., 0] - self.cx) / self.half_width
        out[..., 1] = (x[..., 1] - self.cy) / self.half_width
        return out


class ModelParams:
    """Named parameter tensors for one network."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    @property
    def names(self) -> list[str]:
        return sorted(self.tensors)

    @property
    def count(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def validate_finite(self) -> None:
        for name, t in self.tensors.items():
            if not np.all(np.isfinite(t.data)):
                raise ShapeError(f"parameter {name!r} contains non-finite values")

    def copy(self) -> "ModelParams":
        return ModelParams({k: Tensor(v.data.copy()) for k, v in self.tensors.items()})


# parameter shape maps -------------------------------------------------------

def refiner_shape_map(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    n, c, dc = config.n_joints, config.channels, config.t_embed_dim
    f = config.ffn_mult * c
    shapes: dict[str, tuple[int, ...]] = {
        "token_in.w": (6, c),
        "token_in.b": (c,),
        "x_embed.w": (2, c),
        "x_embed.b": (c,),
        "joint_embed": (n, c),
        "cond_pool.w": (c, dc),
        "cond_pool.b": (dc,),
        "t_mlp.w1": (dc, dc),
        "t_mlp.b1": (dc,),
        "t_mlp.w2": (dc, dc),
        "t_mlp.b2": (dc,),
        "head.w": (c, 3),
        "head.b": (3,),
        "prm.w1": (6, config.prm_hidden),
        "prm.b1": (config.prm_hidden,),
        "prm.w2": (config.prm_hidden, 3),
        "prm.b2": (3,),
    }
    for i in range(config.blocks):
        p = f"block{i}"
        if config.learnable_adjacency:
            shapes[f"{p}.adj"] = (n, n)
        for sub in ("gc", "attn", "ffn"):
            shapes[f"{p}.{sub}.mod.w"] = (dc, 2 * c)
            shapes[f"{p}.{sub}.mod.b"] = (2 * c,)
        shapes[f"{p}.gc.w1"] = (c, c)
        shapes[f"{p}.gc.b1"] = (c,)
        shapes[f"{p}.gc.w2"] = (c, c)
        shapes[f"{p}.gc.b2"] = (c,)
        for m in ("q", "k", "v", "o"):
            shapes[f"{p}.attn.w{m}"] = (c, c)
            shapes[f"{p}.attn.b{m}"] = (c,)
        shapes[f"{p}.ffn.w1"] = (c, f)
        shapes[f"{p}.ffn.b1"] = (f,)
        shapes[f"{p}.ffn.w2"] = (f, c)
        shapes[f"{p}.ffn.b2"] = (c,)
    return shapes


def predictor_shape_map(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    n, c = config.n_joints, config.predictor_channels
    shapes: dict[str, tuple[int, ...]] = {
        "embed.w": (2, c),
        "embed.b": (c,),
        "head.w": (c, 3),
        "head.b": (3,),
    }
    for i in range(config.predictor_layers):
        if config.learnable_adjacency:
            shapes[f"layer{i}.adj"] = (n, n)
        shapes[f"layer{i}.w1"] = (c, c)
        shapes[f"layer{i}.b1"] = (c,)
        shapes[f"layer{i}.w2"] = (c, c)
        shapes[f"layer{i}.b2"] = (c,)
    return shapes


# zero-initialized weights: conditioning projections, the learnable adjacency
# and every sub-layer output projection, so each refiner block starts as an
# identity map (biases are all zero-initialized anyway)
_ZERO_SUFFIXES = (".mod.w", ".gc.w2", ".attn.wo", ".ffn.w2", ".adj")


def _init_params(shapes: dict[str, tuple[int, ...]], stream: RngStream) -> ModelParams:
    tensors: dict[str, Tensor] = {}
    for name in sorted(shapes):
        shape = shapes[name]
        if name == "prm.b2":
            # gate starts mostly closed: the refinement begins near y_bar
            tensors[name] = Tensor(np.full(shape, -2.0))
        elif len(shape) == 1 or name.endswith(_ZERO_SUFFIXES):
            tensors[name] = Tensor(np.zeros(shape))
        else:
            std = np.sqrt(2.0 / (shape[0] + shape[-1]))
            tensors[name] = Tensor(std * stream.gaussian(shape))
    return ModelParams(tensors)


def init_refiner_params(config: ModelConfig, stream: RngStream) -> ModelParams:
    return _init_params(refiner_shape_map(config), stream)


def init_predictor_params(config: ModelConfig, stream: RngStream) -> ModelParams:
    return _init_params(predictor_shape_map(config), stream)


# forward passes -------------------------------------------------------------

def sinusoidal_embedding(t, dim: int) -> np.ndarray:
    """(B, dim) sinusoids: half sin, half cos over geometric frequencies."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = t_arr[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


def embed_timestep(t, params: ModelParams, config: ModelConfig) -> np.ndarray:
    """Learned timestep embedding: sinusoids through a two-layer perceptron."""
    with ad.no_grad():
        return _timestep_mlp(t, params, config).data


def _timestep_mlp(t, params: ModelParams, config: ModelConfig) -> Tensor:
    sin = Tensor(sinusoidal_embedding(t, config.t_embed_dim))
    h = ad.gelu(sin @ params["t_mlp.w1"] + params["t_mlp.b1"])
    return h @ params["t_mlp.w2"] + params["t_mlp.b2"]


def _as_batched(a, feat: int) -> tuple[Tensor | np.ndarray, bool]:
    arr = a.data if isinstance(a, Tensor) else np.asarray(a, dtype=np.float64)
    if arr.ndim == 2:
        if isinstance(a, Tensor):
            return ad.reshape(a, (1,) + arr.shape), True
        return arr[None], True
    if arr.ndim != 3 or arr.shape[-1] != feat:
        raise ShapeError(f"expected (..., N, {feat}) input, got {arr.shape}")
    return a if isinstance(a, Tensor) else arr, False


def _modulated(h: Tensor, cond: Tensor, params: ModelParams, name: str, c: int) -> Tensor:
    """Layer norm followed by conditioning-driven scale/shift."""
    mod = cond @ params[f"{name}.mod.w"] + params[f"{name}.mod.b"]  # (B, 2C)
    b = mod.data.shape[0]
    mod = ad.reshape(mod, (b, 1, 2 * c))
    scale = ad.narrow(mod, 2, 0, c)
    shift = ad.narrow(mod, 2, c, 2 * c)
    normed = ad.layer_norm(h)
    return normed * (scale + 1.0) + shift


def _graph_matrix(params: ModelParams, name: str, adjacency: np.ndarray,
                  config: ModelConfig) -> Tensor:
    base = Tensor(adjacency)
    if config.learnable_adjacency:
        return base + params[f"{name}.adj"]
    return base


def _attention(h: Tensor, params: ModelParams, prefix: str, config: ModelConfig) -> Tensor:
    b, n, c = h.data.shape
    nh, dh = config.heads, config.channels // config.heads

    def split_heads(z: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(z, (b, n, nh, dh)), (0, 2, 1, 3))

    q = split_heads(h @ params[f"{prefix}.wq"] + params[f"{prefix}.bq"])
    k = split_heads(h @ params[f"{prefix}.wk"] + params[f"{prefix}.bk"])
    v = split_heads(h @ params[f"{prefix}.wv"] + params[f"{prefix}.bv"])
    scores = (q * (1.0 / np.sqrt(dh))) @ ad.transpose(k, (0, 1, 3, 2))
    att = ad.softmax(scores)
    out = ad.transpose(att @ v, (0, 2, 1, 3))
    out = ad.reshape(out, (b, n, c))
    return out @ params[f"{prefix}.wo"] + params[f"{prefix}.bo"]


def sgct_forward(
    y_bar,
    y_t,
    x,
    t,
    params: ModelParams,
    config: ModelConfig,
    norm: Normalization2D,
    adjacency: np.ndarray | None = None,
) -> Tensor:
    """Denoising trunk: per-joint tokens from [y_bar, y_t] run through
    graph-conv + attention + feed-forward blocks, each sub-layer modulated by
    scale/shift vectors from the (timestep, 2D pose) conditioning.  Returns
    the intermediate pose, model-space (B, N, 3).
    """
    if adjacency is None:
        adjacency = normalized_adjacency(make_skeleton())
    c = config.channels
    y_bar, squeeze = _as_batched(y_bar, 3)
    y_t, _ = _as_batched(y_t, 3)
    yb = y_bar if isinstance(y_bar, Tensor) else Tensor(y_bar)
    yt = y_t if isinstance(y_t, Tensor) else Tensor(y_t)
    x_arr = np.asarray(x, dtype=np.float64)
    if x_arr.ndim == 2:
        x_arr = x_arr[None]
    batch = yb.data.shape[0]
    if x_arr.shape != (batch, config.n_joints, 2):
        raise ShapeError(f"2D pose shape {x_arr.shape} inconsistent with batch {batch}")

    xn = Tensor(norm.apply(x_arr))
    tokens = ad.concat([yb, yt], axis=2) @ params["token_in.w"] + params["token_in.b"]
    xe = xn @ params["x_embed.w"] + params["x_embed.b"]
    tokens = tokens + xe + params["joint_embed"]

    t_arr = np.broadcast_to(np.asarray(t, dtype=np.int64).ravel(), (batch,))
    cond = _timestep_mlp(t_arr, params, config)
    cond = cond + xe.mean(axis=1) @ params["cond_pool.w"] + params["cond_pool.b"]

    for i in range(config.blocks):
        p = f"block{i}"
        h = _modulated(tokens, cond, params, f"{p}.gc", c)
        mixed = _graph_matrix(params, p, adjacency, config) @ h
        gc = ad.gelu(mixed @ params[f"{p}.gc.w1"] + params[f"{p}.gc.b1"])
        tokens = tokens + gc @ params[f"{p}.gc.w2"] + params[f"{p}.gc.b2"]

        h = _modulated(tokens, cond, params, f"{p}.attn", c)
        tokens = tokens + _attention(h, params, f"{p}.attn", config)

        h = _modulated(tokens, cond, params, f"{p}.ffn", c)
        ff = ad.gelu(h @ params[f"{p}.ffn.w1"] + params[f"{p}.ffn.b1"])
        tokens = tokens + ff @ params[f"{p}.ffn.w2"] + params[f"{p}.ffn.b2"]

    out = ad.layer_norm(tokens) @ params["head.w"] + params["head.b"]
    if squeeze:
        out = ad.reshape(out, out.data.shape[1:])
    return out


def prm_forward(intermediate, y_bar, params: ModelParams) -> Tensor:
    """Gate between the denoised intermediate pose and the initial pose.

    delta = sigmoid(MLP([intermediate, y_bar])) per joint-coordinate; the
    output is the elementwise convex combination
    delta * intermediate + (1 - delta) * y_bar.
    """
    inter = intermediate if isinstance(intermediate, Tensor) else Tensor(intermediate)
    yb = y_bar if isinstance(y_bar, Tensor) else Tensor(y_bar)
    if inter.data.shape != yb.data.shape:
        raise ShapeError(
            f"intermediate {inter.data.shape} and initial {yb.data.shape} shapes differ"
        )
    z = ad.concat([inter, yb], axis=inter.data.ndim - 1)
    h = ad.gelu(z @ params["prm.w1"] + params["prm.b1"])
    delta = ad.sigmoid(h @ params["prm.w2"] + params["prm.b2"])
    return delta * inter + (delta * -1.0 + 1.0) * yb


def refine(
    y_bar,
    y_t,
    x,
    t,
    params: ModelParams,
    config: ModelConfig,
    norm: Normalization2D,
    adjacency: np.ndarray | None = None,
) -> Tensor:
    """Full refinement call: PRM applied to the SGCT intermediate pose."""
    inter = sgct_forward(y_bar, y_t, x, t, params, config, norm, adjacency)
    yb = y_bar if isinstance(y_bar, Tensor) else Tensor(np.asarray(y_bar, dtype=np.float64))
    if yb.data.ndim == 2 and inter.data.ndim == 3:
        yb = ad.reshape(yb, (1,) + yb.data.shape)
    return prm_forward(inter, yb, params)


def predictor_forward(
    x,
    params: ModelParams,
    config: ModelConfig,
    norm: Normalization2D,
    adjacency: np.ndarray | None = None,
) -> Tensor:
    """Initial predictor: residual graph-conv lifter, model-space output with
    the root forced to the origin."""
    if adjacency is None:
        adjacency = normalized_adjacency(make_skeleton())
    x_arr = np.asarray(x, dtype=np.float64)
    squeeze = x_arr.ndim == 2
    if squeeze:
        x_arr = x_arr[None]
    if x_arr.shape[1:] != (config.n_joints, 2):
        raise ShapeError(f"expected (B, {config.n_joints}, 2) 2D pose, got {x_arr.shape}")
    h = Tensor(norm.apply(x_arr)) @ params["embed.w"] + params["embed.b"]
    for i in range(config.predictor_layers):
        mixed = _graph_matrix(params, f"layer{i}", adjacency, config) @ h
        z = ad.gelu(mixed @ params[f"layer{i}.w1"] + params[f"layer{i}.b1"])
        h = h + z @ params[f"layer{i}.w2"] + params[f"layer{i}.b2"]
    out = ad.layer_norm(h) @ params["head.w"] + params["head.b"]
    root = ad.narrow(out, 1, ROOT, ROOT + 1)
    out = out - root
    if squeeze:
        out = ad.reshape(out, out.data.shape[1:])
    return out


# pipeline wrappers ----------------------------------------------------------

class InitialPredictor:
    """Frozen deterministic lifter; millimeter in/out."""

    def __init__(self, params: ModelParams, config: ModelConfig, norm: Normalization2D):
        self.params = params
        self.config = config
        self.norm = norm
        self._adj = normalized_adjacency(make_skeleton())

    def predict(self, x: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            out = predictor_forward(x, self.params, self.config, self.norm, self._adj)
        return out.data * self.config.pose_scale_mm


class Refiner:
    """Refinement network bound to its config and 2D normalization.

    `refine` operates in model space (inputs and outputs scaled); the
    `pose_scale_mm` attribute tells the sampler how to convert.
    """

    def __init__(self, params: ModelParams, config: ModelConfig, norm: Normalization2D):
        self.params = params
        self.config = config
        self.norm = norm
        self._adj = normalized_adjacency(make_skeleton())

    @property
    def pose_scale_mm(self) -> float:
        return self.config.pose_scale_mm

    def refine(self, y_bar, y_t, x, t) -> np.ndarray:
        with ad.no_grad():
            out = refine(y_bar, y_t, x, t, self.params, self.config, self.norm, self._adj)
        return out.data

    def refine_train(self, y_bar, y_t, x, t) -> Tensor:
        return refine(y_bar, y_t, x, t, self.params, self.config, self.norm, self._adj)


def load_model(params: ModelParams, config: ModelConfig, norm: Normalization2D, kind: str):
    if kind == "refiner":
        return Refiner(params, config, norm)
    if kind == "initial":
        return InitialPredictor(params, config, norm)
    raise CheckpointError(f"unknown model kind {kind!r}")
