"""Long-range (velocity) and short-range (score) modules and their joint training.

The long module maps an intermediate state x_t to per-point features and a
predicted velocity x1 - x0. The short module predicts the displacement x1 - x_t
from x_t concatenated with the long module's encoder features. The long
decoder only exists to supply the velocity loss during training.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import AdamState, NonFiniteError, ShapeError, Tape, Tensor, adam_step
from .geometry import PointCloud, TrainingPatch, bounding_sphere_radius, extract_patch, interpolate
from .graphnet import Decoder, DecoderConfig, Encoder, EncoderConfig
from .metrics import emd_exact

log = logging.getLogger(__name__)

VARIANTS = ("hybrid", "baseline_score")
SHORT_LOSSES = ("emd", "l2")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Widths are (hidden, out) pairs, one per layer."""

    variant: str = "hybrid"
    encoder_layers: tuple = ((32, 64), (64, 96))
    encoder_k: int = 32
    decoder_layers: tuple = ((64, 32), (32, 3))
    decoder_k: int = 8
    decoder_kind: str = "graph_conv"
    # overrides used to parameter-match ablation variants
    short_encoder_layers: Optional[tuple] = None
    short_decoder_layers: Optional[tuple] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for layers in (self.decoder_layers, self.short_decoder_layers):
            if layers is not None and layers[-1][1] != 3:
                raise ValueError("decoders must end in 3 output channels")

    @property
    def conditioned(self) -> bool:
        return self.variant == "hybrid"

    def long_encoder_config(self) -> EncoderConfig:
        return EncoderConfig(3, tuple(map(tuple, self.encoder_layers)), self.encoder_k)

    def long_decoder_config(self) -> DecoderConfig:
        return DecoderConfig(self.encoder_layers[-1][1], tuple(map(tuple, self.decoder_layers)),
                             self.decoder_k, self.decoder_kind)

    def short_encoder_config(self) -> EncoderConfig:
        layers = tuple(map(tuple, self.short_encoder_layers or self.encoder_layers))
        width = 3 + (self.encoder_layers[-1][1] if self.conditioned else 0)
        return EncoderConfig(width, layers, self.encoder_k)

    def short_decoder_config(self) -> DecoderConfig:
        enc = self.short_encoder_config()
        layers = tuple(map(tuple, self.short_decoder_layers or self.decoder_layers))
        return DecoderConfig(enc.out_width, layers, self.decoder_k, self.decoder_kind)

    def to_dict(self) -> dict:
        return {k: (list(map(list, v)) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        conv = {k: (tuple(map(tuple, v)) if isinstance(v, list) else v) for k, v in d.items()}
        return cls(**conv)


class HybridModel:
    """Parameter groups: long_encoder, long_decoder, short_encoder, short_decoder.

    The ``baseline_score`` variant has no long module at all.
    """

    def __init__(self, config: ModelConfig = ModelConfig(), seed: Optional[int] = 0):
        self.config = config
        rng = None if seed is None else np.random.default_rng(seed)
        if config.conditioned:
            self.long_encoder: Optional[Encoder] = Encoder(config.long_encoder_config(), rng)
            self.long_decoder: Optional[Decoder] = Decoder(config.long_decoder_config(), rng)
        else:
            self.long_encoder = self.long_decoder = None
        self.short_encoder = Encoder(config.short_encoder_config(), rng)
        self.short_decoder = Decoder(config.short_decoder_config(), rng)

    @classmethod
    def zeros(cls, config: ModelConfig = ModelConfig()) -> "HybridModel":
        return cls(config, seed=None)

    def groups(self) -> dict:
        out = {}
        for name in ("long_encoder", "long_decoder", "short_encoder", "short_decoder"):
            module = getattr(self, name)
            if module is not None:
                out[name] = module
        return out

    def parameters(self) -> dict[str, Tensor]:
        return {name: t for g, module in self.groups().items() for name, t in module.parameters(g)}

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self.parameters().values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(params) != set(state):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise ShapeError(f"state dict mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
        for name, t in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise ShapeError(f"parameter {name!r}: shape {arr.shape}, expected {t.shape}")
            t.data = arr.copy()


def long_forward(model: HybridModel, xt) -> tuple[Tensor, Tensor]:
    """Long encoder features and the predicted velocity."""
    if model.long_encoder is None:
        raise ValueError("model has no long module")
    features = model.long_encoder(xt)
    return features, model.long_decoder(features)


def long_features(model: HybridModel, xt) -> Optional[Tensor]:
    return None if model.long_encoder is None else model.long_encoder(xt)


def short_forward(model: HybridModel, xt, long_feats: Optional[Tensor]) -> Tensor:
    xt = xt if isinstance(xt, Tensor) else Tensor(xt)
    if model.config.conditioned:
        if long_feats is None:
            raise ValueError("hybrid short module needs long-range features")
        if long_feats.shape[0] != xt.shape[0]:
            raise ShapeError(f"short_forward: {xt.shape[0]} points but {long_feats.shape[0]} feature rows")
        inp = dc.concat_lastdim(xt, long_feats)
    else:
        inp = xt
    return model.short_decoder(model.short_encoder(inp))


def _check_pair(op, a, b):
    sa = a.shape if hasattr(a, "shape") else np.shape(a)
    sb = b.shape if hasattr(b, "shape") else np.shape(b)
    if tuple(sa) != tuple(sb):
        raise ShapeError(f"{op}: shape mismatch {sa} vs {sb}")


def loss_long(v_pred: Tensor, x0, x1) -> Tensor:
    """Mean over points of |v - (x1 - x0)|^2."""
    _check_pair("loss_long", v_pred, x0)
    _check_pair("loss_long", x0, x1)
    target = np.asarray(x1) - np.asarray(x0)
    return dc.scalar_mul(dc.mse(v_pred, target), target.shape[1])


def loss_short_l2(s_pred: Tensor, xt, x1) -> Tensor:
    """Mean over points of |s - (x1 - xt)|^2."""
    _check_pair("loss_short_l2", s_pred, xt)
    _check_pair("loss_short_l2", xt, x1)
    target = np.asarray(x1) - np.asarray(xt)
    return dc.scalar_mul(dc.mse(s_pred, target), target.shape[1])


def loss_short_emd(x_filtered: Tensor, x1) -> Tensor:
    """Mean matched distance under the optimal bijection filtered -> clean.

    The assignment is solved on current values and held fixed for the gradient.
    """
    x_filtered = x_filtered if isinstance(x_filtered, Tensor) else Tensor(x_filtered)
    x1 = np.asarray(x1, dtype=np.float64)
    _check_pair("loss_short_emd", x_filtered, x1)
    _, perm = emd_exact(x_filtered.data, x1)
    dist = dc.l2norm_rows(dc.sub(x_filtered, x1[perm]))
    return dc.scalar_mul(dc.total(dist), 1.0 / len(x1))


def loss_hybrid(short: Tensor, long: Optional[Tensor], lam: float) -> Tensor:
    weighted = dc.scalar_mul(short, lam)
    return weighted if long is None else dc.add(weighted, long)


@dataclass(frozen=True)
class TrainingSample:
    x0: np.ndarray
    x1: np.ndarray
    t: float
    xt: np.ndarray


def make_training_sample(clean_points, sigma: float, rng: np.random.Generator) -> TrainingSample:
    """x0 = x1 + sigma * xi, one t ~ U(0, 1) for the whole patch, xt on the segment.

    ``sigma`` must already be expressed in the patch's normalized frame.
    """
    x1 = np.asarray(clean_points, dtype=np.float64)
    x0 = x1 + sigma * rng.standard_normal(x1.shape)
    t = float(rng.random())
    return TrainingSample(x0, x1, t, interpolate(x0, x1, t))


def patch_sigma(sigma_h: float, item: TrainingPatch) -> float:
    """Convert a noise scale relative to the cloud radius into the patch frame."""
    return sigma_h * item.cloud_radius / item.patch.scale


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 10.0
    sigma_h: float = 0.02
    lr: float = 1e-4
    steps: int = 1000
    patch_k: int = 256
    seed: int = 0
    loss: str = "emd"

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not self.sigma_h > 0:
            raise ValueError("sigma_H must be positive")
        if self.loss not in SHORT_LOSSES:
            raise ValueError(f"short loss must be one of {SHORT_LOSSES}")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")


@dataclass
class StepLosses:
    step: int
    long: float
    short: float
    hybrid: float


def training_step(model: HybridModel, sample: TrainingSample, config: TrainConfig) -> tuple[Tape, Tensor, StepLosses]:
    """Forward pass on a tape; returns the tape and loss for the caller to differentiate."""
    with Tape() as tape:
        xt = Tensor(sample.xt)
        if model.config.conditioned:
            feats, v_pred = long_forward(model, xt)
            l_long = loss_long(v_pred, sample.x0, sample.x1)
        else:
            feats, l_long = None, None
        s_pred = short_forward(model, xt, feats)
        if config.loss == "emd":
            l_short = loss_short_emd(dc.add(xt, s_pred), sample.x1)
        else:
            l_short = loss_short_l2(s_pred, sample.xt, sample.x1)
        total = loss_hybrid(l_short, l_long, config.lam)
    losses = StepLosses(0, float(l_long.data) if l_long is not None else 0.0,
                        float(l_short.data), float(total.data))
    return tape, total, losses


def train(model: HybridModel, dataset: Sequence[TrainingPatch], config: TrainConfig,
          callback: Optional[Callable[[StepLosses], None]] = None) -> tuple[HybridModel, list[StepLosses]]:
    """Joint training, one patch per step; deterministic for a fixed seed."""
    if not dataset:
        raise TrainingError("training set is empty")
    rng = np.random.default_rng(config.seed)
    state = AdamState(lr=config.lr)
    params = model.parameters()
    trace: list[StepLosses] = []
    for step in range(config.steps):
        item = dataset[int(rng.integers(len(dataset)))]
        sample = make_training_sample(item.patch.points, patch_sigma(config.sigma_h, item), rng)
        try:
            tape, total, losses = training_step(model, sample, config)
            if not np.isfinite(losses.hybrid):
                raise NonFiniteError("loss is not finite")
            tape.backward(total)
        except NonFiniteError as exc:
            raise TrainingError(f"non-finite value at step {step}: {exc}") from exc
        adam_step(params, state)
        losses.step = step
        trace.append(losses)
        if callback is not None:
            callback(losses)
    return model, trace


def build_training_set(clouds: Sequence[tuple[str, PointCloud]], patch_k: int,
                       patches_per_cloud: int, seed: int = 0) -> list[TrainingPatch]:
    """Clean patches around randomly chosen references of each cloud."""
    rng = np.random.default_rng(seed)
    out = []
    for label, cloud in clouds:
        radius = bounding_sphere_radius(cloud)
        count = min(patches_per_cloud, len(cloud))
        refs = rng.choice(len(cloud), size=count, replace=False)
        out += [TrainingPatch(extract_patch(cloud, int(r), patch_k), radius, label) for r in sorted(refs)]
    return out


def matched_variant(base: ModelConfig, variant: str, decoder_kind: Optional[str] = None) -> ModelConfig:
    """A variant config whose total parameter count is as close as possible to ``base``.

    Only hidden widths are scaled; output widths stay fixed.
    """
    target = HybridModel.zeros(base).num_parameters()
    kind = decoder_kind or base.decoder_kind

    def build(scale):
        enc = tuple((max(1, round(h * scale)), o) for h, o in base.encoder_layers)
        dec = tuple((max(1, round(h * scale)), o) for h, o in base.decoder_layers)
        if variant == "baseline_score":
            return replace(base, variant=variant, decoder_kind=kind,
                           short_encoder_layers=enc, short_decoder_layers=dec)
        return replace(base, variant=variant, decoder_kind=kind,
                       short_decoder_layers=dec,
                       decoder_layers=dec)

    best, best_gap = None, None
    for scale in np.arange(0.5, 4.0, 0.01):
        cfg = build(scale)
        gap = abs(HybridModel.zeros(cfg).num_parameters() - target)
        if best_gap is None or gap < best_gap:
            best, best_gap = cfg, gap
    return best


def config_for(variant_name: str, base: ModelConfig = ModelConfig()) -> tuple[ModelConfig, str]:
    """Model config and short-loss name for an ablation variant."""
    if variant_name == "hybrid":
        return base, "emd"
    if variant_name == "l2_loss":
        return base, "l2"
    if variant_name == "baseline_score":
        return matched_variant(base, "baseline_score"), "emd"
    if variant_name == "fc_decoder":
        return matched_variant(base, base.variant, decoder_kind="fully_connected"), "emd"
    raise ValueError(f"unknown ablation variant {variant_name!r}")


ABLATION_VARIANTS = ("baseline_score", "fc_decoder", "l2_loss", "hybrid")
