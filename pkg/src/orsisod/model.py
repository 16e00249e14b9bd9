"""End-to-end saliency network, training step and checkpoints."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .dad import DAD
from .errors import ConfigError, NonFiniteError, ShapeError, StateError
from .fce import FCE
from .layers import Conv2d
from .losses import LossReport, total_loss
from .optim import ParamStore, rmsprop_step
from .rpl import PGHead, RPL, ProportionBin, bins_for_batch, check_thresholds, region_proportion_target
from .tensor import Tensor


@dataclass
class ModelConfig:
    input_size: int = 64
    batch: int = 4
    channels: tuple[int, int, int, int, int] = (8, 16, 16, 24, 24)
    common_channels: int = 16
    decoder_channels: int = 16
    reduction_ratio: int = 4
    cross_gating: bool = False
    pg_hidden: int = 16
    bins_lo: float = 0.25
    bins_hi: float = 0.50
    train_gate: str = "gt"
    input_mean: float = 0.4
    input_std: float = 0.2
    seed: int = 0

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.validate()

    def validate(self) -> None:
        if self.input_size <= 0 or self.input_size % 32:
            raise ConfigError(f"model.input_size must be a positive multiple of 32, got {self.input_size}")
        if len(self.channels) != 5 or min(self.channels) < 1:
            raise ConfigError(f"model.channels needs five positive widths, got {self.channels}")
        if self.channels[3] != self.channels[4]:
            raise ConfigError(f"model.channels: levels 4 and 5 must match, got {self.channels[3]} and {self.channels[4]}")
        if self.channels[3] % self.reduction_ratio:
            raise ConfigError(
                f"rpl.reduction_ratio {self.reduction_ratio} must divide level-4 width {self.channels[3]}"
            )
        if (2 * self.common_channels) % self.reduction_ratio:
            raise ConfigError(
                f"rpl.reduction_ratio {self.reduction_ratio} must divide 2 * fce.common_channels"
            )
        if self.input_std <= 0:
            raise ConfigError(f"model.input_std must be positive, got {self.input_std}")
        if self.train_gate not in ("gt", "predicted"):
            raise ConfigError(f"dad.train_gate must be 'gt' or 'predicted', got {self.train_gate!r}")
        check_thresholds((self.bins_lo, self.bins_hi))

    @property
    def thresholds(self) -> tuple[float, float]:
        return self.bins_lo, self.bins_hi

    def fingerprint(self) -> bytes:
        """Digest of everything that determines parameter names and shapes."""
        arch = {
            "channels": list(self.channels),
            "common_channels": self.common_channels,
            "decoder_channels": self.decoder_channels,
            "reduction_ratio": self.reduction_ratio,
            "pg_hidden": self.pg_hidden,
        }
        return hashlib.sha256(json.dumps(arch, sort_keys=True).encode()).digest()


@dataclass
class FeaturePyramid:
    f1: Tensor
    f2: Tensor
    f3: Tensor
    f4: Tensor
    f5: Tensor

    def __iter__(self):
        return iter((self.f1, self.f2, self.f3, self.f4, self.f5))


@dataclass
class SaliencyOutput:
    s: Tensor
    f_g: Tensor
    extras: dict = field(default_factory=dict)


class Backbone:
    """Five stages of 3x3 conv, ReLU and 2x2 average pooling (strides 2..32)."""

    def __init__(self, store: ParamStore, channels, rng: np.random.Generator, name: str = "backbone"):
        widths = (3, *channels)
        self.stages = [Conv2d(store, f"{name}.stage{i + 1}", widths[i], widths[i + 1], 3, rng) for i in range(5)]

    def __call__(self, image: Tensor) -> FeaturePyramid:
        h, w = image.shape[2:]
        if h % 32 or w % 32:
            raise ConfigError(f"input size must be divisible by 32, got {h}x{w}")
        feats = []
        x = image
        for conv in self.stages:
            x = T.avg_pool2(T.relu(conv(x)))
            feats.append(x)
        return FeaturePyramid(*feats)


class SaliencyNet:
    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.params = ParamStore()
        c1, c2, c3, c4, _ = config.channels
        cw, dc = config.common_channels, config.decoder_channels
        self.backbone = Backbone(self.params, config.channels, rng)
        self.rpl = RPL(self.params, c4, rng, config.reduction_ratio, config.cross_gating)
        self.pg = PGHead(self.params, c4, rng, config.pg_hidden)
        self.fce = FCE(self.params, c2, c3, cw, rng, config.reduction_ratio)
        self.dad = DAD(self.params, c1, rng)
        self.dec_mid = Conv2d(self.params, "decoder.mid", c4 + cw, dc, 3, rng)
        self.dec_low = Conv2d(self.params, "decoder.low", dc + c1, dc, 3, rng)
        self.head = Conv2d(self.params, "decoder.head", dc, 1, 1, rng)

    def predict_bins(self, f_g: Tensor) -> list[ProportionBin]:
        return bins_for_batch(f_g, self.config.thresholds)

    def forward(self, image, gate_bins: list[ProportionBin] | None = None) -> SaliencyOutput:
        """Run the network; without ``gate_bins`` the proportion head gates the detail branch."""
        image = T.as_tensor(image)
        if image.ndim != 4 or image.shape[1] != 3:
            raise ShapeError(f"expected an (N, 3, H, W) image batch, got {image.shape}")
        x = (image - self.config.input_mean) / self.config.input_std
        pyr = self.backbone(x)
        f_a = self.rpl(pyr.f4, pyr.f5)
        f_g = self.pg(pyr.f5)
        f_w = self.fce(pyr.f2, pyr.f3)
        bins = gate_bins if gate_bins is not None else self.predict_bins(f_g)
        f_p = self.dad(pyr.f1, bins)

        x = T.upsample_nearest(f_a, f_w.shape[2] // f_a.shape[2])
        x = T.relu(self.dec_mid(T.concat_channels([x, f_w])))
        x = T.upsample_nearest(x, f_p.shape[2] // x.shape[2])
        x = T.relu(self.dec_low(T.concat_channels([x, f_p])))
        s = T.upsample_nearest(T.sigmoid(self.head(x)), image.shape[2] // x.shape[2])
        return SaliencyOutput(s=s, f_g=f_g, extras={"bins": bins})

    __call__ = forward

    def predict(self, images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        out = self.forward(Tensor(images))
        return out.s.data, out.f_g.data.reshape(-1)


@dataclass
class TrainSettings:
    lr: float = 1e-5
    momentum: float = 0.9
    decay: float = 0.99
    eps: float = 1e-8
    beta2: float = 0.3
    bce_eps: float = 1e-7


def train_step(
    net: SaliencyNet,
    images: np.ndarray,
    gts: np.ndarray,
    settings: TrainSettings | None = None,
) -> LossReport:
    """Forward, loss, backward and one RMSprop update on a batch.

    ``images`` is (N, 3, H, W) in [0, 1]; ``gts`` is (N, 1, H, W) in {0, 1}.
    """
    settings = settings or TrainSettings()
    images = np.asarray(images, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    if images.shape[0] != gts.shape[0] or images.shape[2:] != gts.shape[2:] or gts.shape[1] != 1:
        raise ShapeError(f"batch mismatch: images {images.shape}, masks {gts.shape}")
    target = region_proportion_target(gts)
    if net.config.train_gate == "gt":
        bins = bins_for_batch(target, net.config.thresholds)
    else:
        bins = None

    bad = [name for name, p in net.params if not np.all(np.isfinite(p.data))]
    if bad:
        raise NonFiniteError(f"training aborted at step {net.params.steps}: non-finite parameter {bad[0]}")
    net.params.zero_grad()
    try:
        out = net.forward(Tensor(images), bins)
        report = total_loss(out.s, Tensor(gts), out.f_g, target, settings.beta2, settings.bce_eps)
        report.total_tensor.backward()
    except NonFiniteError as exc:
        raise NonFiniteError(f"training aborted at step {net.params.steps}: {exc}") from exc
    bad = [name for name, p in net.params if not np.all(np.isfinite(p.grad))]
    if bad:
        raise NonFiniteError(f"training aborted at step {net.params.steps}: non-finite gradient in {bad[0]}")
    rmsprop_step(net.params, settings.lr, settings.momentum, settings.decay, settings.eps)
    report.total_tensor = None
    return report


# checkpoints ---------------------------------------------------------------

MAGIC = b"ORSC"
VERSION = 1


def _write_array(fh, name: str, arr: np.ndarray) -> None:
    raw = name.encode()
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_array(fh) -> tuple[str, np.ndarray]:
    (nlen,) = struct.unpack("<H", fh.read(2))
    name = fh.read(nlen).decode()
    (ndim,) = struct.unpack("<B", fh.read(1))
    shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    return name, data


def save_checkpoint(path, net: SaliencyNet) -> None:
    """Parameters plus optimiser state, with a shape header per tensor.

    Layout: magic, version, 32-byte config fingerprint, step count, entry
    count, then (name, ndim, shape, float64 data) per entry.
    """
    store = net.params
    entries = [(f"param/{k}", t.data) for k, t in store]
    entries += [(f"square_avg/{k}", v) for k, v in store.square_avg.items()]
    entries += [(f"momentum/{k}", v) for k, v in store.momentum_buf.items()]
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(net.config.fingerprint())
        fh.write(struct.pack("<QI", store.steps, len(entries)))
        for name, arr in entries:
            _write_array(fh, name, arr)
    tmp.replace(path)


def load_checkpoint(path, net: SaliencyNet) -> None:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise StateError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise StateError(f"{path}: unsupported checkpoint version {version}")
        if fh.read(32) != net.config.fingerprint():
            raise StateError(f"{path}: checkpoint was written for a different model configuration")
        try:
            steps, count = struct.unpack("<QI", fh.read(12))
            entries = dict(_read_array(fh) for _ in range(count))
        except (struct.error, ValueError, UnicodeDecodeError) as exc:
            raise StateError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc

    store = net.params
    for name, t in store:
        key = f"param/{name}"
        if key not in entries:
            raise StateError(f"{path}: missing parameter {name}")
        if entries[key].shape != t.shape:
            raise StateError(f"{path}: {name} has shape {entries[key].shape}, expected {t.shape}")
    for name, t in store:
        t.data = entries[f"param/{name}"].copy()
    store.square_avg = {k.split("/", 1)[1]: v.copy() for k, v in entries.items() if k.startswith("square_avg/")}
    store.momentum_buf = {k.split("/", 1)[1]: v.copy() for k, v in entries.items() if k.startswith("momentum/")}
    store.steps = steps


def config_dict(config: ModelConfig) -> dict:
    d = asdict(config)
    d["channels"] = list(config.channels)
    return d
