"""Single-pass 3D U-Net nowcaster with an optional echo-top-height channel.

Input is (batch, channel, time=4, H, W) with channel 0 the rain rate and
channel 1, when present, the echo top height scaled by 16 km. The head
collapses time with a (4, 1, 1) convolution into 18 output channels, one per
5-minute lead time, and clamps to non-negative rain.
"""

import csv
import io
import struct
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import autotensor as at
from .errors import ArgumentError, ConfigError, FormatError, NumericFailure, StorageError
from .gridio import CADENCE_S, GridFrame, TEST, Variable, read_frame, resolve

RAW = "RAW"
LOG1P = "LOG1P"


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 1
    in_frames: int = 4
    out_frames: int = 18
    levels: int = 3
    base_channels: int = 8
    kernel: tuple = (3, 3, 3)
    seed: int = 0
    rain_transform: str = RAW
    eth_scale: float = 16.0
    rows: int = 64
    cols: int = 64

    def __post_init__(self):
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        if self.in_channels not in (1, 2):
            raise ConfigError(f"in_channels must be 1 or 2, got {self.in_channels}")
        if self.levels < 1 or self.base_channels < 1:
            raise ConfigError("levels and base_channels must be >= 1")
        if len(self.kernel) != 3 or any(k % 2 == 0 or k < 1 for k in self.kernel):
            raise ConfigError(f"kernel extents must be three odd integers, got {self.kernel}")
        if self.rain_transform not in (RAW, LOG1P):
            raise ConfigError(f"rain_transform must be RAW or LOG1P, got {self.rain_transform!r}")
        if not self.eth_scale > 0:
            raise ConfigError("eth_scale must be positive")
        f = 2 ** (self.levels - 1)
        if self.rows % f or self.cols % f:
            raise ConfigError(
                f"spatial extent {self.rows}x{self.cols} is not divisible by 2^(levels-1) = {f}"
            )

    def to_text(self):
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            out.append(f"{f.name}={v}\n")
        return "".join(out)

    @classmethod
    def from_text(cls, text):
        kw = {}
        types = {f.name: f.type for f in fields(cls)}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, val = line.partition("=")
            if key not in types:
                raise FormatError(f"unknown model config key {key!r}")
            if key == "kernel":
                kw[key] = tuple(int(x) for x in val.split(","))
            elif key == "rain_transform":
                kw[key] = val
            elif key == "eth_scale":
                kw[key] = float(val)
            else:
                kw[key] = int(val)
        return cls(**kw)


def _he_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class UNet3D:
    """Fixed-topology encoder/decoder with explicit layer-by-layer backward."""

    def __init__(self, config, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params = []
        self._by_name = {}
        self._cache = None
        rng = np.random.default_rng(config.seed)
        kt, kh, kw = config.kernel
        c = config.in_channels
        widths = [config.base_channels * 2**l for l in range(config.levels)]
        for l, w in enumerate(widths):
            self._add_conv(rng, f"enc{l}.conv1", c, w, config.kernel)
            self._add_conv(rng, f"enc{l}.conv2", w, w, config.kernel)
            c = w
        for l in reversed(range(config.levels - 1)):
            self._add_conv(rng, f"dec{l}.conv1", widths[l + 1] + widths[l], widths[l], config.kernel)
            self._add_conv(rng, f"dec{l}.conv2", widths[l], widths[l], config.kernel)
        self._add_conv(rng, "head", widths[0], config.out_frames, (config.in_frames, 1, 1))
        self.steps = 0

    def _add_conv(self, rng, name, cin, cout, kshape):
        fan_in = cin * int(np.prod(kshape))
        w = at.Parameter(f"{name}.weight", _he_uniform(rng, (cout, cin) + tuple(kshape), fan_in, self.dtype))
        b = at.Parameter(f"{name}.bias", np.zeros(cout, dtype=self.dtype))
        for p in (w, b):
            self.params.append(p)
            self._by_name[p.name] = p

    def __getitem__(self, name):
        return self._by_name[name]

    @property
    def n_parameters(self):
        return sum(p.value.size for p in self.params)

    def astype(self, dtype):
        other = UNet3D.__new__(UNet3D)
        other.config = self.config
        other.dtype = np.dtype(dtype)
        other.params = [at.Parameter(p.name, p.value.astype(dtype)) for p in self.params]
        other._by_name = {p.name: p for p in other.params}
        other._cache = None
        other.steps = self.steps
        return other

    def state(self):
        return {p.name: p.value.copy() for p in self.params}

    def load_state(self, state):
        for p in self.params:
            v = state[p.name]
            if v.shape != p.value.shape:
                raise FormatError(f"{p.name}: stored shape {v.shape} != model shape {p.value.shape}")
            p.value[...] = v

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    # -- forward / backward ------------------------------------------------

    def _conv(self, name, x, padding=None):
        return at.conv3d_forward(x, self[name + ".weight"].value, self[name + ".bias"].value, padding)

    def _conv_back(self, name, g, x, padding=None):
        w, b = self[name + ".weight"], self[name + ".bias"]
        gx, gw, gb = at.conv3d_backward(g, x, w.value, padding)
        w.grad += gw
        b.grad += gb
        return gx

    def _block(self, prefix, h, cache):
        for conv in ("conv1", "conv2"):
            name = f"{prefix}.{conv}"
            pre = self._conv(name, h)
            cache[name] = (h, pre)
            h = at.relu_forward(pre)
        return h

    def _block_back(self, prefix, g, cache):
        for conv in ("conv2", "conv1"):
            name = f"{prefix}.{conv}"
            h, pre = cache[name]
            g = self._conv_back(name, at.relu_backward(g, pre), h)
        return g

    def forward(self, x, keep=True):
        """Network output in transformed rain space, shape (B, out_frames, H, W)."""
        cfg = self.config
        if x.ndim != 5 or x.shape[1] != cfg.in_channels or x.shape[2] != cfg.in_frames:
            raise ArgumentError(
                f"expected input (B, {cfg.in_channels}, {cfg.in_frames}, H, W), got {x.shape}"
            )
        f = 2 ** (cfg.levels - 1)
        if x.shape[3] % f or x.shape[4] % f:
            raise ArgumentError(f"spatial extent {x.shape[3:]} not divisible by {f}")
        cache = {}
        skips = []
        h = np.ascontiguousarray(x, dtype=self.dtype)
        for l in range(cfg.levels):
            if l > 0:
                shape = h.shape
                h, idx = at.maxpool2_spatial_forward(h)
                cache[f"pool{l}"] = (shape, idx)
            h = self._block(f"enc{l}", h, cache)
            skips.append(h)
        for l in reversed(range(cfg.levels - 1)):
            u = at.upsample2_nearest(h)
            cache[f"cat{l}"] = u.shape[1]
            h = self._block(f"dec{l}", at.concat_channels(u, skips[l]), cache)
        pre = self._conv("head", h, padding=(0, 0, 0))
        cache["head"] = (h, pre)
        y = at.relu_forward(pre[:, :, 0])
        if not np.all(np.isfinite(y)):
            raise NumericFailure("non-finite activation in U-Net forward pass")
        self._cache = cache if keep else None
        return y

    def backward(self, grad_y):
        """Accumulate parameter gradients; return the gradient w.r.t. the input."""
        cache = self._cache
        if cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        levels = self.config.levels
        h, pre = cache["head"]
        g = at.relu_backward(grad_y, pre[:, :, 0])[:, :, None]
        g = self._conv_back("head", np.ascontiguousarray(g), h, padding=(0, 0, 0))
        skip_grads = {}
        for l in range(levels - 1):
            g = self._block_back(f"dec{l}", g, cache)
            g_up, skip_grads[l] = at.concat_channels_backward(g, cache[f"cat{l}"])
            g = at.upsample2_nearest_backward(g_up)
        for l in reversed(range(levels)):
            if l in skip_grads:
                g = g + skip_grads[l]
            g = self._block_back(f"enc{l}", g, cache)
            if l > 0:
                shape, idx = cache[f"pool{l}"]
                g = at.maxpool2_spatial_backward(g, idx, shape)
        self._cache = None
        return g


# -- normalization -------------------------------------------------------------


def transform_rain(rain, config):
    rain = np.asarray(rain, dtype=np.float32)
    if config.rain_transform == LOG1P:
        return np.log1p(rain)
    return rain


def inverse_transform_rain(values, config):
    if config.rain_transform == LOG1P:
        return np.expm1(values)
    return values


def make_inputs(rain, eth, config):
    """Stack (B, in_frames, H, W) rain and optional ETH into the network layout."""
    rain = np.asarray(rain, dtype=np.float32)
    if rain.ndim == 3:
        rain = rain[None]
    chans = [transform_rain(rain, config)]
    if config.in_channels == 2:
        if eth is None:
            raise ArgumentError("model expects an ETH channel but none was given")
        eth = np.asarray(eth, dtype=np.float32)
        if eth.ndim == 3:
            eth = eth[None]
        if eth.shape != rain.shape:
            raise ArgumentError(f"ETH shape {eth.shape} != rain shape {rain.shape}")
        chans.append(eth / np.float32(config.eth_scale))
    elif eth is not None:
        raise ArgumentError("single-channel model cannot take an ETH input")
    return np.ascontiguousarray(np.stack(chans, axis=1))


def predict_arrays(model, rain, eth=None):
    """Rain-rate nowcasts (B, out_frames, H, W) from raw input frames."""
    x = make_inputs(rain, eth, model.config)
    y = model.forward(x, keep=False)
    return np.maximum(inverse_transform_rain(y, model.config), 0).astype(np.float32)


# -- checkpoints -----------------------------------------------------------------

CKPT_MAGIC = b"UNCK"
CKPT_VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    state: dict
    steps: int = 0

    def model(self, dtype=np.float32):
        m = UNet3D(self.config, dtype=dtype)
        m.load_state(self.state)
        m.steps = self.steps
        return m

    @classmethod
    def from_model(cls, model):
        return cls(model.config, {k: v.astype(np.float32) for k, v in model.state().items()}, model.steps)


def encode_checkpoint(ckpt):
    """Serialize: magic, u16 version, u32-length config text, u32 parameter
    count, then per parameter u16 name length, name, u8 axis count, u32 dims,
    float32 values; trailing u64 step count. All little-endian."""
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<H", CKPT_VERSION))
    text = ckpt.config.to_text().encode("utf-8")
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)
    names = list(ckpt.state)
    if len(set(names)) != len(names):
        raise ArgumentError("duplicate parameter names")
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        v = np.asarray(ckpt.state[name], dtype="<f4")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", v.ndim))
        buf.write(struct.pack(f"<{v.ndim}I", *v.shape))
        buf.write(v.tobytes())
    buf.write(struct.pack("<Q", int(ckpt.steps)))
    return buf.getvalue()


def decode_checkpoint(data, path="<bytes>"):
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"{path}: truncated checkpoint")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4) != CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic")
    (version,) = struct.unpack("<H", take(2))
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (n,) = struct.unpack("<I", take(4))
    config = ModelConfig.from_text(take(n).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    state = {}
    for _ in range(count):
        (ln,) = struct.unpack("<H", take(2))
        name = take(ln).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape))
        if name in state:
            raise FormatError(f"{path}: duplicate parameter {name}")
        state[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    (steps,) = struct.unpack("<Q", take(8))
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    fresh = UNet3D(config)
    expected = {p.name: p.shape for p in fresh.params}
    got = {k: v.shape for k, v in state.items()}
    if expected != got:
        raise FormatError(f"{path}: parameters do not match a model built from the stored config")
    return Checkpoint(config, state, steps)


def save_checkpoint(ckpt, path):
    try:
        Path(path).write_bytes(encode_checkpoint(ckpt))
    except OSError as e:
        raise StorageError(path, f"cannot write checkpoint: {e.strerror or e}") from e


def load_checkpoint(path):
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise StorageError(path, f"cannot read checkpoint: {e.strerror or e}") from e
    return decode_checkpoint(data, path)


# -- data ----------------------------------------------------------------------


@dataclass
class SequenceData:
    """Manifest sequences loaded into memory.

    rain, eth: float32 (N, 22, H, W); folds: list of fold labels.
    """

    rain: np.ndarray
    eth: np.ndarray
    folds: list
    starts: list

    @classmethod
    def from_manifest(cls, manifest, base_dir=None, records=None):
        records = manifest.records if records is None else records
        if not records:
            raise ConfigError("no sequences to load")
        rain, eth = [], []
        for rec in records:
            rain.append([read_frame(resolve(p, base_dir)).values for p in rec.rain_paths])
            eth.append([read_frame(resolve(p, base_dir)).values for p in rec.eth_paths])
        return cls(
            np.asarray(rain, dtype=np.float32),
            np.asarray(eth, dtype=np.float32),
            [r.fold for r in records],
            [r.start_timestamp for r in records],
        )

    def indices(self, predicate):
        return [i for i, f in enumerate(self.folds) if predicate(f)]

    def batch(self, idx, config):
        idx = list(idx)
        n_in = config.in_frames
        rain_in = self.rain[idx, :n_in]
        eth_in = self.eth[idx, :n_in] if config.in_channels == 2 else None
        x = make_inputs(rain_in, eth_in, config)
        y = transform_rain(self.rain[idx, n_in:n_in + config.out_frames], config)
        return x, y


# -- training --------------------------------------------------------------------


@dataclass(frozen=True)
class Hyper:
    lr: float = 1e-3
    batch: int = 2
    max_epochs: int = 50
    patience_early: int = 8
    plateau_patience: int = 3
    plateau_factor: float = 0.5
    val_every: int = 1


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list  # dicts with round, epoch, train_mse, val_mse, lr
    failure: str = None
    best_round: int = 0

    def log_csv(self):
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["round", "epoch", "train_mse", "val_mse", "lr"])
        for r in self.log:
            w.writerow([r["round"], r["epoch"], repr(r["train_mse"]), repr(r["val_mse"]), repr(r["lr"])])
        return out.getvalue()


def _loss_on(model, data, idx, batch):
    total, n = 0.0, 0
    for s in range(0, len(idx), batch):
        chunk = idx[s:s + batch]
        x, y = data.batch(chunk, model.config)
        pred = model.forward(x, keep=False)
        d = (pred - y).astype(np.float64)
        total += float(np.sum(d * d))
        n += d.size
    return total / n


def train(model, data, fold, hyper=Hyper(), base_dir=None, progress=None):
    """Train on every non-test sequence outside ``fold``, validate on ``fold``.

    ``data`` is a SequenceData or a SequenceManifest. Returns the checkpoint
    with the best validation loss.
    """
    if not isinstance(data, SequenceData):
        data = SequenceData.from_manifest(data, base_dir)
    train_idx = data.indices(lambda f: f is not None and f != TEST and f != fold)
    val_idx = data.indices(lambda f: f == fold)
    if not val_idx:
        raise ConfigError(f"validation fold {fold} is empty")
    if not train_idx:
        raise ConfigError(f"no training sequences outside fold {fold}")

    rng = np.random.default_rng([model.config.seed, 1])
    state = at.AdamState()
    lr = hyper.lr
    best = (np.inf, Checkpoint.from_model(model), 0)
    log = []
    since_best = 0
    plateau = 0
    failure = None
    rnd = 0
    for epoch in range(1, hyper.max_epochs + 1):
        order = [train_idx[i] for i in rng.permutation(len(train_idx))]
        sq, cnt = 0.0, 0
        try:
            for s in range(0, len(order), hyper.batch):
                x, y = data.batch(order[s:s + hyper.batch], model.config)
                model.zero_grad()
                pred = model.forward(x)
                loss = at.mse_loss_forward(pred, y)
                if not np.isfinite(loss):
                    raise NumericFailure(f"non-finite training loss at epoch {epoch}")
                model.backward(at.mse_loss_backward(pred, y))
                at.adam_step(model.params, state, lr)
                model.steps += 1
                sq += loss * pred.size
                cnt += pred.size
        except NumericFailure as e:
            failure = str(e)
            break
        if epoch % hyper.val_every:
            continue
        rnd += 1
        try:
            val = _loss_on(model, data, val_idx, hyper.batch)
        except NumericFailure as e:
            failure = str(e)
            break
        if not np.isfinite(val):
            failure = f"non-finite validation loss at epoch {epoch}"
            break
        log.append({"round": rnd, "epoch": epoch, "train_mse": sq / cnt, "val_mse": val, "lr": lr})
        if progress:
            progress(log[-1])
        if val < best[0]:
            best = (val, Checkpoint.from_model(model), rnd)
            since_best = 0
            plateau = 0
        else:
            since_best += 1
            plateau += 1
            if since_best >= max(hyper.patience_early, 1):
                break
            if plateau >= hyper.plateau_patience:
                lr *= hyper.plateau_factor
                plateau = 0
    return TrainResult(best[1], log, failure, best[2])


# -- prediction --------------------------------------------------------------------


def _as_checkpoint(ckpt):
    if isinstance(ckpt, Checkpoint):
        return ckpt
    return load_checkpoint(ckpt)


def predict_frames(model, rain_frames, eth_frames=None):
    """18 rain GridFrames from the input frames, stamped t_last + 300*k."""
    cfg = model.config
    if len(rain_frames) != cfg.in_frames:
        raise ArgumentError(f"need {cfg.in_frames} rain frames, got {len(rain_frames)}")
    if cfg.in_channels == 1 and eth_frames is not None:
        raise ArgumentError("single-channel model cannot take ETH frames")
    if cfg.in_channels == 2 and (eth_frames is None or len(eth_frames) != cfg.in_frames):
        raise ArgumentError(f"model needs {cfg.in_frames} ETH frames")
    for f in rain_frames:
        if f.variable != Variable.RAIN_MMH:
            raise ArgumentError(f"input frame holds {f.variable.name}, expected RAIN_MMH")
    rain = np.stack([f.values for f in rain_frames])
    eth = None if eth_frames is None else np.stack([f.values for f in eth_frames])
    pred = predict_arrays(model, rain, eth)[0]
    last = rain_frames[-1]
    return [
        GridFrame(Variable.RAIN_MMH, last.timestamp + CADENCE_S * (k + 1), pred[k],
                  pixel_km=last.pixel_km, nodata=last.nodata)
        for k in range(cfg.out_frames)
    ]


def predict_sequence(checkpoint, record, base_dir=None, use_eth=None):
    """Nowcast the 18 frames following the first ``in_frames`` of a sequence.

    ``use_eth`` defaults to whether the checkpoint has an ETH channel; passing
    True to a single-channel checkpoint is an argument error.
    """
    ckpt = _as_checkpoint(checkpoint)
    model = ckpt.model()
    n = ckpt.config.in_frames
    if use_eth is None:
        use_eth = ckpt.config.in_channels == 2
    rain = [read_frame(resolve(p, base_dir)) for p in record.rain_paths[:n]]
    eth = [read_frame(resolve(p, base_dir)) for p in record.eth_paths[:n]] if use_eth else None
    return predict_frames(model, rain, eth)


# -- gradient check ------------------------------------------------------------------


def gradcheck_unet(config, batch=1, seed=0, eps=1e-5, tolerance=1e-4, params=True):
    """Central-difference check of the full network in float64.

    Biases are drawn at random so that every term of the backward pass is
    exercised. The loss is the inner product of the output with a fixed random
    tensor. Checks the input and, when ``params`` is true, every parameter.
    """
    rng = np.random.default_rng([seed, 7])
    model = UNet3D(config).astype(np.float64)
    for p in model.params:
        if p.name.endswith(".bias"):
            p.value[...] = rng.uniform(-0.1, 0.1, p.value.shape)
    x = rng.standard_normal((batch, config.in_channels, config.in_frames, config.rows, config.cols))
    tensors = {"input": x}
    if params:
        tensors.update({p.name: p.value for p in model.params})
    r = rng.standard_normal((batch, config.out_frames, config.rows, config.cols))

    def loss_and_grads():
        model.zero_grad()
        y = model.forward(x)
        gx = model.backward(r)
        grads = {p.name: p.grad for p in model.params}
        grads["input"] = gx
        return float(np.sum(y * r)), grads

    return at.gradcheck(loss_and_grads, tensors, eps, tolerance)
