"""Line-oriented ``key = value`` configuration with a documented key registry."""

import calendar
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, EthcastError, ParseError


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _list(kind):
    def parse(s):
        return tuple(kind(x) for x in s.split(",") if x.strip())
    parse.__name__ = f"list of {kind.__name__}"
    return parse


def _opt_int(s):
    return None if s.strip().lower() in ("", "none", "auto") else int(s)


def _date(s):
    """YYYY-MM-DD (UTC midnight), a unix time, or 'none'."""
    s = s.strip()
    if s.lower() in ("", "none"):
        return None
    if "-" in s:
        y, m, d = (int(x) for x in s.split("-"))
        return calendar.timegm((y, m, d, 0, 0, 0))
    return int(s)


def _choice(*options):
    def parse(s):
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s
    parse.__name__ = "|".join(options)
    return parse


@dataclass(frozen=True)
class Key:
    name: str
    parse: object
    default: str
    doc: str


KEYS = [
    # synthetic data
    Key("synthgen.n_events", int, "16", "training-period events (one per day from 2020-06-01)"),
    Key("synthgen.n_test_events", int, "4", "test-year events (one per day from 2021-06-01)"),
    Key("synthgen.seed", int, "0", "base seed; event i uses seed + i"),
    Key("synthgen.rows", int, "64", "grid rows"),
    Key("synthgen.cols", int, "64", "grid columns"),
    Key("synthgen.n_cells", _list(int), "1,4", "inclusive range of cells per event"),
    Key("synthgen.amplitude_range", _list(float), "2,15", "initial cell peak rain, mm/h"),
    Key("synthgen.sigma_range", _list(float), "3,7", "cell radius, pixels"),
    Key("synthgen.speed_max", float, "0.75", "max cell speed per axis, pixels per step"),
    Key("synthgen.growth_max", float, "0.08", "growth rate drawn from [-max, max], 1/step"),
    Key("synthgen.growth_onset", int, "0", "step from which rain intensity follows the growth rate"),
    Key("synthgen.eth_base", float, "3.0", "echo top base height, km"),
    Key("synthgen.eth_gain", float, "60.0", "echo top offset per unit growth rate, km*step"),
    Key("synthgen.eth_noise_sd", float, "0.3", "echo top noise, km"),
    Key("synthgen.artifact_rings", _bool, "false", "clamp echo tops in concentric range rings"),
    Key("synthgen.emit", _choice("rain", "dbz"), "dbz", "precipitation variable written to raw/"),
    # preprocessing
    Key("preprocess.zr_a", float, "200", "Z-R coefficient a"),
    Key("preprocess.zr_b", float, "1.6", "Z-R exponent b"),
    Key("preprocess.clutter", _bool, "true", "apply morphological clutter removal"),
    Key("preprocess.rain_threshold_mmh", float, "0.1", "wet-pixel threshold for the clutter mask"),
    Key("preprocess.erosion_iters", int, "3", "erosion iterations"),
    Key("preprocess.dilation_iters", int, "3", "dilation iterations"),
    Key("preprocess.element", _choice("square", "cross"), "square", "3x3 structuring element"),
    Key("preprocess.crop_rows", int, "0", "central crop rows (0 keeps the full grid)"),
    Key("preprocess.crop_cols", int, "0", "central crop columns (0 keeps the full grid)"),
    # sampling
    Key("sampler.top_k_per_year", int, "1000", "sequence starts kept per calendar year"),
    Key("sampler.n_folds", int, "8", "day-block validation folds"),
    Key("sampler.test_year", _opt_int, "auto", "held-out year; auto = last year when several exist"),
    Key("sampler.cutoff_start", _date, "2016-10-01", "ignore starts before this date (none disables)"),
    Key("sampler.seed", int, "0", "fold shuffling seed"),
    # model
    Key("unet3d.levels", int, "3", "U-Net depth"),
    Key("unet3d.base_channels", int, "8", "channels at the top level, doubled per level"),
    Key("unet3d.kernel", _list(int), "3,3,3", "convolution kernel (t, h, w), odd"),
    Key("unet3d.rain_transform", _choice("RAW", "LOG1P"), "RAW", "rain normalization"),
    Key("unet3d.eth_scale", float, "16.0", "ETH divisor, km"),
    # training
    Key("train.lr", float, "0.001", "Adam learning rate"),
    Key("train.batch", int, "2", "mini-batch size"),
    Key("train.max_epochs", int, "50", "epoch limit"),
    Key("train.patience_early", int, "8", "validation rounds without improvement before stopping"),
    Key("train.plateau_patience", int, "3", "rounds without improvement before lowering the rate"),
    Key("train.plateau_factor", float, "0.5", "learning-rate factor on plateau"),
    # verification
    Key("verify.categorical_thresholds", _list(float), "0.1,1,2.5,5", "precision/recall/ETS thresholds, mm/h"),
    Key("verify.fss_thresholds", _list(float), "0.1,1,2.5,5,10", "FSS thresholds, mm/h"),
    Key("verify.fss_radii", _list(int), "1,4,16", "FSS window radii, pixels"),
    Key("verify.fss_report_leads_min", _list(int), "20,40,60,80", "lead times of the FSS matrices, min"),
    Key("verify.ranking_lead", int, "6", "lead step of per-sample tables (6 = +30 min)"),
    # baselines
    Key("baselines.block", int, "16", "block-matching block size, pixels"),
    Key("baselines.search_radius", int, "8", "block-matching search radius, pixels"),
    # experiment
    Key("experiment.n_models_per_group", int, "8", "models per group; model i validates on fold i"),
    Key("experiment.seeds", _list(int), "1,2,3,4,5,6,7,8", "model seeds, shared by the two groups"),
    Key("experiment.groups", _list(str), "with_eth,without_eth", "groups to train and compare"),
    Key("experiment.select_threshold", float, "2.5", "best-model FSS threshold, mm/h"),
    Key("experiment.select_radius", int, "16", "best-model FSS radius, pixels"),
    Key("experiment.select_lead", int, "6", "best-model FSS lead step"),
    Key("experiment.n_cases", int, "1", "cases rendered by compare"),
    # gradient check
    Key("gradcheck.levels", int, "2", "U-Net depth of the checked model"),
    Key("gradcheck.base_channels", int, "4", "top-level channels of the checked model"),
    Key("gradcheck.rows", int, "8", "input rows"),
    Key("gradcheck.cols", int, "8", "input columns"),
    Key("gradcheck.in_channels", int, "1", "input channels (1 or 2)"),
    Key("gradcheck.out_frames", int, "18", "output frames"),
    Key("gradcheck.eps", float, "1e-5", "central-difference step"),
    Key("gradcheck.tolerance", float, "1e-4", "max relative error allowed"),
    Key("gradcheck.seed", int, "0", "seed of weights, input and projection"),
]

REGISTRY = {k.name: k for k in KEYS}


class Config:
    """Parsed values for every registered key; lookups by full name."""

    def __init__(self, raw=None):
        self.raw = {k.name: k.default for k in KEYS}
        self.values = {}
        for name, text in (raw or {}).items():
            self.set(name, text)
        for name in REGISTRY:
            if name not in self.values:
                self.values[name] = self._parse(name, self.raw[name])

    @staticmethod
    def _parse(name, text):
        key = REGISTRY[name]
        try:
            return key.parse(text.strip())
        except (ValueError, EthcastError) as e:
            raise ConfigError(f"{name}: cannot parse {text.strip()!r} as {key.parse.__name__}: {e}") from None

    def set(self, name, text):
        if name not in REGISTRY:
            raise ConfigError(f"unknown config key {name!r}")
        self.raw[name] = text
        self.values[name] = self._parse(name, text)

    def __getitem__(self, name):
        return self.values[name]

    def section(self, prefix):
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.values.items() if k.startswith(p)}

    def to_text(self):
        return "".join(f"{k} = {self.raw[k]}\n" for k in REGISTRY)


def parse_config_text(text):
    """``{key: raw value}`` from config text; unknown or repeated keys are errors."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", lineno)
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in REGISTRY:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: key {key!r} given twice")
        raw[key] = val.strip()
    return raw


def load_config(path=None, overrides=()):
    """Config from an optional file plus ``key=value`` overrides (applied last)."""
    raw = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e.strerror or e}") from None
        try:
            raw = parse_config_text(text)
        except ParseError as e:
            raise ConfigError(f"{path}: {e}") from None
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, _, v = item.partition("=")
        k = k.strip()
        if k not in REGISTRY:
            raise ConfigError(f"unknown config key {k!r}")
        raw[k] = v.strip()
    return Config(raw)


def keys_help():
    width = max(len(k.name) for k in KEYS)
    lines = ["config keys (key = default: description):"]
    for k in KEYS:
        lines.append(f"  {k.name:<{width}} = {k.default:<22} {k.doc}")
    return "\n".join(lines)


def packaged_config(name):
    """Path of a config shipped with the package (e.g. 'demo.cfg')."""
    return Path(__file__).parent / "configs" / name
