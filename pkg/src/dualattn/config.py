"""Run configuration: nested dataclasses plus a flat ``key = value`` text form."""

from dataclasses import dataclass, field

from .losses import LossConfig
from .networks import DiscriminatorConfig, EncoderConfig, GeneratorConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr_g: float = 1e-4
    lr_d: float = 4e-4
    beta1: float = 0.0
    beta2: float = 0.9
    adam_eps: float = 1e-8
    batch: int = 8
    steps: int = 2000
    seed: int = 0
    visual_loss: bool = True
    freeze_encoder: bool = False
    n_train: int = 960
    n_test: int = 96
    loss: LossConfig = field(default_factory=LossConfig)
    gen: GeneratorConfig = field(default_factory=GeneratorConfig)
    disc: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    enc: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ConfigError("learning rates must be positive")
        if self.batch < 2:
            raise ConfigError("batch must be >= 2 so mismatched captions exist")
        if self.disc.resolution != self.gen.resolution:
            raise ConfigError(f"discriminator resolution {self.disc.resolution} != generator "
                              f"output {self.gen.resolution}")
        if not self.gen.sentence_dim == self.disc.sentence_dim == self.enc.sentence_dim:
            raise ConfigError("sentence_dim differs between encoder, generator, discriminator")

    @property
    def resolution(self):
        return self.gen.resolution


# flat key -> (section, attribute, type, description)
KEYS = {
    "seed": ("", "seed", int, "master seed for init, data and training"),
    "steps": ("", "steps", int, "number of D/G update pairs"),
    "batch": ("", "batch", int, "batch size"),
    "lr_g": ("", "lr_g", float, "generator and encoder learning rate"),
    "lr_d": ("", "lr_d", float, "discriminator learning rate"),
    "beta1": ("", "beta1", float, "Adam first-moment decay"),
    "beta2": ("", "beta2", float, "Adam second-moment decay"),
    "adam_eps": ("", "adam_eps", float, "Adam denominator epsilon"),
    "visual_loss": ("", "visual_loss", bool, "include the feature L1 term in L_G"),
    "freeze_encoder": ("", "freeze_encoder", bool, "keep the text encoder at its init"),
    "n_train": ("", "n_train", int, "training samples"),
    "n_test": ("", "n_test", int, "held-out samples"),
    "lambda1": ("loss", "lambda1", float, "visual loss weight"),
    "lambda2": ("loss", "lambda2", float, "gradient penalty weight"),
    "gp_power": ("loss", "p", float, "gradient penalty exponent"),
    "num_layers": ("gen", "num_layers", int, "dual-attention layers (output 4*2^(n-1))"),
    "g_channels": ("gen", "base_channels", int, "generator channels at 4x4"),
    "g_min_channels": ("gen", "min_channels", int, "floor of the halving schedule"),
    "sentence_dim": ("*", "sentence_dim", int, "sentence vector size D"),
    "noise_dim": ("gen", "noise_dim", int, "noise vector size Z"),
    "cam_score_mode": ("gen", "cam_score_mode", str, "elementwise | outer"),
    "cam": ("gen", "cam", bool, "channel-aware attention on/off"),
    "pam": ("gen", "pam", bool, "pixel-aware attention on/off"),
    "cadailn_mode": ("gen", "norm", str, "cadailn | bn_sent | none"),
    "norm_init": ("gen", "norm_init", str, "scaled-uniform | zeros (sentence->gamma/beta)"),
    "d_channels": ("disc", "base_channels", int, "discriminator stem channels"),
    "d_max_channels": ("disc", "max_channels", int, "discriminator channel cap"),
    "d_text_channels": ("disc", "text_channels", int, "projected sentence channels in D"),
    "d_slope": ("disc", "slope", float, "leaky relu slope in D"),
    "d_head_init": ("disc", "head_init", str, "scaled-uniform | zeros"),
    "embed_dim": ("enc", "embed_dim", int, "token embedding size"),
    "enc_hidden": ("enc", "hidden", int, "recurrent hidden size per direction"),
    "enc_cell": ("enc", "cell", str, "gru | lstm"),
    "enc_merge": ("enc", "merge", str, "concat | sum of the two directions"),
    "enc_out_scale": ("enc", "out_scale", float, "fixed gain on the sentence vector"),
}

# keys that only steer the command-line driver
RUN_KEYS = {
    "outdir": (str, "runs/default", "output directory"),
    "ckpt_every": (int, 500, "checkpoint period in steps (0 = final only)"),
    "sample_every": (int, 500, "sample grid period in steps (0 = final only)"),
    "log_every": (int, 100, "progress print period"),
    "eval_draws": (int, 4, "noise draws per caption in proxy evaluation"),
}

ABLATIONS = {
    "cam": ("cam", False),
    "pam": ("pam", False),
    "cadailn": ("cadailn_mode", "none"),
    "visual_loss": ("visual_loss", False),
    "vl": ("visual_loss", False),
}


def _parse_value(key, typ, text):
    text = text.strip()
    if typ is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    try:
        return typ(text)
    except ValueError:
        raise ConfigError(f"{key}: expected {typ.__name__}, got {text!r}") from None


def format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def parse_text(text):
    """``key = value`` lines (``#`` comments allowed) into a dict of strings."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS and key not in RUN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def build(overrides=None):
    """Resolve string overrides into ``(TrainConfig, run_options)``."""
    overrides = dict(overrides or {})
    sections = {"": {}, "loss": {}, "gen": {}, "disc": {}, "enc": {}}
    run = {k: default for k, (_, default, _) in RUN_KEYS.items()}
    for key, text in overrides.items():
        if key in RUN_KEYS:
            run[key] = _parse_value(key, RUN_KEYS[key][0], str(text))
            continue
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        section, attr, typ, _ = KEYS[key]
        value = _parse_value(key, typ, str(text))
        if section == "*":
            for name in ("gen", "disc", "enc"):
                sections[name][attr] = value
        else:
            sections[section][attr] = value
    try:
        gen = GeneratorConfig(**sections["gen"])
        disc = DiscriminatorConfig(**{"resolution": gen.resolution, **sections["disc"]})
        cfg = TrainConfig(loss=LossConfig(**sections["loss"]), gen=gen, disc=disc,
                          enc=EncoderConfig(**sections["enc"]), **sections[""])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, run


def load(path, overrides=None):
    with open(path) as fh:
        values = parse_text(fh.read())
    values.update(overrides or {})
    return build(values)


def flatten(cfg):
    """Flat key -> value mapping covering every field of ``cfg``."""
    out = {}
    for key, (section, attr, _, _) in KEYS.items():
        obj = cfg if section == "" else getattr(cfg, "gen" if section == "*" else section)
        out[key] = getattr(obj, attr)
    return out


def resolved_text(cfg, run=None):
    lines = [f"{k} = {format_value(v)}" for k, v in flatten(cfg).items()]
    for key in RUN_KEYS:
        if run is not None and key in run:
            lines.append(f"{key} = {format_value(run[key])}")
    return "\n".join(lines) + "\n"


def from_text(text):
    return build(parse_text(text))[0]


def with_ablations(cfg, names):
    """Apply ``--ablate`` style switches to a resolved config."""
    flat = {k: format_value(v) for k, v in flatten(cfg).items()}
    for name in names:
        if name not in ABLATIONS:
            raise ConfigError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
        key, value = ABLATIONS[name]
        flat[key] = format_value(value)
    return build(flat)[0]

