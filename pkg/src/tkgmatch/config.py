"""Training configuration: hyperparameters, ablation toggles, per-dataset
profiles, and flat key=value config-file parsing."""

import dataclasses
import hashlib
from dataclasses import dataclass


@dataclass
class TrainConfig:
    d_e: int = 128  # entity/relation embedding and GRU hidden width
    d_t: int = 32  # time-encoding width
    m: int = 5  # max query-history length
    n: int = 5  # candidate-history length
    k: int = 2  # background window
    omega1: int = 2  # candidate-encoder conv layers
    omega2: int = 2  # background-encoder conv layers
    kernels: int = 50
    kernel_width: int = 3
    dropout: float = 0.2
    lr: float = 0.001
    epochs: int = 30
    seed: int = 0
    composition: str = "subtract"  # or "multiply"
    grad_clip: float = 1.0
    patience: int = 10
    disable_query: bool = False
    disable_candidate: bool = False
    disable_background: bool = False
    disable_time: bool = False

    def validate(self):
        for name in ("d_e", "d_t", "m", "n", "k", "omega1", "omega2", "kernels", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"config: {name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"config: dropout must be in [0, 1), got {self.dropout}")
        if self.kernel_width % 2 != 1:
            raise ValueError("config: kernel_width must be odd (width-preserving conv)")
        if self.composition not in ("subtract", "multiply"):
            raise ValueError(f"config: unknown composition {self.composition!r}")
        if self.lr <= 0:
            raise ValueError(f"config: lr must be positive, got {self.lr}")
        if self.disable_query and self.disable_candidate:
            raise ValueError("config: cannot disable both the query and candidate encoders")
        return self

    @property
    def gru_input_dim(self):
        return self.d_e + (0 if self.disable_time else self.d_t)

    def to_dict(self):
        return dataclasses.asdict(self)

    def canonical(self):
        return "\n".join(f"{k}={v}" for k, v in sorted(self.to_dict().items()))

    def fingerprint(self, num_entities, num_base_relations):
        text = f"{self.canonical()}\nnum_entities={num_entities}\nnum_base_relations={num_base_relations}"
        return hashlib.sha256(text.encode()).digest()


# §-defaults per benchmark: m = n, background window k, conv depth omega1.
DATASET_PROFILES = {
    "icews14": dict(m=5, n=5, k=4, omega1=2),
    "icews14star": dict(m=6, n=6, k=1, omega1=2),
    "icews18": dict(m=5, n=5, k=1, omega1=2),
    "icews05-15": dict(m=5, n=5, k=2, omega1=2),
    "gdelt": dict(m=5, n=5, k=2, omega1=1),
    "wiki": dict(m=1, n=1, k=2, omega1=2),
}

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def _coerce(name, raw):
    if name not in _FIELD_TYPES:
        raise ValueError(f"config: unknown key {name!r}")
    kind = _FIELD_TYPES[name]
    raw = raw.strip()
    if kind == "bool" or kind is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"config: boolean key {name} got {raw!r}")
    if kind == "int" or kind is int:
        return int(raw)
    if kind == "float" or kind is float:
        return float(raw)
    return raw


def apply_overrides(config, pairs):
    """Apply ``key=value`` strings in order; returns the same config."""
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"config: override {pair!r} is not key=value")
        key, value = pair.split("=", 1)
        setattr(config, key.strip(), _coerce(key.strip(), value))
    return config


def load_config(path=None, profile=None, overrides=()):
    """Build a config from profile defaults, a key=value file, then overrides."""
    config = TrainConfig()
    if profile:
        name = profile.lower()
        if name not in DATASET_PROFILES:
            raise ValueError(
                f"config: unknown profile {profile!r} (have: {sorted(DATASET_PROFILES)})"
            )
        for key, value in DATASET_PROFILES[name].items():
            setattr(config, key, value)
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            pairs = []
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key=value")
                pairs.append(line)
        apply_overrides(config, pairs)
    apply_overrides(config, overrides)
    return config.validate()


def config_help_text():
    """One line per config key with its default (shown in CLI --help)."""
    lines = ["config keys (key=value, defaults shown):"]
    for f in dataclasses.fields(TrainConfig):
        lines.append(f"  {f.name}={f.default}")
    lines.append("profiles: " + ", ".join(sorted(DATASET_PROFILES)))
    return "\n".join(lines)
