"""Architecture/training configuration and its text file format.

The on-disk form is UTF-8 ``key = value`` lines with ``#`` comments; every
field has a key, unknown or duplicate keys are rejected, and
``parse(serialize(cfg)) == cfg`` holds exactly.  Shipped presets live in
presets/*.cfg.
"""

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

PRESET_DIR = Path(__file__).parent / "presets"


@dataclass
class ModelConfig:
    patch: int
    image_h: int
    image_w: int
    image_ch: int
    hidden: int
    classes: int
    dense_blocks: int
    dense_token_dim: int
    dense_channel_dim: int
    sparse_blocks: int
    new_patches: int
    new_hidden: int
    experts_token: int
    experts_channel: int
    token_top_k: int
    channel_top_k: int
    moe_token_dim: int
    moe_channel_dim: int
    rescale: bool
    positions: str
    elimination_fraction: float
    lr: float
    batch: int
    aux_scale: float

    @property
    def n_patches(self) -> int:
        return (self.image_h // self.patch) * (self.image_w // self.patch)

    def block_kinds(self) -> list[str]:
        """Per-position block kind, 'd' or 's'."""
        if self.positions == "last":
            return ["d"] * self.dense_blocks + ["s"] * self.sparse_blocks
        if self.positions == "first":
            return ["s"] * self.sparse_blocks + ["d"] * self.dense_blocks
        return list(self.positions)

    def validate(self) -> "ModelConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.patch >= 1, "patch must be positive")
        need(self.image_h >= 1 and self.image_w >= 1 and self.image_ch >= 1,
             "image dims must be positive")
        need(self.image_h % self.patch == 0 and self.image_w % self.patch == 0,
             f"image {self.image_h}x{self.image_w} not divisible by patch {self.patch}")
        need(self.hidden >= 1 and self.classes >= 1, "hidden and classes must be positive")
        need(self.dense_blocks >= 0 and self.sparse_blocks >= 0,
             "block counts must be non-negative")
        need(self.dense_blocks + self.sparse_blocks >= 1, "model needs at least one block")
        need(self.dense_token_dim >= 1 and self.dense_channel_dim >= 1,
             "dense MLP dims must be positive")
        need(0.0 <= self.elimination_fraction < 1.0,
             "elimination_fraction must be in [0, 1)")
        need(self.lr > 0.0, "lr must be positive")
        need(self.batch >= 1, "batch must be positive")
        need(self.aux_scale >= 0.0, "aux_scale must be non-negative")

        if self.positions not in ("last", "first"):
            kinds = self.positions
            need(set(kinds) <= {"d", "s"},
                 f"positions must be 'last', 'first' or a d/s string, got {kinds!r}")
            need(kinds.count("d") == self.dense_blocks and kinds.count("s") == self.sparse_blocks,
                 "positions string does not match the block counts")

        if self.sparse_blocks > 0:
            s = self.n_patches
            need(self.experts_token >= 1, "experts_token must be >= 1")
            need(1 <= self.token_top_k <= self.experts_token,
                 f"token_top_k={self.token_top_k} outside 1..{self.experts_token}")
            need(self.experts_channel >= 0, "experts_channel must be >= 0")
            if self.experts_channel > 0:
                need(1 <= self.channel_top_k <= self.experts_channel,
                     f"channel_top_k={self.channel_top_k} outside 1..{self.experts_channel}")
            need(self.moe_token_dim >= 1 and self.moe_channel_dim >= 1,
                 "MoE MLP dims must be positive")
            if self.rescale:
                need(self.hidden % 2 == 0, "hidden must be even when rescale is enabled")
                need(self.new_patches == 2 * s,
                     f"new_patches must be 2*S = {2 * s}, got {self.new_patches}")
                need(self.new_hidden >= 1, "new_hidden must be positive")
            else:
                need(self.new_patches == s and self.new_hidden == self.hidden,
                     "without rescale, new_patches/new_hidden must equal S/hidden")
        return self


_BOOL_KEYS = {"rescale"}
_FLOAT_KEYS = {"elimination_fraction", "lr", "aux_scale"}
_STR_KEYS = {"positions"}
_KEYS = [f.name for f in fields(ModelConfig)]


def _defaults(raw: dict) -> dict:
    """Fill derivable defaults so preset files stay close to the model tables."""
    out = dict(raw)
    out.setdefault("image_ch", 3)
    out.setdefault("sparse_blocks", 0)
    out.setdefault("experts_token", 1)
    out.setdefault("experts_channel", 0)
    out.setdefault("token_top_k", 1)
    out.setdefault("channel_top_k", 1)
    out.setdefault("moe_token_dim", 1)
    out.setdefault("moe_channel_dim", 1)
    out.setdefault("rescale", True)
    out.setdefault("positions", "last")
    out.setdefault("elimination_fraction", 0.0)
    out.setdefault("lr", 1e-3)
    out.setdefault("batch", 32)
    out.setdefault("aux_scale", 1.0)
    if "patch" in out and "image_h" in out and "image_w" in out:
        s = (out["image_h"] // out["patch"]) * (out["image_w"] // out["patch"])
        if out.get("rescale", True):
            out.setdefault("new_patches", 2 * s)
            if "hidden" in out:
                out.setdefault("new_hidden", out["hidden"] // 2)
        else:
            out.setdefault("new_patches", s)
            if "hidden" in out:
                out.setdefault("new_hidden", out["hidden"])
    return out


def config_from_dict(raw: dict) -> ModelConfig:
    raw = _defaults(raw)
    missing = [k for k in _KEYS if k not in raw]
    if missing:
        raise ConfigError(f"missing config keys: {', '.join(missing)}")
    extra = [k for k in raw if k not in _KEYS]
    if extra:
        raise ConfigError(f"unknown config keys: {', '.join(extra)}")
    return ModelConfig(**raw).validate()


def parse_config(text: str) -> ModelConfig:
    raw: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            if key in _BOOL_KEYS:
                if value not in ("true", "false"):
                    raise ValueError(value)
                raw[key] = value == "true"
            elif key in _FLOAT_KEYS:
                raw[key] = float(value)
            elif key in _STR_KEYS:
                raw[key] = value
            else:
                raw[key] = int(value)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {value!r} for key {key!r}") from None
    return config_from_dict(raw)


def serialize_config(cfg: ModelConfig) -> str:
    lines = []
    for key in _KEYS:
        v = getattr(cfg, key)
        if key in _BOOL_KEYS:
            v = "true" if v else "false"
        elif key in _FLOAT_KEYS:
            v = repr(v)
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


def load_config(path) -> ModelConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def save_config(cfg: ModelConfig, path) -> None:
    Path(path).write_text(serialize_config(cfg), encoding="utf-8")


def preset_names() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.cfg"))


def resolve_config_path(spec: str) -> Path:
    """A filesystem path, or a bare preset name shipped with the package."""
    p = Path(spec)
    if p.exists():
        return p
    candidate = PRESET_DIR / f"{spec}.cfg"
    if candidate.exists():
        return candidate
    raise ConfigError(
        f"config {spec!r} is neither a file nor a preset (presets: {', '.join(preset_names())})")
