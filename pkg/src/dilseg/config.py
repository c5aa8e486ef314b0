"""Plain-text run configuration: ``key = value`` lines, one key per line.

``[section]`` headers and ``#`` comments are tolerated and ignored; keys are
global. Scene lists are comma-separated ``image:labels`` pairs (labels may
be omitted for unlabeled imagery); paths resolve relative to the config
file. The effective configuration, defaults included and paths absolutized,
can be rendered back out so a run directory carries an echo that reproduces
the run exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .scheduler import PatchSizeDistribution
from .trainer import TrainConfig

__all__ = ["RunSetup", "parse_config_text", "load_config", "render_config"]

# key -> default (None = required for training, "" = optional empty)
_DEFAULTS = {
    "model": None,
    "widths": "",
    "classes": None,
    "bands": None,
    "train_scenes": None,
    "val_scenes": "",
    "sizes": "",
    "size_range": "",
    "emphasized": "",
    "dist": "",
    "score": "accuracy",
    "lr": "0.01",
    "weight_decay": "0.001",
    "iterations": "2000",
    "decay": "0.5",
    "decay_steps": "50000",
    "batch": "16",
    "seed": "0",
    "normalize": "on",
    "score_warmup": "0",
    "class_balance": "off",
    "checkpoint_every": "0",
    "val_every": "0",
}


@dataclass
class RunSetup:
    model: str
    widths: tuple[int, ...] | None
    classes: int
    bands: int
    train_pairs: list
    val_pairs: list
    distribution: PatchSizeDistribution
    train_config: TrainConfig
    normalize: bool
    effective: dict


def parse_config_text(text: str) -> dict:
    """Raw key -> value strings; rejects unknown and duplicate keys."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def _to_int(values, key, minimum=None):
    try:
        v = int(values[key])
    except ValueError:
        raise ConfigError(f"key {key!r}: expected an integer, got {values[key]!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"key {key!r}: must be >= {minimum}, got {v}")
    return v


def _to_float(values, key):
    try:
        return float(values[key])
    except ValueError:
        raise ConfigError(f"key {key!r}: expected a number, got {values[key]!r}")


def _to_flag(values, key):
    v = values[key].lower()
    if v in ("on", "true", "yes", "1"):
        return True
    if v in ("off", "false", "no", "0"):
        return False
    raise ConfigError(f"key {key!r}: expected on/off, got {values[key]!r}")


def _int_list(text, key):
    items = [part.strip() for part in text.split(",") if part.strip()]
    try:
        return tuple(int(i) for i in items)
    except ValueError:
        raise ConfigError(f"key {key!r}: expected comma-separated integers, got {text!r}")


def _scene_pairs(text, base: Path, key):
    pairs = []
    for entry in (part.strip() for part in text.split(",")):
        if not entry:
            continue
        if ":" in entry:
            image, label = (p.strip() for p in entry.split(":", 1))
            if not image or not label:
                raise ConfigError(f"key {key!r}: malformed scene entry {entry!r}")
            pairs.append((str((base / image).resolve()), str((base / label).resolve())))
        else:
            pairs.append((str((base / entry).resolve()), None))
    return pairs


def _build_distribution(values) -> PatchSizeDistribution:
    sizes = values["sizes"].strip()
    size_range = values["size_range"].strip()
    dist = values["dist"].strip().lower()
    if bool(sizes) == bool(size_range):
        raise ConfigError("exactly one of 'sizes' or 'size_range' must be set")
    if sizes:
        if dist and dist != "uniform_fixed":
            raise ConfigError(
                f"'sizes' implies dist = uniform_fixed, got {dist!r}"
            )
        try:
            return PatchSizeDistribution.uniform_fixed(_int_list(sizes, "sizes"))
        except ValueError as e:
            raise ConfigError(str(e))
    if ".." not in size_range:
        raise ConfigError(f"key 'size_range': expected 'lo..hi', got {size_range!r}")
    lo_text, hi_text = size_range.split("..", 1)
    try:
        lo, hi = int(lo_text), int(hi_text)
    except ValueError:
        raise ConfigError(f"key 'size_range': expected 'lo..hi', got {size_range!r}")
    emphasized = _int_list(values["emphasized"], "emphasized")
    if not dist:
        dist = "multinomial" if emphasized else "uniform"
    try:
        if dist == "uniform":
            if emphasized:
                raise ConfigError("'emphasized' requires dist = multinomial")
            return PatchSizeDistribution.uniform_range(lo, hi)
        if dist == "multinomial":
            if not emphasized:
                raise ConfigError("dist = multinomial needs an 'emphasized' list")
            return PatchSizeDistribution.multinomial(lo, hi, emphasized)
    except ValueError as e:
        raise ConfigError(str(e))
    raise ConfigError(f"key 'dist': unknown distribution {values['dist']!r}")


def build_setup(values: dict, base_dir) -> RunSetup:
    """Typed RunSetup from raw key strings (paths resolved against base_dir)."""
    base = Path(base_dir)
    merged = dict(_DEFAULTS)
    merged.update(values)
    for key, v in merged.items():
        if v is None:
            raise ConfigError(f"missing required key {key!r}")

    model = merged["model"]
    widths = _int_list(merged["widths"], "widths") if merged["widths"].strip() else None
    classes = _to_int(merged, "classes", minimum=1)
    bands = _to_int(merged, "bands", minimum=1)
    train_pairs = _scene_pairs(merged["train_scenes"], base, "train_scenes")
    if not train_pairs:
        raise ConfigError("key 'train_scenes': at least one scene is required")
    val_pairs = _scene_pairs(merged["val_scenes"], base, "val_scenes")
    distribution = _build_distribution(merged)
    score = merged["score"].strip().lower()
    try:
        train_config = TrainConfig(
            distribution=distribution,
            learning_rate=_to_float(merged, "lr"),
            weight_decay=_to_float(merged, "weight_decay"),
            iterations=_to_int(merged, "iterations", minimum=0),
            decay_factor=_to_float(merged, "decay"),
            decay_steps=_to_int(merged, "decay_steps", minimum=1),
            batch_size=_to_int(merged, "batch", minimum=1),
            score_mode=score,
            seed=_to_int(merged, "seed"),
            score_warmup=_to_int(merged, "score_warmup", minimum=0),
            class_balance=_to_flag(merged, "class_balance"),
            checkpoint_every=_to_int(merged, "checkpoint_every", minimum=0),
            validate_every=_to_int(merged, "val_every", minimum=0),
        )
    except ValueError as e:
        raise ConfigError(str(e))

    effective = dict(merged)
    effective["train_scenes"] = ", ".join(
        img if lbl is None else f"{img}:{lbl}" for img, lbl in train_pairs
    )
    effective["val_scenes"] = ", ".join(
        img if lbl is None else f"{img}:{lbl}" for img, lbl in val_pairs
    )
    effective["dist"] = {
        "uniform_range": "uniform",
        "uniform_fixed": "uniform_fixed",
        "multinomial": "multinomial",
    }[distribution.mode]
    return RunSetup(
        model=model,
        widths=widths,
        classes=classes,
        bands=bands,
        train_pairs=train_pairs,
        val_pairs=val_pairs,
        distribution=distribution,
        train_config=train_config,
        normalize=_to_flag(merged, "normalize"),
        effective=effective,
    )


def load_config(path) -> RunSetup:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    return build_setup(parse_config_text(text), path.parent)


def render_config(setup: RunSetup) -> str:
    """Echo of the effective configuration; parsing it reproduces the run."""
    lines = [f"{key} = {setup.effective[key]}" for key in _DEFAULTS]
    return "\n".join(lines) + "\n"
