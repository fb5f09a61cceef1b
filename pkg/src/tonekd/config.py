"""Key = value config files with typed schema validation.

Files are UTF-8 lines of "key = value"; '#' starts a comment; blank lines
are ignored.  Unknown keys are errors, as are values that do not parse at
the schema's type.  CLI flags and --set overrides funnel through the same
validation.
"""

from __future__ import annotations

from typing import Any


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got '{text}'")


# key -> (default, parser).  epochs / learning_rate use -1 as "stage default".
SCHEMA: dict[str, tuple[Any, Any]] = {
    "seed": (0, int),
    "corpus": ("corpus.dql", str),
    "out_dir": ("runs", str),
    "stage": ("teacher", str),
    "epochs": (-1, int),
    "batch_size": (8, int),
    "learning_rate": (-1.0, float),
    "adam_beta1": (0.9, float),
    "adam_beta2": (0.999, float),
    "adam_eps": (1e-8, float),
    "snr_db": (5.0, float),
    "lambda": (1.0, float),
    "mu": (0.0, float),
    "tau": (1.0, float),
    "alpha": (0.1, float),
    "coalescence_mode": ("weighted_sum", str),
    "coalescence_normalized": (False, _bool),
    "kl_direction": ("student_first", str),
    "teacher_input": ("clean", str),
    "teacher_ckpt": ("", str),
    "student_ckpt": ("", str),
    "data.n_train": (300, int),
    "data.n_val": (100, int),
    "data.n_test": (624, int),
    "data.min_tokens": (3, int),
    "data.max_tokens": (8, int),
    "data.seed": (1234, int),
    "teacher.n_blocks": (4, int),
    "teacher.d_model": (64, int),
    "student.n_blocks": (2, int),
    "student.d_model": (48, int),
    "model.kernel_size": (5, int),
    "lora.r": (2, int),
    "lora.alpha": (16.0, float),
    "quant.block_size": (64, int),
    "quant.codebook": ("linear", str),
    "eval.model": ("", str),
    "eval.name": ("", str),
    "eval.repetitions": (3, int),
    "report.inputs": ("", str),
}

_CHOICES = {
    "stage": ("teacher", "student_base", "distill"),
    "coalescence_mode": ("mean", "weighted_sum"),
    "kl_direction": ("student_first", "teacher_first"),
    "teacher_input": ("noisy", "clean"),
    "quant.codebook": ("linear", "normal"),
}


def defaults() -> dict[str, Any]:
    return {key: default for key, (default, _) in SCHEMA.items()}


def set_key(cfg: dict[str, Any], key: str, raw: str) -> None:
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key '{key}'")
    _, parse = SCHEMA[key]
    try:
        value = parse(raw.strip()) if isinstance(raw, str) else parse(raw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for '{key}': {raw!r}") from exc
    if key in _CHOICES and value not in _CHOICES[key]:
        raise ConfigError(
            f"'{key}' must be one of {', '.join(_CHOICES[key])}, got '{value}'")
    cfg[key] = value


def parse_lines(lines, cfg: dict[str, Any] | None = None) -> dict[str, Any]:
    cfg = defaults() if cfg is None else cfg
    for lineno, line in enumerate(lines, start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = body.split("=", 1)
        set_key(cfg, key.strip(), raw)
    return cfg


def load_file(path: str, cfg: dict[str, Any] | None = None) -> dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_lines(fh, cfg)
    except OSError as exc:
        raise ConfigError(f"cannot read config '{path}': {exc}") from exc


def apply_overrides(cfg: dict[str, Any], pairs) -> dict[str, Any]:
    """pairs are 'key=value' strings from --set flags."""
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set needs key=value, got '{pair}'")
        key, raw = pair.split("=", 1)
        set_key(cfg, key.strip(), raw)
    return cfg
