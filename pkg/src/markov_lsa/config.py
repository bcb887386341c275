"""TOML model and experiment configuration."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import ConfigError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = ["load_toml", "load_config", "apply_overrides", "build_model", "Config"]


def load_toml(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


class Config:
    """Parsed config that remembers its source so errors can point at a line."""

    def __init__(self, data: dict, path: Path | None = None):
        self.data = data
        self.path = path
        self._text = path.read_text() if path is not None and path.exists() else ""

    def _line_of(self, key: str) -> int | None:
        pat = re.compile(rf"^\s*{re.escape(key)}\s*=")
        for i, line in enumerate(self._text.splitlines(), start=1):
            if pat.match(line):
                return i
        return None

    def error(self, key: str, msg: str) -> ConfigError:
        where = str(self.path) if self.path else "<config>"
        line = self._line_of(key.rsplit(".", 1)[-1])
        if line is not None:
            where += f":{line}"
        return ConfigError(f"{where}: {key}: {msg}")

    def section(self, name: str) -> dict:
        sec = self.data.get(name, {})
        if not isinstance(sec, dict):
            raise self.error(name, "expected a table")
        return sec

    def get(self, dotted: str, default=...):
        node = self.data
        for part in dotted.split("."):
            if not isinstance(node, dict) or part not in node:
                if default is ...:
                    raise self.error(dotted, "missing required key")
                return default
            node = node[part]
        return node

    def resolve(self, rel) -> Path:
        p = Path(rel)
        if not p.is_absolute() and self.path is not None:
            p = self.path.parent / p
        return p


def load_config(path, overrides=()) -> Config:
    path = Path(path)
    cfg = Config(load_toml(path), path)
    apply_overrides(cfg, overrides)
    return cfg


def _parse_value(raw: str):
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def apply_overrides(cfg: Config, overrides) -> None:
    """Apply ``section.key=value`` strings; values are parsed as TOML literals."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = cfg.data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r}: {part} is not a table")
        node[parts[-1]] = _parse_value(raw.strip())


def _kernel(cfg: Config, sec: dict):
    from .markov import TransitionKernel, load_kernel

    if "kernel" in sec:
        return load_kernel(cfg.resolve(sec["kernel"]))
    if "probs" in sec:
        try:
            return TransitionKernel(np.asarray(sec["probs"], dtype=float))
        except ValueError as exc:
            raise cfg.error("model.probs", str(exc)) from exc
    raise cfg.error("model.kernel", "need either 'kernel' (file path) or inline 'probs'")


def build_model(cfg: Config, section: str = "model"):
    """Construct the observation model described by ``[model]``."""
    from . import models

    sec = cfg.section(section)
    kind = sec.get("kind")
    if kind is None:
        raise cfg.error(f"{section}.kind", "missing required key")
    try:
        if kind == "tabular":
            noise = models.NoiseSpec(
                L_std=np.asarray(sec.get("L_noise", 0.0), dtype=float),
                b_std=np.asarray(sec.get("b_noise", 0.0), dtype=float),
                dist=sec.get("noise_dist", "uniform"),
            )
            return models.tabular_model(_kernel(cfg, sec), cfg.get(f"{section}.L_table"),
                                        cfg.get(f"{section}.b_table"), noise)
        if kind in ("td0", "tdlambda"):
            P = _kernel(cfg, sec)
            args = (P, cfg.get(f"{section}.features"), cfg.get(f"{section}.rewards"), float(cfg.get(f"{section}.gamma")))
            noise = sec.get("reward_noise", 0.0)
            if kind == "td0":
                return models.td0_model(*args, reward_noise=noise)
            return models.tdlambda_model(*args, lam=float(cfg.get(f"{section}.lam")), reward_noise=noise)
        if kind == "var":
            coefs = np.asarray(cfg.get(f"{section}.coefs"), dtype=float)
            return models.var_model(coefs, np.asarray(sec.get("noise_cov", 1.0), dtype=float))
    except ValueError as exc:
        raise cfg.error(f"{section}.kind", str(exc)) from exc
    raise cfg.error(f"{section}.kind", f"unknown model kind {kind!r}")
