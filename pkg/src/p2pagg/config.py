"""TOML experiment configuration.

Sections mirror the modules; unknown sections or keys are rejected with
their location so typos never silently fall back to defaults.
"""

from __future__ import annotations

import sys
from dataclasses import replace
from fractions import Fraction
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .attacks import AttackConfig
from .committee import CommitteePolicy
from .core import TamperEvent
from .protocols.cc import CcParams
from .protocols.flt import FltParams
from .protocols.rsa import RsaParams
from .simulator import DataConfig, ModelConfig, SimConfig


class ConfigError(ValueError):
    pass


# section -> {toml key: attribute name}
_RUN = {
    "peers": "peers", "rounds": "rounds", "protocol": "protocol", "seed": "seed", "engine": "engine",
    "committee_size": "committee_size", "subsample": "subsample", "halt_on_abort": "halt_on_abort",
}
_COMMITTEE = {
    "p": "p", "threshold": "threshold", "bits": "security_bits", "dropout": "dropout",
    "convention": "convention", "dropout_rule": "dropout_rule",
}
_DROPOUT = {"client": "client_drop", "committee": "committee_drop"}
_DZK = {"policy": "dzk_policy", "reveal_check": "reveal_check"}
_ATTACK = {"kind": "kind", "f": "f", "epsilon": "epsilon", "z": "z"}
_DATA = {k: k for k in ("source", "classes", "dim", "samples", "separation", "path", "labels_path",
                        "test_fraction", "partition")}
_MODEL = {"kind": "kind", "hidden": "hidden"}
_RSA = {"lambda": "lam", "eta0": "eta0", "gamma": "gamma", "rho": "rho"}
_CC = {"beta": "beta", "tau": "tau", "theta": "theta", "eta": "eta", "lr": "lr"}
_FLT = {"alpha": "alpha", "theta": "theta", "root_fraction": "root_fraction", "lr": "lr", "root_seed": "root_seed"}
_TAMPER = {"round", "member", "delta", "output", "coordinate"}
_SWEEP = {"protocols", "attacks", "f"}

SECTIONS = {
    "run": _RUN, "committee": _COMMITTEE, "dropout": _DROPOUT, "dzk": _DZK, "attack": _ATTACK,
    "data": _DATA, "model": _MODEL, "rsa": _RSA, "cc": _CC, "flt": _FLT,
}


def _rational(value, where: str) -> Fraction:
    try:
        return Fraction(str(value))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"{where}: not a rational number: {value!r}") from exc


def _pick(table: dict, mapping: dict, section: str) -> dict:
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    out = {}
    for key, value in table.items():
        if key not in mapping:
            raise ConfigError(f"unknown key '{key}' in [{section}]")
        out[mapping[key]] = value
    return out


def parse_config(doc: dict, allow_sweep: bool = False) -> tuple[SimConfig, dict]:
    """Build a :class:`SimConfig` from a parsed TOML document.

    Returns the config and the ``[sweep]`` table (empty if absent).
    """
    for section in doc:
        if section not in SECTIONS and section not in ("tamper", "sweep"):
            raise ConfigError(f"unknown section [{section}]")
    if "sweep" in doc and not allow_sweep:
        raise ConfigError("[sweep] is only valid for the sweep command")
    try:
        cfg = SimConfig()
        kw = _pick(doc.get("run", {}), _RUN, "run")
        kw.update(_pick(doc.get("dropout", {}), _DROPOUT, "dropout"))
        kw.update(_pick(doc.get("dzk", {}), _DZK, "dzk"))
        cpol = _pick(doc.get("committee", {}), _COMMITTEE, "committee")
        for key in ("p", "threshold", "dropout"):
            if key in cpol:
                cpol[key] = _rational(cpol[key], f"[committee] {key}")
        kw["committee"] = CommitteePolicy(**cpol)
        kw["attack"] = AttackConfig(**_pick(doc.get("attack", {}), _ATTACK, "attack"))
        kw["data"] = replace(DataConfig(), **_pick(doc.get("data", {}), _DATA, "data"))
        kw["model"] = replace(ModelConfig(), **_pick(doc.get("model", {}), _MODEL, "model"))
        kw["rsa"] = RsaParams(**_pick(doc.get("rsa", {}), _RSA, "rsa"))
        kw["cc"] = CcParams(**_pick(doc.get("cc", {}), _CC, "cc"))
        kw["flt"] = FltParams(**_pick(doc.get("flt", {}), _FLT, "flt"))
        tamper = doc.get("tamper", [])
        if not isinstance(tamper, list):
            raise ConfigError("tamper must be an array of tables ([[tamper]])")
        events = []
        for i, ev in enumerate(tamper):
            extra = set(ev) - _TAMPER
            if extra:
                raise ConfigError(f"unknown key '{sorted(extra)[0]}' in [[tamper]] #{i + 1}")
            events.append(TamperEvent(**ev))
        kw["tamper"] = events
        cfg = replace(cfg, **kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    sweep = doc.get("sweep", {})
    if sweep:
        extra = set(sweep) - _SWEEP
        if extra:
            raise ConfigError(f"unknown key '{sorted(extra)[0]}' in [sweep]")
    return cfg, sweep


def loads(text: str, allow_sweep: bool = False) -> tuple[SimConfig, dict]:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return parse_config(doc, allow_sweep)


def load(path, allow_sweep: bool = False) -> tuple[SimConfig, dict]:
    text = Path(path).read_text()
    try:
        return loads(text, allow_sweep)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def dumps(cfg: SimConfig) -> str:
    """Render a config back to TOML (round-trips through :func:`loads`)."""
    sections: dict[str, dict[str, Any]] = {
        "run": {k: getattr(cfg, a) for k, a in _RUN.items()},
        "committee": {k: getattr(cfg.committee, a) for k, a in _COMMITTEE.items()},
        "dropout": {k: getattr(cfg, a) for k, a in _DROPOUT.items()},
        "dzk": {k: getattr(cfg, a) for k, a in _DZK.items()},
        "attack": {k: getattr(cfg.attack, a) for k, a in _ATTACK.items()},
        "data": {k: getattr(cfg.data, a) for k, a in _DATA.items()},
        "model": {k: getattr(cfg.model, a) for k, a in _MODEL.items()},
        "rsa": {k: getattr(cfg.rsa, a) for k, a in _RSA.items()},
        "cc": {k: getattr(cfg.cc, a) for k, a in _CC.items()},
        "flt": {k: getattr(cfg.flt, a) for k, a in _FLT.items()},
    }
    lines = []
    for name, table in sections.items():
        lines.append(f"[{name}]")
        for key, value in table.items():
            if value is None:
                continue
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    for ev in cfg.tamper:
        lines.append("[[tamper]]")
        lines += [f"{k} = {getattr(ev, k)}" for k in ("round", "member", "delta", "output", "coordinate")]
        lines.append("")
    return "\n".join(lines)


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Fraction):
        return f'"{value}"'
    if isinstance(value, str):
        return f'"{value}"'
    return repr(value)
