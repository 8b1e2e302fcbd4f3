"""Hardening configuration: every mitigation is an explicit toggle.

Two total presets exist. ``hardened`` turns every boolean mitigation on;
``legacy`` turns them all off and disables the detection thresholds, which
is what the differential attack runs exercise. A config file is JSON with
an optional ``preset`` key followed by individual overrides.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

DAY_MS = 86_400_000

#: Actions that must pass the multi-factor gate in the hardened preset.
CRITICAL_ACTIONS = (
    "account-init",
    "account-recovery",
    "ciso-log-access",
    "first-contact-grant",
    "portability-export",
)


@dataclass(frozen=True)
class HardeningConfig:
    # Boolean mitigations (all True in hardened, all False in legacy).
    always_404: bool
    never_307: bool
    issuer_binding: bool
    referrer_strip: bool
    refuse_insecure_scheme: bool
    # Operational knobs.
    mfa_required_actions: frozenset[str]
    pseudonym_epoch_len_ms: int
    probe_burst_threshold: int          # uniform-404 responses per source per minute
    sybil_fraction_threshold: float     # 1.0 disables both alarms and release accounting
    delegation_max_depth: int
    k: int
    l: int

    def booleans(self) -> dict[str, bool]:
        return {
            f.name: getattr(self, f.name)
            for f in dataclasses.fields(self)
            if f.type == "bool"
        }


def hardened_preset() -> HardeningConfig:
    return HardeningConfig(
        always_404=True,
        never_307=True,
        issuer_binding=True,
        referrer_strip=True,
        refuse_insecure_scheme=True,
        mfa_required_actions=frozenset(CRITICAL_ACTIONS),
        pseudonym_epoch_len_ms=DAY_MS,
        probe_burst_threshold=20,
        sybil_fraction_threshold=0.25,
        delegation_max_depth=2,
        k=3,
        l=2,
    )


def legacy_preset() -> HardeningConfig:
    return HardeningConfig(
        always_404=False,
        never_307=False,
        issuer_binding=False,
        referrer_strip=False,
        refuse_insecure_scheme=False,
        mfa_required_actions=frozenset(),
        pseudonym_epoch_len_ms=DAY_MS,
        probe_burst_threshold=1_000_000,
        sybil_fraction_threshold=1.0,
        delegation_max_depth=2,
        k=3,
        l=2,
    )


PRESETS = {"hardened": hardened_preset, "legacy": legacy_preset}

_FIELD_NAMES = {f.name for f in dataclasses.fields(HardeningConfig)}


def _coerce(name: str, value) -> object:
    if name == "mfa_required_actions":
        if not isinstance(value, (list, tuple, set, frozenset)):
            raise ConfigError(f"'{name}' must be a list of action names")
        return frozenset(str(v) for v in value)
    if name == "sybil_fraction_threshold":
        return float(value)
    if name in {
        "pseudonym_epoch_len_ms",
        "probe_burst_threshold",
        "delegation_max_depth",
        "k",
        "l",
    }:
        return int(value)
    if not isinstance(value, bool):
        raise ConfigError(f"'{name}' must be a boolean")
    return value


def apply_overrides(base: HardeningConfig, overrides: dict) -> HardeningConfig:
    """Preset-then-overrides overlay. Unknown keys are errors, named."""
    fields: dict = {}
    for key, value in overrides.items():
        if key == "preset":
            continue
        if key not in _FIELD_NAMES:
            raise ConfigError(f"unknown configuration key: '{key}'")
        fields[key] = _coerce(key, value)
    return dataclasses.replace(base, **fields)


def load_config(path: str | Path | None = None) -> HardeningConfig:
    """Load config from a JSON file; no file means the hardened preset."""
    if path is None:
        return hardened_preset()
    raw = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    preset_name = data.get("preset", "hardened")
    if preset_name not in PRESETS:
        raise ConfigError(f"unknown preset: '{preset_name}'")
    return apply_overrides(PRESETS[preset_name](), data)


def config_to_dict(config: HardeningConfig) -> dict:
    out = dataclasses.asdict(config)
    out["mfa_required_actions"] = sorted(config.mfa_required_actions)
    return out
