"""Adversarial conformance harness: deterministic worlds, scripted
attackers, a metadata-only eavesdropper, release anonymity checks and the
requirement coverage matrix."""

from .anonymity import ReleaseDecision, ReleaseRecord, k_anon_release
from .attacks import ATTACK_KINDS, AttackReport, run_attack
from .coverage import (
    CoverageRow,
    DEMO_SCRIPT,
    coverage_report,
    render_matrix,
    run_full_suite,
)
from .eavesdrop import Channel, ObservedMessage, eavesdrop_profile, padded_bits
from .script import ScenarioScript, parse_script
from .world import ScenarioResult, SimTransport, World, run_scenario

__all__ = [
    "ATTACK_KINDS",
    "AttackReport",
    "Channel",
    "CoverageRow",
    "DEMO_SCRIPT",
    "ObservedMessage",
    "ReleaseDecision",
    "ReleaseRecord",
    "ScenarioResult",
    "ScenarioScript",
    "SimTransport",
    "World",
    "coverage_report",
    "eavesdrop_profile",
    "k_anon_release",
    "padded_bits",
    "parse_script",
    "render_matrix",
    "run_attack",
    "run_full_suite",
    "run_scenario",
]
