"""Batch labeling of TLE archives with rule, IMM-UKF and supGP tiers."""

from .cascade import CascadeRecord, Tier, TierStats, innovation_score, physics_predict_elements, run_cascade, tier_stats
from .config import PipelineConfig
from .imm import ImmFilter, assign_label
from .rules import Label, rule_label, rule_label_sequence
from .synth import Scenario, circular_scenario, generate
from .tle import Source, TleRecord, parse_tle_lines, read_bulk_archive

__all__ = [
    "CascadeRecord", "ImmFilter", "Label", "PipelineConfig", "Scenario", "Source", "Tier",
    "TierStats", "TleRecord", "assign_label", "circular_scenario", "generate",
    "innovation_score", "parse_tle_lines", "physics_predict_elements", "read_bulk_archive",
    "rule_label", "rule_label_sequence", "run_cascade", "tier_stats",
]
