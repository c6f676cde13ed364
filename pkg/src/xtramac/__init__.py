"""Bit-accurate simulator for a runtime-reconfigurable mixed-precision MAC on DSP48 slices."""

from __future__ import annotations

from .estimators import FormatEncoder, GemvEstimator, MacTransformer
from .formats import DATATYPES, ConfigurationError, MacDatatype, get_format, parse_datatype
from .oracle import oracle_mac, oracle_mac_batch
from .packing import PackingPlan, plan
from .pipeline import IssueSlot, MacConfig, MacOutput, MacPipeline, evaluate

__version__ = "0.1.0"

__all__ = [
    "DATATYPES", "ConfigurationError", "FormatEncoder", "GemvEstimator", "IssueSlot", "MacConfig",
    "MacDatatype", "MacOutput", "MacPipeline", "MacTransformer", "PackingPlan", "evaluate",
    "get_format", "oracle_mac", "oracle_mac_batch", "parse_datatype", "plan",
]
