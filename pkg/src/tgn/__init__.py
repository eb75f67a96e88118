"""Temporal graph networks on a small numpy autodiff core."""

from . import diffnum, embed, memory, metrics, model, synthetic, tgstore
from .metrics import average_precision, roc_auc
from .model import HyperParams, TGN, VariantConfig, build_variant, evaluate, fit, get_preset
from .tgstore import EventLog, chronological_split, ingest_csv

__all__ = [
    "diffnum", "embed", "memory", "metrics", "model", "synthetic", "tgstore",
    "average_precision", "roc_auc", "HyperParams", "TGN", "VariantConfig", "build_variant",
    "evaluate", "fit", "get_preset", "EventLog", "chronological_split", "ingest_csv",
]
