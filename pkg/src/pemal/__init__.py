"""Static PE malware analysis toolkit.

Parses Windows PE files, extracts nine static feature sets into a fixed
2381-dimensional vector (EMBER v2 compatible layout), trains classifiers
(a from-scratch feedforward network plus logistic-regression and KNN
baselines), and measures per-feature-set contribution through an ablation
sweep.
"""

__version__ = "0.1.0"

from .ablation import FeatureMask, enumerate_subsets, run_ablation, slice_features
from .dataset import LabeledDataset, filter_labeled, load_jsonl, read_cache, write_cache
from .features import FEATURE_DIMS, FEATURE_ORDER, FEATURE_RANGES, TOTAL_DIM, PEVectorizer, vectorize
from .hashing import hash_pairs, hash_tokens, murmur3_32
from .metrics import MetricsReport, compute_report, partial_auc, roc_auc, tpr_at_fpr
from .models import (KNNMalware, LogisticMalware, MalwareMLP, TrainConfig, gradient_check,
                     load_model, save_model)
from .pe import MalformedPE, ParsedPE, parse_pe, section_entropy
from .scaling import FeatureScaler, fit_scaler

__all__ = [
    "__version__",
    "FeatureMask", "enumerate_subsets", "run_ablation", "slice_features",
    "LabeledDataset", "filter_labeled", "load_jsonl", "read_cache", "write_cache",
    "FEATURE_DIMS", "FEATURE_ORDER", "FEATURE_RANGES", "TOTAL_DIM", "PEVectorizer", "vectorize",
    "hash_pairs", "hash_tokens", "murmur3_32",
    "MetricsReport", "compute_report", "partial_auc", "roc_auc", "tpr_at_fpr",
    "KNNMalware", "LogisticMalware", "MalwareMLP", "TrainConfig", "gradient_check",
    "load_model", "save_model",
    "MalformedPE", "ParsedPE", "parse_pe", "section_entropy",
    "FeatureScaler", "fit_scaler",
]
