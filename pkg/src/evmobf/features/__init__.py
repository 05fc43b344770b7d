from .counting import (DegenerateUnit, f1_address_steps, f2_string_ops, f3_external_call,
                       f4_branch_height, f5_tir, is_byte_mask)
from .extract import AnalysisConfig, ContractAnalysis, SiteFeatures, analyze, analyze_program, extract_features
from .logs import (AMBIGUOUS, RELATED, UNRELATED, Classification, HeuristicClassifier, HttpClassifier,
                   LogClassifier, load_signatures)
from .similarity import Embedder, WLEmbedder, cosine, f6_similarity, wl_fingerprint
from .vector import FEATURES, NO_TRANSFER, FeatureVector

__all__ = [
    "AMBIGUOUS", "AnalysisConfig", "Classification", "ContractAnalysis", "DegenerateUnit",
    "Embedder", "FEATURES", "FeatureVector", "HeuristicClassifier", "HttpClassifier",
    "LogClassifier", "NO_TRANSFER", "RELATED", "SiteFeatures", "UNRELATED", "WLEmbedder",
    "analyze", "analyze_program", "cosine", "extract_features", "f1_address_steps",
    "f2_string_ops", "f3_external_call", "f4_branch_height", "f5_tir", "f6_similarity",
    "is_byte_mask", "load_signatures", "wl_fingerprint",
]
