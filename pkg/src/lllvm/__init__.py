"""Locally linear latent variable model fitted by variational EM."""

from .errors import (
    ELBODecreaseError,
    InvalidParameterError,
    LLLVMError,
    NumericalError,
    ParseError,
    SingularityError,
)
from .graph import NeighbourhoodGraph, build_knn_graph, edit_edge, laplacian, spectrum
from .model import Dataset, Hyperparams, LinearMaps, build_precision_cache
from .inference import EMConfig, FitResult, fit_em
from .extensions import compare_graphs, marginal_precision, out_of_sample, reconstruct
from .data_eval import knn_classify_cv, procrustes_error, swiss_roll

__version__ = "0.1.0"

__all__ = [
    "Dataset", "EMConfig", "ELBODecreaseError", "FitResult", "Hyperparams", "InvalidParameterError",
    "LLLVMError", "LinearMaps", "NeighbourhoodGraph", "NumericalError", "ParseError", "SingularityError",
    "build_knn_graph", "build_precision_cache", "compare_graphs", "edit_edge", "fit_em",
    "knn_classify_cv", "laplacian", "marginal_precision", "out_of_sample", "procrustes_error",
    "reconstruct", "spectrum", "swiss_roll",
]
