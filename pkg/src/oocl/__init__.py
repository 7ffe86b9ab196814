"""Out-of-core lasso and elastic-net paths on memory-mapped matrices."""
from .bigmat import (
    Descriptor,
    FileMatrix,
    MatrixView,
    attach_matrix,
    make_view,
    setup_matrix,
    write_matrix,
)
from .cv import CvFit, cv_fit, cv_summary, make_folds
from .errors import (
    ConvergenceError,
    DegenerateInputError,
    FormatError,
    OoclError,
    ParseError,
    PolicyError,
    SizeMismatchError,
)
from .oracle import SynthSpec, gen_synth, kkt_audit, rd, reference_fit
from .solver import FitConfig, PathFit, fit, fit_binomial, fit_gaussian, predict

__all__ = [
    "ConvergenceError",
    "CvFit",
    "DegenerateInputError",
    "Descriptor",
    "FileMatrix",
    "FitConfig",
    "FormatError",
    "MatrixView",
    "OoclError",
    "ParseError",
    "PathFit",
    "PolicyError",
    "SizeMismatchError",
    "SynthSpec",
    "attach_matrix",
    "cv_fit",
    "cv_summary",
    "fit",
    "fit_binomial",
    "fit_gaussian",
    "gen_synth",
    "kkt_audit",
    "make_folds",
    "make_view",
    "predict",
    "rd",
    "reference_fit",
    "setup_matrix",
    "write_matrix",
]
