"""Process-property GP modeling with categorical-source data fusion.

Single-output and multi-task Gaussian-process regression over laser
powder bed fusion process parameters, a cross-validation and
interpretability harness, and a porosity image-analysis pipeline.
"""

from .dataset import (
    Dataset,
    FoldAssignment,
    NormalizationSpec,
    ProcessPoint,
    compute_ved,
    kfold,
    load_csv,
    median_hardness,
    merge_datasets,
    normalize,
)
from .errors import CholeskyError, ConfigError, DataError, FitError, FusegpError
from .evaluation import (
    CorrelationTable,
    CvReport,
    LengthscaleReport,
    MarginalSweep,
    build_correlation_table,
    lengthscale_report,
    marginal_sweep,
    pearson,
    rmse,
    run_cv,
    spearman,
)
from .hyperopt import OptimizerConfig, OptResult, minimize
from .kernels import Hyperparams, cov_matrix, kron, rbf_corr, source_corr, task_cov
from .mtgp import MtgpModel, assemble_cmt, fit_mt, nll_mt, predict_mt, predict_mt_batch
from .porescan import (
    OtsuResult,
    PoreStats,
    analyze_image,
    crop_borders,
    dilate,
    label_components,
    otsu_threshold,
    pore_stats,
    watershed_split,
)
from .sogp import PredictiveDistribution, SogpModel, fit, nll, nll_grad, predict, predict_batch

__version__ = "0.1.0"
