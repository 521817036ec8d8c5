"""rfkit: receptive field estimation with spline-parameterized encoding models."""

__version__ = "0.1.0"

from .errors import DataError, FormatError, NumericalError
from .tensor import Tensor, kron, read_tensor, write_tensor, read_csv, write_csv
from .rng import Rng
from .splines import SplineBasis, cr_basis_1d, cr_basis_at, cr_knots, tensor_basis, expand
from .design import DesignMatrix, DataSplit, build_design, split, spline_design, drive
from .estimators import (
    PriorCov, EvidenceState, sta, sta_frames, wsta, spl_wsta, spl_wsta_frames,
    asd_cov, ald_cov, map_estimate, neg_log_evidence, evidence_optimize,
)
from .glm import (
    ModelSpec, FitOptions, FitResult, cost_lg, cost_lnp, cost_lnln,
    grad, grad_lg, grad_lnp, grad_lnln, fit, predict, gridsearch_df, gridsearch_l1,
)
from .subunits import (
    FactorizationResult, ste, kmeans_subunits, seminmf_subunits, match_subunits,
)
from .diagnostics import (
    Report, pearson, normalized_mse, posterior_cov, confidence_interval,
    wald_test, permutation_test, svd_split, chi2_sf, t_sf,
)
from .simulate import (
    GroundTruth, SimConfig, make_ground_truth, gen_stimulus, gen_response,
    calibrate_intercept, run_benchmark, biphasic_kernel,
)
