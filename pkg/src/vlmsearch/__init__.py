"""Pretrained model selection for vision language models.

Candidates (vision encoder, language model) are clustered by representation
similarity, pruned with successive halving, and the survivors are ranked by
extrapolating their learning curves to full data.
"""

from .clustering import (
    Candidate,
    CandidateCluster,
    ClusterSet,
    DistanceMatrix,
    candidate_clusters,
    cluster,
    medoid,
    pairwise_distance_matrix,
)
from .metrics import kendall_tau, speedup, topk_tau, weighted_kendall_tau
from .oracle import (
    CostLedger,
    CostModel,
    CurveOracle,
    EvalRecord,
    ExternalOracle,
    SyntheticCurveParams,
    TraceOracle,
    external_oracle,
)
from .scaling import ScalingConfig, ScalingFit, fit_loglinear, scaling_prediction, select_best
from .search import (
    SearchConfig,
    SearchReport,
    ShaConfig,
    compare_to_grid,
    run,
    run_grid,
    run_inter_cluster,
    run_intra_cluster,
    sha,
)
from .similarity import ActivationMatrix, cka, distance, hsic, minibatch_cka, unbiased_hsic
from .trace import SyntheticSpec, TraceBundle, generate_synthetic, load_trace

__version__ = "0.1.0"
