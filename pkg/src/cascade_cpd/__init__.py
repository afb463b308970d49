"""Online detection of cascading change-points on networks."""

from .baselines import CusumDetector, MultiChartCusumDetector, WindowGlrDetector
from .cascade_sim import PostChangeParams, gen_measurements, sample_cascade
from .detector import CascadeDetector, DetectorConfig, glr_statistic, run_detector, search_max_loglik
from .likelihood import WindowView, propagation_loglik, total_loglik
from .topology import Graph, InfluenceMatrix, TopologyError, load_edge_list, uniform_alpha

__all__ = [
    "CascadeDetector",
    "CusumDetector",
    "DetectorConfig",
    "Graph",
    "InfluenceMatrix",
    "MultiChartCusumDetector",
    "PostChangeParams",
    "TopologyError",
    "WindowGlrDetector",
    "WindowView",
    "gen_measurements",
    "glr_statistic",
    "load_edge_list",
    "propagation_loglik",
    "run_detector",
    "sample_cascade",
    "search_max_loglik",
    "total_loglik",
    "uniform_alpha",
]
__version__ = "0.1.0"
