"""Change detection in finite network sequences with measure-ratio CUSUM tests."""

from .detector import (
    CUSUM,
    SHIRYAEV_ROBERTS,
    Constant,
    LinearDecrease,
    LinearIncrease,
    OptimalDynamic,
    RunResult,
    WeightSpec,
    run_test,
    simulate_batch,
    step_statistic,
)
from .harness import (
    CalibrationResult,
    Estimate,
    ExperimentConfig,
    PolicySpec,
    calibrate,
    estimate_arl0,
    estimate_jn,
    run_scenario,
)
from .models import IndepER, IndepErgmEdges, MarkovER, MarkovErgmEdgesCross, ScriptedModel, build_model
from .network import Network, edges
from .solver import GridConfig, LimitTable, evaluate_limit, solve_limits

__version__ = "0.1.0"
