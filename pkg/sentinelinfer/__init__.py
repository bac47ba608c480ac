__version__ = "0.1.0"

from .effort import (
    EffortModel,
    PowerCorrection,
    PowerCost,
    IdentityUtility,
    PowerUtility,
    LogUtility,
    sentinel_effort,
    implied_efforts,
    best_response_effort,
)
from .payments import (
    LinearAccuracyPayment,
    SentinelScheme,
    agent_payoff_linear,
    agent_payoff_sentinel,
    required_linear_reward,
    required_linear_payment,
    collapse_curve,
    loglog_slope,
    per_sample_cost,
    expected_cost,
    accuracy_label_cost,
    symmetric_label_cost,
)
from .design import (
    DesignProblem,
    SamplingDesign,
    weighted_objective,
    water_fill,
    design_fixed_rho_b,
    design_fixed_b,
    design_fixed_rho,
    design_joint,
    uniform_design,
    active_design,
    estimate_tau,
)
from .simulate import (
    Dataset,
    SyntheticConfig,
    RoundOutcomes,
    generate_synthetic,
    simulate_round,
    realized_cost,
    ingest_csv,
)
from .estimators import (
    MeanEstimate,
    MEstimate,
    EstimateReport,
    SquaredLoss,
    LogisticLoss,
    estimate_mean,
    estimate_mean_active_baseline,
    estimate_mean_uniform,
    estimate_mean_classical,
    estimate_odds_ratio,
    estimate_m,
    analytic_influence_variance,
)
from .grid import ResultGrid
from .config import ExperimentConfig, load_config
from .harness import CampaignReport, run_campaign, budget_saved, budget_saved_table
from .verification import VerificationReport, verify_theory
