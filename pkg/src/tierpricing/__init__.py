"""Counterfactual tiered-pricing engine for transit traffic.

Fits demand and cost models to observed (or synthesized) traffic flows,
builds price tiers with several bundling strategies, solves for
profit-maximizing tier prices, and reports how much of the attainable
profit and consumer surplus each tiering captures.
"""

from .bundling import (
    ModelContext,
    Strategy,
    build_bundles,
    evaluate_bundling,
    optimal_bundles,
    profit_capture,
    token_bucket_bundles,
)
from .cost_models import (
    class_labels,
    classify_region,
    realize_costs,
    relative_cost,
    relative_costs,
    split_by_dest_type,
    with_fit,
)
from .demand_ced import (
    CedFit,
    ced_bundle_price,
    ced_consumer_surplus,
    ced_demand,
    ced_fit_gamma,
    ced_fit_valuations,
    ced_optimal_price,
    ced_potential_profit,
    ced_profit,
    fit_ced,
)
from .demand_logit import (
    LogitFit,
    fit_logit,
    logit_bundle_cost,
    logit_bundle_valuation,
    logit_consumer_surplus,
    logit_demand,
    logit_fit_gamma,
    logit_fit_valuations,
    logit_potential_profit,
    logit_profit,
    logit_shares,
    logit_solve_prices,
)
from .domain import (
    Bundling,
    CostKind,
    CostModelSpec,
    DemandModel,
    FittedFlow,
    FlowRecord,
    MarketParams,
    PricingError,
    TierOutcome,
    validate_params,
)
from .experiments import (
    ExperimentConfig,
    fit_context,
    load_flows,
    run_capture_curve,
    run_sensitivity_sweep,
    run_theta_sweep,
    write_results,
)
from .ingestion import (
    DatasetMoments,
    SYNTH_PRESETS,
    preset_moments,
    read_flows_csv,
    synth_generate,
    write_flows_csv,
)

__version__ = "0.1.0"
