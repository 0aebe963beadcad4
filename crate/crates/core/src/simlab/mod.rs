//! Monte Carlo laboratory: processes with known quantiles and drivers that
//! check the estimators' large-sample behavior.

pub mod campaign;
pub mod decomposition;
pub mod dgp;
pub mod oracle;
mod output;

pub use campaign::{
    log_log_fit, qq_correlation, run_bias_scaling, run_campaign, run_phase_transition,
    run_pointwise_normality, Campaign, CellSummary, FailedReplication, ForestOverrides, LineFit,
    ProbeRecord, ProbeSummary, Proportion, Records, SimConfig, SimResult, SimSummary, SlopeFit,
    VimpRecord,
};
pub use decomposition::{decompose_error, DecompositionInputs, ErrorDecomposition};
pub use dgp::{generate, DgpKind, DgpSpec};
pub use oracle::{
    expected_pinball, expected_standard_loss, gateaux_check, oracle_quantile,
    oracle_restricted_quantile, oracle_vi, oracle_vi_monte_carlo, GateauxCheck, MonteCarloEstimate,
    RestrictedOracle,
};
