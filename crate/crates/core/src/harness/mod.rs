//! Experiment orchestration, metrics, sweeps and diagnostics.

mod config;
mod divergence;
mod experiment;
mod metrics;
mod stats;

pub use config::{default_fleet, ExperimentConfig, FleetBuilding, MotionSuite, ScaleSuite};
pub use divergence::{proxy_a_distance, PROBE_EPOCHS};
pub use experiment::{
    build_domain, building_scales, calibrate_reference_scale, comparison_csv, domain_diagnostics,
    lambda_sweep, physics_weights, prepare_domains, run_experiment, run_on_domains, sanitize,
    simulate_building, sweep_csv, write_artifacts, Diagnostics, DomainSummary, ExperimentOutput,
    ExperimentReport, PreparedDomains, RunArtifacts, SweepRow, VariantSummary,
    SATURATED_DISCRIMINATOR_ACCURACY,
};
pub use metrics::{accuracy, confusion, pm1_accuracy, MetricsReport};
pub use stats::{response_stats, stats_csv, ScaleStats};
