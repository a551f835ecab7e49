//! Synthetic seismic response data: stochastic ground motions, nonlinear
//! shear-building time histories and drift-based damage labels.

mod building;
mod dataset;
mod integrate;
mod labels;
mod motion;
mod record;

pub use building::BuildingSpec;
pub use dataset::{generate_domain_dataset, generate_with_specs, simulate_one};
pub use integrate::{
    simulate_response, simulate_response_substepped, stable_substeps, EnergyBalance, Integrator,
};
pub use labels::{label_damage, DRIFT_BIN_EDGES};
pub use motion::{generate_ground_motion, GroundMotionSpec};
pub use record::{export_records, import_records, Manifest, ManifestEntry, ResponseRecord};
