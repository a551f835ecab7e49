use rayon::prelude::*;

use super::building::BuildingSpec;
use super::integrate::{simulate_response_substepped, stable_substeps};
use super::motion::{generate_ground_motion, GroundMotionSpec};
use super::record::ResponseRecord;
use crate::error::{Error, Result};

/// Simulates every motion at every scale factor (motion-major order).
///
/// Each record's motion spec is the input spec with `scale` replaced by
/// the factor; the integration step is refined automatically.
pub fn generate_domain_dataset(
    building: &BuildingSpec,
    motions: &[GroundMotionSpec],
    scales: &[f64],
) -> Result<Vec<ResponseRecord>> {
    Ok(generate_with_specs(building, motions, scales)?
        .into_iter()
        .map(|(_, r)| r)
        .collect())
}

/// Like [`generate_domain_dataset`], also returning the scaled spec of
/// each record.
pub fn generate_with_specs(
    building: &BuildingSpec,
    motions: &[GroundMotionSpec],
    scales: &[f64],
) -> Result<Vec<(GroundMotionSpec, ResponseRecord)>> {
    if motions.is_empty() || scales.is_empty() {
        return Err(Error::arg("motion and scale lists must be nonempty"));
    }
    building.validate()?;
    let jobs: Vec<GroundMotionSpec> = motions
        .iter()
        .flat_map(|m| {
            scales.iter().map(move |&s| GroundMotionSpec {
                scale: s,
                ..m.clone()
            })
        })
        .collect();
    jobs.into_par_iter()
        .map(|spec| {
            let record = simulate_one(building, &spec)?;
            Ok((spec, record))
        })
        .collect()
}

/// Generates the motion of `spec` and simulates `building` under it.
pub fn simulate_one(building: &BuildingSpec, spec: &GroundMotionSpec) -> Result<ResponseRecord> {
    let accel = generate_ground_motion(spec)?;
    let dt = spec.dt();
    let substeps = stable_substeps(building, dt)?;
    let mut record = simulate_response_substepped(building, &accel, dt, substeps)?;
    record.motion_id = spec.id.clone();
    record.scale = spec.scale;
    record.strong_motion = spec.strong_motion_interval();
    Ok(record)
}
