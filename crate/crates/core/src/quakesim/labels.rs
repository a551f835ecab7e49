use crate::error::{Error, Result};
use crate::Task;

/// Upper edges of the drift bins: none, slight, moderate, severe; anything
/// at or above the last edge is collapse. Bins are closed on the left.
pub const DRIFT_BIN_EDGES: [f64; 4] = [0.01, 0.02, 0.03, 0.06];

/// Maps a peak story drift ratio to a damage class.
pub fn label_damage(peak_sdr: f64, task: Task) -> Result<usize> {
    if !(peak_sdr >= 0.0) {
        return Err(Error::arg(format!(
            "peak drift ratio must be >= 0, got {peak_sdr}"
        )));
    }
    Ok(match task {
        Task::Detection => usize::from(peak_sdr >= DRIFT_BIN_EDGES[0]),
        Task::Quantification => DRIFT_BIN_EDGES
            .iter()
            .take_while(|&&e| peak_sdr >= e)
            .count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins() {
        assert_eq!(label_damage(0.005, Task::Quantification).unwrap(), 0);
        assert_eq!(label_damage(0.025, Task::Quantification).unwrap(), 2);
        assert_eq!(label_damage(0.01, Task::Quantification).unwrap(), 1);
        assert_eq!(label_damage(0.01, Task::Detection).unwrap(), 1);
        assert_eq!(label_damage(0.2, Task::Quantification).unwrap(), 4);
        assert!(label_damage(-1e-9, Task::Detection).is_err());
        assert!(label_damage(f64::NAN, Task::Detection).is_err());
    }
}
