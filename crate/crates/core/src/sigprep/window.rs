use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TOL: f64 = 1e-9;

/// A window in seconds from the record start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub length: f64,
}

impl Window {
    pub fn end(&self) -> f64 {
        self.start + self.length
    }

    pub fn covers(&self, interval: (f64, f64)) -> bool {
        self.start <= interval.0 + TOL && self.end() >= interval.1 - TOL
    }

    /// Sample range `[first, first + count)` at rate `fs`, clipped to `len`.
    pub fn sample_range(&self, fs: f64, len: usize) -> (usize, usize) {
        let first = ((self.start * fs).round() as usize).min(len);
        let count = ((self.length * fs).round() as usize).min(len - first);
        (first, count)
    }
}

/// Enumerates augmentation windows over a record of `t` seconds.
///
/// Lengths run from `t - min_len_offset` to `t` in `length_step`
/// increments; each length is placed at `0, placement_step, ...` while it
/// fits. If `strong` is given, windows not fully covering it are dropped.
pub fn sliding_windows(
    t: f64,
    min_len_offset: f64,
    length_step: f64,
    placement_step: f64,
    strong: Option<(f64, f64)>,
) -> Result<Vec<Window>> {
    if !(min_len_offset > 0.0) || !(t > min_len_offset) {
        return Err(Error::arg(format!(
            "record length {t} s must exceed the window length offset {min_len_offset} s (> 0)"
        )));
    }
    if !(length_step > 0.0) || !(placement_step > 0.0) {
        return Err(Error::arg("window steps must be positive"));
    }
    let n_lengths = (min_len_offset / length_step + TOL).floor() as usize + 1;
    let mut out = Vec::new();
    for li in 0..n_lengths {
        // shortest first
        let length = t - min_len_offset + li as f64 * length_step;
        let slack = t - length;
        let n_place = (slack / placement_step + TOL).floor() as usize + 1;
        for pi in 0..n_place {
            let w = Window {
                start: pi as f64 * placement_step,
                length,
            };
            if strong.is_none_or(|s| w.covers(s)) {
                out.push(w);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eleven_lengths_and_one_full_window() {
        let w = sliding_windows(40.0, 2.5, 0.25, 0.25, None).unwrap();
        let mut lengths: Vec<f64> = w.iter().map(|w| w.length).collect();
        lengths.dedup();
        assert_eq!(lengths.len(), 11);
        assert_eq!(
            w.iter().filter(|w| (w.length - 40.0).abs() < 1e-12).count(),
            1
        );
        // 1 + 2 + ... + 11 placements
        assert_eq!(w.len(), 66);
    }

    #[test]
    fn coverage_filter() {
        let w = sliding_windows(40.0, 2.5, 0.25, 0.25, Some((1.0, 38.0))).unwrap();
        let at_375: Vec<_> = w
            .iter()
            .filter(|w| (w.length - 37.5).abs() < 1e-12)
            .collect();
        assert_eq!(at_375.len(), 3);
        assert!(at_375
            .iter()
            .all(|w| w.start >= 0.5 - 1e-12 && w.start <= 1.0 + 1e-12));
    }

    #[test]
    fn large_step_gives_zero_start_only() {
        let w = sliding_windows(10.0, 2.5, 0.25, 50.0, None).unwrap();
        assert_eq!(w.len(), 11);
        assert!(w.iter().all(|w| w.start == 0.0));
    }

    #[test]
    fn short_record_rejected() {
        assert!(sliding_windows(2.0, 2.5, 0.25, 0.25, None).is_err());
    }
}
