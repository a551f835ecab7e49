use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of one stochastic ground-motion realization.
///
/// The envelope ramps up linearly over `rise_fraction` of the non-strong
/// time, holds for `strong_duration_s`, decays linearly over
/// `decay_fraction` of the non-strong time, and is zero afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundMotionSpec {
    pub id: String,
    pub dominant_freq_hz: f64,
    pub filter_damping: f64,
    pub strong_duration_s: f64,
    pub total_duration_s: f64,
    pub rise_fraction: f64,
    pub decay_fraction: f64,
    /// Peak ground acceleration at scale 1 (m/s²).
    pub pga: f64,
    pub scale: f64,
    pub sample_rate_hz: f64,
    pub seed: u64,
}

impl GroundMotionSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dominant_freq_hz", self.dominant_freq_hz),
            ("filter_damping", self.filter_damping),
            ("strong_duration_s", self.strong_duration_s),
            ("total_duration_s", self.total_duration_s),
            ("pga", self.pga),
            ("scale", self.scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::arg(format!(
                    "motion {}: {name} must be positive, got {v}",
                    self.id
                )));
            }
        }
        if self.sample_rate_hz < 50.0 {
            return Err(Error::arg(format!(
                "motion {}: sample rate must be >= 50 Hz, got {}",
                self.id, self.sample_rate_hz
            )));
        }
        if self.strong_duration_s > self.total_duration_s {
            return Err(Error::arg(format!(
                "motion {}: strong phase longer than record",
                self.id
            )));
        }
        let fr = [self.rise_fraction, self.decay_fraction];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || fr[0] + fr[1] > 1.0 {
            return Err(Error::arg(format!(
                "motion {}: rise/decay fractions must lie in [0,1] and sum to at most 1",
                self.id
            )));
        }
        if self.dominant_freq_hz >= self.sample_rate_hz / 2.0 {
            return Err(Error::arg(format!(
                "motion {}: dominant frequency above Nyquist",
                self.id
            )));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    pub fn num_samples(&self) -> usize {
        (self.total_duration_s * self.sample_rate_hz).round() as usize
    }

    fn rise_s(&self) -> f64 {
        self.rise_fraction * (self.total_duration_s - self.strong_duration_s)
    }

    fn decay_s(&self) -> f64 {
        self.decay_fraction * (self.total_duration_s - self.strong_duration_s)
    }

    /// Plateau of the envelope, in seconds from the record start.
    pub fn strong_motion_interval(&self) -> (f64, f64) {
        let start = self.rise_s();
        (start, start + self.strong_duration_s)
    }

    pub fn envelope(&self, t: f64) -> f64 {
        let rise = self.rise_s();
        let (s0, s1) = self.strong_motion_interval();
        let decay = self.decay_s();
        if t < s0 {
            if rise > 0.0 {
                (t / rise).clamp(0.0, 1.0)
            } else {
                1.0
            }
        } else if t <= s1 {
            1.0
        } else if decay > 0.0 && t < s1 + decay {
            1.0 - (t - s1) / decay
        } else {
            0.0
        }
    }
}

/// Enveloped, filtered white noise scaled so that `max |a| = pga * scale`.
pub fn generate_ground_motion(spec: &GroundMotionSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let n = spec.num_samples();
    if n < 2 {
        return Err(Error::arg(format!(
            "motion {} has fewer than two samples",
            spec.id
        )));
    }
    let dt = spec.dt();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let filter = SiteFilter::new(spec.dominant_freq_hz, spec.filter_damping, dt);
    let mut accel = filter.apply(&noise);
    for (i, a) in accel.iter_mut().enumerate() {
        *a *= spec.envelope(i as f64 * dt);
    }
    let peak = accel.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(Error::arg(format!(
            "motion {} has an all-zero envelope",
            spec.id
        )));
    }
    let target = spec.pga * spec.scale;
    for a in &mut accel {
        *a *= target / peak;
    }
    Ok(accel)
}

/// Second-order site filter `(2ζω s + ω²) / (s² + 2ζω s + ω²)`,
/// discretized with a frequency-prewarped bilinear transform.
struct SiteFilter {
    num: [f64; 3],
    den: [f64; 3],
}

impl SiteFilter {
    fn new(freq_hz: f64, zeta: f64, dt: f64) -> Self {
        let w = 2.0 * PI * freq_hz;
        let k = w / (w * dt / 2.0).tan();
        let (b1, b0) = (2.0 * zeta * w, w * w);
        let (a1, a0) = (2.0 * zeta * w, w * w);
        let d0 = k * k + a1 * k + a0;
        SiteFilter {
            num: [(b1 * k + b0) / d0, 2.0 * b0 / d0, (b0 - b1 * k) / d0],
            den: [
                1.0,
                (2.0 * a0 - 2.0 * k * k) / d0,
                (k * k - a1 * k + a0) / d0,
            ],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for (i, &xi) in x.iter().enumerate() {
            let yi = self.num[0] * xi + self.num[1] * x1 + self.num[2] * x2
                - self.den[1] * y1
                - self.den[2] * y2;
            y[i] = yi;
            x2 = x1;
            x1 = xi;
            y2 = y1;
            y1 = yi;
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GroundMotionSpec {
        GroundMotionSpec {
            id: "gm".into(),
            dominant_freq_hz: 2.5,
            filter_damping: 0.3,
            strong_duration_s: 10.0,
            total_duration_s: 16.0,
            rise_fraction: 0.25,
            decay_fraction: 0.5,
            pga: 1.0,
            scale: 2.0,
            sample_rate_hz: 100.0,
            seed: 7,
        }
    }

    #[test]
    fn peak_matches_pga_times_scale() {
        let a = generate_ground_motion(&spec()).unwrap();
        let peak = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 2.0).abs() < 1e-9);
        assert_eq!(a.len(), 1600);
    }

    #[test]
    fn same_seed_same_series() {
        let a = generate_ground_motion(&spec()).unwrap();
        let b = generate_ground_motion(&spec()).unwrap();
        assert_eq!(a, b);
        let mut other = spec();
        other.seed = 8;
        assert_ne!(a, generate_ground_motion(&other).unwrap());
    }

    #[test]
    fn envelope_shape() {
        let s = spec();
        assert_eq!(s.strong_motion_interval(), (1.5, 11.5));
        assert_eq!(s.envelope(0.0), 0.0);
        assert_eq!(s.envelope(5.0), 1.0);
        assert!((s.envelope(13.0) - 0.5).abs() < 1e-12);
        assert_eq!(s.envelope(15.0), 0.0);
    }

    #[test]
    fn rejects_low_sample_rate() {
        let mut s = spec();
        s.sample_rate_hz = 40.0;
        assert!(generate_ground_motion(&s).is_err());
    }
}
