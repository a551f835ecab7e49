use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lumped-mass shear building with bilinear story springs.
///
/// Level `i` (0-based) is floor `i + 1`; story `i` connects level `i - 1`
/// (the ground for `i = 0`) to level `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingSpec {
    pub id: String,
    pub stories: usize,
    /// Floor masses (kg), ground excluded.
    pub masses: Vec<f64>,
    /// Elastic story stiffnesses (N/m).
    pub stiffnesses: Vec<f64>,
    pub damping_ratio: f64,
    /// Story drift ratio at first yield.
    pub yield_drift: f64,
    /// Post-yield to elastic stiffness ratio.
    pub hardening_ratio: f64,
    pub first_story_height: f64,
    pub story_height: f64,
}

impl BuildingSpec {
    /// Uniform building whose story stiffness is tuned so the elastic
    /// first-mode period equals `first_period`.
    #[allow(clippy::too_many_arguments)]
    pub fn with_first_period(
        id: impl Into<String>,
        stories: usize,
        floor_mass: f64,
        first_period: f64,
        damping_ratio: f64,
        yield_drift: f64,
        hardening_ratio: f64,
    ) -> Result<Self> {
        let mut b = BuildingSpec {
            id: id.into(),
            stories,
            masses: vec![floor_mass; stories],
            stiffnesses: vec![1.0; stories],
            damping_ratio,
            yield_drift,
            hardening_ratio,
            first_story_height: 4.6,
            story_height: 4.0,
        };
        b.validate()?;
        // Periods scale as 1/sqrt(k).
        let t_unit = b.periods()?[0];
        let k = (t_unit / first_period).powi(2);
        b.stiffnesses = vec![k; stories];
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::arg(format!("building {}: {msg}", self.id)));
        if self.stories == 0 {
            return bad("needs at least one story".into());
        }
        if self.masses.len() != self.stories || self.stiffnesses.len() != self.stories {
            return bad(format!(
                "{} masses and {} stiffnesses for {} stories",
                self.masses.len(),
                self.stiffnesses.len(),
                self.stories
            ));
        }
        if self
            .masses
            .iter()
            .chain(&self.stiffnesses)
            .any(|&v| !(v > 0.0) || !v.is_finite())
        {
            return bad("masses and stiffnesses must be positive".into());
        }
        if !(self.first_story_height > 0.0) || !(self.story_height > 0.0) {
            return bad("story heights must be positive".into());
        }
        if !(self.damping_ratio >= 0.0 && self.damping_ratio < 1.0) {
            return bad(format!(
                "damping ratio {} outside [0, 1)",
                self.damping_ratio
            ));
        }
        if !(self.hardening_ratio > 0.0 && self.hardening_ratio <= 1.0) {
            return bad(format!(
                "hardening ratio {} outside (0, 1]",
                self.hardening_ratio
            ));
        }
        if !(self.yield_drift > 0.0) {
            return bad(format!("yield drift {} must be positive", self.yield_drift));
        }
        Ok(())
    }

    pub fn height_of_story(&self, story: usize) -> f64 {
        if story == 0 {
            self.first_story_height
        } else {
            self.story_height
        }
    }

    pub fn total_height(&self) -> f64 {
        (0..self.stories).map(|s| self.height_of_story(s)).sum()
    }

    /// Yield shear of each story, `k * yield_drift * h`.
    pub fn yield_forces(&self) -> Vec<f64> {
        (0..self.stories)
            .map(|s| self.stiffnesses[s] * self.yield_drift * self.height_of_story(s))
            .collect()
    }

    /// Elastic stiffness matrix (tridiagonal, dense storage).
    pub fn stiffness_matrix(&self) -> DMatrix<f64> {
        let n = self.stories;
        let k = &self.stiffnesses;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = k[i] + if i + 1 < n { k[i + 1] } else { 0.0 };
            if i + 1 < n {
                m[(i, i + 1)] = -k[i + 1];
                m[(i + 1, i)] = -k[i + 1];
            }
        }
        m
    }

    /// Elastic circular frequencies, ascending.
    pub fn circular_frequencies(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let n = self.stories;
        let k = self.stiffness_matrix();
        let inv_sqrt_m: Vec<f64> = self.masses.iter().map(|m| 1.0 / m.sqrt()).collect();
        let a = DMatrix::from_fn(n, n, |i, j| k[(i, j)] * inv_sqrt_m[i] * inv_sqrt_m[j]);
        let eig = SymmetricEigen::new(a);
        let mut w2: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        w2.sort_by(f64::total_cmp);
        if w2[0] <= 0.0 {
            return Err(Error::arg(format!(
                "building {} is not positive definite",
                self.id
            )));
        }
        Ok(w2.into_iter().map(f64::sqrt).collect())
    }

    /// Elastic modal periods, longest first.
    pub fn periods(&self) -> Result<Vec<f64>> {
        Ok(self
            .circular_frequencies()?
            .into_iter()
            .map(|w| 2.0 * PI / w)
            .collect())
    }

    /// Rayleigh coefficients `(a0, a1)` with `C = a0 M + a1 K`, matching
    /// the damping ratio at modes 1 and 2 (mode 1 only for one story).
    pub fn rayleigh_coefficients(&self) -> Result<(f64, f64)> {
        let w = self.circular_frequencies()?;
        let w1 = w[0];
        let w2 = if w.len() > 1 { w[1] } else { w1 };
        let z = self.damping_ratio;
        Ok((2.0 * z * w1 * w2 / (w1 + w2), 2.0 * z / (w1 + w2)))
    }

    /// Largest step for which central differences stay stable,
    /// `T_min / π`.
    pub fn critical_dt(&self) -> Result<f64> {
        let w = self.circular_frequencies()?;
        Ok(2.0 / w[w.len() - 1])
    }
}
