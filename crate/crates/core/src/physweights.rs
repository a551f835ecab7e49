//! Source-domain weights from physical similarity between buildings.
//!
//! The distance between a source property `u_s` and the target property
//! `u_t` is `(1 - u_s/u_t)^2 + eps`; weights are the softmax of the
//! reciprocal distances. Weights from several properties are combined by
//! averaging the normalized vectors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 0.05;

/// Largest single weight before a vector is reported as skewed.
pub const SKEW_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Property {
    /// Number of stories.
    N,
    /// Static overstrength.
    #[serde(rename = "Omega_s")]
    OmegaS,
    /// Ductility.
    #[serde(rename = "mu_T")]
    MuT,
    /// Elastic first-mode period (s).
    T1,
    /// Height (m).
    H,
}

impl Property {
    pub const ALL: [Property; 5] = [
        Property::N,
        Property::OmegaS,
        Property::MuT,
        Property::T1,
        Property::H,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Property::N => "N",
            Property::OmegaS => "Omega_s",
            Property::MuT => "mu_T",
            Property::T1 => "T1",
            Property::H => "H",
        }
    }

    /// Parses a comma separated list such as `"H,N,T1"`.
    pub fn parse_list(s: &str) -> Result<Vec<Property>> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Property {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "N" | "n" | "stories" => Ok(Property::N),
            "Omega_s" | "Os" | "omega_s" | "overstrength" => Ok(Property::OmegaS),
            "mu_T" | "mu" | "ductility" => Ok(Property::MuT),
            "T1" | "t1" | "period" => Ok(Property::T1),
            "H" | "h" | "height" => Ok(Property::H),
            other => Err(Error::arg(format!("unknown physical property {other:?}"))),
        }
    }
}

/// Known physical properties of one building.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalProperties {
    pub id: String,
    #[serde(rename = "N")]
    pub stories: f64,
    #[serde(rename = "Omega_s")]
    pub overstrength: f64,
    #[serde(rename = "mu_T")]
    pub ductility: f64,
    #[serde(rename = "T1")]
    pub period: f64,
    #[serde(rename = "H")]
    pub height: f64,
}

impl PhysicalProperties {
    pub fn get(&self, p: Property) -> f64 {
        match p {
            Property::N => self.stories,
            Property::OmegaS => self.overstrength,
            Property::MuT => self.ductility,
            Property::T1 => self.period,
            Property::H => self.height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in Property::ALL {
            let v = self.get(p);
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::arg(format!(
                    "building {}: property {p} must be positive, got {v}",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Normalized per-source weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    pub eps: Option<f64>,
    pub properties: Vec<Property>,
}

impl WeightVector {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().copied().fold(0.0, f64::max)
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = i;
            }
        }
        best
    }

    pub fn is_skewed(&self) -> bool {
        self.max_weight() > SKEW_THRESHOLD
    }
}

pub fn property_distance(u_s: f64, u_t: f64, eps: f64) -> Result<f64> {
    if u_t == 0.0 || !u_t.is_finite() {
        return Err(Error::arg(format!(
            "target property must be finite and non-zero, got {u_t}"
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::arg(format!(
            "smoothing factor must be positive, got {eps}"
        )));
    }
    let r = 1.0 - u_s / u_t;
    Ok(r * r + eps)
}

/// Softmax of `1/dist` over the sources for one property.
pub fn weights_single_property(sources: &[f64], target: f64, eps: f64) -> Result<WeightVector> {
    if sources.is_empty() {
        return Err(Error::arg("at least one source is required"));
    }
    let inv: Vec<f64> = sources
        .iter()
        .map(|&u| property_distance(u, target, eps).map(|d| 1.0 / d))
        .collect::<Result<_>>()?;
    Ok(WeightVector {
        weights: crate::autodiff::softmax(&inv),
        eps: Some(eps),
        properties: Vec::new(),
    })
}

/// Elementwise mean of several weight vectors.
pub fn weights_combined(vectors: &[WeightVector]) -> Result<WeightVector> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::arg("no weight vectors to combine"))?;
    let n = first.len();
    if let Some(bad) = vectors.iter().find(|v| v.len() != n) {
        return Err(Error::dim(format!(
            "cannot combine weight vectors of length {n} and {}",
            bad.len()
        )));
    }
    let k = vectors.len() as f64;
    let mut mean = vec![0.0; n];
    for v in vectors {
        for (m, w) in mean.iter_mut().zip(&v.weights) {
            *m += w / k;
        }
    }
    let total: f64 = mean.iter().sum();
    for m in &mut mean {
        *m /= total;
    }
    let mut properties = Vec::new();
    for v in vectors {
        for &p in &v.properties {
            if !properties.contains(&p) {
                properties.push(p);
            }
        }
    }
    Ok(WeightVector {
        weights: mean,
        eps: first.eps,
        properties,
    })
}

pub fn uniform_weights(n: usize) -> Result<WeightVector> {
    if n == 0 {
        return Err(Error::arg("uniform weights need n >= 1"));
    }
    Ok(WeightVector {
        weights: vec![1.0 / n as f64; n],
        eps: None,
        properties: Vec::new(),
    })
}

/// Weights proportional to `1/d_i`.
pub fn inverse_divergence_weights(divergences: &[f64]) -> Result<WeightVector> {
    if divergences.is_empty() || divergences.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::arg("divergences must be positive"));
    }
    let total: f64 = divergences.iter().map(|d| 1.0 / d).sum();
    Ok(WeightVector {
        weights: divergences.iter().map(|d| (1.0 / d) / total).collect(),
        eps: None,
        properties: Vec::new(),
    })
}

/// Weighted risk bound `sum_i w_i (R_i + d_i)`.
pub fn bound_value(risks: &[f64], divergences: &[f64], weights: &WeightVector) -> Result<f64> {
    if risks.len() != divergences.len() || risks.len() != weights.len() {
        return Err(Error::dim(format!(
            "{} risks, {} divergences, {} weights",
            risks.len(),
            divergences.len(),
            weights.len()
        )));
    }
    if divergences.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::arg("divergences must be positive"));
    }
    Ok(risks
        .iter()
        .zip(divergences)
        .zip(&weights.weights)
        .map(|((r, d), w)| w * (r + d))
        .sum())
}

/// Per-property and combined weights for one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightReport {
    pub target: String,
    pub sources: Vec<String>,
    pub eps: f64,
    pub per_property: Vec<(Property, WeightVector)>,
    pub combined: WeightVector,
    pub skewed: bool,
}

/// Computes weights of `sources` relative to `target` for each property
/// in `props`, plus their average.
pub fn weight_report(
    sources: &[PhysicalProperties],
    target: &PhysicalProperties,
    props: &[Property],
    eps: f64,
) -> Result<WeightReport> {
    if props.is_empty() {
        return Err(Error::arg("no physical properties selected"));
    }
    target.validate()?;
    for s in sources {
        s.validate()?;
    }
    let mut per_property = Vec::with_capacity(props.len());
    for &p in props {
        let vals: Vec<f64> = sources.iter().map(|s| s.get(p)).collect();
        let mut w = weights_single_property(&vals, target.get(p), eps)?;
        w.properties = vec![p];
        per_property.push((p, w));
    }
    let vectors: Vec<WeightVector> = per_property.iter().map(|(_, w)| w.clone()).collect();
    let combined = weights_combined(&vectors)?;
    let skewed = combined.is_skewed();
    if skewed {
        log::warn!(
            "physics weights for target {} are skewed (max {:.3}); training is close to single-source",
            target.id,
            combined.max_weight()
        );
    }
    Ok(WeightReport {
        target: target.id.clone(),
        sources: sources.iter().map(|s| s.id.clone()).collect(),
        eps,
        per_property,
        combined,
        skewed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_buildings_have_eps_distance() {
        assert_eq!(property_distance(48.6, 48.6, 0.05).unwrap(), 0.05);
        assert!(matches!(
            property_distance(1.0, 0.0, 0.05),
            Err(Error::Argument(_))
        ));
        assert!(property_distance(1.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn mirrored_heights_tie() {
        let a = property_distance(16.6, 48.6, 0.05).unwrap();
        let b = property_distance(80.6, 48.6, 0.05).unwrap();
        assert!((a - b).abs() < 1e-15);
        let w = weights_single_property(&[16.6, 80.6], 48.6, 0.05).unwrap();
        assert!((w.weights[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn height_distance_value() {
        let d = property_distance(32.6, 48.6, 0.05).unwrap();
        // (16 / 48.6)^2 + 0.05; the rounded figure 0.15837 is 1.5e-5 low
        let want = (16.0f64 / 48.6).powi(2) + 0.05;
        assert!((d - want).abs() < 1e-15);
        assert!((d - 0.15837).abs() < 2e-5);
    }

    #[test]
    fn combined_examples() {
        let a = WeightVector {
            weights: vec![1.0, 0.0],
            eps: None,
            properties: vec![],
        };
        let b = WeightVector {
            weights: vec![0.0, 1.0],
            ..a.clone()
        };
        assert_eq!(
            weights_combined(&[a.clone(), b]).unwrap().weights,
            vec![0.5, 0.5]
        );
        assert_eq!(
            weights_combined(&[a.clone(), a.clone()]).unwrap().weights,
            a.weights
        );
        let short = uniform_weights(3).unwrap();
        assert!(matches!(
            weights_combined(&[a, short]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn uniform_examples() {
        assert_eq!(uniform_weights(4).unwrap().weights, vec![0.25; 4]);
        assert_eq!(uniform_weights(1).unwrap().weights, vec![1.0]);
        assert!(uniform_weights(0).is_err());
    }

    #[test]
    fn bound_examples() {
        let d = [0.2, 0.4];
        let r = [0.1, 0.1];
        let inv = inverse_divergence_weights(&d).unwrap();
        let tight = bound_value(&r, &d, &inv).unwrap();
        assert!((tight - (0.1 + 2.0 / (1.0 / 0.2 + 1.0 / 0.4))).abs() < 1e-12);
        assert!((tight - 0.366_666_666_666_666_7).abs() < 1e-12);
        let uni = bound_value(&r, &d, &uniform_weights(2).unwrap()).unwrap();
        assert!((uni - 0.4).abs() < 1e-12);
        let single = bound_value(&[0.3], &[0.7], &uniform_weights(1).unwrap()).unwrap();
        assert!((single - 1.0).abs() < 1e-15);
        assert!(bound_value(&r, &d, &uniform_weights(3).unwrap()).is_err());
    }

    #[test]
    fn property_names_parse() {
        assert_eq!(
            Property::parse_list("H,N,T1").unwrap(),
            vec![Property::H, Property::N, Property::T1]
        );
        assert!(Property::parse_list("H,X").is_err());
    }
}
