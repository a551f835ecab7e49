use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sigprep::Dataset;

use super::model::PhyMdanModel;
use super::train::{build_model, train, TrainConfig, TrainLog};

/// Training mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Physics-weighted multi-source adversarial training.
    Phymdan,
    /// Multi-source adversarial training with uniform weights.
    Mdan,
    /// All sources pooled into one domain, one discriminator.
    CDann,
    /// One single-source adversarial run per source.
    BDann,
    /// Pooled sources, no adaptation.
    CCnn,
    /// Trained and tested on labeled target data.
    TargetSupervised,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Phymdan,
        Variant::Mdan,
        Variant::CDann,
        Variant::BDann,
        Variant::CCnn,
        Variant::TargetSupervised,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Phymdan => "phymdan",
            Variant::Mdan => "mdan",
            Variant::CDann => "c_dann",
            Variant::BDann => "b_dann",
            Variant::CCnn => "c_cnn",
            Variant::TargetSupervised => "target_supervised",
        }
    }

    /// Whether training may read target labels.
    pub fn uses_target_labels(self) -> bool {
        matches!(self, Variant::TargetSupervised)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// One trained model of a variant.
#[derive(Debug, Clone)]
pub struct VariantRun {
    /// `"b_dann[<source>]"` for single-source runs, else the variant name.
    pub name: String,
    pub model: PhyMdanModel,
    pub log: TrainLog,
    /// Target samples this run must be evaluated on.
    pub eval_indices: Vec<usize>,
    /// Target label reads counted while training.
    pub target_label_reads: usize,
}

/// Models produced by one variant.
#[derive(Debug, Clone)]
pub struct VariantOutcome {
    pub variant: Variant,
    pub runs: Vec<VariantRun>,
}

/// Fraction of target samples held out for testing the supervised
/// reference.
pub const SUPERVISED_TEST_FRACTION: f64 = 0.3;

/// Trains `variant`. `physics_weights` is required for
/// [`Variant::Phymdan`]; the other modes ignore `cfg.weights`.
pub fn train_variant(
    variant: Variant,
    sources: &[Dataset],
    target: Option<&Dataset>,
    physics_weights: Option<&[f64]>,
    cfg: &TrainConfig,
) -> Result<VariantOutcome> {
    let first = sources
        .first()
        .ok_or_else(|| Error::Config("no source datasets".into()))?;
    let task = first.task;
    let l = first.l;
    let target_for = |mode: Variant| {
        target.ok_or_else(|| Error::Config(format!("{mode} needs a target dataset")))
    };
    let all_target: Vec<usize> = target.map_or(Vec::new(), |t| (0..t.len()).collect());
    let n = sources.len();
    let run = |name: String,
               srcs: &[Dataset],
               tgt: Option<&Dataset>,
               n_disc: usize,
               cfg: TrainConfig,
               eval: Vec<usize>|
     -> Result<VariantRun> {
        let mut model = build_model(task, n_disc, l, &cfg)?;
        let before = target.map_or(0, Dataset::label_reads);
        let log = train(&mut model, srcs, tgt, &cfg)?;
        let after = target.map_or(0, Dataset::label_reads);
        Ok(VariantRun {
            name,
            model,
            log,
            eval_indices: eval,
            target_label_reads: after - before,
        })
    };
    let runs = match variant {
        Variant::Phymdan | Variant::Mdan => {
            let t = target_for(variant)?;
            let weights = if variant == Variant::Phymdan {
                let w = physics_weights
                    .ok_or_else(|| Error::Config("phymdan needs physics weights".into()))?;
                w.to_vec()
            } else {
                vec![1.0 / n as f64; n]
            };
            let cfg = TrainConfig {
                weights: Some(weights),
                ..cfg.clone()
            };
            vec![run(
                variant.name().into(),
                sources,
                Some(t),
                n,
                cfg,
                all_target,
            )?]
        }
        Variant::CDann => {
            let t = target_for(variant)?;
            let refs: Vec<&Dataset> = sources.iter().collect();
            let pooled = Dataset::pooled("pooled_sources", &refs)?;
            let cfg = TrainConfig {
                weights: None,
                ..cfg.clone()
            };
            vec![run(
                variant.name().into(),
                &[pooled],
                Some(t),
                1,
                cfg,
                all_target,
            )?]
        }
        Variant::BDann => {
            let t = target_for(variant)?;
            let cfg = TrainConfig {
                weights: None,
                ..cfg.clone()
            };
            sources
                .par_iter()
                .map(|s| {
                    run(
                        format!("b_dann[{}]", s.domain),
                        std::slice::from_ref(s),
                        Some(t),
                        1,
                        cfg.clone(),
                        all_target.clone(),
                    )
                })
                .collect::<Result<Vec<_>>>()?
        }
        Variant::CCnn => {
            let refs: Vec<&Dataset> = sources.iter().collect();
            let pooled = Dataset::pooled("pooled_sources", &refs)?;
            let cfg = TrainConfig {
                weights: None,
                lambda: 0.0,
                ..cfg.clone()
            };
            vec![run(
                variant.name().into(),
                &[pooled],
                None,
                0,
                cfg,
                all_target,
            )?]
        }
        Variant::TargetSupervised => {
            let t = target_for(variant)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x007a_26e7);
            let (test_idx, train_idx) = split_indices(t.len(), SUPERVISED_TEST_FRACTION, &mut rng);
            let train_part = t.subset(&train_idx);
            let cfg = TrainConfig {
                weights: None,
                lambda: 0.0,
                ..cfg.clone()
            };
            vec![run(
                variant.name().into(),
                &[train_part],
                None,
                0,
                cfg,
                test_idx,
            )?]
        }
    };
    Ok(VariantOutcome { variant, runs })
}

/// Shuffled `(first, rest)` index split with `fraction` in the first part.
fn split_indices(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let cut =
        ((n as f64 * fraction).round() as usize).clamp(1.min(n), n.saturating_sub(1).max(1.min(n)));
    let rest = idx.split_off(cut);
    (idx, rest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("dann".parse::<Variant>().is_err());
    }

    #[test]
    fn split_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = split_indices(10, 0.3, &mut rng);
        assert_eq!((a.len(), b.len()), (3, 7));
    }
}
