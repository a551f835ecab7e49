use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{predict, train_variant, TrainConfig, TrainLog, Variant, VariantRun};
use crate::error::{Error, Result, StageExt};
use crate::physweights::{weight_report, WeightReport};
use crate::quakesim::{generate_domain_dataset, GroundMotionSpec, ResponseRecord};
use crate::sigprep::{assemble_dataset, Dataset};

use super::config::{ExperimentConfig, FleetBuilding};
use super::divergence::proxy_a_distance;
use super::metrics::MetricsReport;

/// Yield drift used to make a building effectively elastic.
const ELASTIC_YIELD_DRIFT: f64 = 1.0e3;

/// Discriminator validation accuracy at or above which the discriminators
/// are considered to win outright.
pub const SATURATED_DISCRIMINATOR_ACCURACY: f64 = 0.99;

/// Scale at which the median elastic peak drift of `story` over `motions`
/// equals `drift`.
pub fn calibrate_reference_scale(
    building: &FleetBuilding,
    motions: &[GroundMotionSpec],
    story: usize,
    drift: f64,
) -> Result<f64> {
    if !(drift > 0.0) {
        return Err(Error::Config(format!(
            "calibration drift must be > 0, got {drift}"
        )));
    }
    let elastic = FleetBuilding {
        yield_drift: ELASTIC_YIELD_DRIFT,
        ..building.clone()
    };
    let records = generate_domain_dataset(&elastic.spec()?, motions, &[1.0])?;
    let mut peaks: Vec<f64> = records.iter().map(|r| r.peak_drifts[story - 1]).collect();
    peaks.sort_by(f64::total_cmp);
    let mid = peaks.len() / 2;
    let median = if peaks.len().is_multiple_of(2) {
        0.5 * (peaks[mid - 1] + peaks[mid])
    } else {
        peaks[mid]
    };
    if !(median > 0.0) {
        return Err(Error::Simulation {
            step: 0,
            message: format!(
                "building {} has zero elastic drift at story {story}",
                building.id
            ),
        });
    }
    Ok(drift / median)
}

/// Scale factors applied to `building`'s motions.
pub fn building_scales(
    cfg: &ExperimentConfig,
    building: &FleetBuilding,
    motions: &[GroundMotionSpec],
) -> Result<Vec<f64>> {
    let reference = match cfg.scales.calibrate_to_drift {
        Some(d) => calibrate_reference_scale(building, motions, cfg.story, d)?,
        None => 1.0,
    };
    Ok(cfg.scales.factors.iter().map(|f| f * reference).collect())
}

/// Every response record of one building.
pub fn simulate_building(cfg: &ExperimentConfig, id: &str) -> Result<Vec<ResponseRecord>> {
    let building = cfg.building(id)?;
    let motions = cfg.motions.generate()?;
    let scales = building_scales(cfg, building, &motions)?;
    generate_domain_dataset(&building.spec()?, &motions, &scales)
}

/// Stable 64-bit FNV-1a hash, used to derive per-domain seeds.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Assembles the dataset of one building, subsampled to
/// `max_samples_per_domain` when set.
pub fn build_domain(
    cfg: &ExperimentConfig,
    id: &str,
    records: &[ResponseRecord],
) -> Result<Dataset> {
    let ds = assemble_dataset(records, cfg.story, cfg.task, id, &cfg.prep)?;
    match cfg.max_samples_per_domain {
        Some(cap) if cap < ds.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.motions.seed ^ fnv1a(id));
            let mut idx: Vec<usize> = (0..ds.len()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(cap);
            idx.sort_unstable();
            Ok(ds.subset(&idx).with_fresh_tracker())
        }
        _ => Ok(ds),
    }
}

/// Simulated and preprocessed domains of an experiment.
#[derive(Debug, Clone)]
pub struct PreparedDomains {
    pub sources: Vec<Dataset>,
    pub target: Dataset,
    pub records: BTreeMap<String, Vec<ResponseRecord>>,
}

/// Simulates and preprocesses the target and every source building.
pub fn prepare_domains(cfg: &ExperimentConfig) -> Result<PreparedDomains> {
    cfg.validate()?;
    let mut ids = cfg.source_ids();
    ids.push(cfg.target.clone());
    let built: Vec<(String, Vec<ResponseRecord>, Dataset)> = ids
        .par_iter()
        .map(|id| {
            let records = simulate_building(cfg, id).stage("simulate")?;
            let ds = build_domain(cfg, id, &records).stage("preprocess")?;
            Ok((id.clone(), records, ds))
        })
        .collect::<Result<_>>()?;
    let mut sources = Vec::with_capacity(built.len() - 1);
    let mut target = None;
    let mut records = BTreeMap::new();
    for (id, recs, ds) in built {
        records.insert(id.clone(), recs);
        if id == cfg.target {
            target = Some(ds);
        } else {
            sources.push(ds);
        }
    }
    Ok(PreparedDomains {
        sources,
        target: target.expect("target is simulated"),
        records,
    })
}

/// Physics weights of the configured sources for the configured target.
pub fn physics_weights(cfg: &ExperimentConfig) -> Result<WeightReport> {
    let target = cfg.building(&cfg.target)?.properties()?;
    let sources = cfg
        .source_ids()
        .iter()
        .map(|id| cfg.building(id)?.properties())
        .collect::<Result<Vec<_>>>()?;
    weight_report(&sources, &target, &cfg.weight_properties, cfg.eps)
}

/// Proxy A-distances between pooled sources and the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub seed: u64,
    pub variant: String,
    /// On the stacked input spectra.
    pub raw_pad: f64,
    /// On the model's extracted features.
    pub adapted_pad: f64,
}

/// Mean and spread of one variant's target accuracy over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub seeds: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_pm1_accuracy: f64,
}

/// Size and class counts of one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSummary {
    pub domain: String,
    pub samples: usize,
    pub class_histogram: Vec<usize>,
}

/// Deterministic outcome of [`run_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub task: crate::Task,
    pub story: usize,
    pub target: String,
    pub sources: Vec<String>,
    pub domains: Vec<DomainSummary>,
    pub weights: WeightReport,
    pub runs: Vec<MetricsReport>,
    pub summary: Vec<VariantSummary>,
    pub diagnostics: Vec<Diagnostics>,
}

/// Artifacts of one trained model.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: MetricsReport,
    pub log: TrainLog,
    pub run: VariantRun,
}

/// Everything produced by [`run_experiment`]; timings are kept out of the
/// report so reruns compare byte for byte.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub artifacts: Vec<RunArtifacts>,
    pub timing: BTreeMap<String, f64>,
}

fn seeded(cfg: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..cfg.clone()
    }
}

fn evaluate_run(
    variant: Variant,
    run: &VariantRun,
    seed: u64,
    target: &Dataset,
    target_labels: &[usize],
    weights: Option<&[f64]>,
) -> Result<MetricsReport> {
    let inputs: Vec<&[f64]> = run.eval_indices.iter().map(|&i| target.input(i)).collect();
    let labels: Vec<usize> = run.eval_indices.iter().map(|&i| target_labels[i]).collect();
    let (preds, _) = predict(&run.model, &inputs)?;
    let mut report = MetricsReport::new(
        variant.name(),
        &run.name,
        seed,
        &preds,
        &labels,
        target.task.num_classes(),
    )?;
    report.weights = weights.map(<[f64]>::to_vec);
    report.target_label_reads_in_training = run.target_label_reads;
    Ok(report)
}

fn summarize(variants: &[Variant], runs: &[MetricsReport]) -> Vec<VariantSummary> {
    variants
        .iter()
        .map(|v| {
            // Single-source runs are summarized by the picked run per seed.
            let picked: Vec<&MetricsReport> = runs
                .iter()
                .filter(|r| r.variant == v.name() && (*v != Variant::BDann || r.best))
                .collect();
            let n = picked.len().max(1) as f64;
            let mean = picked.iter().map(|r| r.accuracy).sum::<f64>() / n;
            let var = picked
                .iter()
                .map(|r| (r.accuracy - mean).powi(2))
                .sum::<f64>()
                / n;
            VariantSummary {
                variant: v.name().into(),
                seeds: picked.len(),
                mean_accuracy: mean,
                std_accuracy: var.sqrt(),
                mean_pm1_accuracy: picked.iter().map(|r| r.pm1_accuracy).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Raw and adapted proxy A-distances for one trained adversarial model.
pub fn domain_diagnostics(
    run: &VariantRun,
    variant: Variant,
    seed: u64,
    sources: &[Dataset],
    target: &Dataset,
) -> Result<Diagnostics> {
    let src: Vec<&[f64]> = sources.iter().flat_map(|s| s.inputs()).collect();
    let tgt = target.inputs();
    let raw_pad = proxy_a_distance(&src, &tgt, seed)?;
    let fs = run.model.extract_features(&src)?;
    let ft = run.model.extract_features(&tgt)?;
    let fs: Vec<&[f64]> = fs.iter().map(Vec::as_slice).collect();
    let ft: Vec<&[f64]> = ft.iter().map(Vec::as_slice).collect();
    let adapted_pad = proxy_a_distance(&fs, &ft, seed)?;
    Ok(Diagnostics {
        seed,
        variant: variant.name().into(),
        raw_pad,
        adapted_pad,
    })
}

/// Trains and evaluates every variant for every seed on prepared domains.
///
/// Jobs run in parallel; each gets its own copy of the target so its
/// label-read count is isolated. Evaluation reads target labels once, on
/// a separate copy.
pub fn run_on_domains(
    cfg: &ExperimentConfig,
    domains: &PreparedDomains,
) -> Result<ExperimentOutput> {
    let weights = physics_weights(cfg).stage("weights")?;
    let jobs: Vec<(u64, Variant)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| cfg.variants.iter().map(move |&v| (s, v)))
        .collect();
    let eval_copy = domains.target.with_fresh_tracker();
    let target_labels = eval_copy.labels();
    type JobResult = (u64, Variant, Vec<RunArtifacts>, Option<Diagnostics>, f64);
    let results: Vec<JobResult> = jobs
        .par_iter()
        .map(|&(seed, variant)| {
            let started = Instant::now();
            let target = domains.target.with_fresh_tracker();
            let tcfg = seeded(&cfg.train, seed);
            let outcome = train_variant(
                variant,
                &domains.sources,
                Some(&target),
                Some(&weights.combined.weights),
                &tcfg,
            )
            .stage("train")?;
            let used_weights = match variant {
                Variant::Phymdan => Some(weights.combined.weights.clone()),
                Variant::Mdan => Some(vec![
                    1.0 / domains.sources.len() as f64;
                    domains.sources.len()
                ]),
                _ => None,
            };
            let mut artifacts = Vec::with_capacity(outcome.runs.len());
            for run in outcome.runs {
                let report = evaluate_run(
                    variant,
                    &run,
                    seed,
                    &eval_copy,
                    &target_labels,
                    used_weights.as_deref(),
                )
                .stage("evaluate")?;
                artifacts.push(RunArtifacts {
                    report,
                    log: run.log.clone(),
                    run,
                });
            }
            if variant == Variant::BDann {
                let best = (0..artifacts.len()).fold(0, |b, i| {
                    if artifacts[i].report.accuracy > artifacts[b].report.accuracy {
                        i
                    } else {
                        b
                    }
                });
                artifacts[best].report.best = true;
            }
            let diagnostics = if cfg.diagnostics
                && matches!(variant, Variant::Phymdan | Variant::Mdan | Variant::CDann)
            {
                Some(
                    domain_diagnostics(
                        &artifacts[0].run,
                        variant,
                        seed,
                        &domains.sources,
                        &domains.target,
                    )
                    .stage("diagnostics")?,
                )
            } else {
                None
            };
            Ok((
                seed,
                variant,
                artifacts,
                diagnostics,
                started.elapsed().as_secs_f64(),
            ))
        })
        .collect::<Result<_>>()?;

    let mut artifacts = Vec::new();
    let mut diagnostics = Vec::new();
    let mut timing = BTreeMap::new();
    for (seed, variant, arts, diag, secs) in results {
        timing.insert(format!("{variant}/seed{seed}"), secs);
        artifacts.extend(arts);
        diagnostics.extend(diag);
    }
    let runs: Vec<MetricsReport> = artifacts.iter().map(|a| a.report.clone()).collect();
    let mut domain_rows: Vec<DomainSummary> = domains
        .sources
        .iter()
        .chain(std::iter::once(&domains.target))
        .map(|d| DomainSummary {
            domain: d.domain.clone(),
            samples: d.len(),
            class_histogram: d.histogram().to_vec(),
        })
        .collect();
    domain_rows.sort_by(|a, b| a.domain.cmp(&b.domain));
    let report = ExperimentReport {
        name: cfg.name.clone(),
        task: cfg.task,
        story: cfg.story,
        target: cfg.target.clone(),
        sources: cfg.source_ids(),
        domains: domain_rows,
        weights,
        summary: summarize(&cfg.variants, &runs),
        runs,
        diagnostics,
    };
    Ok(ExperimentOutput {
        report,
        artifacts,
        timing,
    })
}

/// Full pipeline: simulate, preprocess, train every variant and seed,
/// evaluate, and write artifacts to `cfg.output_dir` when set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let started = Instant::now();
    let domains = prepare_domains(cfg)?;
    let prepared = started.elapsed().as_secs_f64();
    let mut out = run_on_domains(cfg, &domains)?;
    out.timing.insert("prepare".into(), prepared);
    out.timing
        .insert("total".into(), started.elapsed().as_secs_f64());
    if let Some(dir) = &cfg.output_dir {
        write_artifacts(dir, &out).stage("write")?;
    }
    Ok(out)
}

/// File-name-safe form of a run name such as `b_dann[b4]`.
pub fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                c
            } else {
                '-'
            }
        })
        .collect::<String>()
        .trim_matches('-')
        .to_string()
}

/// Per-variant summary as CSV with a header row.
pub fn comparison_csv(summary: &[VariantSummary]) -> String {
    let mut s = String::from("variant,seeds,mean_accuracy,std_accuracy,mean_pm1_accuracy\n");
    for v in summary {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            v.variant, v.seeds, v.mean_accuracy, v.std_accuracy, v.mean_pm1_accuracy
        );
    }
    s
}

/// Writes `report.json`, `weights.json`, `comparison.csv`,
/// `timing.json` and, per run, a JSON report, a confusion CSV, a JSONL
/// training log and a model checkpoint.
pub fn write_artifacts(dir: &Path, out: &ExperimentOutput) -> Result<()> {
    for sub in ["runs", "logs", "models"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&out.report)?,
    )?;
    fs::write(
        dir.join("weights.json"),
        serde_json::to_string_pretty(&out.report.weights)?,
    )?;
    fs::write(
        dir.join("comparison.csv"),
        comparison_csv(&out.report.summary),
    )?;
    fs::write(
        dir.join("timing.json"),
        serde_json::to_string_pretty(&out.timing)?,
    )?;
    for a in &out.artifacts {
        let stem = format!("{}_seed{}", sanitize(&a.report.run), a.report.seed);
        fs::write(
            dir.join("runs").join(format!("{stem}.json")),
            serde_json::to_string_pretty(&a.report)?,
        )?;
        fs::write(
            dir.join("runs").join(format!("{stem}_confusion.csv")),
            a.report.confusion_csv(),
        )?;
        a.log.write_jsonl(BufWriter::new(fs::File::create(
            dir.join("logs").join(format!("{stem}.jsonl")),
        )?))?;
        a.run.model.save(BufWriter::new(fs::File::create(
            dir.join("models").join(format!("{stem}.model")),
        )?))?;
    }
    Ok(())
}

/// One row of the lambda sweep, averaged over seeds and folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    /// Final-epoch held-out discriminator accuracy, mean over domains.
    pub discriminator_val_accuracy: f64,
    /// Final-epoch discriminator accuracy on training batches.
    pub discriminator_train_accuracy: f64,
    /// Final-epoch held-out source accuracy, mean over domains.
    pub source_val_accuracy: f64,
    /// Reporting only; never used for selection.
    pub target_accuracy: f64,
    pub selected: bool,
}

fn finite_mean(v: &[f64]) -> f64 {
    let finite: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if finite.is_empty() {
        f64::NAN
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    }
}

/// Trains the physics-weighted model for every `lambda` in the grid,
/// seed and fold, and flags the lambda with the best source validation
/// accuracy among those whose discriminators are not saturated (falling
/// back to all rows when every one is).
pub fn lambda_sweep(cfg: &ExperimentConfig, domains: &PreparedDomains) -> Result<Vec<SweepRow>> {
    if cfg.lambda_grid.is_empty() {
        return Err(Error::Config("lambda grid is empty".into()));
    }
    let weights = physics_weights(cfg).stage("weights")?;
    let mut grid = cfg.lambda_grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let folds: Vec<Option<(usize, usize)>> = if cfg.sweep_folds > 1 {
        (0..cfg.sweep_folds)
            .map(|j| Some((j, cfg.sweep_folds)))
            .collect()
    } else {
        vec![None]
    };
    let eval_copy = domains.target.with_fresh_tracker();
    let target_labels = eval_copy.labels();
    let mut jobs = Vec::new();
    for g in 0..grid.len() {
        for &s in &cfg.seeds {
            for &f in &folds {
                jobs.push((g, s, f));
            }
        }
    }
    let cells: Vec<(usize, [f64; 4])> = jobs
        .par_iter()
        .map(|&(g, seed, fold)| {
            let tcfg = TrainConfig {
                lambda: grid[g],
                validation_fold: fold,
                ..seeded(&cfg.train, seed)
            };
            let target = domains.target.with_fresh_tracker();
            let outcome = train_variant(
                Variant::Phymdan,
                &domains.sources,
                Some(&target),
                Some(&weights.combined.weights),
                &tcfg,
            )
            .stage("sweep")?;
            let run = &outcome.runs[0];
            let last = run
                .log
                .last()
                .ok_or_else(|| Error::Training("empty training log".into()))?;
            let report = evaluate_run(
                Variant::Phymdan,
                run,
                seed,
                &eval_copy,
                &target_labels,
                None,
            )
            .stage("evaluate")?;
            Ok((
                g,
                [
                    finite_mean(&last.discriminator_val_accuracy),
                    finite_mean(&last.discriminator_train_accuracy),
                    finite_mean(&last.source_val_accuracy),
                    report.accuracy,
                ],
            ))
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<SweepRow> = grid
        .iter()
        .enumerate()
        .map(|(g, &lambda)| {
            let mine: Vec<&[f64; 4]> = cells
                .iter()
                .filter(|(i, _)| *i == g)
                .map(|(_, c)| c)
                .collect();
            let col = |k: usize| finite_mean(&mine.iter().map(|c| c[k]).collect::<Vec<_>>());
            SweepRow {
                lambda,
                discriminator_val_accuracy: col(0),
                discriminator_train_accuracy: col(1),
                source_val_accuracy: col(2),
                target_accuracy: col(3),
                selected: false,
            }
        })
        .collect();
    let open: Vec<usize> = (0..rows.len())
        .filter(|&i| !(rows[i].discriminator_val_accuracy >= SATURATED_DISCRIMINATOR_ACCURACY))
        .collect();
    let pool = if open.is_empty() {
        (0..rows.len()).collect()
    } else {
        open
    };
    let best = pool.iter().copied().fold(pool[0], |b, i| {
        if rows[i].source_val_accuracy > rows[b].source_val_accuracy {
            i
        } else {
            b
        }
    });
    rows[best].selected = true;
    Ok(rows)
}

/// Sweep table as CSV with a header row.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(
        "lambda,discriminator_val_accuracy,discriminator_train_accuracy,source_val_accuracy,target_accuracy,selected\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.lambda,
            r.discriminator_val_accuracy,
            r.discriminator_train_accuracy,
            r.source_val_accuracy,
            r.target_accuracy,
            r.selected
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sanitized_names() {
        assert_eq!(sanitize("b_dann[b4]"), "b_dann-b4");
        assert_eq!(sanitize("phymdan"), "phymdan");
    }

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv1a(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a("a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn summary_uses_best_single_source_run() {
        let mk = |variant: &str, run: &str, acc_hits: usize, best: bool| {
            let preds = vec![1; 4];
            let labels: Vec<usize> = (0..4).map(|i| usize::from(i < acc_hits)).collect();
            let mut r = MetricsReport::new(variant, run, 0, &preds, &labels, 2).unwrap();
            r.best = best;
            r
        };
        let runs = vec![
            mk("b_dann", "b_dann[b4]", 1, false),
            mk("b_dann", "b_dann[b8]", 3, true),
            mk("c_cnn", "c_cnn", 2, false),
        ];
        let s = summarize(&[Variant::BDann, Variant::CCnn], &runs);
        assert_eq!(s[0].seeds, 1);
        assert_eq!(s[0].mean_accuracy, 0.75);
        assert_eq!(s[1].mean_accuracy, 0.5);
    }
}
