use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::spectral::{resample_spectrum_padded, smooth, spectrum_with, stack_channels};
use super::window::{sliding_windows, Window};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::quakesim::{label_damage, ResponseRecord};
use crate::Task;

/// Channel order of every stacked input.
pub const CHANNELS: [&str; 3] = ["floor", "ceiling", "ground"];

/// Preprocessing and augmentation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepConfig {
    /// Spectrum points per channel.
    pub l: usize,
    pub f_max: f64,
    pub smooth_width: usize,
    /// Shortest window is `record length - min_len_offset` seconds.
    pub min_len_offset: f64,
    pub length_step: f64,
    pub placement_step: f64,
    /// Drop windows that cut into the strong-motion phase.
    pub require_coverage: bool,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            l: 1000,
            f_max: 26.0,
            smooth_width: 5,
            min_len_offset: 2.5,
            length_step: 0.25,
            placement_step: 0.25,
            require_coverage: true,
        }
    }
}

/// One stacked spectrum with its label and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Row-major `3 x l` values.
    pub input: Vec<f64>,
    label: usize,
    pub domain: String,
    pub story: usize,
    pub record: String,
    pub window: Window,
}

impl Sample {
    pub fn new(
        input: Vec<f64>,
        label: usize,
        domain: String,
        story: usize,
        record: String,
        window: Window,
    ) -> Self {
        Sample {
            input,
            label,
            domain,
            story,
            record,
            window,
        }
    }
}

/// Samples of one domain. Label reads go through [`Dataset::label`] and
/// [`Dataset::labels`], which count them so tests can prove a training
/// path never looked at target labels. Clones and subsets share the
/// counter of the dataset they came from.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub domain: String,
    pub task: Task,
    pub l: usize,
    samples: Vec<Sample>,
    histogram: Vec<usize>,
    label_reads: Arc<AtomicUsize>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.domain == other.domain
            && self.task == other.task
            && self.l == other.l
            && self.samples == other.samples
    }
}

impl Dataset {
    pub fn new(
        domain: impl Into<String>,
        task: Task,
        l: usize,
        samples: Vec<Sample>,
    ) -> Result<Self> {
        let domain = domain.into();
        let k = task.num_classes();
        let mut histogram = vec![0; k];
        for (i, s) in samples.iter().enumerate() {
            if s.input.len() != 3 * l {
                return Err(Error::dim(format!(
                    "sample {i} has {} values, expected 3 x {l}",
                    s.input.len()
                )));
            }
            if s.domain != domain {
                return Err(Error::arg(format!(
                    "sample {i} belongs to domain {:?}, not {domain:?}",
                    s.domain
                )));
            }
            if s.label >= k {
                return Err(Error::arg(format!(
                    "sample {i} has label {} >= {k}",
                    s.label
                )));
            }
            histogram[s.label] += 1;
        }
        Ok(Dataset {
            domain,
            task,
            l,
            samples,
            histogram,
            label_reads: Arc::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.samples[i].input
    }

    /// Every input, in sample order.
    pub fn inputs(&self) -> Vec<&[f64]> {
        self.samples.iter().map(|s| s.input.as_slice()).collect()
    }

    /// Input of sample `i` as a `3 x l` tensor.
    pub fn input_tensor(&self, i: usize) -> Tensor {
        Tensor::new(vec![3, self.l], self.samples[i].input.clone())
            .expect("validated at construction")
    }

    /// Label of sample `i`; counted as a label read.
    pub fn label(&self, i: usize) -> usize {
        self.label_reads.fetch_add(1, Ordering::Relaxed);
        self.samples[i].label
    }

    /// All labels; counted as one read per sample.
    pub fn labels(&self) -> Vec<usize> {
        self.label_reads
            .fetch_add(self.samples.len(), Ordering::Relaxed);
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Class counts. Computed at construction, so reading it is not a
    /// label access.
    pub fn histogram(&self) -> &[usize] {
        &self.histogram
    }

    pub fn label_reads(&self) -> usize {
        self.label_reads.load(Ordering::Relaxed)
    }

    pub fn reset_label_reads(&self) {
        self.label_reads.store(0, Ordering::Relaxed);
    }

    /// Copy of this dataset with its own label-read counter.
    pub fn with_fresh_tracker(&self) -> Dataset {
        Dataset {
            label_reads: Arc::default(),
            ..self.clone()
        }
    }

    /// Samples at `indices`, as a new dataset of the same domain.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        let mut ds = Dataset::new(self.domain.clone(), self.task, self.l, samples)
            .expect("subset of a valid dataset");
        ds.label_reads = Arc::clone(&self.label_reads);
        ds
    }

    /// Shuffled `(first, second)` split with `fraction` of the samples in
    /// the first part (at least one in each when possible).
    pub fn split<R: Rng>(&self, fraction: f64, rng: &mut R) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        let mut cut = (self.len() as f64 * fraction).round() as usize;
        if self.len() >= 2 {
            cut = cut.clamp(1, self.len() - 1);
        }
        (self.subset(&idx[..cut]), self.subset(&idx[cut..]))
    }

    /// Pools several datasets under a new domain id.
    pub fn pooled(domain: &str, parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or_else(|| Error::arg("nothing to pool"))?;
        let mut samples = Vec::new();
        for p in parts {
            if p.l != first.l || p.task != first.task {
                return Err(Error::dim(
                    "pooled datasets must share input length and task",
                ));
            }
            samples.extend(p.samples.iter().cloned().map(|mut s| {
                s.domain = domain.to_string();
                s
            }));
        }
        Dataset::new(domain, first.task, first.l, samples)
    }
}

/// Builds the samples of `story` (1-based) from every record.
///
/// Each accepted window is smoothed, transformed, resampled to `l` points
/// on `[0, f_max]` and stacked as (floor `j`, floor `j+1`, ground). For
/// the roof story the ceiling is the roof itself. Every window carries its
/// record's label at that story.
pub fn assemble_dataset(
    records: &[ResponseRecord],
    story: usize,
    task: Task,
    domain: &str,
    cfg: &PrepConfig,
) -> Result<Dataset> {
    if records.is_empty() {
        return Err(Error::Pipeline("no records to assemble".into()));
    }
    let per_record: Vec<Vec<Sample>> = records
        .par_iter()
        .map(|r| record_samples(r, story, task, domain, cfg))
        .collect::<Result<_>>()?;
    let samples: Vec<Sample> = per_record.into_iter().flatten().collect();
    if samples.is_empty() {
        return Err(Error::Pipeline(format!(
            "domain {domain}: no window covers the strong-motion phase of any record"
        )));
    }
    Dataset::new(domain, task, cfg.l, samples)
}

fn record_samples(
    r: &ResponseRecord,
    story: usize,
    task: Task,
    domain: &str,
    cfg: &PrepConfig,
) -> Result<Vec<Sample>> {
    let n = r.stories();
    if story == 0 || story > n {
        return Err(Error::arg(format!(
            "record {} has no story {story} (stories 1..={n})",
            r.id()
        )));
    }
    let label = label_damage(r.peak_drifts[story - 1], task)?;
    let fs = r.sample_rate();
    let windows = sliding_windows(
        r.duration(),
        cfg.min_len_offset,
        cfg.length_step,
        cfg.placement_step,
        cfg.require_coverage.then_some(r.strong_motion),
    )?;
    let channels = [
        &r.floor_accels[0],
        &r.floor_accels[story],
        &r.floor_accels[(story + 1).min(n)],
    ];
    let mut planner = FftPlanner::new();
    let mut out = Vec::with_capacity(windows.len());
    for w in windows {
        let (first, count) = w.sample_range(fs, r.len());
        let [g, f, c] = channels.map(|ch| &ch[first..first + count]);
        let input = window_input_with(&mut planner, g, f, c, fs, cfg)?;
        out.push(Sample::new(
            input,
            label,
            domain.to_string(),
            story,
            r.id(),
            w,
        ));
    }
    Ok(out)
}

/// Model input (`3 x l` values, floor, ceiling, ground) for one window of
/// equally long ground, floor and ceiling acceleration segments.
pub fn window_input(
    ground: &[f64],
    floor: &[f64],
    ceiling: &[f64],
    fs: f64,
    cfg: &PrepConfig,
) -> Result<Vec<f64>> {
    window_input_with(&mut FftPlanner::new(), ground, floor, ceiling, fs, cfg)
}

fn window_input_with(
    planner: &mut FftPlanner<f64>,
    ground: &[f64],
    floor: &[f64],
    ceiling: &[f64],
    fs: f64,
    cfg: &PrepConfig,
) -> Result<Vec<f64>> {
    if floor.len() != ground.len() || ceiling.len() != ground.len() {
        return Err(Error::dim(format!(
            "channel lengths differ: {}, {}, {}",
            ground.len(),
            floor.len(),
            ceiling.len()
        )));
    }
    let mut spectra = Vec::with_capacity(3);
    for ch in [ground, floor, ceiling] {
        let seg = smooth(ch, cfg.smooth_width)?;
        let (f, m) = spectrum_with(planner, &seg, fs)?;
        spectra.push(resample_spectrum_padded(&f, &m, cfg.l, cfg.f_max)?);
    }
    Ok(stack_channels(&spectra[0], &spectra[1], &spectra[2])?.into_data())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FileHeader {
    format: String,
    l: usize,
    f_max: f64,
    channels: Vec<String>,
    task: Task,
    domain: String,
    samples: usize,
}

const FORMAT_TAG: &str = "seismda-dataset-1";

/// Writes a JSON header line followed by CSV rows
/// `story,label,record,start,length,v0..`.
pub fn write_dataset(path: &Path, ds: &Dataset, f_max: f64) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let header = FileHeader {
        format: FORMAT_TAG.into(),
        l: ds.l,
        f_max,
        channels: CHANNELS.iter().map(|s| s.to_string()).collect(),
        task: ds.task,
        domain: ds.domain.clone(),
        samples: ds.len(),
    };
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    let mut cols = vec![
        "story".to_string(),
        "label".into(),
        "record".into(),
        "start".into(),
        "length".into(),
    ];
    for ch in CHANNELS {
        cols.extend((0..ds.l).map(|i| format!("{ch}_{i}")));
    }
    writeln!(w, "{}", cols.join(","))?;
    for s in &ds.samples {
        write!(
            w,
            "{},{},{},{:e},{:e}",
            s.story, s.label, s.record, s.window.start, s.window.length
        )?;
        for v in &s.input {
            write!(w, ",{v:e}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_dataset`]; returns the dataset and its
/// `f_max`.
pub fn read_dataset(path: &Path) -> Result<(Dataset, f64)> {
    let ctx = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
    let mut lines = BufReader::new(fs::File::open(path)?).lines();
    let header: FileHeader =
        serde_json::from_str(&lines.next().ok_or_else(|| ctx("empty file".into()))??)?;
    if header.format != FORMAT_TAG {
        return Err(ctx(format!("unknown format {:?}", header.format)));
    }
    if header.channels != CHANNELS {
        return Err(ctx(format!(
            "unexpected channel order {:?}",
            header.channels
        )));
    }
    lines
        .next()
        .ok_or_else(|| ctx("missing column header".into()))??;
    let mut samples = Vec::with_capacity(header.samples);
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 + 3 * header.l {
            return Err(ctx(format!("row {row} has {} fields", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| ctx(format!("row {row}: {e}")));
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| ctx(format!("row {row}: {e}")))
        };
        let input = f[5..].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
        samples.push(Sample::new(
            input,
            int(f[1])?,
            header.domain.clone(),
            int(f[0])?,
            f[2].to_string(),
            Window {
                start: num(f[3])?,
                length: num(f[4])?,
            },
        ));
    }
    if samples.len() != header.samples {
        return Err(ctx(format!(
            "header lists {} samples, found {}",
            header.samples,
            samples.len()
        )));
    }
    Ok((
        Dataset::new(header.domain, header.task, header.l, samples)?,
        header.f_max,
    ))
}
