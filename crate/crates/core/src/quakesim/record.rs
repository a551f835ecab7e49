use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::building::BuildingSpec;
use super::labels::label_damage;
use super::motion::GroundMotionSpec;
use crate::error::{Error, Result};
use crate::Task;

/// Simulated response of one building to one scaled ground motion.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseRecord {
    pub building_id: String,
    pub motion_id: String,
    pub scale: f64,
    pub dt: f64,
    /// Absolute accelerations; index 0 is the ground, `i` is floor `i`.
    pub floor_accels: Vec<Vec<f64>>,
    /// Story drift ratio series, one per story.
    pub drifts: Vec<Vec<f64>>,
    pub peak_drifts: Vec<f64>,
    /// Strong-motion phase in seconds from the record start.
    pub strong_motion: (f64, f64),
}

impl ResponseRecord {
    pub fn new(
        building_id: String,
        motion_id: String,
        scale: f64,
        dt: f64,
        floor_accels: Vec<Vec<f64>>,
        drifts: Vec<Vec<f64>>,
        strong_motion: (f64, f64),
    ) -> Self {
        let peak_drifts = drifts
            .iter()
            .map(|s| s.iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .collect();
        ResponseRecord {
            building_id,
            motion_id,
            scale,
            dt,
            floor_accels,
            drifts,
            peak_drifts,
            strong_motion,
        }
    }

    pub fn stories(&self) -> usize {
        self.drifts.len()
    }

    pub fn len(&self) -> usize {
        self.floor_accels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.len() as f64
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.dt
    }

    pub fn id(&self) -> String {
        format!("{}__{}__x{}", self.building_id, self.motion_id, self.scale)
    }

    /// Damage class of each story (1-based story `j` at index `j - 1`).
    pub fn labels(&self, task: Task) -> Result<Vec<usize>> {
        self.peak_drifts
            .iter()
            .map(|&p| label_damage(p, task))
            .collect()
    }

    /// Peak absolute acceleration at `level` (0 = ground).
    pub fn peak_floor_accel(&self, level: usize) -> f64 {
        self.floor_accels[level]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// CSV with columns `time, ground, floor_1.., sdr_1..`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        let n = self.stories();
        let mut header = vec!["time".to_string(), "ground".to_string()];
        header.extend((1..=n).map(|i| format!("floor_{i}")));
        header.extend((1..=n).map(|i| format!("sdr_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for t in 0..self.len() {
            write!(w, "{:e}", t as f64 * self.dt)?;
            for series in self.floor_accels.iter().chain(&self.drifts) {
                write!(w, ",{:e}", series[t])?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV written by [`Self::write_csv`]; metadata comes from the
    /// manifest entry.
    pub fn read_csv(path: &Path, entry: &ManifestEntry, building_id: &str) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format(format!("{}: empty record file", path.display())))??;
        let cols = header.split(',').count();
        if cols < 4 || (cols - 2) % 2 != 0 {
            return Err(Error::Format(format!(
                "{}: unexpected header {header:?}",
                path.display()
            )));
        }
        let n = (cols - 2) / 2;
        let mut floor_accels = vec![Vec::new(); n + 1];
        let mut drifts = vec![Vec::new(); n];
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            if vals.len() != cols {
                return Err(Error::Format(format!("{}: ragged row", path.display())));
            }
            for (i, series) in floor_accels.iter_mut().enumerate() {
                series.push(vals[1 + i]);
            }
            for (i, series) in drifts.iter_mut().enumerate() {
                series.push(vals[2 + n + i]);
            }
        }
        Ok(ResponseRecord::new(
            building_id.to_string(),
            entry.motion.id.clone(),
            entry.scale,
            entry.dt,
            floor_accels,
            drifts,
            entry.strong_motion,
        ))
    }
}

/// One record's metadata in a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub motion: GroundMotionSpec,
    pub scale: f64,
    pub dt: f64,
    pub strong_motion: (f64, f64),
    pub peak_sdrs: Vec<f64>,
    pub labels_detection: Vec<usize>,
    pub labels_quantification: Vec<usize>,
}

/// Manifest describing all records simulated for one building.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub building: BuildingSpec,
    pub records: Vec<ManifestEntry>,
}

/// Writes one CSV per record plus `manifest.json` into `dir`.
pub fn export_records(
    dir: &Path,
    building: &BuildingSpec,
    motions: &[GroundMotionSpec],
    records: &[ResponseRecord],
) -> Result<Manifest> {
    if motions.len() != records.len() {
        return Err(Error::dim(format!(
            "{} motion specs for {} records",
            motions.len(),
            records.len()
        )));
    }
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(records.len());
    for (i, (rec, motion)) in records.iter().zip(motions).enumerate() {
        let file = format!("record_{i:04}.csv");
        rec.write_csv(&dir.join(&file))?;
        entries.push(ManifestEntry {
            file,
            motion: motion.clone(),
            scale: rec.scale,
            dt: rec.dt,
            strong_motion: rec.strong_motion,
            peak_sdrs: rec.peak_drifts.clone(),
            labels_detection: rec.labels(Task::Detection)?,
            labels_quantification: rec.labels(Task::Quantification)?,
        });
    }
    let manifest = Manifest {
        building: building.clone(),
        records: entries,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// Loads every record listed in `dir/manifest.json`.
pub fn import_records(dir: &Path) -> Result<(Manifest, Vec<ResponseRecord>)> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let records = manifest
        .records
        .iter()
        .map(|e| ResponseRecord::read_csv(&dir.join(&e.file), e, &manifest.building.id))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, records))
}
