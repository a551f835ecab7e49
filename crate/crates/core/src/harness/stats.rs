use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quakesim::ResponseRecord;

/// Response distribution of one scale-factor group at one story.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleStats {
    pub scale: f64,
    pub records: usize,
    pub pfa_mean: f64,
    pub pfa_var: f64,
    pub log_pfa_mean: f64,
    pub log_pfa_var: f64,
    pub peak_sdr_mean: f64,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Peak floor acceleration at floor `story` and peak drift of story
/// `story`, summarized per scale factor (ascending). Variances are
/// population variances.
pub fn response_stats(records: &[ResponseRecord], story: usize) -> Result<Vec<ScaleStats>> {
    if records.is_empty() {
        return Err(Error::arg("no records"));
    }
    let mut groups: BTreeMap<u64, Vec<&ResponseRecord>> = BTreeMap::new();
    for r in records {
        if story == 0 || story > r.stories() {
            return Err(Error::arg(format!(
                "record {} has no story {story}",
                r.id()
            )));
        }
        groups.entry(r.scale.to_bits()).or_default().push(r);
    }
    let mut out: Vec<ScaleStats> = groups
        .into_values()
        .map(|rs| {
            let pfa: Vec<f64> = rs.iter().map(|r| r.peak_floor_accel(story)).collect();
            let log_pfa: Vec<f64> = pfa.iter().map(|p| p.max(f64::MIN_POSITIVE).ln()).collect();
            let sdr: Vec<f64> = rs.iter().map(|r| r.peak_drifts[story - 1]).collect();
            let (pfa_mean, pfa_var) = mean_var(&pfa);
            let (log_pfa_mean, log_pfa_var) = mean_var(&log_pfa);
            ScaleStats {
                scale: rs[0].scale,
                records: rs.len(),
                pfa_mean,
                pfa_var,
                log_pfa_mean,
                log_pfa_var,
                peak_sdr_mean: mean_var(&sdr).0,
            }
        })
        .collect();
    out.sort_by(|a, b| a.scale.total_cmp(&b.scale));
    Ok(out)
}

pub fn stats_csv(stats: &[ScaleStats]) -> String {
    let mut s =
        String::from("scale,records,pfa_mean,pfa_var,log_pfa_mean,log_pfa_var,peak_sdr_mean\n");
    for r in stats {
        let _ = writeln!(
            s,
            "{},{},{:e},{:e},{:e},{:e},{:e}",
            r.scale,
            r.records,
            r.pfa_mean,
            r.pfa_var,
            r.log_pfa_mean,
            r.log_pfa_var,
            r.peak_sdr_mean
        );
    }
    s
}
