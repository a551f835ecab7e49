use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Centered moving average of odd `width`. Near the edges the window is
/// truncated to the samples that exist.
pub fn smooth(series: &[f64], width: usize) -> Result<Vec<f64>> {
    if width == 0 || width.is_multiple_of(2) {
        return Err(Error::arg(format!(
            "smoothing width must be odd and positive, got {width}"
        )));
    }
    if width > series.len() {
        return Err(Error::arg(format!(
            "smoothing width {width} exceeds series length {}",
            series.len()
        )));
    }
    let half = width / 2;
    let n = series.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &x in series {
        prefix.push(prefix.last().unwrap() + x);
    }
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect())
}

/// One-sided magnitude spectrum `|X_k|`, `k = 0..=n/2`, with bin
/// frequencies `k fs / n`.
pub fn spectrum(series: &[f64], fs: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut planner = FftPlanner::new();
    spectrum_with(&mut planner, series, fs)
}

pub(crate) fn spectrum_with(
    planner: &mut FftPlanner<f64>,
    series: &[f64],
    fs: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = series.len();
    if n < 2 {
        return Err(Error::arg("spectrum needs at least two samples"));
    }
    if !(fs > 0.0) {
        return Err(Error::arg(format!(
            "sample rate must be positive, got {fs}"
        )));
    }
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&x| Complex::new(x, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    let freqs = (0..=half).map(|k| k as f64 * fs / n as f64).collect();
    let mags = buf[..=half].iter().map(|c| c.norm()).collect();
    Ok((freqs, mags))
}

/// Linear interpolation onto `l` uniform points over `[0, f_max]`.
/// `f_max` must not exceed the last source frequency.
pub fn resample_spectrum(freqs: &[f64], mags: &[f64], l: usize, f_max: f64) -> Result<Vec<f64>> {
    check_grid(freqs, mags, l)?;
    let top = *freqs.last().unwrap();
    if f_max > top * (1.0 + 1e-12) {
        return Err(Error::arg(format!(
            "f_max {f_max} Hz exceeds the source Nyquist frequency {top} Hz"
        )));
    }
    Ok(interpolate(freqs, mags, l, f_max))
}

/// As [`resample_spectrum`], but target points above the source band are
/// set to zero instead of failing.
pub fn resample_spectrum_padded(
    freqs: &[f64],
    mags: &[f64],
    l: usize,
    f_max: f64,
) -> Result<Vec<f64>> {
    check_grid(freqs, mags, l)?;
    Ok(interpolate(freqs, mags, l, f_max))
}

fn check_grid(freqs: &[f64], mags: &[f64], l: usize) -> Result<()> {
    if freqs.len() != mags.len() || freqs.len() < 2 {
        return Err(Error::dim(format!(
            "{} frequencies for {} magnitudes (need >= 2)",
            freqs.len(),
            mags.len()
        )));
    }
    if l < 2 {
        return Err(Error::arg("target grid needs at least two points"));
    }
    if freqs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::arg("source frequencies must be strictly increasing"));
    }
    Ok(())
}

fn interpolate(freqs: &[f64], mags: &[f64], l: usize, f_max: f64) -> Vec<f64> {
    let top = *freqs.last().unwrap();
    let spacing = f_max / (l - 1) as f64;
    let mut j = 0;
    (0..l)
        .map(|i| {
            let f = i as f64 * spacing;
            if f > top * (1.0 + 1e-12) {
                return 0.0;
            }
            if f >= top {
                return *mags.last().unwrap();
            }
            while j + 2 < freqs.len() && freqs[j + 1] <= f {
                j += 1;
            }
            let (f0, f1) = (freqs[j], freqs[j + 1]);
            let t = ((f - f0) / (f1 - f0)).clamp(0.0, 1.0);
            mags[j] + t * (mags[j + 1] - mags[j])
        })
        .collect()
}

/// Stacks the spectra as rows `(floor, ceiling, ground)`, each scaled to
/// a peak of 1. All-zero rows stay zero.
pub fn stack_channels(ground: &[f64], floor: &[f64], ceiling: &[f64]) -> Result<Tensor> {
    let l = ground.len();
    if floor.len() != l || ceiling.len() != l {
        return Err(Error::dim(format!(
            "channel lengths differ: ground {l}, floor {}, ceiling {}",
            floor.len(),
            ceiling.len()
        )));
    }
    let mut data = Vec::with_capacity(3 * l);
    for row in [floor, ceiling, ground] {
        let peak = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            data.extend(row.iter().map(|v| v / peak));
        } else {
            data.extend(std::iter::repeat_n(0.0, l));
        }
    }
    Tensor::new(vec![3, l], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn smooth_examples() {
        assert_eq!(smooth(&[0.0, 3.0, 0.0], 3).unwrap(), vec![1.5, 1.0, 1.5]);
        assert_eq!(smooth(&[2.0; 6], 5).unwrap(), vec![2.0; 6]);
        let x = [1.0, -4.0, 2.5];
        assert_eq!(smooth(&x, 1).unwrap(), x.to_vec());
        assert!(smooth(&x, 2).is_err());
        assert!(smooth(&x, 5).is_err());
    }

    #[test]
    fn constant_has_only_dc() {
        let (f, m) = spectrum(&[3.0; 16], 10.0).unwrap();
        assert_eq!(f.len(), 9);
        assert!((m[0] - 48.0).abs() < 1e-12);
        assert!(m[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn sine_at_bin() {
        let n = 200;
        let fs = 100.0;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * 5.0 * i as f64 / fs).sin())
            .collect();
        let (f, m) = spectrum(&x, fs).unwrap();
        let k = m
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert!((f[k] - 5.0).abs() < 1e-12);
        assert!((m[k] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn resample_identity_and_errors() {
        let f: Vec<f64> = (0..11).map(|i| i as f64).collect();
        let m: Vec<f64> = (0..11).map(|i| (i * i) as f64).collect();
        let r = resample_spectrum(&f, &m, 11, 10.0).unwrap();
        for (a, b) in r.iter().zip(&m) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(resample_spectrum(&f, &m, 11, 10.5).is_err());
        let p = resample_spectrum_padded(&f, &m, 21, 20.0).unwrap();
        assert_eq!(p[20], 0.0);
        assert!((p[10] - 100.0).abs() < 1e-12);
    }

    #[test]
    fn stacking_order_and_zero_guard() {
        let t = stack_channels(&[1.0, 2.0], &[0.0, 4.0], &[0.0, 0.0]).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 0.0, 0.0, 0.5, 1.0]);
        assert!(stack_channels(&[1.0], &[1.0, 2.0], &[1.0]).is_err());
    }
}
