//! Quantitative evaluation: MSE, PSNR, SSIM, histogram second moment,
//! y-t profiles, error maps, and CSV/PGM report output.
//!
//! All metrics run on magnitude images. PSNR normalizes both images by the
//! reference peak, so the peak is 1 by construction. The histogram second
//! moment first min-max normalizes to [0, 255], which makes it invariant to
//! gain and offset of the raw values.

use std::path::Path;

use crate::encoding::CineVolume;
use crate::error::{Error, Result};
use crate::io;
use crate::scalar::Scalar;
use crate::tensor::RealTensor;

/// PSNR value or the flagged-infinite sentinel for identical inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Db(f64),
    Infinite,
}

impl Psnr {
    /// Finite value, or `f64::INFINITY` for the sentinel.
    pub fn db(self) -> f64 {
        match self {
            Psnr::Db(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Psnr::Db(v) => write!(f, "{}", v),
            Psnr::Infinite => write!(f, "inf"),
        }
    }
}

fn check_same_shape<T: Scalar>(a: &RealTensor<T>, b: &RealTensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "metric extents {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean squared error over magnitude images, accumulated in f64.
pub fn mse<T: Scalar>(reference: &RealTensor<T>, test: &RealTensor<T>) -> Result<f64> {
    check_same_shape(reference, test)?;
    let mut acc = 0.0f64;
    for (r, t) in reference.iter().zip(test.iter()) {
        let d = r.as_f64() - t.as_f64();
        acc += d * d;
    }
    Ok(acc / reference.len() as f64)
}

/// Peak signal-to-noise ratio in dB after normalizing both images by the
/// reference peak. Identical inputs return the infinite sentinel.
pub fn psnr<T: Scalar>(reference: &RealTensor<T>, test: &RealTensor<T>) -> Result<Psnr> {
    check_same_shape(reference, test)?;
    let peak = reference.max_abs().as_f64();
    if peak == 0.0 {
        return Err(Error::Contract("psnr reference is identically zero".into()));
    }
    let inv = 1.0 / peak;
    let mut acc = 0.0f64;
    for (r, t) in reference.iter().zip(test.iter()) {
        let d = (r.as_f64() - t.as_f64()) * inv;
        acc += d * d;
    }
    let m = acc / reference.len() as f64;
    if m == 0.0 {
        Ok(Psnr::Infinite)
    } else {
        Ok(Psnr::Db(10.0 * (1.0 / m).log10()))
    }
}

const SSIM_WINDOW: usize = 7;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_L: f64 = 1.0;

/// Mean local SSIM over all valid 7x7 uniform windows, standard constants,
/// dynamic range 1. Computed with summed-area tables.
pub fn ssim<T: Scalar>(reference: &RealTensor<T>, test: &RealTensor<T>) -> Result<f64> {
    check_same_shape(reference, test)?;
    let shape = reference.shape();
    if shape.len() != 2 {
        return Err(Error::Dimension(format!(
            "ssim expects 2D images, got {:?}",
            shape
        )));
    }
    let (h, w) = (shape[0], shape[1]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "ssim needs extents >= {}, got {}x{}",
            SSIM_WINDOW, h, w
        )));
    }

    // summed-area tables for x, y, x^2, y^2, xy
    let integral = |f: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut s = vec![0.0f64; (h + 1) * (w + 1)];
        for y in 0..h {
            for x in 0..w {
                s[(y + 1) * (w + 1) + (x + 1)] = f(y * w + x) + s[y * (w + 1) + (x + 1)]
                    + s[(y + 1) * (w + 1) + x]
                    - s[y * (w + 1) + x];
            }
        }
        s
    };
    let rx = reference.data();
    let ty = test.data();
    let sx = integral(&|i| rx[i].as_f64());
    let sy = integral(&|i| ty[i].as_f64());
    let sxx = integral(&|i| rx[i].as_f64() * rx[i].as_f64());
    let syy = integral(&|i| ty[i].as_f64() * ty[i].as_f64());
    let sxy = integral(&|i| rx[i].as_f64() * ty[i].as_f64());
    let window_sum = |s: &[f64], y: usize, x: usize| -> f64 {
        let (y1, x1) = (y + SSIM_WINDOW, x + SSIM_WINDOW);
        s[y1 * (w + 1) + x1] - s[y * (w + 1) + x1] - s[y1 * (w + 1) + x] + s[y * (w + 1) + x]
    };

    let c1 = (SSIM_K1 * SSIM_L).powi(2);
    let c2 = (SSIM_K2 * SSIM_L).powi(2);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut acc = 0.0f64;
    let mut count = 0usize;
    for y in 0..=h - SSIM_WINDOW {
        for x in 0..=w - SSIM_WINDOW {
            let mx = window_sum(&sx, y, x) / n;
            let my = window_sum(&sy, y, x) / n;
            let vx = window_sum(&sxx, y, x) / n - mx * mx;
            let vy = window_sum(&syy, y, x) / n - my * my;
            let cov = window_sum(&sxy, y, x) / n - mx * my;
            let val = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            acc += val;
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

/// Histogram second moment: min-max normalize to [0, 255], then the standard
/// deviation of pixel values. Larger means a more complex histogram.
pub fn second_moment_sigma<T: Scalar>(img: &RealTensor<T>) -> Result<f64> {
    if img.is_empty() {
        return Err(Error::Contract("sigma of an empty image".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in img.iter() {
        let f = v.as_f64();
        lo = lo.min(f);
        hi = hi.max(f);
    }
    if hi <= lo {
        return Ok(0.0);
    }
    let scale = 255.0 / (hi - lo);
    let n = img.len() as f64;
    let mut mean = 0.0f64;
    for v in img.iter() {
        mean += (v.as_f64() - lo) * scale;
    }
    mean /= n;
    let mut acc = 0.0f64;
    for v in img.iter() {
        let p = (v.as_f64() - lo) * scale;
        acc += (p - mean) * (p - mean);
    }
    Ok((acc / n).sqrt())
}

/// Magnitude slice of the series at a fixed x: a `[ny, nt]` image showing
/// temporal fidelity.
pub fn yt_profile<T: Scalar>(vol: &CineVolume<T>, x_index: usize) -> Result<RealTensor<T>> {
    if x_index >= vol.nx {
        return Err(Error::Dimension(format!(
            "x index {} out of range (nx = {})",
            x_index, vol.nx
        )));
    }
    Ok(RealTensor::from_fn(&[vol.ny, vol.nt], |i| {
        let (y, t) = (i / vol.nt, i % vol.nt);
        vol.data.at((t * vol.ny + y) * vol.nx + x_index).norm()
    }))
}

/// Magnitude difference clipped to `display_range`, mapped linearly to the
/// same range for export.
pub fn error_map<T: Scalar>(
    reference: &RealTensor<T>,
    test: &RealTensor<T>,
    display_range: (f64, f64),
) -> Result<RealTensor<T>> {
    check_same_shape(reference, test)?;
    let (lo, hi) = display_range;
    if hi <= lo {
        return Err(Error::Config("display range must be increasing".into()));
    }
    Ok(RealTensor::from_fn(reference.shape(), |i| {
        let d = (reference.data()[i].as_f64() - test.data()[i].as_f64()).abs();
        T::of_f64(d.clamp(lo, hi))
    }))
}

/// Maps `[lo, hi]` linearly to 8-bit gray and writes a PGM.
pub fn export_pgm<T: Scalar>(
    path: &Path,
    img: &RealTensor<T>,
    range: (f64, f64),
) -> Result<()> {
    let shape = img.shape();
    if shape.len() != 2 {
        return Err(Error::Dimension(format!(
            "pgm export expects 2D, got {:?}",
            shape
        )));
    }
    let (lo, hi) = range;
    if hi <= lo {
        return Err(Error::Config("display range must be increasing".into()));
    }
    let scale = 255.0 / (hi - lo);
    let pixels: Vec<u8> = img
        .iter()
        .map(|v| ((v.as_f64() - lo) * scale).clamp(0.0, 255.0).round() as u8)
        .collect();
    io::write_pgm(path, shape[0], shape[1], &pixels)
}

/// One evaluated volume (here: one frame).
#[derive(Clone, Debug)]
pub struct VolumeMetrics {
    pub volume: String,
    pub mse: f64,
    pub psnr: Psnr,
    pub ssim: f64,
    pub sigma: f64,
    pub runtime_s: f64,
}

/// Per-volume rows plus mean/std aggregates.
#[derive(Clone, Debug, Default)]
pub struct MetricsReport {
    pub rows: Vec<VolumeMetrics>,
}

impl MetricsReport {
    pub fn push(&mut self, row: VolumeMetrics) {
        self.rows.push(row);
    }

    /// Mean and standard deviation of a field over rows, 64-bit accumulation.
    /// Infinite PSNR rows are excluded from the PSNR aggregate.
    pub fn aggregate(&self, field: impl Fn(&VolumeMetrics) -> f64) -> (f64, f64) {
        let values: Vec<f64> = self
            .rows
            .iter()
            .map(&field)
            .filter(|v| v.is_finite())
            .collect();
        if values.is_empty() {
            return (0.0, 0.0);
        }
        let n = values.len() as f64;
        let mut mean = 0.0;
        for v in &values {
            mean += v;
        }
        mean /= n;
        let mut var = 0.0;
        for v in &values {
            var += (v - mean) * (v - mean);
        }
        (mean, (var / n).sqrt())
    }

    /// CSV with header, one row per volume, then `mean` and `std` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("volume,mse,psnr_db,ssim,sigma,runtime_s\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.volume, r.mse, r.psnr, r.ssim, r.sigma, r.runtime_s
            ));
        }
        let (mse_m, mse_s) = self.aggregate(|r| r.mse);
        let (psnr_m, psnr_s) = self.aggregate(|r| r.psnr.db());
        let (ssim_m, ssim_s) = self.aggregate(|r| r.ssim);
        let (sig_m, sig_s) = self.aggregate(|r| r.sigma);
        let (rt_m, rt_s) = self.aggregate(|r| r.runtime_s);
        s.push_str(&format!(
            "mean,{},{},{},{},{}\n",
            mse_m, psnr_m, ssim_m, sig_m, rt_m
        ));
        s.push_str(&format!(
            "std,{},{},{},{},{}\n",
            mse_s, psnr_s, ssim_s, sig_s, rt_s
        ));
        s
    }

    /// Parses a CSV produced by [`to_csv`], skipping aggregate rows.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                if line != "volume,mse,psnr_db,ssim,sigma,runtime_s" {
                    return Err(Error::Format("unexpected metrics CSV header".into()));
                }
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 6 {
                return Err(Error::Format(format!("bad metrics row: {}", line)));
            }
            if parts[0] == "mean" || parts[0] == "std" {
                continue;
            }
            let num = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::Format(format!("bad number {}", s)))
            };
            let psnr = if parts[2] == "inf" {
                Psnr::Infinite
            } else {
                Psnr::Db(num(parts[2])?)
            };
            rows.push(VolumeMetrics {
                volume: parts[0].to_string(),
                mse: num(parts[1])?,
                psnr,
                ssim: num(parts[3])?,
                sigma: num(parts[4])?,
                runtime_s: num(parts[5])?,
            });
        }
        Ok(Self { rows })
    }
}
