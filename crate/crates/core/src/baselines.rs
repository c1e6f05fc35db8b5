//! Classical reconstruction references: zero-filled adjoint and a low-rank
//! plus sparse decomposition solved by proximal gradient descent.
//!
//! The series is split as `d = L + S`. The low-rank part is penalized by the
//! nuclear norm of its space-time Casorati matrix (singular-value soft
//! thresholding, SVD via one-sided Jacobi on the small matrix); the sparse
//! part by an L1 penalty in the temporal Fourier domain. With the encoding
//! operator normalized, a step of 0.5 guarantees a non-increasing objective;
//! a backtracking guard halves the step if rounding ever violates that.

use num_complex::Complex;

use crate::encoding::{adjoint_encode, encode, CineVolume, EncodingConfig, MultiCoilKSpace};
use crate::error::{Error, Result};
use crate::fft::fft1;
use crate::scalar::Scalar;
use crate::tensor::ComplexTensor;

/// Zero-filled reconstruction: the adjoint of the encoding operator.
pub fn zero_filled<T: Scalar>(
    m: &MultiCoilKSpace<T>,
    cfg: &EncodingConfig<T>,
) -> Result<CineVolume<T>> {
    adjoint_encode(m, cfg)
}

/// Low-rank plus sparse solver settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LpsConfig {
    /// Singular-value soft threshold on the Casorati matrix of L.
    pub lambda_l: f64,
    /// L1 soft threshold on the temporal Fourier transform of S.
    /// `f64::INFINITY` suppresses S entirely.
    pub lambda_s: f64,
    pub iters: usize,
    /// Gradient step; 0.5 is safe for the normalized operator.
    pub step: f64,
}

impl LpsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_l <= 0.0 || self.lambda_s <= 0.0 {
            return Err(Error::Config("thresholds must be positive".into()));
        }
        if self.iters < 1 {
            return Err(Error::Config("iters must be >= 1".into()));
        }
        if self.step <= 0.0 {
            return Err(Error::Config("step must be positive".into()));
        }
        Ok(())
    }
}

impl Default for LpsConfig {
    fn default() -> Self {
        Self {
            lambda_l: 0.01,
            lambda_s: 0.01,
            iters: 50,
            step: 0.5,
        }
    }
}

// ---------------------------------------------------------------------------
// small complex matrix helpers (column-major storage)

/// Column-major complex matrix with few columns (the Casorati matrix).
#[derive(Clone, Debug)]
pub(crate) struct ColMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex<f64>>,
}

impl ColMatrix {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex::new(0.0, 0.0); rows * cols],
        }
    }

    fn col(&self, c: usize) -> &[Complex<f64>] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    fn col_mut(&mut self, c: usize) -> &mut [Complex<f64>] {
        &mut self.data[c * self.rows..(c + 1) * self.rows]
    }

    fn col_dot(&self, p: usize, q: usize) -> Complex<f64> {
        let (a, b) = (self.col(p), self.col(q));
        let mut acc = Complex::new(0.0, 0.0);
        for i in 0..self.rows {
            acc += a[i].conj() * b[i];
        }
        acc
    }

    fn col_norm_sqr(&self, c: usize) -> f64 {
        self.col(c).iter().map(|z| z.norm_sqr()).sum()
    }
}

/// One-sided Jacobi: rotates column pairs of `a` until they are mutually
/// orthogonal. Returns the right singular vectors V (cols x cols); on exit
/// the columns of `a` are `sigma_i * u_i`.
pub(crate) fn one_sided_jacobi(a: &mut ColMatrix) -> ColMatrix {
    let n = a.cols;
    let mut v = ColMatrix::zeros(n, n);
    for i in 0..n {
        v.col_mut(i)[i] = Complex::new(1.0, 0.0);
    }
    let max_sweeps = 60;
    let tol = 1e-14;
    for _ in 0..max_sweeps {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let app = a.col_norm_sqr(p);
                let aqq = a.col_norm_sqr(q);
                let apq = a.col_dot(p, q);
                let mag = apq.norm();
                if mag <= tol * (app * aqq).sqrt().max(1e-300) {
                    continue;
                }
                off += mag;
                // phase-align column q, then a real Jacobi rotation
                let phase = apq / mag;
                let zeta = (aqq - app) / (2.0 * mag);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;

                for i in 0..a.rows {
                    let ap = a.data[p * a.rows + i];
                    let aq = a.data[q * a.rows + i] * phase.conj();
                    a.data[p * a.rows + i] = ap * c - aq * s;
                    a.data[q * a.rows + i] = ap * s + aq * c;
                }
                for i in 0..n {
                    let vp = v.data[p * n + i];
                    let vq = v.data[q * n + i] * phase.conj();
                    v.data[p * n + i] = vp * c - vq * s;
                    v.data[q * n + i] = vp * s + vq * c;
                }
            }
        }
        if off < tol {
            break;
        }
    }
    v
}

/// Singular values of a small matrix via one-sided Jacobi (descending order
/// is not guaranteed; callers sort if needed).
pub fn singular_values(rows: usize, cols: usize, data: &[Complex<f64>]) -> Vec<f64> {
    let mut m = ColMatrix {
        rows,
        cols,
        data: data.to_vec(),
    };
    let _ = one_sided_jacobi(&mut m);
    (0..cols).map(|c| m.col_norm_sqr(c).sqrt()).collect()
}

/// Soft-thresholds the singular values of a column-major matrix:
/// `sigma_i -> max(sigma_i - tau, 0)`.
pub fn singular_value_soft_threshold(
    rows: usize,
    cols: usize,
    data: &[Complex<f64>],
    tau: f64,
) -> Vec<Complex<f64>> {
    let mut b = ColMatrix {
        rows,
        cols,
        data: data.to_vec(),
    };
    let v = one_sided_jacobi(&mut b);
    // b = U * Sigma (columns sigma_i u_i), v = V; rebuild with shrunk sigma
    let mut shrink = vec![0.0f64; cols];
    for c in 0..cols {
        let sigma = b.col_norm_sqr(c).sqrt();
        shrink[c] = if sigma > tau { (sigma - tau) / sigma } else { 0.0 };
    }
    let mut out = vec![Complex::new(0.0, 0.0); rows * cols];
    // out = B * diag(shrink) * V^H
    for j in 0..cols {
        for c in 0..cols {
            let w = v.data[c * cols + j].conj() * shrink[c];
            if w == Complex::new(0.0, 0.0) {
                continue;
            }
            let bcol = b.col(c);
            let ocol = &mut out[j * rows..(j + 1) * rows];
            for i in 0..rows {
                ocol[i] += bcol[i] * w;
            }
        }
    }
    out
}

fn casorati<T: Scalar>(vol: &CineVolume<T>) -> ColMatrix {
    let rows = vol.ny * vol.nx;
    let mut m = ColMatrix::zeros(rows, vol.nt);
    for t in 0..vol.nt {
        let col = m.col_mut(t);
        for i in 0..rows {
            let z = vol.data.at(t * rows + i);
            col[i] = Complex::new(z.re.as_f64(), z.im.as_f64());
        }
    }
    m
}

fn from_casorati<T: Scalar>(m: &ColMatrix, nx: usize, ny: usize) -> CineVolume<T> {
    let rows = ny * nx;
    let mut vol = CineVolume::zeros(nx, ny, m.cols);
    for t in 0..m.cols {
        let col = m.col(t);
        for i in 0..rows {
            vol.data.set(
                t * rows + i,
                Complex::new(T::of_f64(col[i].re), T::of_f64(col[i].im)),
            );
        }
    }
    vol
}

/// Proximal operator of the nuclear norm on the Casorati matrix.
fn prox_low_rank<T: Scalar>(vol: &CineVolume<T>, tau: f64) -> CineVolume<T> {
    let m = casorati(vol);
    let data = singular_value_soft_threshold(m.rows, m.cols, &m.data, tau);
    from_casorati(
        &ColMatrix {
            rows: m.rows,
            cols: m.cols,
            data,
        },
        vol.nx,
        vol.ny,
    )
}

fn temporal_fft<T: Scalar>(vol: &CineVolume<T>, inverse: bool) -> Result<CineVolume<T>> {
    let plane = vol.ny * vol.nx;
    let mut out = vol.clone();
    for p in 0..plane {
        let line = ComplexTensor::from_fn(&[vol.nt], |t| vol.data.at(t * plane + p));
        let transformed = fft1(&line, inverse)?;
        for t in 0..vol.nt {
            out.data.set(t * plane + p, transformed.at(t));
        }
    }
    Ok(out)
}

/// Complex soft threshold, magnitude shrinkage.
fn soft_threshold_complex<T: Scalar>(vol: &CineVolume<T>, tau: f64) -> CineVolume<T> {
    let mut out = vol.clone();
    for i in 0..vol.data.len() {
        let z = vol.data.at(i);
        let zf = Complex::new(z.re.as_f64(), z.im.as_f64());
        let mag = zf.norm();
        let shrunk = if mag > tau {
            zf * ((mag - tau) / mag)
        } else {
            Complex::new(0.0, 0.0)
        };
        out.data
            .set(i, Complex::new(T::of_f64(shrunk.re), T::of_f64(shrunk.im)));
    }
    out
}

/// Proximal operator of the temporal-Fourier L1 penalty.
fn prox_sparse<T: Scalar>(vol: &CineVolume<T>, tau: f64) -> Result<CineVolume<T>> {
    if tau.is_infinite() {
        return Ok(CineVolume::zeros(vol.nx, vol.ny, vol.nt));
    }
    let fs = temporal_fft(vol, false)?;
    let shrunk = soft_threshold_complex(&fs, tau);
    temporal_fft(&shrunk, true)
}

fn nuclear_norm<T: Scalar>(vol: &CineVolume<T>) -> f64 {
    let m = casorati(vol);
    singular_values(m.rows, m.cols, &m.data).iter().sum()
}

fn l1_temporal<T: Scalar>(vol: &CineVolume<T>) -> Result<f64> {
    let fs = temporal_fft(vol, false)?;
    let mut acc = 0.0;
    for i in 0..fs.data.len() {
        let z = fs.data.at(i);
        acc += (z.re.as_f64() * z.re.as_f64() + z.im.as_f64() * z.im.as_f64()).sqrt();
    }
    Ok(acc)
}

/// Composite objective: `0.5 ||E(L+S) - m||^2 + lambda_l ||L||_* +
/// lambda_s ||T S||_1`.
pub fn lps_objective<T: Scalar>(
    l: &CineVolume<T>,
    s: &CineVolume<T>,
    m: &MultiCoilKSpace<T>,
    enc: &EncodingConfig<T>,
    cfg: &LpsConfig,
) -> Result<f64> {
    let mut sum = l.clone();
    sum.data = l.data.add(&s.data)?;
    let r = encode(&sum, enc)?;
    let resid = r.data.sub(&m.data)?;
    let fidelity = 0.5 * resid.norm_sqr();
    let nuc = cfg.lambda_l * nuclear_norm(l);
    let sparse = if cfg.lambda_s.is_infinite() {
        0.0 // S is identically zero under an infinite threshold
    } else {
        cfg.lambda_s * l1_temporal(s)?
    };
    Ok(fidelity + nuc + sparse)
}

/// Result of an L+S run: the reconstruction, its parts, and the objective
/// trace (non-increasing).
pub struct LpsOutput<T> {
    pub recon: CineVolume<T>,
    pub low_rank: CineVolume<T>,
    pub sparse: CineVolume<T>,
    pub objective: Vec<f64>,
}

/// Proximal-gradient low-rank plus sparse reconstruction.
pub fn lps_recon<T: Scalar>(
    m: &MultiCoilKSpace<T>,
    enc: &EncodingConfig<T>,
    cfg: &LpsConfig,
) -> Result<LpsOutput<T>> {
    cfg.validate()?;
    if m.nt < 2 {
        return Err(Error::Contract(
            "low-rank plus sparse needs nt >= 2 frames".into(),
        ));
    }
    let zf = adjoint_encode(m, enc)?;
    let mut l = zf.clone();
    let mut s = CineVolume::zeros(m.nx, m.ny, m.nt);
    let mut objective = vec![lps_objective(&l, &s, m, enc, cfg)?];
    let mut step = cfg.step;

    for _ in 0..cfg.iters {
        let mut accepted = false;
        for _ in 0..20 {
            // gradient of the fidelity term at (L, S)
            let mut sum = l.clone();
            sum.data = l.data.add(&s.data)?;
            let resid_k = {
                let mut r = encode(&sum, enc)?;
                r.data = r.data.sub(&m.data)?;
                r
            };
            let grad = adjoint_encode(&resid_k, enc)?;

            let mut l_next = l.clone();
            l_next.data = l.data.sub(&grad.data.scale(T::of_f64(step)))?;
            let l_next = prox_low_rank(&l_next, step * cfg.lambda_l);

            let mut s_next = s.clone();
            s_next.data = s.data.sub(&grad.data.scale(T::of_f64(step)))?;
            let s_next = prox_sparse(&s_next, step * cfg.lambda_s)?;

            let obj = lps_objective(&l_next, &s_next, m, enc, cfg)?;
            let last = *objective.last().unwrap();
            if obj <= last + 1e-12 * last.abs().max(1.0) {
                l = l_next;
                s = s_next;
                objective.push(obj);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(Error::Numeric(
                "objective increased with backtracking exhausted".into(),
            ));
        }
    }

    let mut recon = l.clone();
    recon.data = l.data.add(&s.data)?;
    Ok(LpsOutput {
        recon,
        low_rank: l,
        sparse: s,
        objective,
    })
}
