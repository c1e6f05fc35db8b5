//! Multi-coil Cartesian encoding: sampling masks, simulated coil
//! sensitivities, and the forward operator (coil weighting, 2D FFT,
//! phase-encode undersampling) with its adjoint.
//!
//! Conventions: images are `[ny, nx]` with row index y; k-space is stored in
//! DFT order (DC at row 0). Mask line indices are *centered* k-space
//! coordinates — the DC line sits at pattern row `ny/2` — and are mapped to
//! DFT rows with [`centered_index`]. Frequency encodes (columns, kx) are
//! always fully sampled.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fft::{fft2, ifft2};
use crate::scalar::Scalar;
use crate::tensor::{ComplexTensor, RealTensor};

/// Maps between centered k-space line indices and DFT row order.
/// For even `n` the mapping is its own inverse.
pub fn centered_index(i: usize, n: usize) -> usize {
    (i + n / 2) % n
}

/// Complex image series over `(t, y, x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CineVolume<T> {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    /// Shape `[nt, ny, nx]`.
    pub data: ComplexTensor<T>,
}

impl<T: Scalar> CineVolume<T> {
    pub fn zeros(nx: usize, ny: usize, nt: usize) -> Self {
        Self {
            nx,
            ny,
            nt,
            data: ComplexTensor::zeros(&[nt, ny, nx]),
        }
    }

    pub fn frame(&self, t: usize) -> ComplexTensor<T> {
        let plane = self.ny * self.nx;
        ComplexTensor::from_fn(&[self.ny, self.nx], |i| self.data.at(t * plane + i))
    }

    pub fn set_frame(&mut self, t: usize, frame: &ComplexTensor<T>) {
        let plane = self.ny * self.nx;
        for i in 0..plane {
            self.data.set(t * plane + i, frame.at(i));
        }
    }

    pub fn from_frames(nx: usize, ny: usize, frames: &[ComplexTensor<T>]) -> Self {
        let mut vol = Self::zeros(nx, ny, frames.len());
        for (t, f) in frames.iter().enumerate() {
            vol.set_frame(t, f);
        }
        vol
    }
}

/// Multi-coil k-space over `(t, c, ky, kx)`, DFT row order.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiCoilKSpace<T> {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub nc: usize,
    /// Shape `[nt, nc, ny, nx]`.
    pub data: ComplexTensor<T>,
}

impl<T: Scalar> MultiCoilKSpace<T> {
    pub fn zeros(nx: usize, ny: usize, nt: usize, nc: usize) -> Self {
        Self {
            nx,
            ny,
            nt,
            nc,
            data: ComplexTensor::zeros(&[nt, nc, ny, nx]),
        }
    }

    pub fn coil(&self, t: usize, c: usize) -> ComplexTensor<T> {
        let plane = self.ny * self.nx;
        let base = (t * self.nc + c) * plane;
        ComplexTensor::from_fn(&[self.ny, self.nx], |i| self.data.at(base + i))
    }

    pub fn set_coil(&mut self, t: usize, c: usize, k: &ComplexTensor<T>) {
        let plane = self.ny * self.nx;
        let base = (t * self.nc + c) * plane;
        for i in 0..plane {
            self.data.set(base + i, k.at(i));
        }
    }
}

/// Binary phase-encode sampling pattern over `(ky, t)`; kx fully sampled.
/// Line indices are centered (DC line at `ny/2`).
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMask {
    pub ny: usize,
    pub nt: usize,
    /// Row-major `[ny, nt]`, entries 0/1.
    pub pattern: Vec<u8>,
    pub center_lines: usize,
    /// Nominal acceleration.
    pub acceleration: usize,
}

impl SamplingMask {
    pub fn line_sampled(&self, ky: usize, t: usize) -> bool {
        self.pattern[ky * self.nt + t] != 0
    }

    /// All-ones mask (R = 1).
    pub fn full(ny: usize, nt: usize) -> Self {
        Self {
            ny,
            nt,
            pattern: vec![1; ny * nt],
            center_lines: ny,
            acceleration: 1,
        }
    }

    /// Sampled lines of one frame, in centered coordinates.
    pub fn lines(&self, t: usize) -> Vec<usize> {
        (0..self.ny).filter(|&ky| self.line_sampled(ky, t)).collect()
    }

    pub fn lines_per_frame(&self, t: usize) -> usize {
        self.lines(t).len()
    }

    /// Times each line is sampled across all frames.
    pub fn line_counts(&self) -> Vec<usize> {
        (0..self.ny)
            .map(|ky| (0..self.nt).filter(|&t| self.line_sampled(ky, t)).count())
            .collect()
    }

    /// Mask plane `[ny, nx]` for one frame in DFT row order, for direct
    /// multiplication against k-space.
    pub fn dft_plane<T: Scalar>(&self, t: usize, nx: usize) -> RealTensor<T> {
        RealTensor::from_fn(&[self.ny, nx], |i| {
            let row = i / nx;
            let ky = centered_index(row, self.ny);
            if self.line_sampled(ky, t) {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    /// Extracts a single frame as an nt=1 mask.
    pub fn frame_mask(&self, t: usize) -> SamplingMask {
        SamplingMask {
            ny: self.ny,
            nt: 1,
            pattern: (0..self.ny)
                .map(|ky| self.pattern[ky * self.nt + t])
                .collect(),
            center_lines: self.center_lines,
            acceleration: self.acceleration,
        }
    }
}

fn center_band(ny: usize, center_lines: usize) -> std::ops::Range<usize> {
    ny / 2 - center_lines / 2..ny / 2 + center_lines.div_ceil(2)
}

fn check_mask_config(r: usize, ny: usize, center_lines: usize) -> Result<()> {
    if r < 1 {
        return Err(Error::Config("acceleration must be >= 1".into()));
    }
    if ny % r != 0 {
        return Err(Error::Config(format!(
            "ny = {} is not divisible by R = {}",
            ny, r
        )));
    }
    if center_lines % 2 != 0 {
        return Err(Error::Config(format!(
            "center_lines = {} must be even",
            center_lines
        )));
    }
    if center_lines > ny {
        return Err(Error::Config(format!(
            "center_lines = {} exceeds ny = {}",
            center_lines, ny
        )));
    }
    Ok(())
}

/// Uniform time-interleaved lattice: frame `t` samples lines
/// `{l : l mod R == t mod R}` plus the central band, so any `R` consecutive
/// frames jointly cover every line.
pub fn make_uniform_interleaved_mask(
    r: usize,
    ny: usize,
    nt: usize,
    center_lines: usize,
) -> Result<SamplingMask> {
    check_mask_config(r, ny, center_lines)?;
    let band = center_band(ny, center_lines);
    let mut pattern = vec![0u8; ny * nt];
    for t in 0..nt {
        for ky in 0..ny {
            if ky % r == t % r || band.contains(&ky) {
                pattern[ky * nt + t] = 1;
            }
        }
    }
    Ok(SamplingMask {
        ny,
        nt,
        pattern,
        center_lines,
        acceleration: r,
    })
}

/// Variable-density random mask: each frame samples exactly `ny/R` lines —
/// the central band plus lines drawn without replacement with probability
/// proportional to a zero-mean Gaussian over the centered line offset.
pub fn make_gaussian_random_mask(
    r: usize,
    ny: usize,
    nt: usize,
    center_lines: usize,
    seed: u64,
) -> Result<SamplingMask> {
    check_mask_config(r, ny, center_lines)?;
    let budget = ny / r;
    if budget < center_lines {
        return Err(Error::Config(format!(
            "per-frame budget {} cannot hold {} central lines",
            budget, center_lines
        )));
    }
    let band = center_band(ny, center_lines);
    let sigma = ny as f64 / 4.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pattern = vec![0u8; ny * nt];
    for t in 0..nt {
        for ky in band.clone() {
            pattern[ky * nt + t] = 1;
        }
        let mut candidates: Vec<usize> = (0..ny).filter(|ky| !band.contains(ky)).collect();
        let mut weights: Vec<f64> = candidates
            .iter()
            .map(|&ky| {
                let f = ky as f64 - ny as f64 / 2.0;
                (-0.5 * (f / sigma).powi(2)).exp()
            })
            .collect();
        for _ in 0..budget - center_lines {
            let total: f64 = weights.iter().sum();
            let mut u = rng.gen::<f64>() * total;
            let mut pick = candidates.len() - 1;
            for (i, &w) in weights.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pattern[candidates[pick] * nt + t] = 1;
            candidates.remove(pick);
            weights.remove(pick);
        }
    }
    Ok(SamplingMask {
        ny,
        nt,
        pattern,
        center_lines,
        acceleration: r,
    })
}

/// Complex coil sensitivity maps over `(x, y, coil)`, sum-of-squares
/// normalized so the adjoint of the fully sampled operator is the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilSensitivities<T> {
    pub nx: usize,
    pub ny: usize,
    pub nc: usize,
    /// Shape `[nc, ny, nx]`.
    pub maps: ComplexTensor<T>,
}

impl<T: Scalar> CoilSensitivities<T> {
    pub fn coil(&self, c: usize) -> ComplexTensor<T> {
        let plane = self.ny * self.nx;
        ComplexTensor::from_fn(&[self.ny, self.nx], |i| self.maps.at(c * plane + i))
    }

    /// Uniform maps: magnitude `1/sqrt(nc)` everywhere, zero phase.
    pub fn uniform(nx: usize, ny: usize, nc: usize) -> Self {
        let v = T::of_f64(1.0 / (nc as f64).sqrt());
        Self {
            nx,
            ny,
            nc,
            maps: ComplexTensor::from_fn(&[nc, ny, nx], |_| Complex::new(v, T::zero())),
        }
    }
}

/// Smooth synthetic coil maps: one Gaussian magnitude lobe per coil centered
/// on the FOV perimeter, a gentle linear phase ramp, then pixelwise
/// sum-of-squares normalization.
pub fn simulate_coil_sensitivities<T: Scalar>(
    nx: usize,
    ny: usize,
    nc: usize,
    seed: u64,
) -> CoilSensitivities<T> {
    assert!(nc >= 1, "need at least one coil");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Per-coil jitter keeps distinct seeds from producing identical arrays.
    let jitter: Vec<(f64, f64, f64)> = (0..nc)
        .map(|_| {
            (
                rng.gen::<f64>() * 0.2 - 0.1,
                rng.gen::<f64>() * 0.2 - 0.1,
                rng.gen::<f64>() * 0.4 - 0.2,
            )
        })
        .collect();

    let plane = ny * nx;
    let mut raw = vec![Complex::new(0.0f64, 0.0f64); nc * plane];
    let radius = 0.55;
    let width = 0.6 * nx.max(ny) as f64;
    for (c, &(jx, jy, ja)) in jitter.iter().enumerate() {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / nc as f64 + ja;
        let cx = nx as f64 / 2.0 + radius * nx as f64 * (angle.cos() + jx);
        let cy = ny as f64 / 2.0 + radius * ny as f64 * (angle.sin() + jy);
        // Small per-coil phase ramp across the FOV.
        let px = 0.5 * angle.cos() / nx as f64;
        let py = 0.5 * angle.sin() / ny as f64;
        for y in 0..ny {
            for x in 0..nx {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let mag = (-d2 / (2.0 * width * width)).exp();
                let phase = 2.0 * std::f64::consts::PI * (px * x as f64 + py * y as f64);
                raw[c * plane + y * nx + x] = Complex::from_polar(mag, phase);
            }
        }
    }
    // Sum-of-squares normalization per pixel.
    for p in 0..plane {
        let norm: f64 = (0..nc).map(|c| raw[c * plane + p].norm_sqr()).sum();
        let s = norm.sqrt();
        for c in 0..nc {
            raw[c * plane + p] /= s;
        }
    }
    CoilSensitivities {
        nx,
        ny,
        nc,
        maps: ComplexTensor::from_fn(&[nc, ny, nx], |i| {
            Complex::new(T::of_f64(raw[i].re), T::of_f64(raw[i].im))
        }),
    }
}

/// Sampling mask plus coil maps: everything the encoding operator needs.
#[derive(Clone, Debug)]
pub struct EncodingConfig<T> {
    pub mask: SamplingMask,
    pub csm: CoilSensitivities<T>,
}

impl<T: Scalar> EncodingConfig<T> {
    pub fn new(mask: SamplingMask, csm: CoilSensitivities<T>) -> Result<Self> {
        if mask.ny != csm.ny {
            return Err(Error::Dimension(format!(
                "mask ny {} does not match csm ny {}",
                mask.ny, csm.ny
            )));
        }
        Ok(Self { mask, csm })
    }
}

fn check_volume<T: Scalar>(d: &CineVolume<T>, cfg: &EncodingConfig<T>) -> Result<()> {
    if d.nx != cfg.csm.nx || d.ny != cfg.csm.ny {
        return Err(Error::Dimension(format!(
            "volume {}x{} does not match csm {}x{}",
            d.nx, d.ny, cfg.csm.nx, cfg.csm.ny
        )));
    }
    if d.nt != cfg.mask.nt {
        return Err(Error::Dimension(format!(
            "volume nt {} does not match mask nt {}",
            d.nt, cfg.mask.nt
        )));
    }
    Ok(())
}

fn zero_unsampled<T: Scalar>(k: &mut ComplexTensor<T>, mask: &SamplingMask, t: usize, nx: usize) {
    let ny = mask.ny;
    for row in 0..ny {
        let ky = centered_index(row, ny);
        if !mask.line_sampled(ky, t) {
            for x in 0..nx {
                k.set(row * nx + x, Complex::new(T::zero(), T::zero()));
            }
        }
    }
}

/// Forward model: per frame and coil, weight by the sensitivity map,
/// transform to k-space, zero the unsampled phase encodes.
pub fn encode<T: Scalar>(d: &CineVolume<T>, cfg: &EncodingConfig<T>) -> Result<MultiCoilKSpace<T>> {
    check_volume(d, cfg)?;
    let (nx, ny, nt, nc) = (d.nx, d.ny, d.nt, cfg.csm.nc);
    let mut out = MultiCoilKSpace::zeros(nx, ny, nt, nc);
    for t in 0..nt {
        let frame = d.frame(t);
        for c in 0..nc {
            let weighted = frame.mul(&cfg.csm.coil(c))?;
            let mut k = fft2(&weighted)?;
            zero_unsampled(&mut k, &cfg.mask, t, nx);
            out.set_coil(t, c, &k);
        }
    }
    Ok(out)
}

/// Adjoint of [`encode`]: mask, inverse transform, combine with conjugate
/// sensitivities, sum over coils.
pub fn adjoint_encode<T: Scalar>(
    m: &MultiCoilKSpace<T>,
    cfg: &EncodingConfig<T>,
) -> Result<CineVolume<T>> {
    if m.nx != cfg.csm.nx || m.ny != cfg.csm.ny || m.nc != cfg.csm.nc {
        return Err(Error::Dimension(format!(
            "k-space {}x{}x{} coils does not match csm {}x{}x{}",
            m.nx, m.ny, m.nc, cfg.csm.nx, cfg.csm.ny, cfg.csm.nc
        )));
    }
    if m.nt != cfg.mask.nt {
        return Err(Error::Dimension(format!(
            "k-space nt {} does not match mask nt {}",
            m.nt, cfg.mask.nt
        )));
    }
    let (nx, ny, nt, nc) = (m.nx, m.ny, m.nt, m.nc);
    let mut out = CineVolume::zeros(nx, ny, nt);
    for t in 0..nt {
        let mut acc = ComplexTensor::zeros(&[ny, nx]);
        for c in 0..nc {
            let mut k = m.coil(t, c);
            zero_unsampled(&mut k, &cfg.mask, t, nx);
            let img = ifft2(&k)?;
            let combined = img.mul(&cfg.csm.coil(c).conj())?;
            acc = acc.add(&combined)?;
        }
        out.set_frame(t, &acc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_volume(nx: usize, ny: usize, nt: usize, seed: u64) -> CineVolume<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CineVolume {
            nx,
            ny,
            nt,
            data: ComplexTensor::from_fn(&[nt, ny, nx], |_| {
                Complex::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            }),
        }
    }

    fn rand_kspace(nx: usize, ny: usize, nt: usize, nc: usize, seed: u64) -> MultiCoilKSpace<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MultiCoilKSpace {
            nx,
            ny,
            nt,
            nc,
            data: ComplexTensor::from_fn(&[nt, nc, ny, nx], |_| {
                Complex::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            }),
        }
    }

    #[test]
    fn uniform_mask_r1_is_all_ones() {
        let m = make_uniform_interleaved_mask(1, 8, 3, 0).unwrap();
        assert!(m.pattern.iter().all(|&b| b == 1));
    }

    #[test]
    fn uniform_mask_r5_unions_cover_everything() {
        let m = make_uniform_interleaved_mask(5, 10, 5, 0).unwrap();
        for ky in 0..10 {
            let count: usize = (0..5).filter(|&t| m.line_sampled(ky, t)).count();
            assert_eq!(count, 1, "line {} sampled {} times in 5 frames", ky, count);
        }
        let mut union = vec![false; 10];
        for t in 0..5 {
            for ky in m.lines(t) {
                union[ky] = true;
            }
        }
        assert!(union.iter().all(|&b| b));
    }

    #[test]
    fn uniform_mask_line_count_matches_enumeration() {
        let (r, ny, nt, c) = (4usize, 32usize, 8usize, 4usize);
        let m = make_uniform_interleaved_mask(r, ny, nt, c).unwrap();
        for t in 0..nt {
            // lattice lines plus central lines that are not already on it
            let band = ny / 2 - c / 2..ny / 2 + c / 2;
            let lattice = (0..ny).filter(|ky| ky % r == t % r);
            let extra = band.clone().filter(|ky| ky % r != t % r);
            let expect = lattice.count() + extra.count();
            assert_eq!(m.lines_per_frame(t), expect);
        }
    }

    #[test]
    fn uniform_mask_rejects_bad_config() {
        assert!(matches!(
            make_uniform_interleaved_mask(3, 32, 4, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn uniform_mask_consecutive_frame_coverage_all_offsets() {
        for &r in &[2usize, 4, 5, 8] {
            let ny = 40; // divisible by every tested acceleration
            let nt = 3 * r;
            let m = make_uniform_interleaved_mask(r, ny, nt, 0).unwrap();
            for start in 0..=nt - r {
                let mut covered = vec![false; ny];
                for t in start..start + r {
                    for ky in m.lines(t) {
                        covered[ky] = true;
                    }
                }
                assert!(
                    covered.iter().all(|&b| b),
                    "R={} start={} leaves gaps",
                    r,
                    start
                );
            }
        }
    }

    #[test]
    fn gaussian_mask_is_deterministic_and_budgeted() {
        let a = make_gaussian_random_mask(4, 32, 6, 4, 99).unwrap();
        let b = make_gaussian_random_mask(4, 32, 6, 4, 99).unwrap();
        assert_eq!(a, b);
        for t in 0..6 {
            assert_eq!(a.lines_per_frame(t), 8);
        }
        let c = make_gaussian_random_mask(4, 32, 6, 4, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_mask_rejects_budget_below_center() {
        assert!(matches!(
            make_gaussian_random_mask(8, 32, 4, 6, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn gaussian_mask_prefers_center() {
        let (ny, trials) = (32usize, 2000usize);
        let mut freq = vec![0usize; ny];
        for seed in 0..trials {
            let m = make_gaussian_random_mask(4, ny, 1, 4, seed as u64).unwrap();
            for ky in m.lines(0) {
                freq[ky] += 1;
            }
        }
        // central band always sampled
        for ky in 14..18 {
            assert_eq!(freq[ky], trials);
        }
        // near-center off-band lines beat edge lines
        let near = freq[13].max(freq[18]) as f64;
        let edge = freq[0].max(freq[31]) as f64;
        assert!(
            near > edge,
            "near-center {} should exceed edge {}",
            near,
            edge
        );
        assert!((freq[0] as f64) < trials as f64);
    }

    #[test]
    fn csm_single_coil_has_unit_magnitude() {
        let csm = simulate_coil_sensitivities::<f64>(8, 8, 1, 3);
        for i in 0..64 {
            assert!((csm.maps.at(i).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn csm_sum_of_squares_is_one() {
        let csm = simulate_coil_sensitivities::<f64>(16, 16, 4, 7);
        let plane = 16 * 16;
        for p in 0..plane {
            let s: f64 = (0..4).map(|c| csm.maps.at(c * plane + p).norm_sqr()).sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn csm_reproducible_bit_exactly() {
        let a = simulate_coil_sensitivities::<f64>(16, 16, 4, 42);
        let b = simulate_coil_sensitivities::<f64>(16, 16, 4, 42);
        assert_eq!(a, b);
    }

    #[test]
    fn full_mask_single_uniform_coil_encode_is_fft() {
        let d = rand_volume(8, 8, 2, 1);
        let cfg = EncodingConfig::new(
            SamplingMask::full(8, 2),
            CoilSensitivities::uniform(8, 8, 1),
        )
        .unwrap();
        let m = encode(&d, &cfg).unwrap();
        for t in 0..2 {
            let k = fft2(&d.frame(t)).unwrap();
            let coil = m.coil(t, 0);
            for i in 0..64 {
                assert!((coil.at(i) - k.at(i)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn encode_zero_image_gives_zero_kspace() {
        let d = CineVolume::<f64>::zeros(8, 8, 2);
        let csm = simulate_coil_sensitivities(8, 8, 3, 5);
        let mask = make_uniform_interleaved_mask(2, 8, 2, 2).unwrap();
        let cfg = EncodingConfig::new(mask, csm).unwrap();
        let m = encode(&d, &cfg).unwrap();
        assert_eq!(m.data.norm_sqr(), 0.0);
    }

    #[test]
    fn encode_zeroes_unsampled_rows_exactly() {
        let d = rand_volume(8, 8, 4, 2);
        let csm = simulate_coil_sensitivities(8, 8, 2, 6);
        let mask = make_uniform_interleaved_mask(4, 8, 4, 0).unwrap();
        let cfg = EncodingConfig::new(mask.clone(), csm).unwrap();
        let m = encode(&d, &cfg).unwrap();
        for t in 0..4 {
            for c in 0..2 {
                let k = m.coil(t, c);
                for row in 0..8 {
                    let ky = centered_index(row, 8);
                    if !mask.line_sampled(ky, t) {
                        for x in 0..8 {
                            assert_eq!(k.at(row * 8 + x).norm(), 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn adjoint_of_full_encode_is_identity() {
        let d = rand_volume(16, 16, 2, 3);
        let csm = simulate_coil_sensitivities(16, 16, 4, 8);
        let cfg = EncodingConfig::new(SamplingMask::full(16, 2), csm).unwrap();
        let m = encode(&d, &cfg).unwrap();
        let back = adjoint_encode(&m, &cfg).unwrap();
        for i in 0..d.data.len() {
            assert!((back.data.at(i) - d.data.at(i)).norm() < 1e-10);
        }
    }

    #[test]
    fn adjoint_of_zero_kspace_is_zero() {
        let m = MultiCoilKSpace::<f64>::zeros(8, 8, 2, 2);
        let csm = simulate_coil_sensitivities(8, 8, 2, 1);
        let mask = make_uniform_interleaved_mask(2, 8, 2, 0).unwrap();
        let cfg = EncodingConfig::new(mask, csm).unwrap();
        let out = adjoint_encode(&m, &cfg).unwrap();
        assert_eq!(out.data.norm_sqr(), 0.0);
    }

    #[test]
    fn adjoint_matches_per_coil_loop_oracle() {
        let m = rand_kspace(8, 8, 2, 3, 4);
        let csm = simulate_coil_sensitivities(8, 8, 3, 9);
        let mask = make_uniform_interleaved_mask(2, 8, 2, 2).unwrap();
        let cfg = EncodingConfig::new(mask.clone(), csm.clone()).unwrap();
        let out = adjoint_encode(&m, &cfg).unwrap();
        for t in 0..2 {
            let mut expect = ComplexTensor::<f64>::zeros(&[8, 8]);
            for c in 0..3 {
                let mut k = m.coil(t, c);
                for row in 0..8 {
                    let ky = centered_index(row, 8);
                    if !mask.line_sampled(ky, t) {
                        for x in 0..8 {
                            k.set(row * 8 + x, Complex::new(0.0, 0.0));
                        }
                    }
                }
                let img = ifft2(&k).unwrap();
                for i in 0..64 {
                    let v = expect.at(i) + csm.coil(c).at(i).conj() * img.at(i);
                    expect.set(i, v);
                }
            }
            let frame = out.frame(t);
            for i in 0..64 {
                assert!((frame.at(i) - expect.at(i)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn adjointness_inner_products_match() {
        for (i, &(nc, uniform)) in [(1usize, true), (4, false), (2, true), (3, false)]
            .iter()
            .enumerate()
        {
            let seed = i as u64 * 13 + 1;
            let (nx, ny, nt) = (8, 8, 4);
            let mask = if uniform {
                make_uniform_interleaved_mask(4, ny, nt, 2).unwrap()
            } else {
                make_gaussian_random_mask(4, ny, nt, 2, seed).unwrap()
            };
            let csm = simulate_coil_sensitivities(nx, ny, nc, seed + 1);
            let cfg = EncodingConfig::new(mask, csm).unwrap();
            let x = rand_volume(nx, ny, nt, seed + 2);
            let y = rand_kspace(nx, ny, nt, nc, seed + 3);
            let ex = encode(&x, &cfg).unwrap();
            let ehy = adjoint_encode(&y, &cfg).unwrap();
            let lhs = ex.data.inner(&y.data).unwrap();
            let rhs = x.data.inner(&ehy.data).unwrap();
            let scale = ex.data.norm_sqr().sqrt() * y.data.norm_sqr().sqrt();
            assert!(
                (lhs - rhs).norm() / scale < 1e-12,
                "adjointness violated: {} vs {}",
                lhs,
                rhs
            );
        }
    }

    #[test]
    fn masks_are_idempotent_under_encode() {
        // re-applying the mask after encode changes nothing
        let d = rand_volume(8, 8, 2, 10);
        let csm = simulate_coil_sensitivities(8, 8, 2, 11);
        let mask = make_gaussian_random_mask(2, 8, 2, 2, 12).unwrap();
        let cfg = EncodingConfig::new(mask.clone(), csm).unwrap();
        let once = encode(&d, &cfg).unwrap();
        let mut twice = once.clone();
        for t in 0..2 {
            for c in 0..2 {
                let mut k = twice.coil(t, c);
                zero_unsampled(&mut k, &mask, t, 8);
                twice.set_coil(t, c, &k);
            }
        }
        assert_eq!(once, twice);
    }

    #[test]
    fn encode_is_linear() {
        let a = rand_volume(8, 8, 2, 20);
        let b = rand_volume(8, 8, 2, 21);
        let csm = simulate_coil_sensitivities(8, 8, 2, 22);
        let mask = make_uniform_interleaved_mask(2, 8, 2, 2).unwrap();
        let cfg = EncodingConfig::new(mask, csm).unwrap();
        let mut sum = a.clone();
        sum.data = a.data.scale(1.5).add(&b.data.scale(-0.25)).unwrap();
        let lhs = encode(&sum, &cfg).unwrap();
        let rhs = encode(&a, &cfg)
            .unwrap()
            .data
            .scale(1.5)
            .add(&encode(&b, &cfg).unwrap().data.scale(-0.25))
            .unwrap();
        for i in 0..lhs.data.len() {
            assert!((lhs.data.at(i) - rhs.at(i)).norm() < 1e-12);
        }
    }
}
