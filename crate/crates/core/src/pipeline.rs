//! Unsupervised data preparation: a beating phantom stands in for scanner
//! data, time-interleaved undersampled frames are merged into fully encoded
//! reference k-space by count-normalized averaging, and training pairs are
//! produced by retrospectively undersampling that reference.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoding::{
    adjoint_encode, centered_index, make_gaussian_random_mask, make_uniform_interleaved_mask,
    CineVolume, CoilSensitivities, EncodingConfig, MultiCoilKSpace, SamplingMask,
};
use crate::error::{Error, Result};
use crate::io;
use crate::scalar::Scalar;
use crate::tensor::ComplexTensor;

/// Parameters of the synthetic cine phantom: a background ellipse and a
/// beating annulus whose outer radius follows `r0 + a*sin(2*pi*t/nt)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CinePhantom {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    /// Background ellipse semi-axes as a fraction of the FOV.
    pub ellipse_rx: f64,
    pub ellipse_ry: f64,
    pub ellipse_level: f64,
    /// Annulus center offset from the FOV center, in pixels.
    pub annulus_cx: f64,
    pub annulus_cy: f64,
    /// Base outer radius in pixels and beat amplitude in pixels.
    pub annulus_r0: f64,
    pub annulus_amp: f64,
    pub annulus_thickness: f64,
    pub annulus_level: f64,
    /// Intensity of the blood-pool disk inside the annulus.
    pub pool_level: f64,
    pub seed: u64,
}

impl CinePhantom {
    /// Desk-scale defaults for a given grid.
    pub fn desk(nx: usize, ny: usize, nt: usize, seed: u64) -> Self {
        Self {
            nx,
            ny,
            nt,
            ellipse_rx: 0.42,
            ellipse_ry: 0.38,
            ellipse_level: 0.45,
            annulus_cx: 0.0,
            annulus_cy: 0.0,
            annulus_r0: 0.22 * nx as f64,
            annulus_amp: 0.03 * nx as f64,
            annulus_thickness: 0.10 * nx as f64,
            annulus_level: 0.95,
            pool_level: 0.20,
            seed,
        }
    }

    /// Outer annulus radius at frame `t`.
    pub fn radius_at(&self, t: usize) -> f64 {
        self.annulus_r0
            + self.annulus_amp * (2.0 * std::f64::consts::PI * t as f64 / self.nt as f64).sin()
    }
}

/// Renders the phantom: magnitude from the geometric primitives, a smooth
/// random phase fixed over time, deterministic per seed.
pub fn generate_phantom<T: Scalar>(p: &CinePhantom) -> CineVolume<T> {
    let (nx, ny, nt) = (p.nx, p.ny, p.nt);
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    // Low-frequency phase field from three seeded sinusoids.
    let coefs: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * std::f64::consts::PI,
            )
        })
        .collect();
    // Background phase stays gentle: it models field inhomogeneity, which is
    // protocol-stable, not a fresh high-contrast pattern per subject.
    let phase_at = |x: f64, y: f64| -> f64 {
        let mut ph = 0.0;
        for &(ax, ay, off) in &coefs {
            ph += 0.12
                * (2.0 * std::f64::consts::PI * (ax * x / nx as f64 + ay * y / ny as f64) + off)
                    .sin();
        }
        ph
    };

    let (cx, cy) = (nx as f64 / 2.0, ny as f64 / 2.0);
    let mut vol = CineVolume::zeros(nx, ny, nt);
    for t in 0..nt {
        let r_out = p.radius_at(t);
        let r_in = (r_out - p.annulus_thickness).max(0.0);
        let mut frame = ComplexTensor::<T>::zeros(&[ny, nx]);
        for y in 0..ny {
            for x in 0..nx {
                let fx = x as f64 - cx;
                let fy = y as f64 - cy;
                let mut mag = 0.0;
                let e = (fx / (p.ellipse_rx * nx as f64)).powi(2)
                    + (fy / (p.ellipse_ry * ny as f64)).powi(2);
                if e <= 1.0 {
                    mag = p.ellipse_level;
                }
                let ax = fx - p.annulus_cx;
                let ay = fy - p.annulus_cy;
                let r = (ax * ax + ay * ay).sqrt();
                if r <= r_out {
                    mag = if r >= r_in { p.annulus_level } else { p.pool_level };
                }
                let mag = mag.clamp(0.0, 1.0);
                let z = Complex::from_polar(mag, phase_at(x as f64, y as f64));
                frame.set(y * nx + x, Complex::new(T::of_f64(z.re), T::of_f64(z.im)));
            }
        }
        vol.set_frame(t, &frame);
    }
    vol
}

/// Averages interleaved frames into one fully encoded frame: each line is
/// the sum over frames that sampled it, divided by that count. Every line
/// must be covered by at least one frame.
pub fn merge_frames<T: Scalar>(
    m: &MultiCoilKSpace<T>,
    mask: &SamplingMask,
) -> Result<MultiCoilKSpace<T>> {
    if mask.ny != m.ny || mask.nt != m.nt {
        return Err(Error::Dimension(format!(
            "mask {}x{} does not match k-space ny {} nt {}",
            mask.ny, mask.nt, m.ny, m.nt
        )));
    }
    let counts = mask.line_counts();
    let missing: Vec<usize> = (0..m.ny).filter(|&ky| counts[ky] == 0).collect();
    if !missing.is_empty() {
        return Err(Error::Coverage { missing });
    }

    let (nx, ny, nt, nc) = (m.nx, m.ny, m.nt, m.nc);
    let mut out = MultiCoilKSpace::zeros(nx, ny, 1, nc);
    for c in 0..nc {
        let mut acc = ComplexTensor::<T>::zeros(&[ny, nx]);
        for t in 0..nt {
            let k = m.coil(t, c);
            for row in 0..ny {
                let ky = centered_index(row, ny);
                if mask.line_sampled(ky, t) {
                    for x in 0..nx {
                        let v = acc.at(row * nx + x) + k.at(row * nx + x);
                        acc.set(row * nx + x, v);
                    }
                }
            }
        }
        for row in 0..ny {
            let ky = centered_index(row, ny);
            let inv = T::of_f64(1.0 / counts[ky] as f64);
            for x in 0..nx {
                let v = acc.at(row * nx + x) * inv;
                acc.set(row * nx + x, v);
            }
        }
        out.set_coil(0, c, &acc);
    }
    Ok(out)
}

/// Which retrospective pattern to draw per training pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskSpec {
    /// Uniform lattice with a random frame offset per draw.
    Uniform { r: usize, center_lines: usize },
    /// Gaussian variable density per draw.
    Gaussian { r: usize, center_lines: usize },
}

impl MaskSpec {
    pub fn pattern_name(&self) -> &'static str {
        match self {
            MaskSpec::Uniform { .. } => "uniform",
            MaskSpec::Gaussian { .. } => "gaussian",
        }
    }

    /// Draws one single-frame mask; deterministic per seed.
    pub fn draw(&self, ny: usize, seed: u64) -> Result<SamplingMask> {
        match *self {
            MaskSpec::Uniform { r, center_lines } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let offset = rng.gen_range(0..r);
                let full = make_uniform_interleaved_mask(r, ny, r, center_lines)?;
                Ok(full.frame_mask(offset))
            }
            MaskSpec::Gaussian { r, center_lines } => {
                make_gaussian_random_mask(r, ny, 1, center_lines, seed)
            }
        }
    }
}

/// One training example: retrospectively undersampled k-space in, the
/// coil-combined fully encoded image out.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair<T> {
    /// Single merged frame, retrospectively undersampled (nt = 1).
    pub input: MultiCoilKSpace<T>,
    /// Retro mask used to undersample the input.
    pub mask: SamplingMask,
    /// Coil-combined fully encoded image, `[ny, nx]`.
    pub target: ComplexTensor<T>,
}

/// Everything needed to regenerate a dataset bit-for-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub nx: usize,
    pub ny: usize,
    pub nc: usize,
    pub pairs: usize,
    pub retro_pattern: String,
    pub retro_r: usize,
    pub retro_center_lines: usize,
    pub seed: u64,
    pub dtype: String,
}

/// Training pairs plus the manifest that regenerates them.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub pairs: Vec<TrainingPair<T>>,
    pub manifest: DatasetManifest,
}

/// Builds `n_draws` training pairs from fully encoded k-space. Pair `i`
/// draws its retro mask with seed `seed + i`, so parallel construction
/// cannot change the result.
pub fn build_training_pairs<T: Scalar>(
    full: &MultiCoilKSpace<T>,
    csm: &CoilSensitivities<T>,
    retro: MaskSpec,
    n_draws: usize,
    seed: u64,
) -> Result<Dataset<T>> {
    if full.nt != 1 {
        return Err(Error::Contract(format!(
            "training pairs need merged nt=1 k-space, got nt={}",
            full.nt
        )));
    }
    if n_draws == 0 {
        return Err(Error::Config("n_draws must be positive".into()));
    }
    let full_cfg = EncodingConfig::new(SamplingMask::full(full.ny, 1), csm.clone())?;
    let target = adjoint_encode(full, &full_cfg)?.frame(0);

    let mut pairs = Vec::with_capacity(n_draws);
    for i in 0..n_draws {
        let mask = retro.draw(full.ny, seed + i as u64)?;
        let mut input = MultiCoilKSpace::zeros(full.nx, full.ny, 1, full.nc);
        for c in 0..full.nc {
            let mut k = full.coil(0, c);
            for row in 0..full.ny {
                let ky = centered_index(row, full.ny);
                if !mask.line_sampled(ky, 0) {
                    for x in 0..full.nx {
                        k.set(row * full.nx + x, Complex::new(T::zero(), T::zero()));
                    }
                }
            }
            input.set_coil(0, c, &k);
        }
        pairs.push(TrainingPair {
            input,
            mask,
            target: target.clone(),
        });
    }

    let (retro_r, retro_center_lines) = match retro {
        MaskSpec::Uniform { r, center_lines } | MaskSpec::Gaussian { r, center_lines } => {
            (r, center_lines)
        }
    };
    Ok(Dataset {
        pairs,
        manifest: DatasetManifest {
            nx: full.nx,
            ny: full.ny,
            nc: full.nc,
            pairs: n_draws,
            retro_pattern: retro.pattern_name().to_string(),
            retro_r,
            retro_center_lines,
            seed,
            dtype: T::DTYPE.to_string(),
        },
    })
}

/// All axis-aligned crops of extent `patch` on the stride lattice, scanned
/// t-major, then y, then x.
pub fn shear_augment<T: Scalar>(
    volume: &CineVolume<T>,
    patch: (usize, usize, usize),
    stride: (usize, usize, usize),
) -> Result<Vec<CineVolume<T>>> {
    let (px, py, pt) = patch;
    let (sx, sy, st) = stride;
    if px > volume.nx || py > volume.ny || pt > volume.nt {
        return Err(Error::Config(format!(
            "patch {}x{}x{} exceeds volume {}x{}x{}",
            px, py, pt, volume.nx, volume.ny, volume.nt
        )));
    }
    if sx == 0 || sy == 0 || st == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    let steps = |extent: usize, p: usize, s: usize| (extent - p) / s + 1;
    let mut out = Vec::new();
    for it in 0..steps(volume.nt, pt, st) {
        for iy in 0..steps(volume.ny, py, sy) {
            for ix in 0..steps(volume.nx, px, sx) {
                let (ox, oy, ot) = (ix * sx, iy * sy, it * st);
                let mut crop = CineVolume::zeros(px, py, pt);
                for t in 0..pt {
                    for y in 0..py {
                        for x in 0..px {
                            let src = ((ot + t) * volume.ny + oy + y) * volume.nx + ox + x;
                            crop.data.set((t * py + y) * px + x, volume.data.at(src));
                        }
                    }
                }
                out.push(crop);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// dataset persistence

fn manifest_text(m: &DatasetManifest) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "format = dataset-v1");
    let _ = writeln!(s, "dtype = {}", m.dtype);
    let _ = writeln!(s, "nx = {}", m.nx);
    let _ = writeln!(s, "ny = {}", m.ny);
    let _ = writeln!(s, "nc = {}", m.nc);
    let _ = writeln!(s, "pairs = {}", m.pairs);
    let _ = writeln!(s, "retro.pattern = {}", m.retro_pattern);
    let _ = writeln!(s, "retro.r = {}", m.retro_r);
    let _ = writeln!(s, "retro.center_lines = {}", m.retro_center_lines);
    let _ = writeln!(s, "seed = {}", m.seed);
    s
}

fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let mut map = std::collections::BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("manifest line without '=': {}", line)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| -> Result<String> {
        map.get(k)
            .cloned()
            .ok_or_else(|| Error::Format(format!("manifest missing key {}", k)))
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::Format(format!("manifest key {} is not a number", k)))
    };
    if get("format")? != "dataset-v1" {
        return Err(Error::Format("unknown dataset format".into()));
    }
    Ok(DatasetManifest {
        nx: num("nx")?,
        ny: num("ny")?,
        nc: num("nc")?,
        pairs: num("pairs")?,
        retro_pattern: get("retro.pattern")?,
        retro_r: num("retro.r")?,
        retro_center_lines: num("retro.center_lines")?,
        seed: get("seed")?
            .parse()
            .map_err(|_| Error::Format("manifest seed is not a number".into()))?,
        dtype: get("dtype")?,
    })
}

/// Writes `manifest.txt`, `csm.tns`, and per-pair input/target/mask tensors.
pub fn save_dataset<T: Scalar>(
    dir: &Path,
    ds: &Dataset<T>,
    csm: &CoilSensitivities<T>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("manifest.txt"), manifest_text(&ds.manifest))?;
    io::write_complex(&dir.join("csm.tns"), &csm.maps)?;
    for (i, pair) in ds.pairs.iter().enumerate() {
        io::write_complex(&dir.join(format!("pair_{}_input.tns", i)), &pair.input.data)?;
        io::write_complex(&dir.join(format!("pair_{}_target.tns", i)), &pair.target)?;
        io::write_u8(
            &dir.join(format!("pair_{}_mask.tns", i)),
            &[pair.mask.ny, pair.mask.nt],
            &pair.mask.pattern,
        )?;
    }
    Ok(())
}

/// Loads a dataset directory written by [`save_dataset`].
pub fn load_dataset<T: Scalar>(dir: &Path) -> Result<(Dataset<T>, CoilSensitivities<T>)> {
    let manifest = parse_manifest(&std::fs::read_to_string(dir.join("manifest.txt"))?)?;
    if manifest.dtype != T::DTYPE {
        return Err(Error::Format(format!(
            "dataset dtype {} does not match requested {}",
            manifest.dtype,
            T::DTYPE
        )));
    }
    let maps = io::read_complex::<T>(&dir.join("csm.tns"))?;
    let shape = maps.shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::Format("csm.tns must be [nc, ny, nx]".into()));
    }
    let csm = CoilSensitivities {
        nc: shape[0],
        ny: shape[1],
        nx: shape[2],
        maps,
    };
    let mut pairs = Vec::with_capacity(manifest.pairs);
    for i in 0..manifest.pairs {
        let input_data = io::read_complex::<T>(&dir.join(format!("pair_{}_input.tns", i)))?;
        let target = io::read_complex::<T>(&dir.join(format!("pair_{}_target.tns", i)))?;
        let (mshape, mdata) = io::read_u8(&dir.join(format!("pair_{}_mask.tns", i)))?;
        if mshape.len() != 2 || mshape[1] != 1 {
            return Err(Error::Format("pair mask must be [ny, 1]".into()));
        }
        let ishape = input_data.shape().to_vec();
        if ishape.len() != 4 || ishape[0] != 1 {
            return Err(Error::Format("pair input must be [1, nc, ny, nx]".into()));
        }
        pairs.push(TrainingPair {
            input: MultiCoilKSpace {
                nx: ishape[3],
                ny: ishape[2],
                nt: 1,
                nc: ishape[1],
                data: input_data,
            },
            mask: SamplingMask {
                ny: mshape[0],
                nt: 1,
                pattern: mdata,
                center_lines: manifest.retro_center_lines,
                acceleration: manifest.retro_r,
            },
            target,
        });
    }
    Ok((Dataset { pairs, manifest }, csm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::encode;

    fn static_phantom(nx: usize, ny: usize, nt: usize, seed: u64) -> CineVolume<f64> {
        let mut p = CinePhantom::desk(nx, ny, nt, seed);
        p.annulus_amp = 0.0;
        generate_phantom(&p)
    }

    #[test]
    fn phantom_without_motion_is_static() {
        let vol = static_phantom(16, 16, 4, 1);
        let f0 = vol.frame(0);
        for t in 1..4 {
            assert_eq!(vol.frame(t), f0);
        }
    }

    #[test]
    fn phantom_magnitude_bounded_by_one() {
        let p = CinePhantom::desk(16, 16, 4, 2);
        let vol = generate_phantom::<f64>(&p);
        assert!(vol.data.max_abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn phantom_is_deterministic() {
        let p = CinePhantom::desk(16, 16, 4, 3);
        assert_eq!(generate_phantom::<f64>(&p), generate_phantom::<f64>(&p));
    }

    #[test]
    fn phantom_motion_changes_frames() {
        let p = CinePhantom::desk(32, 32, 8, 4);
        let vol = generate_phantom::<f64>(&p);
        assert_ne!(vol.frame(0), vol.frame(2));
    }

    #[test]
    fn merge_static_interleaved_equals_full_encode() {
        let nt = 4;
        let vol = static_phantom(16, 16, nt, 5);
        let csm = crate::encoding::simulate_coil_sensitivities(16, 16, 3, 6);
        let mask = make_uniform_interleaved_mask(4, 16, nt, 0).unwrap();
        let cfg = EncodingConfig::new(mask.clone(), csm.clone()).unwrap();
        let acquired = encode(&vol, &cfg).unwrap();
        let merged = merge_frames(&acquired, &mask).unwrap();

        let single = CineVolume::from_frames(16, 16, &[vol.frame(0)]);
        let full_cfg = EncodingConfig::new(SamplingMask::full(16, 1), csm).unwrap();
        let reference = encode(&single, &full_cfg).unwrap();
        for i in 0..reference.data.len() {
            assert!((merged.data.at(i) - reference.data.at(i)).norm() < 1e-10);
        }
    }

    #[test]
    fn merge_full_mask_is_temporal_average() {
        let vol = generate_phantom::<f64>(&CinePhantom::desk(8, 8, 4, 7));
        let csm = crate::encoding::simulate_coil_sensitivities(8, 8, 2, 8);
        let mask = SamplingMask::full(8, 4);
        let cfg = EncodingConfig::new(mask.clone(), csm).unwrap();
        let acquired = encode(&vol, &cfg).unwrap();
        let merged = merge_frames(&acquired, &mask).unwrap();
        for c in 0..2 {
            let mut avg = ComplexTensor::<f64>::zeros(&[8, 8]);
            for t in 0..4 {
                avg = avg.add(&acquired.coil(t, c)).unwrap();
            }
            avg = avg.scale(0.25);
            let got = merged.coil(0, c);
            for i in 0..64 {
                assert!((got.at(i) - avg.at(i)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn merge_divides_by_sample_count() {
        // one line sampled in 3 of 4 frames: output = sum of the 3 samples / 3
        let (nx, ny, nt) = (4usize, 4usize, 4usize);
        let mut mask = SamplingMask {
            ny,
            nt,
            pattern: vec![1; ny * nt],
            center_lines: 0,
            acceleration: 1,
        };
        mask.pattern[3] = 0; // centered line 0 missing from frame 3
        let mut m = MultiCoilKSpace::<f64>::zeros(nx, ny, nt, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for t in 0..nt {
            let k = ComplexTensor::from_fn(&[ny, nx], |_| {
                Complex::new(rng.gen::<f64>(), rng.gen::<f64>())
            });
            m.set_coil(t, 0, &k);
        }
        let merged = merge_frames(&m, &mask).unwrap();
        let row = centered_index(0, ny); // DFT row holding centered line 0
        for x in 0..nx {
            let mut sum = Complex::new(0.0, 0.0);
            for t in 0..3 {
                sum += m.coil(t, 0).at(row * nx + x);
            }
            let expect = sum / 3.0;
            assert!((merged.coil(0, 0).at(row * nx + x) - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn merge_reports_uncovered_lines() {
        let (ny, nt) = (8usize, 2usize);
        let mut pattern = vec![0u8; ny * nt];
        for ky in 0..ny - 2 {
            pattern[ky * nt] = 1;
        }
        let mask = SamplingMask {
            ny,
            nt,
            pattern,
            center_lines: 0,
            acceleration: 2,
        };
        let m = MultiCoilKSpace::<f64>::zeros(8, ny, nt, 1);
        match merge_frames(&m, &mask) {
            Err(Error::Coverage { missing }) => assert_eq!(missing, vec![6, 7]),
            other => panic!("expected coverage error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn merge_is_linear_for_fixed_mask() {
        let mask = make_uniform_interleaved_mask(2, 8, 4, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut draw = || {
            let mut m = MultiCoilKSpace::<f64>::zeros(4, 8, 4, 2);
            m.data = ComplexTensor::from_fn(&[4, 2, 8, 4], |_| {
                Complex::new(rng.gen::<f64>(), rng.gen::<f64>())
            });
            m
        };
        let a = draw();
        let b = draw();
        let mut sum = a.clone();
        sum.data = a.data.add(&b.data).unwrap();
        let lhs = merge_frames(&sum, &mask).unwrap();
        let rhs_a = merge_frames(&a, &mask).unwrap();
        let rhs_b = merge_frames(&b, &mask).unwrap();
        for i in 0..lhs.data.len() {
            let expect = rhs_a.data.at(i) + rhs_b.data.at(i);
            assert!((lhs.data.at(i) - expect).norm() < 1e-12);
        }
    }

    fn merged_fixture() -> (MultiCoilKSpace<f64>, CoilSensitivities<f64>) {
        let vol = generate_phantom::<f64>(&CinePhantom::desk(16, 16, 4, 11));
        let csm = crate::encoding::simulate_coil_sensitivities(16, 16, 2, 12);
        let mask = make_uniform_interleaved_mask(4, 16, 4, 2).unwrap();
        let cfg = EncodingConfig::new(mask.clone(), csm.clone()).unwrap();
        let acquired = encode(&vol, &cfg).unwrap();
        (merge_frames(&acquired, &mask).unwrap(), csm)
    }

    #[test]
    fn training_pairs_with_full_retro_mask_keep_input_intact() {
        let (full, csm) = merged_fixture();
        // R=1 uniform spec draws the all-ones mask
        let ds = build_training_pairs(
            &full,
            &csm,
            MaskSpec::Uniform {
                r: 1,
                center_lines: 0,
            },
            2,
            77,
        )
        .unwrap();
        for pair in &ds.pairs {
            assert_eq!(pair.input.data, full.data);
            // target recoverable by the adjoint alone
            let cfg = EncodingConfig::new(SamplingMask::full(full.ny, 1), csm.clone()).unwrap();
            let zf = adjoint_encode(&pair.input, &cfg).unwrap().frame(0);
            for i in 0..zf.len() {
                assert!((zf.at(i) - pair.target.at(i)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn training_pairs_deterministic_and_distinct() {
        let (full, csm) = merged_fixture();
        let spec = MaskSpec::Gaussian {
            r: 4,
            center_lines: 2,
        };
        let a = build_training_pairs(&full, &csm, spec, 8, 5).unwrap();
        let b = build_training_pairs(&full, &csm, spec, 8, 5).unwrap();
        for (pa, pb) in a.pairs.iter().zip(&b.pairs) {
            assert_eq!(pa, pb);
        }
        let masks: std::collections::BTreeSet<Vec<u8>> =
            a.pairs.iter().map(|p| p.mask.pattern.clone()).collect();
        assert!(masks.len() > 1, "expected distinct retro masks");
    }

    #[test]
    fn training_pair_inputs_match_mask_zero_pattern() {
        let (full, csm) = merged_fixture();
        let ds = build_training_pairs(
            &full,
            &csm,
            MaskSpec::Gaussian {
                r: 4,
                center_lines: 2,
            },
            4,
            6,
        )
        .unwrap();
        for pair in &ds.pairs {
            for c in 0..pair.input.nc {
                let k = pair.input.coil(0, c);
                for row in 0..pair.input.ny {
                    let ky = centered_index(row, pair.input.ny);
                    if !pair.mask.line_sampled(ky, 0) {
                        for x in 0..pair.input.nx {
                            assert_eq!(k.at(row * pair.input.nx + x).norm(), 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn shear_single_patch_is_whole_volume() {
        let vol = generate_phantom::<f64>(&CinePhantom::desk(16, 16, 4, 13));
        let crops = shear_augment(&vol, (16, 16, 4), (12, 12, 5)).unwrap();
        assert_eq!(crops.len(), 1);
        assert_eq!(crops[0], vol);
    }

    #[test]
    fn shear_counts_follow_stride_lattice() {
        let vol = CineVolume::<f64>::zeros(64, 64, 16);
        let crops = shear_augment(&vol, (32, 32, 8), (16, 16, 4)).unwrap();
        assert_eq!(crops.len(), 27);
        let over = shear_augment(&vol, (65, 32, 8), (16, 16, 4));
        assert!(matches!(over, Err(Error::Config(_))));
    }

    #[test]
    fn shear_full_scale_patch_is_degenerate_single_crop() {
        // patch equals the volume: the stride lattice has one point no
        // matter the stride
        let vol = CineVolume::<f32>::zeros(192, 192, 16);
        let crops = shear_augment(&vol, (192, 192, 16), (12, 12, 5)).unwrap();
        assert_eq!(crops.len(), 1);
    }

    #[test]
    fn shear_crop_contents_match_source() {
        let vol = generate_phantom::<f64>(&CinePhantom::desk(16, 16, 4, 14));
        let crops = shear_augment(&vol, (8, 8, 2), (8, 8, 2)).unwrap();
        assert_eq!(crops.len(), 8);
        // crop at (x=8..16, y=0..8, t=0..2) is index 1 in x-fastest order
        let c = &crops[1];
        for t in 0..2 {
            for y in 0..8 {
                for x in 0..8 {
                    let src = vol.data.at((t * 16 + y) * 16 + x + 8);
                    assert_eq!(c.data.at((t * 8 + y) * 8 + x), src);
                }
            }
        }
    }

    #[test]
    fn dataset_round_trip_is_bit_identical() {
        let (full, csm) = merged_fixture();
        let ds = build_training_pairs(
            &full,
            &csm,
            MaskSpec::Gaussian {
                r: 4,
                center_lines: 2,
            },
            3,
            21,
        )
        .unwrap();
        let dir = std::env::temp_dir().join("recon_dataset_roundtrip");
        let _ = std::fs::remove_dir_all(&dir);
        save_dataset(&dir, &ds, &csm).unwrap();
        let (loaded, csm2) = load_dataset::<f64>(&dir).unwrap();
        assert_eq!(loaded.manifest, ds.manifest);
        assert_eq!(csm2.maps, csm.maps);
        for (a, b) in ds.pairs.iter().zip(&loaded.pairs) {
            assert_eq!(a, b);
        }
        // regeneration from the manifest alone reproduces the pairs
        let spec = MaskSpec::Gaussian {
            r: loaded.manifest.retro_r,
            center_lines: loaded.manifest.retro_center_lines,
        };
        let regen =
            build_training_pairs(&full, &csm, spec, loaded.manifest.pairs, loaded.manifest.seed)
                .unwrap();
        for (a, b) in regen.pairs.iter().zip(&loaded.pairs) {
            assert_eq!(a, b);
        }
    }
}
