//! The four experiment stages: prepare (phantom -> interleaved acquisition
//! -> merge -> training pairs), train, eval (per-frame reconstruction of a
//! held-out phantom), and report (cross-method comparison).
//!
//! Every stage derives its randomness from the config's global seed plus a
//! fixed per-role offset, so a rerun with the same config is byte-identical
//! (wall-clock runtime columns aside).

use std::path::{Path, PathBuf};
use std::time::Instant;

use recon_core::encoding::{
    encode, make_gaussian_random_mask, make_uniform_interleaved_mask, CineVolume,
    CoilSensitivities, EncodingConfig, MultiCoilKSpace, SamplingMask,
};
use recon_core::error::{Error, Result};
use recon_core::io;
use recon_core::metrics::{
    error_map, export_pgm, mse, psnr, second_moment_sigma, ssim, yt_profile, MetricsReport,
    VolumeMetrics,
};
use recon_core::network::{
    build_forward_graph, input_scale, load_checkpoint, save_checkpoint, ModelParams,
};
use recon_core::pipeline::{
    build_training_pairs, generate_phantom, load_dataset, merge_frames, save_dataset, CinePhantom,
};
use recon_core::scalar::Scalar;
use recon_core::tensor::ComplexTensor;
use recon_core::training::{curve_to_csv, train};

use crate::config::{ExperimentConfig, Pattern, Precision};

// Seed offsets per role; all derived from the one global seed.
pub const SEED_PHANTOM: u64 = 11;
pub const SEED_CSM: u64 = 22;
pub const SEED_RETRO: u64 = 33;
pub const SEED_TRAIN: u64 = 44;
pub const SEED_EVAL_PHANTOM: u64 = 55;
pub const SEED_EVAL_MASK: u64 = 66;
pub const SEED_ACQ: u64 = 77;

pub fn dataset_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("dataset")
}

pub fn checkpoint_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("checkpoint")
}

pub fn eval_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("eval")
}

fn write_config_echo(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("config.txt"), cfg.serialize())?;
    Ok(())
}

/// Acquisition mask over the full frame series.
fn acquisition_mask(cfg: &ExperimentConfig) -> Result<SamplingMask> {
    match cfg.acq.pattern {
        Pattern::Uniform => make_uniform_interleaved_mask(
            cfg.acq.r,
            cfg.phantom_ny,
            cfg.phantom_nt,
            cfg.acq.center_lines,
        ),
        Pattern::Gaussian => make_gaussian_random_mask(
            cfg.acq.r,
            cfg.phantom_ny,
            cfg.phantom_nt,
            cfg.acq.center_lines,
            cfg.seed.wrapping_add(SEED_ACQ),
        ),
    }
}

/// Single-frame eval mask for frame `t` of the test series.
fn eval_frame_mask(cfg: &ExperimentConfig, t: usize) -> Result<SamplingMask> {
    let m = &cfg.eval_mask;
    match m.pattern {
        Pattern::Uniform => {
            let full = make_uniform_interleaved_mask(
                m.r,
                cfg.phantom_ny,
                m.r,
                m.center_lines,
            )?;
            Ok(full.frame_mask(t % m.r))
        }
        Pattern::Gaussian => make_gaussian_random_mask(
            m.r,
            cfg.phantom_ny,
            1,
            m.center_lines,
            cfg.seed
                .wrapping_add(SEED_EVAL_MASK)
                .wrapping_add(t as u64),
        ),
    }
}

/// Phantom -> interleaved acquisition -> merge -> retro-undersampled pairs,
/// persisted under `<out>/dataset`.
pub fn cmd_prepare(cfg: &ExperimentConfig) -> Result<PathBuf> {
    match cfg.precision {
        Precision::F32 => prepare_impl::<f32>(cfg),
        Precision::F64 => prepare_impl::<f64>(cfg),
    }
}

fn prepare_impl<T: Scalar>(cfg: &ExperimentConfig) -> Result<PathBuf> {
    write_config_echo(cfg)?;
    let phantom = CinePhantom::desk(
        cfg.phantom_nx,
        cfg.phantom_ny,
        cfg.phantom_nt,
        cfg.seed.wrapping_add(SEED_PHANTOM),
    );
    let vol = generate_phantom::<T>(&phantom);
    let csm = recon_core::encoding::simulate_coil_sensitivities::<T>(
        cfg.phantom_nx,
        cfg.phantom_ny,
        cfg.nc,
        cfg.seed.wrapping_add(SEED_CSM),
    );
    let mask = acquisition_mask(cfg)?;
    let enc = EncodingConfig::new(mask.clone(), csm.clone())?;
    let acquired = encode(&vol, &enc)?;
    let merged = merge_frames(&acquired, &mask)?;
    let ds = build_training_pairs(
        &merged,
        &csm,
        cfg.retro.spec(),
        cfg.retro_draws,
        cfg.seed.wrapping_add(SEED_RETRO),
    )?;
    let dir = dataset_dir(cfg);
    save_dataset(&dir, &ds, &csm)?;
    Ok(dir)
}

/// Trains on the prepared dataset; writes `checkpoint/`, `checkpoint_best/`,
/// and `loss.csv`. A diverged run still writes the last good checkpoint and
/// returns the divergence as an error.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<PathBuf> {
    match cfg.precision {
        Precision::F32 => train_impl::<f32>(cfg),
        Precision::F64 => train_impl::<f64>(cfg),
    }
}

fn train_impl<T: Scalar>(cfg: &ExperimentConfig) -> Result<PathBuf> {
    write_config_echo(cfg)?;
    let (ds, csm) = load_dataset::<T>(&dataset_dir(cfg))?;
    let model_cfg = cfg.model_config();
    let train_cfg = cfg.train_config();
    let out = train(&model_cfg, &train_cfg, &ds, &csm)?;

    let ckpt = checkpoint_dir(cfg);
    save_checkpoint(&ckpt, &model_cfg, &out.final_params)?;
    save_checkpoint(&cfg.out_dir.join("checkpoint_best"), &model_cfg, &out.best_params)?;
    std::fs::write(cfg.out_dir.join("loss.csv"), curve_to_csv(&out.curve))?;
    if let Some(msg) = out.diverged {
        return Err(Error::Diverged(format!(
            "{} (last good checkpoint kept at {})",
            msg,
            ckpt.display()
        )));
    }
    Ok(ckpt)
}

/// Normalized forward pass: scale the input by its zero-filled magnitude,
/// reconstruct, scale back.
fn forward_normalized<T: Scalar>(
    m: &MultiCoilKSpace<T>,
    mask: &SamplingMask,
    csm: &CoilSensitivities<T>,
    model_cfg: &recon_core::network::ModelConfig,
    params: &ModelParams<T>,
) -> Result<ComplexTensor<T>> {
    let scale = input_scale(m)?;
    let mut scaled = m.clone();
    scaled.data = scaled.data.scale(T::of_f64(1.0 / scale));
    let fg = build_forward_graph(&scaled, mask, Some(csm), model_cfg, params, false)?;
    let img = ComplexTensor::from_stacked(fg.graph.value(fg.output))?;
    Ok(img.scale(T::of_f64(scale)))
}

struct MethodSink {
    dir: PathBuf,
    report: MetricsReport,
}

impl MethodSink {
    fn new(root: &Path, method: &str) -> Result<Self> {
        let dir = root.join(method);
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("manifest.txt"), format!("method = {}\n", method))?;
        Ok(Self {
            dir,
            report: MetricsReport::default(),
        })
    }
}

/// Reconstructs every frame of a held-out phantom with the trained model and
/// the zero-filled baseline; writes per-method metrics, error maps, and y-t
/// profiles under `<out>/eval/<method>/`.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<PathBuf> {
    match cfg.precision {
        Precision::F32 => eval_impl::<f32>(cfg),
        Precision::F64 => eval_impl::<f64>(cfg),
    }
}

fn eval_impl<T: Scalar>(cfg: &ExperimentConfig) -> Result<PathBuf> {
    write_config_echo(cfg)?;
    let (ckpt_cfg, params) = load_checkpoint::<T>(&checkpoint_dir(cfg))?;
    if ckpt_cfg.nc != cfg.nc {
        return Err(Error::Format(format!(
            "checkpoint was trained with {} coils, config says {}",
            ckpt_cfg.nc, cfg.nc
        )));
    }

    let phantom = CinePhantom::desk(
        cfg.phantom_nx,
        cfg.phantom_ny,
        cfg.phantom_nt,
        cfg.seed.wrapping_add(SEED_EVAL_PHANTOM),
    );
    let truth = generate_phantom::<T>(&phantom);
    let csm = recon_core::encoding::simulate_coil_sensitivities::<T>(
        cfg.phantom_nx,
        cfg.phantom_ny,
        cfg.nc,
        cfg.seed.wrapping_add(SEED_CSM),
    );

    let root = eval_dir(cfg);
    let mut recon_sink = MethodSink::new(&root, "recon")?;
    let mut zf_sink = MethodSink::new(&root, "zero_filled")?;

    let (nx, ny, nt) = (cfg.phantom_nx, cfg.phantom_ny, cfg.phantom_nt);
    let mut recon_vol = CineVolume::<T>::zeros(nx, ny, nt);
    let mut zf_vol = CineVolume::<T>::zeros(nx, ny, nt);

    for t in 0..nt {
        let mask = eval_frame_mask(cfg, t)?;
        let frame_truth = CineVolume::from_frames(nx, ny, &[truth.frame(t)]);
        let enc = EncodingConfig::new(mask.clone(), csm.clone())?;
        let measured = encode(&frame_truth, &enc)?;
        let ref_mag = truth.frame(t).magnitude();

        let t0 = Instant::now();
        let recon = forward_normalized(&measured, &mask, &csm, &ckpt_cfg, &params)?;
        let recon_runtime = t0.elapsed().as_secs_f64();
        recon_vol.set_frame(t, &recon);

        let t1 = Instant::now();
        let zf = recon_core::baselines::zero_filled(&measured, &enc)?.frame(0);
        let zf_runtime = t1.elapsed().as_secs_f64();
        zf_vol.set_frame(t, &zf);

        for (sink, image, runtime) in [
            (&mut recon_sink, &recon, recon_runtime),
            (&mut zf_sink, &zf, zf_runtime),
        ] {
            let mag = image.magnitude();
            sink.report.push(VolumeMetrics {
                volume: format!("frame_{}", t),
                mse: mse(&ref_mag, &mag)?,
                psnr: psnr(&ref_mag, &mag)?,
                ssim: ssim(&ref_mag, &mag)?,
                sigma: second_moment_sigma(&mag)?,
                runtime_s: runtime,
            });
            export_pgm(&sink.dir.join(format!("frame_{}.pgm", t)), &mag, (0.0, 1.0))?;
            let emap = error_map(&ref_mag, &mag, (0.0, cfg.eval_error_range))?;
            export_pgm(
                &sink.dir.join(format!("frame_{}_error.pgm", t)),
                &emap,
                (0.0, cfg.eval_error_range),
            )?;
        }
    }

    // temporal fidelity: y-t profile at the configured column
    let ref_yt = yt_profile(&truth, cfg.eval_x_index)?;
    for (sink, vol) in [(&recon_sink, &recon_vol), (&zf_sink, &zf_vol)] {
        let yt = yt_profile(vol, cfg.eval_x_index)?;
        export_pgm(&sink.dir.join("yt.pgm"), &yt, (0.0, 1.0))?;
        let err = error_map(&ref_yt, &yt, (0.0, cfg.eval_error_range))?;
        export_pgm(
            &sink.dir.join("yt_error.pgm"),
            &err,
            (0.0, cfg.eval_error_range),
        )?;
        io::write_complex(&sink.dir.join("volume.tns"), &vol.data)?;
    }

    std::fs::write(
        recon_sink.dir.join("metrics.csv"),
        recon_sink.report.to_csv(),
    )?;
    std::fs::write(zf_sink.dir.join("metrics.csv"), zf_sink.report.to_csv())?;
    Ok(root)
}

const MONTAGE_SEPARATOR: usize = 2;
const MONTAGE_TILES: [&str; 3] = ["frame_0.pgm", "frame_0_error.pgm", "yt.pgm"];

fn read_method_name(dir: &Path) -> String {
    if let Ok(text) = std::fs::read_to_string(dir.join("manifest.txt")) {
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                if k.trim() == "method" {
                    return v.trim().to_string();
                }
            }
        }
    }
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unknown".into())
}

/// Merges per-method metrics into one CSV and renders a tile montage
/// (reconstruction | error map | y-t profile, one row per method).
/// Missing files are listed in `report.txt`; the report is still emitted.
pub fn cmd_report(dirs: &[PathBuf], out: &Path) -> Result<PathBuf> {
    if dirs.is_empty() {
        return Err(Error::Config("report needs at least one results dir".into()));
    }
    std::fs::create_dir_all(out)?;
    let mut missing: Vec<String> = Vec::new();
    let mut merged = String::from("method,volume,mse,psnr_db,ssim,sigma,runtime_s\n");
    let mut tiles: Vec<(String, Vec<Option<(usize, usize, Vec<u8>)>>)> = Vec::new();

    for dir in dirs {
        let method = read_method_name(dir);
        match std::fs::read_to_string(dir.join("metrics.csv")) {
            Ok(text) => match MetricsReport::from_csv(&text) {
                Ok(report) => {
                    for row in &report.rows {
                        merged.push_str(&format!(
                            "{},{},{},{},{},{},{}\n",
                            method, row.volume, row.mse, row.psnr, row.ssim, row.sigma,
                            row.runtime_s
                        ));
                    }
                }
                Err(e) => missing.push(format!("{}: {}", dir.join("metrics.csv").display(), e)),
            },
            Err(_) => missing.push(format!("{}: not found", dir.join("metrics.csv").display())),
        }
        let mut row = Vec::new();
        for tile in MONTAGE_TILES {
            match io::read_pgm(&dir.join(tile)) {
                Ok(img) => row.push(Some(img)),
                Err(_) => {
                    missing.push(format!("{}: not found", dir.join(tile).display()));
                    row.push(None);
                }
            }
        }
        tiles.push((method, row));
    }

    std::fs::write(out.join("merged.csv"), &merged)?;

    // montage geometry: equal tiles (max extent over all present images),
    // 2-pixel white separators between rows and columns
    let mut tile_h = 1usize;
    let mut tile_w = 1usize;
    for (_, row) in &tiles {
        for img in row.iter().flatten() {
            tile_h = tile_h.max(img.0);
            tile_w = tile_w.max(img.1);
        }
    }
    let rows = tiles.len();
    let cols = MONTAGE_TILES.len();
    let height = rows * tile_h + (rows - 1) * MONTAGE_SEPARATOR;
    let width = cols * tile_w + (cols - 1) * MONTAGE_SEPARATOR;
    let mut canvas = vec![255u8; height * width];
    for (r, (_, row)) in tiles.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            let oy = r * (tile_h + MONTAGE_SEPARATOR);
            let ox = c * (tile_w + MONTAGE_SEPARATOR);
            // blank (black) tile when the source image is missing
            for y in 0..tile_h {
                for x in 0..tile_w {
                    canvas[(oy + y) * width + ox + x] = 0;
                }
            }
            if let Some((h, w, pixels)) = img {
                for y in 0..*h {
                    for x in 0..*w {
                        canvas[(oy + y) * width + ox + x] = pixels[y * w + x];
                    }
                }
            }
        }
    }
    io::write_pgm(&out.join("montage.pgm"), height, width, &canvas)?;

    let mut report_txt = String::new();
    report_txt.push_str(&format!("methods = {}\n", tiles.len()));
    report_txt.push_str(&format!(
        "montage = {} rows x {} cols, tile {}x{}, separator {}\n",
        rows, cols, tile_h, tile_w, MONTAGE_SEPARATOR
    ));
    if missing.is_empty() {
        report_txt.push_str("missing = none\n");
    } else {
        for m in &missing {
            report_txt.push_str(&format!("missing = {}\n", m));
        }
    }
    std::fs::write(out.join("report.txt"), report_txt)?;
    Ok(out.to_path_buf())
}

/// Mean finite PSNR (dB) of a method's eval metrics file.
pub fn mean_psnr(metrics_csv: &Path) -> Result<f64> {
    let report = MetricsReport::from_csv(&std::fs::read_to_string(metrics_csv)?)?;
    let (mean, _) = report.aggregate(|r| r.psnr.db());
    Ok(mean)
}
