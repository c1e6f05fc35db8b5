//! Shared fixtures for the kernel benchmarks.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use recon_core::encoding::{
    make_gaussian_random_mask, make_uniform_interleaved_mask, simulate_coil_sensitivities,
    CineVolume, CoilSensitivities, EncodingConfig, MultiCoilKSpace, SamplingMask,
};
use recon_core::network::{ModelConfig, ModelMode, ModelParams, ReconBlock};
use recon_core::pipeline::{generate_phantom, merge_frames, CinePhantom};
use recon_core::tensor::{ComplexTensor, RealTensor};
use recon_core::training::init_params;

pub fn rand_real(shape: &[usize], seed: u64) -> RealTensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RealTensor::from_fn(shape, |_| rng.gen::<f32>() - 0.5)
}

pub fn rand_complex(shape: &[usize], seed: u64) -> ComplexTensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ComplexTensor::from_fn(shape, |_| {
        Complex::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    })
}

pub struct DeskProblem {
    pub cfg: ModelConfig,
    pub params: ModelParams<f32>,
    pub measured: MultiCoilKSpace<f32>,
    pub mask: SamplingMask,
    pub csm: CoilSensitivities<f32>,
    pub target: ComplexTensor<f32>,
}

/// The 32x32, 4-coil training problem the desk run uses.
pub fn desk_problem() -> DeskProblem {
    let cfg = ModelConfig {
        mode: ModelMode::MultiChannel,
        block: ReconBlock::Admm3,
        n_iters: 2,
        width: 16,
        dc_lambda: None,
        nc: 4,
    };
    let vol = generate_phantom::<f32>(&CinePhantom::desk(32, 32, 8, 1));
    let csm = simulate_coil_sensitivities::<f32>(32, 32, 4, 2);
    let acq = make_uniform_interleaved_mask(4, 32, 8, 4).unwrap();
    let enc = EncodingConfig::new(acq.clone(), csm.clone()).unwrap();
    let merged = merge_frames(&recon_core::encoding::encode(&vol, &enc).unwrap(), &acq).unwrap();

    let mask = make_gaussian_random_mask(4, 32, 1, 4, 3).unwrap();
    let mut measured = MultiCoilKSpace::zeros(32, 32, 1, 4);
    for c in 0..4 {
        let mut k = merged.coil(0, c);
        for row in 0..32 {
            let ky = recon_core::encoding::centered_index(row, 32);
            if !mask.line_sampled(ky, 0) {
                for x in 0..32 {
                    k.set(row * 32 + x, Complex::new(0.0, 0.0));
                }
            }
        }
        measured.set_coil(0, c, &k);
    }
    let full = EncodingConfig::new(SamplingMask::full(32, 1), csm.clone()).unwrap();
    let target = recon_core::encoding::adjoint_encode(&merged, &full)
        .unwrap()
        .frame(0);
    let params = init_params::<f32>(&cfg, 4).unwrap();
    DeskProblem {
        cfg,
        params,
        measured,
        mask,
        csm,
        target,
    }
}

pub fn desk_volume() -> (CineVolume<f64>, EncodingConfig<f64>) {
    let vol = generate_phantom::<f64>(&CinePhantom::desk(32, 32, 8, 5));
    let csm = simulate_coil_sensitivities::<f64>(32, 32, 4, 6);
    let mask = make_uniform_interleaved_mask(4, 32, 8, 4).unwrap();
    (vol, EncodingConfig::new(mask, csm).unwrap())
}
