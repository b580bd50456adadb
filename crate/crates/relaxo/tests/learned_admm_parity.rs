//! Greedily trained operator corrections must not degrade reconstruction:
//! on held-out slices the learned variant stays within 10% of the classical
//! solver's error (and usually improves on it).

use ndarray::{Array3, Axis};
use num_complex::Complex64;
use relaxo::acquisition::{forward, make_coils, make_mask_set, MeasurementOperator};
use relaxo::fft::norm3;
use relaxo::phantom::{random_phantom, rasterize, synthesize, PhaseMode, KNEE_TSL_MS};
use relaxo::recon::{
    admm_reconstruct, learned_admm_reconstruct, train_learned_admm, LearnedTrainSample,
    ReconConfig,
};
use relaxo::seed::Seed;
use relaxo::types::ContrastImageSet;

const N: usize = 32;

fn make_sample(
    seed: Seed,
    coils: &relaxo::acquisition::CoilProfile,
    r_k: f64,
) -> (relaxo::acquisition::KSpaceData, Array3<Complex64>) {
    let spec = random_phantom(N, N, seed.derive(0));
    let (truth, _) = rasterize(&spec).unwrap();
    let series = synthesize(&truth, &KNEE_TSL_MS, PhaseMode::SmoothQuadratic).unwrap();
    let mut imgs = Array3::<Complex64>::zeros((2, N, N));
    imgs.index_axis_mut(Axis(0), 0)
        .assign(&series.images.index_axis(Axis(0), 0));
    imgs.index_axis_mut(Axis(0), 1)
        .assign(&series.images.index_axis(Axis(0), 4));
    let acq = ContrastImageSet::new(imgs.clone(), vec![5.0, 60.0]).unwrap();
    let mask = make_mask_set(N, N, 2, r_k, 0.0625, seed.derive(1)).unwrap();
    let op = MeasurementOperator::new(coils.clone(), mask).unwrap();
    let y = forward(&op, &acq).unwrap();
    (y, imgs)
}

#[test]
fn trained_model_stays_within_ten_percent_of_classical() {
    let coils = make_coils(1, N, N, Seed::new(1)).unwrap();
    let cfg = ReconConfig {
        reg_weight: 0.001,
        ..Default::default()
    };

    let samples: Vec<LearnedTrainSample> = (0..200)
        .map(|k| {
            let (y, reference) = make_sample(Seed::new(1000 + k), &coils, 6.8);
            LearnedTrainSample { y, reference }
        })
        .collect();
    let model = train_learned_admm(&samples, &coils, &cfg, 8, 2, 0.001, Seed::new(7)).unwrap();
    assert!(model.trained);

    let mut learned_total = 0.0;
    let mut classical_total = 0.0;
    for k in 0..20 {
        let (y, reference) = make_sample(Seed::new(5000 + k), &coils, 6.8);
        let learned = learned_admm_reconstruct(&y, &coils, &model, &cfg).unwrap();
        let classical = admm_reconstruct(&y, &coils, &cfg).unwrap();
        let rn = norm3(&reference);
        learned_total += norm3(&(&learned.images - &reference)) / rn;
        classical_total += norm3(&(&classical.images - &reference)) / rn;
    }
    let learned_mean = learned_total / 20.0;
    let classical_mean = classical_total / 20.0;
    println!("learned {learned_mean:.5} vs classical {classical_mean:.5}");
    assert!(
        learned_mean <= 1.1 * classical_mean,
        "learned {learned_mean} exceeds 1.1x classical {classical_mean}"
    );
}
