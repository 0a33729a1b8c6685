mod common;

use common::*;
use dragforge_core::closs::{closs, patch_cosine, Patch, PatchPair};
use dragforge_core::grid::{Grid, GridTensor, Pixel};
use dragforge_core::sampler::{
    ddim_invert_step, ddim_step, guided_sample, invert, sample, GuidanceParams, NoisePredictor, NoiseSchedule,
};
use dragforge_core::scenes::closs_toy;
use proptest::prelude::*;
use rand::Rng;

fn rel(a: &GridTensor, b: &GridTensor) -> f64 {
    let a: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    rel_err(&a, &b)
}

/// DDIM written through the clean-latent estimate, entirely in f64.
fn ddim_oracle(z: f64, eps: f64, a_from: f64, a_to: f64) -> f64 {
    let x0 = (z - (1.0 - a_from).sqrt() * eps) / a_from.sqrt();
    a_to.sqrt() * x0 + (1.0 - a_to).sqrt() * eps
}

#[test]
fn three_constant_steps_match_composed_oracle() {
    let s = NoiseSchedule::scaled_linear(50).unwrap();
    let mut r = rng(51);
    let z = random_grid(&mut r, 4, 5, 3);
    let pred = NoisePredictor::Constant { value: 0.3 };
    let mut got = z.clone();
    for t in [20, 19, 18] {
        got = ddim_step(&got, t, &pred, &s).unwrap();
    }
    for (g, &v) in got.data().iter().zip(z.data()) {
        let mut want = v as f64;
        for t in [20, 19, 18] {
            want = ddim_oracle(want, 0.3, s.alpha[t], s.alpha[t - 1]);
        }
        assert!((*g as f64 - want).abs() < 1e-6 * want.abs().max(1.0), "{g} vs {want}");
    }
}

#[test]
fn inversion_step_undoes_sampling_step_for_fixed_noise() {
    let s = NoiseSchedule::scaled_linear(50).unwrap();
    let mut r = rng(52);
    let z = random_grid(&mut r, 6, 6, 2);
    let pred = NoisePredictor::Constant { value: -0.4 };
    for t in [0, 10, 49] {
        let up = ddim_invert_step(&z, t, &pred, &s).unwrap();
        let back = ddim_step(&up, t + 1, &pred, &s).unwrap();
        assert!(rel(&back, &z) < 1e-6);
    }
}

#[test]
fn full_round_trip_recovers_input() {
    let s = NoiseSchedule::scaled_linear(50).unwrap();
    let mut r = rng(53);
    let z0 = random_grid(&mut r, 64, 64, 4);
    for pred in [NoisePredictor::Zero, NoisePredictor::Constant { value: 0.25 }] {
        let zt = invert(&z0, 50, &pred, &s).unwrap();
        let back = sample(&zt, 50, &pred, &s).unwrap();
        let e = rel(&back, &z0);
        assert!(e < 1e-6, "{pred:?}: {e}");
    }
}

#[test]
fn scaled_linear_strides_the_training_schedule() {
    // independent recomputation of the cumulative product
    let s = NoiseSchedule::scaled_linear(50).unwrap();
    let betas: Vec<f64> = (0..1000)
        .map(|i| (0.00085f64.sqrt() + (0.012f64.sqrt() - 0.00085f64.sqrt()) * i as f64 / 999.0).powi(2))
        .collect();
    for j in 1..=50 {
        let k = (j - 1) * 20 + 1;
        let prod: f64 = betas[..=k].iter().map(|b| 1.0 - b).product();
        assert!((s.alpha[j] - prod).abs() < 1e-12);
    }
    assert_eq!(s.alpha[0], 1.0);
}

fn row_permuted(p: &Patch, perm: &[usize]) -> Patch {
    let data = perm.iter().flat_map(|&i| p.row(i).to_vec()).collect();
    Patch::new(p.rows, p.dim, data).unwrap()
}

fn random_patch(r: &mut rand_chacha::ChaCha8Rng, rows: usize, dim: usize) -> Patch {
    Patch::new(rows, dim, (0..rows * dim).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closs_is_permutation_invariant(seed in any::<u64>(), rows in 2usize..10, dim in 1usize..5, tau in 0.05f64..1.0) {
        let mut r = rng(seed);
        let (a, b) = (random_patch(&mut r, rows, dim), random_patch(&mut r, rows, dim));
        let mut perm: Vec<usize> = (0..rows).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut r);
        let base = closs(&[PatchPair { handle: a.clone(), target: b.clone() }], tau).unwrap();
        let moved = closs(&[PatchPair { handle: row_permuted(&a, &perm), target: row_permuted(&b, &perm) }], tau).unwrap();
        prop_assert!((base.loss - moved.loss).abs() < 1e-9 * base.loss.abs().max(1.0));
        // gradients follow the rows
        for (k, &i) in perm.iter().enumerate() {
            for d in 0..dim {
                let (x, y) = (moved.target_gradients[0][k * dim + d], base.target_gradients[0][i * dim + d]);
                prop_assert!((x - y).abs() < 1e-9 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn closs_ignores_positive_row_scale(seed in any::<u64>(), rows in 1usize..8, dim in 1usize..5, c in 0.01f64..100.0) {
        let mut r = rng(seed);
        let (a, b) = (random_patch(&mut r, rows, dim), random_patch(&mut r, rows, dim));
        let row = r.random_range(0..rows);
        let mut scaled = b.data.clone();
        for v in &mut scaled[row * dim..(row + 1) * dim] {
            *v *= c;
        }
        let b2 = Patch::new(rows, dim, scaled).unwrap();
        let l1 = closs(&[PatchPair { handle: a.clone(), target: b }], 0.2).unwrap().loss;
        let l2 = closs(&[PatchPair { handle: a, target: b2 }], 0.2).unwrap().loss;
        prop_assert!((l1 - l2).abs() < 1e-9 * l1.abs().max(1.0));
    }
}

#[test]
fn identical_single_row_patches_have_zero_gradient() {
    let mut r = rng(54);
    let g: Grid<f64> = random_grid64(&mut r, 5, 5, 3, -1.0, 1.0);
    let p = Patch::extract(&g, Pixel::new(2, 2), 0).unwrap();
    let out = closs(&[PatchPair { handle: p.clone(), target: p }], 0.07).unwrap();
    assert_eq!(out.loss, 0.0);
    assert!(out.target_gradients[0].iter().all(|&v| v.abs() < 1e-12));
}

#[test]
fn patch_extraction_reports_bounds() {
    let g = GridTensor::zeros(5, 5, 1);
    assert!(Patch::extract(&g, Pixel::new(0, 2), 1).is_err());
    assert_eq!(Patch::extract(&g, Pixel::new(2, 2), 2).unwrap().rows, 25);
}

/// Terminal cosine between the handle patch of the reference and the target
/// patch of the sampled latent.
pub fn toy_cosine(seed: u64, scale: f64) -> f64 {
    let s = NoiseSchedule::scaled_linear(50).unwrap();
    let toy = closs_toy(seed, 50);
    let zt = invert(&toy.z0_ref, 50, &toy.predictor, &s).unwrap();
    let params = GuidanceParams {
        scale,
        radius: toy.radius,
        ..Default::default()
    };
    let out = guided_sample(&zt, 50, &s, &toy.predictor, &toy.z0_ref, &[toy.pair], &params).unwrap();
    let hp = Patch::extract(&toy.z0_ref, toy.pair.handle.to_pixel(), toy.radius).unwrap();
    let tp = Patch::extract(&out.latent, toy.pair.target.to_pixel(), toy.radius).unwrap();
    patch_cosine(&hp, &tp)
}

#[test]
fn guidance_raises_terminal_cosine() {
    let wins = (0..20).filter(|&seed| toy_cosine(seed, 0.05) > toy_cosine(seed, 0.0)).count();
    assert!(wins >= 16, "{wins}/20");
}
