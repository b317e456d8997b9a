//! Random small fixtures and a central-difference gradient oracle.

#![allow(dead_code)]

use dualpt_core::alignment::{
    compute_plans, loss_gradient_with_plans, total_loss_with_plans, ClassDescriptors, ContextBank,
    ObjectiveConfig,
};
use dualpt_core::numerics::{EmbeddingMatrix, Matrix};
use dualpt_core::sample::{Sample, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;

pub struct Fixture {
    pub batch: Vec<Sample>,
    pub bank: ContextBank,
    pub descriptors: ClassDescriptors,
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * (rng.gen::<f64>() * 2.0 - 1.0))
}

pub fn fixture(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = rng.gen_range(2..=3);
    let prompts = rng.gen_range(1..=2);
    let tokens = rng.gen_range(2..=4);
    let dim = rng.gen_range(3..=8);
    let context = gaussian_matrix(&mut rng, prompts, dim, 0.5);
    let anchors = gaussian_matrix(&mut rng, classes, dim, 1.0);
    let bank = ContextBank::new(context, anchors).unwrap();
    let batch = (0..3)
        .map(|i| {
            Sample::new(
                gaussian_matrix(&mut rng, tokens, dim, 1.0),
                i % classes,
                Split::Train,
            )
            .unwrap()
        })
        .collect();
    let descriptors = ClassDescriptors::new(
        (0..classes)
            .map(|_| {
                let e = rng.gen_range(1..=3);
                EmbeddingMatrix::new(gaussian_matrix(&mut rng, e, dim, 1.0)).unwrap()
            })
            .collect(),
    )
    .unwrap();
    Fixture {
        batch,
        bank,
        descriptors,
    }
}

pub fn finite_difference(f: &Fixture, cfg: &ObjectiveConfig) -> (Matrix, Matrix) {
    let plans = compute_plans(&f.batch, &f.bank, Some(&f.descriptors), cfg).unwrap();
    let analytic =
        loss_gradient_with_plans(&f.batch, &f.bank, Some(&f.descriptors), cfg, &plans).unwrap();
    let context = f.bank.context();
    let mut numeric = Matrix::zeros(context.rows(), context.cols());
    for i in 0..context.rows() {
        for j in 0..context.cols() {
            let eval = |delta: f64| {
                let mut c = context.clone();
                c[(i, j)] += delta;
                let bank = ContextBank::new(c, f.bank.anchors().clone()).unwrap();
                total_loss_with_plans(&f.batch, &bank, Some(&f.descriptors), cfg, &plans)
                    .unwrap()
                    .total
            };
            numeric[(i, j)] = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
        }
    }
    (analytic, numeric)
}

pub fn relative_error(a: &Matrix, b: &Matrix) -> f64 {
    let mut diff = a.clone();
    diff.add_scaled(-1.0, b).unwrap();
    diff.frobenius_norm() / a.frobenius_norm().max(b.frobenius_norm()).max(1e-8)
}
