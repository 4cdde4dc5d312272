//! Gradient-checking and random-input helpers shared by unit tests and the
//! acceptance suite.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::numerics::{GradTensor, Tape};
use crate::Result;

/// Central finite-difference step mandated by the gradient checks.
pub const FD_EPSILON: f64 = 1e-6;

/// Builds a loss from leaf tensors. The harness sums the returned tensor, so
/// the builder may return any shape.
pub type LossBuilder<'a> = dyn Fn(&Tape, &[GradTensor]) -> Result<GradTensor> + 'a;

/// Guarded relative error: `|a - n| / max(|a|, |n|, 0.01)`. The floor keeps
/// near-zero gradients from amplifying finite-difference noise while still
/// exposing sign and scale bugs.
pub fn guarded_rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-2)
}

/// Checks analytic gradients of `sum(build(inputs))` against central finite
/// differences for every entry of every input. Returns the worst guarded
/// relative error.
pub fn check_gradients(inputs: &[Array2<f64>], build: &LossBuilder) -> f64 {
    let tape = Tape::new();
    let leaves: Vec<GradTensor> =
        inputs.iter().map(|v| tape.leaf(v.clone()).expect("finite input")).collect();
    let out = build(&tape, &leaves).expect("forward pass");
    let loss = tape.sum_all(&out).expect("sum");
    let grads = tape.backward(&loss).expect("backward");

    let eval = |perturbed: &[Array2<f64>]| -> f64 {
        let tape = Tape::new();
        let consts: Vec<GradTensor> =
            perturbed.iter().map(|v| GradTensor::constant(v.clone())).collect();
        build(&tape, &consts).expect("forward pass").values().sum()
    };

    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let zero = Array2::zeros(input.dim());
        let analytic = grads.get(&leaves[i]).unwrap_or(&zero);
        for ((r, c), &a) in analytic.indexed_iter() {
            let mut work: Vec<Array2<f64>> = inputs.to_vec();
            work[i][[r, c]] = input[[r, c]] + FD_EPSILON;
            let plus = eval(&work);
            work[i][[r, c]] = input[[r, c]] - FD_EPSILON;
            let minus = eval(&work);
            let numeric = (plus - minus) / (2.0 * FD_EPSILON);
            worst = worst.max(guarded_rel_err(a, numeric));
        }
    }
    worst
}

/// Uniform matrix in `[lo, hi)`.
pub fn random_matrix(
    rng: &mut ChaCha20Rng,
    rows: usize,
    cols: usize,
    lo: f64,
    hi: f64,
) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| lo + (hi - lo) * rng.random::<f64>())
}

/// Random strictly-positive rows summing to one (softmax of a random matrix).
pub fn random_simplex_rows(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Array2<f64> {
    let mut m = random_matrix(rng, rows, cols, -2.0, 2.0);
    for mut row in m.rows_mut() {
        row.mapv_inplace(f64::exp);
        let s = row.sum();
        row /= s;
    }
    m
}
