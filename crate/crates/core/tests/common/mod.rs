//! Shared helpers for the integration tests: central finite differences
//! against the tape's analytic gradients, and random tensor generation.

// the gradcheck target uses only part of the suite
#[allow(dead_code)]
pub mod suite;

use auxrl::graph::{Tape, Var};
use auxrl::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_H: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rand_vec<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Random values bounded away from zero, for kinked ops like relu.
pub fn rand_vec_off_zero<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.gen_range(0.1..1.5)
        })
        .collect()
}

/// Checks the analytic gradient of `build` (a scalar-valued graph over the
/// given leaf tensors) against central finite differences on every input
/// coordinate. Returns the worst relative error seen.
pub fn gradcheck<F>(inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    // analytic pass
    let mut tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let loss = build(&mut tape, &leaves);
    assert_eq!(tape.value(loss).len(), 1, "gradcheck needs a scalar loss");
    let grads = tape.backward(loss).unwrap();

    let eval = |perturbed: &[Tensor]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.leaf(x)).collect();
        let l = build(&mut t, &vs);
        t.scalar_value(l)
    };

    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(leaves[i]);
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_H);
            let a = analytic.map_or(0.0, |g| g[j]);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    worst
}

/// Runs `gradcheck` and asserts the shared tolerance; returns the error so
/// callers can aggregate statistics.
pub fn assert_gradcheck<F>(what: &str, inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let err = gradcheck(inputs, build);
    assert!(err < GRAD_TOL, "{what}: relative gradient error {err:e} >= {GRAD_TOL:e}");
    err
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}
