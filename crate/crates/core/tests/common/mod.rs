//! Shared test utilities: the central-difference gradient checker and a few
//! deterministic data generators. Everything here is independent of the
//! autodiff implementation it verifies — losses for the finite-difference
//! side are recomputed from plain forward passes.

use dudotrans_core::grad::{Scalar, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

pub fn uniform_values<T: Scalar>(n: usize, rng: &mut ChaCha12Rng) -> Vec<T> {
    (0..n)
        .map(|_| T::from_f64(2.0 * rng.random::<f64>() - 1.0))
        .collect()
}

pub fn uniform_tensor<T: Scalar>(shape: &[usize], rng: &mut ChaCha12Rng) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), uniform_values(n, rng)).unwrap()
}

/// Scalar probe loss: sum of the op output weighted by fixed random
/// coefficients, so every output element influences the check.
fn probe_loss<T: Scalar>(output: &Tensor<T>, weights: &[T]) -> f64 {
    output
        .data()
        .iter()
        .zip(weights)
        .map(|(&y, &w)| y.to_f64() * w.to_f64())
        .sum()
}

/// Verify reverse-mode gradients of `op` against central differences for
/// every element of every input.
///
/// `op` maps the given inputs to one output tensor; the loss is a fixed
/// random weighting of the output. Relative error uses a floor tied to the
/// RMS gradient so near-zero entries compare on the op's own scale.
pub fn grad_check<T: Scalar>(
    name: &str,
    shapes: &[Vec<usize>],
    seed: u64,
    h: f64,
    tol: f64,
    op: impl Fn(&mut Tape<T>, &[Tensor<T>]) -> Tensor<T>,
) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let values: Vec<Vec<T>> = shapes
        .iter()
        .map(|s| uniform_values(s.iter().product(), &mut rng))
        .collect();

    // one forward pass to size the probe weights
    let out_numel = {
        let mut tape = Tape::new();
        let inputs: Vec<Tensor<T>> = shapes
            .iter()
            .zip(&values)
            .map(|(s, v)| Tensor::from_vec(s.clone(), v.clone()).unwrap())
            .collect();
        op(&mut tape, &inputs).numel()
    };
    let weights: Vec<T> = uniform_values(out_numel, &mut rng);

    // reverse-mode gradients
    let params: Vec<Tensor<T>> = shapes
        .iter()
        .zip(&values)
        .map(|(s, v)| Tensor::param(s.clone(), v.clone()).unwrap())
        .collect();
    let mut tape = Tape::new();
    let leaves: Vec<Tensor<T>> = params.iter().map(|p| tape.leaf(p)).collect();
    let output = op(&mut tape, &leaves);
    assert_eq!(output.numel(), out_numel, "{name}: output size changed");
    let w_tensor = Tensor::from_vec(vec![out_numel], weights.clone()).unwrap();
    let flat = output.reshape(vec![out_numel]).unwrap();
    let weighted = tape.mul(&flat, &w_tensor).unwrap();
    let mean = tape.mean_all(&weighted).unwrap();
    let loss = tape.scale(&mean, out_numel as f64).unwrap();
    let grads = tape.backward(&loss).unwrap();

    // plain forward evaluation for the finite-difference side
    let eval = |values: &[Vec<T>]| -> f64 {
        let mut tape = Tape::new();
        let inputs: Vec<Tensor<T>> = shapes
            .iter()
            .zip(values)
            .map(|(s, v)| Tensor::from_vec(s.clone(), v.clone()).unwrap())
            .collect();
        probe_loss(&op(&mut tape, &inputs), &weights)
    };

    let mut all_ad: Vec<f64> = Vec::new();
    for (i, p) in params.iter().enumerate() {
        let g = grads
            .get(p)
            .unwrap_or_else(|| panic!("{name}: input {i} received no gradient"));
        all_ad.extend(g.iter().map(|v| v.to_f64()));
    }
    let rms = (all_ad.iter().map(|g| g * g).sum::<f64>() / all_ad.len() as f64)
        .sqrt()
        .max(1e-12);

    let mut cursor = 0;
    for (i, p) in params.iter().enumerate() {
        let g = grads.get(p).unwrap();
        for j in 0..p.numel() {
            let ad = g[j].to_f64();
            let mut bumped = values.clone();
            bumped[i][j] = T::from_f64(values[i][j].to_f64() + h);
            let plus = eval(&bumped);
            bumped[i][j] = T::from_f64(values[i][j].to_f64() - h);
            let minus = eval(&bumped);
            let fd = (plus - minus) / (2.0 * h);
            let denom = ad.abs().max(fd.abs()).max(1e-3 * rms);
            let rel = (ad - fd).abs() / denom;
            assert!(
                rel < tol,
                "{name}: input {i} element {j}: ad={ad:.6e} fd={fd:.6e} rel={rel:.3e} (tol {tol:.0e})"
            );
            cursor += 1;
        }
    }
    assert!(cursor > 0, "{name}: nothing checked");
}

/// Convenience wrapper running the same op in f32 (loose tolerance) and f64
/// (tight tolerance) test modes.
pub fn grad_check_both_modes(
    name: &str,
    shapes: &[Vec<usize>],
    seed: u64,
    op32: impl Fn(&mut Tape<f32>, &[Tensor<f32>]) -> Tensor<f32>,
    op64: impl Fn(&mut Tape<f64>, &[Tensor<f64>]) -> Tensor<f64>,
) {
    grad_check::<f32>(&format!("{name} (f32)"), shapes, seed, 1e-2, 1e-3, op32);
    grad_check::<f64>(&format!("{name} (f64)"), shapes, seed, 1e-5, 1e-6, op64);
}
