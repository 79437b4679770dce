#![allow(dead_code)]

pub mod suite;

use advnas_core::{Graph, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

/// Uniform values bounded away from zero, so ReLU-style kinks are never
/// within a finite-difference step.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Distinct values on a grid of spacing 1e-2, so max-pool windows have a
/// unique maximum separated by far more than the finite-difference step.
pub fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 1e-2).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    Tensor::new(shape.to_vec(), vals).unwrap()
}

/// Relative error `|a - b| / max(|a|, |b|)` in the Euclidean norm.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares autodiff gradients of `sum(probe * f(inputs))` against central
/// finite differences, returning the worst relative error over all inputs.
pub fn gradcheck<F>(inputs: &[Tensor<f64>], probe_seed: u64, f: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |ins: &[Tensor<f64>], grad: bool| -> (f64, Vec<Tensor<f64>>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone(), grad)).collect();
        let y = f(&mut g, &vars).expect("forward");
        let mut r = rng(probe_seed);
        let probe = uniform(&mut r, g.shape(y), -1.0, 1.0);
        let p = g.constant(probe);
        let prod = g.mul(y, p).unwrap();
        let loss = g.sum(prod);
        let value = g.value(loss).item();
        let mut grads = Vec::new();
        if grad {
            g.backward(loss).unwrap();
            grads = vars.iter().map(|v| g.grad(*v).unwrap().clone()).collect();
        }
        (value, grads)
    };
    let (_, analytic) = eval(inputs, true);
    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            *slot = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * FD_STEP);
        }
        worst = worst.max(rel_err(analytic[i].data(), &numeric));
    }
    worst
}
