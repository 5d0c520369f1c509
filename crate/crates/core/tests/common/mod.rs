#![allow(dead_code)]

use multipen::data::{generate_linear, rng_from_seed, Dataset};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Gaussian design with `y = Xθ* + σ·noise`, noise stored.
pub fn linear_instance(n: usize, p: usize, sigma: f64, seed: u64) -> (Dataset, DVector<f64>) {
    generate_linear(n, p, sigma, seed).unwrap()
}

/// Uniform design on `[0, 1]^J` with smooth additive truth and stored noise.
pub fn additive_instance(n: usize, dims: usize, sigma: f64, seed: u64) -> Dataset {
    let mut rng = rng_from_seed(seed);
    let x = DMatrix::from_fn(n, dims, |_, _| rng.random_range(0.0..1.0));
    let truth = DVector::from_fn(n, |i, _| (0..dims).map(|j| (4.0 * x[(i, j)] + j as f64).sin()).sum::<f64>());
    let noise = DVector::from_fn(n, |_, _| sigma * rng.sample::<f64, _>(StandardNormal));
    let y = &truth + &noise;
    Dataset::new(x, y, Some(truth), Some(noise), vec![(0.0, 1.0); dims]).unwrap()
}

pub fn random_log_uniform(rng: &mut impl Rng, lo: f64, hi: f64, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(lo.ln()..hi.ln()).exp()).collect()
}

/// Central difference of `f` in `log λ_j`, converted to `∂f/∂λ_j`.
pub fn log_central_difference(f: impl Fn(&[f64]) -> f64, lambda: &[f64], h: f64) -> Vec<f64> {
    (0..lambda.len())
        .map(|j| {
            let mut up = lambda.to_vec();
            let mut down = lambda.to_vec();
            up[j] *= h.exp();
            down[j] *= (-h).exp();
            (f(&up) - f(&down)) / (2.0 * h) / lambda[j]
        })
        .collect()
}

/// Fourth-order five-point difference in `log λ_j`, converted to `∂f/∂λ_j`.
pub fn log_five_point_difference(f: impl Fn(&[f64]) -> f64, lambda: &[f64], h: f64) -> Vec<f64> {
    (0..lambda.len())
        .map(|j| {
            let at = |k: f64| {
                let mut l = lambda.to_vec();
                l[j] *= (k * h).exp();
                f(&l)
            };
            (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h) / lambda[j]
        })
        .collect()
}

/// Largest componentwise error relative to the largest reference entry.
pub fn relative_error(got: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    got.iter().zip(reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
}

/// Golden-section search for a minimum of a unimodal function on `[a, b]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Minimiser of `f` over `[lo, hi]`: a dense grid locates the basin, golden
/// section refines it.
pub fn bracketed_minimum(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> (f64, f64) {
    let step = (hi - lo) / (points - 1) as f64;
    let (best, _) = (0..points)
        .map(|i| (i, f(lo + i as f64 * step)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let a = (lo + (best as f64 - 1.0) * step).max(lo);
    let b = (lo + (best as f64 + 1.0) * step).min(hi);
    let z = golden_section(&f, a, b, 1e-10);
    (z, f(z))
}
