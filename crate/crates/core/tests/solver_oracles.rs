mod common;

use common::linear_instance;
use multipen::data::{rng_from_seed, Dataset};
use multipen::enet::{enet_active_jacobian, fit_enet, threshold_fit};
use multipen::ridge::{fit_ridge, GroupedDesign};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Conjugate gradients on `(XᵀX/n + diag(λ)) θ = Xᵀy/n`.
fn conjugate_gradient(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = DVector::zeros(b.len());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = r.dot(&r);
    for _ in 0..10 * b.len() {
        if rs.sqrt() < 1e-15 {
            break;
        }
        let ap = a * &p;
        let alpha = rs / p.dot(&ap);
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let next = r.dot(&r);
        p = &r + &p * (next / rs);
        rs = next;
    }
    x
}

#[test]
fn ridge_closed_form_matches_iterative_minimiser() {
    let mut rng = rng_from_seed(1);
    for seed in 0..20 {
        let (data, _) = linear_instance(50, 8, 0.5, seed);
        let design = GroupedDesign::uniform(4, 2).unwrap();
        let lambda: Vec<f64> = (0..4).map(|_| 10f64.powf(rng.random_range(-3.0..1.0))).collect();
        let fit = fit_ridge(&data, &design, &lambda).unwrap();
        let n = data.n() as f64;
        let a = data.x().transpose() * data.x() / n + DMatrix::from_diagonal(&design.spread(&lambda));
        let b = data.x().transpose() * data.y() / n;
        let cg = conjugate_gradient(&a, &b);
        assert!((&fit.theta - cg).amax() < 1e-8);
    }
}

/// KKT violation recomputed from the raw data.
fn kkt_violation(data: &Dataset, design: &GroupedDesign, lambda: &[f64], w: f64, theta: &DVector<f64>) -> f64 {
    let n = data.n() as f64;
    let corr = data.x().transpose() * (data.y() - data.x() * theta) / n;
    (0..theta.len())
        .map(|i| {
            let l = lambda[design.group_of(i)];
            if theta[i] != 0.0 {
                (-corr[i] + l * (theta[i].signum() + w * theta[i])).abs()
            } else {
                (corr[i].abs() - l).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

fn random_enet(seed: u64) -> (Dataset, GroupedDesign, Vec<f64>, f64) {
    let (data, _) = linear_instance(40, 9, 0.5, 500 + seed);
    let design = GroupedDesign::new(vec![2, 3, 4]).unwrap();
    let mut rng = rng_from_seed(seed);
    let lambda: Vec<f64> = (0..3).map(|_| 10f64.powf(rng.random_range(-3.0..0.0))).collect();
    let w = 10f64.powf(rng.random_range(-1.0..1.0));
    (data, design, lambda, w)
}

#[test]
fn enet_kkt_certified_on_random_instances() {
    for seed in 0..50 {
        let (data, design, lambda, w) = random_enet(seed);
        let fit = fit_enet(&data, &design, &lambda, w).unwrap();
        assert!(fit.kkt_residual < 1e-8);
        assert!(kkt_violation(&data, &design, &lambda, w, &fit.theta) < 1e-8, "seed {seed}");
    }
}

/// Accelerated proximal gradient for the same criterion.
fn fista(data: &Dataset, design: &GroupedDesign, lambda: &[f64], w: f64) -> DVector<f64> {
    let n = data.n() as f64;
    let g = data.x().transpose() * data.x() / n;
    let b = data.x().transpose() * data.y() / n;
    let lw = design.spread(&lambda.iter().map(|l| l * w).collect::<Vec<_>>());
    let l1 = design.spread(lambda);
    let lip = nalgebra::SymmetricEigen::new(g.clone()).eigenvalues.max() + lw.max();
    let step = 1.0 / lip;
    let mut x = DVector::zeros(b.len());
    let mut y = x.clone();
    let mut t = 1.0_f64;
    for _ in 0..200_000 {
        let grad = &g * &y - &b + lw.component_mul(&y);
        let v = &y - grad * step;
        let next = DVector::from_fn(v.len(), |i, _| {
            let thr = step * l1[i];
            v[i].signum() * (v[i].abs() - thr).max(0.0)
        });
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = &next + (&next - &x) * ((t - 1.0) / t_next);
        let change = (&next - &x).amax();
        x = next;
        t = t_next;
        if change < 1e-15 {
            break;
        }
    }
    x
}

#[test]
fn enet_matches_proximal_gradient_oracle() {
    for seed in 0..10 {
        let (data, design, lambda, w) = random_enet(seed);
        let fit = fit_enet(&data, &design, &lambda, w).unwrap();
        let oracle = fista(&data, &design, &lambda, w);
        assert!((&fit.theta - oracle).amax() < 1e-8, "seed {seed}");
    }
}

#[test]
fn enet_objective_monotone_across_sweeps() {
    for seed in 0..20 {
        let (data, design, lambda, w) = random_enet(seed);
        let fit = fit_enet(&data, &design, &lambda, w).unwrap();
        let trace = &fit.objective_trace;
        assert_eq!(trace.len(), fit.sweeps + 1);
        for pair in trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-14 * pair[0].abs().max(1.0), "seed {seed}: {} -> {}", pair[0], pair[1]);
        }
        let y_sq = data.y().norm_squared() / data.n() as f64;
        assert!((fit.objective(&fit.theta, y_sq) - trace.last().unwrap()).abs() < 1e-12);
    }
}

#[test]
fn active_jacobian_predicts_first_order_change() {
    let mut checked = 0;
    for seed in 0..40 {
        let (data, design, lambda, w) = random_enet(seed);
        let fit = fit_enet(&data, &design, &lambda, w).unwrap();
        let Ok(jac) = enet_active_jacobian(&fit) else { continue };
        let mut rng = rng_from_seed(900 + seed);
        let delta: Vec<f64> = (0..3).map(|_| 1e-4 * rng.random_range(-1.0..1.0) * lambda[0].min(1.0)).collect();
        let moved: Vec<f64> = lambda.iter().zip(&delta).map(|(l, d)| l + d).collect();
        let next = fit_enet(&data, &design, &moved, w).unwrap();
        let same_pattern =
            next.theta.iter().zip(fit.theta.iter()).all(|(a, b)| a.signum() == b.signum() && (*a == 0.0) == (*b == 0.0));
        if !same_pattern {
            continue;
        }
        let predicted = &fit.theta + &jac * DVector::from_column_slice(&delta);
        assert!((predicted - &next.theta).amax() < 1e-6, "seed {seed}");
        checked += 1;
    }
    assert!(checked >= 20, "only {checked} instances kept their active set");
}

#[test]
fn orthogonal_groups_have_block_diagonal_jacobian() {
    // Columns of an 8×8 Sylvester–Hadamard matrix are mutually orthogonal.
    let n = 8;
    let hadamard = |i: usize, j: usize| if (i & j).count_ones().is_multiple_of(2) { 1.0 } else { -1.0 };
    let x = DMatrix::from_fn(n, 4, |i, j| hadamard(i, j + 1) * (1.0 + 0.5 * j as f64));
    let gram = x.transpose() * &x;
    for a in 0..2 {
        for b in 2..4 {
            assert!(gram[(a, b)].abs() < 1e-12);
        }
    }
    let theta = DVector::from_column_slice(&[1.0, 0.5, -0.8, 0.3]);
    let y = &x * theta;
    let data = Dataset::from_xy(x, y).unwrap();
    let design = GroupedDesign::uniform(2, 2).unwrap();
    let fit = fit_enet(&data, &design, &[0.01, 0.02], 1.0).unwrap();
    let jac = enet_active_jacobian(&fit).unwrap();
    for i in 0..2 {
        assert!(jac[(i, 1)].abs() < 1e-12);
        assert!(jac[(i + 2, 0)].abs() < 1e-12);
    }
    assert!(jac[(0, 0)] != 0.0 && jac[(2, 1)] != 0.0);
}

#[test]
fn threshold_is_order_independent() {
    let (data, design, lambda, w) = random_enet(3);
    let fit = fit_enet(&data, &design, &lambda, w).unwrap();
    let a = threshold_fit(&threshold_fit(&fit, 0.2).unwrap(), 0.5).unwrap();
    let b = threshold_fit(&threshold_fit(&fit, 0.5).unwrap(), 0.2).unwrap();
    assert_eq!(a.theta, b.theta);
    assert!(a.theta.iter().all(|v| v.abs() <= 0.2));
}
