//! Grouped elastic net: `½‖y − Xθ‖²_T + Σ_j λ_j (‖θ^{(j)}‖₁ + (w/2)‖θ^{(j)}‖²₂)`.

use nalgebra::{DMatrix, DVector};

use crate::bounds::{Lemma1Factor, LipschitzFactor, ResidualSource};
use crate::data::{Dataset, LambdaBox};
use crate::ridge::{group_feature_sq_norms, GroupedDesign, PenaltyReference};
use crate::tuner::ModelFamily;
use crate::{Error, Result};

/// Coordinate descent stops once no coordinate moves by more than this.
pub const CD_TOL: f64 = 1e-12;
pub const MAX_SWEEPS: usize = 100_000;
/// Certified bound on the KKT residual of a converged fit.
pub const KKT_TOL: f64 = 1e-8;
/// Distance from zero (and from a tight subgradient bound) treated as an
/// active-set breakpoint.
pub const BREAKPOINT_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct EnetFit {
    /// Coefficients, clipped to `±K₀'` when thresholded.
    pub theta: DVector<f64>,
    /// Coordinate-descent solution before any thresholding.
    pub raw_theta: DVector<f64>,
    pub lambda: Vec<f64>,
    pub w: f64,
    /// Nonzero coordinates of each group.
    pub active: Vec<Vec<usize>>,
    pub thresholded_at: Option<f64>,
    pub kkt_residual: f64,
    pub sweeps: usize,
    /// Penalised criterion at the start (θ = 0) and after every sweep.
    pub objective_trace: Vec<f64>,
    pub design: GroupedDesign,
    /// `XᵀX / n_T`.
    gram: DMatrix<f64>,
    /// `Xᵀy / n_T`.
    xty: DVector<f64>,
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

impl EnetFit {
    /// `(1/n_T) X_iᵀ(y − Xθ)` at the unthresholded solution.
    pub fn correlations(&self) -> DVector<f64> {
        &self.xty - &self.gram * &self.raw_theta
    }

    /// Penalised training criterion at `theta`.
    pub fn objective(&self, theta: &DVector<f64>, y_sq_mean: f64) -> f64 {
        objective(&self.gram, &self.xty, y_sq_mean, &self.design, &self.lambda, self.w, theta)
    }
}

fn objective(
    gram: &DMatrix<f64>,
    xty: &DVector<f64>,
    y_sq_mean: f64,
    design: &GroupedDesign,
    lambda: &[f64],
    w: f64,
    theta: &DVector<f64>,
) -> f64 {
    let loss = 0.5 * (y_sq_mean - 2.0 * xty.dot(theta) + theta.dot(&(gram * theta)));
    loss + enet_penalty(design, lambda, w, theta.as_slice())
}

/// `Σ_j λ_j (‖θ^{(j)}‖₁ + (w/2)‖θ^{(j)}‖²)`.
pub fn enet_penalty(design: &GroupedDesign, lambda: &[f64], w: f64, theta: &[f64]) -> f64 {
    (0..design.groups())
        .map(|j| {
            let block = &theta[design.columns(j)];
            lambda[j] * (block.iter().map(|v| v.abs()).sum::<f64>() + 0.5 * w * block.iter().map(|v| v * v).sum::<f64>())
        })
        .sum()
}

/// `max_i` of the KKT violation at `theta`.
fn kkt_residual(design: &GroupedDesign, lambda: &[f64], w: f64, theta: &DVector<f64>, corr: &DVector<f64>) -> f64 {
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

/// Cyclic coordinate descent with per-coordinate update
/// `θ_i ← S(ρ_i, λ_j) / (x_iᵀx_i/n_T + λ_j w)`.
pub fn fit_enet(train: &Dataset, design: &GroupedDesign, lambda: &[f64], w: f64) -> Result<EnetFit> {
    design.check(train, lambda)?;
    if let Some(l) = lambda.iter().find(|l| !(**l > 0.0)) {
        return Err(Error::invalid(format!("elastic-net penalties must be positive, got {l}")));
    }
    if !(w > 0.0 && w.is_finite()) {
        return Err(Error::invalid(format!("quadratic weight w must be positive, got {w}")));
    }
    let n = train.n() as f64;
    let x = train.x();
    let gram = x.transpose() * x / n;
    let xty = x.transpose() * train.y() / n;
    let p = design.p();

    let mut theta: DVector<f64> = DVector::zeros(p);
    // corr = Xᵀ(y − Xθ)/n, kept current through rank-one updates.
    let mut corr = xty.clone();
    let y_sq_mean = train.y().norm_squared() / n;
    // With corr current, θᵀGθ = θᵀ(Xᵀy/n − corr).
    let criterion = |theta: &DVector<f64>, corr: &DVector<f64>| {
        0.5 * (y_sq_mean - xty.dot(theta) - theta.dot(corr)) + enet_penalty(design, lambda, w, theta.as_slice())
    };
    let mut objective_trace = vec![criterion(&theta, &corr)];
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut max_change = 0.0_f64;
        for i in 0..p {
            let l = lambda[design.group_of(i)];
            let gii = gram[(i, i)];
            let rho = corr[i] + gii * theta[i];
            let new = soft_threshold(rho, l) / (gii + l * w);
            let delta = new - theta[i];
            if delta != 0.0 {
                corr.axpy(-delta, &gram.column(i), 1.0);
                theta[i] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        objective_trace.push(criterion(&theta, &corr));
        if max_change < CD_TOL {
            converged = true;
            break;
        }
    }
    let corr = &xty - &gram * &theta;
    let kkt = kkt_residual(design, lambda, w, &theta, &corr);
    if !converged || kkt > KKT_TOL {
        return Err(Error::NotConverged { sweeps, kkt_residual: kkt });
    }
    Ok(EnetFit {
        active: active_sets(design, &theta),
        raw_theta: theta.clone(),
        theta,
        lambda: lambda.to_vec(),
        w,
        thresholded_at: None,
        kkt_residual: kkt,
        sweeps,
        objective_trace,
        design: design.clone(),
        gram,
        xty,
    })
}

fn active_sets(design: &GroupedDesign, theta: &DVector<f64>) -> Vec<Vec<usize>> {
    (0..design.groups()).map(|j| design.columns(j).filter(|&i| theta[i] != 0.0).collect()).collect()
}

/// Clips every coefficient to `[−K₀', K₀']`.
pub fn threshold_fit(fit: &EnetFit, k0_prime: f64) -> Result<EnetFit> {
    if !(k0_prime > 0.0) {
        return Err(Error::invalid(format!("threshold K0' must be positive, got {k0_prime}")));
    }
    let mut out = fit.clone();
    out.theta = fit.theta.map(|v| v.signum() * v.abs().min(k0_prime));
    out.thresholded_at = Some(fit.thresholded_at.map_or(k0_prime, |t| t.min(k0_prime)));
    Ok(out)
}

/// `∂θ̂/∂λ` (`p × J`) on the active set: `−H_A⁻¹ V` with
/// `H_A = X_AᵀX_A/n_T + diag(λ_{j(i)} w)` and `V[i, j] = sign(θ_i) + wθ_i`
/// for active `i` in group `j`. Coordinates clipped by thresholding have zero
/// rows.
pub fn enet_active_jacobian(fit: &EnetFit) -> Result<DMatrix<f64>> {
    let design = &fit.design;
    let theta = &fit.raw_theta;
    let corr = fit.correlations();
    for i in 0..theta.len() {
        let l = fit.lambda[design.group_of(i)];
        let near_zero = theta[i].abs() < BREAKPOINT_TOL;
        let tight = (corr[i].abs() - l).abs() < BREAKPOINT_TOL.max(KKT_TOL * l.max(1.0));
        if (theta[i] != 0.0 && near_zero) || (theta[i] == 0.0 && tight) {
            return Err(Error::Breakpoint { coordinate: i });
        }
    }
    let active: Vec<usize> = (0..theta.len()).filter(|&i| theta[i] != 0.0).collect();
    let mut jac = DMatrix::zeros(theta.len(), design.groups());
    if active.is_empty() {
        return Ok(jac);
    }
    let a = active.len();
    let mut h = DMatrix::from_fn(a, a, |r, c| fit.gram[(active[r], active[c])]);
    let mut v = DMatrix::zeros(a, design.groups());
    for (r, &i) in active.iter().enumerate() {
        let j = design.group_of(i);
        h[(r, r)] += fit.lambda[j] * fit.w;
        v[(r, j)] = theta[i].signum() + fit.w * theta[i];
    }
    let chol = crate::linalg::spd_factor(h, "active-set Hessian")?;
    let d = -chol.solve(&v);
    for (r, &i) in active.iter().enumerate() {
        let clipped = fit.thresholded_at.is_some_and(|k| theta[i].abs() > k);
        if !clipped {
            jac.set_row(i, &d.row(r));
        }
    }
    Ok(jac)
}

/// `Σ_j (‖θ^{(j)}‖₁ + (w/2)‖θ^{(j)}‖²)`.
pub fn enet_penalty_total(design: &GroupedDesign, w: f64, theta: &[f64]) -> f64 {
    enet_penalty(design, &vec![1.0; design.groups()], w, theta)
}

/// Lemma-1 factor with `ℓ_j(x) = ‖x^{(j)}‖₂` and `m(T) = λ_min w`.
pub fn enet_lipschitz(
    train: &Dataset,
    design: &GroupedDesign,
    lambda_box: &LambdaBox,
    w: f64,
    reference: &PenaltyReference,
) -> Result<LipschitzFactor> {
    if !(w > 0.0) {
        return Err(Error::invalid("quadratic weight w must be positive"));
    }
    let n = train.n() as f64;
    let (eps_sq, penalty, source) = match reference {
        PenaltyReference::Known(theta_star) => {
            if theta_star.len() != design.p() {
                return Err(Error::DimensionMismatch { expected: design.p(), got: theta_star.len() });
            }
            let (eps, source) = match train.noise() {
                Some(e) => (e.clone(), ResidualSource::StoredNoise),
                None => (train.y() - train.x() * theta_star, ResidualSource::Known),
            };
            (eps.norm_squared() / n, enet_penalty_total(design, w, theta_star.as_slice()), source)
        }
        PenaltyReference::PlugIn => {
            let pilot = fit_enet(train, design, &vec![lambda_box.lambda_min; design.groups()], w)?;
            let r = train.y() - train.x() * &pilot.theta;
            (r.norm_squared() / n, enet_penalty_total(design, w, pilot.theta.as_slice()), ResidualSource::PlugIn)
        }
    };
    let feature_design = design.clone();
    Lemma1Factor::new(
        lambda_box.lambda_min * w,
        lambda_box,
        eps_sq,
        lambda_box.lambda_max * penalty,
        group_feature_sq_norms(train, design),
        source,
        move |x: &[f64]| feature_design.group_norms(x),
    )
    .map(LipschitzFactor::Lemma1)
}

#[derive(Debug, Clone)]
pub struct EnetFamily {
    pub design: GroupedDesign,
    pub w: f64,
    pub threshold: Option<f64>,
}

impl EnetFamily {
    pub fn new(design: GroupedDesign, w: f64) -> Self {
        Self { design, w, threshold: None }
    }
}

impl ModelFamily for EnetFamily {
    type Fit = EnetFit;

    fn penalties(&self) -> usize {
        self.design.groups()
    }

    fn fit(&self, train: &Dataset, lambda: &[f64]) -> Result<EnetFit> {
        let fit = fit_enet(train, &self.design, lambda, self.w)?;
        match self.threshold {
            Some(k) => threshold_fit(&fit, k),
            None => Ok(fit),
        }
    }

    fn predict(&self, fit: &EnetFit, x: &[f64]) -> f64 {
        x.iter().zip(fit.theta.iter()).map(|(a, b)| a * b).sum()
    }

    fn predict_rows(&self, fit: &EnetFit, x: &DMatrix<f64>) -> DVector<f64> {
        x * &fit.theta
    }

    fn prediction_jacobian(&self, fit: &EnetFit, x: &DMatrix<f64>) -> Option<Result<DMatrix<f64>>> {
        Some(enet_active_jacobian(fit).map(|jac| x * jac))
    }

    fn provides_jacobian(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_points() -> (Dataset, GroupedDesign) {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let y = DVector::from_column_slice(&[2.0, 2.0]);
        (Dataset::from_xy(x, y).unwrap(), GroupedDesign::uniform(1, 1).unwrap())
    }

    #[test]
    fn single_coordinate_examples() {
        let (d, g) = two_points();
        let fit = fit_enet(&d, &g, &[1.0], 1.0).unwrap();
        assert!((fit.theta[0] - 0.5).abs() < 1e-12);
        let jac = enet_active_jacobian(&fit).unwrap();
        assert!((jac[(0, 0)] + 0.75).abs() < 1e-12);

        let zero = fit_enet(&d, &g, &[3.0], 1.0).unwrap();
        assert_eq!(zero.theta[0], 0.0);
        assert_eq!(enet_active_jacobian(&zero).unwrap()[(0, 0)], 0.0);

        let big_w = fit_enet(&d, &g, &[1.0], 1e9).unwrap();
        assert!(big_w.theta[0].abs() < 1e-8);
    }

    #[test]
    fn breakpoint_detected() {
        // |ρ| = 2 = λ exactly.
        let (d, g) = two_points();
        let fit = fit_enet(&d, &g, &[2.0], 1.0).unwrap();
        assert!(matches!(enet_active_jacobian(&fit), Err(Error::Breakpoint { coordinate: 0 })));
    }

    #[test]
    fn threshold_examples() {
        let (d, g) = two_points();
        let fit = fit_enet(&d, &g, &[1.0], 1.0).unwrap();
        assert!((threshold_fit(&fit, 0.3).unwrap().theta[0] - 0.3).abs() < 1e-15);
        let mut neg = fit.clone();
        neg.theta[0] = -5.0;
        assert_eq!(threshold_fit(&neg, 2.0).unwrap().theta[0], -2.0);
        assert_eq!(threshold_fit(&fit, 10.0).unwrap().theta, fit.theta);
        let once = threshold_fit(&neg, 2.0).unwrap();
        assert_eq!(threshold_fit(&once, 2.0).unwrap().theta, once.theta);
        assert!(threshold_fit(&fit, 0.0).is_err());
    }

    #[test]
    fn invalid_arguments() {
        let (d, g) = two_points();
        assert!(fit_enet(&d, &g, &[0.0], 1.0).is_err());
        assert!(fit_enet(&d, &g, &[1.0], 0.0).is_err());
    }

    #[test]
    fn lipschitz_zero_at_origin_and_monotone_in_w() {
        let x = DMatrix::from_fn(6, 2, |i, j| ((i + 2 * j) as f64).sin());
        let y = DVector::from_fn(6, |i, _| i as f64 * 0.3);
        let d = Dataset::from_xy(x, y).unwrap();
        let g = GroupedDesign::uniform(2, 1).unwrap();
        let b = LambdaBox::new(0.01, 1.0, 2).unwrap();
        let theta = DVector::from_column_slice(&[0.5, -0.2]);
        let f1 = enet_lipschitz(&d, &g, &b, 1.0, &PenaltyReference::Known(theta.clone())).unwrap();
        assert_eq!(f1.eval(&[0.0, 0.0]), 0.0);
        let f2 = enet_lipschitz(&d, &g, &b, 2.0, &PenaltyReference::Known(theta)).unwrap();
        // P_j grows with w, m(T) doubles: the factor still does not increase.
        assert!(f2.eval(&[1.0, 1.0]) <= f1.eval(&[1.0, 1.0]) * (1.0 + 1e-12));
    }
}
