//! Grouped ridge regression with one penalty per covariate group.
//!
//! The training criterion is
//! `½‖y − Xθ‖²_T + Σ_j (λ_j/2)‖θ^{(j)}‖²`, where `‖·‖²_T` is the mean over
//! training rows. The minimiser solves
//! `(XᵀX/n_T + diag_group(λ)) θ = Xᵀy/n_T`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::{Lemma1Factor, LipschitzFactor, ResidualSource};
use crate::data::{Dataset, LambdaBox};
use crate::linalg::{min_eigenvalue, spd_factor};
use crate::tuner::ModelFamily;
use crate::{Error, Result};

/// Contiguous partition of the design columns into penalty groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupedDesign {
    group_sizes: Vec<usize>,
    column_group: Vec<usize>,
}

impl GroupedDesign {
    pub fn new(group_sizes: Vec<usize>) -> Result<Self> {
        if group_sizes.is_empty() || group_sizes.contains(&0) {
            return Err(Error::invalid("group sizes must be positive"));
        }
        let column_group = group_sizes
            .iter()
            .enumerate()
            .flat_map(|(j, &s)| std::iter::repeat_n(j, s))
            .collect();
        Ok(Self { group_sizes, column_group })
    }

    /// `groups` groups of equal size `size`.
    pub fn uniform(groups: usize, size: usize) -> Result<Self> {
        Self::new(vec![size; groups])
    }

    pub fn groups(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn p(&self) -> usize {
        self.column_group.len()
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    pub fn group_of(&self, column: usize) -> usize {
        self.column_group[column]
    }

    /// Column range of group `j`.
    pub fn columns(&self, j: usize) -> std::ops::Range<usize> {
        let start: usize = self.group_sizes[..j].iter().sum();
        start..start + self.group_sizes[j]
    }

    /// Per-column penalty vector.
    pub fn spread(&self, lambda: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.p(), self.column_group.iter().map(|&g| lambda[g]))
    }

    /// Euclidean norm of each group's block of `x`.
    pub fn group_norms(&self, x: &[f64]) -> Vec<f64> {
        (0..self.groups())
            .map(|j| x[self.columns(j)].iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }

    pub(crate) fn check(&self, data: &Dataset, lambda: &[f64]) -> Result<()> {
        if data.dims() != self.p() {
            return Err(Error::DimensionMismatch { expected: self.p(), got: data.dims() });
        }
        if lambda.len() != self.groups() {
            return Err(Error::DimensionMismatch { expected: self.groups(), got: lambda.len() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RidgeFit {
    pub theta: DVector<f64>,
    pub lambda: Vec<f64>,
    /// `XᵀX / n_T`.
    pub gram: DMatrix<f64>,
    /// `Xᵀy / n_T`.
    pub xty: DVector<f64>,
    pub n_train: usize,
    pub design: GroupedDesign,
}

impl RidgeFit {
    pub fn hessian(&self) -> DMatrix<f64> {
        let mut h = self.gram.clone();
        for (i, l) in self.design.spread(&self.lambda).iter().enumerate() {
            h[(i, i)] += l;
        }
        h
    }

    /// `‖(gram + diag(λ))θ − Xᵀy/n_T‖_∞`.
    pub fn optimality_residual(&self) -> f64 {
        (self.hessian() * &self.theta - &self.xty).amax()
    }
}

pub fn fit_ridge(train: &Dataset, design: &GroupedDesign, lambda: &[f64]) -> Result<RidgeFit> {
    design.check(train, lambda)?;
    if lambda.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(Error::invalid("ridge penalties must be finite and non-negative"));
    }
    let n = train.n() as f64;
    let x = train.x();
    let gram = x.tr_mul(x) / n;
    let xty = x.tr_mul(train.y()) / n;
    let mut h = gram.clone();
    for (i, l) in design.spread(lambda).iter().enumerate() {
        h[(i, i)] += l;
    }
    let chol = spd_factor(h, "ridge normal equations")?;
    let theta = chol.solve(&xty);
    Ok(RidgeFit { theta, lambda: lambda.to_vec(), gram, xty, n_train: train.n(), design: design.clone() })
}

pub fn ridge_predict(fit: &RidgeFit, x: &[f64]) -> Result<f64> {
    if x.len() != fit.theta.len() {
        return Err(Error::DimensionMismatch { expected: fit.theta.len(), got: x.len() });
    }
    Ok(x.iter().zip(fit.theta.iter()).map(|(a, b)| a * b).sum())
}

/// `∂θ̂/∂λ` (p × J): column `j` is `−H⁻¹ v_j` with `v_j` the group-`j` block of θ̂.
pub fn ridge_lambda_jacobian(fit: &RidgeFit) -> Result<DMatrix<f64>> {
    let chol = spd_factor(fit.hessian(), "ridge Hessian")?;
    let p = fit.theta.len();
    let groups = fit.design.groups();
    let mut v = DMatrix::zeros(p, groups);
    for i in 0..p {
        v[(i, fit.design.group_of(i))] = fit.theta[i];
    }
    Ok(-chol.solve(&v))
}

/// Ridge penalty `P_j(θ) = ½‖θ^{(j)}‖²` summed over groups.
pub fn ridge_penalty_total(design: &GroupedDesign, theta: &[f64]) -> f64 {
    (0..design.groups())
        .map(|j| 0.5 * theta[design.columns(j)].iter().map(|v| v * v).sum::<f64>())
        .sum()
}

/// Where `C*_Λ` and `‖ε‖²_T` come from when building a Lipschitz factor.
#[derive(Debug, Clone)]
pub enum PenaltyReference {
    /// Known population coefficients (simulation). The noise is taken from
    /// the dataset when stored, otherwise as `y − Xθ*`.
    Known(DVector<f64>),
    /// Plug-in: residuals and penalties of the fit at `λ_min·1`.
    PlugIn,
}

/// Lipschitz factor `x ↦ C_Λ(x|T)` for grouped ridge with `ℓ_j(x) = ‖x^{(j)}‖₂`
/// and `m(T)` the smallest eigenvalue of `XᵀX/n_T + λ_min I`.
pub fn ridge_lipschitz(
    train: &Dataset,
    design: &GroupedDesign,
    lambda_box: &LambdaBox,
    reference: &PenaltyReference,
) -> Result<LipschitzFactor> {
    let groups = design.groups();
    let at_min = fit_ridge(train, design, &vec![lambda_box.lambda_min; groups])?;
    let m_t = min_eigenvalue(&at_min.hessian());
    let (eps_sq, penalty, source) = match reference {
        PenaltyReference::Known(theta_star) => {
            if theta_star.len() != design.p() {
                return Err(Error::DimensionMismatch { expected: design.p(), got: theta_star.len() });
            }
            let eps = match train.noise() {
                Some(e) => e.clone(),
                None => train.y() - train.x() * theta_star,
            };
            let source = if train.noise().is_some() { ResidualSource::StoredNoise } else { ResidualSource::Known };
            (eps.norm_squared() / train.n() as f64, ridge_penalty_total(design, theta_star.as_slice()), source)
        }
        PenaltyReference::PlugIn => {
            let r = train.y() - train.x() * &at_min.theta;
            (r.norm_squared() / train.n() as f64, ridge_penalty_total(design, at_min.theta.as_slice()), ResidualSource::PlugIn)
        }
    };
    let ell_sq_norms = group_feature_sq_norms(train, design);
    let feature_design = design.clone();
    Lemma1Factor::new(
        m_t,
        lambda_box,
        eps_sq,
        lambda_box.lambda_max * penalty,
        ell_sq_norms,
        source,
        move |x: &[f64]| feature_design.group_norms(x),
    )
    .map(LipschitzFactor::Lemma1)
}

/// `‖ℓ_j‖²_T`: mean over training rows of `‖x_i^{(j)}‖²`.
pub(crate) fn group_feature_sq_norms(train: &Dataset, design: &GroupedDesign) -> Vec<f64> {
    let n = train.n() as f64;
    (0..design.groups())
        .map(|j| {
            let cols = design.columns(j);
            train.x().columns(cols.start, cols.len()).iter().map(|v| v * v).sum::<f64>() / n
        })
        .collect()
}

/// Grouped ridge as a tunable model family.
#[derive(Debug, Clone)]
pub struct RidgeFamily {
    pub design: GroupedDesign,
}

impl RidgeFamily {
    pub fn new(design: GroupedDesign) -> Self {
        Self { design }
    }
}

impl ModelFamily for RidgeFamily {
    type Fit = RidgeFit;

    fn penalties(&self) -> usize {
        self.design.groups()
    }

    fn fit(&self, train: &Dataset, lambda: &[f64]) -> Result<RidgeFit> {
        fit_ridge(train, &self.design, lambda)
    }

    fn predict(&self, fit: &RidgeFit, x: &[f64]) -> f64 {
        x.iter().zip(fit.theta.iter()).map(|(a, b)| a * b).sum()
    }

    fn predict_rows(&self, fit: &RidgeFit, x: &DMatrix<f64>) -> DVector<f64> {
        x * &fit.theta
    }

    fn prediction_jacobian(&self, fit: &RidgeFit, x: &DMatrix<f64>) -> Option<Result<DMatrix<f64>>> {
        Some(ridge_lambda_jacobian(fit).map(|jac| x * jac))
    }

    fn provides_jacobian(&self) -> bool {
        true
    }
}
