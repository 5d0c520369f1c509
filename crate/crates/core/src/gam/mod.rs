//! Additive smoothing splines with one Sobolev penalty per component.
//!
//! Each coordinate is mapped affinely onto `[0, 1]`; component `j` is
//! `g_j(u) = α_{1j} u + Σ_i θ_{ij} R(u_{ij}, u) − c_j`, centred over the
//! training rows, and the criterion is
//! `½‖y − α₀ − Σ_j g_j‖²_T + ½ Σ_j λ_j θ_jᵀ K_j θ_j`.
//!
//! At the optimum every `θ_j` equals `r / (n_T λ_j)` with `r` the training
//! residual, so the fit reduces to an `n_T × n_T` SPD system in `r` plus a
//! `J × J` system for the linear coefficients.

mod spline;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::bounds::{Lemma1Factor, LipschitzFactor, ResidualSource};
use crate::data::{Dataset, LambdaBox};
use crate::linalg::{min_eigenvalue, spd_factor, spectral_norm};
use crate::tuner::ModelFamily;
use crate::{Error, Result};

pub use spline::{spline_diagnostics, SplineDiagnostics};

/// Upper clamp for rescaled coordinates of points beyond the declared bounds.
pub const RESCALE_CLAMP: f64 = 1.05;

/// Reproducing kernel of the second-order Sobolev space on `[0, ∞)` with
/// `f(0) = f'(0) = 0`: `st(s∧t) − ((s+t)/2)(s∧t)² + (s∧t)³/3`.
pub fn sobolev_kernel(s: f64, t: f64) -> Result<f64> {
    if s < 0.0 || t < 0.0 || s.is_nan() || t.is_nan() {
        return Err(Error::invalid(format!("kernel arguments must be non-negative, got ({s}, {t})")));
    }
    Ok(kernel(s, t))
}

#[inline]
fn kernel(s: f64, t: f64) -> f64 {
    let m = s.min(t);
    s * t * m - 0.5 * (s + t) * m * m + m * m * m / 3.0
}

/// Affine map of one coordinate onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rescale {
    pub lo: f64,
    pub hi: f64,
}

impl Rescale {
    pub fn apply(&self, x: f64) -> f64 {
        ((x - self.lo) / (self.hi - self.lo)).clamp(0.0, RESCALE_CLAMP)
    }
}

#[derive(Debug, Clone)]
pub struct GamFit {
    /// Intercept; equals the training mean of `y`.
    pub alpha0: f64,
    pub alpha1: DVector<f64>,
    /// `n_T × J` representer coefficients.
    pub theta: DMatrix<f64>,
    /// `n_T × J` rescaled (and tie-jittered) training covariates.
    pub knots: DMatrix<f64>,
    pub rescale: Vec<Rescale>,
    pub grams: Vec<DMatrix<f64>>,
    pub lambda: Vec<f64>,
    /// Training mean of the uncentred component, subtracted in `component`.
    pub offsets: Vec<f64>,
    state: SolverState,
}

#[derive(Debug, Clone)]
struct SolverState {
    /// Residual system with the column-centred knots as border.
    saddle: Saddle,
    residual: DVector<f64>,
    knot_means: DVector<f64>,
    /// Column means of each `K_j`.
    gram_means: Vec<DVector<f64>>,
}

impl GamFit {
    pub fn dims(&self) -> usize {
        self.alpha1.len()
    }

    pub fn n_train(&self) -> usize {
        self.knots.nrows()
    }

    /// `u ↦ Σ_i θ_{ij} R(u_{ij}, u)` on the rescaled axis.
    pub fn nonlinear_part(&self, j: usize, u: f64) -> f64 {
        self.knots.column(j).iter().zip(self.theta.column(j).iter()).map(|(&k, &t)| t * kernel(k, u)).sum()
    }

    /// Centred component `ĝ_j` on the rescaled axis.
    pub fn component(&self, j: usize, u: f64) -> f64 {
        self.alpha1[j] * u + self.nonlinear_part(j, u) - self.offsets[j]
    }

    /// Intercept of the uncentred parametrisation `α₀ − Σ_j c_j`.
    pub fn raw_intercept(&self) -> f64 {
        self.alpha0 - self.offsets.iter().sum::<f64>()
    }

    /// Fitted values at the training rows.
    pub fn fitted(&self) -> DVector<f64> {
        let n = self.n_train();
        DVector::from_fn(n, |i, _| {
            self.alpha0 + (0..self.dims()).map(|j| self.component(j, self.knots[(i, j)])).sum::<f64>()
        })
    }

    pub fn rescaled(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.rescale).map(|(&v, r)| r.apply(v)).collect()
    }

    /// Feature vector `(u, R(u_{1j}, u), …, R(u_{n_T j}, u))` of component `j`.
    pub fn features(&self, j: usize, u: f64) -> DVector<f64> {
        let n = self.n_train();
        DVector::from_fn(n + 1, |i, _| if i == 0 { u } else { kernel(self.knots[(i - 1, j)], u) })
    }

    /// Gradient of the training criterion with respect to
    /// `(α₀_raw, α₁, θ_{·1}, …, θ_{·J})`, normalised by the largest term.
    pub fn stationarity_residual(&self, y: &DVector<f64>) -> f64 {
        let n = self.n_train() as f64;
        let r = y - self.fitted();
        let mut worst = (r.sum() / n).abs();
        let mut scale = y.amax().max(1.0);
        for j in 0..self.dims() {
            let u = self.knots.column(j);
            worst = worst.max((u.dot(&r) / n).abs());
            let kr = &self.grams[j] * &r / n;
            let pen = &self.grams[j] * self.theta.column(j) * self.lambda[j];
            scale = scale.max(kr.amax());
            worst = worst.max((pen - kr).amax());
        }
        worst / scale
    }
}

/// Maps training covariates onto `[0, 1]`, spreading exact ties by
/// `1e-9` per tied rank so that knot spacings stay positive.
fn rescale_knots(x: &DMatrix<f64>, bounds: &[(f64, f64)]) -> (DMatrix<f64>, Vec<Rescale>) {
    let rescale: Vec<Rescale> = bounds.iter().map(|&(lo, hi)| Rescale { lo, hi }).collect();
    let mut knots = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| rescale[j].apply(x[(i, j)]));
    for j in 0..x.ncols() {
        let mut order: Vec<usize> = (0..x.nrows()).collect();
        order.sort_by(|&a, &b| knots[(a, j)].total_cmp(&knots[(b, j)]));
        for w in 1..order.len() {
            let (prev, cur) = (order[w - 1], order[w]);
            if knots[(cur, j)] <= knots[(prev, j)] {
                knots[(cur, j)] = knots[(prev, j)] + 1e-9;
            }
        }
    }
    (knots, rescale)
}

fn gram(knots: &DMatrix<f64>, j: usize) -> DMatrix<f64> {
    let u = knots.column(j);
    let n = u.len();
    let mut k = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let v = kernel(u[a], u[b]);
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    k
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(m.ncols(), |j, _| m.column(j).mean())
}

/// Centres the columns of `m` (that is, `C m`).
fn center_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let means = column_means(m);
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] - means[j])
}

/// The bordered system `A r + Z a = b`, `Zᵀ r = 0`, with `A` SPD.
#[derive(Debug, Clone)]
struct Saddle {
    a: DMatrix<f64>,
    a_chol: Cholesky<f64, Dyn>,
    s_chol: Cholesky<f64, Dyn>,
    z: DMatrix<f64>,
}

impl Saddle {
    fn new(a: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        let a_chol = spd_factor(a.clone(), "GAM residual system")?;
        let s = z.transpose() * a_chol.solve(&z);
        let s_chol = spd_factor((&s + s.transpose()) * 0.5, "linear part (collinear covariates)")?;
        Ok(Self { a, a_chol, s_chol, z })
    }

    /// `A r + Z a = b`, `Zᵀ r = c` by block elimination.
    fn eliminate(&self, b: &DVector<f64>, c: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let ainv_b = self.a_chol.solve(b);
        let coef = self.s_chol.solve(&(self.z.transpose() * &ainv_b - c));
        let r = self.a_chol.solve(&(b - &self.z * &coef));
        (r, coef)
    }

    /// Block elimination followed by two steps of iterative refinement.
    fn solve(&self, b: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let zero = DVector::zeros(self.z.ncols());
        let (mut r, mut coef) = self.eliminate(b, &zero);
        for _ in 0..2 {
            let res_b = b - &self.a * &r - &self.z * &coef;
            let res_c = -(self.z.transpose() * &r);
            let (dr, dc) = self.eliminate(&res_b, &res_c);
            r += dr;
            coef += dc;
        }
        (r, coef)
    }
}

pub fn fit_gam(train: &Dataset, lambda: &[f64], bounds: &[(f64, f64)]) -> Result<GamFit> {
    let dims = train.dims();
    if lambda.len() != dims {
        return Err(Error::DimensionMismatch { expected: dims, got: lambda.len() });
    }
    if bounds.len() != dims {
        return Err(Error::DimensionMismatch { expected: dims, got: bounds.len() });
    }
    if let Some(l) = lambda.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(Error::invalid(format!("GAM penalties must be positive and finite, got {l}")));
    }
    if bounds.iter().any(|(lo, hi)| !(lo < hi)) {
        return Err(Error::invalid("each bound pair needs lo < hi"));
    }
    let n = train.n();
    if n < 3 {
        return Err(Error::invalid("GAM fit needs at least three training rows"));
    }
    let nf = n as f64;
    let (knots, rescale) = rescale_knots(train.x(), bounds);
    let grams: Vec<DMatrix<f64>> = (0..dims).map(|j| gram(&knots, j)).collect();

    // M = Σ_j K_j / (n λ_j), then A = I + C M C.
    let mut m = DMatrix::zeros(n, n);
    for (k, &l) in grams.iter().zip(lambda) {
        m += k * (1.0 / (nf * l));
    }
    let cm = center_rows(&m);
    let cmc = center_rows(&cm.transpose()).transpose();
    let mut a = cmc;
    for i in 0..n {
        a[(i, i)] += 1.0;
    }
    let a = (&a + a.transpose()) * 0.5;
    let knot_means = column_means(&knots);
    let saddle = Saddle::new(a, center_rows(&knots))?;

    let alpha0 = train.y().mean();
    let yc = train.y().add_scalar(-alpha0);
    let (residual, alpha1) = saddle.solve(&yc);

    let mut theta = DMatrix::zeros(n, dims);
    for j in 0..dims {
        theta.set_column(j, &(&residual / (nf * lambda[j])));
    }
    let gram_means: Vec<DVector<f64>> = grams.iter().map(column_means).collect();
    let offsets = (0..dims)
        .map(|j| alpha1[j] * knot_means[j] + gram_means[j].dot(&theta.column(j)))
        .collect();

    Ok(GamFit {
        alpha0,
        alpha1,
        theta,
        knots,
        rescale,
        grams,
        lambda: lambda.to_vec(),
        offsets,
        state: SolverState { saddle, residual, knot_means, gram_means },
    })
}

pub fn gam_predict(fit: &GamFit, x: &[f64]) -> Result<f64> {
    if x.len() != fit.dims() {
        return Err(Error::DimensionMismatch { expected: fit.dims(), got: x.len() });
    }
    Ok(predict_unchecked(fit, x))
}

fn predict_unchecked(fit: &GamFit, x: &[f64]) -> f64 {
    let u = fit.rescaled(x);
    fit.alpha0 + u.iter().enumerate().map(|(j, &uj)| fit.component(j, uj)).sum::<f64>()
}

/// Derivatives of the residual and linear coefficients in `λ_l`:
/// `A dr + Z dα = C K_l C r / (n λ_l²)`, `Zᵀ dr = 0`.
fn residual_derivatives(fit: &GamFit) -> Vec<(DVector<f64>, DVector<f64>)> {
    let n = fit.n_train() as f64;
    let st = &fit.state;
    (0..fit.dims())
        .map(|l| {
            let kr = &fit.grams[l] * &st.residual;
            let b = kr.add_scalar(-kr.mean()) / (n * fit.lambda[l] * fit.lambda[l]);
            st.saddle.solve(&b)
        })
        .collect()
}

/// `∂(α₁, θ_{·1}, …, θ_{·J}) / ∂λ`, rows ordered as listed
/// (`J + J·n_T` rows, `J` columns).
pub fn gam_lambda_jacobian(fit: &GamFit) -> DMatrix<f64> {
    let dims = fit.dims();
    let n = fit.n_train();
    let nf = n as f64;
    let mut jac = DMatrix::zeros(dims + dims * n, dims);
    for (l, (dr, da)) in residual_derivatives(fit).into_iter().enumerate() {
        for j in 0..dims {
            jac[(j, l)] = da[j];
            for i in 0..n {
                let mut v = dr[i] / (nf * fit.lambda[j]);
                if j == l {
                    v -= fit.state.residual[i] / (nf * fit.lambda[l] * fit.lambda[l]);
                }
                jac[(dims + j * n + i, l)] = v;
            }
        }
    }
    jac
}

fn prediction_jacobian(fit: &GamFit, x: &DMatrix<f64>) -> DMatrix<f64> {
    let dims = fit.dims();
    let nf = fit.n_train() as f64;
    let derivs = residual_derivatives(fit);
    let st = &fit.state;
    let mut out = DMatrix::zeros(x.nrows(), dims);
    for (row, xr) in x.row_iter().enumerate() {
        let raw: Vec<f64> = xr.iter().copied().collect();
        let u = fit.rescaled(&raw);
        // Centred kernel features k_j(u) − mean_i K_j[i, ·].
        let kc: Vec<DVector<f64>> = (0..dims)
            .map(|j| {
                DVector::from_fn(fit.n_train(), |i, _| kernel(fit.knots[(i, j)], u[j]) - st.gram_means[j][i])
            })
            .collect();
        for (l, (dr, da)) in derivs.iter().enumerate() {
            let mut v = 0.0;
            for j in 0..dims {
                v += (u[j] - st.knot_means[j]) * da[j];
                v += kc[j].dot(dr) / (nf * fit.lambda[j]);
            }
            v -= kc[l].dot(&st.residual) / (nf * fit.lambda[l] * fit.lambda[l]);
            out[(row, l)] = v;
        }
    }
    out
}

/// Closed-form Sobolev bound: the constant `c` multiplies `Σ_j h_j(T)^{-2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SobolevClosedForm {
    pub c: f64,
    /// Exponent with `λ_min = n^{-t_min}`.
    pub t_min: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GamLipschitzMode {
    /// Lemma-1 factor of the finite-dimensional parametrisation, with `m(T)`
    /// the smallest eigenvalue of the full Hessian at `λ_min·1`.
    Lemma1Numeric,
    /// Reporting-only closed form.
    SobolevClosedForm(SobolevClosedForm),
}

/// `(J‖(XᵀX)⁻¹Xᵀ‖₂ + Σ_j c/h_j²) √J n^{2t_min+1} ‖y‖_T`.
pub fn sobolev_closed_form(
    x_rescaled: &DMatrix<f64>,
    h_min: &[f64],
    y: &DVector<f64>,
    params: &SobolevClosedForm,
) -> Result<f64> {
    let dims = x_rescaled.ncols() as f64;
    let xtx = x_rescaled.transpose() * x_rescaled;
    let chol = spd_factor(xtx, "XᵀX")?;
    let pinv = chol.solve(&x_rescaled.transpose());
    let curvature: f64 = h_min.iter().map(|h| params.c / (h * h)).sum();
    let y_norm = (y.norm_squared() / y.len() as f64).sqrt();
    Ok((dims * spectral_norm(&pinv) + curvature)
        * dims.sqrt()
        * (params.n as f64).powf(2.0 * params.t_min + 1.0)
        * y_norm)
}

/// Lipschitz factor for the GAM family. `Lemma1Numeric` builds the full
/// `(1+J+J·n_T)`-dimensional Hessian once and takes `‖ε‖²_T` from stored
/// noise when present, otherwise from the fit at `λ_min`; `C*` always uses
/// the penalties of that pilot fit.
pub fn gam_lipschitz(
    train: &Dataset,
    bounds: &[(f64, f64)],
    lambda_box: &LambdaBox,
    mode: GamLipschitzMode,
) -> Result<LipschitzFactor> {
    let dims = train.dims();
    let pilot = fit_gam(train, &vec![lambda_box.lambda_min; dims], bounds)?;
    match mode {
        GamLipschitzMode::SobolevClosedForm(params) => {
            let diag = spline_diagnostics(&pilot)?;
            let value = sobolev_closed_form(&pilot.knots, &diag.h_min, train.y(), &params)?;
            Ok(LipschitzFactor::Constant { value, label: "sobolev-closed-form" })
        }
        GamLipschitzMode::Lemma1Numeric => {
            let n = pilot.n_train();
            let nf = n as f64;
            let p = 1 + dims + dims * n;
            let mut features = DMatrix::zeros(n, p);
            features.column_mut(0).fill(1.0);
            for j in 0..dims {
                features.set_column(1 + j, &pilot.knots.column(j));
                features.columns_mut(1 + dims + j * n, n).copy_from(&pilot.grams[j]);
            }
            let mut hessian = features.transpose() * &features / nf;
            for j in 0..dims {
                let off = 1 + dims + j * n;
                let mut block = hessian.view_mut((off, off), (n, n));
                block += &pilot.grams[j] * lambda_box.lambda_min;
            }
            let m_t = min_eigenvalue(&hessian);

            let (eps_sq, source) = match train.noise() {
                Some(e) => (e.norm_squared() / nf, ResidualSource::StoredNoise),
                None => ((train.y() - pilot.fitted()).norm_squared() / nf, ResidualSource::PlugIn),
            };
            let penalty: f64 = (0..dims)
                .map(|j| 0.5 * pilot.theta.column(j).dot(&(&pilot.grams[j] * pilot.theta.column(j))))
                .sum();
            let ell_sq_norms: Vec<f64> = (0..dims)
                .map(|j| {
                    (0..n).map(|i| pilot.features(j, pilot.knots[(i, j)]).norm_squared()).sum::<f64>() / nf
                })
                .collect();
            let knots = pilot.knots.clone();
            let rescale = pilot.rescale.clone();
            Lemma1Factor::new(
                m_t,
                lambda_box,
                eps_sq,
                lambda_box.lambda_max * penalty,
                ell_sq_norms,
                source,
                move |x: &[f64]| {
                    x.iter()
                        .enumerate()
                        .map(|(j, &v)| {
                            let u = rescale[j].apply(v);
                            (u * u + knots.column(j).iter().map(|&k| kernel(k, u).powi(2)).sum::<f64>()).sqrt()
                        })
                        .collect()
                },
            )
            .map(LipschitzFactor::Lemma1)
        }
    }
}

/// The GAM as a tunable model family over fixed coordinate bounds.
#[derive(Debug, Clone)]
pub struct GamFamily {
    pub bounds: Vec<(f64, f64)>,
}

impl GamFamily {
    pub fn new(bounds: Vec<(f64, f64)>) -> Self {
        Self { bounds }
    }
}

impl ModelFamily for GamFamily {
    type Fit = GamFit;

    fn penalties(&self) -> usize {
        self.bounds.len()
    }

    fn fit(&self, train: &Dataset, lambda: &[f64]) -> Result<GamFit> {
        fit_gam(train, lambda, &self.bounds)
    }

    fn predict(&self, fit: &GamFit, x: &[f64]) -> f64 {
        predict_unchecked(fit, x)
    }

    fn prediction_jacobian(&self, fit: &GamFit, x: &DMatrix<f64>) -> Option<Result<DMatrix<f64>>> {
        Some(Ok(prediction_jacobian(fit, x)))
    }

    fn provides_jacobian(&self) -> bool {
        true
    }
}
