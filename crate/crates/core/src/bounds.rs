//! Lipschitz-in-λ factors, metric-entropy and oracle-inequality remainder
//! calculators, and empirical checks of the Lipschitz property.
//!
//! The calculators return bound *shapes*: every unnamed absolute constant is
//! an explicit input (default 1) and no value here is a certified constant.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{rng_from_seed, Dataset, LambdaBox, TyingMap};
use crate::tuner::{search_grid, search_multistart, HyperObjective, ModelFamily, SplitObjective, TuneConfig};
use crate::{Error, Result};

/// Where `‖ε‖²_T` (and `C*_Λ`) were taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResidualSource {
    /// Stored simulation noise.
    StoredNoise,
    /// Residuals against known population coefficients.
    Known,
    /// Residuals and penalties of a pilot fit; labelled "plug-in" in reports.
    PlugIn,
}

type FeatureNorms = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// `C_Λ(x|T) = (1/(m(T) λ_min)) √((‖ε‖²_T + 2C*_Λ) Σ_j ‖ℓ_j‖²_T ℓ_j²(x^{(j)}))`.
#[derive(Clone)]
pub struct Lemma1Factor {
    pub m_t: f64,
    pub lambda_min: f64,
    pub eps_sq: f64,
    pub c_star: f64,
    /// `‖ℓ_j‖²_T` for each penalty group.
    pub ell_sq_norms: Vec<f64>,
    pub source: ResidualSource,
    features: Arc<FeatureNorms>,
}

impl fmt::Debug for Lemma1Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Lemma1Factor")
            .field("m_t", &self.m_t)
            .field("lambda_min", &self.lambda_min)
            .field("eps_sq", &self.eps_sq)
            .field("c_star", &self.c_star)
            .field("ell_sq_norms", &self.ell_sq_norms)
            .field("source", &self.source)
            .finish_non_exhaustive()
    }
}

impl Lemma1Factor {
    pub fn new(
        m_t: f64,
        lambda_box: &LambdaBox,
        eps_sq: f64,
        c_star: f64,
        ell_sq_norms: Vec<f64>,
        source: ResidualSource,
        features: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(m_t > 0.0) {
            return Err(Error::Singular(format!("Hessian is not positive definite at λ_min (m(T) = {m_t:e})")));
        }
        Ok(Self {
            m_t,
            lambda_min: lambda_box.lambda_min,
            eps_sq,
            c_star,
            ell_sq_norms,
            source,
            features: Arc::new(features),
        })
    }

    /// `ℓ_j(x^{(j)})` for every group.
    pub fn feature_norms(&self, x: &[f64]) -> Vec<f64> {
        (self.features)(x)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        lemma1_lipschitz(self.m_t, self.lambda_min, self.eps_sq, self.c_star, &self.ell_sq_norms, &self.feature_norms(x))
    }
}

/// Evaluates the parametric additive Lipschitz factor from its ingredients.
pub fn lemma1_lipschitz(m_t: f64, lambda_min: f64, eps_sq: f64, c_star: f64, ell_sq_norms: &[f64], ell_x: &[f64]) -> f64 {
    let weighted: f64 = ell_sq_norms.iter().zip(ell_x).map(|(n2, l)| n2 * l * l).sum();
    ((eps_sq + 2.0 * c_star) * weighted).sqrt() / (m_t * lambda_min)
}

#[derive(Debug, Clone)]
pub enum LipschitzFactor {
    Lemma1(Lemma1Factor),
    /// A factor constant in `x`, such as the closed-form Sobolev bound.
    Constant { value: f64, label: &'static str },
}

impl LipschitzFactor {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            LipschitzFactor::Lemma1(f) => f.eval(x),
            LipschitzFactor::Constant { value, .. } => *value,
        }
    }

    pub fn m_t(&self) -> Option<f64> {
        match self {
            LipschitzFactor::Lemma1(f) => Some(f.m_t),
            LipschitzFactor::Constant { .. } => None,
        }
    }

    pub fn c_star(&self) -> Option<f64> {
        match self {
            LipschitzFactor::Lemma1(f) => Some(f.c_star),
            LipschitzFactor::Constant { .. } => None,
        }
    }

    pub fn source(&self) -> Option<ResidualSource> {
        match self {
            LipschitzFactor::Lemma1(f) => Some(f.source),
            LipschitzFactor::Constant { .. } => None,
        }
    }

    /// `‖C_Λ(·|T)‖_V`: root mean square over the rows of `x`.
    pub fn empirical_norm(&self, x: &DMatrix<f64>) -> f64 {
        if x.nrows() == 0 {
            return 0.0;
        }
        let ss: f64 = x
            .row_iter()
            .map(|r| {
                let row: Vec<f64> = r.iter().copied().collect();
                self.eval(&row).powi(2)
            })
            .sum();
        (ss / x.nrows() as f64).sqrt()
    }
}

/// Metric-entropy bound `J log((4‖C‖Δ + 2u)/u)` of the fitted-model class.
pub fn lambda_entropy(u: f64, dims: usize, c_norm: f64, delta_lambda: f64) -> Result<f64> {
    if !(u > 0.0) {
        return Err(Error::invalid("entropy radius u must be positive"));
    }
    Ok(dims as f64 * ((4.0 * c_norm * delta_lambda + 2.0 * u) / u).ln())
}

/// `cR (J log(‖C‖_V Δ_Λ n + 1))^{1/2}`, valid for `R > 1/n`.
pub fn entropy_integral(r: f64, dims: usize, c_norm: f64, delta_lambda: f64, n: usize, c: f64) -> Result<f64> {
    if !(r > 1.0 / n as f64) {
        return Err(Error::invalid(format!("radius {r} must exceed 1/n = {}", 1.0 / n as f64)));
    }
    Ok(c * r * (dims as f64 * (c_norm * delta_lambda * n as f64 + 1.0).ln()).sqrt())
}

/// Scalar inputs to the train/validation and cross-validation bound shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub dims: usize,
    pub n: usize,
    pub n_train: usize,
    pub n_val: usize,
    /// `Δ_Λ = λ_max − λ_min`.
    pub delta_lambda: f64,
    /// `‖C_Λ(·|T)‖_V`.
    pub c_norm: f64,
    /// Oracle risk `min_λ ‖g* − ĝ(λ|T)‖²_V`.
    pub oracle_risk: f64,
    pub c: f64,
    pub a: f64,
    pub k0: f64,
    pub sigma0: f64,
    pub h_tilde: f64,
    pub c1: f64,
    pub c_k0b: f64,
}

impl Default for BoundInputs {
    fn default() -> Self {
        Self {
            dims: 1,
            n: 1,
            n_train: 1,
            n_val: 1,
            delta_lambda: 0.0,
            c_norm: 0.0,
            oracle_risk: 0.0,
            c: 1.0,
            a: 1.0,
            k0: 1.0,
            sigma0: 1.0,
            h_tilde: 1.0,
            c1: 1.0,
            c_k0b: 1.0,
        }
    }
}

impl BoundInputs {
    fn check_common(&self) -> Result<()> {
        if self.dims == 0 || self.n == 0 || self.n_val == 0 {
            return Err(Error::invalid("J, n and n_V must be positive"));
        }
        if self.delta_lambda < 0.0 || self.c_norm < 0.0 || self.oracle_risk < 0.0 {
            return Err(Error::invalid("Δ_Λ, ‖C‖ and the oracle risk must be non-negative"));
        }
        Ok(())
    }
}

/// Smallest `δ²` allowed by the train/validation oracle inequality:
/// `c · max(A, √(A R̃))` with `A = J log(‖C‖_V Δ_Λ n + 1) / n_V`.
pub fn theorem1_delta2(inputs: &BoundInputs) -> Result<f64> {
    inputs.check_common()?;
    if !(inputs.c > 0.0) {
        return Err(Error::invalid("constant c must be positive"));
    }
    let a = inputs.dims as f64 * (inputs.c_norm * inputs.delta_lambda * inputs.n as f64 + 1.0).ln() / inputs.n_val as f64;
    Ok(inputs.c * a.max((a * inputs.oracle_risk).sqrt()))
}

/// Remainder of the averaged K-fold oracle inequality:
/// `c₁((1+a)/a)² (J log n_V / n_V) K₀ [log(Δ_Λ c_{K₀,b} n σ₀ + 1) + 1] h̃`,
/// with `Δ_Λ` replaced by `max(Δ_Λ, 1)`.
pub fn cv_remainder(inputs: &BoundInputs) -> Result<f64> {
    inputs.check_common()?;
    if !(inputs.a > 0.0) {
        return Err(Error::invalid(format!("a must be positive, got {}", inputs.a)));
    }
    for (name, v) in [("K0", inputs.k0), ("sigma0", inputs.sigma0), ("h_tilde", inputs.h_tilde), ("c1", inputs.c1), ("c_K0b", inputs.c_k0b)] {
        if !(v > 0.0) {
            return Err(Error::invalid(format!("{name} must be positive, got {v}")));
        }
    }
    let delta = inputs.delta_lambda.max(1.0);
    let nv = inputs.n_val as f64;
    let ratio = (1.0 + inputs.a) / inputs.a;
    Ok(inputs.c1
        * ratio
        * ratio
        * (inputs.dims as f64 * nv.ln() / nv)
        * inputs.k0
        * ((delta * inputs.c_k0b * inputs.n as f64 * inputs.sigma0 + 1.0).ln() + 1.0)
        * inputs.h_tilde)
}

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzReport {
    pub m_t: Option<f64>,
    pub c_star: Option<f64>,
    pub source: Option<ResidualSource>,
    /// `(x, C_Λ(x|T))` for every test point.
    pub per_point: Vec<(Vec<f64>, f64)>,
    pub empirical_max_ratio: f64,
    pub pairs_tested: usize,
}

/// Largest `|ĝ(λ¹)(x) − ĝ(λ²)(x)| / (C_Λ(x) ‖λ¹ − λ²‖₂)` over test points, or
/// `None` for a degenerate pair.
pub fn pair_ratio<F: ModelFamily>(
    family: &F,
    train: &Dataset,
    lambda1: &[f64],
    lambda2: &[f64],
    test_points: &DMatrix<f64>,
    c_values: &[f64],
) -> Result<Option<f64>> {
    let dl = lambda1.iter().zip(lambda2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    if dl == 0.0 {
        return Ok(None);
    }
    let p1 = family.predict_rows(&family.fit(train, lambda1)?, test_points);
    let p2 = family.predict_rows(&family.fit(train, lambda2)?, test_points);
    let mut worst = 0.0_f64;
    for i in 0..test_points.nrows() {
        let num = (p1[i] - p2[i]).abs();
        let ratio = if c_values[i] > 0.0 {
            num / (c_values[i] * dl)
        } else if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(ratio);
    }
    Ok(Some(worst))
}

/// Samples `pairs` penalty pairs uniformly in the box, refits at both and
/// records the worst ratio of prediction change to the Lipschitz bound.
pub fn empirical_lipschitz_ratio<F: ModelFamily>(
    family: &F,
    train: &Dataset,
    lambda_box: &LambdaBox,
    test_points: &DMatrix<f64>,
    pairs: usize,
    seed: u64,
    factor: &LipschitzFactor,
) -> Result<LipschitzReport> {
    if pairs == 0 {
        return Err(Error::invalid("need at least one λ pair"));
    }
    let per_point: Vec<(Vec<f64>, f64)> = test_points
        .row_iter()
        .map(|r| {
            let x: Vec<f64> = r.iter().copied().collect();
            let c = factor.eval(&x);
            (x, c)
        })
        .collect();
    let c_values: Vec<f64> = per_point.iter().map(|p| p.1).collect();
    let mut rng = rng_from_seed(seed);
    let mut worst = 0.0_f64;
    let mut tested = 0;
    let mut draws = 0;
    while tested < pairs {
        draws += 1;
        if draws > 100 * pairs {
            return Err(Error::invalid("penalty box too small to draw distinct pairs"));
        }
        let l1 = lambda_box.sample(&mut rng);
        let l2 = lambda_box.sample(&mut rng);
        if let Some(r) = pair_ratio(family, train, &l1, &l2, test_points, &c_values)? {
            worst = worst.max(r);
            tested += 1;
        }
    }
    Ok(LipschitzReport {
        m_t: factor.m_t(),
        c_star: factor.c_star(),
        source: factor.source(),
        per_point,
        empirical_max_ratio: worst,
        pairs_tested: tested,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcessResult {
    /// `‖ĝ(λ̂) − g*‖²_V − min_λ ‖ĝ(λ) − g*‖²_V`.
    pub excess: f64,
    /// `‖ĝ(λ̂) − g*‖²_V`.
    pub selected_loss: f64,
    pub oracle_loss: f64,
    pub oracle_free: Vec<f64>,
    pub oracle_lambda: Vec<f64>,
}

/// Excess validation loss of `lambda_hat` (free parameters) against the best
/// penalty found for the noise-free truth. The oracle search is the same
/// search as `config` describes, with `lambda_hat` added as a start (or grid
/// point), so the excess is never negative.
pub fn excess_validation_loss<F: ModelFamily>(
    family: &F,
    train: &Dataset,
    val: &Dataset,
    lambda_hat: &[f64],
    lambda_box: &LambdaBox,
    map: &TyingMap,
    config: &TuneConfig,
) -> Result<ExcessResult> {
    let truth_val = val.with_truth_as_response()?;
    let obj = SplitObjective::new(family, train, &truth_val, map);
    let selected = obj.evaluate(lambda_hat, false)?.loss;
    let outcome = match &config.grid {
        Some(grid) => {
            let mut grid = grid.clone();
            grid.push(lambda_hat.to_vec());
            search_grid(&obj, &grid)?
        }
        None => {
            let mut starts = config.start_vectors(map.free());
            starts.push(lambda_hat.to_vec());
            search_multistart(&obj, lambda_box, &starts, config.method, &config.optimizer)?
        }
    };
    let (oracle_half, oracle_free) = if outcome.loss < selected {
        (outcome.loss, outcome.selected_free)
    } else {
        (selected, lambda_hat.to_vec())
    };
    Ok(ExcessResult {
        excess: 2.0 * (selected - oracle_half),
        selected_loss: 2.0 * selected,
        oracle_loss: 2.0 * oracle_half,
        oracle_lambda: obj.map().expand(&oracle_free)?,
        oracle_free,
    })
}
