//! Penalty-vector selection.
//!
//! The validation objective is `½‖y − ĝ(λ|T)‖²_V` (mean over validation rows).
//! Searches run over the free parameters of a [`TyingMap`] in log coordinates,
//! either exhaustively over a grid or by multistart local optimisation using
//! hypergradients from [`ModelFamily::prediction_jacobian`].

mod cv;
mod optim;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LambdaBox, SplitPlan, TyingMap};
use crate::{Error, Result};

pub use cv::{averaged_predict, retrain_full, tune_kfold, CvResult, KFoldObjective};
pub use optim::OptimizerSettings;

/// A penalised estimator indexed by a penalty vector of length
/// [`penalties`](ModelFamily::penalties).
pub trait ModelFamily: Sync {
    type Fit: Clone + Send + Sync;

    fn penalties(&self) -> usize;

    fn fit(&self, train: &Dataset, lambda: &[f64]) -> Result<Self::Fit>;

    fn predict(&self, fit: &Self::Fit, x: &[f64]) -> f64;

    fn predict_rows(&self, fit: &Self::Fit, x: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.nrows(),
            x.row_iter().map(|r| {
                let row: Vec<f64> = r.iter().copied().collect();
                self.predict(fit, &row)
            }),
        )
    }

    /// `∂ĝ(x_i)/∂λ_j` for every row of `x` (rows × J), from implicit
    /// differentiation of the training stationarity conditions. `None` when
    /// the family only supports derivative-free search.
    fn prediction_jacobian(&self, _fit: &Self::Fit, _x: &DMatrix<f64>) -> Option<Result<DMatrix<f64>>> {
        None
    }

    /// Whether [`prediction_jacobian`](ModelFamily::prediction_jacobian) is implemented.
    fn provides_jacobian(&self) -> bool {
        false
    }
}

/// `(1/2)(1/n_V) Σ (y_i − ĝ(x_i))²`.
pub fn validation_loss<F: ModelFamily>(family: &F, fit: &F::Fit, val: &Dataset) -> f64 {
    let pred = family.predict_rows(fit, val.x());
    half_mse(val.y(), &pred)
}

fn half_mse(y: &DVector<f64>, pred: &DVector<f64>) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    0.5 * (y - pred).norm_squared() / y.len() as f64
}

/// Loss and, optionally, its gradient with respect to the free parameters.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub gradient: Option<Vec<f64>>,
}

/// A validation-type criterion of the free penalty parameters.
pub trait HyperObjective: Sync {
    fn map(&self) -> &TyingMap;

    fn supports_gradient(&self) -> bool;

    fn evaluate(&self, free: &[f64], gradient: bool) -> Result<Evaluation>;
}

/// Validation loss of a model trained on `train` and scored on `val`.
pub struct SplitObjective<'a, F: ModelFamily> {
    pub family: &'a F,
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub map: &'a TyingMap,
}

impl<'a, F: ModelFamily> SplitObjective<'a, F> {
    pub fn new(family: &'a F, train: &'a Dataset, val: &'a Dataset, map: &'a TyingMap) -> Self {
        Self { family, train, val, map }
    }

    /// Loss and full-length (`J`) gradient at a full penalty vector.
    pub fn evaluate_full(&self, lambda: &[f64], gradient: bool) -> Result<(f64, Option<Vec<f64>>, F::Fit)> {
        let fit = self.family.fit(self.train, lambda)?;
        let pred = self.family.predict_rows(&fit, self.val.x());
        let loss = half_mse(self.val.y(), &pred);
        if !gradient {
            return Ok((loss, None, fit));
        }
        let jac = self
            .family
            .prediction_jacobian(&fit, self.val.x())
            .ok_or(Error::JacobianUnavailable)??;
        let resid = self.val.y() - pred;
        let nv = self.val.n() as f64;
        let grad = (jac.tr_mul(&resid) * (-1.0 / nv)).as_slice().to_vec();
        Ok((loss, Some(grad), fit))
    }
}

impl<F: ModelFamily> HyperObjective for SplitObjective<'_, F> {
    fn map(&self) -> &TyingMap {
        self.map
    }

    fn supports_gradient(&self) -> bool {
        self.family.provides_jacobian()
    }

    fn evaluate(&self, free: &[f64], gradient: bool) -> Result<Evaluation> {
        let lambda = self.map.expand(free)?;
        let (loss, full, _) = self.evaluate_full(&lambda, gradient)?;
        Ok(Evaluation { loss, gradient: full.map(|g| self.map.pull_back(&g)) })
    }
}

/// Gradient of the validation loss with respect to the free parameters at the
/// full penalty vector `lambda`.
pub fn hyper_gradient<F: ModelFamily>(
    family: &F,
    train: &Dataset,
    val: &Dataset,
    lambda: &[f64],
    map: &TyingMap,
) -> Result<Vec<f64>> {
    let obj = SplitObjective::new(family, train, val, map);
    let (_, grad, _) = obj.evaluate_full(lambda, true)?;
    Ok(map.pull_back(&grad.expect("gradient requested")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SearchMethod {
    /// Projected gradient descent with Armijo backtracking in `log λ`.
    #[default]
    GradientDescentLog,
    /// Nelder–Mead simplex in `log λ`, clamped to the box.
    NelderMeadLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub method: SearchMethod,
    /// Scalar starting values, each broadcast to every free parameter.
    pub starts: Vec<f64>,
    /// When set, exhaustive search over these free vectors replaces multistart.
    pub grid: Option<Vec<Vec<f64>>>,
    pub optimizer: OptimizerSettings,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            method: SearchMethod::GradientDescentLog,
            starts: vec![1.0, 0.1, 0.01],
            grid: None,
            optimizer: OptimizerSettings::default(),
        }
    }
}

impl TuneConfig {
    pub fn start_vectors(&self, k: usize) -> Vec<Vec<f64>> {
        self.starts.iter().map(|&s| vec![s; k]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub free: Vec<f64>,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartOutcome {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Outcome of a search over free penalty parameters, without a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub selected_free: Vec<f64>,
    pub selected_lambda: Vec<f64>,
    pub loss: f64,
    pub trace: Vec<TraceEntry>,
    pub per_start: Vec<StartOutcome>,
    /// Set when no start improved on its initial loss.
    pub warning: Option<String>,
}

impl SearchOutcome {
    pub fn converged(&self) -> bool {
        self.per_start.iter().any(|s| s.converged)
    }
}

#[derive(Debug, Clone)]
pub struct TuneResult<Fit> {
    pub selected_lambda: Vec<f64>,
    pub selected_free: Vec<f64>,
    pub val_loss: f64,
    pub trace: Vec<TraceEntry>,
    pub per_start: Vec<StartOutcome>,
    pub warning: Option<String>,
    pub fit: Fit,
}

impl<Fit> TuneResult<Fit> {
    fn from_outcome(outcome: SearchOutcome, fit: Fit) -> Self {
        Self {
            selected_lambda: outcome.selected_lambda,
            selected_free: outcome.selected_free,
            val_loss: outcome.loss,
            trace: outcome.trace,
            per_start: outcome.per_start,
            warning: outcome.warning,
            fit,
        }
    }

    pub fn converged(&self) -> bool {
        self.per_start.is_empty() || self.per_start.iter().any(|s| s.converged)
    }
}

/// Maps log coordinates back to penalties, landing exactly on the box faces.
fn to_lambda(z: &[f64], lambda_box: &LambdaBox) -> Vec<f64> {
    let (lo, hi) = (lambda_box.lambda_min.ln(), lambda_box.lambda_max.ln());
    z.iter()
        .map(|&v| {
            if v <= lo {
                lambda_box.lambda_min
            } else if v >= hi {
                lambda_box.lambda_max
            } else {
                lambda_box.clamp(v.exp())
            }
        })
        .collect()
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Grid point ordering: loss, then `‖λ‖₂`, then lexicographic.
fn better(a: &TraceEntry, b: &TraceEntry) -> bool {
    use std::cmp::Ordering;
    match a.loss.total_cmp(&b.loss) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => match norm2(&a.free).total_cmp(&norm2(&b.free)) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => a.free.iter().zip(&b.free).find_map(|(x, y)| match x.total_cmp(y) {
                Ordering::Equal => None,
                o => Some(o == Ordering::Less),
            }) == Some(true),
        },
    }
}

fn best_entry(trace: &[TraceEntry]) -> Option<&TraceEntry> {
    trace.iter().filter(|e| e.loss.is_finite()).fold(None, |best, e| match best {
        Some(b) if !better(e, b) => Some(b),
        _ => Some(e),
    })
}

/// Exhaustive search over `grid` (free vectors).
pub fn search_grid(objective: &dyn HyperObjective, grid: &[Vec<f64>]) -> Result<SearchOutcome> {
    if grid.is_empty() {
        return Err(Error::invalid("empty penalty grid"));
    }
    let mut trace = Vec::with_capacity(grid.len());
    for point in grid {
        let ev = objective.evaluate(point, false)?;
        trace.push(TraceEntry { free: point.clone(), loss: ev.loss });
    }
    let best = best_entry(&trace).ok_or_else(|| Error::invalid("no grid point produced a finite loss"))?.clone();
    Ok(SearchOutcome {
        selected_lambda: objective.map().expand(&best.free)?,
        selected_free: best.free,
        loss: best.loss,
        trace,
        per_start: Vec::new(),
        warning: None,
    })
}

/// Log-λ step of the finite-difference fallback.
const FD_STEP: f64 = 1e-6;

/// Multistart local search in `log λ` over the box.
pub fn search_multistart(
    objective: &dyn HyperObjective,
    lambda_box: &LambdaBox,
    starts: &[Vec<f64>],
    method: SearchMethod,
    settings: &OptimizerSettings,
) -> Result<SearchOutcome> {
    if starts.is_empty() {
        return Err(Error::invalid("multistart search needs at least one start"));
    }
    let k = objective.map().free();
    for s in starts {
        if s.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: s.len() });
        }
    }
    let method = if method == SearchMethod::GradientDescentLog && !objective.supports_gradient() {
        SearchMethod::NelderMeadLog
    } else {
        method
    };
    let lo = vec![lambda_box.lambda_min.ln(); k];
    let hi = vec![lambda_box.lambda_max.ln(); k];

    let mut trace = Vec::new();
    let mut per_start = Vec::with_capacity(starts.len());
    let mut any_improved = false;
    for start in starts {
        let z0: Vec<f64> = start.iter().map(|&s| lambda_box.clamp(s).ln()).collect();
        let mut local_trace = Vec::new();
        let mut f = |z: &[f64], grad: bool| -> Result<(f64, Option<Vec<f64>>)> {
            let free = to_lambda(z, lambda_box);
            match objective.evaluate(&free, grad) {
                Ok(ev) => {
                    local_trace.push(TraceEntry { free: free.clone(), loss: ev.loss });
                    // d/dz = λ ⊙ d/dλ
                    let g = ev.gradient.map(|g| g.iter().zip(&free).map(|(a, l)| a * l).collect());
                    Ok((ev.loss, g))
                }
                // Derivative undefined at an active-set breakpoint: central
                // differences in log λ instead.
                Err(Error::Breakpoint { .. }) => {
                    let loss = objective.evaluate(&free, false)?.loss;
                    local_trace.push(TraceEntry { free: free.clone(), loss });
                    let mut g = vec![0.0; z.len()];
                    for i in 0..z.len() {
                        let mut zp = z.to_vec();
                        let mut zm = z.to_vec();
                        zp[i] += FD_STEP;
                        zm[i] -= FD_STEP;
                        let fp = objective.evaluate(&to_lambda(&zp, lambda_box), false)?.loss;
                        let fm = objective.evaluate(&to_lambda(&zm, lambda_box), false)?.loss;
                        g[i] = (fp - fm) / (2.0 * FD_STEP);
                    }
                    Ok((loss, Some(g)))
                }
                Err(e) => Err(e),
            }
        };
        let outcome = match method {
            SearchMethod::GradientDescentLog => optim::projected_gradient_descent(&mut f, &z0, &lo, &hi, settings),
            SearchMethod::NelderMeadLog => optim::nelder_mead(&mut f, &z0, &lo, &hi, settings),
        };
        match outcome {
            Ok(local) => {
                any_improved |= local.improved;
                per_start.push(StartOutcome {
                    start: start.clone(),
                    end: to_lambda(&local.z, lambda_box),
                    loss: local.value,
                    iterations: local.iterations,
                    converged: local.converged,
                });
            }
            Err(e) => {
                if local_trace.is_empty() {
                    return Err(e);
                }
                per_start.push(StartOutcome {
                    start: start.clone(),
                    end: start.clone(),
                    loss: f64::INFINITY,
                    iterations: 0,
                    converged: false,
                });
            }
        }
        trace.extend(local_trace);
    }
    let best = best_entry(&trace).ok_or_else(|| Error::invalid("no start produced a finite loss"))?.clone();
    let degenerate = lambda_box.is_degenerate();
    Ok(SearchOutcome {
        selected_lambda: objective.map().expand(&best.free)?,
        selected_free: best.free,
        loss: best.loss,
        trace,
        per_start,
        warning: (!any_improved && !degenerate).then(|| "no start improved on its initial loss".to_string()),
    })
}

/// Grid search on a training/validation pair.
pub fn tune_grid<F: ModelFamily>(
    family: &F,
    train: &Dataset,
    val: &Dataset,
    grid: &[Vec<f64>],
    map: &TyingMap,
) -> Result<TuneResult<F::Fit>> {
    let obj = SplitObjective::new(family, train, val, map);
    let outcome = search_grid(&obj, grid)?;
    let fit = family.fit(train, &outcome.selected_lambda)?;
    Ok(TuneResult::from_outcome(outcome, fit))
}

/// Multistart local search on a training/validation pair.
pub fn tune_multistart<F: ModelFamily>(
    family: &F,
    train: &Dataset,
    val: &Dataset,
    lambda_box: &LambdaBox,
    map: &TyingMap,
    starts: &[Vec<f64>],
    method: SearchMethod,
    settings: &OptimizerSettings,
) -> Result<TuneResult<F::Fit>> {
    let obj = SplitObjective::new(family, train, val, map);
    let outcome = search_multistart(&obj, lambda_box, starts, method, settings)?;
    let fit = family.fit(train, &outcome.selected_lambda)?;
    Ok(TuneResult::from_outcome(outcome, fit))
}

/// Fits on the training part of `split` and selects λ on its validation part.
pub fn tune_train_val<F: ModelFamily>(
    family: &F,
    data: &Dataset,
    split: &SplitPlan,
    lambda_box: &LambdaBox,
    map: &TyingMap,
    config: &TuneConfig,
) -> Result<TuneResult<F::Fit>> {
    let (train, val) = split.apply(data);
    match &config.grid {
        Some(grid) => tune_grid(family, &train, &val, grid, map),
        None => tune_multistart(
            family,
            &train,
            &val,
            lambda_box,
            map,
            &config.start_vectors(map.free()),
            config.method,
            &config.optimizer,
        ),
    }
}
