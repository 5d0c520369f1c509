use serde::Serialize;

use super::{
    search_grid, search_multistart, Evaluation, HyperObjective, ModelFamily, SplitObjective, StartOutcome,
    TraceEntry, TuneConfig,
};
use crate::data::{Dataset, FoldPlan, LambdaBox, TyingMap};
use crate::{Error, Result};

/// Mean held-out loss over the folds of a [`FoldPlan`].
pub struct KFoldObjective<'a, F: ModelFamily> {
    family: &'a F,
    parts: Vec<(Dataset, Dataset)>,
    map: &'a TyingMap,
}

impl<'a, F: ModelFamily> KFoldObjective<'a, F> {
    pub fn new(family: &'a F, data: &Dataset, folds: &FoldPlan, map: &'a TyingMap) -> Result<Self> {
        if folds.k() < 2 {
            return Err(Error::invalid("cross-validation needs at least two folds"));
        }
        let parts = (0..folds.k())
            .map(|k| (data.subset(&folds.complement(k)), data.subset(&folds.folds[k])))
            .collect();
        Ok(Self { family, parts, map })
    }

    /// Per-fold held-out losses and fits at a full penalty vector.
    pub fn fold_losses(&self, lambda: &[f64]) -> Result<(Vec<f64>, Vec<F::Fit>)> {
        let mut losses = Vec::with_capacity(self.parts.len());
        let mut fits = Vec::with_capacity(self.parts.len());
        for (train, held_out) in &self.parts {
            let obj = SplitObjective::new(self.family, train, held_out, self.map);
            let (loss, _, fit) = obj.evaluate_full(lambda, false)?;
            losses.push(loss);
            fits.push(fit);
        }
        Ok((losses, fits))
    }
}

impl<F: ModelFamily> HyperObjective for KFoldObjective<'_, F> {
    fn map(&self) -> &TyingMap {
        self.map
    }

    fn supports_gradient(&self) -> bool {
        self.family.provides_jacobian()
    }

    fn evaluate(&self, free: &[f64], gradient: bool) -> Result<Evaluation> {
        let k = self.parts.len() as f64;
        let mut loss = 0.0;
        let mut grad = gradient.then(|| vec![0.0; self.map.free()]);
        for (train, held_out) in &self.parts {
            let ev = SplitObjective::new(self.family, train, held_out, self.map).evaluate(free, gradient)?;
            loss += ev.loss / k;
            if let (Some(acc), Some(g)) = (grad.as_mut(), ev.gradient) {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b / k;
                }
            }
        }
        Ok(Evaluation { loss, gradient: grad })
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(bound = "")]
pub struct CvResult<Fit> {
    pub selected_lambda: Vec<f64>,
    pub selected_free: Vec<f64>,
    /// Mean of `fold_losses`.
    pub cv_loss: f64,
    pub fold_losses: Vec<f64>,
    /// Fit on the complement of fold `k`, at the selected penalties.
    #[serde(skip)]
    pub fold_fits: Vec<Fit>,
    pub trace: Vec<TraceEntry>,
    pub per_start: Vec<StartOutcome>,
    pub warning: Option<String>,
}

/// Selects λ minimising the mean held-out loss across folds.
pub fn tune_kfold<F: ModelFamily>(
    family: &F,
    data: &Dataset,
    folds: &FoldPlan,
    lambda_box: &LambdaBox,
    map: &TyingMap,
    config: &TuneConfig,
) -> Result<CvResult<F::Fit>> {
    let obj = KFoldObjective::new(family, data, folds, map)?;
    let outcome = match &config.grid {
        Some(grid) => search_grid(&obj, grid)?,
        None => search_multistart(&obj, lambda_box, &config.start_vectors(map.free()), config.method, &config.optimizer)?,
    };
    let (fold_losses, fold_fits) = obj.fold_losses(&outcome.selected_lambda)?;
    let cv_loss = fold_losses.iter().sum::<f64>() / fold_losses.len() as f64;
    Ok(CvResult {
        selected_lambda: outcome.selected_lambda,
        selected_free: outcome.selected_free,
        cv_loss,
        fold_losses,
        fold_fits,
        trace: outcome.trace,
        per_start: outcome.per_start,
        warning: outcome.warning,
    })
}

/// Average of the fold models' predictions at `x`.
pub fn averaged_predict<F: ModelFamily>(family: &F, cv: &CvResult<F::Fit>, x: &[f64]) -> f64 {
    let k = cv.fold_fits.len() as f64;
    cv.fold_fits.iter().map(|fit| family.predict(fit, x)).sum::<f64>() / k
}

/// Refits on the full dataset at the selected penalties. This is the
/// conventional retraining step; the averaged predictor does not use it.
pub fn retrain_full<F: ModelFamily>(family: &F, data: &Dataset, cv: &CvResult<F::Fit>) -> Result<F::Fit> {
    family.fit(data, &cv.selected_lambda)
}
