mod common;

use common::{bracketed_minimum, linear_instance};
use multipen::bounds::excess_validation_loss;
use multipen::data::{generate_simulation, split_train_val, Dataset, FoldPlan, LambdaBox, SimSpec, SimVariant, TyingMap};
use multipen::enet::EnetFamily;
use multipen::gam::GamFamily;
use multipen::ridge::{GroupedDesign, RidgeFamily};
use multipen::tuner::{
    averaged_predict, search_grid, tune_grid, tune_kfold, tune_multistart, tune_train_val, validation_loss, CvResult,
    Evaluation, HyperObjective, KFoldObjective, ModelFamily, OptimizerSettings, SearchMethod, SplitObjective,
    TuneConfig,
};
use multipen::Result;
use nalgebra::{DMatrix, DVector};

fn split(data: &Dataset, n_train: usize) -> (Dataset, Dataset) {
    let train: Vec<usize> = (0..n_train).collect();
    let val: Vec<usize> = (n_train..data.n()).collect();
    (data.subset(&train), data.subset(&val))
}

fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    (0..points).map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (points - 1) as f64).exp()).collect()
}

/// One penalty on three columns, noisy enough that the optimum is interior.
fn one_penalty_ridge(seed: u64) -> (RidgeFamily, Dataset, Dataset) {
    let (data, _) = linear_instance(60, 3, 2.0, seed);
    let (train, val) = split(&data, 30);
    (RidgeFamily::new(GroupedDesign::uniform(1, 3).unwrap()), train, val)
}

#[test]
fn multistart_agrees_with_golden_section() {
    let lambda_box = LambdaBox::new(1e-4, 1e2, 1).unwrap();
    let map = TyingMap::identity(1);
    let mut interior = 0;
    for seed in 0..10 {
        let (family, train, val) = one_penalty_ridge(seed);
        let loss = |z: f64| validation_loss(&family, &family.fit(&train, &[z.exp()]).unwrap(), &val);
        let (z_star, _) = bracketed_minimum(loss, lambda_box.lambda_min.ln(), lambda_box.lambda_max.ln(), 400);
        let oracle = z_star.exp();
        if oracle < 2.0 * lambda_box.lambda_min || oracle > 0.5 * lambda_box.lambda_max {
            continue;
        }
        interior += 1;
        let starts = vec![vec![1.0], vec![0.1], vec![0.01]];
        let r = tune_multistart(
            &family,
            &train,
            &val,
            &lambda_box,
            &map,
            &starts,
            SearchMethod::GradientDescentLog,
            &OptimizerSettings::default(),
        )
        .unwrap();
        for s in &r.per_start {
            let rel = (s.end[0] - oracle).abs() / oracle;
            assert!(rel < 1e-4, "seed {seed}: start {:?} ended at {} vs {oracle}", s.start, s.end[0]);
        }
    }
    assert!(interior >= 5, "only {interior} instances had an interior optimum");
}

#[test]
fn nelder_mead_agrees_with_gradient_descent() {
    let (family, train, val) = one_penalty_ridge(3);
    let lambda_box = LambdaBox::new(1e-4, 1e2, 1).unwrap();
    let map = TyingMap::identity(1);
    let run = |method| {
        tune_multistart(&family, &train, &val, &lambda_box, &map, &[vec![1.0]], method, &OptimizerSettings::default())
            .unwrap()
    };
    let gd = run(SearchMethod::GradientDescentLog);
    let nm = run(SearchMethod::NelderMeadLog);
    assert!((gd.val_loss - nm.val_loss).abs() < 1e-10 * gd.val_loss);
}

#[test]
fn degenerate_box_returns_its_point() {
    let (family, train, val) = one_penalty_ridge(1);
    let lambda_box = LambdaBox::new(0.3, 0.3, 1).unwrap();
    let r = tune_multistart(
        &family,
        &train,
        &val,
        &lambda_box,
        &TyingMap::identity(1),
        &[vec![1.0], vec![0.01]],
        SearchMethod::GradientDescentLog,
        &OptimizerSettings::default(),
    )
    .unwrap();
    assert_eq!(r.selected_lambda, vec![0.3]);
    assert!(r.per_start.iter().all(|s| s.iterations == 0));
    assert!(r.warning.is_none());
}

#[test]
fn result_never_worse_than_any_start() {
    for seed in 0..5 {
        let (data, _) = linear_instance(80, 8, 1.0, 40 + seed);
        let (train, val) = split(&data, 40);
        let family = RidgeFamily::new(GroupedDesign::uniform(4, 2).unwrap());
        let map = TyingMap::nested(4, 2).unwrap();
        let lambda_box = LambdaBox::new(1e-6, 1e2, 4).unwrap();
        let config = TuneConfig::default();
        let starts = config.start_vectors(2);
        let r = tune_multistart(&family, &train, &val, &lambda_box, &map, &starts, config.method, &config.optimizer)
            .unwrap();
        let obj = SplitObjective::new(&family, &train, &val, &map);
        for s in &starts {
            let initial = obj.evaluate(s, false).unwrap().loss;
            assert!(r.val_loss <= initial, "seed {seed}");
        }
    }
}

#[test]
fn symmetric_folds_give_identical_fits() {
    let (half, _) = linear_instance(20, 4, 0.5, 7);
    let x = DMatrix::from_fn(40, 4, |i, j| half.x()[(i % 20, j)]);
    let y = DVector::from_fn(40, |i, _| half.y()[i % 20]);
    let data = Dataset::from_xy(x, y).unwrap();
    let folds = FoldPlan { folds: vec![(0..20).collect(), (20..40).collect()] };
    let family = RidgeFamily::new(GroupedDesign::uniform(2, 2).unwrap());
    let map = TyingMap::identity(2);
    let lambda_box = LambdaBox::new(1e-3, 10.0, 2).unwrap();
    let config = TuneConfig { grid: Some(vec![vec![0.2, 0.7]]), ..Default::default() };
    let cv = tune_kfold(&family, &data, &folds, &lambda_box, &map, &config).unwrap();
    assert_eq!(cv.selected_lambda, vec![0.2, 0.7]);
    assert_eq!(cv.fold_fits[0].theta, cv.fold_fits[1].theta);
    assert_eq!(cv.fold_losses[0], cv.fold_losses[1]);
    assert!((cv.cv_loss - cv.fold_losses[0]).abs() < 1e-15);
}

#[test]
fn cv_loss_and_averaged_prediction_recompute() {
    let (data, _) = linear_instance(60, 6, 0.7, 11);
    let folds = multipen::data::make_kfold(60, 5, 3).unwrap();
    let family = RidgeFamily::new(GroupedDesign::uniform(3, 2).unwrap());
    let map = TyingMap::nested(3, 1).unwrap();
    let lambda_box = LambdaBox::new(1e-4, 10.0, 3).unwrap();
    let cv = tune_kfold(&family, &data, &folds, &lambda_box, &map, &TuneConfig::default()).unwrap();
    assert_eq!(cv.fold_losses.len(), 5);

    let mut recomputed = 0.0;
    for k in 0..5 {
        let held_out = data.subset(&folds.folds[k]);
        recomputed += validation_loss(&family, &cv.fold_fits[k], &held_out) / 5.0;
    }
    assert!((cv.cv_loss - recomputed).abs() < 1e-12);

    // The selected λ is no worse than any initialisation under the CV objective.
    let obj = KFoldObjective::new(&family, &data, &folds, &map).unwrap();
    for s in TuneConfig::default().start_vectors(1) {
        assert!(cv.cv_loss <= obj.evaluate(&s, false).unwrap().loss + 1e-15);
    }

    let mut rng = multipen::data::rng_from_seed(5);
    for _ in 0..100 {
        use rand::Rng;
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mean = cv.fold_fits.iter().map(|f| family.predict(f, &x)).sum::<f64>() / 5.0;
        assert!((averaged_predict(&family, &cv, &x) - mean).abs() < 1e-12);
    }
}

/// A family whose fit is a constant prediction equal to `λ`.
struct ConstantFamily;

impl ModelFamily for ConstantFamily {
    type Fit = f64;

    fn penalties(&self) -> usize {
        1
    }

    fn fit(&self, _train: &Dataset, lambda: &[f64]) -> Result<f64> {
        Ok(lambda[0])
    }

    fn predict(&self, fit: &f64, _x: &[f64]) -> f64 {
        *fit
    }
}

fn constant_cv(fits: Vec<f64>) -> CvResult<f64> {
    CvResult {
        selected_lambda: vec![1.0],
        selected_free: vec![1.0],
        cv_loss: 0.0,
        fold_losses: vec![0.0; fits.len()],
        fold_fits: fits,
        trace: Vec::new(),
        per_start: Vec::new(),
        warning: None,
    }
}

#[test]
fn averaged_prediction_examples() {
    assert_eq!(averaged_predict(&ConstantFamily, &constant_cv(vec![1.0, 3.0]), &[0.0]), 2.0);
    assert_eq!(averaged_predict(&ConstantFamily, &constant_cv(vec![0.25; 4]), &[5.0]), 0.25);
}

/// Validation loss multiplied by a positive constant.
struct Scaled<'a> {
    inner: &'a dyn HyperObjective,
    factor: f64,
}

impl HyperObjective for Scaled<'_> {
    fn map(&self) -> &TyingMap {
        self.inner.map()
    }

    fn supports_gradient(&self) -> bool {
        self.inner.supports_gradient()
    }

    fn evaluate(&self, free: &[f64], gradient: bool) -> Result<Evaluation> {
        let ev = self.inner.evaluate(free, gradient)?;
        Ok(Evaluation {
            loss: self.factor * ev.loss,
            gradient: ev.gradient.map(|g| g.into_iter().map(|v| self.factor * v).collect()),
        })
    }
}

#[test]
fn scaling_loss_keeps_selection() {
    let (data, _) = linear_instance(80, 4, 1.0, 21);
    let (train, val) = split(&data, 40);
    let family = RidgeFamily::new(GroupedDesign::uniform(2, 2).unwrap());
    let map = TyingMap::identity(2);
    let axis = log_grid(1e-3, 10.0, 9);
    let grid: Vec<Vec<f64>> = axis.iter().flat_map(|&a| axis.iter().map(move |&b| vec![a, b])).collect();
    let obj = SplitObjective::new(&family, &train, &val, &map);
    let base = search_grid(&obj, &grid).unwrap();
    for factor in [1e-3, 0.5, 7.0, 1e4] {
        let scaled = search_grid(&Scaled { inner: &obj, factor }, &grid).unwrap();
        assert_eq!(scaled.selected_lambda, base.selected_lambda);
        for (a, b) in scaled.trace.iter().zip(&base.trace) {
            assert!((a.loss - factor * b.loss).abs() <= 1e-14 * a.loss.abs());
        }
    }
}

fn noise_free_sim1(n: usize, seed: u64) -> (Dataset, Dataset) {
    let spec = SimSpec { snr: f64::INFINITY, ..SimSpec::new(SimVariant::Sim1, 2 * n) };
    let data = generate_simulation(&spec, seed).unwrap();
    split_train_val(&data, n, n, seed).unwrap().apply(&data)
}

#[test]
fn excess_is_nonnegative_on_noise_free_gam() {
    let lambda_box = LambdaBox::new(1e-6, 1e2, 8).unwrap();
    let family = GamFamily::new(vec![(-2.0, 2.0); 8]);
    let map = TyingMap::nested(8, 2).unwrap();
    let config = TuneConfig::default();
    for seed in 0..2 {
        let (train, val) = noise_free_sim1(30, seed);
        let r = tune_multistart(
            &family,
            &train,
            &val,
            &lambda_box,
            &map,
            &config.start_vectors(2),
            config.method,
            &config.optimizer,
        )
        .unwrap();
        let ex = excess_validation_loss(&family, &train, &val, &r.selected_free, &lambda_box, &map, &config).unwrap();
        assert!(ex.excess >= 0.0, "seed {seed}: {}", ex.excess);
        assert!((ex.selected_loss - ex.oracle_loss - ex.excess).abs() < 1e-15);
    }
}

#[test]
fn tuning_is_deterministic() {
    let spec = SimSpec::new(SimVariant::Sim2, 60);
    let data = generate_simulation(&spec, 9).unwrap();
    let plan = split_train_val(&data, 30, 30, 9).unwrap();
    let family = GamFamily::new(vec![(-2.0, 2.0); 8]);
    let map = TyingMap::nested(8, 4).unwrap();
    let lambda_box = LambdaBox::new(1e-6, 1e2, 8).unwrap();
    let config = TuneConfig::default();
    let a = tune_train_val(&family, &data, &plan, &lambda_box, &map, &config).unwrap();
    let b = tune_train_val(&family, &data, &plan, &lambda_box, &map, &config).unwrap();
    assert_eq!(a.selected_lambda, b.selected_lambda);
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.per_start, b.per_start);
}

#[test]
fn grid_of_the_oracle_selects_it() {
    let (data, _) = linear_instance(80, 4, 1.0, 5);
    let plan = split_train_val(&data, 40, 40, 5).unwrap();
    let (train, val) = plan.apply(&data);
    let family = RidgeFamily::new(GroupedDesign::uniform(2, 2).unwrap());
    let map = TyingMap::identity(2);
    let lambda_box = LambdaBox::new(1e-6, 1e2, 2).unwrap();
    let ex = excess_validation_loss(&family, &train, &val, &[1.0, 1.0], &lambda_box, &map, &TuneConfig::default())
        .unwrap();
    let config = TuneConfig { grid: Some(vec![ex.oracle_free.clone()]), ..Default::default() };
    let r = tune_train_val(&family, &data, &plan, &lambda_box, &map, &config).unwrap();
    assert_eq!(r.selected_free, ex.oracle_free);

    // Tuning at the oracle itself leaves no excess.
    let again =
        excess_validation_loss(&family, &train, &val, &ex.oracle_free, &lambda_box, &map, &TuneConfig::default())
            .unwrap();
    assert!(again.excess.abs() < 1e-10, "{}", again.excess);
}

/// `⟨a, b⟩_V` and `‖a‖²_V` as means over validation rows.
fn inner(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.dot(b) / a.len() as f64
}

#[test]
fn basic_inequality_holds_for_every_candidate() {
    let family = RidgeFamily::new(GroupedDesign::uniform(2, 3).unwrap());
    let map = TyingMap::identity(2);
    let axis = log_grid(1e-4, 1e2, 7);
    let grid: Vec<Vec<f64>> = axis.iter().flat_map(|&a| axis.iter().map(move |&b| vec![a, b])).collect();
    for seed in 0..5 {
        let (data, _) = linear_instance(60, 6, 1.0, 300 + seed);
        let (train, val) = split(&data, 30);
        let r = tune_grid(&family, &train, &val, &grid, &map).unwrap();
        let truth = val.truth().unwrap();
        let eps = val.noise().unwrap();
        let hat = family.predict_rows(&r.fit, val.x());
        for cand in &grid {
            let tilde = family.predict_rows(&family.fit(&train, cand).unwrap(), val.x());
            let lhs = inner(&(truth - &hat), &(truth - &hat)) - inner(&(truth - &tilde), &(truth - &tilde));
            // Rearranging ‖y − ĝ(λ̂)‖² ≤ ‖y − ĝ(λ̃)‖² with y = g* + ε.
            let rhs = 2.0 * inner(eps, &(&hat - &tilde));
            assert!(lhs <= rhs + 1e-10, "seed {seed} at {cand:?}: {lhs} > {rhs}");
        }
    }
}

#[test]
fn excess_matches_dense_grid_oracle() {
    for seed in 0..3 {
        let (family, train, val) = one_penalty_ridge(60 + seed);
        let lambda_box = LambdaBox::new(1e-6, 1e2, 1).unwrap();
        let map = TyingMap::identity(1);
        let truth_val = val.with_truth_as_response().unwrap();
        let risk = |z: f64| 2.0 * validation_loss(&family, &family.fit(&train, &[z.exp()]).unwrap(), &truth_val);
        let (_, dense) = bracketed_minimum(risk, lambda_box.lambda_min.ln(), lambda_box.lambda_max.ln(), 1000);
        let ex =
            excess_validation_loss(&family, &train, &val, &[0.5], &lambda_box, &map, &TuneConfig::default()).unwrap();
        assert!((ex.oracle_loss - dense).abs() < 1e-6, "seed {seed}: {} vs {dense}", ex.oracle_loss);
        assert!(ex.excess >= 0.0);
    }
}

#[test]
fn elastic_net_tuning_completes() {
    let (data, _) = linear_instance(80, 8, 0.8, 77);
    let (train, val) = split(&data, 40);
    let family = EnetFamily::new(GroupedDesign::uniform(4, 2).unwrap(), 0.5);
    let map = TyingMap::nested(4, 2).unwrap();
    let lambda_box = LambdaBox::new(1e-4, 10.0, 4).unwrap();
    let config = TuneConfig::default();
    let starts = config.start_vectors(2);
    let r = tune_multistart(&family, &train, &val, &lambda_box, &map, &starts, config.method, &config.optimizer)
        .unwrap();
    let obj = SplitObjective::new(&family, &train, &val, &map);
    for s in &starts {
        assert!(r.val_loss <= obj.evaluate(s, false).unwrap().loss);
    }
    assert!(lambda_box.contains(&r.selected_lambda));
}
