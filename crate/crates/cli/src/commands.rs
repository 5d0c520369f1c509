use anyhow::{bail, Context};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use multipen::bounds::{
    cv_remainder, empirical_lipschitz_ratio, lambda_entropy, theorem1_delta2, BoundInputs, LipschitzFactor,
    LipschitzReport,
};
use multipen::data::{
    generate_linear, generate_simulation, load_dataset_csv, make_kfold, split_train_val, Dataset, LambdaBox, SimSpec,
    SimVariant, TyingMap, SIM_DOMAIN,
};
use multipen::enet::{enet_lipschitz, EnetFamily};
use multipen::gam::{gam_lipschitz, GamFamily, GamLipschitzMode};
use multipen::ridge::{ridge_lipschitz, GroupedDesign, PenaltyReference, RidgeFamily};
use multipen::tuner::{tune_kfold, tune_train_val, ModelFamily, StartOutcome, TraceEntry, TuneConfig};

use crate::cli::{BoundsCommand, CommonBoundArgs, ModelArg, SimulateArgs, TuneArgs, VerifyArgs};
use crate::experiment::{run_simulation_experiment, write_report, ExperimentConfig, Preset};

/// Builds the experiment configuration: preset (or defaults), then explicit flags.
pub fn simulate_config(args: &SimulateArgs) -> ExperimentConfig {
    let base = args.preset.map(ExperimentConfig::preset).unwrap_or_else(|| ExperimentConfig::preset(Preset::Paper));
    ExperimentConfig {
        sim: args.sim,
        reps: args.reps.unwrap_or(base.reps),
        n_train: args.n_train.unwrap_or(base.n_train),
        n_val: args.n_val.unwrap_or(base.n_val),
        dims: args.dims.unwrap_or(base.dims),
        free_ks: args.free.clone().unwrap_or(base.free_ks),
        starts: args.starts.clone().unwrap_or(base.starts),
        lambda_min: args.lambda_min.unwrap_or(base.lambda_min),
        lambda_max: args.lambda_max.unwrap_or(base.lambda_max),
        method: args.method.into(),
        family: args.family,
        seed: args.seed.unwrap_or(base.seed),
        timing: !args.no_timing,
        ..base
    }
}

pub fn simulate(args: &SimulateArgs) -> anyhow::Result<Value> {
    let config = simulate_config(args);
    config.validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            bail!("--jobs must be positive");
        }
        pool = pool.num_threads(jobs);
    }
    let report = pool.build()?.install(|| run_simulation_experiment(&config))?;
    write_report(&report, &args.out)?;
    Ok(json!({
        "out": args.out,
        "rows": report.rows.len(),
        "failures": report.summary.failures.len(),
        "slope_excl_k1": report.summary.slope_excl_k1,
        "slope_incl_k1": report.summary.slope_incl_k1,
    }))
}

#[derive(Debug, Serialize)]
struct TuneOutput {
    model: &'static str,
    n: usize,
    dims: usize,
    penalties: usize,
    free: usize,
    selected_lambda: Vec<f64>,
    selected_free: Vec<f64>,
    /// "validation" or "cv".
    criterion: &'static str,
    loss: f64,
    fold_losses: Option<Vec<f64>>,
    n_train: Option<usize>,
    n_val: Option<usize>,
    evaluations: usize,
    best_trace_entry: Option<TraceEntry>,
    per_start: Vec<StartOutcome>,
    converged: bool,
    warning: Option<String>,
}

fn design_for(args: &TuneArgs, data: &Dataset) -> anyhow::Result<GroupedDesign> {
    let sizes = args.groups.clone().unwrap_or_else(|| vec![1; data.dims()]);
    if sizes.iter().sum::<usize>() != data.dims() {
        bail!("group sizes {:?} do not cover the {} covariates", sizes, data.dims());
    }
    Ok(GroupedDesign::new(sizes)?)
}

pub fn tune(args: &TuneArgs) -> anyhow::Result<Value> {
    let data = load_dataset_csv(&args.data).with_context(|| format!("loading {}", args.data.display()))?;
    match args.model {
        ModelArg::Ridge => tune_with(args, &data, "ridge", &RidgeFamily::new(design_for(args, &data)?)),
        ModelArg::Enet => tune_with(args, &data, "enet", &EnetFamily::new(design_for(args, &data)?, args.w)),
        ModelArg::Gam => tune_with(args, &data, "gam", &GamFamily::new(data.domain_bounds().to_vec())),
    }
}

fn tune_with<F: ModelFamily>(args: &TuneArgs, data: &Dataset, model: &'static str, family: &F) -> anyhow::Result<Value> {
    let penalties = family.penalties();
    let free = args.free.unwrap_or(penalties);
    let map = TyingMap::nested(penalties, free)?;
    let lambda_box = LambdaBox::new(args.lambda_min, args.lambda_max, penalties)?;
    let config = TuneConfig {
        method: args.method.into(),
        starts: args.starts.clone(),
        grid: args.grid.as_ref().map(|g| g.iter().map(|&v| vec![v; free]).collect()),
        ..TuneConfig::default()
    };
    let out = if let Some(k) = args.folds {
        let folds = make_kfold(data.n(), k, args.seed)?;
        let cv = tune_kfold(family, data, &folds, &lambda_box, &map, &config)?;
        TuneOutput {
            model,
            n: data.n(),
            dims: data.dims(),
            penalties,
            free,
            best_trace_entry: best_of(&cv.trace),
            evaluations: cv.trace.len(),
            converged: cv.per_start.is_empty() || cv.per_start.iter().any(|s| s.converged),
            selected_lambda: cv.selected_lambda,
            selected_free: cv.selected_free,
            criterion: "cv",
            loss: cv.cv_loss,
            fold_losses: Some(cv.fold_losses),
            n_train: None,
            n_val: None,
            per_start: cv.per_start,
            warning: cv.warning,
        }
    } else {
        let n_train = args.n_train.unwrap_or(data.n() / 2);
        let n_val = args.n_val.unwrap_or(data.n().saturating_sub(n_train));
        let plan = split_train_val(data, n_train, n_val, args.seed)?;
        let r = tune_train_val(family, data, &plan, &lambda_box, &map, &config)?;
        TuneOutput {
            model,
            n: data.n(),
            dims: data.dims(),
            penalties,
            free,
            best_trace_entry: best_of(&r.trace),
            evaluations: r.trace.len(),
            converged: r.converged(),
            selected_lambda: r.selected_lambda,
            selected_free: r.selected_free,
            criterion: "validation",
            loss: r.val_loss,
            fold_losses: None,
            n_train: Some(n_train),
            n_val: Some(n_val),
            per_start: r.per_start,
            warning: r.warning,
        }
    };
    Ok(serde_json::to_value(out)?)
}

fn best_of(trace: &[TraceEntry]) -> Option<TraceEntry> {
    trace.iter().filter(|e| e.loss.is_finite()).min_by(|a, b| a.loss.total_cmp(&b.loss)).cloned()
}

fn common_inputs(c: &CommonBoundArgs) -> BoundInputs {
    BoundInputs { dims: c.dims, n: c.n, n_train: c.n, n_val: c.n_val, delta_lambda: c.delta_lambda, ..Default::default() }
}

pub fn bounds(cmd: &BoundsCommand) -> anyhow::Result<Value> {
    match cmd {
        BoundsCommand::Theorem1(a) => {
            let inputs =
                BoundInputs { c_norm: a.c_norm, oracle_risk: a.oracle_risk, c: a.c, ..common_inputs(&a.common) };
            let value = theorem1_delta2(&inputs)?;
            Ok(json!({ "bound": "theorem1_delta2", "inputs": inputs, "value": value }))
        }
        BoundsCommand::CvRemainder(a) => {
            let inputs = BoundInputs {
                a: a.a,
                k0: a.k0,
                sigma0: a.sigma0,
                h_tilde: a.h_tilde,
                c1: a.c1,
                c_k0b: a.c_k0b,
                ..common_inputs(&a.common)
            };
            let value = cv_remainder(&inputs)?;
            Ok(json!({ "bound": "cv_remainder", "inputs": inputs, "value": value }))
        }
        BoundsCommand::Entropy(a) => {
            let value = lambda_entropy(a.u, a.dims, a.c_norm, a.delta_lambda)?;
            Ok(json!({
                "bound": "lambda_entropy",
                "inputs": { "u": a.u, "dims": a.dims, "c_norm": a.c_norm, "delta_lambda": a.delta_lambda },
                "value": value,
            }))
        }
    }
}

#[derive(Debug, Serialize)]
struct VerifyOutput {
    family: &'static str,
    pairs: usize,
    test_points: usize,
    lambda_box: (f64, f64),
    factor: &'static str,
    empirical_norm: f64,
    report: LipschitzReport,
    /// Whether the worst ratio is at most 1 + 1e-9.
    bound_holds: bool,
}

pub fn verify_lipschitz(args: &VerifyArgs) -> anyhow::Result<Value> {
    let lambda_box = LambdaBox::new(args.lambda_min, args.lambda_max, args.dims)?;
    let (family_name, factor, report, points) = match args.family {
        ModelArg::Ridge | ModelArg::Enet => {
            let design = GroupedDesign::uniform(args.dims, args.group_size)?;
            let p = design.p();
            let (train, theta) = generate_linear(args.n_train, p, args.sigma, args.seed)?;
            let (points, _) = generate_linear(args.test_points.max(2), p, 0.0, args.seed.wrapping_add(1))?;
            let points = points.x().rows(0, args.test_points).into_owned();
            let reference = if args.plug_in { PenaltyReference::PlugIn } else { PenaltyReference::Known(theta) };
            if args.family == ModelArg::Ridge {
                let factor = ridge_lipschitz(&train, &design, &lambda_box, &reference)?;
                let family = RidgeFamily::new(design);
                let report = check(&family, &train, &lambda_box, &points, args, &factor)?;
                ("ridge", factor, report, points)
            } else {
                let factor = enet_lipschitz(&train, &design, &lambda_box, args.w, &reference)?;
                let family = EnetFamily::new(design, args.w);
                let report = check(&family, &train, &lambda_box, &points, args, &factor)?;
                ("enet", factor, report, points)
            }
        }
        ModelArg::Gam => {
            let spec = SimSpec { dims: args.dims, ..SimSpec::new(SimVariant::Sim1, args.n_train) };
            let train = generate_simulation(&spec, args.seed)?;
            let probe = SimSpec { n: args.test_points.max(2), ..spec };
            let points = generate_simulation(&probe, args.seed.wrapping_add(1))?.x().rows(0, args.test_points).into_owned();
            let bounds = vec![SIM_DOMAIN; args.dims];
            let factor = gam_lipschitz(&train, &bounds, &lambda_box, GamLipschitzMode::Lemma1Numeric)?;
            let family = GamFamily::new(bounds);
            let report = check(&family, &train, &lambda_box, &points, args, &factor)?;
            ("gam", factor, report, points)
        }
    };
    let out = VerifyOutput {
        family: family_name,
        pairs: args.pairs,
        test_points: args.test_points,
        lambda_box: (args.lambda_min, args.lambda_max),
        factor: match factor {
            LipschitzFactor::Lemma1(_) => "lemma1",
            LipschitzFactor::Constant { label, .. } => label,
        },
        empirical_norm: factor.empirical_norm(&points),
        bound_holds: report.empirical_max_ratio <= 1.0 + 1e-9,
        report,
    };
    Ok(serde_json::to_value(out)?)
}

fn check<F: ModelFamily>(
    family: &F,
    train: &Dataset,
    lambda_box: &LambdaBox,
    points: &DMatrix<f64>,
    args: &VerifyArgs,
    factor: &LipschitzFactor,
) -> anyhow::Result<LipschitzReport> {
    Ok(empirical_lipschitz_ratio(family, train, lambda_box, points, args.pairs, args.seed, factor)?)
}
