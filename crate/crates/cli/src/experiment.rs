//! Replicated simulation study: tune with `k` free penalties, record the
//! excess validation loss against the truth-oracle, and regress log excess on
//! log `k`.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use multipen::bounds::excess_validation_loss;
use multipen::data::{
    generate_simulation, split_train_val, Dataset, LambdaBox, SimSpec, SimVariant, TyingMap, SIM_DOMAIN,
};
use multipen::enet::EnetFamily;
use multipen::gam::GamFamily;
use multipen::ridge::{GroupedDesign, RidgeFamily};
use multipen::tuner::{tune_train_val, ModelFamily, OptimizerSettings, SearchMethod, TuneConfig};

/// Exact header of `results.csv`.
pub const RESULTS_HEADER: &str = "sim,rep,k,sel_val_loss,oracle_loss,excess,lambda_json,wall_seconds,converged";

/// Excess values at or below this are treated as zero and left out of the
/// log-log regression.
pub const EXCESS_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Gam,
    Ridge,
    Enet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 40 replicates with 200 training and 200 validation rows.
    Paper,
    /// 20 replicates with 100 training and 100 validation rows.
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub sim: u8,
    pub reps: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub dims: usize,
    pub free_ks: Vec<usize>,
    pub starts: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub method: SearchMethod,
    pub family: FamilyKind,
    /// Quadratic weight for the elastic-net family.
    pub enet_w: f64,
    pub seed: u64,
    /// Record wall-clock time per row; off gives byte-identical reruns.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sim: 1,
            reps: 40,
            n_train: 200,
            n_val: 200,
            dims: 8,
            free_ks: vec![1, 2, 4, 8],
            starts: vec![1.0, 0.1, 0.01],
            lambda_min: 1e-6,
            lambda_max: 1e2,
            method: SearchMethod::GradientDescentLog,
            family: FamilyKind::Gam,
            enet_w: 1.0,
            seed: 2018,
            timing: true,
        }
    }
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let base = Self::default();
        match preset {
            Preset::Paper => base,
            Preset::Desk => Self { reps: 20, n_train: 100, n_val: 100, ..base },
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !matches!(self.sim, 1 | 2) {
            bail!("--sim must be 1 or 2, got {}", self.sim);
        }
        if self.reps == 0 || self.n_train < 2 || self.n_val == 0 || self.dims == 0 {
            bail!("reps, n-train, n-val and dims must be positive (n-train at least 2)");
        }
        if self.free_ks.is_empty() {
            bail!("need at least one free-parameter count");
        }
        if let Some(k) = self.free_ks.iter().find(|&&k| k == 0 || !self.dims.is_multiple_of(k)) {
            bail!("free-parameter count {k} does not divide J = {}", self.dims);
        }
        if self.starts.is_empty() {
            bail!("need at least one start");
        }
        LambdaBox::new(self.lambda_min, self.lambda_max, self.dims)?;
        Ok(())
    }

    fn variant(&self) -> SimVariant {
        if self.sim == 1 {
            SimVariant::Sim1
        } else {
            SimVariant::Sim2
        }
    }

    fn tune_config(&self) -> TuneConfig {
        TuneConfig { method: self.method, starts: self.starts.clone(), grid: None, optimizer: OptimizerSettings::default() }
    }

    /// Seed of replicate `rep`; shared by every `k` so the comparison is paired.
    pub fn replicate_seed(&self, rep: usize) -> u64 {
        self.seed.wrapping_mul(1_000_003).wrapping_add(1_000 * self.sim as u64).wrapping_add(2 * rep as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub sim: u8,
    pub rep: usize,
    pub k: usize,
    /// `‖ĝ(λ̂) − g*‖²_V`.
    pub sel_val_loss: f64,
    pub oracle_loss: f64,
    pub excess: f64,
    /// Selected free penalties as a JSON array.
    pub lambda_json: String,
    pub wall_seconds: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFailure {
    pub rep: usize,
    pub k: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSummary {
    pub k: usize,
    pub rows: usize,
    pub converged_rows: usize,
    pub mean_excess: f64,
    pub sd_excess: f64,
    pub mean_sel_val_loss: f64,
    pub sd_sel_val_loss: f64,
    pub mean_oracle_loss: f64,
    pub sd_oracle_loss: f64,
}

/// Ordinary least squares of `log excess` on `log k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub slope: f64,
    /// `NaN` (null in JSON) with fewer than three points.
    pub stderr: f64,
    pub used: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub per_k: Vec<KSummary>,
    pub slope_excl_k1: Option<f64>,
    pub stderr_excl_k1: Option<f64>,
    pub slope_incl_k1: Option<f64>,
    pub stderr_incl_k1: Option<f64>,
    /// Rows left out of each regression because their excess was not positive.
    pub dropped_excl_k1: usize,
    pub dropped_incl_k1: usize,
    pub failures: Vec<RowFailure>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    /// Sorted by `(sim, rep, k)`.
    pub rows: Vec<ExperimentRow>,
    pub summary: Summary,
}

fn run_cell<F: ModelFamily>(
    family: &F,
    data: &Dataset,
    config: &ExperimentConfig,
    rep: usize,
    k: usize,
    split_seed: u64,
) -> anyhow::Result<ExperimentRow> {
    let start = Instant::now();
    let lambda_box = LambdaBox::new(config.lambda_min, config.lambda_max, config.dims)?;
    let map = TyingMap::nested(config.dims, k)?;
    let tune = config.tune_config();
    let plan = split_train_val(data, config.n_train, config.n_val, split_seed)?;
    let result = tune_train_val(family, data, &plan, &lambda_box, &map, &tune)?;
    let (train, val) = plan.apply(data);
    let ex = excess_validation_loss(family, &train, &val, &result.selected_free, &lambda_box, &map, &tune)?;
    Ok(ExperimentRow {
        sim: config.sim,
        rep,
        k,
        sel_val_loss: ex.selected_loss,
        oracle_loss: ex.oracle_loss,
        excess: ex.excess,
        lambda_json: serde_json::to_string(&result.selected_free)?,
        wall_seconds: if config.timing { start.elapsed().as_secs_f64() } else { 0.0 },
        converged: result.converged(),
    })
}

fn run_replicate(config: &ExperimentConfig, rep: usize) -> Vec<Result<ExperimentRow, RowFailure>> {
    let seed = config.replicate_seed(rep);
    let spec = SimSpec { dims: config.dims, ..SimSpec::new(config.variant(), config.n_train + config.n_val) };
    let data = match generate_simulation(&spec, seed) {
        Ok(d) => d,
        Err(e) => {
            return config.free_ks.iter().map(|&k| Err(RowFailure { rep, k, error: e.to_string() })).collect();
        }
    };
    config
        .free_ks
        .iter()
        .map(|&k| {
            let outcome = match config.family {
                FamilyKind::Gam => {
                    run_cell(&GamFamily::new(vec![SIM_DOMAIN; config.dims]), &data, config, rep, k, seed + 1)
                }
                FamilyKind::Ridge => run_cell(
                    &RidgeFamily::new(GroupedDesign::uniform(config.dims, 1).expect("dims > 0")),
                    &data,
                    config,
                    rep,
                    k,
                    seed + 1,
                ),
                FamilyKind::Enet => run_cell(
                    &EnetFamily::new(GroupedDesign::uniform(config.dims, 1).expect("dims > 0"), config.enet_w),
                    &data,
                    config,
                    rep,
                    k,
                    seed + 1,
                ),
            };
            outcome.map_err(|e| RowFailure { rep, k, error: format!("{e:#}") })
        })
        .collect()
}

/// Runs every replicate (concurrently on the current rayon pool) and
/// summarises. Per-row failures are recorded in the summary, not raised.
pub fn run_simulation_experiment(config: &ExperimentConfig) -> anyhow::Result<ExperimentReport> {
    config.validate()?;
    let outcomes: Vec<_> = (0..config.reps).into_par_iter().flat_map_iter(|rep| run_replicate(config, rep)).collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => rows.push(r),
            Err(f) => failures.push(f),
        }
    }
    rows.sort_by_key(|r| (r.sim, r.rep, r.k));
    failures.sort_by_key(|f| (f.rep, f.k));
    let summary = summarize(&rows, failures, config);
    Ok(ExperimentReport { rows, summary })
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(rows: &[ExperimentRow], failures: Vec<RowFailure>, config: &ExperimentConfig) -> Summary {
    let mut ks: Vec<usize> = rows.iter().map(|r| r.k).collect();
    ks.sort_unstable();
    ks.dedup();
    let per_k = ks
        .iter()
        .map(|&k| {
            let sel: Vec<&ExperimentRow> = rows.iter().filter(|r| r.k == k).collect();
            let col = |f: fn(&ExperimentRow) -> f64| mean_sd(&sel.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (mean_excess, sd_excess) = col(|r| r.excess);
            let (mean_sel_val_loss, sd_sel_val_loss) = col(|r| r.sel_val_loss);
            let (mean_oracle_loss, sd_oracle_loss) = col(|r| r.oracle_loss);
            KSummary {
                k,
                rows: sel.len(),
                converged_rows: sel.iter().filter(|r| r.converged).count(),
                mean_excess,
                sd_excess,
                mean_sel_val_loss,
                sd_sel_val_loss,
                mean_oracle_loss,
                sd_oracle_loss,
            }
        })
        .collect();
    let excl = regress_log_excess(rows, false).ok();
    let incl = regress_log_excess(rows, true).ok();
    let dropped = |include_k1: bool| {
        rows.iter().filter(|r| (include_k1 || r.k != 1) && !(r.excess > EXCESS_FLOOR)).count()
    };
    Summary {
        per_k,
        slope_excl_k1: excl.map(|r| r.slope),
        stderr_excl_k1: excl.map(|r| r.stderr).filter(|s| s.is_finite()),
        slope_incl_k1: incl.map(|r| r.slope),
        stderr_incl_k1: incl.map(|r| r.stderr).filter(|s| s.is_finite()),
        dropped_excl_k1: dropped(false),
        dropped_incl_k1: dropped(true),
        failures,
        config: config.clone(),
    }
}

/// OLS slope of `log excess` on `log k` over replicate-level rows and its
/// standard error `√(s² / Σ(x − x̄)²)`. Rows with excess ≤ [`EXCESS_FLOOR`]
/// are dropped and counted.
pub fn regress_log_excess(rows: &[ExperimentRow], include_k1: bool) -> anyhow::Result<Regression> {
    let candidates: Vec<&ExperimentRow> = rows.iter().filter(|r| include_k1 || r.k != 1).collect();
    let kept: Vec<(f64, f64)> = candidates
        .iter()
        .filter(|r| r.excess > EXCESS_FLOOR)
        .map(|r| ((r.k as f64).ln(), r.excess.ln()))
        .collect();
    let dropped = candidates.len() - kept.len();
    let mut distinct: Vec<u64> = kept.iter().map(|p| p.0.to_bits()).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        bail!("need at least two distinct k values with positive excess, have {}", distinct.len());
    }
    let m = kept.len() as f64;
    let x_bar = kept.iter().map(|p| p.0).sum::<f64>() / m;
    let y_bar = kept.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = kept.iter().map(|p| (p.0 - x_bar).powi(2)).sum();
    let sxy: f64 = kept.iter().map(|p| (p.0 - x_bar) * (p.1 - y_bar)).sum();
    let slope = sxy / sxx;
    let intercept = y_bar - slope * x_bar;
    let stderr = if kept.len() > 2 {
        let rss: f64 = kept.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
        (rss / (m - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(Regression { slope, stderr, used: kept.len(), dropped })
}

/// Writes `results.csv` and `summary.json` into `dir`, creating it if needed.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let csv_path = dir.join("results.csv");
    let mut writer = csv::Writer::from_path(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
    for row in &report.rows {
        writer.serialize(row)?;
    }
    if report.rows.is_empty() {
        writer.write_record(RESULTS_HEADER.split(','))?;
    }
    writer.flush()?;
    let json_path = dir.join("summary.json");
    let mut f = fs::File::create(&json_path).with_context(|| format!("writing {}", json_path.display()))?;
    serde_json::to_writer_pretty(&mut f, &report.summary)?;
    writeln!(f)?;
    Ok(())
}

/// Reads a `results.csv` written by [`write_report`], checking the header.
pub fn read_results(path: &Path) -> anyhow::Result<Vec<ExperimentRow>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != RESULTS_HEADER {
        bail!("unexpected results header: {}", header.join(","));
    }
    reader.deserialize().map(|r| r.map_err(anyhow::Error::from)).collect()
}
