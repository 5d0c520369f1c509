//! Datasets, the two additive-sinusoid simulation designs, train/validation
//! splits, K-fold partitions and penalty tying maps.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Seeded generator used for every random draw in the crate.
///
/// Replicate `r` of an experiment seeded with `base` uses `base + r`.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Covariates, responses and, for simulated data, the noise-free truth and
/// the noise draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    truth: Option<DVector<f64>>,
    noise: Option<DVector<f64>>,
    domain_bounds: Vec<(f64, f64)>,
}

impl Dataset {
    /// Builds a dataset, checking row counts and that every covariate lies in
    /// its domain interval.
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        truth: Option<DVector<f64>>,
        noise: Option<DVector<f64>>,
        domain_bounds: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let n = x.nrows();
        for v in [Some(&y), truth.as_ref(), noise.as_ref()].into_iter().flatten() {
            if v.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: v.len() });
            }
        }
        if domain_bounds.len() != x.ncols() {
            return Err(Error::DimensionMismatch { expected: x.ncols(), got: domain_bounds.len() });
        }
        for (j, &(lo, hi)) in domain_bounds.iter().enumerate() {
            if !(lo < hi) {
                return Err(Error::invalid(format!("domain bounds for column {j} are not increasing")));
            }
            if let Some(v) = x.column(j).iter().find(|&&v| v < lo || v > hi) {
                return Err(Error::invalid(format!("x[.., {j}] = {v} lies outside [{lo}, {hi}]")));
            }
        }
        Ok(Self { x, y, truth, noise, domain_bounds })
    }

    /// Dataset with domain bounds taken from the column ranges.
    pub fn from_xy(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let bounds = column_ranges(&x);
        Self::new(x, y, None, None, bounds)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn truth(&self) -> Option<&DVector<f64>> {
        self.truth.as_ref()
    }

    pub fn noise(&self) -> Option<&DVector<f64>> {
        self.noise.as_ref()
    }

    pub fn domain_bounds(&self) -> &[(f64, f64)] {
        &self.domain_bounds
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dims(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// Rows `idx` in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let x = self.x.select_rows(idx);
        let pick = |v: &DVector<f64>| DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]));
        Dataset {
            x,
            y: pick(&self.y),
            truth: self.truth.as_ref().map(pick),
            noise: self.noise.as_ref().map(pick),
            domain_bounds: self.domain_bounds.clone(),
        }
    }

    /// Copy whose response is the stored truth, for oracle objectives.
    pub fn with_truth_as_response(&self) -> Result<Dataset> {
        let truth = self.truth.clone().ok_or(Error::MissingTruth)?;
        Ok(Dataset {
            x: self.x.clone(),
            y: truth.clone(),
            truth: Some(truth),
            noise: None,
            domain_bounds: self.domain_bounds.clone(),
        })
    }

    /// Copy with the domain bounds replaced.
    pub fn with_bounds(&self, bounds: Vec<(f64, f64)>) -> Result<Dataset> {
        Dataset::new(self.x.clone(), self.y.clone(), self.truth.clone(), self.noise.clone(), bounds)
    }
}

fn column_ranges(x: &DMatrix<f64>) -> Vec<(f64, f64)> {
    x.column_iter()
        .map(|c| {
            let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if lo < hi {
                (lo, hi)
            } else if lo.is_finite() {
                (lo - 0.5, lo + 0.5)
            } else {
                (0.0, 1.0)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimVariant {
    /// Identical components `sin(x)`.
    Sim1,
    /// Components `sin(x · base^(j - offset))`, increasing in frequency.
    Sim2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SigmaMode {
    /// Population signal variance of the additive truth under `U[-2, 2]^J`.
    Analytic,
    /// Sample variance of the realised truth vector.
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub variant: SimVariant,
    pub dims: usize,
    pub n: usize,
    /// Signal-to-noise ratio; `f64::INFINITY` gives noise-free responses.
    pub snr: f64,
    pub freq_base: f64,
    pub freq_offset: i32,
    pub sigma_mode: SigmaMode,
}

impl SimSpec {
    pub fn new(variant: SimVariant, n: usize) -> Self {
        Self {
            variant,
            dims: 8,
            n,
            snr: 2.0,
            freq_base: 1.2,
            freq_offset: 4,
            sigma_mode: SigmaMode::Empirical,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dims < 1 {
            return Err(Error::invalid("simulation needs at least one covariate"));
        }
        if self.n < 2 {
            return Err(Error::invalid("simulation needs at least two rows"));
        }
        if !(self.snr > 0.0) {
            return Err(Error::invalid("signal-to-noise ratio must be positive"));
        }
        Ok(())
    }

    /// Frequency multiplying `x` in component `j` (0-based).
    pub fn frequency(&self, j: usize) -> f64 {
        match self.variant {
            SimVariant::Sim1 => 1.0,
            SimVariant::Sim2 => self.freq_base.powi(j as i32 + 1 - self.freq_offset),
        }
    }

    /// True additive component `j` (0-based) at `x`.
    pub fn component(&self, j: usize, x: f64) -> f64 {
        (x * self.frequency(j)).sin()
    }

    /// Variance of `Σ_j sin(c_j X_j)` with `X_j ~ U[-2, 2]` independent.
    ///
    /// Each term has mean zero and second moment `1/2 − sin(4c)/(8c)`.
    pub fn population_signal_variance(&self) -> f64 {
        (0..self.dims)
            .map(|j| {
                let c = self.frequency(j);
                0.5 - (4.0 * c).sin() / (8.0 * c)
            })
            .sum()
    }
}

pub const SIM_DOMAIN: (f64, f64) = (-2.0, 2.0);

/// Draws a simulated additive-sinusoid dataset.
pub fn generate_simulation(spec: &SimSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng_from_seed(seed);
    let (lo, hi) = SIM_DOMAIN;
    let (n, dims) = (spec.n, spec.dims);
    let x = DMatrix::from_fn(n, dims, |_, _| rng.random_range(lo..hi));
    let truth = DVector::from_fn(n, |i, _| (0..dims).map(|j| spec.component(j, x[(i, j)])).sum());

    let sigma = if spec.snr.is_infinite() {
        0.0
    } else {
        let signal_var = match spec.sigma_mode {
            SigmaMode::Analytic => spec.population_signal_variance(),
            SigmaMode::Empirical => sample_variance(&truth),
        };
        (signal_var / spec.snr).sqrt()
    };
    let noise = DVector::from_fn(n, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        sigma * z
    });
    let y = &truth + &noise;
    Dataset::new(x, y, Some(truth), Some(noise), vec![SIM_DOMAIN; dims])
}

/// Linear model `y = Xθ* + σε` with standard Gaussian design, `θ*` uniform on
/// `[-1, 1]^p`, and truth and noise stored. Domain bounds are the observed
/// column ranges widened by one.
pub fn generate_linear(n: usize, p: usize, sigma: f64, seed: u64) -> Result<(Dataset, DVector<f64>)> {
    if n < 2 || p < 1 {
        return Err(Error::invalid("linear simulation needs n ≥ 2 and p ≥ 1"));
    }
    if !(sigma >= 0.0) {
        return Err(Error::invalid("noise level must be non-negative"));
    }
    let mut rng = rng_from_seed(seed);
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let theta = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
    let truth = &x * &theta;
    let noise = DVector::from_fn(n, |_, _| sigma * rng.sample::<f64, _>(StandardNormal));
    let y = &truth + &noise;
    let bounds = x.column_iter().map(|c| (c.min() - 1.0, c.max() + 1.0)).collect();
    Ok((Dataset::new(x, y, Some(truth), Some(noise), bounds)?, theta))
}

/// Unbiased sample variance.
pub fn sample_variance(v: &DVector<f64>) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let m = v.mean();
    v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1) as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
}

impl SplitPlan {
    pub fn apply(&self, data: &Dataset) -> (Dataset, Dataset) {
        (data.subset(&self.train_idx), data.subset(&self.val_idx))
    }
}

/// Random disjoint training and validation index sets of the requested sizes.
pub fn split_train_val(data: &Dataset, n_train: usize, n_val: usize, seed: u64) -> Result<SplitPlan> {
    let n = data.n();
    if n_train == 0 || n_val == 0 {
        return Err(Error::invalid("training and validation sets must be nonempty"));
    }
    if n_train + n_val > n {
        return Err(Error::SizeOverflow { requested: n_train + n_val, available: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let mut train_idx = idx[..n_train].to_vec();
    let mut val_idx = idx[n_train..n_train + n_val].to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    Ok(SplitPlan { train_idx, val_idx })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Indices outside fold `k`, ascending.
    pub fn complement(&self, k: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != k)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }
}

/// Shuffled partition of `0..n` into `k` folds whose sizes differ by at most one.
pub fn make_kfold(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return Err(Error::invalid(format!("fold count {k} must lie in [2, {n}]")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, &i) in idx.iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldPlan { folds })
}

/// Equality constraints reducing `J` penalty coordinates to `k` free values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TyingMap {
    assignment: Vec<usize>,
    free: usize,
}

impl TyingMap {
    /// Nested scheme: `k` contiguous blocks of `J / k` tied coordinates.
    pub fn nested(dims: usize, k: usize) -> Result<Self> {
        if k == 0 || dims == 0 || !dims.is_multiple_of(k) {
            return Err(Error::invalid(format!("{k} free parameters do not divide {dims} penalties")));
        }
        let block = dims / k;
        Ok(Self { assignment: (0..dims).map(|j| j / block).collect(), free: k })
    }

    pub fn identity(dims: usize) -> Self {
        Self { assignment: (0..dims).collect(), free: dims }
    }

    pub fn dims(&self) -> usize {
        self.assignment.len()
    }

    pub fn free(&self) -> usize {
        self.free
    }

    /// Free-parameter index of each penalty coordinate.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn expand(&self, free: &[f64]) -> Result<Vec<f64>> {
        if free.len() != self.free {
            return Err(Error::DimensionMismatch { expected: self.free, got: free.len() });
        }
        if let Some(v) = free.iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::invalid(format!("penalty parameters must be positive, got {v}")));
        }
        Ok(self.assignment.iter().map(|&a| free[a]).collect())
    }

    /// Reads back the first coordinate of every block.
    pub fn representatives(&self, full: &[f64]) -> Vec<f64> {
        let mut out = vec![f64::NAN; self.free];
        for (j, &a) in self.assignment.iter().enumerate().rev() {
            out[a] = full[j];
        }
        out
    }

    /// Chain rule through the tying: sums gradient entries of tied coordinates.
    pub fn pull_back(&self, full_grad: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.free];
        for (j, &a) in self.assignment.iter().enumerate() {
            out[a] += full_grad[j];
        }
        out
    }
}

/// The hyper-rectangle `[λ_min, λ_max]^J`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaBox {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub dims: usize,
}

impl LambdaBox {
    pub fn new(lambda_min: f64, lambda_max: f64, dims: usize) -> Result<Self> {
        if !(lambda_min > 0.0) || !(lambda_max >= lambda_min) || !lambda_max.is_finite() {
            return Err(Error::invalid(format!("invalid penalty box [{lambda_min}, {lambda_max}]")));
        }
        Ok(Self { lambda_min, lambda_max, dims })
    }

    pub fn delta(&self) -> f64 {
        self.lambda_max - self.lambda_min
    }

    pub fn is_degenerate(&self) -> bool {
        self.lambda_min == self.lambda_max
    }

    pub fn contains(&self, lambda: &[f64]) -> bool {
        lambda.iter().all(|&l| l >= self.lambda_min && l <= self.lambda_max)
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lambda_min, self.lambda_max)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.dims)
            .map(|_| {
                if self.is_degenerate() {
                    self.lambda_min
                } else {
                    rng.random_range(self.lambda_min..=self.lambda_max)
                }
            })
            .collect()
    }
}

/// Reads `x1,...,xJ,y[,truth]`. Domain bounds default to the column ranges.
pub fn load_dataset_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset_csv(std::fs::File::open(path)?)
}

pub fn read_dataset_csv(reader: impl Read) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let y_col = headers
        .iter()
        .position(|h| h == "y")
        .ok_or_else(|| Error::Format("header has no `y` column".into()))?;
    let truth_col = headers.iter().position(|h| h == "truth");
    for (j, h) in headers[..y_col].iter().enumerate() {
        if *h != format!("x{}", j + 1) {
            return Err(Error::Format(format!("expected column `x{}`, found `{h}`", j + 1)));
        }
    }
    let expected_tail = if truth_col.is_some() { 2 } else { 1 };
    if headers.len() != y_col + expected_tail || truth_col.is_some_and(|t| t != y_col + 1) {
        return Err(Error::Format(format!("unexpected header layout: {}", headers.join(","))));
    }
    let dims = y_col;
    if dims == 0 {
        return Err(Error::Format("no covariate columns".into()));
    }

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut truths = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("row {}: {e}", line + 1)))?;
        if record.len() != headers.len() {
            return Err(Error::Format(format!(
                "row {} has {} fields, expected {}",
                line + 1,
                record.len(),
                headers.len()
            )));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Format(format!("row {}: `{s}` is not a number", line + 1)))
        };
        for cell in record.iter().take(dims) {
            xs.push(parse(cell)?);
        }
        ys.push(parse(&record[y_col])?);
        if let Some(t) = truth_col {
            truths.push(parse(&record[t])?);
        }
    }
    let n = ys.len();
    let x = DMatrix::from_row_slice(n, dims, &xs);
    let bounds = column_ranges(&x);
    let truth = truth_col.map(|_| DVector::from_vec(truths));
    Dataset::new(x, DVector::from_vec(ys), truth, None, bounds)
}

/// Writes the dataset with full round-trip precision. Noise is not stored.
pub fn save_dataset_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset_csv(data, std::fs::File::create(path)?)
}

pub fn write_dataset_csv(data: &Dataset, writer: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (1..=data.dims()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    if data.truth.is_some() {
        header.push("truth".into());
    }
    wtr.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = data.x.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(data.y[i].to_string());
        if let Some(t) = &data.truth {
            rec.push(t[i].to_string());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}
