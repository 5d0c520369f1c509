use super::GamFit;
use crate::linalg::solve_tridiagonal;
use crate::{Error, Result};

/// Natural-cubic-spline view of each fitted nonlinear part `ĝ_{j,⊥}`.
#[derive(Debug, Clone)]
pub struct SplineDiagnostics {
    /// Sorted knots per component.
    pub knots: Vec<Vec<f64>>,
    /// `ĝ_{j,⊥}` at the sorted knots.
    pub values: Vec<Vec<f64>>,
    /// Second derivatives at the interior knots.
    pub gamma: Vec<Vec<f64>>,
    /// Smallest knot spacing `h_j(T)`.
    pub h_min: Vec<f64>,
}

pub fn smallest_gap(sorted: &[f64]) -> f64 {
    sorted.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

/// `γ = R⁻¹Qᵀg` with the banded second-difference matrix `Q` and
/// tridiagonal `R` of a natural cubic spline through `(t, g)`.
pub fn natural_second_derivatives(t: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    let n = t.len();
    if n < 3 {
        return Err(Error::invalid("need at least three distinct knots"));
    }
    let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    if h.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::invalid("knots must be strictly increasing"));
    }
    let m = n - 2;
    let qtg: Vec<f64> = (0..m)
        .map(|k| g[k] / h[k] - (1.0 / h[k] + 1.0 / h[k + 1]) * g[k + 1] + g[k + 2] / h[k + 1])
        .collect();
    let diag: Vec<f64> = (0..m).map(|k| (h[k] + h[k + 1]) / 3.0).collect();
    let off: Vec<f64> = (0..m.saturating_sub(1)).map(|k| h[k + 1] / 6.0).collect();
    solve_tridiagonal(&off, &diag, &off, &qtg)
}

impl SplineDiagnostics {
    /// Value of the cubic between the bracketing knots, from the knot values
    /// and second derivatives. `None` outside `[t_1, t_n]`.
    pub fn interpolate(&self, j: usize, u: f64) -> Option<f64> {
        let t = &self.knots[j];
        let g = &self.values[j];
        let n = t.len();
        if u < t[0] || u > t[n - 1] {
            return None;
        }
        let i = t.partition_point(|&k| k <= u).clamp(1, n - 1) - 1;
        let gamma_at = |k: usize| if k == 0 || k == n - 1 { 0.0 } else { self.gamma[j][k - 1] };
        let (tl, tr) = (t[i], t[i + 1]);
        let h = tr - tl;
        let (a, b) = (u - tl, tr - u);
        Some(
            (a * g[i + 1] + b * g[i]) / h
                - a * b / 6.0 * ((1.0 + a / h) * gamma_at(i + 1) + (1.0 + b / h) * gamma_at(i)),
        )
    }
}

pub fn spline_diagnostics(fit: &GamFit) -> Result<SplineDiagnostics> {
    let dims = fit.dims();
    let mut out = SplineDiagnostics { knots: vec![], values: vec![], gamma: vec![], h_min: vec![] };
    for j in 0..dims {
        let mut t: Vec<f64> = fit.knots.column(j).iter().copied().collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        let g: Vec<f64> = t.iter().map(|&u| fit.nonlinear_part(j, u)).collect();
        let gamma = natural_second_derivatives(&t, &g)?;
        out.h_min.push(smallest_gap(&t));
        out.knots.push(t);
        out.values.push(g);
        out.gamma.push(gamma);
    }
    Ok(out)
}
