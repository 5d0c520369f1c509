use serde::{Deserialize, Serialize};

use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub max_iter: usize,
    /// Stop when the projected gradient norm (log coordinates) falls below this.
    pub grad_tol: f64,
    /// Stop when an accepted step lowers the objective by less than this
    /// fraction of its value.
    pub rel_decrease_tol: f64,
    pub armijo: f64,
    pub shrink: f64,
    /// Nelder–Mead: stop when every vertex is within this distance of the best.
    pub simplex_tol: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self { max_iter: 200, grad_tol: 1e-8, rel_decrease_tol: 1e-10, armijo: 1e-4, shrink: 0.5, simplex_tol: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LocalResult {
    pub z: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub improved: bool,
}

fn project(z: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    z.iter().zip(lo.iter().zip(hi)).map(|(&v, (&l, &h))| v.clamp(l, h)).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

type Objective<'a> = dyn FnMut(&[f64], bool) -> Result<(f64, Option<Vec<f64>>)> + 'a;

/// Projected gradient descent with Armijo backtracking on the box `[lo, hi]`,
/// trial steps seeded by the Barzilai–Borwein rule.
///
/// Trial points are evaluated together with their gradient so an accepted
/// step needs no second evaluation.
pub(crate) fn projected_gradient_descent(
    f: &mut Objective<'_>,
    z0: &[f64],
    lo: &[f64],
    hi: &[f64],
    s: &OptimizerSettings,
) -> Result<LocalResult> {
    let mut z = project(z0, lo, hi);
    let (mut fz, g) = f(&z, true)?;
    let mut g = g.expect("gradient requested");
    let f_start = fz;
    if lo.iter().zip(hi).all(|(l, h)| l == h) {
        return Ok(LocalResult { z, value: fz, iterations: 0, converged: true, improved: false });
    }

    let mut step = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < s.max_iter {
        let pg = dist(&z, &project(&z.iter().zip(&g).map(|(a, b)| a - b).collect::<Vec<_>>(), lo, hi));
        if pg < s.grad_tol {
            converged = true;
            break;
        }
        if g.iter().any(|v| !v.is_finite()) {
            break;
        }
        iterations += 1;
        let mut accepted = None;
        for _ in 0..80 {
            let trial = project(&z.iter().zip(&g).map(|(a, b)| a - step * b).collect::<Vec<_>>(), lo, hi);
            let moved: f64 = dist(&trial, &z);
            if moved < 1e-14 {
                break;
            }
            let decrease: f64 = g.iter().zip(z.iter().zip(&trial)).map(|(gi, (a, b))| gi * (a - b)).sum();
            match f(&trial, true) {
                Ok((ft, Some(gt))) if ft.is_finite() && ft <= fz - s.armijo * decrease => {
                    accepted = Some((trial, ft, gt));
                    break;
                }
                _ => step *= s.shrink,
            }
        }
        let Some((trial, ft, gt)) = accepted else {
            // No admissible step: stationary to working precision.
            converged = true;
            break;
        };
        let rel = (fz - ft) / fz.abs().max(f64::MIN_POSITIVE);
        // Barzilai–Borwein step from the last secant pair; doubling otherwise.
        let sy: f64 = trial.iter().zip(&z).zip(gt.iter().zip(&g)).map(|((a, b), (c, d))| (a - b) * (c - d)).sum();
        let yy: f64 = gt.iter().zip(&g).map(|(c, d)| (c - d) * (c - d)).sum();
        step = if sy > 0.0 && yy > 0.0 { (sy / yy).clamp(1e-10, 1e4) } else { (step * 2.0).min(1e4) };
        z = trial;
        fz = ft;
        g = gt;
        if rel < s.rel_decrease_tol {
            converged = true;
            break;
        }
    }
    Ok(LocalResult { z, value: fz, iterations, converged, improved: fz < f_start })
}

/// Nelder–Mead with reflection 1, expansion 2, contraction ½ and shrink ½,
/// every vertex projected onto the box.
pub(crate) fn nelder_mead(
    f: &mut Objective<'_>,
    z0: &[f64],
    lo: &[f64],
    hi: &[f64],
    s: &OptimizerSettings,
) -> Result<LocalResult> {
    let n = z0.len();
    let start = project(z0, lo, hi);
    let (f0, _) = f(&start, false)?;
    if lo.iter().zip(hi).all(|(l, h)| l == h) {
        return Ok(LocalResult { z: start, value: f0, iterations: 0, converged: true, improved: false });
    }
    let mut eval = |p: &[f64]| -> f64 {
        match f(p, false) {
            Ok((v, _)) if v.is_finite() => v,
            _ => f64::INFINITY,
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(start.clone(), f0)];
    for i in 0..n {
        let mut v = start.clone();
        v[i] += 0.5;
        if v[i] > hi[i] {
            v[i] = start[i] - 0.5;
        }
        let v = project(&v, lo, hi);
        let fv = eval(&v);
        simplex.push((v, fv));
    }

    let max_iter = s.max_iter * (n + 1);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].0.clone();
        if simplex.iter().all(|(v, _)| dist(v, &best) < s.simplex_tol) {
            converged = true;
            break;
        }
        iterations += 1;
        let centroid: Vec<f64> =
            (0..n).map(|i| simplex[..n].iter().map(|(v, _)| v[i]).sum::<f64>() / n as f64).collect();
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> {
            project(&centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect::<Vec<_>>(), lo, hi)
        };
        let xr = along(1.0);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let xc = along(0.5);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                for v in simplex.iter_mut().skip(1) {
                    let shrunk: Vec<f64> = best.iter().zip(&v.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
                    let shrunk = project(&shrunk, lo, hi);
                    let fs = eval(&shrunk);
                    *v = (shrunk, fs);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (z, value) = simplex.swap_remove(0);
    Ok(LocalResult { z, value, iterations, converged, improved: value < f0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(z: &[f64], _g: bool) -> Result<(f64, Option<Vec<f64>>)> {
        let v = (z[0] - 1.0).powi(2) + 10.0 * (z[1] + 0.5).powi(2);
        Ok((v, Some(vec![2.0 * (z[0] - 1.0), 20.0 * (z[1] + 0.5)])))
    }

    #[test]
    fn gradient_descent_finds_interior_minimum() {
        let s = OptimizerSettings { rel_decrease_tol: 0.0, max_iter: 2000, ..Default::default() };
        let r = projected_gradient_descent(&mut quad, &[3.0, 3.0], &[-5.0, -5.0], &[5.0, 5.0], &s).unwrap();
        assert!(r.converged);
        assert!((r.z[0] - 1.0).abs() < 1e-7 && (r.z[1] + 0.5).abs() < 1e-7);
    }

    #[test]
    fn gradient_descent_respects_box() {
        let s = OptimizerSettings::default();
        let r = projected_gradient_descent(&mut quad, &[3.0, 3.0], &[2.0, 0.0], &[5.0, 5.0], &s).unwrap();
        assert!((r.z[0] - 2.0).abs() < 1e-12 && r.z[1].abs() < 1e-12);
    }

    #[test]
    fn nelder_mead_finds_minimum() {
        let s = OptimizerSettings::default();
        let r = nelder_mead(&mut quad, &[3.0, 3.0], &[-5.0, -5.0], &[5.0, 5.0], &s).unwrap();
        assert!(r.converged);
        assert!((r.z[0] - 1.0).abs() < 1e-6 && (r.z[1] + 0.5).abs() < 1e-6);
    }
}
