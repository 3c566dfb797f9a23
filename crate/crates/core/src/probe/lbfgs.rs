//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Line search follows the bracketing/zoom scheme of Nocedal & Wright
//! (Algorithms 3.5 and 3.6) with safeguarded cubic interpolation.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Optimizer settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptSettings {
    pub max_iterations: usize,
    /// Stop once the gradient's Euclidean norm falls to this value.
    pub grad_tol: f64,
    /// Number of curvature pairs kept.
    pub history: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Function evaluations allowed per line search.
    pub max_line_search: usize,
}

impl Default for OptSettings {
    fn default() -> Self {
        OptSettings {
            max_iterations: 500,
            grad_tol: 1e-6,
            history: 10,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
        }
    }
}

impl OptSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0 && self.grad_tol.is_finite()) {
            return Err(Error::InvalidArgument(format!("grad_tol must be positive, got {}", self.grad_tol)));
        }
        if self.history == 0 {
            return Err(Error::InvalidArgument("history must be at least 1".into()));
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "line search constants need 0 < c1 < c2 < 1, got c1={} c2={}",
                self.c1, self.c2
            )));
        }
        if self.max_line_search == 0 {
            return Err(Error::InvalidArgument("max_line_search must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone)]
struct Point {
    alpha: f64,
    f: f64,
    dg: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

struct Search<'a, F> {
    fg: &'a mut F,
    x0: &'a [f64],
    d: &'a [f64],
    f0: f64,
    dg0: f64,
    settings: &'a OptSettings,
    evals: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Search<'_, F> {
    fn eval(&mut self, alpha: f64) -> Point {
        self.evals += 1;
        let x: Vec<f64> = self.x0.iter().zip(self.d).map(|(x, d)| x + alpha * d).collect();
        let mut g = vec![0.0; x.len()];
        let f = (self.fg)(&x, &mut g);
        let dg = dot(&g, self.d);
        Point { alpha, f, dg, x, g }
    }

    fn armijo(&self, p: &Point) -> bool {
        p.f.is_finite() && p.f <= self.f0 + self.settings.c1 * p.alpha * self.dg0
    }

    fn curvature(&self, p: &Point) -> bool {
        p.dg.abs() <= -self.settings.c2 * self.dg0
    }

    fn run(&mut self, alpha_init: f64) -> Option<Point> {
        let mut prev = Point { alpha: 0.0, f: self.f0, dg: self.dg0, x: self.x0.to_vec(), g: Vec::new() };
        let mut alpha = alpha_init;
        let mut first = true;
        while self.evals < self.settings.max_line_search {
            let p = self.eval(alpha);
            if !self.armijo(&p) || (!first && p.f >= prev.f) {
                return self.zoom(prev, p);
            }
            if self.curvature(&p) {
                return Some(p);
            }
            if p.dg >= 0.0 {
                return self.zoom(p, prev);
            }
            first = false;
            alpha *= 2.0;
            prev = p;
        }
        (prev.alpha > 0.0).then_some(prev)
    }

    /// `lo` satisfies sufficient decrease and has the lower value; the
    /// minimizer lies between `lo` and `hi`.
    fn zoom(&mut self, mut lo: Point, mut hi: Point) -> Option<Point> {
        while self.evals < self.settings.max_line_search {
            let alpha = interpolate(&lo, &hi);
            if (hi.alpha - lo.alpha).abs() < 1e-16 * lo.alpha.abs().max(1.0) {
                break;
            }
            let p = self.eval(alpha);
            if !self.armijo(&p) || p.f >= lo.f {
                hi = p;
            } else {
                if self.curvature(&p) {
                    return Some(p);
                }
                if p.dg * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = p;
            }
        }
        // budget exhausted: accept the best point with sufficient decrease
        (lo.alpha > 0.0).then_some(lo)
    }
}

/// Minimizer of the cubic matching values and slopes at both ends, clamped
/// away from the ends; bisection when the cubic is unusable.
fn interpolate(a: &Point, b: &Point) -> f64 {
    let (lo, hi) = if a.alpha < b.alpha { (a.alpha, b.alpha) } else { (b.alpha, a.alpha) };
    let width = hi - lo;
    let mid = 0.5 * (lo + hi);
    if !(b.f.is_finite() && a.f.is_finite() && a.dg.is_finite() && b.dg.is_finite()) {
        return mid;
    }
    let d1 = a.dg + b.dg - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.dg * b.dg;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let denom = b.dg - a.dg + 2.0 * d2;
    if denom == 0.0 {
        return mid;
    }
    let t = b.alpha - (b.alpha - a.alpha) * (b.dg + d2 - d1) / denom;
    if !t.is_finite() || t < lo + 0.1 * width || t > hi - 0.1 * width {
        mid
    } else {
        t
    }
}

/// Minimizes `fg`, which returns the objective and writes the gradient into
/// its second argument.
pub fn minimize<F>(mut fg: F, x0: Vec<f64>, settings: &OptSettings) -> Result<Minimum>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    settings.validate()?;
    let dim = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; dim];
    let mut f = fg(&x, &mut g);
    if !f.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut iterations = 0;

    while iterations < settings.max_iterations {
        let gnorm = norm(&g);
        if gnorm <= settings.grad_tol {
            return Ok(Minimum { x, f, grad_norm: gnorm, iterations, converged: true });
        }

        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = vec![0.0; s_hist.len()];
        for i in (0..s_hist.len()).rev() {
            alphas[i] = rho_hist[i] * dot(&s_hist[i], &d);
            for (dj, yj) in d.iter_mut().zip(&y_hist[i]) {
                *dj -= alphas[i] * yj;
            }
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for i in 0..s_hist.len() {
            let beta = rho_hist[i] * dot(&y_hist[i], &d);
            for (dj, sj) in d.iter_mut().zip(&s_hist[i]) {
                *dj += (alphas[i] - beta) * sj;
            }
        }

        let mut dg0 = dot(&g, &d);
        if !(dg0 < 0.0) {
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            d = g.iter().map(|v| -v).collect();
            dg0 = -gnorm * gnorm;
        }
        let alpha_init = if s_hist.is_empty() { (1.0 / gnorm).min(1.0) } else { 1.0 };

        let step = Search { fg: &mut fg, x0: &x, d: &d, f0: f, dg0, settings, evals: 0 }.run(alpha_init);
        let Some(p) = step else {
            if s_hist.is_empty() {
                // no progress along steepest descent: numerically converged
                break;
            }
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            continue;
        };
        iterations += 1;

        let s: Vec<f64> = p.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if s_hist.len() == settings.history {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
            rho_hist.push(1.0 / sy);
        }
        let stalled = f - p.f <= f64::EPSILON * f.abs().max(1.0) * 1e-2;
        x = p.x;
        g = p.g;
        f = p.f;
        if !f.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        if stalled && s_hist.is_empty() {
            break;
        }
    }
    let grad_norm = norm(&g);
    Ok(Minimum { x, f, grad_norm, iterations, converged: grad_norm <= settings.grad_tol })
}
