//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Full-batch quasi-Newton driver for the training losses: two-loop recursion
//! over a short `(s, y)` history, cubic-interpolation line search enforcing
//! the strong Wolfe conditions, and best-iterate tracking so a failed line
//! search degrades gracefully instead of aborting.

use std::collections::VecDeque;

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct LbfgsConfig {
    /// Number of `(s, y)` pairs kept for the two-loop recursion.
    pub history: usize,
    pub max_epochs: usize,
    /// Stop when the gradient norm falls below this.
    pub grad_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search: usize,
    /// Line-search bracket width cutoff.
    pub step_tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            history: 10,
            max_epochs: 100,
            grad_tol: 1e-9,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
            step_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    MaxEpochs,
    LineSearchFailure,
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    /// Best iterate found.
    pub x: Vec<f64>,
    /// Objective at the best iterate.
    pub f: f64,
    pub epochs_run: usize,
    pub reason: StopReason,
    /// Objective value per accepted epoch; index 0 is the starting point.
    pub f_history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Cubic minimizer of a 1-D function from values and derivatives at two
/// points, clipped to `bounds`.
fn cubic_interpolate(
    x1: f64,
    f1: f64,
    g1: f64,
    x2: f64,
    f2: f64,
    g2: f64,
    bounds: Option<(f64, f64)>,
) -> f64 {
    let (lo, hi) = match bounds {
        Some(b) => b,
        None => {
            if x1 < x2 {
                (x1, x2)
            } else {
                (x2, x1)
            }
        }
    };
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_square = d1 * d1 - g1 * g2;
    if d2_square >= 0.0 {
        let d2 = d2_square.sqrt();
        let min_pos = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        min_pos.clamp(lo, hi)
    } else {
        0.5 * (lo + hi)
    }
}

#[derive(Clone)]
struct LinePoint {
    t: f64,
    f: f64,
    g: Vec<f64>,
    gtd: f64,
}

/// Strong-Wolfe line search along `d` (bracket phase, then zoom with cubic
/// interpolation). Returns the accepted point and whether both Wolfe
/// conditions were satisfied.
fn strong_wolfe<F>(
    eval: &mut F,
    x0: &[f64],
    d: &[f64],
    t_init: f64,
    f0: f64,
    g0: &[f64],
    gtd0: f64,
    cfg: &LbfgsConfig,
) -> Result<(LinePoint, bool)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let d_norm = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut trial = |t: f64| -> Result<LinePoint> {
        let mut x = x0.to_vec();
        axpy(t, d, &mut x);
        let (f, g) = eval(&x)?;
        let gtd = dot(&g, d);
        Ok(LinePoint { t, f, g, gtd })
    };

    let mut t = t_init;
    let mut cur = trial(t)?;
    let mut ls_iter = 0usize;
    let mut prev = LinePoint { t: 0.0, f: f0, g: g0.to_vec(), gtd: gtd0 };
    let mut bracket: Option<(LinePoint, LinePoint)> = None;
    let mut done = false;

    while ls_iter < cfg.max_line_search {
        if cur.f > f0 + cfg.c1 * t * gtd0 || (ls_iter > 1 && cur.f >= prev.f) {
            bracket = Some((prev, cur.clone()));
            break;
        }
        if cur.gtd.abs() <= -cfg.c2 * gtd0 {
            done = true;
            break;
        }
        if cur.gtd >= 0.0 {
            bracket = Some((prev, cur.clone()));
            break;
        }
        let min_step = t + 0.01 * (t - prev.t);
        let max_step = t * 10.0;
        let next_t = cubic_interpolate(
            prev.t,
            prev.f,
            prev.gtd,
            t,
            cur.f,
            cur.gtd,
            Some((min_step, max_step)),
        );
        prev = cur;
        t = next_t;
        cur = trial(t)?;
        ls_iter += 1;
    }

    if done {
        return Ok((cur, true));
    }

    let (mut low, mut high) = match bracket {
        Some((a, b)) => {
            if a.f <= b.f {
                (a, b)
            } else {
                (b, a)
            }
        }
        None => {
            // Budget exhausted while still descending: bracket [0, t].
            let zero = LinePoint { t: 0.0, f: f0, g: g0.to_vec(), gtd: gtd0 };
            if f0 <= cur.f {
                (zero, cur)
            } else {
                (cur, zero)
            }
        }
    };

    // Zoom phase.
    let mut insufficient = false;
    while !done && ls_iter < cfg.max_line_search {
        if (high.t - low.t).abs() * d_norm < cfg.step_tol {
            break;
        }
        let mut t_new = cubic_interpolate(low.t, low.f, low.gtd, high.t, high.f, high.gtd, None);

        // Nudge interpolants that crowd the bracket boundary.
        let max_b = low.t.max(high.t);
        let min_b = low.t.min(high.t);
        let eps = 0.1 * (max_b - min_b);
        if (max_b - t_new).min(t_new - min_b) < eps {
            if insufficient || t_new >= max_b || t_new <= min_b {
                t_new = if (t_new - max_b).abs() < (t_new - min_b).abs() {
                    max_b - eps
                } else {
                    min_b + eps
                };
                insufficient = false;
            } else {
                insufficient = true;
            }
        } else {
            insufficient = false;
        }

        let cand = trial(t_new)?;
        ls_iter += 1;
        if cand.f > f0 + cfg.c1 * cand.t * gtd0 || cand.f >= low.f {
            high = cand;
            if low.f > high.f {
                std::mem::swap(&mut low, &mut high);
            }
        } else {
            if cand.gtd.abs() <= -cfg.c2 * gtd0 {
                done = true;
            } else if cand.gtd * (high.t - low.t) >= 0.0 {
                // The old low brackets the minimizer from the other side now.
                high = low;
            }
            low = cand;
        }
    }

    Ok((low, done))
}

/// Minimizes `objective` (which must return the value and the exact
/// gradient) starting from `x0`.
pub fn lbfgs_minimize<F>(mut objective: F, x0: &[f64], cfg: &LbfgsConfig) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if cfg.history == 0 {
        return Err(Error::InvalidConfig("history must be positive".into()));
    }
    let mut x = x0.to_vec();
    let (mut f, mut g) = objective(&x)?;
    if !f.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0 });
    }
    let mut f_history = vec![f];

    if norm(&g) <= cfg.grad_tol {
        return Ok(LbfgsOutcome {
            x,
            f,
            epochs_run: 0,
            reason: StopReason::GradientTolerance,
            f_history,
        });
    }

    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.history);
    let mut reason = StopReason::MaxEpochs;
    let mut epochs_run = 0;

    for epoch in 1..=cfg.max_epochs {
        // Two-loop recursion: d = -H g.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(memory.len());
        for (s, y, rho) in memory.iter().rev() {
            let alpha = rho * dot(s, &q);
            axpy(-alpha, y, &mut q);
            alphas.push(alpha);
        }
        if let Some((s, y, _)) = memory.back() {
            let ys = dot(y, s);
            let yy = dot(y, y);
            if yy > 0.0 && ys > 0.0 {
                let gamma = ys / yy;
                q.iter_mut().for_each(|v| *v *= gamma);
            }
        }
        for ((s, y, rho), alpha) in memory.iter().zip(alphas.iter().rev()) {
            let beta = rho * dot(y, &q);
            axpy(alpha - beta, s, &mut q);
        }
        let mut d = q;
        d.iter_mut().for_each(|v| *v = -*v);

        let mut gtd = dot(&g, &d);
        if gtd >= 0.0 {
            // Degenerate curvature history: restart from steepest descent.
            memory.clear();
            d = g.iter().map(|v| -v).collect();
            gtd = dot(&g, &d);
        }

        let t_init = if memory.is_empty() {
            (1.0f64).min(1.0 / g.iter().map(|v| v.abs()).sum::<f64>().max(1e-300))
        } else {
            1.0
        };

        let (accepted, _wolfe_ok) =
            strong_wolfe(&mut objective, &x, &d, t_init, f, &g, gtd, cfg)?;
        if !accepted.f.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        if accepted.t <= 0.0 || accepted.f >= f {
            reason = StopReason::LineSearchFailure;
            break;
        }

        // Accept the step: x += t d.
        axpy(accepted.t, &d, &mut x);

        // Curvature pair (s, y) = (t d, g_new - g).
        let mut s = d;
        s.iter_mut().for_each(|v| *v *= accepted.t);
        let mut y = accepted.g.clone();
        for (yi, gi) in y.iter_mut().zip(&g) {
            *yi -= gi;
        }
        let ys = dot(&y, &s);
        if ys > 1e-10 * norm(&y).max(1e-300) * norm(&s).max(1e-300) {
            if memory.len() == cfg.history {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / ys));
        }

        f = accepted.f;
        g = accepted.g;
        f_history.push(f);
        epochs_run = epoch;

        if norm(&g) <= cfg.grad_tol {
            reason = StopReason::GradientTolerance;
            break;
        }
    }

    Ok(LbfgsOutcome { x, f, epochs_run, reason, f_history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Convex quadratic `0.5 x'Ax - b'x` with SPD `A`; minimizer solves
    /// `Ax = b`.
    fn quadratic(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // A = L L' + n I keeps the spectrum well away from zero.
        let l: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = if i == j { n as f64 } else { 0.0 };
                for k in 0..n {
                    acc += l[i][k] * l[j][k];
                }
                a[i][j] = acc;
            }
        }
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        // Reference solution by Gaussian elimination (independent route).
        let mut aug: Vec<Vec<f64>> = a
            .iter()
            .zip(&b)
            .map(|(row, &bi)| {
                let mut r = row.clone();
                r.push(bi);
                r
            })
            .collect();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| aug[i][col].abs().partial_cmp(&aug[j][col].abs()).unwrap())
                .unwrap();
            aug.swap(col, piv);
            let p = aug[col][col];
            for i in 0..n {
                if i != col {
                    let factor = aug[i][col] / p;
                    for j in col..=n {
                        aug[i][j] -= factor * aug[col][j];
                    }
                }
            }
        }
        let x_star: Vec<f64> = (0..n).map(|i| aug[i][n] / aug[i][i]).collect();
        (a, b, x_star)
    }

    #[test]
    fn converges_on_convex_quadratic() {
        let n = 10;
        let (a, b, x_star) = quadratic(n, 4);
        let obj = |x: &[f64]| -> crate::Result<(f64, Vec<f64>)> {
            let mut ax = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    ax[i] += a[i][j] * x[j];
                }
            }
            let f = 0.5 * dot(&ax, x) - dot(&b, x);
            let g: Vec<f64> = (0..n).map(|i| ax[i] - b[i]).collect();
            Ok((f, g))
        };
        let cfg = LbfgsConfig { max_epochs: 50, ..Default::default() };
        let out = lbfgs_minimize(obj, &vec![0.0; n], &cfg).unwrap();
        let err: f64 = out
            .x
            .iter()
            .zip(&x_star)
            .map(|(xi, si)| (xi - si) * (xi - si))
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-8, "solution error {err} after {} epochs", out.epochs_run);
        assert!(out.epochs_run <= 50);
    }

    #[test]
    fn converges_on_rosenbrock() {
        let obj = |x: &[f64]| -> crate::Result<(f64, Vec<f64>)> {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ];
            Ok((f, g))
        };
        let cfg = LbfgsConfig { max_epochs: 200, ..Default::default() };
        let out = lbfgs_minimize(obj, &[-1.2, 1.0], &cfg).unwrap();
        assert!(out.f < 1e-10, "rosenbrock reached f = {}", out.f);
        assert!((out.x[0] - 1.0).abs() < 1e-4 && (out.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn already_optimal_start_terminates_with_zero_epochs() {
        let obj = |x: &[f64]| -> crate::Result<(f64, Vec<f64>)> {
            Ok((x[0] * x[0], vec![2.0 * x[0]]))
        };
        let out = lbfgs_minimize(obj, &[0.0], &LbfgsConfig::default()).unwrap();
        assert_eq!(out.epochs_run, 0);
        assert_eq!(out.reason, StopReason::GradientTolerance);
        assert_eq!(out.f_history.len(), 1);
    }

    #[test]
    fn accepted_steps_never_increase_the_objective() {
        let obj = |x: &[f64]| -> crate::Result<(f64, Vec<f64>)> {
            // A gently nonconvex well.
            let f: f64 = x.iter().map(|v| v.cosh().ln()).sum();
            let g: Vec<f64> = x.iter().map(|v| v.tanh()).collect();
            Ok((f, g))
        };
        let cfg = LbfgsConfig { max_epochs: 60, ..Default::default() };
        let out = lbfgs_minimize(obj, &[2.0, -3.0, 0.5, 1.5], &cfg).unwrap();
        for w in out.f_history.windows(2) {
            assert!(w[1] <= w[0], "objective increased: {} -> {}", w[0], w[1]);
        }
        assert!(out.f < 1e-8);
    }
}
