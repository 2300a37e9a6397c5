//! Box-constrained BFGS with central finite-difference gradients.
//!
//! The objective is only piecewise smooth (crossing times jump between
//! sections), so the line search backtracks until it finds a strict
//! decrease and the inverse-Hessian estimate is reset whenever the search
//! direction stops being a descent direction.

#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn clamp(&self, x: &mut [f64]) {
        for ((xi, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *xi = xi.clamp(*lo, *hi);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Options {
    pub max_iterations: usize,
    /// Relative objective decrease below which the run is converged.
    pub tolerance: f64,
    /// Relative half-width of the central difference.
    pub gradient_step: f64,
    /// Per-coordinate move limit of a trial step as `(relative, floor)`: the
    /// first trial moves coordinate `i` by at most `max(relative * |x_i|, floor)`.
    pub move_limits: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub gradient_norm: f64,
    /// Euclidean length of the accepted move.
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub objective: f64,
    pub initial_objective: f64,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;
/// Consecutive accepted steps with negligible decrease that end the run.
const STALL_LIMIT: usize = 3;
const MAX_BACKTRACKS: usize = 60;
/// Coordinates smaller than this in magnitude use it as the scale of their
/// finite-difference step.
const STEP_FLOOR: f64 = 1e-3;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Central-difference gradient; near a bound the stencil is clipped and the
/// difference quotient uses the actual width.
pub fn central_gradient(f: &impl Fn(&[f64]) -> f64, x: &[f64], bounds: &Bounds, step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = step * x[i].abs().max(STEP_FLOOR);
            let hi = (x[i] + h).min(bounds.upper[i]);
            let lo = (x[i] - h).max(bounds.lower[i]);
            if hi <= lo {
                return 0.0;
            }
            probe[i] = hi;
            let f_hi = f(&probe);
            probe[i] = lo;
            let f_lo = f(&probe);
            probe[i] = x[i];
            (f_hi - f_lo) / (hi - lo)
        })
        .collect()
}

/// Zeroes gradient components that push against an active bound.
fn project(g: &[f64], x: &[f64], bounds: &Bounds) -> Vec<f64> {
    g.iter()
        .enumerate()
        .map(|(i, &gi)| {
            let at_lower = x[i] <= bounds.lower[i] && gi > 0.0;
            let at_upper = x[i] >= bounds.upper[i] && gi < 0.0;
            if at_lower || at_upper {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

struct InverseHessian {
    n: usize,
    m: Vec<f64>,
    fresh: bool,
}

impl InverseHessian {
    fn identity(n: usize) -> Self {
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = 1.0;
        }
        Self { n, m, fresh: true }
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| dot(&self.m[i * self.n..(i + 1) * self.n], v)).collect()
    }

    fn update(&mut self, s: &[f64], y: &[f64]) {
        let sy = dot(s, y);
        if !(sy > 1e-12 * norm(s) * norm(y)) {
            return;
        }
        let n = self.n;
        if self.fresh {
            // Shanno-Phua scaling of the initial identity.
            let scale = sy / dot(y, y);
            self.m.iter_mut().for_each(|v| *v *= scale);
            self.fresh = false;
        }
        let rho = 1.0 / sy;
        let hy = self.apply(y);
        let yhy = dot(y, &hy);
        // H' = H - rho (H y s^T + s y^T H) + (rho^2 y^T H y + rho) s s^T
        for i in 0..n {
            for j in 0..n {
                self.m[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
            }
        }
    }
}

pub fn minimize(
    f: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    bounds: &Bounds,
    options: &Options,
    mut observer: impl FnMut(&IterationRecord),
) -> Outcome {
    let n = x0.len();
    let mut x = x0.to_vec();
    bounds.clamp(&mut x);
    let mut fx = f(&x);
    let initial_objective = fx;
    let mut g = central_gradient(&f, &x, bounds, options.gradient_step);
    let mut h = InverseHessian::identity(n);
    let mut iterations = Vec::new();
    let mut converged = false;
    let mut stalled = 0;

    for iteration in 1..=options.max_iterations {
        let pg = project(&g, &x, bounds);
        if pg.iter().all(|&v| v == 0.0) {
            converged = true;
            break;
        }
        let mut d: Vec<f64> = h.apply(&g).into_iter().map(|v| -v).collect();
        for i in 0..n {
            if (x[i] <= bounds.lower[i] && d[i] < 0.0) || (x[i] >= bounds.upper[i] && d[i] > 0.0) {
                d[i] = 0.0;
            }
        }
        if !(dot(&g, &d) < 0.0) {
            h = InverseHessian::identity(n);
            d = pg.iter().map(|v| -v).collect();
        }

        // Scale the first trial so no coordinate moves past its limit; a fresh
        // (unscaled) inverse Hessian is always scaled up or down to that limit.
        let ratio = d
            .iter()
            .zip(&x)
            .zip(&options.move_limits)
            .map(|((di, xi), (rel, floor))| di.abs() / (rel * xi.abs()).max(*floor))
            .fold(0.0_f64, f64::max);
        if ratio == 0.0 {
            converged = true;
            break;
        }
        let mut alpha = if h.fresh || ratio > 1.0 { 1.0 / ratio } else { 1.0 };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            bounds.clamp(&mut trial);
            let moved: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            let f_trial = f(&trial);
            if f_trial < fx && f_trial <= fx + ARMIJO * dot(&g, &moved) {
                accepted = Some((trial, f_trial, moved));
                break;
            }
            alpha *= 0.5;
        }

        let Some((x_new, f_new, s)) = accepted else {
            if h.fresh {
                // Steepest descent found no decrease either: a local minimum
                // up to line-search resolution, possibly at a kink.
                converged = true;
                break;
            }
            h = InverseHessian::identity(n);
            continue;
        };

        let g_new = central_gradient(&f, &x_new, bounds, options.gradient_step);
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        h.update(&s, &y);

        let decrease = fx - f_new;
        let record = IterationRecord {
            iteration,
            objective: f_new,
            gradient_norm: norm(&project(&g_new, &x_new, bounds)),
            step: norm(&s),
        };
        observer(&record);
        iterations.push(record);
        let scale = fx.abs().max(1.0);
        x = x_new;
        fx = f_new;
        g = g_new;
        if decrease <= options.tolerance * scale {
            stalled += 1;
            if stalled >= STALL_LIMIT {
                converged = true;
                break;
            }
            h = InverseHessian::identity(n);
        } else {
            stalled = 0;
        }
    }

    Outcome {
        x,
        objective: fx,
        initial_objective,
        iterations,
        converged,
    }
}
