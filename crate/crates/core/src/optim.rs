//! Bound-constrained limited-memory BFGS with a strong-Wolfe search along the
//! projected path.

use std::collections::VecDeque;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsbConfig {
    /// Correction pairs retained.
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when the projected gradient norm falls below this fraction of its initial value.
    pub gradient_tolerance: f64,
    /// Stop when an iteration lowers the objective by less than this fraction.
    pub relative_decrease_tolerance: f64,
    /// Length of the first trial step, in variable units along the steepest direction.
    pub initial_step: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
    /// Abort when the objective exceeds this multiple of its starting value.
    pub divergence_factor: f64,
}

impl Default for LbfgsbConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iterations: 50,
            gradient_tolerance: 1e-8,
            relative_decrease_tolerance: 0.0,
            initial_step: 1.0,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 20,
            divergence_factor: 10.0,
        }
    }
}

impl LbfgsbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 {
            return invalid("optimizer memory must be at least 1");
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return invalid(format!(
                "line search needs 0 < c1 < c2 < 1, got {} and {}",
                self.c1, self.c2
            ));
        }
        if !(self.initial_step > 0.0)
            || !(self.gradient_tolerance >= 0.0)
            || !(self.relative_decrease_tolerance >= 0.0)
        {
            return invalid(
                "optimizer tolerances must be nonnegative and the initial step positive",
            );
        }
        if self.max_line_search == 0 {
            return invalid("line search needs at least one trial");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxIterations,
    GradientTolerance,
    RelativeDecrease,
    LineSearchFailure,
    /// Zero projected gradient.
    Stationary,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::MaxIterations => "max_iterations",
            Self::GradientTolerance => "gradient_tolerance",
            Self::RelativeDecrease => "relative_decrease",
            Self::LineSearchFailure => "line_search_failure",
            Self::Stationary => "stationary",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub value: f64,
    /// Euclidean norm of the projected gradient.
    pub grad_norm: f64,
    /// Accepted step along the search direction (0 at the start point).
    pub step_length: f64,
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub history: Vec<IterationRecord>,
    pub termination: Termination,
    pub evaluations: usize,
}

/// Box constraints `lower <= x <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return invalid("bound vectors differ in length");
        }
        for (k, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l <= u) || l.is_nan() || u.is_nan() {
                return invalid(format!("infeasible bounds at variable {k}: [{l}, {u}]"));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn uniform(n: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; n], vec![upper; n])
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .all(|((v, l), u)| l <= v && v <= u)
    }

    /// Variables held at a bound by a gradient pointing outwards.
    fn active(&self, x: &[f64], g: &[f64]) -> Vec<bool> {
        x.iter()
            .zip(g)
            .zip(self.lower.iter().zip(&self.upper))
            .map(|((&v, &gk), (&l, &u))| (v <= l && gk > 0.0) || (v >= u && gk < 0.0) || l == u)
            .collect()
    }
}

fn dot_masked(a: &[f64], b: &[f64], free: &[bool]) -> f64 {
    a.iter()
        .zip(b)
        .zip(free)
        .filter(|(_, &f)| f)
        .map(|((x, y), _)| x * y)
        .sum()
}

fn projected_norm(g: &[f64], active: &[bool]) -> f64 {
    g.iter()
        .zip(active)
        .filter(|(_, &a)| !a)
        .map(|(v, _)| v * v)
        .sum::<f64>()
        .sqrt()
}

struct Evaluator<'a, F> {
    f: F,
    bounds: &'a Bounds,
    count: usize,
}

impl<F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>> Evaluator<'_, F> {
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.count += 1;
        match (self.f)(x) {
            Ok((v, g)) if v.is_finite() && g.iter().all(|c| c.is_finite()) => Ok((v, g)),
            Ok(_) | Err(Error::Numerical(_)) => Ok((f64::INFINITY, vec![0.0; x.len()])),
            Err(e) => Err(e),
        }
    }

    /// Point, value, gradient and path slope at `P(x + alpha d)`.
    fn at(&mut self, x: &[f64], d: &[f64], alpha: f64) -> Result<Trial> {
        let mut p: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + alpha * b).collect();
        self.bounds.project(&mut p);
        let (v, g) = self.eval(&p)?;
        let slope = g
            .iter()
            .zip(d)
            .zip(self.bounds.lower.iter().zip(&self.bounds.upper))
            .zip(&p)
            .filter(|(((_, &dk), (&l, &u)), &pk)| !((pk <= l && dk < 0.0) || (pk >= u && dk > 0.0)))
            .map(|(((gk, dk), _), _)| gk * dk)
            .sum();
        Ok(Trial {
            alpha,
            x: p,
            value: v,
            grad: g,
            slope,
        })
    }
}

#[derive(Debug, Clone)]
struct Trial {
    alpha: f64,
    x: Vec<f64>,
    value: f64,
    grad: Vec<f64>,
    slope: f64,
}

/// Minimizer of the cubic through two points with slopes, safeguarded into
/// the inner 80% of the interval.
fn interpolate(a: &Trial, b: &Trial) -> f64 {
    let (lo, hi) = if a.alpha < b.alpha {
        (a.alpha, b.alpha)
    } else {
        (b.alpha, a.alpha)
    };
    let guard = 0.1 * (hi - lo);
    let bisect = 0.5 * (lo + hi);
    if !a.value.is_finite() || !b.value.is_finite() {
        return bisect;
    }
    let d1 = a.slope + b.slope - 3.0 * (a.value - b.value) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.slope * b.slope;
    if disc < 0.0 {
        return bisect;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let t = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    if t.is_finite() && t > lo + guard && t < hi - guard {
        t
    } else {
        bisect
    }
}

/// Minimizes `f` over the box. `f` returns the value and gradient; a
/// [`Error::Numerical`] from `f` counts as an infinite value. `observe` sees
/// every accepted iterate.
pub fn minimize<F, O>(
    x0: &[f64],
    bounds: &Bounds,
    cfg: &LbfgsbConfig,
    f: F,
    mut observe: O,
) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    O: FnMut(&IterationRecord, &[f64]) -> Result<()>,
{
    cfg.validate()?;
    if x0.len() != bounds.lower.len() {
        return invalid("start point and bounds differ in length");
    }
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let mut ev = Evaluator {
        f,
        bounds,
        count: 0,
    };
    let (mut value, mut grad) = ev.eval(&x)?;
    if !value.is_finite() {
        return Err(Error::Numerical(
            "objective is not finite at the start point".into(),
        ));
    }
    let f0 = value;
    let mut active = bounds.active(&x, &grad);
    let pg0 = projected_norm(&grad, &active);
    let mut history = vec![IterationRecord {
        iteration: 0,
        value,
        grad_norm: pg0,
        step_length: 0.0,
    }];
    observe(&history[0], &x)?;
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut termination = Termination::MaxIterations;

    for it in 1..=cfg.max_iterations {
        let pg = projected_norm(&grad, &active);
        if pg == 0.0 {
            termination = Termination::Stationary;
            break;
        }
        if pg <= cfg.gradient_tolerance * pg0 {
            termination = Termination::GradientTolerance;
            break;
        }
        let free: Vec<bool> = active.iter().map(|a| !a).collect();
        let mut d = two_loop(&grad, &pairs, &free);
        let mut slope0 = dot_masked(&grad, &d, &free);
        if !(slope0 < 0.0) {
            pairs.clear();
            d = two_loop(&grad, &pairs, &free);
            slope0 = dot_masked(&grad, &d, &free);
        }
        let alpha0 = if pairs.is_empty() {
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            cfg.initial_step / dmax
        } else {
            1.0
        };
        let Some(trial) = line_search(&mut ev, &x, &d, value, slope0, alpha0, cfg)? else {
            if pairs.is_empty() {
                termination = Termination::LineSearchFailure;
                break;
            }
            pairs.clear();
            continue;
        };
        if trial.value > cfg.divergence_factor * f0 {
            return Err(Error::Numerical(format!(
                "objective diverged: {} exceeds {} times the initial {f0}",
                trial.value, cfg.divergence_factor
            )));
        }
        let s: Vec<f64> = trial.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = trial.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if sy > f64::EPSILON * yy && sy > 0.0 {
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        let decrease = value - trial.value;
        let previous = value;
        x = trial.x;
        value = trial.value;
        grad = trial.grad;
        active = bounds.active(&x, &grad);
        let rec = IterationRecord {
            iteration: it,
            value,
            grad_norm: projected_norm(&grad, &active),
            step_length: trial.alpha,
        };
        history.push(rec);
        observe(&rec, &x)?;
        if decrease <= cfg.relative_decrease_tolerance * previous.abs() {
            termination = Termination::RelativeDecrease;
            break;
        }
    }
    if termination == Termination::MaxIterations {
        let pg = projected_norm(&grad, &active);
        if pg == 0.0 {
            termination = Termination::Stationary;
        } else if pg <= cfg.gradient_tolerance * pg0 {
            termination = Termination::GradientTolerance;
        }
    }
    Ok(OptimResult {
        x,
        value,
        gradient: grad,
        history,
        termination,
        evaluations: ev.count,
    })
}

/// `-H g` on the free variables.
fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, free: &[bool]) -> Vec<f64> {
    let mut q: Vec<f64> = g
        .iter()
        .zip(free)
        .map(|(v, &f)| if f { *v } else { 0.0 })
        .collect();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot_masked(s, &q, free);
        for ((qk, yk), &f) in q.iter_mut().zip(y).zip(free) {
            if f {
                *qk -= a * yk;
            }
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let yy = dot_masked(y, y, free);
        let sy = dot_masked(s, y, free);
        let gamma = if yy > 0.0 && sy > 0.0 { sy / yy } else { 1.0 };
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot_masked(y, &q, free);
        for ((qk, sk), &f) in q.iter_mut().zip(s).zip(free) {
            if f {
                *qk += (a - b) * sk;
            }
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Strong-Wolfe search on `phi(alpha) = f(P(x + alpha d))`. Returns `None`
/// when no trial achieves sufficient decrease.
fn line_search<F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>>(
    ev: &mut Evaluator<'_, F>,
    x: &[f64],
    d: &[f64],
    f0: f64,
    slope0: f64,
    alpha0: f64,
    cfg: &LbfgsbConfig,
) -> Result<Option<Trial>> {
    let armijo = |t: &Trial| t.value <= f0 + cfg.c1 * t.alpha * slope0;
    let curvature = |t: &Trial| t.slope.abs() <= -cfg.c2 * slope0;
    // Beyond this step every free variable is clipped.
    let alpha_cap = x
        .iter()
        .zip(d)
        .zip(ev.bounds.lower.iter().zip(&ev.bounds.upper))
        .filter(|(_, (l, u))| l < u)
        .map(|((&xk, &dk), (&l, &u))| {
            if dk > 0.0 {
                (u - xk) / dk
            } else if dk < 0.0 {
                (l - xk) / dk
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0f64, f64::max);
    let mut prev = Trial {
        alpha: 0.0,
        x: x.to_vec(),
        value: f0,
        grad: Vec::new(),
        slope: slope0,
    };
    let mut best: Option<Trial> = None;
    let mut alpha = alpha0.min(alpha_cap);
    let mut evals = 0;
    let keep = |best: &mut Option<Trial>, t: &Trial| {
        if armijo(t) && best.as_ref().is_none_or(|b| t.value < b.value) {
            *best = Some(t.clone());
        }
    };
    let (mut lo, mut hi);
    loop {
        let t = ev.at(x, d, alpha)?;
        evals += 1;
        keep(&mut best, &t);
        if !armijo(&t) || (prev.alpha > 0.0 && t.value >= prev.value) {
            (lo, hi) = (prev, t);
            break;
        }
        if curvature(&t) {
            return Ok(Some(t));
        }
        if t.slope >= 0.0 {
            (lo, hi) = (t, prev);
            break;
        }
        if evals >= cfg.max_line_search || alpha >= alpha_cap {
            return Ok(best);
        }
        prev = t;
        alpha = (2.0 * alpha).min(alpha_cap);
    }
    while evals < cfg.max_line_search {
        let a = interpolate(&lo, &hi);
        if (hi.alpha - lo.alpha).abs() <= 1e-12 * lo.alpha.max(hi.alpha) {
            break;
        }
        let t = ev.at(x, d, a)?;
        evals += 1;
        keep(&mut best, &t);
        if !armijo(&t) || t.value >= lo.value {
            hi = t;
        } else {
            if curvature(&t) {
                return Ok(Some(t));
            }
            if t.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
    }
    Ok(best)
}
