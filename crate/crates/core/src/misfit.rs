//! Data misfits and their derivatives with respect to the synthetic record.

use crate::error::{invalid, Result};
use crate::grid::{Kernel1d, MollifierSpec};
use crate::wavesim::ShotRecord;

/// Traces with less total squared amplitude than this are rejected by W2.
pub const MIN_TRACE_MASS: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MisfitKind {
    #[default]
    L2,
    W2,
}

impl std::str::FromStr for MisfitKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l2" => Ok(Self::L2),
            "w2" => Ok(Self::W2),
            other => invalid(format!("unknown misfit '{other}', expected l2 or w2")),
        }
    }
}

impl std::fmt::Display for MisfitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::L2 => "l2",
            Self::W2 => "w2",
        })
    }
}

#[derive(Debug, Clone)]
pub struct MisfitResult {
    pub value: f64,
    /// Derivative of `value` with respect to every synthetic sample.
    pub adjoint_source: ShotRecord,
}

pub fn misfit(
    kind: MisfitKind,
    synthetic: &ShotRecord,
    observed: &ShotRecord,
) -> Result<MisfitResult> {
    match kind {
        MisfitKind::L2 => l2_misfit(synthetic, observed),
        MisfitKind::W2 => w2_misfit(synthetic, observed),
    }
}

/// `1/2 sum (s - d)^2 dt`.
pub fn l2_misfit(synthetic: &ShotRecord, observed: &ShotRecord) -> Result<MisfitResult> {
    synthetic.check_layout(observed)?;
    let dt = synthetic.dt;
    let mut adj = ShotRecord::zeros_like(synthetic);
    let mut value = 0.0;
    for ((a, s), d) in adj
        .samples_mut()
        .iter_mut()
        .zip(synthetic.samples())
        .zip(observed.samples())
    {
        let r = s - d;
        value += r * r;
        *a = r * dt;
    }
    Ok(MisfitResult {
        value: 0.5 * value * dt,
        adjoint_source: adj,
    })
}

/// Sum over traces of the squared quadratic Wasserstein distance between
/// `s^2 / sum s^2` and `d^2 / sum d^2`, each read as a piecewise-constant
/// density on the sample cells.
pub fn w2_misfit(synthetic: &ShotRecord, observed: &ShotRecord) -> Result<MisfitResult> {
    synthetic.check_layout(observed)?;
    let dt = synthetic.dt;
    let mut adj = ShotRecord::zeros_like(synthetic);
    let mut value = 0.0;
    for r in 0..synthetic.nr() {
        let s = synthetic.trace(r);
        let d = observed.trace(r);
        let (f, fs) = normalize(&s).ok_or_else(|| {
            crate::Error::InvalidInput(format!("synthetic trace {r} has no energy"))
        })?;
        let (g, _) = normalize(&d).ok_or_else(|| {
            crate::Error::InvalidInput(format!("observed trace {r} has no energy"))
        })?;
        let (w, dw) = w2_cells(&f, &g);
        value += w * dt * dt;
        let mean: f64 = dw.iter().zip(&f).map(|(a, b)| a * b).sum();
        let grad: Vec<f64> = s
            .iter()
            .zip(&dw)
            .map(|(sk, wk)| 2.0 * sk / fs * (wk - mean) * dt * dt)
            .collect();
        adj.set_trace(r, &grad);
    }
    Ok(MisfitResult {
        value,
        adjoint_source: adj,
    })
}

/// Squared-amplitude density and its mass, or `None` below [`MIN_TRACE_MASS`].
fn normalize(trace: &[f64]) -> Option<(Vec<f64>, f64)> {
    let mass: f64 = trace.iter().map(|v| v * v).sum();
    (mass >= MIN_TRACE_MASS).then(|| (trace.iter().map(|v| v * v / mass).collect(), mass))
}

/// W2 squared between unit-cell piecewise-constant densities with cell masses
/// `f` and `g`, and its derivative with respect to each `f_i`, defined up to a
/// common constant.
pub fn w2_cells(f: &[f64], g: &[f64]) -> (f64, Vec<f64>) {
    let n = f.len();
    debug_assert_eq!(n, g.len());
    // Per source cell: int R and int R (x - i) over the cell, R(x) = x - T(x).
    let mut r_int = vec![0.0; n];
    let mut r_mom = vec![0.0; n];
    let mut value = 0.0;
    let (mut i, mut j) = (0, 0);
    let (mut used_f, mut used_g) = (0.0, 0.0);
    let mut y_now = first_positive(g).map_or(0.0, |k| k as f64);
    while i < n {
        if f[i] <= 0.0 {
            // T is constant across an empty source cell.
            let c = i as f64 - y_now;
            r_int[i] = c + 0.5;
            r_mom[i] = 0.5 * c + 1.0 / 3.0;
            i += 1;
            continue;
        }
        while j < n && g[j] - used_g <= 0.0 {
            j += 1;
            used_g = 0.0;
        }
        if j == n {
            // Round-off leaves no target mass; the rest maps to the end.
            let (a, u0) = (i as f64 - y_now, used_f / f[i]);
            r_int[i] += a * (1.0 - u0) + 0.5 * (1.0 - u0 * u0);
            r_mom[i] += 0.5 * a * (1.0 - u0 * u0) + (1.0 - u0 * u0 * u0) / 3.0;
            i += 1;
            used_f = 0.0;
            continue;
        }
        let rf = f[i] - used_f;
        let rg = g[j] - used_g;
        let dm = rf.min(rg);
        let u0 = used_f / f[i];
        let u1 = if rf <= rg { 1.0 } else { (used_f + dm) / f[i] };
        let v0 = used_g / g[j];
        let v1 = if rg <= rf { 1.0 } else { (used_g + dm) / g[j] };
        let (x0, x1) = (i as f64 + u0, i as f64 + u1);
        let (y0, y1) = (j as f64 + v0, j as f64 + v1);
        let (d0, d1) = (x0 - y0, x1 - y1);
        value += dm * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0;
        let len = u1 - u0;
        r_int[i] += 0.5 * len * (d0 + d1);
        let um = 0.5 * (u0 + u1);
        r_mom[i] += len / 6.0 * (d0 * u0 + 2.0 * (d0 + d1) * um + d1 * u1);
        y_now = y1;
        if rf <= rg {
            i += 1;
            used_f = 0.0;
            used_g += rf;
        } else {
            used_f += dm;
            j += 1;
            used_g = 0.0;
        }
    }
    // dW/df_i = -2 (int_cell R (x - i) + int_{x > i + 1} R).
    let mut grad = vec![0.0; n];
    let mut tail = 0.0;
    for k in (0..n).rev() {
        grad[k] = -2.0 * (r_mom[k] + tail);
        tail += r_int[k];
    }
    (value, grad)
}

fn first_positive(v: &[f64]) -> Option<usize> {
    v.iter().position(|&x| x > 0.0)
}

/// Time-axis mollification of every trace, `sigma_cells` in samples.
pub fn mollify_record(record: &ShotRecord, spec: &MollifierSpec) -> Result<ShotRecord> {
    mollify_record_impl(record, spec, false)
}

/// Transpose of [`mollify_record`].
pub fn mollify_record_transpose(record: &ShotRecord, spec: &MollifierSpec) -> Result<ShotRecord> {
    mollify_record_impl(record, spec, true)
}

fn mollify_record_impl(
    record: &ShotRecord,
    spec: &MollifierSpec,
    transpose: bool,
) -> Result<ShotRecord> {
    spec.validate()?;
    if spec.is_identity() {
        return Ok(record.clone());
    }
    let (nt, nr) = (record.nt(), record.nr());
    let k = Kernel1d::new(spec, nt);
    let mut out = ShotRecord::zeros_like(record);
    for r in 0..nr {
        if transpose {
            k.apply_transpose(record.samples(), out.samples_mut(), r, nr);
        } else {
            k.apply(record.samples(), out.samples_mut(), r, nr);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
