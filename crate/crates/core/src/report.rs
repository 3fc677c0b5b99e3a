//! Concentration estimates from inverted models and data-comparison
//! diagnostics.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::grid::ScalarField2D;
use crate::medium::{probability_from_slowness, MediumConstants, ProbabilityField};
use crate::wavesim::{average_records, AcquisitionGeometry, ShotRecord};

/// Volume fraction: midpoint-rule integral of `p` over the grid divided by its area.
pub fn concentration_from_probability(p: &ProbabilityField) -> f64 {
    let g = p.geometry();
    p.field().values().iter().sum::<f64>() * g.cell_area() / g.area()
}

/// Fraction of cells whose velocity is the sediment speed.
pub fn concentration_from_realization(
    velocity: &ScalarField2D,
    constants: &MediumConstants,
) -> f64 {
    let tol = 1e-9 * constants.c1;
    let n = velocity
        .values()
        .iter()
        .filter(|v| (*v - constants.c1).abs() <= tol)
        .count();
    n as f64 / velocity.values().len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Plain,
    ShotAveraging,
    ModelMollification,
    Both,
}

impl Method {
    pub fn from_flags(shot_averaging: bool, model_mollification: bool) -> Self {
        match (shot_averaging, model_mollification) {
            (false, false) => Self::Plain,
            (true, false) => Self::ShotAveraging,
            (false, true) => Self::ModelMollification,
            (true, true) => Self::Both,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Plain => "plain",
            Self::ShotAveraging => "shot_averaging",
            Self::ModelMollification => "model_mollification",
            Self::Both => "both",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "plain" => Ok(Self::Plain),
            "shot_averaging" => Ok(Self::ShotAveraging),
            "model_mollification" => Ok(Self::ModelMollification),
            "both" => Ok(Self::Both),
            other => invalid(format!("unknown method '{other}'")),
        }
    }
}

/// One row of the concentration table.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationReport {
    pub method: Method,
    pub inverted_value: f64,
    /// Fraction of sediment cells in the first realization.
    pub exact_single: f64,
    pub estimated_from_p: f64,
    /// Mean fraction over all realizations.
    pub exact_multi: f64,
    /// `|inverted - target| / target` against single, p and multi, in that order.
    pub relative_errors: [f64; 3],
    /// Cells of the inverted model clamped into `[0, 1)`.
    pub clamped_cells: usize,
}

fn relative_error(value: f64, target: f64) -> f64 {
    if target == 0.0 {
        if value == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (value - target).abs() / target
    }
}

/// Concentration row comparing an inverted slowness-squared model with the
/// true probability and with realization velocity fields.
pub fn build_report(
    inverted_m: &ScalarField2D,
    prob_truth: &ProbabilityField,
    realizations: &[ScalarField2D],
    constants: &MediumConstants,
    method: Method,
) -> Result<ConcentrationReport> {
    if realizations.is_empty() {
        return invalid("at least one realization is required");
    }
    let recovered = probability_from_slowness(inverted_m, constants)?;
    let inverted_value = concentration_from_probability(&recovered.probability);
    let fractions: Vec<f64> = realizations
        .par_iter()
        .map(|v| concentration_from_realization(v, constants))
        .collect();
    let exact_single = fractions[0];
    let exact_multi = fractions.iter().sum::<f64>() / fractions.len() as f64;
    let estimated_from_p = concentration_from_probability(prob_truth);
    Ok(ConcentrationReport {
        method,
        inverted_value,
        exact_single,
        estimated_from_p,
        exact_multi,
        relative_errors: [
            relative_error(inverted_value, exact_single),
            relative_error(inverted_value, estimated_from_p),
            relative_error(inverted_value, exact_multi),
        ],
        clamped_cells: recovered.clamped,
    })
}

impl ConcentrationReport {
    /// Mass concentrations from volume fractions; relative errors are unchanged.
    pub fn scaled(&self, sediment_density: f64) -> Self {
        Self {
            inverted_value: self.inverted_value * sediment_density,
            exact_single: self.exact_single * sediment_density,
            estimated_from_p: self.estimated_from_p * sediment_density,
            exact_multi: self.exact_multi * sediment_density,
            ..self.clone()
        }
    }
}

pub const REPORT_CSV_HEADER: &str = "method,inverted_value,exact_single,estimated_from_p,exact_multi,rel_err_single,rel_err_p,rel_err_multi";

pub fn reports_csv(rows: &[ConcentrationReport]) -> String {
    let mut s = format!("{REPORT_CSV_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
            r.method,
            r.inverted_value,
            r.exact_single,
            r.estimated_from_p,
            r.exact_multi,
            r.relative_errors[0],
            r.relative_errors[1],
            r.relative_errors[2]
        ));
    }
    s
}

/// Plain-text table with concentrations and relative errors in percent.
pub fn reports_table(rows: &[ConcentrationReport]) -> String {
    let mut s = format!(
        "{:<20} {:>10} {:>14} {:>14} {:>14} {:>10} {:>10} {:>10}\n",
        "method",
        "inverted",
        "exact single",
        "from p(x)",
        "exact multi",
        "err sgl %",
        "err p %",
        "err mul %"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<20} {:>10.6} {:>14.6} {:>14.6} {:>14.6} {:>10.4} {:>10.4} {:>10.4}\n",
            r.method.to_string(),
            r.inverted_value,
            r.exact_single,
            r.estimated_from_p,
            r.exact_multi,
            100.0 * r.relative_errors[0],
            100.0 * r.relative_errors[1],
            100.0 * r.relative_errors[2]
        ));
    }
    s
}

/// First-arrival window `[0.9 t, t + 3 / f0]` with `t` the straight-ray
/// travel time at `speed`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalWindow {
    pub speed: f64,
    pub f0: f64,
}

impl ArrivalWindow {
    pub fn new(speed: f64, f0: f64) -> Result<Self> {
        if !(speed > 0.0 && f0 > 0.0) {
            return invalid("window speed and frequency must be positive");
        }
        Ok(Self { speed, f0 })
    }

    pub fn bounds(&self, source: (f64, f64), receiver: (f64, f64)) -> (f64, f64) {
        let t =
            ((source.0 - receiver.0).powi(2) + (source.1 - receiver.1).powi(2)).sqrt() / self.speed;
        (0.9 * t, t + 3.0 / self.f0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceComparison {
    pub source_id: usize,
    pub receiver: usize,
    pub window: (f64, f64),
    /// Windowed relative L2 difference of the first realization.
    pub single: f64,
    /// Windowed relative L2 difference of the realization average.
    pub averaged: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub realizations: usize,
    pub traces: Vec<TraceComparison>,
    /// Windowed relative differences pooled over all traces.
    pub single_total: f64,
    pub averaged_total: f64,
}

impl ComparisonReport {
    /// Fraction of traces where averaging does not increase the difference.
    pub fn averaged_not_worse_fraction(&self) -> f64 {
        let n = self
            .traces
            .iter()
            .filter(|t| t.averaged <= t.single)
            .count();
        n as f64 / self.traces.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("source,receiver,t_start,t_end,single_rel_l2,averaged_rel_l2\n");
        for t in &self.traces {
            s.push_str(&format!(
                "{},{},{:e},{:e},{:e},{:e}\n",
                t.source_id, t.receiver, t.window.0, t.window.1, t.single, t.averaged
            ));
        }
        s
    }
}

fn windowed(trace_a: &[f64], trace_b: &[f64], dt: f64, window: (f64, f64)) -> (f64, f64) {
    let (mut diff, mut norm) = (0.0, 0.0);
    for (k, (a, b)) in trace_a.iter().zip(trace_b).enumerate() {
        let t = k as f64 * dt;
        if t >= window.0 && t <= window.1 {
            diff += (a - b) * (a - b);
            norm += b * b;
        }
    }
    (diff, norm)
}

/// Effective data against the first and the averaged heterogeneous data,
/// `d_het` indexed `[realization][source]`, inside first-arrival windows.
pub fn data_comparison(
    d_eff: &[ShotRecord],
    d_het: &[Vec<ShotRecord>],
    acq: &AcquisitionGeometry,
    window: &ArrivalWindow,
) -> Result<ComparisonReport> {
    if d_het.is_empty() {
        return invalid("at least one heterogeneous data set is required");
    }
    if d_eff.len() != acq.sources.len() || d_het.iter().any(|d| d.len() != d_eff.len()) {
        return invalid("every data set needs one record per source");
    }
    let mut traces = Vec::new();
    let (mut s_diff, mut a_diff, mut total_norm) = (0.0, 0.0, 0.0);
    for (k, eff) in d_eff.iter().enumerate() {
        let shots: Vec<ShotRecord> = d_het.iter().map(|d| d[k].clone()).collect();
        for s in &shots {
            eff.check_layout(s)?;
        }
        let avg = average_records(&shots)?;
        for r in 0..eff.nr() {
            let w = window.bounds(acq.sources[k].position, eff.receivers[r]);
            let e = eff.trace(r);
            let (ds, norm) = windowed(&shots[0].trace(r), &e, eff.dt, w);
            let (da, _) = windowed(&avg.trace(r), &e, eff.dt, w);
            if norm == 0.0 {
                return invalid(format!(
                    "effective trace {r} of source {k} is silent in its window"
                ));
            }
            s_diff += ds;
            a_diff += da;
            total_norm += norm;
            traces.push(TraceComparison {
                source_id: eff.source_id,
                receiver: r,
                window: w,
                single: (ds / norm).sqrt(),
                averaged: (da / norm).sqrt(),
            });
        }
    }
    Ok(ComparisonReport {
        realizations: d_het.len(),
        traces,
        single_total: (s_diff / total_norm).sqrt(),
        averaged_total: (a_diff / total_norm).sqrt(),
    })
}

/// Time at which `|trace|` first reaches `fraction` of its maximum, linearly
/// interpolated between samples; `None` for a silent trace.
pub fn first_arrival_time(trace: &[f64], dt: f64, fraction: f64) -> Option<f64> {
    let peak = trace.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return None;
    }
    let level = fraction * peak;
    let k = trace.iter().position(|v| v.abs() >= level)?;
    if k == 0 {
        return Some(0.0);
    }
    let (a, b) = (trace[k - 1].abs(), trace[k].abs());
    Some((k as f64 - 1.0 + (level - a) / (b - a)) * dt)
}
