//! Waveform inversion for the coarse-grid slowness squared.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::grid::{
    mollify, mollify_transpose, write_field, GridGeometry, MollifierSpec, ScalarField2D,
};
use crate::medium::{
    chiu_profile, effective_slowness_squared, gaussian_profile, MediumConstants, ProbabilityField,
};
use crate::misfit::{misfit, mollify_record, mollify_record_transpose, MisfitKind};
use crate::optim::{minimize, Bounds, IterationRecord, LbfgsbConfig, Termination};
use crate::wavesim::{AcquisitionGeometry, Propagator, ShotRecord, SolverConfig};

/// Periodic snapshot of an inversion.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointSpec {
    pub dir: PathBuf,
    /// Write after every `every`-th iteration.
    pub every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionConfig {
    pub misfit_kind: MisfitKind,
    pub model_mollifier: MollifierSpec,
    pub data_mollifier: MollifierSpec,
    pub m_min: f64,
    pub m_max: f64,
    pub optimizer: LbfgsbConfig,
    /// Wave solver settings; unset reference speeds are fixed from the bounds.
    pub solver: SolverConfig,
    pub checkpoint: Option<CheckpointSpec>,
}

impl InversionConfig {
    /// Bounds `[1/c1^2, 1.05/c0^2]` and a plain L2 objective.
    pub fn new(constants: &MediumConstants) -> Self {
        let (w, s) = (
            constants.water_slowness_sq(),
            constants.sediment_slowness_sq(),
        );
        Self {
            misfit_kind: MisfitKind::L2,
            model_mollifier: MollifierSpec::identity(),
            data_mollifier: MollifierSpec::identity(),
            m_min: s.min(w),
            m_max: 1.05 * s.max(w),
            optimizer: LbfgsbConfig {
                initial_step: 0.02,
                ..LbfgsbConfig::default()
            },
            solver: SolverConfig::default(),
            checkpoint: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m_min > 0.0 && self.m_min < self.m_max && self.m_max.is_finite()) {
            return invalid(format!(
                "model bounds must satisfy 0 < m_min < m_max, got [{}, {}]",
                self.m_min, self.m_max
            ));
        }
        self.model_mollifier.validate()?;
        self.data_mollifier.validate()?;
        self.optimizer.validate()?;
        self.solver.validate()?;
        if let Some(c) = &self.checkpoint {
            if c.every == 0 {
                return invalid("checkpoint interval must be at least 1");
            }
        }
        Ok(())
    }

    /// Solver settings that do not depend on the model: the time step and
    /// absorbing layer follow from the bounds.
    pub fn fixed_solver(&self) -> SolverConfig {
        let mut s = self.solver.clone();
        s.c_max.get_or_insert(1.0 / self.m_min.sqrt());
        s.c_ref.get_or_insert(1.0 / self.m_max.sqrt());
        s
    }
}

#[derive(Debug, Clone)]
pub struct InversionState {
    /// Published model; the mollified image of `parameters` when model mollification is on.
    pub iterate: ScalarField2D,
    pub parameters: ScalarField2D,
    pub misfit_history: Vec<f64>,
    pub gradient_norm_history: Vec<f64>,
    pub step_history: Vec<f64>,
    pub termination: Termination,
}

impl InversionState {
    /// `iter,misfit,grad_norm,step_length` rows.
    pub fn history_csv(&self) -> String {
        history_csv(
            &self.misfit_history,
            &self.gradient_norm_history,
            &self.step_history,
        )
    }
}

fn history_csv(misfit: &[f64], grad: &[f64], step: &[f64]) -> String {
    let mut s = String::from("iter,misfit,grad_norm,step_length\n");
    for (k, ((m, g), a)) in misfit.iter().zip(grad).zip(step).enumerate() {
        s.push_str(&format!("{k},{m:e},{g:e},{a:e}\n"));
    }
    s
}

fn check_observed(observed: &[ShotRecord], acq: &AcquisitionGeometry) -> Result<()> {
    if observed.len() != acq.sources.len() {
        return invalid(format!(
            "{} observed records for {} sources",
            observed.len(),
            acq.sources.len()
        ));
    }
    for (k, r) in observed.iter().enumerate() {
        if r.nr() != acq.receivers.len() || r.nt() != acq.nt() {
            return invalid(format!(
                "observed record {k} does not match the acquisition layout"
            ));
        }
    }
    Ok(())
}

/// Data misfit summed over sources and its gradient with respect to `m`,
/// with the data mollifier applied to both sides.
pub fn gradient(
    m: &ScalarField2D,
    observed: &[ShotRecord],
    acq: &AcquisitionGeometry,
    cfg: &InversionConfig,
) -> Result<(f64, ScalarField2D)> {
    cfg.validate()?;
    check_observed(observed, acq)?;
    let (lo, hi) = (m.min(), m.max());
    if lo < cfg.m_min * (1.0 - 1e-12) || hi > cfg.m_max * (1.0 + 1e-12) {
        return invalid(format!(
            "model range [{lo}, {hi}] violates the bounds [{}, {}]",
            cfg.m_min, cfg.m_max
        ));
    }
    let smoothed: Vec<ShotRecord> = observed
        .iter()
        .map(|d| mollify_record(d, &cfg.data_mollifier))
        .collect::<Result<_>>()?;
    gradient_prepared(m, &smoothed, acq, cfg)
}

fn gradient_prepared(
    m: &ScalarField2D,
    smoothed_observed: &[ShotRecord],
    acq: &AcquisitionGeometry,
    cfg: &InversionConfig,
) -> Result<(f64, ScalarField2D)> {
    let prop = Propagator::new(m, acq, &cfg.fixed_solver())?;
    let shots = acq
        .sources
        .par_iter()
        .enumerate()
        .map(|(k, src)| {
            prop.gradient(src, k, |syn| {
                let ks = mollify_record(syn, &cfg.data_mollifier)?;
                let r = misfit(cfg.misfit_kind, &ks, &smoothed_observed[k])?;
                Ok((
                    r.value,
                    mollify_record_transpose(&r.adjoint_source, &cfg.data_mollifier)?,
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut value = 0.0;
    let mut grad = vec![0.0; m.geometry().len()];
    for s in shots {
        value += s.misfit;
        for (g, v) in grad.iter_mut().zip(s.gradient.values()) {
            *g += v;
        }
    }
    Ok((value, ScalarField2D::new(*m.geometry(), grad)?))
}

/// Misfit summed over sources without the gradient.
pub fn misfit_value(
    m: &ScalarField2D,
    observed: &[ShotRecord],
    acq: &AcquisitionGeometry,
    cfg: &InversionConfig,
) -> Result<f64> {
    check_observed(observed, acq)?;
    let prop = Propagator::new(m, acq, &cfg.fixed_solver())?;
    let values = acq
        .sources
        .par_iter()
        .enumerate()
        .map(|(k, src)| {
            let syn = mollify_record(&prop.record(src, k)?, &cfg.data_mollifier)?;
            let obs = mollify_record(&observed[k], &cfg.data_mollifier)?;
            Ok(misfit(cfg.misfit_kind, &syn, &obs)?.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(values.iter().sum())
}

/// Central finite-difference check of the gradient along one direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalCheck {
    /// `<grad, dir>`.
    pub analytic: f64,
    /// Best central difference over the step sweep.
    pub finite_difference: f64,
    pub step: f64,
    pub relative_error: f64,
}

/// Compares `<grad J(m), dir>` with `(J(m + h dir) - J(m - h dir)) / 2h` for
/// every `h` in `steps` and keeps the closest.
pub fn directional_check(
    m: &ScalarField2D,
    observed: &[ShotRecord],
    acq: &AcquisitionGeometry,
    cfg: &InversionConfig,
    dir: &ScalarField2D,
    steps: &[f64],
) -> Result<DirectionalCheck> {
    if dir.geometry() != m.geometry() {
        return invalid("direction and model grids differ");
    }
    if steps.is_empty() || steps.iter().any(|h| !(*h > 0.0)) {
        return invalid("finite-difference steps must be positive");
    }
    let (_, grad) = gradient(m, observed, acq, cfg)?;
    let analytic: f64 = grad
        .values()
        .iter()
        .zip(dir.values())
        .map(|(a, b)| a * b)
        .sum();
    let shifted = |s: f64| -> Result<f64> {
        let v = m
            .values()
            .iter()
            .zip(dir.values())
            .map(|(a, b)| a + s * b)
            .collect();
        misfit_value(&ScalarField2D::new(*m.geometry(), v)?, observed, acq, cfg)
    };
    let mut best: Option<DirectionalCheck> = None;
    for &h in steps {
        let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
        let rel = if analytic == 0.0 {
            fd.abs()
        } else {
            ((fd - analytic) / analytic).abs()
        };
        if best.is_none_or(|b| rel < b.relative_error) {
            best = Some(DirectionalCheck {
                analytic,
                finite_difference: fd,
                step: h,
                relative_error: rel,
            });
        }
    }
    best.ok_or_else(|| Error::Numerical("no finite-difference step evaluated".into()))
}

/// Uniform random perturbation in `[-amplitude, amplitude]` on cells at least
/// `margin` cells from the edge, zero elsewhere.
pub fn random_interior_direction(
    geometry: &GridGeometry,
    margin: usize,
    amplitude: f64,
    seed: u64,
) -> Result<ScalarField2D> {
    use rand::{Rng, SeedableRng};
    if 2 * margin >= geometry.nx.min(geometry.ny) {
        return invalid(format!("margin {margin} leaves no interior cells"));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut v = vec![0.0; geometry.len()];
    for j in margin..geometry.ny - margin {
        for i in margin..geometry.nx - margin {
            v[geometry.index(i, j)] = amplitude * (2.0 * rng.random::<f64>() - 1.0);
        }
    }
    ScalarField2D::new(*geometry, v)
}

/// Bound-constrained quasi-Newton inversion starting from `initial`. With
/// model mollification the unknown is `theta` and the model is `K * theta`.
pub fn invert(
    observed: &[ShotRecord],
    acq: &AcquisitionGeometry,
    cfg: &InversionConfig,
    initial: &ScalarField2D,
) -> Result<InversionState> {
    cfg.validate()?;
    check_observed(observed, acq)?;
    let geom = *initial.geometry();
    let (lo, hi) = (initial.min(), initial.max());
    if lo < cfg.m_min || hi > cfg.m_max {
        return invalid(format!(
            "initial model range [{lo}, {hi}] lies outside [{}, {}]",
            cfg.m_min, cfg.m_max
        ));
    }
    let smoothed: Vec<ShotRecord> = observed
        .iter()
        .map(|d| mollify_record(d, &cfg.data_mollifier))
        .collect::<Result<_>>()?;
    // Variables are parameters divided by m_max.
    let scale = cfg.m_max;
    let to_field = |x: &[f64]| ScalarField2D::new(geom, x.iter().map(|v| v * scale).collect());
    let publish = |theta: &ScalarField2D| mollify(theta, &cfg.model_mollifier);
    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let m = publish(&to_field(x)?)?;
        let (v, g) = gradient_prepared(&m, &smoothed, acq, cfg)?;
        let g = mollify_transpose(&g, &cfg.model_mollifier)?;
        Ok((v, g.values().iter().map(|c| c * scale).collect()))
    };
    let bounds = Bounds::uniform(geom.len(), cfg.m_min / scale, cfg.m_max / scale)?;
    let x0: Vec<f64> = initial.values().iter().map(|v| v / scale).collect();
    let mut hist: (Vec<f64>, Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new(), Vec::new());
    let observe = |rec: &IterationRecord, x: &[f64]| -> Result<()> {
        hist.0.push(rec.value);
        hist.1.push(rec.grad_norm / scale);
        hist.2.push(rec.step_length);
        log::info!(
            "iteration {} misfit {:e} |g| {:e}",
            rec.iteration,
            rec.value,
            rec.grad_norm
        );
        if let Some(c) = &cfg.checkpoint {
            if rec.iteration % c.every == 0 {
                let theta = to_field(x)?;
                write_checkpoint(
                    &c.dir,
                    &publish(&theta)?,
                    &theta,
                    &history_csv(&hist.0, &hist.1, &hist.2),
                )?;
            }
        }
        Ok(())
    };
    let r = minimize(&x0, &bounds, &cfg.optimizer, objective, observe)?;
    let theta = to_field(&r.x)?;
    let iterate = publish(&theta)?;
    let state = InversionState {
        iterate,
        parameters: theta,
        misfit_history: hist.0,
        gradient_norm_history: hist.1,
        step_history: hist.2,
        termination: r.termination,
    };
    if let Some(c) = &cfg.checkpoint {
        write_checkpoint(
            &c.dir,
            &state.iterate,
            &state.parameters,
            &state.history_csv(),
        )?;
    }
    Ok(state)
}

/// `model.grd`, `parameters.grd` and `history.csv` in `dir`.
fn write_checkpoint(
    dir: &Path,
    model: &ScalarField2D,
    params: &ScalarField2D,
    history: &str,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_field(model, dir.join("model.grd"))?;
    write_field(params, dir.join("parameters.grd"))?;
    std::fs::write(dir.join("history.csv"), history)?;
    Ok(())
}

/// Parameters to restart from a checkpoint directory written by [`invert`].
pub fn resume_parameters(dir: impl AsRef<Path>) -> Result<ScalarField2D> {
    crate::grid::read_field(dir.as_ref().join("parameters.grd"))
}

/// Low-dimensional probability models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParametricFamily {
    /// `[p_max, x0, y0, sigma]`.
    Gaussian,
    /// `[p_max, M, lambda]`.
    Chiu,
}

impl ParametricFamily {
    pub fn dimension(&self) -> usize {
        match self {
            Self::Gaussian => 4,
            Self::Chiu => 3,
        }
    }

    pub fn probability(&self, params: &[f64], geometry: &GridGeometry) -> Result<ProbabilityField> {
        if params.len() != self.dimension() {
            return invalid(format!(
                "{self:?} takes {} parameters, got {}",
                self.dimension(),
                params.len()
            ));
        }
        match self {
            Self::Gaussian => {
                gaussian_profile(params[0], (params[1], params[2]), params[3], geometry)
            }
            Self::Chiu => chiu_profile(params[0], params[1], params[2], geometry),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParametricResult {
    pub parameters: Vec<f64>,
    pub probability: ProbabilityField,
    pub initial_misfit: f64,
    pub misfit: f64,
    pub misfit_history: Vec<f64>,
    pub termination: Termination,
    pub evaluations: usize,
}

/// Fits a parametric probability model directly to the data with
/// finite-difference gradients in the unit-scaled parameter box.
#[allow(clippy::too_many_arguments)]
pub fn invert_parametric(
    observed: &[ShotRecord],
    family: ParametricFamily,
    initial: &[f64],
    lower: &[f64],
    upper: &[f64],
    geometry: &GridGeometry,
    constants: &MediumConstants,
    acq: &AcquisitionGeometry,
    cfg: &InversionConfig,
) -> Result<ParametricResult> {
    cfg.validate()?;
    check_observed(observed, acq)?;
    let n = family.dimension();
    if initial.len() != n || lower.len() != n || upper.len() != n {
        return invalid(format!("{family:?} needs {n} initial values and bounds"));
    }
    for k in 0..n {
        if !(lower[k] < upper[k]) {
            return invalid(format!(
                "parameter box is infeasible in component {k}: [{}, {}]",
                lower[k], upper[k]
            ));
        }
        if !(lower[k] <= initial[k] && initial[k] <= upper[k]) {
            return invalid(format!(
                "initial parameter {k} = {} lies outside its box",
                initial[k]
            ));
        }
    }
    let unscale = |x: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|k| lower[k] + x[k] * (upper[k] - lower[k]))
            .collect()
    };
    let value_at = |x: &[f64]| -> Result<f64> {
        let p = family.probability(&unscale(x), geometry)?;
        misfit_value(
            &effective_slowness_squared(&p, constants),
            observed,
            acq,
            cfg,
        )
    };
    const H: f64 = 1e-4;
    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let v = value_at(x)?;
        let mut g = vec![0.0; n];
        for k in 0..n {
            let (mut a, mut b) = (x.to_vec(), x.to_vec());
            let (ha, hb) = ((1.0 - x[k]).min(H), x[k].min(H));
            a[k] += ha;
            b[k] -= hb;
            g[k] = match (ha > 0.0, hb > 0.0) {
                (true, true) => (value_at(&a)? - value_at(&b)?) / (ha + hb),
                (true, false) => (value_at(&a)? - v) / ha,
                (false, true) => (v - value_at(&b)?) / hb,
                (false, false) => 0.0,
            };
        }
        Ok((v, g))
    };
    let x0: Vec<f64> = (0..n)
        .map(|k| (initial[k] - lower[k]) / (upper[k] - lower[k]))
        .collect();
    let bounds = Bounds::uniform(n, 0.0, 1.0)?;
    let mut history = Vec::new();
    let r = minimize(&x0, &bounds, &cfg.optimizer, objective, |rec, _| {
        history.push(rec.value);
        Ok(())
    })?;
    let parameters = unscale(&r.x);
    let probability = family.probability(&parameters, geometry)?;
    let initial_misfit = *history
        .first()
        .ok_or_else(|| Error::Numerical("empty optimizer history".into()))?;
    Ok(ParametricResult {
        parameters,
        probability,
        initial_misfit,
        misfit: r.value,
        misfit_history: history,
        termination: r.termination,
        evaluations: r.evaluations,
    })
}

#[cfg(test)]
mod tests;
