//! Time-domain acoustic simulation of heterogeneous and effective media.

mod propagator;
mod record;

pub use propagator::{Propagator, ShotGradient};
pub use record::{
    average_records, decode_record, encode_record, read_record, write_record, ShotRecord,
};

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::grid::{GridGeometry, ScalarField2D};
use crate::medium::{
    effective_slowness_squared, rasterize_velocity, sample_cloud, DensityField, MediumConstants,
    ProbabilityField,
};

/// Point source with a Ricker time signature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RickerSource {
    pub position: (f64, f64),
    pub f0: f64,
    pub t0: f64,
    pub amplitude: f64,
}

impl RickerSource {
    /// Source with the default delay `1.2 / f0`.
    pub fn new(position: (f64, f64), f0: f64, amplitude: f64) -> Result<Self> {
        Self::with_delay(position, f0, 1.2 / f0, amplitude)
    }

    pub fn with_delay(position: (f64, f64), f0: f64, t0: f64, amplitude: f64) -> Result<Self> {
        let s = Self {
            position,
            f0,
            t0,
            amplitude,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f0 > 0.0 && self.f0.is_finite()) {
            return invalid(format!(
                "Ricker frequency must be positive, got {}",
                self.f0
            ));
        }
        if !(self.t0 * self.f0 >= 1.0 - 1e-12) {
            return invalid(format!(
                "Ricker delay {} is shorter than one period",
                self.t0
            ));
        }
        if !self.amplitude.is_finite() {
            return invalid("source amplitude must be finite");
        }
        Ok(())
    }

    /// `(1 - 2 pi^2 f0^2 tau^2) exp(-pi^2 f0^2 tau^2)` with `tau = t - t0`, times the amplitude.
    pub fn signature(&self, t: f64) -> f64 {
        let a = (std::f64::consts::PI * self.f0 * (t - self.t0)).powi(2);
        self.amplitude * (1.0 - 2.0 * a) * (-a).exp()
    }
}

/// Sources, receivers and recording parameters shared by all shots.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionGeometry {
    pub sources: Vec<RickerSource>,
    pub receivers: Vec<(f64, f64)>,
    pub record_dt: f64,
    pub record_t: f64,
}

impl AcquisitionGeometry {
    pub fn new(
        sources: Vec<RickerSource>,
        receivers: Vec<(f64, f64)>,
        record_dt: f64,
        record_t: f64,
    ) -> Result<Self> {
        let a = Self {
            sources,
            receivers,
            record_dt,
            record_t,
        };
        a.validate()?;
        Ok(a)
    }

    /// Sources evenly spaced along the bottom side, `inset` above it, and
    /// receivers evenly spread over the left, top and right sides.
    pub fn surround(
        geometry: &GridGeometry,
        n_sources: usize,
        n_receivers: usize,
        inset: f64,
        f0: f64,
        record_dt: f64,
        record_t: f64,
    ) -> Result<Self> {
        let (lx, ly) = geometry.extent();
        let (x0, y0) = (geometry.x0, geometry.y0);
        let sources = (0..n_sources)
            .map(|k| {
                RickerSource::new(
                    (
                        x0 + (k as f64 + 0.5) / n_sources as f64 * lx,
                        y0 + ly - inset,
                    ),
                    f0,
                    1.0,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let perimeter = 2.0 * ly + lx;
        let receivers = (0..n_receivers)
            .map(|k| {
                let s = (k as f64 + 0.5) / n_receivers as f64 * perimeter;
                if s < ly {
                    (x0, y0 + ly - s)
                } else if s < ly + lx {
                    (x0 + s - ly, y0)
                } else {
                    (x0 + lx, y0 + s - ly - lx)
                }
            })
            .collect();
        Self::new(sources, receivers, record_dt, record_t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() || self.receivers.is_empty() {
            return invalid("acquisition needs at least one source and one receiver");
        }
        for s in &self.sources {
            s.validate()?;
        }
        if !(self.record_t > 0.0 && self.record_dt > 0.0) {
            return invalid(format!(
                "record duration and interval must be positive, got T={} dt={}",
                self.record_t, self.record_dt
            ));
        }
        let ratio = self.record_t / self.record_dt;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) {
            return invalid(format!(
                "record interval {} does not divide duration {}",
                self.record_dt, self.record_t
            ));
        }
        Ok(())
    }

    /// Number of recorded samples, `T / dt + 1`.
    pub fn nt(&self) -> usize {
        (self.record_t / self.record_dt).round() as usize + 1
    }
}

/// Boundary absorption scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AbsorberKind {
    /// Quadratic damping ramp outside the model.
    SpongeTaper,
    /// Perfectly matched layer with a quadratic profile.
    #[default]
    Pml,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Fraction of `h / (c_max sqrt 2)` used as the internal step.
    pub cfl_factor: f64,
    /// Absorbing layer width on each side; `None` spans two dominant wavelengths.
    pub absorber_width_cells: Option<usize>,
    pub absorber_kind: AbsorberKind,
    /// Target normal-incidence reflection of the layer.
    pub reflection: f64,
    /// Speed bounding the time step; `None` uses the model maximum.
    pub c_max: Option<f64>,
    /// Speed setting the layer strength and default width; `None` uses the model minimum.
    pub c_ref: Option<f64>,
    /// Memory allowed for stored wavefields in gradient runs.
    pub memory_budget_bytes: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            cfl_factor: 0.8,
            absorber_width_cells: None,
            absorber_kind: AbsorberKind::Pml,
            reflection: 1e-3,
            c_max: None,
            c_ref: None,
            memory_budget_bytes: 512 << 20,
        }
    }
}

/// Largest stable `cfl_factor` for the fourth-order stencil.
pub const MAX_CFL_FACTOR: f64 = 0.866_025_403_784_438_6;

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl_factor > 0.0 && self.cfl_factor <= MAX_CFL_FACTOR) {
            return invalid(format!(
                "cfl_factor must lie in (0, {MAX_CFL_FACTOR:.4}], got {}",
                self.cfl_factor
            ));
        }
        if !(self.reflection > 0.0 && self.reflection < 1.0) {
            return invalid(format!(
                "absorber reflection must lie in (0, 1), got {}",
                self.reflection
            ));
        }
        for c in [self.c_max, self.c_ref].into_iter().flatten() {
            if !(c > 0.0 && c.is_finite()) {
                return invalid(format!("reference speeds must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

/// Simulates one shot on a slowness-squared model.
pub fn simulate(
    m: &ScalarField2D,
    source: &RickerSource,
    acq: &AcquisitionGeometry,
    cfg: &SolverConfig,
) -> Result<ShotRecord> {
    let id = acq.sources.iter().position(|s| s == source).unwrap_or(0);
    Propagator::new(m, acq, cfg)?.record(source, id)
}

/// Simulates every source of `acq`.
pub fn simulate_all(
    m: &ScalarField2D,
    acq: &AcquisitionGeometry,
    cfg: &SolverConfig,
) -> Result<Vec<ShotRecord>> {
    let prop = Propagator::new(m, acq, cfg)?;
    acq.sources
        .par_iter()
        .enumerate()
        .map(|(k, s)| prop.record(s, k))
        .collect()
}

/// Data of the particle medium: one record per source for each seed, indexed `[seed][source]`.
pub fn forward_heterogeneous(
    density: &DensityField,
    epsilon: f64,
    constants: &MediumConstants,
    fine: &GridGeometry,
    acq: &AcquisitionGeometry,
    cfg: &SolverConfig,
    seeds: &[u64],
) -> Result<Vec<Vec<ShotRecord>>> {
    constants.validate()?;
    let models = seeds
        .par_iter()
        .map(|&seed| {
            let cloud = sample_cloud(density, epsilon, seed)?;
            let c = rasterize_velocity(&cloud, constants, fine);
            Ok(c.map(|v| 1.0 / (v * v)))
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..seeds.len())
        .flat_map(|s| (0..acq.sources.len()).map(move |k| (s, k)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(s, k)| Propagator::new(&models[s], acq, cfg)?.record(&acq.sources[k], k))
        .collect::<Result<Vec<_>>>()?;
    let mut out: Vec<Vec<ShotRecord>> = vec![Vec::new(); seeds.len()];
    for (&(s, _), r) in jobs.iter().zip(records) {
        out[s].push(r);
    }
    Ok(out)
}

/// Data of the effective medium for every source.
pub fn forward_effective(
    prob: &ProbabilityField,
    constants: &MediumConstants,
    acq: &AcquisitionGeometry,
    cfg: &SolverConfig,
) -> Result<Vec<ShotRecord>> {
    simulate_all(&effective_slowness_squared(prob, constants), acq, cfg)
}

/// Per-source mean over realizations of `[seed][source]` records.
pub fn average_shots(records: &[Vec<ShotRecord>]) -> Result<Vec<ShotRecord>> {
    let n_src = records.first().map_or(0, Vec::len);
    (0..n_src)
        .map(|k| {
            let shots: Vec<ShotRecord> = records.iter().map(|r| r[k].clone()).collect();
            average_records(&shots)
        })
        .collect()
}
