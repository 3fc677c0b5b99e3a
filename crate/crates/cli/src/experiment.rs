//! Builds the simulation objects of an experiment and runs its stages.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use sedconc::grid::{GridGeometry, MollifierSpec, ScalarField2D};
use sedconc::helmholtz::{gaussian_source, ConvergenceStudySpec, HelmholtzConfig};
use sedconc::inversion::{
    directional_check, random_interior_direction, CheckpointSpec, DirectionalCheck, InversionConfig,
};
use sedconc::medium::{
    chiu_profile, density_from_probability, derive_seed, effective_slowness_squared,
    gaussian_profile, rasterize_velocity, sample_cloud, DensityField, MediumConstants,
    PoissonCloud, ProbabilityField,
};
use sedconc::misfit::MisfitKind;
use sedconc::optim::LbfgsbConfig;
use sedconc::wavesim::{
    average_shots, forward_effective, forward_heterogeneous, read_record, simulate_all,
    write_record, AcquisitionGeometry, ShotRecord, SolverConfig,
};

use crate::config::{ExperimentConfig, ProfileKind};
use crate::error::CliError;

/// Seed streams derived from the master seed. Realization `k` uses
/// `derive_seed(master, k)`; the other streams start above `2^32`.
const GRADCHECK_STREAM: u64 = 1 << 32;
const STUDY_STREAM: u64 = (1 << 32) + 1;

/// Settings of one inversion run.
#[derive(Debug, Clone, PartialEq)]
pub struct InversionOptions {
    pub misfit: MisfitKind,
    /// Coarse cells; 0 disables.
    pub model_sigma: f64,
    /// Record samples; 0 disables.
    pub data_sigma: f64,
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub fine: GridGeometry,
    pub coarse: GridGeometry,
    pub constants: MediumConstants,
    pub acquisition: AcquisitionGeometry,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let fine = cfg.fine_grid()?;
        let coarse = cfg.coarse_grid()?;
        let constants = MediumConstants::new(cfg.c0, cfg.c1).map_err(|e| CliError::Config {
            field: "medium.c1".into(),
            message: e.to_string(),
        })?;
        let acquisition = AcquisitionGeometry::surround(
            &coarse,
            cfg.sources,
            cfg.receivers,
            cfg.inset,
            cfg.f0,
            cfg.record_dt,
            cfg.record_t,
        )
        .map_err(|e| CliError::Config {
            field: "acquisition".into(),
            message: e.to_string(),
        })?;
        Ok(Self {
            cfg,
            fine,
            coarse,
            constants,
            acquisition,
        })
    }

    /// Sediment probability of the configured profile on `grid`.
    pub fn probability(&self, grid: &GridGeometry) -> Result<ProbabilityField, CliError> {
        let c = &self.cfg;
        Ok(match c.profile {
            ProfileKind::Gaussian => {
                gaussian_profile(c.p_max, (c.center_x, c.center_y), c.sigma, grid)?
            }
            ProfileKind::Chiu => chiu_profile(c.p_max, c.chiu_m, c.chiu_lambda, grid)?,
        })
    }

    pub fn density(&self) -> Result<DensityField, CliError> {
        Ok(density_from_probability(&self.probability(&self.fine)?))
    }

    pub fn realization_seed(&self, k: usize) -> u64 {
        derive_seed(self.cfg.master_seed, k as u64)
    }

    pub fn realization_seeds(&self) -> Vec<u64> {
        (0..self.cfg.realizations)
            .map(|k| self.realization_seed(k))
            .collect()
    }

    /// Particle cloud and velocity field of realization `k` on the fine grid.
    pub fn realization(
        &self,
        density: &DensityField,
        k: usize,
    ) -> Result<(PoissonCloud, ScalarField2D), CliError> {
        let cloud = sample_cloud(density, self.cfg.epsilon, self.realization_seed(k))?;
        let v = rasterize_velocity(&cloud, &self.constants, &self.fine);
        Ok((cloud, v))
    }

    pub fn model_bounds(&self) -> (f64, f64) {
        self.cfg.model_bounds()
    }

    /// Solver settings for the fine-grid data, with reference speeds fixed
    /// by the medium so every realization shares one time step and layer.
    pub fn fine_solver(&self) -> SolverConfig {
        let c = &self.cfg;
        SolverConfig {
            cfl_factor: c.cfl_factor,
            absorber_width_cells: c.absorber_cells,
            absorber_kind: c.absorber_kind,
            reflection: c.reflection,
            c_max: Some(c.c0.max(c.c1)),
            c_ref: Some(c.c0.min(c.c1)),
            memory_budget_bytes: c.memory_budget_mb << 20,
        }
    }

    pub fn inversion_config(&self, opts: &InversionOptions) -> InversionConfig {
        let c = &self.cfg;
        let (m_min, m_max) = self.model_bounds();
        InversionConfig {
            misfit_kind: opts.misfit,
            model_mollifier: MollifierSpec::new(opts.model_sigma),
            data_mollifier: MollifierSpec::new(opts.data_sigma),
            m_min,
            m_max,
            optimizer: LbfgsbConfig {
                memory: c.optimizer_memory,
                max_iterations: c.max_iterations,
                gradient_tolerance: c.gradient_tolerance,
                relative_decrease_tolerance: c.relative_decrease_tolerance,
                initial_step: c.initial_step,
                ..LbfgsbConfig::default()
            },
            solver: SolverConfig {
                cfl_factor: c.cfl_factor,
                absorber_width_cells: None,
                absorber_kind: c.absorber_kind,
                reflection: c.reflection,
                c_max: None,
                c_ref: None,
                memory_budget_bytes: c.memory_budget_mb << 20,
            },
            checkpoint: opts
                .checkpoint_dir
                .clone()
                .filter(|_| c.checkpoint_every > 0)
                .map(|dir| CheckpointSpec {
                    dir,
                    every: c.checkpoint_every,
                }),
        }
    }

    /// Options taken from the config file alone.
    pub fn default_inversion_options(&self) -> InversionOptions {
        InversionOptions {
            misfit: self.cfg.misfit,
            model_sigma: self.cfg.model_mollifier_sigma,
            data_sigma: self.cfg.data_mollifier_sigma,
            checkpoint_dir: None,
        }
    }

    /// Effective-medium records on the fine grid.
    pub fn effective_fine_records(&self) -> Result<Vec<ShotRecord>, CliError> {
        let p = self.probability(&self.fine)?;
        Ok(forward_effective(
            &p,
            &self.constants,
            &self.acquisition,
            &self.fine_solver(),
        )?)
    }

    /// Effective-medium records on the coarse grid with the inversion's solver
    /// settings, so the inversion can reproduce them exactly.
    pub fn effective_coarse_records(&self) -> Result<Vec<ShotRecord>, CliError> {
        let m = effective_slowness_squared(&self.probability(&self.coarse)?, &self.constants);
        let solver = self
            .inversion_config(&self.default_inversion_options())
            .fixed_solver();
        Ok(simulate_all(&m, &self.acquisition, &solver)?)
    }

    /// Heterogeneous records of realizations `range`, indexed `[realization][source]`.
    pub fn heterogeneous_records(
        &self,
        density: &DensityField,
        range: std::ops::Range<usize>,
    ) -> Result<Vec<Vec<ShotRecord>>, CliError> {
        let seeds: Vec<u64> = range.map(|k| self.realization_seed(k)).collect();
        Ok(forward_heterogeneous(
            density,
            self.cfg.epsilon,
            &self.constants,
            &self.fine,
            &self.acquisition,
            &self.fine_solver(),
            &seeds,
        )?)
    }

    /// Homogeneous-water starting model on the coarse grid.
    pub fn initial_model(&self) -> ScalarField2D {
        ScalarField2D::constant(self.coarse, self.constants.water_slowness_sq())
    }

    pub fn study_spec(&self) -> Result<(ConvergenceStudySpec, HelmholtzConfig), CliError> {
        let c = &self.cfg;
        let g = GridGeometry::square(c.study_n, c.study_side)?;
        let side = c.study_side;
        let prob = gaussian_profile(c.study_p_max, (side / 2.0, side / 2.0), 0.3 * side, &g)?;
        let spec = ConvergenceStudySpec {
            epsilons: c.study_epsilons.clone(),
            realizations: c.study_realizations,
            density: density_from_probability(&prob),
            holder_alpha: 1.0,
            source: gaussian_source(g, (side / 2.0, 0.8 * side), side / 20.0)?,
            seed: derive_seed(c.master_seed, STUDY_STREAM),
            bootstrap_samples: c.study_bootstrap,
        };
        Ok((spec, HelmholtzConfig::new(c.study_k, &self.constants)))
    }

    /// Directional finite-difference checks of the gradient on the small
    /// gradcheck grid, one per direction.
    pub fn gradcheck(&self, misfit: MisfitKind) -> Result<Vec<DirectionalCheck>, CliError> {
        let c = &self.cfg;
        let g = GridGeometry::square(c.gradcheck_n, c.gradcheck_side)?;
        let acq = AcquisitionGeometry::surround(
            &g,
            c.gradcheck_sources,
            c.gradcheck_receivers,
            c.inset.min(0.1 * c.gradcheck_side),
            c.f0,
            c.record_dt,
            c.gradcheck_record_t,
        )?;
        let cfg = InversionConfig {
            misfit_kind: misfit,
            ..self.inversion_config(&InversionOptions {
                misfit,
                model_sigma: 0.0,
                data_sigma: 0.0,
                checkpoint_dir: None,
            })
        };
        let side = c.gradcheck_side;
        let p_max = if c.p_max > 0.0 { c.p_max } else { 0.2 };
        let truth = effective_slowness_squared(
            &gaussian_profile(p_max, (0.5 * side, 0.55 * side), side / 6.0, &g)?,
            &self.constants,
        );
        let observed = simulate_all(&truth, &acq, &cfg.fixed_solver())?;
        let base = effective_slowness_squared(
            &gaussian_profile(0.5 * p_max, (0.45 * side, 0.5 * side), side / 5.0, &g)?,
            &self.constants,
        );
        let amplitude = 0.025 * self.constants.water_slowness_sq();
        let margin = c.gradcheck_n / 10;
        let stream = derive_seed(c.master_seed, GRADCHECK_STREAM);
        (0..c.gradcheck_directions)
            .into_par_iter()
            .map(|d| {
                let dir = random_interior_direction(
                    &g,
                    margin,
                    amplitude,
                    derive_seed(stream, d as u64),
                )?;
                Ok(directional_check(
                    &base,
                    &observed,
                    &acq,
                    &cfg,
                    &dir,
                    &[1e-3, 1e-4, 1e-5],
                )?)
            })
            .collect()
    }
}

/// File of source `s` inside a record directory.
pub fn record_path(dir: &Path, source: usize) -> PathBuf {
    dir.join(format!("src_{source:02}.csv"))
}

pub fn write_records(dir: &Path, records: &[ShotRecord]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(sedconc::Error::from)?;
    for (s, r) in records.iter().enumerate() {
        write_record(r, record_path(dir, s))?;
    }
    Ok(())
}

pub fn read_records(dir: &Path, sources: usize) -> Result<Vec<ShotRecord>, CliError> {
    (0..sources)
        .map(|s| {
            let p = record_path(dir, s);
            if !p.exists() {
                return Err(CliError::MissingInput(format!(
                    "{} not found; run `forward` first",
                    p.display()
                )));
            }
            Ok(read_record(&p)?)
        })
        .collect()
}

/// Per-source mean of `[realization][source]` records.
pub fn averaged(records: &[Vec<ShotRecord>]) -> Result<Vec<ShotRecord>, CliError> {
    Ok(average_shots(records)?)
}
