//! Experiment configuration: a line-oriented `key = value` file with dotted
//! section keys. Keys missing from a file keep the values of the preset named
//! by `preset` (default `gaussian-desk`).

use std::fmt::Write as _;
use std::path::Path;

use sedconc::grid::GridGeometry;
use sedconc::misfit::MisfitKind;
use sedconc::wavesim::{AbsorberKind, MAX_CFL_FACTOR};

use crate::error::{field_error, CliError};

pub const PRESETS: [&str; 2] = ["gaussian-desk", "chiu-desk"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileKind {
    Gaussian,
    Chiu,
}

impl ProfileKind {
    fn as_str(self) -> &'static str {
        match self {
            Self::Gaussian => "gaussian",
            Self::Chiu => "chiu",
        }
    }
}

/// Which records an inversion fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    /// Mean of the heterogeneous records over all realizations.
    Averaged,
    /// Heterogeneous records of the first realization.
    Single,
    /// Effective-medium records simulated on the coarse grid.
    Effective,
}

impl DataSource {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Averaged => "averaged",
            Self::Single => "single",
            Self::Effective => "effective",
        }
    }
}

impl std::str::FromStr for DataSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "averaged" => Ok(Self::Averaged),
            "single" => Ok(Self::Single),
            "effective" => Ok(Self::Effective),
            other => Err(format!(
                "unknown data source '{other}', expected averaged, single or effective"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: String,
    pub domain_width: f64,
    pub domain_height: f64,
    pub fine_nx: usize,
    pub fine_ny: usize,
    pub coarse_nx: usize,
    pub coarse_ny: usize,
    pub c0: f64,
    pub c1: f64,
    /// Particle radius (m).
    pub epsilon: f64,
    pub profile: ProfileKind,
    pub p_max: f64,
    pub center_x: f64,
    pub center_y: f64,
    pub sigma: f64,
    pub chiu_m: f64,
    pub chiu_lambda: f64,
    pub sources: usize,
    pub receivers: usize,
    /// Distance of the sources above the bottom side (m).
    pub inset: f64,
    pub f0: f64,
    pub record_dt: f64,
    pub record_t: f64,
    pub cfl_factor: f64,
    pub absorber_cells: Option<usize>,
    pub absorber_kind: AbsorberKind,
    pub reflection: f64,
    pub memory_budget_mb: usize,
    pub misfit: MisfitKind,
    pub data: DataSource,
    /// In coarse cells; 0 disables.
    pub model_mollifier_sigma: f64,
    /// In record samples; 0 disables.
    pub data_mollifier_sigma: f64,
    pub m_min: Option<f64>,
    pub m_max: Option<f64>,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub relative_decrease_tolerance: f64,
    pub optimizer_memory: usize,
    pub initial_step: f64,
    /// 0 disables checkpoints.
    pub checkpoint_every: usize,
    pub master_seed: u64,
    pub realizations: usize,
    /// Multiplier turning volume into mass concentration.
    pub mass_density: Option<f64>,
    pub study_k: f64,
    pub study_n: usize,
    pub study_side: f64,
    pub study_epsilons: Vec<f64>,
    pub study_realizations: usize,
    pub study_p_max: f64,
    pub study_bootstrap: usize,
    pub gradcheck_n: usize,
    pub gradcheck_side: f64,
    pub gradcheck_sources: usize,
    pub gradcheck_receivers: usize,
    pub gradcheck_directions: usize,
    pub gradcheck_record_t: f64,
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self, CliError> {
        let gaussian = Self {
            preset: "gaussian-desk".into(),
            domain_width: 1.0,
            domain_height: 1.0,
            fine_nx: 1000,
            fine_ny: 1000,
            coarse_nx: 100,
            coarse_ny: 100,
            c0: 1500.0,
            c1: 3000.0,
            epsilon: 0.002,
            profile: ProfileKind::Gaussian,
            p_max: 0.2,
            center_x: 0.5,
            center_y: 0.5,
            sigma: 0.14,
            chiu_m: 1.0,
            chiu_lambda: 2.0,
            sources: 4,
            receivers: 60,
            inset: 0.02,
            f0: 15e3,
            record_dt: 20e-6,
            record_t: 1e-3,
            cfl_factor: 0.8,
            absorber_cells: None,
            absorber_kind: AbsorberKind::Pml,
            reflection: 1e-3,
            memory_budget_mb: 512,
            misfit: MisfitKind::L2,
            data: DataSource::Averaged,
            model_mollifier_sigma: 0.0,
            data_mollifier_sigma: 0.0,
            m_min: None,
            m_max: None,
            max_iterations: 50,
            gradient_tolerance: 1e-8,
            relative_decrease_tolerance: 0.0,
            optimizer_memory: 10,
            initial_step: 0.02,
            checkpoint_every: 0,
            master_seed: 20240601,
            realizations: 50,
            mass_density: None,
            study_k: 20.0,
            study_n: 128,
            study_side: 0.128,
            study_epsilons: vec![0.016, 0.008, 0.004],
            study_realizations: 32,
            study_p_max: 0.2,
            study_bootstrap: 1000,
            gradcheck_n: 60,
            gradcheck_side: 0.6,
            gradcheck_sources: 2,
            gradcheck_receivers: 20,
            gradcheck_directions: 20,
            gradcheck_record_t: 0.6e-3,
        };
        match name {
            "gaussian-desk" => Ok(gaussian),
            "chiu-desk" => Ok(Self {
                preset: "chiu-desk".into(),
                profile: ProfileKind::Chiu,
                ..gaussian
            }),
            other => Err(field_error(
                "preset",
                format!(
                    "unknown preset '{other}', expected one of {}",
                    PRESETS.join(", ")
                ),
            )),
        }
    }

    /// Parses a config file body.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Syntax {
                    line: n + 1,
                    message: format!("expected `key = value`, got '{line}'"),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            if pairs.iter().any(|(p, _): &(&str, &str)| *p == k) {
                return Err(field_error(k, "key appears more than once"));
            }
            pairs.push((k, v));
        }
        let preset = pairs
            .iter()
            .find(|(k, _)| *k == "preset")
            .map_or("gaussian-desk", |(_, v)| *v);
        let mut cfg = Self::preset(preset)?;
        for (k, v) in pairs {
            if k != "preset" {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            field: "--config".into(),
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let f = |v: f64| format!("{v:?}");
        let auto = |v: Option<f64>| v.map_or_else(|| "auto".to_string(), f);
        vec![
            ("preset", self.preset.clone()),
            ("domain.width", f(self.domain_width)),
            ("domain.height", f(self.domain_height)),
            ("grid.fine_nx", self.fine_nx.to_string()),
            ("grid.fine_ny", self.fine_ny.to_string()),
            ("grid.coarse_nx", self.coarse_nx.to_string()),
            ("grid.coarse_ny", self.coarse_ny.to_string()),
            ("medium.c0", f(self.c0)),
            ("medium.c1", f(self.c1)),
            ("medium.epsilon", f(self.epsilon)),
            ("profile.kind", self.profile.as_str().into()),
            ("profile.p_max", f(self.p_max)),
            ("profile.center_x", f(self.center_x)),
            ("profile.center_y", f(self.center_y)),
            ("profile.sigma", f(self.sigma)),
            ("profile.chiu_m", f(self.chiu_m)),
            ("profile.chiu_lambda", f(self.chiu_lambda)),
            ("acquisition.sources", self.sources.to_string()),
            ("acquisition.receivers", self.receivers.to_string()),
            ("acquisition.inset", f(self.inset)),
            ("acquisition.f0", f(self.f0)),
            ("acquisition.record_dt", f(self.record_dt)),
            ("acquisition.record_t", f(self.record_t)),
            ("solver.cfl_factor", f(self.cfl_factor)),
            (
                "solver.absorber_cells",
                self.absorber_cells
                    .map_or_else(|| "auto".into(), |v| v.to_string()),
            ),
            (
                "solver.absorber_kind",
                match self.absorber_kind {
                    AbsorberKind::Pml => "pml",
                    AbsorberKind::SpongeTaper => "sponge-taper",
                }
                .into(),
            ),
            ("solver.reflection", f(self.reflection)),
            ("solver.memory_budget_mb", self.memory_budget_mb.to_string()),
            ("inversion.misfit", self.misfit.to_string()),
            ("inversion.data", self.data.as_str().into()),
            (
                "inversion.model_mollifier_sigma",
                f(self.model_mollifier_sigma),
            ),
            (
                "inversion.data_mollifier_sigma",
                f(self.data_mollifier_sigma),
            ),
            ("inversion.m_min", auto(self.m_min)),
            ("inversion.m_max", auto(self.m_max)),
            ("inversion.max_iterations", self.max_iterations.to_string()),
            ("inversion.gradient_tolerance", f(self.gradient_tolerance)),
            (
                "inversion.relative_decrease_tolerance",
                f(self.relative_decrease_tolerance),
            ),
            ("inversion.memory", self.optimizer_memory.to_string()),
            ("inversion.initial_step", f(self.initial_step)),
            (
                "inversion.checkpoint_every",
                self.checkpoint_every.to_string(),
            ),
            ("seeds.master", self.master_seed.to_string()),
            ("seeds.realizations", self.realizations.to_string()),
            (
                "report.mass_density",
                self.mass_density.map_or_else(|| "none".into(), f),
            ),
            ("study.k", f(self.study_k)),
            ("study.n", self.study_n.to_string()),
            ("study.side", f(self.study_side)),
            (
                "study.epsilons",
                self.study_epsilons
                    .iter()
                    .map(|v| f(*v))
                    .collect::<Vec<_>>()
                    .join(", "),
            ),
            ("study.realizations", self.study_realizations.to_string()),
            ("study.p_max", f(self.study_p_max)),
            ("study.bootstrap", self.study_bootstrap.to_string()),
            ("gradcheck.n", self.gradcheck_n.to_string()),
            ("gradcheck.side", f(self.gradcheck_side)),
            ("gradcheck.sources", self.gradcheck_sources.to_string()),
            ("gradcheck.receivers", self.gradcheck_receivers.to_string()),
            (
                "gradcheck.directions",
                self.gradcheck_directions.to_string(),
            ),
            ("gradcheck.record_t", f(self.gradcheck_record_t)),
        ]
    }

    /// File body that parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut section = "";
        for (k, v) in self.entries() {
            let sec = k.split_once('.').map_or("", |(a, _)| a);
            if sec != section {
                s.push('\n');
                section = sec;
            }
            let _ = writeln!(s, "{k} = {v}");
        }
        s.trim_start().to_string()
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let bad = |msg: String| field_error(key, msg);
        let real = || -> Result<f64, CliError> {
            value
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("expected a finite number, got '{value}'")))
        };
        let count = || -> Result<usize, CliError> {
            value
                .parse::<usize>()
                .map_err(|_| bad(format!("expected a nonnegative integer, got '{value}'")))
        };
        let auto_real = || -> Result<Option<f64>, CliError> {
            match value {
                "auto" | "none" => Ok(None),
                _ => real().map(Some),
            }
        };
        match key {
            "preset" => {
                Self::preset(value)?;
                self.preset = value.into();
            }
            "domain.width" => self.domain_width = real()?,
            "domain.height" => self.domain_height = real()?,
            "grid.fine_nx" => self.fine_nx = count()?,
            "grid.fine_ny" => self.fine_ny = count()?,
            "grid.coarse_nx" => self.coarse_nx = count()?,
            "grid.coarse_ny" => self.coarse_ny = count()?,
            "medium.c0" => self.c0 = real()?,
            "medium.c1" => self.c1 = real()?,
            "medium.epsilon" => self.epsilon = real()?,
            "profile.kind" => {
                self.profile = match value {
                    "gaussian" => ProfileKind::Gaussian,
                    "chiu" => ProfileKind::Chiu,
                    other => {
                        return Err(bad(format!(
                            "unknown profile '{other}', expected gaussian or chiu"
                        )))
                    }
                }
            }
            "profile.p_max" => self.p_max = real()?,
            "profile.center_x" => self.center_x = real()?,
            "profile.center_y" => self.center_y = real()?,
            "profile.sigma" => self.sigma = real()?,
            "profile.chiu_m" => self.chiu_m = real()?,
            "profile.chiu_lambda" => self.chiu_lambda = real()?,
            "acquisition.sources" => self.sources = count()?,
            "acquisition.receivers" => self.receivers = count()?,
            "acquisition.inset" => self.inset = real()?,
            "acquisition.f0" => self.f0 = real()?,
            "acquisition.record_dt" => self.record_dt = real()?,
            "acquisition.record_t" => self.record_t = real()?,
            "solver.cfl_factor" => self.cfl_factor = real()?,
            "solver.absorber_cells" => {
                self.absorber_cells = match value {
                    "auto" => None,
                    _ => Some(count()?),
                }
            }
            "solver.absorber_kind" => {
                self.absorber_kind = match value {
                    "pml" => AbsorberKind::Pml,
                    "sponge-taper" => AbsorberKind::SpongeTaper,
                    other => {
                        return Err(bad(format!(
                            "unknown absorber '{other}', expected pml or sponge-taper"
                        )))
                    }
                }
            }
            "solver.reflection" => self.reflection = real()?,
            "solver.memory_budget_mb" => self.memory_budget_mb = count()?,
            "inversion.misfit" => {
                self.misfit = value
                    .parse()
                    .map_err(|_| bad(format!("unknown misfit '{value}', expected l2 or w2")))?
            }
            "inversion.data" => self.data = value.parse().map_err(bad)?,
            "inversion.model_mollifier_sigma" => self.model_mollifier_sigma = real()?,
            "inversion.data_mollifier_sigma" => self.data_mollifier_sigma = real()?,
            "inversion.m_min" => self.m_min = auto_real()?,
            "inversion.m_max" => self.m_max = auto_real()?,
            "inversion.max_iterations" => self.max_iterations = count()?,
            "inversion.gradient_tolerance" => self.gradient_tolerance = real()?,
            "inversion.relative_decrease_tolerance" => self.relative_decrease_tolerance = real()?,
            "inversion.memory" => self.optimizer_memory = count()?,
            "inversion.initial_step" => self.initial_step = real()?,
            "inversion.checkpoint_every" => self.checkpoint_every = count()?,
            "seeds.master" => {
                self.master_seed = value
                    .parse()
                    .map_err(|_| bad(format!("expected an unsigned 64-bit seed, got '{value}'")))?
            }
            "seeds.realizations" => self.realizations = count()?,
            "report.mass_density" => self.mass_density = auto_real()?,
            "study.k" => self.study_k = real()?,
            "study.n" => self.study_n = count()?,
            "study.side" => self.study_side = real()?,
            "study.epsilons" => {
                self.study_epsilons = value
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<f64>()
                            .map_err(|_| bad(format!("expected a list of radii, got '{value}'")))
                    })
                    .collect::<Result<_, _>>()?
            }
            "study.realizations" => self.study_realizations = count()?,
            "study.p_max" => self.study_p_max = real()?,
            "study.bootstrap" => self.study_bootstrap = count()?,
            "gradcheck.n" => self.gradcheck_n = count()?,
            "gradcheck.side" => self.gradcheck_side = real()?,
            "gradcheck.sources" => self.gradcheck_sources = count()?,
            "gradcheck.receivers" => self.gradcheck_receivers = count()?,
            "gradcheck.directions" => self.gradcheck_directions = count()?,
            "gradcheck.record_t" => self.gradcheck_record_t = real()?,
            _ => return Err(bad("unknown key".into())),
        }
        Ok(())
    }

    /// Field-level checks that run before any simulation.
    pub fn validate(&self) -> Result<(), CliError> {
        fn need(ok: bool, field: &str, msg: impl FnOnce() -> String) -> Result<(), CliError> {
            if ok {
                Ok(())
            } else {
                Err(field_error(field, msg()))
            }
        }
        let positive =
            |v: f64, field: &str| need(v > 0.0, field, || format!("must be positive, got {v}"));
        positive(self.domain_width, "domain.width")?;
        positive(self.domain_height, "domain.height")?;
        for (v, field) in [
            (self.fine_nx, "grid.fine_nx"),
            (self.fine_ny, "grid.fine_ny"),
            (self.coarse_nx, "grid.coarse_nx"),
            (self.coarse_ny, "grid.coarse_ny"),
        ] {
            need(v >= 2, field, || format!("needs at least 2 cells, got {v}"))?;
        }
        positive(self.c0, "medium.c0")?;
        positive(self.c1, "medium.c1")?;
        positive(self.epsilon, "medium.epsilon")?;
        need((0.0..1.0).contains(&self.p_max), "profile.p_max", || {
            format!("must lie in [0, 1), got {}", self.p_max)
        })?;
        match self.profile {
            ProfileKind::Gaussian => positive(self.sigma, "profile.sigma")?,
            ProfileKind::Chiu => {
                positive(self.chiu_m, "profile.chiu_m")?;
                positive(self.chiu_lambda, "profile.chiu_lambda")?;
            }
        }
        need(self.sources >= 1, "acquisition.sources", || {
            "needs at least one source".into()
        })?;
        need(self.receivers >= 1, "acquisition.receivers", || {
            "needs at least one receiver".into()
        })?;
        need(
            self.inset >= 0.0 && self.inset < self.domain_height,
            "acquisition.inset",
            || format!("must lie inside the domain, got {}", self.inset),
        )?;
        positive(self.f0, "acquisition.f0")?;
        positive(self.record_dt, "acquisition.record_dt")?;
        positive(self.record_t, "acquisition.record_t")?;
        let ratio = self.record_t / self.record_dt;
        need(
            (ratio - ratio.round()).abs() <= 1e-6 * ratio.max(1.0),
            "acquisition.record_dt",
            || {
                format!(
                    "{} does not divide record_t {}",
                    self.record_dt, self.record_t
                )
            },
        )?;
        need(
            self.cfl_factor > 0.0 && self.cfl_factor <= MAX_CFL_FACTOR,
            "solver.cfl_factor",
            || {
                format!(
                    "must lie in (0, {MAX_CFL_FACTOR:.4}], got {}",
                    self.cfl_factor
                )
            },
        )?;
        need(
            self.reflection > 0.0 && self.reflection < 1.0,
            "solver.reflection",
            || format!("must lie in (0, 1), got {}", self.reflection),
        )?;
        need(
            self.memory_budget_mb >= 1,
            "solver.memory_budget_mb",
            || "must be at least 1".into(),
        )?;
        for (v, field) in [
            (
                self.model_mollifier_sigma,
                "inversion.model_mollifier_sigma",
            ),
            (self.data_mollifier_sigma, "inversion.data_mollifier_sigma"),
        ] {
            need(v >= 0.0, field, || format!("must be nonnegative, got {v}"))?;
        }
        for (v, field) in [
            (self.m_min, "inversion.m_min"),
            (self.m_max, "inversion.m_max"),
        ] {
            if let Some(v) = v {
                positive(v, field)?;
            }
        }
        let (lo, hi) = self.model_bounds();
        need(lo < hi, "inversion.m_max", || {
            format!("must exceed m_min, got [{lo}, {hi}]")
        })?;
        need(self.optimizer_memory >= 1, "inversion.memory", || {
            "must be at least 1".into()
        })?;
        need(
            self.gradient_tolerance >= 0.0,
            "inversion.gradient_tolerance",
            || "must be nonnegative".into(),
        )?;
        need(
            self.relative_decrease_tolerance >= 0.0,
            "inversion.relative_decrease_tolerance",
            || "must be nonnegative".into(),
        )?;
        positive(self.initial_step, "inversion.initial_step")?;
        need(self.realizations >= 1, "seeds.realizations", || {
            "needs at least one realization".into()
        })?;
        if let Some(v) = self.mass_density {
            positive(v, "report.mass_density")?;
        }
        positive(self.study_k, "study.k")?;
        need(self.study_n >= 8, "study.n", || {
            "needs at least 8 cells".into()
        })?;
        positive(self.study_side, "study.side")?;
        need(self.study_epsilons.len() >= 3, "study.epsilons", || {
            format!("needs at least 3 radii, got {}", self.study_epsilons.len())
        })?;
        need(
            self.study_epsilons.windows(2).all(|w| w[1] < w[0])
                && self.study_epsilons.iter().all(|e| *e > 0.0),
            "study.epsilons",
            || "radii must be positive and strictly decreasing".into(),
        )?;
        let h = self.study_side / self.study_n as f64;
        let smallest = self.study_epsilons.last().copied().unwrap_or(0.0);
        need(smallest >= 4.0 * h * (1.0 - 1e-9), "study.epsilons", || {
            format!("smallest radius {smallest} is below 4 cells of {h}")
        })?;
        need(self.study_realizations >= 8, "study.realizations", || {
            format!("needs at least 8, got {}", self.study_realizations)
        })?;
        need(
            (0.0..1.0).contains(&self.study_p_max),
            "study.p_max",
            || format!("must lie in [0, 1), got {}", self.study_p_max),
        )?;
        need(self.study_bootstrap >= 1, "study.bootstrap", || {
            "needs at least one resample".into()
        })?;
        need(self.gradcheck_n >= 8, "gradcheck.n", || {
            "needs at least 8 cells".into()
        })?;
        positive(self.gradcheck_side, "gradcheck.side")?;
        positive(self.gradcheck_record_t, "gradcheck.record_t")?;
        let ratio = self.gradcheck_record_t / self.record_dt;
        need(
            (ratio - ratio.round()).abs() <= 1e-6 * ratio.max(1.0),
            "gradcheck.record_t",
            || format!("is not a multiple of record_dt {}", self.record_dt),
        )?;
        need(self.gradcheck_sources >= 1, "gradcheck.sources", || {
            "needs at least one source".into()
        })?;
        need(self.gradcheck_receivers >= 1, "gradcheck.receivers", || {
            "needs at least one receiver".into()
        })?;
        need(
            self.gradcheck_directions >= 1,
            "gradcheck.directions",
            || "needs at least one direction".into(),
        )?;
        self.fine_grid()
            .map_err(|e| field_error("grid.fine_nx", e.to_string()))?;
        self.coarse_grid()
            .map_err(|e| field_error("grid.coarse_nx", e.to_string()))?;
        Ok(())
    }

    pub fn fine_grid(&self) -> sedconc::Result<GridGeometry> {
        GridGeometry::new(
            self.fine_nx,
            self.fine_ny,
            self.domain_width / self.fine_nx as f64,
            self.domain_height / self.fine_ny as f64,
            0.0,
            0.0,
        )
    }

    pub fn coarse_grid(&self) -> sedconc::Result<GridGeometry> {
        GridGeometry::new(
            self.coarse_nx,
            self.coarse_ny,
            self.domain_width / self.coarse_nx as f64,
            self.domain_height / self.coarse_ny as f64,
            0.0,
            0.0,
        )
    }

    /// `[m_min, m_max]`, defaulting to `[1/c1^2, 1.05/c0^2]` for a faster sediment.
    pub fn model_bounds(&self) -> (f64, f64) {
        let (w, s) = (1.0 / (self.c0 * self.c0), 1.0 / (self.c1 * self.c1));
        (
            self.m_min.unwrap_or(s.min(w)),
            self.m_max.unwrap_or(1.05 * s.max(w)),
        )
    }
}
