//! Command bodies. Each writes its artifacts under the output directory and
//! returns a short summary for the terminal.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use sedconc::grid::{read_field, write_field, ScalarField2D};
use sedconc::helmholtz::{convergence_study, StudyReport};
use sedconc::inversion::{invert, DirectionalCheck, InversionState};
use sedconc::medium::{effective_slowness_squared, effective_velocity, write_cloud};
use sedconc::misfit::MisfitKind;
use sedconc::report::{
    build_report, concentration_from_realization, data_comparison, reports_csv, reports_table,
    ArrivalWindow, ConcentrationReport, Method,
};

use crate::config::DataSource;
use crate::error::CliError;
use crate::experiment::{averaged, read_records, write_records, Experiment, InversionOptions};

/// Relative error below which a directional check passes.
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;
/// Fraction of directions that must pass.
pub const GRADCHECK_PASS_FRACTION: f64 = 0.95;

fn io<T>(r: std::io::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Core(e.into()))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        io(std::fs::create_dir_all(parent))?;
    }
    io(std::fs::write(path, text))
}

/// Stores the resolved config next to the artifacts.
pub fn write_config(exp: &Experiment, out: &Path) -> Result<(), CliError> {
    write_text(&out.join("config.txt"), &exp.cfg.to_text())
}

pub fn generate(exp: &Experiment, out: &Path, realization: usize) -> Result<String, CliError> {
    let p_fine = exp.probability(&exp.fine)?;
    let p_coarse = exp.probability(&exp.coarse)?;
    let density = exp.density()?;
    write_field(p_fine.field(), out.join("probability_fine.grd"))?;
    write_field(p_coarse.field(), out.join("probability_coarse.grd"))?;
    write_field(density.field(), out.join("density_fine.grd"))?;
    for (p, name) in [(&p_fine, "fine"), (&p_coarse, "coarse")] {
        let v = effective_velocity(&effective_slowness_squared(p, &exp.constants))?;
        write_field(&v, out.join(format!("effective_velocity_{name}.grd")))?;
    }
    let (cloud, v) = exp.realization(&density, realization)?;
    let dir = out.join(format!("realization_{realization:03}"));
    io(std::fs::create_dir_all(&dir))?;
    write_cloud(&cloud, dir.join("cloud.csv"))?;
    write_field(&v, dir.join("velocity.grd"))?;
    Ok(format!(
        "realization {realization}: seed {}, {} particles, sediment fraction {:.6}",
        cloud.seed,
        cloud.centers.len(),
        concentration_from_realization(&v, &exp.constants)
    ))
}

pub fn forward(exp: &Experiment, out: &Path) -> Result<String, CliError> {
    let rec = out.join("records");
    let eff_fine = exp.effective_fine_records()?;
    write_records(&rec.join("effective_fine"), &eff_fine)?;
    write_records(
        &rec.join("effective_coarse"),
        &exp.effective_coarse_records()?,
    )?;
    let density = exp.density()?;
    let het = exp.heterogeneous_records(&density, 0..exp.cfg.realizations)?;
    for (k, shots) in het.iter().enumerate() {
        write_records(&rec.join("heterogeneous").join(format!("r{k:03}")), shots)?;
    }
    write_records(&rec.join("averaged"), &averaged(&het)?)?;
    let window = ArrivalWindow::new(exp.constants.c0, exp.cfg.f0)?;
    let cmp = data_comparison(&eff_fine, &het, &exp.acquisition, &window)?;
    write_text(&out.join("comparison.csv"), &cmp.to_csv())?;
    Ok(format!(
        "{} realizations x {} sources; first-arrival difference to the effective data: single {:.4}, averaged {:.4}",
        het.len(),
        exp.acquisition.sources.len(),
        cmp.single_total,
        cmp.averaged_total
    ))
}

/// Inversion label used for the output directory.
pub fn inversion_name(data: DataSource, opts: &InversionOptions) -> String {
    let method = Method::from_flags(data == DataSource::Averaged, opts.model_sigma > 0.0);
    let mut name = format!("{}-{}-{method}", data.as_str(), opts.misfit);
    if opts.data_sigma > 0.0 {
        name.push_str("-data_mollified");
    }
    name
}

/// Records an inversion fits, read from the `forward` output.
pub fn observed_records(
    exp: &Experiment,
    out: &Path,
    data: DataSource,
) -> Result<Vec<sedconc::wavesim::ShotRecord>, CliError> {
    let rec = out.join("records");
    let dir = match data {
        DataSource::Averaged => rec.join("averaged"),
        DataSource::Single => rec.join("heterogeneous").join("r000"),
        DataSource::Effective => rec.join("effective_coarse"),
    };
    read_records(&dir, exp.acquisition.sources.len())
}

pub fn run_inversion(
    exp: &Experiment,
    observed: &[sedconc::wavesim::ShotRecord],
    opts: &InversionOptions,
) -> Result<InversionState, CliError> {
    let cfg = exp.inversion_config(opts);
    Ok(invert(
        observed,
        &exp.acquisition,
        &cfg,
        &exp.initial_model(),
    )?)
}

pub fn invert_command(
    exp: &Experiment,
    out: &Path,
    data: DataSource,
    opts: &InversionOptions,
    name: Option<&str>,
) -> Result<String, CliError> {
    let name = name.map_or_else(|| inversion_name(data, opts), str::to_string);
    let dir = out.join("inversion").join(&name);
    let observed = observed_records(exp, out, data)?;
    let opts = InversionOptions {
        checkpoint_dir: Some(dir.join("checkpoint")),
        ..opts.clone()
    };
    let state = run_inversion(exp, &observed, &opts)?;
    io(std::fs::create_dir_all(&dir))?;
    write_field(&state.iterate, dir.join("model.grd"))?;
    write_field(&state.parameters, dir.join("parameters.grd"))?;
    write_text(&dir.join("history.csv"), &state.history_csv())?;
    let method = Method::from_flags(data == DataSource::Averaged, opts.model_sigma > 0.0);
    let first = state.misfit_history.first().copied().unwrap_or(f64::NAN);
    let last = state.misfit_history.last().copied().unwrap_or(f64::NAN);
    let summary = format!(
        "method = {method}\nmisfit = {}\ndata = {}\nmodel_mollifier_sigma = {:?}\ndata_mollifier_sigma = {:?}\ntermination = {}\niterations = {}\ninitial_misfit = {first:e}\nfinal_misfit = {last:e}\n",
        opts.misfit,
        data.as_str(),
        opts.model_sigma,
        opts.data_sigma,
        state.termination,
        state.misfit_history.len().saturating_sub(1),
    );
    write_text(&dir.join("summary.txt"), &summary)?;
    Ok(format!(
        "{name}: {} after {} iterations, misfit {first:e} -> {last:e} ({:.3e} of initial); model in {}",
        state.termination,
        state.misfit_history.len().saturating_sub(1),
        last / first,
        dir.join("model.grd").display()
    ))
}

/// Method label stored in the `summary.txt` beside a model file.
fn method_beside(model: &Path) -> Option<Method> {
    let text = std::fs::read_to_string(model.with_file_name("summary.txt")).ok()?;
    text.lines()
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == "method")
        .and_then(|(_, v)| v.trim().parse().ok())
}

/// Concentration report of an inverted model against the configured truth.
pub fn concentration_report(
    exp: &Experiment,
    model: &ScalarField2D,
    method: Method,
) -> Result<ConcentrationReport, CliError> {
    let density = exp.density()?;
    let velocities = (0..exp.cfg.realizations)
        .into_par_iter()
        .map(|k| exp.realization(&density, k).map(|(_, v)| v))
        .collect::<Result<Vec<_>, _>>()?;
    let truth = exp.probability(model.geometry())?;
    Ok(build_report(
        model,
        &truth,
        &velocities,
        &exp.constants,
        method,
    )?)
}

pub fn estimate(
    exp: &Experiment,
    out: &Path,
    model_path: &Path,
    method: Option<Method>,
) -> Result<String, CliError> {
    if !model_path.exists() {
        return Err(CliError::MissingInput(format!(
            "model file {} not found",
            model_path.display()
        )));
    }
    let model = read_field(model_path)?;
    let method = method
        .or_else(|| method_beside(model_path))
        .unwrap_or(Method::Plain);
    let report = concentration_report(exp, &model, method)?;
    let dir = out.join("estimate");
    let mut rows = vec![report.clone()];
    write_text(&dir.join("report.csv"), &reports_csv(&rows))?;
    let mut table = reports_table(&rows);
    if let Some(rho) = exp.cfg.mass_density {
        rows = vec![report.scaled(rho)];
        write_text(&dir.join("report_mass.csv"), &reports_csv(&rows))?;
        let _ = write!(
            table,
            "\nmass concentration (x {rho}):\n{}",
            reports_table(&rows)
        );
    }
    write_text(&dir.join("report.txt"), &table)?;
    Ok(table)
}

pub fn verify_homogenization(exp: &Experiment, out: &Path) -> Result<StudyReport, CliError> {
    let (spec, hcfg) = exp.study_spec()?;
    let report = convergence_study(&spec, &hcfg)?;
    write_text(&out.join("homogenization.csv"), &report.to_csv())?;
    if report.energy_bound_violations > 0 {
        return Err(CliError::CheckFailed(format!(
            "{} solves exceeded the energy bound (max ratio {:.4})",
            report.energy_bound_violations, report.energy_bound_max_ratio
        )));
    }
    Ok(report)
}

pub fn study_summary(r: &StudyReport) -> String {
    let mut s = String::new();
    for row in &r.rows {
        let _ = writeln!(
            s,
            "eps {:<8} E|u_eps - u|^2 = {:.4e} (se {:.2e}, M = {})",
            row.epsilon, row.mean_sq_error, row.stderr, row.realizations
        );
    }
    let _ = write!(
        s,
        "slope {:.3} (95% CI {:.3} .. {:.3}), energy bound max ratio {:.4}",
        r.slope, r.ci_low, r.ci_high, r.energy_bound_max_ratio
    );
    s
}

/// Checks per misfit, the fraction passing, and whether the command passes.
pub fn gradcheck(
    exp: &Experiment,
    out: &Path,
    misfits: &[MisfitKind],
) -> Result<(String, bool), CliError> {
    let mut csv = String::from("misfit,direction,analytic,finite_difference,step,relative_error\n");
    let mut summary = String::new();
    let mut ok = true;
    for &kind in misfits {
        let checks: Vec<DirectionalCheck> = exp.gradcheck(kind)?;
        for (d, c) in checks.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{kind},{d},{:e},{:e},{:e},{:e}",
                c.analytic, c.finite_difference, c.step, c.relative_error
            );
        }
        let passed = checks
            .iter()
            .filter(|c| c.relative_error < GRADCHECK_TOLERANCE)
            .count();
        let need = (GRADCHECK_PASS_FRACTION * checks.len() as f64).ceil() as usize;
        ok &= passed >= need;
        let worst = checks.iter().map(|c| c.relative_error).fold(0.0, f64::max);
        let _ = writeln!(
            summary,
            "{kind}: {passed}/{} directions within {GRADCHECK_TOLERANCE:e} (worst {worst:.2e})",
            checks.len()
        );
    }
    write_text(&out.join("gradcheck.csv"), &csv)?;
    Ok((summary.trim_end().to_string(), ok))
}

/// Default directory for artifacts.
pub fn default_out() -> PathBuf {
    PathBuf::from("sedconc-out")
}
