use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sedconc::misfit::MisfitKind;
use sedconc::report::Method;
use sedconc_cli::commands;
use sedconc_cli::config::DataSource;
use sedconc_cli::experiment::InversionOptions;
use sedconc_cli::{CliError, Experiment, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "sedconc",
    version,
    about = "Sediment concentration from acoustic waveforms"
)]
struct Cli {
    /// Experiment config file; keys it omits come from its preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Preset used when no config file is given.
    #[arg(long, global = true, default_value = "gaussian-desk")]
    preset: String,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Misfit {
    L2,
    W2,
}

impl From<Misfit> for MisfitKind {
    fn from(m: Misfit) -> Self {
        match m {
            Misfit::L2 => MisfitKind::L2,
            Misfit::W2 => MisfitKind::W2,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Data {
    Averaged,
    Single,
    Effective,
}

#[derive(Subcommand)]
enum Command {
    /// Writes the probability, density and effective media and one realization.
    Generate {
        #[arg(long, default_value_t = 0)]
        realization: usize,
    },
    /// Simulates effective and heterogeneous records for every realization.
    Forward,
    /// Inverts records from `forward` on the coarse grid.
    Invert {
        #[arg(long, value_enum)]
        misfit: Option<Misfit>,
        /// Model mollifier width in coarse cells.
        #[arg(long, value_name = "S")]
        mollify_model: Option<f64>,
        /// Data mollifier width in record samples.
        #[arg(long, value_name = "S")]
        mollify_data: Option<f64>,
        /// Fit the realization-averaged records.
        #[arg(long)]
        average: bool,
        #[arg(long, value_enum, conflicts_with = "average")]
        data: Option<Data>,
        /// Output subdirectory name under `inversion/`.
        #[arg(long)]
        name: Option<String>,
    },
    /// Concentration report for an inverted model.
    Estimate {
        #[arg(long)]
        model: PathBuf,
        /// plain, shot_averaging, model_mollification or both.
        #[arg(long)]
        method: Option<String>,
    },
    /// Helmholtz homogenization convergence study.
    VerifyHomogenization,
    /// Directional finite-difference check of the adjoint gradient.
    Gradcheck {
        #[arg(long, value_enum)]
        misfit: Option<Misfit>,
    },
    /// Prints the resolved config.
    Config,
}

fn run(cli: Cli) -> Result<String, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(&cli.preset)?,
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config {
                field: "--threads".into(),
                message: "must be at least 1".into(),
            });
        }
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    if let Command::Config = cli.command {
        cfg.validate()?;
        return Ok(cfg.to_text());
    }
    let exp = Experiment::new(cfg)?;
    let out = cli.out.unwrap_or_else(commands::default_out);
    commands::write_config(&exp, &out)?;
    match cli.command {
        Command::Generate { realization } => commands::generate(&exp, &out, realization),
        Command::Forward => commands::forward(&exp, &out),
        Command::Invert {
            misfit,
            mollify_model,
            mollify_data,
            average,
            data,
            name,
        } => {
            let defaults = exp.default_inversion_options();
            let opts = InversionOptions {
                misfit: misfit.map_or(defaults.misfit, Into::into),
                model_sigma: mollify_model.unwrap_or(defaults.model_sigma),
                data_sigma: mollify_data.unwrap_or(defaults.data_sigma),
                checkpoint_dir: None,
            };
            for (v, flag) in [
                (opts.model_sigma, "--mollify-model"),
                (opts.data_sigma, "--mollify-data"),
            ] {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(CliError::Config {
                        field: flag.into(),
                        message: format!("must be a nonnegative width, got {v}"),
                    });
                }
            }
            let data = match (average, data) {
                (true, _) => DataSource::Averaged,
                (false, Some(Data::Averaged)) => DataSource::Averaged,
                (false, Some(Data::Single)) => DataSource::Single,
                (false, Some(Data::Effective)) => DataSource::Effective,
                (false, None) => exp.cfg.data,
            };
            commands::invert_command(&exp, &out, data, &opts, name.as_deref())
        }
        Command::Estimate { model, method } => {
            let method = method
                .map(|m| {
                    m.parse::<Method>().map_err(|e| CliError::Config {
                        field: "--method".into(),
                        message: e.to_string(),
                    })
                })
                .transpose()?;
            commands::estimate(&exp, &out, &model, method)
        }
        Command::VerifyHomogenization => {
            commands::verify_homogenization(&exp, &out).map(|r| commands::study_summary(&r))
        }
        Command::Gradcheck { misfit } => {
            let kinds = match misfit {
                Some(m) => vec![m.into()],
                None => vec![MisfitKind::L2, MisfitKind::W2],
            };
            let (summary, ok) = commands::gradcheck(&exp, &out, &kinds)?;
            if ok {
                Ok(summary)
            } else {
                Err(CliError::CheckFailed(summary))
            }
        }
        Command::Config => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
