use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use risloc::agents::DecodeMode;
use risloc::config::{ExperimentConfig, Preset};
use risloc::experiment::Experiment;
use risloc::pipeline::{results_csv, ResultRow, Scheme};
use risloc::{Error, Result};

#[derive(Parser)]
#[command(name = "risloc", version, about = "RIS-assisted localization experiments")]
struct Cli {
    /// TOML file of overrides on top of the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = PresetArg::Paper)]
    preset: PresetArg,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root under which run directories are created.
    #[arg(long, global = true, env = "RISLOC_OUT_DIR", default_value = "runs")]
    out_dir: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "RISLOC_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Paper,
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    MultiAgent,
    SingleAgent,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::MultiAgent => Scheme::MultiAgent,
            SchemeArg::SingleAgent => Scheme::SingleAgent,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Stage1,
    Supervised,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecodeArg {
    Sample,
    Argmax,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Fingerprint,
    Supervised,
    SingleAgent,
    Uniform,
}

#[derive(Subcommand)]
enum Command {
    /// Print the resolved config and its hash.
    Config,
    /// Generate a random-sensing dataset.
    GenData {
        #[arg(long, value_enum, default_value_t = DataKind::Stage1)]
        kind: DataKind,
    },
    /// Train the initial estimator on the stored dataset.
    TrainEstimator,
    /// Evolve the sensing agents against the initial estimator.
    Evolve {
        #[arg(long, value_enum, default_value_t = SchemeArg::MultiAgent)]
        scheme: SchemeArg,
    },
    /// Collect episodes under the evolved agents and train the final estimator.
    Retrain {
        #[arg(long, value_enum, default_value_t = SchemeArg::MultiAgent)]
        scheme: SchemeArg,
    },
    /// Evaluate a trained scheme on the held-out episodes.
    Eval {
        #[arg(long, value_enum, default_value_t = SchemeArg::MultiAgent)]
        scheme: SchemeArg,
        /// Defaults to the configured decoding.
        #[arg(long, value_enum)]
        decode: Option<DecodeArg>,
    },
    /// Train and evaluate one comparison scheme.
    Baseline {
        #[arg(value_enum)]
        which: BaselineArg,
    },
    /// Run every method at every sweep point.
    Sweep,
    /// Verify artifact digests and recompute every logged evaluation.
    Replay,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let preset = match cli.preset {
        PresetArg::Paper => Preset::Paper,
        PresetArg::Desk => Preset::Desk,
    };
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path, preset)?,
        None => ExperimentConfig::preset(preset),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_rows(rows: &[ResultRow]) {
    print!("{}", results_csv(rows));
}

fn print_json(value: serde_json::Value) {
    println!("{value}");
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    }
    let cfg = load_config(&cli)?;
    if let Command::Config = cli.command {
        println!("# config hash {}", cfg.hash());
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let mut ex = Experiment::open(cfg, &cli.out_dir)?;
    let run_dir = ex.dir.path.display().to_string();
    match cli.command {
        Command::Config => unreachable!("handled above"),
        Command::GenData { kind } => {
            let d = match kind {
                DataKind::Stage1 => ex.gen_stage1_data()?,
                DataKind::Supervised => ex.gen_supervised_data()?,
            };
            print_json(serde_json::json!({ "run_dir": run_dir, "episodes": d.episodes.len(), "mean_power": d.mean_power() }));
        }
        Command::TrainEstimator => {
            let t = ex.train_estimator()?;
            let r = t.report.expect("freshly trained");
            print_json(serde_json::json!({ "run_dir": run_dir, "val_rmse": r.val_rmse, "best_epoch": r.best_epoch }));
        }
        Command::Evolve { scheme } => {
            let (_, run) = ex.evolve(scheme.into())?;
            print_json(serde_json::json!({
                "run_dir": run_dir,
                "generation0_best": run.stats[0].best,
                "best_fitness": run.best_report.fitness,
                "best_generation": run.best_generation,
                "mean_power": run.best_report.mean_power,
                "mean_distance": run.best_report.mean_distance,
            }));
        }
        Command::Retrain { scheme } => {
            let t = ex.retrain(scheme.into())?;
            let r = t.report.expect("freshly trained");
            print_json(serde_json::json!({ "run_dir": run_dir, "val_rmse": r.val_rmse, "best_epoch": r.best_epoch }));
        }
        Command::Eval { scheme, decode } => {
            let decode = match decode {
                Some(DecodeArg::Sample) => DecodeMode::Sample,
                Some(DecodeArg::Argmax) => DecodeMode::Argmax,
                None => ex.pipeline.rollout.decode,
            };
            print_rows(&[ex.eval(Scheme::from(scheme).method(), decode)?]);
        }
        Command::Baseline { which } => {
            let row = match which {
                BaselineArg::Fingerprint => ex.baseline_fingerprint()?,
                BaselineArg::Supervised => ex.baseline_supervised()?,
                BaselineArg::SingleAgent => ex.baseline_single_agent()?,
                BaselineArg::Uniform => ex.baseline_uniform()?,
            };
            print_rows(&[row]);
        }
        Command::Sweep => print_rows(&ex.sweep()?),
        Command::Replay => print_rows(&ex.replay()?),
    }
    Ok(())
}

fn error_json(e: &Error) -> serde_json::Value {
    let mut body = serde_json::json!({ "kind": e.kind(), "message": e.to_string() });
    if let Error::Config { path, .. } = e {
        body["path"] = serde_json::Value::String(path.clone());
    }
    serde_json::json!({ "error": body })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use risloc::config::Method;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn config_errors_carry_their_path() {
        let v = error_json(&Error::config("ne.p_mut", "must lie in [0, 1]"));
        assert_eq!(v["error"]["kind"], "config");
        assert_eq!(v["error"]["path"], "ne.p_mut");
    }

    #[test]
    fn every_method_maps_to_a_baseline_or_scheme() {
        assert_eq!(Method::ALL.len(), 5);
        assert_eq!(Scheme::from(SchemeArg::SingleAgent).method(), Method::SingleAgent);
    }
}
