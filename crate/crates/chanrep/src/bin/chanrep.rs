use std::path::PathBuf;
use std::process::ExitCode;

use chanrep::config::ExperimentConfig;
use chanrep::pipeline::{self, Layout, Stage};
use chanrep::verify::{self, WaterfillFn};
use chanrep::{eval, project, HarnessError, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "chanrep", version, about = "Geolocation-based channel representation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Encoder,
    Decoder,
    Generator,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fault {
    /// Water-filling that drops the weakest active subcarrier.
    Waterfill,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise or import the channel dataset.
    Gen(Common),
    /// Fit the encoder, decoder and/or generator.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        stage: StageArg,
    },
    /// Score the representative-channel methods per UE.
    Eval(Common),
    /// Export the 2-D PCA projection of the representations.
    Project2d(Common),
    /// Run the numeric oracle suites.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Swap in a known-bad routine to check the suites catch it.
        #[arg(long, value_enum)]
        inject_fault: Option<Fault>,
    },
}

fn setup(c: &Common) -> Result<(ExperimentConfig, Layout)> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.out_dir = out.clone();
    }
    let layout = Layout::new(cfg.out_dir.clone());
    Ok((cfg, layout))
}

fn emit<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string(value).map_err(|e| HarnessError::Config(e.to_string()))?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(c) => {
            let (cfg, layout) = setup(&c)?;
            emit(&pipeline::run_gen(&cfg, &layout)?)
        }
        Command::Train { common, stage } => {
            let (cfg, layout) = setup(&common)?;
            let stage = match stage {
                StageArg::Encoder => Stage::Encoder,
                StageArg::Decoder => Stage::Decoder,
                StageArg::Generator => Stage::Generator,
                StageArg::All => Stage::All,
            };
            emit(&pipeline::run_train(&cfg, &layout, stage)?)
        }
        Command::Eval(c) => {
            let (cfg, layout) = setup(&c)?;
            emit(&eval::run_eval(&cfg, &layout)?)
        }
        Command::Project2d(c) => {
            let (cfg, layout) = setup(&c)?;
            let report = project::run_project2d(&cfg, &layout)?;
            if report.degenerate {
                eprintln!("warning: representations have zero variance; all points written at the origin");
            }
            emit(&report)
        }
        Command::Verify { common, inject_fault } => {
            let (cfg, layout) = setup(&common)?;
            let wf: WaterfillFn = match inject_fault {
                None => chanrep_core::precode::waterfill,
                Some(Fault::Waterfill) => verify::waterfill_off_by_one,
            };
            emit(&verify::run_verify(cfg.seed, &layout, wf)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = HarnessError::Config(e.to_string().lines().next().unwrap_or("bad arguments").to_string());
            eprintln!("{}", err.to_line());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
