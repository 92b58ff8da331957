//! `pdm`: calibrate windows, tune, run and explain the streaming failure
//! classifier from one TOML config; command-line flags override the file.

use clap::{Args, Parser, Subcommand};
use pdm_core::ingest::DownsampleMode;
use pdm_core::learn::ModelFamily;
use pdm_core::pipeline::{
    cmd_calibrate, cmd_explain, cmd_report, cmd_run, cmd_tune, model_label, table_header, table_row, PipelineError,
    RunConfig, SeqSelector, TuneOutcome,
};
use pdm_core::select::Scenario;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "pdm", version, about = "Online failure classification and explanation for air production units")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Derive the four window lengths from the first days of data.
    Calibrate(Common),
    /// Grid-search hyperparameters on a sparse random subset.
    Tune(Common),
    /// Test-then-train run with explanations and report.
    Run(Common),
    /// Print explanations of a completed run.
    Explain {
        #[command(flatten)]
        common: Common,
        /// Sample id, or inclusive range `A..B`.
        samples: SeqSelector,
    },
    /// Rebuild the HTML report of a completed run.
    Report(Common),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Sensor CSV file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Failure-report TOML file.
    #[arg(long)]
    events: Option<PathBuf>,
    /// Candidate-feature preset (1 or 2).
    #[arg(long, value_parser = parse_scenario)]
    scenario: Option<Scenario>,
    /// Window-length file (skips calibration).
    #[arg(long)]
    windows: Option<PathBuf>,
    /// Variance threshold of feature selection.
    #[arg(long)]
    threshold: Option<f64>,
    /// Keep one sample in FACTOR.
    #[arg(long)]
    factor: Option<u64>,
    /// Downsampling mode (stride or random).
    #[arg(long)]
    mode: Option<DownsampleMode>,
    /// Model family (gnb, htc, hatc, arfc).
    #[arg(long)]
    model: Option<ModelFamily>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Trees inspected per forest explanation.
    #[arg(long)]
    n_estimators: Option<usize>,
    /// Skip explanations.
    #[arg(long)]
    no_explain: bool,
    /// Save the final model checkpoint.
    #[arg(long)]
    save_model: bool,
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    let n: u8 = s.parse().map_err(|_| format!("scenario must be 1 or 2, got `{s}`"))?;
    Scenario::try_from(n)
}

impl Common {
    /// Config file (or defaults) with flags applied on top.
    fn config(&self) -> Result<RunConfig, PipelineError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.data {
            c.data = Some(v.clone());
        }
        if let Some(v) = &self.events {
            c.events = Some(v.clone());
        }
        if let Some(v) = self.scenario {
            c.scenario = v;
        }
        if let Some(v) = &self.windows {
            c.windows = Some(v.clone());
        }
        if let Some(v) = self.threshold {
            c.threshold = v;
        }
        if let Some(v) = self.factor {
            c.downsample.factor = v;
        }
        if let Some(v) = self.mode {
            c.downsample.mode = v;
        }
        if let Some(v) = self.model {
            if v != c.model.family {
                c.model.family = v;
                c.model.hyperparameters = Default::default();
            }
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.out {
            c.out = v.clone();
        }
        if let Some(v) = self.n_estimators {
            c.explain.n_estimators = Some(v);
        }
        if self.no_explain {
            c.explain.enabled = false;
        }
        if self.save_model {
            c.save_model = true;
        }
        Ok(c)
    }
}

fn execute(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Calibrate(common) => {
            let (spec, path) = cmd_calibrate(&common.config()?)?;
            let [avg, q1, q2, q3] = spec.lengths();
            println!("W_avg = {avg}\nW_q1  = {q1}\nW_q2  = {q2}\nW_q3  = {q3}");
            println!("written to {}", path.display());
        }
        Command::Tune(common) => match cmd_tune(&common.config()?)? {
            TuneOutcome::NothingToTune => println!("no hyperparameters; nothing to tune"),
            TuneOutcome::Ranked { leaderboard, path, samples } => {
                print!("{}", leaderboard.to_table());
                let best = leaderboard.best();
                println!("best: {} (macro F {:.4}, {samples} samples)", best.point, best.metrics.macro_f);
                println!("written to {}", path.display());
            }
        },
        Command::Run(common) => {
            let config = common.config()?;
            let outcome = cmd_run(&config)?;
            println!("{}", table_header());
            println!("{}", table_row(&model_label(config.model.family), &outcome.metrics));
            println!(
                "{} features selected, {} predictions explained; outputs in {}",
                outcome.selection.len(),
                outcome.explained,
                config.out.display()
            );
        }
        Command::Explain { common, samples } => {
            for (i, (_, text)) in cmd_explain(&common.config()?, &samples)?.iter().enumerate() {
                if i > 0 {
                    println!();
                }
                print!("{text}");
            }
        }
        Command::Report(common) => {
            let files = cmd_report(&common.config()?.out)?;
            println!("written to {}", files.html.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
