use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use ffvio::harness::{
    ablation_csv, ablation_matrix, ablation_table, evaluate_files, run_scenario, write_outputs, Feature, HarnessError,
    Mode, RunConfig,
};

#[derive(Parser)]
#[command(name = "ffvio", version, about = "Synthetic visual-inertial estimation runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario, run the estimator and write trajectories and a report.
    Run(RunArgs),
    /// Run every on/off combination of the selected loops on one seed.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Loops to vary (comma separated); defaults to all six.
        #[arg(long, value_delimiter = ',')]
        vary: Vec<String>,
    },
    /// ATE between an estimated and a ground-truth TUM file.
    Eval { estimate: PathBuf, ground_truth: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML).
    config: PathBuf,
    /// Run all stages inline on one thread (deterministic).
    #[arg(long)]
    sync: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    disable_madgwick: bool,
    #[arg(long)]
    disable_feedforward: bool,
    #[arg(long)]
    disable_bias_feedback: bool,
    #[arg(long)]
    disable_iir: bool,
    #[arg(long)]
    disable_sliding_window: bool,
    #[arg(long)]
    disable_loop_closure: bool,
}

impl RunArgs {
    fn load(&self) -> Result<(RunConfig, Mode), HarnessError> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg = cfg.with_seed(seed);
        }
        let f = &mut cfg.estimator.features;
        for (off, feature) in [
            (self.disable_madgwick, Feature::Madgwick),
            (self.disable_feedforward, Feature::Feedforward),
            (self.disable_bias_feedback, Feature::BiasFeedback),
            (self.disable_iir, Feature::Iir),
            (self.disable_sliding_window, Feature::SlidingWindow),
            (self.disable_loop_closure, Feature::LoopClosure),
        ] {
            if off {
                f.set(feature, false);
            }
        }
        Ok((cfg, if self.sync { Mode::Sync } else { Mode::Async }))
    }
}

fn run(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::Run(args) => {
            let (cfg, mode) = args.load()?;
            let outcome = run_scenario(&cfg, mode)?;
            write_outputs(&outcome, &args.out_dir)?;
            let r = &outcome.report;
            println!(
                "{}: {} frames, {} keyframes, length {:.2} m, ATE {:.4} m ({:.2}%), {} loop closures, {:.2} s",
                r.scenario,
                r.frames,
                r.keyframes,
                r.trajectory_length,
                r.ate_rmse,
                100.0 * r.ate_ratio,
                r.loop_closures,
                r.timings.total
            );
            match &r.failure {
                Some(reason) => {
                    error!("estimator failed: {reason}");
                    Ok(ExitCode::from(1))
                }
                None => Ok(ExitCode::SUCCESS),
            }
        }
        Command::Ablate { run, vary } => {
            let (cfg, mode) = run.load()?;
            let varied = if vary.is_empty() {
                Feature::ALL.to_vec()
            } else {
                vary.iter().map(|s| s.parse()).collect::<Result<Vec<Feature>, _>>()?
            };
            let reports = ablation_matrix(&cfg, &varied, mode)?;
            let table = ablation_table(&reports);
            print!("{table}");
            fs::create_dir_all(&run.out_dir)?;
            fs::write(run.out_dir.join("ablation.txt"), table)?;
            fs::write(run.out_dir.join("ablation.csv"), ablation_csv(&reports))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { estimate, ground_truth } => {
            let ate = evaluate_files(&estimate, &ground_truth)?;
            println!("ATE RMSE {ate:.6} m");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
