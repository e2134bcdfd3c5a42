use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tunerlab_core::control::{self, Pace};
use tunerlab_core::predictor::{predict_trace, write_prediction_csv, PredictorModel};
use tunerlab_core::scenarios::{
    self, beta_sweep, run_scenario, sweep_medians, write_sweep_csv, Scenario, PRESET_NAMES,
};

type BoxError = Box<dyn std::error::Error>;

#[derive(Debug, Parser)]
#[command(
    name = "tunerlab",
    version,
    about = "Tunable CUBIC congestion control simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write telemetry.csv and summary.json.
    Run {
        /// Scenario JSON file or preset name.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the link seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the run length in seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Transfer-time sweep over a parameter; writes sweep.csv.
    Sweep {
        #[arg(long)]
        scenario: String,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<i64>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the closed-form window trace for the first flow.
    Predict {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the scenario as a live service steered over WebSocket.
    Serve {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "127.0.0.1:8765")]
        listen: String,
        #[arg(long, value_enum, default_value_t = PaceArg::Realtime)]
        pace: PaceArg,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepParam {
    Beta,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PaceArg {
    Realtime,
    Fast,
}

impl From<PaceArg> for Pace {
    fn from(p: PaceArg) -> Self {
        match p {
            PaceArg::Realtime => Pace::Realtime,
            PaceArg::Fast => Pace::Fast,
        }
    }
}

fn load_scenario(arg: &str) -> Result<Scenario, BoxError> {
    let path = Path::new(arg);
    if path.exists() {
        return Scenario::load(path).map_err(|e| format!("{arg}: {e}").into());
    }
    if let Some(s) = scenarios::by_name(arg, 1) {
        return Ok(s);
    }
    Err(format!(
        "{arg}: no such file, and not a preset ({})",
        PRESET_NAMES.join(", ")
    )
    .into())
}

fn run(cmd: Command) -> Result<(), BoxError> {
    match cmd {
        Command::Run {
            scenario,
            out,
            seed,
            duration,
        } => {
            let mut scenario = load_scenario(&scenario)?;
            if let Some(seed) = seed {
                scenario = scenario.with_seed(seed);
            }
            if let Some(d) = duration {
                scenario.duration_s = d;
            }
            let result = run_scenario(&scenario)?;
            result.write_outputs(&out)?;
            log::info!(
                "{} samples written to {}",
                result.telemetry.len(),
                out.display()
            );
        }
        Command::Sweep {
            scenario,
            param: SweepParam::Beta,
            values,
            seeds,
            out,
        } => {
            if seeds == 0 {
                return Err("--seeds must be at least 1".into());
            }
            let scenario = load_scenario(&scenario)?;
            let rows = beta_sweep(&scenario, &values, seeds)?;
            fs::create_dir_all(&out)?;
            let file = fs::File::create(out.join("sweep.csv"))?;
            write_sweep_csv(&rows, BufWriter::new(file))?;
            for (beta, median) in sweep_medians(&rows) {
                println!("beta_q1024={beta} median_transfer_s={median:.4}");
            }
        }
        Command::Predict { scenario, out } => {
            let scenario = load_scenario(&scenario)?;
            let (link, flows) = scenario.build()?;
            let flow = flows.first().ok_or("scenario has no flows")?;
            let mut model = PredictorModel::new(flow.params, link, scenario.duration_s);
            model.initcwnd = f64::from(flow.route.initcwnd());
            let prediction = predict_trace(&model);
            for line in &prediction.meta.diagnostics {
                log::warn!("{line}");
            }
            fs::create_dir_all(&out)?;
            let file = fs::File::create(out.join("prediction.csv"))?;
            write_prediction_csv(&model, &prediction, BufWriter::new(file))?;
            let meta = serde_json::to_string_pretty(&prediction.meta)?;
            fs::write(out.join("prediction.json"), meta + "\n")?;
        }
        Command::Serve {
            scenario,
            listen,
            pace,
        } => {
            let scenario = load_scenario(&scenario)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let server = control::Server::bind(scenario, &listen, pace.into()).await?;
                eprintln!("listening on ws://{}", server.local_addr());
                tokio::select! {
                    report = server.run() => {
                        let report = report?;
                        log::info!("served {} ticks", report.telemetry.len());
                        if let Some(e) = report.sim_error {
                            return Err(e.into());
                        }
                        if !report.invariant_violations.is_empty() {
                            return Err(format!(
                                "{} invariant violations, first: {}",
                                report.invariant_violations.len(),
                                report.invariant_violations[0]
                            )
                            .into());
                        }
                        Ok::<(), BoxError>(())
                    }
                    _ = tokio::signal::ctrl_c() => {
                        log::info!("interrupted");
                        Ok(())
                    }
                }
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TUNERLAB_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tunerlab: error: {e}");
            ExitCode::FAILURE
        }
    }
}
