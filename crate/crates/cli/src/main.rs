use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ess_core::ess::EpochMetrics;
use ess_core::gradcheck::run_suite;
use ess_lab::config::RunConfig;
use ess_lab::pipeline;
use ess_lab::server::{bind, serve, AppState};
use ess_lab::session::{SessionConfig, SessionState};
use ess_lab::{CliError, EXIT_INTERNAL};

#[derive(Parser)]
#[command(name = "ess-lab", version, about = "Spatial-similarity contrastive learning laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.epochs=5`. Repeatable; applied in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Root for datasets and runs.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    run_name: Option<String>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut overrides = self.overrides.clone();
        if let Some(d) = &self.output_dir {
            overrides.push(format!("output_dir={}", toml_string(&d.to_string_lossy())));
        }
        if let Some(n) = &self.run_name {
            overrides.push(format!("run_name={}", toml_string(n)));
        }
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

#[derive(Subcommand)]
enum Command {
    /// Build a floor plan, walk it and render the dataset.
    Generate(Common),
    /// Contrastive pretraining on the generated dataset.
    Train(Common),
    /// Downstream probe, localization and cluster metrics for a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to the run directory's checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Finite-difference gradient checks in f64.
    Gradcheck,
    /// Interactive walkthrough service.
    Serve {
        #[command(flatten)]
        common: Common,
        /// Plan file; defaults to the one generated from the configuration.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Train and evaluate every mode under every seed; mean ± standard error.
    Report(Common),
}

fn print_epoch(label: &str, m: &EpochMetrics) {
    println!(
        "{label}epoch {:>3}  loss {:.4}  instance acc {:.3}  positives {:.2}  fallbacks {}  {:.1}s",
        m.epoch + 1,
        m.loss,
        m.pretext_acc,
        m.mean_positives,
        m.fallbacks,
        m.wall_ms as f64 / 1000.0
    );
}

fn gradcheck() -> Result<(), CliError> {
    let started = Instant::now();
    let cases = run_suite()?;
    let mut failed = 0;
    for c in &cases {
        if !c.passed {
            failed += 1;
        }
        println!(
            "{:<4} {:<28} max rel err {:.3e}  (tol {:.0e}, {} coords)",
            if c.passed { "ok" } else { "FAIL" },
            c.name,
            c.max_rel_error,
            c.tolerance,
            c.coordinates
        );
    }
    let worst = cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    println!(
        "{} cases, {failed} failed, worst rel err {worst:.3e}, {:.1}s",
        cases.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        return Err(CliError::Internal(format!("{failed} gradient checks failed")));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(common) => {
            let cfg = common.load()?;
            let s = pipeline::generate(&cfg)?;
            println!("wrote {} frames to {}", s.frames, s.dataset_dir.display());
            if let Some(n) = s.eval_frames {
                println!("wrote {n} evaluation frames to {}", cfg.eval_dataset_dir().display());
            }
        }
        Command::Train(common) => {
            let cfg = common.load()?;
            let s = pipeline::train(&cfg, &mut |m| print_epoch("", m))?;
            println!("checkpoint {}", s.checkpoint.display());
        }
        Command::Eval { common, checkpoint } => {
            let cfg = common.load()?;
            let report = pipeline::eval(&cfg, checkpoint.as_deref())?;
            print!("{}", pipeline::eval_table(&report));
            println!("report {}", cfg.run_dir().join(pipeline::EVAL_REPORT).display());
        }
        Command::Gradcheck => gradcheck()?,
        Command::Serve {
            common,
            plan,
            port,
            static_dir,
        } => {
            let mut cfg = common.load()?;
            if plan.is_some() {
                cfg.env.plan_file = plan;
            }
            let sc = &cfg.serve;
            let session = SessionState::new(
                pipeline::plan_for(&cfg)?,
                SessionConfig {
                    resolution: sc.resolution,
                    step_length: sc.step_length,
                    turn_increment: sc.turn_increment,
                    lighting: sc.lighting,
                },
            )?;
            let static_dir = static_dir.or_else(|| sc.static_dir.clone());
            let rt = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()?;
            rt.block_on(async {
                let (listener, addr) = bind(&sc.host, port.unwrap_or(sc.port)).await?;
                println!("listening on http://{addr} (socket at /ws)");
                serve(listener, AppState::new(session), static_dir).await
            })?;
        }
        Command::Report(common) => {
            let cfg = common.load()?;
            let report = pipeline::report(&cfg, &mut |label, m| print_epoch(&format!("[{label}] "), m))?;
            print!("{}", pipeline::report_table(&report.summary));
            println!("report {}", cfg.run_dir().join(pipeline::REPORT_JSON).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code().clamp(1, EXIT_INTERNAL) as u8)
        }
    }
}
