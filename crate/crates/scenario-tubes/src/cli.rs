//! Command-line front end.
//!
//! Four commands cover the library surface: `bounds` for the certificate
//! numerics, `tube` for one tube construction, `scalar` for one functional
//! bound, and `safebo` for a full campaign. `schema-check` validates emitted
//! artifacts. Every run writes its resolved configuration and version info
//! next to the outputs.
//!
//! Exit codes: 0 success, 2 configuration or argument error, 3 numerical
//! failure, 4 plant failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::certificates::{
    classic_sample_size, wj_solve_tau, ConfidenceSchedule, TrialCounting,
};
use crate::config::{ResolvedRun, RunConfig};
use crate::error::{Error, Result};
use crate::functionals::scalar_bound;
use crate::io;
use crate::rng::{Stream, StreamTag};
use crate::safe_bo::run_safe_bo;
use crate::tube::{TubeBuilder, TubeMethodChoice};

#[derive(Parser)]
#[command(
    name = "scenario-tubes",
    version,
    about = "Scenario-based uncertainty tubes, scalar bounds, and safe Bayesian optimization"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certificate numerics: sample sizes and wait-and-judge levels.
    Bounds {
        #[command(subcommand)]
        which: BoundsCommand,
    },
    /// Build one uncertainty tube from a configuration document.
    Tube(RunArgs),
    /// Bound a scalar functional of the unknown function.
    Scalar(RunArgs),
    /// Run a safe Bayesian-optimization campaign.
    Safebo(RunArgs),
    /// Validate emitted artifacts against the documented schemas.
    SchemaCheck {
        /// Files to validate.
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Subcommand)]
enum BoundsCommand {
    /// Minimal scenario count for the classic bound at support dimension D.
    Classic {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        nu: f64,
        /// Global confidence; combined with --t through the schedule.
        #[arg(long, conflicts_with = "kappa_t")]
        kappa: Option<f64>,
        #[arg(long, default_value_t = 1)]
        t: usize,
        /// Per-iteration confidence, bypassing the schedule.
        #[arg(long)]
        kappa_t: Option<f64>,
        #[arg(long, default_value_t = 1)]
        outputs: usize,
        /// Count one joint trial per scenario instead of one per output.
        #[arg(long)]
        joint_trials: bool,
    },
    /// Wait-and-judge level for an observed (m, s) pair.
    Wj {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        s: usize,
        #[arg(long, conflicts_with = "kappa_t")]
        kappa: Option<f64>,
        #[arg(long, default_value_t = 1)]
        t: usize,
        #[arg(long)]
        kappa_t: Option<f64>,
    },
}

/// Shared arguments of the config-driven commands. Flags override the
/// corresponding configuration keys.
#[derive(Args)]
struct RunArgs {
    /// Path to the run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Iteration index t for the confidence schedule.
    #[arg(long)]
    t: Option<usize>,
    #[arg(long, value_parser = parse_method)]
    method: Option<TubeMethodChoice>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Campaign horizon (safebo only).
    #[arg(long)]
    horizon: Option<usize>,
}

fn parse_method(s: &str) -> std::result::Result<TubeMethodChoice, String> {
    match s {
        "classic" => Ok(TubeMethodChoice::Classic),
        "wait_and_judge" | "wj" => Ok(TubeMethodChoice::WaitAndJudge),
        other => Err(format!(
            "unknown method {other:?} (expected classic or wait_and_judge)"
        )),
    }
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::from_path(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(nu) = self.nu {
            cfg.nu = nu;
        }
        if let Some(kappa) = self.kappa {
            cfg.kappa = kappa;
        }
        if let Some(t) = self.t {
            cfg.iteration = t;
        }
        if let Some(method) = self.method {
            cfg.method = method;
        }
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = Some(dir.clone());
        }
        if let Some(horizon) = self.horizon {
            if let Some(bo) = &mut cfg.safe_bo {
                bo.horizon = horizon;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Run the CLI and translate errors into documented exit codes.
pub fn main_with_exit_code() -> u8 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::PlantFailure(_) => 4,
        Error::RankDeficient | Error::EmptyBatch | Error::EmptyCandidates => 3,
        _ => 2,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Bounds { which } => bounds(which),
        Command::Tube(args) => tube_run(&args.load()?),
        Command::Scalar(args) => scalar_run(&args.load()?),
        Command::Safebo(args) => safebo_run(&args.load()?),
        Command::SchemaCheck { files } => {
            for file in &files {
                let kind = io::schema_check(file)?;
                println!("{}: {kind:?}", file.display());
            }
            Ok(())
        }
    }
}

fn resolve_kappa_t(kappa: Option<f64>, kappa_t: Option<f64>, t: usize) -> Result<f64> {
    match (kappa, kappa_t) {
        (_, Some(kt)) => Ok(kt),
        (Some(k), None) => Ok(ConfidenceSchedule::new(k)?.kappa_at(t)),
        (None, None) => Err(Error::Config(
            "either --kappa or --kappa-t is required".into(),
        )),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn bounds(cmd: BoundsCommand) -> Result<()> {
    match cmd {
        BoundsCommand::Classic {
            dim,
            nu,
            kappa,
            t,
            kappa_t,
            outputs,
            joint_trials,
        } => {
            let kappa_t = resolve_kappa_t(kappa, kappa_t, t)?;
            let counting = if joint_trials {
                TrialCounting::JointScenario
            } else {
                TrialCounting::PerOutput
            };
            let m = classic_sample_size(dim, nu, kappa_t, outputs, counting)?;
            print_json(&serde_json::json!({
                "m_t": m,
                "dim": dim,
                "nu": nu,
                "kappa_t": kappa_t,
                "outputs": outputs,
            }))
        }
        BoundsCommand::Wj {
            m,
            s,
            kappa,
            t,
            kappa_t,
        } => {
            let kappa_t = resolve_kappa_t(kappa, kappa_t, t)?;
            let tau = wj_solve_tau(m, s, kappa_t)?;
            print_json(&serde_json::json!({
                "tau": tau,
                "m": m,
                "s": s,
                "kappa_t": kappa_t,
            }))
        }
    }
}

#[derive(Serialize)]
struct VersionStamp {
    name: &'static str,
    version: &'static str,
}

fn write_run_metadata(dir: &Path, config: &RunConfig) -> Result<()> {
    io::write_json(&dir.join("config.json"), config)?;
    io::write_json(
        &dir.join("versions.json"),
        &VersionStamp {
            name: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
        },
    )
}

fn tube_run(cfg: &RunConfig) -> Result<()> {
    let run: ResolvedRun = cfg.resolve()?;
    let dir = cfg.resolve_out_dir();
    write_run_metadata(&dir, &run.config)?;

    let evaluators = crate::model::ModelEvaluators::build(&run.model)?;
    let mut builder = TubeBuilder::new(&run.model, &evaluators);
    builder.options = cfg.tube_options;
    let kappa_t = ConfidenceSchedule::new(cfg.kappa)?.kappa_at(cfg.iteration);
    let stream = Stream::root(cfg.seed)
        .tagged(StreamTag::Tube)
        .child(cfg.iteration as u64);
    let out = match cfg.method {
        TubeMethodChoice::Classic => {
            builder.classic(&run.dataset, cfg.nu, kappa_t, cfg.iteration, stream)?
        }
        TubeMethodChoice::WaitAndJudge => {
            builder.wait_and_judge(&run.dataset, cfg.nu, kappa_t, cfg.iteration, stream)?
        }
    };

    io::write_tube_csv(&dir.join("tube.csv"), &run.model.grid, &out.tube)?;
    io::write_json(&dir.join("certificate.json"), &out.tube.certificate)?;
    io::write_scenario_sample_csv(&dir.join("scenarios.csv"), &out.batch, 50)?;
    if !run.dataset.is_empty() {
        io::write_dataset_csv(&dir.join("dataset.csv"), &run.model.grid, &run.dataset)?;
    }
    print_json(&out.tube.certificate)?;
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn scalar_run(cfg: &RunConfig) -> Result<()> {
    let run = cfg.resolve()?;
    let (functional, output, discards) = run.functional()?;
    let dir = cfg.resolve_out_dir();
    write_run_metadata(&dir, &run.config)?;

    let kappa_t = ConfidenceSchedule::new(cfg.kappa)?.kappa_at(cfg.iteration);
    let stream = Stream::root(cfg.seed).tagged(StreamTag::Scalar);
    let bound = scalar_bound(
        &run.model,
        &run.dataset,
        functional,
        output,
        cfg.nu,
        kappa_t,
        discards,
        stream,
    )?;
    let report = serde_json::json!({
        "functional": bound.functional,
        "orientation": bound.orientation,
        "output": bound.output,
        "m": bound.m,
        "p": bound.p,
        "discards": bound.discards,
        "bound": bound.bound,
        "nu": bound.nu,
        "kappa_t": bound.kappa_t,
        "seed": cfg.seed,
    });
    io::write_json(&dir.join("scalar.json"), &report)?;
    print_json(&report)
}

fn safebo_run(cfg: &RunConfig) -> Result<()> {
    let run = cfg.resolve()?;
    let plant = run
        .plant
        .as_deref()
        .ok_or_else(|| Error::Config("safebo requires a plant preset".into()))?;
    let bo_config = run
        .safe_bo
        .clone()
        .ok_or_else(|| Error::Config("a safe_bo section is required".into()))?;
    let dir = cfg.resolve_out_dir();
    write_run_metadata(&dir, &run.config)?;

    let stream = Stream::root(cfg.seed);
    let state = match run_safe_bo(&run.model, plant, &bo_config, stream) {
        Ok(state) => state,
        Err(aborted) => {
            // Persist what happened before the failure, then surface it.
            io::write_history_csv(
                &dir.join("history.csv"),
                &run.model.grid,
                run.model.outputs(),
                &aborted.state.history,
            )?;
            return Err(aborted.source);
        }
    };

    io::write_history_csv(
        &dir.join("history.csv"),
        &run.model.grid,
        run.model.outputs(),
        &state.history,
    )?;
    io::write_dataset_csv(&dir.join("dataset.csv"), &run.model.grid, &state.dataset)?;
    io::write_tube_csv(&dir.join("tube.csv"), &run.model.grid, &state.tube)?;
    for tube in &state.tubes {
        io::write_tube_csv(
            &dir.join(format!("tube-{:04}.csv", tube.iteration)),
            &run.model.grid,
            tube,
        )?;
    }

    let violations = state.history.iter().filter(|row| !row.safe).count();
    let recommendation = state.recommendation.map(|idx| {
        let point = run.model.grid.point(idx).to_vec();
        let truth = plant.truth(&point);
        serde_json::json!({
            "index": idx,
            "point": point,
            "reward_lower_bound": state.tube.lower[0][idx],
            "true_values": truth,
        })
    });
    let summary = serde_json::json!({
        "iterations": state.iteration,
        "evaluations": state.history.len(),
        "violations": violations,
        "exhausted": state.exhausted,
        "final_safe_set": state.safe_set.len(),
        "recommendation": recommendation,
        "certificate": state.tube.certificate,
        "seed": cfg.seed,
    });
    io::write_json(&dir.join("recommendation.json"), &summary)?;
    print_json(&summary)
}
