use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hcmd_core::config::{PipelineConfig, Source};
use hcmd_core::pipeline::{
    evaluate, export_figures, live_dataset_path, EvaluationReport, mechanism_id, parse_mechanism_id, Population, Run, Stage,
};
use hcmd_core::rng::derive_seed;
use hcmd_play::{AppState, MechanismRegistry, ServerConfig};

#[derive(Parser)]
#[command(name = "hcmd", version, about = "Train redistribution mechanisms by human-in-the-loop self-play")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Artifact root holding the manifest, datasets and checkpoints.
    #[arg(long, global = true, env = "HCMD_DATA_DIR", default_value = "hcmd-data")]
    data_dir: PathBuf,
    /// Configuration file used when the run is created.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides where ACQUIRE reads sessions from.
    #[arg(long, global = true, value_enum)]
    source: Option<SourceArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Sim,
    Live,
}

#[derive(Subcommand)]
enum Command {
    /// Collect the next iteration's dataset.
    Acquire,
    /// Tune and fit the participant model on every dataset so far.
    Model,
    /// Train the next mechanism by self-play.
    Optimize {
        /// Use the long update schedule.
        #[arg(long = "final")]
        final_iteration: bool,
    },
    /// Build the meta-game and check convergence.
    Metagame,
    /// Run whole iterations until convergence or the cap.
    RunLoop {
        #[arg(long)]
        iterations: Option<usize>,
        /// Use the long update schedule in the last allowed iteration.
        #[arg(long = "final")]
        final_iteration: bool,
    },
    /// Simulate a mechanism head to head with a baseline.
    Evaluate {
        /// Defaults to the latest trained mechanism.
        #[arg(long)]
        mechanism: Option<String>,
        #[arg(long, default_value = "liberal-egalitarian")]
        baseline: String,
        #[arg(long)]
        groups: Option<usize>,
        /// Evaluate against the latest fitted participant model instead of
        /// the planted cohort.
        #[arg(long)]
        model_population: bool,
        /// Directory for the report; defaults to `<data-dir>/evaluations`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write heatmaps, meta-game and cross-validation tables.
    ExportFigures {
        /// Defaults to `<data-dir>/figures`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve live sessions for the next ACQUIRE.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Seconds before a missing contribution or vote is played by a bot.
        #[arg(long, default_value_t = 30)]
        round_timeout: u64,
        /// Seconds before empty lobby seats are filled by bots.
        #[arg(long, default_value_t = 60)]
        lobby_timeout: u64,
    },
}

fn load_config(global: &Global) -> Result<Option<PipelineConfig>> {
    if global.config.is_none() && global.seed.is_none() && global.source.is_none() {
        return Ok(None);
    }
    let mut config = match &global.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    if let Some(source) = global.source {
        config.source = match source {
            SourceArg::Sim => Source::Sim,
            SourceArg::Live => Source::Live,
        };
    }
    config.validate()?;
    Ok(Some(config))
}

/// Opens the run under the data dir, creating it on first use. Settings
/// given on the command line must agree with an existing run.
fn open_run(global: &Global) -> Result<Run> {
    let root = &global.data_dir;
    let exists = root.join("manifest.json").exists();
    let run = match (load_config(global)?, exists) {
        (Some(config), _) => Run::open_or_create(root, config)?,
        (None, true) => Run::open(root)?,
        (None, false) => Run::create(root, PipelineConfig::default())?,
    };
    Ok(run)
}

fn stage(run: &mut Run, stage: Stage, final_iteration: bool) -> Result<()> {
    let (s, done) = run
        .run_stage(Some(stage), final_iteration)
        .with_context(|| format!("{stage} failed"))?;
    println!("iteration {s}: {done} complete");
    Ok(())
}

fn write_json(dir: &Path, name: &str, value: &EvaluationReport) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_vec_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn run_evaluate(
    run: &Run,
    mechanism: Option<String>,
    baseline: &str,
    groups: Option<usize>,
    model_population: bool,
    out: Option<PathBuf>,
) -> Result<()> {
    let latest = run.manifest().latest_mechanism_id();
    let id = mechanism.unwrap_or_else(|| latest.clone());
    let s = parse_mechanism_id(&latest).unwrap_or(0);
    let mech = run.resolve_mechanism(&id)?;
    let base = run.resolve_mechanism(baseline)?;
    let groups = groups.unwrap_or(run.config().evaluate.groups);
    let seed = derive_seed(run.config().seed, &["cli-evaluate", &id, baseline], &[groups as u64]);
    let report = if model_population {
        let Some(last) = run.manifest().iterations.iter().rev().find(|r| r.model.is_some()) else {
            bail!("no fitted participant model yet");
        };
        let model = run.participant_model(last.iteration)?;
        evaluate(mech.as_ref(), base.as_ref(), Population::Model(&model), groups, seed)?
    } else {
        let cohort = run.config().cohort.archetypes_at(s.max(1));
        evaluate(mech.as_ref(), base.as_ref(), Population::Cohort(&cohort), groups, seed)?
    };
    let dir = out.unwrap_or_else(|| run.root().join("evaluations"));
    let path = write_json(&dir, &format!("{id}-vs-{baseline}.json"), &report)?;
    println!(
        "{id} vs {baseline}: {}/{} votes ({:.3})",
        report.votes_for_mechanism, report.votes_total, report.vote_share
    );
    for c in &report.per_condition {
        println!("  tail {:>2}: {:.3} over {} groups", c.tail_endowment, c.share, c.groups);
    }
    println!("report: {}", path.display());
    Ok(())
}

fn registry(run: &Run) -> Result<MechanismRegistry> {
    let mut r = MechanismRegistry::with_baselines();
    r.insert(Arc::new(run.mechanism(0)?));
    for rec in &run.manifest().iterations {
        if rec.optimize.is_some() {
            r.insert(Arc::new(run.mechanism(rec.iteration)?));
        }
    }
    Ok(r)
}

fn serve(run: &Run, addr: SocketAddr, round_timeout: u64, lobby_timeout: u64) -> Result<()> {
    let s = run.next_step().map_or(run.manifest().iterations.len() + 1, |(s, _)| s);
    let mut config = ServerConfig::new(live_dataset_path(run.root(), s));
    config.round_timeout = Duration::from_secs(round_timeout);
    config.lobby_timeout = Duration::from_secs(lobby_timeout);
    config.seed = derive_seed(run.config().seed, &["serve"], &[s as u64]);
    println!(
        "collecting sessions for iteration {s} (mechanism {}) into {}",
        mechanism_id(s - 1),
        config.dataset_path.display()
    );
    let state = AppState::new(config, registry(run)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        println!("listening on http://{}", listener.local_addr()?);
        hcmd_play::serve(listener, state).await?;
        Ok(())
    })
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let mut run = open_run(&cli.global)?;
    match cli.command {
        Command::Acquire => stage(&mut run, Stage::Acquire, false)?,
        Command::Model => stage(&mut run, Stage::Model, false)?,
        Command::Optimize { final_iteration } => stage(&mut run, Stage::Optimize, final_iteration)?,
        Command::Metagame => {
            stage(&mut run, Stage::Metagame, false)?;
            if let Some(m) = run.manifest().last().and_then(|r| r.metagame.as_ref()) {
                println!("decision: {:?}", m.decision);
            }
        }
        Command::RunLoop {
            iterations,
            final_iteration,
        } => {
            let cap = iterations.unwrap_or(run.config().max_iterations);
            let out = run.run_loop(cap, final_iteration)?;
            println!(
                "{} iterations, final mechanism {}, decision {:?}",
                out.iterations, out.final_mechanism, out.decision
            );
        }
        Command::Evaluate {
            mechanism,
            baseline,
            groups,
            model_population,
            out,
        } => run_evaluate(&run, mechanism, &baseline, groups, model_population, out)?,
        Command::ExportFigures { out } => {
            let out = out.unwrap_or_else(|| run.root().join("figures"));
            let report = export_figures(&run, &out)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for m in &report.missing {
                eprintln!("missing: {m}");
            }
            println!("{} files written to {}", report.written.len(), out.display());
        }
        Command::Serve {
            addr,
            round_timeout,
            lobby_timeout,
        } => serve(&run, addr, round_timeout, lobby_timeout)?,
    }
    Ok(())
}
