//! The outer loop: ACQUIRE, MODEL, OPTIMIZE and CONVERGENCE over a run
//! directory, with every artifact recorded in an append-only manifest.
//!
//! Layout under the run root:
//!
//! ```text
//! manifest.json
//! config.toml
//! datasets/D01.ndjson ...
//! live/D01.ndjson ...          (live source: appended by the play server)
//! models/participant-01.ckpt, models/tuning-01.json ...
//! mechanisms/theta-00.ckpt, mechanisms/theta-01.ckpt ...
//! logs/optimize-01.tsv ...
//! metagame/M01.json, metagame/M01.tsv ...
//! ```

mod evaluate;
mod export;
mod manifest;

pub use evaluate::{
    evaluate, ConditionShare, ContributionCurve, EvaluationReport, GroupOutcome, Population,
};
pub use export::{export_figures, ExportReport, HEATMAP_THRESHOLD};
pub use manifest::{
    dataset_id, mechanism_id, parse_mechanism_id, sha256_hex, AcquireRecord, ArtifactRef,
    IterationRecord, IterationSeeds, MetagameRecord, ModelRecord, OptimizeRecord, RunManifest,
    Stage, StageFailure, MANIFEST_VERSION,
};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::cohort::generate_dataset;
use crate::config::{PipelineConfig, Source};
use crate::dataset::{read_sessions, session_line, Dataset};
use crate::error::{Error, Result};
use crate::game::{LiberalEgalitarian, Mechanism, ProportionalToContribution, SessionRecord, StrictEgalitarian};
use crate::mechanism::GraphMechanism;
use crate::metagame::{build_payoff_matrix, check_convergence, ConvergenceDecision};
use crate::nn::ParamSet;
use crate::participant::{
    fit_participant_model, live_schedule_shape, tune_hyperparameters, ParticipantModel,
};
use crate::rng::{derive_seed, stream};
use crate::selfplay::{run_optimize, CurriedGameConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Where the play server appends live sessions for iteration `s`.
pub fn live_dataset_path(root: &Path, iteration: usize) -> PathBuf {
    root.join("live").join(format!("{}.ndjson", dataset_id(iteration)))
}

/// Result of [`Run::run_loop`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoopOutcome {
    pub iterations: usize,
    pub decision: ConvergenceDecision,
    pub final_mechanism: String,
}

/// An open run directory.
#[derive(Debug)]
pub struct Run {
    root: PathBuf,
    config: PipelineConfig,
    manifest: RunManifest,
}

impl Run {
    /// Creates a run at `root`, writing the config and a random θ0. Fails if
    /// a manifest already exists there.
    pub fn create(root: &Path, config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let manifest_path = root.join(MANIFEST_FILE);
        if manifest_path.exists() {
            return Err(Error::Manifest(format!(
                "{} already holds a run",
                root.display()
            )));
        }
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let config_ref = ArtifactRef::write(root, CONFIG_FILE, config.to_toml_string()?.as_bytes())?;
        let theta0 = config
            .mechanism
            .init(&mut stream(config.seed, &["theta0"], &[]));
        let theta0_ref = ArtifactRef::write(
            root,
            &mechanism_path(0),
            &theta0.to_checkpoint_bytes(),
        )?;
        let manifest = RunManifest {
            version: MANIFEST_VERSION,
            seed: config.seed,
            source: config.source,
            config: config_ref,
            initial_mechanism: theta0_ref,
            iterations: Vec::new(),
            converged_at: None,
        };
        manifest.save(&manifest_path)?;
        Ok(Run {
            root: root.to_path_buf(),
            config,
            manifest,
        })
    }

    /// Opens an existing run, checking every recorded artifact.
    pub fn open(root: &Path) -> Result<Self> {
        let manifest = RunManifest::load(&root.join(MANIFEST_FILE))?;
        manifest.verify(root)?;
        let text = String::from_utf8(manifest.config.read(root)?)
            .map_err(|_| Error::Manifest("config is not utf-8".into()))?;
        let config = PipelineConfig::from_toml_str(&text)?;
        Ok(Run {
            root: root.to_path_buf(),
            config,
            manifest,
        })
    }

    /// Opens the run at `root` if there is one, else creates it. An existing
    /// run must have been created with an identical config.
    pub fn open_or_create(root: &Path, config: PipelineConfig) -> Result<Self> {
        if root.join(MANIFEST_FILE).exists() {
            let run = Run::open(root)?;
            if run.config != config {
                return Err(Error::Manifest(format!(
                    "{} was created with a different configuration",
                    root.display()
                )));
            }
            Ok(run)
        } else {
            Run::create(root, config)
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    fn save(&self) -> Result<()> {
        self.manifest.save(&self.root.join(MANIFEST_FILE))
    }

    /// Iteration and stage that would run next; `None` once converged.
    pub fn next_step(&self) -> Option<(usize, Stage)> {
        if self.manifest.converged_at.is_some() && self.config.metagame.stop_on_convergence {
            return None;
        }
        match self.manifest.last() {
            Some(r) => match r.next_stage() {
                Some(stage) => Some((r.iteration, stage)),
                None => Some((r.iteration + 1, Stage::Acquire)),
            },
            None => Some((1, Stage::Acquire)),
        }
    }

    /// Loads a trained or initial mechanism checkpoint by iteration.
    pub fn mechanism(&self, iteration: usize) -> Result<GraphMechanism> {
        let artifact = if iteration == 0 {
            &self.manifest.initial_mechanism
        } else {
            &self
                .record(iteration)?
                .optimize
                .as_ref()
                .ok_or_else(|| Error::UnknownMechanism(mechanism_id(iteration)))?
                .checkpoint
        };
        let params = ParamSet::from_checkpoint_bytes(&artifact.read(&self.root)?)?;
        GraphMechanism::new(mechanism_id(iteration), params, self.config.mechanism.clone())
    }

    /// Resolves a baseline name or a `theta-XX` id of this run.
    pub fn resolve_mechanism(&self, id: &str) -> Result<Box<dyn Mechanism>> {
        if let Some(b) = baseline(id) {
            return Ok(b);
        }
        match parse_mechanism_id(id) {
            Some(s) => Ok(Box::new(self.mechanism(s).map_err(|_| {
                Error::UnknownMechanism(id.to_string())
            })?)),
            None => Err(Error::UnknownMechanism(id.to_string())),
        }
    }

    /// The participant model fitted at iteration `s`.
    pub fn participant_model(&self, iteration: usize) -> Result<ParticipantModel> {
        let m = self
            .record(iteration)?
            .model
            .as_ref()
            .ok_or_else(|| Error::Manifest(format!("iteration {iteration} has no model")))?;
        ParticipantModel::new(ParamSet::from_checkpoint_bytes(&m.checkpoint.read(&self.root)?)?)
    }

    /// Sessions of D_s as recorded.
    pub fn dataset(&self, iteration: usize) -> Result<Dataset> {
        let a = self
            .record(iteration)?
            .acquire
            .as_ref()
            .ok_or_else(|| Error::Manifest(format!("iteration {iteration} has no dataset")))?;
        a.dataset.read(&self.root)?;
        Ok(Dataset {
            iteration,
            sessions: read_sessions(&self.root.join(&a.dataset.path))?,
        })
    }

    fn record(&self, iteration: usize) -> Result<&IterationRecord> {
        self.manifest
            .iterations
            .iter()
            .find(|r| r.iteration == iteration)
            .ok_or_else(|| Error::Manifest(format!("no iteration {iteration}")))
    }

    fn record_mut(&mut self, iteration: usize) -> &mut IterationRecord {
        self.manifest
            .iterations
            .iter_mut()
            .find(|r| r.iteration == iteration)
            .expect("iteration exists")
    }

    /// Runs the next pending stage only, which must be `expected` when
    /// given. Returns the iteration and stage that ran.
    pub fn run_stage(&mut self, expected: Option<Stage>, final_iteration: bool) -> Result<(usize, Stage)> {
        let (s, stage) = self
            .next_step()
            .ok_or_else(|| Error::Manifest("the run has converged".into()))?;
        if let Some(e) = expected {
            if e != stage {
                return Err(Error::Manifest(format!(
                    "next step is {stage} of iteration {s}, not {e}"
                )));
            }
        }
        if stage == Stage::Acquire && self.manifest.last().map_or(true, |r| r.iteration < s) {
            self.begin_iteration(s);
        }
        let result = match stage {
            Stage::Acquire => self.acquire(s),
            Stage::Model => self.model(s),
            Stage::Optimize => self.optimize(s, final_iteration),
            Stage::Metagame => self.metagame(s),
        };
        if let Err(e) = result {
            self.record_mut(s).failures.push(StageFailure {
                stage,
                message: e.to_string(),
            });
            self.save()?;
            return Err(e);
        }
        self.save()?;
        Ok((s, stage))
    }

    /// Runs the remaining stages of the current iteration, or a whole new
    /// one. Returns the convergence decision.
    pub fn run_iteration(&mut self, final_iteration: bool) -> Result<(usize, ConvergenceDecision)> {
        loop {
            let (s, stage) = self.run_stage(None, final_iteration)?;
            if stage == Stage::Metagame {
                let decision = self.record(s)?.metagame.as_ref().expect("just ran").decision;
                return Ok((s, decision));
            }
        }
    }

    /// Iterates until convergence or until `max_iterations` iterations exist.
    /// With `final_on_last` the iteration at the cap uses the final update
    /// budget.
    pub fn run_loop(&mut self, max_iterations: usize, final_on_last: bool) -> Result<LoopOutcome> {
        let mut decision = self
            .manifest
            .completed()
            .last()
            .and_then(|r| r.metagame.as_ref().map(|m| m.decision))
            .unwrap_or(ConvergenceDecision::Continue { min_advantage: None });
        while let Some((s, _)) = self.next_step() {
            if s > max_iterations {
                break;
            }
            let (_, d) = self.run_iteration(final_on_last && s == max_iterations)?;
            decision = d;
        }
        Ok(LoopOutcome {
            iterations: self.manifest.completed().count(),
            decision,
            final_mechanism: self.manifest.latest_mechanism_id(),
        })
    }

    fn begin_iteration(&mut self, s: usize) {
        let seed = self.manifest.seed;
        let sub = |label: &str| derive_seed(seed, &["iteration", label], &[s as u64]);
        self.manifest.iterations.push(IterationRecord {
            iteration: s,
            mechanism_in: mechanism_id(s - 1),
            seeds: IterationSeeds {
                acquire: sub("acquire"),
                model: sub("model"),
                optimize: sub("optimize"),
                metagame: sub("metagame"),
            },
            acquire: None,
            model: None,
            optimize: None,
            metagame: None,
            failures: Vec::new(),
        });
    }

    fn acquire(&mut self, s: usize) -> Result<()> {
        let mech = self.mechanism(s - 1)?;
        let seed = self.record(s)?.seeds.acquire;
        let sessions = match self.config.source {
            Source::Sim => generate_dataset(&self.config.cohort, &mech, s, seed)?,
            Source::Live => {
                let path = live_dataset_path(&self.root, s);
                if !path.exists() {
                    return Err(Error::Empty(format!(
                        "no live sessions at {}",
                        path.display()
                    )));
                }
                read_sessions(&path)?
            }
        };
        if sessions.is_empty() {
            return Err(Error::Empty(format!("dataset {}", dataset_id(s))));
        }
        let dataset = Dataset {
            iteration: s,
            sessions,
        };
        dataset.validate(&mechanism_id(s - 1))?;
        let mut text = String::new();
        for r in &dataset.sessions {
            text.push_str(&session_line(r)?);
            text.push('\n');
        }
        let artifact = ArtifactRef::write(
            &self.root,
            &format!("datasets/{}.ndjson", dataset_id(s)),
            text.as_bytes(),
        )?;
        tracing::info!(iteration = s, groups = dataset.sessions.len(), "acquire");
        self.record_mut(s).acquire = Some(AcquireRecord {
            dataset: artifact,
            groups: dataset.sessions.len(),
        });
        Ok(())
    }

    fn model(&mut self, s: usize) -> Result<()> {
        let datasets: Vec<Dataset> = (1..=s).map(|k| self.dataset(k)).collect::<Result<_>>()?;
        let include_bots = self.config.model.include_bot_seats;
        let sessions: Vec<&SessionRecord> = datasets
            .iter()
            .flat_map(|d| d.training_sessions(include_bots))
            .collect();
        if sessions.is_empty() {
            return Err(Error::Empty("no sessions to model".into()));
        }
        let mut grid = self.config.model.grid.clone();
        if self.config.source == Source::Live && self.config.model.live_schedule {
            grid.shapes = vec![live_schedule_shape(s)];
        }
        let seed = self.record(s)?.seeds.model;
        let report = tune_hyperparameters(&sessions, &grid, &self.config.model.training, seed)?;
        let model = fit_participant_model(&sessions, &report.selected)?;
        let checkpoint = ArtifactRef::write(
            &self.root,
            &format!("models/participant-{s:02}.ckpt"),
            &model.params().to_checkpoint_bytes(),
        )?;
        let mut tuning = serde_json::to_string_pretty(&report)?;
        tuning.push('\n');
        let tuning = ArtifactRef::write(&self.root, &format!("models/tuning-{s:02}.json"), tuning.as_bytes())?;
        tracing::info!(iteration = s, groups = sessions.len(), vote_l2 = report.selected.vote_l2, "model");
        self.record_mut(s).model = Some(ModelRecord {
            checkpoint,
            tuning,
            hyperparameters: report.selected,
            datasets: (1..=s).map(dataset_id).collect(),
            training_groups: sessions.len(),
        });
        Ok(())
    }

    fn optimize(&mut self, s: usize, final_iteration: bool) -> Result<()> {
        let init = self.mechanism(s - 1)?;
        let participants = self.participant_model(s)?;
        let game = CurriedGameConfig {
            batch_size: self.config.optimize.batch_size,
            seed: self.record(s)?.seeds.optimize,
            ..CurriedGameConfig::default()
        };
        let schedule = self.config.optimize.schedule;
        let updates = schedule.updates(final_iteration);
        let root = self.root.clone();
        let mut snapshots = Vec::new();
        let outcome = run_optimize(
            init.params(),
            &self.config.mechanism,
            &participants,
            &game,
            &schedule,
            updates,
            |u, params| {
                if u < updates {
                    snapshots.push(ArtifactRef::write(
                        &root,
                        &format!("mechanisms/snapshots/theta-{s:02}-u{u:05}.ckpt"),
                        &params.to_checkpoint_bytes(),
                    )?);
                }
                Ok(())
            },
        )?;
        let mut log = String::from("update\tobjective\tgrad_norm\n");
        for l in &outcome.log {
            let _ = writeln!(log, "{}\t{:.9}\t{:.9}", l.update, l.objective, l.grad_norm);
        }
        let log = ArtifactRef::write(&self.root, &format!("logs/optimize-{s:02}.tsv"), log.as_bytes())?;
        let checkpoint = ArtifactRef::write(&self.root, &mechanism_path(s), &outcome.params.to_checkpoint_bytes())?;
        tracing::info!(
            iteration = s,
            updates = outcome.log.len(),
            objective = outcome.log.last().map(|l| l.objective),
            "optimize"
        );
        self.record_mut(s).optimize = Some(OptimizeRecord {
            checkpoint,
            log,
            updates: outcome.log.len(),
            final_iteration,
            snapshots,
            aborted: outcome.aborted,
        });
        Ok(())
    }

    fn metagame(&mut self, s: usize) -> Result<()> {
        let checkpoints: Vec<GraphMechanism> = (0..=s).map(|k| self.mechanism(k)).collect::<Result<_>>()?;
        let participants = self.participant_model(s)?;
        let seed = self.record(s)?.seeds.metagame;
        let matrix = build_payoff_matrix(&checkpoints, &participants, self.config.metagame.repetitions, seed)?;
        let decision = check_convergence(&matrix, self.config.metagame.epsilon);
        let mut json = serde_json::to_string_pretty(&matrix)?;
        json.push('\n');
        let matrix_ref = ArtifactRef::write(&self.root, &format!("metagame/M{s:02}.json"), json.as_bytes())?;
        let table = ArtifactRef::write(&self.root, &format!("metagame/M{s:02}.tsv"), matrix.to_tsv().as_bytes())?;
        tracing::info!(iteration = s, ?decision, "metagame");
        self.record_mut(s).metagame = Some(MetagameRecord {
            matrix: matrix_ref,
            table,
            decision,
        });
        if decision.converged() && self.manifest.converged_at.is_none() {
            self.manifest.converged_at = Some(s);
        }
        Ok(())
    }
}

pub fn mechanism_path(iteration: usize) -> String {
    format!("mechanisms/{}.ckpt", mechanism_id(iteration))
}

/// Fixed mechanisms available by name.
pub fn baseline(id: &str) -> Option<Box<dyn Mechanism>> {
    match id {
        StrictEgalitarian::ID => Some(Box::new(StrictEgalitarian)),
        LiberalEgalitarian::ID => Some(Box::new(LiberalEgalitarian)),
        ProportionalToContribution::ID => Some(Box::new(ProportionalToContribution)),
        _ => None,
    }
}
