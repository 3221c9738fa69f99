//! The `scanpath` command line.
//!
//! [`run`] parses arguments, executes one subcommand and returns the process
//! exit code: 0 on success, 2 for data or validation errors and 64 for usage
//! errors. Every artifact carries `{tool_version, seed, command}` metadata;
//! CSV files carry it on a leading `#` comment line.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::classify::{classify, confusion, format_accuracy, Candidate, ClassificationReport, Rule};
use crate::fixation::{detect_fixations, fixation_stats, Fixation, IdtConfig};
use crate::gaze_io::{
    load_bundled_models, parse_fixation_csv, parse_gaze_csv, read_model, validate_model, write_fixation_csv,
    write_mixture, write_model, Condition, DatasetManifest, FixationTrial, GazeIoError, MixtureRecord, ModelRecord,
    BUNDLED_KEYS,
};
use crate::hmm::{fit_map, GaussianHmm, TrainConfig};
use crate::svg::{render_scanpath_svg, Plot};
use crate::vhem::{hard_assignments, reduce, VhemConfig};
use crate::{Point, TOOL_VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

/// Model-sampled fixation rows have no raw samples behind them.
const SIMULATED_N_SAMPLES: usize = 1;

#[derive(Debug, Parser)]
#[command(name = "scanpath", version, about = "Fixation detection, scanpath HMMs, model reduction and classification")]
struct Cli {
    /// JSON run configuration (`seed`, `idt`, `train`, `vhem` sections). Flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Detect fixations in a gaze CSV.
    Fixations(FixationsArgs),
    /// Fit one HMM per group of trials in a fixation CSV.
    Train(TrainArgs),
    /// Cluster models into reduced representatives.
    Reduce(ReduceArgs),
    /// Assign every trial of a fixation CSV to a candidate model.
    Classify(ClassifyArgs),
    /// Sample fixation sequences from models.
    Simulate(SimulateArgs),
    /// Check model files.
    Validate(ValidateArgs),
    /// Render fixations or a model as SVG.
    Plot(PlotArgs),
    /// Write the bundled representative models.
    Bundled(BundledArgs),
}

#[derive(Debug, Args)]
struct FixationsArgs {
    /// Gaze CSV.
    input: PathBuf,
    #[arg(long, short)]
    out_dir: PathBuf,
    #[arg(long)]
    dispersion_px: Option<f64>,
    #[arg(long)]
    min_duration_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
enum GroupKey {
    Participant,
    Condition,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Fixation CSV.
    input: PathBuf,
    #[arg(long, short)]
    out_dir: PathBuf,
    #[arg(long)]
    states: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    prior_std: Option<f64>,
    #[arg(long)]
    prior_strength: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Keys defining one training group.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "participant,condition")]
    group_by: Vec<GroupKey>,
}

#[derive(Debug, Args)]
struct ReduceArgs {
    /// Model JSON files or directories of them.
    #[arg(required = true)]
    models: Vec<PathBuf>,
    #[arg(long, short)]
    out_dir: PathBuf,
    #[arg(long)]
    k_reduced: Option<usize>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    nv: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    /// Fixation CSV.
    input: PathBuf,
    /// Candidate model JSON files or directories of them.
    #[arg(long, required = true, num_args = 1..)]
    models: Vec<PathBuf>,
    #[arg(long, default_value = "loglik")]
    rule: Rule,
    #[arg(long, short)]
    out_dir: PathBuf,
    /// Length of each candidate's reference path.
    #[arg(long, default_value_t = crate::classify::REFERENCE_LEN)]
    reference_len: usize,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Model JSON files or directories of them.
    #[arg(required = true)]
    models: Vec<PathBuf>,
    /// Trials per participant and model.
    #[arg(long, default_value_t = 40)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    participants: usize,
    /// Fixations per trial.
    #[arg(long, default_value_t = 19)]
    len: usize,
    /// Spacing of simulated fixations.
    #[arg(long, default_value_t = 250.0)]
    dwell_ms: f64,
    /// Label for unlabeled models.
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(required = true)]
    models: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Fixation CSV to draw.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    fixations: Option<PathBuf>,
    /// Model JSON to draw.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Trial to draw; defaults to the first one.
    #[arg(long, requires = "fixations")]
    trial: Option<String>,
    #[arg(long, requires = "trial")]
    participant: Option<String>,
    /// Dataset manifest providing the screen size.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct BundledArgs {
    #[arg(long, short)]
    out_dir: PathBuf,
}

/// Configuration file contents. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub idt: IdtConfig,
    pub train: TrainConfig,
    pub vhem: VhemConfig,
}

/// Record of one invocation, written as `run.json` next to directory outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    /// Resolved configuration after applying flags.
    pub config: Value,
}

enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.into())
    }
}

type CmdResult = Result<(), Failure>;

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = load_config(cli.config.as_deref()).map_err(Failure::Data).and_then(|cfg| match cli.command {
        Command::Fixations(a) => cmd_fixations(a, &cfg),
        Command::Train(a) => cmd_train(a, &cfg),
        Command::Reduce(a) => cmd_reduce(a, &cfg),
        Command::Classify(a) => cmd_classify(a, &cfg),
        Command::Simulate(a) => cmd_simulate(a, &cfg),
        Command::Validate(a) => cmd_validate(a, &cfg),
        Command::Plot(a) => cmd_plot(a, &cfg),
        Command::Bundled(a) => cmd_bundled(a, &cfg),
    });
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            EXIT_DATA
        }
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening config {}", p.display()))?;
            serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn meta(command: &str, seed: u64) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("tool_version".into(), json!(TOOL_VERSION));
    m.insert("seed".into(), json!(seed));
    m.insert("command".into(), json!(command));
    m
}

fn meta_line(command: &str, seed: u64) -> String {
    Value::Object(meta(command, seed)).to_string()
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_model_file(path: &Path, m: &ModelRecord) -> anyhow::Result<()> {
    let mut w = create(path)?;
    write_model(&mut w, m)?;
    w.flush()?;
    Ok(())
}

fn write_manifest(command: &str, seed: u64, inputs: &[PathBuf], out_dir: &Path, config: Value) -> anyhow::Result<()> {
    let manifest = RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        command: command.to_string(),
        seed,
        inputs: inputs.to_vec(),
        out_dir: out_dir.to_path_buf(),
        config,
    };
    write_json(&out_dir.join("run.json"), &manifest)
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn read_fixations(path: &Path) -> anyhow::Result<Vec<FixationTrial>> {
    parse_fixation_csv(open(path)?).with_context(|| format!("reading {}", path.display()))
}

/// Expands directories into their `*.json` files other than `run.json`,
/// sorted by name.
fn expand_model_paths(paths: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .filter(|f| f.file_name().is_some_and(|n| n != "run.json"))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        bail!("no model files found");
    }
    Ok(out)
}

fn load_models(paths: &[PathBuf]) -> anyhow::Result<Vec<(PathBuf, ModelRecord, GaussianHmm)>> {
    expand_model_paths(paths)?
        .into_iter()
        .map(|p| {
            let rec = read_model(open(&p)?).with_context(|| format!("reading {}", p.display()))?;
            let hmm = GaussianHmm::from_record(&rec).with_context(|| format!("loading {}", p.display()))?;
            Ok((p, rec, hmm))
        })
        .collect()
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn cmd_fixations(a: FixationsArgs, cfg: &RunConfig) -> CmdResult {
    let idt = IdtConfig {
        dispersion_px: a.dispersion_px.unwrap_or(cfg.idt.dispersion_px),
        min_duration_ms: a.min_duration_ms.unwrap_or(cfg.idt.min_duration_ms),
    };
    idt.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let seed = cfg.seed.unwrap_or(0);
    let trials = parse_gaze_csv(open(&a.input)?).with_context(|| format!("reading {}", a.input.display()))?;
    let detected: Vec<FixationTrial> = trials
        .par_iter()
        .map(|t| {
            let fixations = detect_fixations(&t.samples, &idt)
                .with_context(|| format!("trial {}/{}", t.participant_id, t.trial_id))?;
            Ok(FixationTrial {
                participant_id: t.participant_id.clone(),
                trial_id: t.trial_id.clone(),
                condition: t.condition,
                fixations,
            })
        })
        .collect::<anyhow::Result<_>>()?;

    let mut w = create(&a.out_dir.join("fixations.csv"))?;
    write_fixation_csv(&mut w, &detected, Some(&meta_line("fixations", seed)))?;
    w.flush()?;

    let per_trial: Vec<&[Fixation]> = detected.iter().map(|t| t.fixations.as_slice()).collect();
    let stats = match fixation_stats(&per_trial) {
        Ok(s) => Some(s),
        Err(e) => {
            eprintln!("warning: {e}");
            None
        }
    };
    let total: usize = per_trial.iter().map(|f| f.len()).sum();
    write_json(
        &a.out_dir.join("fixation_stats.json"),
        &json!({ "meta": meta("fixations", seed), "config": idt, "stats": stats }),
    )?;
    write_manifest("fixations", seed, &[a.input.clone()], &a.out_dir, json!({ "idt": idt }))?;
    eprintln!("{} trials, {total} fixations", detected.len());
    Ok(())
}

fn cmd_train(a: TrainArgs, cfg: &RunConfig) -> CmdResult {
    let base = cfg.train;
    let config = TrainConfig {
        n_states: a.states.unwrap_or(base.n_states),
        dirichlet_alpha: a.alpha.unwrap_or(base.dirichlet_alpha),
        prior_cov_std: a.prior_std.unwrap_or(base.prior_cov_std),
        prior_cov_strength: a.prior_strength.unwrap_or(base.prior_cov_strength),
        max_iters: a.max_iters.unwrap_or(base.max_iters),
        tol: a.tol.unwrap_or(base.tol),
        n_restarts: a.restarts.unwrap_or(base.n_restarts),
        seed: a.seed.or(cfg.seed).unwrap_or(base.seed),
    };
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let keys: BTreeSet<GroupKey> = a.group_by.iter().copied().collect();
    let by_participant = keys.contains(&GroupKey::Participant);
    let by_condition = keys.contains(&GroupKey::Condition);

    let trials = read_fixations(&a.input)?;
    let mut groups: BTreeMap<(Option<String>, Option<Condition>), Vec<Vec<Point>>> = BTreeMap::new();
    for t in &trials {
        if t.fixations.is_empty() {
            continue;
        }
        let key = (by_participant.then(|| t.participant_id.clone()), by_condition.then_some(t.condition));
        groups.entry(key).or_default().push(t.fixations.iter().map(Fixation::centroid).collect());
    }
    if groups.is_empty() {
        return Err(anyhow!("no trials with fixations in {}", a.input.display()).into());
    }

    let mut names = BTreeSet::new();
    let mut jobs = Vec::new();
    for ((participant, condition), seqs) in groups {
        let mut parts = Vec::new();
        parts.extend(participant.as_deref().map(sanitize));
        parts.extend(condition.map(|c| c.as_str().to_string()));
        let name = if parts.is_empty() { "all".to_string() } else { parts.join("__") };
        if !names.insert(name.clone()) {
            return Err(anyhow!("group name collision: {name}").into());
        }
        jobs.push((name, participant, condition, seqs));
    }

    let fitted: Vec<_> = jobs
        .par_iter()
        .map(|(name, participant, condition, seqs)| {
            let n_obs: usize = seqs.iter().map(Vec::len).sum();
            if n_obs < config.n_states {
                return Ok(None);
            }
            let fit = fit_map(seqs, &config).with_context(|| format!("training group {name}"))?;
            let label = condition.filter(|c| *c != Condition::Unknown).map(|c| c.as_str());
            let mut rec = fit.model.to_record(label);
            let mut m = meta("train", config.seed);
            if let Some(p) = participant {
                m.insert("participant_id".into(), json!(p));
            }
            if let Some(c) = condition {
                m.insert("condition".into(), json!(c.as_str()));
            }
            m.insert("n_sequences".into(), json!(seqs.len()));
            m.insert("n_observations".into(), json!(n_obs));
            m.insert("objective".into(), json!(fit.objective));
            m.insert("restart".into(), json!(fit.restart));
            m.insert("iterations".into(), json!(fit.iterations));
            m.insert("converged".into(), json!(fit.converged));
            m.insert("trace".into(), json!(fit.trace));
            rec.meta = Some(m);
            Ok(Some(rec))
        })
        .collect::<anyhow::Result<_>>()?;

    let models_dir = a.out_dir.join("models");
    let mut written = 0;
    for ((name, ..), rec) in jobs.iter().zip(fitted) {
        match rec {
            Some(rec) => {
                write_model_file(&models_dir.join(format!("{name}.json")), &rec)?;
                written += 1;
            }
            None => eprintln!("warning: skipping group {name}: fewer observations than states"),
        }
    }
    if written == 0 {
        return Err(anyhow!("every group was skipped").into());
    }
    write_manifest("train", config.seed, &[a.input.clone()], &a.out_dir, json!({ "train": config }))?;
    eprintln!("wrote {written} models to {}", models_dir.display());
    Ok(())
}

fn cmd_reduce(a: ReduceArgs, cfg: &RunConfig) -> CmdResult {
    let base = cfg.vhem;
    let config = VhemConfig {
        n_reduced: a.k_reduced.unwrap_or(base.n_reduced),
        virtual_len: a.tau.unwrap_or(base.virtual_len),
        virtual_count: a.nv.unwrap_or(base.virtual_count),
        max_iters: a.max_iters.unwrap_or(base.max_iters),
        tol: a.tol.unwrap_or(base.tol),
        n_restarts: a.restarts.unwrap_or(base.n_restarts),
        seed: a.seed.or(cfg.seed).unwrap_or(base.seed),
    };
    let loaded = load_models(&a.models)?;
    let hmms: Vec<GaussianHmm> = loaded.iter().map(|(_, _, h)| h.clone()).collect();
    let mixture = reduce(&hmms, None, &config).map_err(|e| match e {
        crate::vhem::VhemError::Config(m) => Failure::Usage(m),
        other => Failure::Data(other.into()),
    })?;
    let hard = hard_assignments(&mixture);

    let mut records = Vec::with_capacity(mixture.models.len());
    for (j, model) in mixture.models.iter().enumerate() {
        let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
        for ((_, rec, _), &c) in loaded.iter().zip(&hard) {
            if c == j {
                if let Some(l) = rec.label.as_deref() {
                    *votes.entry(l).or_default() += 1;
                }
            }
        }
        // most votes, smallest label on ties
        let label = votes.iter().fold(None, |best: Option<(&str, usize)>, (&l, &n)| match best {
            Some((_, b)) if b >= n => best,
            _ => Some((l, n)),
        });
        let mut rec = model.to_record(label.map(|(l, _)| l));
        let mut m = meta("reduce", config.seed);
        m.insert("cluster".into(), json!(j));
        m.insert("weight".into(), json!(mixture.weights[j]));
        m.insert("n_members".into(), json!(hard.iter().filter(|&&c| c == j).count()));
        rec.meta = Some(m);
        records.push(rec);
    }
    for (j, rec) in records.iter().enumerate() {
        write_model_file(&a.out_dir.join(format!("cluster_{j}.json")), rec)?;
    }

    let mut mix_meta = meta("reduce", config.seed);
    mix_meta.insert("restart".into(), json!(mixture.restart));
    mix_meta.insert("converged".into(), json!(mixture.converged));
    mix_meta.insert("trace".into(), json!(mixture.trace));
    mix_meta.insert(
        "base_models".into(),
        json!(loaded.iter().map(|(p, ..)| file_stem(p)).collect::<Vec<_>>()),
    );
    let mix = MixtureRecord {
        models: records,
        weights: mixture.weights.clone(),
        assignments: mixture.assignments.clone(),
        elbo: mixture.elbo,
        meta: Some(mix_meta),
    };
    let mut w = create(&a.out_dir.join("mixture.json"))?;
    write_mixture(&mut w, &mix)?;
    w.flush()?;

    let mut w = create(&a.out_dir.join("assignments.csv"))?;
    writeln!(w, "# {}", meta_line("reduce", config.seed))?;
    let mut csv_w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut w);
    let mut header = vec!["model".to_string(), "label".to_string(), "cluster".to_string()];
    header.extend((0..config.n_reduced).map(|j| format!("resp_{j}")));
    csv_w.write_record(&header)?;
    for (((p, rec, _), &c), row) in loaded.iter().zip(&hard).zip(&mixture.assignments) {
        let mut fields = vec![file_stem(p), rec.label.clone().unwrap_or_default(), c.to_string()];
        fields.extend(row.iter().map(|r| format!("{:.6}", r)));
        csv_w.write_record(&fields)?;
    }
    csv_w.flush()?;
    drop(csv_w);
    w.flush()?;

    write_manifest("reduce", config.seed, &a.models, &a.out_dir, json!({ "vhem": config }))?;
    eprintln!("reduced {} models to {} (elbo {:.6})", hmms.len(), config.n_reduced, mixture.elbo);
    Ok(())
}

#[derive(Serialize)]
struct TrialResult<'a> {
    participant_id: &'a str,
    trial_id: &'a str,
    #[serde(flatten)]
    report: ClassificationReport,
}

fn cmd_classify(a: ClassifyArgs, cfg: &RunConfig) -> CmdResult {
    if a.reference_len == 0 {
        return Err(Failure::Usage("--reference-len must be positive".into()));
    }
    let seed = cfg.seed.unwrap_or(0);
    let mut candidates = BTreeMap::new();
    for (p, rec, hmm) in load_models(&a.models)? {
        let label = rec.label.clone().unwrap_or_else(|| file_stem(&p));
        let cand = Candidate::with_reference_len(hmm, a.reference_len)
            .with_context(|| format!("reference path for {}", p.display()))?;
        if candidates.insert(label.clone(), cand).is_some() {
            return Err(anyhow!("two candidate models are labeled {label}").into());
        }
    }
    let trials: Vec<FixationTrial> = read_fixations(&a.input)?.into_iter().filter(|t| !t.fixations.is_empty()).collect();
    let results: Vec<TrialResult> = trials
        .par_iter()
        .map(|t| {
            let seq: Vec<Point> = t.fixations.iter().map(Fixation::centroid).collect();
            let mut report = classify(a.rule, &seq, &candidates)
                .with_context(|| format!("trial {}/{}", t.participant_id, t.trial_id))?;
            report.truth = (t.condition != Condition::Unknown).then(|| t.condition.as_str().to_string());
            Ok(TrialResult { participant_id: &t.participant_id, trial_id: &t.trial_id, report })
        })
        .collect::<anyhow::Result<_>>()?;

    let known: Vec<&ClassificationReport> = results.iter().map(|r| &r.report).filter(|r| r.truth.is_some()).collect();
    let mut summary = Value::Null;
    if !known.is_empty() {
        let preds: Vec<&str> = known.iter().map(|r| r.chosen.as_str()).collect();
        let truths: Vec<&str> = known.iter().filter_map(|r| r.truth.as_deref()).collect();
        let cm = confusion(&preds, &truths)?;
        let mut w = create(&a.out_dir.join("confusion.csv"))?;
        cm.write_csv(&mut w, Some(&meta_line("classify", seed)))?;
        w.flush()?;
        let correct = preds.iter().zip(&truths).filter(|(p, t)| p == t).count() as u64;
        let rendered = format_accuracy(correct, truths.len() as u64);
        eprintln!("accuracy {rendered}");
        summary = json!({ "accuracy": cm.overall_accuracy, "rendered": rendered, "confusion": cm });
    }
    write_json(
        &a.out_dir.join("report.json"),
        &json!({
            "meta": meta("classify", seed),
            "rule": a.rule,
            "candidates": candidates.keys().collect::<Vec<_>>(),
            "results": results,
            "summary": summary,
        }),
    )?;
    let mut inputs = vec![a.input.clone()];
    inputs.extend(a.models.iter().cloned());
    write_manifest(
        "classify",
        seed,
        &inputs,
        &a.out_dir,
        json!({ "rule": a.rule, "reference_len": a.reference_len }),
    )?;
    Ok(())
}

fn cmd_simulate(a: SimulateArgs, cfg: &RunConfig) -> CmdResult {
    if a.trials == 0 || a.len == 0 || a.participants == 0 {
        return Err(Failure::Usage("--trials, --len and --participants must be positive".into()));
    }
    if !(a.dwell_ms > 0.0 && a.dwell_ms.is_finite()) {
        return Err(Failure::Usage("--dwell-ms must be positive".into()));
    }
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let loaded = load_models(&a.models)?;
    let mut labels = Vec::with_capacity(loaded.len());
    for (p, rec, _) in &loaded {
        match rec.label.clone().or_else(|| a.label.clone()) {
            Some(l) => labels.push(l),
            None => return Err(Failure::Usage(format!("{} has no label; pass --label", p.display()))),
        }
    }
    let unique: BTreeSet<&String> = labels.iter().collect();
    if unique.len() != labels.len() {
        return Err(anyhow!("simulated models must carry distinct labels").into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = (a.participants.max(2) - 1).to_string().len();
    let mut out = Vec::new();
    for p in 0..a.participants {
        let participant_id = format!("p{p:0width$}");
        for ((_, _, hmm), label) in loaded.iter().zip(&labels) {
            for i in 0..a.trials {
                let s = hmm.sample_with(a.len, &mut rng);
                let fixations = s
                    .observations
                    .iter()
                    .enumerate()
                    .map(|(t, y)| Fixation {
                        x_px: y.x,
                        y_px: y.y,
                        start_ms: t as f64 * a.dwell_ms,
                        duration_ms: a.dwell_ms,
                        n_samples: SIMULATED_N_SAMPLES,
                    })
                    .collect();
                out.push(FixationTrial {
                    participant_id: participant_id.clone(),
                    trial_id: format!("{}_{i:03}", sanitize(label)),
                    condition: Condition::parse_lenient(label),
                    fixations,
                });
            }
        }
    }
    let mut w = create(&a.output)?;
    write_fixation_csv(&mut w, &out, Some(&meta_line("simulate", seed)))?;
    w.flush()?;
    eprintln!("wrote {} trials to {}", out.len(), a.output.display());
    Ok(())
}

fn cmd_validate(a: ValidateArgs, cfg: &RunConfig) -> CmdResult {
    let mut files = Vec::new();
    let mut clean = true;
    for p in &a.models {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let violations = match read_model(text.as_bytes()) {
            Ok(_) => Vec::new(),
            Err(GazeIoError::InvalidModel(v)) => v,
            Err(e) => return Err(anyhow::Error::new(e).context(format!("parsing {}", p.display())).into()),
        };
        for v in &violations {
            eprintln!("{}: {v}", p.display());
        }
        clean &= violations.is_empty();
        files.push(json!({
            "path": p,
            "violations": violations.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
        }));
    }
    let report = json!({ "meta": meta("validate", cfg.seed.unwrap_or(0)), "clean": clean, "files": files });
    println!("{}", serde_json::to_string_pretty(&report)?);
    if clean {
        Ok(())
    } else {
        Err(anyhow!("validation failed").into())
    }
}

fn cmd_plot(a: PlotArgs, cfg: &RunConfig) -> CmdResult {
    let seed = cfg.seed.unwrap_or(0);
    let manifest = match &a.manifest {
        Some(p) => DatasetManifest::read(open(p)?).with_context(|| format!("reading {}", p.display()))?,
        None => DatasetManifest::default(),
    };
    let metadata = meta_line("plot", seed);
    let svg = if let Some(path) = &a.model {
        let rec = read_model(open(path)?).with_context(|| format!("reading {}", path.display()))?;
        let hmm = GaussianHmm::from_record(&rec)?;
        let title = rec.label.clone().unwrap_or_else(|| file_stem(path));
        render_scanpath_svg(Plot::Model(&hmm), &manifest.screen, Some(&title), Some(&metadata))
    } else {
        let path = a.fixations.as_ref().expect("clap enforces one source");
        let trials = read_fixations(path)?;
        let trial = match &a.trial {
            None => trials.first(),
            Some(id) => trials
                .iter()
                .find(|t| &t.trial_id == id && a.participant.as_ref().is_none_or(|p| &t.participant_id == p)),
        }
        .ok_or_else(|| anyhow!("no matching trial in {}", path.display()))?;
        let title = format!("{}/{}", trial.participant_id, trial.trial_id);
        render_scanpath_svg(Plot::Fixations(&trial.fixations), &manifest.screen, Some(&title), Some(&metadata))
    };
    let mut w = create(&a.output)?;
    w.write_all(svg.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn cmd_bundled(a: BundledArgs, cfg: &RunConfig) -> CmdResult {
    let seed = cfg.seed.unwrap_or(0);
    let models = load_bundled_models();
    for key in BUNDLED_KEYS {
        let mut rec = models[key].clone();
        debug_assert!(validate_model(&rec).is_empty());
        for (k, v) in meta("bundled", seed) {
            rec.set_meta(&k, v);
        }
        write_model_file(&a.out_dir.join(format!("{key}.json")), &rec)?;
    }
    write_manifest("bundled", seed, &[], &a.out_dir, Value::Null)?;
    Ok(())
}
