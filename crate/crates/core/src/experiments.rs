//! Experiment orchestration: run configurations, the append-only results
//! store, the per-unit method matrix and the follow-up experiments (bias,
//! inversion, training-set size, recoding).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{
    eval_seeds, evaluate_icl, evaluate_majority, evaluate_random, evaluate_unit, greedy_train_accuracy, IclConfig,
};
use crate::error::{Error, Result};
use crate::grpo::{grpo_train, GrpoConfig, TrainLog};
use crate::metrics::{confusion_matrix, RunScores};
use crate::par::{self, Execution};
use crate::policy::{Backend, Policy};
use crate::reward::RewardWeights;
use crate::seed;
use crate::sft::{build_sft_corpus, generate_corpus, sft_train, ArgumentRecord, BiasTag, Coverage, SftConfig, StubGenerator};
use crate::space::{agent_vector, fit_dataset_space, AnswerMatrix, SpaceModel};
use crate::stance::{LabelSpace, Stance};
use crate::stats::{mean, regress, std_dev, RegressionResult};
use crate::survey::{Dataset, Group, RecodingScheme, Split, Survey, UnitProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "majority")]
    Majority,
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "icl")]
    Icl,
    #[serde(rename = "sft")]
    Sft,
    #[serde(rename = "grpo")]
    Grpo,
    #[serde(rename = "sft+grpo")]
    SftGrpo,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Random,
        Method::Majority,
        Method::Icl,
        Method::Sft,
        Method::Grpo,
        Method::SftGrpo,
    ];

    /// The five methods of the standard matrix.
    pub const MATRIX: [Method; 5] = [Method::Random, Method::Majority, Method::Sft, Method::Grpo, Method::SftGrpo];

    pub fn name(self) -> &'static str {
        match self {
            Method::Majority => "majority",
            Method::Random => "random",
            Method::Icl => "icl",
            Method::Sft => "sft",
            Method::Grpo => "grpo",
            Method::SftGrpo => "sft+grpo",
        }
    }

    pub fn uses_sft(self) -> bool {
        matches!(self, Method::Sft | Method::SftGrpo)
    }

    pub fn uses_grpo(self) -> bool {
        matches!(self, Method::Grpo | Method::SftGrpo)
    }

    pub fn is_trained(self) -> bool {
        self.uses_sft() || self.uses_grpo()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "majority" => Ok(Method::Majority),
            "random" => Ok(Method::Random),
            "icl" => Ok(Method::Icl),
            "sft" => Ok(Method::Sft),
            "grpo" => Ok(Method::Grpo),
            "sft+grpo" | "sft-grpo" | "sftgrpo" => Ok(Method::SftGrpo),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// Hyperparameter profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Desk-scale: 500 steps, batch 4, group 4, toy learning rates.
    #[default]
    Toy,
    /// Language-model backend values.
    Lm,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "toy" => Ok(Profile::Toy),
            "lm" => Ok(Profile::Lm),
            other => Err(Error::Config(format!("unknown profile {other:?}"))),
        }
    }
}

pub const TOY_SFT_LR: f64 = 2.0;
pub const TOY_GRPO_LR: f64 = 0.1;
pub const EVAL_RUNS: usize = 8;

impl Profile {
    pub fn sft(self) -> SftConfig {
        match self {
            Profile::Lm => SftConfig::default(),
            Profile::Toy => SftConfig {
                steps: 500,
                batch_size: 4,
                learning_rate: TOY_SFT_LR,
                warmup_steps: 50,
                max_grad_norm: None,
            },
        }
    }

    pub fn grpo(self) -> GrpoConfig {
        match self {
            Profile::Lm => GrpoConfig::default(),
            Profile::Toy => GrpoConfig {
                steps: 500,
                batch_questions: 4,
                group_size: 4,
                learning_rate: TOY_GRPO_LR,
                warmup_steps: 50,
                ..GrpoConfig::default()
            },
        }
    }

    pub fn backend(self) -> &'static str {
        match self {
            Profile::Toy => "toy-featurized",
            Profile::Lm => "remote:127.0.0.1:7878",
        }
    }
}

/// Everything that determines the scores of one (dataset, method) cell for
/// any unit. Its hash keys the results store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: Survey,
    pub recoding_scheme: RecodingScheme,
    pub method: Method,
    pub backend: String,
    pub profile: Profile,
    pub reward: RewardWeights,
    pub grpo: GrpoConfig,
    pub sft: SftConfig,
    pub train_seed: u64,
    pub eval_seeds: Vec<u64>,
    pub eval_temperature: f64,
    pub bias_tag: BiasTag,
    pub coverage: Coverage,
    pub train_fraction: f64,
    /// Binary answers flipped before training and testing.
    pub inverted: bool,
    pub icl: IclConfig,
    /// Fingerprint of the dataset, split and argument corpus; set by the runner.
    #[serde(default)]
    pub data_fingerprint: Option<String>,
}

impl RunConfig {
    pub fn new(dataset: Survey, method: Method, profile: Profile, seed: u64) -> RunConfig {
        RunConfig {
            dataset,
            recoding_scheme: if dataset == Survey::Anes {
                RecodingScheme::Conservative
            } else {
                RecodingScheme::None
            },
            method,
            backend: profile.backend().to_string(),
            profile,
            reward: RewardWeights::default(),
            grpo: profile.grpo(),
            sft: profile.sft(),
            train_seed: seed,
            eval_seeds: eval_seeds(seed, EVAL_RUNS),
            eval_temperature: 1.0,
            bias_tag: BiasTag::Default,
            coverage: Coverage::Strict,
            train_fraction: 1.0,
            inverted: false,
            icl: IclConfig::default(),
            data_fingerprint: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "train fraction {} outside (0, 1]",
                self.train_fraction
            )));
        }
        if self.eval_seeds.is_empty() {
            return Err(Error::Config("at least one evaluation seed is required".into()));
        }
        if !(self.eval_temperature > 0.0 && self.eval_temperature.is_finite()) {
            return Err(Error::Config("evaluation temperature must be positive".into()));
        }
        self.reward.validate()?;
        if self.method.is_trained() {
            self.backend.parse::<Backend>()?;
        }
        if self.method.uses_sft() {
            self.sft.validate()?;
        }
        if self.method.uses_grpo() {
            self.grpo.validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn unit_seed(&self, unit_id: &str, stream: u64) -> u64 {
        seed::derive(self.train_seed, &[seed::stable_hash(unit_id), stream])
    }
}

/// A dataset with its split and argument corpora, ready for training.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub dataset: Dataset,
    pub split: Split,
    pub arguments: BTreeMap<BiasTag, Vec<ArgumentRecord>>,
}

impl DataBundle {
    pub fn new(dataset: Dataset, split: Split) -> Result<DataBundle> {
        split.validate(&dataset)?;
        Ok(DataBundle {
            dataset,
            split,
            arguments: BTreeMap::new(),
        })
    }

    /// Adds stub-generated corpora for `tags`.
    pub fn with_stub_arguments(mut self, tags: &[BiasTag], seed: u64, exec: Execution) -> DataBundle {
        for tag in tags {
            let c = generate_corpus(&self.dataset, &StubGenerator, *tag, seed, exec);
            self.arguments.insert(*tag, c.records);
        }
        self
    }

    pub fn arguments(&self, tag: BiasTag) -> Result<&[ArgumentRecord]> {
        self.arguments
            .get(&tag)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config(format!("no {} argument corpus", tag.name())))
    }

    pub fn fingerprint(&self, tag: BiasTag) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.dataset.to_json()?.as_bytes());
        h.update(serde_json::to_string(&self.split)?.as_bytes());
        if let Some(a) = self.arguments.get(&tag) {
            h.update(serde_json::to_string(a)?.as_bytes());
        }
        Ok(hex::encode(h.finalize()))
    }

    /// The same bundle with every binary answer flipped.
    pub fn inverted(&self) -> Result<DataBundle> {
        Ok(DataBundle {
            dataset: self.dataset.invert_answers()?,
            split: self.split.clone(),
            arguments: self.arguments.clone(),
        })
    }

    /// The same bundle under another recoding scheme.
    pub fn recoded(&self, scheme: RecodingScheme) -> Result<DataBundle> {
        let dataset = self
            .dataset
            .recoded(scheme)
            .map_err(|e| Error::Config(format!("cannot build the {} variant: {e}", scheme.key())))?;
        Ok(DataBundle {
            dataset,
            split: self.split.clone(),
            arguments: self.arguments.clone(),
        })
    }
}

/// Restricts the unit's train questions to a seeded fraction. Subsets are
/// nested across fractions for the same seed, and keep split order.
pub fn fraction_split(split: &Split, unit: &UnitProfile, fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("train fraction {fraction} outside (0, 1]")));
    }
    if fraction == 1.0 {
        return Ok(split.clone());
    }
    let avail = split.unit_train(unit);
    let k = (fraction * avail.len() as f64).ceil() as usize;
    if k == 0 {
        return Err(Error::Config(format!(
            "fraction {fraction} leaves unit {} without train questions",
            unit.unit_id
        )));
    }
    let mut order: Vec<usize> = (0..avail.len()).collect();
    order.shuffle(&mut seed::rng(seed::derive(seed, &[0xf4, seed::stable_hash(&unit.unit_id)])));
    let keep: BTreeSet<usize> = order[..k].iter().copied().collect();
    let train_ids = avail
        .iter()
        .enumerate()
        .filter(|(i, _)| keep.contains(i))
        .map(|(_, q)| q.to_string())
        .collect();
    let mut s = Split::fixed(train_ids, split.test_ids.clone())?;
    s.strategy = split.strategy;
    s.seed = split.seed;
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

/// One (configuration, unit) result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub config_hash: String,
    pub dataset: Survey,
    pub method: Method,
    pub unit_id: String,
    pub party_or_ideology: String,
    pub group: Group,
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub train_questions: usize,
    #[serde(default)]
    pub final_reward: Option<f64>,
    #[serde(default)]
    pub train_accuracy: Option<f64>,
    pub runs: Vec<RunScores>,
    pub config: RunConfig,
}

impl ResultRow {
    /// Identity of the computation, independent of the experiment label.
    pub fn key(&self) -> (String, String) {
        (self.config_hash.clone(), self.unit_id.clone())
    }

    fn store_key(&self) -> (String, String, String) {
        (self.experiment.clone(), self.config_hash.clone(), self.unit_id.clone())
    }

    pub fn is_ok(&self) -> bool {
        self.status == CellStatus::Ok
    }

    pub fn mean_f1(&self) -> f64 {
        mean(&self.runs.iter().map(|r| r.macro_f1).collect::<Vec<_>>())
    }

    pub fn mean_accuracy(&self) -> f64 {
        mean(&self.runs.iter().map(|r| r.accuracy).collect::<Vec<_>>())
    }

    pub fn neutral_base_rate(&self) -> f64 {
        self.runs.first().map_or(0.0, |r| r.neutral_base_rate)
    }
}

/// Append-only JSON-lines results file.
#[derive(Debug, Clone)]
pub struct ResultsStore {
    path: PathBuf,
}

impl ResultsStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<ResultsStore> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(ResultsStore {
            path: dir.as_ref().join("results.jsonl"),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn dir(&self) -> &Path {
        self.path.parent().expect("store path has a parent")
    }

    /// Every row in file order. A truncated final line (an interrupted
    /// append) is ignored.
    pub fn load(&self) -> Result<Vec<ResultRow>> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        let lines: Vec<String> = BufReader::new(File::open(&self.path)?).lines().collect::<std::io::Result<_>>()?;
        let mut rows = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(line) {
                Ok(r) => rows.push(r),
                Err(_) if i + 1 == lines.len() => {}
                Err(e) => return Err(Error::Report(format!("{}:{}: {e}", self.path.display(), i + 1))),
            }
        }
        Ok(rows)
    }

    /// The latest row per (experiment, config hash, unit).
    pub fn latest(&self) -> Result<Vec<ResultRow>> {
        let mut by_key: BTreeMap<(String, String, String), ResultRow> = BTreeMap::new();
        let mut order = Vec::new();
        for r in self.load()? {
            let k = r.store_key();
            if !by_key.contains_key(&k) {
                order.push(k.clone());
            }
            by_key.insert(k, r);
        }
        Ok(order.into_iter().map(|k| by_key.remove(&k).expect("key recorded")).collect())
    }

    /// Appends one row.
    pub fn append(&self, row: &ResultRow) -> Result<()> {
        Self::append_line(&mut self.open_append()?, row)
    }

    fn append_line(file: &mut File, row: &ResultRow) -> Result<()> {
        let mut line = serde_json::to_string(row)?;
        line.push('\n');
        file.write_all(line.as_bytes())?;
        file.flush()?;
        Ok(())
    }

    fn open_append(&self) -> Result<File> {
        Ok(OpenOptions::new().create(true).append(true).open(&self.path)?)
    }
}

/// One job of a matrix: a configuration applied to one unit of a bundle.
#[derive(Debug, Clone)]
pub struct Cell<'a> {
    pub experiment: String,
    pub bundle: &'a DataBundle,
    pub config: RunConfig,
    pub unit_id: String,
}

struct Outcome {
    runs: Vec<RunScores>,
    final_reward: Option<f64>,
    train_accuracy: Option<f64>,
    train_questions: usize,
}

/// Runs one cell. Failures become a failed row rather than an error.
pub fn run_cell(cell: &Cell<'_>, artifacts: Option<&Path>, exec: Execution) -> ResultRow {
    let cfg = &cell.config;
    let unit = cell.bundle.dataset.unit(&cell.unit_id);
    let outcome = match unit {
        Some(u) => run_cell_inner(cell.bundle, cfg, u, artifacts, exec),
        None => Err(Error::Config(format!("unknown unit {:?}", cell.unit_id))),
    };
    let (party, group) = unit.map_or((String::new(), Group::Center), |u| (u.party_or_ideology.clone(), u.group()));
    let mut row = ResultRow {
        experiment: cell.experiment.clone(),
        config_hash: cfg.hash(),
        dataset: cfg.dataset,
        method: cfg.method,
        unit_id: cell.unit_id.clone(),
        party_or_ideology: party,
        group,
        status: CellStatus::Ok,
        error: None,
        train_questions: 0,
        final_reward: None,
        train_accuracy: None,
        runs: Vec::new(),
        config: cfg.clone(),
    };
    match outcome {
        Ok(o) => {
            row.runs = o.runs;
            row.final_reward = o.final_reward;
            row.train_accuracy = o.train_accuracy;
            row.train_questions = o.train_questions;
        }
        Err(e) => {
            row.status = CellStatus::Failed;
            row.error = Some(e.to_string());
        }
    }
    row
}

fn run_cell_inner(
    bundle: &DataBundle,
    cfg: &RunConfig,
    unit: &UnitProfile,
    artifacts: Option<&Path>,
    exec: Execution,
) -> Result<Outcome> {
    let ds = &bundle.dataset;
    let split = fraction_split(&bundle.split, unit, cfg.train_fraction, cfg.train_seed)?;
    let train_questions = split.unit_train(unit).len();
    let seeds = &cfg.eval_seeds;
    let mut out = Outcome {
        runs: Vec::new(),
        final_reward: None,
        train_accuracy: None,
        train_questions,
    };
    out.runs = match cfg.method {
        Method::Majority => evaluate_majority(ds, unit, &split, seeds)?,
        Method::Random => evaluate_random(ds, unit, &split, seeds)?,
        Method::Icl => evaluate_icl(ds, unit, &split, &cfg.icl, seeds)?,
        m => {
            let dir = artifacts.map(|root| artifact_dir(root, cfg, &unit.unit_id));
            let trained = train_unit(bundle, cfg, unit, exec)?;
            if let Some(d) = &dir {
                trained.save(d)?;
            }
            out.final_reward = trained.log.as_ref().map(|l| l.tail_reward(0.1));
            out.train_accuracy = Some(trained.train_accuracy);
            let policy = trained.policy.as_ref();
            let runs = evaluate_unit(policy, ds, unit, &split, m.name(), cfg.eval_temperature, seeds, exec)?;
            if let Some(d) = &dir {
                fs::write(d.join("scores.json"), serde_json::to_string_pretty(&runs)?)?;
            }
            runs
        }
    };
    Ok(out)
}

/// `root/{dataset}/{method}/{unit}/{hash prefix}`.
pub fn artifact_dir(root: &Path, cfg: &RunConfig, unit_id: &str) -> PathBuf {
    root.join(cfg.dataset.name())
        .join(cfg.method.name().replace('+', "-"))
        .join(unit_id)
        .join(&cfg.hash()[..12])
}

/// A policy after the training stages of its method.
pub struct TrainedUnit {
    pub policy: Box<dyn Policy>,
    pub sft_losses: Option<Vec<f64>>,
    pub log: Option<TrainLog>,
    pub train_questions: usize,
    pub train_accuracy: f64,
}

impl TrainedUnit {
    /// Writes `checkpoint.json`, `sft_loss.json` and `trainlog.jsonl` as
    /// applicable.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        if let Some(l) = &self.sft_losses {
            let p = dir.join("sft_loss.json");
            fs::write(&p, serde_json::to_string(l)?)?;
            out.push(p);
        }
        if let Some(log) = &self.log {
            let p = dir.join("trainlog.jsonl");
            log.save(&p)?;
            out.push(p);
        }
        if let Ok(c) = self.policy.checkpoint() {
            let p = dir.join("checkpoint.json");
            fs::write(&p, serde_json::to_string(&c)?)?;
            out.push(p);
        }
        Ok(out)
    }
}

/// Runs the SFT and/or GRPO stages of `cfg.method` for one unit.
pub fn train_unit(bundle: &DataBundle, cfg: &RunConfig, unit: &UnitProfile, exec: Execution) -> Result<TrainedUnit> {
    let m = cfg.method;
    if !m.is_trained() {
        return Err(Error::Config(format!("{m} is not a trained method")));
    }
    let ds = &bundle.dataset;
    let split = fraction_split(&bundle.split, unit, cfg.train_fraction, cfg.train_seed)?;
    let backend: Backend = cfg.backend.parse()?;
    let mut policy = backend.build(ds.label_space)?;
    let mut sft_losses = None;
    let mut log = None;
    if m.uses_sft() {
        let corpus = build_sft_corpus(ds, unit, &split, bundle.arguments(cfg.bias_tag)?, cfg.coverage)?;
        let skip = corpus.examples.is_empty() && cfg.coverage == Coverage::SkipUncovered;
        sft_losses = Some(if skip {
            Vec::new()
        } else {
            sft_train(policy.as_mut(), &corpus.examples, &cfg.sft, cfg.unit_seed(&unit.unit_id, 1))?
        });
    }
    if m.uses_grpo() {
        let g = GrpoConfig {
            seed: cfg.unit_seed(&unit.unit_id, 2),
            ..cfg.grpo.clone()
        };
        log = Some(grpo_train(policy.as_mut(), ds, unit, &split, &cfg.reward, &g, exec, None)?);
    }
    let train_accuracy = greedy_train_accuracy(policy.as_ref(), ds, unit, &split)?;
    Ok(TrainedUnit {
        policy,
        sft_losses,
        log,
        train_questions: split.unit_train(unit).len(),
        train_accuracy,
    })
}

/// Runs `cells`, skipping those whose key already has a successful row in
/// `store`. New rows are appended in cell order as they complete. Returns
/// one row per cell, in cell order.
pub fn run_cells(
    store: &ResultsStore,
    cells: &[Cell<'_>],
    artifacts: Option<&Path>,
    exec: Execution,
) -> Result<Vec<ResultRow>> {
    let mut done: BTreeMap<(String, String), ResultRow> = store
        .latest()?
        .into_iter()
        .filter(ResultRow::is_ok)
        .map(|r| (r.key(), r))
        .collect();
    let mut cells: Vec<Cell<'_>> = cells.to_vec();
    for c in &mut cells {
        c.config.validate()?;
        if c.config.data_fingerprint.is_none() {
            c.config.data_fingerprint = Some(c.bundle.fingerprint(c.config.bias_tag)?);
        }
    }
    let keys: Vec<(String, String)> = cells.iter().map(|c| (c.config.hash(), c.unit_id.clone())).collect();
    let pending: Vec<usize> = (0..cells.len()).filter(|i| !done.contains_key(&keys[*i])).collect();
    let labelled: BTreeSet<(String, String, String)> = store.latest()?.iter().filter(|r| r.is_ok()).map(ResultRow::store_key).collect();
    let mut reused = Vec::new();
    for (c, k) in cells.iter().zip(&keys) {
        if let Some(r) = done.get(k) {
            if !labelled.contains(&(c.experiment.clone(), k.0.clone(), k.1.clone())) {
                reused.push(ResultRow {
                    experiment: c.experiment.clone(),
                    ..r.clone()
                });
            }
        }
    }

    struct Commit {
        next: usize,
        ready: BTreeMap<usize, ResultRow>,
        file: File,
        error: Option<Error>,
    }
    let commit = Mutex::new(Commit {
        next: 0,
        ready: BTreeMap::new(),
        file: store.open_append()?,
        error: None,
    });
    let fresh = par::map_range(exec, pending.len(), |j| {
        let row = run_cell(&cells[pending[j]], artifacts, exec);
        let mut c = commit.lock().expect("commit lock");
        c.ready.insert(j, row.clone());
        loop {
            let n = c.next;
            let Some(r) = c.ready.remove(&n) else { break };
            if c.error.is_none() {
                if let Err(e) = ResultsStore::append_line(&mut c.file, &r) {
                    c.error = Some(e);
                }
            }
            c.next += 1;
        }
        row
    });
    let mut commit = commit.into_inner().expect("commit lock");
    if let Some(e) = commit.error {
        return Err(e);
    }
    for r in &reused {
        ResultsStore::append_line(&mut commit.file, r)?;
    }
    for (j, row) in pending.iter().zip(fresh) {
        done.insert(keys[*j].clone(), row);
    }
    Ok(cells
        .iter()
        .zip(&keys)
        .map(|(c, k)| ResultRow {
            experiment: c.experiment.clone(),
            ..done[k].clone()
        })
        .collect())
}

/// The run-matrix file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    #[serde(default)]
    pub profile: Profile,
    #[serde(default)]
    pub backend: Option<String>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub eval_runs: usize,
    #[serde(default = "default_datasets")]
    pub datasets: Vec<Survey>,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default)]
    pub sft: Option<SftConfig>,
    #[serde(default)]
    pub grpo: Option<GrpoConfig>,
    #[serde(default)]
    pub reward: Option<RewardWeights>,
}

fn default_seed() -> u64 {
    7
}

fn default_runs() -> usize {
    EVAL_RUNS
}

fn default_datasets() -> Vec<Survey> {
    vec![Survey::Smartvote, Survey::Wom, Survey::Anes]
}

fn default_methods() -> Vec<String> {
    Method::MATRIX.iter().map(|m| m.name().to_string()).collect()
}

impl Default for MatrixSpec {
    fn default() -> Self {
        MatrixSpec {
            profile: Profile::Toy,
            backend: None,
            seed: default_seed(),
            eval_runs: default_runs(),
            datasets: default_datasets(),
            methods: default_methods(),
            sft: None,
            grpo: None,
            reward: None,
        }
    }
}

impl MatrixSpec {
    /// Reads TOML or JSON, by extension.
    pub fn load(path: impl AsRef<Path>) -> Result<MatrixSpec> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let spec: MatrixSpec = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        spec.methods()?;
        Ok(spec)
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        self.methods.iter().map(|m| m.parse()).collect()
    }

    /// The configuration for one (dataset, method) pair.
    pub fn config(&self, dataset: Survey, method: Method) -> RunConfig {
        let mut c = RunConfig::new(dataset, method, self.profile, self.seed);
        c.eval_seeds = eval_seeds(self.seed, self.eval_runs);
        if let Some(b) = &self.backend {
            c.backend = b.clone();
        }
        if let Some(s) = &self.sft {
            c.sft = s.clone();
        }
        if let Some(g) = &self.grpo {
            c.grpo = g.clone();
        }
        if let Some(r) = self.reward {
            c.reward = r;
        }
        c
    }
}

fn unit_cells<'a>(experiment: &str, bundle: &'a DataBundle, config: &RunConfig) -> Vec<Cell<'a>> {
    bundle
        .dataset
        .units
        .iter()
        .map(|u| Cell {
            experiment: experiment.to_string(),
            bundle,
            config: config.clone(),
            unit_id: u.unit_id.clone(),
        })
        .collect()
}

/// Every (dataset, method, unit) of the spec. Unknown methods or datasets
/// without a bundle fail before any training.
pub fn run_method_matrix(
    spec: &MatrixSpec,
    bundles: &BTreeMap<Survey, DataBundle>,
    store: &ResultsStore,
    artifacts: Option<&Path>,
    exec: Execution,
) -> Result<Vec<ResultRow>> {
    let methods = spec.methods()?;
    let mut cells = Vec::new();
    for ds in &spec.datasets {
        let bundle = bundles
            .get(ds)
            .ok_or_else(|| Error::Config(format!("no data for {ds}")))?;
        for m in &methods {
            let cfg = spec.config(*ds, *m);
            cfg.validate()?;
            cells.extend(unit_cells("matrix", bundle, &cfg));
        }
    }
    run_cells(store, &cells, artifacts, exec)
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Option<Summary> {
        if xs.is_empty() {
            return None;
        }
        Some(Summary {
            mean: mean(xs),
            std: std_dev(xs),
            n: xs.len(),
        })
    }
}

/// Per-run means across units: entry `r` averages run `r` over `rows`.
pub fn per_run_means(rows: &[&ResultRow], value: impl Fn(&RunScores) -> f64) -> Vec<f64> {
    let n = rows.iter().map(|r| r.runs.len()).min().unwrap_or(0);
    (0..n)
        .map(|i| mean(&rows.iter().map(|r| value(&r.runs[i])).collect::<Vec<_>>()))
        .collect()
}

/// Position of a unit and its agent in the political space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionPair {
    pub condition: String,
    pub unit_id: String,
    pub group: Group,
    pub human: (f64, f64),
    pub agent: (f64, f64),
}

/// The space used for positions: fitted on `population` when given,
/// otherwise on the training dataset.
pub fn political_space(dataset: &Dataset, population: Option<&Dataset>) -> Result<(SpaceModel, AnswerMatrix)> {
    let (model, _, _) = fit_dataset_space(population.unwrap_or(dataset))?;
    let (matrix, _) = AnswerMatrix::from_dataset(dataset)?;
    Ok((model, matrix))
}

/// Human and agent positions for each successful row. The agent's position
/// averages the projections of its evaluation runs.
pub fn positions(
    rows: &[&ResultRow],
    dataset: &Dataset,
    model: &SpaceModel,
    question_ids: &[String],
    condition: &str,
) -> Result<Vec<PositionPair>> {
    let mut out = Vec::new();
    for r in rows.iter().filter(|r| r.is_ok()) {
        let Some(unit) = dataset.unit(&r.unit_id) else { continue };
        let human_row: Vec<f64> = question_ids
            .iter()
            .map(|q| unit.response(q).and_then(crate::space::encode).unwrap_or(0.5))
            .collect();
        let human = model.project(&human_row)?;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for run in &r.runs {
            let v = agent_vector(unit, question_ids, &run.predictions)?;
            let (x, y) = model.project(&v)?;
            xs.push(x);
            ys.push(y);
        }
        if xs.is_empty() {
            continue;
        }
        out.push(PositionPair {
            condition: condition.to_string(),
            unit_id: r.unit_id.clone(),
            group: r.group,
            human,
            agent: (mean(&xs), mean(&ys)),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub condition: String,
    pub group: Group,
    pub f1: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Displacement {
    pub condition: String,
    pub group: Group,
    pub dx: f64,
    pub dy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub scores: Vec<GroupScore>,
    pub displacements: Vec<Displacement>,
    pub positions: Vec<PositionPair>,
}

pub const BIAS_CONDITIONS: [BiasTag; 3] = [BiasTag::Progressive, BiasTag::Default, BiasTag::Conservative];

/// Per-group scores of units, one `Summary` over unit means.
pub fn group_scores(rows: &[&ResultRow], condition: &str) -> Vec<GroupScore> {
    Group::ALL
        .iter()
        .filter_map(|g| {
            let xs: Vec<f64> = rows
                .iter()
                .filter(|r| r.is_ok() && r.group == *g)
                .map(|r| r.mean_f1())
                .collect();
            Summary::of(&xs).map(|f1| GroupScore {
                condition: condition.to_string(),
                group: *g,
                f1,
            })
        })
        .collect()
}

impl BiasReport {
    pub fn from_rows(rows: &[ResultRow], bundle: &DataBundle, population: Option<&Dataset>) -> Result<BiasReport> {
        let (model, matrix) = political_space(&bundle.dataset, population)?;
        let mut report = BiasReport {
            scores: Vec::new(),
            displacements: Vec::new(),
            positions: Vec::new(),
        };
        for tag in BIAS_CONDITIONS {
            let sel: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.experiment == "bias" && r.config.bias_tag == tag)
                .collect();
            report.scores.extend(group_scores(&sel, tag.name()));
            let pos = positions(&sel, &bundle.dataset, &model, &matrix.question_ids, tag.name())?;
            let pairs: Vec<(Group, (f64, f64), (f64, f64))> = pos.iter().map(|p| (p.group, p.human, p.agent)).collect();
            for (g, (dx, dy)) in crate::space::displacement_vectors(&pairs) {
                report.displacements.push(Displacement {
                    condition: tag.name().into(),
                    group: g,
                    dx,
                    dy,
                });
            }
            report.positions.extend(pos);
        }
        Ok(report)
    }
}

/// SFT+GRPO per unit on each of the three argument corpora. Biased corpora
/// drop uncovered questions.
pub fn run_bias_experiment(
    base: &RunConfig,
    bundle: &DataBundle,
    population: Option<&Dataset>,
    store: &ResultsStore,
    artifacts: Option<&Path>,
    exec: Execution,
) -> Result<(Vec<ResultRow>, BiasReport)> {
    let mut cells = Vec::new();
    for tag in BIAS_CONDITIONS {
        bundle.arguments(tag)?;
        let cfg = RunConfig {
            method: Method::SftGrpo,
            bias_tag: tag,
            coverage: if tag == BiasTag::Default {
                Coverage::Strict
            } else {
                Coverage::SkipUncovered
            },
            ..base.clone()
        };
        cfg.validate()?;
        cells.extend(unit_cells("bias", bundle, &cfg));
    }
    let rows = run_cells(store, &cells, artifacts, exec)?;
    let report = BiasReport::from_rows(&rows, bundle, population)?;
    Ok((rows, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionRow {
    pub unit_id: String,
    pub group: Group,
    pub pc1: f64,
    pub f1_orig: f64,
    pub f1_inv: f64,
    pub delta: f64,
}

/// Pairs original and inverted rows per unit, ordered by PC1.
pub fn inversion_table(rows: &[ResultRow], bundle: &DataBundle, population: Option<&Dataset>) -> Result<Vec<InversionRow>> {
    let (model, matrix) = political_space(&bundle.dataset, population)?;
    let by = |inv: bool| -> BTreeMap<&str, &ResultRow> {
        rows.iter()
            .filter(|r| r.experiment == "inversion" && r.config.inverted == inv && r.is_ok())
            .map(|r| (r.unit_id.as_str(), r))
            .collect()
    };
    let (orig, inv) = (by(false), by(true));
    let mut out = Vec::new();
    for (id, o) in &orig {
        let Some(i) = inv.get(id) else { continue };
        let unit = bundle.dataset.unit(id).expect("row units come from the bundle");
        let row: Vec<f64> = matrix
            .question_ids
            .iter()
            .map(|q| unit.response(q).and_then(crate::space::encode).unwrap_or(0.5))
            .collect();
        let (f1_orig, f1_inv) = (o.mean_f1(), i.mean_f1());
        out.push(InversionRow {
            unit_id: id.to_string(),
            group: o.group,
            pc1: model.project(&row)?.0,
            f1_orig,
            f1_inv,
            delta: f1_inv - f1_orig,
        });
    }
    out.sort_by(|a, b| a.pc1.total_cmp(&b.pc1).then_with(|| a.unit_id.cmp(&b.unit_id)));
    Ok(out)
}

/// Trains every unit on its original and on its inverted answers.
pub fn run_inversion_experiment(
    base: &RunConfig,
    bundle: &DataBundle,
    population: Option<&Dataset>,
    store: &ResultsStore,
    artifacts: Option<&Path>,
    exec: Execution,
) -> Result<(Vec<ResultRow>, Vec<InversionRow>)> {
    if bundle.dataset.label_space != LabelSpace::Binary {
        return Err(Error::Unsupported("inversion needs a binary dataset".into()));
    }
    let flipped = bundle.inverted()?;
    let orig_cfg = RunConfig {
        inverted: false,
        ..base.clone()
    };
    let inv_cfg = RunConfig {
        inverted: true,
        ..base.clone()
    };
    orig_cfg.validate()?;
    let mut cells = unit_cells("inversion", bundle, &orig_cfg);
    cells.extend(unit_cells("inversion", &flipped, &inv_cfg));
    let rows = run_cells(store, &cells, artifacts, exec)?;
    let table = inversion_table(&rows, bundle, population)?;
    Ok((rows, table))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSizeRow {
    pub unit_id: String,
    pub party_or_ideology: String,
    pub fraction: f64,
    pub train_questions: usize,
    pub f1: f64,
    pub accuracy: f64,
}

pub const TRAIN_FRACTIONS: [f64; 5] = [0.10, 0.25, 0.50, 0.75, 1.00];

pub fn trainsize_table(rows: &[ResultRow]) -> Vec<TrainSizeRow> {
    let mut out: Vec<TrainSizeRow> = rows
        .iter()
        .filter(|r| r.experiment == "trainsize" && r.is_ok())
        .map(|r| TrainSizeRow {
            unit_id: r.unit_id.clone(),
            party_or_ideology: r.party_or_ideology.clone(),
            fraction: r.config.train_fraction,
            train_questions: r.train_questions,
            f1: r.mean_f1(),
            accuracy: r.mean_accuracy(),
        })
        .collect();
    out.sort_by(|a, b| a.unit_id.cmp(&b.unit_id).then(a.fraction.total_cmp(&b.fraction)));
    out
}

/// SFT+GRPO per unit at each fraction of its available train questions.
pub fn run_trainsize_ablation(
    base: &RunConfig,
    bundle: &DataBundle,
    fractions: &[f64],
    store: &ResultsStore,
    artifacts: Option<&Path>,
    exec: Execution,
) -> Result<(Vec<ResultRow>, Vec<TrainSizeRow>)> {
    if fractions.is_empty() {
        return Err(Error::Config("no train fractions".into()));
    }
    let mut cells = Vec::new();
    for f in fractions {
        let cfg = RunConfig {
            train_fraction: *f,
            ..base.clone()
        };
        cfg.validate()?;
        for u in &bundle.dataset.units {
            fraction_split(&bundle.split, u, *f, cfg.train_seed)?;
        }
        cells.extend(unit_cells("trainsize", bundle, &cfg));
    }
    let rows = run_cells(store, &cells, artifacts, exec)?;
    let table = trainsize_table(&rows);
    Ok((rows, table))
}

/// Summary of one recoding scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeReport {
    pub scheme: RecodingScheme,
    /// Neutral truths over all units' test items.
    pub neutral_truths: usize,
    /// `[truth][prediction]` summed over units and runs; last column counts
    /// unresolved answers. Rows and columns follow Yes, No, Neutral.
    pub confusion: Vec<Vec<usize>>,
    /// `(unit, neutral base rate, mean F1, mean accuracy)`.
    pub units: Vec<(String, f64, f64, f64)>,
    pub regression_f1: Option<RegressionResult>,
    pub regression_accuracy: Option<RegressionResult>,
}

impl SchemeReport {
    pub fn from_rows(scheme: RecodingScheme, rows: &[&ResultRow], dataset: &Dataset, split: &Split) -> SchemeReport {
        let space = dataset.label_space;
        let mut confusion = vec![vec![0; space.len() + 1]; space.len()];
        let mut units = Vec::new();
        let mut neutral_truths = 0;
        for r in rows.iter().filter(|r| r.is_ok()) {
            let Some(unit) = dataset.unit(&r.unit_id) else { continue };
            let (qids, truths) = crate::baselines::test_items(unit, split);
            neutral_truths += truths.iter().filter(|t| **t == Stance::Neutral).count();
            for run in &r.runs {
                let preds: Vec<Option<Stance>> = qids.iter().map(|q| run.predictions.get(*q).copied().flatten()).collect();
                let m = confusion_matrix(&preds, &truths, space);
                for (a, b) in confusion.iter_mut().zip(m) {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                }
            }
            units.push((r.unit_id.clone(), r.neutral_base_rate(), r.mean_f1(), r.mean_accuracy()));
        }
        let f1: Vec<(f64, f64)> = units.iter().map(|u| (u.1, u.2)).collect();
        let acc: Vec<(f64, f64)> = units.iter().map(|u| (u.1, u.3)).collect();
        SchemeReport {
            scheme,
            neutral_truths,
            confusion,
            regression_f1: regress(&f1).ok(),
            regression_accuracy: regress(&acc).ok(),
            units,
        }
    }
}

/// The full pipeline under the conservative and aggressive schemes.
pub fn run_recoding_comparison(
    base: &RunConfig,
    bundle: &DataBundle,
    store: &ResultsStore,
    artifacts: Option<&Path>,
    exec: Execution,
) -> Result<(Vec<ResultRow>, Vec<SchemeReport>)> {
    let schemes = [RecodingScheme::Conservative, RecodingScheme::Aggressive];
    let variants: Vec<DataBundle> = schemes.iter().map(|s| bundle.recoded(*s)).collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for (s, b) in schemes.iter().zip(&variants) {
        let cfg = RunConfig {
            recoding_scheme: *s,
            ..base.clone()
        };
        cfg.validate()?;
        cells.extend(unit_cells("recoding", b, &cfg));
    }
    let rows = run_cells(store, &cells, artifacts, exec)?;
    let reports = schemes
        .iter()
        .zip(&variants)
        .map(|(s, b)| {
            let sel: Vec<&ResultRow> = rows.iter().filter(|r| r.config.recoding_scheme == *s).collect();
            SchemeReport::from_rows(*s, &sel, &b.dataset, &b.split)
        })
        .collect();
    Ok((rows, reports))
}
