use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use serde_json::{json, Value};
use stancealign::baselines::{evaluate_unit, eval_seeds};
use stancealign::error::Error;
use stancealign::experiments::{
    artifact_dir, fraction_split, run_bias_experiment, run_cell, run_inversion_experiment, run_method_matrix,
    run_recoding_comparison, run_trainsize_ablation, train_unit, CellStatus, Cell, DataBundle, MatrixSpec, Method,
    Profile, ResultRow, ResultsStore, RunConfig, TRAIN_FRACTIONS,
};
use stancealign::grpo::{TrainLog, TrainLogEntry};
use stancealign::par::{self, Execution};
use stancealign::policy::Backend;
use stancealign::report::{self, Layout, ReportInputs, Table};
use stancealign::sft::{build_sft_corpus, generate_corpus, write_arguments, BiasTag, Coverage, LineJsonGenerator, StubGenerator};
use stancealign::space::fit_dataset_space;
use stancealign::survey::{split_random, split_topic_stratified, Dataset, RecodingScheme, Split, Survey};
use stancealign::synth;

use crate::manifest::Manifest;
use crate::workspace::{display, Workspace};
use crate::{Cli, Command};

/// A command-line problem detected after parsing.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(Usage(msg.into()))
}

struct Ctx {
    ws: Workspace,
    exec: Execution,
}

impl Ctx {
    fn finish(&self, m: Manifest) -> Result<()> {
        let p = m.write(&self.ws.manifests())?;
        eprintln!("manifest: {}", p.display());
        Ok(())
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        ws: Workspace {
            data: cli.global.data_dir.clone(),
            results: cli.global.results.clone(),
        },
        exec: if cli.global.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
    };
    let command = cli.command;
    par::with_workers(cli.global.workers, move || match command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Recode(a) => recode(&ctx, a),
        Command::Split(a) => split(&ctx, a),
        Command::SftBuild(a) => sft_build(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::AnalyzePca(a) => analyze_pca(&ctx, a),
        Command::Experiment(a) => experiment(&ctx, a),
        Command::Report(a) => report_cmd(&ctx, a),
    })
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub survey: Survey,
    /// Canonical dataset JSON; defaults to `$STANCEALIGN_RELEASED_DATA/{survey}.json`.
    #[arg(long, conflicts_with = "synthetic")]
    pub input: Option<PathBuf>,
    /// Candidate population file (smartvote only).
    #[arg(long)]
    pub population: Option<PathBuf>,
    /// Generate the built-in synthetic dataset, its split and population.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

fn ingest(ctx: &Ctx, a: IngestArgs) -> Result<()> {
    let ws = &ctx.ws;
    fs::create_dir_all(&ws.data)?;
    let mut m = Manifest::new(
        "ingest",
        json!({"survey": a.survey, "synthetic": a.synthetic, "seed": a.seed, "input": a.input}),
    );
    let out = ws.dataset(a.survey);
    if a.synthetic {
        let (d, s) = synth::build(a.survey, a.seed)?;
        d.save(&out)?;
        s.save(ws.split(a.survey))?;
        m.outputs.push(ws.split(a.survey));
        if a.survey == Survey::Smartvote {
            synth::smartvote_population(a.seed)?.save(ws.population())?;
            m.outputs.push(ws.population());
        }
    } else {
        let input = match a.input {
            Some(p) => p,
            None => match std::env::var_os("STANCEALIGN_RELEASED_DATA") {
                Some(dir) => Path::new(&dir).join(format!("{}.json", a.survey)),
                None => return Err(usage("pass --input, --synthetic, or set STANCEALIGN_RELEASED_DATA")),
            },
        };
        let d = Dataset::load(&input, Some(a.survey))?;
        d.save(&out)?;
        m.inputs.push(input);
        if let Some(p) = a.population {
            if a.survey != Survey::Smartvote {
                return Err(usage("--population applies to smartvote only"));
            }
            Dataset::load(&p, Some(Survey::Smartvote))?.save(ws.population())?;
            m.inputs.push(p);
            m.outputs.push(ws.population());
        }
    }
    println!("{}", display(&out));
    m.outputs.push(out);
    ctx.finish(m)
}

#[derive(Debug, Args)]
pub struct RecodeArgs {
    #[arg(long)]
    pub survey: Survey,
    #[arg(long)]
    pub scheme: RecodingScheme,
    /// Defaults to `{data_dir}/{survey}.{scheme}.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn recode(ctx: &Ctx, a: RecodeArgs) -> Result<()> {
    let d = ctx.ws.load_dataset(a.survey)?;
    let v = d.recoded(a.scheme)?;
    let out = a.out.unwrap_or_else(|| ctx.ws.variant(a.survey, a.scheme));
    v.save(&out)?;
    println!("{}", display(&out));
    let mut m = Manifest::new("recode", json!({"survey": a.survey, "scheme": a.scheme}));
    m.inputs.push(ctx.ws.dataset(a.survey));
    m.outputs.push(out);
    ctx.finish(m)
}

#[derive(Debug, Clone, Copy, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyArg {
    Topic,
    Random,
    Fixed,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub survey: Survey,
    /// Defaults: topic for smartvote, random for anes, fixed for wom.
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    /// Held-out questions for the random strategy.
    #[arg(long, default_value_t = 12)]
    pub n_test: usize,
    /// File with one test question id per line (fixed strategy).
    #[arg(long)]
    pub test_ids: Option<PathBuf>,
    /// Test questions are those whose id starts with this (fixed strategy).
    #[arg(long)]
    pub test_prefix: Option<String>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

fn split(ctx: &Ctx, a: SplitArgs) -> Result<()> {
    let d = ctx.ws.load_dataset(a.survey)?;
    let strategy = a.strategy.unwrap_or(match a.survey {
        Survey::Smartvote => StrategyArg::Topic,
        Survey::Anes => StrategyArg::Random,
        Survey::Wom => StrategyArg::Fixed,
    });
    let s = match strategy {
        StrategyArg::Topic => split_topic_stratified(&d, a.seed)?,
        StrategyArg::Random => split_random(&d, a.n_test, a.seed)?,
        StrategyArg::Fixed => {
            let test: Vec<String> = match (&a.test_ids, &a.test_prefix) {
                (Some(p), _) => fs::read_to_string(p)
                    .with_context(|| display(p))?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(String::from)
                    .collect(),
                (None, Some(prefix)) => d
                    .questions
                    .iter()
                    .filter(|q| q.id.starts_with(prefix.as_str()))
                    .map(|q| q.id.clone())
                    .collect(),
                (None, None) => return Err(usage("the fixed strategy needs --test-ids or --test-prefix")),
            };
            if test.is_empty() {
                return Err(usage("the fixed split selects no test questions"));
            }
            let train = d
                .questions
                .iter()
                .filter(|q| !test.contains(&q.id))
                .map(|q| q.id.clone())
                .collect();
            Split::fixed(train, test)?
        }
    };
    s.validate(&d)?;
    let out = ctx.ws.split(a.survey);
    s.save(&out)?;
    eprintln!("{} train / {} test questions", s.train_ids.len(), s.test_ids.len());
    println!("{}", display(&out));
    let mut m = Manifest::new(
        "split",
        json!({"survey": a.survey, "strategy": strategy, "n_test": a.n_test, "seed": a.seed,
               "test_ids": a.test_ids, "test_prefix": a.test_prefix}),
    );
    m.inputs.push(ctx.ws.dataset(a.survey));
    m.inputs.extend(a.test_ids);
    m.outputs.push(out);
    ctx.finish(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CoverageArg {
    Strict,
    SkipUncovered,
}

impl From<CoverageArg> for Coverage {
    fn from(c: CoverageArg) -> Coverage {
        match c {
            CoverageArg::Strict => Coverage::Strict,
            CoverageArg::SkipUncovered => Coverage::SkipUncovered,
        }
    }
}

#[derive(Debug, Args)]
pub struct SftBuildArgs {
    #[arg(long)]
    pub survey: Survey,
    /// Bias condition(s) of the argument corpus: default, progressive, conservative or all.
    #[arg(long, default_value = "default")]
    pub tag: String,
    /// `stub` or the `host:port` of a line-JSON text-generation service.
    #[arg(long, default_value = "stub")]
    pub generator: String,
    #[arg(long, default_value = "")]
    pub model: String,
    #[arg(long, value_enum, default_value = "strict")]
    pub coverage: CoverageArg,
    /// Only build demonstrations for this unit.
    #[arg(long)]
    pub unit: Option<String>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

fn parse_tags(s: &str) -> Result<Vec<BiasTag>> {
    if s == "all" {
        return Ok(BiasTag::ALL.to_vec());
    }
    s.split(',').map(|t| Ok(t.trim().parse::<BiasTag>()?)).collect()
}

fn sft_build(ctx: &Ctx, a: SftBuildArgs) -> Result<()> {
    let ws = &ctx.ws;
    let tags = parse_tags(&a.tag)?;
    let d = ws.load_dataset(a.survey)?;
    let s = ws.load_split(a.survey)?;
    let mut m = Manifest::new(
        "sft-build",
        json!({"survey": a.survey, "tags": tags, "generator": a.generator, "model": a.model,
               "coverage": Coverage::from(a.coverage), "unit": a.unit, "seed": a.seed}),
    );
    m.inputs.extend([ws.dataset(a.survey), ws.split(a.survey)]);
    let units: Vec<_> = match &a.unit {
        Some(id) => vec![d.unit(id).ok_or_else(|| usage(format!("unknown unit {id:?}")))?],
        None => d.units.iter().collect(),
    };
    for tag in tags {
        let corpus = if a.generator == "stub" {
            generate_corpus(&d, &StubGenerator, tag, a.seed, ctx.exec)
        } else {
            let g = LineJsonGenerator {
                endpoint: a.generator.clone(),
                model: a.model.clone(),
                timeout_secs: 60,
                retries: 3,
            };
            generate_corpus(&d, &g, tag, a.seed, ctx.exec)
        };
        if !corpus.uncovered.is_empty() {
            eprintln!("{}: {} (question, stance) pairs without arguments", tag.name(), corpus.uncovered.len());
        }
        let args_path = ws.arguments(a.survey, tag);
        fs::create_dir_all(args_path.parent().expect("argument path has a parent"))?;
        write_arguments(&args_path, &corpus.records)?;
        m.outputs.push(args_path);
        let dir = ws.sft_dir(a.survey, tag);
        fs::create_dir_all(&dir)?;
        let mut examples = 0;
        for u in &units {
            let c = build_sft_corpus(&d, u, &s, &corpus.records, a.coverage.into())
                .with_context(|| format!("unit {}", u.unit_id))?;
            examples += c.examples.len();
            let p = dir.join(format!("{}.json", u.unit_id));
            fs::write(&p, serde_json::to_string_pretty(&c)? + "\n")?;
            m.outputs.push(p);
        }
        eprintln!("{}: {} demonstrations for {} units", tag.name(), examples, units.len());
        println!("{}", display(&dir));
    }
    ctx.finish(m)
}

/// Flags shared by `train` and `evaluate`.
#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub dataset: Survey,
    #[arg(long)]
    pub method: Method,
    /// Hyperparameter profile: toy or lm.
    #[arg(long)]
    pub profile: Option<Profile>,
    /// Run-matrix style TOML/JSON file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// toy-tabular, toy-featurized or remote:host:port.
    #[arg(long)]
    pub backend: Option<String>,
    /// Evaluation runs.
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub sft_steps: Option<usize>,
    #[arg(long)]
    pub sft_lr: Option<f64>,
    #[arg(long)]
    pub grpo_steps: Option<usize>,
    #[arg(long)]
    pub grpo_lr: Option<f64>,
    #[arg(long)]
    pub tag: Option<BiasTag>,
    #[arg(long, value_enum)]
    pub coverage: Option<CoverageArg>,
    /// Share of the unit's train questions to use.
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Recoding scheme variant to train and score on.
    #[arg(long)]
    pub scheme: Option<RecodingScheme>,
}

fn load_spec(config: Option<&Path>) -> Result<MatrixSpec> {
    Ok(match config {
        Some(p) => MatrixSpec::load(p)?,
        None => MatrixSpec::default(),
    })
}

/// Profile defaults, then the config file, then flags.
fn apply_overrides(spec: &mut MatrixSpec, profile: Option<Profile>, seed: Option<u64>, runs: Option<usize>, backend: Option<&str>) {
    if let Some(p) = profile {
        spec.profile = p;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(r) = runs {
        spec.eval_runs = r;
    }
    if let Some(b) = backend {
        spec.backend = Some(b.to_string());
    } else if spec.backend.is_none() && spec.profile == Profile::Lm {
        if let Ok(ep) = std::env::var("STANCEALIGN_LM_ENDPOINT") {
            spec.backend = Some(format!("remote:{ep}"));
        }
    }
}

fn effective_config(a: &RunArgs) -> Result<RunConfig> {
    let mut spec = load_spec(a.config.as_deref())?;
    apply_overrides(&mut spec, a.profile, a.seed, a.runs, a.backend.as_deref());
    let mut c = spec.config(a.dataset, a.method);
    c.eval_seeds = eval_seeds(spec.seed, spec.eval_runs);
    if let Some(v) = a.sft_steps {
        c.sft.steps = v;
    }
    if let Some(v) = a.sft_lr {
        c.sft.learning_rate = v;
    }
    if let Some(v) = a.grpo_steps {
        c.grpo.steps = v;
    }
    if let Some(v) = a.grpo_lr {
        c.grpo.learning_rate = v;
    }
    if let Some(v) = a.tag {
        c.bias_tag = v;
    }
    if let Some(v) = a.coverage {
        c.coverage = v.into();
    }
    if let Some(v) = a.fraction {
        c.train_fraction = v;
    }
    if let Some(v) = a.scheme {
        c.recoding_scheme = v;
    }
    c.validate()?;
    Ok(c)
}

fn run_bundle(ctx: &Ctx, cfg: &RunConfig) -> Result<DataBundle> {
    let b = ctx.ws.load_bundle(cfg.dataset, &[cfg.bias_tag])?;
    if b.dataset.recoding_scheme != cfg.recoding_scheme && cfg.recoding_scheme != RecodingScheme::None {
        return Ok(b.recoded(cfg.recoding_scheme)?);
    }
    Ok(b)
}

fn with_fingerprint(mut cfg: RunConfig, bundle: &DataBundle) -> Result<RunConfig> {
    cfg.data_fingerprint = Some(bundle.fingerprint(cfg.bias_tag)?);
    Ok(cfg)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub unit: String,
}

fn train(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    let cfg = effective_config(&a.run)?;
    if !cfg.method.is_trained() {
        return Err(usage(format!("{} has nothing to train; use `evaluate`", cfg.method)));
    }
    let bundle = run_bundle(ctx, &cfg)?;
    let cfg = with_fingerprint(cfg, &bundle)?;
    let unit = bundle
        .dataset
        .unit(&a.unit)
        .ok_or_else(|| usage(format!("unknown unit {:?}", a.unit)))?;
    let trained = train_unit(&bundle, &cfg, unit, ctx.exec)?;
    let dir = artifact_dir(&ctx.ws.results, &cfg, &unit.unit_id);
    let mut outputs = trained.save(&dir)?;
    let cfg_path = dir.join("config.json");
    fs::write(&cfg_path, serde_json::to_string_pretty(&cfg)? + "\n")?;
    outputs.push(cfg_path);
    eprintln!(
        "{} {}: train accuracy {:.3}{}",
        cfg.method,
        unit.unit_id,
        trained.train_accuracy,
        trained
            .log
            .as_ref()
            .map(|l| format!(", final reward {:.3}", l.tail_reward(0.1)))
            .unwrap_or_default()
    );
    println!("{}", display(&dir.join("checkpoint.json")));
    let mut m = Manifest::new("train", json!({"unit": a.unit, "run_config": cfg, "config_hash": cfg.hash()}));
    m.inputs.push(ctx.ws.dataset(cfg.dataset));
    m.inputs.push(ctx.ws.split(cfg.dataset));
    if cfg.method.uses_sft() {
        m.inputs.push(ctx.ws.arguments(cfg.dataset, cfg.bias_tag));
    }
    m.outputs = outputs;
    ctx.finish(m)
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Defaults to every unit.
    #[arg(long)]
    pub unit: Option<String>,
    /// Checkpoint of a trained method; defaults to the one `train` wrote for the same flags.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Label stored with the result rows.
    #[arg(long, default_value = "cli")]
    pub experiment: String,
}

fn read_trainlog(path: &Path) -> Option<TrainLog> {
    let text = fs::read_to_string(path).ok()?;
    let entries: Vec<TrainLogEntry> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()
        .ok()?;
    Some(TrainLog { entries })
}

fn evaluate(ctx: &Ctx, a: EvaluateArgs) -> Result<()> {
    let cfg = effective_config(&a.run)?;
    let bundle = run_bundle(ctx, &cfg)?;
    let cfg = with_fingerprint(cfg, &bundle)?;
    let units: Vec<String> = match &a.unit {
        Some(u) => {
            bundle
                .dataset
                .unit(u)
                .ok_or_else(|| usage(format!("unknown unit {u:?}")))?;
            vec![u.clone()]
        }
        None => bundle.dataset.units.iter().map(|u| u.unit_id.clone()).collect(),
    };
    if a.checkpoint.is_some() && units.len() != 1 {
        return Err(usage("--checkpoint needs --unit"));
    }
    let store = ResultsStore::open(&ctx.ws.results)?;
    let mut m = Manifest::new(
        "evaluate",
        json!({"units": units, "run_config": cfg, "config_hash": cfg.hash(), "experiment": a.experiment}),
    );
    m.inputs.extend([ctx.ws.dataset(cfg.dataset), ctx.ws.split(cfg.dataset)]);
    let mut failures = 0;
    for id in &units {
        let row = if cfg.method.is_trained() {
            let dir = artifact_dir(&ctx.ws.results, &cfg, id);
            let ckpt = a.checkpoint.clone().unwrap_or_else(|| dir.join("checkpoint.json"));
            m.inputs.push(ckpt.clone());
            evaluate_trained(&bundle, &cfg, id, &ckpt, &a.experiment, ctx.exec)?
        } else {
            let cell = Cell {
                experiment: a.experiment.clone(),
                bundle: &bundle,
                config: cfg.clone(),
                unit_id: id.clone(),
            };
            run_cell(&cell, None, ctx.exec)
        };
        match &row.error {
            Some(e) => {
                failures += 1;
                eprintln!("{id}: failed: {e}");
            }
            None => println!("{id}\t{:.4}\t{:.4}", row.mean_f1(), row.mean_accuracy()),
        }
        store.append(&row)?;
    }
    m.outputs.push(store.path().to_path_buf());
    ctx.finish(m)?;
    if failures > 0 {
        bail!("{failures} of {} units failed", units.len());
    }
    Ok(())
}

fn evaluate_trained(
    bundle: &DataBundle,
    cfg: &RunConfig,
    unit_id: &str,
    checkpoint: &Path,
    experiment: &str,
    exec: Execution,
) -> Result<ResultRow> {
    let unit = bundle.dataset.unit(unit_id).expect("unit checked by caller");
    let text = fs::read_to_string(checkpoint)
        .with_context(|| format!("reading {}; run `train` with the same flags first", checkpoint.display()))?;
    let backend: Backend = cfg.backend.parse()?;
    let policy = backend.restore(&serde_json::from_str::<Value>(&text)?)?;
    let split = fraction_split(&bundle.split, unit, cfg.train_fraction, cfg.train_seed)?;
    let runs = evaluate_unit(
        policy.as_ref(),
        &bundle.dataset,
        unit,
        &split,
        cfg.method.name(),
        cfg.eval_temperature,
        &cfg.eval_seeds,
        exec,
    )?;
    let log = checkpoint.parent().and_then(|d| read_trainlog(&d.join("trainlog.jsonl")));
    Ok(ResultRow {
        experiment: experiment.into(),
        config_hash: cfg.hash(),
        dataset: cfg.dataset,
        method: cfg.method,
        unit_id: unit_id.into(),
        party_or_ideology: unit.party_or_ideology.clone(),
        group: unit.group(),
        status: CellStatus::Ok,
        error: None,
        train_questions: split.unit_train(unit).len(),
        final_reward: log.map(|l| l.tail_reward(0.1)),
        train_accuracy: Some(stancealign::baselines::greedy_train_accuracy(
            policy.as_ref(),
            &bundle.dataset,
            unit,
            &split,
        )?),
        runs,
        config: cfg.clone(),
    })
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    #[arg(long, default_value = "smartvote")]
    pub survey: Survey,
    /// Fit on the candidate population instead of the training units.
    #[arg(long)]
    pub population: bool,
}

fn analyze_pca(ctx: &Ctx, a: PcaArgs) -> Result<()> {
    let (d, input) = if a.population {
        if a.survey != Survey::Smartvote {
            return Err(usage("--population applies to smartvote only"));
        }
        let p = ctx.ws.population();
        (Dataset::load(&p, Some(Survey::Smartvote))?, p)
    } else {
        (ctx.ws.load_dataset(a.survey)?, ctx.ws.dataset(a.survey))
    };
    let (model, matrix, excluded) = fit_dataset_space(&d)?;
    let dir = ctx.ws.results.join("analysis");
    fs::create_dir_all(&dir)?;
    let stem = if a.population {
        format!("{}_population", a.survey)
    } else {
        a.survey.to_string()
    };
    let json_path = dir.join(format!("{stem}_pca.json"));
    let body = json!({
        "model": model,
        "explained_ratio": model.explained_ratio(),
        "reflection_center": model.reflection_center(),
        "question_ids": matrix.question_ids,
        "excluded_units": excluded,
    });
    fs::write(&json_path, serde_json::to_string_pretty(&body)? + "\n")?;
    let mut t = Table::new("positions", &["unit_id", "party_or_ideology", "group", "pc1", "pc2"]);
    for (id, row) in matrix.unit_ids.iter().zip(&matrix.rows) {
        let u = d.unit(id).expect("matrix rows come from the dataset");
        let (x, y) = model.project(row)?;
        t.push(vec![
            id.as_str().into(),
            u.party_or_ideology.as_str().into(),
            u.group().name().into(),
            x.into(),
            y.into(),
        ]);
    }
    let csv_path = dir.join(format!("{stem}_positions.csv"));
    fs::write(&csv_path, t.to_csv()?)?;
    let [r1, r2] = model.explained_ratio();
    eprintln!("explained variance: PC1 {:.1}%, PC2 {:.1}%", 100.0 * r1, 100.0 * r2);
    println!("{}", display(&json_path));
    let mut m = Manifest::new("analyze-pca", json!({"survey": a.survey, "population": a.population}));
    m.inputs.push(input);
    m.outputs.extend([json_path, csv_path]);
    ctx.finish(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Matrix,
    Bias,
    Inversion,
    Trainsize,
    Recoding,
    All,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long, value_enum, default_value = "matrix")]
    pub kind: ExperimentKind,
    /// Run-matrix TOML/JSON file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub profile: Option<Profile>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub backend: Option<String>,
    /// Train-set fractions for the train-size ablation.
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    /// Do not write per-cell checkpoints and logs.
    #[arg(long)]
    pub no_artifacts: bool,
}

fn experiment(ctx: &Ctx, a: ExperimentArgs) -> Result<()> {
    let mut spec = load_spec(a.config.as_deref())?;
    apply_overrides(&mut spec, a.profile, a.seed, a.runs, a.backend.as_deref());
    let bundles = ctx.ws.available_bundles(&BiasTag::ALL)?;
    let population = ctx.ws.load_population()?;
    let store = ResultsStore::open(&ctx.ws.results)?;
    let artifacts = (!a.no_artifacts).then_some(ctx.ws.results.as_path());
    let fractions = a.fractions.clone().unwrap_or_else(|| TRAIN_FRACTIONS.to_vec());
    let kinds: Vec<ExperimentKind> = match a.kind {
        ExperimentKind::All => vec![
            ExperimentKind::Matrix,
            ExperimentKind::Bias,
            ExperimentKind::Inversion,
            ExperimentKind::Trainsize,
            ExperimentKind::Recoding,
        ],
        k => vec![k],
    };
    let bundle = |s: Survey| -> Result<&DataBundle> {
        bundles
            .get(&s)
            .ok_or_else(|| anyhow!(Error::Config(format!("no {s} data in {}; run ingest and split", display(&ctx.ws.data)))))
    };
    let base = |s: Survey| spec.config(s, Method::SftGrpo);
    let mut total = 0;
    let mut failed = 0;
    for k in kinds {
        let rows = match k {
            ExperimentKind::Matrix => run_method_matrix(&spec, &bundles, &store, artifacts, ctx.exec)?,
            ExperimentKind::Bias => {
                let (rows, rep) = run_bias_experiment(
                    &base(Survey::Smartvote),
                    bundle(Survey::Smartvote)?,
                    population.as_ref(),
                    &store,
                    artifacts,
                    ctx.exec,
                )?;
                for d in &rep.displacements {
                    eprintln!("bias {} {}: displacement ({:+.3}, {:+.3})", d.condition, d.group, d.dx, d.dy);
                }
                rows
            }
            ExperimentKind::Inversion => {
                let (rows, table) = run_inversion_experiment(
                    &base(Survey::Smartvote),
                    bundle(Survey::Smartvote)?,
                    population.as_ref(),
                    &store,
                    artifacts,
                    ctx.exec,
                )?;
                let n = table.len().max(1) as f64;
                eprintln!("inversion: mean delta F1 {:+.4}", table.iter().map(|r| r.delta).sum::<f64>() / n);
                rows
            }
            ExperimentKind::Trainsize => {
                run_trainsize_ablation(&base(Survey::Wom), bundle(Survey::Wom)?, &fractions, &store, artifacts, ctx.exec)?
                    .0
            }
            ExperimentKind::Recoding => {
                let (rows, reps) =
                    run_recoding_comparison(&base(Survey::Anes), bundle(Survey::Anes)?, &store, artifacts, ctx.exec)?;
                for r in &reps {
                    eprintln!("recoding {}: {} neutral truths", r.scheme.key(), r.neutral_truths);
                }
                rows
            }
            ExperimentKind::All => unreachable!("expanded above"),
        };
        let f = rows.iter().filter(|r| !r.is_ok()).count();
        eprintln!("{k:?}: {} cells, {f} failed", rows.len());
        for r in rows.iter().filter(|r| !r.is_ok()).take(5) {
            eprintln!("  {} {} {}: {}", r.dataset, r.method, r.unit_id, r.error.as_deref().unwrap_or(""));
        }
        total += rows.len();
        failed += f;
    }
    println!("{}", display(store.path()));
    let mut m = Manifest::new(
        "experiment",
        json!({"kind": a.kind, "spec": spec, "fractions": fractions}),
    );
    for (s, _) in &bundles {
        m.inputs.extend([ctx.ws.dataset(*s), ctx.ws.split(*s)]);
    }
    m.outputs.push(store.path().to_path_buf());
    ctx.finish(m)?;
    if failed > 0 {
        bail!("{failed} of {total} cells failed; see the results store");
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Layout name (table3, table4, table8, table11, fig2 ... fig11) or `all`.
    #[arg(long, default_value = "all", value_delimiter = ',')]
    pub layout: Vec<String>,
    /// Defaults to `{results}/reports`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn report_cmd(ctx: &Ctx, a: ReportArgs) -> Result<()> {
    let all = a.layout.iter().any(|l| l == "all");
    let layouts: Vec<Layout> = if all {
        Layout::ALL.to_vec()
    } else {
        a.layout.iter().map(|l| l.parse()).collect::<Result<_, _>>()?
    };
    let store = ResultsStore::open(&ctx.ws.results)?;
    let inputs = ReportInputs {
        rows: store.latest()?,
        bundles: ctx.ws.available_bundles(&[])?,
        population: ctx.ws.load_population()?,
    };
    if inputs.rows.is_empty() {
        return Err(Error::Report(format!("{} holds no results", display(store.path()))).into());
    }
    let out = a.out.unwrap_or_else(|| ctx.ws.reports());
    let mut m = Manifest::new("report", json!({"layouts": layouts.iter().map(|l| l.name()).collect::<Vec<_>>()}));
    m.inputs.push(store.path().to_path_buf());
    for l in layouts {
        match report::emit(l, &inputs, &out) {
            Ok(files) => {
                for f in &files {
                    println!("{}", display(f));
                }
                m.outputs.extend(files);
            }
            Err(e @ Error::Report(_)) if all => eprintln!("{l}: skipped: {e}"),
            Err(e) => return Err(anyhow!(e).context(format!("layout {l}"))),
        }
    }
    if m.outputs.is_empty() {
        bail!(Error::Report("no layout could be produced".into()));
    }
    ctx.finish(m)
}
