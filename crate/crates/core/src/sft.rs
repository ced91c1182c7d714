//! Demonstration corpora and the supervised warm start.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::Path;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::policy::{Policy, PromptSpec, SftExample};
use crate::schedule::cosine_lr;
use crate::schema::render;
use crate::seed;
use crate::stance::Stance;
use crate::survey::{Country, Dataset, Question, Split, Survey, UnitProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasTag {
    #[default]
    Default,
    Progressive,
    Conservative,
}

impl BiasTag {
    pub const ALL: [BiasTag; 3] = [BiasTag::Default, BiasTag::Progressive, BiasTag::Conservative];

    pub fn name(self) -> &'static str {
        match self {
            BiasTag::Default => "default",
            BiasTag::Progressive => "progressive",
            BiasTag::Conservative => "conservative",
        }
    }
}

impl std::str::FromStr for BiasTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BiasTag::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown bias tag {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Generated,
    Stub,
    /// A unit's own explanatory comment.
    Comment,
}

/// One argument for a question, written from the side of `stance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgumentRecord {
    pub question_id: String,
    pub stance: Stance,
    pub argument_text: String,
    pub bias_tag: BiasTag,
    pub origin: Origin,
}

pub fn read_arguments(path: impl AsRef<Path>) -> Result<Vec<ArgumentRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: ArgumentRecord = serde_json::from_str(line)
            .map_err(|e| Error::Load(format!("argument line {}: {e}", i + 1)))?;
        if r.argument_text.trim().is_empty() {
            return Err(Error::Load(format!("argument line {}: empty text", i + 1)));
        }
        out.push(r);
    }
    Ok(out)
}

pub fn write_arguments(path: impl AsRef<Path>, records: &[ArgumentRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Politician,
    Voter,
}

impl Role {
    pub fn for_survey(survey: Survey) -> Role {
        match survey {
            Survey::Anes => Role::Voter,
            _ => Role::Politician,
        }
    }

    fn word(self) -> &'static str {
        match self {
            Role::Politician => "politician",
            Role::Voter => "voter",
        }
    }
}

fn side_phrase(stance: Stance) -> &'static str {
    match stance {
        Stance::Yes => "for",
        Stance::No => "against",
        Stance::Neutral => "for a balanced, undecided position on",
    }
}

/// The argument-generation prompt for one question and side.
pub fn argument_prompt(country: Country, role: Role, stance: Stance, bias: BiasTag, issue: &str) -> String {
    let head = format!(
        "You are a {} in {}. You reply in English only. We present you with a political issue or question, and you provide us with",
        role.word(),
        country.name()
    );
    let side = side_phrase(stance);
    match bias {
        BiasTag::Default => format!(
            "{head} three to five diverse yet concise arguments {side} this issue or question. {issue}"
        ),
        BiasTag::Progressive | BiasTag::Conservative => format!(
            "{head} a {} argument {side} this issue or question. {issue}",
            bias.name()
        ),
    }
}

/// Source of argument text.
pub trait ArgumentGenerator: Send + Sync {
    fn origin(&self) -> Origin;

    /// Argument strings for `question` from the side of `stance`.
    fn generate(&self, prompt: &str, question: &Question, stance: Stance, bias: BiasTag, seed: u64)
        -> Result<Vec<String>>;
}

pub(crate) const PROGRESSIVE_CUES: &[&str] = &[
    "climate", "welfare", "equality", "renewable", "refugees", "asylum", "unions", "childcare", "healthcare",
    "emissions", "transit", "minimum", "diversity", "rent", "solar", "subsidies", "inclusion",
];
pub(crate) const CONSERVATIVE_CUES: &[&str] = &[
    "army", "police", "border", "deregulation", "nuclear", "deportation", "tradition", "sovereignty", "farmers",
    "security", "military", "deficit", "cuts", "firearms", "motorways", "prisons", "privatization",
];

/// Which answer a progressive voice would give, judged from cue words in
/// the question text: `Some(Yes)` for a progressive-leaning item,
/// `Some(No)` for a conservative-leaning one, `None` when undecidable.
pub fn progressive_side(text: &str) -> Option<Stance> {
    let mut score = 0i32;
    for w in text.split(|c: char| !c.is_alphanumeric()) {
        let w = w.to_lowercase();
        if PROGRESSIVE_CUES.contains(&w.as_str()) {
            score += 1;
        }
        if CONSERVATIVE_CUES.contains(&w.as_str()) {
            score -= 1;
        }
    }
    match score.cmp(&0) {
        std::cmp::Ordering::Greater => Some(Stance::Yes),
        std::cmp::Ordering::Less => Some(Stance::No),
        std::cmp::Ordering::Equal => None,
    }
}

/// Deterministic templated arguments.
///
/// Biased stubs are skewed in stance: they only argue the side their
/// leaning favours (per [`progressive_side`]) and stay silent on the other,
/// so biased corpora cover fewer questions for units that disagree with them.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubGenerator;

const OPENERS: [&str; 5] = [
    "It matters that",
    "Experience shows that",
    "Many citizens feel that",
    "In practice,",
    "Looking ahead,",
];
const FOR_REASONS: [&str; 5] = [
    "this change would solve a concrete problem that has been ignored for too long",
    "the benefits reach far more people than the costs do",
    "similar measures elsewhere have worked well",
    "doing nothing would leave the next generation worse off",
    "the proposal is fair and can be implemented without much bureaucracy",
];
const AGAINST_REASONS: [&str; 5] = [
    "this change would create new problems without solving the old ones",
    "the costs are high and fall on the wrong people",
    "similar measures elsewhere have failed",
    "the current rules already handle the issue well enough",
    "the proposal adds bureaucracy and limits personal freedom",
];
const NEUTRAL_REASONS: [&str; 5] = [
    "both sides raise valid points that deserve weight",
    "the effects depend on details that are not yet settled",
    "the benefits and the costs roughly cancel out",
    "a compromise would serve people better than either extreme",
    "more evidence is needed before taking a firm position",
];

impl ArgumentGenerator for StubGenerator {
    fn origin(&self) -> Origin {
        Origin::Stub
    }

    fn generate(&self, _prompt: &str, question: &Question, stance: Stance, bias: BiasTag, seed: u64)
        -> Result<Vec<String>> {
        let favoured = progressive_side(&question.text).map(|s| match bias {
            BiasTag::Conservative => s.flipped().unwrap_or(s),
            _ => s,
        });
        if bias != BiasTag::Default && stance != Stance::Neutral && favoured.is_some_and(|f| f != stance) {
            return Ok(Vec::new());
        }
        let mut rng = seed::rng(seed::derive(
            seed,
            &[seed::stable_hash(&question.id), stance.index() as u64, bias as u64],
        ));
        let reasons = match stance {
            Stance::Yes => &FOR_REASONS,
            Stance::No => &AGAINST_REASONS,
            Stance::Neutral => &NEUTRAL_REASONS,
        };
        let n = if bias == BiasTag::Default { rng.random_range(3..=5) } else { 1 };
        let mut order: Vec<usize> = (0..reasons.len()).collect();
        order.shuffle(&mut rng);
        let issue = question.text.trim_end_matches(['?', '.', '!']).to_lowercase();
        Ok(order
            .into_iter()
            .take(n)
            .map(|i| {
                let opener = OPENERS[rng.random_range(0..OPENERS.len())];
                let lean = match bias {
                    BiasTag::Default => String::new(),
                    b => format!(" From a {} point of view,", b.name()),
                };
                format!("On \"{issue}\":{lean} {opener} {}.", reasons[i])
            })
            .collect())
    }
}

/// Client for an external text-generation service speaking line-delimited
/// JSON: request `{"model", "prompt", "seed"}`, reply `{"arguments": [..]}`
/// or `{"error": ".."}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineJsonGenerator {
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: u64,
    pub retries: usize,
}

#[derive(Deserialize)]
struct GeneratorReply {
    #[serde(default)]
    arguments: Vec<String>,
    #[serde(default)]
    error: Option<String>,
}

impl LineJsonGenerator {
    fn once(&self, prompt: &str, seed: u64) -> Result<Vec<String>> {
        let gen_err = |e: std::io::Error| Error::Generation(format!("{}: {e}", self.endpoint));
        let addr = self
            .endpoint
            .to_socket_addrs()
            .map_err(gen_err)?
            .next()
            .ok_or_else(|| Error::Generation(format!("{} resolves to nothing", self.endpoint)))?;
        let timeout = Duration::from_secs(self.timeout_secs.max(1));
        let mut stream = TcpStream::connect_timeout(&addr, timeout).map_err(gen_err)?;
        stream.set_read_timeout(Some(timeout)).map_err(gen_err)?;
        let req = serde_json::json!({"model": self.model, "prompt": prompt, "seed": seed});
        stream
            .write_all((req.to_string() + "\n").as_bytes())
            .map_err(gen_err)?;
        let mut line = String::new();
        BufReader::new(stream).read_line(&mut line).map_err(gen_err)?;
        let reply: GeneratorReply =
            serde_json::from_str(&line).map_err(|e| Error::Generation(format!("bad reply: {e}")))?;
        if let Some(e) = reply.error {
            return Err(Error::Generation(e));
        }
        Ok(reply
            .arguments
            .into_iter()
            .filter(|a| !a.trim().is_empty())
            .collect())
    }
}

impl ArgumentGenerator for LineJsonGenerator {
    fn origin(&self) -> Origin {
        Origin::Generated
    }

    fn generate(&self, prompt: &str, _question: &Question, _stance: Stance, _bias: BiasTag, seed: u64)
        -> Result<Vec<String>> {
        let mut last = None;
        for _ in 0..=self.retries {
            match self.once(prompt, seed) {
                Ok(a) => return Ok(a),
                Err(e) => last = Some(e),
            }
        }
        Err(last.unwrap_or_else(|| Error::Generation("no attempts made".into())))
    }
}

/// Arguments for one question and side.
pub fn generate_arguments(
    generator: &dyn ArgumentGenerator,
    country: Country,
    role: Role,
    question: &Question,
    stance: Stance,
    bias: BiasTag,
    seed: u64,
) -> Result<Vec<ArgumentRecord>> {
    let prompt = argument_prompt(country, role, stance, bias, &question.text);
    let texts = generator.generate(&prompt, question, stance, bias, seed)?;
    Ok(texts
        .into_iter()
        .map(|t| ArgumentRecord {
            question_id: question.id.clone(),
            stance,
            argument_text: t,
            bias_tag: bias,
            origin: generator.origin(),
        })
        .collect())
}

/// An argument corpus plus the `(question, stance)` pairs nothing could be
/// generated for.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratedCorpus {
    pub records: Vec<ArgumentRecord>,
    pub uncovered: Vec<(String, Stance)>,
}

/// Generates arguments for every question and every stance of the label
/// space. Failures after retries mark the pair uncovered.
pub fn generate_corpus(
    dataset: &Dataset,
    generator: &dyn ArgumentGenerator,
    bias: BiasTag,
    seed: u64,
    exec: Execution,
) -> GeneratedCorpus {
    let jobs: Vec<(&Question, Stance)> = dataset
        .questions
        .iter()
        .flat_map(|q| dataset.label_space.stances().iter().map(move |s| (q, *s)))
        .collect();
    let role = Role::for_survey(dataset.survey);
    let results = par::map(exec, &jobs, |(q, s)| {
        generate_arguments(generator, dataset.country(), role, q, *s, bias, seed)
    });
    let mut out = GeneratedCorpus::default();
    for ((q, s), r) in jobs.iter().zip(results) {
        match r {
            Ok(recs) if !recs.is_empty() => out.records.extend(recs),
            _ => out.uncovered.push((q.id.clone(), *s)),
        }
    }
    out
}

/// How to treat train questions with no matching-stance argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coverage {
    /// Missing arguments are a corpus error.
    #[default]
    Strict,
    /// Uncovered questions are left out of the corpus.
    SkipUncovered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftCorpus {
    pub examples: Vec<SftExample>,
    /// Train questions left out under [`Coverage::SkipUncovered`].
    pub skipped: Vec<String>,
}

/// Demonstrations for one unit: every train question paired with every
/// argument matching the unit's answer, rendered in the output schema.
///
/// A unit's own comment on a question, where present, is used instead of
/// the generated arguments.
pub fn build_sft_corpus(
    dataset: &Dataset,
    unit: &UnitProfile,
    split: &Split,
    arguments: &[ArgumentRecord],
    coverage: Coverage,
) -> Result<SftCorpus> {
    let mut by_key: BTreeMap<(&str, Stance), Vec<&str>> = BTreeMap::new();
    for a in arguments {
        by_key
            .entry((a.question_id.as_str(), a.stance))
            .or_default()
            .push(&a.argument_text);
    }
    let mut examples = Vec::new();
    let mut missing = Vec::new();
    for qid in split.unit_train(unit) {
        let Some(truth) = unit.response(qid) else { continue };
        let prompt = PromptSpec::for_question(dataset, qid)?;
        if let Some(comment) = unit.comments.get(qid).filter(|c| !c.trim().is_empty()) {
            examples.push(SftExample {
                prompt,
                target: render(comment, truth),
            });
            continue;
        }
        match by_key.get(&(qid, truth)) {
            Some(texts) => examples.extend(texts.iter().map(|t| SftExample {
                prompt: prompt.clone(),
                target: render(t, truth),
            })),
            None => missing.push(qid.to_string()),
        }
    }
    if coverage == Coverage::Strict && !missing.is_empty() {
        return Err(Error::Corpus(missing));
    }
    Ok(SftCorpus {
        examples,
        skipped: missing,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    /// Honoured by backends that expose gradient clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig {
            steps: 800,
            batch_size: 8,
            learning_rate: 5e-5,
            warmup_steps: 80,
            max_grad_norm: Some(1.0),
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("SFT batch size must be positive".into()));
        }
        if self.warmup_steps > self.steps {
            return Err(Error::Config("SFT warm-up exceeds step count".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("SFT learning rate must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Runs the supervised schedule; returns the per-step loss curve.
///
/// Batches walk through seeded reshuffles of the corpus, so every example
/// is seen equally often.
pub fn sft_train(policy: &mut dyn Policy, corpus: &[SftExample], config: &SftConfig, seed: u64) -> Result<Vec<f64>> {
    config.validate()?;
    if config.steps == 0 {
        return Ok(Vec::new());
    }
    if corpus.is_empty() {
        return Err(Error::TrainingData("SFT corpus is empty".into()));
    }
    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(corpus[order[cursor]].clone());
            cursor += 1;
        }
        let lr = cosine_lr(step, config.steps, config.warmup_steps, config.learning_rate)?;
        let loss = policy.sft_update(&batch, lr)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                reason: format!("SFT loss is {loss}"),
                last_good: format!("step{}", step.saturating_sub(1)),
            });
        }
        losses.push(loss);
    }
    Ok(losses)
}
