//! The contract every trainable agent satisfies.
//!
//! Two desk-scale toy policies implement it in-process; heavyweight language
//! model backends sit behind [`remote::RemotePolicy`], which speaks a
//! line-delimited JSON protocol over a local socket.

pub mod remote;
mod toy;

pub use toy::{
    FeaturizedHead, StanceHead, TabularHead, ToyFeaturizedPolicy, ToyPolicy, ToyTabularPolicy, TEMPLATES_PER_STANCE,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::{RewardBreakdown, TokenCounter};
use crate::schema::{parse_in, ParseResult};
use crate::stance::{LabelSpace, Stance};
use crate::survey::{Country, Dataset, Question};

/// What the agent sees for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub system: String,
    pub question_id: String,
    pub question_text: String,
    pub label_space: LabelSpace,
}

impl PromptSpec {
    pub fn new(country: Country, question: &Question, label_space: LabelSpace) -> Self {
        PromptSpec {
            system: system_prompt(country, label_space),
            question_id: question.id.clone(),
            question_text: question.text.clone(),
            label_space,
        }
    }

    pub fn for_question(dataset: &Dataset, question_id: &str) -> Result<Self> {
        let q = dataset
            .question(question_id)
            .ok_or_else(|| Error::Config(format!("unknown question {question_id:?}")))?;
        Ok(Self::new(dataset.country(), q, dataset.label_space))
    }
}

/// The agent's system prompt with the nationality substituted and the
/// answer legend restricted to `space`.
pub fn system_prompt(country: Country, space: LabelSpace) -> String {
    let legend = space
        .stances()
        .iter()
        .map(|s| format!("\"{}\" for \"{}\"", s.letter(), s.label()))
        .collect::<Vec<_>>()
        .join(", ");
    let options = space
        .stances()
        .iter()
        .map(|s| format!("  {}", s.coded()))
        .collect::<Vec<_>>()
        .join(",\n");
    format!(
        "You are a digital twin of a {} voter.\n\
         You are asked a policy issue or question.\n\
         You must reason and then answer the question as if you were the voter.\n\
         You reason and answer in English.\n\
         Your final answer must be one of the answer options ({legend}).\n\
         You must respond in the following format:\n\
         <reasoning>\n  Your reasoning goes here.\n</reasoning>\n\
         <answer>\nFinal answer, one of\n{options}.\n</answer>",
        country.nationality()
    )
}

/// One generated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub token_ids: Vec<u32>,
    pub token_logprobs: Vec<f64>,
    /// Sampling temperature the log-probabilities were recorded at.
    pub temperature: f64,
    pub parse: ParseResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardBreakdown>,
}

impl Completion {
    pub fn new(text: String, token_ids: Vec<u32>, token_logprobs: Vec<f64>, temperature: f64, space: LabelSpace) -> Self {
        let parse = parse_in(&text, space);
        Completion {
            text,
            token_ids,
            token_logprobs,
            temperature,
            parse,
            reward: None,
        }
    }

    pub fn stance(&self) -> Option<Stance> {
        self.parse.stance
    }

    /// Sequence log-probability recorded at sampling time.
    pub fn logprob(&self) -> f64 {
        self.token_logprobs.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceLogProb {
    pub current: f64,
    /// `None` before a reference snapshot exists.
    pub reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub prompt: PromptSpec,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlSample {
    pub prompt: PromptSpec,
    pub completion: Completion,
    pub advantage: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RlMetrics {
    /// Negated clipped surrogate (what a minimizer would see).
    pub loss: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub mean_kl: f64,
}

/// Generation and update contract for a trainable agent.
///
/// Sampling is read-only and may run concurrently; updates take `&mut self`.
pub trait Policy: Send + Sync {
    fn backend(&self) -> String;

    fn label_space(&self) -> LabelSpace;

    /// `n` independent draws; reproducible for a fixed `(seed, temperature)`.
    fn sample(&self, prompt: &PromptSpec, n: usize, temperature: f64, seed: u64) -> Result<Vec<Completion>>;

    /// Most likely completion.
    fn greedy(&self, prompt: &PromptSpec) -> Result<Completion>;

    /// Log-probability of `tokens` under the current parameters and the
    /// frozen reference.
    fn logprob(&self, prompt: &PromptSpec, tokens: &[u32], temperature: f64) -> Result<SequenceLogProb>;

    /// One supervised step; returns the mean loss.
    fn sft_update(&mut self, batch: &[SftExample], learning_rate: f64) -> Result<f64>;

    /// One ascent step on the clipped surrogate minus `kl_coefficient` times
    /// the KL estimate against the reference snapshot.
    fn rl_update(&mut self, batch: &[RlSample], clip_range: f64, kl_coefficient: f64, learning_rate: f64)
        -> Result<RlMetrics>;

    /// Freezes the current parameters as the reference.
    fn snapshot_reference(&mut self) -> Result<()>;

    fn count_tokens(&self, text: &str) -> usize;

    fn checkpoint(&self) -> Result<serde_json::Value>;
}

/// Adapts a policy's tokenizer to the reward's [`TokenCounter`].
pub struct PolicyTokens<'a>(pub &'a dyn Policy);

impl TokenCounter for PolicyTokens<'_> {
    fn count_tokens(&self, text: &str) -> usize {
        self.0.count_tokens(text)
    }
}

/// Which implementation to instantiate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    ToyTabular,
    ToyFeaturized,
    /// Out-of-process backend reached at `host:port`.
    Remote { endpoint: String },
}

impl Backend {
    pub fn id(&self) -> String {
        match self {
            Backend::ToyTabular => "toy-tabular".into(),
            Backend::ToyFeaturized => "toy-featurized".into(),
            Backend::Remote { endpoint } => format!("remote:{endpoint}"),
        }
    }

    pub fn build(&self, space: LabelSpace) -> Result<Box<dyn Policy>> {
        Ok(match self {
            Backend::ToyTabular => Box::new(ToyTabularPolicy::tabular(space)),
            Backend::ToyFeaturized => Box::new(ToyFeaturizedPolicy::featurized(space)),
            Backend::Remote { endpoint } => Box::new(remote::RemotePolicy::connect(endpoint, space)?),
        })
    }

    /// Restores a toy policy from [`Policy::checkpoint`] output.
    pub fn restore(&self, checkpoint: &serde_json::Value) -> Result<Box<dyn Policy>> {
        Ok(match self {
            Backend::ToyTabular => Box::new(ToyTabularPolicy::from_checkpoint(checkpoint)?),
            Backend::ToyFeaturized => Box::new(ToyFeaturizedPolicy::from_checkpoint(checkpoint)?),
            Backend::Remote { .. } => {
                return Err(Error::Unsupported("remote checkpoints live with the backend".into()))
            }
        })
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy-tabular" | "tabular" => Ok(Backend::ToyTabular),
            "toy-featurized" | "featurized" | "toy" => Ok(Backend::ToyFeaturized),
            other => match other.strip_prefix("remote:") {
                Some(ep) if !ep.is_empty() => Ok(Backend::Remote { endpoint: ep.into() }),
                _ => Err(Error::Config(format!("unknown policy backend {other:?}"))),
            },
        }
    }
}
