//! Group-relative policy optimization.

use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::policy::{Completion, Policy, PolicyTokens, PromptSpec, RlSample};
use crate::reward::{score_parsed, RewardWeights};
use crate::schedule::cosine_lr;
use crate::seed;
use crate::survey::{Dataset, Split, UnitProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub steps: usize,
    pub batch_questions: usize,
    pub group_size: usize,
    pub temperature: f64,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    /// KL coefficient.
    pub beta: f64,
    pub clip_range: f64,
    pub adv_epsilon: f64,
    pub seed: u64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            steps: 800,
            batch_questions: 8,
            group_size: 8,
            temperature: 1.0,
            learning_rate: 5e-6,
            warmup_steps: 80,
            beta: 0.0,
            clip_range: 0.2,
            adv_epsilon: 1e-4,
            seed: 0,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::Config(format!("group size must be at least 2, got {}", self.group_size)));
        }
        if self.warmup_steps > self.steps {
            return Err(Error::Config("warm-up exceeds step count".into()));
        }
        if self.batch_questions == 0 {
            return Err(Error::Config("batch must hold at least one question".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(self.clip_range > 0.0 && self.clip_range < 1.0) {
            return Err(Error::Config("clip range must lie in (0, 1)".into()));
        }
        if !(self.beta >= 0.0 && self.learning_rate >= 0.0 && self.adv_epsilon > 0.0) {
            return Err(Error::Config("beta, learning rate and epsilon must be non-negative".into()));
        }
        Ok(())
    }
}

/// Standardizes rewards within a group with the population standard
/// deviation. Groups whose spread is below `epsilon` get all-zero
/// advantages.
pub fn compute_advantages(rewards: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::Config("a group needs at least 2 rewards".into()));
    }
    if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(Error::Numeric(format!("non-finite reward {r}")));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std < epsilon {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    pub question_id: String,
    pub completions: Vec<Completion>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_abs_advantage: f64,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub entries: Vec<TrainLogEntry>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?)?;
        Ok(())
    }

    /// Mean reward over the last `fraction` of logged steps.
    pub fn tail_reward(&self, fraction: f64) -> f64 {
        let k = ((self.entries.len() as f64 * fraction).ceil() as usize).clamp(1, self.entries.len().max(1));
        let tail = &self.entries[self.entries.len().saturating_sub(k)..];
        tail.iter().map(|e| e.mean_reward).sum::<f64>() / tail.len().max(1) as f64
    }

    /// Mean reward over the first `fraction` of logged steps.
    pub fn head_reward(&self, fraction: f64) -> f64 {
        let k = ((self.entries.len() as f64 * fraction).ceil() as usize).clamp(1, self.entries.len().max(1));
        let head = &self.entries[..k.min(self.entries.len())];
        head.iter().map(|e| e.mean_reward).sum::<f64>() / head.len().max(1) as f64
    }
}

/// Where and how often to write policy checkpoints, named
/// `{unit_id}/{method}/{seed}/step{N}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpointer {
    pub root: PathBuf,
    pub unit_id: String,
    pub method: String,
    pub seed: u64,
    /// 0 writes only the final checkpoint.
    pub every: usize,
}

pub fn checkpoint_name(unit_id: &str, method: &str, seed: u64, step: usize) -> String {
    format!("{unit_id}/{method}/{seed}/step{step}")
}

impl Checkpointer {
    pub fn name(&self, step: usize) -> String {
        checkpoint_name(&self.unit_id, &self.method, self.seed, step)
    }

    pub fn save(&self, policy: &dyn Policy, step: usize) -> Result<PathBuf> {
        let path = self.root.join(format!("{}.json", self.name(step)));
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&path, serde_json::to_string(&policy.checkpoint()?)? + "\n")?;
        Ok(path)
    }
}

/// Samples and scores one group for `prompt`.
pub fn sample_group(
    policy: &dyn Policy,
    prompt: &PromptSpec,
    truth: crate::stance::Stance,
    weights: &RewardWeights,
    config: &GrpoConfig,
    seed: u64,
) -> Result<GroupSample> {
    let mut completions = policy.sample(prompt, config.group_size, config.temperature, seed)?;
    if completions.len() != config.group_size {
        return Err(Error::Contract(format!(
            "asked for {} completions, got {}",
            config.group_size,
            completions.len()
        )));
    }
    let tokens = PolicyTokens(policy);
    let mut rewards = Vec::with_capacity(completions.len());
    for c in &mut completions {
        if c.token_ids.len() != c.token_logprobs.len() {
            return Err(Error::Contract("token ids and log-probabilities differ in length".into()));
        }
        let r = score_parsed(&c.parse, truth, weights, &tokens);
        rewards.push(r.total);
        c.reward = Some(r);
    }
    let advantages = compute_advantages(&rewards, config.adv_epsilon)?;
    Ok(GroupSample {
        question_id: prompt.question_id.clone(),
        completions,
        rewards,
        advantages,
    })
}

/// Trains `policy` on the unit's train questions.
///
/// Each step draws `batch_questions` questions uniformly with replacement,
/// samples a group per question, standardizes rewards within each group and
/// applies one clipped policy-gradient update at the scheduled learning rate.
/// The reference snapshot is taken once, before the first step.
#[allow(clippy::too_many_arguments)]
pub fn grpo_train(
    policy: &mut dyn Policy,
    dataset: &Dataset,
    unit: &UnitProfile,
    split: &Split,
    weights: &RewardWeights,
    config: &GrpoConfig,
    exec: Execution,
    checkpoints: Option<&Checkpointer>,
) -> Result<TrainLog> {
    config.validate()?;
    weights.validate()?;
    let train = split.unit_train(unit);
    if train.is_empty() {
        return Err(Error::TrainingData(format!("unit {} has no train questions", unit.unit_id)));
    }
    let mut log = TrainLog::default();
    if config.steps == 0 {
        return Ok(log);
    }
    let items: Vec<(PromptSpec, crate::stance::Stance)> = train
        .iter()
        .map(|q| {
            let truth = unit.response(q).expect("unit_train only lists answered questions");
            PromptSpec::for_question(dataset, q).map(|p| (p, truth))
        })
        .collect::<Result<_>>()?;

    policy.snapshot_reference()?;
    let mut last_good = "initial".to_string();
    for step in 0..config.steps {
        let step_seed = seed::derive(config.seed, &[step as u64]);
        let mut rng = seed::rng(step_seed);
        let picks: Vec<usize> = (0..config.batch_questions)
            .map(|_| rng.random_range(0..items.len()))
            .collect();
        let shared: &dyn Policy = policy;
        let groups = par::map_range(exec, picks.len(), |b| {
            let (prompt, truth) = &items[picks[b]];
            sample_group(shared, prompt, *truth, weights, config, seed::derive(step_seed, &[b as u64 + 1]))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

        let mut batch = Vec::with_capacity(picks.len() * config.group_size);
        let (mut reward_sum, mut adv_sum) = (0.0, 0.0);
        for (g, b) in groups.into_iter().zip(&picks) {
            for ((c, r), a) in g.completions.into_iter().zip(g.rewards).zip(g.advantages) {
                reward_sum += r;
                adv_sum += a.abs();
                batch.push(RlSample {
                    prompt: items[*b].0.clone(),
                    completion: c,
                    advantage: a,
                });
            }
        }
        let lr = cosine_lr(step, config.steps, config.warmup_steps, config.learning_rate)?;
        let metrics = policy.rl_update(&batch, config.clip_range, config.beta, lr)?;
        if !metrics.loss.is_finite() {
            return Err(Error::Diverged {
                step,
                reason: format!("loss is {}", metrics.loss),
                last_good,
            });
        }
        let n = batch.len() as f64;
        log.entries.push(TrainLogEntry {
            step,
            mean_reward: reward_sum / n,
            mean_abs_advantage: adv_sum / n,
            loss: metrics.loss,
            lr,
        });
        if let Some(ck) = checkpoints {
            let done = step + 1;
            if (ck.every > 0 && done % ck.every == 0) || done == config.steps {
                ck.save(policy, done)?;
                last_good = ck.name(done);
            }
        }
    }
    Ok(log)
}
