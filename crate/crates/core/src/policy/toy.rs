//! Desk-scale stand-ins for a language model.
//!
//! A toy completion is two decisions: a stance drawn from the head's logits
//! and one of [`TEMPLATES_PER_STANCE`] reasoning templates drawn from a
//! shared per-stance template distribution. Token ids encode the decisions:
//! `[stance.index(), 3 + template]`, with one log-probability each.

use std::collections::{BTreeMap, HashMap};

use rand::Rng as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Completion, Policy, PromptSpec, RlMetrics, RlSample, SequenceLogProb, SftExample};
use crate::error::{Error, Result};
use crate::reward::{TokenCounter, WhitespaceTokens};
use crate::schema::{parse_in, render};
use crate::seed;
use crate::stance::{LabelSpace, Stance};

pub const TEMPLATES_PER_STANCE: usize = 3;
const TEMPLATE_WORDS: [usize; TEMPLATES_PER_STANCE] = [40, 100, 160];
const TEMPLATE_TOKEN_BASE: u32 = 3;

const YES_SENTENCES: &[&str] = &[
    "This proposal addresses a real need that people around me talk about.",
    "The long-term benefits clearly outweigh the short-term costs.",
    "People in my situation would gain from this change.",
    "It fits the values I have held for many years.",
    "Leaving things as they are would make matters worse.",
    "I trust that it can be implemented fairly and without waste.",
];
const NO_SENTENCES: &[&str] = &[
    "This proposal creates more problems than it solves.",
    "The costs would end up falling on people like me.",
    "It conflicts with the values I have held for many years.",
    "The current arrangement works well enough as it is.",
    "I doubt that it would be implemented fairly or efficiently.",
    "This is not a task the state should take on.",
];
const NEUTRAL_SENTENCES: &[&str] = &[
    "There are reasonable arguments on both sides of this issue.",
    "The benefits and the costs seem roughly balanced to me.",
    "I would need more details before making up my mind.",
    "Parts of the proposal appeal to me and parts do not.",
    "The outcome depends heavily on how it would be implemented.",
    "I do not feel strongly either way about it.",
];

/// Reasoning text for `(stance, template)`; at least the template's nominal
/// word count, built from whole sentences.
pub fn template_text(stance: Stance, template: usize) -> String {
    let pool = match stance {
        Stance::Yes => YES_SENTENCES,
        Stance::No => NO_SENTENCES,
        Stance::Neutral => NEUTRAL_SENTENCES,
    };
    let target = TEMPLATE_WORDS[template % TEMPLATES_PER_STANCE];
    let mut out: Vec<&str> = Vec::new();
    let mut words = 0;
    for s in pool.iter().cycle().skip(template) {
        if words >= target {
            break;
        }
        words += s.split_whitespace().count();
        out.push(s);
    }
    out.join(" ")
}

fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    scaled.iter().map(|z| z - lse).collect()
}

fn draw(logp: &[f64], rng: &mut seed::Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, lp) in logp.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    logp.len() - 1
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// `d/dz log softmax(z/T)[k] = (e_k - p) / T`
fn dlogp(logp: &[f64], k: usize, temperature: f64) -> Vec<f64> {
    logp.iter()
        .enumerate()
        .map(|(i, lp)| (f64::from(u8::from(i == k)) - lp.exp()) / temperature)
        .collect()
}

/// Maps a prompt to stance logits over the label space.
pub trait StanceHead: Clone + Send + Sync + Serialize + DeserializeOwned {
    const NAME: &'static str;

    fn classes(&self) -> usize;

    /// Allocates any per-prompt parameters. Idempotent.
    fn prepare(&mut self, prompt: &PromptSpec);

    fn logits(&self, prompt: &PromptSpec) -> Vec<f64>;

    fn n_params(&self) -> usize;

    fn params(&self) -> Vec<f64>;

    fn set_params(&mut self, params: &[f64]) -> Result<()>;

    /// Adds the pull-back of `dlogits` into `grad[..n_params()]`.
    fn backprop(&self, prompt: &PromptSpec, dlogits: &[f64], grad: &mut [f64]);
}

/// Independent logits per question id, zero for unseen questions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "TabularFile", try_from = "TabularFile")]
pub struct TabularHead {
    classes: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TabularFile {
    classes: usize,
    logits: BTreeMap<String, Vec<f64>>,
}

impl From<TabularHead> for TabularFile {
    fn from(h: TabularHead) -> Self {
        let logits = h
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), h.weights[i * h.classes..(i + 1) * h.classes].to_vec()))
            .collect();
        TabularFile {
            classes: h.classes,
            logits,
        }
    }
}

impl TryFrom<TabularFile> for TabularHead {
    type Error = Error;

    fn try_from(f: TabularFile) -> Result<Self> {
        let mut h = TabularHead::new(f.classes);
        for (id, row) in &f.logits {
            h.set_logits(id, row)?;
        }
        Ok(h)
    }
}

impl TabularHead {
    pub fn new(classes: usize) -> Self {
        TabularHead {
            classes,
            ids: Vec::new(),
            index: HashMap::new(),
            weights: Vec::new(),
        }
    }

    fn row(&mut self, id: &str) -> usize {
        if let Some(r) = self.index.get(id) {
            return *r;
        }
        let r = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), r);
        self.weights.resize(self.weights.len() + self.classes, 0.0);
        r
    }

    pub fn set_logits(&mut self, question_id: &str, logits: &[f64]) -> Result<()> {
        if logits.len() != self.classes {
            return Err(Error::Dimension {
                expected: self.classes,
                got: logits.len(),
            });
        }
        let r = self.row(question_id);
        self.weights[r * self.classes..(r + 1) * self.classes].copy_from_slice(logits);
        Ok(())
    }

    pub fn logits_for(&self, question_id: &str) -> Option<&[f64]> {
        self.index
            .get(question_id)
            .map(|r| &self.weights[r * self.classes..(r + 1) * self.classes])
    }
}

impl StanceHead for TabularHead {
    const NAME: &'static str = "toy-tabular";

    fn classes(&self) -> usize {
        self.classes
    }

    fn prepare(&mut self, prompt: &PromptSpec) {
        self.row(&prompt.question_id);
    }

    fn logits(&self, prompt: &PromptSpec) -> Vec<f64> {
        self.logits_for(&prompt.question_id)
            .map_or_else(|| vec![0.0; self.classes], <[f64]>::to_vec)
    }

    fn n_params(&self) -> usize {
        self.weights.len()
    }

    fn params(&self) -> Vec<f64> {
        self.weights.clone()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.weights.len() {
            return Err(Error::Dimension {
                expected: self.weights.len(),
                got: params.len(),
            });
        }
        self.weights.copy_from_slice(params);
        Ok(())
    }

    fn backprop(&self, prompt: &PromptSpec, dlogits: &[f64], grad: &mut [f64]) {
        if let Some(r) = self.index.get(&prompt.question_id) {
            for (g, d) in grad[r * self.classes..(r + 1) * self.classes].iter_mut().zip(dlogits) {
                *g += d;
            }
        }
    }
}

/// Linear map from a hashed bag of words over the question text (plus a
/// bias) to stance logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizedHead {
    classes: usize,
    dim: usize,
    /// Row-major `classes x (dim + 1)`; the last column is the bias.
    weights: Vec<f64>,
}

pub const DEFAULT_FEATURE_DIM: usize = 1024;

impl FeaturizedHead {
    pub fn new(classes: usize, dim: usize) -> Self {
        FeaturizedHead {
            classes,
            dim,
            weights: vec![0.0; classes * (dim + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Sparse feature vector: unit-norm word indicators plus a bias of 1.
    pub fn features(&self, text: &str) -> Vec<(usize, f64)> {
        let mut buckets: Vec<usize> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(|w| (seed::stable_hash(&w.to_lowercase()) % self.dim as u64) as usize)
            .collect();
        buckets.sort_unstable();
        buckets.dedup();
        let scale = if buckets.is_empty() {
            0.0
        } else {
            1.0 / (buckets.len() as f64).sqrt()
        };
        let mut out: Vec<(usize, f64)> = buckets.into_iter().map(|b| (b, scale)).collect();
        out.push((self.dim, 1.0));
        out
    }
}

impl StanceHead for FeaturizedHead {
    const NAME: &'static str = "toy-featurized";

    fn classes(&self) -> usize {
        self.classes
    }

    fn prepare(&mut self, _prompt: &PromptSpec) {}

    fn logits(&self, prompt: &PromptSpec) -> Vec<f64> {
        let feats = self.features(&prompt.question_text);
        let width = self.dim + 1;
        (0..self.classes)
            .map(|c| feats.iter().map(|(j, x)| self.weights[c * width + j] * x).sum())
            .collect()
    }

    fn n_params(&self) -> usize {
        self.weights.len()
    }

    fn params(&self) -> Vec<f64> {
        self.weights.clone()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.weights.len() {
            return Err(Error::Dimension {
                expected: self.weights.len(),
                got: params.len(),
            });
        }
        self.weights.copy_from_slice(params);
        Ok(())
    }

    fn backprop(&self, prompt: &PromptSpec, dlogits: &[f64], grad: &mut [f64]) {
        let width = self.dim + 1;
        for (j, x) in self.features(&prompt.question_text) {
            for (c, d) in dlogits.iter().enumerate() {
                grad[c * width + j] += d * x;
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
struct Snapshot<H: StanceHead> {
    head: H,
    templates: Vec<f64>,
}

/// A toy policy over any [`StanceHead`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ToyPolicy<H: StanceHead> {
    backend: String,
    label_space: LabelSpace,
    head: H,
    /// Row-major `classes x TEMPLATES_PER_STANCE` template logits.
    templates: Vec<f64>,
    #[serde(default)]
    reference: Option<Snapshot<H>>,
}

pub type ToyTabularPolicy = ToyPolicy<TabularHead>;
pub type ToyFeaturizedPolicy = ToyPolicy<FeaturizedHead>;

impl ToyPolicy<TabularHead> {
    pub fn tabular(space: LabelSpace) -> Self {
        ToyPolicy::with_head(space, TabularHead::new(space.len()))
    }
}

impl ToyPolicy<FeaturizedHead> {
    pub fn featurized(space: LabelSpace) -> Self {
        Self::featurized_with_dim(space, DEFAULT_FEATURE_DIM)
    }

    pub fn featurized_with_dim(space: LabelSpace, dim: usize) -> Self {
        ToyPolicy::with_head(space, FeaturizedHead::new(space.len(), dim.max(1)))
    }
}

/// Per-sample quantities shared by the surrogate and its gradient.
struct Decisions {
    stance: usize,
    template: usize,
    stance_logp: Vec<f64>,
    template_logp: Vec<f64>,
}

impl<H: StanceHead> ToyPolicy<H> {
    pub fn with_head(space: LabelSpace, head: H) -> Self {
        ToyPolicy {
            backend: H::NAME.to_string(),
            label_space: space,
            templates: vec![0.0; head.classes() * TEMPLATES_PER_STANCE],
            head,
            reference: None,
        }
    }

    pub fn head(&self) -> &H {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut H {
        &mut self.head
    }

    pub fn from_checkpoint(value: &serde_json::Value) -> Result<Self> {
        let p: Self = serde_json::from_value(value.clone())?;
        if p.backend != H::NAME {
            return Err(Error::Config(format!(
                "checkpoint is for {:?}, not {:?}",
                p.backend,
                H::NAME
            )));
        }
        if p.templates.len() != p.head.classes() * TEMPLATES_PER_STANCE || p.head.classes() != p.label_space.len() {
            return Err(Error::Config("checkpoint shapes do not match its label space".into()));
        }
        Ok(p)
    }

    pub fn has_reference(&self) -> bool {
        self.reference.is_some()
    }

    /// Stance probabilities at `temperature`, in label-space order.
    pub fn stance_probs(&self, prompt: &PromptSpec, temperature: f64) -> Vec<f64> {
        log_softmax(&self.head.logits(prompt), temperature)
            .into_iter()
            .map(f64::exp)
            .collect()
    }

    fn template_logp(templates: &[f64], stance: usize, temperature: f64) -> Vec<f64> {
        log_softmax(
            &templates[stance * TEMPLATES_PER_STANCE..(stance + 1) * TEMPLATES_PER_STANCE],
            temperature,
        )
    }

    fn stance_at(&self, i: usize) -> Stance {
        self.label_space.stances()[i]
    }

    fn completion(&self, stance: usize, template: usize, logps: [f64; 2], temperature: f64) -> Completion {
        let s = self.stance_at(stance);
        Completion::new(
            render(&template_text(s, template), s),
            vec![s.index() as u32, TEMPLATE_TOKEN_BASE + template as u32],
            logps.to_vec(),
            temperature,
            self.label_space,
        )
    }

    fn decode(&self, tokens: &[u32]) -> Result<(usize, usize)> {
        let k = self.label_space.len();
        match tokens {
            [s, t]
                if (*s as usize) < k
                    && *t >= TEMPLATE_TOKEN_BASE
                    && ((t - TEMPLATE_TOKEN_BASE) as usize) < TEMPLATES_PER_STANCE =>
            {
                Ok((*s as usize, (t - TEMPLATE_TOKEN_BASE) as usize))
            }
            _ => Err(Error::Contract(format!("tokens {tokens:?} were not produced by a toy policy"))),
        }
    }

    fn decisions(&self, prompt: &PromptSpec, tokens: &[u32], temperature: f64) -> Result<Decisions> {
        let (stance, template) = self.decode(tokens)?;
        Ok(Decisions {
            stance,
            template,
            stance_logp: log_softmax(&self.head.logits(prompt), temperature),
            template_logp: Self::template_logp(&self.templates, stance, temperature),
        })
    }

    fn reference_logps(&self, prompt: &PromptSpec, d: &Decisions, temperature: f64) -> Option<[f64; 2]> {
        self.reference.as_ref().map(|r| {
            let s = log_softmax(&r.head.logits(prompt), temperature)[d.stance];
            let t = Self::template_logp(&r.templates, d.stance, temperature)[d.template];
            [s, t]
        })
    }

    /// Head parameters followed by template logits.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.head.params();
        p.extend_from_slice(&self.templates);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let n = self.head.n_params();
        if params.len() != n + self.templates.len() {
            return Err(Error::Dimension {
                expected: n + self.templates.len(),
                got: params.len(),
            });
        }
        self.head.set_params(&params[..n])?;
        self.templates.copy_from_slice(&params[n..]);
        Ok(())
    }

    /// Allocates parameters for every prompt in `prompts`.
    pub fn prepare<'a>(&mut self, prompts: impl IntoIterator<Item = &'a PromptSpec>) {
        for p in prompts {
            self.head.prepare(p);
        }
    }

    fn check_space(&self, prompt: &PromptSpec) -> Result<()> {
        if prompt.label_space != self.label_space {
            return Err(Error::Contract(format!(
                "prompt for {:?} uses a different label space",
                prompt.question_id
            )));
        }
        Ok(())
    }

    /// Mean cross-entropy of the target stances at temperature 1 and its
    /// gradient with respect to [`Self::params`].
    pub fn sft_objective(&mut self, batch: &[SftExample]) -> Result<(f64, Vec<f64>)> {
        let mut targets = Vec::with_capacity(batch.len());
        for ex in batch {
            self.check_space(&ex.prompt)?;
            let p = parse_in(&ex.target, self.label_space);
            match p.stance {
                Some(s) if p.is_well_formed() => targets.push(s),
                _ => {
                    return Err(Error::TrainingData(format!(
                        "target for {} is not a well-formed completion",
                        ex.prompt.question_id
                    )))
                }
            }
        }
        self.prepare(batch.iter().map(|ex| &ex.prompt));
        let mut grad = vec![0.0; self.params().len()];
        let mut loss = 0.0;
        if batch.is_empty() {
            return Ok((0.0, grad));
        }
        let scale = 1.0 / batch.len() as f64;
        for (ex, s) in batch.iter().zip(&targets) {
            let k = self.label_space.stances().iter().position(|x| x == s).unwrap_or(0);
            let logp = log_softmax(&self.head.logits(&ex.prompt), 1.0);
            loss -= logp[k] * scale;
            let d: Vec<f64> = dlogp(&logp, k, 1.0).iter().map(|g| -g * scale).collect();
            self.head.backprop(&ex.prompt, &d, &mut grad);
        }
        Ok((loss, grad))
    }

    /// Clipped surrogate minus `beta` times the k3 KL estimate, averaged
    /// over the batch, and its gradient with respect to [`Self::params`].
    ///
    /// The ratio is taken against each completion's recorded log-probability.
    pub fn surrogate(&mut self, batch: &[RlSample], clip_range: f64, beta: f64) -> Result<(f64, Vec<f64>, RlMetrics)> {
        if beta != 0.0 && self.reference.is_none() {
            return Err(Error::State("KL penalty requires a reference snapshot".into()));
        }
        for s in batch {
            self.check_space(&s.prompt)?;
            if !s.advantage.is_finite() {
                return Err(Error::Numeric(format!("non-finite advantage for {}", s.prompt.question_id)));
            }
        }
        self.prepare(batch.iter().map(|s| &s.prompt));
        let n_head = self.head.n_params();
        let mut grad = vec![0.0; n_head + self.templates.len()];
        let mut metrics = RlMetrics::default();
        if batch.is_empty() {
            return Ok((0.0, grad, metrics));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut objective = 0.0;
        for s in batch {
            let c = &s.completion;
            let d = self.decisions(&s.prompt, &c.token_ids, c.temperature)?;
            let new = [d.stance_logp[d.stance], d.template_logp[d.template]];
            let old: f64 = c.token_logprobs.iter().sum();
            let ratio = (new[0] + new[1] - old).exp();
            let a = s.advantage;
            let clipped = ratio.clamp(1.0 - clip_range, 1.0 + clip_range);
            objective += (ratio * a).min(clipped * a) * scale;
            let saturated = (a >= 0.0 && ratio > 1.0 + clip_range) || (a < 0.0 && ratio < 1.0 - clip_range);
            metrics.mean_ratio += ratio * scale;
            if saturated {
                metrics.clip_fraction += scale;
            }

            // Per-token weight on grad log pi.
            let mut w = [if saturated { 0.0 } else { a * ratio }; 2];
            if let Some(r) = self.reference_logps(&s.prompt, &d, c.temperature) {
                for t in 0..2 {
                    let delta = r[t] - new[t];
                    let k3 = delta.exp() - delta - 1.0;
                    metrics.mean_kl += k3 * scale;
                    objective -= beta * k3 * scale;
                    w[t] -= beta * (1.0 - delta.exp());
                }
            }

            let ds: Vec<f64> = dlogp(&d.stance_logp, d.stance, c.temperature)
                .iter()
                .map(|g| g * w[0] * scale)
                .collect();
            self.head.backprop(&s.prompt, &ds, &mut grad);
            let base = n_head + d.stance * TEMPLATES_PER_STANCE;
            for (j, g) in dlogp(&d.template_logp, d.template, c.temperature).iter().enumerate() {
                grad[base + j] += g * w[1] * scale;
            }
        }
        metrics.loss = -objective;
        Ok((objective, grad, metrics))
    }

    fn step(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        let mut p = self.params();
        for (x, g) in p.iter_mut().zip(grad) {
            *x += lr * g;
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("parameters became non-finite".into()));
        }
        self.set_params(&p)
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("temperature must be positive, got {t}")))
    }
}

impl<H: StanceHead + 'static> Policy for ToyPolicy<H> {
    fn backend(&self) -> String {
        self.backend.clone()
    }

    fn label_space(&self) -> LabelSpace {
        self.label_space
    }

    fn sample(&self, prompt: &PromptSpec, n: usize, temperature: f64, seed: u64) -> Result<Vec<Completion>> {
        check_temperature(temperature)?;
        if n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        self.check_space(prompt)?;
        let stance_logp = log_softmax(&self.head.logits(prompt), temperature);
        let mut rng = seed::rng(seed);
        Ok((0..n)
            .map(|_| {
                let s = draw(&stance_logp, &mut rng);
                let tl = Self::template_logp(&self.templates, s, temperature);
                let t = draw(&tl, &mut rng);
                self.completion(s, t, [stance_logp[s], tl[t]], temperature)
            })
            .collect())
    }

    fn greedy(&self, prompt: &PromptSpec) -> Result<Completion> {
        self.check_space(prompt)?;
        let stance_logp = log_softmax(&self.head.logits(prompt), 1.0);
        let s = argmax(&stance_logp);
        let tl = Self::template_logp(&self.templates, s, 1.0);
        let t = argmax(&tl);
        Ok(self.completion(s, t, [stance_logp[s], tl[t]], 1.0))
    }

    fn logprob(&self, prompt: &PromptSpec, tokens: &[u32], temperature: f64) -> Result<SequenceLogProb> {
        check_temperature(temperature)?;
        self.check_space(prompt)?;
        let d = self.decisions(prompt, tokens, temperature)?;
        Ok(SequenceLogProb {
            current: d.stance_logp[d.stance] + d.template_logp[d.template],
            reference: self.reference_logps(prompt, &d, temperature).map(|r| r[0] + r[1]),
        })
    }

    fn sft_update(&mut self, batch: &[SftExample], learning_rate: f64) -> Result<f64> {
        let (loss, grad) = self.sft_objective(batch)?;
        self.step(&grad, -learning_rate)?;
        Ok(loss)
    }

    fn rl_update(
        &mut self,
        batch: &[RlSample],
        clip_range: f64,
        kl_coefficient: f64,
        learning_rate: f64,
    ) -> Result<RlMetrics> {
        if self.reference.is_none() {
            return Err(Error::State("rl_update needs a reference snapshot".into()));
        }
        let (_, grad, metrics) = self.surrogate(batch, clip_range, kl_coefficient)?;
        self.step(&grad, learning_rate)?;
        Ok(metrics)
    }

    fn snapshot_reference(&mut self) -> Result<()> {
        self.reference = Some(Snapshot {
            head: self.head.clone(),
            templates: self.templates.clone(),
        });
        Ok(())
    }

    fn count_tokens(&self, text: &str) -> usize {
        WhitespaceTokens.count_tokens(text)
    }

    fn checkpoint(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::system_prompt;
    use crate::survey::Country;

    pub(crate) fn prompt(id: &str, text: &str, space: LabelSpace) -> PromptSpec {
        PromptSpec {
            system: system_prompt(Country::CH, space),
            question_id: id.into(),
            question_text: text.into(),
            label_space: space,
        }
    }

    #[test]
    fn templates_differ_in_length() {
        for s in Stance::ALL {
            let lens: Vec<usize> = (0..3).map(|t| template_text(s, t).split_whitespace().count()).collect();
            assert!(lens[0] < lens[1] && lens[1] < lens[2], "{lens:?}");
            assert!((100..115).contains(&lens[1]), "{lens:?}");
        }
    }

    #[test]
    fn samples_are_well_formed_and_consistent() {
        let mut p = ToyPolicy::tabular(LabelSpace::Ternary);
        p.head_mut().set_logits("q", &[0.3, -0.2, 0.1]).unwrap();
        let pr = prompt("q", "Raise taxes?", LabelSpace::Ternary);
        for c in p.sample(&pr, 50, 0.7, 9).unwrap() {
            assert_eq!(c.parse.tag_count(), 4);
            assert_eq!(c.token_ids.len(), c.token_logprobs.len());
            let lp = p.logprob(&pr, &c.token_ids, 0.7).unwrap();
            assert!((lp.current - c.logprob()).abs() < 1e-12);
            assert_eq!(lp.reference, None);
        }
    }

    #[test]
    fn rejects_bad_temperature_and_tokens() {
        let p = ToyPolicy::tabular(LabelSpace::Binary);
        let pr = prompt("q", "x", LabelSpace::Binary);
        assert!(matches!(p.sample(&pr, 1, 0.0, 1), Err(Error::Config(_))));
        assert!(matches!(p.logprob(&pr, &[2, 3], 1.0), Err(Error::Contract(_))));
        assert!(matches!(p.logprob(&pr, &[0], 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn rl_update_requires_reference() {
        let mut p = ToyPolicy::tabular(LabelSpace::Binary);
        assert!(matches!(p.rl_update(&[], 0.2, 0.0, 0.1), Err(Error::State(_))));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut p = ToyPolicy::featurized_with_dim(LabelSpace::Ternary, 16);
        let pr = prompt("q", "raise the fuel tax", LabelSpace::Ternary);
        let ex = SftExample {
            prompt: pr.clone(),
            target: render("because", Stance::No),
        };
        p.sft_update(&[ex], 0.5).unwrap();
        p.snapshot_reference().unwrap();
        let v = p.checkpoint().unwrap();
        let q = ToyFeaturizedPolicy::from_checkpoint(&v).unwrap();
        assert_eq!(q.params(), p.params());
        assert!(q.has_reference());
        assert!(ToyTabularPolicy::from_checkpoint(&v).is_err());

        let mut t = ToyPolicy::tabular(LabelSpace::Binary);
        t.head_mut().set_logits("b", &[1.0, 2.0]).unwrap();
        t.head_mut().set_logits("a", &[3.0, 4.0]).unwrap();
        let back = ToyTabularPolicy::from_checkpoint(&t.checkpoint().unwrap()).unwrap();
        assert_eq!(back.head().logits_for("b"), Some(&[1.0, 2.0][..]));
    }

    #[test]
    fn featurization_is_deterministic_and_shared() {
        let h = FeaturizedHead::new(2, 64);
        assert_eq!(h.features("Raise taxes now"), h.features("raise TAXES now!"));
        assert_eq!(h.features("").len(), 1);
    }
}
