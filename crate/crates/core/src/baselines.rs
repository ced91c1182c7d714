//! Evaluation runs and the non-trained baselines.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{macro_f1, RunScores};
use crate::par::{self, Execution};
use crate::policy::{system_prompt, Policy, PromptSpec};
use crate::seed;
use crate::stance::{LabelSpace, Stance};
use crate::survey::{Dataset, Split, UnitProfile};

/// Modal stance; ties go to the earlier of Yes, No, Neutral.
pub fn majority_baseline(train_responses: &[Stance]) -> Result<Stance> {
    if train_responses.is_empty() {
        return Err(Error::Metric("majority baseline needs train answers".into()));
    }
    let mut counts = [0usize; 3];
    for s in train_responses {
        counts[s.index()] += 1;
    }
    let best = Stance::ALL
        .into_iter()
        .max_by(|a, b| counts[a.index()].cmp(&counts[b.index()]).then(b.index().cmp(&a.index())))
        .expect("three stances");
    Ok(best)
}

/// Uniform draw over the label space.
pub fn random_prediction(space: LabelSpace, rng: &mut seed::Rng) -> Stance {
    let s = space.stances();
    s[rng.random_range(0..s.len())]
}

/// Macro-F1 of `trials` independent uniform-random prediction vectors.
pub fn random_baseline_trials(truths: &[Stance], space: LabelSpace, trials: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = seed::rng(seed);
    (0..trials)
        .map(|_| {
            let p: Vec<Option<Stance>> = truths.iter().map(|_| Some(random_prediction(space, &mut rng))).collect();
            macro_f1(&p, truths, space)
        })
        .collect()
}

/// Test questions the unit answered, with their true stances.
pub fn test_items<'a>(unit: &UnitProfile, split: &'a Split) -> (Vec<&'a str>, Vec<Stance>) {
    split
        .unit_test(unit)
        .into_iter()
        .filter_map(|q| unit.response(q).map(|s| (q, s)))
        .unzip()
}

pub fn train_responses(unit: &UnitProfile, split: &Split) -> Vec<Stance> {
    split
        .unit_train(unit)
        .into_iter()
        .filter_map(|q| unit.response(q))
        .collect()
}

/// Seeds of the evaluation runs derived from one base seed.
pub fn eval_seeds(base: u64, n_runs: usize) -> Vec<u64> {
    (0..n_runs).map(|i| seed::derive(base, &[0xe7a1, i as u64])).collect()
}

/// `n_runs` stochastic evaluation runs: one sample per test question per run.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_unit(
    policy: &dyn Policy,
    dataset: &Dataset,
    unit: &UnitProfile,
    split: &Split,
    method: &str,
    temperature: f64,
    seeds: &[u64],
    exec: Execution,
) -> Result<Vec<RunScores>> {
    let (qids, truths) = test_items(unit, split);
    if qids.is_empty() {
        return Err(Error::Metric(format!("unit {} has no test questions", unit.unit_id)));
    }
    let prompts: Vec<PromptSpec> = qids
        .iter()
        .map(|q| PromptSpec::for_question(dataset, q))
        .collect::<Result<_>>()?;
    let runs = par::map_range(exec, seeds.len(), |r| -> Result<RunScores> {
        let preds: Vec<Option<Stance>> = prompts
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let s = seed::derive(seeds[r], &[i as u64]);
                Ok(policy.sample(p, 1, temperature, s)?.remove(0).stance())
            })
            .collect::<Result<_>>()?;
        RunScores::score(&unit.unit_id, method, r + 1, &qids, &preds, &truths, dataset.label_space)
    });
    runs.into_iter().collect()
}

/// Share of the unit's train questions whose greedy answer is correct.
pub fn greedy_train_accuracy(policy: &dyn Policy, dataset: &Dataset, unit: &UnitProfile, split: &Split) -> Result<f64> {
    let qs = split.unit_train(unit);
    if qs.is_empty() {
        return Err(Error::Metric("no train questions".into()));
    }
    let mut hits = 0;
    for q in &qs {
        let c = policy.greedy(&PromptSpec::for_question(dataset, q)?)?;
        if c.stance() == unit.response(q) {
            hits += 1;
        }
    }
    Ok(hits as f64 / qs.len() as f64)
}

/// Scores a fixed per-run predictor over the unit's test questions.
pub fn evaluate_predictor(
    dataset: &Dataset,
    unit: &UnitProfile,
    split: &Split,
    method: &str,
    seeds: &[u64],
    predict: impl Fn(&str, &mut seed::Rng) -> Result<Option<Stance>>,
) -> Result<Vec<RunScores>> {
    let (qids, truths) = test_items(unit, split);
    if qids.is_empty() {
        return Err(Error::Metric(format!("unit {} has no test questions", unit.unit_id)));
    }
    seeds
        .iter()
        .enumerate()
        .map(|(r, s)| {
            let mut rng = seed::rng(*s);
            let preds: Vec<Option<Stance>> = qids.iter().map(|q| predict(q, &mut rng)).collect::<Result<_>>()?;
            RunScores::score(&unit.unit_id, method, r + 1, &qids, &preds, &truths, dataset.label_space)
        })
        .collect()
}

pub fn evaluate_majority(dataset: &Dataset, unit: &UnitProfile, split: &Split, seeds: &[u64]) -> Result<Vec<RunScores>> {
    let m = majority_baseline(&train_responses(unit, split))?;
    evaluate_predictor(dataset, unit, split, "majority", seeds, |_, _| Ok(Some(m)))
}

pub fn evaluate_random(dataset: &Dataset, unit: &UnitProfile, split: &Split, seeds: &[u64]) -> Result<Vec<RunScores>> {
    let space = dataset.label_space;
    evaluate_predictor(dataset, unit, split, "random", seeds, |_, rng| Ok(Some(random_prediction(space, rng))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclConfig {
    /// Maximum demonstrations; `None` includes every same-topic pair.
    pub context_limit: Option<usize>,
    /// Demonstrations drawn from all train questions when the dataset has
    /// no topics.
    pub topicless_subset: usize,
}

impl Default for IclConfig {
    fn default() -> Self {
        IclConfig {
            context_limit: None,
            topicless_subset: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclPrompt {
    pub text: String,
    /// `(question id, answer)` in prompt order.
    pub demonstrations: Vec<(String, Stance)>,
    /// No demonstrations were available.
    pub empty: bool,
}

/// Few-shot prompt: the unit's answers to same-topic train questions (a
/// seeded random subset when over the limit, or when the dataset has no
/// topics), followed by the test question.
pub fn icl_build_prompt(
    dataset: &Dataset,
    unit: &UnitProfile,
    test_question: &str,
    split: &Split,
    config: &IclConfig,
    seed: u64,
) -> Result<IclPrompt> {
    let q = dataset
        .question(test_question)
        .ok_or_else(|| Error::Config(format!("unknown question {test_question:?}")))?;
    let answered: Vec<&str> = split
        .unit_train(unit)
        .into_iter()
        .filter(|t| unit.response(t).is_some())
        .collect();
    let (pool, limit): (Vec<&str>, Option<usize>) = match &q.topic {
        Some(topic) => (
            answered
                .into_iter()
                .filter(|t| dataset.question(t).and_then(|x| x.topic.as_ref()) == Some(topic))
                .collect(),
            config.context_limit,
        ),
        None => {
            let lim = config.context_limit.map_or(config.topicless_subset, |l| l.min(config.topicless_subset));
            (answered, Some(lim))
        }
    };
    let chosen: Vec<&str> = match limit {
        Some(k) if k < pool.len() => {
            let mut rng = seed::rng(seed::derive(seed, &[seed::stable_hash(test_question)]));
            let keep: BTreeSet<usize> = sample(&mut rng, pool.len(), k).into_iter().collect();
            pool.iter()
                .enumerate()
                .filter(|(i, _)| keep.contains(i))
                .map(|(_, q)| *q)
                .collect()
        }
        _ => pool,
    };
    let demonstrations: Vec<(String, Stance)> = chosen
        .iter()
        .map(|d| (d.to_string(), unit.response(d).expect("filtered to answered")))
        .collect();
    let mut text = system_prompt(dataset.country(), dataset.label_space);
    text.push_str("\n\nHere are the voter's answers to related questions.\n");
    for (d, s) in &demonstrations {
        let dq = dataset.question(d).expect("split validated against dataset");
        text.push_str(&format!("\nQuestion: {}\nAnswer: {}\n", dq.text, s.coded()));
    }
    text.push_str(&format!("\nQuestion: {}\n", q.text));
    Ok(IclPrompt {
        text,
        empty: demonstrations.is_empty(),
        demonstrations,
    })
}

fn word_set(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.len() > 2)
        .map(str::to_lowercase)
        .collect()
}

/// Offline stand-in for an in-context learner: a vote over the
/// demonstrations weighted by word overlap (Jaccard) with the test question,
/// falling back to an unweighted vote, then to Yes.
pub fn icl_toy_predict(dataset: &Dataset, prompt: &IclPrompt, test_question: &str) -> Stance {
    let target = dataset.question(test_question).map(|q| word_set(&q.text)).unwrap_or_default();
    let mut weighted: BTreeMap<Stance, f64> = BTreeMap::new();
    let mut plain: Vec<Stance> = Vec::new();
    for (d, s) in &prompt.demonstrations {
        let w = dataset.question(d).map(|q| word_set(&q.text)).unwrap_or_default();
        let inter = w.intersection(&target).count() as f64;
        let uni = w.union(&target).count() as f64;
        if uni > 0.0 && inter > 0.0 {
            *weighted.entry(*s).or_default() += inter / uni;
        }
        plain.push(*s);
    }
    let best = Stance::ALL
        .into_iter()
        .filter(|s| dataset.label_space.contains(*s))
        .fold(None::<(Stance, f64)>, |acc, s| {
            let w = weighted.get(&s).copied().unwrap_or(0.0);
            match acc {
                Some((_, bw)) if bw >= w => acc,
                _ => Some((s, w)),
            }
        });
    match best {
        Some((s, w)) if w > 0.0 => s,
        _ => majority_baseline(&plain).unwrap_or(Stance::Yes),
    }
}

pub fn evaluate_icl(
    dataset: &Dataset,
    unit: &UnitProfile,
    split: &Split,
    config: &IclConfig,
    seeds: &[u64],
) -> Result<Vec<RunScores>> {
    evaluate_predictor(dataset, unit, split, "icl", seeds, |q, rng| {
        let p = icl_build_prompt(dataset, unit, q, split, config, rng.random())?;
        Ok(Some(icl_toy_predict(dataset, &p, q)))
    })
}
