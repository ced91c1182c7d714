use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::survey::{Dataset, UnitProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    TopicStratified,
    Random,
    FixedExternal,
}

/// A train/test partition of question ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub strategy: SplitStrategy,
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl Split {
    /// A split shipped with the data (e.g. the fixed Wahl-o-Mat test set).
    pub fn fixed(train_ids: Vec<String>, test_ids: Vec<String>) -> Result<Split> {
        let s = Split {
            strategy: SplitStrategy::FixedExternal,
            seed: 0,
            train_ids,
            test_ids,
        };
        s.check_disjoint()?;
        Ok(s)
    }

    fn check_disjoint(&self) -> Result<()> {
        let train: BTreeSet<&str> = self.train_ids.iter().map(String::as_str).collect();
        if let Some(q) = self.test_ids.iter().find(|q| train.contains(q.as_str())) {
            return Err(Error::Split(format!("question {q} is in both train and test")));
        }
        Ok(())
    }

    /// Checks that every id is known to `dataset` and the parts are disjoint.
    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        self.check_disjoint()?;
        for q in self.train_ids.iter().chain(&self.test_ids) {
            if dataset.question(q).is_none() {
                return Err(Error::Split(format!("unknown question id {q:?}")));
            }
        }
        Ok(())
    }

    /// Train questions the unit actually answered, in split order.
    pub fn unit_train<'a>(&'a self, unit: &UnitProfile) -> Vec<&'a str> {
        self.train_ids
            .iter()
            .filter(|q| unit.responses.contains_key(q.as_str()))
            .map(String::as_str)
            .collect()
    }

    /// Test questions the unit actually answered, in split order.
    pub fn unit_test<'a>(&'a self, unit: &UnitProfile) -> Vec<&'a str> {
        self.test_ids
            .iter()
            .filter(|q| unit.responses.contains_key(q.as_str()))
            .map(String::as_str)
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Split> {
        let text = std::fs::read_to_string(path)?;
        let s: Split = serde_json::from_str(&text)?;
        s.check_disjoint()?;
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Holds out one question per topic, chosen uniformly with a seeded RNG.
pub fn split_topic_stratified(dataset: &Dataset, seed: u64) -> Result<Split> {
    let mut by_topic: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for q in &dataset.questions {
        let topic = q
            .topic
            .as_deref()
            .filter(|t| !t.trim().is_empty())
            .ok_or_else(|| Error::Split(format!("question {} has no topic", q.id)))?;
        by_topic.entry(topic).or_default().push(&q.id);
    }
    if by_topic.is_empty() {
        return Err(Error::Split("dataset has no topics".into()));
    }
    let mut rng = seed::rng(seed);
    let mut held_out = BTreeSet::new();
    for ids in by_topic.values() {
        held_out.insert(ids[rng.random_range(0..ids.len())]);
    }
    Ok(partition(dataset, &held_out, SplitStrategy::TopicStratified, seed))
}

/// Uniform sample of `n_test` questions without replacement.
pub fn split_random(dataset: &Dataset, n_test: usize, seed: u64) -> Result<Split> {
    let n = dataset.questions.len();
    if n_test == 0 || n_test >= n {
        return Err(Error::Split(format!(
            "n_test must lie in 1..{n}, got {n_test}"
        )));
    }
    let mut rng = seed::rng(seed);
    let held_out: BTreeSet<&str> = sample(&mut rng, n, n_test)
        .into_iter()
        .map(|i| dataset.questions[i].id.as_str())
        .collect();
    Ok(partition(dataset, &held_out, SplitStrategy::Random, seed))
}

fn partition(dataset: &Dataset, held_out: &BTreeSet<&str>, strategy: SplitStrategy, seed: u64) -> Split {
    let (test, train): (Vec<_>, Vec<_>) = dataset
        .questions
        .iter()
        .map(|q| q.id.clone())
        .partition(|id| held_out.contains(id.as_str()));
    Split {
        strategy,
        seed,
        train_ids: train,
        test_ids: test,
    }
}
