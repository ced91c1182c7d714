//! Composite reward: weighted format, length and correctness terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{parse_in, ParseResult};
use crate::stance::{LabelSpace, Stance};

/// Counts tokens of a reasoning trace with the active policy's tokenizer.
pub trait TokenCounter {
    fn count_tokens(&self, text: &str) -> usize;
}

/// Whitespace-delimited words; the tokenizer used by the toy policies.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokens;

impl TokenCounter for WhitespaceTokens {
    fn count_tokens(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub alpha_format: f64,
    pub alpha_length: f64,
    pub alpha_correct: f64,
    /// Desired reasoning length in tokens.
    pub target_length: usize,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            alpha_format: 0.25,
            alpha_length: 0.01,
            alpha_correct: 1.0,
            target_length: 100,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.alpha_format, self.alpha_length, self.alpha_correct]
            .iter()
            .all(|w| w.is_finite());
        if !finite {
            return Err(Error::Config("reward weights must be finite".into()));
        }
        if self.target_length < 1 {
            return Err(Error::Config("target length must be at least 1".into()));
        }
        Ok(())
    }

    /// All-zero weights: every completion scores 0.
    pub fn zero() -> Self {
        RewardWeights {
            alpha_format: 0.0,
            alpha_length: 0.0,
            alpha_correct: 0.0,
            target_length: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_format: u8,
    pub r_length: f64,
    pub r_correct: u8,
    pub total: f64,
}

/// Number of correctly placed tags (0..=4).
pub fn format_reward(p: &ParseResult) -> u8 {
    p.tag_count()
}

/// `-|L - L*|`
pub fn length_reward(trace_length: usize, target_length: usize) -> f64 {
    -(trace_length.abs_diff(target_length) as f64)
}

/// 1 iff the prediction is resolved and equals the truth.
pub fn correctness_reward(predicted: Option<Stance>, truth: Stance) -> u8 {
    u8::from(predicted == Some(truth))
}

/// Scores a completion against the ground-truth stance.
///
/// `L` counts tokens of the reasoning body only; an absent body has length 0.
pub fn total_reward(
    completion: &str,
    truth: Stance,
    space: LabelSpace,
    weights: &RewardWeights,
    tokens: &dyn TokenCounter,
) -> RewardBreakdown {
    let parsed = parse_in(completion, space);
    score_parsed(&parsed, truth, weights, tokens)
}

/// As [`total_reward`] for an already parsed completion.
pub fn score_parsed(
    parsed: &ParseResult,
    truth: Stance,
    weights: &RewardWeights,
    tokens: &dyn TokenCounter,
) -> RewardBreakdown {
    let r_format = format_reward(parsed);
    let len = parsed
        .reasoning_body
        .as_deref()
        .map_or(0, |b| tokens.count_tokens(b));
    let r_length = length_reward(len, weights.target_length);
    let r_correct = correctness_reward(parsed.stance, truth);
    let total = weights.alpha_format * f64::from(r_format)
        + weights.alpha_length * r_length
        + weights.alpha_correct * f64::from(r_correct);
    RewardBreakdown {
        r_format,
        r_length,
        r_correct,
        total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{parse, render};
    use Stance::*;

    fn words(n: usize) -> String {
        vec!["w"; n].join(" ")
    }

    #[test]
    fn format_table() {
        assert_eq!(format_reward(&parse(&render("x", Yes))), 4);
        assert_eq!(format_reward(&parse("")), 0);
        assert_eq!(format_reward(&parse("<reasoning>x</reasoning><answer>A")), 3);
    }

    #[test]
    fn length_table() {
        assert_eq!(length_reward(100, 100), 0.0);
        assert_eq!(length_reward(0, 100), -100.0);
        for k in 0..=100 {
            assert_eq!(length_reward(100 + k, 100), length_reward(100 - k, 100));
        }
    }

    #[test]
    fn correctness_table() {
        assert_eq!(correctness_reward(Some(Yes), Yes), 1);
        assert_eq!(correctness_reward(None, Yes), 0);
        assert_eq!(correctness_reward(Some(No), Yes), 0);
    }

    #[test]
    fn worked_totals() {
        let w = RewardWeights::default();
        let t = WhitespaceTokens;
        let best = total_reward(&render(&words(100), Yes), Yes, LabelSpace::Binary, &w, &t);
        assert_eq!(best.total, 2.0);
        let empty = total_reward("", Yes, LabelSpace::Binary, &w, &t);
        assert_eq!(empty.total, -1.0);
        let wrong = total_reward(&render(&words(110), No), Yes, LabelSpace::Binary, &w, &t);
        assert_eq!(wrong.total, 0.9);
        assert_eq!((wrong.r_format, wrong.r_length, wrong.r_correct), (4, -10.0, 0));
    }

    #[test]
    fn neutral_answer_outside_binary_space_scores_zero() {
        let w = RewardWeights::default();
        let r = total_reward(&render("x", Neutral), Neutral, LabelSpace::Binary, &w, &WhitespaceTokens);
        assert_eq!(r.r_correct, 0);
    }

    #[test]
    fn weights_validation() {
        assert!(RewardWeights::default().validate().is_ok());
        let mut w = RewardWeights::default();
        w.alpha_length = f64::NAN;
        assert!(w.validate().is_err());
        w = RewardWeights::default();
        w.target_length = 0;
        assert!(w.validate().is_err());
    }
}
