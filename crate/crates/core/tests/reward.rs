use proptest::prelude::*;
use stancealign::reward::{total_reward, RewardWeights, TokenCounter, WhitespaceTokens};
use stancealign::schema::{parse, render};
use stancealign::{LabelSpace, Stance};

fn stance() -> impl Strategy<Value = Stance> {
    prop_oneof![Just(Stance::Yes), Just(Stance::No), Just(Stance::Neutral)]
}

fn words(n: usize) -> String {
    vec!["w"; n].join(" ")
}

struct CharTokens;

impl TokenCounter for CharTokens {
    fn count_tokens(&self, text: &str) -> usize {
        text.chars().count()
    }
}

#[test]
fn worked_examples() {
    let w = RewardWeights::default();
    let t = WhitespaceTokens;
    let space = LabelSpace::Binary;
    assert_eq!(total_reward(&render(&words(100), Stance::Yes), Stance::Yes, space, &w, &t).total, 2.0);
    assert_eq!(total_reward("", Stance::Yes, space, &w, &t).total, -1.0);
    let r = total_reward(&render(&words(110), Stance::No), Stance::Yes, space, &w, &t);
    assert!((r.total - 0.9).abs() < 1e-12);
}

#[test]
fn zero_weights_score_zero() {
    let r = total_reward(&render("a b", Stance::Yes), Stance::Yes, LabelSpace::Binary, &RewardWeights::zero(), &WhitespaceTokens);
    assert_eq!(r.total, 0.0);
}

#[test]
fn tokenizer_is_pluggable() {
    let w = RewardWeights {
        target_length: 3,
        ..RewardWeights::default()
    };
    let r = total_reward(&render("abc", Stance::Yes), Stance::Yes, LabelSpace::Binary, &w, &CharTokens);
    assert_eq!(r.r_length, 0.0);
    let r = total_reward(&render("abc", Stance::Yes), Stance::Yes, LabelSpace::Binary, &w, &WhitespaceTokens);
    assert_eq!(r.r_length, -2.0);
}

proptest! {
    #[test]
    fn total_is_the_weighted_sum(
        text in "[a-z <>/A-C)]{0,120}",
        truth in stance(),
        af in -2.0f64..2.0, al in -0.1f64..0.1, ac in -2.0f64..2.0,
        target in 1usize..200,
    ) {
        let w = RewardWeights { alpha_format: af, alpha_length: al, alpha_correct: ac, target_length: target };
        let r = total_reward(&text, truth, LabelSpace::Ternary, &w, &WhitespaceTokens);
        let p = parse(&text);
        let len = p.reasoning_body.as_deref().map_or(0, |b| b.split_whitespace().count());
        let want = af * f64::from(p.tag_count())
            - al * (len as f64 - target as f64).abs()
            + ac * f64::from(u8::from(p.stance == Some(truth)));
        prop_assert!((r.total - want).abs() < 1e-9);
        prop_assert!(r.r_format <= 4 && r.r_correct <= 1 && r.r_length <= 0.0);
    }

    #[test]
    fn default_reward_never_exceeds_two(text in ".{0,300}", truth in stance()) {
        let r = total_reward(&text, truth, LabelSpace::Ternary, &RewardWeights::default(), &WhitespaceTokens);
        prop_assert!(r.total <= 2.0 + 1e-12);
    }

    #[test]
    fn maximum_needs_target_length_and_correct_answer(n in 0usize..250, s in stance(), truth in stance()) {
        let r = total_reward(&render(&words(n), s), truth, LabelSpace::Ternary, &RewardWeights::default(), &WhitespaceTokens);
        prop_assert_eq!(r.total == 2.0, n == 100 && s == truth);
    }

    #[test]
    fn length_penalty_is_symmetric(k in 0usize..100, s in stance()) {
        let w = RewardWeights::default();
        let above = total_reward(&render(&words(100 + k), s), s, LabelSpace::Ternary, &w, &WhitespaceTokens);
        let below = total_reward(&render(&words(100 - k), s), s, LabelSpace::Ternary, &w, &WhitespaceTokens);
        prop_assert_eq!(above.total, below.total);
        prop_assert_eq!(above.r_length, -(k as f64));
    }
}
