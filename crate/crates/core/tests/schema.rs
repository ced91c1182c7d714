use proptest::prelude::*;
use stancealign::schema::{extract_stance, parse, parse_in, render, TAGS};
use stancealign::{LabelSpace, Stance};

fn stance() -> impl Strategy<Value = Stance> {
    prop_oneof![Just(Stance::Yes), Just(Stance::No), Just(Stance::Neutral)]
}

/// Text built from schema fragments and filler, so tags collide often.
fn tagged_soup() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        Just("<reasoning>".to_string()),
        Just("</reasoning>".to_string()),
        Just("<answer>".to_string()),
        Just("</answer>".to_string()),
        Just("A) Yes".to_string()),
        Just("B".to_string()),
        "[a-z <>/]{0,6}",
    ];
    prop::collection::vec(piece, 0..12).prop_map(|v| v.concat())
}

/// Reference scorer written against the rule, not the implementation:
/// walk the tags in order, each must occur exactly once and start at or
/// after the end of the previous one.
fn oracle_tag_count(text: &str) -> u8 {
    let mut cursor = 0usize;
    let mut n = 0;
    for tag in TAGS {
        let positions: Vec<usize> = (0..text.len())
            .filter(|i| text.is_char_boundary(*i) && text[*i..].starts_with(tag))
            .collect();
        if positions.len() != 1 || positions[0] < cursor {
            break;
        }
        cursor = positions[0] + tag.len();
        n += 1;
    }
    n
}

fn has_duplicate_tag(text: &str) -> bool {
    TAGS.iter().any(|t| text.matches(t).count() > 1)
}

#[test]
fn rendered_example() {
    assert_eq!(
        render("costs too high", Stance::No),
        "<reasoning>costs too high</reasoning><answer>B) No</answer>"
    );
}

#[test]
fn hand_built_adversarial_cases() {
    let cases: &[(&str, u8)] = &[
        ("<reasoning>x</reasoning><answer>A) Yes</answer>", 4),
        ("<reasoning>x</reasoning><answer>A) Yes", 3),
        ("<answer>A) Yes</answer><reasoning>x</reasoning>", 2),
        ("<reasoning>x<answer>A</answer></reasoning>", 2),
        ("<reasoning><reasoning>x</reasoning><answer>A</answer>", 0),
        ("<reasoning>x</reasoning></reasoning><answer>A</answer>", 1),
        ("</reasoning><reasoning>x<answer>A</answer>", 1),
        ("<reasoning>x</reasoning><answer>A</answer></answer>", 3),
        ("", 0),
        ("plain text with A) Yes", 0),
    ];
    for (text, want) in cases {
        assert_eq!(parse(text).tag_count(), *want, "{text:?}");
        assert_eq!(oracle_tag_count(text), *want, "oracle disagrees on {text:?}");
    }
}

#[test]
fn stance_extraction_examples() {
    assert_eq!(extract_stance("A) Yes", LabelSpace::Binary), Some(Stance::Yes));
    assert_eq!(extract_stance("c", LabelSpace::Ternary), Some(Stance::Neutral));
    assert_eq!(extract_stance("c", LabelSpace::Binary), None);
    assert_eq!(extract_stance("I refuse", LabelSpace::Ternary), None);
    assert_eq!(extract_stance("  b)  ", LabelSpace::Binary), Some(Stance::No));
    assert_eq!(extract_stance("neutral, really", LabelSpace::Ternary), Some(Stance::Neutral));
    assert_eq!(extract_stance("A) No", LabelSpace::Binary), Some(Stance::Yes));
}

#[test]
fn parse_never_fails_on_fuzzed_bytes() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
    let alphabet: Vec<u8> = b"<>/reasoningaswAB) YesNo\n\xff\xc3".to_vec();
    for i in 0..100_000 {
        let n = rng.random_range(0..64);
        let bytes: Vec<u8> = (0..n)
            .map(|_| {
                if i % 2 == 0 {
                    rng.random()
                } else {
                    alphabet[rng.random_range(0..alphabet.len())]
                }
            })
            .collect();
        let text = String::from_utf8_lossy(&bytes);
        let p = parse(&text);
        assert!(p.tag_count() <= 4);
        if p.stance.is_some() {
            assert!(p.answer_body.is_some());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn render_parse_round_trip(reasoning in any::<String>(), s in stance()) {
        let p = parse(&render(&reasoning, s));
        prop_assert_eq!(p.stance, Some(s));
        prop_assert_eq!(p.reasoning_body.as_deref(), Some(reasoning.as_str()));
        prop_assert_eq!(p.answer_body, Some(s.coded()));
    }
}

proptest! {
    #[test]
    fn well_formed_render_scores_four(reasoning in "[^<>]{1,80}", s in stance()) {
        prop_assert_eq!(parse(&render(&reasoning, s)).tag_count(), 4);
    }

    #[test]
    fn adversarial_reasoning_keeps_answer(reasoning in tagged_soup(), s in stance()) {
        let p = parse(&render(&reasoning, s));
        prop_assert_eq!(p.stance, Some(s));
        prop_assert_eq!(p.reasoning_body.as_deref(), Some(reasoning.as_str()));
    }

    #[test]
    fn tag_count_matches_oracle(text in tagged_soup()) {
        prop_assert_eq!(parse(&text).tag_count(), oracle_tag_count(&text));
    }

    #[test]
    fn deleting_tags_never_raises_the_count(text in tagged_soup(), a in 0usize..200, len in 1usize..12) {
        prop_assume!(!has_duplicate_tag(&text));
        let chars: Vec<char> = text.chars().collect();
        prop_assume!(!chars.is_empty());
        let start = a % chars.len();
        let end = (start + len).min(chars.len());
        let shorter: String = chars[..start].iter().chain(&chars[end..]).collect();
        prop_assume!(TAGS.iter().all(|t| shorter.matches(t).count() <= text.matches(t).count()));
        prop_assert!(parse(&shorter).tag_count() <= parse(&text).tag_count());
    }

    #[test]
    fn binary_space_never_yields_neutral(text in tagged_soup()) {
        prop_assert_ne!(parse_in(&text, LabelSpace::Binary).stance, Some(Stance::Neutral));
    }
}
