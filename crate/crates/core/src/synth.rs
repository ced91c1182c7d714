//! Deterministic demo datasets with the shape of the real surveys.
//!
//! Every question carries one cue word whose lean (progressive or
//! conservative) drives the answers: a unit at ideology `theta` (negative is
//! left) leans towards Yes on an item of lean `l` with strength `-theta * l`,
//! plus logistic noise. Centrists are therefore the least predictable.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng as _;

use crate::error::Result;
use crate::seed;
use crate::sft::{CONSERVATIVE_CUES, PROGRESSIVE_CUES};
use crate::stance::{LabelSpace, Stance};
use crate::survey::{
    anes_ideologies, split_random, split_topic_stratified, Country, Dataset, Question, RecodingScheme, Split, Survey,
    UnitKind, UnitProfile,
};

const STRENGTH: f64 = 3.0;

const SMARTVOTE_TOPICS: [&str; 12] = [
    "Welfare and family",
    "Health",
    "Education",
    "Migration",
    "Society and ethics",
    "Finance and taxes",
    "Economy",
    "Energy and transport",
    "Environment",
    "Political system",
    "Security",
    "Foreign policy",
];

const VERBS: [&str; 6] = ["expand", "increase funding for", "prioritise", "strengthen", "support", "extend"];
const OBJECTS: [&str; 10] = [
    "programmes", "rules", "budgets", "measures", "schemes", "initiatives", "plans", "targets", "projects", "services",
];
const QUALIFIERS: [&str; 5] = [
    "over the next decade",
    "at the national level",
    "in rural regions",
    "in the cities",
    "starting next year",
];

/// Party ideology positions, left negative.
const SWISS: [(&str, f64); 6] = [
    ("SP", -0.8),
    ("Green Party", -0.9),
    ("GLP", -0.2),
    ("The Center", 0.1),
    ("FDP", 0.5),
    ("SVP", 0.9),
];
const GERMAN: [(&str, f64); 6] = [
    ("Die Linke", -0.9),
    ("Grüne", -0.7),
    ("SPD", -0.3),
    ("FDP", 0.3),
    ("CDU/CSU", 0.5),
    ("AfD", 0.95),
];

/// Wahl-o-Mat train questions answered per party.
const WOM_TRAIN_COUNTS: [(&str, usize); 6] = [
    ("CDU/CSU", 646),
    ("SPD", 760),
    ("Grüne", 722),
    ("FDP", 760),
    ("Die Linke", 646),
    ("AfD", 722),
];
const WOM_TRAIN: usize = 760;
const WOM_TEST: usize = 30;
const ANES_QUESTIONS: usize = 79;
const ANES_TEST: usize = 12;

struct Item {
    question: Question,
    lean: f64,
}

fn cue_pool(n_each: usize) -> Vec<(&'static str, f64)> {
    let p = PROGRESSIVE_CUES.iter().take(n_each).map(|c| (*c, 1.0));
    let c = CONSERVATIVE_CUES.iter().take(n_each).map(|c| (*c, -1.0));
    p.interleave_with(c)
}

trait Interleave<T>: Iterator<Item = T> + Sized {
    fn interleave_with(self, other: impl Iterator<Item = T>) -> Vec<T> {
        let mut out = Vec::new();
        let mut b = other;
        for x in self {
            out.push(x);
            out.extend(b.next());
        }
        out.extend(b);
        out
    }
}

impl<T, I: Iterator<Item = T>> Interleave<T> for I {}

fn item(id: String, actor: &str, cue: (&str, f64), topic: Option<&str>, rng: &mut seed::Rng) -> Item {
    let verb = VERBS[rng.random_range(0..VERBS.len())];
    let object = OBJECTS[rng.random_range(0..OBJECTS.len())];
    let qualifier = QUALIFIERS[rng.random_range(0..QUALIFIERS.len())];
    let text = format!("Should {actor} {verb} {} {object} {qualifier}?", cue.0);
    Item {
        question: Question {
            id,
            text,
            topic: topic.map(str::to_string),
            raw_options: Vec::new(),
            scheme_maps: BTreeMap::new(),
        },
        lean: cue.1,
    }
}

fn logistic_noise(rng: &mut seed::Rng) -> f64 {
    let u: f64 = rng.random_range(1e-12..1.0 - 1e-12);
    (u / (1.0 - u)).ln()
}

fn latent(theta: f64, lean: f64, rng: &mut seed::Rng) -> f64 {
    -theta * lean * STRENGTH + logistic_noise(rng)
}

/// Neutral band half-width; wider on the right.
fn neutral_band(theta: f64) -> f64 {
    1.0 + 1.5 * theta.max(0.0)
}

fn ternary(x: f64, theta: f64) -> Stance {
    let b = neutral_band(theta);
    if x > b {
        Stance::Yes
    } else if x < -b {
        Stance::No
    } else {
        Stance::Neutral
    }
}

fn binary(x: f64) -> Stance {
    if x >= 0.0 {
        Stance::Yes
    } else {
        Stance::No
    }
}

fn profile(unit_id: String, kind: UnitKind, country: Country, party: &str) -> UnitProfile {
    UnitProfile {
        unit_id,
        kind,
        country,
        party_or_ideology: party.to_string(),
        group: None,
        responses: BTreeMap::new(),
        raw_responses: BTreeMap::new(),
        comments: BTreeMap::new(),
    }
}

fn slug(s: &str) -> String {
    s.chars()
        .filter_map(|c| {
            if c.is_ascii_alphanumeric() {
                Some(c.to_ascii_lowercase())
            } else if c == ' ' || c == '/' {
                Some('-')
            } else {
                None
            }
        })
        .collect()
}

fn smartvote_items(seed: u64) -> Vec<Item> {
    let mut rng = seed::rng(seed::derive(seed, &[0x5a, 0]));
    let cues = cue_pool(8);
    let mut items = Vec::new();
    for (t, topic) in SMARTVOTE_TOPICS.iter().enumerate() {
        for k in 0..5 {
            let cue = cues[(t * 5 + k) % cues.len()];
            items.push(item(format!("sv{:02}_{k}", t + 1), "Switzerland", cue, Some(topic), &mut rng));
        }
    }
    items
}

fn smartvote_candidates(items: &[Item], per_party: usize, seed: u64) -> Vec<UnitProfile> {
    let mut units = Vec::new();
    for (pi, (party, theta0)) in SWISS.iter().enumerate() {
        for c in 0..per_party {
            let mut rng = seed::rng(seed::derive(seed, &[0x5b, pi as u64, c as u64]));
            let theta = theta0 + rng.random_range(-0.15..0.15);
            let mut u = profile(format!("sv-{}-{c:02}", slug(party)), UnitKind::Candidate, Country::CH, party);
            for it in items {
                u.responses.insert(it.question.id.clone(), binary(latent(theta, it.lean, &mut rng)));
            }
            units.push(u);
        }
    }
    units
}

/// Binary smartvote-like survey: 12 topics x 5 questions, 4 candidates per
/// party, split one test question per topic.
pub fn smartvote(seed: u64) -> Result<(Dataset, Split)> {
    let items = smartvote_items(seed);
    let units = smartvote_candidates(&items, 4, seed);
    let d = Dataset::new(
        Survey::Smartvote,
        LabelSpace::Binary,
        RecodingScheme::None,
        items.into_iter().map(|i| i.question).collect(),
        units,
    )?;
    let s = split_topic_stratified(&d, seed)?;
    Ok((d, s))
}

/// The wider candidate population used to fit the political space: 40 per
/// party, the first four of which are the training candidates of
/// [`smartvote`]. Every 50th candidate skips two questions.
pub fn smartvote_population(seed: u64) -> Result<Dataset> {
    let items = smartvote_items(seed);
    let mut units = smartvote_candidates(&items, 40, seed);
    for (i, u) in units.iter_mut().enumerate() {
        if i % 50 == 49 {
            u.responses.remove(&items[i % items.len()].question.id);
            u.responses.remove(&items[(i + 7) % items.len()].question.id);
        }
    }
    Dataset::new(
        Survey::Smartvote,
        LabelSpace::Binary,
        RecodingScheme::None,
        items.into_iter().map(|i| i.question).collect(),
        units,
    )
}

fn comment(stance: Stance, cue: &str, rng: &mut seed::Rng) -> String {
    const REASONS: [&str; 4] = [
        "this is what our voters expect",
        "the costs and benefits are clear",
        "it reflects our long-standing programme",
        "the evidence points this way",
    ];
    let r = REASONS[rng.random_range(0..REASONS.len())];
    match stance {
        Stance::Yes => format!("We support more {cue} because {r}."),
        Stance::No => format!("We reject more {cue} because {r}."),
        Stance::Neutral => format!("We see arguments on both sides of {cue}; {r}, but not decisively."),
    }
}

/// Ternary Wahl-o-Mat-like party positions: 760 train questions with
/// per-party availability and comments, plus a fixed 30-question test set.
pub fn wom(seed: u64) -> Result<(Dataset, Split)> {
    let mut rng = seed::rng(seed::derive(seed, &[0x30, 0]));
    let cues = cue_pool(PROGRESSIVE_CUES.len().min(CONSERVATIVE_CUES.len()));
    let mut items = Vec::new();
    for i in 0..WOM_TRAIN {
        let cue = cues[rng.random_range(0..cues.len())];
        items.push(item(format!("wom{:03}", i + 1), "Germany", cue, None, &mut rng));
    }
    for i in 0..WOM_TEST {
        let cue = cues[i % cues.len()];
        items.push(item(format!("eui{:02}", i + 1), "the European Union", cue, None, &mut rng));
    }
    let train_ids: Vec<String> = items[..WOM_TRAIN].iter().map(|i| i.question.id.clone()).collect();
    let test_ids: Vec<String> = items[WOM_TRAIN..].iter().map(|i| i.question.id.clone()).collect();

    let mut units = Vec::new();
    for (pi, (party, theta)) in GERMAN.iter().enumerate() {
        let mut rng = seed::rng(seed::derive(seed, &[0x31, pi as u64]));
        let count = WOM_TRAIN_COUNTS.iter().find(|(p, _)| p == party).map_or(WOM_TRAIN, |(_, c)| *c);
        let mut answered = vec![false; WOM_TRAIN];
        for i in sample(&mut rng, WOM_TRAIN, count) {
            answered[i] = true;
        }
        answered.extend(std::iter::repeat_n(true, WOM_TEST));
        let mut u = profile(slug(party), UnitKind::Party, Country::DE, party);
        for (it, on) in items.iter().zip(&answered) {
            let s = ternary(latent(*theta, it.lean, &mut rng), *theta);
            if !on {
                continue;
            }
            u.responses.insert(it.question.id.clone(), s);
            if it.question.id.starts_with("wom") {
                let cue = cue_of(&it.question.text);
                u.comments.insert(it.question.id.clone(), comment(s, cue, &mut rng));
            }
        }
        units.push(u);
    }
    let d = Dataset::new(
        Survey::Wom,
        LabelSpace::Ternary,
        RecodingScheme::None,
        items.into_iter().map(|i| i.question).collect(),
        units,
    )?;
    let s = Split::fixed(train_ids, test_ids)?;
    s.validate(&d)?;
    Ok((d, s))
}

fn cue_of(text: &str) -> &str {
    text.split(|c: char| !c.is_alphanumeric())
        .find(|w| PROGRESSIVE_CUES.contains(w) || CONSERVATIVE_CUES.contains(w))
        .unwrap_or("this")
}

/// Answer formats of the ANES-like items. The first option is the most
/// supportive.
struct Format {
    options: &'static [&'static str],
    conservative: &'static [Stance],
    aggressive: &'static [Stance],
}

const FORMATS: [Format; 4] = {
    use Stance::*;
    [
        Format {
            options: &["Always", "Most of the time", "About half the time", "Some of the time", "Never"],
            conservative: &[Yes, Yes, Neutral, No, No],
            aggressive: &[Yes, Yes, Yes, Yes, No],
        },
        Format {
            options: &["Better", "Worse", "Makes no difference"],
            conservative: &[Yes, No, Neutral],
            aggressive: &[Yes, No, Neutral],
        },
        Format {
            options: &["Favor", "Oppose", "Neither favor nor oppose"],
            conservative: &[Yes, No, Neutral],
            aggressive: &[Yes, No, Neutral],
        },
        Format {
            options: &[
                "Agree strongly",
                "Agree somewhat",
                "Neither agree nor disagree",
                "Disagree somewhat",
                "Disagree strongly",
            ],
            conservative: &[Yes, Yes, Neutral, No, No],
            aggressive: &[Yes, Yes, Neutral, No, No],
        },
    ]
};

/// Picks a raw option for latent support `x`.
fn raw_option(format: &Format, x: f64, theta: f64) -> usize {
    let b = neutral_band(theta);
    if format.options.len() == 3 {
        return match ternary(x, theta) {
            Stance::Yes => 1,
            Stance::No => 2,
            Stance::Neutral => 3,
        };
    }
    if x > b + 1.5 {
        1
    } else if x > b {
        2
    } else if x >= -b {
        3
    } else if x >= -b - 1.5 {
        4
    } else {
        5
    }
}

/// Ternary ANES-like respondents: 79 items in four answer formats with
/// conservative and aggressive recoding tables, three respondents per
/// ideology level, random 67/12 split.
pub fn anes(seed: u64) -> Result<(Dataset, Split)> {
    let mut rng = seed::rng(seed::derive(seed, &[0xa7, 0]));
    let cues = cue_pool(8);
    let mut items = Vec::new();
    for i in 0..ANES_QUESTIONS {
        let cue = cues[i % cues.len()];
        let mut it = item(format!("anes{:02}", i + 1), "the federal government", cue, None, &mut rng);
        let f = &FORMATS[i % FORMATS.len()];
        it.question.raw_options = f.options.iter().map(|s| s.to_string()).collect();
        it.question
            .scheme_maps
            .insert(RecodingScheme::Conservative.key().into(), f.conservative.to_vec());
        it.question
            .scheme_maps
            .insert(RecodingScheme::Aggressive.key().into(), f.aggressive.to_vec());
        items.push(it);
    }
    let mut units = Vec::new();
    for (li, level) in anes_ideologies().enumerate() {
        let theta = li as f64 / 3.0 - 1.0;
        for r in 0..3 {
            let mut rng = seed::rng(seed::derive(seed, &[0xa8, li as u64, r as u64]));
            let mut u = profile(format!("anes-{}-{r}", slug(level)), UnitKind::Respondent, Country::US, level);
            for (i, it) in items.iter().enumerate() {
                let f = &FORMATS[i % FORMATS.len()];
                let raw = raw_option(f, latent(theta, it.lean, &mut rng), theta);
                u.raw_responses.insert(it.question.id.clone(), raw);
                u.responses.insert(it.question.id.clone(), f.conservative[raw - 1]);
            }
            units.push(u);
        }
    }
    let d = Dataset::new(
        Survey::Anes,
        LabelSpace::Ternary,
        RecodingScheme::Conservative,
        items.into_iter().map(|i| i.question).collect(),
        units,
    )?;
    let s = split_random(&d, ANES_TEST, seed)?;
    Ok((d, s))
}

/// A single left-leaning binary persona answering `n_train + 2` noiseless
/// questions, with the first `n_train` in the train split.
pub fn persona(n_train: usize, seed: u64) -> Result<(Dataset, Split)> {
    let mut rng = seed::rng(seed::derive(seed, &[0x9e, 0]));
    let cues = cue_pool(8);
    let items: Vec<Item> = (0..n_train + 2)
        .map(|i| item(format!("p{:02}", i + 1), "Switzerland", cues[i % cues.len()], Some("Persona"), &mut rng))
        .collect();
    let mut u = profile("persona".into(), UnitKind::Candidate, Country::CH, "SP");
    for it in &items {
        u.responses.insert(it.question.id.clone(), binary(it.lean));
    }
    let ids: Vec<String> = items.iter().map(|i| i.question.id.clone()).collect();
    let d = Dataset::new(
        Survey::Smartvote,
        LabelSpace::Binary,
        RecodingScheme::None,
        items.into_iter().map(|i| i.question).collect(),
        vec![u],
    )?;
    let s = Split::fixed(ids[..n_train].to_vec(), ids[n_train..].to_vec())?;
    Ok((d, s))
}

/// Builds the synthetic dataset and split for `survey`.
pub fn build(survey: Survey, seed: u64) -> Result<(Dataset, Split)> {
    match survey {
        Survey::Smartvote => smartvote(seed),
        Survey::Wom => wom(seed),
        Survey::Anes => anes(seed),
    }
}
