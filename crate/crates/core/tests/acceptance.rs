use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stancealign::baselines::{eval_seeds, evaluate_majority, random_baseline_trials};
use stancealign::experiments::{
    run_method_matrix, train_unit, DataBundle, MatrixSpec, Method, Profile, ResultsStore, RunConfig,
};
use stancealign::grpo::compute_advantages;
use stancealign::metrics::{accuracy, drop_neutral_rescore, macro_f1, per_class_recall};
use stancealign::par::Execution;
use stancealign::report::{build, Layout, ReportInputs, Table, Value};
use stancealign::reward::{
    correctness_reward, format_reward, length_reward, total_reward, RewardWeights, WhitespaceTokens,
};
use stancealign::schema::{parse, render};
use stancealign::sft::BiasTag;
use stancealign::space::{fit_dataset_space, fit_space, inversion_reflection_check, AnswerMatrix};
use stancealign::stats::{bonferroni_threshold, cohens_d, regress, welch_one_tailed};
use stancealign::survey::recode_anes;
use stancealign::survey::{Dataset, Question, RecodingScheme, Split, Survey};
use stancealign::{synth, LabelSpace, Stance};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

// Independent special functions: Stirling ln-gamma with upward shift and the
// hypergeometric series for the regularized incomplete beta.

fn ln_gamma(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < 20.0 {
        shift += x.ln();
        x += 1.0;
    }
    let x2 = x * x;
    let series = 1.0 / (12.0 * x) - 1.0 / (360.0 * x * x2) + 1.0 / (1260.0 * x * x2 * x2)
        - 1.0 / (1680.0 * x * x2 * x2 * x2);
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + series - shift
}

fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    if x > 0.5 {
        return 1.0 - inc_beta(b, a, 1.0 - x);
    }
    let ln_b = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
    let front = (a * x.ln() + b * (1.0 - x).ln() - a.ln() - ln_b).exp();
    let (mut term, mut sum, mut n) = (1.0, 1.0, 0.0);
    while term > 1e-18 * sum {
        term *= (a + b + n) / (a + 1.0 + n) * x;
        sum += term;
        n += 1.0;
    }
    front * sum
}

fn t_upper(t: f64, df: f64) -> f64 {
    let tail = 0.5 * inc_beta(df / 2.0, 0.5, df / (df + t * t));
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

fn released_dir() -> Result<PathBuf, String> {
    let dir = std::env::var_os("STANCEALIGN_RELEASED_DATA")
        .map(PathBuf::from)
        .ok_or("STANCEALIGN_RELEASED_DATA is not set; the released survey files are not available")?;
    if !dir.is_dir() {
        return Err(format!("{} is not a directory", dir.display()));
    }
    Ok(dir)
}

fn released_file(name: &str) -> Result<PathBuf, String> {
    let p = released_dir()?.join(name);
    if p.exists() {
        Ok(p)
    } else {
        Err(format!("missing released file {}", p.display()))
    }
}

fn c1_reward() -> Check {
    let w = RewardWeights::default();
    let t = WhitespaceTokens;
    let words = |n: usize| vec!["w"; n].join(" ");
    let best = total_reward(&render(&words(100), Stance::Yes), Stance::Yes, LabelSpace::Binary, &w, &t).total;
    let empty = total_reward("", Stance::Yes, LabelSpace::Binary, &w, &t).total;
    let wrong = total_reward(&render(&words(110), Stance::No), Stance::Yes, LabelSpace::Binary, &w, &t).total;
    ensure(best == 2.0 && empty == -1.0 && wrong == 0.9, || format!("worked totals {best}, {empty}, {wrong}"))?;

    let format_table: [(&str, u8); 6] = [
        ("<reasoning>x</reasoning><answer>A) Yes</answer>", 4),
        ("<reasoning>x</reasoning><answer>A) Yes", 3),
        ("<reasoning>x</reasoning>", 2),
        ("<reasoning>x", 1),
        ("", 0),
        ("<reasoning><reasoning>x</reasoning><answer>A</answer>", 0),
    ];
    for (text, want) in format_table {
        ensure(format_reward(&parse(text)) == want, || format!("format reward of {text:?}"))?;
    }
    for k in 0..=100usize {
        let (up, down) = (length_reward(100 + k, 100), length_reward(100 - k, 100));
        ensure(up == -(k as f64) && down == up, || format!("length reward at offset {k}"))?;
    }
    for truth in Stance::ALL {
        for pred in Stance::ALL.map(Some).into_iter().chain([None]) {
            ensure(correctness_reward(pred, truth) == u8::from(pred == Some(truth)), || {
                format!("correctness of {pred:?} vs {truth:?}")
            })?;
        }
    }
    Ok("2.0 / -1.0 / 0.9 exact; format, length and correctness tables exact".into())
}

fn c2_advantages() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let eps = 1e-4;
    let (mut spread, mut flat) = (0, 0);
    for g in 0..1000 {
        let r: Vec<f64> = if g % 10 == 0 {
            vec![rng.random_range(-1.0..2.0); 8]
        } else if g % 2 == 0 {
            (0..8).map(|_| [2.0, 0.9, 0.9, -1.0, 1.0, 0.25][rng.random_range(0..6)]).collect()
        } else {
            (0..8).map(|_| rng.random_range(-1.0..2.0)).collect()
        };
        let a = compute_advantages(&r, eps).map_err(|e| e.to_string())?;
        let m = mean(&r);
        let sd = (r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 8.0).sqrt();
        if sd >= eps {
            let am = mean(&a);
            let asd = (a.iter().map(|x| (x - am).powi(2)).sum::<f64>() / 8.0).sqrt();
            ensure(am.abs() <= 1e-9, || format!("group {g}: mean advantage {am}"))?;
            ensure((1.0 - 1e-6..=1.0 + 1e-6).contains(&asd), || format!("group {g}: advantage std {asd}"))?;
            spread += 1;
        } else {
            ensure(a.iter().all(|x| *x == 0.0), || format!("group {g}: flat rewards gave {a:?}"))?;
            flat += 1;
        }
    }
    Ok(format!("{spread} groups standardized, {flat} flat groups zeroed"))
}

fn c3_toy_grpo() -> Check {
    let seeds = [1u64, 2, 3];
    let mut grpo_final = Vec::new();
    let mut both_final = Vec::new();
    let mut worst_acc: f64 = 1.0;
    for s in seeds {
        let (d, split) = synth::persona(8, s).map_err(|e| e.to_string())?;
        ensure(d.questions.len() == 10, || format!("persona has {} questions", d.questions.len()))?;
        let bundle = DataBundle::new(d, split)
            .map_err(|e| e.to_string())?
            .with_stub_arguments(&[BiasTag::Default], s, Execution::Parallel);
        let unit = bundle.dataset.units[0].clone();
        for method in [Method::Grpo, Method::SftGrpo] {
            let mut cfg = RunConfig::new(Survey::Smartvote, method, Profile::Toy, s);
            cfg.backend = "toy-tabular".into();
            ensure(cfg.grpo.steps == 500, || "toy profile is not 500 steps".into())?;
            let t = train_unit(&bundle, &cfg, &unit, Execution::Parallel).map_err(|e| e.to_string())?;
            let tail = t.log.as_ref().map(|l| l.tail_reward(0.1)).ok_or("no training log")?;
            if method == Method::Grpo {
                worst_acc = worst_acc.min(t.train_accuracy);
                grpo_final.push(tail);
            } else {
                both_final.push(tail);
            }
        }
    }
    let (g, b) = (mean(&grpo_final), mean(&both_final));
    ensure(worst_acc >= 0.95, || format!("greedy train accuracy {worst_acc:.3} < 0.95"))?;
    ensure(b >= g, || format!("SFT+GRPO final reward {b:.4} < GRPO {g:.4}"))?;
    Ok(format!("GRPO train accuracy >= {worst_acc:.3}; final reward SFT+GRPO {b:.4} >= GRPO {g:.4}"))
}

fn c4_baselines() -> Check {
    let expected_random = [(LabelSpace::Binary, 0.5), (LabelSpace::Ternary, 1.0 / 3.0), (LabelSpace::Ternary, 1.0 / 3.0)];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (i, (space, want)) in expected_random.iter().enumerate() {
        let truths: Vec<Stance> = (0..3000).map(|_| space.stances()[rng.random_range(0..space.len())]).collect();
        let trials = random_baseline_trials(&truths, *space, 1000, i as u64).map_err(|e| e.to_string())?;
        let m = mean(&trials);
        let se = (var(&trials) / trials.len() as f64).sqrt();
        ensure((m - want).abs() <= 3.0 * se + 1e-12, || format!("random macro-F1 {m:.5} vs {want:.5} (3 sigma {:.5})", 3.0 * se))?;
    }
    let targets = [(Survey::Smartvote, 37.43), (Survey::Wom, 27.44), (Survey::Anes, 22.98)];
    let mut got = Vec::new();
    for (s, want) in targets {
        let d = Dataset::load(released_file(&format!("{s}.json")).map_err(|e| format!("random baseline within 3 sigma; {e}"))?, Some(s)).map_err(|e| e.to_string())?;
        let split = Split::load(released_file(&format!("{s}.split.json"))?).map_err(|e| e.to_string())?;
        let mut f1 = Vec::new();
        for u in &d.units {
            let runs = evaluate_majority(&d, u, &split, &eval_seeds(0, 1)).map_err(|e| e.to_string())?;
            f1.push(runs[0].macro_f1);
        }
        let m = 100.0 * mean(&f1);
        ensure((m - want).abs() <= 0.01, || format!("{s} majority macro-F1 {m:.2} vs {want}"))?;
        got.push(format!("{s} {m:.2}"));
    }
    Ok(format!("majority {}; random within 3 sigma", got.join(", ")))
}

fn item(id: &str, cons: Vec<Stance>, aggr: Vec<Stance>) -> Question {
    let n = cons.len();
    Question {
        id: id.into(),
        text: id.into(),
        topic: None,
        raw_options: (1..=n).map(|i| format!("option {i}")).collect(),
        scheme_maps: [("conservative".to_string(), cons), ("aggressive".to_string(), aggr)].into_iter().collect(),
    }
}

fn c5_recoding() -> Check {
    use Stance::{Neutral as U, No as N, Yes as Y};
    let c = RecodingScheme::Conservative;
    let a = RecodingScheme::Aggressive;
    // (item, option, scheme, stance) read off the worked examples.
    let favors = item("special_favors", vec![Y, Y, U, N, N], vec![Y, Y, Y, Y, N]);
    let votes = item("congress_votes", vec![N, N, U, Y, Y], vec![N, Y, Y, Y, Y]);
    let races = item("races_ethnic", vec![Y, N, U], vec![Y, N, U]);
    let cases = [
        (&favors, 1, c, Y), (&favors, 2, c, Y), (&favors, 3, c, U), (&favors, 4, c, N), (&favors, 5, c, N),
        (&favors, 1, a, Y), (&favors, 2, a, Y), (&favors, 3, a, Y), (&favors, 4, a, Y), (&favors, 5, a, N),
        (&votes, 1, c, N), (&votes, 2, c, N), (&votes, 3, c, U), (&votes, 4, c, Y), (&votes, 5, c, Y),
        (&votes, 1, a, N), (&votes, 2, a, Y), (&votes, 3, a, Y), (&votes, 4, a, Y), (&votes, 5, a, Y),
        (&races, 1, c, Y), (&races, 2, c, N), (&races, 3, c, U),
        (&races, 1, a, Y), (&races, 2, a, N), (&races, 3, a, U),
    ];
    for (q, opt, scheme, want) in cases {
        let got = recode_anes(q, opt, scheme).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("{} option {opt} under {scheme:?}: {got} != {want}", q.id))?;
    }
    ensure(recode_anes(&favors, 6, c).is_err() && recode_anes(&favors, 0, a).is_err(), || "out-of-range option accepted".into())?;

    let (d, _) = synth::anes(5).map_err(|e| e.to_string())?;
    let cons = d.recoded(c).map_err(|e| e.to_string())?;
    let aggr = d.recoded(a).map_err(|e| e.to_string())?;
    let mut diffs = 0;
    for ((u, uc), ua) in d.units.iter().zip(&cons.units).zip(&aggr.units) {
        for (qid, raw) in &u.raw_responses {
            let q = d.question(qid).ok_or("unknown question")?;
            let remapped = q.scheme_maps["conservative"][raw - 1] != q.scheme_maps["aggressive"][raw - 1];
            let differs = uc.responses[qid] != ua.responses[qid];
            ensure(remapped == differs, || format!("{} / {qid}: diff outside remapped options", u.unit_id))?;
            diffs += usize::from(differs);
        }
    }
    Ok(format!("{} worked mappings exact; {diffs} scheme differences, all on remapped options", cases.len()))
}

fn c6_statistics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let na = rng.random_range(2..12);
        let nb = rng.random_range(2..12);
        let a: Vec<f64> = (0..na).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..nb).map(|_| rng.random_range(0.0..1.0) + rng.random_range(-0.2..0.2)).collect();
        let (va, vb) = (var(&a) / na as f64, var(&b) / nb as f64);
        let t = (mean(&a) - mean(&b)) / (va + vb).sqrt();
        let df = (va + vb).powi(2) / (va * va / (na - 1) as f64 + vb * vb / (nb - 1) as f64);
        let w = welch_one_tailed(&a, &b).map_err(|e| e.to_string())?;
        let p = t_upper(t, df);
        worst = worst.max((w.p_value - p).abs());
        ensure(close(w.t, t, 1e-9) && close(w.df, df, 1e-9) && (w.p_value - p).abs() <= 1e-9, || {
            format!("case {case}: welch ({}, {}, {}) vs ({t}, {df}, {p})", w.t, w.df, w.p_value)
        })?;
        let pooled = (((na - 1) as f64 * var(&a) + (nb - 1) as f64 * var(&b)) / (na + nb - 2) as f64).sqrt();
        let d = cohens_d(&a, &b).map_err(|e| e.to_string())?;
        ensure(close(d, (mean(&a) - mean(&b)) / pooled, 1e-9), || format!("case {case}: cohen's d {d}"))?;

        let n = rng.random_range(3..40);
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let x: f64 = rng.random_range(0.0..1.0);
                (x, 0.6 - 0.5 * x + rng.random_range(-0.2..0.2))
            })
            .collect();
        let nf = n as f64;
        let (sx, sy) = (pts.iter().map(|p| p.0).sum::<f64>(), pts.iter().map(|p| p.1).sum::<f64>());
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let det = nf * sxx - sx * sx;
        let slope = (nf * sxy - sx * sy) / det;
        let icpt = (sxx * sy - sx * sxy) / det;
        let sse: f64 = pts.iter().map(|(x, y)| (y - icpt - slope * x).powi(2)).sum();
        let mx = sx / nf;
        let se = (sse / (nf - 2.0) / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>()).sqrt();
        let p2 = (2.0 * t_upper((slope / se).abs(), nf - 2.0)).min(1.0);
        let r = regress(&pts).map_err(|e| e.to_string())?;
        ensure(
            close(r.slope, slope, 1e-9) && close(r.intercept, icpt, 1e-9) && close(r.slope_se, se, 1e-9)
                && (r.p_value - p2).abs() <= 1e-9 && close(r.rmse, (sse / nf).sqrt(), 1e-9),
            || format!("case {case}: regression ({}, {}, {}, {}) vs ({slope}, {icpt}, {se}, {p2})", r.slope, r.intercept, r.slope_se, r.p_value),
        )?;
    }
    let thr = bonferroni_threshold(0.05, 36);
    ensure(thr == 0.05 / 36.0 && thr < 0.0014, || format!("Bonferroni threshold {thr}"))?;

    let oracles = format!("1000 oracle cases within 1e-9 (worst p gap {worst:.1e})");
    let path = released_file("anes_scores.csv").map_err(|e| format!("{oracles}; {e}"))?;
    let mut reader = csv::Reader::from_path(&path).map_err(|e| e.to_string())?;
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or(format!("{} lacks a {name} column", path.display()));
    let (xi, yi) = (col("neutral_base_rate")?, col("macro_f1")?);
    let mut pts = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| e.to_string());
        pts.push((num(xi)?, num(yi)?));
    }
    let r = regress(&pts).map_err(|e| e.to_string())?;
    ensure(
        (r.slope + 0.6741).abs() <= 1e-3 && (r.slope_se - 0.2091).abs() <= 1e-3 && (r.p_value - 0.004472).abs() <= 1e-3,
        || format!("regression beta {:.4}, se {:.4}, p {:.6}", r.slope, r.slope_se, r.p_value),
    )?;
    Ok(format!("{oracles}; regression beta {:.4}", r.slope))
}

const PREDS: [Option<Stance>; 3] = [Some(Stance::Yes), Some(Stance::No), Some(Stance::Neutral)];

fn brute(p: &[Option<Stance>], t: &[Stance], space: LabelSpace) -> Result<(), String> {
    let mut f1 = 0.0;
    for c in space.stances() {
        let predicted = p.iter().filter(|x| **x == Some(*c)).count() as f64;
        let actual = t.iter().filter(|x| **x == *c).count() as f64;
        let hit = p.iter().zip(t).filter(|(x, y)| **x == Some(*c) && **y == *c).count() as f64;
        let prec = if predicted > 0.0 { hit / predicted } else { 0.0 };
        let rec = if actual > 0.0 { hit / actual } else { 0.0 };
        f1 += if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
        let recall = per_class_recall(p, t, space).map_err(|e| e.to_string())?;
        match recall.get(c) {
            Some(r) => ensure(actual > 0.0 && (r - rec).abs() < 1e-12, || format!("recall of {c} on {p:?} {t:?}"))?,
            None => ensure(actual == 0.0, || format!("missing recall of {c}"))?,
        }
    }
    f1 /= space.len() as f64;
    let acc = p.iter().zip(t).filter(|(x, y)| **x == Some(**y)).count() as f64 / t.len() as f64;
    let got_f1 = macro_f1(p, t, space).map_err(|e| e.to_string())?;
    let got_acc = accuracy(p, t).map_err(|e| e.to_string())?;
    ensure((got_f1 - f1).abs() < 1e-12 && (got_acc - acc).abs() < 1e-12, || format!("scores of {p:?} {t:?}"))?;
    let kept: Vec<usize> = (0..t.len()).filter(|i| t[*i] != Stance::Neutral).collect();
    match drop_neutral_rescore(p, t) {
        Ok((f, a)) => {
            let kp: Vec<_> = kept.iter().map(|i| p[*i]).collect();
            let kt: Vec<_> = kept.iter().map(|i| t[*i]).collect();
            let mut bf = 0.0;
            for c in [Stance::Yes, Stance::No] {
                let predicted = kp.iter().filter(|x| **x == Some(c)).count() as f64;
                let actual = kt.iter().filter(|x| **x == c).count() as f64;
                let hit = kp.iter().zip(&kt).filter(|(x, y)| **x == Some(c) && **y == c).count() as f64;
                bf += if predicted + actual > 0.0 { 2.0 * hit / (predicted + actual) } else { 0.0 };
            }
            let ba = kp.iter().zip(&kt).filter(|(x, y)| **x == Some(**y)).count() as f64 / kt.len() as f64;
            ensure((f - bf / 2.0).abs() < 1e-12 && (a - ba).abs() < 1e-12, || format!("drop-neutral on {p:?} {t:?}"))?;
        }
        Err(_) => ensure(kept.is_empty(), || "drop-neutral rejected a scorable sequence".into())?,
    }
    Ok(())
}

fn c7_metrics() -> Check {
    let space = LabelSpace::Ternary;
    let classes = space.stances();
    let mut exhaustive = 0usize;
    for n in 1..=5usize {
        for code in 0..9usize.pow(n as u32) {
            let mut c = code;
            let mut p = Vec::with_capacity(n);
            let mut t = Vec::with_capacity(n);
            for _ in 0..n {
                p.push(PREDS[c % 3]);
                t.push(classes[(c / 3) % 3]);
                c /= 9;
            }
            brute(&p, &t, space)?;
            exhaustive += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100_000 {
        let t: Vec<Stance> = (0..6).map(|_| classes[rng.random_range(0..3)]).collect();
        let p: Vec<Option<Stance>> = (0..6)
            .map(|_| if rng.random_bool(0.05) { None } else { PREDS[rng.random_range(0..3)] })
            .collect();
        brute(&p, &t, space)?;
    }
    Ok(format!("{exhaustive} exhaustive pairs (length <= 5) and 100000 sampled length-6 pairs agree"))
}

fn jacobi(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[i][j] * a[i][j];
                }
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = if theta == 0.0 { 1.0 } else { theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt()) };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (kp, kq) = (row[p], row[q]);
                    row[p] = c * kp - s * kq;
                    row[q] = s * kp + c * kq;
                }
                for k in 0..n {
                    let (pk, qk) = (a[p][k], a[q][k]);
                    a[p][k] = c * pk - s * qk;
                    a[q][k] = s * pk + c * qk;
                }
                for row in v.iter_mut() {
                    let (kp, kq) = (row[p], row[q]);
                    row[p] = c * kp - s * kq;
                    row[q] = s * kp + c * kq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|x, y| a[*y][*y].total_cmp(&a[*x][*x]));
    (idx.iter().map(|i| a[*i][*i]).collect(), idx.iter().map(|i| v.iter().map(|r| r[*i]).collect()).collect())
}

fn c8_pca() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut compared = 0;
    let mut worst: f64 = 0.0;
    while compared < 200 {
        let rows: Vec<Vec<f64>> = (0..20).map(|_| (0..10).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect()).collect();
        let model = fit_space(&AnswerMatrix::from_rows(rows.clone()).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let means: Vec<f64> = (0..10).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / 20.0).collect();
        let cov: Vec<Vec<f64>> = (0..10)
            .map(|i| (0..10).map(|j| rows.iter().map(|r| (r[i] - means[i]) * (r[j] - means[j])).sum::<f64>() / 19.0).collect())
            .collect();
        let (vals, vecs) = jacobi(cov);
        if vals[0] - vals[1] < 1e-3 || vals[1] - vals[2] < 1e-3 {
            continue;
        }
        for k in 0..2 {
            ensure((model.explained_variance[k] - vals[k]).abs() <= 1e-9, || format!("eigenvalue {k}: {} vs {}", model.explained_variance[k], vals[k]))?;
            let sign = if model.components[k].iter().zip(&vecs[k]).map(|(a, b)| a * b).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
            for (a, b) in model.components[k].iter().zip(&vecs[k]) {
                worst = worst.max((a - sign * b).abs());
            }
        }
        compared += 1;
    }
    ensure(worst <= 1e-9, || format!("component loadings differ by {worst:.2e}"))?;

    let (synthetic, _) = synth::smartvote(8).map_err(|e| e.to_string())?;
    let (m, matrix, _) = fit_dataset_space(&synthetic).map_err(|e| e.to_string())?;
    let gap = inversion_reflection_check(&m, &matrix.rows).map_err(|e| e.to_string())?;
    ensure(gap <= 1e-9, || format!("reflection gap {gap:.2e} on synthetic candidates"))?;

    let checked = format!("200 matrices, loadings within {worst:.1e}; synthetic reflection holds");
    let pop = Dataset::load(released_file("smartvote.population.json").map_err(|e| format!("{checked}; {e}"))?, Some(Survey::Smartvote)).map_err(|e| e.to_string())?;
    let (m, matrix, _) = fit_dataset_space(&pop).map_err(|e| e.to_string())?;
    let gap = inversion_reflection_check(&m, &matrix.rows).map_err(|e| e.to_string())?;
    ensure(gap <= 1e-9, || format!("reflection gap {gap:.2e} on the released population"))?;
    Ok(format!("{checked}; released reflection holds for {} candidates", matrix.n_rows()))
}

fn missing_cells(t: &Table, skip: &[&str]) -> Vec<String> {
    let mut out = Vec::new();
    for row in &t.rows {
        for (c, v) in t.columns.iter().zip(row) {
            if matches!(v, Value::Missing) && !skip.contains(&c.as_str()) {
                out.push(format!("{}:{c}", t.name));
            }
        }
    }
    out
}

fn c9_pipeline() -> Check {
    let bundles: BTreeMap<Survey, DataBundle> = [Survey::Smartvote, Survey::Wom, Survey::Anes]
        .into_iter()
        .map(|s| {
            let (d, split) = synth::build(s, 7).expect("synthetic data");
            let b = DataBundle::new(d, split).expect("valid split").with_stub_arguments(&[BiasTag::Default], 7, Execution::Parallel);
            (s, b)
        })
        .collect();
    let spec = MatrixSpec::default();
    ensure(spec.datasets.len() == 3 && spec.methods.len() == 5 && spec.profile == Profile::Toy, || "default matrix is not 3 x 5 toy".into())?;
    let once = || -> Result<(Vec<u8>, Vec<u8>, Vec<u8>, usize, usize), String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let store = ResultsStore::open(dir.path()).map_err(|e| e.to_string())?;
        let rows = run_method_matrix(&spec, &bundles, &store, None, Execution::Parallel).map_err(|e| e.to_string())?;
        let failed = rows.iter().filter(|r| !r.is_ok()).count();
        let inputs = ReportInputs { rows: store.latest().map_err(|e| e.to_string())?, bundles: bundles.clone(), population: None };
        let (t3, _) = build(Layout::Table3, &inputs).map_err(|e| e.to_string())?;
        let (t8, _) = build(Layout::Table8, &inputs).map_err(|e| e.to_string())?;
        let mut gaps = missing_cells(&t3[0], &[]);
        gaps.extend(missing_cells(&t8[0], &["note"]));
        ensure(gaps.is_empty(), || format!("missing cells {gaps:?}"))?;
        ensure(t3[0].rows.len() == 5, || format!("table3 has {} method rows", t3[0].rows.len()))?;
        let store_bytes = std::fs::read(store.path()).map_err(|e| e.to_string())?;
        Ok((store_bytes, t3[0].to_csv().map_err(|e| e.to_string())?.into_bytes(), t8[0].to_csv().map_err(|e| e.to_string())?.into_bytes(), rows.len(), failed))
    };
    let a = once()?;
    ensure(a.4 == 0, || format!("{} failed cells", a.4))?;
    let b = once()?;
    ensure(a.0 == b.0, || "results store differs on rerun".into())?;
    ensure(a.1 == b.1 && a.2 == b.2, || "reports differ on rerun".into())?;
    Ok(format!("{} cells, no failures, no missing cells, byte-identical rerun", a.3))
}

fn c10_schema() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let alphabet = b"<>/reasoningaswAB) YesNo\n\xff";
    for i in 0..100_000 {
        let n = rng.random_range(0..64);
        let bytes: Vec<u8> = (0..n)
            .map(|_| if i % 2 == 0 { rng.random() } else { alphabet[rng.random_range(0..alphabet.len())] })
            .collect();
        let p = std::panic::catch_unwind(|| parse(&String::from_utf8_lossy(&bytes)))
            .map_err(|_| format!("parse panicked on {bytes:?}"))?;
        ensure(p.tag_count() <= 4, || "tag count above 4".into())?;
    }
    for _ in 0..10_000 {
        let len = rng.random_range(0..80);
        let reasoning: String = (0..len).map(|_| char::from_u32(rng.random_range(1..0x2fff)).unwrap_or('x')).collect();
        let s = Stance::ALL[rng.random_range(0..3)];
        let p = parse(&render(&reasoning, s));
        ensure(p.stance == Some(s) && p.reasoning_body.as_deref() == Some(reasoning.as_str()), || {
            format!("round trip failed for {reasoning:?}")
        })?;
    }
    Ok("100000 fuzzed inputs parsed; 10000 round trips exact".into())
}

#[test]
fn acceptance_criteria() {
    let criteria: [(usize, &str, Duration, fn() -> Check); 10] = [
        (1, "reward exactness", Duration::from_secs(1), c1_reward),
        (2, "advantage normalization", Duration::from_secs(1), c2_advantages),
        (3, "toy GRPO convergence", Duration::from_secs(60), c3_toy_grpo),
        (4, "baselines on released data", Duration::from_secs(30), c4_baselines),
        (5, "recoding fidelity", Duration::from_secs(5), c5_recoding),
        (6, "statistics oracles", Duration::from_secs(10), c6_statistics),
        (7, "metric oracles", Duration::from_secs(60), c7_metrics),
        (8, "PCA geometry", Duration::from_secs(10), c8_pca),
        (9, "pipeline end-to-end", Duration::from_secs(30 * 60), c9_pipeline),
        (10, "schema robustness", Duration::from_secs(30), c10_schema),
    ];
    let mut failed = Vec::new();
    writeln!(std::io::stderr().lock()).ok();
    for (n, title, limit, check) in criteria {
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let result = result.and_then(|d| {
            if took <= limit {
                Ok(d)
            } else {
                Err(format!("runtime {took:.2?} exceeds {limit:?}"))
            }
        });
        let line = match &result {
            Ok(d) => format!("PASS criterion {n} ({title}): {d} [{took:.2?}]"),
            Err(e) => format!("FAIL criterion {n} ({title}): {e} [{took:.2?}]"),
        };
        writeln!(std::io::stderr().lock(), "{line}").ok();
        if result.is_err() {
            failed.push(n);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
