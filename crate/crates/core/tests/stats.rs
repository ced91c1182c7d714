use proptest::prelude::*;
use stancealign::stats::{cohens_d, regress, welch_one_tailed, SignificanceReport, Comparison, SignificanceTier};
use stancealign::special::t_quantile;

/// Upper tail of Student's t by Simpson quadrature of the unnormalized
/// density under x = tan(u).
fn oracle_t_sf(t: f64, df: f64) -> f64 {
    let g = |u: f64| {
        let x = u.tan();
        (1.0 + x * x / df).powf(-(df + 1.0) / 2.0) / (u.cos() * u.cos())
    };
    let simpson = |a: f64, b: f64| {
        let n = 20_000;
        let h = (b - a) / n as f64;
        let mut s = g(a) + if b >= std::f64::consts::FRAC_PI_2 { 0.0 } else { g(b) };
        for i in 1..n {
            s += g(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let half = std::f64::consts::FRAC_PI_2;
    let whole = simpson(0.0, half);
    let upper = simpson(t.abs().atan(), half) / whole * 0.5;
    if t >= 0.0 {
        upper
    } else {
        1.0 - upper
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

fn sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 3..12)
}

#[test]
fn welch_matches_worked_example() {
    let a = [0.8, 0.9, 0.85, 0.95];
    let b = [0.6, 0.7, 0.65, 0.75];
    let w = welch_one_tailed(&a, &b).unwrap();
    let se = (var(&a) / 4.0 + var(&b) / 4.0).sqrt();
    assert!((w.t - 0.2 / se).abs() < 1e-12);
    assert!((w.df - 6.0).abs() < 1e-12);
    assert!((w.p_value - oracle_t_sf(w.t, w.df)).abs() < 1e-7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn welch_p_matches_quadrature(a in sample(), b in sample()) {
        let w = welch_one_tailed(&a, &b).unwrap();
        let (va, vb) = (var(&a) / a.len() as f64, var(&b) / b.len() as f64);
        let df = (va + vb).powi(2) / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
        prop_assert!((w.t - (mean(&a) - mean(&b)) / (va + vb).sqrt()).abs() < 1e-9);
        prop_assert!((w.df - df).abs() < 1e-9);
        prop_assert!((w.p_value - oracle_t_sf(w.t, w.df)).abs() < 1e-6, "{} vs {}", w.p_value, oracle_t_sf(w.t, w.df));
    }

    #[test]
    fn welch_is_antisymmetric(a in sample(), b in sample()) {
        let ab = welch_one_tailed(&a, &b).unwrap().p_value;
        let ba = welch_one_tailed(&b, &a).unwrap().p_value;
        prop_assert!((ab + ba - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cohens_d_matches_pooled_formula(a in sample(), b in sample()) {
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let pooled = (((na - 1.0) * var(&a) + (nb - 1.0) * var(&b)) / (na + nb - 2.0)).sqrt();
        let d = cohens_d(&a, &b).unwrap();
        prop_assert!((d - (mean(&a) - mean(&b)) / pooled).abs() < 1e-9);
        prop_assert!((d + cohens_d(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ols_matches_normal_equations(pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..40)) {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let det = n * sxx - sx * sx;
        prop_assume!(det.abs() > 1e-6);
        let slope = (n * sxy - sx * sy) / det;
        let intercept = (sxx * sy - sx * sxy) / det;
        let r = regress(&pts).unwrap();
        prop_assert!((r.slope - slope).abs() < 1e-9);
        prop_assert!((r.intercept - intercept).abs() < 1e-9);
        prop_assert!((r.r_squared - r.r * r.r).abs() < 1e-15);
        let q = t_quantile(0.975, n - 2.0).unwrap();
        prop_assert!((r.slope_ci95.0 - (r.slope - q * r.slope_se)).abs() < 1e-12);
        prop_assert!((r.slope_ci95.1 - (r.slope + q * r.slope_se)).abs() < 1e-12);
        let sse: f64 = pts.iter().map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        prop_assert!((r.rmse - (sse / n).sqrt()).abs() < 1e-9);
        if r.slope_se > 0.0 {
            let t = (r.slope / r.slope_se).abs();
            prop_assert!((r.p_value - (2.0 * oracle_t_sf(t, n - 2.0)).min(1.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn ols_is_shift_and_scale_equivariant(
        pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..30),
        c in -3.0f64..3.0, k in 0.5f64..3.0,
    ) {
        let Ok(base) = regress(&pts) else { return Ok(()); };
        prop_assume!(base.slope_se > 1e-9);
        let moved: Vec<(f64, f64)> = pts.iter().map(|(x, y)| (x + c, k * y)).collect();
        let m = regress(&moved).unwrap();
        prop_assert!((m.slope - k * base.slope).abs() < 1e-8);
        prop_assert!((m.r - base.r).abs() < 1e-9);
        prop_assert!((m.p_value - base.p_value).abs() < 1e-9);
    }
}

#[test]
fn regression_rejects_bad_input() {
    assert!(regress(&[(0.0, 1.0), (1.0, 2.0)]).is_err());
    assert!(regress(&[(1.0, 1.0), (1.0, 2.0), (1.0, 3.0)]).is_err());
    assert!(regress(&[(0.0, f64::NAN), (1.0, 2.0), (2.0, 3.0)]).is_err());
}

#[test]
fn significance_tiers() {
    let cmp = || Comparison {
        method_a: "a".into(),
        method_b: "b".into(),
        model: "toy".into(),
        dataset: "smartvote".into(),
    };
    let hi = [0.9, 0.91, 0.92, 0.93, 0.94, 0.95, 0.96, 0.97];
    let lo = [0.1, 0.11, 0.12, 0.13, 0.14, 0.15, 0.16, 0.17];
    let r = SignificanceReport::compare(cmp(), &hi, &lo, 12, 0.05).unwrap();
    assert_eq!(r.tier, SignificanceTier::Bonferroni);
    let r = SignificanceReport::compare(cmp(), &lo, &hi, 12, 0.05).unwrap();
    assert_eq!(r.tier, SignificanceTier::NotSignificant);
    let r = SignificanceReport::compare(cmp(), &[1.0, 1.0], &[0.0, 0.0], 12, 0.05).unwrap();
    assert_eq!((r.p_value, r.tier), (0.0, SignificanceTier::Bonferroni));
    assert!(r.note.is_some());
}
