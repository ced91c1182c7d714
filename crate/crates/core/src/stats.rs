//! Significance tests, effect sizes and the neutral-rate regression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{t_quantile, t_sf};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n - 1).
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        0.0
    } else {
        variance(xs).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    /// Upper-tail p for `mean(a) > mean(b)`.
    pub p_value: f64,
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Metric("each sample needs at least 2 values".into()));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::Numeric("samples must be finite".into()));
    }
    Ok(())
}

/// One-tailed Welch t-test of `mean(a) > mean(b)` with Welch-Satterthwaite
/// degrees of freedom.
///
/// When both samples have zero variance the test is degenerate; the error
/// carries p = 0 if `mean(a) > mean(b)` and p = 1 otherwise.
pub fn welch_one_tailed(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    check_pair(a, b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (variance(a) / na, variance(b) / nb);
    let diff = mean(a) - mean(b);
    if va + vb == 0.0 {
        return Err(Error::Degenerate {
            reason: "both samples have zero variance".into(),
            p_value: if diff > 0.0 { 0.0 } else { 1.0 },
        });
    }
    let t = diff / (va + vb).sqrt();
    let df = (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    Ok(WelchResult {
        t,
        df,
        p_value: t_sf(t, df),
    })
}

/// `(mean(a) - mean(b)) / s_pooled` with `s_pooled² = ((na-1)va + (nb-1)vb) / (na+nb-2)`.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = (((na - 1.0) * variance(a) + (nb - 1.0) * variance(b)) / (na + nb - 2.0)).sqrt();
    if pooled == 0.0 {
        return Err(Error::Degenerate {
            reason: "zero pooled standard deviation".into(),
            p_value: f64::NAN,
        });
    }
    Ok((mean(a) - mean(b)) / pooled)
}

pub fn bonferroni_threshold(alpha: f64, m: usize) -> f64 {
    alpha / m.max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignificanceTier {
    Bonferroni,
    Uncorrected,
    NotSignificant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub method_a: String,
    pub method_b: String,
    pub model: String,
    pub dataset: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub comparison: Comparison,
    pub p_value: f64,
    pub cohens_d: Option<f64>,
    pub m: usize,
    pub significant_bonferroni: bool,
    pub tier: SignificanceTier,
    /// Set when the test was degenerate and `p_value` is the decision value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl SignificanceReport {
    /// Tests `a > b` and classifies the result against `alpha` and
    /// `alpha / m`.
    pub fn compare(comparison: Comparison, a: &[f64], b: &[f64], m: usize, alpha: f64) -> Result<Self> {
        let (p_value, note) = match welch_one_tailed(a, b) {
            Ok(w) => (w.p_value, None),
            Err(Error::Degenerate { reason, p_value }) => (p_value, Some(reason)),
            Err(e) => return Err(e),
        };
        let d = cohens_d(a, b).ok();
        let bonf = p_value < bonferroni_threshold(alpha, m);
        let tier = if bonf {
            SignificanceTier::Bonferroni
        } else if p_value < alpha {
            SignificanceTier::Uncorrected
        } else {
            SignificanceTier::NotSignificant
        };
        Ok(SignificanceReport {
            comparison,
            p_value,
            cohens_d: d,
            m,
            significant_bonferroni: bonf,
            tier,
            note,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub n: usize,
    pub intercept: f64,
    pub slope: f64,
    pub slope_se: f64,
    pub slope_ci95: (f64, f64),
    pub r: f64,
    pub r_squared: f64,
    /// Two-sided p for a zero slope.
    pub p_value: f64,
    /// `sqrt(SSE / n)`.
    pub rmse: f64,
}

/// Ordinary least squares of `y` on `x` with an intercept.
pub fn regress(points: &[(f64, f64)]) -> Result<RegressionResult> {
    let n = points.len();
    if n < 3 {
        return Err(Error::Metric(format!("regression needs at least 3 points, got {n}")));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Numeric("regression points must be finite".into()));
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in points {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::Rank("regressor is constant".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = points
        .iter()
        .map(|(x, y)| {
            let e = y - intercept - slope * x;
            e * e
        })
        .sum();
    let df = nf - 2.0;
    let slope_se = (sse / df / sxx).sqrt();
    let r = if syy == 0.0 { 0.0 } else { sxy / (sxx * syy).sqrt() };
    let p_value = if slope_se == 0.0 {
        if slope == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (2.0 * t_sf((slope / slope_se).abs(), df)).min(1.0)
    };
    let q = t_quantile(0.975, df)?;
    Ok(RegressionResult {
        n,
        intercept,
        slope,
        slope_se,
        slope_ci95: (slope - q * slope_se, slope + q * slope_se),
        r,
        r_squared: r * r,
        p_value,
        rmse: (sse / nf).sqrt(),
    })
}
