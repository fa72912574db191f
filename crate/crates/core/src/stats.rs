//! One-way ANOVA, pooled two-sample t-test and Holm-Bonferroni.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupData {
    pub label: String,
    pub values: Vec<f64>,
}

impl GroupData {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Self {
        Self { label: label.into(), values }
    }

    fn check(&self, min_len: usize) -> Result<()> {
        if self.values.len() < min_len {
            return Err(Error::Degenerate(format!(
                "group '{}' has {} values, need at least {min_len}",
                self.label,
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("group values"));
        }
        Ok(())
    }

    fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    fn sum_sq_dev(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|v| (v - m).powi(2)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p: f64,
}

pub fn anova_oneway(groups: &[GroupData]) -> Result<AnovaResult> {
    if groups.len() < 2 {
        return Err(Error::Degenerate(format!("ANOVA needs at least 2 groups, got {}", groups.len())));
    }
    for g in groups {
        g.check(2)?;
    }
    let n: usize = groups.iter().map(|g| g.values.len()).sum();
    let grand = groups.iter().flat_map(|g| &g.values).sum::<f64>() / n as f64;
    let ss_between: f64 = groups.iter().map(|g| g.values.len() as f64 * (g.mean() - grand).powi(2)).sum();
    let ss_within: f64 = groups.iter().map(GroupData::sum_sq_dev).sum();
    if ss_within == 0.0 {
        return Err(Error::Degenerate("zero within-group variance in every group".into()));
    }
    let df_between = groups.len() - 1;
    let df_within = n - groups.len();
    let f = (ss_between / df_between as f64) / (ss_within / df_within as f64);
    Ok(AnovaResult { f, df_between, df_within, p: f_sf(f, df_between as f64, df_within as f64) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: usize,
    pub p: f64,
}

/// Student's t with pooled variance; two-sided p.
pub fn t_test_two_sample(a: &GroupData, b: &GroupData) -> Result<TTestResult> {
    a.check(2)?;
    b.check(2)?;
    let (na, nb) = (a.values.len() as f64, b.values.len() as f64);
    let df = a.values.len() + b.values.len() - 2;
    let pooled = (a.sum_sq_dev() + b.sum_sq_dev()) / df as f64;
    if pooled == 0.0 {
        return Err(Error::Degenerate("zero pooled variance".into()));
    }
    let t = (a.mean() - b.mean()) / (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    Ok(TTestResult { t, df, p: t_two_sided(t, df as f64) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Reject,
    Accept,
}

/// Step-down procedure; decisions come back in input order.
pub fn holm_bonferroni(p_values: &[f64], alpha: f64) -> Vec<Decision> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]));
    let mut out = vec![Decision::Accept; m];
    for (rank, &i) in order.iter().enumerate() {
        if p_values[i] <= alpha / (m - rank) as f64 {
            out[i] = Decision::Reject;
        } else {
            break;
        }
    }
    out
}

/// Upper tail of the F distribution.
pub fn f_sf(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    reg_inc_beta(d2 / (d2 + d1 * f), d2 / 2.0, d1 / 2.0)
}

/// Two-sided tail probability of Student's t.
pub fn t_two_sided(t: f64, df: f64) -> f64 {
    reg_inc_beta(df / (df + t * t), df / 2.0, 0.5)
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0 (Lanczos).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta I_x(a, b).
pub fn reg_inc_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    // the continued fraction converges fast on this side of the mean
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(x, a, b) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(1.0 - x, b, a) / b
    }
}

/// Modified Lentz evaluation of the incomplete beta continued fraction.
fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let even = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        let odd = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        for coef in [even, odd] {
            d = 1.0 + coef * d;
            if d.abs() < TINY {
                d = TINY;
            }
            c = 1.0 + coef / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            h *= d * c;
        }
        if (d * c - 1.0).abs() < EPS {
            break;
        }
    }
    h
}
