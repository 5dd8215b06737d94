//! Summary statistics and Welch's t-test.
//!
//! Student-t quantiles and tail probabilities come from `statrs`, which
//! evaluates the regularized incomplete beta function by continued fraction.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    /// `std / mean · 100`; absent when the mean is not positive.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cv_percent: Option<f64>,
}

impl SummaryStats {
    pub fn ci95_half_width(&self) -> f64 {
        (self.ci95_high - self.ci95_low) / 2.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t_stat: f64,
    /// Welch-Satterthwaite degrees of freedom.
    pub df: f64,
    pub p_two_tailed: f64,
    /// Both samples had zero variance; `p` was assigned by convention
    /// (1 for equal means, 0 otherwise) rather than computed.
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub degenerate: bool,
}

/// Two-sided 97.5% quantile of Student's t with `df` degrees of freedom.
pub fn t_critical_975(df: f64) -> f64 {
    student_t(df).inverse_cdf(0.975)
}

fn student_t(df: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, df).expect("degrees of freedom must be positive")
}

/// Two-tailed p-value for `|T| >= |t|`.
pub fn t_two_tailed_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    let tail = student_t(df).cdf(-t.abs());
    (2.0 * tail).clamp(0.0, 1.0)
}

fn mean_var(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let ss = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    (mean, ss / (n - 1.0))
}

/// Mean, sample std, t-based 95% CI and coefficient of variation.
pub fn summarize(samples: &[f64]) -> Result<SummaryStats> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let n = samples.len();
    let (mean, var) = mean_var(samples);
    let std = var.sqrt();
    let half = t_critical_975((n - 1) as f64) * std / (n as f64).sqrt();
    Ok(SummaryStats {
        n,
        mean,
        std,
        ci95_low: mean - half,
        ci95_high: mean + half,
        cv_percent: (mean > 0.0).then(|| std / mean * 100.0),
    })
}

/// Welch's unequal-variance t-test, `t = (mean_a − mean_b) / se`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(Error::TooFewSamples {
                needed: 2,
                got: s.len(),
            });
        }
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;

    if se2 == 0.0 {
        let diff = ma - mb;
        let t_stat = if diff == 0.0 { 0.0 } else { f64::INFINITY.copysign(diff) };
        return Ok(WelchResult {
            t_stat,
            df: na + nb - 2.0,
            p_two_tailed: if diff == 0.0 { 1.0 } else { 0.0 },
            degenerate: true,
        });
    }

    let t_stat = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(WelchResult {
        t_stat,
        df,
        p_two_tailed: t_two_tailed_p(t_stat, df),
        degenerate: false,
    })
}
