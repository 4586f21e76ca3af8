//! Self-contained two-sample statistics: Welch's unequal-variance t-test
//! with a Welch–Satterthwaite degrees-of-freedom correction, and the special
//! functions needed for its two-sided p-value.
//!
//! The p-value evaluates the regularized incomplete beta function
//! I_x(dof/2, 1/2) at x = dof/(dof + t^2) with a Lentz-style continued
//! fraction; no external statistics dependency. Accuracy is checked in this
//! crate's tests against frozen reference values and, in the integration
//! suite, against an independent quadrature of the beta integral, both to
//! 1e-9.

use thiserror::Error;

use crate::kernel::Method;

/// Significance level used throughout the reports.
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("each sample needs at least two values")]
    TooFewSamples,
    #[error("both samples are constant; the statistic is undefined")]
    DegenerateVariance,
    #[error("method {0} missing from the results")]
    MissingMethod(Method),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchResult {
    pub t: f64,
    pub dof: f64,
    pub p: f64,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance (n-1 denominator).
pub fn sample_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() as f64 - 1.0)
}

pub fn sample_std(values: &[f64]) -> f64 {
    sample_variance(values).sqrt()
}

/// Two-sided Welch's t-test.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::TooFewSamples);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_variance(a), sample_variance(b));
    if va == 0.0 && vb == 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    let sea = va / na;
    let seb = vb / nb;
    let t = (mean(a) - mean(b)) / (sea + seb).sqrt();
    let dof = (sea + seb) * (sea + seb)
        / (sea * sea / (na - 1.0) + seb * seb / (nb - 1.0));
    let p = student_t_two_sided_p(t, dof);
    Ok(WelchResult { t, dof, p })
}

/// Two-sided p-value of Student's t at `t` with `dof` degrees of freedom.
pub fn student_t_two_sided_p(t: f64, dof: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let x = dof / (dof + t * t);
    reg_inc_beta(x, dof / 2.0, 0.5).clamp(0.0, 1.0)
}

/// ln Γ(x) for x > 0 via the Lanczos approximation.
pub fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    const COEFFS: [f64; 6] = [
        76.180_091_729_471_46,
        -86.505_320_329_416_77,
        24.014_098_240_830_91,
        -1.231_739_572_450_155,
        0.120_865_097_386_617_9e-2,
        -0.539_523_938_495_3e-5,
    ];
    let mut sum = 1.000_000_000_190_015;
    for (i, c) in COEFFS.iter().enumerate() {
        sum += c / (x + i as f64 + 1.0);
    }
    let tmp = x + 5.5;
    let tmp = (x + 0.5) * tmp.ln() - tmp;
    tmp + (2.506_628_274_631_000_5 * sum / x).ln()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Continued-fraction core of the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-16;
    const FPMIN: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn reg_inc_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// One pairwise comparison at [`ALPHA`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTest {
    pub a: Method,
    pub b: Method,
    pub t: f64,
    pub dof: f64,
    pub p: f64,
    pub significant: bool,
}

/// The three pairwise runtime comparisons, each method pair exactly once.
pub fn evaluate_hypotheses(
    samples: &[(Method, Vec<f64>)],
) -> Result<Vec<PairTest>, StatsError> {
    let lookup = |method: Method| -> Result<&Vec<f64>, StatsError> {
        samples
            .iter()
            .find(|(m, _)| *m == method)
            .map(|(_, v)| v)
            .ok_or(StatsError::MissingMethod(method))
    };
    let pairs = [
        (Method::Learning, Method::NotLearning),
        (Method::NoFixCodeByLearning, Method::NotLearning),
        (Method::Learning, Method::NoFixCodeByLearning),
    ];
    let mut out = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        let result = welch_t_test(lookup(a)?, lookup(b)?)?;
        out.push(PairTest {
            a,
            b,
            t: result.t,
            dof: result.dof,
            p: result.p,
            significant: result.p < ALPHA,
        });
    }
    Ok(out)
}
