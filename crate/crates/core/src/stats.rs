//! Descriptive statistics and the one-tailed Welch t-test.
//!
//! The Student t tail is evaluated through the regularized incomplete beta
//! function (Lentz continued fraction) with a Lanczos log-gamma, so there is
//! no dependency on an external math crate.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("sample is empty")]
    EmptySample,
    #[error("sample has {0} value(s); at least 2 are required")]
    SampleTooSmall(usize),
    #[error("degrees of freedom must be positive, got {0}")]
    InvalidDf(f64),
    #[error("sample contains a non-finite value")]
    NonFinite,
}

// ---------------------------------------------------------------------------
// Special functions
// ---------------------------------------------------------------------------

const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 10_000;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
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

/// P(T > t) for Student's t with `df` degrees of freedom (non-integer allowed).
pub fn student_t_upper_tail(t: f64, df: f64) -> Result<f64, StatsError> {
    if df.is_nan() || df <= 0.0 || df.is_infinite() {
        return Err(StatsError::InvalidDf(df));
    }
    if t.is_nan() {
        return Err(StatsError::NonFinite);
    }
    if t == 0.0 {
        return Ok(0.5);
    }
    // P(|T| > |t|) = I_{df/(df+t²)}(df/2, 1/2)
    let x = df / (df + t * t);
    let two_sided = regularized_incomplete_beta(df / 2.0, 0.5, x);
    let tail = 0.5 * two_sided;
    Ok(if t > 0.0 { tail } else { 1.0 - tail })
}

// ---------------------------------------------------------------------------
// Descriptive statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 for a single value.
    pub sd: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    /// Most extreme datum not below q1 − 1.5·IQR, or q1 if that datum lies
    /// above q1 (possible with few, skewed values).
    pub whisker_low: f64,
    /// Most extreme datum not above q3 + 1.5·IQR, capped below at q3.
    pub whisker_high: f64,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance, two-pass.
pub fn sample_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64
}

/// Inclusive linear-interpolation quantile of sorted data: position p·(n−1).
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn describe(values: &[f64]) -> Result<SampleStats, StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let low_fence = q1 - 1.5 * iqr;
    let high_fence = q3 + 1.5 * iqr;
    let whisker_low = sorted
        .iter()
        .copied()
        .find(|v| *v >= low_fence)
        .unwrap_or(sorted[0])
        .min(q1);
    let whisker_high = sorted
        .iter()
        .rev()
        .copied()
        .find(|v| *v <= high_fence)
        .unwrap_or(sorted[sorted.len() - 1])
        .max(q3);
    Ok(SampleStats {
        n: values.len(),
        mean: mean(values),
        sd: sample_variance(values).sqrt(),
        median,
        q1,
        q3,
        iqr,
        whisker_low,
        whisker_high,
    })
}

// ---------------------------------------------------------------------------
// Welch t-test
// ---------------------------------------------------------------------------

/// Which tail the one-tailed p-value refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// mean(a) > mean(b): P(T > t).
    Greater,
    /// mean(a) < mean(b): P(T < t).
    Less,
    /// P(T > |t|), what spreadsheet one-tailed tests report.
    #[default]
    Absolute,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Greater => "greater",
            Direction::Less => "less",
            Direction::Absolute => "absolute",
        })
    }
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greater" => Ok(Direction::Greater),
            "less" => Ok(Direction::Less),
            "absolute" => Ok(Direction::Absolute),
            other => Err(format!(
                "unknown direction {other:?} (absolute|greater|less)"
            )),
        }
    }
}

/// Degrees of freedom used when evaluating the t tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DfMode {
    /// Welch–Satterthwaite df rounded to the nearest integer, as spreadsheet
    /// `T.TEST(..., type 3)` does. Reproduces published spreadsheet p-values.
    #[default]
    Rounded,
    /// The unrounded Welch–Satterthwaite df.
    Continuous,
}

impl fmt::Display for DfMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DfMode::Rounded => "rounded",
            DfMode::Continuous => "continuous",
        })
    }
}

impl std::str::FromStr for DfMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rounded" => Ok(DfMode::Rounded),
            "continuous" => Ok(DfMode::Continuous),
            other => Err(format!("unknown df mode {other:?} (rounded|continuous)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WelchOptions {
    pub direction: Direction,
    pub df_mode: DfMode,
}

/// Outcome of a Welch test. When both samples have zero variance the test is
/// not computable and `t`, `df` and `p` are all `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: Option<f64>,
    /// Welch–Satterthwaite df, unrounded.
    pub df: Option<f64>,
    pub p: Option<f64>,
    pub direction: Direction,
    pub df_mode: DfMode,
    pub computable: bool,
}

impl WelchResult {
    /// Significance label with the usual two thresholds.
    pub fn significance_label(&self) -> &'static str {
        significance_label(self.p)
    }
}

pub fn significance_label(p: Option<f64>) -> &'static str {
    match p {
        None => "N/A",
        Some(p) if p < 0.01 => "**",
        Some(p) if p < 0.05 => "*",
        Some(_) => "n.s.",
    }
}

pub fn welch_one_tailed(
    a: &[f64],
    b: &[f64],
    direction: Direction,
) -> Result<WelchResult, StatsError> {
    welch_test(
        a,
        b,
        WelchOptions {
            direction,
            df_mode: DfMode::default(),
        },
    )
}

pub fn welch_test(a: &[f64], b: &[f64], opts: WelchOptions) -> Result<WelchResult, StatsError> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(StatsError::SampleTooSmall(s.len()));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se_a = sample_variance(a) / na;
    let se_b = sample_variance(b) / nb;
    let se2 = se_a + se_b;
    if se2 == 0.0 {
        return Ok(WelchResult {
            t: None,
            df: None,
            p: None,
            direction: opts.direction,
            df_mode: opts.df_mode,
            computable: false,
        });
    }
    let t = (mean(a) - mean(b)) / se2.sqrt();
    let df = se2 * se2 / (se_a * se_a / (na - 1.0) + se_b * se_b / (nb - 1.0));
    let df_eval = match opts.df_mode {
        DfMode::Continuous => df,
        DfMode::Rounded => df.round().max(1.0),
    };
    let p = match opts.direction {
        Direction::Greater => student_t_upper_tail(t, df_eval)?,
        Direction::Less => student_t_upper_tail(-t, df_eval)?,
        Direction::Absolute => student_t_upper_tail(t.abs(), df_eval)?,
    };
    Ok(WelchResult {
        t: Some(t),
        df: Some(df),
        p: Some(p),
        direction: opts.direction,
        df_mode: opts.df_mode,
        computable: true,
    })
}

/// Formats like C's `%.6g`: six significant digits, trailing zeros trimmed.
pub fn format_sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    let s = if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        // rounding may carry into a new digit (e.g. 9.999995 -> 10.00000)
        let digits = s
            .trim_start_matches('-')
            .replace('.', "")
            .trim_start_matches('0')
            .len();
        if digits > 6 && decimals > 0 {
            format!("{x:.prec$}", prec = decimals - 1)
        } else {
            s
        }
    } else {
        format!("{x:.5e}")
    };
    trim_zeros(&s)
}

fn trim_zeros(s: &str) -> String {
    if let Some((mantissa, exp)) = s.split_once('e') {
        return format!("{}e{}", trim_zeros(mantissa), exp);
    }
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}
