//! Indistinguishability survey: tallying responses and a chi-square
//! goodness-of-fit test against chance-level guessing.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Chance of picking the synthetic post by guessing, per task set (one of two,
/// three and four candidates).
pub const DEFAULT_EXPECTED_P: [(u32, f64); 3] = [(1, 0.5), (2, 1.0 / 3.0), (3, 0.25)];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub respondent: String,
    pub set: u32,
    #[serde(deserialize_with = "lenient_bool")]
    pub correct: bool,
}

fn lenient_bool<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    let s = String::deserialize(d)?;
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" | "t" => Ok(true),
        "0" | "false" | "no" | "n" | "f" => Ok(false),
        other => Err(serde::de::Error::custom(format!("not a boolean: {other:?}"))),
    }
}

/// Reads a `respondent,set,correct` CSV with a header row.
pub fn read_survey_csv(path: &Path) -> Result<Vec<SurveyResponse>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetTally {
    pub set: u32,
    /// Responses.
    pub n: u64,
    /// Correct identifications.
    pub k: u64,
    pub expected_p: f64,
    /// `k / n`, or `None` when the set has no responses.
    pub observed_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyTally {
    pub sets: Vec<SetTally>,
}

/// Counts responses per set. `expected` maps each known set id to its chance
/// probability; a response naming any other set is an error.
pub fn tally_survey(responses: &[SurveyResponse], expected: &BTreeMap<u32, f64>) -> Result<SurveyTally> {
    if let Some((&set, &p)) = expected.iter().find(|(_, &p)| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Config(format!(
            "expected probability for set {set} must be in (0, 1), got {p}"
        )));
    }
    let mut counts: BTreeMap<u32, (u64, u64)> = expected.keys().map(|&s| (s, (0, 0))).collect();
    for r in responses {
        let c = counts
            .get_mut(&r.set)
            .ok_or_else(|| Error::UnknownSet(r.set.to_string()))?;
        c.0 += 1;
        c.1 += r.correct as u64;
    }
    Ok(SurveyTally {
        sets: counts
            .into_iter()
            .map(|(set, (n, k))| SetTally {
                set,
                n,
                k,
                expected_p: expected[&set],
                observed_p: (n > 0).then(|| k as f64 / n as f64),
            })
            .collect(),
    })
}

pub fn default_expected() -> BTreeMap<u32, f64> {
    DEFAULT_EXPECTED_P.into_iter().collect()
}

/// Which cells enter the statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChiSquareForm {
    /// Correct and incorrect cells of every set, df = number of sets.
    #[default]
    Binomial,
    /// Correct cells only, df = number of sets minus one.
    CorrectOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareReport {
    pub form: ChiSquareForm,
    pub statistic: f64,
    pub degrees_of_freedom: u32,
    pub p_value: f64,
    /// Sets that entered the statistic (those with at least one response).
    pub sets_included: Vec<u32>,
    /// Set when some expected cell count is below 1 and the chi-square
    /// approximation should not be trusted.
    pub low_expected_warning: bool,
}

pub fn chi_square_gof(tally: &SurveyTally) -> Result<ChiSquareReport> {
    chi_square_gof_with(tally, ChiSquareForm::Binomial)
}

pub fn chi_square_gof_with(tally: &SurveyTally, form: ChiSquareForm) -> Result<ChiSquareReport> {
    let included: Vec<&SetTally> = tally.sets.iter().filter(|s| s.n > 0).collect();
    if included.is_empty() {
        return Err(Error::Empty("no survey set has any responses"));
    }
    let mut statistic = 0.0;
    let mut low = false;
    for s in &included {
        let n = s.n as f64;
        let k = s.k as f64;
        let e_yes = n * s.expected_p;
        let e_no = n * (1.0 - s.expected_p);
        statistic += (k - e_yes).powi(2) / e_yes;
        low |= e_yes < 1.0;
        if form == ChiSquareForm::Binomial {
            statistic += ((n - k) - e_no).powi(2) / e_no;
            low |= e_no < 1.0;
        }
    }
    let df = match form {
        ChiSquareForm::Binomial => included.len() as u32,
        ChiSquareForm::CorrectOnly => included.len() as u32 - 1,
    };
    if df == 0 {
        return Err(Error::Config(
            "correct-only form needs at least two sets with responses".into(),
        ));
    }
    Ok(ChiSquareReport {
        form,
        statistic,
        degrees_of_freedom: df,
        p_value: chi_square_sf(statistic, df as f64),
        sets_included: included.iter().map(|s| s.set).collect(),
        low_expected_warning: low,
    })
}

/// Upper tail `P(X >= x)` of the chi-square distribution with `df` degrees of
/// freedom.
pub fn chi_square_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_q(df / 2.0, x / 2.0)
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7, n = 9; relative error around 1e-15 for x > 0.
    const G: f64 = 7.0;
    const C: [f64; 9] = [
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
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + G + 0.5;
    let series = C[1..]
        .iter()
        .enumerate()
        .fold(C[0], |acc, (i, c)| acc + c / (x + i as f64 + 1.0));
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + series.ln()
}

const EPS: f64 = 1e-15;
const MAX_ITER: usize = 10_000;

/// Regularized lower incomplete gamma by its power series; converges fast for
/// `x < a + 1`.
fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    (sum.ln() - x + a * x.ln() - ln_gamma(a)).exp()
}

/// Regularized upper incomplete gamma by Lentz's continued fraction; for
/// `x >= a + 1`.
fn gamma_q_cf(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_cf(a, x)
    }
}
