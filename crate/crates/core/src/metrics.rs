//! Agreement measures between a prediction and a target sequence.
//!
//! Population moments are used throughout. Zero first differences form their
//! own sign class in SDA: two flat steps agree, flat against moving disagrees.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Denominator below which CCC is reported as 0.
pub const CCC_GUARD: f64 = 1e-12;

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::TooShort { need: 2, got: x.len() });
    }
    Ok(())
}

/// Means, population variances and covariance of a pair.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Moments {
    pub mean_x: f64,
    pub mean_y: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub cov: f64,
}

impl Moments {
    pub(crate) fn of(x: &[f64], y: &[f64]) -> Self {
        let n = x.len() as f64;
        let mean_x = x.iter().sum::<f64>() / n;
        let mean_y = y.iter().sum::<f64>() / n;
        let (mut var_x, mut var_y, mut cov) = (0.0, 0.0, 0.0);
        for (a, b) in x.iter().zip(y) {
            let (dx, dy) = (a - mean_x, b - mean_y);
            var_x += dx * dx;
            var_y += dy * dy;
            cov += dx * dy;
        }
        Self {
            mean_x,
            mean_y,
            var_x: var_x / n,
            var_y: var_y / n,
            cov: cov / n,
        }
    }

    pub(crate) fn ccc_denominator(&self) -> f64 {
        self.var_x + self.var_y + (self.mean_x - self.mean_y).powi(2)
    }
}

/// Pearson correlation; 0 when either sequence is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let m = Moments::of(x, y);
    let denom = (m.var_x * m.var_y).sqrt();
    Ok(if denom > 0.0 { (m.cov / denom).clamp(-1.0, 1.0) } else { 0.0 })
}

/// Lin's concordance correlation coefficient.
pub fn ccc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    // Unnormalized sums keep small rational cases exact.
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mean_x, b - mean_y);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let denom = sxx + syy + n * (mean_x - mean_y).powi(2);
    Ok(if denom / n < CCC_GUARD {
        0.0
    } else {
        (2.0 * sxy / denom).clamp(-1.0, 1.0)
    })
}

/// `1 - ccc(pred, target)`.
pub fn ccc_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    Ok(1.0 - ccc(pred, target)?)
}

fn step_sign(d: f64) -> i8 {
    if d > 0.0 {
        1
    } else if d < 0.0 {
        -1
    } else {
        0
    }
}

/// Signed differential agreement: mean of +1/−1 over consecutive steps
/// according to whether the two first-difference signs match.
pub fn sda(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let total: i64 = x
        .windows(2)
        .zip(y.windows(2))
        .map(|(a, b)| {
            if step_sign(a[1] - a[0]) == step_sign(b[1] - b[0]) {
                1
            } else {
                -1
            }
        })
        .sum();
    Ok(total as f64 / (x.len() - 1) as f64)
}

/// CCC and SDA for one predicted channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub ccc: f64,
    pub sda: f64,
}

/// Scores several sequences of one channel: CCC over the concatenation,
/// SDA per sequence then averaged.
pub fn evaluate_sequences(preds: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<ChannelMetrics> {
    if preds.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: targets.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::Empty("evaluation sequences"));
    }
    let mut sda_sum = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        sda_sum += sda(p, t)?;
    }
    let flat_p: Vec<f64> = preds.iter().flatten().copied().collect();
    let flat_t: Vec<f64> = targets.iter().flatten().copied().collect();
    Ok(ChannelMetrics {
        ccc: ccc(&flat_p, &flat_t)?,
        sda: sda_sum / preds.len() as f64,
    })
}

/// The four columns of a results table row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ccc_mu: f64,
    pub ccc_sigma: f64,
    pub sda_mu: f64,
    pub sda_sigma: f64,
}

impl MetricReport {
    pub const KEYS: [&'static str; 4] = ["ccc_mu", "ccc_sigma", "sda_mu", "sda_sigma"];

    pub fn from_channels(mu: ChannelMetrics, sigma: ChannelMetrics) -> Self {
        Self {
            ccc_mu: mu.ccc,
            ccc_sigma: sigma.ccc,
            sda_mu: mu.sda,
            sda_sigma: sigma.sda,
        }
    }

    pub fn values(&self) -> [f64; 4] {
        [self.ccc_mu, self.ccc_sigma, self.sda_mu, self.sda_sigma]
    }

    /// Flat `key = value` record, one line per metric.
    pub fn to_record(&self) -> String {
        Self::KEYS
            .iter()
            .zip(self.values())
            .map(|(k, v)| format!("{k} = {v:.16e}\n"))
            .collect()
    }

    pub fn from_record(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid("record", format!("malformed line `{line}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::invalid("record", format!("bad number in `{line}`")))?;
            map.insert(k.trim().to_owned(), v);
        }
        let get = |k: &'static str| map.get(k).copied().ok_or_else(|| Error::invalid("record", format!("missing `{k}`")));
        Ok(Self {
            ccc_mu: get("ccc_mu")?,
            ccc_sigma: get("ccc_sigma")?,
            sda_mu: get("sda_mu")?,
            sda_sigma: get("sda_sigma")?,
        })
    }
}

/// Scores a single sequence pair for both channels.
pub fn report(pred_mu: &[f64], pred_sigma: &[f64], true_mu: &[f64], true_sigma: &[f64]) -> Result<MetricReport> {
    if pred_mu.len() != pred_sigma.len() {
        return Err(Error::LengthMismatch {
            left: pred_mu.len(),
            right: pred_sigma.len(),
        });
    }
    Ok(MetricReport {
        ccc_mu: ccc(pred_mu, true_mu)?,
        ccc_sigma: ccc(pred_sigma, true_sigma)?,
        sda_mu: sda(pred_mu, true_mu)?,
        sda_sigma: sda(pred_sigma, true_sigma)?,
    })
}

/// Mean and population standard deviation across folds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("fold values"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mean,
            std: var.sqrt(),
            count: values.len(),
        })
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.count > 1 {
            write!(f, "{:.3}±{:.3}", self.mean, self.std)
        } else {
            write!(f, "{:.3}", self.mean)
        }
    }
}

/// Column-wise fold aggregate of [`MetricReport`]s.
pub fn aggregate(reports: &[MetricReport]) -> Result<[Summary; 4]> {
    let column = |i: usize| Summary::of(&reports.iter().map(|r| r.values()[i]).collect::<Vec<_>>());
    Ok([column(0)?, column(1)?, column(2)?, column(3)?])
}
