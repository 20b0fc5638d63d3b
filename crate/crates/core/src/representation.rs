//! Ambiguity-aware emotion representations.
//!
//! * **Interval** (`I`): per-window distribution over the pooled absolute
//!   annotations of all annotators in `[n - F, n + F]`.
//! * **Individual ordinal** (`O_I`): per-window Gaussian over the pooled
//!   central-difference gradients of every annotator's trace.
//! * **Group ordinal** (`O_G`): central-difference gradients of the interval
//!   representation's `mu` and `sigma` sequences.
//!
//! All three share trace units, so the Beta family reports its mean and
//! standard deviation mapped back from the unit interval.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::special::{digamma, trigamma};
use crate::trace::{central_difference, TraceSet};

/// Clamp applied to unit-interval samples before a Beta fit.
pub const BETA_EPSILON: f64 = 1e-6;
const BETA_MAX_ITERATIONS: usize = 100;
const BETA_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    BetaMapped,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Gaussian => "gaussian",
            Family::BetaMapped => "beta_mapped",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Family::Gaussian),
            "beta_mapped" | "beta" => Ok(Family::BetaMapped),
            other => Err(Error::invalid("family", format!("unknown family tag `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn std_dev(&self) -> f64 {
        let s = self.alpha + self.beta;
        (self.alpha * self.beta / (s * s * (s + 1.0))).sqrt()
    }

    /// Mean log-likelihood of `samples` (all in (0, 1)).
    pub fn mean_log_likelihood(&self, mean_ln_x: f64, mean_ln_1mx: f64) -> f64 {
        (self.alpha - 1.0) * mean_ln_x + (self.beta - 1.0) * mean_ln_1mx - ln_beta_fn(self.alpha, self.beta)
    }
}

fn ln_beta_fn(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

// Lanczos approximation (g = 7, n = 9).
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
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
    let t = x + 7.5;
    let series = COEF[1..]
        .iter()
        .enumerate()
        .fold(COEF[0], |acc, (i, c)| acc + c / (x + i as f64 + 1.0));
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + series.ln()
}

/// Per-window distribution parameters in trace units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistParams {
    pub mu: f64,
    pub sigma: f64,
    pub family: Family,
    pub beta_params: Option<BetaParams>,
}

/// Pools every annotator's value in windows `[n - radius, n + radius]`,
/// truncated at the sequence ends. Annotator-major order.
pub fn pool_neighbors(trace_set: &TraceSet, n: usize, radius: usize) -> Result<Vec<f64>> {
    let rows: Vec<&[f64]> = trace_set.traces().iter().map(|t| t.values()).collect();
    pool_rows(&rows, n, radius)
}

fn pool_rows(rows: &[&[f64]], n: usize, radius: usize) -> Result<Vec<f64>> {
    let len = rows.first().map_or(0, |r| r.len());
    if n >= len {
        return Err(Error::OutOfRange { index: n, len });
    }
    let lo = n.saturating_sub(radius);
    let hi = (n + radius).min(len - 1);
    Ok(rows.iter().flat_map(|r| r[lo..=hi].iter().copied()).collect())
}

fn check_samples(samples: &[f64]) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::TooShort {
            need: 2,
            got: samples.len(),
        });
    }
    ensure_finite(samples)
}

/// Maximum-likelihood Gaussian: sample mean and population standard deviation.
pub fn fit_gaussian(samples: &[f64]) -> Result<DistParams> {
    check_samples(samples)?;
    let n = samples.len() as f64;
    let mu = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    Ok(DistParams {
        mu,
        sigma: var.sqrt(),
        family: Family::Gaussian,
        beta_params: None,
    })
}

/// Outcome of a unit-interval Beta maximum-likelihood fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaFit {
    pub params: BetaParams,
    pub iterations: usize,
    /// False when Newton did not converge and the moment estimate was kept.
    pub converged: bool,
}

/// Method-of-moments Beta estimate; `None` when the sample variance is too
/// large for any Beta distribution with that mean.
pub fn beta_moments(unit_samples: &[f64]) -> Option<BetaParams> {
    let n = unit_samples.len() as f64;
    let mean = unit_samples.iter().sum::<f64>() / n;
    let var = unit_samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var <= 0.0 {
        return None;
    }
    let common = mean * (1.0 - mean) / var - 1.0;
    (common > 0.0).then_some(BetaParams {
        alpha: mean * common,
        beta: (1.0 - mean) * common,
    })
}

/// Newton iterations on the digamma score equations
/// `ψ(α) − ψ(α+β) = E[ln x]`, `ψ(β) − ψ(α+β) = E[ln(1−x)]`,
/// started from the moment estimate. Samples must lie in (0, 1).
pub fn fit_beta_unit(unit_samples: &[f64]) -> Result<BetaFit> {
    check_samples(unit_samples)?;
    if let Some(&v) = unit_samples.iter().find(|&&v| v <= 0.0 || v >= 1.0) {
        return Err(Error::OutOfBounds { value: v, lo: 0.0, hi: 1.0 });
    }
    let first = unit_samples[0];
    if unit_samples.iter().all(|&v| v == first) {
        return Err(Error::Degenerate("all samples identical; widen the neighbour radius".into()));
    }
    let n = unit_samples.len() as f64;
    let g1 = unit_samples.iter().map(|v| v.ln()).sum::<f64>() / n;
    let g2 = unit_samples.iter().map(|v| (1.0 - v).ln()).sum::<f64>() / n;

    // A too-wide sample has no moment solution; start from a flat U-shape instead.
    let start = beta_moments(unit_samples).unwrap_or(BetaParams { alpha: 0.5, beta: 0.5 });
    let (mut a, mut b) = (start.alpha, start.beta);
    for iteration in 1..=BETA_MAX_ITERATIONS {
        let psi_ab = digamma(a + b);
        let f1 = digamma(a) - psi_ab - g1;
        let f2 = digamma(b) - psi_ab - g2;
        let t_ab = trigamma(a + b);
        let j11 = trigamma(a) - t_ab;
        let j22 = trigamma(b) - t_ab;
        let j12 = -t_ab;
        let det = j11 * j22 - j12 * j12;
        if !(det.is_finite() && det != 0.0) {
            break;
        }
        let mut da = (j22 * f1 - j12 * f2) / det;
        let mut db = (j11 * f2 - j12 * f1) / det;
        // Keep the iterate in the positive quadrant.
        while a - da <= 0.0 || b - db <= 0.0 {
            da *= 0.5;
            db *= 0.5;
        }
        a -= da;
        b -= db;
        if da.abs() <= BETA_TOLERANCE * a && db.abs() <= BETA_TOLERANCE * b {
            return Ok(BetaFit {
                params: BetaParams { alpha: a, beta: b },
                iterations: iteration,
                converged: true,
            });
        }
    }
    Ok(BetaFit {
        params: start,
        iterations: BETA_MAX_ITERATIONS,
        converged: false,
    })
}

/// Beta fit after mapping `[lo, hi]` linearly onto the unit interval.
/// Samples are clamped to `[ε, 1 − ε]`; mean and standard deviation are
/// reported back in `[lo, hi]` units.
pub fn fit_beta(samples: &[f64], bounds: (f64, f64)) -> Result<DistParams> {
    check_samples(samples)?;
    let (lo, hi) = bounds;
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::invalid("bounds", format!("[{lo}, {hi}] is not a valid range")));
    }
    let span = hi - lo;
    let unit = samples
        .iter()
        .map(|&v| {
            if v < lo || v > hi {
                Err(Error::OutOfBounds { value: v, lo, hi })
            } else {
                Ok(((v - lo) / span).clamp(BETA_EPSILON, 1.0 - BETA_EPSILON))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_beta_unit(&unit)?;
    Ok(DistParams {
        mu: lo + span * fit.params.mean(),
        sigma: span * fit.params.std_dev(),
        family: Family::BetaMapped,
        beta_params: Some(fit.params),
    })
}

fn fit_family(samples: &[f64], family: Family, bounds: Option<(f64, f64)>) -> Result<DistParams> {
    match family {
        Family::Gaussian => fit_gaussian(samples),
        Family::BetaMapped => {
            let bounds = bounds.ok_or_else(|| Error::invalid("family", "beta_mapped requires declared trace bounds"))?;
            fit_beta(samples, bounds)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRepresentation {
    pub params: Vec<DistParams>,
    pub neighbor_radius: usize,
}

impl IntervalRepresentation {
    pub fn mu(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.mu).collect()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.sigma).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualOrdinal {
    pub params: Vec<DistParams>,
    pub neighbor_radius: usize,
}

impl IndividualOrdinal {
    pub fn mu(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.mu).collect()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.sigma).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupOrdinal {
    pub dmu: Vec<f64>,
    pub dsigma: Vec<f64>,
}

fn fit_windows<F>(len: usize, mut fit: F) -> Result<Vec<DistParams>>
where
    F: FnMut(usize) -> Result<DistParams>,
{
    (0..len)
        .map(|n| {
            fit(n).map_err(|e| Error::WindowFit {
                window: n,
                source: Box::new(e),
            })
        })
        .collect()
}

pub fn interval_representation(
    trace_set: &TraceSet,
    family: Family,
    neighbor_radius: usize,
) -> Result<IntervalRepresentation> {
    if family == Family::BetaMapped && trace_set.bounds().is_none() {
        return Err(Error::invalid("family", "beta_mapped requires declared trace bounds"));
    }
    let params = fit_windows(trace_set.window_count(), |n| {
        let pooled = pool_neighbors(trace_set, n, neighbor_radius)?;
        fit_family(&pooled, family, trace_set.bounds())
    })?;
    Ok(IntervalRepresentation {
        params,
        neighbor_radius,
    })
}

pub fn individual_ordinal(trace_set: &TraceSet, neighbor_radius: usize) -> Result<IndividualOrdinal> {
    let n = trace_set.window_count();
    if n < 2 {
        return Err(Error::TooShort { need: 2, got: n });
    }
    let gradients = trace_set.gradients()?;
    let rows: Vec<&[f64]> = gradients.iter().map(|g| g.values.as_slice()).collect();
    let params = fit_windows(n, |w| fit_gaussian(&pool_rows(&rows, w, neighbor_radius)?))?;
    Ok(IndividualOrdinal {
        params,
        neighbor_radius,
    })
}

pub fn group_ordinal(interval: &IntervalRepresentation) -> Result<GroupOrdinal> {
    Ok(GroupOrdinal {
        dmu: central_difference(&interval.mu())?,
        dsigma: central_difference(&interval.sigma())?,
    })
}

/// Representation tag as used on the command line and in file headers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    #[serde(rename = "I")]
    Interval,
    #[serde(rename = "O_I")]
    IndividualOrdinal,
    #[serde(rename = "O_G")]
    GroupOrdinal,
}

impl Tag {
    pub const ALL: [Tag; 3] = [Tag::Interval, Tag::IndividualOrdinal, Tag::GroupOrdinal];

    pub fn as_str(&self) -> &'static str {
        match self {
            Tag::Interval => "I",
            Tag::IndividualOrdinal => "O_I",
            Tag::GroupOrdinal => "O_G",
        }
    }

    /// Display label used in report tables.
    pub fn label(&self) -> &'static str {
        match self {
            Tag::Interval => "I",
            Tag::IndividualOrdinal => "O^I",
            Tag::GroupOrdinal => "O^G",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" => Ok(Tag::Interval),
            "O_I" | "OI" | "O^I" => Ok(Tag::IndividualOrdinal),
            "O_G" | "OG" | "O^G" => Ok(Tag::GroupOrdinal),
            other => Err(Error::invalid("tag", format!("unknown representation `{other}`"))),
        }
    }
}

/// Which of a representation's two parameters a model predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Mu,
    Sigma,
}

impl Channel {
    pub const BOTH: [Channel; 2] = [Channel::Mu, Channel::Sigma];

    pub fn as_str(&self) -> &'static str {
        match self {
            Channel::Mu => "mu",
            Channel::Sigma => "sigma",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu" => Ok(Channel::Mu),
            "sigma" => Ok(Channel::Sigma),
            other => Err(Error::invalid("target", format!("unknown target `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Representation {
    Interval(IntervalRepresentation),
    IndividualOrdinal(IndividualOrdinal),
    GroupOrdinal(GroupOrdinal),
}

impl Representation {
    /// Computes the representation named by `tag`. The group ordinal
    /// representation derives the interval representation first.
    pub fn compute(trace_set: &TraceSet, tag: Tag, family: Family, neighbor_radius: usize) -> Result<Self> {
        Ok(match tag {
            Tag::Interval => Representation::Interval(interval_representation(trace_set, family, neighbor_radius)?),
            Tag::IndividualOrdinal => {
                Representation::IndividualOrdinal(individual_ordinal(trace_set, neighbor_radius)?)
            }
            Tag::GroupOrdinal => Representation::GroupOrdinal(group_ordinal(&interval_representation(
                trace_set,
                family,
                neighbor_radius,
            )?)?),
        })
    }

    pub fn tag(&self) -> Tag {
        match self {
            Representation::Interval(_) => Tag::Interval,
            Representation::IndividualOrdinal(_) => Tag::IndividualOrdinal,
            Representation::GroupOrdinal(_) => Tag::GroupOrdinal,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Representation::Interval(r) => r.params.len(),
            Representation::IndividualOrdinal(r) => r.params.len(),
            Representation::GroupOrdinal(r) => r.dmu.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The `mu`-like (`mu`, `mu^I`, `dmu`) or `sigma`-like sequence.
    pub fn channel(&self, channel: Channel) -> Vec<f64> {
        match (self, channel) {
            (Representation::Interval(r), Channel::Mu) => r.mu(),
            (Representation::Interval(r), Channel::Sigma) => r.sigma(),
            (Representation::IndividualOrdinal(r), Channel::Mu) => r.mu(),
            (Representation::IndividualOrdinal(r), Channel::Sigma) => r.sigma(),
            (Representation::GroupOrdinal(r), Channel::Mu) => r.dmu.clone(),
            (Representation::GroupOrdinal(r), Channel::Sigma) => r.dsigma.clone(),
        }
    }

    /// Column names of the table written by [`Representation::write_table`].
    pub fn columns(&self) -> &'static [&'static str] {
        match self {
            Representation::Interval(r) if r.params.iter().any(|p| p.beta_params.is_some()) => {
                &["window_index", "mu", "sigma", "alpha", "beta"]
            }
            Representation::GroupOrdinal(_) => &["window_index", "dmu", "dsigma"],
            _ => &["window_index", "mu", "sigma"],
        }
    }

    /// Writes the columnar table with a `# key = value` header.
    pub fn write_table<W: Write>(&self, out: &mut W, header: &TableHeader) -> std::io::Result<()> {
        writeln!(out, "# format_version = {}", TableHeader::FORMAT_VERSION)?;
        writeln!(out, "# tag = {}", self.tag())?;
        writeln!(out, "# family = {}", header.family)?;
        writeln!(out, "# neighbor_radius = {}", header.neighbor_radius)?;
        writeln!(out, "# source_hash = {}", header.source_hash)?;
        writeln!(out, "{}", self.columns().join(","))?;
        let mu = self.channel(Channel::Mu);
        let sigma = self.channel(Channel::Sigma);
        let beta: Vec<Option<BetaParams>> = match self {
            Representation::Interval(r) => r.params.iter().map(|p| p.beta_params).collect(),
            _ => vec![None; mu.len()],
        };
        let with_beta = self.columns().len() == 5;
        for (n, ((m, s), bp)) in mu.iter().zip(&sigma).zip(&beta).enumerate() {
            write!(out, "{n},{},{}", fmt_f64(*m), fmt_f64(*s))?;
            if with_beta {
                let bp = bp.unwrap_or(BetaParams {
                    alpha: f64::NAN,
                    beta: f64::NAN,
                });
                write!(out, ",{},{}", fmt_f64(bp.alpha), fmt_f64(bp.beta))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Metadata written above a representation table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableHeader {
    pub family: Family,
    pub neighbor_radius: usize,
    pub source_hash: String,
}

impl TableHeader {
    pub const FORMAT_VERSION: u32 = 1;
}

/// Decimal rendering with 17 significant digits (round-trips bit-exactly).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::AnnotationTrace;
    use proptest::prelude::*;

    fn set(rows: &[&[f64]], bounds: Option<(f64, f64)>) -> TraceSet {
        let traces = rows
            .iter()
            .enumerate()
            .map(|(m, r)| AnnotationTrace::new(format!("a{m}"), r.to_vec(), 3.0).unwrap())
            .collect();
        TraceSet::new(traces, bounds).unwrap()
    }

    fn six_annotators(n: usize) -> TraceSet {
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|m| (0..n).map(|i| (m * 10 + i) as f64).collect())
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        set(&refs, None)
    }

    #[test]
    fn pooling_counts() {
        let s = six_annotators(5);
        let w0 = pool_neighbors(&s, 2, 0).unwrap();
        assert_eq!(w0, s.window(2).collect::<Vec<_>>());
        assert_eq!(pool_neighbors(&s, 2, 1).unwrap().len(), 18);
        assert_eq!(pool_neighbors(&s, 0, 1).unwrap().len(), 12);
        assert_eq!(pool_neighbors(&s, 4, 1).unwrap().len(), 12);
        assert_eq!(pool_neighbors(&s, 2, 10).unwrap().len(), 30);
        assert!(matches!(pool_neighbors(&s, 5, 1), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn gaussian_cases() {
        let p = fit_gaussian(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(p.mu, 2.0);
        assert!((p.sigma - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let flat = fit_gaussian(&[0.7; 4]).unwrap();
        assert_eq!((flat.mu, flat.sigma), (0.7, 0.0));
        let sym = fit_gaussian(&[-3.5, -1.25, 0.0, 1.25, 3.5]).unwrap();
        assert!(sym.mu.abs() < 1e-12);
        assert!(fit_gaussian(&[1.0]).is_err());
        assert!(fit_gaussian(&[1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn beta_symmetric_sample() {
        let samples = [-0.8, -0.4, -0.1, 0.1, 0.4, 0.8];
        let p = fit_beta(&samples, (-1.0, 1.0)).unwrap();
        let bp = p.beta_params.unwrap();
        assert!((bp.alpha - bp.beta).abs() < 1e-8 * bp.alpha);
        assert!(p.mu.abs() < 1e-9);
        assert_eq!(p.family, Family::BetaMapped);
    }

    #[test]
    fn beta_clamps_boundary_samples() {
        let p = fit_beta(&[-1.0, -0.2, 0.3, 0.5], (-1.0, 1.0)).unwrap();
        assert!(p.mu.is_finite() && p.sigma > 0.0);
        assert!(p.beta_params.unwrap().alpha > 0.0);
    }

    #[test]
    fn beta_errors() {
        assert!(matches!(
            fit_beta(&[0.0, 1.5], (-1.0, 1.0)),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(matches!(fit_beta(&[0.2, 0.2, 0.2], (0.0, 1.0)), Err(Error::Degenerate(_))));
        // Distinct raw values that collapse under the clamp.
        assert!(matches!(fit_beta(&[0.0, 1e-9], (0.0, 1.0)), Err(Error::Degenerate(_))));
        assert!(fit_beta(&[0.2, 0.3], (1.0, 0.0)).is_err());
    }

    #[test]
    fn beta_newton_solves_score_equations() {
        let samples = [0.12, 0.31, 0.33, 0.45, 0.52, 0.07, 0.26, 0.61];
        let fit = fit_beta_unit(&samples).unwrap();
        assert!(fit.converged);
        let n = samples.len() as f64;
        let g1 = samples.iter().map(|v: &f64| v.ln()).sum::<f64>() / n;
        let g2 = samples.iter().map(|v: &f64| (1.0 - v).ln()).sum::<f64>() / n;
        let BetaParams { alpha, beta } = fit.params;
        assert!((digamma(alpha) - digamma(alpha + beta) - g1).abs() < 1e-9);
        assert!((digamma(beta) - digamma(alpha + beta) - g2).abs() < 1e-9);
    }

    #[test]
    fn ln_gamma_reference_points() {
        assert!(ln_gamma(1.0).abs() < 1e-13);
        assert!(ln_gamma(2.0).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-11);
    }

    #[test]
    fn interval_constant_and_mirrored() {
        let s = set(&[&[0.3; 5], &[0.3; 5], &[0.3; 5]], None);
        let rep = interval_representation(&s, Family::Gaussian, 1).unwrap();
        assert!(rep.params.iter().all(|p| p.mu == 0.3 && p.sigma == 0.0));
        let g = group_ordinal(&rep).unwrap();
        assert!(g.dmu.iter().chain(&g.dsigma).all(|&v| v == 0.0));

        let up = [0.1, 0.5, -0.2, 0.9];
        let down: Vec<f64> = up.iter().map(|v| -v).collect();
        let s = set(&[&up, &down], Some((-1.0, 1.0)));
        for family in [Family::Gaussian, Family::BetaMapped] {
            let rep = interval_representation(&s, family, 1).unwrap();
            assert!(rep.params.iter().all(|p| p.mu.abs() < 1e-8), "{family}");
        }
    }

    #[test]
    fn interval_beta_requires_bounds() {
        let s = set(&[&[0.1, 0.2], &[0.3, 0.4]], None);
        assert!(interval_representation(&s, Family::BetaMapped, 1).is_err());
    }

    #[test]
    fn interval_fit_error_names_window() {
        let s = set(&[&[0.2, 0.2, 0.5, 0.9], &[0.2, 0.2, 0.1, 0.3]], Some((0.0, 1.0)));
        match interval_representation(&s, Family::BetaMapped, 0) {
            Err(Error::WindowFit { window, .. }) => assert_eq!(window, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn interval_radius_zero_is_window_fit() {
        let s = six_annotators(4);
        let rep = interval_representation(&s, Family::Gaussian, 0).unwrap();
        for n in 0..4 {
            let direct = fit_gaussian(&s.window(n).collect::<Vec<_>>()).unwrap();
            assert_eq!(rep.params[n], direct);
        }
    }

    #[test]
    fn individual_ordinal_offsets_vanish() {
        let trend = [0.0, 0.3, 0.1, 0.6, 0.2];
        let rows: Vec<Vec<f64>> = [0.0, -0.4, 0.25]
            .iter()
            .map(|c| trend.iter().map(|t| t + c).collect())
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let rep = individual_ordinal(&set(&refs, None), 0).unwrap();
        assert!(rep.params.iter().all(|p| p.sigma < 1e-12));
        // With pooling the spread only reflects the shared trend's own variation.
        let pooled = individual_ordinal(&set(&refs, None), 1).unwrap();
        let alone = individual_ordinal(&set(&[&trend, &trend], None), 1).unwrap();
        for (p, q) in pooled.params.iter().zip(&alone.params) {
            assert!((p.sigma - q.sigma).abs() < 1e-12);
        }

        let flat = individual_ordinal(&set(&[&[1.0; 4], &[2.0; 4]], None), 1).unwrap();
        assert!(flat.params.iter().all(|p| p.mu == 0.0 && p.sigma == 0.0));
        assert!(individual_ordinal(&set(&[&[1.0], &[2.0]], None), 1).is_err());
    }

    #[test]
    fn individual_ordinal_opposite_slopes() {
        // b mirrors a; both start from the same value.
        let a = [0.0, 1.0, 0.0, 1.0];
        let b = [0.0, -1.0, 0.0, -1.0];
        // cd(a) = [1, 0, 0, 1], cd(b) = [-1, 0, 0, -1]
        let rep = individual_ordinal(&set(&[&a, &b], None), 0).unwrap();
        assert_eq!(rep.params[0].sigma, 1.0);
        assert_eq!(rep.params[3].sigma, 1.0);
        // With F = 1 the interior windows pool the endpoint gradients.
        let pooled = individual_ordinal(&set(&[&a, &b], None), 1).unwrap();
        // window 1 pools gradients {1, 0, 0} and {-1, 0, 0}: mean 0, var 2/6
        assert!((pooled.params[1].sigma - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(pooled.params[1].sigma > 0.0 && pooled.params[2].sigma > 0.0);
    }

    #[test]
    fn group_ordinal_hand_case() {
        let rep = IntervalRepresentation {
            params: [0.0, 0.2, 0.1, 0.4]
                .iter()
                .map(|&mu| DistParams {
                    mu,
                    sigma: 0.1,
                    family: Family::Gaussian,
                    beta_params: None,
                })
                .collect(),
            neighbor_radius: 0,
        };
        let g = group_ordinal(&rep).unwrap();
        let want = [0.2, 0.05, 0.1, 0.3];
        for (got, want) in g.dmu.iter().zip(want) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!(g.dsigma.iter().all(|&v| v == 0.0));
        let short = IntervalRepresentation {
            params: rep.params[..1].to_vec(),
            neighbor_radius: 0,
        };
        assert!(group_ordinal(&short).is_err());
    }

    #[test]
    fn tags_round_trip() {
        for tag in Tag::ALL {
            assert_eq!(tag.as_str().parse::<Tag>().unwrap(), tag);
        }
        assert!("X".parse::<Tag>().is_err());
        assert!("weibull".parse::<Family>().is_err());
    }

    #[test]
    fn table_layout() {
        let s = set(&[&[0.1, 0.2, 0.4], &[0.3, 0.2, 0.0]], Some((-1.0, 1.0)));
        let header = TableHeader {
            family: Family::BetaMapped,
            neighbor_radius: 1,
            source_hash: "abc".into(),
        };
        let rep = Representation::compute(&s, Tag::Interval, Family::BetaMapped, 1).unwrap();
        let mut buf = Vec::new();
        rep.write_table(&mut buf, &header).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("# tag = I\n"));
        assert!(text.contains("window_index,mu,sigma,alpha,beta\n"));
        assert_eq!(text.lines().count(), 6 + 3);

        let og = Representation::compute(&s, Tag::GroupOrdinal, Family::BetaMapped, 1).unwrap();
        let mut buf = Vec::new();
        og.write_table(&mut buf, &header).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("window_index,dmu,dsigma\n"));
    }

    proptest! {
        #[test]
        fn gaussian_shift_and_scale(
            x in prop::collection::vec(-5.0f64..5.0, 2..40),
            c in -10.0f64..10.0,
            a in 0.1f64..10.0,
        ) {
            let base = fit_gaussian(&x).unwrap();
            let shifted = fit_gaussian(&x.iter().map(|v| v + c).collect::<Vec<_>>()).unwrap();
            prop_assert!((shifted.mu - base.mu - c).abs() < 1e-12);
            prop_assert!((shifted.sigma - base.sigma).abs() < 1e-12);
            let scaled = fit_gaussian(&x.iter().map(|v| v * a).collect::<Vec<_>>()).unwrap();
            prop_assert!((scaled.mu - a * base.mu).abs() < 1e-11);
            prop_assert!((scaled.sigma - a * base.sigma).abs() < 1e-11);
        }
    }
}
