//! Time-series primitives shared by every representation: window
//! aggregation, annotation-delay compensation, multi-annotator alignment,
//! normalization and central differencing.
//!
//! Window indices are zero-based throughout the crate.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// One annotator's trace sampled at a fixed period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTrace {
    annotator_id: String,
    values: Vec<f64>,
    sample_period: f64,
}

impl AnnotationTrace {
    pub fn new(annotator_id: impl Into<String>, values: Vec<f64>, sample_period: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("annotation trace"));
        }
        ensure_finite(&values)?;
        check_period("sample_period", sample_period)?;
        Ok(Self {
            annotator_id: annotator_id.into(),
            values,
            sample_period,
        })
    }

    pub fn annotator_id(&self) -> &str {
        &self.annotator_id
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Applies `f` to the value sequence, keeping id and period.
    pub fn map_values<F>(&self, f: F) -> Result<Self>
    where
        F: FnOnce(&[f64]) -> Result<Vec<f64>>,
    {
        Self::new(self.annotator_id.clone(), f(&self.values)?, self.sample_period)
    }

    /// Delay compensation followed by window averaging, at the trace's own rate.
    pub fn preprocess(&self, delay: f64, window_length: f64) -> Result<Self> {
        let shifted = shift_delay(&self.values, self.sample_period, delay)?;
        let windowed = window_aggregate(&shifted, self.sample_period, window_length)?;
        Self::new(self.annotator_id.clone(), windowed, window_length)
    }
}

/// Per-window traces from `M >= 2` annotators, all of length `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSet {
    traces: Vec<AnnotationTrace>,
    window_length: f64,
    bounds: Option<(f64, f64)>,
}

impl TraceSet {
    pub fn new(traces: Vec<AnnotationTrace>, bounds: Option<(f64, f64)>) -> Result<Self> {
        if traces.len() < 2 {
            return Err(Error::TooShort {
                need: 2,
                got: traces.len(),
            });
        }
        let n = traces[0].len();
        let period = traces[0].sample_period();
        for t in &traces[1..] {
            if t.len() != n {
                return Err(Error::LengthMismatch {
                    left: n,
                    right: t.len(),
                });
            }
            if !same_period(t.sample_period(), period) {
                return Err(Error::invalid(
                    "traces",
                    format!(
                        "annotator {} has period {} but expected {}",
                        t.annotator_id(),
                        t.sample_period(),
                        period
                    ),
                ));
            }
        }
        if let Some((lo, hi)) = bounds {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::invalid("bounds", format!("[{lo}, {hi}] is not a valid range")));
            }
            for t in &traces {
                if let Some(&v) = t.values().iter().find(|&&v| v < lo || v > hi) {
                    return Err(Error::OutOfBounds { value: v, lo, hi });
                }
            }
        }
        Ok(Self {
            traces,
            window_length: period,
            bounds,
        })
    }

    pub fn traces(&self) -> &[AnnotationTrace] {
        &self.traces
    }

    pub fn annotator_count(&self) -> usize {
        self.traces.len()
    }

    pub fn window_count(&self) -> usize {
        self.traces[0].len()
    }

    /// Duration covered by each value, in seconds.
    pub fn window_length(&self) -> f64 {
        self.window_length
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        self.bounds
    }

    /// The M annotations at window `n`.
    pub fn window(&self, n: usize) -> impl Iterator<Item = f64> + '_ {
        self.traces.iter().map(move |t| t.values()[n])
    }

    pub fn with_bounds(self, bounds: Option<(f64, f64)>) -> Result<Self> {
        Self::new(self.traces, bounds)
    }

    /// Per-annotator central-difference gradients.
    pub fn gradients(&self) -> Result<Vec<GradientTrace>> {
        self.traces
            .iter()
            .map(|t| {
                Ok(GradientTrace {
                    annotator_id: t.annotator_id().to_owned(),
                    values: central_difference(t.values())?,
                })
            })
            .collect()
    }
}

/// Central-difference gradient of one annotator's trace, in trace units per window.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTrace {
    pub annotator_id: String,
    pub values: Vec<f64>,
}

fn check_period(name: &'static str, period: f64) -> Result<()> {
    if period.is_finite() && period > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be finite and positive, got {period}")))
    }
}

fn same_period(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

/// Number of native samples falling in one window, rounded to the nearest integer.
pub fn samples_per_window(native_period: f64, window_length: f64) -> Result<usize> {
    check_period("native_period", native_period)?;
    check_period("window_length", window_length)?;
    if window_length < native_period {
        return Err(Error::invalid(
            "window_length",
            format!("{window_length} s is shorter than the native period {native_period} s"),
        ));
    }
    Ok((window_length / native_period).round() as usize)
}

/// Number of native samples spanned by a delay of `offset` seconds.
pub fn delay_samples(native_period: f64, offset: f64) -> Result<usize> {
    check_period("native_period", native_period)?;
    if !(offset.is_finite() && offset >= 0.0) {
        return Err(Error::invalid("offset", format!("must be finite and >= 0, got {offset}")));
    }
    Ok((offset / native_period).round() as usize)
}

/// Averages consecutive non-overlapping windows. A trailing partial window is dropped.
pub fn window_aggregate(raw: &[f64], native_period: f64, window_length: f64) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::Empty("raw samples"));
    }
    let per = samples_per_window(native_period, window_length)?;
    Ok(raw
        .chunks_exact(per)
        .map(|w| w.iter().sum::<f64>() / per as f64)
        .collect())
}

/// Drops the first `round(offset / native_period)` label samples.
pub fn shift_delay(raw: &[f64], native_period: f64, offset: f64) -> Result<Vec<f64>> {
    let k = delay_samples(native_period, offset)?;
    if k >= raw.len() {
        return Err(Error::invalid(
            "offset",
            format!("shift of {k} samples consumes the whole trace of {}", raw.len()),
        ));
    }
    Ok(raw[k..].to_vec())
}

/// Truncates every trace to the shared length (optionally capped at `keep_first`).
/// Annotator order and values are preserved.
pub fn align(traces: &[AnnotationTrace], keep_first: Option<usize>) -> Result<TraceSet> {
    if traces.len() < 2 {
        return Err(Error::TooShort {
            need: 2,
            got: traces.len(),
        });
    }
    let shared = traces.iter().map(AnnotationTrace::len).min().unwrap_or(0);
    let n = keep_first.map_or(shared, |k| k.min(shared));
    if n == 0 {
        return Err(Error::Empty("aligned trace set"));
    }
    let truncated = traces
        .iter()
        .map(|t| AnnotationTrace::new(t.annotator_id(), t.values()[..n].to_vec(), t.sample_period()))
        .collect::<Result<Vec<_>>>()?;
    TraceSet::new(truncated, None)
}

/// `(x[n+1] - x[n-1]) / 2` in the interior, one-sided first differences at both ends.
pub fn central_difference(values: &[f64]) -> Result<Vec<f64>> {
    let n = values.len();
    if n < 2 {
        return Err(Error::TooShort { need: 2, got: n });
    }
    let mut out = Vec::with_capacity(n);
    out.push(values[1] - values[0]);
    out.extend(values.windows(3).map(|w| (w[2] - w[0]) / 2.0));
    out.push(values[n - 1] - values[n - 2]);
    Ok(out)
}

/// Affine map onto [0, 1]; a flat sequence maps to all 0.5.
pub fn minmax_normalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Empty("values"));
    }
    ensure_finite(values)?;
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    if span == 0.0 {
        return Ok(vec![0.5; values.len()]);
    }
    Ok(values.iter().map(|v| (v - lo) / span).collect())
}
