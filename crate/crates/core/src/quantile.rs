//! Quantile mathematics shared by every model: the tilted absolute (pinball)
//! loss, empirical quantiles under the lower inverse-CDF convention, and the
//! brute-force loss minimizer used to cross-validate the two.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A quantile level alpha in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidLevel {
                level: alpha,
                reason: "must lie in [0, 1]",
            });
        }
        Ok(QuantileLevel(alpha))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl std::fmt::Display for QuantileLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The nine levels reported by the evaluation tables.
pub const REPORT_LEVELS: [f64; 9] = [0.001, 0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99, 0.999];

/// Parses a slice of raw levels, failing on the first invalid one.
pub fn levels_from(raw: &[f64]) -> Result<Vec<QuantileLevel>> {
    raw.iter().map(|&a| QuantileLevel::new(a)).collect()
}

/// Tilted absolute loss (pinball loss):
/// max{alpha (a - pred), (alpha - 1)(a - pred)}.
///
/// Nonnegative, and zero iff `a == pred` for alpha in (0, 1).
pub fn tal(a: f64, pred: f64, level: QuantileLevel) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::NonFinite {
            context: "tal action",
            value: a,
        });
    }
    if !pred.is_finite() {
        return Err(Error::NonFinite {
            context: "tal prediction",
            value: pred,
        });
    }
    Ok(tal_unchecked(a, pred, level.value()))
}

/// `tal` without the finiteness checks; for validated inner loops.
#[inline]
pub(crate) fn tal_unchecked(a: f64, pred: f64, alpha: f64) -> f64 {
    let r = a - pred;
    (alpha * r).max((alpha - 1.0) * r)
}

/// Arithmetic mean of the tilted absolute loss over aligned pairs.
pub fn mean_tal(actions: &[f64], preds: &[f64], level: QuantileLevel) -> Result<f64> {
    if actions.is_empty() {
        return Err(Error::EmptyInput { context: "mean_tal" });
    }
    if actions.len() != preds.len() {
        return Err(Error::ShapeMismatch {
            context: "mean_tal",
            expected: actions.len(),
            actual: preds.len(),
        });
    }
    let mut sum = 0.0;
    for (&a, &p) in actions.iter().zip(preds) {
        sum += tal(a, p, level)?;
    }
    Ok(sum / actions.len() as f64)
}

/// A nonempty sorted sample of one action dimension; the empirical CDF lives
/// here.
#[derive(Debug, Clone)]
pub struct EmpiricalDistribution {
    sorted: Vec<f64>,
}

impl EmpiricalDistribution {
    /// Sorts the samples. Rejects empty or non-finite input.
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput {
                context: "EmpiricalDistribution",
            });
        }
        if let Some(&bad) = samples.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "EmpiricalDistribution sample",
                value: bad,
            });
        }
        samples.sort_by(f64::total_cmp);
        Ok(EmpiricalDistribution { sorted: samples })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min(&self) -> f64 {
        self.sorted[0]
    }

    pub fn max(&self) -> f64 {
        *self.sorted.last().unwrap()
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    /// Lower (inverse-CDF) empirical quantile: the smallest sample x with
    /// rank(x)/n >= alpha. `alpha = 0` returns the minimum.
    pub fn quantile(&self, level: QuantileLevel) -> f64 {
        let n = self.sorted.len();
        let rank = (level.value() * n as f64).ceil() as usize;
        self.sorted[rank.saturating_sub(1).min(n - 1)]
    }
}

/// Brute-force minimizer of the mean tilted absolute loss over a uniform grid
/// spanning [min, max] of the distribution. Ties break toward the smallest
/// grid point. Cross-validates the quantile definition: the minimizer must
/// equal the empirical quantile up to one grid step.
///
/// When alpha * n is an integer the objective is exactly flat between two
/// order statistics; candidates are treated as ties unless they improve by
/// more than a noise margin, so the scan keeps the smallest point of the
/// flat region as the analytic tie rule demands.
pub fn tal_minimizer_oracle(
    dist: &EmpiricalDistribution,
    level: QuantileLevel,
    grid_step: f64,
) -> Result<f64> {
    if !(grid_step > 0.0) || !grid_step.is_finite() {
        return Err(Error::invalid(
            "tal_minimizer_oracle",
            format!("grid step must be positive and finite, got {grid_step}"),
        ));
    }
    let (lo, hi) = (dist.min(), dist.max());
    let alpha = level.value();
    let loss_at = |p: f64| -> f64 {
        dist.samples()
            .iter()
            .map(|&a| tal_unchecked(a, p, alpha))
            .sum()
    };
    let mut best_point = lo;
    let mut best_loss = loss_at(lo);
    let steps = ((hi - lo) / grid_step).ceil() as usize;
    for k in 1..=steps {
        let p = (lo + k as f64 * grid_step).min(hi);
        let sum = loss_at(p);
        // Genuine improvements move by at least alpha_min * step per sample;
        // summation noise sits many orders below this margin.
        if sum < best_loss - 1e-11 * (1.0 + best_loss.abs()) {
            best_loss = sum;
            best_point = p;
        }
    }
    Ok(best_point)
}
