//! One-dimensional Gaussians over the extended reals.
//!
//! Messages and beliefs are kept as (mean, variance) with `variance == +inf`
//! meaning "no information". Products go through precision form, where
//! `1/inf == 0` falls out of IEEE arithmetic; the sum rule adds variances, so
//! an infinite input stays infinite without special-casing.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Gaussian1D {
    pub mean: f64,
    pub variance: f64,
}

impl Gaussian1D {
    pub const UNINFORMATIVE: Gaussian1D = Gaussian1D {
        mean: 0.0,
        variance: f64::INFINITY,
    };

    pub fn new(mean: f64, variance: f64) -> Self {
        debug_assert!(variance > 0.0, "variance must be positive, got {variance}");
        if variance.is_infinite() {
            Self::UNINFORMATIVE
        } else {
            Self { mean, variance }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.variance.is_finite()
    }

    pub fn precision(&self) -> f64 {
        1.0 / self.variance
    }

    pub fn has_nan(&self) -> bool {
        self.mean.is_nan() || self.variance.is_nan()
    }
}

impl Default for Gaussian1D {
    fn default() -> Self {
        Self::UNINFORMATIVE
    }
}

/// Running product of Gaussians in precision form.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct PrecisionAccumulator {
    precision: f64,
    weighted_mean: f64,
}

impl PrecisionAccumulator {
    #[inline]
    pub fn push(&mut self, g: &Gaussian1D) {
        if g.variance.is_finite() {
            let p = 1.0 / g.variance;
            self.precision += p;
            self.weighted_mean += p * g.mean;
        }
    }

    #[inline]
    pub fn finish(self) -> Gaussian1D {
        if self.precision > 0.0 {
            let variance = 1.0 / self.precision;
            Gaussian1D {
                mean: variance * self.weighted_mean,
                variance,
            }
        } else {
            Gaussian1D::UNINFORMATIVE
        }
    }
}

/// Normalized product of Gaussian densities. Empty input gives the
/// uninformative message.
pub fn gaussian_product<'a, I>(msgs: I) -> Gaussian1D
where
    I: IntoIterator<Item = &'a Gaussian1D>,
{
    let mut acc = PrecisionAccumulator::default();
    for m in msgs {
        acc.push(m);
    }
    acc.finish()
}

/// Message from a linear measurement `z = Σ s_j x_j + noise(variance)` to the
/// variable with sign `target_sign`, given messages from the other variables.
///
/// mean = s_t (z − Σ s_j μ_j), variance = σ² + Σ v_j.
pub fn linear_sum_message<I>(z: f64, variance: f64, target_sign: f64, others: I) -> Gaussian1D
where
    I: IntoIterator<Item = (f64, Gaussian1D)>,
{
    if variance.is_infinite() {
        return Gaussian1D::UNINFORMATIVE;
    }
    let mut rest = z;
    let mut var = variance;
    for (sign, m) in others {
        if m.variance.is_infinite() {
            return Gaussian1D::UNINFORMATIVE;
        }
        rest -= sign * m.mean;
        var += m.variance;
    }
    Gaussian1D {
        mean: target_sign * rest,
        variance: var,
    }
}
