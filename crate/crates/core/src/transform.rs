//! Per-dimension bijections from a bounded box onto the real line.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::Bounds;

/// Relative distance from a bound under which a point counts as on it.
pub const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformKind {
    Identity,
    /// `x -> ln(x - a)`
    LogShift {
        #[serde(with = "crate::io::num")]
        a: f64,
    },
    /// `x -> -ln(b - x)`, increasing like the others.
    NegLogShift {
        #[serde(with = "crate::io::num")]
        b: f64,
    },
    /// `x -> ln((x - a) / (b - x))`
    ScaledLogit {
        #[serde(with = "crate::io::num")]
        a: f64,
        #[serde(with = "crate::io::num")]
        b: f64,
    },
}

fn on_or_beyond_lower(x: f64, a: f64) -> bool {
    x - a <= BOUNDARY_TOL * (1.0 + a.abs())
}

fn on_or_beyond_upper(x: f64, b: f64) -> bool {
    b - x <= BOUNDARY_TOL * (1.0 + b.abs())
}

impl TransformKind {
    pub fn for_interval(a: f64, b: f64) -> Self {
        match (a.is_finite(), b.is_finite()) {
            (false, false) => Self::Identity,
            (true, false) => Self::LogShift { a },
            (false, true) => Self::NegLogShift { b },
            (true, true) => Self::ScaledLogit { a, b },
        }
    }

    fn check(&self, x: f64) -> Result<()> {
        let bad = match *self {
            Self::Identity => !x.is_finite(),
            Self::LogShift { a } => on_or_beyond_lower(x, a),
            Self::NegLogShift { b } => on_or_beyond_upper(x, b),
            Self::ScaledLogit { a, b } => on_or_beyond_lower(x, a) || on_or_beyond_upper(x, b),
        };
        if bad || x.is_nan() {
            Err(Error::OutOfSupport(format!("{x} is not strictly inside the support of {self:?}")))
        } else {
            Ok(())
        }
    }

    pub fn forward(&self, x: f64) -> Result<f64> {
        self.check(x)?;
        Ok(match *self {
            Self::Identity => x,
            Self::LogShift { a } => (x - a).ln(),
            Self::NegLogShift { b } => -(b - x).ln(),
            Self::ScaledLogit { a, b } => ((x - a) / (b - x)).ln(),
        })
    }

    pub fn inverse(&self, y: f64) -> f64 {
        match *self {
            Self::Identity => y,
            Self::LogShift { a } => a + y.exp(),
            Self::NegLogShift { b } => b - (-y).exp(),
            Self::ScaledLogit { a, b } => {
                // Stable logistic in both directions.
                if y >= 0.0 {
                    let e = (-y).exp();
                    a + (b - a) / (1.0 + e)
                } else {
                    let e = y.exp();
                    b - (b - a) / (1.0 + e)
                }
            }
        }
    }

    /// `ln |dT/dx|` at an original-space point.
    pub fn log_jacobian(&self, x: f64) -> Result<f64> {
        self.check(x)?;
        Ok(match *self {
            Self::Identity => 0.0,
            Self::LogShift { a } => -(x - a).ln(),
            Self::NegLogShift { b } => -(b - x).ln(),
            Self::ScaledLogit { a, b } => (b - a).ln() - (x - a).ln() - (b - x).ln(),
        })
    }
}

/// Product transform over all dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    kinds: Vec<TransformKind>,
}

impl Transform {
    pub fn from_bounds(bounds: &Bounds) -> Self {
        let kinds = bounds
            .lower()
            .iter()
            .zip(bounds.upper())
            .map(|(&a, &b)| TransformKind::for_interval(a, b))
            .collect();
        Self { kinds }
    }

    pub fn identity(d: usize) -> Self {
        Self { kinds: vec![TransformKind::Identity; d] }
    }

    pub fn kinds(&self) -> &[TransformKind] {
        &self.kinds
    }

    pub fn dim(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_identity(&self) -> bool {
        self.kinds.iter().all(|k| *k == TransformKind::Identity)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.kinds.iter().zip(x).map(|(k, v)| k.forward(*v)).collect()
    }

    pub fn inverse(&self, y: &[f64]) -> Vec<f64> {
        self.kinds.iter().zip(y).map(|(k, v)| k.inverse(*v)).collect()
    }

    pub fn forward_many(&self, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        points.iter().map(|p| self.forward(p)).collect()
    }

    pub fn inverse_many(&self, points: &[Vec<f64>]) -> Vec<Vec<f64>> {
        points.iter().map(|p| self.inverse(p)).collect()
    }

    /// Sum of per-dimension log-derivatives. With a density `q` on the
    /// transformed space, `q(T(x)) * exp(log_jacobian(x))` is the density of x.
    pub fn log_jacobian(&self, x: &[f64]) -> Result<f64> {
        self.kinds.iter().zip(x).map(|(k, v)| k.log_jacobian(*v)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Lower,
    Upper,
}

/// Appends the reflections `2*bound - x` to the samples.
pub fn mirror_at_bounds(x: &[f64], bound: f64, side: Side) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * x.len());
    for &v in x {
        let beyond = match side {
            Side::Lower => v < bound,
            Side::Upper => v > bound,
        };
        if beyond {
            return Err(Error::OutOfSupport(format!("{v} lies beyond the {side:?} bound {bound}")));
        }
        out.push(v);
    }
    out.extend(x.iter().map(|v| 2.0 * bound - v));
    Ok(out)
}
