use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear transform applied to a similarity score before the logistic:
/// `g(a * s + b)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmoidParams {
    pub a: f64,
    pub b: f64,
}

impl SigmoidParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) || !b.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigmoid scale must be positive and finite (a={a}, b={b})"
            )));
        }
        Ok(SigmoidParams { a, b })
    }
}

impl Default for SigmoidParams {
    fn default() -> Self {
        SigmoidParams { a: 1.0, b: 0.0 }
    }
}

/// Logistic of `a * s + b`, evaluated in a form that stays accurate on both
/// tails.
pub fn sigmoid_transform(s_score: f64, params: SigmoidParams) -> f64 {
    let z = params.a * s_score + params.b;
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Discard sentinel: keeps everything.
pub const NO_DISCARD: f64 = f64::NEG_INFINITY;

/// Keeps items whose score is at least `threshold`, preserving order.
pub fn apply_threshold<T>(items: Vec<T>, threshold: f64, score: impl Fn(&T) -> f64) -> Vec<T> {
    items
        .into_iter()
        .filter(|it| score(it) >= threshold)
        .collect()
}
