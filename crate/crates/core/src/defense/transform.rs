use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Alphabet, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Transform {
    /// Round to `2^bits` evenly spaced levels spanning the domain.
    Quantize { bits: u32 },
    /// Centered moving average, truncated at the ends.
    MeanSmooth { window: usize },
    /// Drop non-printable tokens, keep the first `max_tokens`.
    TextNormalize { max_tokens: usize },
}

/// Applies a transform. Vector transforms need the input domain `bounds`.
pub fn transform_input(x: &Sample, transform: Transform, bounds: Option<(f64, f64)>) -> Result<Sample> {
    let wrong = || Error::Usage(format!("{transform:?} does not apply to this input kind"));
    match (transform, x) {
        (Transform::Quantize { bits }, Sample::Vector(v)) => {
            if !(1..=52).contains(&bits) {
                return Err(Error::Domain(format!("quantize bits {bits} must lie in 1..=52")));
            }
            let (lo, hi) = bounds.ok_or_else(|| Error::Usage("quantize needs domain bounds".into()))?;
            if !(lo < hi) {
                return Err(Error::Domain(format!("empty domain [{lo}, {hi}]")));
            }
            let steps = ((1u64 << bits) - 1) as f64;
            let q = v
                .data()
                .iter()
                .map(|&a| {
                    let k = ((a.clamp(lo, hi) - lo) / (hi - lo) * steps).round();
                    (lo + k * (hi - lo) / steps).clamp(lo, hi)
                })
                .collect();
            Ok(Sample::Vector(v.with_data(q)?))
        }
        (Transform::MeanSmooth { window }, Sample::Vector(v)) => {
            if window == 0 {
                return Err(Error::Domain("smoothing window must be at least 1".into()));
            }
            let d = v.data();
            let left = (window - 1) / 2;
            let right = window - 1 - left;
            let out = (0..d.len())
                .map(|i| {
                    let s = &d[i.saturating_sub(left)..(i + right + 1).min(d.len())];
                    s.iter().sum::<f64>() / s.len() as f64
                })
                .collect();
            Ok(Sample::Vector(v.with_data(out)?))
        }
        (Transform::TextNormalize { max_tokens }, Sample::Tokens(t)) => {
            if max_tokens == 0 {
                return Err(Error::Domain("text_normalize needs max_tokens >= 1".into()));
            }
            Ok(Sample::Tokens(
                t.iter().copied().filter(|&id| Alphabet.is_symbol(id)).take(max_tokens).collect(),
            ))
        }
        _ => Err(wrong()),
    }
}
