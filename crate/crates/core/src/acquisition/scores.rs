//! Frame-level uncertainty scores and the sequence summary function. All
//! scores grow with uncertainty, so every strategy maximizes.

use crate::error::{Error, Result};

fn check_prob(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability {p} outside [0,1]")));
    }
    Ok(())
}

fn xlnx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Binary entropy of the objectness probability, in nats.
pub fn entropy(p: f64) -> Result<f64> {
    check_prob(p)?;
    Ok(-xlnx(p) - xlnx(1.0 - p))
}

pub fn least_confidence(p: f64) -> Result<f64> {
    check_prob(p)?;
    Ok(1.0 - p.max(1.0 - p))
}

/// Negated margin between the two outcomes.
pub fn margin(p: f64) -> Result<f64> {
    check_prob(p)?;
    Ok(-(2.0 * p - 1.0).abs())
}

/// Arithmetic mean of frame scores.
pub fn sequence_score(per_frame: &[f64]) -> Result<f64> {
    if per_frame.is_empty() {
        return Err(Error::EmptyScore);
    }
    Ok(per_frame.iter().sum::<f64>() / per_frame.len() as f64)
}
