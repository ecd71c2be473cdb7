//! Two-component 1-D Gaussian mixture fitted by EM.

use crate::error::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub variances: [f64; 2],
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Both components ended on the same mean; the mixture carries no
    /// split and callers should not rely on it.
    pub degenerate: bool,
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((x - mean).powi(2) / var + var.ln() + (2.0 * std::f64::consts::PI).ln())
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl GmmFit {
    /// Log-density weights of each component at `x`, normalized.
    pub fn responsibilities(&self, x: f64) -> [f64; 2] {
        let l: [f64; 2] = std::array::from_fn(|k| {
            if self.weights[k] > 0.0 {
                self.weights[k].ln() + log_normal(x, self.means[k], self.variances[k])
            } else {
                f64::NEG_INFINITY
            }
        });
        let m = l[0].max(l[1]);
        let e = [(l[0] - m).exp(), (l[1] - m).exp()];
        let s = e[0] + e[1];
        [e[0] / s, e[1] / s]
    }

    /// Index of the component with the larger mean.
    pub fn upper_component(&self) -> usize {
        (self.means[1] > self.means[0]) as usize
    }
}

pub fn fit_gmm2(values: &[f64], max_iter: usize, tol: f64) -> Result<GmmFit> {
    if values.len() < 2 {
        return Err(Error::Domain("mixture fit needs at least two values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("mixture fit needs finite values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let pooled = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).max(VARIANCE_FLOOR);

    if sorted[0] == sorted[sorted.len() - 1] {
        return Ok(GmmFit {
            weights: [0.5, 0.5],
            means: [sorted[0]; 2],
            variances: [VARIANCE_FLOOR; 2],
            iterations: 0,
            log_likelihood: f64::NAN,
            degenerate: true,
        });
    }

    let (mut lo, mut hi) = (percentile(&sorted, 0.25), percentile(&sorted, 0.75));
    if lo == hi {
        // quartiles coincide on heavily tied data
        lo = sorted[0];
        hi = sorted[sorted.len() - 1];
    }
    let mut fit = GmmFit {
        weights: [0.5, 0.5],
        means: [lo, hi],
        variances: [pooled, pooled],
        iterations: 0,
        log_likelihood: f64::NEG_INFINITY,
        degenerate: false,
    };

    let mut resp = vec![[0.0f64; 2]; values.len()];
    for iter in 1..=max_iter.max(1) {
        // E step
        let mut ll = 0.0;
        for (x, r) in values.iter().zip(resp.iter_mut()) {
            let l: [f64; 2] = std::array::from_fn(|k| {
                if fit.weights[k] > 0.0 {
                    fit.weights[k].ln() + log_normal(*x, fit.means[k], fit.variances[k])
                } else {
                    f64::NEG_INFINITY
                }
            });
            let m = l[0].max(l[1]);
            let s = (l[0] - m).exp() + (l[1] - m).exp();
            ll += m + s.ln();
            *r = [(l[0] - m).exp() / s, (l[1] - m).exp() / s];
        }
        // M step
        for k in 0..2 {
            let nk: f64 = resp.iter().map(|r| r[k]).sum();
            if nk <= 0.0 {
                fit.weights[k] = 0.0;
                continue;
            }
            let mu = resp.iter().zip(values).map(|(r, x)| r[k] * x).sum::<f64>() / nk;
            let var = resp
                .iter()
                .zip(values)
                .map(|(r, x)| r[k] * (x - mu).powi(2))
                .sum::<f64>()
                / nk;
            fit.weights[k] = nk / n;
            fit.means[k] = mu;
            fit.variances[k] = var.max(VARIANCE_FLOOR);
        }
        let total = fit.weights[0] + fit.weights[1];
        fit.weights = [fit.weights[0] / total, fit.weights[1] / total];
        fit.iterations = iter;
        let delta = (ll - fit.log_likelihood).abs();
        fit.log_likelihood = ll;
        if delta < tol {
            break;
        }
    }
    fit.degenerate = fit.means[0] == fit.means[1];
    Ok(fit)
}
