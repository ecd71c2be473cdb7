//! Greedy k-center selection.

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Standardizes every column to zero mean and unit variance; constant
/// columns become zero.
pub fn standardize_columns(rows: &mut [Vec<f64>]) {
    let Some(dim) = rows.first().map(Vec::len) else {
        return;
    };
    let n = rows.len() as f64;
    for d in 0..dim {
        let mean = rows.iter().map(|r| r[d]).sum::<f64>() / n;
        let sd = (rows.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n).sqrt();
        for r in rows.iter_mut() {
            r[d] = if sd > 0.0 { (r[d] - mean) / sd } else { 0.0 };
        }
    }
}

/// Picks `k` candidates, each time the one farthest from its nearest center,
/// then makes it a center. Ties go to the lowest candidate index, so callers
/// that pass candidates in id order get id-ordered tie-breaks. Returns
/// candidate indices in pick order.
pub fn k_center_greedy(centers: &[&[f64]], candidates: &[&[f64]], k: usize) -> Vec<usize> {
    let mut nearest: Vec<f64> = candidates
        .iter()
        .map(|c| {
            centers
                .iter()
                .map(|s| dist(c, s))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut taken = vec![false; candidates.len()];
    let mut picks = Vec::with_capacity(k);
    for _ in 0..k.min(candidates.len()) {
        let mut best: Option<usize> = None;
        for i in 0..candidates.len() {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| nearest[i] > nearest[b]) {
                best = Some(i);
            }
        }
        let Some(pick) = best else { break };
        taken[pick] = true;
        picks.push(pick);
        for i in 0..candidates.len() {
            nearest[i] = nearest[i].min(dist(candidates[i], candidates[pick]));
        }
    }
    picks
}
