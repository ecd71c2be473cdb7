//! Areas under the mAP-versus-cost curve.
//!
//! The curve is the piecewise-linear interpolation of its points, extended
//! to cost zero at the mAP of its first point and never extended past its
//! last point. Both integrals are exact: each linear piece is integrated
//! with the trapezoid rule.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PerfCostCurve {
    points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParResult {
    pub value: f64,
    /// The performance budget exceeded the best mAP on the curve.
    pub truncated: bool,
}

impl PerfCostCurve {
    /// `points` are `(cumulative cost hours, mAP)` with strictly increasing
    /// cost and mAP in `[0, 1]`.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCurve);
        }
        for (i, &(c, m)) in points.iter().enumerate() {
            if !c.is_finite() || c < 0.0 || !(0.0..=1.0).contains(&m) {
                return Err(Error::Domain(format!("bad curve point ({c}, {m})")));
            }
            if i > 0 && c <= points[i - 1].0 {
                return Err(Error::Domain(format!(
                    "curve costs must increase strictly, {} then {c}",
                    points[i - 1].0
                )));
            }
        }
        Ok(PerfCostCurve { points })
    }

    /// Builds a curve from per-round points whose cost may repeat (a round
    /// that charged nothing); the later point wins.
    pub fn from_rounds(rounds: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut points: Vec<(f64, f64)> = Vec::new();
        for (c, m) in rounds {
            match points.last_mut() {
                Some(last) if last.0 == c => last.1 = m,
                _ => points.push((c, m)),
            }
        }
        PerfCostCurve::new(points)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn max_cost(&self) -> f64 {
        self.points.last().expect("non-empty").0
    }

    pub fn max_map(&self) -> f64 {
        self.points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Interpolated mAP at `cost`, for `cost` up to the last point.
    pub fn map_at(&self, cost: f64) -> f64 {
        let pts = &self.points;
        if cost <= pts[0].0 {
            return pts[0].1;
        }
        for w in pts.windows(2) {
            let ((c1, m1), (c2, m2)) = (w[0], w[1]);
            if cost <= c2 {
                return m1 + (cost - c1) / (c2 - c1) * (m2 - m1);
            }
        }
        pts[pts.len() - 1].1
    }

    /// Area under mAP over cost from zero to `min(budget, max cost)`.
    pub fn car(&self, budget: f64) -> Result<f64> {
        if !(budget >= 0.0) {
            return Err(Error::Domain(format!("cost budget {budget} is negative")));
        }
        let upper = budget.min(self.max_cost());
        let (c0, m0) = self.points[0];
        let mut area = m0 * c0.min(upper);
        for w in self.points.windows(2) {
            let ((c1, m1), (c2, _)) = (w[0], w[1]);
            if c1 >= upper {
                break;
            }
            let end = c2.min(upper);
            area += 0.5 * (m1 + self.map_at(end)) * (end - c1);
        }
        Ok(area)
    }

    /// Linear pieces `(p_start, p_end, cost_start, cost_end)` of the
    /// first-crossing inverse: the cheapest cost at which the interpolated
    /// curve reaches each mAP level. Non-decreasing in both coordinates.
    pub fn inverse_pieces(&self) -> Vec<(f64, f64, f64, f64)> {
        let (_, m0) = self.points[0];
        let mut pieces = vec![(0.0, m0, 0.0, 0.0)];
        let mut best = m0;
        for w in self.points.windows(2) {
            let ((c1, m1), (c2, m2)) = (w[0], w[1]);
            if m2 <= best {
                continue;
            }
            let cost_at = |p: f64| c1 + (p - m1) / (m2 - m1) * (c2 - c1);
            pieces.push((best, m2, cost_at(best), c2));
            best = m2;
        }
        pieces
    }

    /// Cheapest cost reaching mAP `p`, or `None` if the curve never does.
    pub fn cost_at(&self, p: f64) -> Option<f64> {
        self.inverse_pieces()
            .into_iter()
            .find(|&(p0, p1, _, _)| p <= p1 && p >= p0)
            .map(|(p0, p1, c0, c1)| {
                if p1 == p0 {
                    c0
                } else {
                    c0 + (p - p0) / (p1 - p0) * (c1 - c0)
                }
            })
    }

    /// Area under cost over mAP from zero to `min(budget, max mAP)`.
    pub fn par(&self, budget: f64) -> Result<ParResult> {
        if !(0.0..=1.0).contains(&budget) {
            return Err(Error::Domain(format!("performance budget {budget} outside [0,1]")));
        }
        let top = self.max_map();
        let upper = budget.min(top);
        let mut area = 0.0;
        for (p0, p1, c0, c1) in self.inverse_pieces() {
            if p0 >= upper {
                break;
            }
            let end = p1.min(upper);
            let c_end = if p1 == p0 {
                c0
            } else {
                c0 + (end - p0) / (p1 - p0) * (c1 - c0)
            };
            area += 0.5 * (c0 + c_end) * (end - p0);
        }
        Ok(ParResult {
            value: area,
            truncated: budget > top,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn car_examples() {
        let c = PerfCostCurve::new(vec![(0.0, 0.2), (10.0, 0.4)]).unwrap();
        assert!((c.car(10.0).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(c.car(0.0).unwrap(), 0.0);
        // truncated at the last point
        assert!((c.car(50.0).unwrap() - 3.0).abs() < 1e-12);
        let flat = PerfCostCurve::new(vec![(2.0, 0.3), (8.0, 0.3)]).unwrap();
        assert!((flat.car(5.0).unwrap() - 1.5).abs() < 1e-12);
        assert!(c.car(-1.0).is_err());
    }

    #[test]
    fn par_examples() {
        let c = PerfCostCurve::new(vec![(0.0, 0.0), (10.0, 0.5)]).unwrap();
        let r = c.par(0.5).unwrap();
        assert!((r.value - 2.5).abs() < 1e-12);
        assert!(!r.truncated);
        assert_eq!(c.par(0.0).unwrap().value, 0.0);
        let over = c.par(0.8).unwrap();
        assert!(over.truncated);
        assert!((over.value - 2.5).abs() < 1e-12);
    }

    #[test]
    fn par_uses_first_crossing_on_dips() {
        // rises to .4, dips to .2, recovers to .6
        let c = PerfCostCurve::new(vec![(0.0, 0.0), (4.0, 0.4), (6.0, 0.2), (10.0, 0.6)]).unwrap();
        assert!((c.cost_at(0.3).unwrap() - 3.0).abs() < 1e-12);
        // level .5 is first reached on the last segment: .2 + (c-6)/4*.4 = .5
        assert!((c.cost_at(0.5).unwrap() - 9.0).abs() < 1e-12);
        // .4 is reached at cost 4 before the dip; the recovery re-crossing at 8 is ignored
        assert!((c.cost_at(0.4).unwrap() - 4.0).abs() < 1e-12);
        // ∫0^.4 10p dp + ∫.4^.6 (8 + (p-.4)*10) dp = .8 + 1.6 + .2
        assert!((c.par(0.6).unwrap().value - 2.6).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_curves() {
        assert!(matches!(PerfCostCurve::new(vec![]), Err(Error::EmptyCurve)));
        assert!(PerfCostCurve::new(vec![(1.0, 0.1), (1.0, 0.2)]).is_err());
        assert!(PerfCostCurve::new(vec![(1.0, 1.2)]).is_err());
        let merged = PerfCostCurve::from_rounds([(1.0, 0.1), (1.0, 0.3), (2.0, 0.4)]).unwrap();
        assert_eq!(merged.points(), &[(1.0, 0.3), (2.0, 0.4)]);
    }

    fn curve() -> impl Strategy<Value = PerfCostCurve> {
        proptest::collection::vec((0.1f64..20.0, 0.0f64..1.0), 1..10).prop_map(|steps| {
            let mut cost = 0.0;
            let pts = steps
                .into_iter()
                .map(|(dc, m)| {
                    cost += dc;
                    (cost, m)
                })
                .collect();
            PerfCostCurve::new(pts).unwrap()
        })
    }

    proptest! {
        #[test]
        fn car_is_additive(c in curve(), a in 0.0f64..100.0, b in 0.0f64..100.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let whole = c.car(hi).unwrap();
            let head = c.car(lo).unwrap();
            prop_assert!(whole >= head - 1e-12);
        }

        #[test]
        fn inverse_is_monotone(c in curve()) {
            let mut prev = 0.0;
            for k in 0..=200 {
                let p = k as f64 / 200.0 * c.max_map();
                let cost = c.cost_at(p).unwrap();
                prop_assert!(cost >= prev - 1e-12);
                prop_assert!(c.map_at(cost) >= p - 1e-9);
                prev = cost;
            }
        }
    }
}
