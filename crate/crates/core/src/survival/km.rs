use std::io::Write;

use serde::{Deserialize, Serialize};

use super::SurvivalError;

/// Weighted product-limit estimate. Only times with a positive weighted event
/// count are stored; `survival[k]` is S(t) on `[times[k], times[k+1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<f64>,
    pub events: Vec<f64>,
}

impl SurvivalCurve {
    /// Right-continuous step value S(t); carries the last value beyond the
    /// final event time.
    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }

    /// Area under S on `[0, tau]`.
    pub fn rmst(&self, tau: f64) -> f64 {
        let mut area = 0.0;
        let mut last_t = 0.0;
        let mut s = 1.0;
        for (&t, &sv) in self.times.iter().zip(&self.survival) {
            if t >= tau {
                break;
            }
            area += s * (t - last_t);
            last_t = t;
            s = sv;
        }
        area + s * (tau - last_t)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["time", "survival"])?;
        w.write_record(["0", "1"])?;
        for (t, s) in self.times.iter().zip(&self.survival) {
            w.write_record([t.to_string(), s.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn km_fit(
    times: &[f64],
    events: &[bool],
    weights: &[f64],
) -> Result<SurvivalCurve, SurvivalError> {
    let n = times.len();
    if events.len() != n || weights.len() != n {
        return Err(SurvivalError::InvalidInput(format!(
            "length mismatch: {} times, {} events, {} weights",
            n,
            events.len(),
            weights.len()
        )));
    }
    if let Some(t) = times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(SurvivalError::InvalidInput(format!("invalid time {t}")));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(SurvivalError::InvalidInput(format!("invalid weight {w}")));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(SurvivalError::AllZeroWeights);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    Ok(product_limit(
        order.iter().map(|&i| (times[i], events[i], weights[i])),
    ))
}

/// Product-limit estimator over observations already sorted by time.
pub(crate) fn product_limit(
    sorted: impl Iterator<Item = (f64, bool, f64)> + Clone,
) -> SurvivalCurve {
    let mut remaining: f64 = sorted.clone().map(|(_, _, w)| w).sum();
    let mut curve = SurvivalCurve {
        times: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
    };
    let mut s = 1.0;
    let mut iter = sorted.peekable();
    while let Some((t, e, w)) = iter.next() {
        let at_risk = remaining;
        let mut d = if e { w } else { 0.0 };
        let mut leaving = w;
        while let Some(&(t2, e2, w2)) = iter.peek() {
            if t2 != t {
                break;
            }
            if e2 {
                d += w2;
            }
            leaving += w2;
            iter.next();
        }
        remaining -= leaving;
        if d > 0.0 {
            s *= 1.0 - d / at_risk;
            curve.times.push(t);
            curve.survival.push(s);
            curve.at_risk.push(at_risk);
            curve.events.push(d);
        }
    }
    curve
}

pub fn rmst(curve: &SurvivalCurve, tau: f64) -> f64 {
    curve.rmst(tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_curve() {
        let c = km_fit(&[1.0, 2.0, 3.0], &[true, false, true], &[1.0; 3]).unwrap();
        assert_eq!(c.times, vec![1.0, 3.0]);
        assert!((c.value_at(1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.value_at(2.9) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.value_at(3.0), 0.0);
        assert_eq!(c.value_at(0.5), 1.0);
        assert!((c.rmst(3.0) - 7.0 / 3.0).abs() < 1e-12);
        assert_eq!(c.at_risk, vec![3.0, 1.0]);
    }

    #[test]
    fn no_failures_and_short_horizon() {
        let c = km_fit(&[1.0, 2.0], &[false, false], &[1.0, 1.0]).unwrap();
        assert!(c.times.is_empty());
        assert_eq!(c.value_at(100.0), 1.0);
        assert_eq!(c.rmst(7.5), 7.5);
        let c = km_fit(&[4.0, 5.0], &[true, true], &[1.0, 1.0]).unwrap();
        assert_eq!(c.rmst(3.0), 3.0);
    }

    #[test]
    fn weight_scale_invariance_and_ties() {
        let t = [1.0, 1.0, 2.0, 2.0, 3.0, 4.0];
        let e = [true, false, true, true, false, true];
        let w = [1.0, 2.0, 0.5, 1.5, 1.0, 3.0];
        let a = km_fit(&t, &e, &w).unwrap();
        let w2: Vec<f64> = w.iter().map(|x| 2.0 * x).collect();
        let b = km_fit(&t, &e, &w2).unwrap();
        for (x, y) in a.survival.iter().zip(&b.survival) {
            assert!((x - y).abs() < 1e-15);
        }
        // At t = 1 the censored tie is still at risk.
        assert!((a.survival[0] - (1.0 - 1.0 / 9.0)).abs() < 1e-15);
    }

    #[test]
    fn rejects_zero_weights() {
        assert_eq!(
            km_fit(&[1.0], &[true], &[0.0]),
            Err(SurvivalError::AllZeroWeights)
        );
        assert!(km_fit(&[-1.0], &[true], &[1.0]).is_err());
    }
}
