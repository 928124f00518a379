use serde::Serialize;

use crate::error::{Error, Result};

/// Sample quantile with linear interpolation between order statistics
/// (h = (n − 1)·q).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

fn quantile_sorted(v: &[f64], q: f64) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::InvalidInput("quantile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidInput(format!("quantile level {q} outside [0, 1]")));
    }
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantileSummary {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

pub fn quantile_summary(values: &[f64]) -> Result<QuantileSummary> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(QuantileSummary {
        min: quantile_sorted(&v, 0.0)?,
        q25: quantile_sorted(&v, 0.25)?,
        median: quantile_sorted(&v, 0.5)?,
        q75: quantile_sorted(&v, 0.75)?,
        max: quantile_sorted(&v, 1.0)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        let s = quantile_summary(&[4.0]).unwrap();
        assert_eq!([s.min, s.q25, s.median, s.q75, s.max], [4.0; 5]);
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = quantile_summary(&v).unwrap();
        assert_eq!(s.median, 50.5);
        assert_eq!((s.min, s.max), (1.0, 100.0));
        assert!((s.q25 - 25.75).abs() < 1e-12 && (s.q75 - 75.25).abs() < 1e-12);
        assert!(quantile_summary(&[]).is_err());
        assert!(quantile(&v, 1.5).is_err());
    }

    #[test]
    fn agrees_with_statrs() {
        use statrs::statistics::{Data, Max, Min, OrderStatistics};
        let v: Vec<f64> = (0..37).map(|i| ((i * 7919) % 101) as f64 * 0.5).collect();
        // statrs interpolates other quantiles differently; the median agrees.
        let mut data = Data::new(v.clone());
        assert_eq!(quantile(&v, 0.5).unwrap(), data.median());
        assert_eq!(quantile(&v, 0.0).unwrap(), data.min());
        assert_eq!(quantile(&v, 1.0).unwrap(), data.max());
    }
}
