//! Series comparison in units of combined standard error.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::output::read_table;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub t: f64,
    pub value: f64,
    /// Standard error; zero for exact series.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub points: usize,
    /// Largest |a − b| / √(se_a² + se_b²).
    pub max_deviation: f64,
    pub rms_deviation: f64,
    pub time_of_max: f64,
    pub max_abs_difference: f64,
}

fn interpolate(s: &[SeriesPoint], t: f64) -> SeriesPoint {
    let k = s.partition_point(|p| p.t < t);
    if k < s.len() && s[k].t == t {
        return s[k];
    }
    let (p, q) = (s[k - 1], s[k]);
    let w = (t - p.t) / (q.t - p.t);
    SeriesPoint {
        t,
        value: p.value + w * (q.value - p.value),
        se: p.se + w * (q.se - p.se),
    }
}

fn check_sorted(s: &[SeriesPoint], name: &str) -> Result<()> {
    if s.is_empty() || s.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(HarnessError::Config(format!("series {name} must be nonempty with increasing times")));
    }
    Ok(())
}

/// Compare `b` against `a` at the times of `a` inside the common time range, with `b`
/// interpolated linearly.
pub fn compare_runs(a: &[SeriesPoint], b: &[SeriesPoint]) -> Result<CompareReport> {
    check_sorted(a, "a")?;
    check_sorted(b, "b")?;
    let lo = a[0].t.max(b[0].t);
    let hi = a[a.len() - 1].t.min(b[b.len() - 1].t);
    let common: Vec<&SeriesPoint> = a.iter().filter(|p| p.t >= lo && p.t <= hi).collect();
    if lo > hi || common.is_empty() {
        return Err(HarnessError::Config("series have disjoint time ranges".into()));
    }
    let mut max_dev = 0.0f64;
    let mut time_of_max = common[0].t;
    let mut sum_sq = 0.0;
    let mut max_abs = 0.0f64;
    for p in &common {
        let q = interpolate(b, p.t);
        let diff = (p.value - q.value).abs();
        let se = (p.se * p.se + q.se * q.se).sqrt();
        let dev = if diff == 0.0 { 0.0 } else if se > 0.0 { diff / se } else { f64::INFINITY };
        if dev > max_dev {
            max_dev = dev;
            time_of_max = p.t;
        }
        sum_sq += dev * dev;
        max_abs = max_abs.max(diff);
    }
    Ok(CompareReport {
        points: common.len(),
        max_deviation: max_dev,
        rms_deviation: (sum_sq / common.len() as f64).sqrt(),
        time_of_max,
        max_abs_difference: max_abs,
    })
}

/// Read column `metric` (and `se_<metric>` when present) against `t` from a table.
pub fn read_series(path: &Path, metric: &str) -> Result<Vec<SeriesPoint>> {
    let (header, rows) = read_table(path)?;
    let col = |name: &str| header.iter().position(|h| h == name);
    let t = col("t").ok_or_else(|| HarnessError::Config(format!("{}: no `t` column", path.display())))?;
    let v = col(metric).ok_or_else(|| HarnessError::Config(format!("{}: no `{metric}` column", path.display())))?;
    let se = col(&format!("se_{metric}"));
    Ok(rows
        .iter()
        .map(|r| SeriesPoint {
            t: r[t],
            value: r[v],
            se: se.map_or(0.0, |i| r[i]),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(f: impl Fn(f64) -> f64, se: f64, n: usize, t_max: f64) -> Vec<SeriesPoint> {
        (0..n)
            .map(|k| {
                let t = t_max * k as f64 / (n - 1) as f64;
                SeriesPoint { t, value: f(t), se }
            })
            .collect()
    }

    #[test]
    fn self_comparison_is_zero() {
        let a = series(|t| t * t, 0.1, 11, 1.0);
        let r = compare_runs(&a, &a).unwrap();
        assert_eq!(r.max_deviation, 0.0);
        assert_eq!(r.points, 11);
    }

    #[test]
    fn interpolates_and_restricts_to_overlap() {
        let a = series(|t| 2.0 * t, 0.3, 11, 2.0);
        let b = series(|t| 2.0 * t + 0.5, 0.4, 7, 1.0);
        let r = compare_runs(&a, &b).unwrap();
        assert_eq!(r.points, 6);
        assert!((r.max_deviation - 1.0).abs() < 1e-12);
        assert!((r.rms_deviation - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_ranges_are_rejected() {
        let a = series(|t| t, 0.1, 5, 1.0);
        let b: Vec<SeriesPoint> = a.iter().map(|p| SeriesPoint { t: p.t + 2.0, ..*p }).collect();
        assert!(compare_runs(&a, &b).is_err());
    }
}
