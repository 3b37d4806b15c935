use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::record::RunRecord;

pub const AUC_BINS: usize = 20;
pub const AUC_METHOD: &str = "20 equal-width bins over [0,1] on x, mean y per non-empty bin placed at the \
     bin center, linear interpolation between bins, first/last bin mean held flat to the 0 and 1 edges, \
     trapezoid integration; points pooled unweighted across queries";

/// Interval edges for fairness levels; each interval is left-closed.
pub const INTERVAL_EDGES: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffSummary {
    pub x_name: String,
    pub y_name: String,
    pub slope: f64,
    pub intercept: f64,
    pub auc: f64,
    pub point_count: usize,
}

fn sorted(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts
}

/// Ordinary least squares `y = slope * x + intercept`.
pub fn fit_tradeoff_line(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(Error::Degenerate(
            "a line fit needs at least two points".into(),
        ));
    }
    // Sorting first makes the floating-point sums independent of input order.
    let pts = sorted(points);
    let n = pts.len() as f64;
    let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in &pts {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx.is_nan() || sxx <= 0.0 {
        return Err(Error::Degenerate("all points share the same x".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, mean_y - slope * mean_x))
}

/// Area under the binned curve of `points` over `x in [0, 1]`.
pub fn curve_auc(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Degenerate("AUC needs at least two points".into()));
    }
    let mut sums = [0.0; AUC_BINS];
    let mut counts = [0usize; AUC_BINS];
    for &(x, y) in &sorted(points) {
        let bin = ((x * AUC_BINS as f64).floor().max(0.0) as usize).min(AUC_BINS - 1);
        sums[bin] += y;
        counts[bin] += 1;
    }
    let curve: Vec<(f64, f64)> = (0..AUC_BINS)
        .filter(|&b| counts[b] > 0)
        .map(|b| {
            (
                (b as f64 + 0.5) / AUC_BINS as f64,
                sums[b] / counts[b] as f64,
            )
        })
        .collect();
    if curve.len() < 2 {
        return Err(Error::Degenerate("all points fall into one bin".into()));
    }
    let (first, last) = (curve[0], curve[curve.len() - 1]);
    let mut area = first.0 * first.1 + (1.0 - last.0) * last.1;
    for w in curve.windows(2) {
        area += (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0;
    }
    Ok(area)
}

pub fn tradeoff_summary(
    x_name: &str,
    y_name: &str,
    points: &[(f64, f64)],
) -> Result<TradeoffSummary> {
    let (slope, intercept) = fit_tradeoff_line(points)?;
    Ok(TradeoffSummary {
        x_name: x_name.into(),
        y_name: y_name.into(),
        slope,
        intercept,
        auc: curve_auc(points)?,
        point_count: points.len(),
    })
}

/// The three metric pairs reported for a sweep.
pub type AxisPoints = (&'static str, &'static str, Vec<(f64, f64)>);

pub fn axis_pairs(records: &[RunRecord]) -> [AxisPoints; 3] {
    [
        (
            "eed_norm",
            "eer_norm",
            records.iter().map(|r| (r.eed_norm, r.eer_norm)).collect(),
        ),
        (
            "eer_norm",
            "eu_norm",
            records.iter().map(|r| (r.eer_norm, r.eu_norm)).collect(),
        ),
        (
            "eed_norm",
            "eu_norm",
            records.iter().map(|r| (r.eed_norm, r.eu_norm)).collect(),
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub lower: f64,
    pub upper: f64,
    /// Empty when no run fell in the interval.
    pub mean_delta_eu: Option<f64>,
    pub run_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalTable {
    pub rows: Vec<IntervalRow>,
    /// Mean normalized baseline utility over the queries in the table.
    pub baseline_eu: f64,
    pub baseline_eu_raw: f64,
}

pub fn interval_of(eed_norm: f64) -> Option<usize> {
    INTERVAL_EDGES
        .windows(2)
        .position(|w| w[0] <= eed_norm && eed_norm < w[1])
}

/// Mean utility change against the deterministic baseline, grouped by the
/// fairness level (normalized EE-D) of each run. Runs at exactly 1.0 are
/// left out.
pub fn interval_table(records: &[RunRecord], baseline: &[RunRecord]) -> Result<IntervalTable> {
    let by_query: BTreeMap<&str, &RunRecord> =
        baseline.iter().map(|b| (b.query_id.as_str(), b)).collect();
    let mut sums = [0.0; 5];
    let mut counts = [0usize; 5];
    let mut queries = BTreeMap::new();
    for r in records {
        let base = by_query
            .get(r.query_id.as_str())
            .ok_or_else(|| Error::UnknownQuery(format!("no baseline record for {}", r.query_id)))?;
        queries.insert(r.query_id.as_str(), *base);
        if let Some(i) = interval_of(r.eed_norm) {
            sums[i] += r.eu_norm - base.eu_norm;
            counts[i] += 1;
        }
    }
    let rows = INTERVAL_EDGES
        .windows(2)
        .enumerate()
        .map(|(i, w)| IntervalRow {
            lower: w[0],
            upper: w[1],
            mean_delta_eu: (counts[i] > 0).then(|| sums[i] / counts[i] as f64),
            run_count: counts[i],
        })
        .collect();
    let (baseline_eu, baseline_eu_raw) = if queries.is_empty() {
        (0.0, 0.0)
    } else {
        let q = queries.len() as f64;
        (
            queries.values().map(|b| b.eu_norm).sum::<f64>() / q,
            queries.values().map(|b| b.eu_raw).sum::<f64>() / q,
        )
    };
    Ok(IntervalTable {
        rows,
        baseline_eu,
        baseline_eu_raw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn exact_lines() {
        let (s, i) = fit_tradeoff_line(&[(0.0, 0.0), (1.0, 1.0)]).unwrap();
        assert_eq!((s, i), (1.0, 0.0));
        let (s, _) = fit_tradeoff_line(&[(0.0, 1.0), (1.0, 0.0)]).unwrap();
        assert_eq!(s, -1.0);
        assert!(fit_tradeoff_line(&[(0.5, 0.0), (0.5, 1.0)]).is_err());
        assert!(fit_tradeoff_line(&[(0.5, 0.0)]).is_err());
    }

    #[test]
    fn planted_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let points: Vec<(f64, f64)> = (0..1000)
            .map(|_| {
                let x: f64 = rng.random();
                (x, 0.3 * x + 0.2 + noise.sample(&mut rng))
            })
            .collect();
        let (slope, intercept) = fit_tradeoff_line(&points).unwrap();
        assert!((slope - 0.3).abs() < 0.02, "{slope}");
        assert!((intercept - 0.2).abs() < 0.02, "{intercept}");
    }

    #[test]
    fn auc_examples() {
        let flat: Vec<(f64, f64)> = (0..50).map(|i| (i as f64 / 49.0, 0.37)).collect();
        assert!((curve_auc(&flat).unwrap() - 0.37).abs() < 1e-12);
        assert!((curve_auc(&[(0.0, 0.3), (1.0, 0.5)]).unwrap() - 0.4).abs() < 1e-12);
        assert!(curve_auc(&[(0.51, 0.3), (0.52, 0.5)]).is_err());
    }

    #[test]
    fn auc_of_piecewise_linear_curve() {
        // y = 2x on [0, 0.5], then 2 - 2x; integral 0.5
        let f = |x: f64| if x <= 0.5 { 2.0 * x } else { 2.0 - 2.0 * x };
        let points: Vec<(f64, f64)> = (0..20_000)
            .map(|i| (i as f64 + 0.5) / 20_000.0)
            .map(|x| (x, f(x)))
            .collect();
        let auc = curve_auc(&points).unwrap();
        assert!((auc - 0.5).abs() < 0.01, "{auc}");
    }

    fn rec(query: &str, eed_norm: f64, eu_norm: f64) -> RunRecord {
        RunRecord {
            query_id: query.into(),
            alpha: Some(1.0),
            seed: 0,
            n: 10,
            m: 3,
            k: 5,
            eed_raw: 0.0,
            eer_raw: 0.0,
            eed_norm,
            eer_norm: 0.5,
            eu_raw: eu_norm,
            eu_norm,
            u_max: 1.0,
            eu_flagged: false,
            retriever: "r".into(),
            generator: "g".into(),
            config_hash: "h".into(),
        }
    }

    #[test]
    fn bucketing() {
        assert_eq!(interval_of(0.75), Some(3));
        assert_eq!(interval_of(0.0), Some(0));
        assert_eq!(interval_of(0.2), Some(1));
        assert_eq!(interval_of(0.6), Some(3));
        assert_eq!(interval_of(1.0), None);
    }

    #[test]
    fn interval_deltas() {
        let baseline = vec![rec("a", 1.0, 0.5), rec("b", 1.0, 0.7)];
        let runs = vec![
            rec("a", 0.75, 0.6),
            rec("b", 0.7, 0.7),
            rec("a", 0.1, 0.2),
            rec("a", 1.0, 0.9),
        ];
        let table = interval_table(&runs, &baseline).unwrap();
        assert_eq!(table.rows.len(), 5);
        assert_eq!(table.rows[3].run_count, 2);
        assert!((table.rows[3].mean_delta_eu.unwrap() - 0.05).abs() < 1e-12);
        assert!((table.rows[0].mean_delta_eu.unwrap() + 0.3).abs() < 1e-12);
        assert_eq!(table.rows[1].run_count, 0);
        assert_eq!(table.rows[1].mean_delta_eu, None);
        assert!((table.baseline_eu - 0.6).abs() < 1e-12);
        assert_eq!(table.rows.iter().map(|r| r.run_count).sum::<usize>(), 3);

        let equal = vec![rec("a", 0.3, 0.5), rec("b", 0.5, 0.7)];
        let table = interval_table(&equal, &baseline).unwrap();
        assert!(table
            .rows
            .iter()
            .flat_map(|r| r.mean_delta_eu)
            .all(|d| d == 0.0));

        assert!(interval_table(&[rec("z", 0.3, 0.1)], &baseline).is_err());
    }

    proptest! {
        #[test]
        fn order_invariant(points in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 3..60), seed in any::<u64>()) {
            let mut shuffled = points.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.random_range(0..=i));
            }
            prop_assert_eq!(fit_tradeoff_line(&points).ok(), fit_tradeoff_line(&shuffled).ok());
            prop_assert_eq!(curve_auc(&points).ok(), curve_auc(&shuffled).ok());
            if let Ok(auc) = curve_auc(&points) {
                prop_assert!((0.0..=1.0).contains(&auc));
            }
        }
    }
}
