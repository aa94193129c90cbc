//! Accuracy metrics, the uncertainty/error diagnostic and uncertainty
//! sampling.

mod active;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use active::{active_learn, rank_by_cov, ALIteration, ALState};

/// Minimum batch for a rank correlation.
pub const MIN_CORRELATION_BATCH: usize = 10;

fn check_card(v: f64, what: &str) -> Result<()> {
    if !(v >= 1.0) || !v.is_finite() {
        return Err(Error::InvalidArgument(format!("{what} cardinality {v} must be finite and >= 1")));
    }
    Ok(())
}

/// `max(c / e, e / c)`.
pub fn q_error(true_card: f64, est_card: f64) -> Result<f64> {
    check_card(true_card, "true")?;
    check_card(est_card, "estimated")?;
    Ok((true_card / est_card).max(est_card / true_card))
}

/// Mean squared natural-log ratio.
pub fn mse_log(true_cards: &[f64], est_cards: &[f64]) -> Result<f64> {
    if true_cards.len() != est_cards.len() {
        return Err(Error::DimensionMismatch {
            expected: true_cards.len(),
            got: est_cards.len(),
        });
    }
    if true_cards.is_empty() {
        return Err(Error::Empty("batch".into()));
    }
    let mut s = 0.0;
    for (&c, &e) in true_cards.iter().zip(est_cards) {
        check_card(c, "true")?;
        check_card(e, "estimated")?;
        s += (c.ln() - e.ln()).powi(2);
    }
    Ok(s / true_cards.len() as f64)
}

/// Linear interpolation between order statistics at rank `p * (n - 1)`.
/// `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileSummary {
    pub count: usize,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
    pub max: f64,
    pub geo_mean: f64,
}

impl QuantileSummary {
    /// `None` for an empty batch.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Some(QuantileSummary {
            count: s.len(),
            p25: quantile(&s, 0.25),
            p50: quantile(&s, 0.5),
            p75: quantile(&s, 0.75),
            p95: quantile(&s, 0.95),
            max: s[s.len() - 1],
            geo_mean: (s.iter().map(|v| v.ln()).sum::<f64>() / s.len() as f64).exp(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QErrorStats {
    pub q_errors: Vec<f64>,
    pub overall: Option<QuantileSummary>,
    /// Keyed by condition count.
    pub strata: BTreeMap<usize, QuantileSummary>,
}

impl QErrorStats {
    pub fn new(true_cards: &[f64], est_cards: &[f64], n_conditions: &[usize]) -> Result<Self> {
        if true_cards.len() != est_cards.len() || true_cards.len() != n_conditions.len() {
            return Err(Error::DimensionMismatch {
                expected: true_cards.len(),
                got: est_cards.len().min(n_conditions.len()),
            });
        }
        let q = true_cards
            .iter()
            .zip(est_cards)
            .map(|(&c, &e)| q_error(c, e))
            .collect::<Result<Vec<_>>>()?;
        let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (&k, &v) in n_conditions.iter().zip(&q) {
            groups.entry(k).or_default().push(v);
        }
        Ok(QErrorStats {
            overall: QuantileSummary::of(&q),
            strata: groups
                .into_iter()
                .filter_map(|(k, v)| QuantileSummary::of(&v).map(|s| (k, s)))
                .collect(),
            q_errors: q,
        })
    }
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            ranks[t] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Spearman correlation; `None` below [`MIN_CORRELATION_BATCH`] points
/// or when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < MIN_CORRELATION_BATCH {
        return None;
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

/// One point of the CoV / q-error scatter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub query_id: u64,
    /// `None` stands for an infinite CoV (zero log-space mean).
    pub cov: Option<f64>,
    pub q_error: f64,
    pub n_conditions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    /// Spearman correlation of CoV with `|ln q-error|`.
    pub spearman: Option<f64>,
    pub q_error: QErrorStats,
    pub points: Vec<ScatterPoint>,
}

/// Inputs are aligned per query.
pub fn uncertainty_error_report(
    ids: &[u64],
    cov: &[f64],
    true_cards: &[f64],
    est_cards: &[f64],
    n_conditions: &[usize],
) -> Result<UncertaintyReport> {
    if ids.len() != cov.len() {
        return Err(Error::DimensionMismatch {
            expected: ids.len(),
            got: cov.len(),
        });
    }
    let stats = QErrorStats::new(true_cards, est_cards, n_conditions)?;
    if stats.q_errors.len() != ids.len() {
        return Err(Error::DimensionMismatch {
            expected: ids.len(),
            got: stats.q_errors.len(),
        });
    }
    let abs_log: Vec<f64> = stats.q_errors.iter().map(|q| q.ln().abs()).collect();
    let points = (0..ids.len())
        .map(|i| ScatterPoint {
            query_id: ids[i],
            cov: cov[i].is_finite().then_some(cov[i]),
            q_error: stats.q_errors[i],
            n_conditions: n_conditions[i],
        })
        .collect();
    Ok(UncertaintyReport {
        spearman: spearman(cov, &abs_log),
        q_error: stats,
        points,
    })
}

/// Scatter data as CSV: `query_id,cov,q_error,n_conditions`; an infinite
/// CoV is written as `inf`.
pub fn write_scatter_csv<W: Write>(w: W, points: &[ScatterPoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["query_id", "cov", "q_error", "n_conditions"])?;
    for p in points {
        out.write_record([
            p.query_id.to_string(),
            p.cov.map_or_else(|| "inf".to_string(), |c| c.to_string()),
            p.q_error.to_string(),
            p.n_conditions.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Aligned text table of a q-error summary, overall then per stratum.
pub fn render_table(stats: &QErrorStats) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} {:>7} {:>9} {:>9} {:>9} {:>9} {:>11} {:>9}",
        "stratum", "count", "p25", "median", "p75", "p95", "max", "geomean"
    );
    let mut row = |name: String, q: &QuantileSummary| {
        let _ = writeln!(
            s,
            "{:<10} {:>7} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>11.3} {:>9.3}",
            name, q.count, q.p25, q.p50, q.p75, q.p95, q.max, q.geo_mean
        );
    };
    if let Some(q) = &stats.overall {
        row("all".into(), q);
    }
    for (k, q) in &stats.strata {
        row(format!("{k} cond"), q);
    }
    s
}

/// MSE of log cardinalities per condition count.
pub fn stratified_mse(true_cards: &[f64], est_cards: &[f64], n_conditions: &[usize]) -> Result<BTreeMap<usize, f64>> {
    let mut groups: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((&c, &e), &k) in true_cards.iter().zip(est_cards).zip(n_conditions) {
        let g = groups.entry(k).or_default();
        g.0.push(c);
        g.1.push(e);
    }
    groups
        .into_iter()
        .map(|(k, (c, e))| Ok((k, mse_log(&c, &e)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn q_error_examples() {
        assert_eq!(q_error(100.0, 50.0).unwrap(), 2.0);
        assert_eq!(q_error(50.0, 100.0).unwrap(), 2.0);
        assert_eq!(q_error(7.0, 7.0).unwrap(), 1.0);
        assert!(q_error(0.5, 2.0).is_err());
        assert!(q_error(2.0, f64::NAN).is_err());
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_log(&[3.0, 9.0], &[3.0, 9.0]).unwrap(), 0.0);
        let e2 = 2f64.exp();
        assert!((mse_log(&[e2 * 10.0], &[10.0]).unwrap() - 4.0).abs() < 1e-12);
        assert!(mse_log(&[], &[]).is_err());
        assert!(mse_log(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn mse_matches_scalar_recomputation() {
        let c = [1.0, 5.0, 120.0, 33.0, 1e6];
        let e = [2.0, 5.5, 90.0, 1.0, 2e5];
        let mut want = 0.0;
        for i in 0..5 {
            let r: f64 = c[i] / e[i];
            want += r.ln() * r.ln();
        }
        assert!((mse_log(&c, &e).unwrap() - want / 5.0).abs() < 1e-12);
    }

    #[test]
    fn quantile_interpolation() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&s, 0.5), 3.0);
        assert_eq!(quantile(&s, 0.25), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
        assert_eq!(quantile(&s, 0.95), 4.8);
        let q = QuantileSummary::of(&[4.0, 1.0]).unwrap();
        assert_eq!(q.geo_mean, 2.0);
        assert!(QuantileSummary::of(&[]).is_none());
    }

    #[test]
    fn stratified_stats() {
        let st = QErrorStats::new(&[10.0, 10.0, 10.0], &[5.0, 10.0, 40.0], &[2, 2, 3]).unwrap();
        assert_eq!(st.strata[&2].count, 2);
        assert_eq!(st.strata[&3].p50, 4.0);
        let m = stratified_mse(&[10.0, 10.0], &[10.0, 10.0 * 1f64.exp()], &[1, 2]).unwrap();
        assert_eq!(m[&1], 0.0);
        assert!((m[&2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_cases() {
        let a: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| v * v + 1.0).collect();
        assert_eq!(spearman(&a, &b), Some(1.0));
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert_eq!(spearman(&a, &neg), Some(-1.0));
        assert_eq!(spearman(&a[..9], &b[..9]), None);
        assert_eq!(spearman(&a, &[3.0; 20]), None);
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn report_degenerate_and_monotone() {
        let ids: Vec<u64> = (0..12).collect();
        let c = vec![10.0; 12];
        let exact = uncertainty_error_report(&ids, &[0.0; 12], &c, &c, &[2; 12]).unwrap();
        assert_eq!(exact.spearman, None);
        let est: Vec<f64> = (0..12).map(|i| 10.0 * (1.0 + i as f64)).collect();
        let cov: Vec<f64> = est.iter().map(|e| (e / 10.0f64).ln()).collect();
        let r = uncertainty_error_report(&ids, &cov, &c, &est, &[2; 12]).unwrap();
        assert!((r.spearman.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scatter_csv() {
        let pts = vec![
            ScatterPoint { query_id: 3, cov: Some(0.5), q_error: 1.25, n_conditions: 2 },
            ScatterPoint { query_id: 4, cov: None, q_error: 2.0, n_conditions: 3 },
        ];
        let mut buf = Vec::new();
        write_scatter_csv(&mut buf, &pts).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "query_id,cov,q_error,n_conditions\n3,0.5,1.25,2\n4,inf,2,3\n"
        );
        let t = render_table(&QErrorStats::new(&[2.0], &[1.0], &[2]).unwrap());
        assert!(t.contains("all") && t.contains("2 cond"));
    }

    #[test]
    fn mse_and_geo_mean_orderings_agree_on_uniform_ratio_vectors() {
        // every query off by the same factor r in either direction: both
        // criteria are monotone in |ln r|
        let c = [5.0, 80.0, 12.0, 1000.0];
        let sign = [1.0, -1.0, -1.0, 1.0];
        let mut by_mse = Vec::new();
        let mut by_geo = Vec::new();
        for (i, t) in [0.9, 0.1, 2.3, 0.5, 1.7].iter().enumerate() {
            let est: Vec<f64> = c.iter().zip(sign).map(|(c, s)| (c * f64::exp(s * t)).max(1.0)).collect();
            by_mse.push((mse_log(&c, &est).unwrap(), i));
            let q = QErrorStats::new(&c, &est, &[1; 4]).unwrap();
            by_geo.push((q.overall.unwrap().geo_mean, i));
        }
        by_mse.sort_by(|a, b| a.0.total_cmp(&b.0));
        by_geo.sort_by(|a, b| a.0.total_cmp(&b.0));
        let o1: Vec<usize> = by_mse.iter().map(|p| p.1).collect();
        let o2: Vec<usize> = by_geo.iter().map(|p| p.1).collect();
        assert_eq!(o1, o2);
    }

    proptest! {
        #[test]
        fn q_error_symmetric_and_at_least_one(a in 1.0f64..1e9, b in 1.0f64..1e9) {
            let q = q_error(a, b).unwrap();
            prop_assert_eq!(q, q_error(b, a).unwrap());
            prop_assert!(q >= 1.0);
        }

        #[test]
        fn quantiles_monotone_and_permutation_invariant(mut v in prop::collection::vec(1.0f64..1e4, 1..60), seed in any::<u64>()) {
            let s = QuantileSummary::of(&v).unwrap();
            prop_assert!(s.p25 <= s.p50 && s.p50 <= s.p75 && s.p75 <= s.p95 && s.p95 <= s.max);
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            rand::seq::SliceRandom::shuffle(&mut v[..], &mut rng);
            prop_assert_eq!(QuantileSummary::of(&v).unwrap(), s);
        }
    }
}
