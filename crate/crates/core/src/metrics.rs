//! Ranking metrics, correct-user sets, complementarity (Jaccard of correct
//! sets and the Genie oracle) and paired significance tests.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::retrieval::RankTable;

pub const DEFAULT_K: usize = 10;

/// How per-trial complementarity numbers are aggregated in reports.
pub const TRIAL_AVERAGING: &str = "per_trial_then_mean";

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("cutoff K must be at least 1")]
    ZeroK,
    #[error("correct sets use different cutoffs ({0} vs {1})")]
    MismatchedK(usize, usize),
    #[error("user {0} is outside the evaluated universe")]
    OutsideUniverse(u32),
    #[error("paired samples need equal lengths >= 2 (got {0} and {1})")]
    BadSamples(usize, usize),
    #[error("empty rank table")]
    Empty,
}

fn hits(table: &RankTable, k: usize) -> usize {
    table.ranks().filter(|&r| r as usize <= k).count()
}

pub fn recall_at_k(table: &RankTable, k: usize) -> f64 {
    if table.is_empty() {
        return 0.0;
    }
    hits(table, k) as f64 / table.len() as f64
}

pub fn ndcg_at_k(table: &RankTable, k: usize) -> f64 {
    if table.is_empty() {
        return 0.0;
    }
    per_user_ndcg(table, k).iter().sum::<f64>() / table.len() as f64
}

/// 1.0 where the target is within the cutoff, in table order.
pub fn per_user_recall(table: &RankTable, k: usize) -> Vec<f64> {
    table.ranks().map(|r| if r as usize <= k { 1.0 } else { 0.0 }).collect()
}

pub fn per_user_ndcg(table: &RankTable, k: usize) -> Vec<f64> {
    table
        .ranks()
        .map(|r| if r as usize <= k { 1.0 / ((r as f64) + 1.0).log2() } else { 0.0 })
        .collect()
}

/// Users whose target ranks within the top `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectSet {
    pub k: usize,
    pub users: BTreeSet<u32>,
}

pub fn correct_set(table: &RankTable, k: usize) -> Result<CorrectSet, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    Ok(CorrectSet {
        k,
        users: table.entries.iter().filter(|e| e.rank as usize <= k).map(|e| e.user).collect(),
    })
}

/// The users a table was evaluated on.
pub fn universe(table: &RankTable) -> BTreeSet<u32> {
    table.entries.iter().map(|e| e.user).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplementarityReport {
    pub recall_a: f64,
    pub recall_b: f64,
    pub genie: f64,
    pub jaccard: f64,
    pub size_a: usize,
    pub size_b: usize,
    pub intersection_size: usize,
    pub union_size: usize,
    pub universe_size: usize,
}

impl ComplementarityReport {
    /// `J̃ · Genie = R_a + R_b − Genie`, checked on integer counts.
    pub fn identity_holds(&self) -> bool {
        self.union_size == 0 || self.size_a + self.size_b - self.union_size == self.intersection_size
    }

    /// `max(R_a, R_b) ≤ Genie ≤ min(1, R_a + R_b)`, checked on integer counts.
    pub fn bounds_hold(&self) -> bool {
        self.size_a.max(self.size_b) <= self.union_size
            && self.union_size <= self.universe_size.min(self.size_a + self.size_b)
    }
}

pub fn complementarity(
    a: &CorrectSet,
    b: &CorrectSet,
    universe: &BTreeSet<u32>,
) -> Result<ComplementarityReport, MetricsError> {
    if a.k != b.k {
        return Err(MetricsError::MismatchedK(a.k, b.k));
    }
    if let Some(&u) = a.users.iter().chain(&b.users).find(|u| !universe.contains(u)) {
        return Err(MetricsError::OutsideUniverse(u));
    }
    let intersection = a.users.intersection(&b.users).count();
    let union = a.users.len() + b.users.len() - intersection;
    let n = universe.len();
    let frac = |x: usize| if n == 0 { 0.0 } else { x as f64 / n as f64 };
    Ok(ComplementarityReport {
        recall_a: frac(a.users.len()),
        recall_b: frac(b.users.len()),
        genie: frac(union),
        jaccard: if union == 0 { 0.0 } else { intersection as f64 / union as f64 },
        size_a: a.users.len(),
        size_b: b.users.len(),
        intersection_size: intersection,
        union_size: union,
        universe_size: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub t_statistic: f64,
    pub p_value: f64,
    pub mean_difference: f64,
    pub n: usize,
    /// The differences had zero variance; `p_value` is then 1 or 0.
    pub degenerate_variance: bool,
}

/// Two-sided paired t-test on `a[i] − b[i]`.
pub fn significance(a: &[f64], b: &[f64]) -> Result<Significance, MetricsError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(MetricsError::BadSamples(a.len(), b.len()));
    }
    let n = a.len();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    // differences constant up to rounding count as zero variance
    let scale = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if var.sqrt() <= 64.0 * f64::EPSILON * scale {
        let zero = mean == 0.0;
        return Ok(Significance {
            t_statistic: if zero { 0.0 } else { mean.signum() * f64::INFINITY },
            p_value: if zero { 1.0 } else { 0.0 },
            mean_difference: mean,
            n,
            degenerate_variance: true,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("df >= 1");
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(Significance {
        t_statistic: t,
        p_value: p,
        mean_difference: mean,
        n,
        degenerate_variance: false,
    })
}

/// Recall and NDCG of one model on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub seed: u64,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub name: String,
    pub k: usize,
    pub trials: Vec<TrialMetrics>,
    pub mean_recall: f64,
    pub mean_ndcg: f64,
}

impl ModelSummary {
    pub fn new(name: impl Into<String>, k: usize, trials: Vec<TrialMetrics>) -> Self {
        let n = trials.len().max(1) as f64;
        let mean_recall = trials.iter().map(|t| t.recall).sum::<f64>() / n;
        let mean_ndcg = trials.iter().map(|t| t.ndcg).sum::<f64>() / n;
        Self {
            name: name.into(),
            k,
            trials,
            mean_recall,
            mean_ndcg,
        }
    }
}

/// A model pair's complementarity across trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub a: String,
    pub b: String,
    pub per_trial: Vec<ComplementarityReport>,
    pub mean_recall_a: f64,
    pub mean_recall_b: f64,
    pub mean_genie: f64,
    pub mean_jaccard: f64,
    /// Always [`TRIAL_AVERAGING`]: values are computed per trial, then averaged.
    pub averaging: String,
    pub significance: Option<Significance>,
}

impl PairReport {
    pub fn new(a: impl Into<String>, b: impl Into<String>, per_trial: Vec<ComplementarityReport>) -> Self {
        let n = per_trial.len().max(1) as f64;
        let mean = |f: fn(&ComplementarityReport) -> f64| per_trial.iter().map(f).sum::<f64>() / n;
        Self {
            a: a.into(),
            b: b.into(),
            mean_recall_a: mean(|r| r.recall_a),
            mean_recall_b: mean(|r| r.recall_b),
            mean_genie: mean(|r| r.genie),
            mean_jaccard: mean(|r| r.jaccard),
            per_trial,
            averaging: TRIAL_AVERAGING.to_string(),
            significance: None,
        }
    }
}

/// Aligned text table of per-model metrics (means over trials).
pub fn render_model_table(models: &[ModelSummary]) -> String {
    let k = models.first().map_or(DEFAULT_K, |m| m.k);
    let width = models.iter().map(|m| m.name.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>9}  {:>9}  {:>6}", "model", format!("R@{k}"), format!("N@{k}"), "trials");
    for m in models {
        let _ = writeln!(
            out,
            "{:<width$}  {:>9.5}  {:>9.5}  {:>6}",
            m.name,
            m.mean_recall,
            m.mean_ndcg,
            m.trials.len()
        );
    }
    out
}

/// Aligned text table of pair complementarity, one row per pair.
pub fn render_pair_table(pairs: &[PairReport]) -> String {
    let label = |p: &PairReport| format!("({}, {})", p.a, p.b);
    let width = pairs.iter().map(|p| label(p).len()).max().unwrap_or(4).max(4);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}",
        "pair", "R_a", "R_b", "genie", "jaccard", "p"
    );
    for p in pairs {
        let pval = p.significance.map_or("-".to_string(), |s| {
            format!("{:.4}{}", s.p_value, if s.p_value < 0.05 { "*" } else { "" })
        });
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.5}  {:>8.5}  {:>8.5}  {:>8.5}  {:>8}",
            label(p),
            p.mean_recall_a,
            p.mean_recall_b,
            p.mean_genie,
            p.mean_jaccard,
            pval
        );
    }
    let _ = writeln!(out, "complementarity averaging: {TRIAL_AVERAGING}");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SplitKind;
    use crate::retrieval::RankEntry;
    use proptest::prelude::*;

    fn table(ranks: &[u32]) -> RankTable {
        RankTable {
            split: SplitKind::Test,
            n_items: 100,
            entries: ranks
                .iter()
                .enumerate()
                .map(|(u, &rank)| RankEntry {
                    user: u as u32,
                    target: 0,
                    rank,
                })
                .collect(),
        }
    }

    fn set(users: &[u32]) -> CorrectSet {
        CorrectSet {
            k: 10,
            users: users.iter().copied().collect(),
        }
    }

    #[test]
    fn recall_examples() {
        assert!((recall_at_k(&table(&[1, 5, 20]), 10) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(recall_at_k(&table(&[1, 1]), 10), 1.0);
        assert_eq!(recall_at_k(&table(&[100, 37]), 100), 1.0);
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(per_user_ndcg(&table(&[1, 3, 11]), 10), vec![1.0, 0.5, 0.0]);
        assert!((ndcg_at_k(&table(&[1, 3]), 10) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn correct_set_examples() {
        let t = table(&[1, 50]);
        assert_eq!(correct_set(&t, 10).unwrap(), set(&[0]));
        assert_eq!(correct_set(&t, 0), Err(MetricsError::ZeroK));
    }

    #[test]
    fn complementarity_examples() {
        let u: BTreeSet<u32> = (1..=10).collect();
        let r = complementarity(&set(&[1, 2, 3]), &set(&[2, 3, 4]), &u).unwrap();
        assert_eq!((r.jaccard, r.genie), (0.5, 0.4));
        let r = complementarity(&set(&[1, 2, 3]), &set(&[1, 2, 3]), &u).unwrap();
        assert_eq!((r.jaccard, r.genie), (1.0, r.recall_a));
        let r = complementarity(&set(&[1, 2]), &set(&[5]), &u).unwrap();
        assert_eq!(r.jaccard, 0.0);
        assert_eq!(r.union_size, r.size_a + r.size_b);
        let mut b = set(&[1]);
        b.k = 5;
        assert_eq!(complementarity(&set(&[1]), &b, &u), Err(MetricsError::MismatchedK(10, 5)));
        assert_eq!(complementarity(&set(&[11]), &set(&[]), &u), Err(MetricsError::OutsideUniverse(11)));
        let r = complementarity(&set(&[]), &set(&[]), &u).unwrap();
        assert_eq!((r.jaccard, r.genie), (0.0, 0.0));
    }

    proptest! {
        #[test]
        fn set_invariants(
            a in prop::collection::btree_set(0u32..200, 0..200),
            b in prop::collection::btree_set(0u32..200, 0..200),
        ) {
            let u: BTreeSet<u32> = (0..200).collect();
            let (ca, cb) = (CorrectSet { k: 10, users: a.clone() }, CorrectSet { k: 10, users: b.clone() });
            let r = complementarity(&ca, &cb, &u).unwrap();
            let s = complementarity(&cb, &ca, &u).unwrap();
            prop_assert_eq!(r.jaccard, s.jaccard);
            prop_assert_eq!(r.genie, s.genie);
            prop_assert!(r.identity_holds() && r.bounds_hold());
            prop_assert_eq!(r.union_size, a.union(&b).count());
        }

        #[test]
        fn table_invariants(ranks in prop::collection::vec(1u32..=100, 1..200), k in 1usize..100) {
            let t = table(&ranks);
            prop_assert!(ndcg_at_k(&t, k) <= recall_at_k(&t, k) + 1e-12);
            prop_assert!(recall_at_k(&t, k) <= recall_at_k(&t, k + 1));
            let c = correct_set(&t, k).unwrap();
            prop_assert_eq!(c.users.len(), hits(&t, k));
        }
    }

    #[test]
    fn correct_set_size_matches_recall_on_200_users() {
        let ranks: Vec<u32> = (0..200u32).map(|u| (u * 7919) % 97 + 1).collect();
        let t = table(&ranks);
        let recount = ranks.iter().filter(|&&r| r <= 10).count();
        assert_eq!(correct_set(&t, 10).unwrap().users.len(), recount);
        assert_eq!(recall_at_k(&t, 10) * 200.0, recount as f64);
    }

    #[test]
    fn t_test_matches_reference_values() {
        // Reference values from an independent statistics package.
        let cases: [(&[f64], &[f64], f64, f64); 3] = [
            (
                &[0.12, 0.55, 0.31, 0.98, 0.44, 0.07, 0.63, 0.29, 0.81, 0.36, 0.5, 0.72],
                &[0.10, 0.40, 0.35, 0.90, 0.20, 0.11, 0.60, 0.25, 0.70, 0.30, 0.52, 0.61],
                2.58419209434744,
                0.02539982059646459,
            ),
            (
                &[1., 0., 1., 1., 0., 1., 0., 0., 1., 1., 1., 0., 1., 1., 0., 1., 0., 1., 1., 1.],
                &[0., 0., 1., 0., 0., 1., 0., 1., 0., 1., 0., 0., 1., 0., 0., 1., 0., 0., 1., 0.],
                2.348644083776438,
                0.02981502462969899,
            ),
            (&[0.3, 0.1, 0.2], &[0.31, 0.12, 0.15], 0.30499714066520955, 0.7891814893221079),
        ];
        for (a, b, t, p) in cases {
            let s = significance(a, b).unwrap();
            assert!((s.t_statistic - t).abs() < 1e-10, "{} vs {t}", s.t_statistic);
            assert!((s.p_value - p).abs() < 1e-10, "{} vs {p}", s.p_value);
            assert!(!s.degenerate_variance);
            let r = significance(b, a).unwrap();
            assert!((r.t_statistic + t).abs() < 1e-10 && (r.p_value - p).abs() < 1e-10);
        }
    }

    #[test]
    fn degenerate_variance() {
        let a: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let s = significance(&a, &a).unwrap();
        assert!(s.degenerate_variance && s.p_value == 1.0);
        let b: Vec<f64> = a.iter().map(|x| x + 0.1).collect();
        let s = significance(&b, &a).unwrap();
        assert!(s.degenerate_variance && s.p_value == 0.0);
        assert_eq!(significance(&[1.0], &[1.0]), Err(MetricsError::BadSamples(1, 1)));
    }

    #[test]
    fn reports_render() {
        let m = ModelSummary::new(
            "id_only",
            10,
            vec![
                TrialMetrics { seed: 1, recall: 0.2, ndcg: 0.1 },
                TrialMetrics { seed: 2, recall: 0.4, ndcg: 0.3 },
            ],
        );
        assert!((m.mean_recall - 0.3).abs() < 1e-15);
        assert!(render_model_table(&[m]).contains("id_only"));
        let u: BTreeSet<u32> = (0..10).collect();
        let r = complementarity(&set(&[1, 2]), &set(&[2, 3]), &u).unwrap();
        let p = PairReport::new("id_only", "text_only", vec![r, r]);
        assert_eq!(p.mean_jaccard, r.jaccard);
        let text = render_pair_table(&[p]);
        assert!(text.contains("(id_only, text_only)") && text.contains(TRIAL_AVERAGING));
    }
}
