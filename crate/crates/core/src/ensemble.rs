//! Score-level ensembles of an ID model and a text model: the plain score sum
//! and the `α·exp(s_ID/τ) + (1−α)·exp(s_text/τ)` family, plus grid sweeps
//! over `(α, log10 τ)`.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{SplitKind, SplitView};
use crate::retrieval::{rank_of, RankTable};

#[derive(Debug, Error, PartialEq)]
pub enum EnsembleError {
    #[error("score vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("alpha must lie in [0, 1], got {0}")]
    BadAlpha(f64),
    #[error("tau must be positive, got {0}")]
    BadTau(f64),
    #[error("empty sweep grid")]
    EmptyGrid,
    #[error("missing scores for split {0}")]
    MissingSplit(SplitKind),
}

/// `(α, τ)`; `τ = ∞` is the weighted sum `α·s_ID + (1−α)·s_text`, which at
/// `α = 0.5` ranks exactly like the plain score sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleParams {
    pub alpha: f64,
    pub tau: f64,
}

impl EnsembleParams {
    pub const ENSREC: EnsembleParams = EnsembleParams {
        alpha: 0.5,
        tau: f64::INFINITY,
    };

    pub fn new(alpha: f64, tau: f64) -> Result<Self, EnsembleError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(EnsembleError::BadAlpha(alpha));
        }
        if tau.is_nan() || tau <= 0.0 {
            return Err(EnsembleError::BadTau(tau));
        }
        Ok(Self { alpha, tau })
    }

    /// Ensemble score of one item. Finite `τ` returns the natural log of
    /// `α·exp(s_id/τ) + (1−α)·exp(s_text/τ)`, computed with a max shift; the
    /// log is strictly increasing so rankings are those of the raw family,
    /// without overflow or underflow at any `τ`.
    #[inline]
    pub fn score(&self, s_id: f64, s_text: f64) -> f64 {
        let (a, t) = (self.alpha, self.tau);
        if t.is_infinite() {
            return a * s_id + (1.0 - a) * s_text;
        }
        if a == 1.0 {
            return s_id / t;
        }
        if a == 0.0 {
            return s_text / t;
        }
        let x = a.ln() + s_id / t;
        let y = (1.0 - a).ln() + s_text / t;
        let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
        hi + (lo - hi).exp().ln_1p()
    }
}

fn check_len(a: &[f64], b: &[f64]) -> Result<(), EnsembleError> {
    if a.len() != b.len() {
        return Err(EnsembleError::LengthMismatch(a.len(), b.len()));
    }
    Ok(())
}

/// Elementwise `s_id + s_text`.
pub fn ens_sum(s_id: &[f64], s_text: &[f64]) -> Result<Vec<f64>, EnsembleError> {
    check_len(s_id, s_text)?;
    Ok(s_id.iter().zip(s_text).map(|(a, b)| a + b).collect())
}

/// Elementwise [`EnsembleParams::score`] (log-domain for finite `τ`).
pub fn ens_alpha_tau(s_id: &[f64], s_text: &[f64], params: EnsembleParams) -> Result<Vec<f64>, EnsembleError> {
    check_len(s_id, s_text)?;
    Ok(s_id.iter().zip(s_text).map(|(&a, &b)| params.score(a, b)).collect())
}

/// The raw family value `α·exp(s_id/τ) + (1−α)·exp(s_text/τ)`; finite only
/// while `|s|/τ` stays below ~709.
pub fn ens_alpha_tau_raw(s_id: f64, s_text: f64, params: EnsembleParams) -> f64 {
    params.alpha * (s_id / params.tau).exp() + (1.0 - params.alpha) * (s_text / params.tau).exp()
}

/// Ranks of the ensemble of two score matrices (rows aligned with `view`).
pub fn ensemble_rank_table(
    view: &SplitView,
    s_id: &Array2<f64>,
    s_text: &Array2<f64>,
    params: EnsembleParams,
) -> Result<RankTable, EnsembleError> {
    if s_id.dim() != s_text.dim() {
        return Err(EnsembleError::LengthMismatch(s_id.len(), s_text.len()));
    }
    let mut scores = Array2::zeros(s_id.raw_dim());
    ndarray::Zip::from(&mut scores)
        .and(s_id)
        .and(s_text)
        .for_each(|o, &a, &b| *o = params.score(a, b));
    Ok(RankTable::from_scores(view, &scores))
}

/// One example reduced to what matters for a top-`k` hit test under every
/// monotone ensemble: the target's score pair, how many items outrank it
/// under all of them, and the items whose order against it depends on the
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepExample {
    pub target: (f64, f64),
    pub target_index: u32,
    pub always_above: u32,
    pub contenders: Vec<(u32, f64, f64)>,
}

impl SweepExample {
    pub fn new(s_id: ArrayView1<f64>, s_text: ArrayView1<f64>, target: u32, k: usize) -> Self {
        let t = target as usize;
        let (ti, tt) = (s_id[t], s_text[t]);
        let mut always_above = 0u32;
        let mut contenders = Vec::new();
        for (j, (&a, &b)) in s_id.iter().zip(s_text.iter()).enumerate() {
            if j == t {
                continue;
            }
            let ge = a >= ti && b >= tt;
            let le = a <= ti && b <= tt;
            let strict_above = a > ti && b > tt;
            let strict_below = a < ti && b < tt;
            if strict_above || (ge && j < t) {
                always_above += 1;
            } else if strict_below || (le && j > t) {
                continue;
            } else {
                contenders.push((j as u32, a, b));
            }
        }
        if always_above as usize >= k {
            contenders.clear();
        }
        Self {
            target: (ti, tt),
            target_index: target,
            always_above,
            contenders,
        }
    }

    /// Whether the target ranks within `k` under `params`.
    pub fn hit(&self, params: &EnsembleParams, k: usize) -> bool {
        let above = self.always_above as usize;
        if above >= k {
            return false;
        }
        let budget = k - above;
        let st = params.score(self.target.0, self.target.1);
        let mut beaten = 0;
        for &(j, a, b) in &self.contenders {
            let s = params.score(a, b);
            if s > st || (s == st && j < self.target_index) {
                beaten += 1;
                if beaten >= budget {
                    return false;
                }
            }
        }
        true
    }
}

/// Reduces a split's score matrices to [`SweepExample`]s.
pub fn sweep_examples(view: &SplitView, s_id: &ArrayView2<f64>, s_text: &ArrayView2<f64>, k: usize) -> Vec<SweepExample> {
    view.examples
        .iter()
        .enumerate()
        .map(|(r, ex)| SweepExample::new(s_id.row(r), s_text.row(r), ex.target, k))
        .collect()
}

/// α ∈ {0, 0.05, …, 1}.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

/// log10 τ ∈ {−2, −1.75, …, 3}.
pub fn default_log10_tau_grid() -> Vec<f64> {
    (0..=20).map(|i| -2.0 + i as f64 / 4.0).collect()
}

/// The EnsRec reference cell, `(α, τ) = (0.5, 100)`.
pub const REFERENCE_CELL: (f64, f64) = (0.5, 2.0);

fn with_value(mut grid: Vec<f64>, v: f64) -> Vec<f64> {
    if !grid.contains(&v) {
        grid.push(v);
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSweep {
    pub split: SplitKind,
    pub n_examples: usize,
    /// `hits[a][t]`: examples whose target ranks within `k` at
    /// `(alpha_grid[a], log10_tau_grid[t])`.
    pub hits: Vec<Vec<usize>>,
    pub recall: Vec<Vec<f64>>,
    /// Grid indices of the best cell; ties go to the smaller alpha, then the
    /// smaller tau.
    pub argmax: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub k: usize,
    pub alpha_grid: Vec<f64>,
    pub log10_tau_grid: Vec<f64>,
    pub splits: Vec<SplitSweep>,
}

/// Recall@k at every grid cell for every split. The reference cell is added
/// to the grids if absent.
pub fn sweep(
    splits: &[(SplitKind, Vec<SweepExample>)],
    alpha_grid: &[f64],
    log10_tau_grid: &[f64],
    k: usize,
) -> Result<SweepResult, EnsembleError> {
    if alpha_grid.is_empty() || log10_tau_grid.is_empty() {
        return Err(EnsembleError::EmptyGrid);
    }
    for &a in alpha_grid {
        EnsembleParams::new(a, 1.0)?;
    }
    let alpha_grid = with_value(alpha_grid.to_vec(), REFERENCE_CELL.0);
    let log10_tau_grid = with_value(log10_tau_grid.to_vec(), REFERENCE_CELL.1);
    let mut out = Vec::with_capacity(splits.len());
    for (split, examples) in splits {
        let mut hits = vec![vec![0usize; log10_tau_grid.len()]; alpha_grid.len()];
        for (ai, &alpha) in alpha_grid.iter().enumerate() {
            for (ti, &lt) in log10_tau_grid.iter().enumerate() {
                let p = EnsembleParams::new(alpha, 10f64.powf(lt))?;
                hits[ai][ti] = examples.iter().filter(|e| e.hit(&p, k)).count();
            }
        }
        let n = examples.len();
        let recall = hits
            .iter()
            .map(|row| row.iter().map(|&h| if n == 0 { 0.0 } else { h as f64 / n as f64 }).collect())
            .collect();
        let mut argmax = (0, 0);
        for (ai, row) in hits.iter().enumerate() {
            for (ti, &h) in row.iter().enumerate() {
                if h > hits[argmax.0][argmax.1] {
                    argmax = (ai, ti);
                }
            }
        }
        out.push(SplitSweep {
            split: *split,
            n_examples: n,
            hits,
            recall,
            argmax,
        });
    }
    Ok(SweepResult {
        k,
        alpha_grid,
        log10_tau_grid,
        splits: out,
    })
}

/// Selected parameters of one split and the test recall they achieve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub selected_on: SplitKind,
    pub alpha: f64,
    pub log10_tau: f64,
    pub recall_on_split: f64,
    pub test_recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub k: usize,
    pub selections: Vec<Selection>,
    pub reference_cell: (f64, f64),
    pub reference_recall: Vec<(SplitKind, f64)>,
    pub provenance: serde_json::Value,
}

impl SweepResult {
    pub fn split(&self, kind: SplitKind) -> Option<&SplitSweep> {
        self.splits.iter().find(|s| s.split == kind)
    }

    pub fn cell(&self, alpha: f64, log10_tau: f64) -> Option<(usize, usize)> {
        let a = self.alpha_grid.iter().position(|&v| v == alpha)?;
        let t = self.log10_tau_grid.iter().position(|&v| v == log10_tau)?;
        Some((a, t))
    }

    /// Population variance of recall over alpha at one tau column.
    pub fn alpha_variance(&self, kind: SplitKind, tau_index: usize) -> Option<f64> {
        let s = self.split(kind)?;
        let col: Vec<f64> = s.recall.iter().map(|row| row[tau_index]).collect();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        Some(col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64)
    }

    pub fn summary(&self, provenance: serde_json::Value) -> SweepSummary {
        let test = self.split(SplitKind::Test);
        let selections = self
            .splits
            .iter()
            .map(|s| Selection {
                selected_on: s.split,
                alpha: self.alpha_grid[s.argmax.0],
                log10_tau: self.log10_tau_grid[s.argmax.1],
                recall_on_split: s.recall[s.argmax.0][s.argmax.1],
                test_recall: test.map(|t| t.recall[s.argmax.0][s.argmax.1]),
            })
            .collect();
        let (ra, rt) = self.cell(REFERENCE_CELL.0, REFERENCE_CELL.1).expect("reference cell is on the grid");
        SweepSummary {
            k: self.k,
            selections,
            reference_cell: REFERENCE_CELL,
            reference_recall: self.splits.iter().map(|s| (s.split, s.recall[ra][rt])).collect(),
            provenance,
        }
    }

    /// `alpha,log10_tau,split,recall@k` rows, alpha-major then tau then split.
    pub fn to_csv(&self) -> String {
        let mut out = format!("alpha,log10_tau,split,recall@{}\n", self.k);
        for (ai, a) in self.alpha_grid.iter().enumerate() {
            for (ti, t) in self.log10_tau_grid.iter().enumerate() {
                for s in &self.splits {
                    let _ = writeln!(out, "{a},{t},{},{}", s.split, s.recall[ai][ti]);
                }
            }
        }
        out
    }
}

/// Ranks of every item under `params`, for callers that need full orderings.
pub fn ensemble_ranks(s_id: &[f64], s_text: &[f64], params: EnsembleParams) -> Result<Vec<u32>, EnsembleError> {
    let s = ens_alpha_tau(s_id, s_text, params)?;
    Ok((0..s.len() as u32).map(|i| rank_of(&s, i)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SplitExample;
    use crate::retrieval::top_k;
    use ndarray::Array1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_scores(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn sum_examples() {
        assert_eq!(ens_sum(&[0.9, 0.1], &[0.1, 0.9]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(ens_sum(&[0.1], &[]), Err(EnsembleError::LengthMismatch(1, 0)));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_scores(&mut rng, 50);
        let summed = ens_sum(&s, &[0.0; 50]).unwrap();
        assert_eq!(top_k(&summed, 50).unwrap(), top_k(&s, 50).unwrap());
    }

    #[test]
    fn params_validation() {
        assert_eq!(EnsembleParams::new(1.5, 1.0), Err(EnsembleError::BadAlpha(1.5)));
        assert_eq!(EnsembleParams::new(0.5, 0.0), Err(EnsembleError::BadTau(0.0)));
        assert!(EnsembleParams::new(0.5, f64::INFINITY).is_ok());
    }

    #[test]
    fn log_domain_matches_raw_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let p = EnsembleParams::new(rng.random_range(0.0..=1.0), 10f64.powf(rng.random_range(-1.5..3.0))).unwrap();
            let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let raw = ens_alpha_tau_raw(a, b, p);
            let via_log = p.score(a, b).exp();
            assert!((raw - via_log).abs() <= 1e-12 * raw.max(1.0), "{raw} vs {via_log}");
        }
    }

    #[test]
    fn endpoint_alphas_follow_single_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (random_scores(&mut rng, 80), random_scores(&mut rng, 80));
        for tau in [1e-3, 0.05, 1.0, 1e3, 1e6, f64::INFINITY] {
            let one = ens_alpha_tau(&a, &b, EnsembleParams::new(1.0, tau).unwrap()).unwrap();
            let zero = ens_alpha_tau(&a, &b, EnsembleParams::new(0.0, tau).unwrap()).unwrap();
            assert_eq!(top_k(&one, 80).unwrap(), top_k(&a, 80).unwrap());
            assert_eq!(top_k(&zero, 80).unwrap(), top_k(&b, 80).unwrap());
        }
    }

    #[test]
    fn small_tau_picks_larger_single_score() {
        let p = EnsembleParams::new(0.5, 1e-3).unwrap();
        assert!(p.score(0.9, 0.1) > p.score(0.6, 0.59));
        let large = EnsembleParams::new(0.5, 1e6).unwrap();
        assert!(large.score(0.9, 0.1) < large.score(0.6, 0.59));
        assert!(p.score(1.0, 1.0).is_finite() && p.score(-1.0, -1.0).is_finite());
    }

    fn view(targets: &[u32]) -> SplitView {
        SplitView {
            kind: SplitKind::Test,
            examples: targets
                .iter()
                .enumerate()
                .map(|(u, &t)| SplitExample {
                    user: u as u32,
                    target_position: 1,
                    prefix: vec![0],
                    target: t,
                })
                .collect(),
        }
    }

    /// Brute-force recall: full ensemble scores, then the shared rank rule.
    fn brute_recall(s_id: &Array2<f64>, s_text: &Array2<f64>, targets: &[u32], p: EnsembleParams, k: usize) -> usize {
        (0..targets.len())
            .filter(|&r| {
                let s = ens_alpha_tau(s_id.row(r).as_slice().unwrap(), s_text.row(r).as_slice().unwrap(), p).unwrap();
                rank_of(&s, targets[r]) as usize <= k
            })
            .count()
    }

    #[test]
    fn pruned_sweep_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (users, items) = (60, 40);
        // quantized scores force ties and dominance
        let q = |rng: &mut ChaCha8Rng| (rng.random_range(-10i32..=10) as f64) / 10.0;
        let s_id = Array2::from_shape_fn((users, items), |_| q(&mut rng));
        let s_text = Array2::from_shape_fn((users, items), |_| q(&mut rng));
        let targets: Vec<u32> = (0..users).map(|_| rng.random_range(0..items as u32)).collect();
        let v = view(&targets);
        let k = 5;
        let ex = sweep_examples(&v, &s_id.view(), &s_text.view(), k);
        let alphas = [0.0, 0.3, 0.5, 1.0];
        let taus = [-2.0, 0.0, 2.0, 3.0];
        let r = sweep(&[(SplitKind::Test, ex)], &alphas, &taus, k).unwrap();
        for (ai, &a) in r.alpha_grid.iter().enumerate() {
            for (ti, &t) in r.log10_tau_grid.iter().enumerate() {
                let p = EnsembleParams::new(a, 10f64.powf(t)).unwrap();
                assert_eq!(r.splits[0].hits[ai][ti], brute_recall(&s_id, &s_text, &targets, p, k), "cell ({a}, {t})");
            }
        }
    }

    #[test]
    fn identical_models_give_alpha_constant_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = Array2::from_shape_fn((40, 30), |_| rng.random_range(-1.0..1.0));
        let targets: Vec<u32> = (0..40).map(|_| rng.random_range(0..30)).collect();
        let ex = sweep_examples(&view(&targets), &s.view(), &s.view(), 10);
        let r = sweep(&[(SplitKind::Test, ex)], &default_alpha_grid(), &default_log10_tau_grid(), 10).unwrap();
        for t in 0..r.log10_tau_grid.len() {
            let first = r.splits[0].hits[0][t];
            assert!(r.splits[0].hits.iter().all(|row| row[t] == first));
        }
        assert!(r.alpha_variance(SplitKind::Test, 0).unwrap() < 1e-30);
    }

    #[test]
    fn large_tau_cell_equals_sum_recall() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s_id = Array2::from_shape_fn((50, 100), |_| rng.random_range(-1.0..1.0));
        let s_text = Array2::from_shape_fn((50, 100), |_| rng.random_range(-1.0..1.0));
        let targets: Vec<u32> = (0..50).map(|_| rng.random_range(0..100)).collect();
        let v = view(&targets);
        let ex = sweep_examples(&v, &s_id.view(), &s_text.view(), 10);
        let r = sweep(&[(SplitKind::Test, ex)], &[0.5], &[6.0], 10).unwrap();
        let (a, t) = r.cell(0.5, 6.0).unwrap();
        let sum = ensemble_rank_table(&v, &s_id, &s_text, EnsembleParams::ENSREC).unwrap();
        let want = sum.ranks().filter(|&x| x <= 10).count();
        assert_eq!(r.splits[0].hits[a][t], want);
    }

    #[test]
    fn grids_and_outputs() {
        assert_eq!(default_alpha_grid().len(), 21);
        let taus = default_log10_tau_grid();
        assert_eq!((taus.len(), taus[0], taus[20]), (21, -2.0, 3.0));
        assert!(taus.contains(&2.0));
        let ex = vec![SweepExample::new(Array1::from(vec![0.5, 0.1]).view(), Array1::from(vec![0.2, 0.3]).view(), 0, 1)];
        let r = sweep(
            &[(SplitKind::Train, ex.clone()), (SplitKind::Validation, ex.clone()), (SplitKind::Test, ex)],
            &[0.0, 1.0],
            &[0.0],
            1,
        )
        .unwrap();
        assert_eq!(r.alpha_grid, vec![0.0, 0.5, 1.0]);
        assert_eq!(r.log10_tau_grid, vec![0.0, 2.0]);
        assert_eq!(r.to_csv().lines().count(), 1 + 3 * 2 * 3);
        // alpha 0 is text-only, where item 1 wins; the tie-break then prefers alpha 0.5
        assert_eq!(r.splits[0].hits[0], vec![0, 0]);
        assert_eq!(r.splits[0].argmax, (1, 0));
        let s = r.summary(serde_json::json!({"trial": 0}));
        assert_eq!(s.selections.len(), 3);
        assert_eq!(s.reference_cell, (0.5, 2.0));
        assert_eq!(sweep(&[], &[], &[1.0], 1), Err(EnsembleError::EmptyGrid));
    }
}
