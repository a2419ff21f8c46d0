//! Acceptance criteria 1-8. Each test prints one `criterion N: PASS|FAIL`
//! line before asserting, so `cargo test --test acceptance -- --nocapture`
//! gives a compact report.

use std::collections::BTreeSet;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ensrec::cli::{cmd_evaluate, cmd_train, load_config, parse_override, Run};
use ensrec::dataset::{leave_one_out_split, SplitKind, Splits};
use ensrec::ensemble::{
    default_alpha_grid, default_log10_tau_grid, ens_sum, ensemble_rank_table, sweep, sweep_examples, EnsembleParams,
    SweepResult,
};
use ensrec::metrics::{complementarity, correct_set, recall_at_k, universe, ComplementarityReport, CorrectSet};
use ensrec::model::{EmbedderConfig, EncoderConfig, ModelConfig, ProjectionKind, SrModel};
use ensrec::retrieval::{concat_ensemble_embeddings, rank_of, score_matrix, score_split, top_k, RankTable};
use ensrec::synth::{generate, BehaviorLabel, SynthConfig, SynthOutput};
use ensrec::trainer::{infonce_loss, train, EpochRecord, LossMode, TrainConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, pass: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

fn within(n: u32, start: Instant, budget: Duration) -> bool {
    let ok = start.elapsed() < budget;
    if !ok {
        println!("criterion {n}: runtime {:?} exceeds {budget:?}", start.elapsed());
    }
    ok
}

#[test]
fn criterion_1_metric_identities() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = 0;
    for _ in 0..1000 {
        let n_users = rng.random_range(1..=500u32);
        let u: BTreeSet<u32> = (0..n_users).collect();
        let pa = rng.random_range(0.0..1.0);
        let pb = rng.random_range(0.0..1.0);
        let pick = |rng: &mut ChaCha8Rng, p: f64| -> BTreeSet<u32> { u.iter().copied().filter(|_| rng.random_bool(p)).collect() };
        let a = CorrectSet { k: 10, users: pick(&mut rng, pa) };
        let b = CorrectSet { k: 10, users: pick(&mut rng, pb) };
        let r: ComplementarityReport = complementarity(&a, &b, &u).unwrap();
        // the identity in counts is inclusion-exclusion on the two sets
        let identity = r.intersection_size + r.union_size == r.size_a + r.size_b;
        let lower = r.union_size >= r.size_a.max(r.size_b);
        let upper = r.union_size <= r.universe_size.min(r.size_a + r.size_b);
        if !(identity && lower && upper && r.identity_holds() && r.bounds_hold()) {
            failures += 1;
        }
    }
    let pass = failures == 0 && within(1, start, Duration::from_secs(5));
    report(1, pass, format!("1000 random pairs, {failures} violations, {:?}", start.elapsed()));
    assert!(pass);
}

#[test]
fn criterion_2_concatenation_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (n_users, n_items, d) = (100, 10_000, 16);
    let mut g = |r, c| Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0f64));
    let (ui, ut, ii, it) = (g(n_users, d), g(n_users, d), g(n_items, d), g(n_items, d));
    let s_id = score_matrix(&ui.view(), &ii.view()).unwrap();
    let s_text = score_matrix(&ut.view(), &it.view()).unwrap();
    let sum = &s_id + &s_text;
    let (cu, ci) = concat_ensemble_embeddings(&ui.view(), &ut.view(), &ii.view(), &it.view()).unwrap();
    let dot = cu.dot(&ci.t());
    let mut mismatched = 0;
    let mut worst_cos: f64 = 0.0;
    for u in 0..n_users {
        let a = top_k(dot.row(u).as_slice().unwrap(), 100).unwrap();
        let b = top_k(sum.row(u).as_slice().unwrap(), 100).unwrap();
        mismatched += usize::from(a != b);
        let nu = cu.row(u).dot(&cu.row(u)).sqrt();
        for i in 0..n_items {
            let ni = ci.row(i).dot(&ci.row(i)).sqrt();
            let cos = dot[[u, i]] / (nu * ni);
            worst_cos = worst_cos.max((cos - sum[[u, i]] / 2.0).abs());
        }
    }
    let pass = mismatched == 0 && worst_cos < 1e-6 && within(2, start, Duration::from_secs(30));
    report(2, pass, format!("{mismatched}/100 top-100 mismatches, max |cos - sum/2| = {worst_cos:.2e}"));
    assert!(pass);
}

/// Items `i`, `j` are ordered consistently by `a` and `b` (strict orders only).
fn agree(a: &[f64], b: &[f64], i: usize, j: usize) -> bool {
    (a[i] > a[j]) == (b[i] > b[j]) && (a[i] < a[j]) == (b[i] < b[j])
}

#[test]
fn criterion_3_ensrec_limits() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let big = EnsembleParams::new(0.5, 1e6).unwrap();
    let small = EnsembleParams::new(0.5, 1e-3).unwrap();
    let (mut checked_sum, mut checked_max, mut bad) = (0usize, 0usize, 0usize);
    for _ in 0..1000 {
        let n = 50;
        let s_id: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s_text: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sum = ens_sum(&s_id, &s_text).unwrap();
        let mx: Vec<f64> = s_id.iter().zip(&s_text).map(|(a, b)| a.max(*b)).collect();
        let e_big: Vec<f64> = s_id.iter().zip(&s_text).map(|(&a, &b)| big.score(a, b)).collect();
        let e_small: Vec<f64> = s_id.iter().zip(&s_text).map(|(&a, &b)| small.score(a, b)).collect();
        for i in 0..n {
            for j in i + 1..n {
                if (sum[i] - sum[j]).abs() > 1e-5 {
                    checked_sum += 1;
                    bad += usize::from(!agree(&sum, &e_big, i, j));
                }
                if (mx[i] - mx[j]).abs() > 1e-2 {
                    checked_max += 1;
                    bad += usize::from(!agree(&mx, &e_small, i, j));
                }
            }
        }
    }
    let pass = bad == 0 && within(3, start, Duration::from_secs(10));
    report(3, pass, format!("{checked_sum} sum pairs, {checked_max} max pairs, {bad} disagreements"));
    assert!(pass);
}

fn fd_worst(mode: LossMode, seed: u64, temperature: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n, d) = (3, 7, 5);
    let c = if mode == LossMode::FullBatch { n } else { b };
    let users = Array2::from_shape_fn((b, d), |_| rng.random_range(-1.0..1.0));
    let items = Array2::from_shape_fn((c, d), |_| rng.random_range(-1.0..1.0));
    let targets: Vec<u32> = match mode {
        LossMode::FullBatch => (0..b).map(|_| rng.random_range(0..n as u32)).collect(),
        // a repeated target exercises the duplicate mask
        LossMode::InBatch => vec![2, 5, 2],
    };
    let f = |u: &Array2<f64>, e: &Array2<f64>| infonce_loss(&u.view(), &targets, &e.view(), mode, temperature).unwrap().loss;
    let out = infonce_loss(&users.view(), &targets, &items.view(), mode, temperature).unwrap();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for (which, base, grad) in [(0, &users, &out.d_users), (1, &items, &out.d_items)] {
        for idx in 0..base.len() {
            let (mut p, mut m) = (base.clone(), base.clone());
            p.as_slice_mut().unwrap()[idx] += h;
            m.as_slice_mut().unwrap()[idx] -= h;
            let fd = if which == 0 {
                (f(&p, &items) - f(&m, &items)) / (2.0 * h)
            } else {
                (f(&users, &p) - f(&users, &m)) / (2.0 * h)
            };
            let a = grad.as_slice().unwrap()[idx];
            worst = worst.max((fd - a).abs() / fd.abs().max(a.abs()).max(1e-3));
        }
    }
    worst
}

#[test]
fn criterion_4_infonce() {
    let start = Instant::now();
    let mut ln_err: f64 = 0.0;
    for n in [2usize, 4, 16] {
        let items = Array2::from_elem((n, 3), 0.7);
        let out = infonce_loss(&Array2::from_elem((1, 3), 1.3).view(), &[0], &items.view(), LossMode::FullBatch, 0.05).unwrap();
        ln_err = ln_err.max((out.loss - (n as f64).ln()).abs());
    }
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        for mode in [LossMode::FullBatch, LossMode::InBatch] {
            for t in [0.5, 0.05] {
                worst = worst.max(fd_worst(mode, seed, t));
            }
        }
    }

    // frozen text: not a parameter, untouched by an optimizer step
    let text = Array2::from_shape_fn((12, 6), |(i, j)| ((i * 7 + j * 3) % 11) as f32 / 11.0 - 0.5);
    let enc = EncoderConfig {
        n_layers: 1,
        d_model: 8,
        d_ff: 16,
        d_kv: 4,
        max_seq_len: 4,
        ..EncoderConfig::default()
    };
    let cfg = ModelConfig {
        embedder: EmbedderConfig::frozen_text(8, ProjectionKind::Mlp3),
        encoder: enc,
    };
    let model = SrModel::<f32>::new(cfg, 12, Some(&text), 0).unwrap();
    let no_text_param = model.params().iter().all(|(n, _)| !n.contains("text"));
    let seqs: Vec<Vec<u32>> = (0..12u32).map(|u| (0..6).map(|t| (u + t) % 12).collect()).collect();
    let ds = ensrec::dataset::InteractionDataset::from_sequences(
        (0..12).map(|i| format!("i{i}")).collect(),
        (0..12).map(|u| format!("u{u}")).collect(),
        seqs,
    )
    .unwrap();
    let splits = leave_one_out_split(&ds, 4);
    let out = train(model, &splits, TrainConfig { max_epochs: 2, ..TrainConfig::default() }).unwrap();
    let text_unchanged = out.final_state.model.text_matrix() == Some(&text);

    let pass = ln_err < 1e-10 && worst < 1e-4 && no_text_param && text_unchanged && within(4, start, Duration::from_secs(10));
    report(
        4,
        pass,
        format!("|loss - ln N| <= {ln_err:.1e}, max FD rel err {worst:.2e}, text frozen: {}", no_text_param && text_unchanged),
    );
    assert!(pass);
}

/// Full stable sort by (score desc, index asc).
fn oracle_order(scores: &[f64]) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..scores.len() as u32).collect();
    idx.sort_by(|&a, &b| scores[b as usize].total_cmp(&scores[a as usize]).then(a.cmp(&b)));
    idx
}

#[test]
fn criterion_5_ranking_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut bad = 0usize;
    let mut vectors = 0usize;
    for n in 1..=64usize {
        for v in 0..200 {
            // every other vector draws from a 4-value alphabet to force ties
            let scores: Vec<f64> = if v % 2 == 0 {
                (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
            } else {
                (0..n).map(|_| rng.random_range(0..4) as f64 * 0.25).collect()
            };
            vectors += 1;
            let order = oracle_order(&scores);
            for (pos, &item) in order.iter().enumerate() {
                bad += usize::from(rank_of(&scores, item) != pos as u32 + 1);
            }
            for k in 1..=n {
                bad += usize::from(top_k(&scores, k).unwrap() != order[..k]);
            }
        }
    }
    let pass = bad == 0 && within(5, start, Duration::from_secs(5));
    report(5, pass, format!("{vectors} vectors over catalogs 1..=64, {bad} mismatches"));
    assert!(pass);
}

struct Pinned {
    synth: SynthOutput,
    splits: Splits,
    id: SrModel<f32>,
    text: SrModel<f32>,
    id_reseeded: SrModel<f32>,
    id_history: Vec<EpochRecord>,
    elapsed: Duration,
}

/// The pinned experiment: synth defaults, desk-scale encoder, default
/// training config; ID and Text with seed 42, a second ID model with 43.
fn pinned() -> &'static Pinned {
    static PINNED: OnceLock<Pinned> = OnceLock::new();
    PINNED.get_or_init(|| {
        let start = Instant::now();
        let synth = generate(&SynthConfig::default()).unwrap();
        let splits = leave_one_out_split(&synth.dataset, EncoderConfig::default().max_seq_len);
        let n = synth.dataset.n_items();
        let text = synth.text.rows().clone();
        let fit = |embedder: EmbedderConfig, seed: u64| {
            let cfg = ModelConfig {
                embedder,
                encoder: EncoderConfig::default(),
            };
            let model = SrModel::new(cfg, n, Some(&text), seed).unwrap();
            train(model, &splits, TrainConfig { seed, ..TrainConfig::default() }).unwrap()
        };
        let d = EncoderConfig::default().d_model;
        let id = fit(EmbedderConfig::id_table(d), 42);
        let tx = fit(EmbedderConfig::frozen_text(d, ProjectionKind::Linear), 42);
        let id2 = fit(EmbedderConfig::id_table(d), 43);
        Pinned {
            id_history: id.history.clone(),
            id: id.best.model,
            text: tx.best.model,
            id_reseeded: id2.best.model,
            synth,
            splits,
            elapsed: start.elapsed(),
        }
    })
}

fn semantic_share(c: &CorrectSet, labels: &[BehaviorLabel]) -> f64 {
    let sem = c.users.iter().filter(|&&u| labels[u as usize] == BehaviorLabel::Semantic).count();
    sem as f64 / c.users.len() as f64
}

#[test]
fn criterion_6_pinned_complementarity() {
    let p = pinned();
    let test = &p.splits.test;
    let s_id = score_split(&p.id, test).unwrap();
    let s_text = score_split(&p.text, test).unwrap();
    let s_id2 = score_split(&p.id_reseeded, test).unwrap();
    let (t_id, t_text, t_id2) = (
        RankTable::from_scores(test, &s_id),
        RankTable::from_scores(test, &s_text),
        RankTable::from_scores(test, &s_id2),
    );
    let u = universe(&t_id);
    let (c_id, c_text, c_id2) = (
        correct_set(&t_id, 10).unwrap(),
        correct_set(&t_text, 10).unwrap(),
        correct_set(&t_id2, 10).unwrap(),
    );
    let it = complementarity(&c_id, &c_text, &u).unwrap();
    let ii = complementarity(&c_id, &c_id2, &u).unwrap();
    let ens = recall_at_k(&ensemble_rank_table(test, &s_id, &s_text, EnsembleParams::ENSREC).unwrap(), 10);
    let best = it.recall_a.max(it.recall_b);
    let enrichment = semantic_share(&c_text, &p.synth.labels) / semantic_share(&c_id, &p.synth.labels);

    let a = it.jaccard < ii.jaccard - 0.03;
    let b = it.genie >= best + 0.02;
    let c = ens >= best - 0.005 && ens <= it.genie;
    let d = enrichment >= 1.2;
    let time = p.elapsed < Duration::from_secs(600);
    println!(
        "  R@10 id {:.4} text {:.4} id' {:.4}; J(id,text) {:.4} J(id,id') {:.4}; genie {:.4}; ensrec {:.4}; enrichment {:.3}; {:?}",
        it.recall_a, it.recall_b, ii.recall_b, it.jaccard, ii.jaccard, it.genie, ens, enrichment, p.elapsed
    );
    let pass = a && b && c && d && time;
    report(6, pass, format!("(a) {a} (b) {b} (c) {c} (d) {d} runtime {time}"));
    assert!(pass);
}

#[test]
fn criterion_7_sweep_tau_sensitivity() {
    let p = pinned();
    let test = &p.splits.test;
    let s_id = score_split(&p.id, test).unwrap();
    let s_text = score_split(&p.text, test).unwrap();
    let ex = sweep_examples(test, &s_id.view(), &s_text.view(), 10);
    let r: SweepResult = sweep(&[(SplitKind::Test, ex)], &default_alpha_grid(), &default_log10_tau_grid(), 10).unwrap();
    let last = r.log10_tau_grid.len() - 1;
    let v_small = r.alpha_variance(SplitKind::Test, 0).unwrap();
    let v_large = r.alpha_variance(SplitKind::Test, last).unwrap();
    let pass = v_large >= 2.0 * v_small;
    report(
        7,
        pass,
        format!(
            "var over alpha at log10 tau {} = {v_large:.3e}, at {} = {v_small:.3e}, ratio {:.2}",
            r.log10_tau_grid[last],
            r.log10_tau_grid[0],
            v_large / v_small
        ),
    );
    assert!(pass);
}

#[test]
fn pinned_training_sanity() {
    let p = pinned();
    let h = &p.id_history;
    let rises = h.windows(2).take(4).filter(|w| w[1].loss > w[0].loss).count();
    let chance = 10.0 / p.synth.dataset.n_items() as f64;
    let best_val = h.iter().filter_map(|r| r.val_recall_at_10).fold(0.0, f64::max);
    println!("  first 5 losses {:?}; best val R@10 {best_val:.4} vs 5x chance {:.4}", h.iter().take(5).map(|r| r.loss).collect::<Vec<_>>(), 5.0 * chance);
    assert!(rises <= 1);
    assert!(best_val >= 5.0 * chance);
}

fn cli_round(root: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let overrides: Vec<_> = [
        "dataset.synth.n_users=150",
        "dataset.synth.n_items=40",
        "dataset.synth.n_clusters=5",
        "trials=2",
        "train.max_epochs=3",
        "output_dir=\"det\"",
    ]
    .iter()
    .map(|s| parse_override(s).unwrap())
    .collect();
    let cfg = load_config(None, &overrides).unwrap();
    let run = Run::open(cfg, root).unwrap();
    cmd_train(&run, None, false).unwrap();
    cmd_evaluate(&run, true).unwrap();
    ["metrics.json", "metrics.txt", "pairs.json", "pairs.txt", "train.json"]
        .iter()
        .map(|f| (f.to_string(), std::fs::read(run.reports_dir().join(f)).unwrap()))
        .collect()
}

#[test]
fn criterion_8_determinism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = cli_round(a.path());
    let second = cli_round(b.path());
    let differing: Vec<&str> = first.iter().zip(&second).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
    let pass = differing.is_empty();
    report(8, pass, format!("{} report files compared, differing: {differing:?}", first.len()));
    assert!(pass);
}

#[test]
fn ensemble_of_pinned_models_beats_both_members() {
    let p = pinned();
    let test = &p.splits.test;
    let s_id = score_split(&p.id, test).unwrap();
    let s_text = score_split(&p.text, test).unwrap();
    let r = |s: &Array2<f64>| recall_at_k(&RankTable::from_scores(test, s), 10);
    let ens = recall_at_k(&ensemble_rank_table(test, &s_id, &s_text, EnsembleParams::ENSREC).unwrap(), 10);
    assert!(ens > r(&s_id) && ens > r(&s_text), "ensrec {ens} vs {} / {}", r(&s_id), r(&s_text));
    // the sum ranking through per-row ens_sum agrees with the table
    let row = 0;
    let sum = ens_sum(s_id.row(row).as_slice().unwrap(), s_text.row(row).as_slice().unwrap()).unwrap();
    let target = test.examples[row].target;
    let table = ensemble_rank_table(test, &s_id, &s_text, EnsembleParams::ENSREC).unwrap();
    assert_eq!(table.entries[row].rank, rank_of(&sum, target));
}
