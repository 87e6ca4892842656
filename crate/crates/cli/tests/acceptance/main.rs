//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! per criterion and exits non-zero if any failed.
//!
//! `cargo test -p fewshot-cli --test acceptance -- 3 5` runs only criteria 3
//! and 5.

mod dd;
mod oracle;

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use fewshot_core::baselines::{bayesian_ridge_fit, crossval_eval, least_squares_fit, Baseline, CvScheme};
use fewshot_core::data::{
    generate_synthetic, Dataset, FeatureSchema, FeatureStats, SubjectRecord, SynthConfig,
};
use fewshot_core::episode::{build_episodes, circular_shift_folds, split_train_test, Episode, SplitConfig, TestOrder};
use fewshot_core::experiment::{run_experiment, ExperimentConfig, TrainStrategy};
use fewshot_core::head::{mse, mse_loss};
use fewshot_core::lstm::{lstm_step, Gate, LstmState, LstmWeights, TapeState};
use fewshot_core::shapley::{shapley_impact, shapley_point};
use fewshot_core::error::ModelError;
use fewshot_core::tensor::{grad_check, Tape, Tensor, Var};
use fewshot_core::trainer::{evaluate, forward_episode, train, BoundModel, CvMode, ModelParams, TrainConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use dd::Dd;
use oracle::{scalar_lstm_step, EpisodeData, FlatModel};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Criterion = fn() -> Outcome;

const CRITERIA: [(&str, Criterion); 11] = [
    ("gradient correctness", gradient_correctness),
    ("lstm step oracle", lstm_step_oracle),
    ("episode and fold invariants", episode_invariants),
    ("overfit sanity", overfit_sanity),
    ("episodic vs traditional training", episodic_vs_traditional),
    ("cross-validation mode ordering", cv_mode_ordering),
    ("proposed method vs least squares", proposed_vs_least_squares),
    ("baseline oracle", baseline_oracle),
    ("shapley suite", shapley_suite),
    ("k sweep interior optimum", k_sweep_interior),
    ("end-to-end runtime and determinism", end_to_end),
];

fn main() {
    let only: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, run)) in CRITERIA.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let out = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        ran += 1;
        if !out.pass {
            failed += 1;
        }
        println!(
            "criterion {n:>2} {}: {name}: {} [{:.1}s]",
            if out.pass { "PASS" } else { "FAIL" },
            out.detail,
            t0.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn record(subject_id: u32, test_id: u32, features: Vec<f64>, score: f64) -> SubjectRecord {
    SubjectRecord {
        subject_id,
        test_id,
        features,
        score,
    }
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1e-8)
}

// ---------------------------------------------------------------- 1

fn random_batch(rng: &mut ChaCha8Rng, episodes: usize, k: usize, d: usize) -> Vec<Episode> {
    (0..episodes)
        .map(|e| Episode {
            id: e,
            test_id: 1,
            shift: 0,
            members: (0..k)
                .map(|m| {
                    let x = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                    record((e * k + m) as u32 + 1, 1, x, rng.gen_range(0.0..1.0))
                })
                .collect(),
        })
        .collect()
}

fn as_data(batch: &[Episode]) -> Vec<EpisodeData> {
    batch
        .iter()
        .map(|e| EpisodeData {
            features: e.members.iter().map(|m| m.features.clone()).collect(),
            labels: e.members.iter().map(|m| m.score).collect(),
        })
        .collect()
}

fn tape_loss(tape: &mut Tape, model: &BoundModel, batch: &[Episode]) -> Result<Var, ModelError> {
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for e in batch {
        let (p, y) = forward_episode(tape, model, e)?;
        preds.push(p);
        labels.push(y);
    }
    mse_loss(tape, &preds, &labels)
}

/// Tape gradients against central differences evaluated in double-double
/// precision, so that the finite-difference side carries no f64 round-off.
fn gradient_correctness() -> Outcome {
    const D: usize = 5;
    const H: usize = 4;
    const K: usize = 3;
    const L: usize = 2;
    const EPS: f64 = 1e-6;
    if let Err(e) = dd::self_check() {
        return Outcome::new(false, format!("double-double self check failed: {e}"));
    }
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    let mut worst_f64: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..10u64 {
        let params = ModelParams::init(D, H, L, 1000 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
        let mut flat: Vec<Vec<Dd>> = tensors.iter().map(|t| t.data().iter().map(|&v| Dd::new(v)).collect()).collect();

        // keep every ReLU pre-activation clear of its kink
        let mut draws = 0;
        let (batch, data) = loop {
            draws += 1;
            let batch = random_batch(&mut rng, 2, K, D);
            let data = as_data(&batch);
            let mut margins = Vec::new();
            let model = FlatModel {
                tensors: &flat,
                input_dim: D,
                hidden: H,
            };
            model.batch_loss(&data, &mut margins);
            if margins.iter().all(|&m| m >= 1e-3) || draws > 200 {
                break (batch, data);
            }
        };
        if draws > 200 {
            return Outcome::new(false, format!("seed {seed}: no draw kept ReLU margins above 1e-3"));
        }

        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let loss = match tape_loss(&mut tape, &bound, &batch) {
            Ok(l) => l,
            Err(e) => return Outcome::new(false, format!("forward failed: {e}")),
        };
        let grads = tape.backward(loss).expect("backward");
        for (ti, t) in tensors.iter().enumerate() {
            let analytic = grads.get_or_zeros(bound.leaves()[ti], t);
            for ei in 0..t.len() {
                let orig = flat[ti][ei];
                flat[ti][ei] = orig + Dd::new(EPS);
                let plus = FlatModel {
                    tensors: &flat,
                    input_dim: D,
                    hidden: H,
                }
                .batch_loss(&data, &mut Vec::new());
                flat[ti][ei] = orig - Dd::new(EPS);
                let minus = FlatModel {
                    tensors: &flat,
                    input_dim: D,
                    hidden: H,
                }
                .batch_loss(&data, &mut Vec::new());
                flat[ti][ei] = orig;
                let numeric = ((plus - minus) / Dd::new(2.0 * EPS)).to_f64();
                worst = worst.max(rel_error(analytic.data()[ei], numeric));
                checked += 1;
            }
        }

        let check = grad_check(
            |tape: &mut Tape, vars: &[Var]| tape_loss(tape, &BoundModel::from_vars(vars, H), &batch),
            &tensors,
            EPS,
        )
        .expect("grad_check");
        worst_f64 = worst_f64.max(check.max_rel_error);
    }
    let secs = t0.elapsed().as_secs_f64();
    Outcome::new(
        worst < 1e-4 && secs < 5.0,
        format!(
            "max rel error {worst:.2e} over {checked} entries in {secs:.2}s (plain f64 differences: {worst_f64:.2e})"
        ),
    )
}

// ---------------------------------------------------------------- 2

fn one_d_lstm(gates: [(f64, f64, f64); 4]) -> LstmWeights {
    let gate = |(wh, wx, b): (f64, f64, f64)| Gate {
        weight: Tensor::matrix(1, 2, vec![wh, wx]).unwrap(),
        bias: Tensor::vector(vec![b]),
    };
    LstmWeights::new(gate(gates[0]), gate(gates[1]), gate(gates[2]), gate(gates[3])).unwrap()
}

fn tape_step(w: &LstmWeights, cell: f64, hidden: f64, x: f64) -> (f64, f64) {
    let mut tape = Tape::new();
    let bound = w.bind(&mut tape);
    let prev = TapeState {
        cell: tape.leaf(Tensor::vector(vec![cell])),
        hidden: tape.leaf(Tensor::vector(vec![hidden])),
    };
    let xv = tape.leaf(Tensor::vector(vec![x]));
    let next = lstm_step(&mut tape, &bound, prev, xv).unwrap();
    (
        tape.value(next.cell).unwrap().data()[0],
        tape.value(next.hidden).unwrap().data()[0],
    )
}

fn lstm_step_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut g = || (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0));
        let gates = [g(), g(), g(), g()];
        let (c0, h0, x) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-3.0..3.0));
        let w = one_d_lstm(gates);
        let (c_ref, h_ref) = scalar_lstm_step(gates, c0, h0, x);
        let plain = w
            .step(
                &LstmState {
                    cell: vec![c0],
                    hidden: vec![h0],
                },
                &[x],
            )
            .unwrap();
        let (c_tape, h_tape) = tape_step(&w, c0, h0, x);
        for v in [
            plain.cell[0] - c_ref,
            plain.hidden[0] - h_ref,
            c_tape - c_ref,
            h_tape - h_ref,
        ] {
            worst = worst.max(v.abs());
        }
    }

    let unit = (0.0, 1.0, 0.0);
    let w = one_d_lstm([unit; 4]);
    let (_, hand) = tape_step(&w, 0.0, 0.0, 1.0);
    let s = oracle::sigmoid(1.0);
    let expected = s * (s * 1f64.tanh()).tanh();
    let hand_err = (hand - expected).abs();
    let quoted = (hand - 0.36963).abs();
    Outcome::new(
        worst <= 1e-12 && hand_err <= 1e-12 && quoted < 5e-5,
        format!("max |diff| {worst:.1e} on 100 cases; hand case {hand:.7} (|diff| {hand_err:.1e})"),
    )
}

// ---------------------------------------------------------------- 3

fn small_dataset(n: usize, tests: u32, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = Dataset::new(FeatureSchema::with_dim(19).unwrap(), "fixture", true);
    for s in 1..=n as u32 {
        for t in 1..=tests {
            let x = (0..19).map(|_| rng.sample(StandardNormal)).collect();
            ds.insert(record(s, t, x, rng.gen_range(0.0..1.0)));
        }
    }
    ds
}

fn check_episodes(episodes: &[Episode], pool: &[u32], k: usize, tests: usize) -> Result<(), String> {
    let allowed: BTreeSet<u32> = pool.iter().copied().collect();
    if episodes.len() != tests * (pool.len() / k) {
        return Err(format!("{} episodes, expected {}", episodes.len(), tests * (pool.len() / k)));
    }
    let mut seen: BTreeSet<(u32, u32)> = BTreeSet::new();
    for e in episodes {
        if e.k() != k {
            return Err(format!("episode {} has {} members", e.id, e.k()));
        }
        for m in &e.members {
            if m.test_id != e.test_id {
                return Err(format!("episode {} mixes tests", e.id));
            }
            if !allowed.contains(&m.subject_id) {
                return Err(format!("subject {} leaked into episode {}", m.subject_id, e.id));
            }
            if !seen.insert((e.test_id, m.subject_id)) {
                return Err(format!("subject {} reused in test {}", m.subject_id, e.test_id));
            }
        }
    }
    Ok(())
}

fn check_folds(e: &Episode) -> Result<(), String> {
    let k = e.k();
    let folds = circular_shift_folds(e);
    if folds.len() != k {
        return Err(format!("{} folds for k={k}", folds.len()));
    }
    let targets: BTreeSet<u32> = folds.iter().map(|f| f.target().subject_id).collect();
    let members: BTreeSet<u32> = e.subject_ids().into_iter().collect();
    if targets != members {
        return Err("fold targets do not cover the episode".into());
    }
    if folds[0].members != e.members {
        return Err("shift 0 changed the episode".into());
    }
    for (t, f) in folds.iter().enumerate() {
        // k further shifts bring every fold back to itself
        let again = circular_shift_folds(f);
        let mut back = f.members.clone();
        back.rotate_left(k - t);
        if back != e.members || again[0].members != f.members {
            return Err(format!("fold {t} is not a rotation of the episode"));
        }
        let mut full = f.members.clone();
        full.rotate_left(k);
        if full != f.members {
            return Err("k-shift identity broken".into());
        }
    }
    Ok(())
}

fn episode_invariants() -> Outcome {
    let tests = 3;
    let mut cases = 0;
    for n in 5..=20usize {
        let ds = small_dataset(n, tests as u32, n as u64);
        for k in 1..=5usize {
            for (ri, r) in [0.5, 0.7, 0.9].into_iter().enumerate() {
                for seed in 0..3u64 {
                    cases += 1;
                    let cfg = SplitConfig {
                        r,
                        k,
                        seed: seed * 31 + ri as u64,
                    };
                    let fail = |msg: String| Outcome::new(false, format!("N={n} k={k} r={r} seed={seed}: {msg}"));
                    let n_train = (r * n as f64).floor() as usize;
                    let (train_ids, test_ids) = match split_train_test(&ds.subject_ids(), &cfg) {
                        Ok(s) => s,
                        Err(_) if n_train < k => continue,
                        Err(e) => return fail(e.to_string()),
                    };
                    let a: BTreeSet<u32> = train_ids.iter().copied().collect();
                    let b: BTreeSet<u32> = test_ids.iter().copied().collect();
                    if a.len() != n_train || !a.is_disjoint(&b) || a.len() + b.len() != n {
                        return fail("split is not a partition".into());
                    }
                    for (pool, pseed) in [(&train_ids, seed + 100), (&test_ids, seed + 200)] {
                        if pool.len() < k {
                            continue;
                        }
                        for order in [TestOrder::Global, TestOrder::PerSubject] {
                            let eps = match build_episodes(pool, &ds, k, pseed, order) {
                                Ok(e) => e,
                                Err(e) => return fail(e.to_string()),
                            };
                            if order == TestOrder::Global {
                                if let Err(m) = check_episodes(&eps, pool, k, tests) {
                                    return fail(m);
                                }
                            } else if eps.len() != tests * (pool.len() / k) {
                                return fail("per-subject episode count".into());
                            }
                            for e in &eps {
                                if let Err(m) = check_folds(e) {
                                    return fail(m);
                                }
                            }
                        }
                    }
                    // standardisation statistics must not see the test subjects
                    let mut poisoned = ds.clone();
                    for &s in &test_ids {
                        for t in 1..=tests as u32 {
                            let mut rec = ds.get(s, t).unwrap().clone();
                            rec.features.iter_mut().for_each(|v| *v = 1e6);
                            poisoned.insert(rec);
                        }
                    }
                    if FeatureStats::fit(&ds, &train_ids) != FeatureStats::fit(&poisoned, &train_ids) {
                        return fail("feature statistics depend on test subjects".into());
                    }
                }
            }
        }
    }
    Outcome::new(true, format!("{cases} split/episode configurations checked"))
}

// ---------------------------------------------------------------- 4

fn overfit_sanity() -> Outcome {
    let t0 = Instant::now();
    let ds = generate_synthetic(&SynthConfig {
        subjects: 24,
        tests: 1,
        features: 19,
        seed: 4,
        ..SynthConfig::default()
    })
    .unwrap();
    let subjects = ds.subject_ids();
    let stats = FeatureStats::fit(&ds, &subjects);
    let ds = fewshot_core::data::standardize_features(&ds, &stats).0;
    let episodes = build_episodes(&subjects, &ds, 3, 4, TestOrder::Global).unwrap();
    let cfg = TrainConfig {
        epochs: 2000,
        batch: 8,
        cv_mode: CvMode::Na,
        ..TrainConfig::default()
    };
    let (model, _) = match train(ModelParams::init(19, 8, 4, 4), &episodes, &cfg) {
        Ok(m) => m,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    let preds: Vec<f64> = episodes.iter().map(|e| model.predict(e).unwrap()).collect();
    let labels: Vec<f64> = episodes.iter().map(|e| e.target().score).collect();
    let err = mse(&preds, &labels).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    Outcome::new(
        episodes.len() == 8 && err < 1e-3 && secs < 60.0,
        format!("{} episodes, training MSE {err:.2e} in {secs:.1}s", episodes.len()),
    )
}

// ---------------------------------------------------------------- 5, 6, 7

const PINNED_SEEDS: [u64; 3] = [7, 8, 9];

fn benchmark() -> Dataset {
    generate_synthetic(&SynthConfig::default()).unwrap()
}

fn config(seed: u64, strategy: TrainStrategy, cv_mode: CvMode) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed,
        strategy,
        ..ExperimentConfig::default()
    };
    cfg.train.cv_mode = cv_mode;
    cfg
}

struct SeedRun {
    seed: u64,
    et_train: f64,
    et_test: f64,
    semi_test: f64,
    na_test: f64,
    tt_train: f64,
    tt_test: f64,
    ls_4fold: f64,
}

fn seed_runs() -> &'static [SeedRun] {
    static RUNS: std::sync::OnceLock<Vec<SeedRun>> = std::sync::OnceLock::new();
    RUNS.get_or_init(|| {
        let ds = benchmark();
        PINNED_SEEDS
            .iter()
            .map(|&seed| {
                let full = run_experiment(&ds, &config(seed, TrainStrategy::Episodic, CvMode::Full)).unwrap();
                // Semi trains exactly like Full and only evaluates targets
                let semi = evaluate(&full.model, &full.test_episodes, CvMode::Semi).unwrap();
                let na = run_experiment(&ds, &config(seed, TrainStrategy::Episodic, CvMode::Na)).unwrap();
                let tt = run_experiment(&ds, &config(seed, TrainStrategy::Traditional, CvMode::Full)).unwrap();
                let ls = crossval_eval(Baseline::LeastSquares, &ds, CvScheme::KFold(4), seed).unwrap();
                SeedRun {
                    seed,
                    et_train: full.report.train.metrics.mae,
                    et_test: full.test.metrics.mae,
                    semi_test: semi.metrics.mae,
                    na_test: na.test.metrics.mae,
                    tt_train: tt.report.train.metrics.mae,
                    tt_test: tt.test.metrics.mae,
                    ls_4fold: ls.metrics.mae,
                }
            })
            .collect()
    })
}

fn episodic_vs_traditional() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in seed_runs() {
        pass &= r.et_test < r.tt_test && r.tt_train < r.et_train;
        parts.push(format!(
            "seed {}: test ET {:.2} < TT {:.2}, train TT {:.2} < ET {:.2}",
            r.seed, r.et_test, r.tt_test, r.tt_train, r.et_train
        ));
    }
    Outcome::new(pass, parts.join("; "))
}

fn cv_mode_ordering() -> Outcome {
    const SLACK: f64 = 0.25;
    let mut pass = true;
    let mut parts = Vec::new();
    for r in seed_runs() {
        pass &= r.et_test <= r.semi_test + SLACK && r.semi_test <= r.na_test + SLACK;
        parts.push(format!(
            "seed {}: Full {:.2}, Semi {:.2}, N/A {:.2}",
            r.seed, r.et_test, r.semi_test, r.na_test
        ));
    }
    Outcome::new(pass, parts.join("; "))
}

fn noiseless_linear_ls() -> f64 {
    let ds = generate_synthetic(&SynthConfig {
        noise: 0.0,
        nonlinearity: 0.0,
        ..SynthConfig::default()
    })
    .unwrap();
    crossval_eval(Baseline::LeastSquares, &ds, CvScheme::KFold(4), 7)
        .unwrap()
        .metrics
        .mae
}

fn proposed_vs_least_squares() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in seed_runs() {
        pass &= r.et_test < r.ls_4fold;
        parts.push(format!("seed {}: proposed {:.2} < LS {:.2}", r.seed, r.et_test, r.ls_4fold));
    }
    let exact = noiseless_linear_ls();
    pass &= exact < 0.5;
    parts.push(format!("noiseless linear LS {exact:.2e}"));
    Outcome::new(pass, parts.join("; "))
}

// ---------------------------------------------------------------- 8

fn baseline_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p = rng.gen_range(1..=8usize);
        let n = rng.gen_range(p + 3..=40usize);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..p)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .chain(std::iter::once(1.0))
                    .collect()
            })
            .collect();
        let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * 3.0).collect();
        let fit = least_squares_fit(&x, &y).unwrap();
        let a = DMatrix::from_fn(n, p + 1, |i, j| x[i][j]);
        let reference = a.pseudo_inverse(1e-12).unwrap() * DVector::from_column_slice(&y);
        for (c, r) in fit.iter().zip(reference.iter()) {
            worst = worst.max((c - r).abs() / r.abs().max(1.0));
        }
    }

    let (n, p) = (2000, 5);
    let coef = [1.5, -2.0, 0.25, 3.0, -0.75];
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let y: Vec<f64> = x.iter().map(|r| 0.7 + r.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>()).collect();
    let br = bayesian_ridge_fit(&x, &y, 300, 1e-8).unwrap();
    let with_one: Vec<Vec<f64>> = x.iter().map(|r| r.iter().copied().chain(std::iter::once(1.0)).collect()).collect();
    let ls = least_squares_fit(&with_one, &y).unwrap();
    let br_gap = br
        .coef
        .iter()
        .chain(std::iter::once(&br.intercept))
        .zip(&ls)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Outcome::new(
        worst <= 1e-8 && br_gap <= 1e-4,
        format!("LS vs pseudo-inverse {worst:.1e} over 100 systems; Bayesian ridge vs LS {br_gap:.1e}"),
    )
}

// ---------------------------------------------------------------- 9

fn shapley_suite() -> Outcome {
    const SAMPLES: usize = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let d = 6;
    let background: Vec<Vec<f64>> = (0..60)
        .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let points: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal) * 1.5).collect())
        .collect();

    let nonlinear = |x: &[f64]| x[0].sin() * x[1] + x[2] * x[2] + (0.3 * x[3]).exp() + x[4] * x[5].tanh();
    let bg_mean_f = background.iter().map(|b| nonlinear(b)).sum::<f64>() / background.len() as f64;
    let mut efficiency: f64 = 0.0;
    for (i, x) in points.iter().enumerate() {
        let phi = shapley_point(&nonlinear, x, &background, SAMPLES, i as u64);
        let gap = nonlinear(x) - bg_mean_f;
        efficiency = efficiency.max((phi.iter().sum::<f64>() - gap).abs() / gap.abs());
    }

    let coef = [2.0, -1.0, 0.5, 0.0, 3.0, -0.25];
    let linear = |x: &[f64]| 0.4 + x.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>();
    let report = shapley_impact(&linear, &points, &background, SAMPLES, 11);
    let n_bg = background.len() as f64;
    let mut worst_sigma: f64 = 0.0;
    for (x, phi) in points.iter().zip(&report.values) {
        for j in 0..d {
            let mean = background.iter().map(|b| b[j]).sum::<f64>() / n_bg;
            let sd = (background.iter().map(|b| (b[j] - mean).powi(2)).sum::<f64>() / n_bg).sqrt();
            let exact = coef[j] * (x[j] - mean);
            let sigma = coef[j].abs() * sd / (SAMPLES as f64).sqrt();
            let dev = (phi[j] - exact).abs();
            if sigma == 0.0 {
                if dev > 1e-12 {
                    worst_sigma = f64::INFINITY;
                }
            } else {
                worst_sigma = worst_sigma.max(dev / sigma);
            }
        }
    }

    let constant = |_: &[f64]| 2.5;
    let zeros = shapley_impact(&constant, &points, &background, 200, 3);
    let all_zero = zeros.values.iter().flatten().all(|&v| v == 0.0);

    Outcome::new(
        efficiency <= 0.05 && worst_sigma <= 3.0 && all_zero,
        format!(
            "efficiency residual {:.2}%; linear recovery within {worst_sigma:.2} sigma; constant model all zero: {all_zero}",
            efficiency * 100.0
        ),
    )
}

// ---------------------------------------------------------------- 10, 11

fn fewshot(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fewshot"))
        .args(args)
        .env_remove("FEWSHOT_OUT_DIR")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!(
            "fewshot {} exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn data_rows(path: &Path) -> Vec<csv::StringRecord> {
    let text = std::fs::read_to_string(path).unwrap();
    let body: String = text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    csv::Reader::from_reader(body.as_bytes())
        .records()
        .map(|r| r.unwrap())
        .collect()
}

fn k_sweep_interior() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let data = dir.path().join("synthetic.csv");
    let result = fewshot(&["synth", "--group-block", "3", "--out-dir", out]).and_then(|_| {
        fewshot(&[
            "sweep-k",
            "--data",
            data.to_str().unwrap(),
            "--r",
            "0.5",
            "--epochs",
            "50",
            "--k-values",
            "1,2,3,5,8,12,17,34",
            "--out-dir",
            out,
        ])
    });
    if let Err(e) = result {
        return Outcome::new(false, e);
    }
    let rows = data_rows(&dir.path().join("sweep_k.csv"));
    let ok: Vec<(usize, f64)> = rows
        .iter()
        .filter(|r| &r[1] == "ok")
        .map(|r| (r[0].parse().unwrap(), r[4].parse().unwrap()))
        .collect();
    let k_max = ok.iter().map(|&(k, _)| k).max().unwrap_or(0);
    let Some(&(best_k, best)) = ok.iter().min_by(|a, b| a.1.total_cmp(&b.1)) else {
        return Outcome::new(false, "no successful k");
    };
    let curve: Vec<String> = ok.iter().map(|(k, m)| format!("{k}:{m:.2}")).collect();
    Outcome::new(
        best_k > 1 && best_k < k_max,
        format!("best k={best_k} (test MAE {best:.2}), k_max={k_max}; {}", curve.join(" ")),
    )
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("synthetic.csv");
    if let Err(e) = fewshot(&["synth", "--out-dir", root.to_str().unwrap()]) {
        return Outcome::new(false, e);
    }
    let mut times = Vec::new();
    let mut metrics = Vec::new();
    for run in ["a", "b"] {
        let out = root.join(run);
        let t0 = Instant::now();
        if let Err(e) = fewshot(&[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--k",
            "3",
            "--epochs",
            "200",
            "--cv-mode",
            "full",
            "--out-dir",
            out.to_str().unwrap(),
        ]) {
            return Outcome::new(false, e);
        }
        times.push(t0.elapsed().as_secs_f64());
        metrics.push(std::fs::read(out.join("metrics.json")).unwrap());
    }
    let manifest = |run: &str| {
        let text = std::fs::read_to_string(root.join(run).join("train-manifest.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        (v["run_id"].clone(), v["config"].clone(), v["seeds"].clone())
    };
    let same_manifest = manifest("a") == manifest("b");
    let identical = metrics[0] == metrics[1];
    Outcome::new(
        times.iter().all(|&t| t < 300.0) && same_manifest && identical,
        format!(
            "runs took {:.1}s and {:.1}s; manifests match: {same_manifest}; metrics identical: {identical}",
            times[0], times[1]
        ),
    )
}
