//! Acceptance suite: one line per criterion, non-zero exit if a gated criterion fails.
//!
//! Criterion 6 is a direction check between two trained models. Its result is
//! printed but does not affect the exit status.

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;
use tcf_core::autodiff::{ParamGroup, Tape, Tensor};
use tcf_core::corrupt::{apply_records, corrupt_at, corrupt_step, corrupt_trajectory, CorruptionConfig};
use tcf_core::data::{fit_stats, mask_to_bits, treatment_mask, Dataset, TimeStep, Trajectory};
use tcf_core::effects::{cate_between, estimate_interaction, evaluate, EvalOptions, MetricsReport};
use tcf_core::model::Forecaster;
use tcf_core::net::{Batch, ModelConfig, TcfNet};
use tcf_core::pipeline::{fit, ExperimentConfig};
use tcf_core::seeds::{self, Stream};
use tcf_core::sim::{ground_truth_interaction, selection_bias, simulate, SimModel, Simulation, SyntheticConfig, TumourParams};
use tcf_core::train::objective::stream_classification;
use tcf_core::train::{check_objective_gradients, ObjectiveConfig};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_traj(id: &str, len: usize, rng: &mut ChaCha8Rng) -> Trajectory {
    Trajectory {
        entity_id: id.into(),
        steps: (0..len)
            .map(|_| TimeStep {
                x: vec![rng.random_range(-1.5..1.5)],
                v: vec![vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]],
                a: vec![rng.random_range(0..2), rng.random_range(0..2)],
                y: rng.random_range(-1.5..1.5),
            })
            .collect(),
    }
}

fn small_model() -> ModelConfig {
    ModelConfig { d_r: 8, d_z: 3, tau_max: 3, outcome_hidden: 6, ..Default::default() }
}

fn random_batch(seed: u64, n: usize) -> (TcfNet, Batch, ObjectiveConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trajs: Vec<Trajectory> = (0..n).map(|i| random_traj(&format!("e{i}"), 4, &mut rng)).collect();
    let cf: Vec<Trajectory> = trajs
        .iter()
        .map(|t| corrupt_trajectory(t, CorruptionConfig::default(), &mut rng).unwrap().0)
        .collect();
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    let cf_refs: Vec<&Trajectory> = cf.iter().collect();
    let net = TcfNet::new(small_model(), seed).unwrap();
    let batch = Batch::new(&refs, Some(&cf_refs), &net.config);
    let cfg = ObjectiveConfig {
        lambda1: rng.random_range(0.1..1.0),
        lambda2: rng.random_range(0.1..1.0),
        invert_ratio: rng.random_bool(0.5),
        mask_inactive: rng.random_bool(0.5),
        distance_floor: 1e-9,
    };
    (net, batch, cfg)
}

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let (net, batch, cfg) = random_batch(7000 + trial, 2 + (trial as usize % 3));
        let report = check_objective_gradients(&net, &batch, &cfg, 1e-6).map_err(|e| e.to_string())?;
        worst = worst.max(report.max_rel_error);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst < 1e-4 && secs < 300.0, format!("20 batches, max rel err {worst:.2e}, {secs:.1}s"))
}

fn c2_reversal() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tape = Tape::new();
    let values: Vec<f64> = (0..24).map(|_| rng.random_range(-3.0..3.0)).collect();
    let x = tape.param(Tensor::matrix(4, 6, values));
    let y = tape.gradient_reversal(x, 0.7).map_err(|e| e.to_string())?;
    let identical = tape.value(x).values().iter().zip(tape.value(y).values()).all(|(a, b)| a.to_bits() == b.to_bits());
    if !identical {
        return Err("forward pass altered values".into());
    }

    let (net, batch, _) = random_batch(55, 3);
    let lambda1 = 0.37;
    let grads = |reversed: bool| {
        let mut tape = Tape::new();
        let b = net.store.bind(&mut tape);
        let inputs: Vec<_> = batch.factual.inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let tops = net.build_encoder(&mut tape, &b, &inputs).unwrap();
        let reps = tape.concat_rows(&tops).unwrap();
        let la = stream_classification(&net, &mut tape, &b, reps, &batch.factual.a, &batch.step_mask, reversed).unwrap();
        let loss = if reversed { tape.scale(la, lambda1).unwrap() } else { la };
        let g = tape.backward(loss).unwrap();
        b.vars().iter().map(|v| g.get(*v)).collect::<Vec<Tensor>>()
    };
    let (rev, plain) = (grads(true), grads(false));
    let (mut worst, mut n): (f64, usize) = (0.0, 0);
    for ((r, p), param) in rev.iter().zip(&plain).zip(net.store.iter()) {
        if param.group == ParamGroup::Representation {
            for (a, b) in r.values().iter().zip(p.values()) {
                worst = worst.max((a + lambda1 * b).abs());
                n += 1;
            }
        }
    }
    ensure(n > 0 && worst <= 1e-10, format!("forward bit-exact, {n} representation gradients, max |g_rev + λ1 g| {worst:.1e}"))
}

fn c3_corruption() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trajs: Vec<Trajectory> = (0..50).map(|i| random_traj(&format!("e{i}"), 12, &mut rng)).collect();
    for (i, tr) in trajs.iter().enumerate() {
        let (c, recs) = corrupt_trajectory(tr, CorruptionConfig::default(), &mut seeds::rng(i as u64, Stream::Corruption(0))).unwrap();
        for (s, o) in c.steps.iter().zip(&tr.steps) {
            if s.a.iter().zip(&o.a).filter(|(x, y)| x != y).count() != 1 {
                return Err(format!("{}: step changed more than one position", tr.entity_id));
            }
        }
        if apply_records(&c, &recs).unwrap() != *tr {
            return Err(format!("{}: records do not restore the trajectory", tr.entity_id));
        }
        let mut twice = c.clone();
        for r in &recs {
            let step = &mut twice.steps[r.t - 1];
            corrupt_at(r.t, &mut step.v, &mut step.a, r.k).unwrap();
        }
        if twice.steps.iter().zip(&tr.steps).any(|(a, b)| a.a != b.a) {
            return Err(format!("{}: double flip does not restore bits", tr.entity_id));
        }
        let (again, _) = corrupt_trajectory(tr, CorruptionConfig::default(), &mut seeds::rng(i as u64, Stream::Corruption(0))).unwrap();
        if again != c {
            return Err(format!("{}: same seed gave a different corruption", tr.entity_id));
        }
    }

    let k = 4;
    let (v, a) = (vec![vec![0.5; k]], vec![0u8; k]);
    let mut counts = vec![0f64; k];
    let mut rng = seeds::rng(11, Stream::Corruption(0));
    let draws = 30_000;
    for _ in 0..draws {
        counts[corrupt_step(1, &v, &a, &mut rng).unwrap().2.k] += 1.0;
    }
    let expected = draws as f64 / k as f64;
    let stat: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    let p = ChiSquared::new((k - 1) as f64).unwrap().sf(stat);
    ensure(p > 0.01, format!("involution, one flip per step, determinism on 50 entities; chi-square p = {p:.3} over {draws} draws"))
}

fn c4_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = Dataset::new((0..6).map(|i| random_traj(&format!("e{i}"), 8, &mut rng)).collect()).unwrap();
    let net = TcfNet::new(small_model(), 4).unwrap();
    let model = Forecaster::new(net, fit_stats(&data).unwrap()).unwrap();
    let (mut cases, mut worst_softmax): (usize, f64) = (0, 0.0);
    for tr in &data.trajectories {
        for t in 1..=tr.len() {
            let rep = model.representation(tr, t).unwrap();
            for a in [[0u8, 0], [1, 0], [0, 1]] {
                let d = estimate_interaction(&model, &tr.entity_id, t, &rep, &a, false).unwrap().delta_ci;
                if d != 0.0 {
                    return Err(format!("interaction {d:e} for {a:?} at {} t={t}", tr.entity_id));
                }
            }
            let features: Vec<Vec<Vec<f64>>> = tr.steps[..2].iter().map(|s| s.v.clone()).collect();
            for a in [[0u8, 0], [1, 0], [0, 1], [1, 1]] {
                let c = cate_between(&model, &rep, &a, &a, &features).unwrap();
                if c != 0.0 {
                    return Err(format!("identical arms gave {c:e}"));
                }
            }
            for head in model.predict_treatments(&rep).unwrap() {
                worst_softmax = worst_softmax.max((head[0] + head[1] - 1.0).abs());
            }
            cases += 1;
        }
    }
    ensure(worst_softmax <= 1e-12, format!("{cases} histories exact zero; max |Σ softmax - 1| {worst_softmax:.1e}"))
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn experiment(name: &str) -> ExperimentConfig {
    let text = fs::read_to_string(workspace().join("configs").join(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn train_and_evaluate(sim: &Simulation, config: &ExperimentConfig, seed: u64, tau: usize) -> (MetricsReport, Vec<tcf_core::effects::EntityEffects>, Dataset) {
    let train = tcf_core::train::TrainConfig { seed, ..config.train.clone() };
    let fitted = fit(&sim.dataset, &config.model, &train, |_| {}).unwrap();
    let test = fitted.prepared.test.clone();
    let ev = evaluate(&fitted.bundle.model, &test, Some(&sim.replay), Some(&sim.truth), EvalOptions::at(tau)).unwrap();
    (ev.report, ev.effects, test)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn c5_disentanglement() -> Outcome {
    let config = experiment("full-model.json");
    let synth = |u: f64| {
        simulate(&SimModel::Synthetic(SyntheticConfig { entities: 500, steps: 30, ..Default::default() }.with_interaction(0, 1, u))).unwrap()
    };

    let sim = synth(0.0);
    let (_, effects, test) = train_and_evaluate(&sim, &config, 0, 1);
    let ys: Vec<f64> = test.trajectories.iter().flat_map(|t| t.steps.iter().map(|s| s.y)).collect();
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let std = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (ys.len() - 1) as f64).sqrt();
    let med_ci = median(effects.iter().map(|e| e.interaction.abs()).collect());
    let cate_err = median(
        effects
            .iter()
            .flat_map(|e| e.cate.iter().zip(e.cate_true.as_ref().unwrap()).map(|(a, b)| (a - b).abs()))
            .collect(),
    );

    let (mut right, mut total) = (0usize, 0usize);
    for u in [0.5, -0.5] {
        let (_, effects, _) = train_and_evaluate(&synth(u), &config, 0, 1);
        right += effects.iter().filter(|e| e.interaction.signum() == u.signum()).count();
        total += effects.len();
    }
    let sign_rate = right as f64 / total as f64;
    let a = med_ci < 0.1 * std;
    let b = sign_rate >= 0.8;
    let c = cate_err < 0.2;
    ensure(
        a && b && c,
        format!(
            "(a) median |δ_CI| {med_ci:.4} vs 0.1·std {:.4} {}; (b) sign recovered {:.1}% {}; (c) median CATE error {cate_err:.4} {}",
            0.1 * std,
            mark(a),
            100.0 * sign_rate,
            mark(b),
            mark(c)
        ),
    )
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

struct TumourRuns {
    full: Vec<MetricsReport>,
    ablation: Vec<MetricsReport>,
}

fn tumour_runs() -> TumourRuns {
    let (full_cfg, abl_cfg) = (experiment("full-model.json"), experiment("ablation.json"));
    let mut runs = TumourRuns { full: Vec::new(), ablation: Vec::new() };
    for seed in 0..5 {
        let sim = simulate(&SimModel::Tumour(TumourParams { seed, gamma_c: 5.0, gamma_r: 5.0, patients: 500, steps: 30, ..Default::default() })).unwrap();
        runs.full.push(train_and_evaluate(&sim, &full_cfg, seed, 3).0);
        runs.ablation.push(train_and_evaluate(&sim, &abl_cfg, seed, 3).0);
    }
    runs
}

fn cf_rmse(r: &MetricsReport) -> f64 {
    r.counterfactual.as_ref().unwrap().rmse_pct
}

fn c6_direction(runs: &TumourRuns) -> Outcome {
    let pairs: Vec<String> = runs.full.iter().zip(&runs.ablation).map(|(f, a)| format!("{:.3}/{:.3}", cf_rmse(f), cf_rmse(a))).collect();
    let wins = runs.full.iter().zip(&runs.ablation).filter(|(f, a)| cf_rmse(f) <= cf_rmse(a)).count();
    ensure(wins >= 4, format!("full ≤ ablation in {wins}/5 seeds (CF RMSE% full/ablation: {})", pairs.join(", ")))
}

fn c7_recommendation(runs: &TumourRuns) -> Outcome {
    let accs: Vec<(f64, f64)> = runs.full.iter().map(|r| r.treatment.as_ref().map(|t| (t.tr_acc, t.trt_acc)).unwrap()).collect();
    let ordered = runs.full.iter().chain(&runs.ablation).all(|r| r.treatment.as_ref().is_some_and(|t| t.trt_acc <= t.tr_acc));
    let above = accs.iter().all(|(tr, _)| *tr >= 0.45);
    let shown: Vec<String> = accs.iter().map(|(a, b)| format!("{:.1}/{:.1}", 100.0 * a, 100.0 * b)).collect();
    ensure(above && ordered, format!("Tr/TrT Acc % per seed: {}; TrT ≤ Tr on all 10 reports: {ordered}", shown.join(", ")))
}

fn c8_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).display().to_string();
    fs::write(p("cfg.json"), common::SMALL_CONFIG).unwrap();
    common::ok(&["simulate", "--model", "tumour", "--patients", "40", "--steps", "12", "--seed", "21", "--out", &p("d.jsonl")]);
    for run in ["a", "b"] {
        let ckpt = p(&format!("ckpt-{run}"));
        common::ok(&["train", "--data", &p("d.jsonl"), "--config", &p("cfg.json"), "--out", &ckpt, "--deterministic", "--seed", "9"]);
        common::ok(&["evaluate", "--ckpt", &ckpt, "--data", &p("d.jsonl"), "--tau", "3", "--out", &p(&format!("eval-{run}"))]);
    }
    let files = [
        "ckpt-{}/params.bin",
        "ckpt-{}/manifest.json",
        "ckpt-{}/norm.json",
        "ckpt-{}/train_log.jsonl",
        "eval-{}/metrics.json",
        "eval-{}/effects.jsonl",
    ];
    for f in files {
        let (a, b) = (fs::read(p(&f.replace("{}", "a"))).unwrap(), fs::read(p(&f.replace("{}", "b"))).unwrap());
        if a != b {
            return Err(format!("{} differs between runs", f.replace("{}", "*")));
        }
    }
    Ok(format!("{} artefacts byte-identical across two runs", files.len()))
}

fn c9_ground_truth() -> Outcome {
    let mut checked = 0;
    let sims = [
        simulate(&SimModel::Tumour(TumourParams { patients: 400, ..Default::default() })).unwrap(),
        simulate(&SimModel::Synthetic(SyntheticConfig { entities: 400, ..Default::default() }.with_interaction(0, 1, 0.5))).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for sim in &sims {
        let keys: Vec<_> = sim.truth.keys().cloned().collect();
        for _ in 0..10_000 {
            let (e, t) = &keys[rng.random_range(0..keys.len())];
            let a = mask_to_bits(rng.random_range(0..4u32), 2);
            let y0 = sim.truth.potential(e, *t, 0).unwrap();
            let ya = sim.truth.potential(e, *t, treatment_mask(&a)).unwrap();
            let singles: f64 = (0..2).filter(|&k| a[k] == 1).map(|k| sim.truth.potential(e, *t, 1 << k).unwrap() - y0).sum();
            let got = ground_truth_interaction(&sim.truth, e, *t, &a).unwrap();
            if got != (ya - y0) - singles {
                return Err(format!("{e} t={t} a={a:?}: {got} vs {}", (ya - y0) - singles));
            }
            checked += 1;
        }
    }
    let bias: Vec<f64> = [0.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|&g| {
            let m = SimModel::Tumour(TumourParams { gamma_c: g, gamma_r: g, patients: 10_000, seed: 17, ..Default::default() });
            selection_bias(&simulate(&m).unwrap().dataset)
        })
        .collect();
    let monotone = bias.windows(2).all(|w| w[0] <= w[1]);
    ensure(monotone, format!("{checked} table entries exact; selection bias over γ=0,2,5,10: {bias:.3?}"))
}

fn run(id: u32, gated: bool, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let secs = start.elapsed().as_secs_f64();
    let (status, detail) = match &result {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    let note = if gated { "" } else { " [reported, not gated]" };
    println!("criterion {id}: {status}{note} ({secs:.0}s) {detail}");
    result.is_ok() || !gated
}

fn main() {
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |id: u32| filter.is_empty() || filter.contains(&id);
    let mut ok = true;
    if wanted(1) {
        ok &= run(1, true, c1_gradients);
    }
    if wanted(2) {
        ok &= run(2, true, c2_reversal);
    }
    if wanted(3) {
        ok &= run(3, true, c3_corruption);
    }
    if wanted(4) {
        ok &= run(4, true, c4_identities);
    }
    if wanted(9) {
        ok &= run(9, true, c9_ground_truth);
    }
    if wanted(8) {
        ok &= run(8, true, c8_determinism);
    }
    if wanted(5) {
        ok &= run(5, true, c5_disentanglement);
    }
    if wanted(6) || wanted(7) {
        let start = Instant::now();
        let runs = tumour_runs();
        println!("tumour runs: 5 seeds x 2 variants in {:.0}s", start.elapsed().as_secs_f64());
        if wanted(6) {
            ok &= run(6, false, || c6_direction(&runs));
        }
        if wanted(7) {
            ok &= run(7, true, || c7_recommendation(&runs));
        }
    }
    if !ok {
        std::process::exit(1);
    }
}
