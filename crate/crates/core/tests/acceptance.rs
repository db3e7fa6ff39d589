//! Acceptance criteria, run in order. One `PASS`/`FAIL` line each; the
//! process exits non-zero when any criterion fails.

use std::collections::BTreeSet;
use std::io::Write;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ios_fscil::classify::{retrieve, sample_loss, ForwardCtx};
use ios_fscil::datasets::SyntheticSpec;
use ios_fscil::metrics::{emit_all, summarize, AccuracyMatrix, AccuracyRow, RunReport, Summary};
use ios_fscil::numkernel::{eval_with_gradients, finite_diff_grad, Tape};
use ios_fscil::promptmem::{topk_2d, KeyMapVariant, PairInit};
use ios_fscil::trainer::{run_protocol, DataBundle, RunConfig, Runner, UpdateScope};
use ios_fscil::{Model, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Thresholds.
const GRAD_INSTANCES: usize = 100;
const GRAD_FD_STEP: f64 = 1e-5;
const GRAD_REL_TOL: f64 = 1e-4;
/// Central-difference roundoff at the step above is about 1e-11.
const GRAD_DENOM_FLOOR: f64 = 1e-6;
const GRAD_BUDGET: Duration = Duration::from_secs(30);
const TOPK_POOLS: usize = 1000;
const METRIC_TOL: f64 = 0.05;
const OURS_ROW: [f64; 9] = [95.4, 94.4, 93.4, 93.1, 92.1, 91.4, 90.8, 90.0, 89.1];
const OURS_AVG: f64 = 92.2;
const OURS_PD: f64 = 6.3;
const ZSL_ROW: [f64; 9] = [85.8, 85.5, 84.9, 84.8, 84.2, 84.2, 84.0, 83.9, 83.7];
const ZSL_PD: f64 = 2.1;
const BENCH_CHANCE: f64 = 0.1;
const BENCH_FINAL_FACTOR: f64 = 3.0;
const BENCH_NLA_FACTOR: f64 = 2.0;
const BENCH_BUDGET: Duration = Duration::from_secs(60);
const SEEDS: u64 = 10;
const SIGN_MIN: usize = 8;
const DUAL_INSTANCES: usize = 100;
const DUAL_TOL: f64 = 1e-10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn benchmark_config(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        dim: 32,
        tau: 16.0,
        base_classes: 6,
        ways: 2,
        shots: 5,
        sessions: 3,
        synthetic: Some(SyntheticSpec {
            classes: 10,
            dim: 32,
            sigma: 0.1,
            ..SyntheticSpec::default()
        }),
        ..RunConfig::default()
    }
}

fn bench_run(cfg: &RunConfig) -> Result<RunReport> {
    let data = DataBundle::load(cfg)?;
    run_protocol(cfg, &data)
}

/// Runs `f` for every seed on its own thread.
fn per_seed<T: Send>(f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..SEEDS).map(|seed| s.spawn({ let f = &f; move || f(seed) })).collect();
        handles.into_iter().map(|h| h.join().expect("seed worker panicked")).collect()
    })
}

// ---- random model instances ----

struct Instance {
    model: Model,
    seed: u64,
    feature: Vec<f64>,
    class_id: u32,
    k_pr: usize,
    tau: f64,
}

fn random_instance(rng: &mut ChaCha8Rng, perturb: bool) -> Instance {
    let dim = [2, 4, 8][rng.gen_range(0..3)];
    let l_ctx = rng.gen_range(5..=8);
    let classes = rng.gen_range(2..=5usize);
    let k_pr = rng.gen_range(1..=3usize);
    let variant = [KeyMapVariant::Fc1, KeyMapVariant::Fc2, KeyMapVariant::Res2][rng.gen_range(0..3)];
    let seed = rng.gen();
    let mut model = Model::new(seed, l_ctx, dim, variant, rng).unwrap();
    let sessions = rng.gen_range(1..=classes.min(3));
    let mut sizes = vec![1usize; sessions];
    for _ in sessions..classes {
        sizes[rng.gen_range(0..sessions)] += 1;
    }
    let mut next = 0u32;
    for (t, &m) in sizes.iter().enumerate() {
        let names: Vec<(u32, String)> = (0..m)
            .map(|_| {
                next += 1;
                (next, format!("c{next}"))
            })
            .collect();
        let pairs = if t == 0 { rng.gen_range(k_pr..=k_pr + 2) } else { rng.gen_range(1..=2) };
        let init = if rng.gen_bool(0.5) { PairInit::ClassEmbedding } else { PairInit::Random };
        model.add_session(&names, None, pairs, init, rng).unwrap();
    }
    if perturb {
        for t in model.store.values_mut() {
            for v in t.data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
    }
    let feature = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Instance {
        model,
        seed,
        feature,
        class_id: rng.gen_range(1..=next),
        k_pr,
        tau: rng.gen_range(1.0..16.0),
    }
}

// ---- criteria ----

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11CE);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut floored = 0usize;
    for n in 0..GRAD_INSTANCES {
        let inst = random_instance(&mut rng, true);
        let m = &inst.model;
        let target = m.bank.global_index(inst.class_id).unwrap();
        let (_, sel) = retrieve(m, &inst.feature, inst.k_pr).unwrap();
        let all = vec![true; m.store.len()];
        let forward = |model: &Model, tape: &mut Tape| -> Result<_> {
            let ctx = ForwardCtx::new(tape, model, inst.k_pr, inst.tau)?;
            Ok(ctx.sample(tape, &inst.feature, Some(target), Some(&sel))?.loss.unwrap())
        };
        let (_, analytic) = eval_with_gradients(m.store.values(), &all, |t| forward(m, t)).unwrap();
        let numeric = finite_diff_grad(
            |p| {
                let mut probe = m.clone();
                probe.store.values_mut().clone_from_slice(p);
                let mut tape = Tape::new();
                let loss = forward(&probe, &mut tape)?;
                Ok(tape.scalar(loss))
            },
            m.store.values(),
            &all,
            GRAD_FD_STEP,
        )
        .unwrap();
        for (id, (a, f)) in m.store.ids().zip(analytic.iter().zip(&numeric)) {
            let (a, f) = (a.as_ref().unwrap(), f.as_ref().unwrap());
            let diff: f64 = a.data().iter().zip(f.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let scale = a.norm().max(f.norm());
            floored += (scale < GRAD_DENOM_FLOOR) as usize;
            let denom = scale.max(GRAD_DENOM_FLOOR);
            let rel = diff / denom;
            if rel >= GRAD_REL_TOL {
                return outcome(
                    false,
                    format!("instance {n}, tensor {}: relative error {rel:.3e}", m.store.meta(id).name),
                );
            }
            worst = worst.max(rel);
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        elapsed < GRAD_BUDGET,
        format!(
            "{GRAD_INSTANCES} instances, {checked} tensors ({floored} below norm {GRAD_DENOM_FLOOR:e}), max relative error {worst:.2e}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

/// Selection by repeated scan: the largest remaining value, earliest flat
/// position on ties.
fn brute_topk(pool: &[Vec<f64>], k: usize) -> Vec<(usize, usize)> {
    let flat: Vec<(usize, usize, f64)> = pool
        .iter()
        .enumerate()
        .flat_map(|(s, row)| row.iter().enumerate().map(move |(i, &v)| (s, i, v)))
        .collect();
    let mut taken = vec![false; flat.len()];
    let mut out = Vec::new();
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for j in 0..flat.len() {
            if !taken[j] && best.map_or(true, |b| flat[j].2 > flat[b].2) {
                best = Some(j);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        out.push((flat[b].0, flat[b].1));
    }
    out
}

fn topk_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x70B);
    let mut ties = 0usize;
    for n in 0..TOPK_POOLS {
        let sessions = rng.gen_range(1..=6);
        let pool: Vec<Vec<f64>> = (0..sessions)
            .map(|_| {
                let len = rng.gen_range(0..=5);
                (0..len)
                    .map(|_| {
                        if n % 2 == 0 {
                            f64::from(rng.gen_range(-3i32..=3)) / 3.0
                        } else {
                            rng.gen_range(-1.0..1.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let size: usize = pool.iter().map(Vec::len).sum();
        if size == 0 {
            if topk_2d(&pool, 1).is_ok() {
                return outcome(false, format!("pool {n}: empty pool accepted"));
            }
            continue;
        }
        let distinct: BTreeSet<u64> = pool.iter().flatten().map(|v| v.to_bits()).collect();
        ties += (distinct.len() < size) as usize;
        let k = rng.gen_range(1..=size);
        let got: Vec<(usize, usize)> = topk_2d(&pool, k)
            .unwrap()
            .entries
            .iter()
            .map(|e| (e.session, e.index))
            .collect();
        let want = brute_topk(&pool, k);
        if got != want {
            return outcome(false, format!("pool {n} k {k}: {got:?} != {want:?}"));
        }
    }
    outcome(true, format!("{TOPK_POOLS} pools, {ties} with ties"))
}

fn tensor_bytes(model: &Model) -> Vec<(String, Vec<u8>)> {
    model
        .store
        .ids()
        .map(|id| (model.store.meta(id).name.clone(), model.store.get(id).to_le_bytes()))
        .collect()
}

fn freeze_invariant() -> Outcome {
    let cfg = RunConfig {
        update_scope: UpdateScope::CurrentOnly,
        ..benchmark_config(3)
    };
    let data = DataBundle::load(&cfg).unwrap();
    let mut runner = Runner::new(&cfg, &data).unwrap();
    let mut snapshots = Vec::new();
    for _ in 0..cfg.sessions {
        runner.step().unwrap();
        snapshots.push((tensor_bytes(runner.model()), runner.model().encoder.clone()));
    }
    let mut compared = 0usize;
    for (t, (earlier, encoder)) in snapshots.iter().enumerate() {
        for (later, later_encoder) in &snapshots[t + 1..] {
            if later_encoder != encoder {
                return outcome(false, format!("text encoder changed after session {}", t + 1));
            }
            for (name, bytes) in earlier {
                let now = later.iter().find(|(n, _)| n == name).map(|(_, b)| b);
                if now != Some(bytes) {
                    return outcome(false, format!("{name} changed after session {}", t + 1));
                }
                compared += 1;
            }
        }
    }
    outcome(true, format!("{compared} tensor comparisons across {} sessions", cfg.sessions))
}

fn paper_row(row: &[f64]) -> AccuracyMatrix {
    AccuracyMatrix {
        rows: row
            .iter()
            .enumerate()
            .map(|(i, &a)| AccuracyRow {
                session: i + 1,
                all: a / 100.0,
                base: a / 100.0,
                novel: (i > 0).then_some(a / 100.0),
            })
            .collect(),
    }
}

fn metric_reproduction() -> Outcome {
    let ours = summarize(&paper_row(&OURS_ROW), OURS_ROW.len()).unwrap();
    let zsl = summarize(&paper_row(&ZSL_ROW), ZSL_ROW.len()).unwrap();
    let (avg, pd, zpd) = (100.0 * ours.avg, 100.0 * ours.pd, 100.0 * zsl.pd);
    let pass = (avg - OURS_AVG).abs() <= METRIC_TOL && (pd - OURS_PD).abs() <= METRIC_TOL && (zpd - ZSL_PD).abs() <= METRIC_TOL;
    outcome(pass, format!("AVG {avg:.4}, PD {pd:.4}, zero-shot PD {zpd:.4}"))
}

fn synthetic_benchmark() -> Outcome {
    let cfg = benchmark_config(0);
    let start = Instant::now();
    let report = bench_run(&cfg).unwrap();
    let elapsed = start.elapsed();
    let final_acc = report.final_accuracy();
    let nla = report.summary.nla.unwrap_or(0.0);
    let pass = final_acc >= BENCH_FINAL_FACTOR * BENCH_CHANCE
        && nla >= BENCH_NLA_FACTOR * BENCH_CHANCE
        && elapsed < BENCH_BUDGET;
    outcome(
        pass,
        format!(
            "final acc {final_acc:.3} (need {:.1}), NLA {nla:.3} (need {:.1}), {:.2}s",
            BENCH_FINAL_FACTOR * BENCH_CHANCE,
            BENCH_NLA_FACTOR * BENCH_CHANCE,
            elapsed.as_secs_f64()
        ),
    )
}

fn summaries(f: impl Fn(u64) -> RunConfig + Sync) -> Vec<Summary> {
    per_seed(|seed| bench_run(&f(seed)).map(|r| r.summary)).unwrap()
}

fn scope_directionality() -> Outcome {
    let narrow = summaries(|s| RunConfig { update_scope: UpdateScope::CurrentOnly, ..benchmark_config(s) });
    let wide = summaries(|s| RunConfig { update_scope: UpdateScope::AllParams, ..benchmark_config(s) });
    let wins = narrow.iter().zip(&wide).filter(|(a, b)| a.bma > b.bma).count();
    let pairs: Vec<String> = narrow.iter().zip(&wide).map(|(a, b)| format!("{:.3}/{:.3}", a.bma, b.bma)).collect();
    outcome(
        wins >= SIGN_MIN,
        format!("current_only wins {wins}/{SEEDS} (need {SIGN_MIN}); BMA narrow/wide {}", pairs.join(" ")),
    )
}

fn init_directionality() -> Outcome {
    let emb = summaries(|s| RunConfig { pair_init: PairInit::ClassEmbedding, ..benchmark_config(s) });
    let rnd = summaries(|s| RunConfig { pair_init: PairInit::Random, ..benchmark_config(s) });
    let nla = |s: &Summary| s.nla.unwrap_or(0.0);
    let wins = emb.iter().zip(&rnd).filter(|(a, b)| nla(a) >= nla(b)).count();
    let pairs: Vec<String> = emb.iter().zip(&rnd).map(|(a, b)| format!("{:.3}/{:.3}", nla(a), nla(b))).collect();
    outcome(
        wins >= SIGN_MIN,
        format!("embedding >= random in {wins}/{SEEDS} (need {SIGN_MIN}); NLA emb/rand {}", pairs.join(" ")),
    )
}

fn full_artifacts(cfg: &RunConfig, dir: &std::path::Path) -> Vec<Vec<u8>> {
    let data = DataBundle::load(cfg).unwrap();
    let mut runner = Runner::new(cfg, &data).unwrap();
    let mut out = Vec::new();
    while !runner.is_done() {
        runner.step().unwrap();
        out.push(runner.checkpoint().encode());
    }
    emit_all(&runner.report().unwrap(), dir).unwrap();
    let mut files: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    out.extend(files.iter().map(|p| std::fs::read(p).unwrap()));
    out
}

fn determinism() -> Outcome {
    let cfg = benchmark_config(7);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = full_artifacts(&cfg, a.path());
    let second = full_artifacts(&cfg, b.path());
    let bytes: usize = first.iter().map(Vec::len).sum();
    outcome(first == second, format!("{} artifacts, {bytes} bytes compared", first.len()))
}

// ---- straight-line reference forward pass ----

fn get(model: &Model, name: &str) -> Option<Vec<f64>> {
    model.store.find(name).map(|id| model.store.get(id).data().to_vec())
}

fn mv(w: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..w.len() / n).map(|i| (0..n).map(|j| w[i * n + j] * x[j]).sum()).collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn soft(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn reference_loss(inst: &Instance) -> f64 {
    let m = &inst.model;
    let (d, l) = (m.dim(), m.l_ctx());
    let f = &inst.feature;

    // frozen text encoder, regenerated from its seed
    let mut er = ChaCha8Rng::seed_from_u64(inst.seed);
    er.set_stream(1);
    let bound = 1.0 / (d as f64).sqrt();
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| er.gen_range(-bound..bound)).collect() };
    let (w1, b1, w2, b2) = (draw(d * d), draw(d), draw(d * d), draw(d));
    let text = |e: &[f64]| -> Vec<f64> {
        let pooled: Vec<f64> = (0..d).map(|c| (0..l).map(|r| e[r * d + c]).sum::<f64>() / l as f64).collect();
        let h: Vec<f64> = add(&mv(&w1, &pooled), &b1).iter().map(|x| x.tanh()).collect();
        add(&mv(&w2, &h), &b2)
    };

    let key = match get(m, "theta.w") {
        Some(w) => add(&mv(&w, f), &get(m, "theta.b").unwrap()),
        None => {
            let h: Vec<f64> = add(&mv(&get(m, "theta.w1").unwrap(), f), &get(m, "theta.b1").unwrap())
                .iter()
                .map(|x| x.max(0.0))
                .collect();
            let out = add(&mv(&get(m, "theta.w2").unwrap(), &h), &get(m, "theta.b2").unwrap());
            if m.keymap.variant == KeyMapVariant::Res2 {
                add(&out, f)
            } else {
                out
            }
        }
    };

    let mut pool: Vec<(f64, Vec<f64>)> = Vec::new();
    for t in 1.. {
        if get(m, &format!("k.{t}.0")).is_none() {
            break;
        }
        for i in 0.. {
            match get(m, &format!("k.{t}.{i}")) {
                Some(k) => pool.push((cos(&key, &k), get(m, &format!("Pr.{t}.{i}")).unwrap())),
                None => break,
            }
        }
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| pool[b].0.partial_cmp(&pool[a].0).unwrap().then(a.cmp(&b)));
    let chosen = &order[..inst.k_pr];
    let w = soft(&chosen.iter().map(|&j| pool[j].0).collect::<Vec<_>>());
    let mut bias = vec![0.0; l * d];
    for (wj, &j) in w.iter().zip(chosen) {
        for (b, p) in bias.iter_mut().zip(&pool[j].1) {
            *b += wj * p;
        }
    }

    let mut logits = Vec::new();
    let mut target = None;
    for (t, session) in m.bank.sessions().iter().enumerate() {
        for (i, class) in session.iter().enumerate() {
            if class.class_id == inst.class_id {
                target = Some(logits.len());
            }
            let e = get(m, &format!("E.{}.{i}", t + 1)).unwrap();
            let g = text(&add(&bias, &e));
            logits.push(inst.tau * cos(f, &g));
        }
    }
    let p = soft(&logits)[target.unwrap()];
    -p.max(1e-12).ln()
}

fn dual_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xD0A1);
    let mut worst = 0.0f64;
    for n in 0..DUAL_INSTANCES {
        let inst = random_instance(&mut rng, n % 2 == 1);
        let engine = sample_loss(&inst.model, &inst.feature, inst.class_id, inst.k_pr, inst.tau).unwrap();
        let reference = reference_loss(&inst);
        let diff = (engine - reference).abs();
        if !(diff <= DUAL_TOL) {
            return outcome(false, format!("instance {n}: engine {engine} vs reference {reference}"));
        }
        worst = worst.max(diff);
    }
    outcome(true, format!("{DUAL_INSTANCES} instances, max abs difference {worst:.2e}"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient suite", gradient_suite),
        ("top-k oracle", topk_oracle),
        ("freeze invariant", freeze_invariant),
        ("metric reproduction", metric_reproduction),
        ("synthetic benchmark", synthetic_benchmark),
        ("update-scope directionality", scope_directionality),
        ("initialization directionality", init_directionality),
        ("determinism", determinism),
        ("dual-implementation oracle", dual_oracle),
    ];
    let mut failed = 0;
    let mut err = std::io::stderr();
    for (name, run) in criteria {
        let o = run();
        failed += !o.pass as usize;
        let _ = writeln!(err, "{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let _ = writeln!(err, "acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
