//! Acceptance suite. Runs every criterion in order and prints one line
//! per criterion; exits non-zero when a hard criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{max_abs_diff, random_array3, random_array4, random_matrix, reference, to_rows};
use ndarray::{array, Array2, Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treecaps::ast::{ProgramRecord, Split};
use treecaps::capsules::{
    cc_route, drsw_route, squash, vts_route, CapsuleLayer, CapsuleSet, CcRoutingParams, DrswParams, RoutingKind,
};
use treecaps::corpus::generate_split;
use treecaps::heads::subword_metrics;
use treecaps::perturb::{apply, ppc, ppc_value, preserves_semantics, program_seed, variable_pool, TransformKind};
use treecaps::training::{
    batch_loss_and_grad, evaluate, grad_check, split_records, train, Model, ModelConfig, Optimizer, PreparedTree, Target,
    Task,
};

const DESK_SEED: u64 = 7;

enum Outcome {
    Pass(String),
    Fail(String),
    SoftFail(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn pvc(m: Array2<f64>) -> CapsuleSet<f64> {
    CapsuleSet::new(m, CapsuleLayer::Pvc)
}

fn rows3(w: &Array3<f64>) -> Vec<Vec<Vec<f64>>> {
    w.outer_iter().map(|m| to_rows(&m.to_owned())).collect()
}

fn distinct_norms(rng: &mut ChaCha8Rng, b: usize, d: usize) -> Array2<f64> {
    loop {
        let u = random_matrix(rng, b, d, 1.0);
        let mut norms: Vec<f64> = u.rows().into_iter().map(|r| r.dot(&r)).collect();
        norms.sort_by(f64::total_cmp);
        if norms.windows(2).all(|w| w[1] - w[0] > 1e-9) {
            return u;
        }
    }
}

fn routing_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let instances = 1000;
    let (mut worst_drsw, mut worst_vts, mut worst_cc) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..instances {
        let b = rng.gen_range(1..=10);
        let a = rng.gen_range(1..=4);
        let din = rng.gen_range(1..=4);
        let dout = rng.gen_range(1..=4);
        let r = rng.gen_range(1..=4);
        let u = random_matrix(&mut rng, b, din, 1.0);

        let w = random_array3(&mut rng, (a, dout, din), 1.0);
        let sc = drsw_route(&pvc(u.clone()), &DrswParams { w_shared: w.clone() }, r).unwrap();
        worst_drsw = worst_drsw.max(max_abs_diff(&sc.vectors, &reference::drsw(&to_rows(&u), &rows3(&w), r)));

        let v = vts_route(&pvc(u.clone()), r, a).unwrap();
        worst_vts = worst_vts.max(max_abs_diff(&v.vectors, &reference::vts(&to_rows(&u), r, a)));

        let nout = rng.gen_range(1..=4);
        let wc: Array4<f64> = random_array4(&mut rng, (b, nout, dout, din), 1.0);
        let cc = cc_route(&CapsuleSet::new(u.clone(), CapsuleLayer::Sc), &CcRoutingParams { w: wc.clone() }, r).unwrap();
        let wr: Vec<Vec<Vec<Vec<f64>>>> = wc.outer_iter().map(|wi| rows3(&wi.to_owned())).collect();
        worst_cc = worst_cc.max(max_abs_diff(&cc.vectors, &reference::cc(&to_rows(&u), &wr, r)));
    }
    let elapsed = start.elapsed();
    let worst = worst_drsw.max(worst_vts).max(worst_cc);
    check(
        worst <= 1e-10 && elapsed < Duration::from_secs(60),
        format!(
            "{instances} instances per router; max diff drsw {worst_drsw:.1e}, vts {worst_vts:.1e}, cc {worst_cc:.1e}; {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn golden_traces() -> Outcome {
    let close = |m: &Array2<f64>, want: &[[f64; 2]]| {
        m.nrows() == want.len()
            && m.rows().into_iter().zip(want).all(|(r, w)| (r[0] - w[0]).abs() <= 1e-12 && (r[1] - w[1]).abs() <= 1e-12)
    };
    let two = array![[0.8, 0.0], [0.0, 0.6]];
    let eye = Array3::from_shape_fn((1, 2, 2), |(_, i, j)| if i == j { 1.0 } else { 0.0 });
    let drsw_a = drsw_route(&pvc(two.clone()), &DrswParams { w_shared: eye }, 1).unwrap();
    let eye2 = Array3::from_shape_fn((2, 2, 2), |(_, i, j)| if i == j { 1.0 } else { 0.0 });
    let drsw_b = drsw_route(&pvc(array![[1.0, 0.0]]), &DrswParams { w_shared: eye2 }, 1).unwrap();
    let vts = vts_route(&pvc(two.clone()), 1, 1).unwrap();
    let wc = Array4::from_shape_fn((1, 1, 2, 2), |(_, _, i, j)| if i == j { 1.0 } else { 0.0 });
    let u = array![[0.3, -1.2]];
    let cc = cc_route(&CapsuleSet::new(u.clone(), CapsuleLayer::Sc), &CcRoutingParams { w: wc }, 1).unwrap();
    let s = squash(u.row(0));
    let cases = [
        ("drsw two children", close(&drsw_a.vectors, &[[0.4, 0.3]])),
        ("drsw two parents", close(&drsw_b.vectors, &[[0.2, 0.0], [0.2, 0.0]])),
        ("vts", close(&vts.vectors, &[[0.4, 0.3]])),
        ("cc single pair", close(&cc.vectors, &[[s[0], s[1]]])),
    ];
    let failed: Vec<&str> = cases.iter().filter(|c| !c.1).map(|c| c.0).collect();
    check(failed.is_empty(), format!("{} hand traces, failing: {failed:?}", cases.len()))
}

fn squash_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = 0usize;
    for _ in 0..10_000 {
        let d = rng.gen_range(1..=16);
        let scale = 10f64.powi(rng.gen_range(-3..=3));
        let c: Vec<f64> = (0..d).map(|_| rng.gen_range(-scale..scale)).collect();
        let out = squash(ndarray::ArrayView1::from(&c));
        let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        let m = out.dot(&out).sqrt();
        let cos = out.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() / (m * n);
        if !(m < 1.0 && (m - n * n / (1.0 + n * n)).abs() <= 1e-9 && (cos - 1.0).abs() <= 1e-9) {
            failures += 1;
        }
    }
    let zero = squash(ndarray::ArrayView1::from(&[0.0, 0.0, 0.0]));
    let zero_ok = zero.iter().all(|&x| x == 0.0);
    let elapsed = start.elapsed();
    check(
        failures == 0 && zero_ok && elapsed < Duration::from_secs(10),
        format!("10^4 vectors, {failures} violations, zero guard {zero_ok}; {:.2}s", elapsed.as_secs_f64()),
    )
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for routing in [RoutingKind::Vts, RoutingKind::Drsw] {
        for task in [Task::Classify, Task::Name] {
            let report = grad_check(task, routing, 1e-5, 0).unwrap();
            worst = worst.max(report.max_relative_error);
            parts.push(format!("{routing:?}/{task:?} {:.1e}", report.max_relative_error));
        }
    }
    let elapsed = start.elapsed();
    check(
        worst <= 1e-4 && elapsed < Duration::from_secs(300),
        format!("{}; {:.1}s", parts.join(", "), elapsed.as_secs_f64()),
    )
}

fn subword_examples() -> Outcome {
    let a = subword_metrics("result_compute", "computeResult");
    let b = subword_metrics("compute", "computeResult");
    let c = subword_metrics("compute_model_result", "computeResult");
    let ok = (a.precision, a.recall) == (1.0, 1.0)
        && (b.precision, b.recall) == (1.0, 0.5)
        && (c.precision, c.recall) == (2.0 / 3.0, 1.0);
    check(
        ok,
        format!(
            "P/R = {}/{}, {}/{}, {:.4}/{}",
            a.precision, a.recall, b.precision, b.recall, c.precision, c.recall
        ),
    )
}

fn desk_corpus() -> Vec<ProgramRecord> {
    generate_split(10, 200, DESK_SEED).unwrap().records
}

fn semantic_preservation(records: &[ProgramRecord]) -> Outcome {
    let start = Instant::now();
    let pool = variable_pool(split_records(records, Split::Train).iter().map(|r| &r.ast)).unwrap();
    let mut broken = Vec::new();
    let mut applied = [0usize; 3];
    let kinds = [TransformKind::VariableRenaming, TransformKind::UnusedStatement, TransformKind::PermuteStatement];
    for (i, r) in records.iter().enumerate() {
        for (k, kind) in kinds.into_iter().enumerate() {
            let t = apply(kind, &r.ast, &pool, program_seed(0, i)).unwrap();
            applied[k] += usize::from(t.applied);
            if !preserves_semantics(r, &t.tree).unwrap() {
                broken.push(format!("{}:{}", r.id, kind.short()));
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        broken.is_empty() && records.len() == 2000 && elapsed < Duration::from_secs(300),
        format!(
            "{} programs, applied VN/US/PS {}/{}/{}, {} trace mismatches {:?}; {:.1}s",
            records.len(),
            applied[0],
            applied[1],
            applied[2],
            broken.len(),
            broken.iter().take(3).collect::<Vec<_>>(),
            elapsed.as_secs_f64()
        ),
    )
}

fn ppc_harness(records: &[ProgramRecord]) -> Outcome {
    let mut cfg = ModelConfig::tiny(Task::Classify, RoutingKind::Vts);
    cfg.seed = 11;
    let model: Model<f32> = Model::from_records(records, &cfg).unwrap();
    let test: Vec<ProgramRecord> = split_records(records, Split::Test).into_iter().cloned().collect();
    let identity = ppc(|t| model.predict_tree(t).map(|p| p.index), &test, TransformKind::Identity, &[], 5).unwrap();

    let mut four: Vec<ProgramRecord> = test.iter().take(4).cloned().collect();
    four.sort_by_key(|r| r.ast.len());
    let unique_min = four[0].ast.len() < four[1].ast.len();
    let threshold = four[0].ast.len() + 1;
    let us = TransformKind::UnusedStatement;
    let none = ppc(|t| Ok(t.len() % 3), &four, us, &[], 0).unwrap();
    let quarter = ppc(|t| Ok(usize::from(t.len() >= threshold)), &four, us, &[], 0).unwrap();
    let all = ppc(|t| Ok(t.len()), &four, us, &[], 0).unwrap();
    let arithmetic = ppc_value(0, 4) == 0.0 && ppc_value(1, 3) == 25.0 && ppc_value(4, 0) == 100.0 && ppc_value(0, 0) == 0.0;
    let ok = identity.ppc == 0.0
        && unique_min
        && none.ppc == 0.0
        && quarter.ppc == 25.0
        && all.ppc == 100.0
        && arithmetic;
    check(
        ok,
        format!(
            "identity {} over {} programs; fixtures {}, {}, {}",
            identity.ppc,
            identity.programs.len(),
            none.ppc,
            quarter.ppc,
            all.ppc
        ),
    )
}

fn end_to_end(records: &[ProgramRecord]) -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let budget = 30.0 * 60.0;
    let cfg = ModelConfig {
        routing: RoutingKind::Vts,
        epochs: 30,
        time_budget_secs: Some(budget),
        target_metric: Some(0.98),
        ..ModelConfig::default()
    };
    let start = Instant::now();
    let report = pool.install(|| train(records, &cfg, None)).unwrap();
    let test = split_records(records, Split::Test);
    let metrics = pool.install(|| evaluate(&report.model, &test)).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let overfit = pool.install(|| single_batch_overfit(records));
    check(
        metrics.accuracy >= 0.9 && elapsed <= budget && overfit.is_some(),
        format!(
            "test accuracy {:.4} after {} epochs in {:.1} single-core min; single batch fitted in {} steps",
            metrics.accuracy,
            report.log.len(),
            elapsed / 60.0,
            overfit.map_or("more than 200".to_string(), |s| s.to_string())
        ),
    )
}

/// Steps until one fixed batch is classified perfectly, if within 200.
fn single_batch_overfit(records: &[ProgramRecord]) -> Option<usize> {
    let cfg = ModelConfig::default();
    let mut model: Model<f32> = Model::from_records(records, &cfg).unwrap();
    let train = split_records(records, Split::Train);
    let batch: Vec<(PreparedTree, Target)> = train
        .iter()
        .take(cfg.batch_size)
        .map(|r| (model.prepare(&r.ast), model.target_of(r).unwrap().unwrap()))
        .collect();
    let mut opt = Optimizer::new(cfg.optimizer, &model.store);
    for step in 1..=200 {
        let refs: Vec<(&PreparedTree, Target)> = batch.iter().map(|(p, t)| (p, *t)).collect();
        let (_, grads) = batch_loss_and_grad(&model.store, &model.config, &refs).unwrap();
        opt.step(&mut model.store, &grads, cfg.lr).unwrap();
        if step % 5 == 0 {
            let fitted = train
                .iter()
                .take(cfg.batch_size)
                .all(|r| Some(Target::Class(model.predict_tree(&r.ast).unwrap().index)) == model.target_of(r).unwrap());
            if fitted {
                return Some(step);
            }
        }
    }
    None
}

fn convergence(records: &[ProgramRecord]) -> Outcome {
    let threshold = 0.8;
    let max_epochs = 8;
    let epochs_to = |routing: RoutingKind, seed: u64| -> Option<usize> {
        let cfg = ModelConfig {
            routing,
            seed,
            epochs: max_epochs,
            target_metric: Some(threshold),
            ..ModelConfig::default()
        };
        let report = train(records, &cfg, None).unwrap();
        report.log.iter().find(|l| l.val_metric >= threshold).map(|l| l.epoch)
    };
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in [1u64, 2, 3] {
        let vts = epochs_to(RoutingKind::Vts, seed);
        let drsw = epochs_to(RoutingKind::Drsw, seed);
        let vts_n = vts.unwrap_or(max_epochs + 1);
        let drsw_n = drsw.unwrap_or(max_epochs + 1);
        if vts.is_some() && vts_n <= drsw_n {
            wins += 1;
        }
        let show = |e: Option<usize>| e.map_or(format!(">{max_epochs}"), |e| e.to_string());
        parts.push(format!("seed {seed}: vts {} drsw {}", show(vts), show(drsw)));
    }
    let detail = format!(
        "epochs to {:.0}% validation accuracy; {}; vts no slower in {wins}/3",
        threshold * 100.0,
        parts.join(", ")
    );
    if wins >= 2 {
        Outcome::Pass(detail)
    } else {
        Outcome::SoftFail(format!("{detail}; qualitative trend, reported without failing the suite"))
    }
}

fn permutation_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let b = rng.gen_range(2..=10);
        let a = rng.gen_range(1..=4);
        let d = rng.gen_range(1..=4);
        let r = rng.gen_range(1..=4);
        let u = distinct_norms(&mut rng, b, d);
        let mut perm: Vec<usize> = (0..b).collect();
        perm.shuffle(&mut rng);
        let v1 = vts_route(&pvc(u.clone()), r, a).unwrap();
        let v2 = vts_route(&pvc(u.select(Axis(0), &perm)), r, a).unwrap();
        worst = (&v1.vectors - &v2.vectors).iter().fold(worst, |w, x| w.max(x.abs()));
    }
    check(worst <= 1e-12, format!("500 instances, max change {worst:.1e}"))
}

fn main() {
    let records = desk_corpus();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("routing oracle equivalence", Box::new(routing_oracles)),
        ("hand-traced golden cases", Box::new(golden_traces)),
        ("squash invariants", Box::new(squash_suite)),
        ("gradient validation", Box::new(gradients)),
        ("sub-word metric examples", Box::new(subword_examples)),
        ("semantic preservation", Box::new(|| semantic_preservation(&records))),
        ("PPC harness", Box::new(|| ppc_harness(&records))),
        ("desk-scale end-to-end", Box::new(|| end_to_end(&records))),
        ("VTS vs DRSW convergence", Box::new(|| convergence(&records))),
        ("VTS permutation invariance", Box::new(permutation_invariance)),
    ];
    let mut hard_failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::Fail(format!("panicked: {msg}"))
        });
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::SoftFail(d) => ("SOFT-FAIL", d),
            Outcome::Fail(d) => {
                hard_failures += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag:<9} {name}: {detail}", i + 1);
    }
    if hard_failures > 0 {
        eprintln!("{hard_failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
