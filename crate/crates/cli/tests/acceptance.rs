//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{brute_force_edges, dataset, path, pseudo_sim, reference_propagate, seeds};
use fbprop_core::config::{AttributeSchema, PropagationConfig};
use fbprop_core::eval::{
    recall_at_threshold, roc_auc, run_protocol, EvalReport, HarnessConfig, LinearModel, Mode, Protocol, TrainConfig,
};
use fbprop_core::graph::{build_graph, Transaction, TransactionGraph};
use fbprop_core::propagation::{init_scores, propagate, Termination};
use fbprop_core::similarity::{cosine, encode, ConstantSimilarity, CosineSimilarity};
use fbprop_core::synth::{generate, SynthParams};
use fbprop_core::AnnotationEvent;
use fbprop_service::{Session, SessionOptions};
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Draws `n` values from `strategy` with a fixed generator.
fn draw<S: Strategy>(strategy: S, n: usize, salt: u8) -> Vec<S::Value> {
    let rng = TestRng::from_seed(RngAlgorithm::ChaCha, &[salt; 32]);
    let mut runner = TestRunner::new_with_rng(Config::default(), rng);
    (0..n).map(|_| strategy.new_tree(&mut runner).expect("strategy").current()).collect()
}

type Case = (AttributeSchema, Vec<Transaction>, BTreeMap<usize, f64>, PropagationConfig, u64);

fn cases(epsilon: BoxedStrategy<f64>) -> impl Strategy<Value = Case> {
    (dataset(50, usize::MAX), 1usize..9, epsilon, any::<u64>()).prop_flat_map(|((schema, txs), max_hops, epsilon, salt)| {
        let n = txs.len();
        let cfg = PropagationConfig { max_hops, epsilon, ..Default::default() };
        (Just(schema), Just(txs), seeds(n), Just(cfg), Just(salt))
    })
}

fn any_epsilon() -> BoxedStrategy<f64> {
    prop_oneof![Just(0.0), Just(0.01), Just(0.5), Just(5.0), 0.0f64..20.0].boxed()
}

fn positive_epsilon() -> BoxedStrategy<f64> {
    prop_oneof![Just(0.01), Just(0.5), Just(5.0), 1e-3f64..20.0].boxed()
}

fn annotations(g: &TransactionGraph, seeds: &BTreeMap<usize, f64>) -> Vec<AnnotationEvent> {
    seeds.iter().map(|(&i, &s)| AnnotationEvent::new(g.node(i).id.clone(), s)).collect()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn propagation_oracle() -> Outcome {
    let start = Instant::now();
    let mut mismatches = Vec::new();
    let all = draw(cases(any_epsilon()), 200, 1);
    for (k, (schema, txs, seeds, cfg, salt)) in all.into_iter().enumerate() {
        let edges = brute_force_edges(&txs, &schema);
        let enc: Vec<_> = txs.iter().map(|t| encode(t, &schema)).collect();
        let n = txs.len();
        let g = build_graph(txs, &schema).unwrap();
        let ann = annotations(&g, &seeds);

        let sim = pseudo_sim(salt);
        let mut s = init_scores(&g, &ann, &cfg).unwrap();
        let rep = propagate(&g, &mut s, &sim, &cfg);
        let r = reference_propagate(n, &edges, schema.max_possible_weight(), sim, &seeds, &cfg);
        let pseudo_ok = bits(s.scores()) == bits(&r.scores) && rep.hops_executed == r.hops;

        let cos = CosineSimilarity::new(&g);
        let mut s = init_scores(&g, &ann, &cfg).unwrap();
        let rep = propagate(&g, &mut s, &cos, &cfg);
        let direct = |i: usize, j: usize| cosine(&enc[i.min(j)], &enc[i.max(j)]);
        let r = reference_propagate(n, &edges, schema.max_possible_weight(), direct, &seeds, &cfg);
        let cos_ok = bits(s.scores()) == bits(&r.scores) && rep.hops_executed == r.hops;
        if !(pseudo_ok && cos_ok) {
            mismatches.push(k);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        mismatches.is_empty() && secs < 30.0,
        format!("200 graphs x 2 similarities, mismatches {mismatches:?}, {secs:.1}s (limit 30s)"),
    )
}

fn geometric_decay() -> Outcome {
    let (schema, txs) = path(4);
    let g = build_graph(txs, &schema).unwrap();
    let cfg = PropagationConfig { max_hops: 5, epsilon: 0.0, ..Default::default() };
    let mut s = init_scores(&g, &[AnnotationEvent::new("p00", 100.0)], &cfg).unwrap();
    propagate(&g, &mut s, &ConstantSimilarity(1.0), &cfg);
    let expected = [100.0, 50.0, 25.0, 12.5];
    let err = s.scores().iter().zip(expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(err <= 1e-9, format!("scores {:?}, max error {err:e} (tol 1e-9)", s.scores()))
}

struct FuzzRun {
    bounds_ok: bool,
    seeds_frozen: bool,
    hops: usize,
    max_hops: usize,
    converged: bool,
    last_delta: Option<f64>,
    epsilon: f64,
}

fn fuzz(epsilon: BoxedStrategy<f64>, salt: u8) -> Vec<FuzzRun> {
    draw(cases(epsilon), 1000, salt)
        .into_iter()
        .map(|(schema, txs, seeds, cfg, _)| {
            let g = build_graph(txs, &schema).unwrap();
            let sim = CosineSimilarity::new(&g);
            let mut s = init_scores(&g, &annotations(&g, &seeds), &cfg).unwrap();
            let rep = propagate(&g, &mut s, &sim, &cfg);
            FuzzRun {
                bounds_ok: s.scores().iter().all(|x| (0.0..=cfg.clamp_max).contains(x)),
                seeds_frozen: seeds.iter().all(|(&i, &v)| s.score(i).to_bits() == v.to_bits() && s.is_seed(i)),
                hops: rep.hops_executed,
                max_hops: cfg.max_hops,
                converged: rep.terminated_by == Termination::Converged,
                last_delta: rep.trace.last().map(|t| t.delta_max),
                epsilon: cfg.epsilon,
            }
        })
        .collect()
}

fn bounds_and_frozen_seeds() -> Outcome {
    let runs = fuzz(any_epsilon(), 2);
    let out_of_range = runs.iter().filter(|r| !r.bounds_ok).count();
    let mutated = runs.iter().filter(|r| !r.seeds_frozen).count();
    check(
        out_of_range == 0 && mutated == 0,
        format!("{} runs, {out_of_range} out-of-range, {mutated} seed mutations", runs.len()),
    )
}

fn convergence_contract() -> Outcome {
    let runs = fuzz(positive_epsilon(), 3);
    let over = runs.iter().filter(|r| r.hops > r.max_hops).count();
    // a run that never hops (no positive seed) converges vacuously
    let wrong = runs
        .iter()
        .filter(|r| r.converged != r.last_delta.is_none_or(|d| d < r.epsilon))
        .count();
    check(
        over == 0 && wrong == 0,
        format!("{} runs with epsilon > 0, {over} over max_hops, {wrong} converged-flag violations", runs.len()),
    )
}

fn graph_build_equivalence() -> Outcome {
    let mut mismatches = 0;
    let all = draw(dataset(300, usize::MAX), 100, 4);
    for (schema, txs) in all {
        let expected = brute_force_edges(&txs, &schema);
        let g = build_graph(txs, &schema).unwrap();
        let mut got: Vec<(usize, usize, f64)> = g.edges().collect();
        got.sort_by_key(|&(i, j, _)| (i, j));
        let key = |v: &[(usize, usize, f64)]| v.iter().map(|&(i, j, w)| (i, j, w.to_bits())).collect::<Vec<_>>();
        if key(&got) != key(&expected) {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("100 datasets (<= 300 nodes, hub_cap unbounded), {mismatches} mismatches"))
}

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut won, mut pairs) = (0.0, 0.0);
    for (sp, _) in scores.iter().zip(labels).filter(|(_, &l)| l) {
        for (sn, _) in scores.iter().zip(labels).filter(|(_, &l)| !l) {
            pairs += 1.0;
            if sp > sn {
                won += 1.0;
            } else if sp == sn {
                won += 0.5;
            }
        }
    }
    won / pairs
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut auc_err, mut recall_mismatch) = (0.0f64, 0);
    for _ in 0..100 {
        let n = rng.random_range(2..=200);
        let p = rng.random_range(0.05..0.95);
        let levels = if rng.random_bool(0.5) { Some(rng.random_range(2..8)) } else { None };
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(p)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                let x: f64 = rng.random();
                levels.map_or(x, |l| (x * l as f64).floor() / l as f64)
            })
            .collect();
        auc_err = auc_err.max((roc_auc(&scores, &labels).unwrap() - pairwise_auc(&scores, &labels)).abs());
        let t: f64 = rng.random();
        let pos = labels.iter().filter(|&&l| l).count();
        let hit = scores.iter().zip(&labels).filter(|(&s, &l)| l && s >= t).count();
        if recall_at_threshold(&scores, &labels, t).unwrap() != hit as f64 / pos as f64 {
            recall_mismatch += 1;
        }
    }
    check(
        auc_err <= 1e-9 && recall_mismatch == 0,
        format!("100 instances, max AUC error {auc_err:e} (tol 1e-9), {recall_mismatch} recall mismatches"),
    )
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let dim = rng.random_range(1..8);
        let n = rng.random_range(5..60);
        let data: Vec<(Vec<f64>, bool)> =
            (0..n).map(|_| ((0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(), rng.random_bool(0.4))).collect();
        let l2 = [0.0, 1e-4, 0.1][rng.random_range(0..3)];
        let mut m = LinearModel::zeros(dim, TrainConfig { l2, ..Default::default() });
        m.weights.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        m.bias = rng.random_range(-1.0..1.0);
        let (gw, gb) = m.gradient(&data);
        let h = 1e-5;
        for k in 0..=dim {
            let mut plus = m.clone();
            let mut minus = m.clone();
            if k < dim {
                plus.weights[k] += h;
                minus.weights[k] -= h;
            } else {
                plus.bias += h;
                minus.bias -= h;
            }
            let fd = (plus.loss(&data) - minus.loss(&data)) / (2.0 * h);
            let analytic = if k < dim { gw[k] } else { gb };
            worst = worst.max((fd - analytic).abs());
        }
    }
    check(worst < 1e-6, format!("20 datasets, max |analytic - central difference| {worst:e} (tol 1e-6)"))
}

struct SeedRun {
    seed: u64,
    avg_degree: f64,
    auc: BTreeMap<Mode, f64>,
    fp_slope: Option<f64>,
}

fn trend_runs() -> (Vec<SeedRun>, f64) {
    let start = Instant::now();
    let schema = AttributeSchema::default();
    let runs = (0..5u64)
        .map(|seed| {
            let p = SynthParams { rng_seed: seed, ..Default::default() };
            let txs = generate(&p, &schema).unwrap();
            let cfg = HarnessConfig { seed, ..Default::default() };
            let protocol = Arc::new(Protocol::new(txs, &schema, PropagationConfig::default(), cfg).unwrap());
            let reports = run_protocol(&protocol, &Mode::ALL).unwrap().reports;
            SeedRun {
                seed,
                avg_degree: protocol.graph().avg_degree(),
                auc: reports.iter().map(|r| (r.mode, r.aggregate.auc.unwrap_or(f64::NAN))).collect(),
                fp_slope: reports.iter().find(|r| r.mode == Mode::Fp).and_then(EvalReport::auc_slope),
            }
        })
        .collect();
    (runs, start.elapsed().as_secs_f64())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn trend(runs: &[SeedRun], secs: f64) -> Outcome {
    let med = |m: Mode| median(runs.iter().map(|r| r.auc[&m]).collect());
    let (no_fb, fb, fp) = (med(Mode::NoFb), med(Mode::Fb), med(Mode::Fp));
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| format!("s{}={:.4}/{:.4}/{:.4}", r.seed, r.auc[&Mode::NoFb], r.auc[&Mode::Fb], r.auc[&Mode::Fp]))
        .collect();
    check(
        fp >= fb && fb >= no_fb && fp - no_fb >= 0.02 && secs < 300.0,
        format!(
            "median AUC no_fb {no_fb:.4}, fb {fb:.4}, fp {fp:.4}, fp - no_fb {:.4} (need >= 0.02); {}; {secs:.1}s",
            fp - no_fb,
            per_seed.join(" ")
        ),
    )
}

fn progression(runs: &[SeedRun]) -> Outcome {
    let ok = runs.iter().filter(|r| r.fp_slope.is_some_and(|s| s >= 0.0)).count();
    let slopes: Vec<String> =
        runs.iter().map(|r| format!("s{}={}", r.seed, r.fp_slope.map_or("-".into(), |s| format!("{s:+.4}")))).collect();
    check(ok >= 4, format!("fp slope >= 0 in {ok}/5 seeds ({})", slopes.join(" ")))
}

fn calibration(runs: &[SeedRun]) -> Outcome {
    let d = runs[0].avg_degree;
    check((10.0..=20.0).contains(&d), format!("default synthetic graph avg_degree {d:.2} (target range [10, 20])"))
}

fn http(addr: SocketAddr, method: &str, path: &str, body: Option<&Value>) -> (u16, Value) {
    let payload = body.map(Value::to_string).unwrap_or_default();
    let mut stream = TcpStream::connect(addr).expect("connect");
    stream.set_read_timeout(Some(Duration::from_secs(60))).unwrap();
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{payload}",
        payload.len()
    )
    .unwrap();
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw).unwrap();
    let text = String::from_utf8(raw).expect("utf-8 response");
    let (head, body) = text.split_once("\r\n\r\n").expect("header terminator");
    let status = head.split_whitespace().nth(1).and_then(|s| s.parse().ok()).expect("status line");
    let body = if head.to_ascii_lowercase().contains("transfer-encoding: chunked") { dechunk(body) } else { body.to_string() };
    let value: Value = serde_json::from_str(&body).expect("JSON body");
    assert_eq!(value["api_version"], "1");
    assert!(value["config_hash"].is_string());
    (status, value)
}

fn dechunk(mut s: &str) -> String {
    let mut out = String::new();
    while let Some((len, rest)) = s.split_once("\r\n") {
        let n = usize::from_str_radix(len.trim(), 16).unwrap_or(0);
        if n == 0 {
            break;
        }
        out.push_str(&rest[..n]);
        s = &rest[n + 2..];
    }
    out
}

fn spawn_server(session: Arc<Session>) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            let _ = fbprop_service::serve(session, listener).await;
        });
    });
    rx.recv().expect("server address")
}

/// Drives a full protocol run through the API with oracle annotations.
fn scripted_client(p: &Protocol, addr: SocketAddr) -> Result<(), String> {
    let expect = |what: &str, got: u16, want: u16| {
        if got == want {
            Ok(())
        } else {
            Err(format!("{what}: status {got}, expected {want}"))
        }
    };
    let mut cycles: Vec<(i64, Vec<AnnotationEvent>)> = vec![(-1, p.pretrain_annotations())];
    cycles.extend((0..p.part_count()).map(|k| (k as i64, p.cycle_annotations(k))));
    let last = p.part_count() as i64 - 1;
    for (cycle, events) in cycles {
        let (st, q) = http(addr, "GET", &format!("/queue?cycle={cycle}"), None);
        expect("queue", st, 200)?;
        let queued: Vec<&str> = q["data"]["items"].as_array().unwrap().iter().map(|i| i["id"].as_str().unwrap()).collect();
        if queued != events.iter().map(|e| e.node_id.as_str()).collect::<Vec<_>>() {
            return Err(format!("cycle {cycle}: queue differs from the in-process batch"));
        }
        for e in &events {
            let (st, _) = http(addr, "POST", "/annotations", Some(&json!({"node_id": e.node_id, "score": e.score})));
            expect("annotation", st, 200)?;
        }
        if cycle < last {
            expect("propagate", http(addr, "POST", "/propagate", None).0, 200)?;
            expect("advance", http(addr, "POST", "/cycle/advance", Some(&json!({ "cycle": cycle }))).0, 200)?;
        }
    }
    expect("advance past the end", http(addr, "POST", "/cycle/advance", None).0, 409)
}

fn service_equivalence(log: &Path) -> Outcome {
    let schema = AttributeSchema::default();
    let p = SynthParams { rng_seed: 11, ..Default::default() };
    let cfg = HarnessConfig { seed: 11, noise: 0.1, ..Default::default() };
    let protocol = Arc::new(Protocol::new(generate(&p, &schema).unwrap(), &schema, PropagationConfig::default(), cfg).unwrap());
    let expected = run_protocol(&protocol, &Mode::ALL).map_err(|e| e.to_string())?.reports;

    let options = || SessionOptions { log_path: Some(log.to_path_buf()), ..Default::default() };
    let first = Arc::new(Session::open(Arc::clone(&protocol), options()).map_err(|e| e.to_string())?);
    let addr = spawn_server(Arc::clone(&first));
    scripted_client(&protocol, addr)?;
    let (_, metrics) = http(addr, "GET", "/metrics", None);
    let live: Vec<EvalReport> = serde_json::from_value(metrics["data"].clone()).map_err(|e| e.to_string())?;
    let identical = serde_json::to_string(&live).unwrap() == serde_json::to_string(&expected).unwrap() && live == expected;

    let second = Arc::new(Session::open(Arc::clone(&protocol), options()).map_err(|e| e.to_string())?);
    let addr2 = spawn_server(Arc::clone(&second));
    let same_api = ["/session", "/metrics", "/propagations", "/queue?cycle=3"].iter().all(|path| {
        let (a, b) = (http(addr, "GET", path, None), http(addr2, "GET", path, None));
        a == b
    });
    let same_state = first.log() == second.log()
        && first.seeds() == second.seeds()
        && bits(first.scores().scores()) == bits(second.scores().scores())
        && first.reports() == second.reports()
        && first.history() == second.history()
        && first.summary() == second.summary();
    check(
        identical && same_api && same_state,
        format!(
            "live reports identical to in-process run: {identical}; restart replay of {} annotations: api {same_api}, state {same_state}",
            first.log().len()
        ),
    )
}

fn main() {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut failed = 0;
    let mut run = |name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let out = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match out {
            Ok(d) => println!("PASS  {name:<32} {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL  {name:<32} {d} [{secs:.1}s]");
            }
        }
    };
    run("propagation oracle equivalence", &mut propagation_oracle);
    run("geometric decay", &mut geometric_decay);
    run("bounds and frozen seeds", &mut bounds_and_frozen_seeds);
    run("convergence contract", &mut convergence_contract);
    run("graph-build equivalence", &mut graph_build_equivalence);
    run("metric oracles", &mut metric_oracles);
    run("gradient check", &mut gradient_check);
    let (runs, secs) = trend_runs();
    run("trend reproduction", &mut || trend(&runs, secs));
    run("progressive improvement", &mut || progression(&runs));
    run("calibration", &mut || calibration(&runs));
    let log = dir.path().join("annotations.jsonl");
    run("service equivalence and replay", &mut || service_equivalence(&log));
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
