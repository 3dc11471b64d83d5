//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails for a reason other than host hardware.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xmr_mscm::bench::{run_bench, BenchSpec, Mode};
use xmr_mscm::kernels::{intersect_iter, vector_chunk_product_into};
use xmr_mscm::persist::{load_model, save_model};
use xmr_mscm::{
    generate_model, generate_queries, infer, select_top_b, ChunkedWeightMatrix, CscMatrix,
    CsrMatrix, DenseScratch, GeneratorConfig, InferOptions, IterationMethod, KernelCounters,
    PredictionSet, SparseVector, XmrModel,
};

enum Outcome {
    Pass(String),
    Fail(String),
    /// Fails only because the host lacks the hardware the check needs.
    HostBound(String),
}

fn check(name: &str, f: impl FnOnce() -> Outcome) -> Outcome {
    let t = Instant::now();
    let out = f();
    let secs = t.elapsed().as_secs_f64();
    match &out {
        Outcome::Pass(d) => println!("PASS  {name}: {d} [{secs:.1}s]"),
        Outcome::Fail(d) => println!("FAIL  {name}: {d} [{secs:.1}s]"),
        Outcome::HostBound(d) => println!("FAIL  {name}: {d} (host-bound) [{secs:.1}s]"),
    }
    out
}

fn outcome(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn random_config(rng: &mut ChaCha8Rng, seed: u64) -> GeneratorConfig {
    let branch: usize = [2, 8, 32][rng.gen_range(0..3)];
    let depth = rng.gen_range(2..=4usize);
    let cap = branch.pow(depth as u32 - 1).min(1024);
    let labels = rng.gen_range(branch..=cap);
    let dim = rng.gen_range(20..=500);
    GeneratorConfig {
        depth,
        branch,
        dim,
        labels,
        nnz: rng.gen_range(1..=dim.min(40)),
        overlap: [0.0, 0.5, 1.0][rng.gen_range(0..3)],
        seed,
    }
}

fn corpus(models: usize) -> Vec<(GeneratorConfig, XmrModel, CsrMatrix)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..models)
        .map(|i| {
            let cfg = random_config(&mut rng, i as u64);
            let mut m = generate_model(&cfg).expect("generator");
            m.build_hash_indices();
            let qnnz = rng.gen_range(1..=cfg.dim.min(60));
            let q = generate_queries(50, cfg.dim, qnnz, 10_000 + i as u64).expect("queries");
            (cfg, m, q)
        })
        .collect()
}

fn configs(beam: usize, topk: usize) -> Vec<InferOptions> {
    let mut v = Vec::new();
    for method in IterationMethod::ALL {
        for mscm in [true, false] {
            v.push(InferOptions {
                beam,
                topk,
                method,
                mscm,
                workers: 1,
            });
        }
    }
    v
}

fn equivalence(corpus: &[(GeneratorConfig, XmrModel, CsrMatrix)]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut runs = 0;
    for (cfg, m, q) in corpus {
        let beam = rng.gen_range(1..=20);
        let topk = rng.gen_range(1..=beam);
        let all = configs(beam, topk);
        let reference = infer(m, q, all[0]).expect("infer");
        for o in &all[1..] {
            let p = infer(m, q, *o).expect("infer");
            runs += 1;
            if p != reference {
                return Outcome::Fail(format!("{cfg:?} differs under {o:?}"));
            }
        }
    }
    Outcome::Pass(format!(
        "{} models x 50 queries, {runs} configuration comparisons bitwise equal",
        corpus.len()
    ))
}

/// Dense per-layer weights `w[k * cols + j]` with chunk boundaries.
struct DenseLayers(Vec<(usize, Vec<f32>, Vec<usize>)>);

impl DenseLayers {
    fn new(m: &XmrModel) -> Self {
        Self(
            m.layers()
                .iter()
                .map(|layer| {
                    let w = layer.csc();
                    let cols = w.cols();
                    let mut dense = vec![0.0f32; w.rows() * cols];
                    for (k, j, v) in w.triplets() {
                        dense[k as usize * cols + j as usize] = v;
                    }
                    (cols, dense, layer.chunked().col_offsets().to_vec())
                })
                .collect(),
        )
    }

    /// Sigmoid path products, accumulating each column in ascending feature
    /// order.
    fn scores(&self, q: &CsrMatrix, row: usize) -> Vec<f32> {
        let x = q.row(row).unwrap();
        let mut scores = vec![1.0f32];
        for (cols, dense, parents) in &self.0 {
            let mut next = vec![0.0f32; *cols];
            for p in 0..scores.len() {
                for j in parents[p]..parents[p + 1] {
                    let mut acc = 0.0f32;
                    for (&k, &v) in x.indices().iter().zip(x.values()) {
                        acc += v * dense[k as usize * cols + j];
                    }
                    next[j] = (1.0 / (1.0 + (-acc).exp())) * scores[p];
                }
            }
            scores = next;
        }
        scores
    }
}

fn oracle_topk(scores: &[f32], k: usize) -> Vec<(u32, f32)> {
    let mut v: Vec<(u32, f32)> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| (i as u32, s))
        .collect();
    v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    v.truncate(k);
    v
}

fn oracle_exactness(corpus: &[(GeneratorConfig, XmrModel, CsrMatrix)]) -> Outcome {
    let mut checked = 0;
    for (cfg, m, q) in corpus {
        let width = m.cluster_counts().into_iter().max().unwrap();
        let topk = width.min(10);
        let dense = DenseLayers::new(m);
        let expected: Vec<_> = (0..q.rows())
            .map(|r| oracle_topk(&dense.scores(q, r), topk))
            .collect();
        for o in configs(width, topk) {
            let p = infer(m, q, o).expect("infer");
            for (r, expect) in expected.iter().enumerate() {
                let got = p.row(r);
                let same = got.len() == expect.len()
                    && got
                        .iter()
                        .zip(expect)
                        .all(|(a, b)| a.0 == b.0 && a.1.to_bits() == b.1.to_bits());
                if !same {
                    return Outcome::Fail(format!(
                        "{cfg:?} query {r} under {o:?}: {got:?} vs {expect:?}"
                    ));
                }
                checked += 1;
            }
        }
    }
    Outcome::Pass(format!(
        "{checked} (query, configuration) rankings equal the dense oracle bitwise"
    ))
}

fn desk_model() -> (XmrModel, CsrMatrix) {
    let cfg = GeneratorConfig {
        depth: 4,
        branch: 32,
        dim: 10_000,
        labels: 30_000,
        nnz: 50,
        overlap: 0.8,
        seed: 11,
    };
    let mut m = generate_model(&cfg).expect("generator");
    m.build_hash_indices();
    let q = generate_queries(10_000, cfg.dim, 100, 12).expect("queries");
    (m, q)
}

fn desk_speedup(m: &XmrModel, q: &CsrMatrix) -> Outcome {
    let spec = BenchSpec {
        methods: vec![IterationMethod::BinarySearch, IterationMethod::HashLookup],
        mscm: vec![true, false],
        mode: Mode::Batch,
        threads: vec![1],
        warmup: 1,
        measured: 3,
        ..BenchSpec::default()
    };
    let r = match run_bench(m, q, &spec) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for method in spec.methods {
        let on = r.row(method, true, 1).unwrap();
        let off = r.row(method, false, 1).unwrap();
        let ratio = on.mean_ms / off.mean_ms;
        ok &= ratio < 0.67;
        parts.push(format!(
            "{method} {:.4}/{:.4} ms/query ratio {ratio:.3}",
            on.mean_ms, off.mean_ms
        ));
    }
    outcome(ok, format!("{} (need < 0.67)", parts.join(", ")))
}

fn trend_speedup(branch: usize, depth: usize, run: u64) -> f64 {
    let cfg = GeneratorConfig {
        depth,
        branch,
        dim: 5_000,
        labels: 4_096,
        nnz: 50,
        overlap: 0.8,
        seed: 100 + run,
    };
    let m = generate_model(&cfg).expect("generator");
    let q = generate_queries(2_000, cfg.dim, 100, 200 + run).expect("queries");
    let spec = BenchSpec {
        warmup: 1,
        measured: 3,
        seed: run,
        ..BenchSpec::default()
    };
    let r = run_bench(&m, &q, &spec).expect("bench");
    r.row(IterationMethod::BinarySearch, true, 1)
        .unwrap()
        .speedup
        .unwrap()
}

fn median3(mut v: [f64; 3]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[1]
}

fn branching_trend() -> Outcome {
    let wide = median3([0, 1, 2].map(|r| trend_speedup(32, 4, r)));
    let narrow = median3([0, 1, 2].map(|r| trend_speedup(2, 13, r)));
    outcome(
        wide >= narrow,
        format!(
            "median speedup B=32 {wide:.3} vs B=2 {narrow:.3} (L=4096, d=5000, bsearch, batch)"
        ),
    )
}

fn thread_invariance(m: &XmrModel, q: &CsrMatrix) -> Outcome {
    let q = q.slice_rows(0, 2_000).unwrap();
    for method in IterationMethod::ALL {
        for mscm in [true, false] {
            let run = |workers| {
                infer(
                    m,
                    &q,
                    InferOptions {
                        method,
                        mscm,
                        workers,
                        ..InferOptions::default()
                    },
                )
                .unwrap()
            };
            let one: PredictionSet = run(1);
            for w in [2, 4] {
                if run(w) != one {
                    return Outcome::Fail(format!("{method} mscm={mscm} differs at {w} workers"));
                }
            }
        }
    }
    Outcome::Pass("2000 queries, 8 configurations, workers 1/2/4 bitwise equal".into())
}

fn thread_scaling(m: &XmrModel, q: &CsrMatrix) -> Outcome {
    let spec = BenchSpec {
        methods: vec![IterationMethod::HashLookup],
        mscm: vec![true],
        threads: vec![1, 4],
        warmup: 1,
        measured: 3,
        ..BenchSpec::default()
    };
    let r = match run_bench(m, q, &spec) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let one = r.row(IterationMethod::HashLookup, true, 1).unwrap().mean_ms;
    let four = r.row(IterationMethod::HashLookup, true, 4).unwrap().mean_ms;
    let scale = one / four;
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    let detail = format!(
        "4-worker throughput {scale:.2}x single worker (need >= 2), {cpus} CPU(s) available"
    );
    if scale >= 2.0 {
        Outcome::Pass(detail)
    } else if cpus < 4 {
        Outcome::HostBound(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn random_csc(rng: &mut ChaCha8Rng, d: usize, cols: usize, density: f64) -> CscMatrix {
    let mut t = Vec::new();
    for j in 0..cols {
        for k in 0..d {
            if rng.gen_bool(density) {
                t.push((k as u32, j as u32, rng.gen_range(-1.0f32..1.0)));
            }
        }
    }
    CscMatrix::from_triplets(d, cols, &t).unwrap()
}

fn random_vector(rng: &mut ChaCha8Rng, d: usize, density: f64) -> SparseVector {
    let mut pairs = Vec::new();
    for k in 0..d as u32 {
        if rng.gen_bool(density) {
            pairs.push((k, rng.gen_range(-1.0f32..1.0)));
        }
    }
    SparseVector::from_pairs(d, &pairs).unwrap()
}

fn random_chunk(rng: &mut ChaCha8Rng, d: usize) -> ChunkedWeightMatrix {
    let width = rng.gen_range(1..=32);
    let density = rng.gen_range(0.0..0.3);
    let w = random_csc(rng, d, width, density);
    ChunkedWeightMatrix::from_csc(&w, &[0, width])
        .unwrap()
        .with_hash_index()
}

fn scratch_hygiene() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let d = 300;
    let mut s = DenseScratch::new(d);
    for i in 0..10_000 {
        for _ in 0..rng.gen_range(1..4) {
            if rng.gen_bool(0.5) {
                let m = random_chunk(&mut rng, d);
                s.load_chunk(&m.chunks()[0], d).unwrap();
                for &k in m.chunks()[0].row_ids() {
                    if s.get(k).is_none() {
                        return Outcome::Fail(format!("sequence {i}: loaded row {k} missing"));
                    }
                }
            } else {
                let density = rng.gen_range(0.0..0.3);
                let x = random_vector(&mut rng, d, density);
                s.load_vector(x.view()).unwrap();
            }
            s.clear();
        }
        if !s.is_clear() {
            return Outcome::Fail(format!("sequence {i} left a non-sentinel slot"));
        }
    }
    Outcome::Pass("10000 random load/clear sequences end all-sentinel".into())
}

fn intersection_sets() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let d = 400;
    let mut scratch = DenseScratch::new(d);
    for i in 0..10_000 {
        let m = random_chunk(&mut rng, d);
        let chunk = &m.chunks()[0];
        let density = rng.gen_range(0.0..0.4);
        let x = random_vector(&mut rng, d, density);
        let a: BTreeSet<u32> = x.view().indices().iter().copied().collect();
        let b: BTreeSet<u32> = chunk.row_ids().iter().copied().collect();
        let expect: Vec<u32> = a.intersection(&b).copied().collect();
        scratch.load_chunk(chunk, d).unwrap();
        for method in IterationMethod::ALL {
            let got = intersect_iter(x.view(), chunk, method, Some(&scratch)).unwrap();
            let keys: Vec<u32> = got.iter().map(|e| e.0).collect();
            if keys != expect {
                scratch.clear();
                return Outcome::Fail(format!("pair {i}, {method}: {keys:?} vs {expect:?}"));
            }
        }
        scratch.clear();
    }
    Outcome::Pass("10000 random pairs x 4 methods match brute-force set intersection".into())
}

fn top_b_selection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..10_000 {
        let n = rng.gen_range(0..80);
        let row: Vec<(u32, f32)> = (0..n)
            .map(|j| (j as u32, (rng.gen_range(0..20) as f32) / 19.0))
            .collect();
        let b = rng.gen_range(1..=40);
        let mut sorted = row.clone();
        sorted.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
        sorted.truncate(b);
        sorted.sort_by_key(|e| e.0);
        if select_top_b(&row, b) != sorted {
            return Outcome::Fail(format!("row {i} (n={n}, b={b})"));
        }
    }
    Outcome::Pass("10000 random rows with ties match the full-sort oracle".into())
}

fn persistence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let root = tempfile::tempdir().unwrap();
    for i in 0..100 {
        let cfg = random_config(&mut rng, 500 + i);
        let m = generate_model(&cfg).unwrap();
        let dir = root.path().join(format!("m{i}"));
        save_model(&m, &dir).unwrap();
        match load_model(&dir) {
            Ok(back) if back == m => {}
            Ok(_) => return Outcome::Fail(format!("{cfg:?} changed in round trip")),
            Err(e) => return Outcome::Fail(format!("{cfg:?}: {e}")),
        }
    }
    Outcome::Pass("100 random models round-trip bitwise".into())
}

fn counters() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let d = 500;
    let mut max_visit_ratio = 0.0f64;
    for i in 0..1_000 {
        let m = random_chunk(&mut rng, d);
        let chunk = &m.chunks()[0];
        let density = rng.gen_range(0.0..0.4);
        let x = random_vector(&mut rng, d, density);
        let nnz_x = x.nnz() as u64;
        let nnz_k = chunk.nnz_rows() as u64;
        let mut out = vec![0.0; chunk.width()];

        let mut h = KernelCounters::default();
        vector_chunk_product_into(
            x.view(),
            chunk,
            IterationMethod::HashLookup,
            None,
            &mut h,
            &mut out,
        )
        .unwrap();
        if h.probes != nnz_x {
            return Outcome::Fail(format!(
                "pair {i}: {} hash probes, nnz_x = {nnz_x}",
                h.probes
            ));
        }
        let mut mj = KernelCounters::default();
        vector_chunk_product_into(
            x.view(),
            chunk,
            IterationMethod::MergeJoin,
            None,
            &mut mj,
            &mut out,
        )
        .unwrap();
        if mj.coord_visits > nnz_x + nnz_k {
            return Outcome::Fail(format!(
                "pair {i}: {} merge visits > nnz_x + nnz_K = {}",
                mj.coord_visits,
                nnz_x + nnz_k
            ));
        }
        if nnz_x + nnz_k > 0 {
            max_visit_ratio = max_visit_ratio.max(mj.coord_visits as f64 / (nnz_x + nnz_k) as f64);
        }
    }
    Outcome::Pass(format!(
        "1000 pairs: hash probes = nnz_x, merge visits <= nnz_x + nnz_K (max ratio {max_visit_ratio:.3})"
    ))
}

fn main() {
    // `cargo test -- --list` and filters pass arguments; there is one test.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let corpus = corpus(200);
    let (desk_m, desk_q) = desk_model();
    let results = vec![
        check("1 exact equivalence", || equivalence(&corpus)),
        check("2 oracle exactness", || oracle_exactness(&corpus)),
        check("3 desk-scale speedup", || desk_speedup(&desk_m, &desk_q)),
        check("4 branching-factor trend", branching_trend),
        check("5a thread invariance", || {
            thread_invariance(&desk_m, &desk_q)
        }),
        check("5b thread scaling", || thread_scaling(&desk_m, &desk_q)),
        check("6a dense scratch hygiene", scratch_hygiene),
        check("6b intersection emission sets", intersection_sets),
        check("6c top-b selection", top_b_selection),
        check("6d persistence round trip", persistence),
        check("7 complexity counters", counters),
    ];
    let failed = results
        .iter()
        .filter(|r| matches!(r, Outcome::Fail(_)))
        .count();
    let host = results
        .iter()
        .filter(|r| matches!(r, Outcome::HostBound(_)))
        .count();
    let passed = results.len() - failed - host;
    println!(
        "acceptance: {passed} passed, {failed} failed, {host} failed for lack of host hardware"
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
