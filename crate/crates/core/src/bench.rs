//! Latency and throughput harness.
//!
//! Every configuration is first checked against the per-column binary-search
//! reference; a mismatch aborts the whole report. Measured rounds visit the
//! configurations in a seeded random order so slow drift on the host is
//! spread evenly across them.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{IterationMethod, KernelCounters};
use crate::sparse::CsrMatrix;
use crate::tree::{InferOptions, PredictionSet, Predictor, XmrModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// The whole query matrix per call.
    Batch,
    /// One query per call.
    Online,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Batch => "batch",
            Mode::Online => "online",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(Mode::Batch),
            "online" => Ok(Mode::Online),
            other => Err(Error::InvalidConfig(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchSpec {
    pub methods: Vec<IterationMethod>,
    pub mscm: Vec<bool>,
    pub mode: Mode,
    pub beam: usize,
    pub topk: usize,
    pub threads: Vec<usize>,
    pub warmup: usize,
    pub measured: usize,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            methods: vec![IterationMethod::BinarySearch],
            mscm: vec![true, false],
            mode: Mode::Batch,
            beam: 10,
            topk: 10,
            threads: vec![1],
            warmup: 2,
            measured: 3,
            seed: 0,
        }
    }
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.measured < 3 {
            return Err(Error::InvalidConfig(
                "measured iterations must be at least 3".into(),
            ));
        }
        if self.methods.is_empty() || self.mscm.is_empty() || self.threads.is_empty() {
            return Err(Error::InvalidConfig("empty configuration matrix".into()));
        }
        if self.threads.contains(&0) {
            return Err(Error::InvalidConfig(
                "thread counts must be positive".into(),
            ));
        }
        Ok(())
    }

    fn configs(&self) -> Vec<InferOptions> {
        let mut out = Vec::new();
        for &workers in &self.threads {
            for &method in &self.methods {
                for &mscm in &self.mscm {
                    out.push(InferOptions {
                        beam: self.beam,
                        topk: self.topk,
                        method,
                        mscm,
                        workers,
                    });
                }
            }
        }
        out
    }
}

/// Times are milliseconds per query.
#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub method: IterationMethod,
    pub mscm: bool,
    pub threads: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub samples: usize,
    /// Baseline mean over MSCM mean for the same method and thread count.
    pub speedup: Option<f64>,
    pub chunk_loads: u64,
    pub emissions: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub mode: Mode,
    pub queries: usize,
    pub beam: usize,
    pub topk: usize,
    pub warmup: usize,
    pub measured: usize,
    pub rows: Vec<BenchRow>,
}

/// Nearest-rank percentile: the `⌈p/100 · n⌉`-th smallest sample.
pub fn percentile(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("percentile of an empty sample".into()));
    }
    if !(p > 0.0 && p < 100.0) {
        return Err(Error::InvalidConfig(format!(
            "percentile {p} outside (0, 100)"
        )));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    Ok(v[rank.clamp(1, v.len()) - 1])
}

struct Runner<'m> {
    options: InferOptions,
    predictor: Predictor<'m>,
    samples: Vec<f64>,
    counters: KernelCounters,
}

impl Runner<'_> {
    /// One pass over the queries; pushes per-query milliseconds.
    fn pass(
        &mut self,
        mode: Mode,
        batch: &CsrMatrix,
        singles: &[CsrMatrix],
        record: bool,
    ) -> Result<()> {
        match mode {
            Mode::Batch => {
                let t = Instant::now();
                let p = self.predictor.predict(batch)?;
                let ms = t.elapsed().as_secs_f64() * 1e3;
                std::hint::black_box(p);
                if record {
                    self.samples.push(ms / batch.rows().max(1) as f64);
                }
            }
            Mode::Online => {
                for q in singles {
                    let t = Instant::now();
                    let p = self.predictor.predict(q)?;
                    let ms = t.elapsed().as_secs_f64() * 1e3;
                    std::hint::black_box(p);
                    if record {
                        self.samples.push(ms);
                    }
                }
            }
        }
        Ok(())
    }
}

fn describe(o: &InferOptions) -> String {
    format!(
        "method={} mscm={} threads={}",
        o.method,
        if o.mscm { "on" } else { "off" },
        o.workers
    )
}

/// Runs every configuration of `spec` against `queries`.
pub fn run_bench(model: &XmrModel, queries: &CsrMatrix, spec: &BenchSpec) -> Result<BenchReport> {
    spec.validate()?;
    let reference = Predictor::new(
        model,
        InferOptions {
            method: IterationMethod::BinarySearch,
            mscm: false,
            workers: 1,
            beam: spec.beam,
            topk: spec.topk,
        },
    )?
    .predict(queries)?;

    let mut runners = Vec::new();
    for options in spec.configs() {
        let mut predictor = Predictor::new(model, options)?;
        let (preds, counters): (PredictionSet, KernelCounters) =
            predictor.predict_tallied(queries)?;
        if preds != reference {
            return Err(Error::PredictionMismatch(describe(&options)));
        }
        runners.push(Runner {
            options,
            predictor,
            samples: Vec::new(),
            counters,
        });
    }

    let singles: Vec<CsrMatrix> = match spec.mode {
        Mode::Batch => Vec::new(),
        Mode::Online => (0..queries.rows())
            .map(|q| queries.slice_rows(q, q + 1))
            .collect::<Result<_>>()?,
    };
    for r in runners.iter_mut() {
        for _ in 0..spec.warmup {
            r.pass(spec.mode, queries, &singles, false)?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..runners.len()).collect();
    for _ in 0..spec.measured {
        order.shuffle(&mut rng);
        for &i in &order {
            runners[i].pass(spec.mode, queries, &singles, true)?;
        }
    }

    let mut rows: Vec<BenchRow> = Vec::with_capacity(runners.len());
    for r in &runners {
        rows.push(BenchRow {
            method: r.options.method,
            mscm: r.options.mscm,
            threads: r.options.workers,
            mean_ms: r.samples.iter().sum::<f64>() / r.samples.len() as f64,
            p95_ms: percentile(&r.samples, 95.0)?,
            p99_ms: percentile(&r.samples, 99.0)?,
            samples: r.samples.len(),
            speedup: None,
            chunk_loads: r.counters.chunk_loads,
            emissions: r.counters.emissions,
        });
    }
    let baselines: Vec<(IterationMethod, usize, f64)> = rows
        .iter()
        .filter(|r| !r.mscm)
        .map(|r| (r.method, r.threads, r.mean_ms))
        .collect();
    for row in rows.iter_mut().filter(|r| r.mscm) {
        row.speedup = baselines
            .iter()
            .find(|b| b.0 == row.method && b.1 == row.threads)
            .map(|b| b.2 / row.mean_ms);
    }
    Ok(BenchReport {
        mode: spec.mode,
        queries: queries.rows(),
        beam: spec.beam,
        topk: spec.topk,
        warmup: spec.warmup,
        measured: spec.measured,
        rows,
    })
}

impl BenchReport {
    pub fn row(&self, method: IterationMethod, mscm: bool, threads: usize) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.mscm == mscm && r.threads == threads)
    }

    const HEADER: [&'static str; 10] = [
        "method",
        "mscm",
        "threads",
        "mean_ms",
        "p95_ms",
        "p99_ms",
        "samples",
        "speedup",
        "chunk_loads",
        "emissions",
    ];

    fn cells(&self) -> Vec<[String; 10]> {
        self.rows
            .iter()
            .map(|r| {
                [
                    r.method.to_string(),
                    if r.mscm { "on" } else { "off" }.to_string(),
                    r.threads.to_string(),
                    format!("{:.6}", r.mean_ms),
                    format!("{:.6}", r.p95_ms),
                    format!("{:.6}", r.p99_ms),
                    r.samples.to_string(),
                    r.speedup
                        .map_or_else(|| "-".to_string(), |s| format!("{s:.3}")),
                    r.chunk_loads.to_string(),
                    r.emissions.to_string(),
                ]
            })
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = Self::HEADER.join("\t");
        out.push('\n');
        for row in self.cells() {
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self) -> String {
        let cells = self.cells();
        let mut widths = Self::HEADER.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let _ = writeln!(
            out,
            "mode={} queries={} beam={} topk={} warmup={} measured={}",
            self.mode.name(),
            self.queries,
            self.beam,
            self.topk,
            self.warmup,
            self.measured
        );
        let line = |out: &mut String, row: &[&str]| {
            let parts: Vec<String> = row
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (c, w))| {
                    if i < 2 {
                        format!("{c:<w$}")
                    } else {
                        format!("{c:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &Self::HEADER);
        for row in &cells {
            let refs: Vec<&str> = row.iter().map(String::as_str).collect();
            line(&mut out, &refs);
        }
        out
    }
}
