//! Seeded synthetic models and query batches.
//!
//! Sibling columns share a common support: each chunk draws `⌈ρ·nnz⌉`
//! shared feature rows, and every column adds its own private rows up to
//! `nnz`. Weights are uniform in `[-1, 1]`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sparse::{CscMatrix, CsrMatrix};
use crate::tree::XmrModel;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneratorConfig {
    /// Tree layers including the root.
    pub depth: usize,
    /// Maximum children per cluster.
    pub branch: usize,
    pub dim: usize,
    pub labels: usize,
    /// Nonzeros per weight column.
    pub nnz: usize,
    /// Fraction of each column's support shared by its siblings.
    pub overlap: f64,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.depth < 2 {
            return bad(format!("depth {} must be at least 2", self.depth));
        }
        if self.branch == 0 {
            return bad("branching factor must be at least 1".into());
        }
        if self.dim == 0 || self.dim > u32::MAX as usize {
            return bad(format!("dim {} out of range", self.dim));
        }
        if self.nnz > self.dim {
            return bad(format!("nnz {} exceeds dim {}", self.nnz, self.dim));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return bad(format!("overlap {} outside [0, 1]", self.overlap));
        }
        if self.labels < self.branch {
            return bad(format!(
                "labels {} below branching factor {}",
                self.labels, self.branch
            ));
        }
        if capacity(self.branch, self.depth - 1) < self.labels {
            return bad(format!(
                "{} labels do not fit in depth {} with branching {}",
                self.labels, self.depth, self.branch
            ));
        }
        Ok(())
    }
}

/// `branch^levels`, saturating.
fn capacity(branch: usize, levels: usize) -> usize {
    let mut c: usize = 1;
    for _ in 0..levels {
        c = c.saturating_mul(branch);
    }
    c
}

/// Cluster counts per layer, root first, interpolated geometrically between
/// 1 and `labels` within the branching limits.
pub fn layer_sizes(depth: usize, branch: usize, labels: usize) -> Vec<usize> {
    let mut sizes = vec![1usize; depth];
    sizes[depth - 1] = labels;
    for l in 1..depth - 1 {
        let below = capacity(branch, depth - 1 - l);
        let lower = labels.div_ceil(below).max(sizes[l - 1]);
        let upper = sizes[l - 1].saturating_mul(branch).min(labels);
        let geo = (labels as f64).powf(l as f64 / (depth - 1) as f64).round() as usize;
        sizes[l] = geo.clamp(lower, upper.max(lower));
    }
    sizes
}

/// Splits `children` clusters over `parents` as evenly as possible.
fn child_offsets(parents: usize, children: usize) -> Vec<usize> {
    let (base, extra) = (children / parents, children % parents);
    let mut offs = Vec::with_capacity(parents + 1);
    offs.push(0);
    for p in 0..parents {
        offs.push(offs[p] + base + usize::from(p < extra));
    }
    offs
}

/// Draws `count` distinct indices from `0..dim` excluding the sorted `taken`.
fn sample_excluding(rng: &mut ChaCha8Rng, dim: usize, taken: &[u32], count: usize) -> Vec<u32> {
    sample(rng, dim - taken.len(), count)
        .into_iter()
        .map(|v| {
            let mut v = v as u32;
            for &t in taken {
                if t <= v {
                    v += 1;
                } else {
                    break;
                }
            }
            v
        })
        .collect()
}

pub fn generate_model(cfg: &GeneratorConfig) -> Result<XmrModel> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sizes = layer_sizes(cfg.depth, cfg.branch, cfg.labels);
    let shared_count = ((cfg.overlap * cfg.nnz as f64).ceil() as usize).min(cfg.nnz);
    let mut layers = Vec::with_capacity(cfg.depth - 1);
    for l in 1..cfg.depth {
        let bounds = child_offsets(sizes[l - 1], sizes[l]);
        let mut offsets = vec![0usize];
        let mut rows = Vec::with_capacity(sizes[l] * cfg.nnz);
        let mut vals = Vec::with_capacity(sizes[l] * cfg.nnz);
        for chunk in bounds.windows(2) {
            let mut shared: Vec<u32> = sample(&mut rng, cfg.dim, shared_count)
                .into_iter()
                .map(|v| v as u32)
                .collect();
            shared.sort_unstable();
            for _ in chunk[0]..chunk[1] {
                let mut support =
                    sample_excluding(&mut rng, cfg.dim, &shared, cfg.nnz - shared_count);
                support.extend_from_slice(&shared);
                support.sort_unstable();
                for k in support {
                    rows.push(k);
                    vals.push(rng.gen_range(-1.0f32..=1.0));
                }
                offsets.push(rows.len());
            }
        }
        let w = CscMatrix::new(cfg.dim, sizes[l], offsets, rows, vals)?;
        layers.push((w, bounds));
    }
    XmrModel::new(cfg.dim, layers)
}

/// `n` queries with `nnz` distinct features each and values in `(0, 1]`.
pub fn generate_queries(n: usize, dim: usize, nnz: usize, seed: u64) -> Result<CsrMatrix> {
    if nnz > dim {
        return Err(Error::InvalidConfig(format!(
            "query nnz {nnz} exceeds dim {dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut offsets = vec![0usize];
    let mut idx = Vec::with_capacity(n * nnz);
    let mut vals = Vec::with_capacity(n * nnz);
    for _ in 0..n {
        let mut s: Vec<u32> = sample(&mut rng, dim, nnz)
            .into_iter()
            .map(|v| v as u32)
            .collect();
        s.sort_unstable();
        for k in s {
            idx.push(k);
            vals.push(1.0 - rng.gen::<f32>());
        }
        offsets.push(idx.len());
    }
    CsrMatrix::new(n, dim, offsets, idx, vals)
}
