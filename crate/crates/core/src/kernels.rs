//! Sparse vector × chunk products and their per-column baselines.
//!
//! Every kernel visits the intersection `nz(x) ∩ nz(K)` in ascending feature
//! order and accumulates `x_k * w_k` into a zero-initialised result, so all
//! four iteration methods, chunked or per column, produce bitwise-identical
//! values.

use std::fmt;
use std::str::FromStr;

use rustc_hash::FxHashMap;
use serde::Serialize;

use crate::chunked::Chunk;
use crate::error::{Error, Result};
use crate::sparse::{lower_bound, CscMatrix, SparseVec};

/// How the support intersection between a query and a chunk (or column) is found.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum IterationMethod {
    /// Two cursors marching one step at a time.
    MergeJoin,
    /// Two cursors; the one behind jumps ahead by a lower-bound search.
    BinarySearch,
    /// Walk the query and probe a hash index of the chunk rows.
    HashLookup,
    /// Walk the query and probe a dense feature-indexed array.
    DenseLookup,
}

impl IterationMethod {
    pub const ALL: [IterationMethod; 4] = [
        IterationMethod::MergeJoin,
        IterationMethod::BinarySearch,
        IterationMethod::HashLookup,
        IterationMethod::DenseLookup,
    ];

    /// Short name used on the command line.
    pub fn name(self) -> &'static str {
        match self {
            IterationMethod::MergeJoin => "march",
            IterationMethod::BinarySearch => "bsearch",
            IterationMethod::HashLookup => "hash",
            IterationMethod::DenseLookup => "dense",
        }
    }
}

impl fmt::Display for IterationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IterationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "march" | "merge" => Ok(IterationMethod::MergeJoin),
            "bsearch" | "binary" => Ok(IterationMethod::BinarySearch),
            "hash" => Ok(IterationMethod::HashLookup),
            "dense" => Ok(IterationMethod::DenseLookup),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

/// Work counters. The unit type `()` is the zero-cost no-op tally.
pub trait Tally {
    /// One step of a cursor-based intersection.
    #[inline]
    fn visit(&mut self) {}
    /// One hash or dense-array probe.
    #[inline]
    fn probe(&mut self) {}
    /// One intersection pair emitted.
    #[inline]
    fn emit(&mut self) {}
    /// A chunk (or column index) brought in for a run of blocks.
    #[inline]
    fn chunk_load(&mut self) {}
    /// Folds another worker's counts into this one.
    #[inline]
    fn absorb(&mut self, _other: Self)
    where
        Self: Sized,
    {
    }
}

impl Tally for () {}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct KernelCounters {
    pub coord_visits: u64,
    pub probes: u64,
    pub emissions: u64,
    pub chunk_loads: u64,
}

impl KernelCounters {
    pub fn merge(&mut self, other: &KernelCounters) {
        self.coord_visits += other.coord_visits;
        self.probes += other.probes;
        self.emissions += other.emissions;
        self.chunk_loads += other.chunk_loads;
    }
}

impl Tally for KernelCounters {
    #[inline]
    fn visit(&mut self) {
        self.coord_visits += 1;
    }
    #[inline]
    fn probe(&mut self) {
        self.probes += 1;
    }
    #[inline]
    fn emit(&mut self) {
        self.emissions += 1;
    }
    #[inline]
    fn chunk_load(&mut self) {
        self.chunk_loads += 1;
    }
    fn absorb(&mut self, other: Self) {
        self.merge(&other);
    }
}

const SENTINEL: u32 = u32::MAX;

/// Reusable dense feature → position array for dense lookup.
///
/// Between uses every slot holds the sentinel. Loading records the touched
/// slots so clearing costs `O(nnz)` rather than `O(d)`.
#[derive(Clone, Debug)]
pub struct DenseScratch {
    slots: Vec<u32>,
    touched: Vec<u32>,
    // Address of the loaded chunk, for debug checks only.
    owner: usize,
}

impl DenseScratch {
    pub fn new(dim: usize) -> Self {
        Self {
            slots: vec![SENTINEL; dim],
            touched: Vec::new(),
            owner: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.slots.len()
    }

    /// Maps each nonzero row of `chunk` to its position.
    pub fn load_chunk(&mut self, chunk: &Chunk, matrix_dim: usize) -> Result<()> {
        self.check_dim(matrix_dim)?;
        debug_assert!(
            self.touched.is_empty(),
            "scratch loaded twice without clear"
        );
        for (pos, &k) in chunk.row_ids().iter().enumerate() {
            self.slots[k as usize] = pos as u32;
        }
        self.touched.extend_from_slice(chunk.row_ids());
        self.owner = chunk as *const Chunk as usize;
        Ok(())
    }

    /// Maps each nonzero of `x` to its position (per-column baseline).
    pub fn load_vector(&mut self, x: SparseVec<'_>) -> Result<()> {
        self.check_dim(x.dim())?;
        debug_assert!(
            self.touched.is_empty(),
            "scratch loaded twice without clear"
        );
        for (pos, &k) in x.indices().iter().enumerate() {
            self.slots[k as usize] = pos as u32;
        }
        self.touched.extend_from_slice(x.indices());
        self.owner = x.indices().as_ptr() as usize;
        Ok(())
    }

    /// Resets every touched slot to the sentinel.
    pub fn clear(&mut self) {
        for &k in &self.touched {
            self.slots[k as usize] = SENTINEL;
        }
        self.touched.clear();
        self.owner = 0;
    }

    #[inline]
    pub fn get(&self, feature: u32) -> Option<usize> {
        match self.slots[feature as usize] {
            SENTINEL => None,
            p => Some(p as usize),
        }
    }

    /// Number of slots written by the current load.
    pub fn touched(&self) -> usize {
        self.touched.len()
    }

    /// True when every slot holds the sentinel (`O(d)`; for tests).
    pub fn is_clear(&self) -> bool {
        self.touched.is_empty() && self.slots.iter().all(|&s| s == SENTINEL)
    }

    fn check_dim(&self, need: usize) -> Result<()> {
        if self.slots.len() < need {
            return Err(Error::ScratchTooSmall {
                have: self.slots.len(),
                need,
            });
        }
        Ok(())
    }
}

/// Free-function forms of the scratch load and clear.
pub fn load_scratch(chunk: &Chunk, matrix_dim: usize, scratch: &mut DenseScratch) -> Result<()> {
    scratch.load_chunk(chunk, matrix_dim)
}

pub fn clear_scratch(scratch: &mut DenseScratch) {
    scratch.clear()
}

/// Calls `emit(x_value, row_position)` for each `k ∈ nz(x) ∩ nz(chunk)` in
/// ascending `k`.
///
/// `DenseLookup` requires `scratch` loaded with this chunk; `HashLookup`
/// requires the chunk's hash index.
#[inline]
pub fn for_each_intersection<T: Tally, F: FnMut(f32, usize)>(
    x: SparseVec<'_>,
    chunk: &Chunk,
    method: IterationMethod,
    scratch: Option<&DenseScratch>,
    tally: &mut T,
    mut emit: F,
) -> Result<()> {
    let (xi, xv) = (x.indices(), x.values());
    let rows = chunk.row_ids();
    match method {
        IterationMethod::MergeJoin => {
            let (mut i, mut j) = (0, 0);
            while i < xi.len() && j < rows.len() {
                tally.visit();
                let (a, b) = (xi[i], rows[j]);
                if a == b {
                    tally.emit();
                    emit(xv[i], j);
                    i += 1;
                    j += 1;
                } else if a < b {
                    i += 1;
                } else {
                    j += 1;
                }
            }
        }
        IterationMethod::BinarySearch => {
            let (mut i, mut j) = (0, 0);
            while i < xi.len() && j < rows.len() {
                tally.visit();
                let (a, b) = (xi[i], rows[j]);
                if a == b {
                    tally.emit();
                    emit(xv[i], j);
                    i += 1;
                    j += 1;
                } else if a < b {
                    i += lower_bound(&xi[i..], b);
                } else {
                    j += lower_bound(&rows[j..], a);
                }
            }
        }
        IterationMethod::HashLookup => {
            let index = chunk.row_index().ok_or(Error::MissingHashIndex)?;
            for (&k, &v) in xi.iter().zip(xv) {
                tally.probe();
                if let Some(&pos) = index.get(&k) {
                    tally.emit();
                    emit(v, pos as usize);
                }
            }
        }
        IterationMethod::DenseLookup => {
            let scratch = scratch.ok_or(Error::MissingScratch)?;
            if scratch.dim() < x.dim() {
                return Err(Error::ScratchTooSmall {
                    have: scratch.dim(),
                    need: x.dim(),
                });
            }
            debug_assert_eq!(
                scratch.owner, chunk as *const Chunk as usize,
                "scratch is not loaded with this chunk"
            );
            for (&k, &v) in xi.iter().zip(xv) {
                tally.probe();
                if let Some(pos) = scratch.get(k) {
                    tally.emit();
                    emit(v, pos);
                }
            }
        }
    }
    Ok(())
}

/// Collects the intersection stream as `(feature, x_value, row_position)`.
pub fn intersect_iter(
    x: SparseVec<'_>,
    chunk: &Chunk,
    method: IterationMethod,
    scratch: Option<&DenseScratch>,
) -> Result<Vec<(u32, f32, usize)>> {
    let mut out = Vec::new();
    for_each_intersection(x, chunk, method, scratch, &mut (), |v, pos| {
        out.push((chunk.row_ids()[pos], v, pos))
    })?;
    Ok(out)
}

/// Writes `x · chunk` into `out` (length = chunk width).
#[inline]
pub fn vector_chunk_product_into<T: Tally>(
    x: SparseVec<'_>,
    chunk: &Chunk,
    method: IterationMethod,
    scratch: Option<&DenseScratch>,
    tally: &mut T,
    out: &mut [f32],
) -> Result<()> {
    debug_assert_eq!(out.len(), chunk.width());
    out.fill(0.0);
    for_each_intersection(x, chunk, method, scratch, tally, |xv, pos| {
        let (cols, vals) = chunk.row(pos);
        for (&c, &w) in cols.iter().zip(vals) {
            out[c as usize] += xv * w;
        }
    })
}

/// `x · chunk` as a dense vector of the chunk's width.
pub fn vector_chunk_product(
    x: SparseVec<'_>,
    chunk: &Chunk,
    method: IterationMethod,
    scratch: Option<&DenseScratch>,
) -> Result<Vec<f32>> {
    let mut out = vec![0.0; chunk.width()];
    vector_chunk_product_into(x, chunk, method, scratch, &mut (), &mut out)?;
    Ok(out)
}

/// Per-column hash indices (feature → position within the column), the
/// unchunked layout of hash-based baselines.
#[derive(Clone, Debug)]
pub struct ColumnHashIndex {
    maps: Vec<FxHashMap<u32, u32>>,
}

impl ColumnHashIndex {
    pub fn build(w: &CscMatrix) -> Self {
        let maps = (0..w.cols())
            .map(|j| {
                let col = w.col_unchecked(j);
                let mut m = FxHashMap::with_capacity_and_hasher(col.nnz(), Default::default());
                for (p, &k) in col.indices().iter().enumerate() {
                    m.insert(k, p as u32);
                }
                m
            })
            .collect();
        Self { maps }
    }

    pub fn entries(&self) -> usize {
        self.maps.iter().map(|m| m.len()).sum()
    }
}

/// Auxiliary lookup structures for [`baseline_column_dot`].
#[derive(Clone, Copy, Default)]
pub struct BaselineAux<'a> {
    pub column_hash: Option<&'a ColumnHashIndex>,
    /// Dense scratch already loaded with the query (see [`DenseScratch::load_vector`]).
    pub query_scratch: Option<&'a DenseScratch>,
}

/// Inner product of `x` with column `col` of `w`, one column at a time.
///
/// * `MergeJoin`, `BinarySearch`: cursor intersection of `x` and the column.
/// * `HashLookup`: walk `x`, probe the column's own hash index.
/// * `DenseLookup`: walk the column, probe the query loaded into a dense
///   array once per query.
#[inline]
pub fn baseline_column_dot<T: Tally>(
    x: SparseVec<'_>,
    w: &CscMatrix,
    col: usize,
    method: IterationMethod,
    aux: BaselineAux<'_>,
    tally: &mut T,
) -> Result<f32> {
    if x.dim() != w.rows() {
        return Err(Error::DimensionMismatch {
            expected: w.rows(),
            actual: x.dim(),
        });
    }
    if col >= w.cols() {
        return Err(Error::IndexOutOfRange {
            index: col,
            bound: w.cols(),
        });
    }
    let column = w.col_unchecked(col);
    let (xi, xv) = (x.indices(), x.values());
    let (wi, wv) = (column.indices(), column.values());
    let mut z = 0.0f32;
    match method {
        IterationMethod::MergeJoin => {
            let (mut i, mut j) = (0, 0);
            while i < xi.len() && j < wi.len() {
                tally.visit();
                let (a, b) = (xi[i], wi[j]);
                if a == b {
                    tally.emit();
                    z += xv[i] * wv[j];
                    i += 1;
                    j += 1;
                } else if a < b {
                    i += 1;
                } else {
                    j += 1;
                }
            }
        }
        IterationMethod::BinarySearch => {
            let (mut i, mut j) = (0, 0);
            while i < xi.len() && j < wi.len() {
                tally.visit();
                let (a, b) = (xi[i], wi[j]);
                if a == b {
                    tally.emit();
                    z += xv[i] * wv[j];
                    i += 1;
                    j += 1;
                } else if a < b {
                    i += lower_bound(&xi[i..], b);
                } else {
                    j += lower_bound(&wi[j..], a);
                }
            }
        }
        IterationMethod::HashLookup => {
            let index = aux.column_hash.ok_or(Error::MissingHashIndex)?;
            let map = &index.maps[col];
            for (&k, &v) in xi.iter().zip(xv) {
                tally.probe();
                if let Some(&p) = map.get(&k) {
                    tally.emit();
                    z += v * wv[p as usize];
                }
            }
        }
        IterationMethod::DenseLookup => {
            let scratch = aux.query_scratch.ok_or(Error::MissingScratch)?;
            if scratch.dim() < x.dim() {
                return Err(Error::ScratchTooSmall {
                    have: scratch.dim(),
                    need: x.dim(),
                });
            }
            debug_assert_eq!(
                scratch.owner,
                xi.as_ptr() as usize,
                "scratch not loaded with x"
            );
            for (&k, &w) in wi.iter().zip(wv) {
                tally.probe();
                if let Some(p) = scratch.get(k) {
                    tally.emit();
                    z += xv[p] * w;
                }
            }
        }
    }
    Ok(z)
}
