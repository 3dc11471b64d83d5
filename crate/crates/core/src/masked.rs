//! Masked sparse products `A = M ⊙ (X W)` over block masks.
//!
//! Beam prolongation activates whole chunks per query, so the mask is a set
//! of `(query, chunk)` blocks. The output pattern is known from the mask
//! before any arithmetic, so storage is allocated once and each block owns a
//! disjoint slice of it; workers write their blocks without locking.

use crate::chunked::ChunkedWeightMatrix;
use crate::error::{Error, Result};
use crate::kernels::{
    baseline_column_dot, vector_chunk_product_into, BaselineAux, ColumnHashIndex, DenseScratch,
    IterationMethod, Tally,
};
use crate::pool::WorkerPool;
use crate::sparse::{CscMatrix, CsrMatrix};

/// Per-query ascending lists of active chunk indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockMask {
    num_chunks: usize,
    row_offsets: Vec<usize>,
    chunks: Vec<u32>,
}

impl BlockMask {
    pub fn new(num_chunks: usize, rows: &[Vec<u32>]) -> Result<Self> {
        let mut row_offsets = Vec::with_capacity(rows.len() + 1);
        row_offsets.push(0);
        let mut chunks = Vec::new();
        for r in rows {
            chunks.extend_from_slice(r);
            row_offsets.push(chunks.len());
        }
        Self::from_parts(num_chunks, row_offsets, chunks)
    }

    pub fn from_parts(
        num_chunks: usize,
        row_offsets: Vec<usize>,
        chunks: Vec<u32>,
    ) -> Result<Self> {
        if row_offsets.first() != Some(&0) || row_offsets.last() != Some(&chunks.len()) {
            return Err(Error::InvalidStructure(
                "mask offsets do not span the blocks".into(),
            ));
        }
        for w in row_offsets.windows(2) {
            if w[0] > w[1] {
                return Err(Error::InvalidStructure("mask offsets decrease".into()));
            }
            let row = &chunks[w[0]..w[1]];
            if row.windows(2).any(|p| p[0] >= p[1]) {
                return Err(Error::InvalidStructure(
                    "active chunks not strictly ascending".into(),
                ));
            }
            if let Some(&c) = row.last() {
                if c as usize >= num_chunks {
                    return Err(Error::IndexOutOfRange {
                        index: c as usize,
                        bound: num_chunks,
                    });
                }
            }
        }
        Ok(Self {
            num_chunks,
            row_offsets,
            chunks,
        })
    }

    /// Every chunk active for every query.
    pub fn full(n: usize, num_chunks: usize) -> Self {
        let row: Vec<u32> = (0..num_chunks as u32).collect();
        Self::new(num_chunks, &vec![row; n]).expect("full mask is valid")
    }

    pub fn n(&self) -> usize {
        self.row_offsets.len() - 1
    }

    pub fn num_chunks(&self) -> usize {
        self.num_chunks
    }

    pub fn num_blocks(&self) -> usize {
        self.chunks.len()
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.chunks[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    /// Blocks in row-major (query, chunk) order.
    pub fn blocks(&self) -> impl Iterator<Item = Block> + '_ {
        (0..self.n()).flat_map(move |q| {
            (self.row_offsets[q]..self.row_offsets[q + 1]).map(move |id| Block {
                query: q as u32,
                chunk: self.chunks[id],
                id: id as u32,
            })
        })
    }
}

/// One active `(query, chunk)` block; `id` is its row-major position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Block {
    pub query: u32,
    pub chunk: u32,
    pub id: u32,
}

/// Evaluation order: by chunk then query when there is more than one query,
/// row-major otherwise.
pub fn evaluation_order(mask: &BlockMask) -> Vec<Block> {
    let mut order: Vec<Block> = mask.blocks().collect();
    if mask.n() > 1 {
        order.sort_unstable_by_key(|b| (b.chunk, b.query));
    }
    order
}

/// Number of times consecutive blocks switch chunk (the first block counts).
pub fn chunk_loads(order: &[Block]) -> usize {
    let mut loads = 0;
    let mut last = None;
    for b in order {
        if last != Some(b.chunk) {
            loads += 1;
            last = Some(b.chunk);
        }
    }
    loads
}

/// Splits the chunk-sorted block list into `workers` contiguous ranges of
/// roughly equal estimated cost. Always returns `workers` lists; with at
/// least as many workers as blocks each list holds at most one block.
pub fn partition_blocks<F: Fn(Block) -> u64>(
    mask: &BlockMask,
    workers: usize,
    cost: F,
) -> Vec<Vec<Block>> {
    split_ranges(evaluation_order(mask), workers.max(1), cost)
}

fn split_ranges<F: Fn(Block) -> u64>(
    order: Vec<Block>,
    workers: usize,
    cost: F,
) -> Vec<Vec<Block>> {
    let mut parts = vec![Vec::new(); workers];
    if order.len() <= workers {
        for (i, b) in order.into_iter().enumerate() {
            parts[i].push(b);
        }
        return parts;
    }
    let costs: Vec<u128> = order.iter().map(|&b| cost(b) as u128 + 1).collect();
    let total: u128 = costs.iter().sum();
    let mut acc = 0u128;
    for (b, c) in order.into_iter().zip(costs) {
        // Assign by the block's cost midpoint; non-decreasing in position.
        let part = ((2 * acc + c) * workers as u128 / (2 * total)) as usize;
        parts[part.min(workers - 1)].push(b);
        acc += c;
    }
    parts
}

/// Raw activations with the block sparsity pattern of a mask.
#[derive(Clone, Debug)]
pub struct ActivationMatrix {
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<u32>,
    values: Vec<f32>,
    row_blocks: Vec<usize>,
    block_chunks: Vec<u32>,
    block_offsets: Vec<usize>,
}

impl PartialEq for ActivationMatrix {
    /// Bitwise comparison of values.
    fn eq(&self, other: &Self) -> bool {
        self.cols == other.cols
            && self.row_offsets == other.row_offsets
            && self.col_indices == other.col_indices
            && self.block_chunks == other.block_chunks
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl ActivationMatrix {
    fn allocate(mask: &BlockMask, col_offsets: &[usize]) -> Self {
        let mut row_offsets = Vec::with_capacity(mask.n() + 1);
        let mut block_offsets = Vec::with_capacity(mask.num_blocks() + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        block_offsets.push(0);
        for q in 0..mask.n() {
            for &c in mask.row(q) {
                let (s, e) = (col_offsets[c as usize], col_offsets[c as usize + 1]);
                col_indices.extend(s as u32..e as u32);
                block_offsets.push(col_indices.len());
            }
            row_offsets.push(col_indices.len());
        }
        let values = vec![0.0; col_indices.len()];
        Self {
            cols: *col_offsets.last().unwrap_or(&0),
            row_offsets,
            col_indices,
            values,
            row_blocks: mask.row_offsets.clone(),
            block_chunks: mask.chunks.clone(),
            block_offsets,
        }
    }

    pub fn n(&self) -> usize {
        self.row_offsets.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Global column indices and activations of query `i`.
    pub fn row(&self, i: usize) -> (&[u32], &[f32]) {
        let (s, e) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[s..e], &self.values[s..e])
    }

    /// `(chunk, activations)` per active block of query `i`, ascending chunk.
    pub fn row_blocks(&self, i: usize) -> impl Iterator<Item = (u32, &[f32])> + '_ {
        (self.row_blocks[i]..self.row_blocks[i + 1]).map(move |b| {
            (
                self.block_chunks[b],
                &self.values[self.block_offsets[b]..self.block_offsets[b + 1]],
            )
        })
    }

    /// Dense `n × cols` copy with inactive entries as `None`; for tests.
    pub fn to_dense(&self) -> Vec<Vec<Option<f32>>> {
        (0..self.n())
            .map(|i| {
                let mut row = vec![None; self.cols];
                let (c, v) = self.row(i);
                for (&j, &a) in c.iter().zip(v) {
                    row[j as usize] = Some(a);
                }
                row
            })
            .collect()
    }

    /// One mutable slice per block, in row-major block order.
    fn block_slices(&mut self) -> Vec<Option<&mut [f32]>> {
        let mut out = Vec::with_capacity(self.block_chunks.len());
        let mut rest: &mut [f32] = &mut self.values;
        for w in self.block_offsets.windows(2) {
            let (head, tail) = std::mem::take(&mut rest).split_at_mut(w[1] - w[0]);
            out.push(Some(head));
            rest = tail;
        }
        out
    }
}

fn check_shapes(mask: &BlockMask, x: &CsrMatrix, dim: usize, chunks: usize) -> Result<()> {
    if x.cols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: x.cols(),
        });
    }
    if mask.n() != x.rows() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            actual: mask.n(),
        });
    }
    if mask.num_chunks() != chunks {
        return Err(Error::DimensionMismatch {
            expected: chunks,
            actual: mask.num_chunks(),
        });
    }
    Ok(())
}

fn ensure_scratch(scratch: &mut Vec<DenseScratch>, count: usize, dim: usize) {
    for s in scratch.iter_mut() {
        if s.dim() < dim {
            *s = DenseScratch::new(dim);
        }
    }
    while scratch.len() < count {
        scratch.push(DenseScratch::new(dim));
    }
}

/// MSCM evaluation on `workers` threads. Convenience wrapper over
/// [`masked_multiply_mscm_in`].
pub fn masked_multiply_mscm(
    mask: &BlockMask,
    x: &CsrMatrix,
    w: &ChunkedWeightMatrix,
    method: IterationMethod,
    workers: usize,
) -> Result<ActivationMatrix> {
    let pool = WorkerPool::new(workers)?;
    let mut scratch = Vec::new();
    masked_multiply_mscm_in::<()>(mask, x, w, method, &pool, &mut scratch).map(|r| r.0)
}

/// MSCM evaluation: every active block `x_q · K_c` computed with one
/// support intersection, blocks visited in chunk order and partitioned into
/// contiguous ranges across the pool's workers.
///
/// `scratch` holds per-worker dense arrays for `DenseLookup` and is grown
/// as needed; it is left all-sentinel on return.
pub fn masked_multiply_mscm_in<T: Tally + Default + Send>(
    mask: &BlockMask,
    x: &CsrMatrix,
    w: &ChunkedWeightMatrix,
    method: IterationMethod,
    pool: &WorkerPool,
    scratch: &mut Vec<DenseScratch>,
) -> Result<(ActivationMatrix, T)> {
    check_shapes(mask, x, w.dim(), w.num_chunks())?;
    if method == IterationMethod::HashLookup && !w.has_hash_index() {
        return Err(Error::MissingHashIndex);
    }
    let workers = pool.workers();
    let dense = method == IterationMethod::DenseLookup;
    if dense {
        ensure_scratch(scratch, workers, w.dim());
    }

    let mut act = ActivationMatrix::allocate(mask, w.col_offsets());
    let parts = partition_blocks(mask, workers, |b| {
        (x.row_offsets()[b.query as usize + 1] - x.row_offsets()[b.query as usize]
            + w.chunk(b.chunk as usize).nnz_rows()) as u64
    });
    let mut slots = act.block_slices();
    let mut scratch_iter = scratch.iter_mut();
    let tasks: Vec<_> = parts
        .into_iter()
        .map(|blocks| {
            let owned: Vec<(Block, &mut [f32])> = blocks
                .into_iter()
                .map(|b| (b, slots[b.id as usize].take().expect("block assigned once")))
                .collect();
            let s = if dense { scratch_iter.next() } else { None };
            (owned, s)
        })
        .collect();

    let tallies = pool.map(tasks, |(blocks, mut s)| {
        let mut tally = T::default();
        let r = run_mscm_blocks(blocks, x, w, method, s.as_deref_mut(), &mut tally);
        if let Some(s) = s {
            s.clear();
        }
        r.map(|_| tally)
    });
    let mut total = T::default();
    for t in tallies {
        total.absorb(t?);
    }
    Ok((act, total))
}

fn run_mscm_blocks<T: Tally>(
    blocks: Vec<(Block, &mut [f32])>,
    x: &CsrMatrix,
    w: &ChunkedWeightMatrix,
    method: IterationMethod,
    mut scratch: Option<&mut DenseScratch>,
    tally: &mut T,
) -> Result<()> {
    let mut current = None;
    for (b, out) in blocks {
        let chunk = w.chunk(b.chunk as usize);
        if current != Some(b.chunk) {
            tally.chunk_load();
            if let Some(s) = scratch.as_deref_mut() {
                s.clear();
                s.load_chunk(chunk, w.dim())?;
            }
            current = Some(b.chunk);
        }
        let xq = x.row_unchecked(b.query as usize);
        vector_chunk_product_into(xq, chunk, method, scratch.as_deref(), tally, out)?;
    }
    Ok(())
}

/// Weight matrix in column-major form plus optional per-column hash index,
/// the layout the per-column baseline reads.
#[derive(Clone, Copy)]
pub struct ColumnWeights<'a> {
    pub csc: &'a CscMatrix,
    pub col_offsets: &'a [usize],
    pub column_hash: Option<&'a ColumnHashIndex>,
}

/// Per-column baseline on `workers` threads. Convenience wrapper over
/// [`masked_multiply_baseline_in`].
pub fn masked_multiply_baseline(
    mask: &BlockMask,
    x: &CsrMatrix,
    w: ColumnWeights<'_>,
    method: IterationMethod,
    workers: usize,
) -> Result<ActivationMatrix> {
    let pool = WorkerPool::new(workers)?;
    let mut scratch = Vec::new();
    masked_multiply_baseline_in::<()>(mask, x, w, method, &pool, &mut scratch).map(|r| r.0)
}

/// Baseline evaluation: for every active entry `(q, j)` one sparse inner
/// product `x_q · w_j`, visiting entries in row-major order. Queries are
/// split into contiguous ranges across workers.
pub fn masked_multiply_baseline_in<T: Tally + Default + Send>(
    mask: &BlockMask,
    x: &CsrMatrix,
    w: ColumnWeights<'_>,
    method: IterationMethod,
    pool: &WorkerPool,
    scratch: &mut Vec<DenseScratch>,
) -> Result<(ActivationMatrix, T)> {
    let num_chunks = w.col_offsets.len().saturating_sub(1);
    check_shapes(mask, x, w.csc.rows(), num_chunks)?;
    if w.col_offsets.last() != Some(&w.csc.cols()) {
        return Err(Error::Shape(
            "chunk offsets do not cover the weight columns".into(),
        ));
    }
    if method == IterationMethod::HashLookup && w.column_hash.is_none() {
        return Err(Error::MissingHashIndex);
    }
    let workers = pool.workers();
    let dense = method == IterationMethod::DenseLookup;
    if dense {
        ensure_scratch(scratch, workers, w.csc.rows());
    }

    let mut act = ActivationMatrix::allocate(mask, w.col_offsets);
    let n = mask.n();
    // Contiguous query ranges balanced by active column count.
    let total = act.nnz().max(1);
    let mut bounds = vec![0usize];
    for p in 1..workers {
        let target = total * p / workers;
        let q = act.row_offsets.partition_point(|&o| o < target).min(n);
        bounds.push(q.max(*bounds.last().unwrap()));
    }
    bounds.push(n);

    let row_offsets = act.row_offsets.clone();
    let mut rest: &mut [f32] = &mut act.values;
    let mut scratch_iter = scratch.iter_mut();
    let mut tasks = Vec::with_capacity(workers);
    for r in bounds.windows(2) {
        let len = row_offsets[r[1]] - row_offsets[r[0]];
        let (head, tail) = std::mem::take(&mut rest).split_at_mut(len);
        rest = tail;
        let s = if dense { scratch_iter.next() } else { None };
        tasks.push((r[0]..r[1], head, s));
    }

    let tallies = pool.map(tasks, |(queries, out, mut s)| {
        let mut tally = T::default();
        let r = run_baseline_rows(
            queries,
            out,
            mask,
            x,
            w,
            method,
            s.as_deref_mut(),
            &mut tally,
        );
        if let Some(s) = s {
            s.clear();
        }
        r.map(|_| tally)
    });
    let mut total = T::default();
    for t in tallies {
        total.absorb(t?);
    }
    Ok((act, total))
}

#[allow(clippy::too_many_arguments)]
fn run_baseline_rows<T: Tally>(
    queries: std::ops::Range<usize>,
    out: &mut [f32],
    mask: &BlockMask,
    x: &CsrMatrix,
    w: ColumnWeights<'_>,
    method: IterationMethod,
    mut scratch: Option<&mut DenseScratch>,
    tally: &mut T,
) -> Result<()> {
    let mut pos = 0;
    for q in queries {
        let xq = x.row_unchecked(q);
        if let Some(s) = scratch.as_deref_mut() {
            s.clear();
            s.load_vector(xq)?;
        }
        let aux = BaselineAux {
            column_hash: w.column_hash,
            query_scratch: scratch.as_deref(),
        };
        for &c in mask.row(q) {
            for j in w.col_offsets[c as usize]..w.col_offsets[c as usize + 1] {
                out[pos] = baseline_column_dot(xq, w.csc, j, method, aux, tally)?;
                pos += 1;
            }
        }
    }
    debug_assert_eq!(pos, out.len());
    Ok(())
}
