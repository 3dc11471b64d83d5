//! Column-chunked weight matrix.
//!
//! A layer's weight matrix is split into horizontal chunks, one per parent
//! cluster, each holding the columns of that parent's children. Inside a
//! chunk, weights are stored row-wise: the ascending list of feature indices
//! with any nonzero in the chunk, and for each such row the sparse
//! horizontal vector of `(local column, value)` pairs. Siblings' entries on
//! the same feature row are therefore adjacent in memory.

use rustc_hash::FxHashMap;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sparse::{CscMatrix, SparseVec};

/// Maximum chunk width representable with 16-bit local column indices.
pub const MAX_CHUNK_WIDTH: usize = 1 << 16;

/// One chunk: the columns of a single parent's children.
#[derive(Clone, Debug)]
pub struct Chunk {
    width: usize,
    row_ids: Vec<u32>,
    row_offsets: Vec<u32>,
    local_cols: Vec<u16>,
    values: Vec<f32>,
    row_index: Option<FxHashMap<u32, u32>>,
}

impl PartialEq for Chunk {
    /// Structural equality; the optional hash index does not participate.
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.row_ids == other.row_ids
            && self.row_offsets == other.row_offsets
            && self.local_cols == other.local_cols
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Chunk {
    /// Gathers columns `start..end` of `w` into a chunk.
    fn from_columns(w: &CscMatrix, start: usize, end: usize) -> Result<Self> {
        let width = end - start;
        if width > MAX_CHUNK_WIDTH {
            return Err(Error::ChunkTooWide(width));
        }
        let mut entries: Vec<(u32, u16, f32)> = Vec::new();
        for (local, j) in (start..end).enumerate() {
            for (k, v) in w.col_unchecked(j).iter() {
                entries.push((k, local as u16, v));
            }
        }
        // Stable: columns were pushed in ascending local order.
        entries.sort_by_key(|e| e.0);

        let mut row_ids = Vec::new();
        let mut row_offsets = vec![0u32];
        let mut local_cols = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for (k, c, v) in entries {
            if row_ids.last() != Some(&k) {
                if !row_ids.is_empty() {
                    row_offsets.push(local_cols.len() as u32);
                }
                row_ids.push(k);
            }
            local_cols.push(c);
            values.push(v);
        }
        if !row_ids.is_empty() {
            row_offsets.push(local_cols.len() as u32);
        }
        Ok(Self {
            width,
            row_ids,
            row_offsets,
            local_cols,
            values,
            row_index: None,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Ascending feature indices with at least one stored entry.
    pub fn row_ids(&self) -> &[u32] {
        &self.row_ids
    }

    pub fn nnz_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Local columns and values of the `pos`-th nonzero row.
    #[inline]
    pub fn row(&self, pos: usize) -> (&[u16], &[f32]) {
        let (s, e) = (
            self.row_offsets[pos] as usize,
            self.row_offsets[pos + 1] as usize,
        );
        (&self.local_cols[s..e], &self.values[s..e])
    }

    /// Position of `feature` among the nonzero rows, by binary search.
    pub fn find_row(&self, feature: u32) -> Option<usize> {
        self.row_ids.binary_search(&feature).ok()
    }

    /// Position of `feature` via the hash index, if one was built.
    #[inline]
    pub fn lookup(&self, feature: u32) -> Option<Option<usize>> {
        self.row_index
            .as_ref()
            .map(|m| m.get(&feature).map(|&p| p as usize))
    }

    pub(crate) fn row_index(&self) -> Option<&FxHashMap<u32, u32>> {
        self.row_index.as_ref()
    }

    pub fn has_hash_index(&self) -> bool {
        self.row_index.is_some()
    }

    /// Entries in the hash index, or `None` if absent.
    pub fn hash_index_len(&self) -> Option<usize> {
        self.row_index.as_ref().map(|m| m.len())
    }

    /// Allocated hash-index slots, or `None` if absent.
    pub fn hash_index_capacity(&self) -> Option<usize> {
        self.row_index.as_ref().map(|m| m.capacity())
    }

    fn build_hash_index(&mut self) {
        let mut map = FxHashMap::with_capacity_and_hasher(self.row_ids.len(), Default::default());
        for (pos, &k) in self.row_ids.iter().enumerate() {
            map.insert(k, pos as u32);
        }
        self.row_index = Some(map);
    }

    /// Column `local` as a sparse vector over `dim` features.
    fn column_pairs(&self, local: usize) -> Vec<(u32, f32)> {
        let mut out = Vec::new();
        for (pos, &k) in self.row_ids.iter().enumerate() {
            let (cols, vals) = self.row(pos);
            if let Ok(at) = cols.binary_search(&(local as u16)) {
                out.push((k, vals[at]));
            }
        }
        out
    }
}

/// A layer weight matrix stored as a horizontal array of chunks.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkedWeightMatrix {
    dim: usize,
    col_offsets: Vec<usize>,
    chunks: Vec<Chunk>,
}

impl ChunkedWeightMatrix {
    /// Splits `w` at `boundaries`, which must run strictly ascending from 0 to `w.cols()`.
    pub fn from_csc(w: &CscMatrix, boundaries: &[usize]) -> Result<Self> {
        validate_boundaries(boundaries, w.cols())?;
        let chunks = boundaries
            .windows(2)
            .map(|b| Chunk::from_columns(w, b[0], b[1]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dim: w.rows(),
            col_offsets: boundaries.to_vec(),
            chunks,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_chunks(&self) -> usize {
        self.chunks.len()
    }

    pub fn num_cols(&self) -> usize {
        *self.col_offsets.last().unwrap_or(&0)
    }

    pub fn col_offsets(&self) -> &[usize] {
        &self.col_offsets
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    #[inline]
    pub fn chunk(&self, i: usize) -> &Chunk {
        &self.chunks[i]
    }

    /// Global column range covered by chunk `i`.
    #[inline]
    pub fn chunk_cols(&self, i: usize) -> std::ops::Range<usize> {
        self.col_offsets[i]..self.col_offsets[i + 1]
    }

    /// Largest chunk width.
    pub fn max_width(&self) -> usize {
        self.chunks.iter().map(Chunk::width).max().unwrap_or(0)
    }

    pub fn nnz(&self) -> usize {
        self.chunks.iter().map(Chunk::nnz).sum()
    }

    /// Adds a per-chunk hash index from feature to nonzero-row position.
    pub fn build_hash_index(&mut self) {
        for c in &mut self.chunks {
            c.build_hash_index();
        }
    }

    pub fn with_hash_index(mut self) -> Self {
        self.build_hash_index();
        self
    }

    pub fn has_hash_index(&self) -> bool {
        self.chunks.iter().all(Chunk::has_hash_index)
    }

    /// Reads the matrix back column by column.
    pub fn to_csc(&self) -> CscMatrix {
        let mut offsets = vec![0];
        let mut rows = Vec::with_capacity(self.nnz());
        let mut vals = Vec::with_capacity(self.nnz());
        for (i, chunk) in self.chunks.iter().enumerate() {
            for local in 0..chunk.width() {
                for (k, v) in chunk.column_pairs(local) {
                    rows.push(k);
                    vals.push(v);
                }
                offsets.push(rows.len());
            }
            debug_assert_eq!(offsets.len() - 1, self.col_offsets[i + 1]);
        }
        CscMatrix::new(self.dim, self.num_cols(), offsets, rows, vals)
            .expect("chunk contents form a valid CSC matrix")
    }

    /// Diagnostic statistics over the chunks.
    pub fn stats(&self) -> ChunkStats {
        chunk_stats(self)
    }
}

fn validate_boundaries(b: &[usize], cols: usize) -> Result<()> {
    match (b.first(), b.last()) {
        (Some(&0), Some(&last)) if last == cols => {}
        _ => {
            return Err(Error::InvalidBoundaries(format!(
                "must start at 0 and end at {cols}"
            )))
        }
    }
    if cols > 0 && b.len() < 2 {
        return Err(Error::InvalidBoundaries("no chunks".into()));
    }
    if let Some(w) = b.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::InvalidBoundaries(format!(
            "not strictly ascending ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// Per-chunk row counts and sibling support overlap.
#[derive(Clone, Debug, Serialize)]
pub struct ChunkStats {
    pub num_chunks: usize,
    pub rows_per_chunk: Vec<usize>,
    /// Mean over non-empty chunks of `Σ_cols nnz_col / (width · nnz_rows)`.
    /// Equals 1 when all siblings share one support and `1/width` when their
    /// supports are disjoint.
    pub overlap: f64,
    /// Mean over non-empty chunks of the fraction of column nonzeros lying
    /// on rows that every sibling column touches.
    pub shared_fraction: f64,
    /// Entries a per-chunk hash index holds (the sum of nonzero rows).
    pub hash_index_entries: usize,
    /// Entries a per-column hash index would hold (the total nnz).
    pub column_index_entries: usize,
}

pub fn chunk_stats(m: &ChunkedWeightMatrix) -> ChunkStats {
    let mut overlap_sum = 0.0;
    let mut shared_sum = 0.0;
    let mut counted = 0usize;
    for c in m.chunks() {
        if c.nnz_rows() == 0 {
            continue;
        }
        counted += 1;
        overlap_sum += c.nnz() as f64 / (c.width() * c.nnz_rows()) as f64;
        let shared: usize = (0..c.nnz_rows())
            .map(|p| c.row(p).0.len())
            .filter(|&n| n == c.width())
            .sum();
        shared_sum += shared as f64 / c.nnz() as f64;
    }
    let (overlap, shared_fraction) = if counted == 0 {
        (1.0, 1.0)
    } else {
        (overlap_sum / counted as f64, shared_sum / counted as f64)
    };
    ChunkStats {
        num_chunks: m.num_chunks(),
        rows_per_chunk: m.chunks().iter().map(Chunk::nnz_rows).collect(),
        overlap,
        shared_fraction,
        hash_index_entries: m.chunks().iter().map(Chunk::nnz_rows).sum(),
        column_index_entries: m.nnz(),
    }
}

/// Dense product `x · K` for one chunk, computed column by column with a
/// dense accumulation. Reference for tests.
#[doc(hidden)]
pub fn dense_chunk_product(x: SparseVec<'_>, m: &ChunkedWeightMatrix, chunk: usize) -> Vec<f32> {
    let csc = m.to_csc();
    let xd = x.to_dense();
    m.chunk_cols(chunk)
        .map(|j| {
            let col = csc.col_unchecked(j).to_dense();
            let mut z = 0.0f32;
            for k in 0..xd.len() {
                if xd[k] != 0.0 && col[k] != 0.0 {
                    z += xd[k] * col[k];
                }
            }
            z
        })
        .collect()
}
