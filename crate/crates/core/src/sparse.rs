//! Compressed sparse containers: vectors, CSR query matrices and CSC weight
//! matrices.
//!
//! Indices are `u32` and values `f32` throughout. Explicit zeros are kept as
//! stored entries; nothing here prunes them.

use crate::error::{Error, Result};

/// Borrowed sparse vector: ascending `indices` with matching `values`.
#[derive(Clone, Copy, Debug)]
pub struct SparseVec<'a> {
    dim: usize,
    indices: &'a [u32],
    values: &'a [f32],
}

impl<'a> SparseVec<'a> {
    pub fn new(dim: usize, indices: &'a [u32], values: &'a [f32]) -> Result<Self> {
        check_support(dim, indices, values.len())?;
        Ok(Self {
            dim,
            indices,
            values,
        })
    }

    /// Caller guarantees the invariants (used for views into validated matrices).
    pub(crate) fn from_parts(dim: usize, indices: &'a [u32], values: &'a [f32]) -> Self {
        debug_assert!(check_support(dim, indices, values.len()).is_ok());
        Self {
            dim,
            indices,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn indices(&self) -> &'a [u32] {
        self.indices
    }

    pub fn values(&self) -> &'a [f32] {
        self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f32)> + 'a {
        self.indices
            .iter()
            .copied()
            .zip(self.values.iter().copied())
    }

    pub fn to_owned(&self) -> SparseVector {
        SparseVector {
            dim: self.dim,
            indices: self.indices.to_vec(),
            values: self.values.to_vec(),
        }
    }

    pub fn to_dense(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.dim];
        for (k, v) in self.iter() {
            out[k as usize] = v;
        }
        out
    }
}

/// Owned sparse vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseVector {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f32>,
}

impl SparseVector {
    pub fn new(dim: usize, indices: Vec<u32>, values: Vec<f32>) -> Result<Self> {
        check_support(dim, &indices, values.len())?;
        Ok(Self {
            dim,
            indices,
            values,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from `(index, value)` pairs in any order; duplicates are summed.
    pub fn from_pairs(dim: usize, pairs: &[(u32, f32)]) -> Result<Self> {
        let m = CsrMatrix::from_triplets(
            1,
            dim,
            &pairs.iter().map(|&(k, v)| (0, k, v)).collect::<Vec<_>>(),
        )?;
        Ok(m.row(0)?.to_owned())
    }

    pub fn view(&self) -> SparseVec<'_> {
        SparseVec::from_parts(self.dim, &self.indices, &self.values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

fn check_support(dim: usize, indices: &[u32], num_values: usize) -> Result<()> {
    if indices.len() != num_values {
        return Err(Error::InvalidStructure(format!(
            "{} indices but {} values",
            indices.len(),
            num_values
        )));
    }
    if let Some(w) = indices.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::InvalidStructure(format!(
            "indices not strictly ascending ({} then {})",
            w[0], w[1]
        )));
    }
    if let Some(&last) = indices.last() {
        if last as usize >= dim {
            return Err(Error::IndexOutOfRange {
                index: last as usize,
                bound: dim,
            });
        }
    }
    Ok(())
}

/// First position in `list` whose element is not less than `target`.
///
/// Gallops from the front before bisecting, so advancing a cursor by a short
/// distance costs `O(log distance)` rather than `O(log len)`.
#[inline]
pub(crate) fn lower_bound(list: &[u32], target: u32) -> usize {
    let mut hi = 1;
    while hi < list.len() && list[hi - 1] < target {
        hi <<= 1;
    }
    let lo = hi >> 1;
    let hi = hi.min(list.len());
    lo + list[lo..hi].partition_point(|&v| v < target)
}

/// Sparse inner product via two-sided lower-bound advancement.
///
/// Products are accumulated in ascending coordinate order as `x_k * y_k`.
pub fn sparse_dot(x: SparseVec<'_>, y: SparseVec<'_>) -> Result<f32> {
    if x.dim != y.dim {
        return Err(Error::DimensionMismatch {
            expected: x.dim,
            actual: y.dim,
        });
    }
    Ok(dot_galloping(x.indices, x.values, y.indices, y.values))
}

#[inline]
pub(crate) fn dot_galloping(xi: &[u32], xv: &[f32], yi: &[u32], yv: &[f32]) -> f32 {
    let (mut i, mut j) = (0, 0);
    let mut z = 0.0f32;
    while i < xi.len() && j < yi.len() {
        let (a, b) = (xi[i], yi[j]);
        if a == b {
            z += xv[i] * yv[j];
            i += 1;
            j += 1;
        } else if a < b {
            i += lower_bound(&xi[i..], b);
        } else {
            j += lower_bound(&yi[j..], a);
        }
    }
    z
}

/// Shared storage for CSR and CSC: `major` compressed lines over `minor`
/// coordinates.
#[derive(Clone, Debug, PartialEq)]
struct Compressed {
    major: usize,
    minor: usize,
    offsets: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f32>,
}

impl Compressed {
    fn new(
        major: usize,
        minor: usize,
        offsets: Vec<usize>,
        indices: Vec<u32>,
        values: Vec<f32>,
    ) -> Result<Self> {
        if offsets.len() != major + 1 {
            return Err(Error::InvalidStructure(format!(
                "expected {} offsets, got {}",
                major + 1,
                offsets.len()
            )));
        }
        if offsets[0] != 0 || offsets[major] != values.len() || indices.len() != values.len() {
            return Err(Error::InvalidStructure(
                "offsets do not span the stored entries".into(),
            ));
        }
        if offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidStructure("offsets decrease".into()));
        }
        for w in offsets.windows(2) {
            check_support(minor, &indices[w[0]..w[1]], w[1] - w[0])?;
        }
        Ok(Self {
            major,
            minor,
            offsets,
            indices,
            values,
        })
    }

    /// Triplets given as `(major, minor, value)`; duplicates summed in input order.
    fn from_triplets(major: usize, minor: usize, triplets: &[(u32, u32, f32)]) -> Result<Self> {
        let mut counts = vec![0usize; major + 1];
        for &(a, b, _) in triplets {
            if a as usize >= major {
                return Err(Error::IndexOutOfRange {
                    index: a as usize,
                    bound: major,
                });
            }
            if b as usize >= minor {
                return Err(Error::IndexOutOfRange {
                    index: b as usize,
                    bound: minor,
                });
            }
            counts[a as usize + 1] += 1;
        }
        for i in 0..major {
            counts[i + 1] += counts[i];
        }
        // Bucket by major line, keeping input order within each line.
        let mut cursor = counts.clone();
        let mut slots = vec![(0u32, 0.0f32); triplets.len()];
        for &(a, b, v) in triplets {
            slots[cursor[a as usize]] = (b, v);
            cursor[a as usize] += 1;
        }

        let mut offsets = Vec::with_capacity(major + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        offsets.push(0);
        for line in 0..major {
            let bucket = &mut slots[counts[line]..counts[line + 1]];
            bucket.sort_by_key(|&(b, _)| b);
            for &(b, v) in bucket.iter() {
                if indices.len() > *offsets.last().unwrap() && *indices.last().unwrap() == b {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(b);
                    values.push(v);
                }
            }
            offsets.push(indices.len());
        }
        Ok(Self {
            major,
            minor,
            offsets,
            indices,
            values,
        })
    }

    #[inline]
    fn line(&self, i: usize) -> SparseVec<'_> {
        let (s, e) = (self.offsets[i], self.offsets[i + 1]);
        SparseVec::from_parts(self.minor, &self.indices[s..e], &self.values[s..e])
    }

    fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.minor + 1];
        for &b in &self.indices {
            counts[b as usize + 1] += 1;
        }
        for i in 0..self.minor {
            counts[i + 1] += counts[i];
        }
        let mut cursor = counts.clone();
        let mut indices = vec![0u32; self.indices.len()];
        let mut values = vec![0f32; self.values.len()];
        for a in 0..self.major {
            for p in self.offsets[a]..self.offsets[a + 1] {
                let b = self.indices[p] as usize;
                indices[cursor[b]] = a as u32;
                values[cursor[b]] = self.values[p];
                cursor[b] += 1;
            }
        }
        Self {
            major: self.minor,
            minor: self.major,
            offsets: counts,
            indices,
            values,
        }
    }

    fn triplets(&self) -> Vec<(u32, u32, f32)> {
        let mut out = Vec::with_capacity(self.values.len());
        for a in 0..self.major {
            for (b, v) in self.line(a).iter() {
                out.push((a as u32, b, v));
            }
        }
        out
    }
}

/// Row-compressed matrix; rows are queries.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix(Compressed);

impl CsrMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<u32>,
        values: Vec<f32>,
    ) -> Result<Self> {
        Compressed::new(rows, cols, row_offsets, col_indices, values).map(Self)
    }

    /// Builds from `(row, col, value)` triplets; duplicate coordinates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(u32, u32, f32)]) -> Result<Self> {
        Compressed::from_triplets(rows, cols, triplets).map(Self)
    }

    pub fn from_rows(cols: usize, rows: &[SparseVector]) -> Result<Self> {
        let mut offsets = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for r in rows {
            if r.dim() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    actual: r.dim(),
                });
            }
            indices.extend_from_slice(r.indices());
            values.extend_from_slice(r.values());
            offsets.push(indices.len());
        }
        Self::new(rows.len(), cols, offsets, indices, values)
    }

    pub fn rows(&self) -> usize {
        self.0.major
    }

    pub fn cols(&self) -> usize {
        self.0.minor
    }

    pub fn nnz(&self) -> usize {
        self.0.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.0.offsets
    }

    pub fn col_indices(&self) -> &[u32] {
        &self.0.indices
    }

    pub fn values(&self) -> &[f32] {
        &self.0.values
    }

    /// Zero-copy view of row `i`.
    pub fn row(&self, i: usize) -> Result<SparseVec<'_>> {
        if i >= self.rows() {
            return Err(Error::IndexOutOfRange {
                index: i,
                bound: self.rows(),
            });
        }
        Ok(self.0.line(i))
    }

    #[inline]
    pub(crate) fn row_unchecked(&self, i: usize) -> SparseVec<'_> {
        self.0.line(i)
    }

    /// Copy of rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.rows() {
            return Err(Error::IndexOutOfRange {
                index: end,
                bound: self.rows(),
            });
        }
        let base = self.0.offsets[start];
        let stop = self.0.offsets[end];
        Self::new(
            end - start,
            self.cols(),
            self.0.offsets[start..=end]
                .iter()
                .map(|o| o - base)
                .collect(),
            self.0.indices[base..stop].to_vec(),
            self.0.values[base..stop].to_vec(),
        )
    }

    pub fn to_csc(&self) -> CscMatrix {
        CscMatrix(self.0.transpose())
    }

    /// `(row, col, value)` in row-major order.
    pub fn triplets(&self) -> Vec<(u32, u32, f32)> {
        self.0.triplets()
    }
}

/// Column-compressed matrix; columns are per-cluster ranker weights.
#[derive(Clone, Debug, PartialEq)]
pub struct CscMatrix(Compressed);

impl CscMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        col_offsets: Vec<usize>,
        row_indices: Vec<u32>,
        values: Vec<f32>,
    ) -> Result<Self> {
        Compressed::new(cols, rows, col_offsets, row_indices, values).map(Self)
    }

    /// Builds from `(row, col, value)` triplets; duplicate coordinates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(u32, u32, f32)]) -> Result<Self> {
        let swapped: Vec<_> = triplets.iter().map(|&(r, c, v)| (c, r, v)).collect();
        Compressed::from_triplets(cols, rows, &swapped).map(Self)
    }

    pub fn from_columns(rows: usize, columns: &[SparseVector]) -> Result<Self> {
        let csr = CsrMatrix::from_rows(rows, columns)?;
        Ok(Self(csr.0))
    }

    pub fn rows(&self) -> usize {
        self.0.minor
    }

    pub fn cols(&self) -> usize {
        self.0.major
    }

    pub fn nnz(&self) -> usize {
        self.0.values.len()
    }

    pub fn col_offsets(&self) -> &[usize] {
        &self.0.offsets
    }

    pub fn row_indices(&self) -> &[u32] {
        &self.0.indices
    }

    pub fn values(&self) -> &[f32] {
        &self.0.values
    }

    pub fn col(&self, j: usize) -> Result<SparseVec<'_>> {
        if j >= self.cols() {
            return Err(Error::IndexOutOfRange {
                index: j,
                bound: self.cols(),
            });
        }
        Ok(self.0.line(j))
    }

    #[inline]
    pub(crate) fn col_unchecked(&self, j: usize) -> SparseVec<'_> {
        self.0.line(j)
    }

    pub fn to_csr(&self) -> CsrMatrix {
        CsrMatrix(self.0.transpose())
    }

    /// `(row, col, value)` in column-major order.
    pub fn triplets(&self) -> Vec<(u32, u32, f32)> {
        self.0
            .triplets()
            .into_iter()
            .map(|(c, r, v)| (r, c, v))
            .collect()
    }

    /// Dense column-major copy; test and diagnostic use only.
    pub fn to_dense_columns(&self) -> Vec<Vec<f32>> {
        (0..self.cols())
            .map(|j| self.0.line(j).to_dense())
            .collect()
    }
}
