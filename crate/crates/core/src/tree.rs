//! XMR tree model and beam-search inference.
//!
//! Layer 1 is the implicit root with score 1. Each further layer `l` holds a
//! `d × L_l` weight matrix chunked by parent: chunk `p` of layer `l` covers
//! the children of cluster `p` in layer `l − 1`. A cluster's score is the
//! product of `σ(w · x)` along its root path.

use serde::Serialize;

use crate::chunked::ChunkedWeightMatrix;
use crate::error::{Error, Result};
use crate::kernels::{ColumnHashIndex, DenseScratch, IterationMethod, Tally};
use crate::masked::{
    masked_multiply_baseline_in, masked_multiply_mscm_in, ActivationMatrix, BlockMask,
    ColumnWeights,
};
use crate::pool::WorkerPool;
use crate::sparse::{sparse_dot, CscMatrix, CsrMatrix, SparseVec};

/// Ranker activation. Sigmoid is the only supported kind.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    #[default]
    Sigmoid,
}

impl ActivationKind {
    #[inline]
    pub fn apply(self, t: f32) -> f32 {
        match self {
            ActivationKind::Sigmoid => 1.0 / (1.0 + (-t).exp()),
        }
    }

    pub fn name(self) -> &'static str {
        "sigmoid"
    }
}

/// One weighted layer: chunked weights plus the column-major copy the
/// per-column baseline reads.
#[derive(Clone, Debug)]
pub struct Layer {
    chunked: ChunkedWeightMatrix,
    csc: CscMatrix,
    column_hash: Option<ColumnHashIndex>,
}

impl Layer {
    pub fn new(csc: CscMatrix, boundaries: &[usize]) -> Result<Self> {
        let chunked = ChunkedWeightMatrix::from_csc(&csc, boundaries)?;
        Ok(Self {
            chunked,
            csc,
            column_hash: None,
        })
    }

    pub fn chunked(&self) -> &ChunkedWeightMatrix {
        &self.chunked
    }

    pub fn csc(&self) -> &CscMatrix {
        &self.csc
    }

    pub fn num_clusters(&self) -> usize {
        self.csc.cols()
    }

    pub fn topology(&self) -> LayerTopology {
        LayerTopology {
            num_clusters: self.num_clusters(),
            parent_offsets: self.chunked.col_offsets().to_vec(),
            branching: self.chunked.max_width(),
        }
    }

    fn column_weights(&self) -> ColumnWeights<'_> {
        ColumnWeights {
            csc: &self.csc,
            col_offsets: self.chunked.col_offsets(),
            column_hash: self.column_hash.as_ref(),
        }
    }
}

/// Parent/child structure of one layer: children of parent `p` are the
/// clusters `parent_offsets[p]..parent_offsets[p + 1]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerTopology {
    pub num_clusters: usize,
    pub parent_offsets: Vec<usize>,
    pub branching: usize,
}

impl LayerTopology {
    pub fn parent_of(&self, cluster: usize) -> usize {
        self.parent_offsets.partition_point(|&o| o <= cluster) - 1
    }
}

/// Layered tree model; all leaves sit on the last layer.
#[derive(Clone, Debug)]
pub struct XmrModel {
    dim: usize,
    activation: ActivationKind,
    layers: Vec<Layer>,
}

impl XmrModel {
    /// `layers[i]` is the weight matrix of tree layer `i + 2` with its chunk
    /// boundaries (one chunk per cluster of the layer above).
    pub fn new(dim: usize, layers: Vec<(CscMatrix, Vec<usize>)>) -> Result<Self> {
        let layers = layers
            .into_iter()
            .map(|(w, b)| Layer::new(w, &b))
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(dim, layers)
    }

    pub fn from_layers(dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let model = Self {
            dim,
            activation: ActivationKind::Sigmoid,
            layers,
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks every structural invariant of the tree.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("model has no weighted layers".into()));
        }
        let mut parents = 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let l = i + 2;
            if layer.csc.rows() != self.dim || layer.chunked.dim() != self.dim {
                return Err(Error::Shape(format!(
                    "layer {l} has {} rows, model dim is {}",
                    layer.csc.rows(),
                    self.dim
                )));
            }
            if layer.chunked.num_chunks() != parents {
                return Err(Error::Shape(format!(
                    "layer {l} has {} chunks but layer {} has {parents} clusters",
                    layer.chunked.num_chunks(),
                    l - 1
                )));
            }
            if layer.chunked.num_cols() != layer.csc.cols() {
                return Err(Error::Shape(format!(
                    "layer {l} chunks do not cover its columns"
                )));
            }
            if layer.chunked.chunks().iter().any(|c| c.width() == 0) {
                return Err(Error::Shape(format!(
                    "layer {l} has a cluster without children"
                )));
            }
            parents = layer.num_clusters();
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of tree layers including the root.
    pub fn depth(&self) -> usize {
        self.layers.len() + 1
    }

    pub fn activation(&self) -> ActivationKind {
        self.activation
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Cluster counts `L_1 = 1, L_2, …, L_depth`.
    pub fn cluster_counts(&self) -> Vec<usize> {
        std::iter::once(1)
            .chain(self.layers.iter().map(Layer::num_clusters))
            .collect()
    }

    pub fn num_labels(&self) -> usize {
        self.layers.last().map_or(1, Layer::num_clusters)
    }

    /// Builds the per-chunk hash indices and the per-column indices of the
    /// baseline. Needed before hash-lookup inference.
    pub fn build_hash_indices(&mut self) {
        for layer in &mut self.layers {
            layer.chunked.build_hash_index();
            layer.column_hash = Some(ColumnHashIndex::build(&layer.csc));
        }
    }

    pub fn has_hash_indices(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.chunked.has_hash_index() && l.column_hash.is_some())
    }

    pub fn stats(&self) -> ModelStats {
        let num_chunks = self.layers.iter().map(|l| l.chunked.num_chunks()).sum();
        let chunk_rows: usize = self
            .layers
            .iter()
            .flat_map(|l| l.chunked.chunks())
            .map(|c| c.nnz_rows())
            .sum();
        ModelStats {
            dim: self.dim,
            num_chunks,
            chunk_rows,
            mean_chunk_rows: chunk_rows as f64 / num_chunks.max(1) as f64,
            nnz: self.layers.iter().map(|l| l.csc.nnz()).sum(),
        }
    }
}

impl PartialEq for XmrModel {
    /// Bitwise equality of weights and chunk boundaries.
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.activation == other.activation
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.chunked == b.chunked
                    && a.csc.col_offsets() == b.csc.col_offsets()
                    && a.csc.row_indices() == b.csc.row_indices()
                    && a.csc
                        .values()
                        .iter()
                        .zip(b.csc.values())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Aggregate model statistics used by [`recommend_method`].
#[derive(Clone, Debug, Serialize)]
pub struct ModelStats {
    pub dim: usize,
    pub num_chunks: usize,
    /// Σ over chunks of nonzero rows.
    pub chunk_rows: usize,
    pub mean_chunk_rows: f64,
    pub nnz: usize,
}

/// Per-query beam: ascending `(cluster, score)` pairs, at most `beam` each.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamState {
    beam: usize,
    offsets: Vec<usize>,
    entries: Vec<(u32, f32)>,
}

impl BeamState {
    /// The root beam: cluster 0 with score 1 for every query.
    pub fn root(n: usize, beam: usize) -> Self {
        Self {
            beam,
            offsets: (0..=n).collect(),
            entries: vec![(0, 1.0); n],
        }
    }

    fn from_rows(beam: usize, rows: Vec<Vec<(u32, f32)>>) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        offsets.push(0);
        let mut entries = Vec::with_capacity(rows.iter().map(Vec::len).sum());
        for r in rows {
            entries.extend(r);
            offsets.push(entries.len());
        }
        Self {
            beam,
            offsets,
            entries,
        }
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn beam(&self) -> usize {
        self.beam
    }

    pub fn row(&self, q: usize) -> &[(u32, f32)] {
        &self.entries[self.offsets[q]..self.offsets[q + 1]]
    }

    /// Mask activating the chunks of every cluster in the beam.
    pub fn prolongate(&self, num_chunks: usize) -> Result<BlockMask> {
        BlockMask::from_parts(
            num_chunks,
            self.offsets.clone(),
            self.entries.iter().map(|e| e.0).collect(),
        )
    }
}

/// Top-k `(label, score)` per query, score descending, ties by ascending label.
#[derive(Clone, Debug)]
pub struct PredictionSet {
    rows: Vec<Vec<(u32, f32)>>,
}

impl PartialEq for PredictionSet {
    /// Bitwise comparison of scores.
    fn eq(&self, other: &Self) -> bool {
        self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                a.len() == b.len()
                    && a.iter()
                        .zip(b)
                        .all(|(x, y)| x.0 == y.0 && x.1.to_bits() == y.1.to_bits())
            })
    }
}

impl PredictionSet {
    pub fn new(rows: Vec<Vec<(u32, f32)>>) -> Self {
        Self { rows }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, q: usize) -> &[(u32, f32)] {
        &self.rows[q]
    }

    pub fn rows(&self) -> &[Vec<(u32, f32)>] {
        &self.rows
    }
}

/// Inference settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct InferOptions {
    pub beam: usize,
    pub topk: usize,
    pub method: IterationMethod,
    pub mscm: bool,
    pub workers: usize,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            beam: 10,
            topk: 10,
            method: IterationMethod::BinarySearch,
            mscm: true,
            workers: 1,
        }
    }
}

/// Ranking order: higher score first, then lower index.
#[inline]
fn rank_cmp(a: &(u32, f32), b: &(u32, f32)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Keeps the `b` highest-scoring entries (ties to the lower index), returned
/// in ascending index order.
pub fn select_top_b(row: &[(u32, f32)], b: usize) -> Vec<(u32, f32)> {
    let mut v = row.to_vec();
    if b == 0 {
        v.clear();
        return v;
    }
    if v.len() > b {
        v.select_nth_unstable_by(b - 1, rank_cmp);
        v.truncate(b);
    }
    v.sort_unstable_by_key(|e| e.0);
    v
}

/// The `k` best entries in ranking order.
pub fn top_k(row: &[(u32, f32)], k: usize) -> Vec<(u32, f32)> {
    let mut v = row.to_vec();
    if v.len() > k && k > 0 {
        v.select_nth_unstable_by(k - 1, rank_cmp);
    }
    v.truncate(k);
    v.sort_unstable_by(rank_cmp);
    v
}

/// Reusable inference state: worker pool and per-worker dense scratch.
pub struct Predictor<'m> {
    model: &'m XmrModel,
    options: InferOptions,
    pool: WorkerPool,
    scratch: Vec<DenseScratch>,
}

impl<'m> Predictor<'m> {
    pub fn new(model: &'m XmrModel, options: InferOptions) -> Result<Self> {
        if options.topk == 0 || options.topk > options.beam {
            return Err(Error::InvalidTopk {
                k: options.topk,
                beam: options.beam,
            });
        }
        if options.method == IterationMethod::HashLookup && !model.has_hash_indices() {
            return Err(Error::MissingHashIndex);
        }
        Ok(Self {
            model,
            options,
            pool: WorkerPool::new(options.workers)?,
            scratch: Vec::new(),
        })
    }

    pub fn options(&self) -> &InferOptions {
        &self.options
    }

    pub fn predict(&mut self, x: &CsrMatrix) -> Result<PredictionSet> {
        self.predict_tallied::<()>(x).map(|r| r.0)
    }

    pub fn predict_tallied<T: Tally + Default + Send>(
        &mut self,
        x: &CsrMatrix,
    ) -> Result<(PredictionSet, T)> {
        let (beam, tally) = self.beam_search::<T>(x)?;
        let k = self.options.topk;
        let rows = (0..beam.n()).map(|q| top_k(beam.row(q), k)).collect();
        Ok((PredictionSet::new(rows), tally))
    }

    /// Runs all layers and returns the final beam.
    pub fn beam_search<T: Tally + Default + Send>(
        &mut self,
        x: &CsrMatrix,
    ) -> Result<(BeamState, T)> {
        if x.cols() != self.model.dim {
            return Err(Error::DimensionMismatch {
                expected: self.model.dim,
                actual: x.cols(),
            });
        }
        let opts = self.options;
        let act_fn = self.model.activation;
        let mut beam = BeamState::root(x.rows(), opts.beam);
        let mut total = T::default();
        for layer in &self.model.layers {
            let mask = beam.prolongate(layer.chunked.num_chunks())?;
            let (act, tally) = if opts.mscm {
                masked_multiply_mscm_in::<T>(
                    &mask,
                    x,
                    &layer.chunked,
                    opts.method,
                    &self.pool,
                    &mut self.scratch,
                )?
            } else {
                masked_multiply_baseline_in::<T>(
                    &mask,
                    x,
                    layer.column_weights(),
                    opts.method,
                    &self.pool,
                    &mut self.scratch,
                )?
            };
            total.absorb(tally);
            beam = combine_and_select(&act, &beam, layer.chunked.col_offsets(), act_fn, &self.pool);
        }
        Ok((beam, total))
    }
}

/// Activation, multiplication by the prolongated parent score, and top-b
/// selection for every query.
fn combine_and_select(
    act: &ActivationMatrix,
    prev: &BeamState,
    col_offsets: &[usize],
    activation: ActivationKind,
    pool: &WorkerPool,
) -> BeamState {
    let b = prev.beam;
    let queries: Vec<usize> = (0..prev.n()).collect();
    let rows = pool.map(queries, |q| {
        let mut cand = Vec::with_capacity(act.row(q).0.len());
        for ((chunk, vals), &(parent, score)) in act.row_blocks(q).zip(prev.row(q)) {
            debug_assert_eq!(chunk, parent);
            let start = col_offsets[chunk as usize] as u32;
            for (o, &a) in vals.iter().enumerate() {
                cand.push((start + o as u32, activation.apply(a) * score));
            }
        }
        select_top_b(&cand, b)
    });
    BeamState::from_rows(b, rows)
}

/// Beam-search inference; see [`Predictor`] for repeated calls.
pub fn infer(model: &XmrModel, x: &CsrMatrix, options: InferOptions) -> Result<PredictionSet> {
    Predictor::new(model, options)?.predict(x)
}

/// Scores of every leaf for one query with no beam pruning.
pub fn exact_inference(model: &XmrModel, x: SparseVec<'_>) -> Result<Vec<f32>> {
    if x.dim() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            actual: x.dim(),
        });
    }
    let mut scores = vec![1.0f32];
    for layer in &model.layers {
        let offs = layer.chunked.col_offsets();
        let mut next = vec![0.0f32; layer.num_clusters()];
        for (p, &parent) in scores.iter().enumerate() {
            for (j, slot) in next.iter_mut().enumerate().take(offs[p + 1]).skip(offs[p]) {
                let a = sparse_dot(x, layer.csc.col_unchecked(j))?;
                *slot = model.activation.apply(a) * parent;
            }
        }
        scores = next;
    }
    Ok(scores)
}

/// Outcome of [`recommend_method`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Recommendation {
    pub method: IterationMethod,
    pub mscm: bool,
    pub reason: &'static str,
}

/// Batches at least this large amortise loading each chunk into a dense array.
pub const DENSE_MIN_BATCH: usize = 1000;
/// Approximate bytes per hash-index entry (key, value and table overhead).
pub const HASH_ENTRY_BYTES: usize = 16;

/// Picks an iteration method for a workload. MSCM is always on.
///
/// In order: dense lookup for large batches when a `d`-length array fits the
/// budget; hash lookup when the per-chunk indices fit and queries are no
/// denser than chunks; binary search otherwise.
pub fn recommend_method(
    stats: &ModelStats,
    batch_size: usize,
    mean_query_nnz: Option<f64>,
    memory_budget: Option<usize>,
) -> Recommendation {
    let budget = memory_budget.unwrap_or(usize::MAX);
    let dense_bytes = stats.dim.saturating_mul(std::mem::size_of::<u32>());
    let hash_bytes = stats.chunk_rows.saturating_mul(HASH_ENTRY_BYTES);
    let (method, reason) = if batch_size >= DENSE_MIN_BATCH && dense_bytes <= budget {
        (
            IterationMethod::DenseLookup,
            "large batch and the dense feature array fits in memory",
        )
    } else if hash_bytes <= budget && mean_query_nnz.is_none_or(|q| q <= stats.mean_chunk_rows) {
        (
            IterationMethod::HashLookup,
            "queries are sparser than chunks and hash indices fit in memory",
        )
    } else {
        (
            IterationMethod::BinarySearch,
            "hash indices exceed the memory budget or queries are denser than chunks",
        )
    };
    Recommendation {
        method,
        mscm: true,
        reason,
    }
}
