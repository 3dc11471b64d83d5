//! Linear XMR tree inference with masked sparse chunk multiplication (MSCM).
//!
//! A linear XMR tree scores a query against a hierarchy of label clusters.
//! Each layer is a sparse weight matrix whose columns are grouped into
//! *chunks*, one chunk per parent cluster. Beam search keeps the best `b`
//! clusters per query and layer, so the next layer only needs the products
//! of each query with the chunks below its beam. MSCM evaluates each such
//! (query, chunk) block with a single support intersection instead of one
//! per column, and produces bitwise the same scores as the per-column
//! baseline.
//!
//! Module map:
//!
//! * [`sparse`]: CSR/CSC containers and the baseline sparse dot product.
//! * [`chunked`]: the column-chunked weight matrix.
//! * [`kernels`]: vector × chunk products for the four iteration methods,
//!   plus their per-column baselines.
//! * [`masked`]: masked matrix products over block masks, with the worker
//!   partitioning contract.
//! * [`tree`]: the model, beam-search inference, exact inference and the
//!   iteration-method recommendation.
//! * [`format`], [`persist`], [`generate`]: text formats, model directories
//!   and the synthetic generator.
//! * [`bench`]: latency and throughput harness.

pub mod bench;
pub mod chunked;
mod error;
pub mod format;
pub mod generate;
pub mod kernels;
pub mod masked;
pub mod persist;
mod pool;
pub mod sparse;
pub mod tree;

pub use chunked::{Chunk, ChunkStats, ChunkedWeightMatrix};
pub use error::{Error, Result};
pub use generate::{generate_model, generate_queries, GeneratorConfig};
pub use kernels::{DenseScratch, IterationMethod, KernelCounters, Tally};
pub use masked::{ActivationMatrix, BlockMask};
pub use pool::WorkerPool;
pub use sparse::{CscMatrix, CsrMatrix, SparseVec, SparseVector};
pub use tree::{
    exact_inference, infer, recommend_method, select_top_b, InferOptions, PredictionSet, Predictor,
    Recommendation, XmrModel,
};
