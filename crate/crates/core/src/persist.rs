//! Model directories, query files and prediction output.
//!
//! A model directory holds `meta.txt` and, for every weighted layer `l`
//! (2 through depth), `layer_<l>.mat` (CSC weights) and `layer_<l>.chunks`
//! (chunk boundaries).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::format::{
    format_significant, read_chunks, read_csc, read_csr, write_chunks, write_csc, write_csr,
};
use crate::sparse::CsrMatrix;
use crate::tree::{ActivationKind, PredictionSet, XmrModel};

pub const MODEL_MAGIC: &str = "XMRMODEL";
pub const META_FILE: &str = "meta.txt";

/// Contents of `meta.txt`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ModelManifest {
    pub version: u32,
    pub dim: usize,
    pub depth: usize,
    pub activation: ActivationKind,
    /// `L_1 = 1, L_2, …, L_depth`.
    pub cluster_counts: Vec<usize>,
    /// Largest chunk width per weighted layer (not stored on disk).
    pub branching: Vec<usize>,
}

impl ModelManifest {
    pub fn from_model(model: &XmrModel) -> Self {
        Self {
            version: 1,
            dim: model.dim(),
            depth: model.depth(),
            activation: model.activation(),
            cluster_counts: model.cluster_counts(),
            branching: model
                .layers()
                .iter()
                .map(|l| l.chunked().max_width())
                .collect(),
        }
    }

    pub fn write<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "{MODEL_MAGIC} v{}", self.version)?;
        writeln!(out, "dim {}", self.dim)?;
        writeln!(out, "depth {}", self.depth)?;
        writeln!(out, "activation {}", self.activation.name())?;
        for (i, c) in self.cluster_counts.iter().enumerate() {
            writeln!(out, "layer {} clusters {c}", i + 1)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = Vec::new();
        for l in input.lines() {
            let l = l?;
            if !l.trim().is_empty() {
                lines.push(l);
            }
        }
        let perr = |line: usize, msg: String| Error::Parse { line, msg };
        let header = lines
            .first()
            .ok_or_else(|| Error::Shape("empty meta.txt".into()))?;
        match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            [MODEL_MAGIC, "v1"] => {}
            [MODEL_MAGIC, v] => return Err(Error::Version(format!("{MODEL_MAGIC} {v}"))),
            _ => return Err(perr(1, format!("expected `{MODEL_MAGIC} v1`"))),
        }
        let mut dim = None;
        let mut depth = None;
        let mut activation = None;
        let mut clusters: Vec<(usize, usize)> = Vec::new();
        for (i, l) in lines.iter().enumerate().skip(1) {
            let lineno = i + 1;
            let tok: Vec<&str> = l.split_whitespace().collect();
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| perr(lineno, format!("invalid number `{s}`")))
            };
            match tok.as_slice() {
                ["dim", v] => dim = Some(num(v)?),
                ["depth", v] => depth = Some(num(v)?),
                ["activation", "sigmoid"] => activation = Some(ActivationKind::Sigmoid),
                ["activation", other] => {
                    return Err(perr(lineno, format!("unsupported activation `{other}`")))
                }
                ["layer", l, "clusters", c] => clusters.push((num(l)?, num(c)?)),
                _ => return Err(perr(lineno, format!("unrecognised line `{l}`"))),
            }
        }
        let dim = dim.ok_or_else(|| Error::Shape("meta.txt lacks `dim`".into()))?;
        let depth = depth.ok_or_else(|| Error::Shape("meta.txt lacks `depth`".into()))?;
        let activation =
            activation.ok_or_else(|| Error::Shape("meta.txt lacks `activation`".into()))?;
        if clusters.len() != depth || clusters.iter().enumerate().any(|(i, &(l, _))| l != i + 1) {
            return Err(Error::Shape(format!(
                "meta.txt must list layers 1..={depth} in order"
            )));
        }
        if clusters[0].1 != 1 {
            return Err(Error::Shape("layer 1 must have exactly one cluster".into()));
        }
        Ok(Self {
            version: 1,
            dim,
            depth,
            activation,
            cluster_counts: clusters.into_iter().map(|c| c.1).collect(),
            branching: Vec::new(),
        })
    }
}

fn layer_paths(dir: &Path, layer: usize) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("layer_{layer}.mat")),
        dir.join(format!("layer_{layer}.chunks")),
    )
}

fn open(path: &Path) -> Result<BufReader<File>> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(Error::Shape(format!("missing file {}", path.display())))
        }
        Err(e) => Err(e.into()),
    }
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Shape(m) => Error::Shape(format!("{}: {m}", path.display())),
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

pub fn save_model(model: &XmrModel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut meta = BufWriter::new(File::create(dir.join(META_FILE))?);
    ModelManifest::from_model(model).write(&mut meta)?;
    meta.flush()?;
    for (i, layer) in model.layers().iter().enumerate() {
        let (mat, chunks) = layer_paths(dir, i + 2);
        let mut out = BufWriter::new(File::create(mat)?);
        write_csc(layer.csc(), &mut out)?;
        out.flush()?;
        let mut out = BufWriter::new(File::create(chunks)?);
        write_chunks(layer.chunked().col_offsets(), &mut out)?;
        out.flush()?;
    }
    Ok(())
}

pub fn load_model(dir: &Path) -> Result<XmrModel> {
    let meta_path = dir.join(META_FILE);
    let manifest = with_path(&meta_path, ModelManifest::read(open(&meta_path)?))?;
    if manifest.depth < 2 {
        return Err(Error::Shape("depth must be at least 2".into()));
    }
    let mut layers = Vec::with_capacity(manifest.depth - 1);
    for l in 2..=manifest.depth {
        let (mat, chunks) = layer_paths(dir, l);
        let w = with_path(&mat, read_csc(open(&mat)?))?;
        let bounds = with_path(&chunks, read_chunks(open(&chunks)?))?;
        let expected = manifest.cluster_counts[l - 1];
        if w.rows() != manifest.dim || w.cols() != expected {
            return Err(Error::Shape(format!(
                "{}: expected {}×{expected}, found {}×{}",
                mat.display(),
                manifest.dim,
                w.rows(),
                w.cols()
            )));
        }
        if bounds.len() != manifest.cluster_counts[l - 2] + 1 {
            return Err(Error::Shape(format!(
                "{}: expected {} chunks, found {}",
                chunks.display(),
                manifest.cluster_counts[l - 2],
                bounds.len().saturating_sub(1)
            )));
        }
        layers.push((w, bounds));
    }
    XmrModel::new(manifest.dim, layers)
}

pub fn load_queries(path: &Path) -> Result<CsrMatrix> {
    with_path(path, read_csr(open(path)?))
}

pub fn save_queries(queries: &CsrMatrix, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_csr(queries, &mut out)?;
    out.flush()?;
    Ok(())
}

/// `query_id<TAB>label_id<TAB>score`, ranking order, 9 significant digits.
pub fn write_predictions<W: Write>(preds: &PredictionSet, out: &mut W) -> Result<()> {
    for (q, row) in preds.rows().iter().enumerate() {
        for &(label, score) in row {
            writeln!(out, "{q}\t{label}\t{}", format_significant(score as f64, 9))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{generate_model, generate_queries, GeneratorConfig};
    use crate::sparse::CscMatrix;

    fn toy() -> XmrModel {
        let w = CscMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, -0.25)]).unwrap();
        XmrModel::new(2, vec![(w, vec![0, 2])]).unwrap()
    }

    #[test]
    fn toy_round_trip_and_meta_text() {
        let dir = tempfile::tempdir().unwrap();
        save_model(&toy(), dir.path()).unwrap();
        let meta = std::fs::read_to_string(dir.path().join(META_FILE)).unwrap();
        assert_eq!(
            meta,
            "XMRMODEL v1\ndim 2\ndepth 2\nactivation sigmoid\nlayer 1 clusters 1\nlayer 2 clusters 2\n"
        );
        assert_eq!(load_model(dir.path()).unwrap(), toy());
    }

    #[test]
    fn generated_model_round_trip_is_bitwise() {
        let cfg = GeneratorConfig {
            depth: 4,
            branch: 32,
            dim: 2000,
            labels: 4096,
            nnz: 8,
            overlap: 0.5,
            seed: 3,
        };
        let m = generate_model(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_model(&m, dir.path()).unwrap();
        let back = load_model(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(
            back.layers()[1].chunked().col_offsets(),
            m.layers()[1].chunked().col_offsets()
        );
    }

    #[test]
    fn truncated_layer_file_is_a_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        save_model(&toy(), dir.path()).unwrap();
        let path = dir.path().join("layer_2.mat");
        let text = std::fs::read_to_string(&path).unwrap();
        let cut: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
        std::fs::write(&path, cut).unwrap();
        assert!(matches!(load_model(dir.path()), Err(Error::Shape(_))));
    }

    #[test]
    fn missing_layer_file_and_bad_version() {
        let dir = tempfile::tempdir().unwrap();
        save_model(&toy(), dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("layer_2.chunks")).unwrap();
        assert!(matches!(load_model(dir.path()), Err(Error::Shape(_))));

        let dir = tempfile::tempdir().unwrap();
        save_model(&toy(), dir.path()).unwrap();
        let meta = dir.path().join(META_FILE);
        let text = std::fs::read_to_string(&meta).unwrap().replace("v1", "v2");
        std::fs::write(&meta, text).unwrap();
        assert!(matches!(load_model(dir.path()), Err(Error::Version(_))));
    }

    #[test]
    fn inconsistent_meta_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_model(&toy(), dir.path()).unwrap();
        let meta = dir.path().join(META_FILE);
        let text = std::fs::read_to_string(&meta)
            .unwrap()
            .replace("clusters 2", "clusters 3");
        std::fs::write(&meta, text).unwrap();
        assert!(matches!(load_model(dir.path()), Err(Error::Shape(_))));
    }

    #[test]
    fn queries_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.txt");
        let q = generate_queries(25, 400, 6, 9).unwrap();
        save_queries(&q, &path).unwrap();
        assert_eq!(load_queries(&path).unwrap(), q);
    }

    #[test]
    fn prediction_tsv() {
        let p = PredictionSet::new(vec![vec![(4, 0.731_058_6), (1, 0.5)], vec![]]);
        let mut out = Vec::new();
        write_predictions(&p, &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "0\t4\t0.731058598\n0\t1\t0.5\n"
        );
    }
}
