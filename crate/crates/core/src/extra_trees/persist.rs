//! Model file: versioned JSON holding parameters, importances and per-tree
//! node arrays.
//!
//! ```text
//! {
//!   "format": "cdm-extra-trees", "version": 1,
//!   "params": {"n_trees": .., "k_features": "auto" | K, "n_min": .., "seed": .., "score": ..},
//!   "feature_names": [..], "feature_importance": [..],
//!   "trees": [{"feature": [..], "cut": [..], "left": [..], "right": [..],
//!              "samples": [..], "positives": [..]}, ..]
//! }
//! ```
//!
//! `feature` is -1 on leaves. Floats are written in shortest round-trip form,
//! so a reloaded model predicts bit-identically.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExtraTreesModel, ExtraTreesParams, Tree, TreeError, LEAF};

pub const MODEL_FORMAT: &str = "cdm-extra-trees";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize)]
struct ModelRef<'a> {
    format: &'static str,
    version: u32,
    params: &'a ExtraTreesParams,
    feature_names: &'a [String],
    feature_importance: &'a [f64],
    trees: &'a [Tree],
}

#[derive(Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    params: ExtraTreesParams,
    feature_names: Vec<String>,
    feature_importance: Vec<f64>,
    trees: Vec<Tree>,
}

pub fn write_model<W: Write>(model: &ExtraTreesModel, writer: W) -> Result<(), TreeError> {
    let mut w = BufWriter::new(writer);
    serde_json::to_writer(
        &mut w,
        &ModelRef {
            format: MODEL_FORMAT,
            version: MODEL_VERSION,
            params: &model.params,
            feature_names: &model.feature_names,
            feature_importance: &model.feature_importance,
            trees: &model.trees,
        },
    )?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(reader: R) -> Result<ExtraTreesModel, TreeError> {
    let file: ModelFile = serde_json::from_reader(BufReader::new(reader))?;
    if file.format != MODEL_FORMAT {
        return Err(TreeError::Format(format!("unknown format `{}`", file.format)));
    }
    if file.version != MODEL_VERSION {
        return Err(TreeError::Format(format!("unsupported version {}", file.version)));
    }
    let d = file.feature_names.len();
    file.params.validate(d)?;
    if file.feature_importance.len() != d {
        return Err(TreeError::Format("importance length differs from feature count".into()));
    }
    if file.trees.is_empty() {
        return Err(TreeError::Format("model has no trees".into()));
    }
    for (t, tree) in file.trees.iter().enumerate() {
        check_tree(tree, d).map_err(|e| TreeError::Format(format!("tree {t}: {e}")))?;
    }
    Ok(ExtraTreesModel {
        params: file.params,
        feature_names: file.feature_names,
        trees: file.trees,
        feature_importance: file.feature_importance,
    })
}

fn check_tree(tree: &Tree, d: usize) -> Result<(), String> {
    let n = tree.feature.len();
    if n == 0 {
        return Err("empty".into());
    }
    let lens = [tree.cut.len(), tree.left.len(), tree.right.len(), tree.samples.len(), tree.positives.len()];
    if lens.iter().any(|&l| l != n) {
        return Err("node arrays have different lengths".into());
    }
    for i in 0..n {
        if tree.samples[i] == 0 || tree.positives[i] > tree.samples[i] {
            return Err(format!("node {i}: bad counts"));
        }
        let f = tree.feature[i];
        if f == LEAF {
            continue;
        }
        if f < 0 || f as usize >= d {
            return Err(format!("node {i}: feature {f} out of range"));
        }
        let (l, r) = (tree.left[i] as usize, tree.right[i] as usize);
        // Children are always stored after their parent, which rules out cycles.
        if l <= i || r <= i || l >= n || r >= n {
            return Err(format!("node {i}: bad child links"));
        }
        if !tree.cut[i].is_finite() {
            return Err(format!("node {i}: non-finite cut"));
        }
    }
    Ok(())
}

pub fn save_model(model: &ExtraTreesModel, path: &Path) -> Result<(), TreeError> {
    write_model(model, File::create(path)?)
}

pub fn load_model(path: &Path) -> Result<ExtraTreesModel, TreeError> {
    read_model(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Execution;
    use crate::extra_trees::{train, Dataset, KFeatures};

    fn model() -> (ExtraTreesModel, Dataset) {
        let rows: Vec<Vec<f64>> = (0..90).map(|i| vec![(i as f64).sin() * 3.0, (i % 11) as f64 / 7.0]).collect();
        let labels = (0..90).map(|i| u8::from((i as f64).sin() > 0.2)).collect();
        let d = Dataset::from_rows(&rows, labels).unwrap();
        let p = ExtraTreesParams { n_trees: 7, k_features: KFeatures::Fixed(2), seed: 3, ..Default::default() };
        (train(&d, &p, Execution::Sequential).unwrap(), d)
    }

    #[test]
    fn round_trip_predicts_identically() {
        let (m, d) = model();
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        let back = read_model(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        for i in 0..d.n_rows() {
            let x = d.row(i);
            assert_eq!(m.predict_proba(&x).unwrap().to_bits(), back.predict_proba(&x).unwrap().to_bits());
        }
        let mut again = Vec::new();
        write_model(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_tampered_files() {
        let (m, _) = model();
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let wrong_version = text.replacen("\"version\":1", "\"version\":9", 1);
        assert!(matches!(read_model(wrong_version.as_bytes()), Err(TreeError::Format(_))));
        let wrong_format = text.replacen(MODEL_FORMAT, "other", 1);
        assert!(matches!(read_model(wrong_format.as_bytes()), Err(TreeError::Format(_))));
        assert!(read_model("{}".as_bytes()).is_err());
    }

    #[test]
    fn rejects_bad_links() {
        let t = Tree {
            feature: vec![0, LEAF],
            cut: vec![0.5, 0.0],
            left: vec![0, 0],
            right: vec![1, 0],
            samples: vec![2, 1],
            positives: vec![1, 1],
        };
        assert!(check_tree(&t, 1).is_err());
    }
}
