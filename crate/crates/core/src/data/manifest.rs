use std::path::{Path, PathBuf};

use super::pmx::{load_matrix, save_matrix};
use super::{Dataset, SemanticSpace, ZslSplits};
use crate::error::{Error, Result};
use crate::kv::{self, KeyValues};
use crate::numerics::Matrix;

pub const MANIFEST_KEYS: [&str; 8] = [
    "features_train",
    "labels_train",
    "features_test_seen",
    "labels_test_seen",
    "features_test_unseen",
    "labels_test_unseen",
    "descriptors",
    "seen_mask",
];

/// Reads a labels file: one unsigned decimal integer per line.
pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            line.trim()
                .parse::<usize>()
                .map_err(|_| Error::validation(&name, Some(i + 1), format!("bad label `{line}`")))
        })
        .collect()
}

pub fn save_labels(labels: &[usize], path: &Path) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 3);
    for l in labels {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_mask(kv: &KeyValues) -> Result<Vec<bool>> {
    kv.require("seen_mask")?
        .split(',')
        .map(|t| match t.trim() {
            "1" => Ok(true),
            "0" => Ok(false),
            other => Err(Error::validation(
                kv.source(),
                None,
                format!("seen_mask entries must be 0 or 1, found `{other}`"),
            )),
        })
        .collect()
}

struct Split {
    features: Matrix,
    labels: Vec<usize>,
    features_name: String,
    labels_name: String,
}

fn load_split(base: &Path, kv: &KeyValues, features_key: &str, labels_key: &str) -> Result<Split> {
    let fpath = base.join(kv.require(features_key)?);
    let lpath = base.join(kv.require(labels_key)?);
    Ok(Split {
        features: load_matrix(&fpath)?,
        labels: load_labels(&lpath)?,
        features_name: fpath.display().to_string(),
        labels_name: lpath.display().to_string(),
    })
}

/// Loads the three splits and descriptors referenced by a manifest, checking
/// shapes, label ranges and the seen/unseen partition.
pub fn load_manifest(path: &Path) -> Result<ZslSplits> {
    let kv = KeyValues::read(path)?;
    kv.reject_unknown(&MANIFEST_KEYS)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mask = parse_mask(&kv)?;
    let class_count = mask.len();
    let dpath = base.join(kv.require("descriptors")?);
    let descriptors = load_matrix(&dpath)?;
    if descriptors.rows() != class_count {
        return Err(Error::validation(
            dpath.display().to_string(),
            None,
            format!(
                "dimension mismatch: {} descriptor rows for {class_count} classes in seen_mask",
                descriptors.rows()
            ),
        ));
    }
    let space = SemanticSpace::new(descriptors, mask)
        .map_err(|e| Error::validation(dpath.display().to_string(), None, e.to_string()))?;

    let train = load_split(base, &kv, "features_train", "labels_train")?;
    let test_seen = load_split(base, &kv, "features_test_seen", "labels_test_seen")?;
    let test_unseen = load_split(base, &kv, "features_test_unseen", "labels_test_unseen")?;
    let dim = train.features.cols();

    let build = |split: Split, want_seen: bool| -> Result<Dataset> {
        if split.features.cols() != dim {
            return Err(Error::validation(
                &split.features_name,
                None,
                format!("dimension mismatch: {} feature columns, train has {dim}", split.features.cols()),
            ));
        }
        if split.labels.len() != split.features.rows() {
            return Err(Error::validation(
                &split.labels_name,
                None,
                format!(
                    "dimension mismatch: {} labels for {} feature rows",
                    split.labels.len(),
                    split.features.rows()
                ),
            ));
        }
        for (row, &l) in split.labels.iter().enumerate() {
            if l >= class_count {
                return Err(Error::validation(
                    &split.labels_name,
                    Some(row + 1),
                    format!("label {l} out of range for {class_count} classes"),
                ));
            }
            if space.is_seen(l) != want_seen {
                let kind = if want_seen { "unseen" } else { "seen" };
                return Err(Error::validation(
                    &split.labels_name,
                    Some(row + 1),
                    format!("{kind} class {l} not allowed in this split"),
                ));
            }
        }
        Dataset::new(split.features, split.labels, class_count)
    };

    Ok(ZslSplits {
        train: build(train, true)?,
        test_seen: build(test_seen, true)?,
        test_unseen: build(test_unseen, false)?,
        space,
    })
}

/// Writes every split plus `manifest.txt` into `dir`; returns the manifest path.
pub fn write_manifest(dir: &Path, splits: &ZslSplits) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let parts: [(&str, &str, &Dataset); 3] = [
        ("train", "features_train.pmx1", &splits.train),
        ("test_seen", "features_test_seen.pmx1", &splits.test_seen),
        ("test_unseen", "features_test_unseen.pmx1", &splits.test_unseen),
    ];
    let mut entries: Vec<(&str, String)> = Vec::new();
    for (name, file, ds) in parts {
        let labels_file = format!("labels_{name}.txt");
        save_matrix(ds.features(), &dir.join(file))?;
        save_labels(ds.labels(), &dir.join(&labels_file))?;
        entries.push((feature_key(name), file.to_string()));
        entries.push((label_key(name), labels_file));
    }
    save_matrix(splits.space.descriptors(), &dir.join("descriptors.pmx1"))?;
    entries.push(("descriptors", "descriptors.pmx1".into()));
    let mask: Vec<&str> = splits
        .space
        .seen_mask()
        .iter()
        .map(|s| if *s { "1" } else { "0" })
        .collect();
    entries.push(("seen_mask", mask.join(",")));
    let path = dir.join("manifest.txt");
    std::fs::write(&path, kv::render(&entries)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn feature_key(split: &str) -> &'static str {
    match split {
        "train" => "features_train",
        "test_seen" => "features_test_seen",
        _ => "features_test_unseen",
    }
}

fn label_key(split: &str) -> &'static str {
    match split {
        "train" => "labels_train",
        "test_seen" => "labels_test_seen",
        _ => "labels_test_unseen",
    }
}
