//! Synthetic datasets and CSV ingestion.
//!
//! Every generator is a pure function of its configuration and seed, so
//! experiments reproduce without external downloads. Saved datasets carry a
//! sibling `<path>.meta` file recording generator name, configuration, and
//! seed.

use crate::numkit::Matrix;
use crate::rng::Rng;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("split error: {0}")]
    Split(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A labelled feature matrix.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<usize>,
    pub classes: usize,
    /// Optional box bounds for attack projection (e.g. `(0, 1)` for
    /// image-like features). Synthetic feature data is unbounded.
    pub bounds: Option<(f64, f64)>,
    pub name: String,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.len() == 0 {
            return Err(DataError::InvalidArgument("dataset has no rows".into()));
        }
        if self.y.len() != self.len() {
            return Err(DataError::InvalidArgument("label count mismatch".into()));
        }
        if self.y.iter().any(|&l| l >= self.classes) {
            return Err(DataError::InvalidArgument("label outside [0, classes)".into()));
        }
        Ok(())
    }
}

/// Gaussian blobs: class means equally spaced on a circle in the first two
/// coordinates, scaled so adjacent means are `separation` apart, plus
/// isotropic noise in all `d` dimensions.
pub fn gen_blobs(
    classes: usize,
    dim: usize,
    n_per_class: usize,
    separation: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if classes < 2 || dim < 2 || n_per_class == 0 {
        return Err(DataError::InvalidArgument(
            "need classes >= 2, dim >= 2, n_per_class >= 1".into(),
        ));
    }
    if !(separation > 0.0) || noise_sd < 0.0 {
        return Err(DataError::InvalidArgument(
            "need separation > 0 and noise_sd >= 0".into(),
        ));
    }
    let means = blob_means(classes, dim, separation);
    let mut rng = Rng::stream(seed, "gen-blobs");
    let n = classes * n_per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (k, mean) in means.iter().enumerate() {
        for _ in 0..n_per_class {
            for &m in mean {
                data.push(m + noise_sd * rng.normal());
            }
            labels.push(k);
        }
    }
    Ok(Dataset {
        x: Matrix::new(n, dim, data).map_err(|e| DataError::InvalidArgument(e.to_string()))?,
        y: labels,
        classes,
        bounds: None,
        name: "blobs".into(),
        seed,
    })
}

/// Class means for [`gen_blobs`]: on a circle of radius
/// `separation / (2 sin(pi / classes))` adjacent means sit exactly
/// `separation` apart; for two classes this collapses to means at
/// `+-separation/2` on the first axis.
pub fn blob_means(classes: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    let radius = separation / (2.0 * (std::f64::consts::PI / classes as f64).sin());
    (0..classes)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / classes as f64;
            let mut mean = vec![0.0; dim];
            mean[0] = radius * angle.cos();
            mean[1] = radius * angle.sin();
            mean
        })
        .collect()
}

/// Two interleaved half-circles in 2-D with Gaussian noise.
pub fn gen_moons(n: usize, noise_sd: f64, seed: u64) -> Result<Dataset, DataError> {
    if n < 2 {
        return Err(DataError::InvalidArgument("need n >= 2".into()));
    }
    let mut rng = Rng::stream(seed, "gen-moons");
    let n0 = n / 2 + n % 2;
    let n1 = n / 2;
    let mut data = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n0 {
        let t = std::f64::consts::PI * i as f64 / (n0.max(2) - 1) as f64;
        data.push(t.cos() + noise_sd * rng.normal());
        data.push(t.sin() + noise_sd * rng.normal());
        labels.push(0);
    }
    for i in 0..n1 {
        let t = std::f64::consts::PI * i as f64 / (n1.max(2) - 1) as f64;
        data.push(1.0 - t.cos() + noise_sd * rng.normal());
        data.push(0.5 - t.sin() + noise_sd * rng.normal());
        labels.push(1);
    }
    Ok(Dataset {
        x: Matrix::new(n, 2, data).map_err(|e| DataError::InvalidArgument(e.to_string()))?,
        y: labels,
        classes: 2,
        bounds: None,
        name: "moons".into(),
        seed,
    })
}

/// Concentric rings in 2-D: class `k` lies on radius `k + 1`, with Gaussian
/// noise on both coordinates.
pub fn gen_rings(n: usize, classes: usize, noise_sd: f64, seed: u64) -> Result<Dataset, DataError> {
    if n < 2 || classes < 2 {
        return Err(DataError::InvalidArgument("need n >= 2 and classes >= 2".into()));
    }
    let mut rng = Rng::stream(seed, "gen-rings");
    let mut data = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for k in 0..classes {
        // each class within +-1 of n / classes
        let count = n / classes + usize::from(k < n % classes);
        let radius = (k + 1) as f64;
        for _ in 0..count {
            let angle = rng.uniform_in(0.0, 2.0 * std::f64::consts::PI);
            data.push(radius * angle.cos() + noise_sd * rng.normal());
            data.push(radius * angle.sin() + noise_sd * rng.normal());
            labels.push(k);
        }
    }
    Ok(Dataset {
        x: Matrix::new(labels.len(), 2, data)
            .map_err(|e| DataError::InvalidArgument(e.to_string()))?,
        y: labels,
        classes,
        bounds: None,
        name: "rings".into(),
        seed,
    })
}

/// Writes `dataset` as CSV with header `f0,...,f{d-1},label` (values at 17
/// significant digits) plus a sibling `<path>.meta` metadata file.
pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    dataset.validate()?;
    let d = dataset.dim();
    let mut out = String::new();
    for j in 0..d {
        let _ = write!(out, "f{j},");
    }
    out.push_str("label\n");
    for i in 0..dataset.len() {
        for v in dataset.x.row(i) {
            let _ = write!(out, "{v:.16e},");
        }
        let _ = writeln!(out, "{}", dataset.y[i]);
    }
    std::fs::write(path, out)?;

    let mut meta = String::new();
    let _ = writeln!(meta, "generator={}", dataset.name);
    let _ = writeln!(meta, "seed={}", dataset.seed);
    let _ = writeln!(meta, "classes={}", dataset.classes);
    let _ = writeln!(meta, "dim={d}");
    let _ = writeln!(meta, "rows={}", dataset.len());
    if let Some((lo, hi)) = dataset.bounds {
        let _ = writeln!(meta, "bounds={lo},{hi}");
    }
    std::fs::write(meta_path(path), meta)?;
    Ok(())
}

fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta");
    std::path::PathBuf::from(s)
}

/// Loads a dataset saved by [`save_csv`]. The class count comes from the
/// sibling metadata file when present, otherwise from the largest label.
pub fn load_csv(path: &Path) -> Result<Dataset, DataError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| DataError::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[cols.len() - 1] != "label" {
        return Err(DataError::Parse {
            line: 1,
            message: format!("expected header `f0,...,label`, got `{header}`"),
        });
    }
    let d = cols.len() - 1;
    for (j, c) in cols[..d].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(DataError::Parse {
                line: 1,
                message: format!("expected column `f{j}`, got `{c}`"),
            });
        }
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != d + 1 {
            return Err(DataError::Parse {
                line: lineno,
                message: format!("expected {} cells, got {}", d + 1, cells.len()),
            });
        }
        for cell in &cells[..d] {
            let v: f64 = cell.parse().map_err(|_| DataError::Parse {
                line: lineno,
                message: format!("bad float `{cell}`"),
            })?;
            if !v.is_finite() {
                return Err(DataError::Parse {
                    line: lineno,
                    message: format!("non-finite feature `{cell}`"),
                });
            }
            data.push(v);
        }
        let label: usize = cells[d].parse().map_err(|_| DataError::Parse {
            line: lineno,
            message: format!("bad label `{}`", cells[d]),
        })?;
        labels.push(label);
        rows += 1;
    }
    if rows == 0 {
        return Err(DataError::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }

    let meta = std::fs::read_to_string(meta_path(path)).ok();
    let mut classes = labels.iter().max().unwrap() + 1;
    let mut name = "csv".to_string();
    let mut seed = 0;
    let mut bounds = None;
    if let Some(meta) = meta {
        for line in meta.lines() {
            if let Some((k, v)) = line.split_once('=') {
                match k {
                    "classes" => {
                        classes = v.parse().map_err(|_| DataError::Parse {
                            line: 0,
                            message: "bad classes in metadata".into(),
                        })?;
                    }
                    "generator" => name = v.to_string(),
                    "seed" => seed = v.parse().unwrap_or(0),
                    "bounds" => {
                        if let Some((lo, hi)) = v.split_once(',') {
                            bounds = Some((
                                lo.parse().map_err(|_| DataError::Parse {
                                    line: 0,
                                    message: "bad bounds in metadata".into(),
                                })?,
                                hi.parse().map_err(|_| DataError::Parse {
                                    line: 0,
                                    message: "bad bounds in metadata".into(),
                                })?,
                            ));
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    if classes < 2 {
        classes = 2;
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(DataError::Parse {
            line: 0,
            message: format!("label {bad} outside [0, {classes})"),
        });
    }
    Ok(Dataset {
        x: Matrix::new(rows, d, data).map_err(|e| DataError::InvalidArgument(e.to_string()))?,
        y: labels,
        classes,
        bounds,
        name,
        seed,
    })
}

/// Stratified split: per class, a seeded shuffle then a `fraction` share into
/// the first part. The parts are disjoint and exhaustive.
pub fn split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::InvalidArgument(format!(
            "fraction must lie in (0, 1), got {fraction}"
        )));
    }
    dataset.validate().map_err(|e| DataError::Split(e.to_string()))?;
    let mut rng = Rng::stream(seed, "split");
    let mut first_idx = Vec::new();
    let mut second_idx = Vec::new();
    for class in 0..dataset.classes {
        let mut members: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.y[i] == class).collect();
        if members.len() < 2 {
            return Err(DataError::Split(format!(
                "class {class} has {} samples, need at least 2",
                members.len()
            )));
        }
        rng.shuffle(&mut members);
        let k = ((fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1);
        first_idx.extend_from_slice(&members[..k]);
        second_idx.extend_from_slice(&members[k..]);
    }
    first_idx.sort_unstable();
    second_idx.sort_unstable();
    Ok((subset(dataset, &first_idx), subset(dataset, &second_idx)))
}

/// Rows of `dataset` selected by index, in the given order.
pub fn subset(dataset: &Dataset, indices: &[usize]) -> Dataset {
    let d = dataset.dim();
    let mut data = Vec::with_capacity(indices.len() * d);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        data.extend_from_slice(dataset.x.row(i));
        labels.push(dataset.y[i]);
    }
    Dataset {
        x: Matrix::new(indices.len(), d, data).expect("subset of a valid dataset"),
        y: labels,
        classes: dataset.classes,
        bounds: dataset.bounds,
        name: dataset.name.clone(),
        seed: dataset.seed,
    }
}
