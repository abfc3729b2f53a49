//! Versioned text checkpoints.
//!
//! Layout (`RRLAB-CKPT v1`):
//!
//! ```text
//! RRLAB-CKPT v1
//! meta input_dim 4
//! meta backbone 8,8
//! meta classes 3
//! meta aux_hidden 4
//! meta config_digest 9a3f...
//! meta seed 42
//! meta epoch 17
//! array backbone0.w 8 4
//! <one line of 4 values per row, 17 significant digits>
//! ...
//! ```
//!
//! Every tensor is printed row-major with 17 significant digits, which makes
//! the save/load round trip bit-exact.

use super::{Architecture, Layer, ModelError, TwoHeadParams};
use crate::numkit::Matrix;
use std::fmt::Write as _;
use std::path::Path;

pub const CHECKPOINT_VERSION: &str = "RRLAB-CKPT v1";

/// A parameter snapshot plus the metadata needed to reproduce the run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: TwoHeadParams,
    /// FNV-1a digest of the resolved training config, as lowercase hex.
    pub config_digest: String,
    pub seed: u64,
    pub epoch: usize,
}

fn write_values(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v:.16e}");
    }
    out.push('\n');
}

fn write_matrix(out: &mut String, name: &str, m: &Matrix) {
    let _ = writeln!(out, "array {name} {} {}", m.rows(), m.cols());
    for r in 0..m.rows() {
        write_values(out, m.row(r));
    }
}

fn write_vector(out: &mut String, name: &str, v: &[f64]) {
    let _ = writeln!(out, "array {name} {}", v.len());
    write_values(out, v);
}

/// Serializes a checkpoint to `path`, writing a temp file first and renaming
/// it into place.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), ModelError> {
    let arch = ckpt.params.arch();
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_VERSION}");
    let _ = writeln!(out, "meta input_dim {}", arch.input_dim());
    let backbone = if arch.backbone().is_empty() {
        "-".to_string()
    } else {
        arch.backbone()
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    let _ = writeln!(out, "meta backbone {backbone}");
    let _ = writeln!(out, "meta classes {}", arch.classes());
    let _ = writeln!(out, "meta aux_hidden {}", arch.aux_hidden());
    let _ = writeln!(out, "meta config_digest {}", ckpt.config_digest);
    let _ = writeln!(out, "meta seed {}", ckpt.seed);
    let _ = writeln!(out, "meta epoch {}", ckpt.epoch);

    let p = &ckpt.params;
    for (i, layer) in p.backbone.iter().enumerate() {
        write_matrix(&mut out, &format!("backbone{i}.w"), &layer.w);
        write_vector(&mut out, &format!("backbone{i}.b"), &layer.b);
    }
    write_matrix(&mut out, "cls.w", &p.cls_w);
    write_vector(&mut out, "cls.b", &p.cls_b);
    write_matrix(&mut out, "aux.w1", &p.aux_w1);
    write_vector(&mut out, "aux.b1", &p.aux_b1);
    write_vector(&mut out, "aux.bn_gamma", &p.bn_gamma);
    write_vector(&mut out, "aux.bn_beta", &p.bn_beta);
    write_vector(&mut out, "aux.bn_mean", &p.bn_mean);
    write_vector(&mut out, "aux.bn_var", &p.bn_var);
    write_matrix(&mut out, "aux.w2", &p.aux_w2);
    write_vector(&mut out, "aux.b2", &p.aux_b2);

    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, out)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    text: &'a str,
    offset: usize,
}

impl<'a> Reader<'a> {
    fn next_line(&mut self) -> Option<(usize, &'a str)> {
        if self.offset >= self.text.len() {
            return None;
        }
        let start = self.offset;
        let rest = &self.text[start..];
        let (line, advance) = match rest.find('\n') {
            Some(i) => (&rest[..i], i + 1),
            None => (rest, rest.len()),
        };
        self.offset += advance;
        Some((start, line))
    }

    fn expect_line(&mut self, what: &str) -> Result<(usize, &'a str), ModelError> {
        self.next_line().ok_or_else(|| ModelError::Parse {
            offset: self.offset,
            message: format!("file truncated while reading {what}"),
        })
    }
}

fn parse_meta<'a>(reader: &mut Reader<'a>, key: &str) -> Result<&'a str, ModelError> {
    let (offset, line) = reader.expect_line(&format!("meta {key}"))?;
    let rest = line.strip_prefix("meta ").ok_or_else(|| ModelError::Parse {
        offset,
        message: format!("expected `meta {key} ...`, got `{line}`"),
    })?;
    let (k, v) = rest.split_once(' ').ok_or_else(|| ModelError::Parse {
        offset,
        message: format!("malformed meta line `{line}`"),
    })?;
    if k != key {
        return Err(ModelError::Parse {
            offset,
            message: format!("expected meta key `{key}`, got `{k}`"),
        });
    }
    Ok(v)
}

fn parse_usize(s: &str, offset: usize) -> Result<usize, ModelError> {
    s.trim().parse().map_err(|_| ModelError::Parse {
        offset,
        message: format!("expected an integer, got `{s}`"),
    })
}

fn parse_values(line: &str, expected: usize, offset: usize) -> Result<Vec<f64>, ModelError> {
    let mut out = Vec::with_capacity(expected);
    for tok in line.split_whitespace() {
        let v: f64 = tok.parse().map_err(|_| ModelError::Parse {
            offset,
            message: format!("bad float `{tok}`"),
        })?;
        out.push(v);
    }
    if out.len() != expected {
        return Err(ModelError::Parse {
            offset,
            message: format!("expected {expected} values, got {}", out.len()),
        });
    }
    Ok(out)
}

fn parse_array_header<'a>(
    reader: &mut Reader<'a>,
    name: &str,
) -> Result<(usize, Vec<usize>), ModelError> {
    let (offset, line) = reader.expect_line(&format!("array {name}"))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some("array") {
        return Err(ModelError::Parse {
            offset,
            message: format!("expected `array {name} ...`, got `{line}`"),
        });
    }
    let got = parts.next().unwrap_or("");
    if got != name {
        return Err(ModelError::Parse {
            offset,
            message: format!("expected array `{name}`, got `{got}`"),
        });
    }
    let dims: Result<Vec<usize>, _> = parts.map(|p| parse_usize(p, offset)).collect();
    let dims = dims?;
    if dims.is_empty() || dims.len() > 2 {
        return Err(ModelError::Parse {
            offset,
            message: format!("array `{name}` needs 1 or 2 dims, got {}", dims.len()),
        });
    }
    Ok((offset, dims))
}

fn read_matrix(reader: &mut Reader<'_>, name: &str, rows: usize, cols: usize) -> Result<Matrix, ModelError> {
    let (offset, dims) = parse_array_header(reader, name)?;
    if dims != [rows, cols] {
        return Err(ModelError::Parse {
            offset,
            message: format!("array `{name}` has dims {dims:?}, expected [{rows}, {cols}]"),
        });
    }
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let (off, line) = reader.expect_line(name)?;
        data.extend(parse_values(line, cols, off)?);
    }
    Matrix::new(rows, cols, data).map_err(|e| ModelError::Parse {
        offset,
        message: e.to_string(),
    })
}

fn read_vector(reader: &mut Reader<'_>, name: &str, len: usize) -> Result<Vec<f64>, ModelError> {
    let (offset, dims) = parse_array_header(reader, name)?;
    if dims != [len] {
        return Err(ModelError::Parse {
            offset,
            message: format!("array `{name}` has dims {dims:?}, expected [{len}]"),
        });
    }
    let (off, line) = reader.expect_line(name)?;
    parse_values(line, len, off)
}

/// Loads a checkpoint, reproducing the saved one bit-exactly. An unknown
/// format version fails with [`ModelError::Version`] before anything is read.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let text = std::fs::read_to_string(path)?;
    let mut reader = Reader { text: &text, offset: 0 };

    let (offset, first) = reader.expect_line("version header")?;
    if first != CHECKPOINT_VERSION {
        if first.starts_with("RRLAB-CKPT") {
            return Err(ModelError::Version { found: first.to_string() });
        }
        return Err(ModelError::Parse {
            offset,
            message: format!("not a checkpoint file (first line `{first}`)"),
        });
    }

    let input_dim = parse_usize(parse_meta(&mut reader, "input_dim")?, reader.offset)?;
    let backbone_s = parse_meta(&mut reader, "backbone")?.to_string();
    let backbone: Vec<usize> = if backbone_s == "-" {
        Vec::new()
    } else {
        backbone_s
            .split(',')
            .map(|t| parse_usize(t, reader.offset))
            .collect::<Result<_, _>>()?
    };
    let classes = parse_usize(parse_meta(&mut reader, "classes")?, reader.offset)?;
    let aux_hidden = parse_usize(parse_meta(&mut reader, "aux_hidden")?, reader.offset)?;
    let config_digest = parse_meta(&mut reader, "config_digest")?.to_string();
    let seed: u64 = parse_meta(&mut reader, "seed")?.parse().map_err(|_| ModelError::Parse {
        offset: reader.offset,
        message: "bad seed".into(),
    })?;
    let epoch = parse_usize(parse_meta(&mut reader, "epoch")?, reader.offset)?;

    let arch = Architecture::with_aux_hidden(input_dim, backbone, classes, aux_hidden)
        .map_err(|e| ModelError::Parse {
            offset: reader.offset,
            message: e.to_string(),
        })?;

    let mut layers = Vec::new();
    let mut prev = arch.input_dim();
    for (i, &width) in arch.backbone().iter().enumerate() {
        let w = read_matrix(&mut reader, &format!("backbone{i}.w"), width, prev)?;
        let b = read_vector(&mut reader, &format!("backbone{i}.b"), width)?;
        layers.push(Layer { w, b });
        prev = width;
    }
    let z = arch.feature_dim();
    let h = arch.aux_hidden();
    let params = TwoHeadParams {
        arch: arch.clone(),
        backbone: layers,
        cls_w: read_matrix(&mut reader, "cls.w", arch.classes(), z)?,
        cls_b: read_vector(&mut reader, "cls.b", arch.classes())?,
        aux_w1: read_matrix(&mut reader, "aux.w1", h, z)?,
        aux_b1: read_vector(&mut reader, "aux.b1", h)?,
        bn_gamma: read_vector(&mut reader, "aux.bn_gamma", h)?,
        bn_beta: read_vector(&mut reader, "aux.bn_beta", h)?,
        bn_mean: read_vector(&mut reader, "aux.bn_mean", h)?,
        bn_var: read_vector(&mut reader, "aux.bn_var", h)?,
        aux_w2: read_matrix(&mut reader, "aux.w2", 1, h)?,
        aux_b2: read_vector(&mut reader, "aux.b2", 1)?,
    };
    Ok(Checkpoint { params, config_digest, seed, epoch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::rng::Rng;

    fn random_checkpoint(seed: u64) -> Checkpoint {
        let arch = Architecture::new(4, vec![8, 8], 3).unwrap();
        let mut params = init_params(&arch, seed);
        let mut rng = Rng::from_seed(seed ^ 0xabc);
        let flat: Vec<f64> = (0..params.learnable_len()).map(|_| rng.normal()).collect();
        params.set_learnable(&flat);
        let h = arch.aux_hidden();
        params.set_running_stats(
            (0..h).map(|_| rng.normal()).collect(),
            (0..h).map(|_| rng.uniform_in(0.1, 2.0)).collect(),
        );
        Checkpoint {
            params,
            config_digest: "deadbeef01234567".into(),
            seed,
            epoch: 17,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = std::env::temp_dir().join("rrlab-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.ckpt");
        let ckpt = random_checkpoint(99);
        save_checkpoint(&ckpt, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt, loaded);
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let dir = std::env::temp_dir().join("rrlab-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("truncated.ckpt");
        let full = dir.join("full.ckpt");
        save_checkpoint(&random_checkpoint(3), &full).unwrap();
        let text = std::fs::read_to_string(&full).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        match load_checkpoint(&path) {
            Err(ModelError::Parse { .. }) => {}
            other => panic!("expected parse error, got {other:?}"),
        }
        let _ = std::fs::remove_file(&path);
        let _ = std::fs::remove_file(&full);
    }

    #[test]
    fn version_bump_is_a_version_error() {
        let dir = std::env::temp_dir().join("rrlab-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("version.ckpt");
        save_checkpoint(&random_checkpoint(5), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let bumped = text.replacen("RRLAB-CKPT v1", "RRLAB-CKPT v2", 1);
        std::fs::write(&path, bumped).unwrap();
        match load_checkpoint(&path) {
            Err(ModelError::Version { found }) => assert_eq!(found, "RRLAB-CKPT v2"),
            other => panic!("expected version error, got {other:?}"),
        }
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn corrupted_value_reports_offset() {
        let dir = std::env::temp_dir().join("rrlab-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("corrupt.ckpt");
        save_checkpoint(&random_checkpoint(8), &path).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        let pos = text.find("array cls.w").unwrap();
        text.replace_range(pos..pos + 5, "arraX");
        std::fs::write(&path, text).unwrap();
        match load_checkpoint(&path) {
            Err(ModelError::Parse { offset, .. }) => assert!(offset > 0),
            other => panic!("expected parse error, got {other:?}"),
        }
        let _ = std::fs::remove_file(&path);
    }
}
