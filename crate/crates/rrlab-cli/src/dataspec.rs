//! Dataset selection from the training config file.

use rrlab::config::{ConfigError, ConfigMap};
use rrlab::data::{gen_blobs, gen_moons, gen_rings, load_csv, split, DataError, Dataset};
use std::path::PathBuf;

/// `dataset = blobs | moons | rings | csv` plus its `data-*` parameters.
#[derive(Clone, Debug)]
pub struct DataSpec {
    pub kind: String,
    pub classes: usize,
    pub dim: usize,
    pub n_per_class: usize,
    pub separation: f64,
    pub noise_sd: f64,
    pub n: usize,
    pub csv: Option<PathBuf>,
    pub split_fraction: f64,
    pub data_seed: Option<u64>,
}

impl DataSpec {
    pub fn from_config(map: &mut ConfigMap) -> Result<Self, ConfigError> {
        let kind = map.take("dataset").unwrap_or_else(|| "blobs".into());
        if !["blobs", "moons", "rings", "csv"].contains(&kind.as_str()) {
            return Err(ConfigError::BadValue {
                key: "dataset".into(),
                message: format!("unknown dataset `{kind}`"),
            });
        }
        Ok(DataSpec {
            kind,
            classes: map.take_parsed("data-classes", 4)?,
            dim: map.take_parsed("data-dim", 8)?,
            n_per_class: map.take_parsed("data-n-per-class", 150)?,
            separation: map.take_parsed("data-separation", 3.0)?,
            noise_sd: map.take_parsed("data-noise-sd", 1.0)?,
            n: map.take_parsed("data-n", 400)?,
            csv: map.take("data-csv").map(PathBuf::from),
            split_fraction: map.take_parsed("data-split", 0.7)?,
            data_seed: match map.take("data-seed") {
                None => None,
                Some(v) => Some(v.parse().map_err(|_| ConfigError::BadValue {
                    key: "data-seed".into(),
                    message: format!("cannot parse `{v}`"),
                })?),
            },
        })
    }

    /// Generates (or loads) the dataset and splits it into train/validation.
    pub fn realize(&self, master_seed: u64) -> Result<(Dataset, Dataset), DataError> {
        let seed = self.data_seed.unwrap_or(master_seed);
        let full = match self.kind.as_str() {
            "blobs" => gen_blobs(
                self.classes,
                self.dim,
                self.n_per_class,
                self.separation,
                self.noise_sd,
                seed,
            )?,
            "moons" => gen_moons(self.n, self.noise_sd, seed)?,
            "rings" => gen_rings(self.n, self.classes, self.noise_sd, seed)?,
            "csv" => {
                let path = self.csv.as_ref().ok_or_else(|| {
                    DataError::InvalidArgument("dataset = csv needs data-csv = <path>".into())
                })?;
                load_csv(path)?
            }
            other => return Err(DataError::InvalidArgument(format!("unknown dataset `{other}`"))),
        };
        split(&full, self.split_fraction, seed)
    }

    /// Canonical key=value rendering for manifests and digests.
    pub fn canonical_string(&self) -> String {
        let mut s = format!("dataset={}\n", self.kind);
        s.push_str(&format!("data-classes={}\n", self.classes));
        s.push_str(&format!("data-dim={}\n", self.dim));
        s.push_str(&format!("data-n-per-class={}\n", self.n_per_class));
        s.push_str(&format!("data-separation={}\n", self.separation));
        s.push_str(&format!("data-noise-sd={}\n", self.noise_sd));
        s.push_str(&format!("data-n={}\n", self.n));
        if let Some(csv) = &self.csv {
            s.push_str(&format!("data-csv={}\n", csv.display()));
        }
        s.push_str(&format!("data-split={}\n", self.split_fraction));
        if let Some(ds) = self.data_seed {
            s.push_str(&format!("data-seed={ds}\n"));
        }
        s
    }
}
