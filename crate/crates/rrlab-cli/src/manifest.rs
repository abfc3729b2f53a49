//! Run manifests: enough to re-run a command exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Written into the output directory on success and failure alike.
#[derive(Clone, Debug, Default)]
pub struct Manifest {
    pub command: String,
    pub status: String,
    pub seed: u64,
    pub config_digest: String,
    pub wall_seconds: f64,
    pub artifacts: Vec<(String, PathBuf)>,
    /// Fully resolved configuration, re-runnable as a config file.
    pub resolved_config: String,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest { command: command.to_string(), ..Default::default() }
    }

    pub fn add_artifact(&mut self, name: &str, path: &Path) {
        self.artifacts.push((name.to_string(), path.to_path_buf()));
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "RRLAB-MANIFEST v1");
        let _ = writeln!(s, "command {}", self.command);
        let _ = writeln!(s, "version {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "status {}", self.status);
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "config_digest {}", self.config_digest);
        let _ = writeln!(s, "wall_seconds {:.3}", self.wall_seconds);
        for (name, path) in &self.artifacts {
            let _ = writeln!(s, "artifact {name} {}", path.display());
        }
        let _ = writeln!(s, "config:");
        for line in self.resolved_config.lines() {
            let _ = writeln!(s, "  {line}");
        }
        s
    }

    pub fn write(&self, out_dir: &Path) -> std::io::Result<()> {
        write_atomic(&out_dir.join("manifest.txt"), self.render().as_bytes())
    }
}

/// Write-temp-then-rename, so partially written files never appear under the
/// final name.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp-write");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}
