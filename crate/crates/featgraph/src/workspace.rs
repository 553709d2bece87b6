//! Workspace layout and artifact manifest.
//!
//! ```text
//! <root>/
//!   manifest.json   relative path -> sha256, size, kind
//!   datasets/  graphs/  runs/  reports/
//! ```
//!
//! The root comes from `--workspace`, else `FEATGRAPH_WORKSPACE`, else
//! `./featgraph-workspace`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::io::{sha256_hex, write_atomic};
use crate::{Error, Result};

pub const ENV_VAR: &str = "FEATGRAPH_WORKSPACE";
pub const DEFAULT_ROOT: &str = "featgraph-workspace";
pub const SUBDIRS: [&str; 4] = ["datasets", "graphs", "runs", "reports"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub sha256: String,
    pub bytes: u64,
    pub kind: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: BTreeMap<String, ArtifactEntry>,
}

/// One manifest entry that no longer matches the file on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mismatch {
    Missing(String),
    Modified { path: String, expected: String, found: String },
}

impl std::fmt::Display for Mismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mismatch::Missing(p) => write!(f, "{p}: missing"),
            Mismatch::Modified { path, expected, found } => {
                write!(f, "{path}: sha256 {found}, manifest has {expected}")
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn resolve(flag: Option<&Path>) -> PathBuf {
        match flag {
            Some(p) => p.to_path_buf(),
            None => std::env::var_os(ENV_VAR)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_ROOT)),
        }
    }

    /// Opens `root`, creating the layout if needed.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for sub in SUBDIRS {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn datasets(&self) -> PathBuf {
        self.root.join("datasets")
    }

    pub fn graphs(&self) -> PathBuf {
        self.root.join("graphs")
    }

    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let path = self.manifest_path();
        match fs::read_to_string(&path) {
            Ok(text) => Ok(serde_json::from_str(&text)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Manifest::default()),
            Err(e) => Err(Error::Io { path, source: e }),
        }
    }

    fn relative(&self, path: &Path) -> Result<String> {
        let rel = path
            .strip_prefix(&self.root)
            .map_err(|_| Error::Invalid(format!("{} is outside the workspace {}", path.display(), self.root.display())))?;
        Ok(rel.to_string_lossy().replace('\\', "/"))
    }

    /// Records the current hashes of `paths`, which must lie inside the
    /// workspace.
    pub fn register(&self, paths: &[(&Path, &str)]) -> Result<()> {
        let mut manifest = self.manifest()?;
        for (path, kind) in paths {
            let bytes = fs::read(path).map_err(Error::io(*path))?;
            manifest.artifacts.insert(
                self.relative(path)?,
                ArtifactEntry {
                    sha256: sha256_hex(&bytes),
                    bytes: bytes.len() as u64,
                    kind: kind.to_string(),
                },
            );
        }
        write_atomic(&self.manifest_path(), serde_json::to_string_pretty(&manifest)?.as_bytes())
    }

    pub fn verify(&self) -> Result<Vec<Mismatch>> {
        let manifest = self.manifest()?;
        let mut out = Vec::new();
        for (rel, entry) in &manifest.artifacts {
            match fs::read(self.root.join(rel)) {
                Ok(bytes) => {
                    let found = sha256_hex(&bytes);
                    if found != entry.sha256 {
                        out.push(Mismatch::Modified {
                            path: rel.clone(),
                            expected: entry.sha256.clone(),
                            found,
                        });
                    }
                }
                Err(_) => out.push(Mismatch::Missing(rel.clone())),
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_detects_tampering_and_deletion() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path()).unwrap();
        let a = ws.graphs().join("a.edges");
        let b = ws.reports().join("b.csv");
        fs::write(&a, "d=2\n0 1\n").unwrap();
        fs::write(&b, "x\n1\n").unwrap();
        ws.register(&[(&a, "graph"), (&b, "report")]).unwrap();
        assert!(ws.verify().unwrap().is_empty());
        fs::write(&a, "d=2\n").unwrap();
        fs::remove_file(&b).unwrap();
        let bad = ws.verify().unwrap();
        assert_eq!(bad.len(), 2);
        assert!(matches!(&bad[0], Mismatch::Modified { path, .. } if path == "graphs/a.edges"));
        assert_eq!(bad[1], Mismatch::Missing("reports/b.csv".into()));
    }

    #[test]
    fn paths_outside_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let other = tempfile::NamedTempFile::new().unwrap();
        let ws = Workspace::open(dir.path().join("ws")).unwrap();
        assert!(ws.register(&[(other.path(), "x")]).is_err());
    }

    #[test]
    fn flag_wins_over_default() {
        assert_eq!(Workspace::resolve(Some(Path::new("/w"))), PathBuf::from("/w"));
    }
}
