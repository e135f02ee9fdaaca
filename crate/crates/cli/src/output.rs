use std::fmt::Display;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// The comment line that opens every CSV.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stamp {
    pub config_hash: String,
}

impl Stamp {
    pub fn line(&self) -> String {
        format!("# config_hash={} version={}", self.config_hash, VERSION)
    }
}

pub struct Csv {
    path: PathBuf,
    w: BufWriter<File>,
    columns: usize,
}

impl Csv {
    pub fn create(path: &Path, stamp: &Stamp, header: &[&str]) -> Result<Self> {
        Self::with_notes(path, stamp, &[], header)
    }

    /// Like [`Csv::create`] with extra `# key=value` comment lines.
    pub fn with_notes(path: &Path, stamp: &Stamp, notes: &[(&str, String)], header: &[&str]) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "{}", stamp.line())?;
        for (k, v) in notes {
            writeln!(w, "# {k}={v}")?;
        }
        writeln!(w, "{}", header.join(","))?;
        Ok(Csv {
            path: path.to_path_buf(),
            w,
            columns: header.len(),
        })
    }

    pub fn row(&mut self, fields: &[&dyn Display]) -> Result<()> {
        debug_assert_eq!(fields.len(), self.columns, "{}", self.path.display());
        let line: Vec<String> = fields.iter().map(|f| f.to_string()).collect();
        writeln!(self.w, "{}", line.join(","))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.w.flush().with_context(|| format!("writing {}", self.path.display()))?;
        Ok(self.path)
    }
}

/// Renders an optional number as an empty CSV field when absent.
pub fn opt<T: Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hashes of every file under `root`, keyed by relative path in sorted order.
pub fn tree_hashes(root: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).with_context(|| format!("listing {}", dir.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root)?.to_string_lossy().replace('\\', "/");
                out.push((rel, sha256_file(&path)?));
            }
        }
    }
    out.sort();
    Ok(out)
}
