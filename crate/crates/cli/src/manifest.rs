//! Run manifest: what was run, on which inputs, producing which files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "manifest.tsv";

#[derive(Debug)]
pub struct RunManifest {
    command: String,
    argv: Vec<String>,
    config: String,
    seed: Option<u64>,
    inputs: Vec<(PathBuf, String)>,
    outputs: Vec<PathBuf>,
    started: u64,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config: String::new(),
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: unix_now(),
        }
    }

    pub fn config(&mut self, text: String) {
        self.config = text;
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    /// Records an input file with its digest; directories record every file
    /// inside them.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        if path.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(path)
                .with_context(|| format!("listing {}", path.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            for f in files {
                self.input(&f)?;
            }
            return Ok(());
        }
        let digest = sha256_file(path)?;
        self.inputs.push((path.to_path_buf(), digest));
        Ok(())
    }

    /// Writes `contents` to `path` and lists it as an output.
    pub fn write(&mut self, path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path);
        Ok(())
    }

    /// Writes the manifest into `dir` with digests of every output.
    pub fn finish(self, dir: &Path) -> Result<PathBuf> {
        let mut s = String::from("key\tvalue\textra\n");
        let _ = writeln!(s, "command\t{}\t", self.command);
        let _ = writeln!(s, "argv\t{}\t", self.argv.join(" "));
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "seed\t{seed}\t");
        }
        for (path, digest) in &self.inputs {
            let _ = writeln!(s, "input\t{}\tsha256:{digest}", path.display());
        }
        for path in &self.outputs {
            let _ = writeln!(s, "output\t{}\tsha256:{}", path.display(), sha256_file(path)?);
        }
        for line in self.config.lines() {
            if let Some((k, v)) = line.split_once('=') {
                let _ = writeln!(s, "config\t{}\t{}", k.trim(), v.trim());
            }
        }
        let _ = writeln!(s, "started_unix\t{}\t", self.started);
        let _ = writeln!(s, "finished_unix\t{}\t", unix_now());
        let path = dir.join(FILE_NAME);
        fs::write(&path, s).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Checks every recorded input and output digest of a manifest against the
/// files on disk; returns the paths that differ.
#[cfg(test)]
fn verify(path: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut changed = Vec::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() == 3 && (f[0] == "input" || f[0] == "output") {
            let file = PathBuf::from(f[1]);
            let expected = f[2].trim_start_matches("sha256:");
            if sha256_file(&file).map_or(true, |d| d != expected) {
                changed.push(file);
            }
        }
    }
    Ok(changed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_input() {
        assert_eq!(
            hex(&Sha256::digest(b"abc")),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_lists_and_verifies_files() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.tsv");
        fs::write(&input, "x").unwrap();
        let mut m = RunManifest::start("test");
        m.input(&input).unwrap();
        m.seed(5);
        m.write(dir.path().join("out.tsv"), "y").unwrap();
        let path = m.finish(dir.path()).unwrap();
        assert!(verify(&path).unwrap().is_empty());
        fs::write(&input, "z").unwrap();
        assert_eq!(verify(&path).unwrap(), vec![input]);
    }
}
