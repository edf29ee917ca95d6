use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

/// Provenance header written at the top of every output file.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub params: Vec<(String, String)>,
    pub seed: Option<u64>,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            params: Vec::new(),
            seed: None,
            artifacts: Vec::new(),
        }
    }

    pub fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.push((key.to_string(), value.to_string()));
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn artifact(mut self, path: Option<&Path>) -> Self {
        if let Some(p) = path {
            self.artifacts.push(p.display().to_string());
        }
        self
    }

    /// Bare manifest lines, without comment markers.
    pub fn lines(&self) -> Vec<String> {
        let mut out = vec![
            format!("polarnn {}", env!("CARGO_PKG_VERSION")),
            format!("command={}", self.command),
        ];
        if let Some(seed) = self.seed {
            out.push(format!("seed={seed}"));
        }
        for (k, v) in &self.params {
            out.push(format!("{k}={v}"));
        }
        if !self.artifacts.is_empty() {
            out.push(format!("artifacts={}", self.artifacts.join(",")));
        }
        out
    }

    pub fn header(&self) -> String {
        let mut out = String::new();
        for line in self.lines() {
            let _ = writeln!(out, "# {line}");
        }
        out
    }
}

/// Writes `body` under the manifest header, to `path` or stdout.
pub fn emit(manifest: &RunManifest, body: &str, path: Option<&Path>) -> Result<()> {
    let text = format!("{}{body}", manifest.header());
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_lists_everything() {
        let m = RunManifest::new("code")
            .seed(7)
            .param("n", 4)
            .artifact(Some(Path::new("out.txt")));
        let h = m.header();
        assert!(h.starts_with("# polarnn "));
        assert!(h.contains("# command=code\n# seed=7\n# n=4\n# artifacts=out.txt\n"));
    }
}
