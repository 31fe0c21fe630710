//! Plain-text word vector IO: first line "count dim", then one line per
//! token with `dim` space-separated floats. The same format carries
//! per-sense vectors with tokens suffixed "#k".

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// A frozen token -> vector table, as read back from disk.
#[derive(Debug, Clone)]
pub struct WordVectors {
    pub dim: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl WordVectors {
    pub fn new(dim: usize) -> Self {
        WordVectors {
            dim,
            tokens: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    pub fn push(&mut self, token: &str, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "vector for \"{token}\" has {} dims, table holds {}",
                vector.len(),
                self.dim
            )));
        }
        self.index.insert(token.to_string(), self.tokens.len());
        self.tokens.push(token.to_string());
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&i| self.vector(i))
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "{} {}", self.len(), self.dim).map_err(|e| Error::io(path, e))?;
        for i in 0..self.len() {
            let mut line = String::with_capacity(self.dim * 12);
            line.push_str(&self.tokens[i]);
            for x in self.vector(i) {
                line.push(' ');
                // Display for f64 is shortest round-trip, so save/load is exact.
                line.push_str(&x.to_string());
            }
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact(path.display().to_string())
            } else {
                Error::io(path, e)
            }
        })?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format {
                line: 1,
                msg: "empty vectors file".into(),
            })?
            .map_err(|e| Error::io(path, e))?;
        let mut parts = header.split_whitespace();
        let count: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format {
                line: 1,
                msg: "header must be \"count dim\"".into(),
            })?;
        let dim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format {
                line: 1,
                msg: "header must be \"count dim\"".into(),
            })?;

        let mut table = WordVectors::new(dim);
        for (idx, line) in lines.enumerate() {
            let lineno = idx + 2;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().ok_or_else(|| Error::Format {
                line: lineno,
                msg: "missing token".into(),
            })?;
            let vec: Vec<f64> = parts
                .map(|s| {
                    s.parse::<f64>().map_err(|_| Error::Format {
                        line: lineno,
                        msg: format!("invalid float \"{s}\""),
                    })
                })
                .collect::<Result<_>>()?;
            if vec.len() != dim {
                return Err(Error::Format {
                    line: lineno,
                    msg: format!("expected {dim} floats, got {}", vec.len()),
                });
            }
            table.push(token, &vec)?;
        }
        if table.len() != count {
            return Err(Error::Data(format!(
                "vectors file declared {count} rows but holds {}",
                table.len()
            )));
        }
        Ok(table)
    }

    /// Sense vectors for `word` stored under "word#0", "word#1", ...; falls
    /// back to the bare token (a single-sense table).
    pub fn senses(&self, word: &str) -> Vec<&[f64]> {
        let mut out = Vec::new();
        let mut k = 0;
        while let Some(v) = self.get(&format!("{word}#{k}")) {
            out.push(v);
            k += 1;
        }
        if out.is_empty() {
            if let Some(v) = self.get(word) {
                out.push(v);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_is_exact() {
        let mut t = WordVectors::new(3);
        t.push("alpha", &[0.1, -2.5e-7, 3.0]).unwrap();
        t.push("beta#0", &[1.0 / 3.0, 0.0, -0.0]).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        t.save(f.path()).unwrap();
        let back = WordVectors::load(f.path()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.get("alpha").unwrap(), t.get("alpha").unwrap());
        assert_eq!(back.get("beta#0").unwrap(), t.get("beta#0").unwrap());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut t = WordVectors::new(2);
        assert!(t.push("x", &[1.0]).is_err());
    }

    #[test]
    fn senses_prefers_suffixed_rows() {
        let mut t = WordVectors::new(1);
        t.push("star#0", &[1.0]).unwrap();
        t.push("star#1", &[2.0]).unwrap();
        t.push("dog", &[3.0]).unwrap();
        assert_eq!(t.senses("star").len(), 2);
        assert_eq!(t.senses("dog").len(), 1);
        assert!(t.senses("cat").is_empty());
    }
}
