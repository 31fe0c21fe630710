//! Dataset ingestion: the definitions triplet file, plain-text corpora,
//! vocabularies, encoded sequences and skip-gram training pairs.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// One dataset record: the word being defined, its definition, and an
/// example of use in the intended meaning. All tokens are normalized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DefinitionEntry {
    pub headword: String,
    pub definition: Vec<String>,
    pub context: Vec<String>,
}

/// Lowercases and splits on whitespace, with punctuation separated into
/// standalone tokens ("star's" -> ["star", "'", "s"]).
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(|c| c.to_lowercase()) {
        if ch.is_whitespace() {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
        } else if ch.is_alphanumeric() {
            word.push(ch);
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Parses the JSON Lines triplet file (fields `word`, `definition`,
/// `example`). Record order is preserved; blank lines are skipped.
pub fn parse_definitions(path: impl AsRef<Path>) -> Result<Vec<DefinitionEntry>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact(path.display().to_string())
        } else {
            Error::io(path, e)
        }
    })?;
    let reader = BufReader::new(file);
    let mut entries = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(parse_record(&line, lineno)?);
    }
    Ok(entries)
}

fn parse_record(line: &str, lineno: usize) -> Result<DefinitionEntry> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Format {
        line: lineno,
        msg: format!("invalid JSON: {e}"),
    })?;
    let obj = value.as_object().ok_or_else(|| Error::Format {
        line: lineno,
        msg: "record is not a JSON object".into(),
    })?;
    let get = |field: &'static str| -> Result<&str> {
        obj.get(field)
            .ok_or(Error::MissingField { line: lineno, field })?
            .as_str()
            .ok_or_else(|| Error::Format {
                line: lineno,
                msg: format!("field \"{field}\" is not a string"),
            })
    };
    let word = get("word")?;
    let definition = tokenize(get("definition")?);
    let context = tokenize(get("example")?);
    let headword = tokenize(word).join("");
    if headword.is_empty() {
        return Err(Error::Format {
            line: lineno,
            msg: "field \"word\" is empty after normalization".into(),
        });
    }
    if definition.is_empty() {
        return Err(Error::Format {
            line: lineno,
            msg: "field \"definition\" is empty after normalization".into(),
        });
    }
    if context.is_empty() {
        return Err(Error::Format {
            line: lineno,
            msg: "field \"example\" is empty after normalization".into(),
        });
    }
    Ok(DefinitionEntry {
        headword,
        definition,
        context,
    })
}

/// Writes entries back out in the JSON Lines triplet format.
pub fn write_definitions(path: impl AsRef<Path>, entries: &[DefinitionEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    for e in entries {
        let obj = serde_json::json!({
            "word": e.headword,
            "definition": e.definition.join(" "),
            "example": e.context.join(" "),
        });
        writeln!(file, "{obj}").map_err(|er| Error::io(path, er))?;
    }
    Ok(())
}

/// Bidirectional token/id map with corpus counts. Ids are dense, with the
/// four reserved tokens pinned to ids 0..=3 and never produced by counting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    tokens: Vec<String>,
    counts: Vec<u64>,
    total_count: u64,
}

impl Vocabulary {
    /// Builds a vocabulary from a token stream. Tokens with count below
    /// `min_count` are dropped; if `max_size` is given, only the most
    /// frequent non-reserved tokens are kept (ties broken lexicographically).
    pub fn build<I, S>(tokens: I, min_count: u64, max_size: Option<usize>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for tok in tokens {
            let tok = tok.as_ref();
            if RESERVED.contains(&tok) {
                continue;
            }
            *counts.entry(tok.to_string()).or_insert(0) += 1;
        }
        let mut ranked: Vec<(String, u64)> =
            counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        // Most frequent first; ties by token so that truncation is stable.
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if let Some(cap) = max_size {
            ranked.truncate(cap);
        }

        let mut vocab = Vocabulary {
            token_to_id: HashMap::new(),
            tokens: RESERVED.iter().map(|s| s.to_string()).collect(),
            counts: vec![0; RESERVED.len()],
            total_count: 0,
        };
        for (i, name) in RESERVED.iter().enumerate() {
            vocab.token_to_id.insert(name.to_string(), i);
        }
        for (tok, count) in ranked {
            vocab.token_to_id.insert(tok.clone(), vocab.tokens.len());
            vocab.tokens.push(tok);
            vocab.counts.push(count);
            vocab.total_count += count;
        }
        vocab
    }

    pub fn from_entries(entries: &[DefinitionEntry], min_count: u64, max_size: Option<usize>) -> Self {
        let stream = entries.iter().flat_map(|e| {
            std::iter::once(e.headword.as_str())
                .chain(e.definition.iter().map(|s| s.as_str()))
                .chain(e.context.iter().map(|s| s.as_str()))
        });
        Self::build(stream, min_count, max_size)
    }

    /// Total entries including the 4 reserved tokens.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    /// Non-reserved tokens only.
    pub fn n_real(&self) -> usize {
        self.tokens.len() - RESERVED.len()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }

    pub fn is_reserved(id: usize) -> bool {
        id < RESERVED.len()
    }

    /// Relative corpus frequency, used by skip-gram subsampling.
    pub fn frequency(&self, id: usize) -> f64 {
        if self.total_count == 0 {
            0.0
        } else {
            self.counts[id] as f64 / self.total_count as f64
        }
    }

    pub fn encode(&self, tokens: &[String], add_bos_eos: bool) -> Vec<usize> {
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        if add_bos_eos {
            ids.push(BOS);
        }
        ids.extend(tokens.iter().map(|t| self.id_or_unk(t)));
        if add_bos_eos {
            ids.push(EOS);
        }
        ids
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }

    /// Plain-text format: one "token<TAB>count" line per id, reserved first.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        for (tok, count) in self.tokens.iter().zip(self.counts.iter()) {
            writeln!(file, "{tok}\t{count}").map_err(|e| Error::io(path, e))?;
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
        let mut vocab = Vocabulary {
            token_to_id: HashMap::new(),
            tokens: Vec::new(),
            counts: Vec::new(),
            total_count: 0,
        };
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let (tok, count) = line.split_once('\t').ok_or_else(|| Error::Format {
                line: idx + 1,
                msg: "expected token<TAB>count".into(),
            })?;
            let count: u64 = count.parse().map_err(|_| Error::Format {
                line: idx + 1,
                msg: format!("invalid count \"{count}\""),
            })?;
            vocab.token_to_id.insert(tok.to_string(), vocab.tokens.len());
            vocab.tokens.push(tok.to_string());
            vocab.counts.push(count);
        }
        for (i, name) in RESERVED.iter().enumerate() {
            if vocab.tokens.get(i).map(|s| s.as_str()) != Some(*name) {
                return Err(Error::Data(format!(
                    "vocabulary file must start with reserved tokens {RESERVED:?}"
                )));
            }
        }
        vocab.total_count = vocab.counts.iter().skip(RESERVED.len()).sum();
        Ok(vocab)
    }

    /// Deserializes from the same lines as the on-disk format; used by
    /// checkpoints that embed their vocabulary.
    pub fn from_tsv_lines(text: &str) -> Result<Self> {
        let mut vocab = Vocabulary {
            token_to_id: HashMap::new(),
            tokens: Vec::new(),
            counts: Vec::new(),
            total_count: 0,
        };
        for (idx, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (tok, count) = line.split_once('\t').ok_or_else(|| Error::Format {
                line: idx + 1,
                msg: "expected token<TAB>count".into(),
            })?;
            let count: u64 = count.parse().map_err(|_| Error::Format {
                line: idx + 1,
                msg: format!("invalid count \"{count}\""),
            })?;
            vocab.token_to_id.insert(tok.to_string(), vocab.tokens.len());
            vocab.tokens.push(tok.to_string());
            vocab.counts.push(count);
        }
        vocab.total_count = vocab.counts.iter().skip(RESERVED.len()).sum();
        Ok(vocab)
    }

    pub fn to_tsv_lines(&self) -> String {
        let mut out = String::new();
        for (tok, count) in self.tokens.iter().zip(self.counts.iter()) {
            out.push_str(tok);
            out.push('\t');
            out.push_str(&count.to_string());
            out.push('\n');
        }
        out
    }
}

/// Counts over the definition side of a dataset split.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CorpusStats {
    /// Unique headwords.
    pub words: usize,
    pub entries: usize,
    /// Definition tokens (contexts and headwords are not counted).
    pub tokens: usize,
    pub avg_definition_len: f64,
}

pub fn stats(entries: &[DefinitionEntry]) -> CorpusStats {
    let mut words: Vec<&str> = entries.iter().map(|e| e.headword.as_str()).collect();
    words.sort_unstable();
    words.dedup();
    let tokens: usize = entries.iter().map(|e| e.definition.len()).sum();
    let avg = if entries.is_empty() {
        0.0
    } else {
        tokens as f64 / entries.len() as f64
    };
    CorpusStats {
        words: words.len(),
        entries: entries.len(),
        tokens,
        avg_definition_len: avg,
    }
}

/// One skip-gram training pair: a center word and one word from its window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkipGramPair {
    pub center: usize,
    pub context: usize,
}

/// Emits (center, context) for every ordered position pair within `window`,
/// excluding self-pairs. Callers are expected to have filtered reserved ids
/// out of the sentence already.
pub fn window_pairs(sentence: &[usize], window: usize) -> Vec<SkipGramPair> {
    assert!(window >= 1, "window must be >= 1");
    let mut pairs = Vec::new();
    let len = sentence.len();
    for i in 0..len {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(len.saturating_sub(1));
        for j in lo..=hi {
            if j == i {
                continue;
            }
            debug_assert!(!Vocabulary::is_reserved(sentence[i]));
            pairs.push(SkipGramPair {
                center: sentence[i],
                context: sentence[j],
            });
        }
    }
    pairs
}

/// Frequent-word subsampling: keeps a token with probability
/// sqrt(threshold / frequency), the usual skip-gram recipe. Reserved ids are
/// always dropped.
pub fn subsample_sentence(
    ids: &[usize],
    vocab: &Vocabulary,
    threshold: f64,
    rng: &mut impl Rng,
) -> Vec<usize> {
    ids.iter()
        .copied()
        .filter(|&id| {
            if Vocabulary::is_reserved(id) {
                return false;
            }
            let f = vocab.frequency(id);
            if threshold <= 0.0 || f <= threshold {
                return true;
            }
            let keep = (threshold / f).sqrt();
            rng.gen::<f64>() < keep
        })
        .collect()
}

/// Reads a plain-text corpus (one sentence/article per line) into tokenized
/// sentences, skipping empty lines.
pub fn read_text_corpus(path: impl AsRef<Path>) -> Result<Vec<Vec<String>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact(path.display().to_string())
        } else {
            Error::io(path, e)
        }
    })?;
    let mut sentences = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let toks = tokenize(&line);
        if !toks.is_empty() {
            sentences.push(toks);
        }
    }
    Ok(sentences)
}
