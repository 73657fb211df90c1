use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A flat stream of pre-tokenized ids, consumed in `sample_len` slices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenCorpus {
    pub ids: Vec<u32>,
    pub sample_len: usize,
    pub source: String,
}

impl TokenCorpus {
    pub fn new(ids: Vec<u32>, sample_len: usize, source: impl Into<String>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Input("corpus is empty".into()));
        }
        if sample_len == 0 {
            return Err(Error::Input("sample_len must be at least 1".into()));
        }
        if ids.len() < sample_len {
            return Err(Error::Input(format!(
                "corpus has {} tokens, fewer than one sample of {sample_len}",
                ids.len()
            )));
        }
        Ok(Self {
            ids,
            sample_len,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of non-overlapping `sample_len` slices.
    pub fn available_samples(&self) -> usize {
        self.ids.len() / self.sample_len
    }

    pub fn max_id(&self) -> u32 {
        self.ids.iter().copied().max().unwrap_or(0)
    }

    /// Fails when any id is outside the vocabulary.
    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        match self.ids.iter().position(|&t| t as usize >= vocab_size) {
            Some(p) => Err(Error::Input(format!(
                "token {} at position {p} of {} exceeds vocab_size {vocab_size}",
                self.ids[p], self.source
            ))),
            None => Ok(()),
        }
    }
}

/// Load `.bin` (little-endian u32) or `.txt` (one integer per line) token files.
pub fn load_corpus(path: &Path, sample_len: usize) -> Result<TokenCorpus> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ids = match path.extension().and_then(|e| e.to_str()) {
        Some("txt") => {
            let text = String::from_utf8(bytes)
                .map_err(|_| Error::Input(format!("{} is not utf-8", path.display())))?;
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .enumerate()
                .map(|(i, l)| {
                    l.parse::<u32>().map_err(|_| {
                        Error::Input(format!("{} line {}: bad token id {l:?}", path.display(), i + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
        _ => {
            if bytes.len() % 4 != 0 {
                return Err(Error::Input(format!(
                    "{}: {} bytes is not a whole number of u32 ids",
                    path.display(),
                    bytes.len()
                )));
            }
            bytes
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect()
        }
    };
    TokenCorpus::new(ids, sample_len, path.display().to_string())
}

pub fn write_corpus_bin(path: &Path, ids: &[u32]) -> Result<()> {
    let bytes: Vec<u8> = ids.iter().flat_map(|t| t.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_corpus_txt(path: &Path, ids: &[u32]) -> Result<()> {
    let mut s = String::with_capacity(ids.len() * 4);
    for t in ids {
        s.push_str(&t.to_string());
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Draw `ceil(n_tokens / sample_len)` disjoint slices, in corpus order.
pub fn sample_batches(corpus: &TokenCorpus, n_tokens: usize, seed: u64) -> Result<Vec<Vec<u32>>> {
    let len = corpus.sample_len;
    let wanted = n_tokens.div_ceil(len).max(1);
    let slots = corpus.available_samples();
    if wanted > slots {
        return Err(Error::Input(format!(
            "{n_tokens} tokens need {wanted} samples of {len}, corpus holds {slots}"
        )));
    }
    let mut order: Vec<usize> = (0..slots).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut picked = order[..wanted].to_vec();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|s| corpus.ids[s * len..(s + 1) * len].to_vec())
        .collect())
}
