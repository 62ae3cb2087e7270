//! Token embedders over in-process stores and precomputed vector files.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::embeddings::WordVectorStore;
use crate::error::{Error, Result};
use crate::eval::Sentence;
use crate::matrix::Matrix;
use crate::num::Real;
use crate::tagger::TokenEmbedder;

/// Type-level vectors. Words the store cannot represent embed as zero and
/// are counted.
#[derive(Debug)]
pub struct StaticVectors<F> {
    store: WordVectorStore<F>,
    oov: AtomicUsize,
}

impl<F: Real> StaticVectors<F> {
    pub fn new(store: WordVectorStore<F>) -> Self {
        StaticVectors {
            store,
            oov: AtomicUsize::new(0),
        }
    }

    pub fn store(&self) -> &WordVectorStore<F> {
        &self.store
    }

    /// Tokens embedded as zero so far.
    pub fn oov_count(&self) -> usize {
        self.oov.load(Ordering::Relaxed)
    }

    pub fn reset_oov(&self) {
        self.oov.store(0, Ordering::Relaxed);
    }

    pub fn vector(&self, word: &str) -> Vec<F> {
        self.store.lookup(word).unwrap_or_else(|| {
            self.oov.fetch_add(1, Ordering::Relaxed);
            vec![F::zero(); self.store.dim()]
        })
    }
}

impl<F: Real> TokenEmbedder<F> for StaticVectors<F> {
    fn dim(&self) -> usize {
        self.store.dim()
    }

    fn embed(&self, sentence: &Sentence) -> Result<Matrix<F>> {
        let rows: Vec<Vec<F>> = sentence.tokens.iter().map(|t| self.vector(t)).collect();
        if rows.is_empty() {
            return Ok(Matrix::zeros(0, self.dim()));
        }
        Ok(Matrix::from_rows(&rows))
    }

    fn word_vector(&self, word: &str) -> Option<Vec<F>> {
        Some(self.store.vector_or_zero(word))
    }
}

/// Per-token vectors keyed by (sentence index, token index).
#[derive(Clone, Debug)]
pub struct ContextualVectors<F> {
    dim: usize,
    rows: HashMap<(usize, usize), Vec<F>>,
}

impl<F: Real> ContextualVectors<F> {
    pub fn new(dim: usize) -> Self {
        ContextualVectors {
            dim,
            rows: HashMap::new(),
        }
    }

    pub fn insert(&mut self, sentence: usize, token: usize, v: Vec<F>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Shape(format!("vector of dim {} in a dim-{} file", v.len(), self.dim)));
        }
        self.rows.insert((sentence, token), v);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, sentence: usize, token: usize) -> Option<&[F]> {
        self.rows.get(&(sentence, token)).map(Vec::as_slice)
    }

    /// Per-token format: `sentence<TAB>token<TAB>v1 ... vd`, 0-based indices.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut out: Option<ContextualVectors<F>> = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::parse(n, format!("expected 3 tab-separated columns, got {}", cols.len())));
            }
            let s: usize = cols[0].trim().parse().map_err(|_| Error::parse(n, "bad sentence index"))?;
            let t: usize = cols[1].trim().parse().map_err(|_| Error::parse(n, "bad token index"))?;
            let v = cols[2]
                .split_whitespace()
                .map(|x| x.parse::<f64>().map(F::lit))
                .collect::<std::result::Result<Vec<F>, _>>()
                .map_err(|_| Error::parse(n, "bad vector component"))?;
            let store = out.get_or_insert_with(|| ContextualVectors::new(v.len()));
            if v.len() != store.dim {
                return Err(Error::parse(n, format!("dim {} differs from first line's {}", v.len(), store.dim)));
            }
            store.rows.insert((s, t), v);
        }
        out.ok_or_else(|| Error::parse(0, "per-token vector file is empty"))
    }
}

impl<F: Real> TokenEmbedder<F> for ContextualVectors<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, sentence: &Sentence) -> Result<Matrix<F>> {
        let mut m = Matrix::zeros(sentence.len(), self.dim);
        for t in 0..sentence.len() {
            let v = self.get(sentence.index, t).ok_or_else(|| {
                Error::Config(format!("no vector for sentence {} token {}", sentence.index, t))
            })?;
            m.row_mut(t).copy_from_slice(v);
        }
        Ok(m)
    }

    fn word_vector(&self, _word: &str) -> Option<Vec<F>> {
        None
    }
}

/// Vectors loaded from a file, static or contextual.
#[derive(Debug)]
pub enum ExternalVectors<F> {
    Static(StaticVectors<F>),
    Contextual(ContextualVectors<F>),
}

impl<F: Real> TokenEmbedder<F> for ExternalVectors<F> {
    fn dim(&self) -> usize {
        match self {
            ExternalVectors::Static(v) => v.dim(),
            ExternalVectors::Contextual(v) => v.dim(),
        }
    }

    fn embed(&self, sentence: &Sentence) -> Result<Matrix<F>> {
        match self {
            ExternalVectors::Static(v) => v.embed(sentence),
            ExternalVectors::Contextual(v) => v.embed(sentence),
        }
    }

    fn word_vector(&self, word: &str) -> Option<Vec<F>> {
        match self {
            ExternalVectors::Static(v) => v.word_vector(word),
            ExternalVectors::Contextual(v) => v.word_vector(word),
        }
    }
}

fn looks_per_token(first: &str) -> bool {
    let cols: Vec<&str> = first.split('\t').collect();
    cols.len() == 3 && cols[0].trim().parse::<usize>().is_ok() && cols[1].trim().parse::<usize>().is_ok()
}

/// Loads a text vector file or a per-token TSV, detected from the first
/// non-blank line. `expected_dim`, when given, must match the file.
pub fn load_external_vectors<F: Real>(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<ExternalVectors<F>> {
    let path = path.as_ref();
    let open = || File::open(path).map(BufReader::new).map_err(|e| Error::file(path, e));
    let mut first = String::new();
    for line in open()?.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            first = line;
            break;
        }
    }
    let v = if looks_per_token(&first) {
        ExternalVectors::Contextual(ContextualVectors::read(open()?)?)
    } else {
        ExternalVectors::Static(StaticVectors::new(WordVectorStore::read_text(open()?)?))
    };
    if let Some(d) = expected_dim {
        if v.dim() != d {
            return Err(Error::Shape(format!("{} has dim {}, expected {d}", path.display(), v.dim())));
        }
    }
    Ok(v)
}
