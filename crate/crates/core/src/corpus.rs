//! Tokenization, vocabulary construction, frequency sub-sampling and the
//! unigram noise distribution used for negative sampling.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

pub const DEFAULT_MAX_VOCAB: usize = 100_000;
pub const DEFAULT_MIN_COUNT: u64 = 5;
pub const DEFAULT_SUBSAMPLE: f64 = 1e-4;
pub const DEFAULT_NOISE_POWER: f64 = 0.75;

/// Splits text into maximal runs of letters/digits; every other
/// non-whitespace character becomes a token of its own.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            if lowercase {
                current.extend(ch.to_lowercase());
            } else {
                current.push(ch);
            }
            continue;
        }
        if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
        if !ch.is_whitespace() {
            tokens.push(ch.to_string());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// [`tokenize`] over raw bytes, rejecting invalid UTF-8.
pub fn tokenize_bytes(bytes: &[u8], lowercase: bool) -> Result<Vec<String>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Utf8 {
        offset: e.valid_up_to(),
    })?;
    Ok(tokenize(text, lowercase))
}

/// Reads a corpus file and tokenizes it line by line. Each line is a
/// sentence; training windows never cross line boundaries.
pub fn read_corpus(path: impl AsRef<Path>, lowercase: bool) -> Result<Vec<Vec<String>>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::file(path, e))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Utf8 {
        offset: e.valid_up_to(),
    })?;
    Ok(text
        .lines()
        .map(|l| tokenize(l, lowercase))
        .filter(|s| !s.is_empty())
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    total_tokens: u64,
    word_to_id: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from `(word, count)` pairs already in id order.
    pub fn from_counts(entries: Vec<(String, u64)>, total_tokens: u64) -> Result<Self> {
        let mut words = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        let mut word_to_id = HashMap::with_capacity(entries.len());
        for (i, (w, c)) in entries.into_iter().enumerate() {
            if word_to_id.insert(w.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary word {w:?}")));
            }
            words.push(w);
            counts.push(c);
        }
        let retained: u64 = counts.iter().sum();
        if retained > total_tokens {
            return Err(Error::Config(format!(
                "total_tokens {total_tokens} below retained count {retained}"
            )));
        }
        Ok(Vocabulary {
            words,
            counts,
            total_tokens,
            word_to_id,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.word_to_id.get(word).copied()
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    /// Per-word probability of surviving sub-sampling.
    pub fn keep_probabilities(&self, t: f64) -> Vec<f64> {
        self.counts
            .iter()
            .map(|&c| keep_probability(c, self.total_tokens, t))
            .collect()
    }

    /// Maps sentences to word ids, dropping out-of-vocabulary tokens.
    pub fn encode<S: AsRef<str>>(&self, sentences: &[Vec<S>]) -> EncodedCorpus {
        let mut out = Vec::with_capacity(sentences.len());
        let mut oov = 0;
        for s in sentences {
            let ids: Vec<u32> = s
                .iter()
                .filter_map(|t| {
                    let id = self.id(t.as_ref());
                    if id.is_none() {
                        oov += 1;
                    }
                    id
                })
                .collect();
            if !ids.is_empty() {
                out.push(ids);
            }
        }
        EncodedCorpus {
            sentences: out,
            oov_tokens: oov,
        }
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "#total {}", self.total_tokens)?;
        for (word, count) in self.words.iter().zip(&self.counts) {
            writeln!(w, "{word}\t{count}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(f);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(1, "missing #total header"))??;
        let total = header
            .strip_prefix("#total ")
            .and_then(|t| t.trim().parse::<u64>().ok())
            .ok_or_else(|| Error::parse(1, "expected \"#total <count>\""))?;
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            let (word, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(lineno, "expected word<TAB>count"))?;
            let count = count
                .parse::<u64>()
                .map_err(|e| Error::parse(lineno, format!("bad count: {e}")))?;
            entries.push((word.to_string(), count));
        }
        Vocabulary::from_counts(entries, total)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::file(path, e))?;
        Vocabulary::read(BufReader::new(f))
    }
}

/// Corpus as sentences of vocabulary ids.
#[derive(Clone, Debug, Default)]
pub struct EncodedCorpus {
    pub sentences: Vec<Vec<u32>>,
    /// Tokens dropped because they are not in the vocabulary.
    pub oov_tokens: u64,
}

impl EncodedCorpus {
    pub fn token_count(&self) -> u64 {
        self.sentences.iter().map(|s| s.len() as u64).sum()
    }
}

/// Keeps the `max_vocab` most frequent tokens occurring at least `min_count`
/// times. Ids follow descending count, ties broken lexicographically.
pub fn build_vocab<I, S>(tokens: I, max_vocab: usize, min_count: u64) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if max_vocab == 0 || min_count == 0 {
        return Err(Error::Config("max_vocab and min_count must be >= 1".into()));
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut total = 0u64;
    for t in tokens {
        total += 1;
        let t = t.as_ref();
        if let Some(c) = counts.get_mut(t) {
            *c += 1;
        } else {
            counts.insert(t.to_string(), 1);
        }
    }
    let mut entries: Vec<(String, u64)> =
        counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    entries.truncate(max_vocab);
    Vocabulary::from_counts(entries, total)
}

/// word2vec-style sub-sampling keep probability, clipped to 1.
pub fn keep_probability(count: u64, total: u64, t: f64) -> f64 {
    let f = count as f64 / total as f64;
    (((f / t).sqrt() + 1.0) * (t / f)).min(1.0)
}

/// Cumulative distribution over word ids, proportional to `count^power`.
#[derive(Clone, Debug)]
pub struct NoiseTable {
    cumulative: Vec<f64>,
    power: f64,
}

impl NoiseTable {
    pub fn new(vocab: &Vocabulary, power: f64) -> Result<Self> {
        NoiseTable::from_counts(vocab.counts(), power)
    }

    pub fn from_counts(counts: &[u64], power: f64) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(power)).collect();
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::Config("noise weights sum to zero".into()));
        }
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w;
                acc / sum
            })
            .collect();
        *cumulative.last_mut().unwrap() = 1.0;
        Ok(NoiseTable { cumulative, power })
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn probability(&self, id: usize) -> f64 {
        let prev = if id == 0 { 0.0 } else { self.cumulative[id - 1] };
        self.cumulative[id] - prev
    }

    pub fn probabilities(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.probability(i)).collect()
    }

    /// Draws a word id by binary search over the cumulative array.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.gen();
        let i = self.cumulative.partition_point(|&c| c <= u);
        i.min(self.cumulative.len() - 1) as u32
    }
}

/// Free-function form of [`NoiseTable::new`].
pub fn build_noise_table(vocab: &Vocabulary, power: f64) -> Result<NoiseTable> {
    NoiseTable::new(vocab, power)
}
