//! Column-format tagging datasets.
//!
//! One token per line, `token<TAB>tag` with an optional third column
//! `1` (scored) or `0` (excluded, e.g. continuation sub-tokens). A blank
//! line ends a sentence.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Pos,
    Chunk,
    Ner,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    Accuracy,
    EntityF1,
}

impl TaskKind {
    pub fn metric(self) -> MetricKind {
        match self {
            TaskKind::Pos | TaskKind::Chunk => MetricKind::Accuracy,
            TaskKind::Ner => MetricKind::EntityF1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TaskKind::Pos => "POS",
            TaskKind::Chunk => "Chunking",
            TaskKind::Ner => "NER",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Pos => "pos",
            TaskKind::Chunk => "chunk",
            TaskKind::Ner => "ner",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pos" => Ok(TaskKind::Pos),
            "chunk" => Ok(TaskKind::Chunk),
            "ner" => Ok(TaskKind::Ner),
            _ => Err(Error::Config(format!("unknown task {s:?}"))),
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::EntityF1 => "entity-f1",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    /// Position in the source file, used to align precomputed per-token vectors.
    pub index: usize,
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
    /// `true` when the token participates in the loss and the metrics.
    pub mask: Vec<bool>,
}

impl Sentence {
    pub fn new(index: usize, tokens: Vec<String>, tags: Vec<String>) -> Self {
        let mask = vec![true; tokens.len()];
        Sentence {
            index,
            tokens,
            tags,
            mask,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn scored(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TagDataset {
    pub sentences: Vec<Sentence>,
    tags: Vec<String>,
    tag_to_id: HashMap<String, usize>,
    pub task: TaskKind,
}

impl TagDataset {
    /// Builds a dataset; the tag vocabulary is inferred in first-seen order.
    pub fn new(sentences: Vec<Sentence>, task: TaskKind) -> Self {
        let mut tags = Vec::new();
        let mut tag_to_id = HashMap::new();
        for t in sentences.iter().flat_map(|s| &s.tags) {
            if !tag_to_id.contains_key(t) {
                tag_to_id.insert(t.clone(), tags.len());
                tags.push(t.clone());
            }
        }
        TagDataset {
            sentences,
            tags,
            tag_to_id,
            task,
        }
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn tag_id(&self, tag: &str) -> Option<usize> {
        self.tag_to_id.get(tag).copied()
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    /// Subset with the same task, keeping original sentence indices.
    pub fn subset(&self, indices: &[usize]) -> TagDataset {
        TagDataset::new(indices.iter().map(|&i| self.sentences[i].clone()).collect(), self.task)
    }

    /// Deterministic 80/10/10 train/dev/test split over a seeded shuffle.
    pub fn split(&self, seed: u64) -> (TagDataset, TagDataset, TagDataset) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = order.len();
        let n_train = n * 8 / 10;
        let n_dev = n / 10;
        let (train, rest) = order.split_at(n_train);
        let (dev, test) = rest.split_at(n_dev);
        (self.subset(train), self.subset(dev), self.subset(test))
    }

    /// Checks NER tags are `O` or `{B,I,L,U}-TYPE` on scored tokens.
    pub fn check_biluo(&self) -> Result<()> {
        for s in &self.sentences {
            for (tag, &m) in s.tags.iter().zip(&s.mask) {
                if m && !is_biluo_tag(tag) {
                    return Err(Error::Config(format!(
                        "tag {tag:?} in sentence {} is not BILUO",
                        s.index
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let with_mask = self.sentences.iter().any(|s| s.mask.iter().any(|&m| !m));
        for s in &self.sentences {
            for i in 0..s.len() {
                if with_mask {
                    writeln!(w, "{}\t{}\t{}", s.tokens[i], s.tags[i], u8::from(s.mask[i]))?;
                } else {
                    writeln!(w, "{}\t{}", s.tokens[i], s.tags[i])?;
                }
            }
            writeln!(w)?;
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

    pub fn read<R: BufRead>(reader: R, task: TaskKind) -> Result<Self> {
        let mut sentences = Vec::new();
        let mut current = Sentence::new(0, vec![], vec![]);
        let mut columns: Option<usize> = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                if !current.is_empty() {
                    let next = Sentence::new(sentences.len() + 1, vec![], vec![]);
                    sentences.push(std::mem::replace(&mut current, next));
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let n = fields.len();
            if !(2..=3).contains(&n) {
                return Err(Error::parse(lineno, format!("expected 2 or 3 columns, found {n}")));
            }
            match columns {
                Some(c) if c != n => {
                    return Err(Error::parse(lineno, format!("ragged columns: {n} after {c}")))
                }
                _ => columns = Some(n),
            }
            if fields[0].is_empty() || fields[1].is_empty() {
                return Err(Error::parse(lineno, "empty token or tag"));
            }
            let scored = match fields.get(2) {
                None | Some(&"1") => true,
                Some(&"0") => false,
                Some(other) => return Err(Error::parse(lineno, format!("mask must be 0 or 1, found {other:?}"))),
            };
            current.tokens.push(fields[0].to_string());
            current.tags.push(fields[1].to_string());
            current.mask.push(scored);
        }
        if !current.is_empty() {
            sentences.push(current);
        }
        Ok(TagDataset::new(sentences, task))
    }

    pub fn load(path: impl AsRef<Path>, task: TaskKind) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read(BufReader::new(f), task)
    }
}

pub fn read_conll(path: impl AsRef<Path>, task: TaskKind) -> Result<TagDataset> {
    TagDataset::load(path, task)
}

pub fn write_conll(dataset: &TagDataset, path: impl AsRef<Path>) -> Result<()> {
    dataset.save(path)
}

pub fn is_biluo_tag(tag: &str) -> bool {
    if tag == "O" {
        return true;
    }
    match tag.split_once('-') {
        Some((p, ty)) => matches!(p, "B" | "I" | "L" | "U") && !ty.is_empty(),
        None => false,
    }
}
