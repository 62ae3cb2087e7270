//! Synthetic corpora shared by the integration tests.

#![allow(dead_code)]

use std::collections::HashSet;

use morphvec::corpus::{self, NoiseTable, Vocabulary};
use morphvec::eval::{Sentence, TagDataset, TaskKind};
use morphvec::subword::{MorphemeLexicon, SegmentationStrategy, StrategyKind, SubwordIndex};
use morphvec::trainer::{self, EmbeddingModel, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SUFFIXES: [&str; 4] = ["ika", "oru", "esh", "ump"];
pub const SUFFIX_TAGS: [&str; 4] = ["A", "B", "C", "D"];

/// Tag is a function of the last three characters. `heldout` words never
/// occur in the embedding corpus; the tagger test split uses only them.
pub struct SuffixFixture {
    pub corpus: Vec<Vec<String>>,
    pub lexicon: MorphemeLexicon,
    /// `seen[c]` / `heldout[c]`: words of suffix class `c`.
    pub seen: Vec<Vec<String>>,
    pub heldout: Vec<Vec<String>>,
    pub train: TagDataset,
    pub dev: TagDataset,
    pub test: TagDataset,
}

impl SuffixFixture {
    /// Share of the most frequent tag among scored test tokens.
    pub fn majority_baseline(&self) -> f64 {
        let mut counts = std::collections::HashMap::<&str, usize>::new();
        for s in &self.test.sentences {
            for t in &s.tags {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let total: usize = counts.values().sum();
        *counts.values().max().unwrap() as f64 / total as f64
    }
}

fn stem(rng: &mut ChaCha8Rng) -> String {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let syllables = rng.gen_range(2..=3);
    let mut s = String::new();
    for _ in 0..syllables {
        s.push(C[rng.gen_range(0..C.len())] as char);
        s.push(V[rng.gen_range(0..V.len())] as char);
    }
    s
}

fn tag_sentences(
    rng: &mut ChaCha8Rng,
    pool: &[(String, usize)],
    count: usize,
    len: usize,
    first_index: usize,
) -> Vec<Sentence> {
    (0..count)
        .map(|i| {
            let picks: Vec<&(String, usize)> = (0..len).map(|_| pool.choose(rng).unwrap()).collect();
            Sentence::new(
                first_index + i,
                picks.iter().map(|(w, _)| w.clone()).collect(),
                picks.iter().map(|(_, c)| SUFFIX_TAGS[*c].to_string()).collect(),
            )
        })
        .collect()
}

pub fn suffix_fixture(seed: u64) -> SuffixFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = HashSet::new();
    let mut lexicon = MorphemeLexicon::new();
    let mut seen = vec![Vec::new(); SUFFIXES.len()];
    let mut heldout = vec![Vec::new(); SUFFIXES.len()];
    for (c, suf) in SUFFIXES.iter().enumerate() {
        let mut n = 0;
        while n < 55 {
            let st = stem(&mut rng);
            let w = format!("{st}{suf}");
            if !used.insert(w.clone()) {
                continue;
            }
            lexicon.insert(&w, &[st.as_str(), suf]);
            if n < 40 {
                seen[c].push(w);
            } else {
                heldout[c].push(w);
            }
            n += 1;
        }
    }
    // class-clustered sentences: a word's contexts identify its suffix class
    let corpus: Vec<Vec<String>> = (0..3000)
        .map(|_| {
            let c = rng.gen_range(0..SUFFIXES.len());
            (0..8).map(|_| seen[c].choose(&mut rng).unwrap().clone()).collect()
        })
        .collect();
    let tagged = |words: &[Vec<String>]| -> Vec<(String, usize)> {
        words
            .iter()
            .enumerate()
            .flat_map(|(c, ws)| ws.iter().map(move |w| (w.clone(), c)))
            .collect()
    };
    let mut all = tagged(&seen);
    let held = tagged(&heldout);
    all.extend(held.iter().cloned());
    let train = TagDataset::new(tag_sentences(&mut rng, &all, 500, 6, 0), TaskKind::Pos);
    let dev = TagDataset::new(tag_sentences(&mut rng, &held, 60, 6, 500), TaskKind::Pos);
    let test = TagDataset::new(tag_sentences(&mut rng, &held, 300, 6, 560), TaskKind::Pos);
    SuffixFixture {
        corpus,
        lexicon,
        seen,
        heldout,
        train,
        dev,
        test,
    }
}

pub fn embedding_config(seed: u64, threads: usize) -> TrainConfig {
    TrainConfig {
        dim: 32,
        window: 3,
        negatives: 5,
        lr0: 0.025,
        lr_min: 1e-4,
        subsample: 1e-2,
        epochs: 5,
        seed,
        threads,
    }
}

pub struct Prepared {
    pub vocab: Vocabulary,
    pub encoded: corpus::EncodedCorpus,
    pub noise: NoiseTable,
}

pub fn prepare(corpus: &[Vec<String>]) -> Prepared {
    let vocab = corpus::build_vocab(corpus.iter().flatten(), 100_000, 1).unwrap();
    let encoded = vocab.encode(corpus);
    let noise = NoiseTable::new(&vocab, 0.75).unwrap();
    Prepared { vocab, encoded, noise }
}

pub fn train_embeddings(
    corpus: &[Vec<String>],
    kind: StrategyKind,
    lexicon: Option<&MorphemeLexicon>,
    config: &TrainConfig,
) -> EmbeddingModel<f32> {
    let p = prepare(corpus);
    let strategy = SegmentationStrategy::new(kind).with_buckets(20_000);
    let lex = if kind.uses_morphemes() { lexicon.cloned() } else { None };
    let index = SubwordIndex::new(&p.vocab, strategy, lex).unwrap();
    trainer::train(&p.encoded, &p.vocab, &p.noise, index, config).unwrap().model
}
