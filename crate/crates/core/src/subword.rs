//! Mapping words to the set of sub-word segment ids whose vectors are summed
//! to form the word representation.
//!
//! The global segment-id space is laid out as
//!
//! ```text
//! [0, |vocab|)                       whole-word units
//! [|vocab|, |vocab| + buckets)       hashed character n-grams
//! [|vocab| + buckets, total)         morphemes
//! ```

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

pub const DEFAULT_MIN_N: u32 = 3;
pub const DEFAULT_MAX_N: u32 = 6;
pub const DEFAULT_BUCKETS: u32 = 2_000_000;

const FNV_OFFSET: u32 = 2_166_136_261;
const FNV_PRIME: u32 = 16_777_619;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyKind {
    WholeWord,
    NGrams,
    Morphemes,
    MorphNGrams,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::WholeWord,
        StrategyKind::NGrams,
        StrategyKind::Morphemes,
        StrategyKind::MorphNGrams,
    ];

    pub fn code(self) -> u32 {
        match self {
            StrategyKind::WholeWord => 0,
            StrategyKind::NGrams => 1,
            StrategyKind::Morphemes => 2,
            StrategyKind::MorphNGrams => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        StrategyKind::ALL.get(code as usize).copied()
    }

    pub fn uses_ngrams(self) -> bool {
        matches!(self, StrategyKind::NGrams | StrategyKind::MorphNGrams)
    }

    pub fn uses_morphemes(self) -> bool {
        matches!(self, StrategyKind::Morphemes | StrategyKind::MorphNGrams)
    }

    /// Short column label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::WholeWord => "SG",
            StrategyKind::NGrams => "FT",
            StrategyKind::Morphemes => "Morph",
            StrategyKind::MorphNGrams => "MorphNG",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyKind::WholeWord => "sg",
            StrategyKind::NGrams => "ngrams",
            StrategyKind::Morphemes => "morph",
            StrategyKind::MorphNGrams => "morphng",
        })
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sg" => Ok(StrategyKind::WholeWord),
            "ngrams" => Ok(StrategyKind::NGrams),
            "morph" => Ok(StrategyKind::Morphemes),
            "morphng" => Ok(StrategyKind::MorphNGrams),
            _ => Err(Error::Config(format!("unknown strategy {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SegmentationStrategy {
    pub kind: StrategyKind,
    pub n_min: u32,
    pub n_max: u32,
    pub buckets: u32,
    pub include_word: bool,
}

impl SegmentationStrategy {
    pub fn new(kind: StrategyKind) -> Self {
        SegmentationStrategy {
            kind,
            n_min: DEFAULT_MIN_N,
            n_max: DEFAULT_MAX_N,
            buckets: DEFAULT_BUCKETS,
            include_word: true,
        }
    }

    pub fn with_buckets(mut self, buckets: u32) -> Self {
        self.buckets = buckets;
        self
    }

    pub fn with_ngram_range(mut self, n_min: u32, n_max: u32) -> Self {
        self.n_min = n_min;
        self.n_max = n_max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_min < 1 || self.n_min > self.n_max {
            return Err(Error::Config(format!(
                "n-gram bounds {}..{} invalid",
                self.n_min, self.n_max
            )));
        }
        if self.buckets < 1 {
            return Err(Error::Config("buckets must be >= 1".into()));
        }
        Ok(())
    }

    /// Buckets actually allocated in the segment space (zero when the
    /// strategy does not use n-grams).
    pub fn active_buckets(&self) -> u32 {
        if self.kind.uses_ngrams() {
            self.buckets
        } else {
            0
        }
    }
}

/// All substrings of `<word>` with code-point length in `n_min..=n_max`,
/// ordered by length then start position.
pub fn extract_ngrams(word: &str, n_min: usize, n_max: usize) -> Vec<String> {
    let wrapped: Vec<char> = std::iter::once('<')
        .chain(word.chars())
        .chain(std::iter::once('>'))
        .collect();
    let mut out = Vec::new();
    for n in n_min..=n_max.min(wrapped.len()) {
        for start in 0..=wrapped.len() - n {
            out.push(wrapped[start..start + n].iter().collect());
        }
    }
    out
}

/// 32-bit FNV-1a over the UTF-8 bytes.
pub fn fnv1a(s: &str) -> u32 {
    s.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ b as u32).wrapping_mul(FNV_PRIME))
}

pub fn hash_segment(ngram: &str, buckets: u64) -> u64 {
    fnv1a(ngram) as u64 % buckets
}

/// External word → morpheme segmentation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MorphemeLexicon {
    entries: HashMap<String, Vec<u32>>,
    morphemes: Vec<String>,
    morpheme_to_id: HashMap<String, u32>,
    duplicates: usize,
}

impl MorphemeLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces the segmentation of `word`. Returns true when an
    /// earlier entry was replaced.
    pub fn insert<S: AsRef<str>>(&mut self, word: &str, morphemes: &[S]) -> bool {
        let ids: Vec<u32> = morphemes.iter().map(|m| self.intern(m.as_ref())).collect();
        let replaced = self.entries.insert(word.to_string(), ids).is_some();
        if replaced {
            self.duplicates += 1;
        }
        replaced
    }

    fn intern(&mut self, morpheme: &str) -> u32 {
        if let Some(&id) = self.morpheme_to_id.get(morpheme) {
            return id;
        }
        let id = self.morphemes.len() as u32;
        self.morphemes.push(morpheme.to_string());
        self.morpheme_to_id.insert(morpheme.to_string(), id);
        id
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut lex = MorphemeLexicon::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let (word, rest) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(lineno, "expected word<TAB>morphemes"))?;
            if word.is_empty() {
                return Err(Error::parse(lineno, "empty word"));
            }
            let morphemes: Vec<&str> = rest.split(' ').collect();
            if rest.is_empty() || morphemes.iter().any(|m| m.is_empty()) {
                return Err(Error::parse(lineno, "empty morpheme field"));
            }
            if lex.insert(word, &morphemes) {
                log::warn!("lexicon line {lineno}: duplicate entry for {word:?}, keeping the last");
            }
        }
        Ok(lex)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn morpheme_count(&self) -> usize {
        self.morphemes.len()
    }

    pub fn morphemes(&self) -> &[String] {
        &self.morphemes
    }

    /// Number of entries that replaced an earlier line for the same word.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn morpheme_id(&self, morpheme: &str) -> Option<u32> {
        self.morpheme_to_id.get(morpheme).copied()
    }

    /// Local morpheme ids of `word`, if it has an entry.
    pub fn segment(&self, word: &str) -> Option<&[u32]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn segment_strings(&self, word: &str) -> Option<Vec<&str>> {
        self.segment(word)
            .map(|ids| ids.iter().map(|&i| self.morphemes[i as usize].as_str()).collect())
    }

    /// Entries sorted by word, for deterministic serialization.
    pub fn sorted_entries(&self) -> Vec<(&str, &[u32])> {
        let mut v: Vec<_> = self
            .entries
            .iter()
            .map(|(w, ids)| (w.as_str(), ids.as_slice()))
            .collect();
        v.sort_unstable_by(|a, b| a.0.cmp(b.0));
        v
    }

    /// Rebuilds a lexicon from its serialized parts.
    pub fn from_parts(morphemes: Vec<String>, entries: Vec<(String, Vec<u32>)>) -> Result<Self> {
        let mut morpheme_to_id = HashMap::with_capacity(morphemes.len());
        for (i, m) in morphemes.iter().enumerate() {
            if morpheme_to_id.insert(m.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("duplicate morpheme {m:?}")));
            }
        }
        let n = morphemes.len() as u32;
        for (w, ids) in &entries {
            if ids.is_empty() || ids.iter().any(|&i| i >= n) {
                return Err(Error::Config(format!("bad morpheme ids for {w:?}")));
            }
        }
        Ok(MorphemeLexicon {
            entries: entries.into_iter().collect(),
            morphemes,
            morpheme_to_id,
            duplicates: 0,
        })
    }
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<MorphemeLexicon> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::file(path, e))?;
    MorphemeLexicon::read(BufReader::new(f))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SegmentIdSpace {
    pub vocab: u32,
    pub buckets: u32,
    pub morphemes: u32,
}

impl SegmentIdSpace {
    pub fn total(&self) -> usize {
        self.vocab as usize + self.buckets as usize + self.morphemes as usize
    }

    pub fn ngram_offset(&self) -> u32 {
        self.vocab
    }

    pub fn morpheme_offset(&self) -> u32 {
        self.vocab + self.buckets
    }

    pub fn word_range(&self) -> std::ops::Range<u32> {
        0..self.vocab
    }

    pub fn ngram_range(&self) -> std::ops::Range<u32> {
        self.vocab..self.vocab + self.buckets
    }

    pub fn morpheme_range(&self) -> std::ops::Range<u32> {
        self.morpheme_offset()..self.morpheme_offset() + self.morphemes
    }
}

/// Strategy, hashing parameters and lexicon bound to one vocabulary.
///
/// For morpheme strategies every vocabulary word without a lexicon entry is
/// given a single fallback morpheme equal to the whole word, so the
/// morpheme range also covers those.
#[derive(Clone, Debug, PartialEq)]
pub struct SubwordIndex {
    strategy: SegmentationStrategy,
    lexicon: MorphemeLexicon,
    space: SegmentIdSpace,
}

impl SubwordIndex {
    pub fn new(
        vocab: &Vocabulary,
        strategy: SegmentationStrategy,
        lexicon: Option<MorphemeLexicon>,
    ) -> Result<Self> {
        strategy.validate()?;
        let lexicon = if strategy.kind.uses_morphemes() {
            let mut lex = lexicon.ok_or_else(|| {
                Error::Config(format!("strategy {} requires a morpheme lexicon", strategy.kind))
            })?;
            for w in vocab.words() {
                if lex.segment(w).is_none() {
                    lex.insert(w, &[w.as_str()]);
                }
            }
            lex
        } else {
            MorphemeLexicon::new()
        };
        Ok(Self::from_parts(vocab.len() as u32, strategy, lexicon))
    }

    /// Assembles an index without augmenting the lexicon (used when
    /// deserializing).
    pub fn from_parts(vocab_len: u32, strategy: SegmentationStrategy, lexicon: MorphemeLexicon) -> Self {
        let space = SegmentIdSpace {
            vocab: vocab_len,
            buckets: strategy.active_buckets(),
            morphemes: lexicon.morpheme_count() as u32,
        };
        SubwordIndex {
            strategy,
            lexicon,
            space,
        }
    }

    pub fn strategy(&self) -> &SegmentationStrategy {
        &self.strategy
    }

    pub fn lexicon(&self) -> &MorphemeLexicon {
        &self.lexicon
    }

    pub fn space(&self) -> SegmentIdSpace {
        self.space
    }

    /// Segment ids of `word`; `word_id` is its vocabulary id when in-vocabulary.
    ///
    /// Order: word unit, n-grams, morphemes. Duplicates (hash collisions)
    /// are removed keeping the first occurrence.
    pub fn segments_for(&self, word: &str, word_id: Option<u32>) -> Vec<u32> {
        let s = &self.strategy;
        let mut out = Vec::new();
        if let Some(id) = word_id {
            if s.kind == StrategyKind::WholeWord || s.include_word {
                out.push(id);
            }
        }
        if s.kind.uses_ngrams() {
            let offset = self.space.ngram_offset();
            for g in extract_ngrams(word, s.n_min as usize, s.n_max as usize) {
                out.push(offset + hash_segment(&g, s.buckets as u64) as u32);
            }
        }
        if s.kind.uses_morphemes() {
            let offset = self.space.morpheme_offset();
            match self.lexicon.segment(word) {
                Some(ids) => out.extend(ids.iter().map(|&m| offset + m)),
                None => {
                    if let Some(m) = self.lexicon.morpheme_id(word) {
                        out.push(offset + m);
                    }
                }
            }
        }
        dedup_in_order(&mut out);
        out
    }
}

fn dedup_in_order(ids: &mut Vec<u32>) {
    let mut seen = std::collections::HashSet::with_capacity(ids.len());
    ids.retain(|id| seen.insert(*id));
}

/// Free-function form of [`SubwordIndex::segments_for`].
pub fn segments_for(index: &SubwordIndex, word: &str, word_id: Option<u32>) -> Vec<u32> {
    index.segments_for(word, word_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocab;
    use proptest::prelude::*;
    use std::collections::HashSet;

    const LONG_WORD_LINE: &str = "авиаракетостроение\tави ракет ост ро е ни е";

    fn window_count(len: usize, n_min: usize, n_max: usize) -> usize {
        (n_min..=n_max)
            .map(|n| (len + 2 + 1).saturating_sub(n))
            .sum()
    }

    #[test]
    fn ngram_examples() {
        assert_eq!(
            extract_ngrams("кот", 3, 6),
            vec!["<ко", "кот", "от>", "<кот", "кот>", "<кот>"]
        );
        assert_eq!(extract_ngrams("a", 3, 6), vec!["<a>"]);
        assert_eq!(extract_ngrams("ab", 1, 1), vec!["<", "a", "b", ">"]);
    }

    #[test]
    fn fnv_examples() {
        assert_eq!(hash_segment("", 1 << 32), 2_166_136_261);
        assert_eq!(hash_segment("a", 1 << 32), 3_826_002_220);
        assert_eq!(hash_segment("кот", 1), 0);
    }

    #[test]
    fn lexicon_parses_long_segmentation() {
        let lex = MorphemeLexicon::read(LONG_WORD_LINE.as_bytes()).unwrap();
        let m = lex.segment_strings("авиаракетостроение").unwrap();
        assert_eq!(m, vec!["ави", "ракет", "ост", "ро", "е", "ни", "е"]);
        // "е" twice
        assert_eq!(lex.morpheme_count(), 6);
    }

    #[test]
    fn lexicon_counts_distinct_morphemes() {
        let lex = MorphemeLexicon::read("кот\tкот\nкоты\tкот ы\n".as_bytes()).unwrap();
        assert_eq!(lex.len(), 2);
        assert_eq!(lex.morpheme_count(), 2);
        assert_eq!(lex.segment_strings("кот").unwrap(), vec!["кот"]);
    }

    #[test]
    fn lexicon_duplicates_last_wins() {
        let lex = MorphemeLexicon::read("a\tx\na\ty z\n".as_bytes()).unwrap();
        assert_eq!(lex.len(), 1);
        assert_eq!(lex.duplicates(), 1);
        assert_eq!(lex.segment_strings("a").unwrap(), vec!["y", "z"]);
    }

    #[test]
    fn lexicon_rejects_malformed_lines() {
        for (text, line) in [("ok\tok\nbad\n", 2), ("w\t\n", 1), ("w\ta  b\n", 1)] {
            match MorphemeLexicon::read(text.as_bytes()) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    fn fixture() -> (Vocabulary, MorphemeLexicon) {
        let vocab = build_vocab(["кот", "кот", "авиаракетостроение", "пёс"], 10, 1).unwrap();
        let lex = MorphemeLexicon::read(LONG_WORD_LINE.as_bytes()).unwrap();
        (vocab, lex)
    }

    #[test]
    fn whole_word_is_identity() {
        let (vocab, _) = fixture();
        let idx = SubwordIndex::new(&vocab, SegmentationStrategy::new(StrategyKind::WholeWord), None).unwrap();
        let id = vocab.id("кот").unwrap();
        assert_eq!(idx.segments_for("кот", Some(id)), vec![id]);
        assert!(idx.segments_for("мышь", None).is_empty());
        assert_eq!(idx.space().total(), vocab.len());
    }

    #[test]
    fn morphemes_of_long_word() {
        let (vocab, lex) = fixture();
        let idx = SubwordIndex::new(&vocab, SegmentationStrategy::new(StrategyKind::Morphemes), Some(lex)).unwrap();
        let w = "авиаракетостроение";
        let id = vocab.id(w).unwrap();
        let segs = idx.segments_for(w, Some(id));
        // word id plus 6 distinct morpheme units (the repeated "е" is one unit)
        assert_eq!(segs[0], id);
        assert_eq!(segs.len(), 1 + 6);
        assert!(segs[1..].iter().all(|s| idx.space().morpheme_range().contains(s)));
    }

    #[test]
    fn morpheme_strategy_requires_lexicon() {
        let (vocab, _) = fixture();
        assert!(SubwordIndex::new(&vocab, SegmentationStrategy::new(StrategyKind::MorphNGrams), None).is_err());
    }

    #[test]
    fn lexicon_miss_falls_back_to_whole_word_morpheme() {
        let (vocab, lex) = fixture();
        let mut s = SegmentationStrategy::new(StrategyKind::Morphemes);
        s.include_word = false;
        let idx = SubwordIndex::new(&vocab, s, Some(lex)).unwrap();
        let segs = idx.segments_for("кот", vocab.id("кот"));
        assert_eq!(segs.len(), 1);
        let local = segs[0] - idx.space().morpheme_offset();
        assert_eq!(idx.lexicon().morphemes()[local as usize], "кот");
    }

    #[test]
    fn morphng_is_union_of_parts() {
        let (vocab, lex) = fixture();
        let b = 1000;
        let ng = SubwordIndex::new(&vocab, SegmentationStrategy::new(StrategyKind::NGrams).with_buckets(b), None).unwrap();
        let mo = SubwordIndex::new(&vocab, SegmentationStrategy::new(StrategyKind::Morphemes), Some(lex.clone())).unwrap();
        let both = SubwordIndex::new(&vocab, SegmentationStrategy::new(StrategyKind::MorphNGrams).with_buckets(b), Some(lex)).unwrap();
        let w = "авиаракетостроение";
        let id = vocab.id(w);
        // Morpheme ids shift by the bucket count in the combined space.
        let shift = both.space().morpheme_offset() - mo.space().morpheme_offset();
        let mut expect: HashSet<u32> = ng.segments_for(w, id).into_iter().collect();
        for s in mo.segments_for(w, id) {
            expect.insert(if s < vocab.len() as u32 { s } else { s + shift });
        }
        let got: HashSet<u32> = both.segments_for(w, id).into_iter().collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn segment_space_is_partitioned() {
        let (vocab, lex) = fixture();
        let idx = SubwordIndex::new(&vocab, SegmentationStrategy::new(StrategyKind::MorphNGrams).with_buckets(50), Some(lex)).unwrap();
        let sp = idx.space();
        assert_eq!(sp.word_range().end, sp.ngram_range().start);
        assert_eq!(sp.ngram_range().end, sp.morpheme_range().start);
        assert_eq!(sp.morpheme_range().end as usize, sp.total());
        // 6 lexicon morphemes plus fallbacks for "кот" and "пёс"
        assert_eq!(sp.morphemes, 8);
    }

    #[test]
    fn strategy_parse_and_codes() {
        for k in StrategyKind::ALL {
            assert_eq!(k.to_string().parse::<StrategyKind>().unwrap(), k);
            assert_eq!(StrategyKind::from_code(k.code()), Some(k));
        }
        assert!("fasttext".parse::<StrategyKind>().is_err());
        let mut s = SegmentationStrategy::new(StrategyKind::NGrams);
        s.n_min = 4;
        s.n_max = 3;
        assert!(s.validate().is_err());
    }

    proptest! {
        #[test]
        fn ngram_count_matches_window_formula(word in "[a-zа-я]{1,15}", n_min in 1usize..5, extra in 0usize..4) {
            let n_max = n_min + extra;
            let len = word.chars().count();
            prop_assert_eq!(extract_ngrams(&word, n_min, n_max).len(), window_count(len, n_min, n_max));
        }

        #[test]
        fn segments_are_deterministic_and_in_range(word in "[a-zа-я]{1,12}", kind in 0u32..4) {
            let (vocab, lex) = fixture();
            let kind = StrategyKind::from_code(kind).unwrap();
            let idx = SubwordIndex::new(&vocab, SegmentationStrategy::new(kind).with_buckets(97), Some(lex)).unwrap();
            let id = vocab.id(&word);
            let a = idx.segments_for(&word, id);
            prop_assert_eq!(&a, &idx.segments_for(&word, id));
            let sp = idx.space();
            for s in &a {
                prop_assert!((*s as usize) < sp.total());
                if !sp.word_range().contains(s) {
                    prop_assert!(kind != StrategyKind::WholeWord);
                }
            }
            if kind.uses_ngrams() {
                prop_assert!(!a.is_empty());
                prop_assert!(a.iter().filter(|s| sp.ngram_range().contains(s)).count() > 0);
            }
        }
    }
}
