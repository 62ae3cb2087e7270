//! Composed word vectors, nearest-neighbor queries and the two on-disk
//! formats: word2vec-style text vectors and the `MEB1` binary model.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::num::{axpy, cosine, Real};
use crate::subword::{MorphemeLexicon, SegmentationStrategy, StrategyKind, SubwordIndex};
use crate::trainer::EmbeddingModel;

/// Sum of the input rows of every segment of `word`. Words without any
/// segment (whole-word strategy, out of vocabulary) get the zero vector.
pub fn compose_word_vector<F: Real>(word: &str, model: &EmbeddingModel<F>) -> Vec<F> {
    let mut v = vec![F::zero(); model.dim()];
    for s in model.segments(word) {
        axpy(F::one(), model.input().row(s as usize), &mut v);
    }
    v
}

/// Word vectors ready for downstream use.
#[derive(Clone, Debug)]
pub struct WordVectorStore<F> {
    words: Vec<String>,
    word_to_id: HashMap<String, usize>,
    vectors: Matrix<F>,
    model: Option<EmbeddingModel<F>>,
}

impl<F: Real> WordVectorStore<F> {
    pub fn new(words: Vec<String>, vectors: Matrix<F>) -> Result<Self> {
        if words.len() != vectors.rows() {
            return Err(Error::Shape(format!(
                "{} words but {} vector rows",
                words.len(),
                vectors.rows()
            )));
        }
        if !vectors.is_finite() {
            return Err(Error::NonFinite("loading vectors".into()));
        }
        let mut word_to_id = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            word_to_id.entry(w.clone()).or_insert(i);
        }
        Ok(WordVectorStore {
            words,
            word_to_id,
            vectors,
            model: None,
        })
    }

    /// Composes every vocabulary word and keeps the model for OOV queries.
    pub fn from_model(model: EmbeddingModel<F>) -> Self {
        let rows: Vec<Vec<F>> = model
            .vocab()
            .words()
            .iter()
            .map(|w| compose_word_vector(w, &model))
            .collect();
        let dim = model.dim();
        let vectors = if rows.is_empty() {
            Matrix::zeros(0, dim)
        } else {
            Matrix::from_rows(&rows)
        };
        let mut store = WordVectorStore::new(model.vocab().words().to_vec(), vectors)
            .expect("composed rows match vocabulary");
        store.model = Some(model);
        store
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
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

    pub fn vectors(&self) -> &Matrix<F> {
        &self.vectors
    }

    pub fn model(&self) -> Option<&EmbeddingModel<F>> {
        self.model.as_ref()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.word_to_id.contains_key(word)
    }

    /// Stored row of an in-store word.
    pub fn get(&self, word: &str) -> Option<&[F]> {
        self.word_to_id.get(word).map(|&i| self.vectors.row(i))
    }

    /// Vector for any word: the stored row, else a composition through the
    /// model, else `None`.
    pub fn lookup(&self, word: &str) -> Option<Vec<F>> {
        if let Some(v) = self.get(word) {
            return Some(v.to_vec());
        }
        let model = self.model.as_ref()?;
        let v = compose_word_vector(word, model);
        if v.iter().all(|x| x.is_zero()) && model.segments(word).is_empty() {
            return None;
        }
        Some(v)
    }

    /// [`lookup`](Self::lookup) with the zero vector as the miss value.
    pub fn vector_or_zero(&self, word: &str) -> Vec<F> {
        self.lookup(word).unwrap_or_else(|| vec![F::zero(); self.dim()])
    }

    /// Top-`k` stored words by cosine similarity to the query vector,
    /// excluding the query itself.
    pub fn nearest_neighbors(&self, query: &str, k: usize) -> Vec<(String, F)> {
        let q = self.vector_or_zero(query);
        self.nearest_to_vector(&q, k, Some(query))
    }

    pub fn nearest_to_vector(&self, q: &[F], k: usize, exclude: Option<&str>) -> Vec<(String, F)> {
        let mut scored: Vec<(usize, F)> = self
            .vectors
            .iter_rows()
            .enumerate()
            .filter(|(i, _)| Some(self.words[*i].as_str()) != exclude)
            .map(|(i, row)| (i, cosine(q, row)))
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
        scored
            .into_iter()
            .take(k)
            .map(|(i, c)| (self.words[i].clone(), c))
            .collect()
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim())?;
        for (word, row) in self.words.iter().zip(self.vectors.iter_rows()) {
            w.write_all(word.as_bytes())?;
            for x in row {
                write!(w, " {:.6}", x.as_f64())?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_text(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_text<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| Error::parse(1, "missing header"))??;
        let mut parts = header.split_whitespace();
        let (count, dim) = match (parts.next(), parts.next(), parts.next()) {
            (Some(c), Some(d), None) => (
                c.parse::<usize>().map_err(|e| Error::parse(1, format!("bad count: {e}")))?,
                d.parse::<usize>().map_err(|e| Error::parse(1, format!("bad dim: {e}")))?,
            ),
            _ => return Err(Error::parse(1, "expected \"<count> <dim>\"")),
        };
        let mut words = Vec::with_capacity(count);
        let mut data = Vec::with_capacity(count * dim);
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(' ').filter(|s| !s.is_empty());
            let word = fields.next().ok_or_else(|| Error::parse(lineno, "empty line"))?;
            let before = data.len();
            for f in fields {
                let x: f64 = f
                    .parse()
                    .map_err(|e| Error::parse(lineno, format!("bad component {f:?}: {e}")))?;
                data.push(F::lit(x));
            }
            let got = data.len() - before;
            if got != dim {
                return Err(Error::parse(lineno, format!("expected {dim} components, found {got}")));
            }
            words.push(word.to_string());
        }
        if words.len() != count {
            return Err(Error::parse(
                words.len() + 2,
                format!("header announces {count} words, found {}", words.len()),
            ));
        }
        WordVectorStore::new(words, Matrix::from_vec(count, dim, data))
    }

    pub fn load_text(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read_text(BufReader::new(f))
    }
}

pub fn nearest_neighbors<F: Real>(query: &str, k: usize, store: &WordVectorStore<F>) -> Vec<(String, F)> {
    store.nearest_neighbors(query, k)
}

pub const MODEL_MAGIC: &[u8; 4] = b"MEB1";
const INCLUDE_WORD_FLAG: u32 = 1 << 8;

/// Fixed-size header of a binary model file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelHeader {
    pub vocab_size: u32,
    pub buckets: u32,
    pub morphemes: u32,
    pub dim: u32,
    pub strategy: SegmentationStrategy,
}

impl ModelHeader {
    /// Rows of the input matrix.
    pub fn segment_rows(&self) -> usize {
        self.vocab_size as usize + self.strategy.active_buckets() as usize + self.morphemes as usize
    }
}

/// Writes `model` as `MEB1`:
///
/// ```text
/// "MEB1"
/// u32 vocab_size, buckets, morpheme_count, dim, strategy, n_min, n_max
///     strategy = kind code | 0x100 when the whole-word unit is included
/// vocabulary: u64 total_tokens, then per word (u32 len, bytes, u64 count)
/// lexicon:    per morpheme (u32 len, bytes); u32 entry count;
///             per entry (u32 len, bytes, u32 n, n × u32 morpheme id),
///             entries sorted by word
/// input matrix, output matrix: f32 row-major
/// ```
///
/// All integers and floats little-endian. `f64` models are narrowed to `f32`.
pub fn write_binary<F: Real, W: Write>(model: &EmbeddingModel<F>, mut w: W) -> Result<()> {
    let index = model.index();
    let s = index.strategy();
    let lex = index.lexicon();
    w.write_all(MODEL_MAGIC)?;
    let strategy = s.kind.code() | if s.include_word { INCLUDE_WORD_FLAG } else { 0 };
    for v in [
        model.vocab().len() as u32,
        s.buckets,
        lex.morpheme_count() as u32,
        model.dim() as u32,
        strategy,
        s.n_min,
        s.n_max,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    let vocab = model.vocab();
    w.write_all(&vocab.total_tokens().to_le_bytes())?;
    for (word, &count) in vocab.words().iter().zip(vocab.counts()) {
        write_str(&mut w, word)?;
        w.write_all(&count.to_le_bytes())?;
    }
    for m in lex.morphemes() {
        write_str(&mut w, m)?;
    }
    let entries = lex.sorted_entries();
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (word, ids) in entries {
        write_str(&mut w, word)?;
        w.write_all(&(ids.len() as u32).to_le_bytes())?;
        for id in ids {
            w.write_all(&id.to_le_bytes())?;
        }
    }
    write_floats(&mut w, model.input().as_slice())?;
    write_floats(&mut w, model.output().as_slice())?;
    Ok(())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn write_floats<F: Real, W: Write>(w: &mut W, xs: &[F]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 4);
    for x in xs {
        buf.extend_from_slice(&x.as_f32().to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn save_binary<F: Real>(model: &EmbeddingModel<F>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(f);
    write_binary(model, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Reader that tracks its byte offset so format errors can name it.
pub(crate) struct OffsetReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> OffsetReader<R> {
    pub(crate) fn new(inner: R) -> Self {
        OffsetReader { inner, offset: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.offset
    }

    pub(crate) fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.offset,
            message: message.into(),
        }
    }

    pub(crate) fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        let mut filled = 0;
        while filled < n {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => {
                    return Err(Error::Format {
                        offset: self.offset + filled as u64,
                        message: format!("truncated while reading {what}"),
                    })
                }
                Ok(k) => filled += k,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += n as u64;
        Ok(buf)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.bytes(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn string(&mut self, what: &str) -> Result<String> {
        let start = self.offset;
        let len = self.u32(what)? as usize;
        let b = self.bytes(len, what)?;
        String::from_utf8(b).map_err(|_| Error::Format {
            offset: start,
            message: format!("{what} is not UTF-8"),
        })
    }

    pub(crate) fn floats<F: Real>(&mut self, n: usize, what: &str) -> Result<Vec<F>> {
        let b = self.bytes(n * 4, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| F::widen(f32::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let m = self.bytes(4, "magic")?;
        if m != magic {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(&m), String::from_utf8_lossy(magic)),
            });
        }
        Ok(())
    }

    pub(crate) fn expect_eof(&mut self) -> Result<()> {
        let mut one = [0u8; 1];
        match self.inner.read(&mut one)? {
            0 => Ok(()),
            _ => Err(self.fail("trailing bytes after end of data")),
        }
    }
}

fn read_header<R: Read>(r: &mut OffsetReader<R>) -> Result<ModelHeader> {
    r.expect_magic(MODEL_MAGIC)?;
    let vocab_size = r.u32("vocab size")?;
    let buckets = r.u32("buckets")?;
    let morphemes = r.u32("morpheme count")?;
    let dim = r.u32("dim")?;
    let code_offset = r.offset();
    let code = r.u32("strategy")?;
    let n_min = r.u32("n_min")?;
    let n_max = r.u32("n_max")?;
    let kind = StrategyKind::from_code(code & 0xff).ok_or_else(|| Error::Format {
        offset: code_offset,
        message: format!("unknown strategy code {code}"),
    })?;
    let strategy = SegmentationStrategy {
        kind,
        n_min,
        n_max,
        buckets,
        include_word: code & INCLUDE_WORD_FLAG != 0,
    };
    strategy.validate().map_err(|e| Error::Format {
        offset: code_offset,
        message: e.to_string(),
    })?;
    Ok(ModelHeader {
        vocab_size,
        buckets,
        morphemes,
        dim,
        strategy,
    })
}

/// Reads only the fixed header of a binary model.
pub fn read_binary_header(path: impl AsRef<Path>) -> Result<ModelHeader> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::file(path, e))?;
    read_header(&mut OffsetReader::new(BufReader::new(f)))
}

pub fn read_binary<F: Real, R: Read>(reader: R) -> Result<EmbeddingModel<F>> {
    let mut r = OffsetReader::new(reader);
    let h = read_header(&mut r)?;
    let total = r.u64("total tokens")?;
    let mut words = Vec::with_capacity(h.vocab_size as usize);
    for _ in 0..h.vocab_size {
        let w = r.string("vocabulary word")?;
        let c = r.u64("word count")?;
        words.push((w, c));
    }
    let vocab = Vocabulary::from_counts(words, total).map_err(|e| r.fail(e.to_string()))?;
    let mut morphemes = Vec::with_capacity(h.morphemes as usize);
    for _ in 0..h.morphemes {
        morphemes.push(r.string("morpheme")?);
    }
    let n_entries = r.u32("lexicon entry count")?;
    let mut entries = Vec::new();
    for _ in 0..n_entries {
        let w = r.string("lexicon word")?;
        let n = r.u32("morpheme list length")?;
        let mut ids = Vec::with_capacity(n.min(1024) as usize);
        for _ in 0..n {
            ids.push(r.u32("morpheme id")?);
        }
        entries.push((w, ids));
    }
    let lexicon = MorphemeLexicon::from_parts(morphemes, entries).map_err(|e| r.fail(e.to_string()))?;
    let index = SubwordIndex::from_parts(h.vocab_size, h.strategy, lexicon);
    let dim = h.dim as usize;
    let rows = h.segment_rows();
    let input = Matrix::from_vec(rows, dim, r.floats(rows * dim, "input matrix")?);
    let out_rows = h.vocab_size as usize;
    let output = Matrix::from_vec(out_rows, dim, r.floats(out_rows * dim, "output matrix")?);
    r.expect_eof()?;
    EmbeddingModel::from_parts(vocab, index, input, output)
}

pub fn load_binary<F: Real>(path: impl AsRef<Path>) -> Result<EmbeddingModel<F>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::file(path, e))?;
    read_binary(BufReader::new(f))
}

/// True when the file starts with the binary model magic.
pub fn is_binary_model(path: impl AsRef<Path>) -> Result<bool> {
    let path = path.as_ref();
    let mut f = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut magic = [0u8; 4];
    match f.read_exact(&mut magic) {
        Ok(()) => Ok(&magic == MODEL_MAGIC),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Ok(false),
        Err(e) => Err(Error::file(path, e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocab;

    fn model_with_rows(kind: StrategyKind, rows: &[(u32, [f64; 2])]) -> EmbeddingModel<f64> {
        let vocab = build_vocab(["ab", "ab", "cd"], 10, 1).unwrap();
        let index = SubwordIndex::new(&vocab, SegmentationStrategy::new(kind).with_buckets(16), None).unwrap();
        let mut m = EmbeddingModel::zeros(vocab, index, 2);
        for &(r, v) in rows {
            m.input_mut().row_mut(r as usize).copy_from_slice(&v);
        }
        m
    }

    #[test]
    fn whole_word_oov_is_zero() {
        let m = model_with_rows(StrategyKind::WholeWord, &[(0, [1.0, 2.0])]);
        assert_eq!(compose_word_vector("zz", &m), vec![0.0, 0.0]);
        assert_eq!(compose_word_vector("ab", &m), vec![1.0, 2.0]);
    }

    #[test]
    fn composition_sums_segment_rows() {
        let mut m = model_with_rows(StrategyKind::NGrams, &[]);
        let segs = m.segments("ab");
        // "ab" gets its word unit and the n-grams "<ab", "ab>", "<ab>"
        assert_eq!(segs.len(), 4);
        m.input_mut().row_mut(segs[0] as usize).copy_from_slice(&[1.0, 2.0]);
        m.input_mut().row_mut(segs[1] as usize).copy_from_slice(&[3.0, 4.0]);
        assert_eq!(compose_word_vector("ab", &m), vec![4.0, 6.0]);
    }

    #[test]
    fn ngram_composition_is_sensitive_to_each_row() {
        let m = model_with_rows(StrategyKind::NGrams, &[]);
        let base = compose_word_vector("ab", &m);
        for s in m.segments("ab") {
            let mut m2 = m.clone();
            m2.input_mut().row_mut(s as usize)[0] += 0.5;
            assert_ne!(compose_word_vector("ab", &m2), base);
        }
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn nearest_neighbor_examples() {
        let store = WordVectorStore::new(
            vec!["x".into(), "y".into(), "z".into()],
            Matrix::from_rows(&[vec![1.0f64, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]),
        )
        .unwrap();
        let nn = store.nearest_to_vector(&[1.0, 0.0], 3, None);
        assert_eq!(nn[0], ("x".to_string(), 1.0));
        assert!((nn[1].1 - 0.7071).abs() < 1e-4 && nn[1].0 == "z");
        assert_eq!(nn[2], ("y".to_string(), 0.0));
        let nn = store.nearest_neighbors("x", 1);
        assert_eq!(nn[0].0, "z");
    }

    #[test]
    fn two_word_store_returns_other_word() {
        let store = WordVectorStore::new(
            vec!["a".into(), "b".into()],
            Matrix::from_rows(&[vec![1.0f32, 0.5], vec![0.2, 1.0]]),
        )
        .unwrap();
        let nn = store.nearest_neighbors("a", 1);
        assert_eq!(nn.len(), 1);
        assert_eq!(nn[0].0, "b");
    }

    #[test]
    fn text_format_examples() {
        let empty = WordVectorStore::<f32>::new(vec![], Matrix::zeros(0, 3)).unwrap();
        let mut buf = Vec::new();
        empty.write_text(&mut buf).unwrap();
        assert_eq!(buf, b"0 3\n");

        let one = WordVectorStore::new(vec!["w".into()], Matrix::from_rows(&[vec![1.0f32, 2.0]])).unwrap();
        let mut buf = Vec::new();
        one.write_text(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1 2\nw 1.000000 2.000000\n");
    }

    #[test]
    fn text_dimension_mismatch_names_line() {
        let text = "2 2\na 1 2\nb 1 2 3\n";
        match WordVectorStore::<f32>::read_text(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(WordVectorStore::<f32>::read_text("3 2\na 1 2\n".as_bytes()).is_err());
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let vocab = build_vocab(["a", "b", "b"], 10, 1).unwrap();
        let lex = MorphemeLexicon::read("b\tb x\n".as_bytes()).unwrap();
        let index = SubwordIndex::new(&vocab, SegmentationStrategy::new(StrategyKind::MorphNGrams).with_buckets(7), Some(lex)).unwrap();
        let m = EmbeddingModel::<f32>::initialized(vocab, index, 3, 9);
        let mut buf = Vec::new();
        write_binary(&m, &mut buf).unwrap();
        let back: EmbeddingModel<f32> = read_binary(&buf[..]).unwrap();
        assert_eq!(back, m);
        let mut again = Vec::new();
        write_binary(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn binary_errors_name_offsets() {
        let m = model_with_rows(StrategyKind::NGrams, &[(0, [1.0, 2.0])]);
        let mut buf = Vec::new();
        write_binary(&m, &mut buf).unwrap();
        let truncated = &buf[..buf.len() - 3];
        match read_binary::<f32, _>(truncated) {
            Err(Error::Format { offset, message }) => {
                assert!(offset > 32, "{offset}");
                assert!(message.contains("output matrix"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_binary::<f32, _>(&bad[..]), Err(Error::Format { offset: 0, .. })));
    }
}
