//! Skip-gram negative sampling over sub-word compositional centers.
//!
//! The center word is represented by the sum of its segment rows in the
//! input matrix; context and noise words use rows of the output matrix.
//! Per pair the loss is
//!
//! ```text
//! -log σ(h·v_ctx) - Σ_neg log σ(-h·v_neg),   h = Σ_{s ∈ S(center)} v_s
//! ```

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{EncodedCorpus, NoiseTable, Vocabulary};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::num::{axpy, dot, log_sigmoid, sigmoid, AtomicReal, Real};
use crate::subword::SubwordIndex;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub lr0: f64,
    pub lr_min: f64,
    pub subsample: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Worker threads. One worker is bit-reproducible for a fixed seed.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 100,
            window: 5,
            negatives: 5,
            lr0: 0.025,
            lr_min: 1e-4,
            subsample: 1e-4,
            epochs: 5,
            seed: 1,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.dim < 1 {
            return bad("dim must be >= 1");
        }
        if self.window < 1 {
            return bad("window must be >= 1");
        }
        if self.negatives < 1 {
            return bad("negatives must be >= 1");
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr0) {
            return bad("need 0 < lr_min <= lr0");
        }
        if !(self.subsample > 0.0) {
            return bad("subsample threshold must be > 0");
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if self.threads < 1 {
            return bad("threads must be >= 1");
        }
        Ok(())
    }
}

/// Linearly decayed learning rate with a floor.
pub fn lr_at(progress: f64, config: &TrainConfig) -> f64 {
    (config.lr0 * (1.0 - progress)).max(config.lr_min)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel<F> {
    vocab: Vocabulary,
    index: SubwordIndex,
    input: Matrix<F>,
    output: Matrix<F>,
}

impl<F: Real> EmbeddingModel<F> {
    /// Zero-initialized model.
    pub fn zeros(vocab: Vocabulary, index: SubwordIndex, dim: usize) -> Self {
        let rows = index.space().total();
        let output = Matrix::zeros(vocab.len(), dim);
        EmbeddingModel {
            vocab,
            index,
            input: Matrix::zeros(rows, dim),
            output,
        }
    }

    /// Input rows uniform in `[-1/(2·dim), 1/(2·dim)]`, output rows zero.
    pub fn initialized(vocab: Vocabulary, index: SubwordIndex, dim: usize, seed: u64) -> Self {
        let mut m = Self::zeros(vocab, index, dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = 0.5 / dim as f64;
        for x in m.input.as_mut_slice() {
            *x = F::lit(rng.gen_range(-half..=half));
        }
        m
    }

    pub fn from_parts(
        vocab: Vocabulary,
        index: SubwordIndex,
        input: Matrix<F>,
        output: Matrix<F>,
    ) -> Result<Self> {
        if input.rows() != index.space().total() || output.rows() != vocab.len() {
            return Err(Error::Shape(format!(
                "matrices {}x{} / {}x{} do not match segment space {} / vocab {}",
                input.rows(),
                input.cols(),
                output.rows(),
                output.cols(),
                index.space().total(),
                vocab.len()
            )));
        }
        if input.cols() != output.cols() {
            return Err(Error::Shape("input and output dims differ".into()));
        }
        Ok(EmbeddingModel {
            vocab,
            index,
            input,
            output,
        })
    }

    pub fn dim(&self) -> usize {
        self.input.cols()
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn index(&self) -> &SubwordIndex {
        &self.index
    }

    pub fn input(&self) -> &Matrix<F> {
        &self.input
    }

    pub fn output(&self) -> &Matrix<F> {
        &self.output
    }

    pub fn input_mut(&mut self) -> &mut Matrix<F> {
        &mut self.input
    }

    pub fn output_mut(&mut self) -> &mut Matrix<F> {
        &mut self.output
    }

    /// Segment ids of `word`, looking up its vocabulary id.
    pub fn segments(&self, word: &str) -> Vec<u32> {
        self.index.segments_for(word, self.vocab.id(word))
    }

    pub fn is_finite(&self) -> bool {
        self.input.is_finite() && self.output.is_finite()
    }

    fn check_ids(&self, segments: &[u32], words: impl IntoIterator<Item = u32>) -> Result<()> {
        let seg_size = self.input.rows();
        if let Some(&s) = segments.iter().find(|&&s| s as usize >= seg_size) {
            return Err(Error::OutOfRange {
                id: s as usize,
                size: seg_size,
            });
        }
        let vsize = self.output.rows();
        for w in words {
            if w as usize >= vsize {
                return Err(Error::OutOfRange {
                    id: w as usize,
                    size: vsize,
                });
            }
        }
        Ok(())
    }
}

/// `(Σ_{s∈S} input[s]) · output[context]`
pub fn score<F: Real>(segments: &[u32], context: u32, model: &EmbeddingModel<F>) -> Result<F> {
    model.check_ids(segments, [context])?;
    let mut h = vec![F::zero(); model.dim()];
    for &s in segments {
        axpy(F::one(), model.input.row(s as usize), &mut h);
    }
    Ok(dot(&h, model.output.row(context as usize)))
}

/// Pair loss before any update.
pub fn pair_loss<F: Real>(
    segments: &[u32],
    context: u32,
    negatives: &[u32],
    model: &EmbeddingModel<F>,
) -> Result<F> {
    let mut loss = -log_sigmoid(score(segments, context, model)?);
    for &n in negatives {
        loss -= log_sigmoid(-score(segments, n, model)?);
    }
    Ok(loss)
}

/// Gradients of [`pair_loss`] with respect to the touched rows.
#[derive(Clone, Debug, PartialEq)]
pub struct PairGradient<F> {
    /// Shared by every center segment row.
    pub segment: Vec<F>,
    /// `(word id, gradient)` for the context followed by each negative.
    pub outputs: Vec<(u32, Vec<F>)>,
    pub loss: F,
}

/// Exact gradient of the pair loss. Repeated output ids each get an entry.
pub fn pair_gradient<F: Real>(
    segments: &[u32],
    context: u32,
    negatives: &[u32],
    model: &EmbeddingModel<F>,
) -> Result<PairGradient<F>> {
    model.check_ids(segments, std::iter::once(context).chain(negatives.iter().copied()))?;
    let mut scratch = Scratch::new(model.dim());
    let loss = forward_pair(&model.input, &model.output, segments, context, negatives, &mut scratch);
    let mut outputs = Vec::with_capacity(scratch.coeffs.len());
    for &(w, g) in &scratch.coeffs {
        outputs.push((w, scratch.h.iter().map(|&x| g * x).collect()));
    }
    Ok(PairGradient {
        segment: scratch.grad_h.clone(),
        outputs,
        loss,
    })
}

/// One SGD step on a (center, context, negatives) pair. Returns the pair
/// loss evaluated before the update.
pub fn sgns_step<F: Real>(
    segments: &[u32],
    context: u32,
    negatives: &[u32],
    lr: F,
    model: &mut EmbeddingModel<F>,
) -> Result<F> {
    model.check_ids(segments, std::iter::once(context).chain(negatives.iter().copied()))?;
    let mut scratch = Scratch::new(model.dim());
    let EmbeddingModel { input, output, .. } = model;
    Ok(step_rows(input, output, segments, context, negatives, lr, &mut scratch))
}

/// Row access shared by the plain matrices and the lock-free worker view.
pub(crate) trait RowStore<F> {
    fn load(&self, row: usize, out: &mut [F]);
    fn add_scaled(&mut self, row: usize, alpha: F, x: &[F]);
}

impl<F: Real> RowStore<F> for Matrix<F> {
    fn load(&self, row: usize, out: &mut [F]) {
        out.copy_from_slice(self.row(row));
    }

    fn add_scaled(&mut self, row: usize, alpha: F, x: &[F]) {
        axpy(alpha, x, self.row_mut(row));
    }
}

/// Matrix whose cells can be updated concurrently without locks.
pub(crate) struct SharedMatrix<F: Real> {
    cols: usize,
    cells: Vec<F::Atomic>,
}

impl<F: Real> SharedMatrix<F> {
    fn from_matrix(m: &Matrix<F>) -> Self {
        SharedMatrix {
            cols: m.cols(),
            cells: m.as_slice().iter().map(|&x| F::Atomic::new(x)).collect(),
        }
    }

    fn to_matrix(&self) -> Matrix<F> {
        let rows = if self.cols == 0 { 0 } else { self.cells.len() / self.cols };
        Matrix::from_vec(rows, self.cols, self.cells.iter().map(|c| c.get()).collect())
    }
}

impl<F: Real> RowStore<F> for &SharedMatrix<F> {
    fn load(&self, row: usize, out: &mut [F]) {
        let base = row * self.cols;
        for (o, c) in out.iter_mut().zip(&self.cells[base..base + self.cols]) {
            *o = c.get();
        }
    }

    fn add_scaled(&mut self, row: usize, alpha: F, x: &[F]) {
        let base = row * self.cols;
        for (c, &xi) in self.cells[base..base + self.cols].iter().zip(x) {
            c.add(alpha * xi);
        }
    }
}

pub(crate) struct Scratch<F> {
    h: Vec<F>,
    grad_h: Vec<F>,
    row: Vec<F>,
    coeffs: Vec<(u32, F)>,
}

impl<F: Real> Scratch<F> {
    pub(crate) fn new(dim: usize) -> Self {
        Scratch {
            h: vec![F::zero(); dim],
            grad_h: vec![F::zero(); dim],
            row: vec![F::zero(); dim],
            coeffs: Vec::new(),
        }
    }
}

/// Computes `h`, the loss, `∂L/∂h` and the per-output coefficients
/// `σ(s) - label` into `scratch`.
fn forward_pair<F: Real, I: RowStore<F>, O: RowStore<F>>(
    input: &I,
    output: &O,
    segments: &[u32],
    context: u32,
    negatives: &[u32],
    scratch: &mut Scratch<F>,
) -> F {
    let Scratch { h, grad_h, row, coeffs } = scratch;
    h.iter_mut().for_each(|x| *x = F::zero());
    grad_h.iter_mut().for_each(|x| *x = F::zero());
    coeffs.clear();
    for &s in segments {
        input.load(s as usize, row);
        axpy(F::one(), row, h);
    }
    let mut loss = F::zero();
    let targets = std::iter::once((context, true)).chain(negatives.iter().map(|&n| (n, false)));
    for (w, positive) in targets {
        output.load(w as usize, row);
        let s = dot(h, row);
        let g = if positive {
            loss -= log_sigmoid(s);
            sigmoid(s) - F::one()
        } else {
            loss -= log_sigmoid(-s);
            sigmoid(s)
        };
        axpy(g, row, grad_h);
        coeffs.push((w, g));
    }
    loss
}

fn step_rows<F: Real, I: RowStore<F>, O: RowStore<F>>(
    input: &mut I,
    output: &mut O,
    segments: &[u32],
    context: u32,
    negatives: &[u32],
    lr: F,
    scratch: &mut Scratch<F>,
) -> F {
    let loss = forward_pair(input, output, segments, context, negatives, scratch);
    for &(w, g) in &scratch.coeffs {
        output.add_scaled(w as usize, -lr * g, &scratch.h);
    }
    for &s in segments {
        input.add_scaled(s as usize, -lr, &scratch.grad_h);
    }
    loss
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainStats {
    /// Corpus tokens that survived sub-sampling and served as centers.
    pub tokens_processed: u64,
    pub pairs: u64,
    /// Mean pair loss for each epoch.
    pub epoch_loss: Vec<f64>,
    /// Tokens dropped before training because they are not in the vocabulary.
    pub oov_skipped: u64,
}

#[derive(Clone, Debug)]
pub struct Trained<F> {
    pub model: EmbeddingModel<F>,
    pub stats: TrainStats,
}

/// Trains a freshly initialized model.
pub fn train<F: Real>(
    corpus: &EncodedCorpus,
    vocab: &Vocabulary,
    noise: &NoiseTable,
    index: SubwordIndex,
    config: &TrainConfig,
) -> Result<Trained<F>> {
    config.validate()?;
    let model = EmbeddingModel::initialized(vocab.clone(), index, config.dim, config.seed);
    train_model(model, corpus, noise, config)
}

/// Continues training `model` on `corpus`.
pub fn train_model<F: Real>(
    model: EmbeddingModel<F>,
    corpus: &EncodedCorpus,
    noise: &NoiseTable,
    config: &TrainConfig,
) -> Result<Trained<F>> {
    config.validate()?;
    if config.dim != model.dim() {
        return Err(Error::Config(format!(
            "config dim {} differs from model dim {}",
            config.dim,
            model.dim()
        )));
    }
    if noise.len() != model.vocab.len() {
        return Err(Error::Config("noise table does not match vocabulary".into()));
    }
    let vsize = model.vocab.len() as u32;
    if let Some(bad) = corpus.sentences.iter().flatten().find(|&&id| id >= vsize) {
        return Err(Error::OutOfRange {
            id: *bad as usize,
            size: vsize as usize,
        });
    }

    let segments: Vec<Vec<u32>> = model
        .vocab
        .words()
        .iter()
        .enumerate()
        .map(|(i, w)| model.index.segments_for(w, Some(i as u32)))
        .collect();
    let keep = model.vocab.keep_probabilities(config.subsample);

    let input = SharedMatrix::from_matrix(&model.input);
    let output = SharedMatrix::from_matrix(&model.output);
    let total_work = (corpus.token_count() * config.epochs as u64).max(1);
    let processed = AtomicU64::new(0);

    let workers = config.threads.min(corpus.sentences.len()).max(1);
    let chunk = corpus.sentences.len().div_ceil(workers).max(1);
    let shards: Vec<&[Vec<u32>]> = corpus.sentences.chunks(chunk).collect();

    let mut stats = TrainStats {
        oov_skipped: corpus.oov_tokens,
        ..TrainStats::default()
    };
    for epoch in 0..config.epochs {
        let ctx = WorkerContext {
            input: &input,
            output: &output,
            segments: &segments,
            keep: &keep,
            noise,
            config,
            processed: &processed,
            total_work,
        };
        let results: Vec<WorkerTotals> = std::thread::scope(|scope| {
            let handles: Vec<_> = shards
                .iter()
                .enumerate()
                .map(|(w, shard)| {
                    let ctx = &ctx;
                    let seed = worker_seed(config.seed, epoch, w);
                    scope.spawn(move || ctx.run(shard, seed))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        let mut loss = 0.0;
        let mut pairs = 0;
        for r in &results {
            loss += r.loss;
            pairs += r.pairs;
            stats.tokens_processed += r.tokens;
        }
        stats.pairs += pairs;
        stats.epoch_loss.push(if pairs > 0 { loss / pairs as f64 } else { 0.0 });
        log::info!("epoch {}: mean pair loss {:.5} over {pairs} pairs", epoch + 1, stats.epoch_loss[epoch]);

        let snapshot = input.to_matrix();
        if !snapshot.is_finite() || !output.to_matrix().is_finite() {
            return Err(Error::NonFinite(format!("epoch {}", epoch + 1)));
        }
    }

    let EmbeddingModel { vocab, index, .. } = model;
    let model = EmbeddingModel {
        vocab,
        index,
        input: input.to_matrix(),
        output: output.to_matrix(),
    };
    Ok(Trained { model, stats })
}

fn worker_seed(seed: u64, epoch: usize, worker: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (worker as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

struct WorkerContext<'a, F: Real> {
    input: &'a SharedMatrix<F>,
    output: &'a SharedMatrix<F>,
    segments: &'a [Vec<u32>],
    keep: &'a [f64],
    noise: &'a NoiseTable,
    config: &'a TrainConfig,
    processed: &'a AtomicU64,
    total_work: u64,
}

#[derive(Default)]
struct WorkerTotals {
    loss: f64,
    pairs: u64,
    tokens: u64,
}

const PROGRESS_BATCH: u64 = 10_000;

impl<F: Real> WorkerContext<'_, F> {
    fn run(&self, shard: &[Vec<u32>], seed: u64) -> WorkerTotals {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut input = self.input;
        let mut output = self.output;
        let mut scratch = Scratch::new(self.config.dim);
        let mut negatives = Vec::with_capacity(self.config.negatives);
        let mut kept = Vec::new();
        let mut totals = WorkerTotals::default();
        let mut local = 0u64;
        let mut lr = F::lit(lr_at(
            self.processed.load(Ordering::Relaxed) as f64 / self.total_work as f64,
            self.config,
        ));

        for sentence in shard {
            kept.clear();
            kept.extend(sentence.iter().copied().filter(|&w| {
                let p = self.keep[w as usize];
                p >= 1.0 || rng.gen::<f64>() < p
            }));
            local += sentence.len() as u64;
            if local >= PROGRESS_BATCH {
                let done = self.processed.fetch_add(local, Ordering::Relaxed) + local;
                local = 0;
                lr = F::lit(lr_at(done as f64 / self.total_work as f64, self.config));
            }
            for (pos, &center) in kept.iter().enumerate() {
                totals.tokens += 1;
                let b = rng.gen_range(1..=self.config.window);
                let lo = pos.saturating_sub(b);
                let hi = (pos + b).min(kept.len() - 1);
                let segs = &self.segments[center as usize];
                for (cpos, &context) in kept.iter().enumerate().take(hi + 1).skip(lo) {
                    if cpos == pos {
                        continue;
                    }
                    negatives.clear();
                    for _ in 0..self.config.negatives {
                        let n = self.noise.sample(&mut rng);
                        if n != context {
                            negatives.push(n);
                        }
                    }
                    let loss = step_rows(&mut input, &mut output, segs, context, &negatives, lr, &mut scratch);
                    totals.loss += loss.as_f64();
                    totals.pairs += 1;
                }
            }
        }
        self.processed.fetch_add(local, Ordering::Relaxed);
        totals
    }
}
