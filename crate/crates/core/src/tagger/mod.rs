//! Token classifier: embedding lookup, same-padded 1-D convolution + ReLU,
//! dense + ReLU, linear emission projection and a linear-chain CRF.

pub mod crf;
mod io;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::{self, conll::MetricKind, Sentence, TagDataset};
use crate::matrix::Matrix;
use crate::num::Real;

pub use crf::{crf_log_likelihood, crf_viterbi, Crf};
pub use io::{load_tagger, read_tagger, save_tagger, write_tagger, TAGGER_MAGIC};

/// Source of per-token input vectors.
pub trait TokenEmbedder<F: Real>: Sync {
    fn dim(&self) -> usize;

    /// One row per token of `sentence`.
    fn embed(&self, sentence: &Sentence) -> Result<Matrix<F>>;

    /// Type-level vector of a word. `None` for contextual sources, which
    /// cannot back a trainable embedding table.
    fn word_vector(&self, word: &str) -> Option<Vec<F>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaggerConfig {
    pub conv_width: usize,
    pub conv_channels: usize,
    pub dense_units: usize,
    pub lr: f64,
    pub epochs: usize,
    pub freeze_embeddings: bool,
    pub seed: u64,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            conv_width: 3,
            conv_channels: 128,
            dense_units: 128,
            lr: 0.01,
            epochs: 20,
            freeze_embeddings: true,
            seed: 1,
        }
    }
}

impl TaggerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_width % 2 == 0 {
            return Err(Error::Config("conv_width must be odd".into()));
        }
        if self.conv_channels == 0 || self.dense_units == 0 || self.epochs == 0 {
            return Err(Error::Config("layer sizes and epochs must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be > 0".into()));
        }
        Ok(())
    }
}

/// Trainable parameters, also used as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct TaggerParams<F> {
    /// `[width][dim][channels]`
    pub conv_w: Vec<F>,
    pub conv_b: Vec<F>,
    /// `[channels][units]`
    pub dense_w: Vec<F>,
    pub dense_b: Vec<F>,
    /// `[units][tags]`
    pub proj_w: Vec<F>,
    pub proj_b: Vec<F>,
    /// `[from][to]`
    pub transitions: Matrix<F>,
    pub start: Vec<F>,
    pub stop: Vec<F>,
}

pub const PARAM_NAMES: [&str; 9] = [
    "conv_w", "conv_b", "dense_w", "dense_b", "proj_w", "proj_b", "transitions", "start", "stop",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub dim: usize,
    pub width: usize,
    pub channels: usize,
    pub units: usize,
    pub tags: usize,
}

impl<F: Real> TaggerParams<F> {
    pub fn zeros(s: Shape) -> Self {
        TaggerParams {
            conv_w: vec![F::zero(); s.width * s.dim * s.channels],
            conv_b: vec![F::zero(); s.channels],
            dense_w: vec![F::zero(); s.channels * s.units],
            dense_b: vec![F::zero(); s.units],
            proj_w: vec![F::zero(); s.units * s.tags],
            proj_b: vec![F::zero(); s.tags],
            transitions: Matrix::zeros(s.tags, s.tags),
            start: vec![F::zero(); s.tags],
            stop: vec![F::zero(); s.tags],
        }
    }

    /// Glorot-uniform weights, zero biases and CRF scores.
    pub fn random(s: Shape, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(s);
        let mut fill = |v: &mut [F], fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for x in v {
                *x = F::lit(rng.gen_range(-a..a));
            }
        };
        fill(&mut p.conv_w, s.width * s.dim, s.channels);
        fill(&mut p.dense_w, s.channels, s.units);
        fill(&mut p.proj_w, s.units, s.tags);
        p
    }

    pub fn slices(&self) -> [&[F]; 9] {
        [
            &self.conv_w,
            &self.conv_b,
            &self.dense_w,
            &self.dense_b,
            &self.proj_w,
            &self.proj_b,
            self.transitions.as_slice(),
            &self.start,
            &self.stop,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [F]; 9] {
        [
            &mut self.conv_w,
            &mut self.conv_b,
            &mut self.dense_w,
            &mut self.dense_b,
            &mut self.proj_w,
            &mut self.proj_b,
            self.transitions.as_mut_slice(),
            &mut self.start,
            &mut self.stop,
        ]
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: F, other: &TaggerParams<F>) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            crate::num::axpy(alpha, src, dst);
        }
    }

    pub fn norm(&self) -> F {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|&x| x * x)
            .sum::<F>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }
}

/// Word-level rows learned when embeddings are not frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct TunedEmbeddings<F> {
    pub words: Vec<String>,
    pub table: Matrix<F>,
    index: HashMap<String, usize>,
}

impl<F: Real> TunedEmbeddings<F> {
    pub fn new(words: Vec<String>, table: Matrix<F>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        TunedEmbeddings { words, table, index }
    }

    pub fn row_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaggerModel<F> {
    pub config: TaggerConfig,
    pub dim: usize,
    pub tags: Vec<String>,
    pub params: TaggerParams<F>,
    pub tuned: Option<TunedEmbeddings<F>>,
}

impl<F: Real> TaggerModel<F> {
    pub fn new(config: TaggerConfig, dim: usize, tags: Vec<String>) -> Result<Self> {
        config.validate()?;
        if tags.is_empty() || dim == 0 {
            return Err(Error::Config("need at least one tag and dim >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let shape = Shape {
            dim,
            width: config.conv_width,
            channels: config.conv_channels,
            units: config.dense_units,
            tags: tags.len(),
        };
        let params = TaggerParams::random(shape, &mut rng);
        Ok(TaggerModel {
            config,
            dim,
            tags,
            params,
            tuned: None,
        })
    }

    pub fn shape(&self) -> Shape {
        Shape {
            dim: self.dim,
            width: self.config.conv_width,
            channels: self.config.conv_channels,
            units: self.config.dense_units,
            tags: self.tags.len(),
        }
    }

    pub fn tag_count(&self) -> usize {
        self.tags.len()
    }

    pub fn crf(&self) -> Crf<'_, F> {
        Crf::new(&self.params.transitions, &self.params.start, &self.params.stop)
    }

    /// Input rows for a sentence: tuned rows where available, else the embedder.
    pub fn inputs(&self, sentence: &Sentence, embedder: &dyn TokenEmbedder<F>) -> Result<Matrix<F>> {
        let mut x = embedder.embed(sentence)?;
        if x.rows() != sentence.len() || x.cols() != self.dim {
            return Err(Error::Shape(format!(
                "embedder gave {}x{} for a {}-token sentence, model dim {}",
                x.rows(),
                x.cols(),
                sentence.len(),
                self.dim
            )));
        }
        if let Some(tuned) = &self.tuned {
            for (t, tok) in sentence.tokens.iter().enumerate() {
                if let Some(r) = tuned.row_of(tok) {
                    x.row_mut(t).copy_from_slice(tuned.table.row(r));
                }
            }
        }
        Ok(x)
    }
}

/// Embedding rows, gold tag ids and mask of one sentence.
#[derive(Clone, Debug)]
pub struct SentenceBatch<F> {
    pub embeddings: Matrix<F>,
    pub gold: Vec<usize>,
    pub mask: Vec<bool>,
}

impl<F: Real> SentenceBatch<F> {
    pub fn new(embeddings: Matrix<F>, gold: Vec<usize>, mask: Vec<bool>) -> Result<Self> {
        if embeddings.rows() != gold.len() || gold.len() != mask.len() {
            return Err(Error::Shape(format!(
                "{} rows, {} tags, {} mask flags",
                embeddings.rows(),
                gold.len(),
                mask.len()
            )));
        }
        Ok(SentenceBatch {
            embeddings,
            gold,
            mask,
        })
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Activations<F> {
    pub conv_pre: Matrix<F>,
    pub conv: Matrix<F>,
    pub dense_pre: Matrix<F>,
    pub dense: Matrix<F>,
    pub emissions: Matrix<F>,
}

fn relu<F: Real>(m: &Matrix<F>) -> Matrix<F> {
    let mut out = m.clone();
    out.as_mut_slice().iter_mut().for_each(|x| *x = x.max(F::zero()));
    out
}

/// `out[t] = b + x[t] · W` for a row-major `W` of `in × out`.
fn affine<F: Real>(x: &Matrix<F>, w: &[F], b: &[F]) -> Matrix<F> {
    let (n_in, n_out) = (x.cols(), b.len());
    let mut out = Matrix::zeros(x.rows(), n_out);
    for t in 0..x.rows() {
        let row = out.row_mut(t);
        row.copy_from_slice(b);
        for (i, &xi) in x.row(t).iter().enumerate() {
            if xi != F::zero() {
                crate::num::axpy(xi, &w[i * n_out..(i + 1) * n_out], row);
            }
        }
    }
    debug_assert_eq!(w.len(), n_in * n_out);
    out
}

pub fn forward<F: Real>(embeddings: &Matrix<F>, model: &TaggerModel<F>) -> Result<Activations<F>> {
    let s = model.shape();
    if embeddings.cols() != s.dim {
        return Err(Error::Shape(format!("embedding dim {} vs model dim {}", embeddings.cols(), s.dim)));
    }
    if embeddings.rows() == 0 {
        return Err(Error::EmptySentence);
    }
    let p = &model.params;
    let len = embeddings.rows();
    let half = s.width / 2;
    let mut conv_pre = Matrix::zeros(len, s.channels);
    for t in 0..len {
        let row = conv_pre.row_mut(t);
        row.copy_from_slice(&p.conv_b);
        for o in 0..s.width {
            let Some(src) = (t + o).checked_sub(half).filter(|&i| i < len) else {
                continue;
            };
            for (d, &x) in embeddings.row(src).iter().enumerate() {
                if x != F::zero() {
                    let base = (o * s.dim + d) * s.channels;
                    crate::num::axpy(x, &p.conv_w[base..base + s.channels], row);
                }
            }
        }
    }
    let conv = relu(&conv_pre);
    let dense_pre = affine(&conv, &p.dense_w, &p.dense_b);
    let dense = relu(&dense_pre);
    let emissions = affine(&dense, &p.proj_w, &p.proj_b);
    Ok(Activations {
        conv_pre,
        conv,
        dense_pre,
        dense,
        emissions,
    })
}

/// CRF negative log-likelihood of one sentence.
pub fn sentence_loss<F: Real>(batch: &SentenceBatch<F>, model: &TaggerModel<F>) -> Result<F> {
    let act = forward(&batch.embeddings, model)?;
    let p = &model.params;
    crf::crf_nll_and_gradient(&act.emissions, &p.transitions, &p.start, &p.stop, &batch.gold, &batch.mask, false)
        .map(|(nll, _)| nll)
}

/// Loss and gradients of one sentence.
#[derive(Clone, Debug)]
pub struct Gradients<F> {
    pub loss: F,
    pub params: TaggerParams<F>,
    /// `None` when embeddings are frozen.
    pub embeddings: Option<Matrix<F>>,
}

/// Exact gradients of the CRF negative log-likelihood.
pub fn backward<F: Real>(batch: &SentenceBatch<F>, model: &TaggerModel<F>, freeze: bool) -> Result<Gradients<F>> {
    let act = forward(&batch.embeddings, model)?;
    let p = &model.params;
    let (nll, g) = crf::crf_nll_and_gradient(
        &act.emissions,
        &p.transitions,
        &p.start,
        &p.stop,
        &batch.gold,
        &batch.mask,
        true,
    )?;
    let g = g.expect("gradient requested");
    let s = model.shape();
    let len = batch.embeddings.rows();
    let mut grads = TaggerParams::zeros(s);
    grads.transitions = g.transitions;
    grads.start = g.start;
    grads.stop = g.stop;

    // projection
    let de = &g.emissions;
    let mut d_dense = Matrix::zeros(len, s.units);
    for t in 0..len {
        let e_row = de.row(t);
        crate::num::axpy(F::one(), e_row, &mut grads.proj_b);
        for u in 0..s.units {
            let h = act.dense.get(t, u);
            let w = &p.proj_w[u * s.tags..(u + 1) * s.tags];
            if h != F::zero() {
                crate::num::axpy(h, e_row, &mut grads.proj_w[u * s.tags..(u + 1) * s.tags]);
            }
            d_dense.set(t, u, crate::num::dot(w, e_row));
        }
    }
    relu_backward(&mut d_dense, &act.dense_pre);

    // dense
    let mut d_conv = Matrix::zeros(len, s.channels);
    for t in 0..len {
        let d_row = d_dense.row(t);
        crate::num::axpy(F::one(), d_row, &mut grads.dense_b);
        for c in 0..s.channels {
            let h = act.conv.get(t, c);
            let w = &p.dense_w[c * s.units..(c + 1) * s.units];
            if h != F::zero() {
                crate::num::axpy(h, d_row, &mut grads.dense_w[c * s.units..(c + 1) * s.units]);
            }
            d_conv.set(t, c, crate::num::dot(w, d_row));
        }
    }
    relu_backward(&mut d_conv, &act.conv_pre);

    // convolution
    let half = s.width / 2;
    let mut d_x = if freeze { None } else { Some(Matrix::zeros(len, s.dim)) };
    for t in 0..len {
        let d_row = d_conv.row(t);
        crate::num::axpy(F::one(), d_row, &mut grads.conv_b);
        for o in 0..s.width {
            let Some(src) = (t + o).checked_sub(half).filter(|&i| i < len) else {
                continue;
            };
            for d in 0..s.dim {
                let base = (o * s.dim + d) * s.channels;
                let x = batch.embeddings.get(src, d);
                if x != F::zero() {
                    crate::num::axpy(x, d_row, &mut grads.conv_w[base..base + s.channels]);
                }
                if let Some(dx) = d_x.as_mut() {
                    let v = crate::num::dot(&p.conv_w[base..base + s.channels], d_row);
                    let cur = dx.get(src, d);
                    dx.set(src, d, cur + v);
                }
            }
        }
    }
    Ok(Gradients {
        loss: nll,
        params: grads,
        embeddings: d_x,
    })
}

fn relu_backward<F: Real>(grad: &mut Matrix<F>, pre: &Matrix<F>) {
    for (g, &z) in grad.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        if z <= F::zero() {
            *g = F::zero();
        }
    }
}

/// Decoded tags of one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub tags: Vec<String>,
    /// Positions excluded from scoring (mask off).
    pub excluded: Vec<bool>,
}

pub fn decode<F: Real>(embeddings: &Matrix<F>, model: &TaggerModel<F>) -> Result<Vec<usize>> {
    let act = forward(embeddings, model)?;
    model.crf().viterbi(&act.emissions)
}

pub fn predict<F: Real>(
    sentence: &Sentence,
    embedder: &dyn TokenEmbedder<F>,
    model: &TaggerModel<F>,
) -> Result<Prediction> {
    let x = model.inputs(sentence, embedder)?;
    let path = decode(&x, model)?;
    Ok(Prediction {
        tags: path.into_iter().map(|i| model.tags[i].clone()).collect(),
        excluded: sentence.mask.iter().map(|&m| !m).collect(),
    })
}

pub fn predict_dataset<F: Real>(
    dataset: &TagDataset,
    embedder: &dyn TokenEmbedder<F>,
    model: &TaggerModel<F>,
) -> Result<Vec<Vec<String>>> {
    dataset
        .sentences
        .iter()
        .map(|s| predict(s, embedder, model).map(|p| p.tags))
        .collect()
}

/// Task metric of `model` on `dataset`.
pub fn evaluate<F: Real>(
    dataset: &TagDataset,
    embedder: &dyn TokenEmbedder<F>,
    model: &TaggerModel<F>,
) -> Result<f64> {
    let pred = predict_dataset(dataset, embedder, model)?;
    eval::task_metric(dataset, &pred)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Task metric on the selection split.
    pub dev_metric: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedTagger<F> {
    pub model: TaggerModel<F>,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub metric: MetricKind,
}

/// Per-sentence SGD; the returned model is the best epoch on `dev`
/// (on `train` when no dev split is given).
pub fn train_tagger<F: Real>(
    train: &TagDataset,
    dev: Option<&TagDataset>,
    embedder: &dyn TokenEmbedder<F>,
    config: &TaggerConfig,
) -> Result<TrainedTagger<F>> {
    train_tagger_with_tags(train, dev, embedder, config, train.tags().to_vec())
}

pub fn train_tagger_with_tags<F: Real>(
    train: &TagDataset,
    dev: Option<&TagDataset>,
    embedder: &dyn TokenEmbedder<F>,
    config: &TaggerConfig,
    tags: Vec<String>,
) -> Result<TrainedTagger<F>> {
    let mut model = TaggerModel::new(config.clone(), embedder.dim(), tags)?;
    let tag_id: HashMap<&str, usize> = model.tags.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();

    let mut gold = Vec::with_capacity(train.len());
    for s in &train.sentences {
        let ids = s
            .tags
            .iter()
            .map(|t| tag_id.get(t.as_str()).copied().ok_or_else(|| Error::UnknownTag(t.clone())))
            .collect::<Result<Vec<_>>>()?;
        gold.push(ids);
    }

    if !config.freeze_embeddings {
        let mut words = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut rows = Vec::new();
        for s in &train.sentences {
            for tok in &s.tokens {
                if seen.insert(tok.as_str()) {
                    let v = embedder.word_vector(tok).ok_or_else(|| {
                        Error::Config("continued training needs type-level word vectors".into())
                    })?;
                    words.push(tok.clone());
                    rows.push(v);
                }
            }
        }
        let table = if rows.is_empty() {
            Matrix::zeros(0, model.dim)
        } else {
            Matrix::from_rows(&rows)
        };
        model.tuned = Some(TunedEmbeddings::new(words, table));
    }

    let lr = F::lit(config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..train.len()).filter(|&i| train.sentences[i].scored() > 0).collect();
    let selection = dev.unwrap_or(train);
    let mut best: Option<(f64, usize, TaggerModel<F>)> = None;
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let s = &train.sentences[i];
            let x = model.inputs(s, embedder)?;
            let batch = SentenceBatch::new(x, gold[i].clone(), s.mask.clone())?;
            let g = backward(&batch, &model, config.freeze_embeddings)?;
            total += g.loss.as_f64();
            model.params.add_scaled(-lr, &g.params);
            if let (Some(dx), Some(tuned)) = (&g.embeddings, model.tuned.as_mut()) {
                for (t, tok) in s.tokens.iter().enumerate() {
                    let r = tuned.row_of(tok).expect("training token has a tuned row");
                    crate::num::axpy(-lr, dx.row(t), tuned.table.row_mut(r));
                }
            }
        }
        if !model.params.is_finite() {
            return Err(Error::NonFinite(format!("tagger epoch {epoch}")));
        }
        let metric = evaluate(selection, embedder, &model)?;
        let train_loss = if order.is_empty() { 0.0 } else { total / order.len() as f64 };
        log::info!("tagger epoch {epoch}: loss {train_loss:.4}, dev {metric:.4}");
        curve.push(EpochRecord {
            epoch,
            train_loss,
            dev_metric: metric,
        });
        if best.as_ref().map_or(true, |b| metric > b.0) {
            best = Some((metric, epoch, model.clone()));
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainedTagger {
        model,
        curve,
        best_epoch,
        metric: train.task.metric(),
    })
}

#[cfg(test)]
mod tests;
