//! Datasets, metrics, external vectors and experiment reports.

pub mod conll;
pub mod vectors;

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::num::Real;
use crate::tagger::{self, TaggerConfig, TokenEmbedder};

pub use conll::{is_biluo_tag, read_conll, write_conll, MetricKind, Sentence, TagDataset, TaskKind};
pub use vectors::{load_external_vectors, ContextualVectors, ExternalVectors, StaticVectors};

/// Correct unmasked predictions over unmasked positions.
pub fn token_accuracy<S: AsRef<str>, T: AsRef<str>>(pred: &[S], gold: &[T], mask: &[bool]) -> Result<f64> {
    let (correct, total) = accuracy_counts(pred, gold, mask)?;
    if total == 0 {
        return Err(Error::NothingToScore);
    }
    Ok(correct as f64 / total as f64)
}

fn accuracy_counts<S: AsRef<str>, T: AsRef<str>>(pred: &[S], gold: &[T], mask: &[bool]) -> Result<(usize, usize)> {
    if pred.len() != gold.len() || gold.len() != mask.len() {
        return Err(Error::Shape(format!(
            "{} predictions, {} gold tags, {} mask flags",
            pred.len(),
            gold.len(),
            mask.len()
        )));
    }
    let mut correct = 0;
    let mut total = 0;
    for ((p, g), &m) in pred.iter().zip(gold).zip(mask) {
        if m {
            total += 1;
            correct += usize::from(p.as_ref() == g.as_ref());
        }
    }
    Ok((correct, total))
}

/// Micro token accuracy over a whole dataset.
pub fn dataset_accuracy(gold: &TagDataset, pred: &[Vec<String>]) -> Result<f64> {
    check_aligned(gold, pred)?;
    let mut correct = 0;
    let mut total = 0;
    for (s, p) in gold.sentences.iter().zip(pred) {
        let (c, t) = accuracy_counts(p, &s.tags, &s.mask)?;
        correct += c;
        total += t;
    }
    if total == 0 {
        return Err(Error::NothingToScore);
    }
    Ok(correct as f64 / total as f64)
}

fn check_aligned(gold: &TagDataset, pred: &[Vec<String>]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Shape(format!("{} predicted sentences for {}", pred.len(), gold.len())));
    }
    Ok(())
}

/// Inclusive token span with an entity type.
pub type Span = (usize, usize, String);

fn split_tag(tag: &str) -> Option<(char, &str)> {
    let (prefix, ty) = tag.split_once('-')?;
    let mut chars = prefix.chars();
    let p = chars.next()?;
    if chars.next().is_some() || ty.is_empty() || !"BILU".contains(p) {
        return None;
    }
    Some((p, ty))
}

/// Entity spans of a BILUO sequence, and the number of repaired runs.
///
/// A run that is not `U` or `B I* L` becomes one span covering the tag it
/// starts at and every following `I`/`L` of the same type, up to and
/// including the first `L`. Tags outside the scheme count as `O`.
pub fn biluo_spans<S: AsRef<str>>(tags: &[S]) -> (BTreeSet<Span>, usize) {
    let mut spans = BTreeSet::new();
    let mut repairs = 0;
    let mut i = 0;
    while i < tags.len() {
        let Some((p, ty)) = split_tag(tags[i].as_ref()) else {
            i += 1;
            continue;
        };
        if p == 'U' {
            spans.insert((i, i, ty.to_string()));
            i += 1;
            continue;
        }
        let mut j = i;
        while split_tag(tags[j].as_ref()).is_some_and(|(q, _)| q != 'L') {
            match tags.get(j + 1).and_then(|t| split_tag(t.as_ref())) {
                Some((q, t2)) if t2 == ty && (q == 'I' || q == 'L') => j += 1,
                _ => break,
            }
        }
        let closed = split_tag(tags[j].as_ref()).is_some_and(|(q, _)| q == 'L');
        if !(p == 'B' && closed && j > i) {
            repairs += 1;
        }
        spans.insert((i, j, ty.to_string()));
        i = j + 1;
    }
    (spans, repairs)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EntityScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
    /// Malformed runs repaired in the predictions.
    pub pred_repairs: usize,
    /// Malformed runs repaired in the gold tags.
    pub gold_repairs: usize,
}

impl EntityScores {
    fn from_counts(matched: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(matched, predicted);
        let recall = ratio(matched, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        EntityScores {
            precision,
            recall,
            f1,
            matched,
            predicted,
            gold,
            ..Default::default()
        }
    }
}

/// Exact-match micro P/R/F1 over aligned `(pred, gold, mask)` sequences.
/// Masked positions are removed before spans are extracted.
pub fn entity_f1_sequences<'a, I>(seqs: I) -> Result<EntityScores>
where
    I: IntoIterator<Item = (&'a [String], &'a [String], &'a [bool])>,
{
    let (mut matched, mut n_pred, mut n_gold, mut pr, mut gr) = (0, 0, 0, 0, 0);
    for (pred, gold, mask) in seqs {
        if pred.len() != gold.len() || gold.len() != mask.len() {
            return Err(Error::Shape(format!(
                "{} predictions, {} gold tags, {} mask flags",
                pred.len(),
                gold.len(),
                mask.len()
            )));
        }
        let keep = |tags: &'a [String]| -> Vec<&'a str> {
            tags.iter().zip(mask).filter(|(_, &m)| m).map(|(t, _)| t.as_str()).collect()
        };
        let (ps, p_rep) = biluo_spans(&keep(pred));
        let (gs, g_rep) = biluo_spans(&keep(gold));
        matched += ps.intersection(&gs).count();
        n_pred += ps.len();
        n_gold += gs.len();
        pr += p_rep;
        gr += g_rep;
    }
    let mut s = EntityScores::from_counts(matched, n_pred, n_gold);
    s.pred_repairs = pr;
    s.gold_repairs = gr;
    Ok(s)
}

pub fn entity_f1(gold: &TagDataset, pred: &[Vec<String>]) -> Result<EntityScores> {
    check_aligned(gold, pred)?;
    entity_f1_sequences(
        gold.sentences
            .iter()
            .zip(pred)
            .map(|(s, p)| (p.as_slice(), s.tags.as_slice(), s.mask.as_slice())),
    )
}

/// The task's headline metric: accuracy for POS/chunking, entity F1 for NER.
pub fn task_metric(gold: &TagDataset, pred: &[Vec<String>]) -> Result<f64> {
    match gold.task.metric() {
        MetricKind::Accuracy => dataset_accuracy(gold, pred),
        MetricKind::EntityF1 => entity_f1(gold, pred).map(|s| s.f1),
    }
}

/// Train/dev/test splits of one task.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub train: TagDataset,
    pub dev: Option<TagDataset>,
    pub test: TagDataset,
}

impl ExperimentData {
    /// Splits a single dataset 80/10/10 with `seed`.
    pub fn from_single(dataset: &TagDataset, seed: u64) -> Self {
        let (train, dev, test) = dataset.split(seed);
        ExperimentData {
            train,
            dev: Some(dev),
            test,
        }
    }

    pub fn task(&self) -> TaskKind {
        self.train.task
    }
}

/// One (task, embedding model) result.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub task: TaskKind,
    pub model: String,
    pub metric: MetricKind,
    /// Test-split value of `metric`.
    pub value: f64,
    /// Test token accuracy, reported for every task.
    pub token_accuracy: f64,
    pub entity: Option<EntityScores>,
    pub best_epoch: usize,
    pub curve: Vec<tagger::EpochRecord>,
}

/// Comparison table: tasks as rows, embedding models as columns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

const COLUMN_ORDER: [&str; 4] = ["SG", "FT", "Morph", "MorphNG"];

impl EvalReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: ReportRow) {
        self.rows.push(row);
    }

    pub fn get(&self, task: TaskKind, model: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.task == task && r.model == model)
    }

    /// Known strategy labels first in their fixed order, then the rest as added.
    pub fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = COLUMN_ORDER
            .iter()
            .filter(|c| self.rows.iter().any(|r| r.model == **c))
            .map(|c| c.to_string())
            .collect();
        for r in &self.rows {
            if !cols.contains(&r.model) {
                cols.push(r.model.clone());
            }
        }
        cols
    }

    fn tasks(&self) -> Vec<TaskKind> {
        let mut tasks = Vec::new();
        for r in &self.rows {
            if !tasks.contains(&r.task) {
                tasks.push(r.task);
            }
        }
        tasks
    }

    /// Aligned plain-text table of the headline metric.
    pub fn table(&self) -> String {
        let cols = self.columns();
        let mut header = vec!["Task".to_string()];
        header.extend(cols.iter().cloned());
        let mut lines = vec![header];
        for task in self.tasks() {
            let mut line = vec![format!("{} ({})", task.label(), task.metric())];
            for c in &cols {
                line.push(self.get(task, c).map_or("-".into(), |r| format!("{:.4}", r.value)));
            }
            lines.push(line);
            if task.metric() == MetricKind::EntityF1 {
                let mut line = vec![format!("{} (token accuracy)", task.label())];
                for c in &cols {
                    line.push(self.get(task, c).map_or("-".into(), |r| format!("{:.4}", r.token_accuracy)));
                }
                lines.push(line);
            }
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|i| lines.iter().map(|l| l[i].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            let cells: Vec<String> = l
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        format!("{c:<w$}", w = widths[i])
                    } else {
                        format!("{c:>w$}", w = widths[i])
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("task,model,metric,value,token_accuracy,precision,recall,pred_repairs,best_epoch\n");
        for r in &self.rows {
            let (p, rc, rep) = r
                .entity
                .map_or((String::new(), String::new(), String::new()), |e| {
                    (format!("{:.6}", e.precision), format!("{:.6}", e.recall), e.pred_repairs.to_string())
                });
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{},{},{},{}",
                r.task, r.model, r.metric, r.value, r.token_accuracy, p, rc, rep, r.best_epoch
            );
        }
        out
    }

    /// Per-epoch training loss and dev metric of every row.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("task,model,epoch,train_loss,dev_metric\n");
        for r in &self.rows {
            for e in &r.curve {
                let _ = writeln!(out, "{},{},{},{:.6},{:.6}", r.task, r.model, e.epoch, e.train_loss, e.dev_metric);
            }
        }
        out
    }
}

/// Scores a trained tagger on `test`.
pub fn evaluate_row<F: Real>(
    name: &str,
    trained: &tagger::TrainedTagger<F>,
    test: &TagDataset,
    embedder: &dyn TokenEmbedder<F>,
) -> Result<ReportRow> {
    let pred = tagger::predict_dataset(test, embedder, &trained.model)?;
    let token_accuracy = dataset_accuracy(test, &pred)?;
    let entity = match test.task.metric() {
        MetricKind::EntityF1 => Some(entity_f1(test, &pred)?),
        MetricKind::Accuracy => None,
    };
    let value = entity.map_or(token_accuracy, |e| e.f1);
    Ok(ReportRow {
        task: test.task,
        model: name.to_string(),
        metric: test.task.metric(),
        value,
        token_accuracy,
        entity,
        best_epoch: trained.best_epoch,
        curve: trained.curve.clone(),
    })
}

/// Trains a tagger on `data.train` with `embedder`, selects the best epoch
/// on `data.dev` and scores `data.test`.
pub fn run_experiment<F: Real>(
    name: &str,
    embedder: &dyn TokenEmbedder<F>,
    data: &ExperimentData,
    config: &TaggerConfig,
) -> Result<ReportRow> {
    let mut tags: Vec<String> = data.train.tags().to_vec();
    for d in data.dev.iter().chain(std::iter::once(&data.test)) {
        for t in d.tags() {
            if !tags.contains(t) {
                tags.push(t.clone());
            }
        }
    }
    let trained = tagger::train_tagger_with_tags(&data.train, data.dev.as_ref(), embedder, config, tags)?;
    evaluate_row(name, &trained, &data.test, embedder)
}

/// Runs every source on every dataset.
pub fn run_comparison<F: Real>(
    sources: &[(&str, &dyn TokenEmbedder<F>)],
    datasets: &[ExperimentData],
    config: &TaggerConfig,
) -> Result<EvalReport> {
    let mut report = EvalReport::new();
    for data in datasets {
        for (name, embedder) in sources {
            report.push(run_experiment(name, *embedder, data, config)?);
        }
    }
    Ok(report)
}
