//! Cross-lingual document classification with an averaged perceptron.
//!
//! A document is represented by the mean of its sentence roots. The
//! classifier is trained on documents of one language and evaluated on
//! documents of another through the shared embedding space.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{normalize_line, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{compose_into, BiModel};
use crate::seed;

/// Class names indexed by class id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    names: Vec<String>,
}

impl LabelMap {
    pub fn new(names: Vec<String>) -> Result<Self> {
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(Error::Input(format!("invalid class name '{}'", name)));
            }
            if names[..i].contains(name) {
                return Err(Error::Input(format!("duplicate class name '{}'", name)));
            }
        }
        Ok(LabelMap { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    /// One `name<TAB>id` line per class.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (id, name) in self.names.iter().enumerate() {
            writeln!(out, "{}\t{}", name, id)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries: Vec<(usize, String)> = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let (name, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(path, idx + 1, "expected 'name<TAB>id'"))?;
            let id: usize = id
                .trim()
                .parse()
                .map_err(|_| Error::format(path, idx + 1, "class id is not an integer"))?;
            entries.push((id, name.to_owned()));
        }
        entries.sort();
        if entries.iter().enumerate().any(|(i, (id, _))| *id != i) {
            return Err(Error::format(path, 1, "class ids must be contiguous from 0"));
        }
        LabelMap::new(entries.into_iter().map(|(_, n)| n).collect())
            .map_err(|e| Error::format(path, 1, e.to_string()))
    }
}

/// A document before encoding: a class name and its sentences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawDocument {
    pub label: String,
    pub sentences: Vec<String>,
}

/// Writes documents as blank-line separated blocks headed by `#label <name>`.
pub fn write_documents<W: Write>(docs: &[RawDocument], mut out: W) -> std::io::Result<()> {
    for (i, doc) in docs.iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
        }
        writeln!(out, "#label {}", doc.label)?;
        for s in &doc.sentences {
            writeln!(out, "{}", s)?;
        }
    }
    Ok(())
}

pub fn read_documents(path: &Path) -> Result<Vec<RawDocument>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    let mut current: Option<RawDocument> = None;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            docs.extend(current.take());
            continue;
        }
        match current.as_mut() {
            Some(doc) => doc.sentences.push(line),
            None => {
                let label = line
                    .strip_prefix("#label ")
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .ok_or_else(|| Error::format(path, idx + 1, "document must start with '#label <class-name>'"))?;
                current = Some(RawDocument {
                    label: label.to_owned(),
                    sentences: Vec::new(),
                });
            }
        }
    }
    docs.extend(current);
    Ok(docs)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledDocument {
    pub language_tag: String,
    /// Encoded sentences; a sentence may be empty if all its tokens were
    /// out of vocabulary.
    pub sentences: Vec<Vec<u32>>,
    pub label: usize,
}

#[derive(Clone, Debug)]
pub struct EncodedDocuments {
    pub docs: Vec<LabeledDocument>,
    /// Documents dropped for having no in-vocabulary token.
    pub rejected: usize,
}

/// Encodes raw documents, rejecting those without any in-vocabulary token.
pub fn encode_documents(raw: &[RawDocument], vocab: &Vocabulary, labels: &LabelMap) -> Result<EncodedDocuments> {
    let mut docs = Vec::with_capacity(raw.len());
    let mut rejected = 0;
    for doc in raw {
        let label = labels.id(&doc.label).ok_or_else(|| Error::Lookup {
            kind: "class",
            name: doc.label.clone(),
        })?;
        let sentences: Vec<Vec<u32>> = doc
            .sentences
            .iter()
            .map(|s| vocab.encode(&normalize_line(s)))
            .collect();
        if sentences.iter().all(Vec::is_empty) {
            rejected += 1;
            continue;
        }
        docs.push(LabeledDocument {
            language_tag: vocab.language_tag().to_owned(),
            sentences,
            label,
        });
    }
    if rejected > 0 {
        log::warn!("rejected {} documents with no in-vocabulary token", rejected);
    }
    Ok(EncodedDocuments { docs, rejected })
}

/// Mean of the composed roots of the document's non-empty sentences.
pub fn doc_representation(doc: &LabeledDocument, model: &BiModel) -> Result<Vec<f64>> {
    let table = model.table(&doc.language_tag)?;
    let mut sum = vec![0.0; model.dim()];
    let mut root = vec![0.0; model.dim()];
    let mut used = 0usize;
    for sentence in &doc.sentences {
        if sentence.is_empty() {
            continue;
        }
        if let Some(&id) = sentence.iter().find(|&&id| id as usize >= table.len()) {
            return Err(Error::Index { id, size: table.len() });
        }
        compose_into(sentence, table, &mut root);
        for (s, r) in sum.iter_mut().zip(&root) {
            *s += r;
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::EmptyDocument);
    }
    let inv = 1.0 / used as f64;
    sum.iter_mut().for_each(|s| *s *= inv);
    Ok(sum)
}

/// Multiclass perceptron weights with their running average.
///
/// Each class row holds `d` feature weights followed by a bias.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptronModel {
    classes: usize,
    dim: usize,
    weights: Vec<f64>,
    averaged: Vec<f64>,
    presentations: u64,
}

impl PerceptronModel {
    pub fn new(classes: usize, dim: usize) -> Self {
        let width = dim + 1;
        PerceptronModel {
            classes,
            dim,
            weights: vec![0.0; classes * width],
            averaged: vec![0.0; classes * width],
            presentations: 0,
        }
    }

    /// Builds a model with the given raw weight rows (each of length d + 1)
    /// used for both raw and averaged scoring.
    pub fn from_weights(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(1, Vec::len);
        if width == 0 {
            return Err(Error::Input("weight rows need at least a bias".into()));
        }
        let mut model = PerceptronModel::new(rows.len(), width - 1);
        for (c, row) in rows.iter().enumerate() {
            Error::check_len(width, row.len())?;
            model.weights[c * width..(c + 1) * width].copy_from_slice(row);
        }
        model.averaged = model.weights.clone();
        Ok(model)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn presentations(&self) -> u64 {
        self.presentations
    }

    pub fn weights(&self, class: usize) -> &[f64] {
        let w = self.dim + 1;
        &self.weights[class * w..(class + 1) * w]
    }

    pub fn averaged_weights(&self, class: usize) -> &[f64] {
        let w = self.dim + 1;
        &self.averaged[class * w..(class + 1) * w]
    }

    fn argmax(&self, matrix: &[f64], x: &[f64]) -> usize {
        let w = self.dim + 1;
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for c in 0..self.classes {
            let row = &matrix[c * w..(c + 1) * w];
            let score = row[..self.dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + row[self.dim];
            // strict comparison keeps the lowest id on ties
            if score > best_score {
                best = c;
                best_score = score;
            }
        }
        best
    }

    pub fn predict(&self, x: &[f64], use_averaged: bool) -> Result<usize> {
        Error::check_len(self.dim, x.len())?;
        if self.classes == 0 {
            return Err(Error::Input("model has no classes".into()));
        }
        Ok(self.argmax(if use_averaged { &self.averaged } else { &self.weights }, x))
    }
}

/// Presentation order for each epoch: a seeded shuffle of `0..n`.
pub fn perceptron_epoch_order(n: usize, epoch: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[seed::PERCEPTRON, epoch as u64]));
    order.shuffle(&mut rng);
    order
}

/// Online averaged-perceptron trainer.
///
/// The average is kept lazily: each coordinate remembers the presentation
/// at which it last changed and the running sum of its past values, so an
/// update costs O(d) instead of O(C·d) per presentation.
#[derive(Clone, Debug)]
pub struct PerceptronTrainer {
    model: PerceptronModel,
    totals: Vec<f64>,
    stamps: Vec<u64>,
}

impl PerceptronTrainer {
    pub fn new(classes: usize, dim: usize) -> Self {
        let model = PerceptronModel::new(classes, dim);
        let n = model.weights.len();
        PerceptronTrainer {
            model,
            totals: vec![0.0; n],
            stamps: vec![1; n],
        }
    }

    /// Presents one example; updates the raw weights on a mistake.
    pub fn present(&mut self, x: &[f64], label: usize) -> Result<usize> {
        let m = &mut self.model;
        Error::check_len(m.dim, x.len())?;
        if label >= m.classes {
            return Err(Error::Input(format!("label {} out of range for {} classes", label, m.classes)));
        }
        m.presentations += 1;
        let t = m.presentations;
        let guess = m.argmax(&m.weights, x);
        if guess != label {
            let w = m.dim + 1;
            for (class, sign) in [(label, 1.0), (guess, -1.0)] {
                for j in 0..w {
                    let k = class * w + j;
                    let xj = if j < m.dim { x[j] } else { 1.0 };
                    self.totals[k] += (t - self.stamps[k]) as f64 * m.weights[k];
                    self.stamps[k] = t;
                    m.weights[k] += sign * xj;
                }
            }
        }
        Ok(guess)
    }

    pub fn raw_weights(&self) -> &PerceptronModel {
        &self.model
    }

    /// Finalizes the average over all presentations so far.
    pub fn finish(mut self) -> PerceptronModel {
        let t = self.model.presentations;
        if t > 0 {
            for k in 0..self.model.weights.len() {
                let w = self.model.weights[k];
                let total = self.totals[k] + (t + 1 - self.stamps[k]) as f64 * w;
                self.model.averaged[k] = total / t as f64;
            }
        }
        self.model
    }
}

pub fn perceptron_train(
    examples: &[(Vec<f64>, usize)],
    dim: usize,
    classes: usize,
    epochs: usize,
    seed: u64,
) -> Result<PerceptronModel> {
    if classes < 2 {
        return Err(Error::Input(format!("need at least 2 classes, got {}", classes)));
    }
    for (x, y) in examples {
        Error::check_len(dim, x.len())?;
        if *y >= classes {
            return Err(Error::Input(format!("label {} out of range for {} classes", y, classes)));
        }
    }
    let mut trainer = PerceptronTrainer::new(classes, dim);
    for epoch in 0..epochs {
        for i in perceptron_epoch_order(examples.len(), epoch, seed) {
            let (x, y) = &examples[i];
            trainer.present(x, *y)?;
        }
    }
    Ok(trainer.finish())
}

/// Frequency of the most common label.
pub fn majority_baseline(labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let max_label = labels.iter().copied().max().unwrap_or(0);
    let mut counts = vec![0usize; max_label + 1];
    for &l in labels {
        counts[l] += 1;
    }
    *counts.iter().max().unwrap() as f64 / labels.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct CldcRow {
    pub size: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CldcReport {
    pub train_language: String,
    pub test_language: String,
    pub majority_baseline: f64,
    pub rows: Vec<CldcRow>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CldcSettings {
    pub classes: usize,
    pub epochs: usize,
    pub seed: u64,
}

/// Trains on the first `size` training documents for every size and reports
/// accuracy on the full test set.
pub fn evaluate_cldc(
    train_docs: &[LabeledDocument],
    test_docs: &[LabeledDocument],
    model: &BiModel,
    sizes: &[usize],
    settings: &CldcSettings,
) -> Result<CldcReport> {
    if let Some(&bad) = sizes.iter().find(|&&s| s == 0 || s > train_docs.len()) {
        return Err(Error::Input(format!(
            "training size {} not in 1..={} available documents",
            bad,
            train_docs.len()
        )));
    }
    if test_docs.is_empty() {
        return Err(Error::Input("no test documents".into()));
    }
    let lang = |docs: &[LabeledDocument]| -> Result<String> {
        let tag = docs[0].language_tag.clone();
        if docs.iter().any(|d| d.language_tag != tag) {
            return Err(Error::Input("documents of one set must share a language".into()));
        }
        model.table(&tag)?;
        Ok(tag)
    };
    let train_language = if train_docs.is_empty() { String::new() } else { lang(train_docs)? };
    let test_language = lang(test_docs)?;
    if let Some(d) = test_docs.iter().chain(train_docs).find(|d| d.label >= settings.classes) {
        return Err(Error::Input(format!(
            "label {} out of range for {} classes",
            d.label, settings.classes
        )));
    }

    let vectors = |docs: &[LabeledDocument]| -> Result<Vec<(Vec<f64>, usize)>> {
        docs.iter().map(|d| Ok((doc_representation(d, model)?, d.label))).collect()
    };
    let largest = sizes.iter().copied().max().unwrap_or(0);
    let train = vectors(&train_docs[..largest])?;
    let test = vectors(test_docs)?;
    let test_labels: Vec<usize> = test.iter().map(|(_, y)| *y).collect();

    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let clf = perceptron_train(&train[..size], model.dim(), settings.classes, settings.epochs, settings.seed)?;
        let correct = test
            .iter()
            .map(|(x, y)| clf.predict(x, true).map(|p| usize::from(p == *y)))
            .sum::<Result<usize>>()?;
        rows.push(CldcRow {
            size,
            accuracy: correct as f64 / test.len() as f64,
        });
    }
    Ok(CldcReport {
        train_language,
        test_language,
        majority_baseline: majority_baseline(&test_labels),
        rows,
    })
}
