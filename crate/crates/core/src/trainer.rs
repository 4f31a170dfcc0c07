//! AdaGrad training of the joint model over one or more parallel corpora.
//!
//! Updates are per pair and strictly sequential, so a run is a pure function
//! of its corpora and configuration. Languages that appear in more than one
//! corpus share a single table.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ParallelCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{BiModel, EmbeddingTable, SparseGrad};
use crate::objective::{corpora_loss, HingeScratch, LossParams, NoiseSampler};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub step_size: f64,
    pub lambda: f64,
    pub noise_count: usize,
    pub margin: f64,
    pub epochs: usize,
    pub seed: u64,
    pub init_std: f64,
    pub symmetric_noise: bool,
    /// AdaGrad denominator offset.
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 40,
            step_size: 0.1,
            lambda: 1.0,
            noise_count: 50,
            margin: 50.0,
            epochs: 50,
            seed: 0,
            init_std: 0.1,
            symmetric_noise: false,
            epsilon: 1e-6,
        }
    }
}

impl TrainConfig {
    /// Fields violating their constraints, with a description of each.
    pub fn problems(&self) -> Vec<(&'static str, String)> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        let mut bad = Vec::new();
        if self.dim < 1 {
            bad.push(("dim", format!("must be >= 1 (got {})", self.dim)));
        }
        if !positive(self.step_size) {
            bad.push(("step_size", format!("must be > 0 (got {})", self.step_size)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            bad.push(("lambda", format!("must be >= 0 (got {})", self.lambda)));
        }
        if !positive(self.margin) {
            bad.push(("margin", format!("must be > 0 (got {})", self.margin)));
        }
        if !positive(self.init_std) {
            bad.push(("init_std", format!("must be > 0 (got {})", self.init_std)));
        }
        if !positive(self.epsilon) {
            bad.push(("epsilon", format!("must be > 0 (got {})", self.epsilon)));
        }
        bad
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.problems();
        if bad.is_empty() {
            Ok(())
        } else {
            let parts: Vec<String> = bad.iter().map(|(f, m)| format!("{} {}", f, m)).collect();
            Err(Error::Config(parts.join("; ")))
        }
    }

    pub fn loss_params(&self) -> LossParams {
        LossParams {
            margin: self.margin,
            noise_count: self.noise_count,
            lambda: self.lambda,
            symmetric_noise: self.symmetric_noise,
        }
    }
}

/// Per-coordinate AdaGrad step: `G += g²; θ −= η·g / (√G + ε)`.
pub fn adagrad_update(param: &mut [f64], grad: &[f64], sq_accum: &mut [f64], step_size: f64, epsilon: f64) -> Result<()> {
    Error::check_len(param.len(), grad.len())?;
    Error::check_len(param.len(), sq_accum.len())?;
    adagrad_step(param, grad, sq_accum, step_size, epsilon);
    Ok(())
}

#[inline]
fn adagrad_step(param: &mut [f64], grad: &[f64], sq_accum: &mut [f64], step_size: f64, epsilon: f64) {
    for ((p, &g), acc) in param.iter_mut().zip(grad).zip(sq_accum.iter_mut()) {
        *acc += g * g;
        // a zero gradient leaves both G and θ as they were
        if g != 0.0 {
            *p -= step_size * g / (acc.sqrt() + epsilon);
        }
    }
}

/// Accumulated squared gradients, one buffer per table of the model.
#[derive(Clone, Debug)]
pub struct AdaGradState {
    accum: Vec<Vec<f64>>,
    pub epsilon: f64,
}

impl AdaGradState {
    pub fn new(model: &BiModel, epsilon: f64) -> Self {
        AdaGradState {
            accum: model.tables().iter().map(|t| vec![0.0; t.as_slice().len()]).collect(),
            epsilon,
        }
    }

    pub fn table(&self, index: usize) -> &[f64] {
        &self.accum[index]
    }

    /// Effective step size `η / (√G + ε)` of one coordinate.
    pub fn effective_step(&self, table: usize, offset: usize, step_size: f64) -> f64 {
        step_size / (self.accum[table][offset].sqrt() + self.epsilon)
    }
}

/// Visiting order of all `(corpus, pair)` references for one epoch.
pub fn epoch_schedule(corpus_sizes: &[usize], epoch: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut order: Vec<(usize, usize)> = corpus_sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| (0..n).map(move |i| (c, i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[seed::SHUFFLE, epoch as u64]));
    order.shuffle(&mut rng);
    order
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Full objective with fixed monitoring noise, after the epoch.
    pub loss: f64,
    /// Sum of hinge losses seen during the epoch's updates.
    pub train_loss: f64,
    pub seconds: f64,
}

impl EpochStats {
    pub fn log_line(&self) -> String {
        format!("epoch {} loss {} seconds {:.3}", self.epoch, self.loss, self.seconds)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: BiModel,
    /// Monitored loss of the freshly initialized model.
    pub initial_loss: f64,
    pub epochs: Vec<EpochStats>,
}

/// Languages and their vocabularies, in order of first appearance.
pub fn collect_languages(corpora: &[ParallelCorpus]) -> Result<Vec<Arc<Vocabulary>>> {
    let mut langs: Vec<Arc<Vocabulary>> = Vec::new();
    for corpus in corpora {
        for vocab in [corpus.vocab_a(), corpus.vocab_b()] {
            match langs.iter().find(|v| v.language_tag() == vocab.language_tag()) {
                Some(known) => {
                    if !Arc::ptr_eq(known, vocab) && **known != **vocab {
                        return Err(Error::Config(format!(
                            "corpora disagree on the vocabulary of language '{}'",
                            vocab.language_tag()
                        )));
                    }
                }
                None => langs.push(vocab.clone()),
            }
        }
    }
    Ok(langs)
}

/// Gaussian-initialized model with one table per language.
pub fn init_model(languages: &[Arc<Vocabulary>], config: &TrainConfig) -> Result<BiModel> {
    let mut model = BiModel::new(config.dim)?;
    for (i, vocab) in languages.iter().enumerate() {
        let table = EmbeddingTable::init_gaussian(
            vocab.language_tag(),
            vocab.len(),
            config.dim,
            config.init_std,
            seed::derive(config.seed, &[seed::INIT, i as u64]),
        )?;
        model.add_table(table)?;
    }
    Ok(model)
}

pub fn train(corpora: &[ParallelCorpus], config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_observer(corpora, config, |_, _| Ok(()))
}

/// Trains the model, calling `observer` after every epoch.
pub fn train_with_observer<F>(corpora: &[ParallelCorpus], config: &TrainConfig, mut observer: F) -> Result<TrainOutcome>
where
    F: FnMut(&EpochStats, &BiModel) -> Result<()>,
{
    config.validate()?;
    if corpora.is_empty() {
        return Err(Error::Config("at least one corpus is required".into()));
    }
    if config.noise_count > 0 {
        if let Some(c) = corpora.iter().find(|c| c.len() < 2) {
            return Err(Error::Config(format!(
                "corpus {}-{} has {} pairs; noise sampling needs at least 2",
                c.lang_a(),
                c.lang_b(),
                c.len()
            )));
        }
    }
    let languages = collect_languages(corpora)?;
    let mut model = init_model(&languages, config)?;
    let mut adagrad = AdaGradState::new(&model, config.epsilon);
    let table_index: Vec<(usize, usize)> = corpora
        .iter()
        .map(|c| (model.index_of(c.lang_a()).unwrap(), model.index_of(c.lang_b()).unwrap()))
        .collect();

    let params = config.loss_params();
    let initial_loss = corpora_loss(corpora, &model, &params, config.seed)?;
    log::info!("initial loss {}", initial_loss);

    let mut grads: Vec<SparseGrad> = languages
        .iter()
        .map(|v| SparseGrad::new(v.len(), config.dim))
        .collect();
    let mut scratch = HingeScratch::new(config.dim);
    let mut noise_idx = Vec::with_capacity(config.noise_count);
    let sizes: Vec<usize> = corpora.iter().map(ParallelCorpus::len).collect();
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let start = Instant::now();
        let mut sampler = NoiseSampler::new(seed::derive(config.seed, &[seed::NOISE, epoch as u64]));
        let mut train_loss = 0.0;

        for (ci, pi) in epoch_schedule(&sizes, epoch, config.seed) {
            let corpus = &corpora[ci];
            let (ia, ib) = table_index[ci];
            let (a, b) = &corpus.pairs()[pi];
            let [grad_a, grad_b] = grads
                .get_disjoint_mut([ia, ib])
                .expect("pair languages map to distinct tables");

            // rows of the aligned sentences are always regularized
            for &id in a.ids() {
                grad_a.touch(id);
            }
            for &id in b.ids() {
                grad_b.touch(id);
            }

            let tables = model.tables();
            sampler.sample_indices(corpus.len(), pi, config.noise_count, &mut noise_idx)?;
            let noise: Vec<&[u32]> = noise_idx.iter().map(|&j| corpus.pairs()[j].1.ids()).collect();
            train_loss += scratch.hinges(
                a.ids(),
                &tables[ia],
                b.ids(),
                &tables[ib],
                &noise,
                config.margin,
                Some((&mut *grad_a, &mut *grad_b)),
            );
            if config.symmetric_noise {
                sampler.sample_indices(corpus.len(), pi, config.noise_count, &mut noise_idx)?;
                let noise: Vec<&[u32]> = noise_idx.iter().map(|&j| corpus.pairs()[j].0.ids()).collect();
                train_loss += scratch.hinges(
                    b.ids(),
                    &tables[ib],
                    a.ids(),
                    &tables[ia],
                    &noise,
                    config.margin,
                    Some((&mut *grad_b, &mut *grad_a)),
                );
            }

            for (ti, grad) in [(ia, grad_a), (ib, grad_b)] {
                let table = &mut model.tables_mut()[ti];
                let accum = &mut adagrad.accum[ti];
                let dim = config.dim;
                for (id, g) in grad.iter_mut() {
                    let row = table.row_mut(id);
                    if config.lambda != 0.0 {
                        for (gj, &xj) in g.iter_mut().zip(row.iter()) {
                            *gj += config.lambda * xj;
                        }
                    }
                    let off = id as usize * dim;
                    adagrad_step(row, g, &mut accum[off..off + dim], config.step_size, config.epsilon);
                }
                grad.clear();
            }
        }

        let loss = corpora_loss(corpora, &model, &params, config.seed)?;
        let stats = EpochStats {
            epoch: epoch + 1,
            loss,
            train_loss,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!("{}", stats.log_line());
        observer(&stats, &model)?;
        epochs.push(stats);
    }

    Ok(TrainOutcome {
        model,
        initial_loss,
        epochs,
    })
}
