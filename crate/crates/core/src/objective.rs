//! Bilingual distance, the noise-contrastive hinge and their gradients.
//!
//! For an aligned pair `(a, b)` and a noise sentence `n` drawn from the
//! target side, the per-sample loss is
//! `max(0, margin + ‖a − b‖² − ‖a − n‖²)` over additive sentence roots.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{ParallelCorpus, Sentence};
use crate::error::{Error, Result};
use crate::model::{compose_into, BiModel, EmbeddingTable, SparseGrad};
use crate::seed;

/// Squared Euclidean distance between two sentence roots.
pub fn e_dist(a_root: &[f64], b_root: &[f64]) -> Result<f64> {
    Error::check_len(a_root.len(), b_root.len())?;
    Ok(sq_dist(a_root, b_root))
}

#[inline]
fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Hinge on the distance gap between the aligned and the noise sentence.
pub fn e_noise(a_root: &[f64], b_root: &[f64], n_root: &[f64], margin: f64) -> Result<f64> {
    Error::check_len(a_root.len(), b_root.len())?;
    Error::check_len(a_root.len(), n_root.len())?;
    Ok((margin + sq_dist(a_root, b_root) - sq_dist(a_root, n_root)).max(0.0))
}

/// Which side of a parallel corpus noise is drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

/// Seeded uniform sampler of noise sentence indices.
///
/// Each draw is `rng.random_range(0..len)` on a `ChaCha8Rng`; a draw equal
/// to the excluded index is rejected and redrawn. Draws are independent,
/// so the same index may appear more than once.
#[derive(Clone, Debug)]
pub struct NoiseSampler {
    rng: ChaCha8Rng,
}

impl NoiseSampler {
    pub fn new(seed: u64) -> Self {
        NoiseSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sample_indices(&mut self, len: usize, excluded: usize, k: usize, out: &mut Vec<usize>) -> Result<()> {
        out.clear();
        if k == 0 {
            return Ok(());
        }
        let valid = len - usize::from(excluded < len);
        if valid == 0 {
            return Err(Error::Sampling(format!(
                "corpus of {} sentences has no candidate besides pair {}",
                len, excluded
            )));
        }
        for _ in 0..k {
            let idx = loop {
                let idx = self.rng.random_range(0..len);
                if idx != excluded {
                    break idx;
                }
            };
            out.push(idx);
        }
        Ok(())
    }

    /// Draws `k` sentences from one side of `corpus`, never the one at
    /// `excluded_pair_index`.
    pub fn sample_noise<'c>(
        &mut self,
        corpus: &'c ParallelCorpus,
        side: Side,
        excluded_pair_index: usize,
        k: usize,
    ) -> Result<Vec<&'c Sentence>> {
        let mut idx = Vec::with_capacity(k);
        self.sample_indices(corpus.len(), excluded_pair_index, k, &mut idx)?;
        Ok(idx
            .into_iter()
            .map(|i| {
                let (a, b) = &corpus.pairs()[i];
                match side {
                    Side::A => a,
                    Side::B => b,
                }
            })
            .collect())
    }
}

/// Loss and sparse gradient of one aligned pair with its noise samples.
#[derive(Clone, Debug)]
pub struct PairGradient {
    pub loss: f64,
    /// Gradient w.r.t. the rows of the side-A table.
    pub grad_a: SparseGrad,
    /// Gradient w.r.t. the rows of the side-B table.
    pub grad_b: SparseGrad,
}

impl PairGradient {
    pub fn new(size_a: usize, size_b: usize, dim: usize) -> Self {
        PairGradient {
            loss: 0.0,
            grad_a: SparseGrad::new(size_a, dim),
            grad_b: SparseGrad::new(size_b, dim),
        }
    }

    pub fn clear(&mut self) {
        self.loss = 0.0;
        self.grad_a.clear();
        self.grad_b.clear();
    }

    pub fn is_empty(&self) -> bool {
        self.grad_a.is_empty() && self.grad_b.is_empty()
    }
}

/// Scratch buffers for evaluating hinge terms without allocating.
#[derive(Clone, Debug)]
pub(crate) struct HingeScratch {
    anchor: Vec<f64>,
    positive: Vec<f64>,
    noise: Vec<f64>,
    grad_anchor: Vec<f64>,
    grad_noise: Vec<f64>,
}

impl HingeScratch {
    pub(crate) fn new(dim: usize) -> Self {
        HingeScratch {
            anchor: vec![0.0; dim],
            positive: vec![0.0; dim],
            noise: vec![0.0; dim],
            grad_anchor: vec![0.0; dim],
            grad_noise: vec![0.0; dim],
        }
    }

    /// Sums `max(0, margin + ‖x − y‖² − ‖x − n‖²)` over the noise sentences,
    /// where `x` is the anchor root and `y` the aligned root. Noise sentences
    /// live in the same table as the aligned sentence.
    ///
    /// When gradient buffers are given, the gradient of every active hinge
    /// is scattered into them. A hinge at exactly zero contributes nothing.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn hinges(
        &mut self,
        anchor: &[u32],
        anchor_table: &EmbeddingTable,
        positive: &[u32],
        positive_table: &EmbeddingTable,
        noise: &[&[u32]],
        margin: f64,
        mut grads: Option<(&mut SparseGrad, &mut SparseGrad)>,
    ) -> f64 {
        if noise.is_empty() {
            return 0.0;
        }
        compose_into(anchor, anchor_table, &mut self.anchor);
        compose_into(positive, positive_table, &mut self.positive);
        let aligned = sq_dist(&self.anchor, &self.positive);

        let mut loss = 0.0;
        let mut active = 0usize;
        self.grad_anchor.fill(0.0);
        for n in noise {
            compose_into(n, positive_table, &mut self.noise);
            let hinge = margin + aligned - sq_dist(&self.anchor, &self.noise);
            if hinge <= 0.0 {
                continue;
            }
            loss += hinge;
            active += 1;
            if let Some((_, grad_positive)) = grads.as_mut() {
                // d/dx = 2(n − y), d/dn = 2(x − n)
                for j in 0..self.anchor.len() {
                    self.grad_anchor[j] += 2.0 * (self.noise[j] - self.positive[j]);
                    self.grad_noise[j] = 2.0 * (self.anchor[j] - self.noise[j]);
                }
                for &id in *n {
                    grad_positive.add(id, &self.grad_noise);
                }
            }
        }

        if let Some((grad_anchor, grad_positive)) = grads {
            if active > 0 {
                for &id in anchor {
                    grad_anchor.add(id, &self.grad_anchor);
                }
                // d/dy = 2(y − x) per active hinge
                let scale = 2.0 * active as f64;
                for j in 0..self.positive.len() {
                    self.grad_noise[j] = scale * (self.positive[j] - self.anchor[j]);
                }
                for &id in positive {
                    grad_positive.add(id, &self.grad_noise);
                }
            }
        }
        loss
    }
}

fn check_sentence(sentence: &Sentence, table: &EmbeddingTable) -> Result<()> {
    match sentence.ids().iter().find(|&&id| id as usize >= table.len()) {
        Some(&id) => Err(Error::Index { id, size: table.len() }),
        None => Ok(()),
    }
}

/// Loss and gradient for one aligned pair `(a, b)` against noise drawn from
/// the B side. Regularization is not included.
pub fn pair_loss_and_grad(
    a: &Sentence,
    b: &Sentence,
    noise: &[&Sentence],
    table_a: &EmbeddingTable,
    table_b: &EmbeddingTable,
    margin: f64,
) -> Result<PairGradient> {
    Error::check_len(table_a.dim(), table_b.dim())?;
    check_sentence(a, table_a)?;
    check_sentence(b, table_b)?;
    for n in noise {
        check_sentence(n, table_b)?;
    }
    let mut out = PairGradient::new(table_a.len(), table_b.len(), table_a.dim());
    let noise_ids: Vec<&[u32]> = noise.iter().map(|n| n.ids()).collect();
    let mut scratch = HingeScratch::new(table_a.dim());
    out.loss = scratch.hinges(
        a.ids(),
        table_a,
        b.ids(),
        table_b,
        &noise_ids,
        margin,
        Some((&mut out.grad_a, &mut out.grad_b)),
    );
    Ok(out)
}

/// Hyperparameters of the monitored objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParams {
    pub margin: f64,
    pub noise_count: usize,
    pub lambda: f64,
    /// Also draw noise from side A against `b`.
    pub symmetric_noise: bool,
}

/// Seed of the noise stream for pair `pair_index` of corpus `corpus_index`
/// during loss monitoring.
pub fn monitor_noise_seed(seed: u64, corpus_index: usize, pair_index: usize) -> u64 {
    seed::derive(seed, &[seed::MONITOR, corpus_index as u64, pair_index as u64])
}

/// Hinge loss of every pair with fixed per-pair noise, plus `(λ/2)‖θ‖²`.
///
/// Noise for pair `i` of corpus `c` comes from a [`NoiseSampler`] seeded with
/// [`monitor_noise_seed`]`(seed, c, i)`: `k` draws from side B, followed by
/// `k` draws from side A when symmetric noise is on. The value does not
/// depend on the rayon thread count.
pub fn corpora_loss(corpora: &[ParallelCorpus], model: &BiModel, params: &LossParams, seed: u64) -> Result<f64> {
    let mut total = 0.0;
    for (ci, corpus) in corpora.iter().enumerate() {
        let table_a = model.table(corpus.lang_a())?;
        let table_b = model.table(corpus.lang_b())?;
        Error::check_len(table_a.len(), corpus.vocab_a().len())?;
        Error::check_len(table_b.len(), corpus.vocab_b().len())?;
        let losses: Vec<f64> = (0..corpus.len())
            .into_par_iter()
            .map_init(
                || (HingeScratch::new(model.dim()), Vec::new()),
                |(scratch, idx), i| -> Result<f64> {
                    let mut sampler = NoiseSampler::new(monitor_noise_seed(seed, ci, i));
                    let (a, b) = &corpus.pairs()[i];
                    sampler.sample_indices(corpus.len(), i, params.noise_count, idx)?;
                    let noise: Vec<&[u32]> = idx.iter().map(|&j| corpus.pairs()[j].1.ids()).collect();
                    let mut loss =
                        scratch.hinges(a.ids(), table_a, b.ids(), table_b, &noise, params.margin, None);
                    if params.symmetric_noise {
                        sampler.sample_indices(corpus.len(), i, params.noise_count, idx)?;
                        let noise: Vec<&[u32]> = idx.iter().map(|&j| corpus.pairs()[j].0.ids()).collect();
                        loss += scratch.hinges(b.ids(), table_b, a.ids(), table_a, &noise, params.margin, None);
                    }
                    Ok(loss)
                },
            )
            .collect::<Result<_>>()?;
        total += losses.iter().sum::<f64>();
    }
    Ok(total + 0.5 * params.lambda * model.squared_norm())
}

/// Single-corpus form of [`corpora_loss`].
pub fn corpus_loss(corpus: &ParallelCorpus, model: &BiModel, params: &LossParams, seed: u64) -> Result<f64> {
    corpora_loss(std::slice::from_ref(corpus), model, params, seed)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::corpus::{build_vocabulary, Vocabulary};
    use crate::model::compose;
    use proptest::prelude::*;
    use rand::Rng;

    fn sent(ids: &[u32]) -> Sentence {
        Sentence::new(ids.to_vec()).unwrap()
    }

    #[test]
    fn e_dist_examples() {
        assert_eq!(e_dist(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(e_dist(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(), 2.0);
        assert_eq!(e_dist(&[3.0, -1.0], &[0.0, 3.0]).unwrap(), 9.0 + 16.0);
        assert!(matches!(e_dist(&[1.0], &[1.0, 2.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn e_noise_examples() {
        let margin = 4.0;
        // e_dist(a,n) = margin + 1 with a = b
        let n = [(margin + 1.0f64).sqrt(), 0.0];
        assert_eq!(e_noise(&[0.0, 0.0], &[0.0, 0.0], &n, margin).unwrap(), 0.0);
        assert_eq!(e_noise(&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0], margin).unwrap(), margin);
        // e_dist(a,b) = 10, e_dist(a,n) = 30
        let a = [0.0, 0.0];
        let b = [1.0, 3.0];
        let n = [3.0, f64::sqrt(21.0)];
        let v = e_noise(&a, &b, &n, 50.0).unwrap();
        assert!((v - 30.0).abs() < 1e-12);
        assert!(e_noise(&a, &b, &[1.0], 1.0).is_err());
    }

    fn toy_corpus(n: usize) -> ParallelCorpus {
        let words: Vec<String> = (0..n).map(|i| format!("w{}", i)).collect();
        let va = Arc::new(build_vocabulary(vec![words.clone()], 1, "en").unwrap());
        let vb = Arc::new(build_vocabulary(vec![words], 1, "de").unwrap());
        let pairs = (0..n as u32).map(|i| (sent(&[i]), sent(&[i]))).collect();
        ParallelCorpus::new(va, vb, pairs).unwrap()
    }

    #[test]
    fn sampler_edge_cases() {
        let mut s = NoiseSampler::new(1);
        let c = toy_corpus(1);
        assert!(s.sample_noise(&c, Side::B, 0, 0).unwrap().is_empty());
        assert!(matches!(s.sample_noise(&c, Side::B, 0, 1), Err(Error::Sampling(_))));
    }

    #[test]
    fn sampler_replays_documented_procedure() {
        let c = toy_corpus(100);
        let mut s = NoiseSampler::new(2024);
        let got: Vec<u32> = s
            .sample_noise(&c, Side::B, 17, 3)
            .unwrap()
            .iter()
            .map(|n| n.ids()[0])
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut expected = Vec::new();
        while expected.len() < 3 {
            let i: usize = rng.random_range(0..100);
            if i != 17 {
                expected.push(i as u32);
            }
        }
        assert_eq!(got, expected);
    }

    fn random_table(tag: &str, rows: usize, dim: usize, seed: u64) -> EmbeddingTable {
        EmbeddingTable::init_gaussian(tag, rows, dim, 1.0, seed).unwrap()
    }

    #[test]
    fn inactive_hinges_give_empty_gradient() {
        let ta = EmbeddingTable::from_rows("en", 1, &[vec![0.0]]).unwrap();
        let tb = EmbeddingTable::from_rows("de", 1, &[vec![0.0], vec![10.0]]).unwrap();
        let g = pair_loss_and_grad(&sent(&[0]), &sent(&[0]), &[&sent(&[1])], &ta, &tb, 1.0).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.is_empty());
    }

    #[test]
    fn boundary_hinge_uses_zero_subgradient() {
        // e_dist(a,n) = margin exactly, a = b
        let ta = EmbeddingTable::from_rows("en", 1, &[vec![0.0]]).unwrap();
        let tb = EmbeddingTable::from_rows("de", 1, &[vec![0.0], vec![2.0]]).unwrap();
        let g = pair_loss_and_grad(&sent(&[0]), &sent(&[0]), &[&sent(&[1])], &ta, &tb, 4.0).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.is_empty());
    }

    #[test]
    fn equal_roots_single_noise() {
        let ta = EmbeddingTable::from_rows("en", 2, &[vec![1.0, 0.5]]).unwrap();
        let tb = EmbeddingTable::from_rows("de", 2, &[vec![1.0, 0.5], vec![2.0, -0.5]]).unwrap();
        let margin = 5.0;
        let g = pair_loss_and_grad(&sent(&[0]), &sent(&[0]), &[&sent(&[1])], &ta, &tb, margin).unwrap();
        let d_an = 1.0 + 1.0;
        assert!((g.loss - (margin - d_an)).abs() < 1e-12);
        // ∂/∂a_root = 2(n − a)
        assert_eq!(g.grad_a.get(0).unwrap(), &[2.0, -2.0]);
        // b_root gets 2(b − a) = 0, noise gets 2(a − n)
        assert_eq!(g.grad_b.get(0).unwrap(), &[0.0, 0.0]);
        assert_eq!(g.grad_b.get(1).unwrap(), &[-2.0, 2.0]);
    }

    /// Loss of a pair from roots alone, as a reference for finite differences.
    fn reference_loss(
        a: &Sentence,
        b: &Sentence,
        noise: &[&Sentence],
        ta: &EmbeddingTable,
        tb: &EmbeddingTable,
        margin: f64,
    ) -> f64 {
        let ar = compose(a, ta).unwrap();
        let br = compose(b, tb).unwrap();
        noise
            .iter()
            .map(|n| e_noise(&ar, &br, &compose(n, tb).unwrap(), margin).unwrap())
            .sum()
    }

    #[test]
    fn small_instance_matches_finite_differences() {
        let mut ta = random_table("en", 4, 3, 11);
        let mut tb = random_table("de", 5, 3, 12);
        let a = sent(&[0, 3]);
        let b = sent(&[1, 1]);
        let n1 = sent(&[2, 4]);
        let n2 = sent(&[0, 1]);
        let noise = [&n1, &n2];
        let margin = 20.0;
        let g = pair_loss_and_grad(&a, &b, &noise, &ta, &tb, margin).unwrap();
        assert!(!g.is_empty());
        let h = 1e-5;
        for side in 0..2 {
            let grad = if side == 0 { &g.grad_a } else { &g.grad_b };
            for (id, row) in grad.iter() {
                for j in 0..3 {
                    let table = if side == 0 { &mut ta } else { &mut tb };
                    let orig = table.row(id)[j];
                    table.row_mut(id)[j] = orig + h;
                    let plus = reference_loss(&a, &b, &noise, &ta, &tb, margin);
                    let table = if side == 0 { &mut ta } else { &mut tb };
                    table.row_mut(id)[j] = orig - h;
                    let minus = reference_loss(&a, &b, &noise, &ta, &tb, margin);
                    let table = if side == 0 { &mut ta } else { &mut tb };
                    table.row_mut(id)[j] = orig;
                    let numeric = (plus - minus) / (2.0 * h);
                    let rel = (row[j] - numeric).abs() / row[j].abs().max(numeric.abs()).max(1e-8);
                    assert!(rel < 1e-5, "side {} id {} coord {}: {} vs {}", side, id, j, row[j], numeric);
                }
            }
        }
    }

    fn two_pair_corpus() -> (ParallelCorpus, BiModel) {
        let va: Vocabulary = build_vocabulary(vec![vec!["a", "b", "c"]], 1, "en").unwrap();
        let vb: Vocabulary = build_vocabulary(vec![vec!["x", "y"]], 1, "de").unwrap();
        let pairs = vec![(sent(&[0, 1]), sent(&[0])), (sent(&[2]), sent(&[1, 1]))];
        let corpus = ParallelCorpus::new(Arc::new(va), Arc::new(vb), pairs).unwrap();
        let mut model = BiModel::new(2).unwrap();
        model.add_table(random_table("en", 3, 2, 5)).unwrap();
        model.add_table(random_table("de", 2, 2, 6)).unwrap();
        (corpus, model)
    }

    #[test]
    fn corpus_loss_small_cases() {
        let (corpus, model) = two_pair_corpus();
        let empty = ParallelCorpus::new(corpus.vocab_a().clone(), corpus.vocab_b().clone(), vec![]).unwrap();
        let params = LossParams {
            margin: 1.0,
            noise_count: 3,
            lambda: 0.0,
            symmetric_noise: false,
        };
        assert_eq!(corpus_loss(&empty, &model, &params, 1).unwrap(), 0.0);

        let mut single = BiModel::new(1).unwrap();
        single
            .add_table(EmbeddingTable::from_rows("en", 1, &[vec![3.0]]).unwrap())
            .unwrap();
        single.add_table(EmbeddingTable::zeros("de", 0, 1).unwrap()).unwrap();
        let va = Arc::new(build_vocabulary(vec![vec!["a"]], 1, "en").unwrap());
        let vb = Arc::new(Vocabulary::empty("de"));
        let empty = ParallelCorpus::new(va, vb, vec![]).unwrap();
        let params = LossParams { lambda: 2.0, ..params };
        assert_eq!(corpus_loss(&empty, &single, &params, 1).unwrap(), 9.0);
    }

    #[test]
    fn corpus_loss_is_sum_of_pair_losses() {
        let (corpus, model) = two_pair_corpus();
        let params = LossParams {
            margin: 3.0,
            noise_count: 4,
            lambda: 0.5,
            symmetric_noise: false,
        };
        let seed = 99;
        let ta = model.table("en").unwrap();
        let tb = model.table("de").unwrap();
        let mut expected = 0.0;
        for (i, (a, b)) in corpus.pairs().iter().enumerate() {
            let mut s = NoiseSampler::new(monitor_noise_seed(seed, 0, i));
            let noise = s.sample_noise(&corpus, Side::B, i, 4).unwrap();
            expected += reference_loss(a, b, &noise, ta, tb, 3.0);
        }
        let reg: f64 = ta.as_slice().iter().chain(tb.as_slice()).map(|x| x * x).sum();
        expected += 0.25 * reg;
        let got = corpus_loss(&corpus, &model, &params, seed).unwrap();
        assert!((got - expected).abs() < 1e-9 * expected.abs().max(1.0));
    }

    #[test]
    fn symmetric_noise_adds_reverse_hinges() {
        let (corpus, model) = two_pair_corpus();
        let base = LossParams {
            margin: 50.0,
            noise_count: 2,
            lambda: 0.0,
            symmetric_noise: false,
        };
        let one = corpus_loss(&corpus, &model, &base, 3).unwrap();
        let both = corpus_loss(&corpus, &model, &LossParams { symmetric_noise: true, ..base }, 3).unwrap();
        assert!(both > one);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn e_dist_symmetric_nonnegative(
            (a, b) in (1usize..8).prop_flat_map(|d| (
                proptest::collection::vec(-100.0f64..100.0, d),
                proptest::collection::vec(-100.0f64..100.0, d),
            ))
        ) {
            let ab = e_dist(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, e_dist(&b, &a).unwrap());
            prop_assert_eq!(e_dist(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn hinge_nonnegative_and_inactive_beyond_margin(
            (a, b, n) in (1usize..6).prop_flat_map(|d| (
                proptest::collection::vec(-10.0f64..10.0, d),
                proptest::collection::vec(-10.0f64..10.0, d),
                proptest::collection::vec(-10.0f64..10.0, d),
            )),
            margin in 0.01f64..60.0,
        ) {
            let v = e_noise(&a, &b, &n, margin).unwrap();
            prop_assert!(v >= 0.0);
            let ab = e_dist(&a, &b).unwrap();
            let an = e_dist(&a, &n).unwrap();
            if an >= margin + ab {
                prop_assert_eq!(v, 0.0);
            } else {
                prop_assert!(v > 0.0);
            }
        }

        #[test]
        fn sampler_never_returns_excluded(
            seed in any::<u64>(),
            len in 2usize..40,
            excluded_raw in any::<usize>(),
            k in 0usize..20,
        ) {
            let excluded = excluded_raw % len;
            let mut s = NoiseSampler::new(seed);
            let mut out = Vec::new();
            s.sample_indices(len, excluded, k, &mut out).unwrap();
            prop_assert_eq!(out.len(), k);
            prop_assert!(out.iter().all(|&i| i != excluded && i < len));
        }
    }
}
