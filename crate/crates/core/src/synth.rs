//! Synthetic multilingual data with known ground truth.
//!
//! Language A sentences are drawn from a Zipfian unigram distribution over
//! `vocab_size` words; other languages are exact tokenwise images of them
//! under seeded random bijections. Word `i` of language `xx` is spelled
//! `xx_i` before permutation.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::{LabelMap, RawDocument};
use crate::corpus::{build_vocabulary, encode_parallel, normalize_line, ParallelCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub pairs: usize,
    /// Exponent of the Zipfian word distribution.
    pub zipf_exponent: f64,
    pub classes: usize,
    pub class_tokens: usize,
    /// Probability that a document token is drawn from its class's set.
    pub class_token_rate: f64,
    pub doc_min_sentences: usize,
    pub doc_max_sentences: usize,
    pub languages: Vec<String>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            vocab_size: 500,
            min_len: 3,
            max_len: 12,
            pairs: 10_000,
            zipf_exponent: 1.0,
            classes: 4,
            class_tokens: 10,
            class_token_rate: 0.25,
            doc_min_sentences: 3,
            doc_max_sentences: 8,
            languages: vec!["aa".into(), "bb".into(), "cc".into()],
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Config(format!(
                "vocab_size must be at least 2 for contrastive training, got {}",
                self.vocab_size
            )));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "invalid sentence length range [{}, {}]",
                self.min_len, self.max_len
            )));
        }
        if self.doc_min_sentences == 0 || self.doc_min_sentences > self.doc_max_sentences {
            return Err(Error::Config("invalid document length range".into()));
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return Err(Error::Config("zipf_exponent must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.class_token_rate) {
            return Err(Error::Config("class_token_rate must be in [0, 1]".into()));
        }
        if self.classes * self.class_tokens > self.vocab_size {
            return Err(Error::Config("class token sets do not fit in the vocabulary".into()));
        }
        let mut seen = HashSet::new();
        for tag in &self.languages {
            if tag.is_empty() || tag.chars().any(|c| c.is_whitespace() || c.is_uppercase()) || !seen.insert(tag) {
                return Err(Error::Config(format!("invalid or duplicate language tag '{}'", tag)));
            }
        }
        Ok(())
    }

    fn language(&self, i: usize) -> Result<&str> {
        self.languages
            .get(i)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("spec needs at least {} language tags", i + 1)))
    }

    fn rng(&self, stream: &[u64]) -> ChaCha8Rng {
        let mut path = vec![seed::SYNTH];
        path.extend_from_slice(stream);
        ChaCha8Rng::seed_from_u64(seed::derive(self.seed, &path))
    }

    fn zipf(&self) -> WeightedIndex<f64> {
        let weights = (0..self.vocab_size).map(|r| ((r + 1) as f64).powf(-self.zipf_exponent));
        WeightedIndex::new(weights).expect("vocab_size >= 1 with positive weights")
    }

    /// Probability of word `i` under the background distribution.
    pub fn word_probability(&self, i: usize) -> f64 {
        let z: f64 = (0..self.vocab_size).map(|r| ((r + 1) as f64).powf(-self.zipf_exponent)).sum();
        ((i + 1) as f64).powf(-self.zipf_exponent) / z
    }

    fn sentence(&self, rng: &mut ChaCha8Rng, zipf: &WeightedIndex<f64>) -> Vec<usize> {
        let len = rng.random_range(self.min_len..=self.max_len);
        (0..len).map(|_| zipf.sample(rng)).collect()
    }
}

fn spell(tag: &str, words: &[usize]) -> String {
    let mut out = String::new();
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(tag);
        out.push('_');
        out.push_str(&w.to_string());
    }
    out
}

/// A total one-to-one mapping between the tokens of two languages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bijection {
    pub from: String,
    pub to: String,
    forward: HashMap<String, String>,
}

impl Bijection {
    fn from_permutation(from: &str, to: &str, perm: &[usize]) -> Self {
        let forward = perm
            .iter()
            .enumerate()
            .map(|(i, &p)| (spell(from, &[i]), spell(to, &[p])))
            .collect();
        Bijection {
            from: from.to_owned(),
            to: to.to_owned(),
            forward,
        }
    }

    pub fn get(&self, token: &str) -> Option<&str> {
        self.forward.get(token).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    /// All `(source, target)` pairs ordered by the source word index.
    pub fn pairs(&self) -> Vec<(&str, &str)> {
        let mut pairs: Vec<(&str, &str)> = self.forward.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        pairs.sort_by_key(|(a, _)| {
            let idx = a.rsplit('_').next().and_then(|i| i.parse::<usize>().ok());
            (idx, *a)
        });
        pairs
    }

    pub fn inverse(&self) -> Bijection {
        Bijection {
            from: self.to.clone(),
            to: self.from.clone(),
            forward: self.forward.iter().map(|(a, b)| (b.clone(), a.clone())).collect(),
        }
    }

    /// `other ∘ self`: maps through `self`, then `other`.
    pub fn then(&self, other: &Bijection) -> Result<Bijection> {
        if self.to != other.from {
            return Err(Error::Input(format!(
                "cannot chain {}->{} with {}->{}",
                self.from, self.to, other.from, other.to
            )));
        }
        let forward = self
            .forward
            .iter()
            .map(|(a, b)| {
                other
                    .get(b)
                    .map(|c| (a.clone(), c.to_owned()))
                    .ok_or_else(|| Error::Input(format!("'{}' has no image", b)))
            })
            .collect::<Result<_>>()?;
        Ok(Bijection {
            from: self.from.clone(),
            to: other.to.clone(),
            forward,
        })
    }

    /// Translates a whitespace-separated line tokenwise.
    pub fn translate_line(&self, line: &str) -> Result<String> {
        normalize_line(line)
            .iter()
            .map(|t| {
                self.get(t)
                    .map(str::to_owned)
                    .ok_or_else(|| Error::Lookup {
                        kind: "token",
                        name: t.clone(),
                    })
            })
            .collect::<Result<Vec<_>>>()
            .map(|v| v.join(" "))
    }
}

fn random_bijection(spec: &SyntheticSpec, from: &str, to: &str, stream: u64) -> Bijection {
    let mut perm: Vec<usize> = (0..spec.vocab_size).collect();
    perm.shuffle(&mut spec.rng(&[stream]));
    Bijection::from_permutation(from, to, &perm)
}

/// Raw and encoded parallel text with its vocabularies.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub lines_a: Vec<String>,
    pub lines_b: Vec<String>,
    pub corpus: ParallelCorpus,
}

fn encode(lines_a: Vec<String>, lines_b: Vec<String>, vocab_a: Arc<Vocabulary>, lang_b: &str) -> Result<SyntheticCorpus> {
    let vocab_b = Arc::new(build_vocabulary(lines_b.iter().map(|l| normalize_line(l)), 1, lang_b)?);
    let loaded = encode_parallel(&lines_a, &lines_b, vocab_a, vocab_b)?;
    debug_assert_eq!(loaded.removed, 0);
    Ok(SyntheticCorpus {
        lines_a,
        lines_b,
        corpus: loaded.corpus,
    })
}

#[derive(Clone, Debug)]
pub struct BijectivePair {
    pub data: SyntheticCorpus,
    /// Ground truth from language A tokens to language B tokens.
    pub bijection: Bijection,
}

/// A corpus whose B side is the tokenwise image of its A side.
pub fn gen_bijective_pair(spec: &SyntheticSpec) -> Result<BijectivePair> {
    spec.validate()?;
    let (lang_a, lang_b) = (spec.language(0)?, spec.language(1)?);
    let bijection = random_bijection(spec, lang_a, lang_b, 1);
    let zipf = spec.zipf();
    let mut rng = spec.rng(&[2]);
    let mut lines_a = Vec::with_capacity(spec.pairs);
    let mut lines_b = Vec::with_capacity(spec.pairs);
    for _ in 0..spec.pairs {
        let a = spell(lang_a, &spec.sentence(&mut rng, &zipf));
        lines_b.push(bijection.translate_line(&a)?);
        lines_a.push(a);
    }
    let vocab_a = Arc::new(build_vocabulary(lines_a.iter().map(|l| normalize_line(l)), 1, lang_a)?);
    Ok(BijectivePair {
        data: encode(lines_a, lines_b, vocab_a, lang_b)?,
        bijection,
    })
}

#[derive(Clone, Debug)]
pub struct PivotTriad {
    pub ab: SyntheticCorpus,
    pub ac: SyntheticCorpus,
    pub a_to_b: Bijection,
    pub a_to_c: Bijection,
    /// Ground truth between the two non-pivot languages.
    pub b_to_c: Bijection,
}

/// Two corpora sharing pivot language A, with disjoint A sentences and no
/// direct B–C pairs.
pub fn gen_pivot_triad(spec: &SyntheticSpec) -> Result<PivotTriad> {
    spec.validate()?;
    let (lang_a, lang_b, lang_c) = (spec.language(0)?, spec.language(1)?, spec.language(2)?);
    let a_to_b = random_bijection(spec, lang_a, lang_b, 1);
    let a_to_c = random_bijection(spec, lang_a, lang_c, 3);
    let zipf = spec.zipf();
    let mut rng = spec.rng(&[4]);

    let mut first: Vec<String> = Vec::with_capacity(spec.pairs);
    let mut seen: HashSet<String> = HashSet::new();
    for _ in 0..spec.pairs {
        let a = spell(lang_a, &spec.sentence(&mut rng, &zipf));
        seen.insert(a.clone());
        first.push(a);
    }
    let mut second: Vec<String> = Vec::with_capacity(spec.pairs);
    let mut attempts = 0usize;
    while second.len() < spec.pairs {
        attempts += 1;
        if attempts > 100 * spec.pairs.max(1) {
            return Err(Error::Config("sentence space too small for disjoint corpora".into()));
        }
        let a = spell(lang_a, &spec.sentence(&mut rng, &zipf));
        if !seen.contains(&a) {
            second.push(a);
        }
    }

    let vocab_a = Arc::new(build_vocabulary(
        first.iter().chain(&second).map(|l| normalize_line(l)),
        1,
        lang_a,
    )?);
    let lines_b = first.iter().map(|l| a_to_b.translate_line(l)).collect::<Result<Vec<_>>>()?;
    let lines_c = second.iter().map(|l| a_to_c.translate_line(l)).collect::<Result<Vec<_>>>()?;
    let b_to_c = a_to_b.inverse().then(&a_to_c)?;
    Ok(PivotTriad {
        ab: encode(first, lines_b, vocab_a.clone(), lang_b)?,
        ac: encode(second, lines_c, vocab_a, lang_c)?,
        a_to_b,
        a_to_c,
        b_to_c,
    })
}

/// Labeled documents in language A.
#[derive(Clone, Debug)]
pub struct LabeledSet {
    pub docs: Vec<RawDocument>,
    pub labels: LabelMap,
    /// Word indices (before spelling) of each class's indicative set.
    pub class_words: Vec<Vec<usize>>,
}

/// The disjoint class-indicative word sets, drawn from words ranked 10 and
/// below in frequency so that each is well represented in the corpus.
pub fn class_word_sets(spec: &SyntheticSpec) -> Vec<Vec<usize>> {
    let lo = 10.min(spec.vocab_size - spec.classes * spec.class_tokens);
    let mut pool: Vec<usize> = (lo..spec.vocab_size).collect();
    pool.truncate((spec.classes * spec.class_tokens * 3).max(spec.classes * spec.class_tokens));
    pool.shuffle(&mut spec.rng(&[5]));
    pool.chunks(spec.class_tokens.max(1))
        .take(spec.classes)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Generates `count` documents in language A with balanced classes
/// (document `i` has class `i mod classes`). `stream` selects an
/// independent random stream so train and test sets differ.
pub fn gen_labeled_docs(spec: &SyntheticSpec, count: usize, stream: u64) -> Result<LabeledSet> {
    spec.validate()?;
    if spec.classes < 2 {
        return Err(Error::Config("need at least 2 classes".into()));
    }
    let lang = spec.language(0)?;
    let class_words = class_word_sets(spec);
    let labels = LabelMap::new((0..spec.classes).map(|c| format!("class{}", c)).collect())?;
    let zipf = spec.zipf();
    let mut rng = spec.rng(&[6, stream]);
    let docs = (0..count)
        .map(|i| {
            let class = i % spec.classes;
            let n = rng.random_range(spec.doc_min_sentences..=spec.doc_max_sentences);
            let sentences = (0..n)
                .map(|_| {
                    let len = rng.random_range(spec.min_len..=spec.max_len);
                    let words: Vec<usize> = (0..len)
                        .map(|_| {
                            if rng.random::<f64>() < spec.class_token_rate {
                                class_words[class][rng.random_range(0..class_words[class].len())]
                            } else {
                                zipf.sample(&mut rng)
                            }
                        })
                        .collect();
                    spell(lang, &words)
                })
                .collect();
            RawDocument {
                label: labels.name(class).unwrap().to_owned(),
                sentences,
            }
        })
        .collect();
    Ok(LabeledSet {
        docs,
        labels,
        class_words,
    })
}

pub fn translate_documents(docs: &[RawDocument], bijection: &Bijection) -> Result<Vec<RawDocument>> {
    docs.iter()
        .map(|d| {
            Ok(RawDocument {
                label: d.label.clone(),
                sentences: d
                    .sentences
                    .iter()
                    .map(|s| bijection.translate_line(s))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            vocab_size: 50,
            pairs: 200,
            class_tokens: 5,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn degenerate_vocabulary_rejected() {
        let spec = SyntheticSpec {
            vocab_size: 1,
            ..small()
        };
        assert!(matches!(gen_bijective_pair(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn bijective_pair_is_reproducible_and_length_preserving() {
        let a = gen_bijective_pair(&small()).unwrap();
        let b = gen_bijective_pair(&small()).unwrap();
        assert_eq!(a.data.lines_a, b.data.lines_a);
        assert_eq!(a.data.lines_b, b.data.lines_b);
        assert_eq!(a.bijection, b.bijection);
        assert_eq!(a.data.corpus.len(), 200);
        for ((sa, sb), (la, lb)) in a.data.corpus.pairs().iter().zip(a.data.lines_a.iter().zip(&a.data.lines_b)) {
            assert_eq!(sa.len(), sb.len());
            assert!((3..=12).contains(&sa.len()));
            // B is the tokenwise image of A
            let mapped: Vec<&str> = la.split(' ').map(|t| a.bijection.get(t).unwrap()).collect();
            assert_eq!(mapped.join(" "), *lb);
        }
        assert_eq!(a.bijection.len(), 50);
    }

    #[test]
    fn pivot_triad_structure() {
        let spec = small();
        let t = gen_pivot_triad(&spec).unwrap();
        assert_eq!(t.ab.corpus.len(), spec.pairs);
        assert_eq!(t.ac.corpus.len(), spec.pairs);
        assert_eq!(t.ab.corpus.lang_a(), "aa");
        assert_eq!(t.ac.corpus.lang_b(), "cc");
        assert!(Arc::ptr_eq(t.ab.corpus.vocab_a(), t.ac.corpus.vocab_a()));
        let first: HashSet<&String> = t.ab.lines_a.iter().collect();
        assert!(t.ac.lines_a.iter().all(|l| !first.contains(l)));
        assert_eq!(t.b_to_c.len(), spec.vocab_size);
        for i in 0..spec.vocab_size {
            let a = spell("aa", &[i]);
            let b = t.a_to_b.get(&a).unwrap();
            assert_eq!(t.b_to_c.get(b), t.a_to_c.get(&a));
        }
    }

    #[test]
    fn class_sets_are_disjoint() {
        let spec = SyntheticSpec::default();
        let sets = class_word_sets(&spec);
        assert_eq!(sets.len(), spec.classes);
        let all: HashSet<usize> = sets.iter().flatten().copied().collect();
        assert_eq!(all.len(), spec.classes * spec.class_tokens);
    }

    #[test]
    fn labeled_docs_count_and_class_rate() {
        let spec = SyntheticSpec::default();
        let set = gen_labeled_docs(&spec, 400, 0).unwrap();
        assert_eq!(set.docs.len(), 400);
        assert_eq!(gen_labeled_docs(&spec, 400, 0).unwrap().docs, set.docs);
        assert_ne!(gen_labeled_docs(&spec, 400, 1).unwrap().docs, set.docs);

        for class in 0..spec.classes {
            let words: HashSet<String> = set.class_words[class].iter().map(|&w| spell("aa", &[w])).collect();
            let background: f64 = set.class_words[class].iter().map(|&w| spec.word_probability(w)).sum();
            let expected = spec.class_token_rate + (1.0 - spec.class_token_rate) * background;
            let (mut hits, mut total) = (0usize, 0usize);
            for doc in set.docs.iter().filter(|d| d.label == format!("class{}", class)) {
                for s in &doc.sentences {
                    for t in s.split(' ') {
                        total += 1;
                        hits += usize::from(words.contains(t));
                    }
                }
            }
            let observed = hits as f64 / total as f64;
            let sigma = (expected * (1.0 - expected) / total as f64).sqrt();
            assert!((observed - expected).abs() < 4.0 * sigma, "class {}: {} vs {}", class, observed, expected);
        }
    }

    #[test]
    fn translation_maps_every_token() {
        let spec = small();
        let pair = gen_bijective_pair(&spec).unwrap();
        let set = gen_labeled_docs(&spec, 8, 0).unwrap();
        let translated = translate_documents(&set.docs, &pair.bijection).unwrap();
        for (src, dst) in set.docs.iter().zip(&translated) {
            assert_eq!(src.label, dst.label);
            for (s, t) in src.sentences.iter().zip(&dst.sentences) {
                assert_eq!(s.split(' ').count(), t.split(' ').count());
                assert!(t.split(' ').all(|tok| tok.starts_with("bb_")));
            }
        }
    }
}
