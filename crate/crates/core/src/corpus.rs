//! Parallel text ingestion: normalization, per-language vocabularies and
//! encoded sentence pairs.
//!
//! Input text is expected to be tokenized already. Normalization only
//! lowercases and splits on Unicode whitespace.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Lowercases a line and splits it on Unicode whitespace.
pub fn normalize_line(raw: &str) -> Vec<String> {
    raw.to_lowercase()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// Bijection between the surface tokens of one language and dense ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    language_tag: String,
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    counts: Vec<u64>,
}

impl Vocabulary {
    pub fn empty(language_tag: impl Into<String>) -> Self {
        Vocabulary {
            language_tag: language_tag.into(),
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
            counts: Vec::new(),
        }
    }

    fn push(&mut self, token: String, count: u64) -> Result<u32> {
        validate_token(&token)?;
        if self.token_to_id.contains_key(&token) {
            return Err(Error::Input(format!("duplicate token '{}'", token)));
        }
        let id = self.id_to_token.len() as u32;
        self.token_to_id.insert(token.clone(), id);
        self.id_to_token.push(token);
        self.counts.push(count);
        Ok(id)
    }

    pub fn language_tag(&self) -> &str {
        &self.language_tag
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn count(&self, id: u32) -> Option<u64> {
        self.counts.get(id as usize).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Maps tokens to ids, silently dropping tokens outside the vocabulary.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().filter_map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Result<Vec<&str>> {
        ids.iter()
            .map(|&id| {
                self.token(id).ok_or(Error::Index {
                    id,
                    size: self.len(),
                })
            })
            .collect()
    }

    /// Ids ordered by descending count, ties by ascending id.
    pub fn ids_by_frequency(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = (0..self.len() as u32).collect();
        ids.sort_by(|&a, &b| {
            self.counts[b as usize]
                .cmp(&self.counts[a as usize])
                .then(a.cmp(&b))
        });
        ids
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "#vocab v1 {} {}", self.language_tag, self.len())?;
        for (token, count) in self.id_to_token.iter().zip(&self.counts) {
            writeln!(out, "{}\t{}", token, count)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to a Vec cannot fail");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();

        let header = match lines.next() {
            Some(line) => line.map_err(|e| Error::io(path, e))?,
            None => return Err(Error::format(path, 1, "missing vocabulary header")),
        };
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.len() != 4 || fields[0] != "#vocab" || fields[1] != "v1" {
            return Err(Error::format(
                path,
                1,
                "expected header '#vocab v1 <language_tag> <size>'",
            ));
        }
        let size: usize = fields[3]
            .parse()
            .map_err(|_| Error::format(path, 1, "vocabulary size is not an integer"))?;

        let mut vocab = Vocabulary::empty(fields[2]);
        for (idx, line) in lines.enumerate() {
            let lineno = idx + 2;
            let line = line.map_err(|e| Error::io(path, e))?;
            let (token, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(path, lineno, "expected 'token<TAB>count'"))?;
            let count: u64 = count
                .parse()
                .map_err(|_| Error::format(path, lineno, "count is not an integer"))?;
            vocab
                .push(token.to_owned(), count)
                .map_err(|e| Error::format(path, lineno, e.to_string()))?;
        }
        if vocab.len() != size {
            return Err(Error::format(
                path,
                1,
                format!("header declares {} tokens, found {}", size, vocab.len()),
            ));
        }
        Ok(vocab)
    }
}

fn validate_token(token: &str) -> Result<()> {
    if token.is_empty() {
        return Err(Error::Input("empty token".into()));
    }
    if token.chars().any(char::is_whitespace) {
        return Err(Error::Input(format!("token '{}' contains whitespace", token)));
    }
    Ok(())
}

/// Builds a vocabulary from token sequences. Tokens seen at least
/// `min_count` times get ids in order of first occurrence.
pub fn build_vocabulary<I, L, S>(lines: I, min_count: u64, language_tag: &str) -> Result<Vocabulary>
where
    I: IntoIterator<Item = L>,
    L: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if min_count < 1 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    let mut first_seen: Vec<String> = Vec::new();
    let mut counts: HashMap<String, u64> = HashMap::new();
    for line in lines {
        for token in line {
            let token = token.as_ref();
            match counts.get_mut(token) {
                Some(c) => *c += 1,
                None => {
                    validate_token(token)?;
                    counts.insert(token.to_owned(), 1);
                    first_seen.push(token.to_owned());
                }
            }
        }
    }

    let mut vocab = Vocabulary::empty(language_tag);
    for token in first_seen {
        let count = counts[&token];
        if count >= min_count {
            vocab.push(token, count)?;
        }
    }
    Ok(vocab)
}

/// A non-empty sequence of word ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Sentence(Vec<u32>);

impl Sentence {
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Input("sentence must contain at least one token".into()));
        }
        Ok(Sentence(ids))
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn check_ids(&self, vocab: &Vocabulary) -> Result<()> {
        match self.0.iter().find(|&&id| id as usize >= vocab.len()) {
            Some(&id) => Err(Error::Index {
                id,
                size: vocab.len(),
            }),
            None => Ok(()),
        }
    }
}

/// Aligned sentence pairs for one language pair.
#[derive(Clone, Debug)]
pub struct ParallelCorpus {
    vocab_a: Arc<Vocabulary>,
    vocab_b: Arc<Vocabulary>,
    pairs: Vec<(Sentence, Sentence)>,
}

impl ParallelCorpus {
    pub fn new(
        vocab_a: Arc<Vocabulary>,
        vocab_b: Arc<Vocabulary>,
        pairs: Vec<(Sentence, Sentence)>,
    ) -> Result<Self> {
        if vocab_a.language_tag() == vocab_b.language_tag() {
            return Err(Error::Config(format!(
                "both sides of a parallel corpus use language '{}'",
                vocab_a.language_tag()
            )));
        }
        for (a, b) in &pairs {
            a.check_ids(&vocab_a)?;
            b.check_ids(&vocab_b)?;
        }
        Ok(ParallelCorpus {
            vocab_a,
            vocab_b,
            pairs,
        })
    }

    pub fn lang_a(&self) -> &str {
        self.vocab_a.language_tag()
    }

    pub fn lang_b(&self) -> &str {
        self.vocab_b.language_tag()
    }

    pub fn vocab_a(&self) -> &Arc<Vocabulary> {
        &self.vocab_a
    }

    pub fn vocab_b(&self) -> &Arc<Vocabulary> {
        &self.vocab_b
    }

    pub fn pairs(&self) -> &[(Sentence, Sentence)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Outcome of encoding raw parallel text.
#[derive(Clone, Debug)]
pub struct LoadedCorpus {
    pub corpus: ParallelCorpus,
    /// Pairs dropped because either side was empty after encoding.
    pub removed: usize,
}

/// Encodes line-aligned text, dropping out-of-vocabulary tokens and any pair
/// with an empty side.
pub fn encode_parallel<S: AsRef<str>>(
    lines_a: &[S],
    lines_b: &[S],
    vocab_a: Arc<Vocabulary>,
    vocab_b: Arc<Vocabulary>,
) -> Result<LoadedCorpus> {
    if lines_a.len() != lines_b.len() {
        return Err(Error::Alignment {
            left_path: "<memory>".into(),
            right_path: "<memory>".into(),
            left: lines_a.len(),
            right: lines_b.len(),
        });
    }
    let mut pairs = Vec::with_capacity(lines_a.len());
    let mut removed = 0;
    for (la, lb) in lines_a.iter().zip(lines_b) {
        let a = vocab_a.encode(&normalize_line(la.as_ref()));
        let b = vocab_b.encode(&normalize_line(lb.as_ref()));
        if a.is_empty() || b.is_empty() {
            removed += 1;
            continue;
        }
        pairs.push((Sentence(a), Sentence(b)));
    }
    Ok(LoadedCorpus {
        corpus: ParallelCorpus::new(vocab_a, vocab_b, pairs)?,
        removed,
    })
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))
}

/// Reads two line-aligned files and encodes them as a parallel corpus.
pub fn load_parallel(
    file_a: &Path,
    file_b: &Path,
    vocab_a: Arc<Vocabulary>,
    vocab_b: Arc<Vocabulary>,
) -> Result<LoadedCorpus> {
    let lines_a = read_lines(file_a)?;
    let lines_b = read_lines(file_b)?;
    if lines_a.len() != lines_b.len() {
        return Err(Error::Alignment {
            left_path: file_a.to_owned(),
            right_path: file_b.to_owned(),
            left: lines_a.len(),
            right: lines_b.len(),
        });
    }
    let loaded = encode_parallel(&lines_a, &lines_b, vocab_a, vocab_b)?;
    if loaded.removed > 0 {
        log::info!(
            "{} / {}: removed {} pairs with an empty side",
            file_a.display(),
            file_b.display(),
            loaded.removed
        );
    }
    Ok(loaded)
}
