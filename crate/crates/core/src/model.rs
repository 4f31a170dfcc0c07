//! Per-language embedding tables and the additive composition model.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::Sentence;
use crate::error::{Error, Result};

const MODEL_MAGIC: &[u8; 6] = b"BICVM1";

/// Word vectors for one language, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    language_tag: String,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(language_tag: impl Into<String>, vocab_size: usize, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        Ok(EmbeddingTable {
            language_tag: language_tag.into(),
            dim,
            data: vec![0.0; vocab_size * dim],
        })
    }

    /// Builds a table from explicit rows; every row must have length `dim`.
    pub fn from_rows(language_tag: impl Into<String>, dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut table = Self::zeros(language_tag, rows.len(), dim)?;
        for (i, row) in rows.iter().enumerate() {
            Error::check_len(dim, row.len())?;
            table.row_mut(i as u32).copy_from_slice(row);
        }
        Ok(table)
    }

    /// Draws every entry i.i.d. from N(0, std_dev²).
    pub fn init_gaussian(
        language_tag: impl Into<String>,
        vocab_size: usize,
        dim: usize,
        std_dev: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(std_dev > 0.0 && std_dev.is_finite()) {
            return Err(Error::Config(format!("init std_dev must be positive, got {}", std_dev)));
        }
        let mut table = Self::zeros(language_tag, vocab_size, dim)?;
        let normal = Normal::new(0.0, std_dev).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for x in table.data.iter_mut() {
            *x = normal.sample(&mut rng);
        }
        Ok(table)
    }

    pub fn language_tag(&self) -> &str {
        &self.language_tag
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, id: u32) -> &[f64] {
        let start = id as usize * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn row_mut(&mut self, id: u32) -> &mut [f64] {
        let start = id as usize * self.dim;
        &mut self.data[start..start + self.dim]
    }

    pub fn get_row(&self, id: u32) -> Result<&[f64]> {
        if (id as usize) < self.len() {
            Ok(self.row(id))
        } else {
            Err(Error::Index { id, size: self.len() })
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        match ids.iter().find(|&&id| id as usize >= self.len()) {
            Some(&id) => Err(Error::Index { id, size: self.len() }),
            None => Ok(()),
        }
    }
}

/// Sum of the embedding rows of all tokens in the sentence.
pub fn compose(sentence: &Sentence, table: &EmbeddingTable) -> Result<Vec<f64>> {
    table.check_ids(sentence.ids())?;
    let mut root = vec![0.0; table.dim()];
    compose_into(sentence.ids(), table, &mut root);
    Ok(root)
}

/// Unchecked variant of [`compose`] writing into `out`. Panics on an id out
/// of range.
pub(crate) fn compose_into(ids: &[u32], table: &EmbeddingTable, out: &mut [f64]) {
    out.fill(0.0);
    for &id in ids {
        for (o, x) in out.iter_mut().zip(table.row(id)) {
            *o += x;
        }
    }
}

/// Adds `root_grad` to the accumulator slot of every token occurrence.
///
/// The Jacobian of an additive root w.r.t. each word vector is the identity,
/// so a word appearing twice receives the gradient twice.
pub fn scatter_gradient(sentence: &Sentence, root_grad: &[f64], acc: &mut SparseGrad) -> Result<()> {
    Error::check_len(acc.dim(), root_grad.len())?;
    if let Some(&id) = sentence.ids().iter().find(|&&id| id as usize >= acc.capacity()) {
        return Err(Error::Index { id, size: acc.capacity() });
    }
    for &id in sentence.ids() {
        acc.add(id, root_grad);
    }
    Ok(())
}

/// Sparse per-row gradient buffer for one table.
///
/// Rows are kept in first-touch order so that iteration is deterministic.
/// Clearing only resets the rows that were touched.
#[derive(Clone, Debug)]
pub struct SparseGrad {
    dim: usize,
    slots: Vec<u32>,
    rows: Vec<u32>,
    values: Vec<f64>,
}

const EMPTY_SLOT: u32 = u32::MAX;

impl SparseGrad {
    pub fn new(vocab_size: usize, dim: usize) -> Self {
        SparseGrad {
            dim,
            slots: vec![EMPTY_SLOT; vocab_size],
            rows: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of rows this buffer can address.
    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    /// Returns the slot for `id`, creating a zero row if needed.
    pub fn touch(&mut self, id: u32) -> &mut [f64] {
        let slot = match self.slots[id as usize] {
            EMPTY_SLOT => {
                let slot = self.rows.len() as u32;
                self.slots[id as usize] = slot;
                self.rows.push(id);
                self.values.resize(self.values.len() + self.dim, 0.0);
                slot
            }
            slot => slot,
        } as usize;
        &mut self.values[slot * self.dim..(slot + 1) * self.dim]
    }

    pub fn add(&mut self, id: u32, grad: &[f64]) {
        for (v, g) in self.touch(id).iter_mut().zip(grad) {
            *v += g;
        }
    }

    pub fn get(&self, id: u32) -> Option<&[f64]> {
        match self.slots.get(id as usize) {
            Some(&EMPTY_SLOT) | None => None,
            Some(&slot) => {
                let slot = slot as usize;
                Some(&self.values[slot * self.dim..(slot + 1) * self.dim])
            }
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.rows
            .iter()
            .copied()
            .zip(self.values.chunks_exact(self.dim))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (u32, &mut [f64])> {
        self.rows
            .iter()
            .copied()
            .zip(self.values.chunks_exact_mut(self.dim))
    }

    pub fn clear(&mut self) {
        for &id in &self.rows {
            self.slots[id as usize] = EMPTY_SLOT;
        }
        self.rows.clear();
        self.values.clear();
    }
}

/// The union of all per-language tables trained jointly.
#[derive(Clone, Debug, PartialEq)]
pub struct BiModel {
    dim: usize,
    tables: Vec<EmbeddingTable>,
}

impl BiModel {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        Ok(BiModel { dim, tables: Vec::new() })
    }

    pub fn add_table(&mut self, table: EmbeddingTable) -> Result<usize> {
        if table.dim() != self.dim {
            return Err(Error::Config(format!(
                "table '{}' has dimension {}, model uses {}",
                table.language_tag(),
                table.dim(),
                self.dim
            )));
        }
        if self.index_of(table.language_tag()).is_some() {
            return Err(Error::Config(format!(
                "duplicate table for language '{}'",
                table.language_tag()
            )));
        }
        self.tables.push(table);
        Ok(self.tables.len() - 1)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tables(&self) -> &[EmbeddingTable] {
        &self.tables
    }

    pub(crate) fn tables_mut(&mut self) -> &mut [EmbeddingTable] {
        &mut self.tables
    }

    pub fn index_of(&self, tag: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.language_tag() == tag)
    }

    pub fn table(&self, tag: &str) -> Result<&EmbeddingTable> {
        self.index_of(tag)
            .map(|i| &self.tables[i])
            .ok_or_else(|| Error::Lookup {
                kind: "language",
                name: tag.to_owned(),
            })
    }

    pub fn table_mut(&mut self, tag: &str) -> Result<&mut EmbeddingTable> {
        match self.index_of(tag) {
            Some(i) => Ok(&mut self.tables[i]),
            None => Err(Error::Lookup {
                kind: "language",
                name: tag.to_owned(),
            }),
        }
    }

    /// ‖θ‖² over all tables.
    pub fn squared_norm(&self) -> f64 {
        self.tables.iter().map(EmbeddingTable::squared_norm).sum()
    }

    /// Writes the binary model container. Values are stored as little-endian
    /// 32-bit floats.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(MODEL_MAGIC)?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.tables.len() as u32).to_le_bytes())?;
        for table in &self.tables {
            let tag = table.language_tag().as_bytes();
            out.write_all(&(tag.len() as u32).to_le_bytes())?;
            out.write_all(tag)?;
            out.write_all(&(table.len() as u32).to_le_bytes())?;
            for &x in table.as_slice() {
                out.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write(&mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read<R: Read>(mut input: R) -> std::io::Result<Self> {
        use std::io::{Error as IoError, ErrorKind};
        let bad = |msg: &str| IoError::new(ErrorKind::InvalidData, msg.to_owned());

        let mut magic = [0u8; 6];
        input.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(bad("not a model file (bad magic)"));
        }
        let dim = read_u32(&mut input)? as usize;
        let count = read_u32(&mut input)? as usize;
        let mut model = BiModel::new(dim).map_err(|e| bad(&e.to_string()))?;
        for _ in 0..count {
            let tag_len = read_u32(&mut input)? as usize;
            let mut tag = vec![0u8; tag_len];
            input.read_exact(&mut tag)?;
            let tag = String::from_utf8(tag).map_err(|_| bad("language tag is not UTF-8"))?;
            let rows = read_u32(&mut input)? as usize;
            let mut table = EmbeddingTable::zeros(tag, rows, dim).map_err(|e| bad(&e.to_string()))?;
            let mut buf = [0u8; 4];
            for x in table.data.iter_mut() {
                input.read_exact(&mut buf)?;
                *x = f32::from_le_bytes(buf) as f64;
            }
            model.add_table(table).map_err(|e| bad(&e.to_string()))?;
        }
        let mut rest = [0u8; 1];
        if input.read(&mut rest)? != 0 {
            return Err(bad("trailing bytes after last table"));
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file)).map_err(|e| Error::io(path, e))
    }
}

fn read_u32<R: Read>(input: &mut R) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Writes word vectors in the common text format: a `<count> <dim>` header,
/// then `token v_1 ... v_d` per line.
pub fn write_text_embeddings<W: Write, S: AsRef<str>>(
    tokens: &[S],
    table: &EmbeddingTable,
    mut out: W,
) -> Result<()> {
    Error::check_len(table.len(), tokens.len())?;
    let io = |e| Error::io("<embedding export>", e);
    writeln!(out, "{} {}", table.len(), table.dim()).map_err(io)?;
    for (id, token) in tokens.iter().enumerate() {
        write!(out, "{}", token.as_ref()).map_err(io)?;
        for &x in table.row(id as u32) {
            write!(out, " {}", x as f32).map_err(io)?;
        }
        writeln!(out).map_err(io)?;
    }
    Ok(())
}

/// Reads the text format produced by [`write_text_embeddings`].
pub fn read_text_embeddings(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(path, 1, "missing header"))?
        .map_err(|e| Error::io(path, e))?;
    let mut fields = header.split_whitespace().map(str::parse::<usize>);
    let (count, dim) = match (fields.next(), fields.next(), fields.next()) {
        (Some(Ok(c)), Some(Ok(d)), None) => (c, d),
        _ => return Err(Error::format(path, 1, "expected '<count> <dim>'")),
    };
    let mut tokens = Vec::with_capacity(count);
    let mut vectors = Vec::with_capacity(count);
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split(' ');
        let token = parts.next().unwrap_or_default().to_owned();
        let values = parts
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::format(path, lineno, "malformed float"))?;
        if values.len() != dim {
            return Err(Error::format(
                path,
                lineno,
                format!("expected {} values, found {}", dim, values.len()),
            ));
        }
        tokens.push(token);
        vectors.push(values);
    }
    if tokens.len() != count {
        return Err(Error::format(
            path,
            1,
            format!("header declares {} vectors, found {}", count, tokens.len()),
        ));
    }
    Ok((tokens, vectors))
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Ranks every row of `table` by cosine similarity to `query`, descending,
/// ties by ascending id.
pub fn nearest_neighbors(query: &[f64], table: &EmbeddingTable, top_k: usize) -> Result<Vec<(u32, f64)>> {
    Error::check_len(table.dim(), query.len())?;
    let mut scored: Vec<(u32, f64)> = (0..table.len() as u32)
        .map(|id| (id, cosine(query, table.row(id))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(top_k);
    Ok(scored)
}
