//! Subcommand arguments and their implementations.
//!
//! Every command parses and validates all of its inputs before it creates
//! any output file.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use bicvm::classifier::{
    encode_documents, evaluate_cldc, read_documents, write_documents, CldcReport, CldcSettings, LabelMap,
};
use bicvm::corpus::{build_vocabulary, load_parallel, normalize_line, read_lines, ParallelCorpus, Vocabulary};
use bicvm::model::{nearest_neighbors, write_text_embeddings, BiModel};
use bicvm::synth::{gen_bijective_pair, gen_labeled_docs, gen_pivot_triad, translate_documents, Bijection, SyntheticSpec};
use bicvm::trainer::{train_with_observer, TrainConfig};

use crate::error::{CliError, Result};
use crate::manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "bicvm", version, about = "Cross-lingual compositional embeddings from parallel text")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a vocabulary file from one language's text.
    Vocab(VocabArgs),
    /// Train embeddings on one or more parallel corpora.
    Train(TrainArgs),
    /// Export one language's embeddings in word-vector text format.
    Export(ExportArgs),
    /// Nearest neighbours of a word in a target language.
    Nn(NnArgs),
    /// Cross-lingual document classification.
    Cldc(CldcArgs),
    /// Generate synthetic parallel corpora and labeled documents.
    Synth(SynthArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Vocab(args) => cmd_vocab(&args).map(|_| ()),
        Command::Train(args) => cmd_train(&args).map(|_| ()),
        Command::Export(args) => cmd_export(&args),
        Command::Nn(args) => {
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            for n in cmd_nn(&args)? {
                writeln!(out, "{} {} {:.6}", n.rank, n.token, n.similarity).map_err(|e| CliError::io("<stdout>", e))?;
            }
            Ok(())
        }
        Command::Cldc(args) => {
            let report = cmd_cldc(&args)?;
            print!("{}", render_report_table(&report));
            println!("# majority_baseline\t{:.4}", report.majority_baseline);
            Ok(())
        }
        Command::Synth(args) => cmd_synth(&args),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

// ---------------------------------------------------------------- vocab

#[derive(Debug, Args)]
pub struct VocabArgs {
    /// Language tag stored in the vocabulary header.
    #[arg(long)]
    pub lang: String,
    /// Minimum occurrence count for a token to be kept.
    #[arg(long, default_value_t = 1)]
    pub min_count: u64,
    /// Output vocabulary file.
    #[arg(long)]
    pub out: PathBuf,
    /// Input text files, one sentence per line.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

pub fn cmd_vocab(args: &VocabArgs) -> Result<Vocabulary> {
    if args.lang.is_empty() || args.lang.contains(char::is_whitespace) {
        return Err(CliError::Usage(format!("--lang: invalid language tag '{}'", args.lang)));
    }
    let mut lines = Vec::new();
    for path in &args.inputs {
        lines.extend(read_lines(path)?);
    }
    let vocab = build_vocabulary(lines.iter().map(|l| normalize_line(l)), args.min_count, &args.lang)?;
    vocab.save(&args.out)?;
    Ok(vocab)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// A parallel corpus as `<lang>=<file>,<lang>=<file>`. Repeat for
    /// multi-corpus training; a language shared between corpora is a pivot.
    #[arg(long = "corpus", required = true)]
    pub corpora: Vec<String>,
    /// Vocabulary files (language tag read from the header).
    #[arg(long = "vocab", required = true)]
    pub vocabs: Vec<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.1)]
    pub step_size: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 50)]
    pub noise_count: usize,
    #[arg(long, default_value_t = 50.0)]
    pub margin: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub init_std: f64,
    /// Also draw noise from the first language of each pair.
    #[arg(long)]
    pub symmetric_noise: bool,
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,
    /// Write a checkpoint every N epochs (0 disables).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Worker threads for loss monitoring; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            dim: self.dim,
            step_size: self.step_size,
            lambda: self.lambda,
            noise_count: self.noise_count,
            margin: self.margin,
            epochs: self.epochs,
            seed: self.seed,
            init_std: self.init_std,
            symmetric_noise: self.symmetric_noise,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug)]
pub struct TrainSummary {
    pub model_path: PathBuf,
    pub initial_loss: f64,
    pub losses: Vec<f64>,
}

fn parse_corpus_spec(spec: &str) -> Result<[(String, PathBuf); 2]> {
    let bad = || CliError::Usage(format!("--corpus '{}': expected <lang>=<file>,<lang>=<file>", spec));
    let sides: Vec<&str> = spec.splitn(2, ',').collect();
    if sides.len() != 2 {
        return Err(bad());
    }
    let side = |s: &str| -> Result<(String, PathBuf)> {
        let (lang, file) = s.split_once('=').ok_or_else(bad)?;
        if lang.is_empty() || file.is_empty() {
            return Err(bad());
        }
        Ok((lang.to_owned(), PathBuf::from(file)))
    };
    Ok([side(sides[0])?, side(sides[1])?])
}

pub fn vocab_path(dir: &Path, lang: &str) -> PathBuf {
    dir.join(format!("vocab.{}.tsv", lang))
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary> {
    let start = Instant::now();
    let config = args.config();
    let problems = config.problems();
    if !problems.is_empty() {
        let msg: Vec<String> = problems
            .iter()
            .map(|(field, m)| format!("--{} {}", field.replace('_', "-"), m))
            .collect();
        return Err(CliError::Usage(msg.join("; ")));
    }
    if args.threads == 0 {
        return Err(CliError::Usage("--threads must be >= 1".into()));
    }

    let mut manifest = RunManifest::new("train", args.seed);
    let mut vocabs: HashMap<String, Arc<Vocabulary>> = HashMap::new();
    for path in &args.vocabs {
        let v = Vocabulary::load(path)?;
        manifest.input(path)?;
        let tag = v.language_tag().to_owned();
        if vocabs.insert(tag.clone(), Arc::new(v)).is_some() {
            return Err(CliError::Usage(format!("--vocab: language '{}' given twice", tag)));
        }
    }
    let mut corpora: Vec<ParallelCorpus> = Vec::new();
    for spec in &args.corpora {
        let [(la, fa), (lb, fb)] = parse_corpus_spec(spec)?;
        let lookup = |lang: &str| {
            vocabs
                .get(lang)
                .cloned()
                .ok_or_else(|| CliError::Usage(format!("--corpus '{}': no --vocab for language '{}'", spec, lang)))
        };
        let loaded = load_parallel(&fa, &fb, lookup(&la)?, lookup(&lb)?)?;
        manifest.input(&fa)?;
        manifest.input(&fb)?;
        log::info!("{}: {} pairs ({} removed)", spec, loaded.corpus.len(), loaded.removed);
        corpora.push(loaded.corpus);
    }

    create_dir(&args.out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .map_err(|e| CliError::Usage(format!("--threads: {}", e)))?;

    let mut log_text = String::new();
    let mut checkpoints: Vec<PathBuf> = Vec::new();
    let outcome = pool.install(|| {
        train_with_observer(&corpora, &config, |stats, model| {
            let line = stats.log_line();
            log_text.push_str(&line);
            log_text.push('\n');
            if args.checkpoint_every > 0 && stats.epoch % args.checkpoint_every == 0 {
                let path = args.out.join(format!("checkpoint-epoch{}.bin", stats.epoch));
                model.save(&path)?;
                checkpoints.push(path);
            }
            Ok(())
        })
    })?;

    let model_path = args.out.join("model.bin");
    outcome.model.save(&model_path)?;
    let log_path = args.out.join("train.log");
    write_file(&log_path, log_text.as_bytes())?;
    let mut langs: Vec<&String> = vocabs.keys().collect();
    langs.sort();
    let mut vocab_paths = Vec::new();
    for lang in langs {
        if outcome.model.index_of(lang).is_some() {
            let path = vocab_path(&args.out, lang);
            vocabs[lang].save(&path)?;
            vocab_paths.push(path);
        }
    }

    for (key, value) in [
        ("dim", config.dim.to_string()),
        ("step_size", config.step_size.to_string()),
        ("lambda", config.lambda.to_string()),
        ("noise_count", config.noise_count.to_string()),
        ("margin", config.margin.to_string()),
        ("epochs", config.epochs.to_string()),
        ("seed", config.seed.to_string()),
        ("init_std", config.init_std.to_string()),
        ("symmetric_noise", config.symmetric_noise.to_string()),
        ("epsilon", config.epsilon.to_string()),
        ("threads", args.threads.to_string()),
    ] {
        manifest.config(key, value);
    }
    manifest.artifact(&model_path)?;
    manifest.artifact(&log_path)?;
    for p in vocab_paths.iter().chain(&checkpoints) {
        manifest.artifact(p)?;
    }
    manifest.seconds = start.elapsed().as_secs_f64();
    write_file(&args.out.join("manifest.txt"), manifest.render().as_bytes())?;

    Ok(TrainSummary {
        model_path,
        initial_loss: outcome.initial_loss,
        losses: outcome.epochs.iter().map(|e| e.loss).collect(),
    })
}

// ---------------------------------------------------------------- model loading

/// A model file together with the vocabularies stored next to it.
pub struct LoadedModel {
    pub model: BiModel,
    pub vocabs: HashMap<String, Vocabulary>,
}

impl LoadedModel {
    pub fn load(model_path: &Path) -> Result<Self> {
        let model = BiModel::load(model_path)?;
        let dir = model_path.parent().unwrap_or(Path::new("."));
        let mut vocabs = HashMap::new();
        for table in model.tables() {
            let tag = table.language_tag();
            let vocab = Vocabulary::load(&vocab_path(dir, tag))?;
            if vocab.len() != table.len() || vocab.language_tag() != tag {
                return Err(CliError::Data(format!(
                    "vocabulary for '{}' has {} tokens but the model table has {} rows",
                    tag,
                    vocab.len(),
                    table.len()
                )));
            }
            vocabs.insert(tag.to_owned(), vocab);
        }
        Ok(LoadedModel { model, vocabs })
    }

    pub fn vocab(&self, lang: &str) -> Result<&Vocabulary> {
        self.vocabs.get(lang).ok_or_else(|| {
            CliError::Core(bicvm::Error::Lookup {
                kind: "language",
                name: lang.to_owned(),
            })
        })
    }
}

// ---------------------------------------------------------------- export

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub lang: String,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_export(args: &ExportArgs) -> Result<()> {
    let loaded = LoadedModel::load(&args.model)?;
    let vocab = loaded.vocab(&args.lang)?;
    let table = loaded.model.table(&args.lang)?;
    let mut buf = Vec::new();
    write_text_embeddings(vocab.tokens(), table, &mut buf)?;
    write_file(&args.out, &buf)
}

// ---------------------------------------------------------------- nn

#[derive(Debug, Args)]
pub struct NnArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Query word.
    #[arg(long)]
    pub token: String,
    /// Language of the query word.
    #[arg(long)]
    pub lang: String,
    /// Language to search; defaults to the query language.
    #[arg(long)]
    pub target_lang: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Neighbor {
    pub rank: usize,
    pub token: String,
    pub similarity: f64,
}

pub fn cmd_nn(args: &NnArgs) -> Result<Vec<Neighbor>> {
    let loaded = LoadedModel::load(&args.model)?;
    let target = args.target_lang.as_deref().unwrap_or(&args.lang);
    let source_vocab = loaded.vocab(&args.lang)?;
    let target_vocab = loaded.vocab(target)?;
    let query = args.token.to_lowercase();
    let id = source_vocab.id(&query).ok_or_else(|| {
        CliError::Core(bicvm::Error::Lookup {
            kind: "token",
            name: args.token.clone(),
        })
    })?;
    let query_vec = loaded.model.table(&args.lang)?.row(id).to_vec();
    let ranked = nearest_neighbors(&query_vec, loaded.model.table(target)?, args.top_k)?;
    Ok(ranked
        .into_iter()
        .enumerate()
        .map(|(i, (id, sim))| Neighbor {
            rank: i + 1,
            token: target_vocab.token(id).unwrap_or_default().to_owned(),
            similarity: sim,
        })
        .collect())
}

// ---------------------------------------------------------------- cldc

#[derive(Debug, Args)]
pub struct CldcArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub train_docs: PathBuf,
    #[arg(long)]
    pub train_lang: String,
    #[arg(long)]
    pub test_docs: PathBuf,
    #[arg(long)]
    pub test_lang: String,
    /// Label map file (`name<TAB>id` per line).
    #[arg(long)]
    pub labels: PathBuf,
    /// Comma-separated training sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    pub sizes: Vec<usize>,
    /// Perceptron epochs.
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for report.tsv and report.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct ReportRecord<'a> {
    train_language: &'a str,
    test_language: &'a str,
    size: usize,
    accuracy: f64,
    majority_baseline: f64,
}

pub fn render_report_table(report: &CldcReport) -> String {
    let mut out = String::from("size\taccuracy\n");
    for row in &report.rows {
        out.push_str(&format!("{}\t{:.4}\n", row.size, row.accuracy));
    }
    out
}

pub fn render_report_jsonl(report: &CldcReport) -> String {
    let mut out = String::new();
    for row in &report.rows {
        let record = ReportRecord {
            train_language: &report.train_language,
            test_language: &report.test_language,
            size: row.size,
            accuracy: row.accuracy,
            majority_baseline: report.majority_baseline,
        };
        out.push_str(&serde_json::to_string(&record).expect("plain record serializes"));
        out.push('\n');
    }
    out
}

pub fn cmd_cldc(args: &CldcArgs) -> Result<CldcReport> {
    if let Some(bad) = args.sizes.iter().find(|&&s| s == 0) {
        return Err(CliError::Usage(format!("--sizes: training size must be positive, got {}", bad)));
    }
    let loaded = LoadedModel::load(&args.model)?;
    let labels = LabelMap::load(&args.labels)?;
    let train = encode_documents(&read_documents(&args.train_docs)?, loaded.vocab(&args.train_lang)?, &labels)?;
    let test = encode_documents(&read_documents(&args.test_docs)?, loaded.vocab(&args.test_lang)?, &labels)?;
    for (name, set) in [("training", &train), ("test", &test)] {
        if set.rejected > 0 {
            log::warn!("{} set: {} documents rejected (no in-vocabulary token)", name, set.rejected);
        }
    }
    let settings = CldcSettings {
        classes: labels.len(),
        epochs: args.epochs,
        seed: args.seed,
    };
    let report = evaluate_cldc(&train.docs, &test.docs, &loaded.model, &args.sizes, &settings)?;
    create_dir(&args.out)?;
    write_file(&args.out.join("report.tsv"), render_report_table(&report).as_bytes())?;
    write_file(&args.out.join("report.jsonl"), render_report_jsonl(&report).as_bytes())?;
    Ok(report)
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Generate two corpora sharing the first language instead of one.
    #[arg(long)]
    pub pivot: bool,
    #[arg(long, default_value_t = 500)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 10_000)]
    pub pairs: usize,
    #[arg(long, default_value_t = 1000)]
    pub train_docs: usize,
    #[arg(long, default_value_t = 1000)]
    pub test_docs: usize,
    /// Comma-separated language tags (two, or three with --pivot).
    #[arg(long, value_delimiter = ',', default_value = "aa,bb,cc")]
    pub langs: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn bijection_file(b: &Bijection) -> String {
    b.pairs().iter().map(|(s, t)| format!("{}\t{}\n", s, t)).collect()
}

fn lines_file(lines: &[String]) -> String {
    lines.iter().map(|l| format!("{}\n", l)).collect()
}

fn docs_file(docs: &[bicvm::classifier::RawDocument]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_documents(docs, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        vocab_size: args.vocab_size,
        pairs: args.pairs,
        languages: args.langs.clone(),
        seed: args.seed,
        ..SyntheticSpec::default()
    };
    spec.validate()?;
    let needed = if args.pivot { 3 } else { 2 };
    if args.langs.len() < needed {
        return Err(CliError::Usage(format!("--langs: need {} language tags", needed)));
    }
    let l = &args.langs;
    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    let train_set = gen_labeled_docs(&spec, args.train_docs, 0)?;
    let test_set = gen_labeled_docs(&spec, args.test_docs, 1)?;
    let mut labels = Vec::new();
    train_set.labels.write(&mut labels).expect("writing to a Vec cannot fail");
    files.push((args.out.join("labels.tsv"), labels));
    files.push((args.out.join(format!("docs.train.{}", l[0])), docs_file(&train_set.docs)));

    if args.pivot {
        let triad = gen_pivot_triad(&spec)?;
        for (corpus, other) in [(&triad.ab, &l[1]), (&triad.ac, &l[2])] {
            let stem = format!("corpus.{}-{}", l[0], other);
            files.push((args.out.join(format!("{}.{}", stem, l[0])), lines_file(&corpus.lines_a).into_bytes()));
            files.push((args.out.join(format!("{}.{}", stem, other)), lines_file(&corpus.lines_b).into_bytes()));
        }
        for (bij, name) in [
            (&triad.a_to_b, format!("{}-{}", l[0], l[1])),
            (&triad.a_to_c, format!("{}-{}", l[0], l[2])),
            (&triad.b_to_c, format!("{}-{}", l[1], l[2])),
        ] {
            files.push((args.out.join(format!("bijection.{}.tsv", name)), bijection_file(bij).into_bytes()));
        }
        for (bij, lang) in [(&triad.a_to_b, &l[1]), (&triad.a_to_c, &l[2])] {
            let docs = translate_documents(&test_set.docs, bij)?;
            files.push((args.out.join(format!("docs.test.{}", lang)), docs_file(&docs)));
        }
    } else {
        let pair = gen_bijective_pair(&spec)?;
        let stem = format!("corpus.{}-{}", l[0], l[1]);
        files.push((args.out.join(format!("{}.{}", stem, l[0])), lines_file(&pair.data.lines_a).into_bytes()));
        files.push((args.out.join(format!("{}.{}", stem, l[1])), lines_file(&pair.data.lines_b).into_bytes()));
        files.push((
            args.out.join(format!("bijection.{}-{}.tsv", l[0], l[1])),
            bijection_file(&pair.bijection).into_bytes(),
        ));
        let docs = translate_documents(&test_set.docs, &pair.bijection)?;
        files.push((args.out.join(format!("docs.test.{}", l[1])), docs_file(&docs)));
    }

    create_dir(&args.out)?;
    for (path, bytes) in files {
        write_file(&path, &bytes)?;
    }
    Ok(())
}
