use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use bicvm_cli::commands::{
    cmd_cldc, cmd_export, cmd_nn, cmd_synth, cmd_train, cmd_vocab, CldcArgs, ExportArgs, NnArgs, SynthArgs, TrainArgs,
    VocabArgs,
};
use bicvm_cli::manifest::{file_digest, RunManifest};

fn synth(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    cmd_synth(&SynthArgs {
        out: data.clone(),
        pivot: false,
        vocab_size: 40,
        pairs: 300,
        train_docs: 40,
        test_docs: 40,
        langs: vec!["aa".into(), "bb".into()],
        seed: 5,
    })
    .unwrap();
    data
}

fn vocabs(data: &Path) -> Vec<PathBuf> {
    ["aa", "bb"]
        .iter()
        .map(|lang| {
            let out = data.join(format!("vocab.{}", lang));
            cmd_vocab(&VocabArgs {
                lang: lang.to_string(),
                min_count: 1,
                out: out.clone(),
                inputs: vec![data.join(format!("corpus.aa-bb.{}", lang))],
            })
            .unwrap();
            out
        })
        .collect()
}

fn train_args(data: &Path, vocabs: Vec<PathBuf>, out: PathBuf) -> TrainArgs {
    TrainArgs {
        corpora: vec![format!(
            "aa={},bb={}",
            data.join("corpus.aa-bb.aa").display(),
            data.join("corpus.aa-bb.bb").display()
        )],
        vocabs,
        out,
        dim: 8,
        step_size: 0.1,
        lambda: 1.0,
        noise_count: 5,
        margin: 50.0,
        epochs: 3,
        seed: 9,
        init_std: 0.1,
        symmetric_noise: false,
        epsilon: 1e-6,
        checkpoint_every: 2,
        threads: 1,
    }
}

#[test]
fn train_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = dir.path().join("model");
    let summary = cmd_train(&train_args(&data, vocabs(&data), out.clone())).unwrap();
    assert_eq!(summary.losses.len(), 3);
    for f in ["model.bin", "train.log", "vocab.aa.tsv", "vocab.bb.tsv", "checkpoint-epoch2.bin", "manifest.txt"] {
        assert!(out.join(f).exists(), "{} missing", f);
    }
    assert!(!out.join("checkpoint-epoch1.bin").exists());
    let log = fs::read_to_string(out.join("train.log")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.lines().all(|l| l.starts_with("epoch ")));

    let manifest = RunManifest::parse(&fs::read_to_string(out.join("manifest.txt")).unwrap());
    let get = |k: &str| manifest.iter().find(|(key, _)| key == k).map(|(_, v)| v.clone());
    assert_eq!(get("command").as_deref(), Some("train"));
    assert_eq!(get("seed").as_deref(), Some("9"));
    assert_eq!(get("config.dim").as_deref(), Some("8"));
    assert_eq!(get("artifact.0.sha256").unwrap(), file_digest(&out.join("model.bin")).unwrap());
}

#[test]
fn invalid_config_names_flags_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = dir.path().join("model");
    let mut args = train_args(&data, vocabs(&data), out.clone());
    args.dim = 0;
    args.step_size = -1.0;
    let err = cmd_train(&args).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("--dim") && msg.contains("--step-size"), "{}", msg);
    assert_eq!(err.exit_code(), 1);
    assert!(!out.exists());
}

#[test]
fn misaligned_corpus_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let v = vocabs(&data);
    let short = data.join("short.bb");
    let lines: Vec<String> = fs::read_to_string(data.join("corpus.aa-bb.bb")).unwrap().lines().take(10).map(String::from).collect();
    fs::write(&short, lines.join("\n")).unwrap();
    let mut args = train_args(&data, v, dir.path().join("m"));
    args.corpora = vec![format!("aa={},bb={}", data.join("corpus.aa-bb.aa").display(), short.display())];
    let err = cmd_train(&args).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("short.bb"));
    assert!(!dir.path().join("m").exists());
}

#[test]
fn corpus_without_vocabulary_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let v = vocabs(&data);
    let mut args = train_args(&data, v[..1].to_vec(), dir.path().join("m"));
    args.checkpoint_every = 0;
    let err = cmd_train(&args).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("'bb'"));
}

#[test]
fn export_nn_and_cldc_on_a_trained_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = dir.path().join("model");
    cmd_train(&train_args(&data, vocabs(&data), out.clone())).unwrap();
    let model = out.join("model.bin");

    let txt = dir.path().join("bb.txt");
    cmd_export(&ExportArgs { model: model.clone(), lang: "bb".into(), out: txt.clone() }).unwrap();
    let text = fs::read_to_string(&txt).unwrap();
    let mut lines = text.lines();
    let header: Vec<usize> = lines.next().unwrap().split(' ').map(|x| x.parse().unwrap()).collect();
    assert_eq!(header[1], 8);
    assert_eq!(lines.count(), header[0]);

    let nn = cmd_nn(&NnArgs {
        model: model.clone(),
        token: "AA_0".into(),
        lang: "aa".into(),
        target_lang: Some("bb".into()),
        top_k: 3,
    })
    .unwrap();
    assert_eq!(nn.len(), 3);
    assert_eq!(nn[0].rank, 1);
    assert!(nn[0].similarity >= nn[1].similarity && nn[1].similarity >= nn[2].similarity);
    assert!(nn.iter().all(|n| n.token.starts_with("bb_")));

    let unknown = cmd_nn(&NnArgs {
        model: model.clone(),
        token: "nope".into(),
        lang: "aa".into(),
        target_lang: None,
        top_k: 3,
    })
    .unwrap_err();
    assert_eq!(unknown.exit_code(), 2);

    let report_dir = dir.path().join("cldc");
    let report = cmd_cldc(&CldcArgs {
        model,
        train_docs: data.join("docs.train.aa"),
        train_lang: "aa".into(),
        test_docs: data.join("docs.test.bb"),
        test_lang: "bb".into(),
        labels: data.join("labels.tsv"),
        sizes: vec![20, 40],
        epochs: 5,
        seed: 1,
        out: report_dir.clone(),
    })
    .unwrap();
    assert_eq!(report.rows.len(), 2);
    let tsv = fs::read_to_string(report_dir.join("report.tsv")).unwrap();
    assert!(tsv.starts_with("size\taccuracy\n20\t"));
    let jsonl = fs::read_to_string(report_dir.join("report.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 2);
    for line in jsonl.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["accuracy"].as_f64().unwrap() >= 0.0);
        assert_eq!(v["majority_baseline"].as_f64().unwrap(), 0.25);
    }
}

#[test]
fn pivot_synth_writes_composed_bijection() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p");
    cmd_synth(&SynthArgs {
        out: out.clone(),
        pivot: true,
        vocab_size: 60,
        pairs: 50,
        train_docs: 4,
        test_docs: 4,
        langs: vec!["en".into(), "de".into(), "fr".into()],
        seed: 1,
    })
    .unwrap();
    for f in [
        "corpus.en-de.en",
        "corpus.en-de.de",
        "corpus.en-fr.en",
        "corpus.en-fr.fr",
        "bijection.de-fr.tsv",
        "docs.test.de",
        "docs.test.fr",
    ] {
        assert!(out.join(f).exists(), "{} missing", f);
    }
    let tsv = fs::read_to_string(out.join("bijection.de-fr.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 60);
    assert!(tsv.lines().all(|l| l.starts_with("de_") && l.contains("\tfr_")));
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bicvm"));
    c.env("RUST_LOG", "error");
    c
}

#[test]
fn binary_exit_codes() {
    let help = bin().arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("Usage: bicvm"));
    assert_eq!(bin().arg("--version").output().unwrap().status.code(), Some(0));
    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(1));
    assert_eq!(bin().args(["train", "--dim", "x"]).output().unwrap().status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.txt");
    let out = bin()
        .args(["vocab", "--lang", "aa", "--out"])
        .arg(dir.path().join("v"))
        .arg(&missing)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.txt"));

    let bad_min = bin()
        .args(["vocab", "--lang", "aa", "--min-count", "0", "--out"])
        .arg(dir.path().join("v"))
        .arg(&missing)
        .output()
        .unwrap();
    assert_ne!(bad_min.status.code(), Some(0));
}

#[test]
fn binary_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = |c: &mut Command| {
        let out = c.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    ok(bin().args(["synth", "--vocab-size", "60", "--pairs", "200", "--train-docs", "20", "--test-docs", "20", "--out"]).arg(d.join("s")));
    for lang in ["aa", "bb"] {
        ok(bin()
            .args(["vocab", "--lang", lang, "--out"])
            .arg(d.join(format!("v.{}", lang)))
            .arg(d.join(format!("s/corpus.aa-bb.{}", lang))));
    }
    let corpus = format!("aa={},bb={}", d.join("s/corpus.aa-bb.aa").display(), d.join("s/corpus.aa-bb.bb").display());
    ok(bin()
        .args(["train", "--corpus", &corpus, "--dim", "8", "--epochs", "2", "--noise-count", "3", "--vocab"])
        .arg(d.join("v.aa"))
        .arg("--vocab")
        .arg(d.join("v.bb"))
        .arg("--out")
        .arg(d.join("m")));
    let nn = ok(bin()
        .args(["nn", "--token", "aa_1", "--lang", "aa", "--target-lang", "bb", "--top-k", "2", "--model"])
        .arg(d.join("m/model.bin")));
    assert_eq!(nn.lines().count(), 2);
    assert!(nn.starts_with("1 bb_"));
    let report = ok(bin()
        .args(["cldc", "--train-lang", "aa", "--test-lang", "bb", "--sizes", "10,20", "--model"])
        .arg(d.join("m/model.bin"))
        .arg("--train-docs")
        .arg(d.join("s/docs.train.aa"))
        .arg("--test-docs")
        .arg(d.join("s/docs.test.bb"))
        .arg("--labels")
        .arg(d.join("s/labels.tsv"))
        .arg("--out")
        .arg(d.join("c")));
    assert!(report.starts_with("size\taccuracy\n"));
    let missing_lang = bin()
        .args(["export", "--lang", "zz", "--model"])
        .arg(d.join("m/model.bin"))
        .arg("--out")
        .arg(d.join("x.txt"))
        .output()
        .unwrap();
    assert_eq!(missing_lang.status.code(), Some(2));
}
