use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lattice_ner::synthetic::overfit_corpus;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lattice-ner"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const TINY: &str = "d_c = 8\nd_w = 8\nd_ff = 32\nheads = 2\nlayers = 2\nseed = 3\n";
const GOLD: &str = "北\tB-LOC\n京\tI-LOC\n市\tO\n\n长\tB-LOC\n江\tI-LOC\n";
const LEXICON: &str = "北京\n京市\n长江\n";

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["match", "graph", "train", "eval", "predict", "gradcheck", "stats"] {
        assert!(text.contains(cmd), "help lists {cmd}");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["eval", "--gold", "a", "--pred", "b", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["graph", "--lexicon", "a", "--input", "b", "--variant", "nope"]).status.code(), Some(1));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let lex = write(dir.path(), "lex.txt", LEXICON);
    let out = run(&["stats", "--corpus", s(&dir.path().join("missing.txt")), "--lexicon", s(&lex)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.txt"));
    let bad = write(dir.path(), "bad.txt", "北\tB-LOC\n京\tX-LOC\n");
    let out = run(&["stats", "--corpus", s(&bad), "--lexicon", s(&lex)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2:"), "error names the line");
}

#[test]
fn gradcheck_tiny_config_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.cfg", TINY);
    let out = run(&["gradcheck", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text
        .lines()
        .find(|l| l.starts_with("gradcheck max_rel_error="))
        .expect("summary line");
    assert!(line.ends_with("status=pass"));
    let err: f64 = line["gradcheck max_rel_error=".len()..]
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!(err < 1e-4);
}

#[test]
fn match_lists_words_per_sentence() {
    let dir = tempfile::tempdir().unwrap();
    let lex = write(dir.path(), "lex.txt", LEXICON);
    let input = write(dir.path(), "in.txt", GOLD);
    let out = run(&["match", "--lexicon", s(&lex), "--input", s(&input)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        String::from_utf8_lossy(&out.stdout),
        "0\t0\t1\t北京\n0\t1\t2\t京市\n1\t0\t1\t长江\n"
    );
}

#[test]
fn graph_variant_changes_edges() {
    let dir = tempfile::tempdir().unwrap();
    let lex = write(dir.path(), "lex.txt", LEXICON);
    let input = write(dir.path(), "in.txt", "北京市\n");
    let std_out = run(&["graph", "--lexicon", s(&lex), "--input", s(&input)]);
    let wo = run(&["graph", "--lexicon", s(&lex), "--input", s(&input), "--variant", "wo_word_edge"]);
    let std_text = String::from_utf8_lossy(&std_out.stdout);
    let wo_text = String::from_utf8_lossy(&wo.stdout);
    assert!(std_text.contains("word_edges 0-1\n"));
    assert!(wo_text.contains("word_edges\n"));
}

#[test]
fn eval_and_stats_report_key_values() {
    let dir = tempfile::tempdir().unwrap();
    let gold = write(dir.path(), "gold.txt", GOLD);
    let pred = write(dir.path(), "pred.txt", "北\tB-LOC\n京\tI-LOC\n市\tO\n\n长\tO\n江\tO\n");
    let lex = write(dir.path(), "lex.txt", LEXICON);
    let out = run(&["eval", "--gold", s(&gold), "--pred", s(&pred)]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("eval precision=1.000000 recall=0.500000"), "{text}");

    let out = run(&["stats", "--corpus", s(&gold), "--lexicon", s(&lex)]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("stats sentences=2 entities=2"), "{text}");
    assert!(text.contains("matched_words=3 effective_words=2"), "{text}");

    let short = write(dir.path(), "short.txt", "北\tO\n");
    assert_eq!(run(&["eval", "--gold", s(&gold), "--pred", s(&short)]).status.code(), Some(2));
}

/// Trains through the CLI on a generated corpus; returns the output directory.
fn train(dir: &Path, extra: &[&str], epochs: usize) -> PathBuf {
    let data = overfit_corpus(5);
    let train = write(dir, "train.txt", &data.train.to_text());
    let lex = write(dir, "lex.txt", &(data.lexicon.join("\n") + "\n"));
    let cfg = write(
        dir,
        "train.cfg",
        &format!(
            "d_c = 16\nd_w = 8\nd_ff = 32\nheads = 2\nlayers = 1\nlearning_rate = 0.005\nweight_decay = 0\n\
             embedding_dropout = 0\nfusion_dropout = 0\nbatch_size = 5\nepochs = {epochs}\n\
             train = train.txt\nlexicon = lex.txt\ndev = train.txt\n"
        ),
    );
    let out_dir = dir.join("run");
    let mut args = vec!["train", "--config", s(&cfg), "--out", s(&out_dir)];
    args.extend_from_slice(extra);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(train.exists() && lex.exists());
    out_dir
}

#[test]
fn train_then_predict_reproduces_training_tags() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = train(dir.path(), &["--seed", "5"], 40);
    for f in ["epoch-1.ckpt", "epoch-40.ckpt", "best.ckpt", "train.log", "config.txt"] {
        assert!(run_dir.join(f).exists(), "{f} written");
    }
    let log = std::fs::read_to_string(run_dir.join("train.log")).unwrap();
    assert_eq!(log.lines().count(), 40);
    assert!(log.lines().all(|l| l.contains("loss_total=") && l.contains("dev_f1=")));

    let gold = dir.path().join("train.txt");
    let pred = dir.path().join("pred.txt");
    let out = run(&[
        "predict",
        "--checkpoint",
        s(&run_dir.join("best.ckpt")),
        "--input",
        s(&gold),
        "--lexicon",
        s(&dir.path().join("lex.txt")),
        "--out",
        s(&pred),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(&pred).unwrap(), std::fs::read_to_string(&gold).unwrap());
}

#[test]
fn training_logs_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let extra = ["--set", "embedding_dropout=0.2", "--set", "fusion_dropout=0.1"];
    let la = std::fs::read(train(a.path(), &extra, 2).join("train.log")).unwrap();
    let lb = std::fs::read(train(b.path(), &extra, 2).join("train.log")).unwrap();
    assert_eq!(la, lb);
    let ca = std::fs::read(a.path().join("run/best.ckpt")).unwrap();
    let cb = std::fs::read(b.path().join("run/best.ckpt")).unwrap();
    assert_eq!(ca, cb);
}

#[test]
fn train_rejects_bad_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.cfg", TINY);
    assert_eq!(run(&["train", "--config", s(&cfg), "--set", "nonsense"]).status.code(), Some(1));
    assert_eq!(run(&["train", "--config", s(&cfg), "--set", "no_such_key=1"]).status.code(), Some(1));
    // No training corpus configured.
    assert_eq!(run(&["train", "--config", s(&cfg)]).status.code(), Some(2));
}

/// Checkpoint of an untrained model whose CRF and LEC parameters are all zero.
fn zero_checkpoint(dir: &Path) -> PathBuf {
    use lattice_ner::{checkpoint, Model32, ModelConfig, TagScheme, TagSet};
    use lattice_ner::model::{char_vocab, word_vocab};
    let corpus = lattice_ner::data::parse_corpus(GOLD, Path::new("gold"), TagScheme::Bio).unwrap();
    let lexicon: Vec<String> = LEXICON.lines().map(str::to_string).collect();
    let cfg = ModelConfig {
        d_c: 8,
        d_w: 8,
        d_ff: 16,
        heads: 2,
        ..ModelConfig::default()
    };
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut model = Model32::new(
        cfg,
        TagSet::from_corpus(&corpus),
        char_vocab(&corpus.sentences),
        word_vocab(&lexicon, 2),
        0.1,
        &mut rng,
    )
    .unwrap();
    model.params.crf.emission_w = lattice_ner::Matrix32::zeros(8, model.tags.len());
    let p = dir.join("zero.ckpt");
    checkpoint::save(&model, &p).unwrap();
    p
}

#[test]
fn predict_zero_model_tags_everything_outside() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = zero_checkpoint(dir.path());
    let lex = write(dir.path(), "lex.txt", LEXICON);
    let input = write(dir.path(), "in.txt", "\n北\n京\n市\n\n\n长\n江\n人\n\n");
    let args = ["predict", "--checkpoint", s(&ckpt), "--input", s(&input), "--lexicon", s(&lex)];
    let first = run(&args);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let text = String::from_utf8_lossy(&first.stdout).to_string();
    assert_eq!(text, "\n北\tO\n京\tO\n市\tO\n\n\n长\tO\n江\tO\n人\tO\n\n");
    let input_lines = std::fs::read_to_string(&input).unwrap().lines().count();
    assert_eq!(text.lines().count(), input_lines);
    assert_eq!(run(&args).stdout, first.stdout, "byte-identical reruns");
}

#[test]
fn predict_empty_input_gives_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = zero_checkpoint(dir.path());
    let lex = write(dir.path(), "lex.txt", LEXICON);
    let input = write(dir.path(), "empty.txt", "");
    let out_path = dir.path().join("out.txt");
    let out = run(&[
        "predict",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&input),
        "--lexicon",
        s(&lex),
        "--out",
        s(&out_path),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(out_path).unwrap(), "");
}

#[test]
fn predict_rejects_mismatched_config_and_bad_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = zero_checkpoint(dir.path());
    let lex = write(dir.path(), "lex.txt", LEXICON);
    let input = write(dir.path(), "in.txt", "北\n");
    let cfg = write(dir.path(), "other.cfg", "d_c = 16\nd_w = 8\nheads = 2\n");
    let out = run(&[
        "predict", "--checkpoint", s(&ckpt), "--input", s(&input), "--lexicon", s(&lex), "--config", s(&cfg),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let junk = write(dir.path(), "junk.ckpt", "not a checkpoint");
    let out = run(&["predict", "--checkpoint", s(&junk), "--input", s(&input), "--lexicon", s(&lex)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
}
