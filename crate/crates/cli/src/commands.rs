use std::fmt::Write as _;
use std::path::Path;

use lattice_ner::checkpoint;
use lattice_ner::data::{corpus_stats, evaluate, load_corpus};
use lattice_ner::gradcheck::{grad_check, perturb, GradCheckOptions};
use lattice_ner::lexicon::load_lexicon;
use lattice_ner::train::{best_path, build_model, evaluate_model};
use lattice_ner::{Error, LatticeGraph, LexiconTrie, ModelConfig, TagScheme, TrainConfig, Trainer32};

use crate::input::{read_lines, read_sentences, sentences_of, write_output, Line};
use crate::{EvalArgs, Failure, GradcheckArgs, GraphArgs, MatchArgs, PredictArgs, StatsArgs, TrainArgs};

type Outcome = Result<(), Failure>;

fn model_config(path: Option<&Path>) -> lattice_ner::Result<ModelConfig> {
    Ok(match path {
        Some(p) => TrainConfig::load(p)?.model,
        None => ModelConfig::default(),
    })
}

fn trie(path: &Path) -> lattice_ner::Result<LexiconTrie> {
    LexiconTrie::build(&load_lexicon(path)?)
}

pub fn run_match(a: MatchArgs) -> Outcome {
    let cfg = model_config(a.config.as_deref())?;
    let trie = trie(&a.lexicon)?;
    let opts = lattice_ner::lexicon::MatchOptions {
        min_len: cfg.min_word_len,
        ..Default::default()
    };
    let mut out = String::new();
    for (id, s) in read_sentences(&a.input)?.iter().enumerate() {
        for w in trie.match_with(s, &opts).words {
            let _ = writeln!(out, "{id}\t{}\t{}\t{}", w.head, w.tail, w.surface);
        }
    }
    Ok(write_output(a.out.as_deref(), &out)?)
}

pub fn run_graph(a: GraphArgs) -> Outcome {
    let cfg = model_config(a.config.as_deref())?;
    let variant = a.variant.unwrap_or(cfg.variant);
    let trie = trie(&a.lexicon)?;
    let opts = lattice_ner::lexicon::MatchOptions {
        min_len: cfg.min_word_len,
        ..Default::default()
    };
    let mut out = String::new();
    for (id, s) in read_sentences(&a.input)?.iter().enumerate() {
        let words = trie.match_with(s, &opts).words;
        let graph = LatticeGraph::build(s.len(), &words)?.with_variant(variant);
        out.push_str(&graph.to_text(id, s));
    }
    Ok(write_output(a.out.as_deref(), &out)?)
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

pub fn run_train(a: TrainArgs) -> Outcome {
    let mut cfg = TrainConfig::load(&a.config)?;
    if let Some(p) = a.input {
        cfg.train = Some(p);
    }
    if let Some(p) = a.lexicon {
        cfg.lexicon = Some(p);
    }
    if let Some(v) = a.variant {
        cfg.model.variant = v;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(p) = a.out {
        cfg.out_dir = Some(p);
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim()).map_err(usage)?;
    }
    cfg.validate()?;
    let need = |p: &Option<std::path::PathBuf>, key: &str| {
        p.clone()
            .ok_or_else(|| Failure::Core(Error::Config(format!("'{key}' is not set in the config or by a flag"))))
    };
    let train_path = need(&cfg.train, "train")?;
    let lexicon_path = need(&cfg.lexicon, "lexicon")?;

    let scheme = cfg.model.scheme;
    let train = load_corpus(&train_path, scheme)?;
    let lexicon = load_lexicon(&lexicon_path)?;
    let trie = LexiconTrie::build(&lexicon)?;
    let model = build_model::<f32>(&cfg, &train, &lexicon)?;
    let train_inst = model.prepare_corpus(&train.sentences, &trie)?;
    let dev = cfg.dev.as_ref().map(|p| load_corpus(p, scheme)).transpose()?;
    let dev_inst = dev
        .as_ref()
        .map(|d| model.prepare_corpus(&d.sentences, &trie))
        .transpose()?;
    log::info!(
        "train sentences={} lexicon_words={} tags={} parameters={}",
        train.len(),
        trie.len(),
        model.tags.len(),
        model.params.num_values()
    );

    let out_dir = cfg.out_dir.clone();
    let test_path = cfg.test.clone();
    let mut trainer = Trainer32::new(model, cfg)?;
    let dev_pair = dev_inst.as_deref().zip(dev.as_ref());
    let reports = trainer.fit(&train_inst, dev_pair, out_dir.as_deref())?;

    let mut log = String::new();
    for r in &reports {
        log.push_str(&r.log_line());
        log.push('\n');
    }
    if let Some(dir) = &out_dir {
        write_output(Some(&dir.join("train.log")), &log)?;
        write_output(Some(&dir.join("config.txt")), &trainer.config.to_text())?;
    }
    print!("{log}");

    if let Some(p) = test_path {
        let test = load_corpus(&p, scheme)?;
        let best = match &out_dir {
            Some(dir) => checkpoint::load::<f32>(best_path(dir))?,
            None => trainer.model.clone(),
        };
        let inst = best.prepare_corpus(&test.sentences, &trie)?;
        print!("{}", evaluate_model(&best, &inst, &test)?.render());
    }
    Ok(())
}

pub fn run_eval(a: EvalArgs) -> Outcome {
    let gold = load_corpus(&a.gold, a.scheme)?;
    let pred = load_corpus(&a.pred, a.scheme)?;
    if pred.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} has {} sentences, {} has {}",
            a.pred.display(),
            pred.len(),
            a.gold.display(),
            gold.len()
        ))
        .into());
    }
    for (i, (p, g)) in pred.sentences.iter().zip(&gold.sentences).enumerate() {
        if p.chars != g.chars {
            return Err(Error::InvalidInput(format!(
                "sentence {i}: predicted characters '{}' differ from gold '{}'",
                p.text(),
                g.text()
            ))
            .into());
        }
    }
    let tags: Vec<Vec<String>> = pred.sentences.into_iter().map(|s| s.tags).collect();
    let report = evaluate(&tags, &gold)?;
    Ok(write_output(a.out.as_deref(), &report.render())?)
}

pub fn run_predict(a: PredictArgs) -> Outcome {
    let model = checkpoint::load::<f32>(&a.checkpoint)?;
    if let Some(p) = &a.config {
        let expected = TrainConfig::load(p)?.model;
        if expected != model.config {
            return Err(Error::Shape(format!(
                "checkpoint {} was trained with different model settings than {}",
                a.checkpoint.display(),
                p.display()
            ))
            .into());
        }
    }
    let trie = trie(&a.lexicon)?;
    let lines = read_lines(&a.input)?;
    let mut tags = Vec::new();
    for s in sentences_of(&lines) {
        let inst = model.prepare(&s, &trie, None)?;
        tags.extend(model.predict_tags(&inst)?);
    }
    let mut tags = tags.into_iter();
    let mut out = String::new();
    for l in &lines {
        match l {
            Line::Blank => out.push('\n'),
            Line::Char(c) => {
                let t = tags.next().expect("one tag per character");
                let _ = writeln!(out, "{c}\t{t}");
            }
        }
    }
    Ok(write_output(a.out.as_deref(), &out)?)
}

const FIXTURE: &str = "北\tB-LOC\n京\tI-LOC\n市\tO\n长\tB-LOC\n江\tI-LOC\n";
const FIXTURE_LEXICON: [&str; 3] = ["北京", "京市", "长江"];

pub fn run_gradcheck(a: GradcheckArgs) -> Outcome {
    let mut cfg = TrainConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let scheme = cfg.model.scheme;
    let (corpus, lexicon) = match (&a.input, &a.lexicon) {
        (Some(input), Some(lex)) => (load_corpus(input, scheme)?, load_lexicon(lex)?),
        _ => {
            if scheme != TagScheme::Bio {
                return Err(Error::Config("the built-in sentence is tagged with the bio scheme".into()).into());
            }
            let corpus = lattice_ner::data::parse_corpus(FIXTURE, Path::new("<built-in>"), TagScheme::Bio)?;
            (corpus, FIXTURE_LEXICON.iter().map(|s| s.to_string()).collect())
        }
    };
    let sentence = corpus
        .sentences
        .first()
        .ok_or_else(|| Error::InvalidInput("gradient check input has no sentences".into()))?;
    let mut model = build_model::<f64>(&cfg, &corpus, &lexicon)?;
    perturb(&mut model, 0.1, cfg.seed);
    let trie = LexiconTrie::build(&lexicon)?;
    let inst = model.prepare(&sentence.chars, &trie, Some(sentence))?;
    log::info!("gradient check on {} characters and {} words", inst.len(), inst.words.len());
    let opts = GradCheckOptions {
        seed: cfg.seed,
        ..GradCheckOptions::default()
    };
    let report = grad_check(&mut model, &inst, a.lambda, &opts)?;
    print!("{}", report.render());
    report.into_result()?;
    Ok(())
}

pub fn run_stats(a: StatsArgs) -> Outcome {
    let cfg = model_config(a.config.as_deref())?;
    let corpus = load_corpus(&a.corpus, a.scheme)?;
    let trie = trie(&a.lexicon)?;
    let opts = lattice_ner::lexicon::MatchOptions {
        min_len: cfg.min_word_len,
        ..Default::default()
    };
    let stats = corpus_stats(&corpus, &trie, &opts)?;
    Ok(write_output(a.out.as_deref(), &stats.render())?)
}
