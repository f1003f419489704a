//! Loss weighting schedule, training steps and the epoch loop.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::data::{evaluate, Corpus, EvalReport, TagSet};
use crate::encoding::PretrainedEmbeddings;
use crate::error::{Error, Result};
use crate::lexicon::LecLabel;
use crate::model::{char_vocab, word_vocab, DropoutRates, Instance, Model, ModelParams};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::{c, log_sum_exp, Scalar};
use crate::tape::{Dropout, Tape};
use crate::tensor::Matrix;

/// `λ(t) = max(λ0 · λ1^t, τ)`.
pub fn lambda_at(t: usize, lambda0: f64, lambda1: f64, tau: f64) -> f64 {
    let t = i32::try_from(t).unwrap_or(i32::MAX);
    (lambda0 * lambda1.powi(t)).max(tau)
}

pub fn lambda_schedule(t: usize, cfg: &TrainConfig) -> f64 {
    lambda_at(t, cfg.lambda0, cfg.lambda1, cfg.tau)
}

/// `(1 - λ) · L_ner + λ · L_lec`.
pub fn total_loss<T: Scalar>(ner: T, lec: T, lambda: T) -> T {
    (T::one() - lambda) * ner + lambda * lec
}

/// Mean cross-entropy of `softmax(H_w · W + b)` against `labels`; 0 for an empty word set.
pub fn lec_loss<T: Scalar>(words: &Matrix<T>, labels: &[LecLabel], w: &Matrix<T>, b: &Matrix<T>) -> Result<T> {
    if words.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} word states for {} labels",
            words.rows(),
            labels.len()
        )));
    }
    if w.shape() != (words.cols(), LecLabel::COUNT) || b.shape() != (1, LecLabel::COUNT) {
        return Err(Error::Shape(format!(
            "LEC head has shapes {:?}/{:?} for width {}",
            w.shape(),
            b.shape(),
            words.cols()
        )));
    }
    if labels.is_empty() {
        return Ok(T::zero());
    }
    let logits = words.matmul(w);
    let mut total = T::zero();
    for (j, label) in labels.iter().enumerate() {
        let row: Vec<T> = logits.row(j).iter().zip(b.row(0)).map(|(&x, &y)| x + y).collect();
        total += log_sum_exp(row.iter().copied()) - row[label.index()];
    }
    Ok(total / c(labels.len() as f64))
}

/// Losses of one step, averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub ner: f64,
    pub lec: f64,
    pub total: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub lambda: f64,
    pub ner: f64,
    pub lec: f64,
    pub total: f64,
    pub dev: Option<EvalReport>,
}

impl EpochReport {
    /// One `key=value` log line.
    pub fn log_line(&self) -> String {
        let mut line = format!(
            "epoch={} lambda={:.6} loss_ner={:.6} loss_lec={:.6} loss_total={:.6}",
            self.epoch, self.lambda, self.ner, self.lec, self.total
        );
        if let Some(d) = &self.dev {
            line.push_str(&format!(
                " dev_p={:.6} dev_r={:.6} dev_f1={:.6}",
                d.precision(),
                d.recall(),
                d.f1()
            ));
        }
        line
    }
}

/// Loss value and gradient of one labelled instance.
pub fn loss_and_grads<T: Scalar>(
    model: &Model<T>,
    inst: &Instance,
    lambda: f64,
    rates: DropoutRates,
    dropout: &mut Dropout<'_>,
) -> Result<(StepReport, ModelParams<Matrix<T>>)> {
    let mut tape = Tape::new();
    let vars = model.loss(&mut tape, inst, lambda, rates, dropout)?;
    let report = StepReport {
        ner: tape.scalar_value(vars.ner).to_f64_lossy(),
        lec: tape.scalar_value(vars.lec).to_f64_lossy(),
        total: tape.scalar_value(vars.total).to_f64_lossy(),
        lambda,
    };
    let grads = tape.backward(vars.total);
    let mut out = model.params.zeros_like();
    let bound = vars.forward.params.named();
    let mut idx = 0;
    out.visit_mut(&mut |_, g| {
        grads.accumulate_into(*bound[idx].1, g, T::one());
        idx += 1;
    });
    Ok((report, out))
}

/// Owns the model, optimizer state and the random stream used for shuffling and dropout.
pub struct Trainer<T: Scalar> {
    pub model: Model<T>,
    pub optimizer: Adam<T>,
    pub config: TrainConfig,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Model<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamConfig {
            learning_rate: config.learning_rate,
            weight_decay: config.weight_decay,
            ..AdamConfig::default()
        };
        Ok(Self {
            optimizer: Adam::new(adam, &model.params),
            rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1)),
            model,
            config,
        })
    }

    fn rates(&self) -> DropoutRates {
        DropoutRates {
            embedding: self.config.embedding_dropout,
            fusion: self.config.fusion_dropout,
        }
    }

    /// One optimizer update on the batch-mean loss. Instances are processed in order and
    /// their gradients summed in that order.
    pub fn train_step(&mut self, batch: &[&Instance], epoch: usize) -> Result<StepReport> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let lambda = lambda_schedule(epoch, &self.config);
        let rates = self.rates();
        let scale = c::<T>(1.0 / batch.len() as f64);
        let mut sum = self.model.params.zeros_like();
        let mut report = StepReport {
            ner: 0.0,
            lec: 0.0,
            total: 0.0,
            lambda,
        };
        for inst in batch {
            let mut dropout = Dropout::on(&mut self.rng);
            let (r, grads) = loss_and_grads(&self.model, inst, lambda, rates, &mut dropout)?;
            if !r.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss (ner = {}, lec = {}) on sentence '{}'",
                    r.ner,
                    r.lec,
                    inst.chars.iter().collect::<String>()
                )));
            }
            report.ner += r.ner / batch.len() as f64;
            report.lec += r.lec / batch.len() as f64;
            report.total += r.total / batch.len() as f64;
            let flat = grads.into_flat();
            let mut idx = 0;
            sum.visit_mut(&mut |_, s| {
                for (a, &g) in s.as_mut_slice().iter_mut().zip(flat[idx].as_slice()) {
                    *a += scale * g;
                }
                idx += 1;
            });
        }
        if !sum.all_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        self.optimizer.update(&mut self.model.params, &sum);
        Ok(report)
    }

    /// Shuffles, batches and trains over `instances` once; returns mean losses over sentences.
    pub fn run_epoch(&mut self, instances: &[Instance], epoch: usize) -> Result<EpochReport> {
        let mut order: Vec<usize> = (0..instances.len()).collect();
        order.shuffle(&mut self.rng);
        let mut totals = (0.0, 0.0, 0.0);
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &instances[i]).collect();
            let r = self.train_step(&batch, epoch)?;
            let w = batch.len() as f64;
            totals.0 += r.ner * w;
            totals.1 += r.lec * w;
            totals.2 += r.total * w;
        }
        let n = instances.len().max(1) as f64;
        Ok(EpochReport {
            epoch,
            lambda: lambda_schedule(epoch, &self.config),
            ner: totals.0 / n,
            lec: totals.1 / n,
            total: totals.2 / n,
            dev: None,
        })
    }

    /// Trains for `config.epochs` epochs. With `out_dir` set, writes `epoch-N.ckpt` after every
    /// epoch and `best.ckpt` whenever dev F1 improves (or every epoch without a dev set).
    pub fn fit(
        &mut self,
        train: &[Instance],
        dev: Option<(&[Instance], &Corpus)>,
        out_dir: Option<&Path>,
    ) -> Result<Vec<EpochReport>> {
        if train.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut reports = Vec::with_capacity(self.config.epochs);
        let mut best = f64::NEG_INFINITY;
        for epoch in 0..self.config.epochs {
            let mut report = self.run_epoch(train, epoch)?;
            if let Some((instances, corpus)) = dev {
                report.dev = Some(evaluate_model(&self.model, instances, corpus)?);
            }
            log::info!("{}", report.log_line());
            if let Some(dir) = out_dir {
                crate::checkpoint::save(&self.model, dir.join(format!("epoch-{}.ckpt", epoch + 1)))?;
                let score = report.dev.as_ref().map_or(f64::INFINITY, |d| d.f1());
                if score > best || report.dev.is_none() {
                    best = score;
                    crate::checkpoint::save(&self.model, best_path(dir))?;
                }
            }
            reports.push(report);
        }
        Ok(reports)
    }
}

/// Fresh model for a training corpus: tag set and character vocabulary from `train`, word
/// vocabulary from `lexicon`, seeded from `config.seed`, then any pretrained embeddings copied in.
pub fn build_model<T: Scalar>(config: &TrainConfig, train: &Corpus, lexicon: &[String]) -> Result<Model<T>> {
    if train.scheme != config.model.scheme {
        return Err(Error::Config(format!(
            "corpus uses the {} scheme but the model is configured for {}",
            train.scheme, config.model.scheme
        )));
    }
    let tags = TagSet::from_corpus(train);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Model::new(
        config.model.clone(),
        tags,
        char_vocab(&train.sentences),
        word_vocab(lexicon, config.model.min_word_len),
        config.init_scale,
        &mut rng,
    )?;
    let chars = config.char_embeddings.as_ref().map(PretrainedEmbeddings::load).transpose()?;
    let words = config.word_embeddings.as_ref().map(PretrainedEmbeddings::load).transpose()?;
    let (nc, nw) = model.copy_pretrained(chars.as_ref(), words.as_ref())?;
    if chars.is_some() || words.is_some() {
        log::info!("pretrained rows copied: chars={nc} words={nw}");
    }
    Ok(model)
}

pub fn best_path(dir: &Path) -> PathBuf {
    dir.join("best.ckpt")
}

/// Strict-match scores of the model's Viterbi predictions.
pub fn evaluate_model<T: Scalar>(model: &Model<T>, instances: &[Instance], gold: &Corpus) -> Result<EvalReport> {
    let pred = instances
        .iter()
        .map(|i| model.predict_tags(i))
        .collect::<Result<Vec<_>>>()?;
    evaluate(&pred, gold)
}

/// Fraction of matched words whose predicted LEC label equals the gold label; 1 when no words.
pub fn lec_accuracy<T: Scalar>(model: &Model<T>, instances: &[Instance]) -> Result<f64> {
    let (mut right, mut total) = (0usize, 0usize);
    for inst in instances {
        let gold = inst
            .lec
            .as_ref()
            .ok_or_else(|| Error::invalid("instance has no gold LEC labels"))?;
        let (_, pred) = model.predict_all(inst)?;
        right += pred.iter().zip(gold).filter(|(a, b)| a == b).count();
        total += gold.len();
    }
    Ok(if total == 0 { 1.0 } else { right as f64 / total as f64 })
}
