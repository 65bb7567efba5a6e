//! Minibatch gradient descent on the contrastive loss with validation
//! checkpoint selection.

use std::collections::HashSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::checkpoint::Checkpoint;
use super::schedule::{Schedule, ScheduleError};
use super::{token_counts, DualEncoder, EncoderError, MAX_LOG_TEMP};
use crate::retrieval::{mcmrr, retrieval_metrics, Direction, RetrievalError, RetrievalPair};
use crate::rng::{derive_seed, seeded};
use crate::tokenizer::TokenId;

/// One study: its video frames and its report's content tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    /// Patient id; train and validation sets must not share one.
    pub group: String,
    /// Frame feature vectors, all of length `d_img`.
    pub frames: Vec<Vec<f64>>,
    pub tokens: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub warmup_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub d: usize,
    pub val_every: usize,
}

impl Default for TrainConfig {
    /// Full-scale values: peak rate 5e-5, 2000 warmup steps, 50 epochs,
    /// batches of 1024.
    fn default() -> Self {
        TrainConfig {
            lr_max: 5e-5,
            warmup_steps: 2000,
            epochs: 50,
            batch_size: 1024,
            seed: 0,
            d: 512,
            val_every: 1,
        }
    }
}

impl TrainConfig {
    /// Settings sized for a few hundred synthetic studies on a laptop.
    ///
    /// Plain gradient descent on a linear model needs a far larger step
    /// than the full-scale peak rate, so `lr_max` differs as well.
    pub fn desk() -> Self {
        TrainConfig {
            lr_max: 2.0,
            warmup_steps: 100,
            epochs: 150,
            batch_size: 64,
            seed: 0,
            d: 32,
            val_every: 5,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("need at least {batch_size} training examples, got {got}")]
    TooFewExamples { batch_size: usize, got: usize },
    #[error("batch size must be at least 2, got {0}")]
    BatchSize(usize),
    #[error("val_every must be at least 1")]
    ValEvery,
    #[error("validation set needs at least 2 examples, got {0}")]
    TooFewValidation(usize),
    #[error("patient {0:?} appears in both training and validation sets")]
    SplitOverlap(String),
    #[error("example {index}: {reason}")]
    BadExample { index: usize, reason: String },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("loss became non-finite at step {step} (epoch {epoch})")]
    NonFinite {
        epoch: usize,
        step: usize,
        /// Best checkpoint reached before the failure.
        last_good: Box<Checkpoint>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValPoint {
    pub epoch: usize,
    pub mcmrr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Checkpoint with the lowest validation MCMRR (earliest on ties).
    pub best: Checkpoint,
    /// Parameters after the last step.
    pub last: DualEncoder,
    /// Loss of every step, in order.
    pub losses: Vec<f64>,
    /// Validation MCMRR at epoch 0 and every `val_every` epochs.
    pub history: Vec<ValPoint>,
    pub schedule: Schedule,
}

/// Validation MCMRR, using each example's first frame as its image.
pub fn validation_mcmrr(params: &DualEncoder, examples: &[TrainExample]) -> Result<f64, TrainError> {
    let pairs = examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            Ok(RetrievalPair {
                report_id: format!("{i:08}"),
                image_id: format!("{i:08}"),
                text_id: format!("{i:08}"),
                image: params.encode_image(&ex.frames[0])?,
                text: params.encode_tokens(&ex.tokens)?,
            })
        })
        .collect::<Result<Vec<_>, EncoderError>>()?;
    let i2t = retrieval_metrics(&pairs, Direction::ImageToText, &[])?;
    let t2i = retrieval_metrics(&pairs, Direction::TextToImage, &[])?;
    Ok(mcmrr(&i2t, &t2i)?)
}

fn validate(
    train: &[TrainExample],
    val: &[TrainExample],
    d_txt: usize,
    cfg: &TrainConfig,
) -> Result<usize, TrainError> {
    if cfg.batch_size < 2 {
        return Err(TrainError::BatchSize(cfg.batch_size));
    }
    if cfg.val_every == 0 {
        return Err(TrainError::ValEvery);
    }
    if train.len() < cfg.batch_size {
        return Err(TrainError::TooFewExamples {
            batch_size: cfg.batch_size,
            got: train.len(),
        });
    }
    if val.len() < 2 {
        return Err(TrainError::TooFewValidation(val.len()));
    }
    let train_groups: HashSet<&str> = train.iter().map(|e| e.group.as_str()).collect();
    if let Some(e) = val.iter().find(|e| train_groups.contains(e.group.as_str())) {
        return Err(TrainError::SplitOverlap(e.group.clone()));
    }
    let d_img = train[0].frames.first().map(Vec::len).unwrap_or(0);
    for (index, ex) in train.iter().chain(val).enumerate() {
        let bad = |reason: String| TrainError::BadExample { index, reason };
        if ex.frames.is_empty() {
            return Err(bad("no frames".into()));
        }
        if let Some(f) = ex
            .frames
            .iter()
            .find(|f| f.len() != d_img || f.iter().any(|x| !x.is_finite()))
        {
            return Err(bad(format!("frame of length {} is not {d_img} finite values", f.len())));
        }
        if ex.tokens.is_empty() {
            return Err(bad("no content tokens".into()));
        }
        if let Some(t) = ex.tokens.iter().find(|&&t| t as usize >= d_txt) {
            return Err(bad(format!("token {t} outside vocabulary of {d_txt}")));
        }
    }
    Ok(d_img)
}

/// Trains a fresh encoder.
///
/// Each epoch shuffles the training set, picks one random frame per
/// video, and takes one step per full batch (a trailing partial batch is
/// skipped; the shuffle rotates which examples it holds). The learning
/// rate follows the warmup + cosine schedule over all steps.
pub fn train(
    train: &[TrainExample],
    val: &[TrainExample],
    d_txt: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let d_img = validate(train, val, d_txt, cfg)?;
    let steps_per_epoch = train.len() / cfg.batch_size;
    let schedule = Schedule::new(cfg.lr_max, cfg.warmup_steps, cfg.epochs * steps_per_epoch)?;

    let counts: Vec<Vec<f64>> = train
        .iter()
        .map(|e| token_counts(&e.tokens, d_txt))
        .collect::<Result<_, _>>()?;
    let mut params = DualEncoder::random(d_img, d_txt, cfg.d, derive_seed(cfg.seed, "init"));
    let mut rng = seeded(derive_seed(cfg.seed, "train"));

    let initial = validation_mcmrr(&params, val)?;
    let mut history = vec![ValPoint {
        epoch: 0,
        mcmrr: initial,
    }];
    let mut best = Checkpoint {
        params: params.clone(),
        epoch: 0,
        val_mcmrr: initial,
    };
    let mut losses = Vec::with_capacity(schedule.total_steps);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let frame_pick: Vec<usize> = train.iter().map(|e| rng.random_range(0..e.frames.len())).collect();
        for batch in order.chunks_exact(cfg.batch_size) {
            let x = Array2::from_shape_fn((batch.len(), d_img), |(r, c)| {
                train[batch[r]].frames[frame_pick[batch[r]]][c]
            });
            let c = Array2::from_shape_fn((batch.len(), d_txt), |(r, c)| counts[batch[r]][c]);
            step += 1;
            let outcome = params.loss_and_grads(x.view(), c.view());
            let (loss, grads) = match outcome {
                Ok((loss, g)) if loss.is_finite() => (loss, g),
                _ => {
                    return Err(TrainError::NonFinite {
                        epoch,
                        step,
                        last_good: Box::new(best),
                    })
                }
            };
            let lr = schedule.lr(step)?;
            params.w_img.scaled_add(-lr, &grads.w_img);
            params.w_txt.scaled_add(-lr, &grads.w_txt);
            params.log_temp = (params.log_temp - lr * grads.log_temp).min(MAX_LOG_TEMP);
            losses.push(loss);
        }
        if epoch % cfg.val_every == 0 || epoch == cfg.epochs {
            let m = validation_mcmrr(&params, val)?;
            history.push(ValPoint { epoch, mcmrr: m });
            if m < best.val_mcmrr {
                best = Checkpoint {
                    params: params.clone(),
                    epoch,
                    val_mcmrr: m,
                };
            }
        }
    }
    Ok(TrainOutcome {
        best,
        last: params,
        losses,
        history,
        schedule,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    /// Each example's text is one of `k` tokens; its frames are that
    /// token's prototype plus noise.
    fn toy_corpus(n: usize, k: usize, seed: u64, prefix: &str) -> Vec<TrainExample> {
        let mut rng = seeded(seed);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let protos: Vec<Vec<f64>> = {
            let mut r = seeded(99);
            (0..k)
                .map(|_| (0..8).map(|_| noise.sample(&mut r) * 10.0).collect())
                .collect()
        };
        (0..n)
            .map(|i| {
                let t = rng.random_range(0..k);
                TrainExample {
                    group: format!("{prefix}{i}"),
                    frames: (0..3)
                        .map(|_| protos[t].iter().map(|p| p + noise.sample(&mut rng)).collect())
                        .collect(),
                    tokens: vec![t as TokenId],
                }
            })
            .collect()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            lr_max: 1.0,
            warmup_steps: 5,
            epochs: 20,
            batch_size: 16,
            seed: 3,
            d: 6,
            val_every: 2,
        }
    }

    #[test]
    fn training_is_deterministic_and_improves() {
        let tr = toy_corpus(96, 6, 1, "t");
        let va = toy_corpus(30, 6, 2, "v");
        let a = train(&tr, &va, 6, &cfg()).unwrap();
        let b = train(&tr, &va, 6, &cfg()).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.best, b.best);
        assert_eq!(a.losses.len(), 20 * 6);
        assert!(a.losses.last().unwrap() < a.losses.first().unwrap());
        assert!(a.best.val_mcmrr < a.history[0].mcmrr);
        let min = a.history.iter().map(|p| p.mcmrr).fold(f64::INFINITY, f64::min);
        assert_eq!(a.best.val_mcmrr, min);
        assert!(a.best.params.log_temp <= MAX_LOG_TEMP);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let tr = toy_corpus(48, 4, 5, "t");
        let va = toy_corpus(10, 4, 6, "v");
        let mut c = cfg();
        c.lr_max = 0.0;
        c.epochs = 3;
        let out = train(&tr, &va, 4, &c).unwrap();
        assert_eq!(out.last, out.best.params);
        assert_eq!(out.best.epoch, 0);
        assert!(out.history.iter().all(|p| p.mcmrr == out.history[0].mcmrr));
    }

    #[test]
    fn rejects_bad_inputs() {
        let tr = toy_corpus(20, 3, 1, "t");
        let va = toy_corpus(5, 3, 2, "v");
        let mut c = cfg();
        c.batch_size = 32;
        assert!(matches!(train(&tr, &va, 3, &c), Err(TrainError::TooFewExamples { .. })));
        c.batch_size = 1;
        assert!(matches!(train(&tr, &va, 3, &c), Err(TrainError::BatchSize(1))));
        let overlap = toy_corpus(5, 3, 2, "t");
        assert!(matches!(
            train(&tr, &overlap, 3, &cfg()),
            Err(TrainError::SplitOverlap(_))
        ));
        assert!(matches!(train(&tr, &va, 2, &cfg()), Err(TrainError::BadExample { .. })));
        let mut long_warmup = cfg();
        long_warmup.warmup_steps = 1000;
        assert!(matches!(train(&tr, &va, 3, &long_warmup), Err(TrainError::Schedule(_))));
    }

    #[test]
    fn exploding_rate_reports_last_good_checkpoint() {
        let tr = toy_corpus(48, 4, 5, "t");
        let va = toy_corpus(10, 4, 6, "v");
        let mut c = cfg();
        c.lr_max = 1e300;
        match train(&tr, &va, 4, &c) {
            Err(TrainError::NonFinite { last_good, .. }) => assert!(last_good.params.is_finite()),
            other => panic!("expected non-finite failure, got {other:?}"),
        }
    }
}
