//! Teacher-forced masked cross-entropy training with Adam and an epoch-wise
//! geometric learning-rate decay.

mod adam;
mod loss;

pub use adam::{adam_step, clip_global_norm, AdamState};
pub use loss::{masked_xe_loss, masked_xe_sum};

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CaptionLine, DetectionSet, TokenId, Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::model::{CaptionModel, Checkpoint, CHECKPOINT_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub lr_decay_gamma: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Write a checkpoint after every this many epochs (and always at the end).
    pub checkpoint_every: Option<usize>,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::paper()
    }
}

impl TrainConfig {
    /// 30 epochs from a learning rate of 1e-5.
    pub fn paper() -> Self {
        TrainConfig {
            epochs: 30,
            base_lr: 1e-5,
            lr_decay_gamma: 0.95,
            batch_size: 8,
            seed: 0,
            checkpoint_every: None,
            clip_norm: Some(5.0),
        }
    }

    pub fn desk() -> Self {
        TrainConfig {
            epochs: 100,
            base_lr: 1e-3,
            lr_decay_gamma: 0.99,
            ..TrainConfig::paper()
        }
    }

    /// Settings for memorising a few dozen synthetic scenes with the tiny model.
    pub fn tiny() -> Self {
        TrainConfig {
            epochs: 300,
            base_lr: 3e-3,
            lr_decay_gamma: 0.995,
            ..TrainConfig::paper()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(TrainConfig::paper()),
            "desk" => Ok(TrainConfig::desk()),
            "tiny" => Ok(TrainConfig::tiny()),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected tiny, desk or paper)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.base_lr <= 0.0 || self.base_lr.is_nan() {
            return Err(Error::Config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.lr_decay_gamma > 0.0 && self.lr_decay_gamma <= 1.0) {
            return Err(Error::Config(format!("lr_decay_gamma {} outside (0, 1]", self.lr_decay_gamma)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Config("checkpoint_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// `base_lr · gamma^epoch`, constant within an epoch (`epoch` is 0-based).
pub fn epoch_lr(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.base_lr * cfg.lr_decay_gamma.powi(epoch as i32)
}

/// One (image, caption) pair; `tokens` is `BOS … EOS`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub det: DetectionSet,
    pub tokens: Vec<TokenId>,
}

impl TrainingExample {
    /// Decoder inputs and next-token targets.
    pub fn split(&self) -> (&[TokenId], &[TokenId]) {
        let n = self.tokens.len();
        (&self.tokens[..n - 1], &self.tokens[1..])
    }
}

/// Joins captions to detection sets by `image_id`; every caption becomes its
/// own example. Captions whose image is missing are skipped.
pub fn pair_examples(sets: &[DetectionSet], captions: &[CaptionLine], vocab: &Vocabulary) -> Result<Vec<TrainingExample>> {
    let by_id: HashMap<&str, &DetectionSet> = sets.iter().map(|s| (s.image_id.as_str(), s)).collect();
    let mut out = Vec::with_capacity(captions.len());
    for line in captions {
        let Some(det) = by_id.get(line.image_id.as_str()) else {
            log::warn!("caption for unknown image `{}` skipped", line.image_id);
            continue;
        };
        out.push(TrainingExample {
            det: (*det).clone(),
            tokens: vocab.encode_caption(&line.caption)?,
        });
    }
    Ok(out)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

/// Where [`Trainer::run`] writes its checkpoint and log.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

fn mix(mut x: u64) -> u64 {
    // splitmix64 finaliser
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn derive_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    mix(mix(mix(seed) ^ epoch as u64) ^ batch as u64)
}

/// Owns the model and optimizer for the duration of training. All
/// randomness (shuffling, dropout) is derived from `(seed, epoch, batch)`,
/// so resuming from a checkpoint replays the uninterrupted trajectory.
#[derive(Clone, Debug)]
pub struct Trainer {
    model: CaptionModel,
    vocab: Vocabulary,
    cfg: TrainConfig,
    optimizer: AdamState,
    epoch: usize,
    init_seed: u64,
}

impl Trainer {
    pub fn new(model: CaptionModel, vocab: Vocabulary, cfg: TrainConfig, init_seed: u64) -> Result<Self> {
        cfg.validate()?;
        if model.config.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "model vocab_size {} but vocabulary has {} ids",
                model.config.vocab_size,
                vocab.len()
            )));
        }
        let optimizer = AdamState::new(&model.params);
        Ok(Trainer {
            model,
            vocab,
            cfg,
            optimizer,
            epoch: 0,
            init_seed,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        ck.train_config.validate()?;
        let model = ck.model()?;
        Ok(Trainer {
            model,
            vocab: ck.vocab,
            cfg: ck.train_config,
            optimizer: ck.optimizer,
            epoch: ck.epoch,
            init_seed: ck.init_seed,
        })
    }

    pub fn model(&self) -> &CaptionModel {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn config_mut(&mut self) -> &mut TrainConfig {
        &mut self.cfg
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.optimizer
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            model_config: self.model.config.clone(),
            train_config: self.cfg.clone(),
            vocab: self.vocab.clone(),
            params: self.model.params.clone(),
            optimizer: self.optimizer.clone(),
            epoch: self.epoch,
            init_seed: self.init_seed,
        }
    }

    /// Forward, backward and one Adam step over `batch`. The loss is the
    /// summed token cross-entropy divided by the batch's token count.
    /// Returns (loss sum, token count) before the update.
    pub fn train_step(&mut self, batch: &[&TrainingExample], lr: f64, dropout_seed: u64) -> Result<(f64, usize)> {
        let mut grads = {
            let mut sess = self.model.training_session(dropout_seed);
            let mut terms = Vec::with_capacity(batch.len());
            let mut tokens = 0;
            for ex in batch {
                let (input, target) = ex.split();
                let logits = self.model.forward(&mut sess, &ex.det, input)?;
                let (sum, count) = masked_xe_sum(&mut sess.graph, logits, target, PAD)?;
                terms.push(sum);
                tokens += count;
            }
            let mut total = terms[0];
            for &t in &terms[1..] {
                total = sess.graph.add(total, t)?;
            }
            let loss_sum = sess.graph.value(total).data()[0];
            let loss = sess.graph.scale(total, 1.0 / tokens as f64)?;
            let g = sess.graph.backward(loss)?;
            (sess.param_grads(&g), loss_sum, tokens)
        };
        if let Some(max) = self.cfg.clip_norm {
            clip_global_norm(&mut grads.0, max);
        }
        adam_step(&mut self.model.params, &grads.0, &mut self.optimizer, lr)?;
        Ok((grads.1, grads.2))
    }

    /// Shuffles with the epoch's seed and steps through every batch once.
    pub fn run_epoch(&mut self, data: &[TrainingExample]) -> Result<EpochLog> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let start = Instant::now();
        let epoch = self.epoch;
        let lr = epoch_lr(epoch, &self.cfg);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, epoch, usize::MAX)));
        let (mut loss_sum, mut tokens) = (0.0, 0);
        for (b, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let batch: Vec<&TrainingExample> = chunk.iter().map(|&i| &data[i]).collect();
            let (s, n) = self.train_step(&batch, lr, derive_seed(self.cfg.seed, epoch, b))?;
            loss_sum += s;
            tokens += n;
        }
        self.epoch += 1;
        Ok(EpochLog {
            epoch,
            mean_loss: loss_sum / tokens as f64,
            lr,
            wall_seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Trains until `config().epochs` epochs are complete, logging each epoch
    /// and writing checkpoints as configured.
    pub fn run(&mut self, data: &[TrainingExample], outputs: &TrainOutputs) -> Result<Checkpoint> {
        self.run_with(data, outputs, |_| {})
    }

    pub fn run_with(
        &mut self,
        data: &[TrainingExample],
        outputs: &TrainOutputs,
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<Checkpoint> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut log = match &outputs.log {
            Some(p) => Some(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?)),
            None => None,
        };
        while self.epoch < self.cfg.epochs {
            let entry = self.run_epoch(data)?;
            log::info!("epoch {} loss {:.5} lr {:.3e}", entry.epoch, entry.mean_loss, entry.lr);
            if let (Some(w), Some(p)) = (log.as_mut(), outputs.log.as_ref()) {
                let line = serde_json::to_string(&entry).expect("log entry serialises");
                writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| Error::io(p, e))?;
            }
            on_epoch(&entry);
            let periodic = self.cfg.checkpoint_every.is_some_and(|k| self.epoch.is_multiple_of(k));
            if let (true, Some(path)) = (periodic && self.epoch < self.cfg.epochs, &outputs.checkpoint) {
                self.checkpoint().save(path)?;
            }
        }
        let ck = self.checkpoint();
        if let Some(path) = &outputs.checkpoint {
            ck.save(path)?;
        }
        Ok(ck)
    }
}

/// Token-weighted mean masked cross-entropy without dropout or updates.
pub fn evaluate_loss(model: &CaptionModel, data: &[TrainingExample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (mut sum, mut tokens) = (0.0, 0);
    for ex in data {
        let mut sess = model.inference_session();
        let (input, target) = ex.split();
        let logits = model.forward(&mut sess, &ex.det, input)?;
        let (s, n) = masked_xe_sum(&mut sess.graph, logits, target, PAD)?;
        sum += sess.graph.value(s).data()[0];
        tokens += n;
    }
    Ok(sum / tokens as f64)
}

/// Builds a trainer for `model` and runs it to completion.
pub fn train(
    model: CaptionModel,
    vocab: Vocabulary,
    data: &[TrainingExample],
    cfg: TrainConfig,
    init_seed: u64,
    outputs: &TrainOutputs,
) -> Result<Checkpoint> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Trainer::new(model, vocab, cfg, init_seed)?.run(data, outputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelParams};
    use crate::tensor::Tensor;
    use std::collections::BTreeMap;

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig::paper();
        assert_eq!(epoch_lr(0, &cfg), 1e-5);
        assert!((epoch_lr(2, &cfg) - 9.025e-6).abs() < 1e-20);
        let flat = TrainConfig {
            lr_decay_gamma: 1.0,
            ..cfg
        };
        assert_eq!(epoch_lr(17, &flat), 1e-5);
    }

    #[test]
    fn full_size_train_defaults() {
        let c = TrainConfig::paper();
        assert_eq!((c.epochs, c.base_lr), (30, 1e-5));
        let mut bad = c.clone();
        bad.lr_decay_gamma = 1.5;
        assert!(bad.validate().is_err());
    }

    fn scalar_params() -> ModelParams {
        serde_json::from_str(r#"{"w": {"shape": [1], "data": [0.5]}}"#).unwrap()
    }

    fn grads(v: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("w".to_string(), Tensor::scalar(v))])
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut p = scalar_params();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &grads(1.0), &mut st, 0.01).unwrap();
        let expect = 0.5 - 0.01 / (1.0 + 1e-8);
        assert!((p.get("w").unwrap().data()[0] - expect).abs() < 1e-15);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut p = scalar_params();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &grads(2.0), &mut st, 0.01).unwrap();
        let before = p.clone();
        let m1 = st.first_moment("w").unwrap()[0];
        // A zero gradient still moves the parameter through the remaining
        // first moment, so start from fresh moments for the fixed point.
        let mut fresh = AdamState::new(&p);
        adam_step(&mut p, &grads(0.0), &mut fresh, 0.01).unwrap();
        assert_eq!(p, before);
        adam_step(&mut p.clone(), &grads(0.0), &mut st, 0.01).unwrap();
        assert!(st.first_moment("w").unwrap()[0].abs() < m1.abs());
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut p = scalar_params();
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &grads(f64::NAN), &mut st, 0.01).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { ref param } if param == "w"));
        assert_eq!(st.step, 0);
        assert_eq!(p, scalar_params());
    }

    #[test]
    fn clipping_scales_to_max_norm() {
        let mut g = BTreeMap::from([
            ("a".to_string(), Tensor::new(vec![2], vec![3.0, 0.0]).unwrap()),
            ("b".to_string(), Tensor::scalar(4.0)),
        ]);
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g["a"].data()[0] - 0.6).abs() < 1e-15);
        assert!((g["b"].data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn empty_dataset_fails_before_training() {
        let vocab = Vocabulary::build(["a b"], 1).unwrap();
        let model = CaptionModel::new(ModelConfig::tiny(vocab.len()), 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ck = dir.path().join("ck.json");
        let out = TrainOutputs {
            checkpoint: Some(ck.clone()),
            log: None,
        };
        assert!(matches!(
            train(model, vocab, &[], TrainConfig::tiny(), 0, &out),
            Err(Error::EmptyDataset)
        ));
        assert!(!ck.exists());
    }
}
