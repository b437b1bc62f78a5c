//! Whole-model gradient check: every parameter's analytic gradient of the
//! masked cross-entropy is compared with central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{synth_scene, DetectionSet, TokenId, BOS, PAD};
use crate::error::Result;
use crate::model::{CaptionModel, ModelConfig};
use crate::tensor::numeric::{central_difference, relative_error, DEFAULT_STEP};
use crate::training::masked_xe_loss;

pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub numel: usize,
    pub relative_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub params: Vec<ParamCheck>,
    pub max_relative_error: f64,
    pub worst: String,
}

impl GradcheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// Checks `model` on one input. Dropout must be off in `model.config`.
pub fn check_model(model: &CaptionModel, det: &DetectionSet, tokens: &[TokenId], h: f64) -> Result<GradcheckReport> {
    let (input, target) = (&tokens[..tokens.len() - 1], &tokens[1..]);
    let analytic = {
        let mut sess = model.training_session(0);
        let logits = model.forward(&mut sess, det, input)?;
        let l = masked_xe_loss(&mut sess.graph, logits, target, PAD)?;
        let grads = sess.graph.backward(l)?;
        sess.param_grads(&grads)
    };
    let mut params = Vec::new();
    for (name, value) in model.params.iter() {
        let mut probe = model.clone();
        let numeric = central_difference(
            |t| {
                *probe.params.get_mut(name)? = t.clone();
                let mut sess = probe.inference_session();
                let logits = probe.forward(&mut sess, det, input)?;
                let l = masked_xe_loss(&mut sess.graph, logits, target, PAD)?;
                Ok(sess.graph.value(l).data()[0])
            },
            value,
            h,
        )?;
        params.push(ParamCheck {
            name: name.to_owned(),
            numel: value.numel(),
            relative_error: relative_error(&analytic[name], &numeric),
        });
    }
    let worst = params
        .iter()
        .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
        .expect("model has parameters");
    Ok(GradcheckReport {
        max_relative_error: worst.relative_error,
        worst: worst.name.clone(),
        params,
    })
}

/// Tiny-preset check with `objects` random boxes and `len` decoder positions.
pub fn run_preset(config: ModelConfig, seed: u64, objects: usize, len: usize) -> Result<GradcheckReport> {
    let mut config = config;
    config.dropout_rate = 0.0;
    let model = CaptionModel::new(config.clone(), seed)?;
    let (det, _) = synth_scene(seed, objects, config.d_feat)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c0);
    let mut tokens = vec![BOS];
    tokens.extend((0..len).map(|_| rng.random_range(2..config.vocab_size as TokenId)));
    check_model(&model, &det, &tokens, DEFAULT_STEP)
}
