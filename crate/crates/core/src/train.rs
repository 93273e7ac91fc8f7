//! Noise-prediction training shared by base pretraining and both adapter
//! stages.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backbone::{self, Adapters, Binder, DenoiseInputs, DenoiserConfig};
use crate::diffusion::{self, NoiseSchedule};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::image;
use crate::optim::AdamW;
use crate::rng::{self, tag};
use crate::rpa::ReferenceFeatures;
use crate::store::ParameterStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Probability of replacing the prompt with the empty prompt, so the
    /// model also learns the unconditional branch used by guidance.
    pub prompt_dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 16,
            lr: 1e-4,
            weight_decay: 0.0,
            prompt_dropout: 0.1,
        }
    }
}

/// One training tuple. `image` is the clean target in the signed range.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub image: Tensor,
    pub mask: Tensor,
    pub prompt: Vec<usize>,
    /// Stage 2: the degraded stage-1 stand-in feeding the control branch.
    pub control: Option<Tensor>,
    /// Stage 2: features of the reference patch.
    pub reference: Option<ReferenceFeatures>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Trained tensors only (the frozen inputs are not echoed back).
    pub params: ParameterStore,
    /// Mean batch loss per step.
    pub losses: Vec<f64>,
}

/// Moving average with window `w`; shorter than `w` yields an empty vector.
pub fn moving_average(xs: &[f64], w: usize) -> Vec<f64> {
    if w == 0 || xs.len() < w {
        return Vec::new();
    }
    xs.windows(w)
        .map(|s| s.iter().sum::<f64>() / w as f64)
        .collect()
}

/// Noise-prediction MSE node for one sample at timestep `t` with noise `eps`.
#[allow(clippy::too_many_arguments)]
fn sample_loss(
    g: &mut Graph,
    b: &mut Binder,
    config: &DenoiserConfig,
    schedule: &NoiseSchedule,
    s: &TrainSample,
    t: usize,
    eps: &Tensor,
    drop_prompt: bool,
    use_dca: bool,
) -> Result<NodeId> {
    let y_t = diffusion::forward_diffuse(schedule, &s.image, t, eps)?;
    let masked = image::apply_mask(&s.image, &s.mask)?;
    let prompt: &[usize] = if drop_prompt { &[] } else { &s.prompt };
    let inputs = DenoiseInputs {
        noisy: &y_t,
        timestep: t,
        prompt,
        mask: &s.mask,
        masked_image: &masked,
    };
    let adapters = Adapters {
        dca: use_dca,
        reference: s.reference.as_ref(),
        control: s.control.as_ref(),
    };
    let nodes = backbone::forward_graph(g, b, config, &inputs, &adapters)?;
    let target = g.constant(image::patchify(eps, config.token_size)?);
    g.mse(nodes.eps_tokens, target)
}

/// Loss of one sample at a fixed timestep and noise, with its gradient
/// for every trainable tensor of `store`.
pub fn loss_with_grads(
    config: &DenoiserConfig,
    store: &ParameterStore,
    sample: &TrainSample,
    t: usize,
    eps: &Tensor,
    use_dca: bool,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let schedule = NoiseSchedule::default();
    let mut g = Graph::new();
    let mut b = Binder::new(store, true);
    let loss = sample_loss(
        &mut g, &mut b, config, &schedule, sample, t, eps, false, use_dca,
    )?;
    let tracked = b.tracked();
    let grads = g.backward(loss)?;
    let value = g.value(loss).item();
    Ok((
        value,
        tracked
            .into_iter()
            .map(|(name, id)| (name, grads.wrt(id)))
            .collect(),
    ))
}

/// Builds the loss graph for one minibatch and returns the loss node.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batch_loss(
    g: &mut Graph,
    b: &mut Binder,
    config: &DenoiserConfig,
    schedule: &NoiseSchedule,
    batch: &[&TrainSample],
    use_dca: bool,
    rng: &mut rng::Rng,
    prompt_dropout: f64,
) -> Result<NodeId> {
    let mut total: Option<NodeId> = None;
    for s in batch {
        let t = rng::below(rng, schedule.len());
        let eps = rng::normal_tensor(rng, s.image.shape(), 1.0);
        let drop = rng::uniform(rng, 0.0, 1.0) < prompt_dropout;
        let l = sample_loss(g, b, config, schedule, s, t, &eps, drop, use_dca)?;
        total = Some(match total {
            None => l,
            Some(acc) => g.add(acc, l)?,
        });
    }
    let total = total.ok_or_else(|| Error::contract("empty minibatch"))?;
    g.scale(total, 1.0 / batch.len() as f64)
}

/// Optimises every non-frozen tensor of `store` in place and returns the
/// per-step losses.
pub(crate) fn fit(
    config: &DenoiserConfig,
    store: &mut ParameterStore,
    data: &[TrainSample],
    hp: &TrainConfig,
    use_dca: bool,
    seed: u64,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    if hp.batch_size == 0 {
        return Err(Error::contract("batch size must be positive"));
    }
    let schedule = NoiseSchedule::default();
    let mut opt = AdamW::new(hp.lr).with_weight_decay(hp.weight_decay);
    let mut losses = Vec::with_capacity(hp.steps);
    for step in 0..hp.steps {
        let mut r = rng::stream(seed, &[tag::TRAIN_BATCH, step as u64]);
        let batch: Vec<&TrainSample> = (0..hp.batch_size)
            .map(|_| &data[rng::below(&mut r, data.len())])
            .collect();
        let mut g = Graph::new();
        let (loss, tracked) = {
            let mut b = Binder::new(store, true);
            let loss = batch_loss(
                &mut g,
                &mut b,
                config,
                &schedule,
                &batch,
                use_dca,
                &mut r,
                hp.prompt_dropout,
            )?;
            (loss, b.tracked())
        };
        let grads = g.backward(loss)?;
        losses.push(g.value(loss).item());
        opt.begin_step();
        for (name, id) in tracked {
            let grad = grads.wrt(id);
            let param = store.get_mut(&name).expect("bound parameter exists");
            opt.update(&name, param, &grad);
        }
    }
    Ok(losses)
}
