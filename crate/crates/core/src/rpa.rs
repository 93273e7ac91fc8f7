//! Reference Patch Adapter.
//!
//! The target's base-path query attends to projections of a reference
//! patch's captured attention features: `K^r = z^r W_k`, `V^r = z^r W_v`,
//! `Z^r = Attn(Q, K^r, V^r)`, and the layer output becomes `Z + Z^r`.

use std::collections::BTreeMap;

use crate::backbone::{
    self, Adapters, Binder, CrossWeights, DenoiseInputs, Denoiser, DenoiserConfig, FeatureMap,
    TextEmbedding,
};
use crate::dca::{self, DcaLayer, TokenMask};
use crate::embedder;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::image;
use crate::rng::{self, tag};
use crate::store::ParameterStore;
use crate::tensor::Tensor;
use crate::train::{self, TrainConfig, TrainOutcome, TrainSample};

pub const INIT_K_STD: f64 = 0.02;

pub fn param_name(layer: usize, part: &str) -> String {
    format!("rpa.l{layer}.{part}")
}

/// Captured attention outputs of a reference patch, keyed by backbone
/// layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFeatures {
    pub layers: BTreeMap<usize, Tensor>,
    /// Index of the patch the features came from.
    pub source: usize,
}

impl ReferenceFeatures {
    pub fn layer(&self, l: usize) -> Result<&Tensor> {
        self.layers
            .get(&l)
            .ok_or_else(|| Error::contract(format!("reference features missing layer {l}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpaLayer {
    pub wk: Tensor,
    pub wv: Tensor,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RpaParams {
    pub layers: BTreeMap<usize, RpaLayer>,
}

impl RpaParams {
    pub fn from_store(store: &ParameterStore, config: &DenoiserConfig) -> Result<Self> {
        let mut layers = BTreeMap::new();
        for l in config.adapted() {
            layers.insert(
                l,
                RpaLayer {
                    wk: store.require(&param_name(l, "k"))?.clone(),
                    wv: store.require(&param_name(l, "v"))?.clone(),
                },
            );
        }
        Ok(RpaParams { layers })
    }

    pub fn to_store(&self) -> ParameterStore {
        let mut s = ParameterStore::new();
        for (&l, p) in &self.layers {
            s.insert(param_name(l, "k"), p.wk.clone(), false);
            s.insert(param_name(l, "v"), p.wv.clone(), false);
        }
        s
    }
}

/// `W_k ~ N(0, 0.02²)`, `W_v = 0`.
pub fn init_rpa(config: &DenoiserConfig, seed: u64) -> Result<ParameterStore> {
    config.validate()?;
    let d = config.dim;
    let mut layers = BTreeMap::new();
    for l in config.adapted() {
        let mut r = rng::stream(seed, &[tag::INIT, 2, l as u64]);
        layers.insert(
            l,
            RpaLayer {
                wk: rng::normal_tensor(&mut r, &[d, d], INIT_K_STD),
                wv: Tensor::zeros(&[d, d]),
            },
        );
    }
    Ok(RpaParams { layers }.to_store())
}

pub(crate) struct LayerNodes {
    pub k: NodeId,
    pub v: NodeId,
}

pub(crate) fn bind_layer(g: &mut Graph, b: &mut Binder, layer: usize) -> Result<LayerNodes> {
    Ok(LayerNodes {
        k: b.get(g, &param_name(layer, "k"))?,
        v: b.get(g, &param_name(layer, "v"))?,
    })
}

/// `Z^r` given the base query and the reference tokens.
pub(crate) fn augment(
    g: &mut Graph,
    q: NodeId,
    z_ref: NodeId,
    p: &LayerNodes,
    heads: usize,
) -> Result<NodeId> {
    let k = g.matmul(z_ref, p.k)?;
    let v = g.matmul(z_ref, p.v)?;
    backbone::mha(g, q, k, v, heads)
}

/// One adapted layer outside any model: `Z + Z^r`, where `Z` is the
/// DCA-augmented output when `dca` is given and the base output otherwise.
#[allow(clippy::too_many_arguments)]
pub fn rpa_forward(
    z: &FeatureMap,
    c: &TextEmbedding,
    base: &CrossWeights,
    dca: Option<(&DcaLayer, &TokenMask)>,
    refs: &ReferenceFeatures,
    params: &RpaParams,
    layer: usize,
    heads: usize,
) -> Result<FeatureMap> {
    let z_ref = refs.layer(layer)?;
    let p = params
        .layers
        .get(&layer)
        .ok_or_else(|| Error::contract(format!("no RPA weights for layer {layer}")))?;
    let zn = match dca {
        Some((dp, m)) => dca::dca_forward(z, c, m, base, dp, heads)?,
        None => backbone::base_attention(z, c, base, heads)?,
    };
    let mut g = Graph::new();
    let (q, _, _) = backbone::cross_qkv(&mut g, z, c, base)?;
    let zr = g.constant(z_ref.clone());
    let nodes = LayerNodes {
        k: g.constant(p.wk.clone()),
        v: g.constant(p.wv.clone()),
    };
    let extra = augment(&mut g, q, zr, &nodes, heads)?;
    let out = zn.tokens.add(g.value(extra))?;
    FeatureMap::new(out, z.rows, z.cols)
}

/// Timestep used for reference extraction: the middle of the schedule.
pub fn extraction_timestep(schedule_len: usize) -> usize {
    schedule_len / 2
}

/// One conditioned stage-1 pass over the masked reference patch at
/// timestep `t`, keeping each adapted layer's cross-attention output. The
/// noisy input is the clean signal scaled to level `t` with zero noise, so
/// extraction is deterministic.
pub fn extract_reference_features(
    model: &Denoiser,
    masked_ref: &Tensor,
    mask: &Tensor,
    prompt: &[usize],
    alpha_bar_t: f64,
    t: usize,
    source: usize,
) -> Result<ReferenceFeatures> {
    if !model.has_dca() {
        return Err(Error::contract(
            "reference extraction needs a stage-1 model with DCA",
        ));
    }
    let noisy = masked_ref.scale(alpha_bar_t.sqrt());
    let inputs = DenoiseInputs {
        noisy: &noisy,
        timestep: t,
        prompt,
        mask,
        masked_image: masked_ref,
    };
    let adapters = Adapters {
        dca: true,
        ..Adapters::none()
    };
    let captured = model.capture_attention(&inputs, &adapters)?;
    Ok(ReferenceFeatures {
        layers: model.config.adapted().into_iter().zip(captured).collect(),
        source,
    })
}

/// Cosine gap below which two candidates count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Argmax of cosine similarity over candidates other than `exclude`,
/// lowest index on ties (scores within [`TIE_TOLERANCE`], so rescaled
/// copies tie despite rounding). Zero-norm embeddings score `-inf`.
pub fn select_by_embedding(
    query: &[f64],
    candidates: &[Vec<f64>],
    exclude: Option<usize>,
) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (l, cand) in candidates.iter().enumerate() {
        if Some(l) == exclude {
            continue;
        }
        let s = embedder::cosine_sim(query, cand);
        if best.is_none_or(|(_, b)| s > b + TIE_TOLERANCE) {
            best = Some((l, s));
        }
    }
    best.map(|(l, _)| l)
        .ok_or_else(|| Error::contract("no candidate reference patches"))
}

/// Picks the candidate patch most similar to the stage-1 patch `query`.
pub fn select_reference(
    query: &Tensor,
    candidates: &[Tensor],
    exclude: Option<usize>,
) -> Result<usize> {
    let q = embedder::embed_image(query)?;
    let cands = candidates
        .iter()
        .map(embedder::embed_image)
        .collect::<Result<Vec<_>>>()?;
    select_by_embedding(&q, &cands, exclude)
}

/// Stage 2: fits RPA and control-branch weights with base and DCA frozen.
/// Every sample must carry reference features and a control image.
pub fn train_stage2(
    config: &DenoiserConfig,
    stage1: &ParameterStore,
    data: &[TrainSample],
    hp: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    stage1.ensure_frozen("base.")?;
    stage1.ensure_frozen("dca.")?;
    if !stage1.has_prefix("dca.") {
        return Err(Error::contract("stage 2 needs a stage-1 model with DCA"));
    }
    if data
        .iter()
        .any(|s| s.reference.is_none() || s.control.is_none())
    {
        return Err(Error::contract(
            "stage-2 samples need reference features and control input",
        ));
    }
    let mut store = stage1.subset("base.");
    store.merge(&stage1.subset("dca."));
    store.merge(&init_rpa(config, seed)?);
    store.merge(&crate::pipeline::init_control(config));
    let losses = train::fit(config, &mut store, data, hp, true, seed)?;
    let mut params = store.subset("rpa.");
    params.merge(&store.subset("ctrl."));
    Ok(TrainOutcome { params, losses })
}

/// Masked reference patch in the signed range with its hole zeroed.
pub fn masked_patch(patch: &Tensor, mask: &Tensor) -> Result<Tensor> {
    image::apply_mask(patch, mask)
}
