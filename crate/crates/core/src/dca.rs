//! Dual Context Adapter.
//!
//! A second attention pass whose query sees only the known context:
//! `Q' = (z ⊙ (1−m))W_q`, `Z' = Attn(Q', K, V)`, then `K' = Z'W_k`,
//! `V' = Z'W_v` and `Z'' = Attn(Q, K', V')`. The layer output is
//! `Z + Z''`; `Z'` only reaches it through `K'` and `V'`.

use std::collections::BTreeMap;

use crate::backbone::{self, Binder, CrossWeights, DenoiserConfig, FeatureMap, TextEmbedding};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::image;
use crate::rng::{self, tag};
use crate::store::ParameterStore;
use crate::tensor::Tensor;
use crate::train::{self, TrainConfig, TrainOutcome, TrainSample};

pub const INIT_Q_STD: f64 = 0.02;

pub fn param_name(layer: usize, part: &str) -> String {
    format!("dca.l{layer}.{part}")
}

/// Pixel mask reduced to the token grid; 1 marks a token touching the hole.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMask {
    pub values: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl TokenMask {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(1 − m)` broadcast across `d` feature columns.
    pub fn keep_matrix(&self, d: usize) -> Tensor {
        let data = self
            .values
            .iter()
            .flat_map(|&m| std::iter::repeat_n(1.0 - m, d))
            .collect();
        Tensor::matrix(self.values.len(), d, data).expect("mask size")
    }
}

pub fn mask_to_tokens(mask: &Tensor, token_size: usize) -> Result<TokenMask> {
    image::check_mask(mask)?;
    let (_, h, w) = image::dims(mask)?;
    let pooled = image::downsample_mask(mask, token_size)?;
    Ok(TokenMask {
        values: pooled.into_data(),
        rows: h / token_size,
        cols: w / token_size,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcaLayer {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

/// Adapter weights keyed by backbone layer index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DcaParams {
    pub layers: BTreeMap<usize, DcaLayer>,
}

impl DcaParams {
    pub fn from_store(store: &ParameterStore, config: &DenoiserConfig) -> Result<Self> {
        let mut layers = BTreeMap::new();
        for l in config.adapted() {
            layers.insert(
                l,
                DcaLayer {
                    wq: store.require(&param_name(l, "q"))?.clone(),
                    wk: store.require(&param_name(l, "k"))?.clone(),
                    wv: store.require(&param_name(l, "v"))?.clone(),
                },
            );
        }
        Ok(DcaParams { layers })
    }

    pub fn to_store(&self) -> ParameterStore {
        let mut s = ParameterStore::new();
        for (&l, p) in &self.layers {
            s.insert(param_name(l, "q"), p.wq.clone(), false);
            s.insert(param_name(l, "k"), p.wk.clone(), false);
            s.insert(param_name(l, "v"), p.wv.clone(), false);
        }
        s
    }
}

/// `W_q ~ N(0, 0.02²)`, `W_k = W_v = 0`: the adapter starts as an exact
/// no-op.
pub fn init_dca(config: &DenoiserConfig, seed: u64) -> Result<ParameterStore> {
    config.validate()?;
    let d = config.dim;
    let mut layers = BTreeMap::new();
    for l in config.adapted() {
        let mut r = rng::stream(seed, &[tag::INIT, 1, l as u64]);
        layers.insert(
            l,
            DcaLayer {
                wq: rng::normal_tensor(&mut r, &[d, d], INIT_Q_STD),
                wk: Tensor::zeros(&[d, d]),
                wv: Tensor::zeros(&[d, d]),
            },
        );
    }
    Ok(DcaParams { layers }.to_store())
}

pub(crate) struct LayerNodes {
    pub q: NodeId,
    pub k: NodeId,
    pub v: NodeId,
}

pub(crate) fn bind_layer(g: &mut Graph, b: &mut Binder, layer: usize) -> Result<LayerNodes> {
    Ok(LayerNodes {
        q: b.get(g, &param_name(layer, "q"))?,
        k: b.get(g, &param_name(layer, "k"))?,
        v: b.get(g, &param_name(layer, "v"))?,
    })
}

/// `Z''` for one layer given the base path's `z`, `Q`, `K`, `V`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn augment(
    g: &mut Graph,
    z: NodeId,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    keep: &Tensor,
    p: &LayerNodes,
    heads: usize,
) -> Result<NodeId> {
    let background = g.hadamard_mask(z, keep)?;
    let q_bg = g.matmul(background, p.q)?;
    let z1 = backbone::mha(g, q_bg, k, v, heads)?;
    let k2 = g.matmul(z1, p.k)?;
    let v2 = g.matmul(z1, p.v)?;
    backbone::mha(g, q, k2, v2, heads)
}

/// `Z_n = Z + Z''` for one layer, outside any model.
pub fn dca_forward(
    z: &FeatureMap,
    c: &TextEmbedding,
    m: &TokenMask,
    base: &CrossWeights,
    params: &DcaLayer,
    heads: usize,
) -> Result<FeatureMap> {
    if (m.rows, m.cols) != (z.rows, z.cols) {
        return Err(Error::shape(
            "dca_forward",
            &[z.rows, z.cols],
            &[m.rows, m.cols],
        ));
    }
    let d = z.tokens.cols();
    let mut g = Graph::new();
    let (q, k, v) = backbone::cross_qkv(&mut g, z, c, base)?;
    let zn = g.constant(z.tokens.clone());
    let p = LayerNodes {
        q: g.constant(params.wq.clone()),
        k: g.constant(params.wk.clone()),
        v: g.constant(params.wv.clone()),
    };
    let base_out = backbone::mha(&mut g, q, k, v, heads)?;
    let extra = augment(&mut g, zn, q, k, v, &m.keep_matrix(d), &p, heads)?;
    let out = g.add(base_out, extra)?;
    FeatureMap::new(g.value(out).clone(), z.rows, z.cols)
}

/// Stage 1: fits fresh DCA weights against a fully frozen base.
pub fn train_stage1(
    config: &DenoiserConfig,
    base: &ParameterStore,
    data: &[TrainSample],
    hp: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    base.ensure_frozen("")?;
    if !base.has_prefix("base.") {
        return Err(Error::contract("stage 1 needs a base model"));
    }
    let mut store = base.subset("base.");
    let fresh = init_dca(config, seed)?;
    store.merge(&fresh);
    let losses = train::fit(config, &mut store, data, hp, true, seed)?;
    Ok(TrainOutcome {
        params: store.subset("dca."),
        losses,
    })
}
