//! The token-grid transformer denoiser.
//!
//! An image triple `(y_t, masked image, mask)` is concatenated along
//! channels, cut into `s×s` tokens and projected to width `d`. Each of the
//! `L` blocks runs self-attention, text cross-attention (the layer that
//! hosts the adapters) and a GELU feed-forward, each as a pre-norm residual
//! branch; control features, when present, are added at the end of every
//! block. A zero-initialised head maps tokens back to a noise image.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dca::{self, TokenMask};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::image;
use crate::rng::{self, tag};
use crate::rpa::{self, ReferenceFeatures};
use crate::store::ParameterStore;
use crate::tensor::Tensor;
use crate::vocab;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Base resolution; inputs may be smaller but never larger.
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub token_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub vocab_size: usize,
    pub max_prompt_len: usize,
    /// Fixed 2-D sinusoidal token positions.
    pub positional: bool,
    /// Cross-attention layers that host DCA/RPA; `None` means all.
    pub adapted_layers: Option<Vec<usize>>,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            height: 64,
            width: 64,
            channels: 3,
            token_size: 8,
            dim: 64,
            layers: 4,
            heads: 4,
            ffn_mult: 4,
            vocab_size: vocab::SIZE,
            max_prompt_len: 16,
            positional: true,
            adapted_layers: None,
        }
    }
}

impl DenoiserConfig {
    /// 32×32 inputs, 4 px tokens, width 64, two blocks: sized for a
    /// single CPU core.
    pub fn compact() -> Self {
        DenoiserConfig {
            height: 32,
            width: 32,
            token_size: 4,
            dim: 64,
            layers: 2,
            heads: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::contract(m));
        if self.token_size == 0
            || !self.height.is_multiple_of(self.token_size)
            || !self.width.is_multiple_of(self.token_size)
        {
            return bad(format!(
                "{}x{} not divisible by token size {}",
                self.height, self.width, self.token_size
            ));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!(
                "dim {} not divisible by {} heads",
                self.dim, self.heads
            ));
        }
        if self.positional && !self.dim.is_multiple_of(4) {
            return bad("positional encoding needs dim divisible by 4".into());
        }
        if self.layers == 0 || self.channels == 0 || self.max_prompt_len == 0 {
            return bad("layers, channels and prompt length must be positive".into());
        }
        if let Some(ls) = &self.adapted_layers {
            if let Some(bad_l) = ls.iter().find(|&&l| l >= self.layers) {
                return bad(format!("adapted layer {bad_l} >= {} layers", self.layers));
            }
        }
        Ok(())
    }

    pub fn adapted(&self) -> Vec<usize> {
        match &self.adapted_layers {
            Some(ls) => ls.clone(),
            None => (0..self.layers).collect(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Features per input token: noisy image, masked image and mask.
    pub fn in_features(&self) -> usize {
        self.token_size * self.token_size * (2 * self.channels + 1)
    }

    pub fn out_features(&self) -> usize {
        self.token_size * self.token_size * self.channels
    }

    /// The config as a flat tensor, stored in checkpoints under
    /// [`CONFIG_NAME`] so a model can be rebuilt from its file alone.
    pub fn to_tensor(&self) -> Tensor {
        let mut v: Vec<f64> = [
            self.height,
            self.width,
            self.channels,
            self.token_size,
            self.dim,
            self.layers,
            self.heads,
            self.ffn_mult,
            self.vocab_size,
            self.max_prompt_len,
            usize::from(self.positional),
        ]
        .iter()
        .map(|&x| x as f64)
        .collect();
        if let Some(ls) = &self.adapted_layers {
            v.push(1.0);
            v.extend(ls.iter().map(|&l| l as f64));
        } else {
            v.push(0.0);
        }
        let n = v.len();
        Tensor::new(vec![n], v).expect("length matches")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let v = t.data();
        let bad = || Error::contract(format!("malformed model config tensor {:?}", t.data()));
        if v.len() < 12 || v.iter().any(|x| *x < 0.0 || x.fract() != 0.0) {
            return Err(bad());
        }
        let u: Vec<usize> = v.iter().map(|&x| x as usize).collect();
        let adapted_layers = match u[11] {
            0 if u.len() == 12 => None,
            1 => Some(u[12..].to_vec()),
            _ => return Err(bad()),
        };
        let c = DenoiserConfig {
            height: u[0],
            width: u[1],
            channels: u[2],
            token_size: u[3],
            dim: u[4],
            layers: u[5],
            heads: u[6],
            ffn_mult: u[7],
            vocab_size: u[8],
            max_prompt_len: u[9],
            positional: u[10] != 0,
            adapted_layers,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn from_store(store: &ParameterStore) -> Result<Self> {
        Self::from_tensor(store.require(CONFIG_NAME)?)
    }

    pub fn check_image_dims(&self, h: usize, w: usize) -> Result<()> {
        if h == 0 || w == 0 || h > self.height || w > self.width {
            return Err(Error::geometry(format!(
                "{h}x{w} input exceeds base resolution {}x{}",
                self.height, self.width
            )));
        }
        if !h.is_multiple_of(self.token_size) || !w.is_multiple_of(self.token_size) {
            return Err(Error::geometry(format!(
                "{h}x{w} not divisible by token size {}",
                self.token_size
            )));
        }
        Ok(())
    }
}

/// Token activations on a `rows × cols` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub tokens: Tensor,
    pub rows: usize,
    pub cols: usize,
}

impl FeatureMap {
    pub fn new(tokens: Tensor, rows: usize, cols: usize) -> Result<Self> {
        if tokens.shape().len() != 2 || tokens.rows() != rows * cols {
            return Err(Error::shape("FeatureMap", tokens.shape(), &[rows * cols]));
        }
        Ok(FeatureMap { tokens, rows, cols })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub vectors: Tensor,
    /// `true` for rows that hold the padding token.
    pub padded: Vec<bool>,
}

pub const CONFIG_NAME: &str = "base.config";

pub(crate) fn name(layer: usize, part: &str) -> String {
    format!("base.l{layer}.{part}")
}

/// Fresh base weights. The output head starts at zero, so a fresh model
/// predicts zero noise everywhere.
pub fn init_base(config: &DenoiserConfig, seed: u64) -> Result<ParameterStore> {
    config.validate()?;
    let d = config.dim;
    let mut r = rng::stream(seed, &[tag::INIT, 0]);
    let mut s = ParameterStore::new();
    let resid_std = (1.0 / d as f64).sqrt() / (2.0 * config.layers as f64).sqrt();

    s.insert(
        "base.text.embed",
        rng::normal_tensor(&mut r, &[config.vocab_size, d], 1.0),
        false,
    );
    s.insert(
        "base.text.pos",
        rng::normal_tensor(&mut r, &[config.max_prompt_len, d], 0.1),
        false,
    );
    s.insert(
        "base.time.w",
        rng::normal_tensor(&mut r, &[d, d], (1.0 / d as f64).sqrt()),
        false,
    );
    let fin = config.in_features();
    s.insert(
        "base.in.w",
        rng::normal_tensor(&mut r, &[fin, d], (1.0 / fin as f64).sqrt()),
        false,
    );
    let std = (1.0 / d as f64).sqrt();
    let hidden = d * config.ffn_mult;
    for l in 0..config.layers {
        for part in [
            "self.q", "self.k", "self.v", "cross.q", "cross.k", "cross.v",
        ] {
            s.insert(
                name(l, part),
                rng::normal_tensor(&mut r, &[d, d], std),
                false,
            );
        }
        for part in ["self.o", "cross.o"] {
            s.insert(
                name(l, part),
                rng::normal_tensor(&mut r, &[d, d], resid_std),
                false,
            );
        }
        s.insert(
            name(l, "ffn.up"),
            rng::normal_tensor(&mut r, &[d, hidden], std),
            false,
        );
        s.insert(
            name(l, "ffn.down"),
            rng::normal_tensor(
                &mut r,
                &[hidden, d],
                (1.0 / hidden as f64).sqrt() / (2.0 * config.layers as f64).sqrt(),
            ),
            false,
        );
    }
    s.insert(
        "base.out.w",
        Tensor::zeros(&[d, config.out_features()]),
        false,
    );
    s.insert(CONFIG_NAME, config.to_tensor(), true);
    Ok(s)
}

/// Binds store tensors into a graph once per name. Trainable tensors
/// become parameter leaves when tracking is on; everything else is a
/// constant.
pub(crate) struct Binder<'s> {
    store: &'s ParameterStore,
    track: bool,
    bound: BTreeMap<String, NodeId>,
}

impl<'s> Binder<'s> {
    pub(crate) fn new(store: &'s ParameterStore, track: bool) -> Self {
        Binder {
            store,
            track,
            bound: BTreeMap::new(),
        }
    }

    pub(crate) fn get(&mut self, g: &mut Graph, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.bound.get(name) {
            return Ok(id);
        }
        let entry = self
            .store
            .entry(name)
            .ok_or_else(|| Error::contract(format!("missing parameter {name}")))?;
        let id = if self.track && !entry.frozen {
            g.param(entry.tensor.clone())
        } else {
            g.constant(entry.tensor.clone())
        };
        self.bound.insert(name.to_string(), id);
        Ok(id)
    }

    /// Trainable tensors that were bound as parameter leaves.
    pub(crate) fn tracked(&self) -> Vec<(String, NodeId)> {
        self.bound
            .iter()
            .filter(|(n, _)| self.track && !self.store.is_frozen(n))
            .map(|(n, &id)| (n.clone(), id))
            .collect()
    }
}

/// Multi-head scaled dot-product attention; one head reduces to
/// `softmax(QKᵀ/√d)V`.
pub(crate) fn mha(g: &mut Graph, q: NodeId, k: NodeId, v: NodeId, heads: usize) -> Result<NodeId> {
    let d = g.value(q).cols();
    if g.value(k).cols() != d || g.value(v).cols() != d {
        return Err(Error::shape(
            "attention",
            g.value(q).shape(),
            g.value(k).shape(),
        ));
    }
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::contract(format!(
            "{d} not divisible into {heads} heads"
        )));
    }
    if heads == 1 {
        return g.attention(q, k, v, 1.0 / (d as f64).sqrt());
    }
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * hd, hd)?;
        let kh = g.slice_cols(k, h * hd, hd)?;
        let vh = g.slice_cols(v, h * hd, hd)?;
        outs.push(g.attention(qh, kh, vh, scale)?);
    }
    g.concat_cols(&outs)
}

/// `Z = Softmax(QKᵀ/√d)V` with `Q = zW_q`, `K = cW_k`, `V = cW_v`.
pub fn base_attention(
    z: &FeatureMap,
    c: &TextEmbedding,
    w: &CrossWeights,
    heads: usize,
) -> Result<FeatureMap> {
    let mut g = Graph::new();
    let (q, k, v) = cross_qkv(&mut g, z, c, w)?;
    let out = mha(&mut g, q, k, v, heads)?;
    FeatureMap::new(g.value(out).clone(), z.rows, z.cols)
}

pub(crate) fn cross_qkv(
    g: &mut Graph,
    z: &FeatureMap,
    c: &TextEmbedding,
    w: &CrossWeights,
) -> Result<(NodeId, NodeId, NodeId)> {
    let (zn, cn) = (g.constant(z.tokens.clone()), g.constant(c.vectors.clone()));
    let (wq, wk, wv) = (
        g.constant(w.wq.clone()),
        g.constant(w.wk.clone()),
        g.constant(w.wv.clone()),
    );
    Ok((g.matmul(zn, wq)?, g.matmul(cn, wk)?, g.matmul(cn, wv)?))
}

pub fn sinusoid(position: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (position * freq).sin();
        out[half + i] = (position * freq).cos();
    }
    out
}

/// Fixed 2-D positions: first half of the width encodes the row, second
/// half the column.
pub fn positional_grid(rows: usize, cols: usize, dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * cols * dim);
    for r in 0..rows {
        for c in 0..cols {
            data.extend(sinusoid(r as f64, dim / 2));
            data.extend(sinusoid(c as f64, dim / 2));
        }
    }
    Tensor::matrix(rows * cols, dim, data).expect("grid size")
}

pub(crate) fn encode_text_node(
    g: &mut Graph,
    b: &mut Binder,
    config: &DenoiserConfig,
    prompt: &[usize],
) -> Result<(NodeId, Vec<bool>)> {
    vocab::check(prompt)?;
    if prompt.iter().any(|&i| i >= config.vocab_size) {
        return Err(Error::contract("token id outside model vocabulary"));
    }
    if prompt.len() > config.max_prompt_len {
        return Err(Error::contract(format!(
            "prompt of {} tokens exceeds max length {}",
            prompt.len(),
            config.max_prompt_len
        )));
    }
    let mut ids = prompt.to_vec();
    ids.resize(config.max_prompt_len, vocab::PAD);
    let padded = ids.iter().map(|&i| i == vocab::PAD).collect();
    let table = b.get(g, "base.text.embed")?;
    let pos = b.get(g, "base.text.pos")?;
    let rows = g.gather_rows(table, &ids)?;
    Ok((g.add(rows, pos)?, padded))
}

/// Table lookup plus learned positional offsets; the empty prompt encodes
/// to the all-padding embedding used as the unconditional input.
pub fn encode_text(
    store: &ParameterStore,
    config: &DenoiserConfig,
    prompt: &[usize],
) -> Result<TextEmbedding> {
    let mut g = Graph::new();
    let mut b = Binder::new(store, false);
    let (node, padded) = encode_text_node(&mut g, &mut b, config, prompt)?;
    Ok(TextEmbedding {
        vectors: g.value(node).clone(),
        padded,
    })
}

/// The per-call inputs of the denoiser. Images are `C×h×w` in the signed
/// range; the mask is `1×h×w`.
#[derive(Debug, Clone, Copy)]
pub struct DenoiseInputs<'a> {
    pub noisy: &'a Tensor,
    pub timestep: usize,
    pub prompt: &'a [usize],
    pub mask: &'a Tensor,
    pub masked_image: &'a Tensor,
}

/// Which adapter paths are active for one forward pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct Adapters<'a> {
    pub dca: bool,
    pub reference: Option<&'a ReferenceFeatures>,
    /// Upsampled stage-1 patch feeding the control branch.
    pub control: Option<&'a Tensor>,
}

impl Adapters<'_> {
    pub fn none() -> Self {
        Self::default()
    }
}

pub(crate) struct ForwardNodes {
    pub eps_tokens: NodeId,
    /// Cross-attention output `Z_n` (before any reference term) of every
    /// adapted layer, in adapted-layer order.
    pub captured: Vec<NodeId>,
}

pub(crate) fn forward_graph(
    g: &mut Graph,
    b: &mut Binder,
    config: &DenoiserConfig,
    inputs: &DenoiseInputs,
    adapters: &Adapters,
) -> Result<ForwardNodes> {
    let (c, h, w) = image::dims(inputs.noisy)?;
    if c != config.channels {
        return Err(Error::shape(
            "denoise",
            inputs.noisy.shape(),
            &[config.channels, h, w],
        ));
    }
    config.check_image_dims(h, w)?;
    if inputs.masked_image.shape() != inputs.noisy.shape() {
        return Err(Error::shape(
            "denoise",
            inputs.noisy.shape(),
            inputs.masked_image.shape(),
        ));
    }
    if inputs.mask.shape() != [1, h, w] {
        return Err(Error::contract(format!(
            "mask of shape {:?} does not cover a {h}x{w} image",
            inputs.mask.shape()
        )));
    }
    if inputs.timestep >= 10_000 {
        return Err(Error::Range(format!(
            "timestep {} implausible",
            inputs.timestep
        )));
    }
    let s = config.token_size;
    let (rows, cols) = (h / s, w / s);
    let n = rows * cols;
    let d = config.dim;

    let token_mask = dca::mask_to_tokens(inputs.mask, s)?;
    let keep = token_mask.keep_matrix(d);

    let stacked = image::concat_channels(&[inputs.noisy, inputs.masked_image, inputs.mask])?;
    let x = g.constant(image::patchify(&stacked, s)?);
    let w_in = b.get(g, "base.in.w")?;
    let mut hidden = g.matmul(x, w_in)?;
    if config.positional {
        let pos = g.constant(positional_grid(rows, cols, d));
        hidden = g.add(hidden, pos)?;
    }
    let temb = g.constant(Tensor::matrix(1, d, sinusoid(inputs.timestep as f64, d))?);
    let w_time = b.get(g, "base.time.w")?;
    let temb = g.matmul(temb, w_time)?;
    let ones = g.constant(Tensor::ones(&[n, 1]));
    let temb = g.matmul(ones, temb)?;
    hidden = g.add(hidden, temb)?;

    let (text, _) = encode_text_node(g, b, config, inputs.prompt)?;

    let control_tokens = match adapters.control {
        Some(img) => {
            if img.shape() != inputs.noisy.shape() {
                return Err(Error::shape("control", img.shape(), inputs.noisy.shape()));
            }
            Some(g.constant(image::patchify(img, s)?))
        }
        None => None,
    };

    let adapted = config.adapted();
    let mut captured = Vec::with_capacity(adapted.len());

    for l in 0..config.layers {
        // Self-attention.
        let a = g.layer_norm(hidden)?;
        let (wq, wk, wv, wo) = (
            b.get(g, &name(l, "self.q"))?,
            b.get(g, &name(l, "self.k"))?,
            b.get(g, &name(l, "self.v"))?,
            b.get(g, &name(l, "self.o"))?,
        );
        let q = g.matmul(a, wq)?;
        let k = g.matmul(a, wk)?;
        let v = g.matmul(a, wv)?;
        let att = mha(g, q, k, v, config.heads)?;
        let att = g.matmul(att, wo)?;
        hidden = g.add(hidden, att)?;

        // Text cross-attention with adapter hooks.
        let z = g.layer_norm(hidden)?;
        let (wq, wk, wv, wo) = (
            b.get(g, &name(l, "cross.q"))?,
            b.get(g, &name(l, "cross.k"))?,
            b.get(g, &name(l, "cross.v"))?,
            b.get(g, &name(l, "cross.o"))?,
        );
        let q = g.matmul(z, wq)?;
        let k = g.matmul(text, wk)?;
        let v = g.matmul(text, wv)?;
        let mut zn = mha(g, q, k, v, config.heads)?;
        if adapted.contains(&l) {
            if adapters.dca {
                let p = dca::bind_layer(g, b, l)?;
                let z2 = dca::augment(g, z, q, k, v, &keep, &p, config.heads)?;
                zn = g.add(zn, z2)?;
            }
            captured.push(zn);
            if let Some(refs) = adapters.reference {
                let zr = g.constant(refs.layer(l)?.clone());
                let p = rpa::bind_layer(g, b, l)?;
                let z_ref = rpa::augment(g, q, zr, &p, config.heads)?;
                zn = g.add(zn, z_ref)?;
            }
        }
        let cross = g.matmul(zn, wo)?;
        hidden = g.add(hidden, cross)?;

        // Feed-forward.
        let e = g.layer_norm(hidden)?;
        let up = b.get(g, &name(l, "ffn.up"))?;
        let down = b.get(g, &name(l, "ffn.down"))?;
        let f = g.matmul(e, up)?;
        let f = g.gelu(f)?;
        let f = g.matmul(f, down)?;
        hidden = g.add(hidden, f)?;

        if let Some(ct) = control_tokens {
            let wc = b.get(g, &crate::pipeline::control_name(l))?;
            let cf = g.matmul(ct, wc)?;
            hidden = g.add(hidden, cf)?;
        }
    }

    let out = g.layer_norm(hidden)?;
    let w_out = b.get(g, "base.out.w")?;
    let eps_tokens = g.matmul(out, w_out)?;
    Ok(ForwardNodes {
        eps_tokens,
        captured,
    })
}

/// Read-only view of a model for inference.
#[derive(Debug, Clone, Copy)]
pub struct Denoiser<'a> {
    pub config: &'a DenoiserConfig,
    pub store: &'a ParameterStore,
}

impl<'a> Denoiser<'a> {
    pub fn new(config: &'a DenoiserConfig, store: &'a ParameterStore) -> Self {
        Denoiser { config, store }
    }

    pub fn has_dca(&self) -> bool {
        self.config
            .adapted()
            .iter()
            .all(|&l| self.store.contains(&dca::param_name(l, "q")))
    }

    /// Predicted noise image for one conditioning.
    pub fn denoise(&self, inputs: &DenoiseInputs, adapters: &Adapters) -> Result<Tensor> {
        let mut g = Graph::new();
        let mut b = Binder::new(self.store, false);
        let nodes = forward_graph(&mut g, &mut b, self.config, inputs, adapters)?;
        let (c, h, w) = image::dims(inputs.noisy)?;
        image::unpatchify(g.value(nodes.eps_tokens), c, h, w, self.config.token_size)
    }

    /// Classifier-free guided prediction: the unconditional branch uses
    /// the empty prompt with the same adapters.
    pub fn denoise_guided(
        &self,
        inputs: &DenoiseInputs,
        adapters: &Adapters,
        cfg_scale: f64,
    ) -> Result<Tensor> {
        let cond = self.denoise(inputs, adapters)?;
        if cfg_scale == 1.0 {
            return Ok(cond);
        }
        let uncond_inputs = DenoiseInputs {
            prompt: &[],
            ..*inputs
        };
        let uncond = self.denoise(&uncond_inputs, adapters)?;
        crate::diffusion::cfg_combine(&uncond, &cond, cfg_scale)
    }

    /// Cross-attention outputs of every adapted layer for one pass.
    pub fn capture_attention(
        &self,
        inputs: &DenoiseInputs,
        adapters: &Adapters,
    ) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let mut b = Binder::new(self.store, false);
        let nodes = forward_graph(&mut g, &mut b, self.config, inputs, adapters)?;
        Ok(nodes
            .captured
            .iter()
            .map(|&id| g.value(id).clone())
            .collect())
    }
}

/// Token mask helper re-exported for callers that only hold a backbone.
pub fn token_mask(mask: &Tensor, config: &DenoiserConfig) -> Result<TokenMask> {
    dca::mask_to_tokens(mask, config.token_size)
}

/// Trains every base weight from a fresh initialisation. The returned
/// store is marked frozen throughout, ready for adapter training.
pub fn pretrain_base(
    config: &DenoiserConfig,
    data: &[crate::train::TrainSample],
    hp: &crate::train::TrainConfig,
    seed: u64,
) -> Result<crate::train::TrainOutcome> {
    if data.is_empty() {
        return Err(Error::contract("pretraining set is empty"));
    }
    let mut store = init_base(config, seed)?;
    let losses = crate::train::fit(config, &mut store, data, hp, false, seed)?;
    store.freeze_all();
    Ok(crate::train::TrainOutcome {
        params: store,
        losses,
    })
}

/// Frozen cross-attention projections of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossWeights {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

impl CrossWeights {
    pub fn from_store(store: &ParameterStore, layer: usize) -> Result<Self> {
        Ok(CrossWeights {
            wq: store.require(&name(layer, "cross.q"))?.clone(),
            wk: store.require(&name(layer, "cross.k"))?.clone(),
            wv: store.require(&name(layer, "cross.v"))?.clone(),
        })
    }
}
