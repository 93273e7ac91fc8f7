//! Two-stage inference: low-resolution inpainting with DCA, then per-patch
//! refinement at full resolution with reference features and control
//! input, assembled back into one image.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backbone::{Adapters, DenoiseInputs, Denoiser, DenoiserConfig, FeatureMap};
use crate::data::{self, DataItem, MaskSpec};
use crate::diffusion::{self, NoiseSchedule, Sampler, SamplerKind};
use crate::error::{Error, Result};
use crate::image;
use crate::rng::{self, tag};
use crate::rpa::{self, ReferenceFeatures};
use crate::store::ParameterStore;
use crate::tensor::Tensor;
use crate::train::TrainSample;
use crate::vocab;

/// Tiling of an `H×W` image into equal `n_h×n_w` patches in raster order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub height: usize,
    pub width: usize,
    pub patch_h: usize,
    pub patch_w: usize,
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, patch_h: usize, patch_w: usize) -> Result<Self> {
        if patch_h == 0 || patch_w == 0 || height == 0 || width == 0 {
            return Err(Error::geometry("patch grid dimensions must be positive"));
        }
        if !height.is_multiple_of(patch_h) || !width.is_multiple_of(patch_w) {
            return Err(Error::geometry(format!(
                "{height}x{width} not divisible into {patch_h}x{patch_w} patches"
            )));
        }
        Ok(PatchGrid {
            height,
            width,
            patch_h,
            patch_w,
        })
    }

    pub fn rows(&self) -> usize {
        self.height / self.patch_h
    }

    pub fn cols(&self) -> usize {
        self.width / self.patch_w
    }

    /// `N = H·W / (n_h·n_w)`.
    pub fn count(&self) -> usize {
        self.height * self.width / (self.patch_h * self.patch_w)
    }

    /// `(top, left, height, width)` of patch `i`.
    pub fn rect(&self, i: usize) -> Result<(usize, usize, usize, usize)> {
        if i >= self.count() {
            return Err(Error::Range(format!("patch {i} of {}", self.count())));
        }
        let (r, c) = (i / self.cols(), i % self.cols());
        Ok((
            r * self.patch_h,
            c * self.patch_w,
            self.patch_h,
            self.patch_w,
        ))
    }

    pub fn split(&self, img: &Tensor) -> Result<Vec<Tensor>> {
        let (_, h, w) = image::dims(img)?;
        if (h, w) != (self.height, self.width) {
            return Err(Error::geometry(format!(
                "{h}x{w} image does not match {}x{} grid",
                self.height, self.width
            )));
        }
        (0..self.count())
            .map(|i| {
                let (t, l, ph, pw) = self.rect(i)?;
                image::crop(img, t, l, ph, pw)
            })
            .collect()
    }

    pub fn assemble(&self, patches: &[Tensor]) -> Result<Tensor> {
        if patches.len() != self.count() {
            return Err(Error::contract(format!(
                "assemble needs {} patches, got {}",
                self.count(),
                patches.len()
            )));
        }
        let (c, _, _) = image::dims(&patches[0])?;
        let mut out = Tensor::zeros(&[c, self.height, self.width]);
        for (i, p) in patches.iter().enumerate() {
            let (t, l, ph, pw) = self.rect(i)?;
            if p.shape() != [c, ph, pw] {
                return Err(Error::shape("assemble", p.shape(), &[c, ph, pw]));
            }
            image::paste(&mut out, p, t, l)?;
        }
        Ok(out)
    }
}

/// `[FG, |, BG]`; an empty side drops the separator.
pub fn compose_prompt(fg: &[usize], bg: &[usize]) -> Vec<usize> {
    match (fg.is_empty(), bg.is_empty()) {
        (true, _) => bg.to_vec(),
        (false, true) => fg.to_vec(),
        (false, false) => {
            let mut out = fg.to_vec();
            out.push(vocab::SEP);
            out.extend_from_slice(bg);
            out
        }
    }
}

/// Splits a composed prompt at its first separator.
pub fn split_prompt(tokens: &[usize]) -> (Vec<usize>, Vec<usize>) {
    match tokens.iter().position(|&t| t == vocab::SEP) {
        Some(i) => (tokens[..i].to_vec(), tokens[i + 1..].to_vec()),
        None => (Vec::new(), tokens.to_vec()),
    }
}

pub fn control_name(layer: usize) -> String {
    format!("ctrl.l{layer}.w")
}

/// Zero projections for every block.
pub fn init_control(config: &DenoiserConfig) -> ParameterStore {
    let mut s = ParameterStore::new();
    let rows = config.token_size * config.token_size * config.channels;
    for l in 0..config.layers {
        s.insert(control_name(l), Tensor::zeros(&[rows, config.dim]), false);
    }
    s
}

/// Per-block features `patchify(y_i)·W_ctrl^l` that the backbone adds to
/// its activations. `y_i` is in the signed range.
pub fn control_features(
    y_i: &Tensor,
    store: &ParameterStore,
    config: &DenoiserConfig,
) -> Result<Vec<FeatureMap>> {
    let (c, h, w) = image::dims(y_i)?;
    if c != config.channels {
        return Err(Error::shape(
            "control_features",
            y_i.shape(),
            &[config.channels, h, w],
        ));
    }
    config.check_image_dims(h, w)?;
    let s = config.token_size;
    let tokens = image::patchify(y_i, s)?;
    (0..config.layers)
        .map(|l| {
            let wc = store.require(&control_name(l))?;
            FeatureMap::new(crate::tensor::matmul(&tokens, wc)?, h / s, w / s)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub steps: usize,
    pub cfg_scale: f64,
    pub kind: SamplerKind,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            steps: 30,
            cfg_scale: 7.0,
            kind: SamplerKind::Euler,
        }
    }
}

impl SamplerConfig {
    pub fn sampler(&self) -> Result<Sampler> {
        Sampler::new(NoiseSchedule::default(), self.steps, self.kind)
    }
}

fn all_zero(mask: &Tensor) -> bool {
    mask.data().iter().all(|&m| m == 0.0)
}

/// Guided blended sampling of one image in the signed range, composited
/// onto the unit-range `image` in pixel space.
fn inpaint(
    model: &Denoiser,
    image_unit: &Tensor,
    mask: &Tensor,
    prompt: &[usize],
    adapters: &Adapters,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<Tensor> {
    image::check_mask(mask)?;
    let (_, h, w) = image::dims(image_unit)?;
    if mask.shape() != [1, h, w] {
        return Err(Error::shape("inpaint", image_unit.shape(), mask.shape()));
    }
    if all_zero(mask) {
        return Ok(image_unit.clone());
    }
    let known = image::to_signed(image_unit);
    let masked = image::apply_mask(&known, mask)?;
    let s = sampler.sampler()?;
    let mut init_rng = rng::stream(seed, &[tag::SAMPLE_INIT]);
    let init = rng::normal_tensor(&mut init_rng, known.shape(), 1.0);
    let generated = s.run(init, Some((&known, mask)), seed, |x_t, t| {
        let inputs = DenoiseInputs {
            noisy: x_t,
            timestep: t,
            prompt,
            mask,
            masked_image: &masked,
        };
        model.denoise_guided(&inputs, adapters, sampler.cfg_scale)
    })?;
    let unit = image::to_unit(&generated).map(|v| v.clamp(0.0, 1.0));
    diffusion::blend_step(&unit, image_unit, mask)
}

/// Stage 1 at model resolution with DCA active. Unmasked pixels of the
/// result equal `image` exactly.
pub fn run_stage1(
    model: &Denoiser,
    image: &Tensor,
    mask: &Tensor,
    prompt: &[usize],
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<Tensor> {
    let (_, h, w) = image::dims(image)?;
    model.config.check_image_dims(h, w)?;
    if !model.has_dca() {
        return Err(Error::contract("stage 1 needs DCA weights"));
    }
    let adapters = Adapters {
        dca: true,
        ..Adapters::none()
    };
    inpaint(model, image, mask, prompt, &adapters, sampler, seed)
}

/// The base model alone, for ablations.
pub fn run_base(
    model: &Denoiser,
    image: &Tensor,
    mask: &Tensor,
    prompt: &[usize],
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<Tensor> {
    let (_, h, w) = image::dims(image)?;
    model.config.check_image_dims(h, w)?;
    inpaint(model, image, mask, prompt, &Adapters::none(), sampler, seed)
}

pub fn has_rpa(store: &ParameterStore) -> bool {
    store.has_prefix("rpa.")
}

pub fn has_control(store: &ParameterStore) -> bool {
    store.has_prefix("ctrl.")
}

/// Inputs of one stage-2 patch. Images are in `[0, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct PatchJob<'a> {
    pub index: usize,
    pub patch: &'a Tensor,
    pub mask: &'a Tensor,
    /// Upsampled stage-1 crop.
    pub y_i: &'a Tensor,
    pub prompt: &'a [usize],
}

/// Masked candidate patches and their masks, indexed like the grid.
#[derive(Debug, Clone, Copy)]
pub struct Candidates<'a> {
    pub patches: &'a [Tensor],
    pub masks: &'a [Tensor],
}

impl Candidates<'_> {
    fn masked(&self, l: usize) -> Result<Tensor> {
        image::apply_mask(&self.patches[l], &self.masks[l])
    }
}

/// Reference choice and features for one patch.
pub fn prepare_reference(
    model: &Denoiser,
    job: &PatchJob,
    candidates: &Candidates,
    reference: Option<usize>,
) -> Result<ReferenceFeatures> {
    let n = candidates.patches.len();
    if candidates.masks.len() != n {
        return Err(Error::contract(
            "candidate patches and masks differ in count",
        ));
    }
    let r = match reference {
        Some(r) if r < n && r != job.index => r,
        Some(r) => {
            return Err(Error::contract(format!(
                "reference {r} is not a valid candidate"
            )))
        }
        None => {
            let masked = (0..n)
                .map(|l| candidates.masked(l))
                .collect::<Result<Vec<_>>>()?;
            rpa::select_reference(job.y_i, &masked, Some(job.index))?
        }
    };
    let masked_ref = image::apply_mask(
        &image::to_signed(&candidates.patches[r]),
        &candidates.masks[r],
    )?;
    let schedule = NoiseSchedule::default();
    let t = rpa::extraction_timestep(schedule.len());
    rpa::extract_reference_features(
        model,
        &masked_ref,
        &candidates.masks[r],
        job.prompt,
        schedule.alpha_bar(t),
        t,
        r,
    )
}

/// Stage 2 for one patch. RPA is active when the store holds `rpa.*`
/// weights, the control branch when it holds `ctrl.*`.
pub fn run_stage2_patch(
    model: &Denoiser,
    job: &PatchJob,
    candidates: &Candidates,
    reference: Option<usize>,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<Tensor> {
    image::check_mask(job.mask)?;
    if all_zero(job.mask) {
        return Ok(job.patch.clone());
    }
    if !model.has_dca() {
        return Err(Error::contract("stage 2 needs DCA weights"));
    }
    let refs = if has_rpa(model.store) {
        Some(prepare_reference(model, job, candidates, reference)?)
    } else {
        None
    };
    let control = if has_control(model.store) {
        Some(image::to_signed(job.y_i))
    } else {
        None
    };
    let adapters = Adapters {
        dca: true,
        reference: refs.as_ref(),
        control: control.as_ref(),
    };
    let patch_seed = rng::derive_seed(seed, &[tag::PATCH, job.index as u64]);
    inpaint(
        model, job.patch, job.mask, job.prompt, &adapters, sampler, patch_seed,
    )
}

/// Global prompt as foreground and background descriptors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Prompt {
    pub fg: Vec<usize>,
    pub bg: Vec<usize>,
}

impl Prompt {
    pub fn tokens(&self) -> Vec<usize> {
        compose_prompt(&self.fg, &self.bg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InpaintTask {
    /// `C×H×W` in `[0, 1]`.
    pub image: Tensor,
    pub mask: Tensor,
    pub prompt: Prompt,
    /// Foreground descriptors for individual patches.
    pub patch_prompts: BTreeMap<usize, Vec<usize>>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub sampler: SamplerConfig,
    pub patch_h: usize,
    pub patch_w: usize,
    pub jobs: usize,
    /// Processing order of patches; `None` is raster order.
    pub order: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOneResult {
    /// Low-resolution inpainted image.
    pub y: Tensor,
    /// Per-patch crops of the upsampled result.
    pub patches: Vec<Tensor>,
    pub factor: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub image: Tensor,
    pub stage1: StageOneResult,
    /// Selected reference per patch, when RPA ran.
    pub references: Vec<Option<usize>>,
}

/// Smallest integer factor bringing `h×w` within the model resolution.
pub fn downsample_factor(config: &DenoiserConfig, h: usize, w: usize) -> Result<usize> {
    let f = h
        .div_ceil(config.height)
        .max(w.div_ceil(config.width))
        .max(1);
    if !h.is_multiple_of(f) || !w.is_multiple_of(f) {
        return Err(Error::geometry(format!(
            "{h}x{w} not divisible by downsample factor {f}"
        )));
    }
    config.check_image_dims(h / f, w / f)?;
    Ok(f)
}

pub fn stage_one(
    model: &Denoiser,
    task: &InpaintTask,
    grid: &PatchGrid,
    sampler: &SamplerConfig,
) -> Result<StageOneResult> {
    let (_, h, w) = image::dims(&task.image)?;
    let factor = downsample_factor(model.config, h, w)?;
    let small = image::downsample(&task.image, factor)?;
    let small_mask = image::downsample_mask(&task.mask, factor)?;
    let seed = rng::derive_seed(task.seed, &[1]);
    let y = run_stage1(
        model,
        &small,
        &small_mask,
        &task.prompt.tokens(),
        sampler,
        seed,
    )?;
    let up = image::upsample(&y, factor)?.map(|v| v.clamp(0.0, 1.0));
    Ok(StageOneResult {
        patches: grid.split(&up)?,
        y,
        factor,
    })
}

fn check_task(task: &InpaintTask) -> Result<()> {
    image::check_mask(&task.mask)?;
    let (_, h, w) = image::dims(&task.image)?;
    if task.mask.shape() != [1, h, w] {
        return Err(Error::shape(
            "inpaint task",
            task.image.shape(),
            task.mask.shape(),
        ));
    }
    Ok(())
}

/// Downsample, stage 1, upsample, split, per-patch stage 2, assemble.
pub fn run_full_pipeline(
    model: &Denoiser,
    task: &InpaintTask,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    check_task(task)?;
    let (_, h, w) = image::dims(&task.image)?;
    let grid = PatchGrid::new(h, w, cfg.patch_h, cfg.patch_w)?;
    model.config.check_image_dims(cfg.patch_h, cfg.patch_w)?;
    let stage1 = stage_one(model, task, &grid, &cfg.sampler)?;
    let patches = grid.split(&task.image)?;
    let masks = grid.split(&task.mask)?;
    let n = grid.count();
    let prompts: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let fg = task.patch_prompts.get(&i).unwrap_or(&task.prompt.fg);
            compose_prompt(fg, &task.prompt.bg)
        })
        .collect();
    let order: Vec<usize> = match &cfg.order {
        Some(o) => {
            let mut sorted = o.clone();
            sorted.sort_unstable();
            if sorted != (0..n).collect::<Vec<_>>() {
                return Err(Error::contract("patch order must be a permutation"));
            }
            o.clone()
        }
        None => (0..n).collect(),
    };
    let candidates = Candidates {
        patches: &patches,
        masks: &masks,
    };
    let seed = rng::derive_seed(task.seed, &[2]);
    let use_rpa = has_rpa(model.store);
    let work = |i: usize| -> Result<(Tensor, Option<usize>)> {
        let job = PatchJob {
            index: i,
            patch: &patches[i],
            mask: &masks[i],
            y_i: &stage1.patches[i],
            prompt: &prompts[i],
        };
        let reference = if use_rpa && !all_zero(&masks[i]) {
            let masked = (0..n)
                .map(|l| candidates.masked(l))
                .collect::<Result<Vec<_>>>()?;
            Some(rpa::select_reference(job.y_i, &masked, Some(i))?)
        } else {
            None
        };
        let out = run_stage2_patch(model, &job, &candidates, reference, &cfg.sampler, seed)?;
        Ok((out, reference))
    };
    let results = run_ordered(&order, cfg.jobs.max(1), &work)?;
    let mut outs = Vec::with_capacity(n);
    let mut references = Vec::with_capacity(n);
    for (img, r) in results {
        outs.push(img);
        references.push(r);
    }
    let assembled = grid.assemble(&outs)?;
    let image = diffusion::blend_step(&assembled, &task.image, &task.mask)?;
    Ok(PipelineOutput {
        image,
        stage1,
        references,
    })
}

/// Runs `work` over `order` on up to `jobs` threads and returns results
/// indexed by patch, so scheduling never affects the output.
pub(crate) fn run_ordered<T, F>(order: &[usize], jobs: usize, work: &F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let n = order.len();
    let mut slots: Vec<Option<Result<T>>> = (0..n).map(|_| None).collect();
    if jobs <= 1 || n <= 1 {
        for &i in order {
            slots[i] = Some(work(i));
        }
    } else {
        let chunks: Vec<&[usize]> = order.chunks(n.div_ceil(jobs)).collect();
        let collected: Vec<Vec<(usize, Result<T>)>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunks
                .iter()
                .map(|chunk| {
                    s.spawn(move || chunk.iter().map(|&i| (i, work(i))).collect::<Vec<_>>())
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("patch worker panicked"))
                .collect()
        });
        for (i, r) in collected.into_iter().flatten() {
            slots[i] = Some(r);
        }
    }
    slots
        .into_iter()
        .map(|s| s.expect("every patch scheduled"))
        .collect()
}

/// Stage-1 result upsampled and composited, without stage 2.
pub fn upsample_baseline(
    model: &Denoiser,
    task: &InpaintTask,
    cfg: &PipelineConfig,
) -> Result<Tensor> {
    check_task(task)?;
    let (_, h, w) = image::dims(&task.image)?;
    let grid = PatchGrid::new(h, w, cfg.patch_h, cfg.patch_w)?;
    let stage1 = stage_one(model, task, &grid, &cfg.sampler)?;
    let up = grid.assemble(&stage1.patches)?;
    diffusion::blend_step(&up, &task.image, &task.mask)
}

/// Stage-2 training tuples from full-resolution scenes: each scene is cut
/// into its patch grid, one patch becomes the target (clean image plus a
/// degraded copy as control input) and another the reference, whose
/// features come from the frozen stage-1 model.
pub fn stage2_samples(
    stage1: &Denoiser,
    items: &[DataItem],
    patch_h: usize,
    patch_w: usize,
    seed: u64,
) -> Result<Vec<TrainSample>> {
    let schedule = NoiseSchedule::default();
    let t = rpa::extraction_timestep(schedule.len());
    items
        .iter()
        .map(|it| {
            let (_, h, w) = image::dims(&it.image)?;
            let grid = PatchGrid::new(h, w, patch_h, patch_w)?;
            let n = grid.count();
            if n < 2 {
                return Err(Error::contract("stage-2 scenes need at least two patches"));
            }
            let mut r = rng::stream(seed, &[tag::REFERENCE, it.index as u64]);
            let target = rng::below(&mut r, n);
            let reference = (target + 1 + rng::below(&mut r, n - 1)) % n;
            let patches = grid.split(&it.image)?;
            let kind = ["brush", "rectangle", "random-shape"][rng::below(&mut r, 3)];
            let mask_seed = rng::derive_seed(seed, &[tag::MASK, it.index as u64, 1]);
            let mask = data::gen_mask(
                &MaskSpec::random(kind, mask_seed, patch_h, patch_w)?,
                patch_h,
                patch_w,
                None,
            )?;
            let ref_mask = grid.split(&it.mask)?.swap_remove(reference);
            let prompt = compose_prompt(&it.fg_tokens, &it.bg_tokens);
            let masked_ref = image::apply_mask(&image::to_signed(&patches[reference]), &ref_mask)?;
            let features = rpa::extract_reference_features(
                stage1,
                &masked_ref,
                &ref_mask,
                &prompt,
                schedule.alpha_bar(t),
                t,
                reference,
            )?;
            let degrade_seed = rng::derive_seed(seed, &[tag::DEGRADE, it.index as u64]);
            let degraded = data::degrade(&patches[target], degrade_seed)?;
            Ok(TrainSample {
                image: image::to_signed(&patches[target]),
                mask,
                prompt,
                control: Some(image::to_signed(&degraded)),
                reference: Some(features),
            })
        })
        .collect()
}

/// Stage-1 training tuples: unit-range items to signed images with their
/// composed prompts.
pub fn stage1_samples(items: &[DataItem]) -> Vec<TrainSample> {
    items
        .iter()
        .map(|it| TrainSample {
            image: image::to_signed(&it.image),
            mask: it.mask.clone(),
            prompt: compose_prompt(&it.fg_tokens, &it.bg_tokens),
            control: None,
            reference: None,
        })
        .collect()
}
