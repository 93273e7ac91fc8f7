use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser};
use serde::{Deserialize, Serialize};
use serde_json::json;

use padapter::backbone::{self, Denoiser, DenoiserConfig};
use padapter::data::{self, DataItem};
use padapter::diffusion::SamplerKind;
use padapter::eval::{self, Arm, EvalTask};
use padapter::pipeline::{self, InpaintTask, PatchGrid, PipelineConfig, Prompt, SamplerConfig};
use padapter::store::ParameterStore;
use padapter::train::TrainConfig;
use padapter::{dca, image, netpbm, rpa, vocab, Tensor};

use crate::manifest::{self, RunManifest};
use crate::{usage, Cli, Command};

#[derive(Args, Debug)]
pub struct GenData {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Fraction of items with random-kind masks; the rest use segmentation masks.
    #[arg(long, default_value_t = 0.6)]
    pub mix: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct Pretrain {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Model resolution; defaults to the dataset size. Larger images are
    /// downsampled by an integer factor.
    #[arg(long)]
    pub res: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub token: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
}

#[derive(Args, Debug)]
pub struct TrainDca {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
}

#[derive(Args, Debug)]
pub struct TrainRpa {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub dca: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// Patch edge in pixels; defaults to the model resolution.
    #[arg(long)]
    pub patch: Option<usize>,
}

#[derive(Args, Debug)]
pub struct Inpaint {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    /// Space-separated vocabulary words, foreground and background split by `|`.
    #[arg(long, default_value = "")]
    pub prompt: String,
    /// Foreground words for one patch, as `INDEX:words`. Repeatable.
    #[arg(long = "patch-prompt", value_name = "I:TOKENS")]
    pub patch_prompt: Vec<String>,
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub dca: PathBuf,
    #[arg(long)]
    pub rpa: Option<PathBuf>,
    /// Patch edge in pixels; defaults to the model resolution.
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long, default_value_t = 30)]
    pub steps: usize,
    #[arg(long, default_value_t = 7.0)]
    pub cfg: f64,
    #[arg(long, value_enum, default_value_t = SamplerArg::Euler)]
    pub sampler: SamplerArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Run manifest path; defaults to `<out>.run.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum SamplerArg {
    Euler,
    Ancestral,
}

impl From<SamplerArg> for SamplerKind {
    fn from(s: SamplerArg) -> Self {
        match s {
            SamplerArg::Euler => SamplerKind::Euler,
            SamplerArg::Ancestral => SamplerKind::Ancestral,
        }
    }
}

#[derive(Args, Debug)]
pub struct Eval {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Replay {
    #[arg(long)]
    pub manifest: PathBuf,
}

pub fn run(command: Command, jobs: usize, argv: Vec<String>) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a, argv),
        Command::Pretrain(a) => pretrain(a, argv),
        Command::TrainDca(a) => train_dca(a, argv),
        Command::TrainRpa(a) => train_rpa(a, argv),
        Command::Inpaint(a) => inpaint(a, jobs, argv),
        Command::Eval(a) => run_eval(a, jobs, argv),
        Command::Replay(a) => replay(a, jobs),
    }
}

fn gen_data(a: GenData, argv: Vec<String>) -> Result<()> {
    if a.size == 0 {
        return Err(usage("--size must be positive"));
    }
    if !(0.0..=1.0).contains(&a.mix) {
        return Err(usage(format!("--mix must lie in [0, 1], got {}", a.mix)));
    }
    let m = data::build_dataset(a.count, a.size, a.mix, a.seed, &a.out)?;
    let config = json!({ "count": a.count, "size": a.size, "mix": a.mix, "seed": a.seed });
    let mut run = RunManifest::new("gen-data", argv, config);
    run.output(&a.out.join("manifest.json"))?;
    for it in &m.items {
        for name in [&it.image, &it.mask, &it.meta] {
            run.output(&a.out.join(name))?;
        }
    }
    run.write(&a.out.join("run.json"))
}

fn load_items(dir: &Path) -> Result<Vec<DataItem>> {
    let items =
        data::load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    if items.is_empty() {
        return Err(usage(format!("dataset {} is empty", dir.display())));
    }
    Ok(items)
}

/// Brings every item within the model resolution.
fn to_model_resolution(items: &[DataItem], config: &DenoiserConfig) -> Result<Vec<DataItem>> {
    items
        .iter()
        .map(|it| {
            let (_, h, w) = image::dims(&it.image)?;
            let f = pipeline::downsample_factor(config, h, w).map_err(|e| usage(e.to_string()))?;
            let mut out = it.clone();
            if f > 1 {
                out.image = image::downsample(&it.image, f)?;
                out.mask = image::downsample_mask(&it.mask, f)?;
            }
            Ok(out)
        })
        .collect()
}

fn load_store(path: &Path, prefix: &str) -> Result<ParameterStore> {
    let s = ParameterStore::load(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?;
    if let Some(stray) = s.iter().map(|(n, _)| n).find(|n| !n.starts_with(prefix)) {
        return Err(usage(format!(
            "{} holds {stray}, expected only {prefix}* tensors",
            path.display()
        )));
    }
    if s.is_empty() {
        return Err(usage(format!("{} holds no tensors", path.display())));
    }
    Ok(s)
}

fn train_config(steps: usize, batch: usize, lr: f64) -> Result<TrainConfig> {
    if batch == 0 {
        return Err(usage("--batch must be positive"));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(usage(format!("--lr must be positive, got {lr}")));
    }
    Ok(TrainConfig {
        steps,
        batch_size: batch,
        lr,
        ..TrainConfig::default()
    })
}

fn save(store: &ParameterStore, path: &Path, run: &mut RunManifest) -> Result<()> {
    store.save(path)?;
    run.output(path)
}

fn pretrain(a: Pretrain, argv: Vec<String>) -> Result<()> {
    let items = load_items(&a.data)?;
    let (_, h, w) = image::dims(&items[0].image)?;
    let res = a.res.unwrap_or(h.max(w));
    let config = DenoiserConfig {
        height: res,
        width: res,
        token_size: a.token,
        dim: a.dim,
        layers: a.layers,
        heads: a.heads,
        ..DenoiserConfig::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let hp = train_config(a.steps, a.batch, a.lr)?;
    let samples = pipeline::stage1_samples(&to_model_resolution(&items, &config)?);
    let outcome = backbone::pretrain_base(&config, &samples, &hp, a.seed)?;
    let cfg = json!({ "model": config, "train": hp, "seed": a.seed, "final_loss": outcome.losses.last() });
    let mut run = RunManifest::new("pretrain", argv, cfg);
    run.input(&a.data.join("manifest.json"))?;
    save(&outcome.params, &a.out, &mut run)?;
    run.write(&manifest::beside(&a.out))
}

fn train_dca(a: TrainDca, argv: Vec<String>) -> Result<()> {
    let base = load_store(&a.base, "base.")?;
    let config = DenoiserConfig::from_store(&base)?;
    let items = to_model_resolution(&load_items(&a.data)?, &config)?;
    let hp = train_config(a.steps, a.batch, a.lr)?;
    let outcome = dca::train_stage1(
        &config,
        &base,
        &pipeline::stage1_samples(&items),
        &hp,
        a.seed,
    )?;
    let cfg = json!({ "model": config, "train": hp, "seed": a.seed, "final_loss": outcome.losses.last() });
    let mut run = RunManifest::new("train-dca", argv, cfg);
    run.input(&a.base)?;
    run.input(&a.data.join("manifest.json"))?;
    save(&outcome.params, &a.out, &mut run)?;
    run.write(&manifest::beside(&a.out))
}

fn stage1_store(base: &Path, dca_path: &Path) -> Result<(DenoiserConfig, ParameterStore)> {
    let mut store = load_store(base, "base.")?;
    let config = DenoiserConfig::from_store(&store)?;
    store.merge(&load_store(dca_path, "dca.")?);
    store.freeze_all();
    if !Denoiser::new(&config, &store).has_dca() {
        return Err(usage(format!(
            "{} lacks weights for the adapted layers",
            dca_path.display()
        )));
    }
    Ok((config, store))
}

fn patch_edge(patch: Option<usize>, config: &DenoiserConfig) -> Result<usize> {
    let p = patch.unwrap_or(config.height.min(config.width));
    config
        .check_image_dims(p, p)
        .map_err(|e| usage(e.to_string()))?;
    Ok(p)
}

fn train_rpa(a: TrainRpa, argv: Vec<String>) -> Result<()> {
    let (config, store) = stage1_store(&a.base, &a.dca)?;
    let items = load_items(&a.data)?;
    let patch = patch_edge(a.patch, &config)?;
    let (_, h, w) = image::dims(&items[0].image)?;
    PatchGrid::new(h, w, patch, patch).map_err(|e| usage(e.to_string()))?;
    let hp = train_config(a.steps, a.batch, a.lr)?;
    let samples = pipeline::stage2_samples(
        &Denoiser::new(&config, &store),
        &items,
        patch,
        patch,
        a.seed,
    )?;
    let outcome = rpa::train_stage2(&config, &store, &samples, &hp, a.seed)?;
    let cfg = json!({ "model": config, "train": hp, "seed": a.seed, "patch": patch, "final_loss": outcome.losses.last() });
    let mut run = RunManifest::new("train-rpa", argv, cfg);
    run.input(&a.base)?;
    run.input(&a.dca)?;
    run.input(&a.data.join("manifest.json"))?;
    save(&outcome.params, &a.out, &mut run)?;
    run.write(&manifest::beside(&a.out))
}

fn parse_prompt(text: &str) -> Result<Prompt> {
    let tokens = vocab::encode(text).map_err(|e| usage(e.to_string()))?;
    if tokens.iter().filter(|&&t| t == vocab::SEP).count() > 1 {
        return Err(usage("prompt has more than one `|`"));
    }
    let (fg, bg) = pipeline::split_prompt(&tokens);
    Ok(Prompt { fg, bg })
}

fn parse_patch_prompts(specs: &[String], count: usize) -> Result<BTreeMap<usize, Vec<usize>>> {
    let mut out = BTreeMap::new();
    for spec in specs {
        let (idx, words) = spec
            .split_once(':')
            .ok_or_else(|| usage(format!("--patch-prompt {spec:?} is not INDEX:words")))?;
        let i: usize = idx
            .trim()
            .parse()
            .map_err(|_| usage(format!("--patch-prompt index {idx:?} is not a number")))?;
        if i >= count {
            return Err(usage(format!(
                "--patch-prompt index {i} outside {count} patches"
            )));
        }
        let tokens = vocab::encode(words).map_err(|e| usage(e.to_string()))?;
        if tokens.contains(&vocab::SEP) {
            return Err(usage("--patch-prompt takes foreground words only"));
        }
        if out.insert(i, tokens).is_some() {
            return Err(usage(format!("--patch-prompt index {i} given twice")));
        }
    }
    Ok(out)
}

fn read_image(path: &Path) -> Result<Tensor> {
    netpbm::read(path).with_context(|| format!("reading {}", path.display()))
}

fn inpaint(a: Inpaint, jobs: usize, argv: Vec<String>) -> Result<()> {
    let mut store = load_store(&a.base, "base.")?;
    let config = DenoiserConfig::from_store(&store)?;
    store.merge(&load_store(&a.dca, "dca.")?);
    if let Some(r) = &a.rpa {
        store.merge(&load_store(r, "")?);
        if store.iter().any(|(n, _)| {
            !["base.", "dca.", "rpa.", "ctrl."]
                .iter()
                .any(|p| n.starts_with(p))
        }) {
            return Err(usage(format!(
                "{} holds tensors outside rpa.* and ctrl.*",
                r.display()
            )));
        }
    }
    store.freeze_all();

    let img = read_image(&a.image)?;
    let mask = read_image(&a.mask)?;
    let (c, h, w) = image::dims(&img)?;
    if c != config.channels {
        return Err(usage(format!(
            "image has {c} channels, model expects {}",
            config.channels
        )));
    }
    if mask.shape() != [1, h, w] || !image::is_binary(&mask) {
        return Err(usage(format!("mask must be a binary {w}x{h} PGM")));
    }
    let patch = patch_edge(a.patch, &config)?;
    let grid = PatchGrid::new(h, w, patch, patch).map_err(|e| usage(e.to_string()))?;
    pipeline::downsample_factor(&config, h, w).map_err(|e| usage(e.to_string()))?;
    let prompt = parse_prompt(&a.prompt)?;
    let patch_prompts = parse_patch_prompts(&a.patch_prompt, grid.count())?;
    let sampler = SamplerConfig {
        steps: a.steps,
        cfg_scale: a.cfg,
        kind: a.sampler.into(),
    };
    sampler.sampler().map_err(|e| usage(e.to_string()))?;

    let cfg = PipelineConfig {
        sampler: sampler.clone(),
        patch_h: patch,
        patch_w: patch,
        jobs,
        order: None,
    };
    let run_cfg = json!({
        "model": config,
        "sampler": sampler,
        "patch": [patch, patch],
        "resolution": [h, w],
        "seed": a.seed,
        "prompt": vocab::decode(&prompt.tokens())?,
        "patch_prompts": patch_prompts
            .iter()
            .map(|(i, t)| Ok((i.to_string(), vocab::decode(t)?)))
            .collect::<Result<BTreeMap<_, _>>>()?,
        "rpa": a.rpa.is_some(),
    });
    if mask.data().iter().all(|&m| m == 0.0) {
        fs::copy(&a.image, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    } else {
        let task = InpaintTask {
            image: img,
            mask,
            prompt,
            patch_prompts,
            seed: a.seed,
        };
        let out = pipeline::run_full_pipeline(&Denoiser::new(&config, &store), &task, &cfg)?;
        netpbm::write(&a.out, &out.image)?;
    }
    let mut run = RunManifest::new("inpaint", argv, run_cfg);
    for p in [&a.image, &a.mask, &a.base, &a.dca] {
        run.input(p)?;
    }
    if let Some(r) = &a.rpa {
        run.input(r)?;
    }
    run.output(&a.out)?;
    run.write(&a.manifest.unwrap_or_else(|| manifest::beside(&a.out)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArmMode {
    /// Base model alone at model resolution.
    Base,
    /// Base plus DCA at model resolution.
    Stage1,
    /// Full two-stage pipeline at dataset resolution.
    Pipeline,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub name: String,
    pub mode: ArmMode,
    #[serde(default)]
    pub dca: Option<PathBuf>,
    #[serde(default)]
    pub rpa: Option<PathBuf>,
    /// With `false`, `rpa.*` weights are dropped and only the control
    /// branch of the stage-2 checkpoint is used.
    #[serde(default = "yes")]
    pub reference: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub data: PathBuf,
    pub base: PathBuf,
    pub seeds: Vec<u64>,
    pub arms: Vec<ArmSpec>,
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub patch: Option<usize>,
}

fn arm_store(
    spec: &ArmSpec,
    base: &ParameterStore,
    dir: &Path,
    run: &mut RunManifest,
) -> Result<ParameterStore> {
    let mut store = base.clone();
    if let Some(p) = &spec.dca {
        let p = dir.join(p);
        store.merge(&load_store(&p, "dca.")?);
        run.input(&p)?;
    }
    if let Some(p) = &spec.rpa {
        let p = dir.join(p);
        let mut s2 = load_store(&p, "")?;
        run.input(&p)?;
        if !spec.reference {
            s2.remove_prefix("rpa.");
        }
        store.merge(&s2);
    }
    store.freeze_all();
    match spec.mode {
        ArmMode::Base if spec.dca.is_some() || spec.rpa.is_some() => Err(usage(format!(
            "arm {} in base mode takes no adapters",
            spec.name
        ))),
        ArmMode::Stage1 | ArmMode::Pipeline if spec.dca.is_none() => {
            Err(usage(format!("arm {} needs a dca checkpoint", spec.name)))
        }
        _ => Ok(store),
    }
}

fn run_eval(a: Eval, jobs: usize, argv: Vec<String>) -> Result<()> {
    let text =
        fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let cfg: AblationConfig =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", a.config.display())))?;
    if cfg.arms.is_empty() || cfg.arms.len() > 2 {
        return Err(usage("ablation needs one or two arms"));
    }
    if cfg.seeds.is_empty() {
        return Err(usage("ablation needs at least one seed"));
    }
    let pipeline_mode = cfg.arms[0].mode == ArmMode::Pipeline;
    if cfg
        .arms
        .iter()
        .any(|arm| (arm.mode == ArmMode::Pipeline) != pipeline_mode)
    {
        return Err(usage(
            "pipeline arms cannot be paired with model-resolution arms",
        ));
    }
    let dir = a.config.parent().unwrap_or(Path::new(""));
    let mut run = RunManifest::new("eval", argv, serde_json::to_value(&cfg)?);
    run.input(&a.config)?;
    let base_path = dir.join(&cfg.base);
    let base = load_store(&base_path, "base.")?;
    run.input(&base_path)?;
    let config = DenoiserConfig::from_store(&base)?;
    let data_dir = dir.join(&cfg.data);
    run.input(&data_dir.join("manifest.json"))?;
    let mut items = load_items(&data_dir)?;
    if let Some(n) = cfg.limit {
        items.truncate(n);
    }
    if !pipeline_mode {
        items = to_model_resolution(&items, &config)?;
    }
    let tasks: Vec<EvalTask> = items
        .iter()
        .map(|it| EvalTask {
            index: it.index,
            image: it.image.clone(),
            mask: it.mask.clone(),
            prompt: pipeline::compose_prompt(&it.fg_tokens, &it.bg_tokens),
        })
        .collect();
    let stores = cfg
        .arms
        .iter()
        .map(|spec| arm_store(spec, &base, dir, &mut run))
        .collect::<Result<Vec<_>>>()?;
    let grid = if pipeline_mode {
        let (_, h, w) = image::dims(&tasks[0].image)?;
        let p = patch_edge(cfg.patch, &config)?;
        Some(PatchGrid::new(h, w, p, p).map_err(|e| usage(e.to_string()))?)
    } else {
        None
    };
    let sampler = cfg.sampler.clone();
    sampler.sampler().map_err(|e| usage(e.to_string()))?;
    let runners: Vec<Box<eval::ArmFn>> = cfg
        .arms
        .iter()
        .zip(&stores)
        .map(|(spec, store)| -> Box<eval::ArmFn> {
            let model = Denoiser::new(&config, store);
            let sampler = sampler.clone();
            let mode = spec.mode;
            Box::new(move |t: &EvalTask, seed: u64| match mode {
                ArmMode::Base => {
                    pipeline::run_base(&model, &t.image, &t.mask, &t.prompt, &sampler, seed)
                }
                ArmMode::Stage1 => {
                    pipeline::run_stage1(&model, &t.image, &t.mask, &t.prompt, &sampler, seed)
                }
                ArmMode::Pipeline => {
                    let g = grid.as_ref().expect("pipeline grid");
                    let (fg, bg) = pipeline::split_prompt(&t.prompt);
                    let task = InpaintTask {
                        image: t.image.clone(),
                        mask: t.mask.clone(),
                        prompt: Prompt { fg, bg },
                        patch_prompts: BTreeMap::new(),
                        seed,
                    };
                    let cfg = PipelineConfig {
                        sampler: sampler.clone(),
                        patch_h: g.patch_h,
                        patch_w: g.patch_w,
                        jobs: 1,
                        order: None,
                    };
                    Ok(pipeline::run_full_pipeline(&model, &task, &cfg)?.image)
                }
            })
        })
        .collect();
    let arms: Vec<Arm> = cfg
        .arms
        .iter()
        .zip(&runners)
        .map(|(spec, f)| Arm {
            name: spec.name.clone(),
            run: f.as_ref(),
        })
        .collect();
    let report = eval::run_ablation(
        serde_json::to_value(&cfg)?,
        &arms,
        &tasks,
        &cfg.seeds,
        grid.as_ref(),
        jobs,
    )?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(&a.out, text).with_context(|| format!("writing {}", a.out.display()))?;
    run.output(&a.out)?;
    run.write(&manifest::beside(&a.out))
}

fn replay(a: Replay, jobs: usize) -> Result<()> {
    let recorded = RunManifest::read(&a.manifest)?;
    if recorded.command == "replay" {
        return Err(usage("cannot replay a replay"));
    }
    let cli = Cli::try_parse_from(
        std::iter::once("padapter".to_string()).chain(recorded.argv.iter().cloned()),
    )
    .map_err(|e| usage(format!("recorded arguments no longer parse: {e}")))?;
    run(cli.command, jobs, recorded.argv.clone())?;
    let mismatched: Vec<&String> = recorded
        .outputs
        .iter()
        .filter(|(path, hash)| manifest::hash_file(Path::new(path)).ok().as_ref() != Some(*hash))
        .map(|(path, _)| path)
        .collect();
    if !mismatched.is_empty() {
        bail!(
            "replay changed {} output(s), first {}",
            mismatched.len(),
            mismatched[0]
        );
    }
    Ok(())
}
