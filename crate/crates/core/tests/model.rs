use std::collections::BTreeMap;

use padapter::backbone::{
    encode_text, init_base, pretrain_base, Adapters, DenoiseInputs, Denoiser, DenoiserConfig,
};
use padapter::dca::{init_dca, train_stage1};
use padapter::image;
use padapter::pipeline::{init_control, stage1_samples};
use padapter::rng;
use padapter::rpa::{init_rpa, ReferenceFeatures};
use padapter::store::ParameterStore;
use padapter::train::{loss_with_grads, moving_average, TrainConfig, TrainSample};
use padapter::{data, vocab, Tensor};

fn tiny() -> DenoiserConfig {
    DenoiserConfig {
        height: 16,
        width: 16,
        channels: 3,
        token_size: 4,
        dim: 8,
        layers: 1,
        heads: 2,
        ffn_mult: 2,
        max_prompt_len: 16,
        ..DenoiserConfig::default()
    }
}

fn random_store(config: &DenoiserConfig, seed: u64) -> ParameterStore {
    let mut s = init_base(config, seed).unwrap();
    // The zero output projection would make every gradient vanish.
    let out = s.get("base.out.w").unwrap().shape().to_vec();
    *s.get_mut("base.out.w").unwrap() = rng::normal_tensor(&mut rng::stream(seed, &[4]), &out, 0.3);
    s.freeze_all();
    s.merge(&init_dca(config, seed).unwrap());
    s.merge(&init_rpa(config, seed).unwrap());
    s.merge(&init_control(config));
    // Zero-initialised adapters have degenerate gradients; randomise them.
    let mut r = rng::stream(seed, &[5]);
    for name in s.trainable_names() {
        let t = s.get_mut(&name).unwrap();
        *t = rng::normal_tensor(&mut r, t.shape(), 0.3);
    }
    s
}

fn sample(config: &DenoiserConfig, seed: u64) -> TrainSample {
    let mut r = rng::stream(seed, &[6]);
    let (c, h, w) = (config.channels, config.height, config.width);
    let mut mask = Tensor::zeros(&[1, h, w]);
    for y in 4..12 {
        for x in 2..9 {
            mask.data_mut()[y * w + x] = 1.0;
        }
    }
    TrainSample {
        image: rng::normal_tensor(&mut r, &[c, h, w], 0.5),
        mask,
        prompt: vocab::encode("red stripes | blue checker").unwrap(),
        control: Some(rng::normal_tensor(&mut r, &[c, h, w], 0.5)),
        reference: Some(ReferenceFeatures {
            layers: BTreeMap::from([(0, rng::normal_tensor(&mut r, &[5, config.dim], 1.0))]),
            source: 0,
        }),
    }
}

#[test]
fn adapter_gradients_match_finite_differences() {
    let config = tiny();
    let store = random_store(&config, 1);
    assert!(
        store.param_count() <= 5000,
        "{} params",
        store.param_count()
    );
    let s = sample(&config, 2);
    let eps = rng::normal_tensor(&mut rng::stream(3, &[]), s.image.shape(), 1.0);
    let t = 40;
    let (_, grads) = loss_with_grads(&config, &store, &s, t, &eps, true).unwrap();
    let names: Vec<&String> = grads.keys().collect();
    for prefix in ["dca.", "rpa.", "ctrl."] {
        assert!(
            names.iter().any(|n| n.starts_with(prefix)),
            "no {prefix} gradient"
        );
    }
    assert!(!names.iter().any(|n| n.starts_with("base.")));
    let h = 1e-5;
    for (name, analytic) in &grads {
        let mut diff = 0.0;
        let mut norm = 0.0;
        for e in 0..analytic.numel() {
            let mut plus = store.clone();
            plus.get_mut(name).unwrap().data_mut()[e] += h;
            let mut minus = store.clone();
            minus.get_mut(name).unwrap().data_mut()[e] -= h;
            let lp = loss_with_grads(&config, &plus, &s, t, &eps, true)
                .unwrap()
                .0;
            let lm = loss_with_grads(&config, &minus, &s, t, &eps, true)
                .unwrap()
                .0;
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic.data()[e];
            diff += (a - numeric).powi(2);
            norm += a.abs() + numeric.abs();
        }
        assert!(
            analytic.data().iter().any(|&v| v != 0.0),
            "{name}: zero gradient"
        );
        let rel = diff.sqrt() / f64::max(norm, 1e-8);
        assert!(rel < 1e-4, "{name}: relative error {rel:e}");
    }
}

#[test]
fn config_tensor_roundtrip() {
    let mut c = DenoiserConfig::compact();
    assert_eq!(DenoiserConfig::from_tensor(&c.to_tensor()).unwrap(), c);
    c.adapted_layers = Some(vec![1]);
    c.positional = false;
    assert_eq!(DenoiserConfig::from_tensor(&c.to_tensor()).unwrap(), c);
    let store = init_base(&c, 0).unwrap();
    assert_eq!(DenoiserConfig::from_store(&store).unwrap(), c);
    let mut bad = c.to_tensor();
    bad.data_mut()[0] = 1.5;
    assert!(DenoiserConfig::from_tensor(&bad).is_err());
}

#[test]
fn text_embedding_flags_padding() {
    let config = tiny();
    let store = init_base(&config, 0).unwrap();
    let prompt = vocab::encode("red stripes").unwrap();
    let e = encode_text(&store, &config, &prompt).unwrap();
    assert_eq!(e.vectors.rows(), config.max_prompt_len);
    assert_eq!(e.padded.iter().filter(|&&p| !p).count(), prompt.len());
    assert!(e.vectors.is_finite());
    let other = encode_text(&store, &config, &vocab::encode("blue stripes").unwrap()).unwrap();
    assert_ne!(e.vectors.row(0), other.vectors.row(0));
    assert_eq!(e.vectors.row(1), other.vectors.row(1));
    let too_long = vec![vocab::id("red").unwrap(); config.max_prompt_len + 1];
    assert!(encode_text(&store, &config, &too_long).is_err());
}

fn inputs_for(s: &TrainSample) -> (Tensor, Tensor) {
    let noisy = rng::normal_tensor(&mut rng::stream(9, &[]), s.image.shape(), 1.0);
    let masked = image::apply_mask(&s.image, &s.mask).unwrap();
    (noisy, masked)
}

#[test]
fn zero_initialised_adapters_leave_prediction_unchanged() {
    let config = tiny();
    let mut store = init_base(&config, 4).unwrap();
    let out = store.get("base.out.w").unwrap().shape().to_vec();
    *store.get_mut("base.out.w").unwrap() =
        rng::normal_tensor(&mut rng::stream(4, &[4]), &out, 0.3);
    store.freeze_all();
    store.merge(&init_dca(&config, 4).unwrap());
    store.merge(&init_rpa(&config, 4).unwrap());
    store.merge(&init_control(&config));
    let s = sample(&config, 5);
    let (noisy, masked) = inputs_for(&s);
    let inputs = DenoiseInputs {
        noisy: &noisy,
        timestep: 30,
        prompt: &s.prompt,
        mask: &s.mask,
        masked_image: &masked,
    };
    let model = Denoiser::new(&config, &store);
    let plain = model.denoise(&inputs, &Adapters::none()).unwrap();
    let full = Adapters {
        dca: true,
        reference: s.reference.as_ref(),
        control: s.control.as_ref(),
    };
    assert_eq!(model.denoise(&inputs, &full).unwrap(), plain);
    assert_eq!(
        model.denoise_guided(&inputs, &full, 7.0).unwrap(),
        model
            .denoise_guided(&inputs, &Adapters::none(), 7.0)
            .unwrap()
    );

    let live = random_store(&config, 4);
    let live_model = Denoiser::new(&config, &live);
    assert_ne!(
        live_model.denoise(&inputs, &full).unwrap(),
        live_model.denoise(&inputs, &Adapters::none()).unwrap()
    );
}

#[test]
fn translation_by_a_token_translates_the_prediction() {
    let config = DenoiserConfig {
        positional: false,
        ..tiny()
    };
    let mut store = init_base(&config, 7).unwrap();
    let out = store.get("base.out.w").unwrap().shape().to_vec();
    *store.get_mut("base.out.w").unwrap() =
        rng::normal_tensor(&mut rng::stream(7, &[4]), &out, 0.3);
    let model = Denoiser::new(&config, &store);
    let s = sample(&config, 8);
    let (noisy, masked) = inputs_for(&s);
    let run = |noisy: &Tensor, mask: &Tensor, masked: &Tensor| {
        let inputs = DenoiseInputs {
            noisy,
            timestep: 50,
            prompt: &s.prompt,
            mask,
            masked_image: masked,
        };
        model.denoise(&inputs, &Adapters::none()).unwrap()
    };
    let base = run(&noisy, &s.mask, &masked);
    let k = config.token_size;
    let roll = |t: &Tensor| image::roll(t, k, 2 * k).unwrap();
    let shifted = run(&roll(&noisy), &roll(&s.mask), &roll(&masked));
    assert!(base.data().iter().any(|&v| v != 0.0));
    assert!(shifted.max_abs_diff(&roll(&base)) < 1e-12);
}

fn tiny_data(count: usize, seed: u64) -> Vec<TrainSample> {
    let items = data::generate(count, 16, 16, 0.6, seed).unwrap();
    stage1_samples(&items)
}

fn hp(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 4,
        lr: 1e-3,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_steps_returns_initialisation() {
    let config = tiny();
    let out = pretrain_base(&config, &tiny_data(4, 0), &hp(0), 11).unwrap();
    let mut init = init_base(&config, 11).unwrap();
    init.freeze_all();
    assert_eq!(out.params, init);
    assert!(out.losses.is_empty());
}

#[test]
fn pretraining_is_deterministic_and_decreases_loss() {
    let config = tiny();
    let data = tiny_data(32, 1);
    let a = pretrain_base(&config, &data, &hp(200), 3).unwrap();
    let b = pretrain_base(&config, &data, &hp(200), 3).unwrap();
    assert_eq!(a.params.to_bytes(), b.params.to_bytes());
    assert_eq!(a.losses, b.losses);
    let ma = moving_average(&a.losses, 20);
    assert!(
        ma.last().unwrap() < ma.first().unwrap(),
        "{:?} -> {:?}",
        ma.first(),
        ma.last()
    );
}

fn fixed_loss(
    config: &DenoiserConfig,
    store: &ParameterStore,
    data: &[TrainSample],
    use_dca: bool,
) -> f64 {
    let mut r = rng::stream(77, &[]);
    let mut total = 0.0;
    for s in data {
        for _ in 0..4 {
            let t = rng::below(&mut r, 100);
            let eps = rng::normal_tensor(&mut r, s.image.shape(), 1.0);
            total += loss_with_grads(config, store, s, t, &eps, use_dca)
                .unwrap()
                .0;
        }
    }
    total
}

#[test]
fn stage_one_keeps_base_frozen_and_learns() {
    let config = tiny();
    let data = tiny_data(32, 2);
    let base = pretrain_base(&config, &data, &hp(100), 5).unwrap().params;
    let before = base.hash_prefix("base.");

    let zero = train_stage1(&config, &base, &data, &hp(0), 6)
        .unwrap()
        .params;
    assert!(zero.names_with_prefix("dca.").count() == 3 * config.layers);
    let mut zero_model = base.clone();
    zero_model.merge(&zero);
    let held = &data[..8];
    assert_eq!(
        fixed_loss(&config, &zero_model, held, true),
        fixed_loss(&config, &base, held, false)
    );

    let trained = train_stage1(&config, &base, &data, &hp(500), 6).unwrap();
    assert_eq!(base.hash_prefix("base."), before);
    let mut model = base.clone();
    model.merge(&trained.params);
    model.freeze_all();
    let start = fixed_loss(&config, &zero_model, &data, true);
    let end = fixed_loss(&config, &model, &data, true);
    assert!(end < start, "{start} -> {end}");

    let mut thawed = base.clone();
    thawed.set_frozen("base.", false);
    assert!(train_stage1(&config, &thawed, &data, &hp(1), 6).is_err());
}
