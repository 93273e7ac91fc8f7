use padapter::diffusion::{blend_step, forward_diffuse, NoiseSchedule, Sampler, SamplerKind};
use padapter::rng;
use padapter::Tensor;
use proptest::prelude::*;

fn random(seed: u64, shape: &[usize]) -> Tensor {
    rng::normal_tensor(&mut rng::stream(seed, &[1]), shape, 1.0)
}

fn binary_mask(seed: u64, h: usize, w: usize) -> Tensor {
    let mut r = rng::stream(seed, &[2]);
    Tensor::new(
        vec![1, h, w],
        (0..h * w).map(|_| rng::below(&mut r, 2) as f64).collect(),
    )
    .unwrap()
}

proptest! {
    #[test]
    fn blend_is_idempotent_and_partitions(c in 1usize..4, h in 1usize..9, w in 1usize..9, seed in any::<u64>()) {
        let a = random(seed, &[c, h, w]);
        let b = random(seed ^ 7, &[c, h, w]);
        let m = binary_mask(seed, h, w);
        let once = blend_step(&a, &b, &m).unwrap();
        prop_assert_eq!(&blend_step(&once, &b, &m).unwrap(), &once);
        for ch in 0..c {
            for p in 0..h * w {
                let i = ch * h * w + p;
                let expect = if m.data()[p] == 1.0 { a.data()[i] } else { b.data()[i] };
                prop_assert_eq!(once.data()[i].to_bits(), expect.to_bits());
            }
        }
    }
}

fn oracle_sample(kind: SamplerKind, steps: usize, seed: u64) -> f64 {
    let schedule = NoiseSchedule::default();
    let x0 = random(seed, &[3, 4, 4]).map(|v| (v * 0.4).clamp(-1.0, 1.0));
    let eps = random(seed ^ 3, &[3, 4, 4]);
    let x_t = forward_diffuse(&schedule, &x0, schedule.len() - 1, &eps).unwrap();
    let sampler = Sampler::new(schedule.clone(), steps, kind).unwrap();
    let out = sampler
        .run(x_t, None, seed, |x, t| {
            let a = schedule.alpha_bar(t);
            x.zip_map(&x0, "oracle", |x, x0| {
                (x - a.sqrt() * x0) / (1.0 - a).sqrt()
            })
        })
        .unwrap();
    out.max_abs_diff(&x0)
}

#[test]
fn oracle_noise_reverse_chain_recovers_x0() {
    for seed in 0..10 {
        for steps in [1, 30, 100] {
            let err = oracle_sample(SamplerKind::Euler, steps, seed);
            assert!(err < 1e-8, "seed {seed} steps {steps}: {err:e}");
        }
        let err = oracle_sample(SamplerKind::Ancestral, 30, seed);
        assert!(err < 1e-8, "ancestral seed {seed}: {err:e}");
    }
}

#[test]
fn sampling_is_a_pure_function_of_its_inputs() {
    let schedule = NoiseSchedule::default();
    let known = random(4, &[3, 8, 8]);
    let mask = binary_mask(4, 8, 8);
    // Couples pixels so blend noise in the known region reaches the hole.
    let predict = |x: &Tensor, t: usize| {
        let mean = x.data().iter().sum::<f64>() / x.numel() as f64;
        Ok(x.map(|v| 0.1 * v + mean + t as f64 * 1e-3))
    };
    for kind in [SamplerKind::Euler, SamplerKind::Ancestral] {
        let s = Sampler::new(schedule.clone(), 30, kind).unwrap();
        let a = s
            .run(random(5, &[3, 8, 8]), Some((&known, &mask)), 9, predict)
            .unwrap();
        let b = s
            .run(random(5, &[3, 8, 8]), Some((&known, &mask)), 9, predict)
            .unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = s
            .run(random(5, &[3, 8, 8]), Some((&known, &mask)), 10, predict)
            .unwrap();
        assert_ne!(a, c);
        // The final state is blended with the clean known image.
        for ch in 0..3 {
            for p in 0..64 {
                if mask.data()[p] == 0.0 {
                    assert_eq!(a.data()[ch * 64 + p], known.data()[ch * 64 + p]);
                }
            }
        }
    }
}

#[test]
fn default_schedule_is_strictly_decreasing() {
    let s = NoiseSchedule::default();
    assert_eq!(s.len(), 100);
    let ab = s.alpha_bars();
    assert!(ab[0] <= 1.0 && ab[0] > 0.0 && ab[99] > 0.0);
    assert!(ab.windows(2).all(|w| w[1] < w[0]));
}
