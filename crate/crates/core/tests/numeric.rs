use padapter::graph::{Graph, NodeId};
use padapter::rng;
use padapter::tensor::{matmul, softmax_rows};
use padapter::Tensor;
use proptest::prelude::*;

fn random(seed: u64, shape: &[usize]) -> Tensor {
    let mut r = rng::stream(seed, &[99]);
    rng::normal_tensor(&mut r, shape, 1.0)
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a.at(i, p) * b.at(p, j);
            }
            out[i * n + j] = acc;
        }
    }
    out
}

type Build = dyn Fn(&mut Graph, &[NodeId]) -> NodeId;

/// Max over parameters of ‖analytic − numeric‖ / max(‖analytic‖ + ‖numeric‖, 1e-8).
fn gradient_error(params: &[Tensor], build: &Build) -> f64 {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = build(&mut g, &ids);
    let grads = g.backward(loss).unwrap();
    let eval = |ps: &[Tensor]| {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| g.param(p.clone())).collect();
        let l = build(&mut g, &ids);
        g.value(l).item()
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (pi, p) in params.iter().enumerate() {
        let analytic = grads.wrt(ids[pi]);
        let mut diff = 0.0;
        let mut norm = 0.0;
        for e in 0..p.numel() {
            let mut plus = params.to_vec();
            plus[pi].data_mut()[e] += h;
            let mut minus = params.to_vec();
            minus[pi].data_mut()[e] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[e];
            diff += (a - numeric).powi(2);
            norm += a.abs() + numeric.abs();
        }
        worst = worst.max(diff.sqrt() / norm.max(1e-8));
    }
    worst
}

fn mse_to(g: &mut Graph, x: NodeId, seed: u64) -> NodeId {
    let shape = g.value(x).shape().to_vec();
    let t = g.constant(random(seed ^ 0x55, &shape));
    g.mse(x, t).unwrap()
}

#[test]
fn every_op_matches_finite_differences() {
    for seed in 0..100u64 {
        let a = random(seed, &[3, 4]);
        let b = random(seed + 1000, &[4, 2]);
        let c = random(seed + 2000, &[3, 4]);
        let mask = Tensor::new(
            vec![3, 4],
            (0..12)
                .map(|i| (i + seed as usize).is_multiple_of(3) as u8 as f64)
                .collect(),
        )
        .unwrap();
        let cases: Vec<(&str, Vec<Tensor>, Box<Build>)> = vec![
            (
                "matmul",
                vec![a.clone(), b.clone()],
                Box::new(move |g, p| {
                    let y = g.matmul(p[0], p[1]).unwrap();
                    mse_to(g, y, seed)
                }),
            ),
            (
                "matmul_nt",
                vec![a.clone(), c.clone()],
                Box::new(move |g, p| {
                    let y = g.matmul_nt(p[0], p[1]).unwrap();
                    mse_to(g, y, seed)
                }),
            ),
            (
                "add_sub_mul",
                vec![a.clone(), c.clone()],
                Box::new(move |g, p| {
                    let s = g.add(p[0], p[1]).unwrap();
                    let d = g.sub(s, p[1]).unwrap();
                    let y = g.mul(d, p[1]).unwrap();
                    mse_to(g, y, seed)
                }),
            ),
            (
                "hadamard_scale",
                vec![a.clone()],
                Box::new(move |g, p| {
                    let y = g.hadamard_mask(p[0], &mask).unwrap();
                    let y = g.scale(y, -1.7).unwrap();
                    mse_to(g, y, seed)
                }),
            ),
            (
                "softmax",
                vec![a.clone()],
                Box::new(move |g, p| {
                    let y = g.softmax(p[0]).unwrap();
                    mse_to(g, y, seed)
                }),
            ),
            (
                "layer_norm",
                vec![a.clone()],
                Box::new(move |g, p| {
                    let y = g.layer_norm(p[0]).unwrap();
                    mse_to(g, y, seed)
                }),
            ),
            (
                "gelu",
                vec![a.clone()],
                Box::new(move |g, p| {
                    let y = g.gelu(p[0]).unwrap();
                    mse_to(g, y, seed)
                }),
            ),
            (
                "slice_concat",
                vec![a.clone()],
                Box::new(move |g, p| {
                    let l = g.slice_cols(p[0], 0, 1).unwrap();
                    let r = g.slice_cols(p[0], 2, 2).unwrap();
                    let y = g.concat_cols(&[r, l, l]).unwrap();
                    mse_to(g, y, seed)
                }),
            ),
            (
                "gather_rows",
                vec![a.clone()],
                Box::new(move |g, p| {
                    let y = g.gather_rows(p[0], &[2, 0, 2, 1]).unwrap();
                    mse_to(g, y, seed)
                }),
            ),
            (
                "attention",
                vec![a.clone(), c.clone(), random(seed + 3000, &[3, 4])],
                Box::new(move |g, p| {
                    let y = g.attention(p[0], p[1], p[2], 0.5).unwrap();
                    mse_to(g, y, seed)
                }),
            ),
        ];
        for (name, params, build) in &cases {
            let err = gradient_error(params, build.as_ref());
            assert!(err < 1e-4, "{name} seed {seed}: relative error {err:e}");
        }
    }
}

#[test]
fn composite_attention_layer_gradient() {
    let z = random(1, &[5, 4]);
    let c = random(2, &[3, 4]);
    let wq = random(3, &[4, 4]);
    let wk = random(4, &[4, 4]);
    let wv = random(5, &[4, 4]);
    let build = move |g: &mut Graph, p: &[NodeId]| {
        let zn = g.layer_norm(p[0]).unwrap();
        let q = g.matmul(zn, p[2]).unwrap();
        let k = g.matmul(p[1], p[3]).unwrap();
        let v = g.matmul(p[1], p[4]).unwrap();
        let a = g.attention(q, k, v, 0.5).unwrap();
        let h = g.add(a, p[0]).unwrap();
        let h = g.gelu(h).unwrap();
        mse_to(g, h, 9)
    };
    assert!(gradient_error(&[z, c, wq, wk, wv], &build) < 1e-4);
}

proptest! {
    #[test]
    fn softmax_rows_normalised_and_shift_invariant(
        rows in 1usize..6, cols in 1usize..9, seed in any::<u64>(), shift in -50.0f64..50.0
    ) {
        let x = random(seed, &[rows, cols]).scale(10.0);
        let s = softmax_rows(&x);
        for i in 0..rows {
            let sum: f64 = s.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(s.row(i).iter().all(|&v| v >= 0.0));
        }
        let shifted = softmax_rows(&x.map(|v| v + shift));
        prop_assert!(s.max_abs_diff(&shifted) < 1e-12);
    }

    #[test]
    fn matmul_matches_triple_loop(m in 1usize..33, k in 1usize..33, n in 1usize..33, seed in any::<u64>()) {
        let a = random(seed, &[m, k]);
        let b = random(seed.wrapping_add(1), &[k, n]);
        let p = matmul(&a, &b).unwrap();
        for (x, y) in p.data().iter().zip(naive_matmul(&a, &b)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn ops_are_bit_deterministic(seed in any::<u64>()) {
        let run = || {
            let mut g = Graph::new();
            let a = g.param(random(seed, &[4, 6]));
            let b = g.param(random(seed ^ 1, &[6, 3]));
            let y = g.matmul(a, b).unwrap();
            let y = g.layer_norm(y).unwrap();
            let y = g.softmax(y).unwrap();
            let l = mse_to(&mut g, y, seed);
            let gr = g.backward(l).unwrap();
            (g.value(l).item().to_bits(), gr.wrt(a).fingerprint())
        };
        prop_assert_eq!(run(), run());
    }
}
