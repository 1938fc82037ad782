//! Network engine against direct oracles: brute-force convolution, layer-by-layer
//! composition and finite-difference gradients of whole networks.

use lfsr_core::angular::{angular_dataset, build_angular_net, make_angular_training_set};
use lfsr_core::nn::{
    batch_indices, conv2d_forward, fc_forward, relu_forward, LayerSpec, Network, NetworkConfig,
    Tensor, TrainConfig, Trainer,
};
use lfsr_core::synthetic::smooth_field;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn conv_oracle(x: &[f64], (c, h, w): (usize, usize, usize), wt: &[f64], b: &[f64], n: usize, k: usize) -> Vec<f64> {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut out = vec![0.0; n * oh * ow];
    for o in 0..n {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = b[o];
                for ci in 0..c {
                    for i in 0..k {
                        for j in 0..k {
                            acc += wt[((o * c + ci) * k + i) * k + j] * x[(ci * h + y + i) * w + xx + j];
                        }
                    }
                }
                out[(o * oh + y) * ow + xx] = acc;
            }
        }
    }
    out
}

#[test]
fn conv_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..60 {
        let k = [1, 3, 5][rng.random_range(0..3)];
        let (c, n) = (rng.random_range(1..=4), rng.random_range(1..=5));
        let (h, w) = (k + rng.random_range(0..6), k + rng.random_range(0..6));
        let x = rand_vec(&mut rng, c * h * w);
        let wt = rand_vec(&mut rng, n * c * k * k);
        let b = rand_vec(&mut rng, n);
        let got = conv2d_forward(
            &Tensor::new(&[c, h, w], x.clone()).unwrap(),
            &Tensor::new(&[n, c, k, k], wt.clone()).unwrap(),
            &Tensor::new(&[n], b.clone()).unwrap(),
        )
        .unwrap();
        assert_eq!(got.dims(), &[n, h - k + 1, w - k + 1]);
        let want = conv_oracle(&x, (c, h, w), &wt, &b, n, k);
        for (g, e) in got.data().iter().zip(&want) {
            assert!((g - e).abs() <= 1e-12, "{g} vs {e}");
        }
    }
}

/// Forward pass built from the public layer functions; also returns every
/// pre-activation seen by a ReLU.
fn composed_forward(net: &Network, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (c, h, w) = net.input_shape();
    let mut x = Tensor::new(&[c, h, w], input.to_vec()).unwrap();
    let mut pre = Vec::new();
    for (spec, p) in net.layers().iter().zip(net.params()) {
        x = match *spec {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
            } => conv2d_forward(
                &x,
                &Tensor::new(&[out_channels, in_channels, kernel, kernel], p.weights.clone()).unwrap(),
                &Tensor::new(&[out_channels], p.bias.clone()).unwrap(),
            )
            .unwrap(),
            LayerSpec::Relu => {
                pre.extend_from_slice(x.data());
                relu_forward(&x)
            }
            LayerSpec::FullyConnected { in_size, out_size } => {
                let flat = Tensor::new(&[in_size], x.into_data()).unwrap();
                fc_forward(
                    &flat,
                    &Tensor::new(&[out_size, in_size], p.weights.clone()).unwrap(),
                    &Tensor::new(&[out_size], p.bias.clone()).unwrap(),
                )
                .unwrap()
            }
        };
    }
    (x.into_data(), pre)
}

fn small_net(seed: u64, convs: &[(usize, usize)], side: usize, channels: usize, outputs: usize) -> Network {
    NetworkConfig::from_pairs(convs)
        .build(channels, side, outputs, seed, 0.4)
        .unwrap()
}

#[test]
fn forward_batch_equals_layer_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..10 {
        let net = small_net(seed, &[(6, 3), (4, 1)], 5, 2, 7);
        let batch = 3;
        let inputs = rand_vec(&mut rng, batch * net.input_len());
        let out = net.forward_batch(&inputs, batch).unwrap();
        for b in 0..batch {
            let one = &inputs[b * net.input_len()..(b + 1) * net.input_len()];
            let (want, _) = composed_forward(&net, one);
            for (g, e) in out[b * 7..(b + 1) * 7].iter().zip(&want) {
                assert!((g - e).abs() <= 1e-12, "{g} vs {e}");
            }
        }
    }
}

#[test]
fn network_gradients_match_finite_differences() {
    const EPS: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut checked = 0;
    for seed in 0..120 {
        let net = small_net(seed, &[(3, 3), (3, 1), (2, 1)], 4, 1 + (seed as usize % 2), 5);
        let input = rand_vec(&mut rng, net.input_len());
        let r = rand_vec(&mut rng, 5);
        let (_, pre) = composed_forward(&net, &input);
        if pre.iter().any(|v| v.abs() <= 1e-3) {
            continue; // too close to a ReLU kink for central differences
        }
        let loss = |n: &Network| -> f64 {
            let out = n.forward_batch(&input, 1).unwrap();
            out.iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let (c, h, w) = net.input_shape();
        let grads = net
            .backward(&Tensor::new(&[c, h, w], input.clone()).unwrap(), &Tensor::new(&[5], r.clone()).unwrap())
            .unwrap();
        for (li, g) in grads.iter().enumerate() {
            for (bias, len) in [(false, g.weights.len()), (true, g.bias.len())] {
                for j in 0..len {
                    let nudged = |delta: f64| {
                        let mut n = net.clone();
                        let p = &mut n.params_mut()[li];
                        let slot = if bias { &mut p.bias[j] } else { &mut p.weights[j] };
                        *slot += delta;
                        loss(&n)
                    };
                    let numeric = (nudged(EPS) - nudged(-EPS)) / (2.0 * EPS);
                    let analytic = if bias { g.bias[j] } else { g.weights[j] };
                    let scale = analytic.abs().max(numeric.abs());
                    if scale > 1e-10 {
                        assert!(
                            (analytic - numeric).abs() / scale <= 1e-4,
                            "seed {seed} layer {li}: {analytic} vs {numeric}"
                        );
                    }
                }
            }
        }
        checked += 1;
    }
    assert!(checked >= 10, "only {checked} networks away from kinks");
}

fn tiny_training() -> (Network, TrainConfig, lfsr_core::nn::Dataset) {
    let samples = make_angular_training_set(&smooth_field(1, 6, 6, 6, 3)).unwrap();
    let data = angular_dataset(&samples, 0).unwrap();
    let cfg = NetworkConfig::from_pairs(&[(8, 3), (4, 1)]);
    let net = build_angular_net(3, &cfg, 7, 0.05).unwrap();
    let train = TrainConfig {
        learning_rates: vec![1e-2],
        batch_size: 8,
        iterations: 300,
        log_interval: 10,
        seed: 5,
        ..TrainConfig::default()
    };
    (net, train, data)
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let (net, cfg, data) = tiny_training();
        let mut t = Trainer::new(net, cfg).unwrap();
        t.run(&data).unwrap();
        t.into_parts()
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
}

#[test]
fn loss_falls_on_a_small_problem() {
    let (net, cfg, data) = tiny_training();
    let mut t = Trainer::new(net, cfg).unwrap();
    t.run(&data).unwrap();
    let h = t.history();
    let head: f64 = h[..3].iter().map(|r| r.loss).sum::<f64>() / 3.0;
    let tail: f64 = h[h.len() - 3..].iter().map(|r| r.loss).sum::<f64>() / 3.0;
    assert!(tail < 0.5 * head, "loss {head} -> {tail}");
}

#[test]
fn batches_depend_only_on_seed_and_step() {
    assert_eq!(batch_indices(3, 17, 100, 10), batch_indices(3, 17, 100, 10));
    assert_ne!(batch_indices(3, 17, 100, 10), batch_indices(3, 18, 100, 10));
    let idx = batch_indices(1, 0, 50, 20);
    let mut sorted = idx.clone();
    sorted.sort_unstable();
    sorted.dedup();
    assert_eq!(sorted.len(), 20);
    assert!(idx.iter().all(|&i| i < 50));
    assert_eq!(batch_indices(1, 0, 5, 20), vec![0, 1, 2, 3, 4]);
}
