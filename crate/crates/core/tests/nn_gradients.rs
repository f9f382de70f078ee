//! Analytic backprop against central finite differences in f64.

use greenlaunch::nn::{Activation, Encoder, EncoderSpec, LayerSpec, Network, Parameterized};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Scalar probe loss `sum(out * weights)`, whose output gradient is `weights`.
fn probe(out: &Array2<f64>, weights: &Array2<f64>) -> f64 {
    (out * weights).sum()
}

fn check_network(net: &mut Network<f64>, rng: &mut ChaCha8Rng) {
    // Zero biases put padded conv cells exactly on the ReLU kink.
    for block in net.blocks_mut() {
        for p in block.iter_mut() {
            *p += rng.random_range(-0.3..0.3);
        }
    }
    let batch = rng.random_range(1..4);
    let x = random_matrix(rng, batch, net.input_len());
    let w = random_matrix(rng, batch, net.output_len());
    let (_, cache) = net.forward_cached(x.view()).unwrap();
    let mut grads = net.zero_grads();
    let dx = net.backward(&cache, &w, &mut grads).unwrap();

    let mut worst: f64 = 0.0;
    let n_blocks = grads.len();
    for b in 0..n_blocks {
        let len = net.blocks()[b].len();
        for i in 0..len {
            let orig = net.blocks()[b][i];
            net.blocks_mut()[b][i] = orig + EPS;
            let up = probe(&net.forward(x.view()).unwrap(), &w);
            net.blocks_mut()[b][i] = orig - EPS;
            let down = probe(&net.forward(x.view()).unwrap(), &w);
            net.blocks_mut()[b][i] = orig;
            worst = worst.max(rel_err(grads[b][i], (up - down) / (2.0 * EPS)));
        }
    }
    for r in 0..x.nrows() {
        for c in 0..x.ncols() {
            let mut xp = x.clone();
            xp[(r, c)] += EPS;
            let mut xm = x.clone();
            xm[(r, c)] -= EPS;
            let fd = (probe(&net.forward(xp.view()).unwrap(), &w) - probe(&net.forward(xm.view()).unwrap(), &w)) / (2.0 * EPS);
            worst = worst.max(rel_err(dx[(r, c)], fd));
        }
    }
    assert!(worst < TOL, "{}: max relative error {worst:e}", net.name());
}

#[test]
fn dense_stacks_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for act in [Activation::Identity, Activation::Relu, Activation::Tanh] {
        for _ in 0..4 {
            let depth = rng.random_range(2..5);
            let widths: Vec<usize> = (0..depth).map(|_| rng.random_range(1..7)).collect();
            let mut net = Network::<f64>::mlp(format!("mlp-{act:?}"), &widths, act, 1.0, &mut rng).unwrap();
            check_network(&mut net, &mut rng);
        }
    }
}

#[test]
fn conv_layers_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for _ in 0..8 {
        let kernel = rng.random_range(1..4);
        let padding = rng.random_range(0..2);
        let stride = rng.random_range(1..3);
        let height = rng.random_range(kernel.max(2)..6);
        let width = rng.random_range(kernel.max(2)..6);
        let conv = LayerSpec::Conv2d {
            in_channels: rng.random_range(1..3),
            out_channels: rng.random_range(1..4),
            height,
            width,
            kernel,
            stride,
            padding,
        };
        let act = [Activation::Relu, Activation::Tanh][rng.random_range(0..2)];
        let specs = [
            conv,
            LayerSpec::Activation {
                function: act,
                width: conv.output_len(),
            },
            LayerSpec::Dense {
                inputs: conv.output_len(),
                outputs: 3,
            },
        ];
        let mut net = Network::<f64>::from_specs(format!("conv-{conv:?}"), &specs, 1.0, &mut rng).unwrap();
        check_network(&mut net, &mut rng);
    }
}

#[test]
fn encoder_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let mut spec = EncoderSpec::standard(5, 6, 8);
    spec.conv_channels = vec![2, 3];
    spec.job_hidden = 4;
    spec.merge = vec![6, 5];
    let mut enc = Encoder::<f64>::new(spec, &mut rng).unwrap();
    let image = random_matrix(&mut rng, 2, 30);
    let jobs = random_matrix(&mut rng, 2, 8);
    let w = random_matrix(&mut rng, 2, 5);
    let (_, cache) = enc.forward_cached(image.view(), jobs.view()).unwrap();
    let mut grads = enc.zero_grads();
    enc.backward(&cache, &w, &mut grads).unwrap();

    let mut worst: f64 = 0.0;
    for b in 0..grads.len() {
        for i in 0..grads[b].len() {
            let orig = enc.blocks()[b][i];
            enc.blocks_mut()[b][i] = orig + EPS;
            let up = probe(&enc.forward(image.view(), jobs.view()).unwrap(), &w);
            enc.blocks_mut()[b][i] = orig - EPS;
            let down = probe(&enc.forward(image.view(), jobs.view()).unwrap(), &w);
            enc.blocks_mut()[b][i] = orig;
            worst = worst.max(rel_err(grads[b][i], (up - down) / (2.0 * EPS)));
        }
    }
    assert!(worst < TOL, "encoder max relative error {worst:e}");
}
