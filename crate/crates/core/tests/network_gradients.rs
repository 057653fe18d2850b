use rand::Rng;
use spikeseg::gradcheck::check_network;
use spikeseg::network::{ArchOptions, InputDims, LayerKind, LayerSpec, ModelParams, Mode, NetworkSpec, NeuronConfig, Norm};
use spikeseg::neuron::Threshold;
use spikeseg::ops::ConvSpec;
use spikeseg::rng::rng_from;
use spikeseg::{SpikeTrain, Shape4, Tensor4};

/// The relaxed activation is only C1, so steps much larger than this pick up
/// curvature jumps near 0, theta and 2 theta.
const EPS: f64 = 1e-6;
/// ReLU networks are piecewise linear between kinks, so a larger step only
/// reduces roundoff.
const ANN_EPS: f64 = 1e-5;

fn tiny_spec(variant: usize, classes: usize) -> NetworkSpec {
    let input = InputDims::new(2, 8, 8);
    let layers = match variant {
        0 => vec![
            LayerSpec::new("conv1", LayerKind::Conv(ConvSpec::same(3, 2, 3))),
            LayerSpec::new("cls", LayerKind::Classifier(ConvSpec::same(1, 3, classes))),
        ],
        1 => vec![
            LayerSpec::new("conv1", LayerKind::Conv(ConvSpec::same(3, 2, 3))),
            LayerSpec::new("dil", LayerKind::DilatedConv(ConvSpec::dilated(3, 3, 3, 2))),
            LayerSpec::new("cls", LayerKind::Classifier(ConvSpec::same(1, 3, classes))),
        ],
        _ => vec![
            LayerSpec::new("conv1", LayerKind::Conv(ConvSpec::same(3, 2, 3))),
            LayerSpec::new("pool", LayerKind::AvgPool),
            LayerSpec::new("conv2", LayerKind::Conv(ConvSpec::same(3, 3, 3))),
            LayerSpec::new("score", LayerKind::Conv(ConvSpec::same(1, 3, classes))),
            LayerSpec::new("up", LayerKind::TransposeConv(ConvSpec::upsample2x(classes, classes))).accumulating(),
            LayerSpec::new(
                "skip",
                LayerKind::SkipConv {
                    source: 0,
                    conv: ConvSpec::same(1, 3, classes),
                },
            )
            .accumulating(),
        ],
    };
    let head_start = if variant == 2 { 3 } else { layers.len() - 1 };
    let spec = NetworkSpec {
        input,
        num_classes: classes,
        head_start,
        layers,
    };
    spec.validate().unwrap();
    spec
}

fn randomize(p: &mut ModelParams<f64>, seed: u64) {
    let mut rng = rng_from(seed);
    for l in p.layers.iter_mut().flatten() {
        match &mut l.norm {
            Norm::Bntt(b) => b.gamma.iter_mut().for_each(|g| *g = rng.random_range(0.6..1.4)),
            Norm::Batch(b) => {
                b.gamma.iter_mut().for_each(|g| *g = rng.random_range(0.6..1.4));
                b.beta.iter_mut().for_each(|g| *g = rng.random_range(-0.3..0.3));
            }
            Norm::None => {}
        }
        if let Some(b) = &mut l.bias {
            b.iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
        }
        if l.threshold != Threshold::Uniform(f64::INFINITY) {
            let c = l.weight.shape().n;
            l.threshold = Threshold::PerChannel((0..c).map(|_| rng.random_range(0.6..1.4)).collect());
            l.leak = rng.random_range(0.5..1.0);
        }
    }
}

fn instance(variant: usize, mode: Mode, seed: u64) -> (NetworkSpec, ModelParams<f64>, SpikeTrain<f64>, Vec<u8>) {
    let classes = 2 + (seed % 2) as usize;
    let spec = tiny_spec(variant, classes);
    let steps = 4;
    let neuron = NeuronConfig {
        leak: 0.9,
        threshold: 1.0,
        steps,
    };
    let init_mode = if mode == Mode::Ann { Mode::Ann } else { Mode::Spiking };
    let mut params = ModelParams::init(&spec, init_mode, neuron, seed).unwrap().with_mode(mode).unwrap();
    randomize(&mut params, seed ^ 0xabc);
    let mut rng = rng_from(seed ^ 0x123);
    let n = 2;
    let frames = if mode == Mode::Ann { 1 } else { steps };
    let train = SpikeTrain::new(
        (0..frames)
            .map(|_| {
                Tensor4::from_fn(Shape4::new(n, 2, 8, 8), |_, _, _, _| {
                    if mode == Mode::Ann {
                        rng.random::<f64>()
                    } else if rng.random::<f64>() < 0.5 {
                        1.0
                    } else {
                        0.0
                    }
                })
            })
            .collect(),
    )
    .unwrap();
    let labels = (0..n * 64)
        .map(|i| if i % 17 == 5 { 255 } else { rng.random_range(0..classes as u8) })
        .collect();
    (spec, params, train, labels)
}

#[test]
fn relaxed_bptt_matches_finite_differences() {
    for seed in 0..24u64 {
        let (spec, params, train, labels) = instance((seed % 3) as usize, Mode::Relaxed, seed);
        let r = check_network(&spec, &params, &train, &labels, 255, EPS).unwrap();
        assert!(r.max_rel_err < 1e-4, "seed {seed}: {r:?}");
    }
}

#[test]
fn ann_backward_matches_finite_differences() {
    for seed in 0..6u64 {
        let (spec, params, train, labels) = instance((seed % 3) as usize, Mode::Ann, seed);
        let r = check_network(&spec, &params, &train, &labels, 255, ANN_EPS).unwrap();
        assert!(r.max_rel_err < 1e-4, "seed {seed}: {r:?}");
    }
}

#[test]
fn multi_frame_ann_averages_before_head() {
    let (spec, params, _, labels) = instance(2, Mode::Ann, 5);
    let mut rng = rng_from(77);
    let frames: Vec<Tensor4<f64>> = (0..3)
        .map(|_| Tensor4::from_fn(Shape4::new(2, 2, 8, 8), |_, _, _, _| rng.random::<f64>()))
        .collect();
    let train = SpikeTrain::new(frames).unwrap();
    let r = check_network(&spec, &params, &train, &labels, 255, ANN_EPS).unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn deeplab_builder_gradients() {
    let spec = spikeseg::network::spiking_deeplab(
        2,
        InputDims::new(1, 8, 8),
        ArchOptions {
            width_divisor: 64,
            dilation: [2, 2],
        },
    )
    .unwrap();
    let neuron = NeuronConfig {
        leak: 0.95,
        threshold: 1.0,
        steps: 3,
    };
    let mut params = ModelParams::<f64>::init(&spec, Mode::Spiking, neuron, 4)
        .unwrap()
        .with_mode(Mode::Relaxed)
        .unwrap();
    randomize(&mut params, 4);
    let mut rng = rng_from(8);
    let train = SpikeTrain::new(
        (0..3)
            .map(|_| Tensor4::from_fn(Shape4::new(2, 1, 8, 8), |_, _, _, _| (rng.random::<f64>() < 0.6) as u8 as f64))
            .collect(),
    )
    .unwrap();
    let labels: Vec<u8> = (0..128).map(|i| (i % 3 == 0) as u8).collect();
    let r = check_network(&spec, &params, &train, &labels, 255, EPS).unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

