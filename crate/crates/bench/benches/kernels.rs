use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dnerv_core::codec::{entropy_decode, entropy_encode, quantize};
use dnerv_core::data::{synth_video, SynthKind};
use dnerv_core::kernels::{conv2d_backward, conv2d_forward, ConvGeom};
use dnerv_core::train::{train, Task, TrainConfig};
use dnerv_core::{DnervModel, ModelConfig, Tensor};

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // Shapes of the tiny preset's last decoder stage and an encoder depthwise conv.
    for (name, input, weight, padding, groups) in [
        ("conv5x5_24to72_32x64", [24, 32, 64], [72, 24, 5, 5], 2, 1),
        ("dw7x7_32ch_32x64", [32, 32, 64], [32, 1, 7, 7], 3, 32),
        ("conv1x1_128to32_16x32", [128, 16, 32], [32, 128, 1, 1], 0, 1),
    ] {
        let g = ConvGeom::new(input, &weight, 1, padding, groups).unwrap();
        let x = Tensor::uniform(input.to_vec(), -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(weight.to_vec(), -0.1, 0.1, &mut rng);
        c.bench_function(&format!("{name}/forward"), |b| {
            b.iter(|| conv2d_forward(&g, black_box(x.data()), w.data(), None))
        });
        let (out, cols) = conv2d_forward(&g, x.data(), w.data(), None);
        let mut dx = vec![0.0; x.len()];
        let mut dw = vec![0.0; w.len()];
        c.bench_function(&format!("{name}/backward"), |b| {
            b.iter(|| {
                conv2d_backward(&g, x.data(), w.data(), cols.as_deref(), black_box(&out), Some(&mut dx), Some(&mut dw), None)
            })
        });
    }
}

fn model(c: &mut Criterion) {
    let video = synth_video(SynthKind::MovingSquare, 2, 64, 128, 6, 0).unwrap();
    let model = DnervModel::new(ModelConfig::preset("tiny-64x128").unwrap(), 0).unwrap();
    let diff = Tensor::zeros(vec![6, 64, 128]);
    c.bench_function("tiny/forward", |b| b.iter(|| model.forward(black_box(&video.frames[0]), Some(&diff)).unwrap()));
    let mut group = c.benchmark_group("tiny");
    group.sample_size(10);
    group.bench_function("train_epoch_2_frames", |b| {
        let cfg = TrainConfig { epochs: 1, seed: 0, ..Default::default() };
        b.iter(|| {
            let mut m = model.clone();
            train(&mut m, &video, Task::Regression, &cfg).unwrap()
        })
    });
    group.finish();
}

fn huffman(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let values = Tensor::uniform(vec![100_000], -1.0, 1.0, &mut rng);
    let codes = quantize(values.data(), 8).unwrap().codes;
    let stream = entropy_encode(&codes).unwrap();
    c.bench_function("huffman/encode_100k", |b| b.iter(|| entropy_encode(black_box(&codes)).unwrap()));
    c.bench_function("huffman/decode_100k", |b| b.iter(|| entropy_decode(black_box(&stream)).unwrap()));
}

criterion_group!(benches, conv, model, huffman);
criterion_main!(benches);
