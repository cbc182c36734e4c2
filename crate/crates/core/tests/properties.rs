use proptest::prelude::*;

use dnerv_core::codec::{entropy_decode, entropy_encode, magnitude_masks, quantize};
use dnerv_core::config::{model_from_text, model_to_text};
use dnerv_core::data::ppm::{decode_ppm, encode_ppm};
use dnerv_core::data::{diff_stream, make_mask, synth_video, MaskKind, RgbImage, SynthKind};
use dnerv_core::kernels::{pixel_shuffle, pixel_unshuffle};
use dnerv_core::metrics::{psnr, ssim};
use dnerv_core::optim::cosine_lr;
use dnerv_core::{DiffVariant, ModelConfig, Tensor};

fn tensor(shape: [usize; 3], seed: u64) -> Tensor {
    let mut s = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    Tensor::from_fn(shape.to_vec(), |_| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unshuffle_inverts_shuffle(c in 1usize..4, h in 1usize..6, w in 1usize..6, s in 1usize..4, seed: u64) {
        let x = tensor([c * s * s, h, w], seed);
        let (y, shape) = pixel_shuffle(x.data(), [c * s * s, h, w], s).unwrap();
        prop_assert_eq!(shape, [c, h * s, w * s]);
        let (back, back_shape) = pixel_unshuffle(&y, shape, s).unwrap();
        prop_assert_eq!(back_shape, [c * s * s, h, w]);
        prop_assert_eq!(back, x.data().to_vec());
    }

    #[test]
    fn quantization_error_within_half_step(
        values in prop::collection::vec(-1e3f64..1e3, 1..300),
        bits in 2u8..=16,
    ) {
        let q = quantize(&values, bits).unwrap();
        prop_assert!(q.codes.iter().all(|&c| c < 1 << bits));
        for (v, d) in values.iter().zip(q.dequantize()) {
            prop_assert!((v - d).abs() <= q.step() / 2.0 * (1.0 + 1e-9) + 1e-12);
        }
    }

    #[test]
    fn entropy_coding_round_trips(codes in prop::collection::vec(0u32..300, 0..500)) {
        let stream = entropy_encode(&codes).unwrap();
        prop_assert_eq!(entropy_decode(&stream).unwrap(), codes);
    }

    #[test]
    fn skewed_alphabets_round_trip(n in 1usize..2000, spread in 1u32..40) {
        // Geometric-ish frequencies push code lengths towards the limit.
        let codes: Vec<u32> = (0..n).map(|i| (i as u32).trailing_zeros().min(spread)).collect();
        let stream = entropy_encode(&codes).unwrap();
        prop_assert_eq!(entropy_decode(&stream).unwrap(), codes);
    }

    #[test]
    fn pruning_keeps_the_largest_magnitudes(
        values in prop::collection::vec(-5f64..5.0, 1..400),
        ratio in 0f64..0.99,
    ) {
        let masks = magnitude_masks(&[&values], ratio).unwrap();
        let kept = masks[0].iter().filter(|&&k| k).count();
        prop_assert_eq!(kept, ((1.0 - ratio) * values.len() as f64).round() as usize);
        let min_kept = values.iter().zip(&masks[0]).filter(|(_, &k)| k).map(|(v, _)| v.abs()).fold(f64::INFINITY, f64::min);
        let max_dropped = values.iter().zip(&masks[0]).filter(|(_, &k)| !k).map(|(v, _)| v.abs()).fold(0.0, f64::max);
        prop_assert!(kept == 0 || min_kept >= max_dropped);
    }

    #[test]
    fn ppm_round_trips(w in 1usize..20, h in 1usize..20, seed: u64) {
        let pixels: Vec<u8> = tensor([3, h, w], seed).data().iter().map(|v| (v * 255.0) as u8).collect();
        let img = RgbImage { width: w, height: h, pixels };
        prop_assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
    }

    #[test]
    fn eight_bit_tensors_survive_image_conversion(w in 1usize..12, h in 1usize..12, seed: u64) {
        let t = tensor([3, h, w], seed).map(|v| (v * 255.0).round() / 255.0);
        prop_assert_eq!(RgbImage::from_tensor(&t).unwrap().to_tensor(), t);
    }

    #[test]
    fn psnr_and_ssim_are_symmetric(seed_a: u64, seed_b: u64) {
        let a = tensor([3, 16, 16], seed_a);
        let b = tensor([3, 16, 16], seed_b);
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let (ab, ba) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12 && ab >= -1.0);
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_schedule_is_monotone_and_bounded(total in 1usize..500, base in 1e-5f64..1e-1) {
        let lrs: Vec<f64> = (0..=total).map(|s| cosine_lr(s, total, base).unwrap()).collect();
        prop_assert_eq!(lrs[0], base);
        prop_assert!(lrs[total].abs() < 1e-15);
        prop_assert!(lrs.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn config_text_round_trips(c_init in 8usize..200, fusion_stage in 3usize..=4, enc in 1usize..80) {
        let mut cfg = ModelConfig::preset("uvg-960x1920").unwrap();
        cfg.c_init = c_init;
        cfg.fusion_stage = fusion_stage;
        cfg.encoder_width = enc;
        prop_assert_eq!(model_from_text(&model_to_text(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn masks_stay_inside_the_frame(h in 16usize..200, w in 16usize..200, scale in 0.05f64..=1.0) {
        let central = make_mask(MaskKind::Central, h, w, scale).unwrap();
        prop_assert_eq!(central.masked_pixels(), (h / 4) * (w / 4));
        if let Ok(m) = make_mask(MaskKind::Disperse, h, w, scale) {
            for r in &m.rects {
                prop_assert!(r.top + r.height <= h && r.left + r.width <= w);
            }
        }
    }

    #[test]
    fn diffs_of_a_static_video_vanish(t in 1usize..6, seed: u64) {
        let video = synth_video(SynthKind::MovingSquare, t, 16, 24, 0, seed).unwrap();
        for variant in [DiffVariant::Backward, DiffVariant::Forward, DiffVariant::Central, DiffVariant::ConcatBf, DiffVariant::ConcatBfSecond] {
            for i in 0..t {
                let d = diff_stream(&video, i, variant).unwrap();
                prop_assert_eq!(d.shape(), &[variant.channels(), 16, 24][..]);
                prop_assert!(d.data().iter().all(|&v| v == 0.0));
            }
        }
    }
}
