mod common;

use candle_core::{DType, Device, Tensor};
use candle_nn::VarMap;
use common::suites::{active_encoder, algorithm1_check, random_rgb, zero_residual_encoder};
use common::{max_abs_diff, rng, to_vec};
use s2r_core::config::CodecConfig;
use s2r_core::nn;
use s2r_core::watermark::{decode, encode, message_signs, scaled_residual, DecoderNet};
use s2r_core::{ImageTensor, WatermarkMessage};

fn cover(seed: u64) -> ImageTensor {
    ImageTensor::from_u8(random_rgb(32, 32, seed).as_raw(), 32, 32, 3).unwrap()
}

#[test]
fn untrained_encoder_leaves_cover_unchanged() {
    let enc = zero_residual_encoder((32, 32), 16, 1);
    let c = cover(2);
    let marked = encode(&c, &WatermarkMessage::random(16, &mut rng(3)), &enc).unwrap();
    let diff = c.data().iter().zip(marked.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    assert!(diff <= 1e-6);
}

#[test]
fn encoder_output_is_clamped_for_extreme_covers() {
    let enc = active_encoder((32, 32), 16, 4);
    let msg = WatermarkMessage::random(16, &mut rng(5));
    for v in [-1.0f32, 1.0] {
        let marked = encode(&ImageTensor::filled(32, 32, 3, v).unwrap(), &msg, &enc).unwrap();
        assert!(marked.data().iter().all(|x| (-1.0..=1.0).contains(x)));
    }
}

#[test]
fn encoder_rejects_wrong_message_length() {
    let enc = zero_residual_encoder((32, 32), 16, 6);
    assert!(encode(&cover(7), &WatermarkMessage::zeros(8), &enc).is_err());
}

#[test]
fn decoder_scores_have_message_length() {
    for len in [1usize, 8, 16, 30] {
        let varmap = VarMap::new();
        let cfg = CodecConfig { channels: 8, encoder_blocks: 1, decoder_layers: 2 };
        let dec = DecoderNet::new(&cfg, len, (32, 32), nn::builder(&varmap, DType::F32, &Device::Cpu)).unwrap();
        nn::seeded_init(&varmap, &mut rng(len as u64), nn::default_init_rule).unwrap();
        for side in [16usize, 32, 40] {
            let img = ImageTensor::from_u8(random_rgb(side as u32, side as u32, 8).as_raw(), side, side, 3).unwrap();
            let (scores, msg) = decode(&img, &dec).unwrap();
            assert_eq!(scores.len(), len);
            assert_eq!(msg.len(), len);
            assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
        }
    }
}

#[test]
fn resolution_scaling_is_exact_at_native_size_and_neutral_without_residual() {
    let (native_diff, worst_level) = algorithm1_check();
    assert_eq!(native_diff, 0);
    assert!(worst_level <= 1, "zero residual moved a pixel by {worst_level} levels");
}

#[test]
fn scaled_residual_has_input_resolution() {
    let enc = active_encoder((32, 32), 16, 9);
    let msg = WatermarkMessage::random(16, &mut rng(10));
    let r = scaled_residual(&random_rgb(48, 40, 11), &msg, &enc).unwrap();
    assert_eq!(r.dims(), &[1, 3, 40, 48]);
    let zero = scaled_residual(&random_rgb(48, 40, 11), &msg, &zero_residual_encoder((32, 32), 16, 12)).unwrap();
    assert!(to_vec(&zero).iter().all(|v| v.abs() < 1e-6));
}

#[test]
fn message_signs_map_bits_to_plus_minus_one() {
    let m = WatermarkMessage::new(vec![1, 0, 0, 1]).unwrap();
    let s = message_signs(&[m], &Device::Cpu, DType::F64).unwrap();
    let expected = Tensor::new(&[[1.0f64, -1.0, -1.0, 1.0]], &Device::Cpu).unwrap();
    assert_eq!(max_abs_diff(&s, &expected), 0.0);
}
