mod common;

use mambaic::codec::{
    compress, decode_image, decode_latents, rc_decode, rc_encode, residual_of, symbol_of, symbol_probabilities,
    CodedImage, Header, ScaleLattice, SnappedMean, ALPHABET, ESCAPE, R_MAX,
};
use mambaic::error::{BitstreamError, Error};
use mambaic::pipeline::synthetic_image;
use mambaic::transform::{init_weights, ModelConfig};
use proptest::prelude::*;

fn coded(header: Header, z: Vec<u8>, ys: Vec<Vec<u8>>) -> CodedImage {
    CodedImage {
        header,
        z_stream: z,
        y_streams: ys,
    }
}

fn header_strategy() -> impl Strategy<Value = Header> {
    (1u32..5000, 1u32..5000, 0u8..5, any::<u64>()).prop_map(|(width, height, lambda_index, weight_checksum)| Header {
        version: 1,
        width,
        height,
        lambda_index,
        weight_checksum,
    })
}

fn streams() -> impl Strategy<Value = (Vec<u8>, Vec<Vec<u8>>)> {
    (
        prop::collection::vec(any::<u8>(), 0..64),
        prop::collection::vec(prop::collection::vec(any::<u8>(), 0..64), 0..6),
    )
}

proptest! {
    #[test]
    fn container_round_trips(header in header_strategy(), (z, ys) in streams()) {
        let c = coded(header, z, ys);
        let bytes = c.to_bytes();
        prop_assert_eq!(bytes.len(), c.serialized_len());
        prop_assert_eq!(CodedImage::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn any_single_byte_flip_is_rejected(header in header_strategy(), (z, ys) in streams(), pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let mut bytes = coded(header, z, ys).to_bytes();
        let i = pos.index(bytes.len());
        bytes[i] ^= 1 << bit;
        prop_assert!(CodedImage::from_bytes(&bytes).is_err());
    }

    #[test]
    fn every_proper_prefix_is_rejected(header in header_strategy(), (z, ys) in streams(), cut in any::<prop::sample::Index>()) {
        let bytes = coded(header, z, ys).to_bytes();
        let n = cut.index(bytes.len());
        prop_assert!(CodedImage::from_bytes(&bytes[..n]).is_err());
    }

    #[test]
    fn range_coder_round_trips_within_rate_bound(
        picks in prop::collection::vec((0usize..256, 0usize..64, 0usize..ALPHABET), 0..400)
    ) {
        let lattice = ScaleLattice::global();
        let tables: Vec<_> = picks.iter().map(|&(f, s, _)| lattice.table(f, s)).collect();
        let symbols: Vec<usize> = picks.iter().map(|p| p.2).collect();
        let bytes = rc_encode(&symbols, &tables);
        prop_assert_eq!(rc_decode(&bytes, &tables).unwrap(), symbols.clone());
        let ideal: f64 = symbols.iter().zip(&tables).map(|(&s, t)| -t.probability(s).log2()).sum();
        prop_assert!(8.0 * bytes.len() as f64 <= ideal * 1.01 + 80.0);
    }

    #[test]
    fn symbol_mapping_is_a_bijection_on_the_inner_range(r in -R_MAX..=R_MAX) {
        let s = symbol_of(r);
        prop_assert!(s < ESCAPE);
        prop_assert_eq!(residual_of(s), r);
    }

    #[test]
    fn out_of_range_residuals_escape(r in prop_oneof![i64::MIN / 2..-R_MAX, R_MAX + 1..i64::MAX / 2]) {
        prop_assert_eq!(symbol_of(r), ESCAPE);
    }

    #[test]
    fn probabilities_mirror_under_mean_negation(f in 1usize..256, s in 0usize..64) {
        let sigma = ScaleLattice::global().scales()[s];
        let p = symbol_probabilities(f as f64 / 256.0, sigma);
        let q = symbol_probabilities(1.0 - f as f64 / 256.0, sigma);
        for r in -R_MAX + 2..R_MAX {
            let a = p[symbol_of(r)];
            let b = q[symbol_of(1 - r)];
            prop_assert!((a - b).abs() <= 1e-12, "r={} {} vs {}", r, a, b);
        }
    }

    #[test]
    fn snapped_mean_splits_into_floor_and_fraction(mu in -1e6f64..1e6) {
        let m = SnappedMean::new(mu);
        prop_assert!((m.value() - mu).abs() <= 0.5 / 256.0 + 1e-9);
        prop_assert_eq!(m.floor() as f64 + m.frac_index() as f64 / 256.0, m.value());
        prop_assert!(m.frac_index() < 256);
    }

    #[test]
    fn sigma_snaps_to_nearest_level_in_log_domain(sigma in 0.11f64..16.0) {
        let lattice = ScaleLattice::global();
        let i = lattice.snap_sigma(sigma);
        let d = (lattice.scales()[i].ln() - sigma.ln()).abs();
        for &s in lattice.scales() {
            prop_assert!(d <= (s.ln() - sigma.ln()).abs() + 1e-12);
        }
    }
}

#[test]
fn wrong_weights_are_reported_before_decoding() {
    let a = init_weights(&ModelConfig::small(), 1).unwrap();
    let b = init_weights(&ModelConfig::small(), 2).unwrap();
    let enc = compress(&synthetic_image(64, 64, 3), &a).unwrap();
    let mut c = enc.coded.clone();
    for s in &mut c.y_streams {
        s.clear();
    }
    match decode_image(&c, &b) {
        Err(Error::Bitstream(BitstreamError::WeightMismatch { expected, loaded })) => {
            assert_eq!(expected, a.checksum());
            assert_eq!(loaded, b.checksum());
        }
        other => panic!("expected a weight mismatch, got {other:?}"),
    }
}

#[test]
fn chunks_decode_without_later_substreams() {
    let w = init_weights(&ModelConfig::small(), 4).unwrap();
    let enc = compress(&synthetic_image(70, 90, 5), &w).unwrap();
    let cw = w.config().chunk_width();
    for k in 1..=w.config().k {
        let mut c = enc.coded.clone();
        c.y_streams.truncate(2 * k);
        let (y, z) = decode_latents(&c, &w, k).unwrap();
        assert_eq!(z, enc.z_hat);
        assert_eq!(y.narrow_channels(0, k * cw).unwrap(), enc.y_hat.narrow_channels(0, k * cw).unwrap());
    }
}

#[test]
fn corrupted_substreams_never_panic() {
    let w = init_weights(&ModelConfig::small(), 6).unwrap();
    let enc = compress(&synthetic_image(64, 64, 7), &w).unwrap();
    let mut rng = common::rng(8);
    for i in 0..enc.coded.y_streams.len() {
        let mut c = enc.coded.clone();
        if let Some(b) = c.y_streams[i].first_mut() {
            *b ^= 0x5a;
        }
        c.y_streams[i].push(rand::Rng::gen(&mut rng));
        let _ = decode_image(&c, &w);
    }
}

#[test]
fn decoded_image_keeps_the_original_extent() {
    let w = init_weights(&ModelConfig::small(), 9).unwrap();
    let enc = compress(&synthetic_image(65, 127, 1), &w).unwrap();
    let dec = decode_image(&enc.coded, &w).unwrap();
    assert_eq!(dec.x_hat.shape(), [1, 3, 127, 65]);
    assert_eq!(enc.y_hat.shape()[2..], [8, 8]);
}
