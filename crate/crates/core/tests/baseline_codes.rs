mod common;

use proptest::prelude::*;
use rand::Rng;

use spiking_harq::baseline::{
    crc16, crc_attach, crc_check, crc_payload, fec_decode, fec_decode_partial, fec_encode, BaselineConfig, FecKind,
};
use spiking_harq::channel::{bsc_transmit, empirical_ber, BitStream, ChannelModel};

use common::crc16_table;

fn bits_of(bytes: &[u8]) -> BitStream {
    BitStream::from_bits(bytes.iter().flat_map(|&c| (0..8).rev().map(move |i| c >> i & 1 == 1)))
}

fn random_stream(seed: u64, n: usize) -> BitStream {
    let mut rng = ChannelModel::new(0.0, seed).unwrap().substream(0, 0);
    BitStream::from_bits((0..n).map(|_| rng.random::<bool>()))
}

#[test]
fn crc_check_values() {
    assert_eq!(crc16(&bits_of(b"123456789")), 0x29B1);
    assert_eq!(crc16(&BitStream::new()), 0xFFFF);
}

#[test]
fn every_single_flip_is_detected() {
    let frame = crc_attach(&random_stream(3, 512));
    assert!(crc_check(&frame));
    for i in 0..frame.len() {
        let mut bad = frame.clone();
        bad.set(i, !bad.get(i));
        assert!(!crc_check(&bad), "flip at {i} undetected");
    }
    assert_eq!(crc_payload(&frame), random_stream(3, 512));
}

#[test]
fn hamming_corrects_every_single_error_in_every_word() {
    for word in 0u8..16 {
        let info = BitStream::from_bits((0..4).map(|i| word >> (3 - i) & 1 == 1));
        let code = fec_encode(&info, FecKind::Hamming74);
        assert_eq!(code.len(), 7);
        assert_eq!(fec_decode(&code, 4, FecKind::Hamming74).unwrap(), info);
        for pos in 0..7 {
            let mut bad = code.clone();
            bad.set(pos, !bad.get(pos));
            assert_eq!(fec_decode(&bad, 4, FecKind::Hamming74).unwrap(), info, "word {word} pos {pos}");
        }
    }
}

#[test]
fn repetition_residual_error_rate() {
    // Majority of three fails with probability 3p²(1−p) + p³ = 0.216 at p = 0.3.
    let n = 1_000_000;
    let info = random_stream(4, n);
    let ch = ChannelModel::new(0.3, 8).unwrap();
    let got = bsc_transmit(&fec_encode(&info, FecKind::Repetition3), &ch, &mut ch.substream(0, 1));
    let residual = empirical_ber(&info, &fec_decode(&got, n, FecKind::Repetition3).unwrap()).unwrap();
    let p = 0.216;
    assert!((residual - p).abs() <= 3.0 * (p * (1.0 - p) / n as f64).sqrt(), "{residual}");
}

#[test]
fn partial_codewords_decode_what_they_can() {
    let info = random_stream(5, 40);
    let code = fec_encode(&info, FecKind::Hamming74);
    let mut bad = code.clone();
    bad.set(0, !bad.get(0));
    assert_eq!(fec_decode_partial(&bad.slice(0, 40), 40, FecKind::Hamming74).unwrap(), bad.slice(0, 40));
    assert_eq!(fec_decode_partial(&bad.slice(0, 43), 40, FecKind::Hamming74).unwrap(), info);
    assert!(fec_decode_partial(&bad.slice(0, 39), 40, FecKind::Hamming74).is_err());
}

#[test]
fn schedule_splits_parity_into_rounds() {
    let cfg = BaselineConfig::default();
    assert_eq!(cfg.schedule(208), vec![208, 247, 286, 325, 364]);
    let rep = BaselineConfig {
        fec: FecKind::Repetition3,
        ..cfg
    };
    assert_eq!(*rep.schedule(208).last().unwrap(), 624);
}

proptest! {
    #[test]
    fn crc_matches_table_oracle(bits in prop::collection::vec(any::<bool>(), 0..300)) {
        prop_assert_eq!(crc16(&BitStream::from_bits(bits.iter().copied())), crc16_table(&bits));
    }

    #[test]
    fn fec_round_trips_clean(bits in prop::collection::vec(any::<bool>(), 1..200), hamming in any::<bool>()) {
        let kind = if hamming { FecKind::Hamming74 } else { FecKind::Repetition3 };
        let info = BitStream::from_bits(bits.iter().copied());
        let code = fec_encode(&info, kind);
        prop_assert_eq!(code.len(), kind.codeword_len(info.len()));
        prop_assert_eq!(code.slice(0, info.len()), info.clone());
        prop_assert_eq!(fec_decode(&code, info.len(), kind).unwrap(), info);
    }
}
