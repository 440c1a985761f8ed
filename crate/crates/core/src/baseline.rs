//! Separate source/channel coding: a fixed-rate codec payload protected by
//! CRC-16 and a systematic block code, sent incrementally until the CRC
//! passes or the whole codeword is out.
//!
//! The CRC is CRC-16/CCITT-FALSE: polynomial `0x1021`, initial value
//! `0xFFFF`, bits processed most-significant first, no final XOR. The empty
//! message therefore has CRC `0xFFFF`, and `"123456789"` gives `0x29B1`.
//!
//! Codewords are laid out as all information bits followed by the parity of
//! each block in block order. The first transmission carries the information
//! bits; every retransmission adds the parity of the next group of blocks.
//! Parity not yet received counts as erased: such blocks are taken as received.

use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, Feature, Prediction};
use crate::channel::{bsc_transmit, pack, unpack, BitStream, ChannelModel};
use crate::codec::{Codec, StepOutputs};
use crate::error::{Error, Result};

pub const CRC_POLY: u16 = 0x1021;
pub const CRC_INIT: u16 = 0xFFFF;
pub const CRC_BITS: usize = 16;

pub fn crc16(bits: &BitStream) -> u16 {
    let mut crc = CRC_INIT;
    for b in bits.iter() {
        let top = (crc >> 15) & 1 == 1;
        crc <<= 1;
        if top != b {
            crc ^= CRC_POLY;
        }
    }
    crc
}

/// `payload ‖ crc16(payload)`, CRC most-significant bit first.
pub fn crc_attach(payload: &BitStream) -> BitStream {
    let crc = crc16(payload);
    let mut out = payload.clone();
    for i in (0..CRC_BITS).rev() {
        out.push((crc >> i) & 1 == 1);
    }
    out
}

/// True iff the CRC register is zero after the whole frame.
pub fn crc_check(frame: &BitStream) -> bool {
    frame.len() >= CRC_BITS && crc16(frame) == 0
}

/// Strips the trailing CRC.
pub fn crc_payload(frame: &BitStream) -> BitStream {
    frame.slice(0, frame.len().saturating_sub(CRC_BITS))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FecKind {
    #[serde(rename = "repetition-3")]
    Repetition3,
    #[serde(rename = "hamming-7-4")]
    Hamming74,
}

impl FecKind {
    /// Information bits per block.
    pub fn block_info(self) -> usize {
        match self {
            FecKind::Repetition3 => 1,
            FecKind::Hamming74 => 4,
        }
    }

    /// Parity bits per block.
    pub fn block_parity(self) -> usize {
        match self {
            FecKind::Repetition3 => 2,
            FecKind::Hamming74 => 3,
        }
    }

    pub fn rate(self) -> f64 {
        self.block_info() as f64 / (self.block_info() + self.block_parity()) as f64
    }

    pub fn blocks(self, info_len: usize) -> usize {
        info_len.div_ceil(self.block_info())
    }

    pub fn codeword_len(self, info_len: usize) -> usize {
        info_len + self.blocks(info_len) * self.block_parity()
    }
}

fn hamming_parity(d: [bool; 4]) -> [bool; 3] {
    [d[0] ^ d[1] ^ d[3], d[0] ^ d[2] ^ d[3], d[1] ^ d[2] ^ d[3]]
}

/// Syndrome of each single-bit error position: data bits 0..4, then parity 0..3.
const HAMMING_SYNDROMES: [[bool; 3]; 7] = [
    [true, true, false],
    [true, false, true],
    [false, true, true],
    [true, true, true],
    [true, false, false],
    [false, true, false],
    [false, false, true],
];

pub fn fec_encode(info: &BitStream, kind: FecKind) -> BitStream {
    let mut out = info.clone();
    let k = kind.block_info();
    for b in 0..kind.blocks(info.len()) {
        let bit = |j: usize| b * k + j < info.len() && info.get(b * k + j);
        match kind {
            FecKind::Repetition3 => {
                out.push(bit(0));
                out.push(bit(0));
            }
            FecKind::Hamming74 => {
                for p in hamming_parity([bit(0), bit(1), bit(2), bit(3)]) {
                    out.push(p);
                }
            }
        }
    }
    out
}

/// Decodes a codeword prefix of `received.len()` bits (at least `info_len`).
/// Blocks whose parity is missing are passed through uncorrected.
pub fn fec_decode_partial(received: &BitStream, info_len: usize, kind: FecKind) -> Result<BitStream> {
    if received.len() < info_len || received.len() > kind.codeword_len(info_len) {
        return Err(Error::OutOfRange {
            what: "received codeword length",
            value: received.len() as f64,
        });
    }
    let mut out = received.slice(0, info_len);
    let k = kind.block_info();
    let m = kind.block_parity();
    let complete = (received.len() - info_len) / m;
    for b in 0..complete {
        let parity: Vec<bool> = (0..m).map(|j| received.get(info_len + b * m + j)).collect();
        match kind {
            FecKind::Repetition3 => {
                let votes = usize::from(out.get(b)) + usize::from(parity[0]) + usize::from(parity[1]);
                out.set(b, votes >= 2);
            }
            FecKind::Hamming74 => {
                let bit = |j: usize| b * k + j < info_len && out.get(b * k + j);
                let d = [bit(0), bit(1), bit(2), bit(3)];
                let expect = hamming_parity(d);
                let syndrome = [expect[0] ^ parity[0], expect[1] ^ parity[1], expect[2] ^ parity[2]];
                if let Some(pos) = HAMMING_SYNDROMES.iter().position(|s| *s == syndrome) {
                    if pos < 4 && b * k + pos < info_len {
                        out.set(b * k + pos, !d[pos]);
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn fec_decode(codeword: &BitStream, info_len: usize, kind: FecKind) -> Result<BitStream> {
    if codeword.len() != kind.codeword_len(info_len) {
        return Err(Error::shape("fec_decode", &[codeword.len()], &[kind.codeword_len(info_len)]));
    }
    fec_decode_partial(codeword, info_len, kind)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Time steps of the fixed-rate codec.
    pub steps: usize,
    pub fec: FecKind,
    /// Parity is split into this many retransmissions.
    pub retransmissions: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            steps: 3,
            fec: FecKind::Hamming74,
            retransmissions: 4,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.retransmissions == 0 {
            return Err(Error::Config("baseline steps and retransmissions must be positive".into()));
        }
        Ok(())
    }

    /// Cumulative codeword bits after each transmission round.
    pub fn schedule(&self, info_len: usize) -> Vec<usize> {
        let blocks = self.fec.blocks(info_len);
        let per = blocks.div_ceil(self.retransmissions);
        let mut out = vec![info_len];
        let mut sent_blocks = 0;
        while sent_blocks < blocks {
            sent_blocks = (sent_blocks + per).min(blocks);
            out.push(info_len + sent_blocks * self.fec.block_parity());
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineRound {
    pub bits: usize,
    pub crc_ok: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineSession {
    pub rounds: Vec<BaselineRound>,
    pub total_bits: usize,
    pub success: bool,
    pub prediction: Prediction,
}

impl BaselineSession {
    /// Same layout as the HARQ transcript; the score column holds the CRC flag.
    pub fn to_log(&self) -> String {
        let mut out = String::from("step\tbits\tscore\tdecision\n");
        let last = self.rounds.len() - 1;
        for (i, r) in self.rounds.iter().enumerate() {
            let decision = if r.crc_ok {
                "ACK"
            } else if i == last {
                "max-steps"
            } else {
                "NACK"
            };
            out.push_str(&format!("{}\t{}\t{}\t{}\n", i, r.bits, u8::from(r.crc_ok), decision));
        }
        out
    }
}

/// One session: the codec runs `cfg.steps` noiseless steps at the edge, the
/// payload crosses the channel under FEC and CRC, and whatever decodes last is
/// reconstructed, pass or fail. Round `r` uses `channel.substream(session, r)`.
pub fn run_baseline_session(
    f: &Feature,
    backbone: &Backbone,
    codec: &Codec,
    channel: &ChannelModel,
    session: u64,
    cfg: &BaselineConfig,
) -> Result<BaselineSession> {
    cfg.validate()?;
    if cfg.steps < codec.cfg.t0 || cfg.steps > codec.cfg.t_max {
        return Err(Error::Config(format!(
            "baseline runs {} steps but the codec supports {}..={}",
            cfg.steps, codec.cfg.t0, codec.cfg.t_max
        )));
    }
    let mut enc = codec.start_encoder(f)?;
    let mut payload = BitStream::new();
    for _ in 0..cfg.steps {
        payload.extend(&pack(&codec.encode_step(&mut enc)?));
    }
    let frame = crc_attach(&payload);
    let codeword = fec_encode(&frame, cfg.fec);

    let mut received = BitStream::new();
    let mut rounds = Vec::new();
    let mut decoded = BitStream::new();
    for (r, end) in cfg.schedule(frame.len()).into_iter().enumerate() {
        let chunk = codeword.slice(received.len(), end);
        let mut rng = channel.substream(session, r as u64);
        received.extend(&bsc_transmit(&chunk, channel, &mut rng));
        decoded = fec_decode_partial(&received, frame.len(), cfg.fec)?;
        let crc_ok = crc_check(&decoded);
        rounds.push(BaselineRound { bits: end, crc_ok });
        if crc_ok {
            break;
        }
    }
    let success = rounds.last().is_some_and(|r| r.crc_ok);
    let payload = crc_payload(&decoded);
    let step_bits = codec.step_bits();
    let mut receiver = codec.start_reconstructor()?;
    let mut outputs = StepOutputs::default();
    for s in 0..cfg.steps {
        let bits = unpack(&payload.slice(s * step_bits, (s + 1) * step_bits), &codec.payload_shape())?;
        let (fs, fm) = codec.reconstruct_step(&bits, &mut receiver)?;
        outputs.push(fs, fm);
    }
    let prediction = backbone.execute_task(&codec.convert(&outputs, cfg.steps)?)?;
    Ok(BaselineSession {
        total_bits: rounds.last().map_or(0, |r| r.bits),
        rounds,
        success,
        prediction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes_to_bits(bytes: &[u8]) -> BitStream {
        BitStream::from_bits(bytes.iter().flat_map(|&b| (0..8).rev().map(move |i| (b >> i) & 1 == 1)))
    }

    #[test]
    fn crc_reference_vectors() {
        assert_eq!(crc16(&bytes_to_bits(b"123456789")), 0x29B1);
        assert_eq!(crc16(&BitStream::new()), 0xFFFF);
    }

    #[test]
    fn crc_round_trip() {
        let p = bytes_to_bits(b"spikes");
        let f = crc_attach(&p);
        assert!(crc_check(&f));
        assert_eq!(crc_payload(&f), p);
        assert!(!crc_check(&BitStream::zeros(8)));
    }

    #[test]
    fn hamming_single_errors() {
        let info = BitStream::from_bits([true, false, true, true]);
        let cw = fec_encode(&info, FecKind::Hamming74);
        assert_eq!(cw.len(), 7);
        for i in 0..7 {
            let mut bad = cw.clone();
            bad.set(i, !bad.get(i));
            assert_eq!(fec_decode(&bad, 4, FecKind::Hamming74).unwrap(), info, "position {i}");
        }
    }

    #[test]
    fn repetition_majority() {
        let info = BitStream::from_bits([true, false]);
        let cw = fec_encode(&info, FecKind::Repetition3);
        assert_eq!(cw.len(), 6);
        let mut bad = cw.clone();
        bad.set(0, false);
        assert_eq!(fec_decode(&bad, 2, FecKind::Repetition3).unwrap(), info);
    }

    #[test]
    fn partial_decode_passes_uncovered_blocks() {
        let info = BitStream::from_bits([true, false, true, true, false, false, true, false]);
        let cw = fec_encode(&info, FecKind::Hamming74);
        let mut rx = cw.slice(0, 8 + 3);
        rx.set(0, false);
        rx.set(5, true);
        let out = fec_decode_partial(&rx, 8, FecKind::Hamming74).unwrap();
        assert!(out.get(0));
        assert!(out.get(5));
    }

    #[test]
    fn schedule_ends_at_full_codeword() {
        let cfg = BaselineConfig::default();
        assert_eq!(cfg.schedule(208), vec![208, 247, 286, 325, 364]);
        let rep = BaselineConfig {
            fec: FecKind::Repetition3,
            ..cfg
        };
        assert_eq!(*rep.schedule(208).last().unwrap(), 624);
    }

    #[test]
    fn rates() {
        assert!((FecKind::Hamming74.rate() - 4.0 / 7.0).abs() < 1e-15);
        assert!((FecKind::Repetition3.rate() - 1.0 / 3.0).abs() < 1e-15);
    }
}
