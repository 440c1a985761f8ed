//! Binary symmetric channel, bit packing and replayable noise streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::neuron::SpikeTensor;

/// Words reserved per `(session, round)` substream.
const ROUND_STRIDE: u128 = 1 << 40;

/// BSC with crossover probability `ber`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelModel {
    ber: f64,
    seed: u64,
}

impl ChannelModel {
    pub fn new(ber: f64, seed: u64) -> Result<Self> {
        if !(0.0..=0.5).contains(&ber) {
            return Err(Error::OutOfRange {
                what: "bit error rate",
                value: ber,
            });
        }
        Ok(Self { ber, seed })
    }

    pub fn noiseless() -> Self {
        Self { ber: 0.0, seed: 0 }
    }

    pub fn ber(&self) -> f64 {
        self.ber
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent, replayable noise stream for one round of one session.
    pub fn substream(&self, session: u64, round: u64) -> ChaCha8Rng {
        substream(self.seed, session, round)
    }
}

/// Counter-based substream: the ChaCha stream id selects the session and the
/// word position selects the round.
pub fn substream(seed: u64, session: u64, round: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(session);
    rng.set_word_pos(round as u128 * ROUND_STRIDE);
    rng
}

/// Anything carrying a flat sequence of bits.
pub trait BitCarrier: Clone {
    fn bit_len(&self) -> usize;
    fn bit(&self, i: usize) -> bool;
    fn flip(&mut self, i: usize);
}

impl BitCarrier for SpikeTensor {
    fn bit_len(&self) -> usize {
        self.len()
    }
    fn bit(&self, i: usize) -> bool {
        self.bits()[i] == 1
    }
    fn flip(&mut self, i: usize) {
        self.bits_mut()[i] ^= 1;
    }
}

/// Flips each bit independently with probability `ch.ber()`.
pub fn bsc_transmit<T: BitCarrier, R: Rng + ?Sized>(x: &T, ch: &ChannelModel, rng: &mut R) -> T {
    let mut out = x.clone();
    if ch.ber == 0.0 {
        return out;
    }
    for i in 0..x.bit_len() {
        if rng.random::<f64>() < ch.ber {
            out.flip(i);
        }
    }
    out
}

/// Flip mask drawn with the same per-bit rule as [`bsc_transmit`].
pub fn flip_mask<R: Rng + ?Sized>(len: usize, ber: f64, rng: &mut R) -> Vec<bool> {
    if ber == 0.0 {
        return vec![false; len];
    }
    (0..len).map(|_| rng.random::<f64>() < ber).collect()
}

/// Supplies channel flip masks for a batched transmission.
pub trait FlipSource {
    /// Mask for time step `step` (1-based; 0 is the prior) over `len`
    /// batch-first bits.
    fn mask(&mut self, step: usize, len: usize) -> Vec<bool>;
}

/// Every step draws from one shared generator.
pub struct SharedFlips<'a, R: Rng + ?Sized> {
    pub rng: &'a mut R,
    pub ber: f64,
}

impl<R: Rng + ?Sized> FlipSource for SharedFlips<'_, R> {
    fn mask(&mut self, _step: usize, len: usize) -> Vec<bool> {
        flip_mask(len, self.ber, self.rng)
    }
}

/// Row `i` of the batch uses substream `(sessions[i], step)`, so a batched run
/// sees exactly the flips of the corresponding single sessions.
pub struct SessionFlips {
    pub channel: ChannelModel,
    pub sessions: Vec<u64>,
}

impl FlipSource for SessionFlips {
    fn mask(&mut self, step: usize, len: usize) -> Vec<bool> {
        let n = self.sessions.len().max(1);
        let per = len / n;
        debug_assert_eq!(per * n, len);
        let mut out = Vec::with_capacity(len);
        for &session in &self.sessions {
            let mut rng = self.channel.substream(session, step as u64);
            out.extend(flip_mask(per, self.channel.ber, &mut rng));
        }
        out
    }
}

/// Packed bit sequence; bit `i` is bit `i % 64` of word `i / 64`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct BitStream {
    len: usize,
    words: Vec<u64>,
}

impl BitStream {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut s = Self::new();
        for b in bits {
            s.push(b);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn push(&mut self, bit: bool) {
        if self.len.is_multiple_of(64) {
            self.words.push(0);
        }
        if bit {
            self.words[self.len / 64] |= 1 << (self.len % 64);
        }
        self.len += 1;
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, bit: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let mask = 1u64 << (i % 64);
        if bit {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| self.get(i))
    }

    pub fn extend(&mut self, other: &BitStream) {
        for b in other.iter() {
            self.push(b);
        }
    }

    /// Bits `start..end` as a new stream.
    pub fn slice(&self, start: usize, end: usize) -> BitStream {
        BitStream::from_bits((start..end).map(|i| self.get(i)))
    }

    pub fn complement(&self) -> BitStream {
        BitStream::from_bits(self.iter().map(|b| !b))
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }
}

impl BitCarrier for BitStream {
    fn bit_len(&self) -> usize {
        self.len
    }
    fn bit(&self, i: usize) -> bool {
        self.get(i)
    }
    fn flip(&mut self, i: usize) {
        self.words[i / 64] ^= 1 << (i % 64);
    }
}

/// Packs spikes in row-major order.
pub fn pack(s: &SpikeTensor) -> BitStream {
    BitStream::from_bits(s.bits().iter().map(|&b| b == 1))
}

/// Unpacks a stream into a spike tensor of the given shape.
pub fn unpack(stream: &BitStream, shape: &[usize]) -> Result<SpikeTensor> {
    let n: usize = shape.iter().product();
    if n != stream.len() {
        return Err(Error::shape("unpack", shape, &[stream.len()]));
    }
    SpikeTensor::new(shape.to_vec(), stream.iter().map(u8::from).collect())
}

/// Hamming distance divided by length.
pub fn empirical_ber(a: &BitStream, b: &BitStream) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("empirical_ber", &[a.len()], &[b.len()]));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let diff: usize = a
        .words()
        .iter()
        .zip(b.words())
        .map(|(x, y)| (x ^ y).count_ones() as usize)
        .sum();
    Ok(diff as f64 / a.len() as f64)
}
