//! Bernoulli rate coding: every pixel fires with probability equal to its
//! intensity at every timestep.
//!
//! Randomness comes from a ChaCha8 block cipher keyed by the seed, with the
//! sample index as stream id and `t * channels + i` as the word position, so
//! the spike at `(seed, sample, t, i)` never depends on which other samples
//! were encoded alongside it.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ImageSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub timesteps: usize,
    pub seed: u64,
}

impl EncodingConfig {
    pub fn new(timesteps: usize, seed: u64) -> Result<Self> {
        if timesteps == 0 {
            return Err(Error::invalid("timesteps must be at least 1"));
        }
        Ok(Self { timesteps, seed })
    }
}

/// Timestep-major binary spike matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpikeTrain {
    bits: Vec<u8>,
    timesteps: usize,
    channels: usize,
}

impl SpikeTrain {
    pub fn zeros(timesteps: usize, channels: usize) -> Self {
        Self {
            bits: vec![0; timesteps * channels],
            timesteps,
            channels,
        }
    }

    pub fn from_bits(bits: Vec<u8>, timesteps: usize, channels: usize) -> Result<Self> {
        if bits.len() != timesteps * channels {
            return Err(Error::invalid(format!(
                "spike matrix has {} entries, expected {timesteps}x{channels}",
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::invalid("spike entries must be 0 or 1"));
        }
        Ok(Self {
            bits,
            timesteps,
            channels,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn get(&self, t: usize, i: usize) -> bool {
        self.bits[t * self.channels + i] != 0
    }

    pub fn set(&mut self, t: usize, i: usize, spike: bool) {
        self.bits[t * self.channels + i] = spike as u8;
    }

    /// The 0/1 row for timestep `t`.
    pub fn row(&self, t: usize) -> &[u8] {
        &self.bits[t * self.channels..(t + 1) * self.channels]
    }

    /// Indices of channels that fire at timestep `t`, ascending.
    pub fn active(&self, t: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(t)
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| (b != 0).then_some(i))
    }

    pub fn channel_count(&self, i: usize) -> usize {
        (0..self.timesteps).filter(|&t| self.get(t, i)).count()
    }

    pub fn total_spikes(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    /// Testbench dump: one line per timestep, channel 0 leftmost.
    pub fn to_dump(&self) -> String {
        let mut out = String::with_capacity(self.timesteps * (self.channels + 1));
        for t in 0..self.timesteps {
            out.extend(self.row(t).iter().map(|&b| if b != 0 { '1' } else { '0' }));
            out.push('\n');
        }
        out
    }

    pub fn from_dump(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
        let channels = lines.first().map_or(0, |l| l.len());
        let mut bits = Vec::with_capacity(lines.len() * channels);
        for (t, line) in lines.iter().enumerate() {
            if line.len() != channels {
                return Err(Error::invalid(format!("dump line {t} has {} channels, expected {channels}", line.len())));
            }
            for c in line.chars() {
                bits.push(match c {
                    '0' => 0,
                    '1' => 1,
                    other => return Err(Error::invalid(format!("unexpected character {other:?} in spike dump"))),
                });
            }
        }
        Self::from_bits(bits, lines.len(), channels)
    }
}

fn draw_unit(rng: &mut ChaCha8Rng) -> f32 {
    // 24 random mantissa bits, uniform on [0, 1)
    (rng.next_u32() >> 8) as f32 * (1.0 / (1u32 << 24) as f32)
}

/// Encodes `sample` as the sample with index `index` under `cfg`.
pub fn encode_indexed(sample: &ImageSample, index: u64, cfg: &EncodingConfig) -> SpikeTrain {
    encode_pixels(&sample.pixels, index, cfg)
}

pub fn encode_pixels(pixels: &[f32], index: u64, cfg: &EncodingConfig) -> SpikeTrain {
    let channels = pixels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    rng.set_word_pos(0);
    let mut bits = Vec::with_capacity(cfg.timesteps * channels);
    for _ in 0..cfg.timesteps {
        for &p in pixels {
            bits.push((draw_unit(&mut rng) < p) as u8);
        }
    }
    SpikeTrain {
        bits,
        timesteps: cfg.timesteps,
        channels,
    }
}

/// Encodes a single sample as sample index 0.
pub fn encode(sample: &ImageSample, cfg: &EncodingConfig) -> SpikeTrain {
    encode_indexed(sample, 0, cfg)
}

/// Element `i` is `encode_indexed(&samples[i], i, cfg)`.
pub fn encode_batch(samples: &[ImageSample], cfg: &EncodingConfig) -> Vec<SpikeTrain> {
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| encode_indexed(s, i as u64, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::IMAGE_PIXELS;

    fn uniform(p: f32) -> ImageSample {
        ImageSample::new(vec![p; IMAGE_PIXELS], 3).unwrap()
    }

    #[test]
    fn extreme_intensities() {
        let cfg = EncodingConfig::new(10, 42).unwrap();
        let zero = encode(&uniform(0.0), &cfg);
        assert_eq!(zero.total_spikes(), 0);
        let one = encode(&uniform(1.0), &cfg);
        assert!((0..IMAGE_PIXELS).all(|i| one.channel_count(i) == 10));
    }

    #[test]
    fn half_intensity_mean_count() {
        // 10,000 channels at p = 0.5 over 10 steps; binomial mean 5, sd of the mean 0.0158
        let cfg = EncodingConfig::new(10, 7).unwrap();
        let pixels = vec![0.5f32; 10_000];
        let train = encode_pixels(&pixels, 0, &cfg);
        let mean = train.total_spikes() as f64 / 10_000.0;
        assert!((mean - 5.0).abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn batch_matches_single_and_is_deterministic() {
        let cfg = EncodingConfig::new(5, 9).unwrap();
        assert!(encode_batch(&[], &cfg).is_empty());
        let s = uniform(0.3);
        assert_eq!(encode_batch(&[s.clone()], &cfg), vec![encode(&s, &cfg)]);
        let batch = vec![uniform(0.2), uniform(0.6), uniform(0.9)];
        let a = encode_batch(&batch, &cfg);
        let b = encode_batch(&batch, &cfg);
        assert_eq!(a, b);
        // independent of batch composition
        assert_eq!(a[2], encode_indexed(&batch[2], 2, &cfg));
        assert_ne!(a[0], encode_indexed(&batch[0], 1, &cfg));
    }

    #[test]
    fn dump_round_trip() {
        let cfg = EncodingConfig::new(3, 1).unwrap();
        let train = encode_pixels(&[0.5, 1.0, 0.0, 0.5], 0, &cfg);
        let dump = train.to_dump();
        assert_eq!(dump.lines().count(), 3);
        assert!(dump.lines().all(|l| l.len() == 4 && &l[1..3] == "10"));
        assert_eq!(SpikeTrain::from_dump(&dump).unwrap(), train);
        assert!(SpikeTrain::from_dump("01\n0x\n").is_err());
    }

    #[test]
    fn zero_timesteps_rejected() {
        assert!(EncodingConfig::new(0, 1).is_err());
    }
}
