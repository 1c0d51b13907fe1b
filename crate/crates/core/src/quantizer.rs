//! Post-training quantization of a float model at a (WB, MB, FPd) point.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSplit;
use crate::encoder::{encode_indexed, EncodingConfig};
use crate::error::{Error, Result};
use crate::fixedpoint::FixedPointFormat;
use crate::network::{infer, Decay, NetworkModel, NeuronKind, QuantizedLayer, QuantizedModel, SpikingModel};

/// Weight bit-width, membrane bit-width and the fractional bit count shared
/// by both lanes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QuantConfig {
    pub weight_bits: u32,
    pub membrane_bits: u32,
    pub frac_bits: u32,
}

impl QuantConfig {
    pub fn new(weight_bits: u32, membrane_bits: u32, frac_bits: u32) -> Result<Self> {
        let q = Self {
            weight_bits,
            membrane_bits,
            frac_bits,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, bits) in [("weight", self.weight_bits), ("membrane", self.membrane_bits)] {
            if !(2..=16).contains(&bits) {
                return Err(Error::config(format!("{name} bit-width {bits} outside 2..=16")));
            }
        }
        if self.frac_bits > self.weight_bits.min(self.membrane_bits) {
            return Err(Error::config(format!(
                "fractional bits {} must not exceed min(WB, MB) = {}",
                self.frac_bits,
                self.weight_bits.min(self.membrane_bits)
            )));
        }
        Ok(())
    }

    pub fn weight_format(&self) -> Result<FixedPointFormat> {
        FixedPointFormat::new(self.weight_bits, self.frac_bits).map_err(|e| Error::config(e.to_string()))
    }

    pub fn membrane_format(&self) -> Result<FixedPointFormat> {
        FixedPointFormat::new(self.membrane_bits, self.frac_bits).map_err(|e| Error::config(e.to_string()))
    }
}

impl fmt::Display for QuantConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.weight_bits, self.membrane_bits, self.frac_bits)
    }
}

impl FromStr for QuantConfig {
    type Err = Error;

    /// Parses `WB,MB,FPd`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<u32> = s
            .split(',')
            .map(|p| p.trim().parse::<u32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::invalid(format!("bad quantization triple {s:?}")))?;
        match parts[..] {
            [wb, mb, fpd] => Self::new(wb, mb, fpd),
            _ => Err(Error::invalid(format!("expected WB,MB,FPd, got {s:?}"))),
        }
    }
}

fn required_shift(layer: usize, name: &str, shift: Option<u32>) -> Result<u32> {
    shift.ok_or_else(|| {
        Error::config(format!(
            "layer {layer}: {name} decays but has no shift exponent; round decays to powers of two first"
        ))
    })
}

pub fn quantize_model(model: &NetworkModel, q: QuantConfig) -> Result<QuantizedModel> {
    q.validate()?;
    model.validate()?;
    let wfmt = q.weight_format()?;
    let mfmt = q.membrane_format()?;
    let mut layers = Vec::with_capacity(model.layers.len());
    for (l, layer) in model.layers.iter().enumerate() {
        let lif = &layer.lif;
        let (current_decay, membrane_decay) = match lif.kind() {
            NeuronKind::If => (None, Decay::Hold),
            NeuronKind::FirstOrder => (None, Decay::Shift(required_shift(l, "beta", lif.beta_shift)?)),
            NeuronKind::SecondOrder => {
                let current = Decay::Shift(required_shift(l, "alpha", lif.alpha_shift)?);
                let membrane = if lif.beta == 0.0 {
                    Decay::Clear
                } else {
                    Decay::Shift(required_shift(l, "beta", lif.beta_shift)?)
                };
                (Some(current), membrane)
            }
        };
        let weights = layer
            .weights
            .iter()
            .map(|&w| wfmt.quantize_raw(w).map(|r| r as i32))
            .collect::<Result<Vec<_>>>()?;
        layers.push(QuantizedLayer {
            fan_in: layer.fan_in,
            fan_out: layer.fan_out,
            weights,
            threshold: mfmt.quantize_raw(lif.threshold)?,
            current_decay,
            membrane_decay,
            reset_mode: lif.reset_mode,
        });
    }
    Ok(QuantizedModel {
        layers,
        weight_format: wfmt,
        membrane_format: mfmt,
    })
}

/// Number of weights that clip at the edge of the weight format.
pub fn count_saturated(model: &NetworkModel, q: QuantConfig) -> Result<usize> {
    let wfmt = q.weight_format()?;
    let scale = (wfmt.frac_bits() as f64).exp2();
    Ok(model
        .layers
        .iter()
        .flat_map(|l| l.weights.iter())
        .filter(|&&w| {
            let r = (w * scale).round();
            r > wfmt.max_raw() as f64 || r < wfmt.min_raw() as f64
        })
        .count())
}

/// Real values of a quantized layer's weights.
pub fn dequantize_weights(qm: &QuantizedModel, layer: usize) -> Vec<f64> {
    let q = qm.weight_format.quantum();
    qm.layers[layer].weights.iter().map(|&w| w as f64 * q).collect()
}

/// Fraction of samples classified correctly. Sample `i` of the split is
/// encoded with sample index `i`.
pub fn evaluate<M: SpikingModel + Sync + ?Sized>(model: &M, split: &DatasetSplit, enc: &EncodingConfig) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty split"));
    }
    let correct = split
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let train = encode_indexed(s, i as u64, enc);
            infer(model, &train).map(|c| (c == s.label as usize) as usize)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / split.len() as f64)
}

pub fn eval_quantized(qm: &QuantizedModel, test: &DatasetSplit, enc: &EncodingConfig) -> Result<f64> {
    evaluate(qm, test, enc)
}
