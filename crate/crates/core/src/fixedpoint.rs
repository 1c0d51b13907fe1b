//! Signed two's-complement fixed-point lanes with saturating clipping.
//!
//! Every value carries its [`FixedPointFormat`]. Raw integers are in units of
//! `2^-frac_bits` and are clipped (never wrapped) into the format's range
//! whenever they are stored. Intermediate sums may be computed in `i64` and
//! clipped only at the register boundary, see [`FixedPointFormat::clip`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixedPointFormat {
    total_bits: u32,
    frac_bits: u32,
}

impl FixedPointFormat {
    pub fn new(total_bits: u32, frac_bits: u32) -> Result<Self> {
        if !(2..=32).contains(&total_bits) {
            return Err(Error::invalid(format!(
                "total_bits must be in 2..=32, got {total_bits}"
            )));
        }
        if frac_bits > total_bits {
            return Err(Error::invalid(format!(
                "frac_bits ({frac_bits}) must not exceed total_bits ({total_bits})"
            )));
        }
        Ok(Self {
            total_bits,
            frac_bits,
        })
    }

    pub fn total_bits(&self) -> u32 {
        self.total_bits
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    /// Smallest representable raw value, `-2^(total_bits-1)`.
    pub fn min_raw(&self) -> i64 {
        -(1i64 << (self.total_bits - 1))
    }

    /// Largest representable raw value, `2^(total_bits-1) - 1`.
    pub fn max_raw(&self) -> i64 {
        (1i64 << (self.total_bits - 1)) - 1
    }

    /// Size of one quantum, `2^-frac_bits`.
    pub fn quantum(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    #[inline]
    pub fn clip(&self, raw: i64) -> i64 {
        raw.clamp(self.min_raw(), self.max_raw())
    }

    #[inline]
    pub fn contains(&self, raw: i64) -> bool {
        raw >= self.min_raw() && raw <= self.max_raw()
    }

    /// Raw integer for `x`, rounded half away from zero and clipped.
    pub fn quantize_raw(&self, x: f64) -> Result<i64> {
        if !x.is_finite() {
            return Err(Error::invalid(format!("cannot quantize non-finite value {x}")));
        }
        let scaled = (x * (self.frac_bits as f64).exp2()).round();
        let clipped = scaled.clamp(self.min_raw() as f64, self.max_raw() as f64);
        Ok(clipped as i64)
    }

    pub fn value(&self, raw: i64) -> Result<FixedValue> {
        if !self.contains(raw) {
            return Err(Error::invalid(format!(
                "raw {raw} outside [{}, {}] for {self}",
                self.min_raw(),
                self.max_raw()
            )));
        }
        Ok(FixedValue {
            raw: raw as i32,
            format: *self,
        })
    }

    /// Builds a value from a wide raw integer, clipping into range.
    pub fn saturate(&self, raw: i64) -> FixedValue {
        FixedValue {
            raw: self.clip(raw) as i32,
            format: *self,
        }
    }
}

impl std::fmt::Display for FixedPointFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Q{}.{}", self.total_bits, self.frac_bits)
    }
}

/// A raw integer together with the lane it lives in. The raw value is
/// always inside the format's range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedValue {
    raw: i32,
    format: FixedPointFormat,
}

impl FixedValue {
    pub fn raw(&self) -> i64 {
        self.raw as i64
    }

    pub fn format(&self) -> FixedPointFormat {
        self.format
    }

    pub fn to_real(&self) -> f64 {
        to_real(*self)
    }
}

/// How a decay shift exponent is realized in the datapath.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayMode {
    /// `v - (v >> k)`, decay factor `1 - 2^-k`.
    #[default]
    SubtractShift,
    /// `v >> k`, decay factor `2^-k`.
    PureShift,
}

pub fn quantize(x: f64, fmt: FixedPointFormat) -> Result<FixedValue> {
    let raw = fmt.quantize_raw(x)?;
    Ok(fmt.saturate(raw))
}

pub fn sat_add(a: FixedValue, b: FixedValue) -> Result<FixedValue> {
    if a.format != b.format {
        return Err(Error::invalid(format!(
            "format mismatch in sat_add: {} vs {}",
            a.format, b.format
        )));
    }
    Ok(a.format.saturate(a.raw() + b.raw()))
}

pub fn shift_decay(v: FixedValue, k: u32) -> FixedValue {
    v.format.saturate(shift_decay_raw(v.raw(), k))
}

pub fn shift_decay_with(v: FixedValue, k: u32, mode: DecayMode) -> FixedValue {
    v.format.saturate(decay_raw(v.raw(), k, mode))
}

pub fn to_real(v: FixedValue) -> f64 {
    v.raw() as f64 * (-(v.format.frac_bits as f64)).exp2()
}

/// `raw - (raw >> k)` with an arithmetic (sign-preserving) shift.
#[inline]
pub fn shift_decay_raw(raw: i64, k: u32) -> i64 {
    raw - (raw >> k.min(63))
}

#[inline]
pub fn decay_raw(raw: i64, k: u32, mode: DecayMode) -> i64 {
    match mode {
        DecayMode::SubtractShift => shift_decay_raw(raw, k),
        DecayMode::PureShift => raw >> k.min(63),
    }
}
