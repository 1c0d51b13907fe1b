//! Feed-forward fully connected spiking networks with IF, first-order LIF and
//! second-order LIF neurons, in float and in bit-exact fixed-point arithmetic.
//!
//! Weight matrices are stored presynaptic-major: the `fan_out` weights leaving
//! input `i` are contiguous at `weights[i * fan_out..(i + 1) * fan_out]`. This
//! is the order in which inputs are consumed and the order of the weight ROMs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::SpikeTrain;
use crate::error::{Error, Result};
use crate::fixedpoint::{shift_decay_raw, FixedPointFormat};

/// Decay exponents are searched in this range when rounding to powers of two.
pub const SHIFT_RANGE: std::ops::RangeInclusive<u32> = 1..=8;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Architecture(Vec<usize>);

impl Architecture {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::invalid(format!(
                "architecture needs at least two non-empty layers, got {sizes:?}"
            )));
        }
        Ok(Self(sizes))
    }

    pub fn sizes(&self) -> &[usize] {
        &self.0
    }

    pub fn input_size(&self) -> usize {
        self.0[0]
    }

    pub fn output_size(&self) -> usize {
        *self.0.last().unwrap()
    }

    pub fn synapse_count(&self) -> usize {
        self.0.windows(2).map(|w| w[0] * w[1]).sum()
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join("-"))
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let sizes = s
            .split('-')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::invalid(format!("bad architecture {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(sizes)
    }
}

impl TryFrom<String> for Architecture {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Architecture> for String {
    fn from(a: Architecture) -> String {
        a.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResetMode {
    #[default]
    Subtract,
    ToZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeuronKind {
    /// Integrate-and-fire, no leak (`alpha == beta == 0`).
    If,
    /// Membrane decay only (`alpha == 0`).
    FirstOrder,
    /// Decaying synaptic current feeding a decaying membrane.
    SecondOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    pub alpha: f64,
    pub beta: f64,
    pub threshold: f64,
    pub alpha_shift: Option<u32>,
    pub beta_shift: Option<u32>,
    pub reset_mode: ResetMode,
}

fn shift_factor(k: u32) -> f64 {
    1.0 - (-(k as f64)).exp2()
}

impl LifParams {
    pub fn first_order(beta: f64, threshold: f64) -> Self {
        Self {
            alpha: 0.0,
            beta,
            threshold,
            alpha_shift: None,
            beta_shift: None,
            reset_mode: ResetMode::Subtract,
        }
    }

    pub fn integrate_and_fire(threshold: f64) -> Self {
        Self::first_order(0.0, threshold)
    }

    pub fn kind(&self) -> NeuronKind {
        match (self.alpha == 0.0, self.beta == 0.0) {
            (true, true) => NeuronKind::If,
            (true, false) => NeuronKind::FirstOrder,
            (false, _) => NeuronKind::SecondOrder,
        }
    }

    /// Membrane retention actually applied per step; an IF neuron keeps its
    /// full membrane.
    pub fn membrane_retention(&self) -> f64 {
        match self.kind() {
            NeuronKind::If => 1.0,
            _ => self.beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) || !(0.0..1.0).contains(&self.beta) {
            return Err(Error::invalid(format!(
                "decays must lie in [0, 1), got alpha {} beta {}",
                self.alpha, self.beta
            )));
        }
        if !(self.threshold > 0.0) || !self.threshold.is_finite() {
            return Err(Error::invalid(format!("threshold must be positive, got {}", self.threshold)));
        }
        for (name, value, shift) in [("alpha", self.alpha, self.alpha_shift), ("beta", self.beta, self.beta_shift)] {
            if let Some(k) = shift {
                if value != shift_factor(k) {
                    return Err(Error::invalid(format!("{name} {value} is not 1 - 2^-{k}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Presynaptic-major, `fan_in * fan_out` entries.
    pub weights: Vec<f64>,
    pub lif: LifParams,
}

impl LayerSpec {
    pub fn zeros(fan_in: usize, fan_out: usize, lif: LifParams) -> Self {
        Self {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            lif,
        }
    }

    /// Weight from presynaptic input `pre` to neuron `post`.
    pub fn weight(&self, post: usize, pre: usize) -> f64 {
        self.weights[pre * self.fan_out + post]
    }

    pub fn set_weight(&mut self, post: usize, pre: usize, w: f64) {
        self.weights[pre * self.fan_out + post] = w;
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.fan_in * self.fan_out {
            return Err(Error::invalid(format!(
                "layer {}x{} carries {} weights",
                self.fan_in,
                self.fan_out,
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("non-finite weight"));
        }
        self.lif.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub layers: Vec<LayerSpec>,
}

impl NetworkModel {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        let m = Self { layers };
        m.validate()?;
        Ok(m)
    }

    /// A model with all-zero weights for `arch`, every layer sharing `lif`.
    pub fn zeros(arch: &Architecture, lif: LifParams) -> Self {
        let layers = arch
            .sizes()
            .windows(2)
            .map(|w| LayerSpec::zeros(w[0], w[1], lif))
            .collect();
        Self { layers }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("network has no layers"));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].fan_out != pair[1].fan_in {
                return Err(Error::invalid(format!(
                    "layer {i} fan_out {} does not feed layer {} fan_in {}",
                    pair[0].fan_out,
                    i + 1,
                    pair[1].fan_in
                )));
            }
        }
        self.layers.iter().try_for_each(LayerSpec::validate)
    }

    pub fn architecture(&self) -> Architecture {
        let mut sizes = vec![self.layers[0].fan_in];
        sizes.extend(self.layers.iter().map(|l| l.fan_out));
        Architecture(sizes)
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().unwrap().fan_out
    }
}

/// Per-layer float state: synaptic current and membrane potential.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub current: Vec<f64>,
    pub membrane: Vec<f64>,
}

impl LayerState {
    pub fn zeros(n: usize) -> Self {
        Self {
            current: vec![0.0; n],
            membrane: vec![0.0; n],
        }
    }
}

/// `out[j] += Σ_i w[i][j] * x[i]` over nonzero inputs.
#[inline]
pub(crate) fn accumulate_f64(weights: &[f64], fan_out: usize, input: &[f64], out: &mut [f64]) {
    for (i, &x) in input.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let row = &weights[i * fan_out..(i + 1) * fan_out];
        if x == 1.0 {
            out.iter_mut().zip(row).for_each(|(o, w)| *o += w);
        } else {
            out.iter_mut().zip(row).for_each(|(o, w)| *o += w * x);
        }
    }
}

/// Advances one float layer by one timestep and returns its output spikes.
pub fn step_float(layer: &LayerSpec, state: &mut LayerState, spikes_in: &[u8]) -> Result<Vec<u8>> {
    if spikes_in.len() != layer.fan_in || state.membrane.len() != layer.fan_out || state.current.len() != layer.fan_out {
        return Err(Error::invalid(format!(
            "dimension mismatch: layer {}x{}, input {}, state {}",
            layer.fan_in,
            layer.fan_out,
            spikes_in.len(),
            state.membrane.len()
        )));
    }
    let input: Vec<f64> = spikes_in.iter().map(|&s| s as f64).collect();
    let mut syn = vec![0.0; layer.fan_out];
    accumulate_f64(&layer.weights, layer.fan_out, &input, &mut syn);
    Ok(advance_float(&layer.lif, state, &syn))
}

fn advance_float(lif: &LifParams, state: &mut LayerState, syn: &[f64]) -> Vec<u8> {
    let beta = lif.membrane_retention();
    let second_order = lif.kind() == NeuronKind::SecondOrder;
    let mut out = vec![0u8; syn.len()];
    for j in 0..syn.len() {
        let drive = if second_order {
            state.current[j] = lif.alpha * state.current[j] + syn[j];
            state.current[j]
        } else {
            syn[j]
        };
        let mut v = beta * state.membrane[j] + drive;
        if v > lif.threshold {
            out[j] = 1;
            v = match lif.reset_mode {
                ResetMode::Subtract => v - lif.threshold,
                ResetMode::ToZero => 0.0,
            };
        }
        state.membrane[j] = v;
    }
    out
}

/// How a fixed-point register decays each timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decay {
    /// No leak.
    Hold,
    /// `v - (v >> k)`.
    Shift(u32),
    /// Register is cleared before accumulation (zero retention).
    Clear,
}

impl Decay {
    #[inline]
    pub fn apply(self, raw: i64) -> i64 {
        match self {
            Decay::Hold => raw,
            Decay::Shift(k) => shift_decay_raw(raw, k),
            Decay::Clear => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Presynaptic-major raw weights in the weight format.
    pub weights: Vec<i32>,
    /// Raw threshold in the membrane format.
    pub threshold: i64,
    /// `None` for layers without a synaptic-current register.
    pub current_decay: Option<Decay>,
    pub membrane_decay: Decay,
    pub reset_mode: ResetMode,
}

impl QuantizedLayer {
    pub fn weight(&self, post: usize, pre: usize) -> i32 {
        self.weights[pre * self.fan_out + post]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedModel {
    pub layers: Vec<QuantizedLayer>,
    pub weight_format: FixedPointFormat,
    pub membrane_format: FixedPointFormat,
}

impl QuantizedModel {
    pub fn architecture(&self) -> Architecture {
        let mut sizes = vec![self.layers[0].fan_in];
        sizes.extend(self.layers.iter().map(|l| l.fan_out));
        Architecture(sizes)
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().unwrap().fan_out
    }

    pub fn validate(&self) -> Result<()> {
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.weights.len() != layer.fan_in * layer.fan_out {
                return Err(Error::invalid(format!("layer {l}: weight count mismatch")));
            }
            if let Some(i) = layer.weights.iter().position(|&w| !self.weight_format.contains(w as i64)) {
                return Err(Error::invalid(format!("layer {l}: weight {i} outside {}", self.weight_format)));
            }
            if !self.membrane_format.contains(layer.threshold) {
                return Err(Error::invalid(format!("layer {l}: threshold outside {}", self.membrane_format)));
            }
        }
        Ok(())
    }
}

/// Per-layer fixed-point state (raw membrane-lane integers).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantState {
    pub current: Vec<i64>,
    pub membrane: Vec<i64>,
}

impl QuantState {
    pub fn zeros(n: usize) -> Self {
        Self {
            current: vec![0; n],
            membrane: vec![0; n],
        }
    }
}

/// Advances one quantized layer by one timestep.
///
/// Synaptic contributions are summed in a wide lane; the result is clipped
/// to the membrane format only when written back to a register.
pub fn step_quant(
    layer: &QuantizedLayer,
    membrane_format: FixedPointFormat,
    state: &mut QuantState,
    spikes_in: &[u8],
) -> Result<Vec<u8>> {
    if spikes_in.len() != layer.fan_in || state.membrane.len() != layer.fan_out || state.current.len() != layer.fan_out {
        return Err(Error::invalid(format!(
            "dimension mismatch: layer {}x{}, input {}, state {}",
            layer.fan_in,
            layer.fan_out,
            spikes_in.len(),
            state.membrane.len()
        )));
    }
    let mut acc = vec![0i64; layer.fan_out];
    for (i, &s) in spikes_in.iter().enumerate() {
        if s != 0 {
            let row = &layer.weights[i * layer.fan_out..(i + 1) * layer.fan_out];
            acc.iter_mut().zip(row).for_each(|(a, &w)| *a += w as i64);
        }
    }
    Ok(advance_quant(layer, membrane_format, state, &acc))
}

pub(crate) fn advance_quant(
    layer: &QuantizedLayer,
    fmt: FixedPointFormat,
    state: &mut QuantState,
    acc: &[i64],
) -> Vec<u8> {
    let mut out = vec![0u8; acc.len()];
    for j in 0..acc.len() {
        let drive = match layer.current_decay {
            Some(d) => {
                state.current[j] = fmt.clip(d.apply(state.current[j]) + acc[j]);
                state.current[j]
            }
            None => acc[j],
        };
        let mut v = fmt.clip(layer.membrane_decay.apply(state.membrane[j]) + drive);
        if v > layer.threshold {
            out[j] = 1;
            v = match layer.reset_mode {
                ResetMode::Subtract => fmt.clip(v - layer.threshold),
                ResetMode::ToZero => 0,
            };
        }
        state.membrane[j] = v;
    }
    out
}

/// Something that can be run over a spike train to produce output spike
/// counts.
pub trait SpikingModel {
    fn input_size(&self) -> usize;

    /// Output-layer spike counts accumulated over the whole train.
    fn spike_counts(&self, train: &SpikeTrain) -> Result<Vec<u32>>;
}

impl SpikingModel for NetworkModel {
    fn input_size(&self) -> usize {
        NetworkModel::input_size(self)
    }

    fn spike_counts(&self, train: &SpikeTrain) -> Result<Vec<u32>> {
        check_channels(self.input_size(), train)?;
        let mut states: Vec<LayerState> = self.layers.iter().map(|l| LayerState::zeros(l.fan_out)).collect();
        let mut counts = vec![0u32; self.output_size()];
        for t in 0..train.timesteps() {
            let mut spikes: Vec<f64> = train.row(t).iter().map(|&b| b as f64).collect();
            for (layer, state) in self.layers.iter().zip(states.iter_mut()) {
                let mut syn = vec![0.0; layer.fan_out];
                accumulate_f64(&layer.weights, layer.fan_out, &spikes, &mut syn);
                let out = advance_float(&layer.lif, state, &syn);
                spikes = out.iter().map(|&b| b as f64).collect();
            }
            counts.iter_mut().zip(&spikes).for_each(|(c, &s)| *c += s as u32);
        }
        Ok(counts)
    }
}

impl SpikingModel for QuantizedModel {
    fn input_size(&self) -> usize {
        QuantizedModel::input_size(self)
    }

    fn spike_counts(&self, train: &SpikeTrain) -> Result<Vec<u32>> {
        check_channels(self.input_size(), train)?;
        let mut states: Vec<QuantState> = self.layers.iter().map(|l| QuantState::zeros(l.fan_out)).collect();
        let mut counts = vec![0u32; self.output_size()];
        for t in 0..train.timesteps() {
            let mut spikes = train.row(t).to_vec();
            for (layer, state) in self.layers.iter().zip(states.iter_mut()) {
                spikes = step_quant(layer, self.membrane_format, state, &spikes)?;
            }
            counts.iter_mut().zip(&spikes).for_each(|(c, &s)| *c += s as u32);
        }
        Ok(counts)
    }
}

fn check_channels(expected: usize, train: &SpikeTrain) -> Result<()> {
    if train.channels() != expected {
        return Err(Error::invalid(format!(
            "spike train has {} channels, model expects {expected}",
            train.channels()
        )));
    }
    Ok(())
}

/// Index of the largest count; ties go to the lowest index.
pub fn argmax_lowest(counts: &[u32]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

pub fn infer<M: SpikingModel + ?Sized>(model: &M, train: &SpikeTrain) -> Result<usize> {
    Ok(argmax_lowest(&model.spike_counts(train)?))
}

fn nearest_shift(value: f64) -> u32 {
    let mut best = *SHIFT_RANGE.start();
    for k in SHIFT_RANGE {
        if (value - shift_factor(k)).abs() < (value - shift_factor(best)).abs() {
            best = k;
        }
    }
    best
}

/// Snaps every nonzero decay to the nearest `1 - 2^-k`, `k` in [`SHIFT_RANGE`],
/// and records `k`. Zero decays are left untouched.
pub fn round_decays_to_pow2(model: &NetworkModel) -> NetworkModel {
    let mut out = model.clone();
    for layer in &mut out.layers {
        let lif = &mut layer.lif;
        if lif.beta > 0.0 {
            let k = nearest_shift(lif.beta);
            lif.beta = shift_factor(k);
            lif.beta_shift = Some(k);
        }
        if lif.alpha > 0.0 {
            let k = nearest_shift(lif.alpha);
            lif.alpha = shift_factor(k);
            lif.alpha_shift = Some(k);
        }
    }
    out
}
