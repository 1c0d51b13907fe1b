//! WebAssembly bindings for the static demo page in `www/`.
//!
//! The plain functions are usable (and tested) natively; the `js_*`
//! wrappers hand JSON strings to the page.

use serde::Serialize;
use sfatti::encoder::{encode_pixels, EncodingConfig};
use sfatti::network::{round_decays_to_pow2, step_float, step_quant, LayerSpec, LayerState, LifParams, NetworkModel, QuantState};
use sfatti::quantizer::{quantize_model, QuantConfig};
use sfatti::simulator::{latency_report, LatencyReport, TimingModel};
use wasm_bindgen::prelude::*;

/// Rate-coded raster of a 28x28 image, `timesteps` rows of 784 bits.
pub fn raster(pixels: &[f32], timesteps: usize, seed: u64) -> Result<Vec<u8>, String> {
    if pixels.len() != 784 {
        return Err(format!("expected 784 pixels, got {}", pixels.len()));
    }
    let cfg = EncodingConfig::new(timesteps, seed).map_err(|e| e.to_string())?;
    let train = encode_pixels(pixels, 0, &cfg);
    Ok((0..timesteps).flat_map(|t| train.row(t).to_vec()).collect())
}

#[derive(Debug, Serialize)]
pub struct LifTrace {
    /// Decay actually used by both models after snapping to `1 - 2^-shift`.
    pub beta: f64,
    pub shift: u32,
    pub input: Vec<u8>,
    pub float_membrane: Vec<f64>,
    pub float_spikes: Vec<u8>,
    /// Fixed-point membrane converted back to real units.
    pub quant_membrane: Vec<f64>,
    pub quant_spikes: Vec<u8>,
}

/// One neuron with a single synapse of weight `weight`, driven by Bernoulli
/// input spikes of probability `rate`, simulated in float and in `quant`.
pub fn lif_trace(weight: f64, beta: f64, threshold: f64, rate: f32, steps: usize, quant: &str, seed: u64) -> Result<LifTrace, String> {
    let q: QuantConfig = quant.parse().map_err(|e: sfatti::Error| e.to_string())?;
    let mut layer = LayerSpec::zeros(1, 1, LifParams::first_order(beta, threshold));
    layer.weights[0] = weight;
    let model = NetworkModel::new(vec![layer]).map_err(|e| e.to_string())?;
    let model = round_decays_to_pow2(&model);
    let qm = quantize_model(&model, q).map_err(|e| e.to_string())?;
    let cfg = EncodingConfig::new(steps, seed).map_err(|e| e.to_string())?;
    let input = encode_pixels(&[rate], 0, &cfg);

    let scale = qm.membrane_format.quantum();
    let (mut fs, mut qs) = (LayerState::zeros(1), QuantState::zeros(1));
    let mut out = LifTrace {
        beta: model.layers[0].lif.beta,
        shift: model.layers[0].lif.beta_shift.unwrap_or(0),
        input: Vec::with_capacity(steps),
        float_membrane: Vec::with_capacity(steps),
        float_spikes: Vec::with_capacity(steps),
        quant_membrane: Vec::with_capacity(steps),
        quant_spikes: Vec::with_capacity(steps),
    };
    for t in 0..steps {
        let x = input.row(t);
        out.input.push(x[0]);
        out.float_spikes.push(step_float(&model.layers[0], &mut fs, x).map_err(|e| e.to_string())?[0]);
        out.float_membrane.push(fs.membrane[0]);
        out.quant_spikes.push(step_quant(&qm.layers[0], qm.membrane_format, &mut qs, x).map_err(|e| e.to_string())?[0]);
        out.quant_membrane.push(qs.membrane[0] as f64 * scale);
    }
    Ok(out)
}

/// Affine latency model; `power_mw <= 0` leaves efficiency out.
pub fn latency(timesteps: usize, cycles_per_timestep: u64, setup_cycles: u64, clock_mhz: f64, power_mw: f64) -> Result<LatencyReport, String> {
    if !(clock_mhz > 0.0) {
        return Err(format!("clock must be positive, got {clock_mhz} MHz"));
    }
    let tm = TimingModel::new(cycles_per_timestep, setup_cycles, 1000.0 / clock_mhz).map_err(|e| e.to_string())?;
    let power = (power_mw > 0.0).then_some(power_mw / 1000.0);
    latency_report(&tm, timesteps, power).map_err(|e| e.to_string())
}

fn js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn js_raster(pixels: &[f32], timesteps: usize, seed: u64) -> Result<Vec<u8>, JsValue> {
    raster(pixels, timesteps, seed).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn js_lif_trace(weight: f64, beta: f64, threshold: f64, rate: f32, steps: usize, quant: &str, seed: u64) -> Result<String, JsValue> {
    js(lif_trace(weight, beta, threshold, rate, steps, quant, seed))
}

#[wasm_bindgen]
pub fn js_latency(timesteps: usize, cycles_per_timestep: u64, setup_cycles: u64, clock_mhz: f64, power_mw: f64) -> Result<String, JsValue> {
    js(latency(timesteps, cycles_per_timestep, setup_cycles, clock_mhz, power_mw))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raster_shape_and_extremes() {
        let mut px = vec![0.0f32; 784];
        px[10] = 1.0;
        let bits = raster(&px, 5, 3).unwrap();
        assert_eq!(bits.len(), 5 * 784);
        for t in 0..5 {
            assert_eq!(bits[t * 784 + 10], 1);
            assert_eq!(bits[t * 784..(t + 1) * 784].iter().map(|&b| b as usize).sum::<usize>(), 1);
        }
        assert!(raster(&px[..10], 5, 3).is_err());
    }

    #[test]
    fn lif_trace_tracks_float_within_resolution() {
        let tr = lif_trace(0.4, 0.95, 1.0, 1.0, 20, "10,10,6", 1).unwrap();
        assert_eq!(tr.shift, 4);
        assert!((tr.beta - 0.9375).abs() < 1e-12);
        assert!(tr.input.iter().all(|&x| x == 1));
        // Q?.6: weight 0.4 -> 26, threshold 64, decay v - (v >> 4)
        let mut v = 0i64;
        for (t, (&m, &s)) in tr.quant_membrane.iter().zip(&tr.quant_spikes).enumerate() {
            v = v - (v >> 4) + 26;
            let fired = v > 64;
            if fired {
                v -= 64;
            }
            assert_eq!(s, fired as u8, "step {t}");
            assert_eq!(m, v as f64 / 64.0, "step {t}");
        }
        assert!((tr.float_membrane[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn latency_matches_reference_point() {
        let r = latency(10, 868, 5, 50.0, 0.0).unwrap();
        assert_eq!(r.total_cycles, 8685);
        assert!((r.delta_t_ns - 173_700.0).abs() < 1e-6);
        assert!(r.efficiency.is_none());
        assert!(latency(10, 868, 5, 0.0, 0.0).is_err());
    }
}
