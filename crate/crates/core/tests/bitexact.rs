//! The quantized datapath against an independent scalar oracle, and the
//! cycle-annotated trace against plain inference.

use proptest::prelude::*;
use sfatti::encoder::SpikeTrain;
use sfatti::fixedpoint::FixedPointFormat;
use sfatti::network::{infer, step_quant, Decay, QuantState, QuantizedLayer, QuantizedModel, ResetMode};
use sfatti::simulator::{simulate_trace, TimingModel, TraceEvent};

/// One neuron at a time, i128 arithmetic, decay as `v - floor(v / 2^k)`.
fn oracle_layer(
    layer: &QuantizedLayer,
    bits: u32,
    current: &mut [i128],
    membrane: &mut [i128],
    input: &[u8],
) -> Vec<u8> {
    let lo = -(1i128 << (bits - 1));
    let hi = (1i128 << (bits - 1)) - 1;
    let clip = |x: i128| x.max(lo).min(hi);
    let decay = |d: Decay, x: i128| match d {
        Decay::Hold => x,
        Decay::Shift(k) => x - x.div_euclid(1i128 << k),
        Decay::Clear => 0,
    };
    let mut out = vec![0u8; layer.fan_out];
    for j in 0..layer.fan_out {
        let mut sum = 0i128;
        for i in 0..layer.fan_in {
            if input[i] == 1 {
                sum += layer.weights[i * layer.fan_out + j] as i128;
            }
        }
        let drive = match layer.current_decay {
            Some(d) => {
                current[j] = clip(decay(d, current[j]) + sum);
                current[j]
            }
            None => sum,
        };
        let v = clip(decay(layer.membrane_decay, membrane[j]) + drive);
        let theta = layer.threshold as i128;
        if v > theta {
            out[j] = 1;
            membrane[j] = match layer.reset_mode {
                ResetMode::Subtract => clip(v - theta),
                ResetMode::ToZero => 0,
            };
        } else {
            membrane[j] = v;
        }
    }
    out
}

fn decay_strategy() -> impl Strategy<Value = Decay> {
    prop_oneof![Just(Decay::Hold), (1u32..=8).prop_map(Decay::Shift), Just(Decay::Clear)]
}

fn model_strategy() -> impl Strategy<Value = QuantizedModel> {
    (2u32..=10, 2u32..=12, 1usize..=3)
        .prop_flat_map(|(wb, mb, n_layers)| {
            let sizes = prop::collection::vec(1usize..=16, n_layers + 1);
            (Just(wb), Just(mb), sizes)
        })
        .prop_flat_map(|(wb, mb, sizes)| {
            let wfmt = FixedPointFormat::new(wb, 0).unwrap();
            let mfmt = FixedPointFormat::new(mb, 0).unwrap();
            let layers: Vec<_> = sizes
                .windows(2)
                .map(|w| {
                    let (fi, fo) = (w[0], w[1]);
                    (
                        prop::collection::vec(wfmt.min_raw() as i32..=wfmt.max_raw() as i32, fi * fo),
                        0..=mfmt.max_raw(),
                        prop::option::of(decay_strategy()),
                        decay_strategy(),
                        prop::bool::ANY,
                    )
                        .prop_map(move |(weights, threshold, current_decay, membrane_decay, zero)| QuantizedLayer {
                            fan_in: fi,
                            fan_out: fo,
                            weights,
                            threshold,
                            current_decay,
                            membrane_decay,
                            reset_mode: if zero { ResetMode::ToZero } else { ResetMode::Subtract },
                        })
                })
                .collect();
            (Just(wfmt), Just(mfmt), layers)
        })
        .prop_map(|(weight_format, membrane_format, layers)| QuantizedModel {
            layers,
            weight_format,
            membrane_format,
        })
}

fn train_strategy(channels: usize, timesteps: usize) -> impl Strategy<Value = SpikeTrain> {
    (prop::collection::vec(0u8..=1, channels * timesteps), 0.0f64..1.0).prop_map(move |(bits, density)| {
        // thin the train so both sparse and dense inputs occur
        let keep = (density * 4.0) as u8 + 1;
        let bits = bits.iter().enumerate().map(|(i, &b)| b & ((i as u8 % keep == 0) as u8)).collect();
        SpikeTrain::from_bits(bits, timesteps, channels).unwrap()
    })
}

fn model_and_train(timesteps: usize) -> impl Strategy<Value = (QuantizedModel, SpikeTrain)> {
    model_strategy().prop_flat_map(move |m| {
        let c = m.input_size();
        (Just(m), train_strategy(c, timesteps))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn layer_traces_match_scalar_oracle((qm, train) in model_and_train(50)) {
        let bits = qm.membrane_format.total_bits();
        let mut states: Vec<QuantState> = qm.layers.iter().map(|l| QuantState::zeros(l.fan_out)).collect();
        let mut oracle: Vec<(Vec<i128>, Vec<i128>)> =
            qm.layers.iter().map(|l| (vec![0; l.fan_out], vec![0; l.fan_out])).collect();
        for t in 0..50 {
            let mut got = train.row(t).to_vec();
            let mut want = got.clone();
            for (l, layer) in qm.layers.iter().enumerate() {
                got = step_quant(layer, qm.membrane_format, &mut states[l], &got).unwrap();
                let (cur, mem) = &mut oracle[l];
                want = oracle_layer(layer, bits, cur, mem, &want);
                prop_assert_eq!(&got, &want, "t={} layer={}", t, l);
                let mem_got: Vec<i128> = states[l].membrane.iter().map(|&v| v as i128).collect();
                prop_assert_eq!(&mem_got, mem);
            }
        }
    }

    #[test]
    fn trace_agrees_with_inference((qm, train) in model_and_train(10)) {
        let tm = TimingModel::new(64, 5, 20.0).unwrap();
        let trace = simulate_trace(&qm, &tm, &train).unwrap();
        prop_assert_eq!(trace.class, infer(&qm, &train).unwrap());
        prop_assert_eq!(trace.latency_cycles(), 10 * 64 + 5);
        let last = qm.layers.len() - 1;
        let total: u32 = trace.counts.iter().sum();
        prop_assert_eq!(trace.output_spikes(last), total as usize);
        let cycles: Vec<u64> = trace.events.iter().map(|e| match e {
            TraceEvent::Start { cycle } | TraceEvent::Ready { cycle, .. } | TraceEvent::Spike { cycle, .. } => *cycle,
        }).collect();
        prop_assert!(cycles.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn silent_input_has_no_output_spikes_and_fixed_latency() {
    let fmt = FixedPointFormat::new(9, 5).unwrap();
    let layer = |fi: usize, fo: usize| QuantizedLayer {
        fan_in: fi,
        fan_out: fo,
        weights: (0..fi * fo).map(|i| (i % 7) as i32 - 3).collect(),
        threshold: 8,
        current_decay: None,
        membrane_decay: Decay::Shift(4),
        reset_mode: ResetMode::Subtract,
    };
    let qm = QuantizedModel {
        layers: vec![layer(784, 75), layer(75, 10)],
        weight_format: FixedPointFormat::new(6, 5).unwrap(),
        membrane_format: fmt,
    };
    let tm = TimingModel::calibrated(20.0).unwrap();
    let trace = simulate_trace(&qm, &tm, &SpikeTrain::zeros(10, 784)).unwrap();
    assert_eq!(trace.output_spikes(1), 0);
    assert_eq!(trace.ready_cycle - trace.start_cycle, 8_685);
    let mut dense = SpikeTrain::zeros(10, 784);
    for t in 0..10 {
        for c in 0..784 {
            dense.set(t, c, (t + c) % 3 == 0);
        }
    }
    let busy = simulate_trace(&qm, &tm, &dense).unwrap();
    assert_eq!(busy.latency_cycles(), 8_685);
    // layer 1 fires once its 75 inputs have streamed in after layer 0's 784
    let spike_cycles: Vec<u64> = busy
        .events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Spike { cycle, timestep: 0, layer, .. } => Some((*layer, *cycle)),
            _ => None,
        })
        .map(|(layer, cycle)| cycle - 5 - if layer == 0 { 783 } else { 858 })
        .collect();
    assert!(spike_cycles.iter().all(|&c| c == 0));
}
