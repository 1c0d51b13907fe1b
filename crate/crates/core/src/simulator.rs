//! Cycle and latency accounting for the generated accelerator.
//!
//! The default timing model is affine in the number of timesteps and ignores
//! layer widths: `cycles = T * cycles_per_timestep + setup_cycles`, calibrated
//! to 868 cycles per timestep plus 5 setup cycles (8,685 cycles at T = 10).
//! A width-aware variant charges one cycle per presynaptic input per layer.

use serde::{Deserialize, Serialize};

use crate::encoder::SpikeTrain;
use crate::error::{Error, Result};
use crate::network::{argmax_lowest, step_quant, Architecture, QuantState, QuantizedModel};

pub const CALIBRATED_CYCLES_PER_TIMESTEP: u64 = 868;
pub const CALIBRATED_SETUP_CYCLES: u64 = 5;
/// Testbench clock used when measuring cycle counts.
pub const TESTBENCH_PERIOD_NS: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingModel {
    pub cycles_per_timestep: u64,
    pub setup_cycles: u64,
    pub clock_period_ns: f64,
}

impl TimingModel {
    pub fn new(cycles_per_timestep: u64, setup_cycles: u64, clock_period_ns: f64) -> Result<Self> {
        let tm = Self {
            cycles_per_timestep,
            setup_cycles,
            clock_period_ns,
        };
        tm.validate()?;
        Ok(tm)
    }

    /// The width-independent calibrated model at the given clock period.
    pub fn calibrated(clock_period_ns: f64) -> Result<Self> {
        Self::new(CALIBRATED_CYCLES_PER_TIMESTEP, CALIBRATED_SETUP_CYCLES, clock_period_ns)
    }

    pub fn calibrated_mhz(clock_mhz: f64) -> Result<Self> {
        if !(clock_mhz > 0.0) {
            return Err(Error::invalid(format!("clock must be positive, got {clock_mhz} MHz")));
        }
        Self::calibrated(1000.0 / clock_mhz)
    }

    /// Sensitivity-analysis model: one cycle per presynaptic input of every
    /// layer per timestep. Not calibrated against measurements.
    pub fn width_aware(arch: &Architecture, clock_period_ns: f64) -> Result<Self> {
        let per_step = arch.sizes()[..arch.sizes().len() - 1].iter().sum::<usize>() as u64;
        Self::new(per_step, CALIBRATED_SETUP_CYCLES, clock_period_ns)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cycles_per_timestep == 0 || self.setup_cycles == 0 {
            return Err(Error::invalid("timing model cycle counts must be positive"));
        }
        if !(self.clock_period_ns > 0.0) || !self.clock_period_ns.is_finite() {
            return Err(Error::invalid(format!(
                "clock period must be positive, got {} ns",
                self.clock_period_ns
            )));
        }
        Ok(())
    }

    pub fn clock_mhz(&self) -> f64 {
        1000.0 / self.clock_period_ns
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub total_cycles: u64,
    pub delta_t_ns: f64,
    /// Images per second.
    pub throughput: f64,
    /// Images per second per watt, when a power figure was supplied.
    pub efficiency: Option<f64>,
}

impl LatencyReport {
    pub fn to_log(&self) -> String {
        let mut s = format!(
            "cycles={} delta_t_ns={:.3} throughput_img_s={:.3}",
            self.total_cycles, self.delta_t_ns, self.throughput
        );
        if let Some(e) = self.efficiency {
            s.push_str(&format!(" efficiency_img_s_w={e:.3}"));
        }
        s
    }
}

pub fn count_cycles(tm: &TimingModel, timesteps: usize) -> Result<u64> {
    if timesteps == 0 {
        return Err(Error::invalid("timesteps must be at least 1"));
    }
    Ok(timesteps as u64 * tm.cycles_per_timestep + tm.setup_cycles)
}

pub fn latency_report(tm: &TimingModel, timesteps: usize, power_watts: Option<f64>) -> Result<LatencyReport> {
    tm.validate()?;
    let total_cycles = count_cycles(tm, timesteps)?;
    let delta_t_ns = total_cycles as f64 * tm.clock_period_ns;
    let throughput = 1e9 / delta_t_ns;
    let efficiency = match power_watts {
        Some(p) if !(p > 0.0) || !p.is_finite() => {
            return Err(Error::invalid(format!("power must be positive, got {p} W")))
        }
        Some(p) => Some(throughput / p),
        None => None,
    };
    Ok(LatencyReport {
        total_cycles,
        delta_t_ns,
        throughput,
        efficiency,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEvent {
    /// `start` is raised.
    Start { cycle: u64 },
    /// A neuron fired during `timestep`.
    Spike {
        cycle: u64,
        timestep: usize,
        layer: usize,
        neuron: usize,
    },
    /// `ready` is raised with the decision on the output port.
    Ready { cycle: u64, class: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub class: usize,
    pub counts: Vec<u32>,
    pub start_cycle: u64,
    pub ready_cycle: u64,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn latency_cycles(&self) -> u64 {
        self.ready_cycle - self.start_cycle
    }

    pub fn output_spikes(&self, output_layer: usize) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, TraceEvent::Spike { layer, .. } if *layer == output_layer))
            .count()
    }
}

/// Runs the bit-exact datapath over `train` and annotates it with the
/// accelerator's cycle schedule.
///
/// Inputs of layer `l` are consumed one per cycle, so within a timestep the
/// layer's spikes are known after the cumulative fan-in of layers `0..=l`
/// (capped at the timestep length). `ready` follows `start` by exactly
/// [`count_cycles`].
pub fn simulate_trace(qm: &QuantizedModel, tm: &TimingModel, train: &SpikeTrain) -> Result<Trace> {
    if train.channels() != qm.input_size() {
        return Err(Error::invalid(format!(
            "spike train has {} channels, model expects {}",
            train.channels(),
            qm.input_size()
        )));
    }
    let start_cycle = 0u64;
    let ready_cycle = start_cycle + count_cycles(tm, train.timesteps())?;
    let mut stage_end = Vec::with_capacity(qm.layers.len());
    let mut acc = 0u64;
    for layer in &qm.layers {
        acc += layer.fan_in as u64;
        stage_end.push(acc.min(tm.cycles_per_timestep) - 1);
    }

    let mut events = vec![TraceEvent::Start { cycle: start_cycle }];
    let mut states: Vec<QuantState> = qm.layers.iter().map(|l| QuantState::zeros(l.fan_out)).collect();
    let mut counts = vec![0u32; qm.output_size()];
    for t in 0..train.timesteps() {
        let base = start_cycle + tm.setup_cycles + t as u64 * tm.cycles_per_timestep;
        let mut spikes = train.row(t).to_vec();
        for (l, (layer, state)) in qm.layers.iter().zip(states.iter_mut()).enumerate() {
            spikes = step_quant(layer, qm.membrane_format, state, &spikes)?;
            for (neuron, _) in spikes.iter().enumerate().filter(|(_, &s)| s != 0) {
                events.push(TraceEvent::Spike {
                    cycle: base + stage_end[l],
                    timestep: t,
                    layer: l,
                    neuron,
                });
            }
        }
        counts.iter_mut().zip(&spikes).for_each(|(c, &s)| *c += s as u32);
    }
    let class = argmax_lowest(&counts);
    events.push(TraceEvent::Ready {
        cycle: ready_cycle,
        class,
    });
    Ok(Trace {
        class,
        counts,
        start_cycle,
        ready_cycle,
        events,
    })
}
