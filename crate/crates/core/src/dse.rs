//! Quantization design-space exploration: grid (optionally subsampled) over
//! (architecture, T, WB, MB, FPd), constraint filtering, result logging and
//! Pareto selection.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::hash_json;
use crate::dataset::DatasetSplit;
use crate::encoder::EncodingConfig;
use crate::error::{Error, Result};
use crate::network::{Architecture, NetworkModel};
use crate::quantizer::{eval_quantized, quantize_model, QuantConfig};
use crate::simulator::{latency_report, LatencyReport, TimingModel, TESTBENCH_PERIOD_NS};

pub const DEFAULT_FLOOR: f64 = 0.975;
const TOOL: &str = concat!("sfatti ", env!("CARGO_PKG_VERSION"));
const SAMPLE_SALT: u64 = 0x5851_f42d_4c95_7f2d;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub architecture: Architecture,
    pub quant: QuantConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub weight_bits: Vec<u32>,
    pub membrane_bits: Vec<u32>,
    pub frac_bits: Vec<u32>,
    pub architectures: Vec<Architecture>,
    /// When non-empty, these points replace the WB/MB/FPd grid.
    pub points: Vec<SweepPoint>,
    pub timesteps: Vec<usize>,
    pub accuracy_floor: f64,
    pub seed: u64,
    /// Evaluate on a seeded subset of the test split of this size.
    pub test_subset: Option<usize>,
    /// Evaluate only this many valid grid points, drawn with the seed.
    pub random_sample: Option<usize>,
    /// Clock for configurations without a power-table entry.
    pub clock_mhz: f64,
    /// Use the width-aware timing model instead of the calibrated one.
    pub width_aware: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            weight_bits: (4..=10).collect(),
            membrane_bits: (4..=10).collect(),
            frac_bits: (4..=6).collect(),
            architectures: Vec::new(),
            points: Vec::new(),
            timesteps: vec![10],
            accuracy_floor: DEFAULT_FLOOR,
            seed: 0,
            test_subset: None,
            random_sample: None,
            clock_mhz: 1000.0 / TESTBENCH_PERIOD_NS,
            width_aware: false,
        }
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let bad = || Error::config(format!("bad value for {key}: {value:?}"));
    if let Some((lo, hi)) = value.split_once("..=") {
        let lo: i64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: i64 = hi.trim().parse().map_err(|_| bad())?;
        return (lo..=hi).map(|v| v.to_string().parse().map_err(|_| bad())).collect();
    }
    value
        .split(',')
        .map(|v| v.trim())
        .filter(|v| !v.is_empty())
        .map(|v| v.parse().map_err(|_| bad()))
        .collect()
}

fn parse_scalar<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("bad value for {key}: {value:?}")))
}

impl SweepSpec {
    /// Parses either a JSON object or flat `key = value` lines. Lists are
    /// comma separated, integer ranges may be written `4..=10`, and each
    /// `point = ARCH WB,MB,FPd` line adds one explicit point.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            let spec: Self = serde_json::from_str(text).map_err(|e| Error::config(format!("sweep spec: {e}")))?;
            spec.validate()?;
            return Ok(spec);
        }
        let mut spec = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("sweep spec line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "weight_bits" => spec.weight_bits = parse_list(key, value)?,
                "membrane_bits" => spec.membrane_bits = parse_list(key, value)?,
                "frac_bits" => spec.frac_bits = parse_list(key, value)?,
                "architectures" => spec.architectures = parse_list(key, value)?,
                "timesteps" => spec.timesteps = parse_list(key, value)?,
                "accuracy_floor" => spec.accuracy_floor = parse_scalar(key, value)?,
                "seed" => spec.seed = parse_scalar(key, value)?,
                "test_subset" => spec.test_subset = Some(parse_scalar(key, value)?),
                "random_sample" => spec.random_sample = Some(parse_scalar(key, value)?),
                "clock_mhz" => spec.clock_mhz = parse_scalar(key, value)?,
                "width_aware" => spec.width_aware = parse_scalar(key, value)?,
                "point" => {
                    let (arch, quant) = value
                        .split_once(char::is_whitespace)
                        .ok_or_else(|| Error::config(format!("point needs ARCH WB,MB,FPd, got {value:?}")))?;
                    spec.points.push(SweepPoint {
                        architecture: parse_scalar(key, arch)?,
                        quant: quant.trim().parse().map_err(|e: Error| Error::config(e.to_string()))?,
                    });
                }
                _ => return Err(Error::config(format!("unknown sweep spec key {key:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            if self.weight_bits.is_empty() || self.membrane_bits.is_empty() || self.frac_bits.is_empty() {
                return Err(Error::config("WB, MB and FPd ranges must be non-empty"));
            }
            if self.architectures.is_empty() {
                return Err(Error::config("no architectures to sweep"));
            }
        }
        if self.timesteps.is_empty() || self.timesteps.contains(&0) {
            return Err(Error::config("timesteps must be a non-empty list of positive counts"));
        }
        if !(0.0..=1.0).contains(&self.accuracy_floor) {
            return Err(Error::config(format!("accuracy floor {} outside [0, 1]", self.accuracy_floor)));
        }
        if !(self.clock_mhz > 0.0) || !self.clock_mhz.is_finite() {
            return Err(Error::config(format!("clock {} MHz must be positive", self.clock_mhz)));
        }
        if self.test_subset == Some(0) {
            return Err(Error::config("test subset must hold at least one sample"));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hash_json(self)
    }

    /// Architectures referenced by the sweep spec, in first-use order.
    pub fn referenced_architectures(&self) -> Vec<Architecture> {
        let mut out: Vec<Architecture> = Vec::new();
        let source: Vec<&Architecture> = if self.points.is_empty() {
            self.architectures.iter().collect()
        } else {
            self.points.iter().map(|p| &p.architecture).collect()
        };
        for a in source {
            if !out.contains(a) {
                out.push(a.clone());
            }
        }
        out
    }
}

/// One enumerated combination, valid or not.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub index: usize,
    pub architecture: Architecture,
    pub timesteps: usize,
    pub weight_bits: u32,
    pub membrane_bits: u32,
    pub frac_bits: u32,
}

/// Every combination in config-index order: architecture, then T, then WB,
/// MB, FPd (or the explicit points in listed order).
pub fn enumerate(spec: &SweepSpec) -> Vec<Candidate> {
    let mut out = Vec::new();
    let mut push = |architecture: &Architecture, timesteps, wb, mb, fpd| {
        out.push(Candidate {
            index: out.len(),
            architecture: architecture.clone(),
            timesteps,
            weight_bits: wb,
            membrane_bits: mb,
            frac_bits: fpd,
        })
    };
    if spec.points.is_empty() {
        for arch in &spec.architectures {
            for &t in &spec.timesteps {
                for &wb in &spec.weight_bits {
                    for &mb in &spec.membrane_bits {
                        for &fpd in &spec.frac_bits {
                            push(arch, t, wb, mb, fpd);
                        }
                    }
                }
            }
        }
    } else {
        for p in &spec.points {
            for &t in &spec.timesteps {
                let q = p.quant;
                push(&p.architecture, t, q.weight_bits, q.membrane_bits, q.frac_bits);
            }
        }
    }
    out
}

/// Power and clock measured for a design point. Used only for reporting
/// and ranking; nothing here estimates power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerEntry {
    pub architecture: Architecture,
    pub quant: QuantConfig,
    pub power_mw: f64,
    pub clock_mhz: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PowerTable {
    pub entries: Vec<PowerEntry>,
}

/// Published hardware results for the reference design points:
/// architecture, (WB, MB, FPd), test accuracy %, power mW, clock MHz and,
/// where published, (img/s)/W. Measured on an FPGA; not computed here.
pub const REFERENCE_MEASUREMENTS: [(&str, (u32, u32, u32), f64, f64, f64, Option<f64>); 10] = [
    ("784-25-10", (4, 4, 4), 73.50, 162.0, 188.6, None),
    ("784-25-10", (10, 10, 6), 96.19, 187.0, 166.6, None),
    ("784-50-10", (4, 4, 4), 83.29, 177.0, 188.6, None),
    ("784-50-10", (10, 10, 6), 97.16, 222.0, 161.2, None),
    ("784-75-10", (4, 4, 4), 86.26, 191.0, 185.2, None),
    ("784-75-10", (6, 9, 5), 97.54, 231.0, 163.9, Some(81_712.5)),
    ("784-75-10", (10, 10, 6), 97.86, 254.0, 153.8, Some(69_692.9)),
    ("784-100-10", (4, 4, 4), 73.53, 202.0, 172.4, None),
    ("784-100-10", (6, 9, 5), 97.59, 251.0, 156.2, Some(71_696.4)),
    ("784-100-10", (10, 10, 4), 97.78, 285.0, 151.5, Some(61_227.4)),
];

impl PowerTable {
    /// The published measurements for the reference design points.
    pub fn reference() -> Self {
        let entries = REFERENCE_MEASUREMENTS
            .iter()
            .map(|&(arch, (wb, mb, fpd), _, power_mw, clock_mhz, _)| PowerEntry {
                architecture: arch.parse().expect("valid architecture"),
                quant: QuantConfig::new(wb, mb, fpd).expect("valid quantization"),
                power_mw,
                clock_mhz,
            })
            .collect();
        Self { entries }
    }

    /// Lines of `ARCH WB,MB,FPd POWER_MW CLOCK_MHZ`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = |what: &str| Error::config(format!("power table line {}: {what}", n + 1));
            let [arch, quant, power, clock] = fields[..] else {
                return Err(bad("expected ARCH WB,MB,FPd POWER_MW CLOCK_MHZ"));
            };
            let entry = PowerEntry {
                architecture: arch.parse().map_err(|_| bad("bad architecture"))?,
                quant: quant.parse().map_err(|_| bad("bad quantization"))?,
                power_mw: power.parse().map_err(|_| bad("bad power"))?,
                clock_mhz: clock.parse().map_err(|_| bad("bad clock"))?,
            };
            if !(entry.power_mw > 0.0) || !(entry.clock_mhz > 0.0) {
                return Err(bad("power and clock must be positive"));
            }
            entries.push(entry);
        }
        Ok(Self { entries })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# measured, not estimated: architecture  WB,MB,FPd  power_mw  clock_mhz\n");
        for e in &self.entries {
            let _ = writeln!(out, "{} {} {} {}", e.architecture, e.quant, e.power_mw, e.clock_mhz);
        }
        out
    }

    pub fn lookup(&self, arch: &Architecture, quant: QuantConfig) -> Option<&PowerEntry> {
        self.entries.iter().find(|e| &e.architecture == arch && e.quant == quant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub index: usize,
    pub architecture: Architecture,
    pub quant: QuantConfig,
    pub timesteps: usize,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub clock_mhz: f64,
    pub power_mw: Option<f64>,
    pub latency: LatencyReport,
    pub pass: bool,
}

impl SweepRecord {
    pub fn hardware_cost(&self) -> u32 {
        self.quant.weight_bits + self.quant.membrane_bits
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedConfig {
    pub index: usize,
    pub architecture: Architecture,
    pub timesteps: usize,
    pub weight_bits: u32,
    pub membrane_bits: u32,
    pub frac_bits: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResults {
    pub spec_hash: String,
    pub spec: SweepSpec,
    pub model_hashes: Vec<(Architecture, String)>,
    pub subset: Option<Vec<usize>>,
    pub records: Vec<SweepRecord>,
    pub skipped: Vec<SkippedConfig>,
}

fn log_value(s: &str) -> String {
    if s.is_empty() || s.contains(char::is_whitespace) || s.contains('"') {
        format!("{s:?}")
    } else {
        s.to_string()
    }
}

impl SweepResults {
    pub fn passing(&self) -> impl Iterator<Item = &SweepRecord> {
        self.records.iter().filter(|r| r.pass)
    }

    /// The results file: `#` header lines, then one `key=value` record per
    /// enumerated configuration in config-index order.
    pub fn to_log(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# tool={} format=sweep-results/1", log_value(TOOL));
        let _ = writeln!(out, "# spec_hash={} seed={} accuracy_floor={}", self.spec_hash, self.spec.seed, self.spec.accuracy_floor);
        for (arch, hash) in &self.model_hashes {
            let _ = writeln!(out, "# model arch={arch} model_hash={hash}");
        }
        match &self.subset {
            Some(idx) => {
                let _ = writeln!(out, "# test_subset size={} indices_hash={}", idx.len(), hash_json(idx));
            }
            None => {
                let _ = writeln!(out, "# test_subset=full");
            }
        }
        let mut lines: Vec<(usize, String)> = Vec::new();
        for r in &self.records {
            let mut line = format!(
                "index={} status=evaluated arch={} timesteps={} wb={} mb={} fpd={} correct={} total={} accuracy={:.6} pass={} clock_mhz={} {}",
                r.index,
                r.architecture,
                r.timesteps,
                r.quant.weight_bits,
                r.quant.membrane_bits,
                r.quant.frac_bits,
                r.correct,
                r.total,
                r.accuracy,
                r.pass,
                r.clock_mhz,
                r.latency.to_log()
            );
            if let Some(p) = r.power_mw {
                let _ = write!(line, " measured_power_mw={p}");
            }
            lines.push((r.index, line));
        }
        for s in &self.skipped {
            lines.push((
                s.index,
                format!(
                    "index={} status=skipped arch={} timesteps={} wb={} mb={} fpd={} reason={}",
                    s.index,
                    s.architecture,
                    s.timesteps,
                    s.weight_bits,
                    s.membrane_bits,
                    s.frac_bits,
                    log_value(&s.reason)
                ),
            ));
        }
        lines.sort_by_key(|(i, _)| *i);
        for (_, line) in lines {
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

/// Evaluates every valid combination of `spec` on `test`, using `workers`
/// threads. Output order is the config index regardless of scheduling.
pub fn run_sweep(
    models: &BTreeMap<Architecture, NetworkModel>,
    test: &DatasetSplit,
    spec: &SweepSpec,
    power: &PowerTable,
    workers: usize,
) -> Result<SweepResults> {
    spec.validate()?;
    if workers == 0 {
        return Err(Error::config("worker count must be at least 1"));
    }
    let archs = spec.referenced_architectures();
    let mut model_hashes = Vec::new();
    for arch in &archs {
        let model = models
            .get(arch)
            .ok_or_else(|| Error::config(format!("no trained checkpoint for architecture {arch}")))?;
        if &model.architecture() != arch {
            return Err(Error::config(format!(
                "checkpoint registered for {arch} is actually {}",
                model.architecture()
            )));
        }
        model_hashes.push((arch.clone(), hash_json(model)));
    }
    if test.is_empty() {
        return Err(Error::invalid("test split is empty"));
    }
    let (split, subset) = match spec.test_subset {
        Some(n) => {
            let (s, idx) = test.seeded_subset(n, spec.seed);
            (s, Some(idx))
        }
        None => (test.clone(), None),
    };

    let mut skipped = Vec::new();
    let mut valid = Vec::new();
    for c in enumerate(spec) {
        match QuantConfig::new(c.weight_bits, c.membrane_bits, c.frac_bits) {
            Ok(q) => valid.push((c, q)),
            Err(e) => skipped.push(skip(&c, e.to_string())),
        }
    }
    if let Some(n) = spec.random_sample {
        let mut order: Vec<usize> = (0..valid.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed ^ SAMPLE_SALT));
        let keep: std::collections::BTreeSet<usize> = order.into_iter().take(n).collect();
        let (kept, dropped): (Vec<_>, Vec<_>) = valid.into_iter().enumerate().partition(|(i, _)| keep.contains(i));
        skipped.extend(dropped.into_iter().map(|(_, (c, _))| skip(&c, "not drawn by random subsampling".into())));
        valid = kept.into_iter().map(|(_, v)| v).collect();
    }
    skipped.sort_by_key(|s| s.index);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    let mut records = pool.install(|| {
        valid
            .par_iter()
            .map(|(c, q)| evaluate_candidate(&models[&c.architecture], &split, spec, power, c, *q))
            .collect::<Result<Vec<_>>>()
    })?;
    records.sort_by_key(|r| r.index);
    Ok(SweepResults {
        spec_hash: spec.hash(),
        spec: spec.clone(),
        model_hashes,
        subset,
        records,
        skipped,
    })
}

fn skip(c: &Candidate, reason: String) -> SkippedConfig {
    SkippedConfig {
        index: c.index,
        architecture: c.architecture.clone(),
        timesteps: c.timesteps,
        weight_bits: c.weight_bits,
        membrane_bits: c.membrane_bits,
        frac_bits: c.frac_bits,
        reason,
    }
}

fn evaluate_candidate(
    model: &NetworkModel,
    split: &DatasetSplit,
    spec: &SweepSpec,
    power: &PowerTable,
    c: &Candidate,
    q: QuantConfig,
) -> Result<SweepRecord> {
    let qm = quantize_model(model, q)?;
    let enc = EncodingConfig::new(c.timesteps, spec.seed)?;
    let accuracy = eval_quantized(&qm, split, &enc)?;
    let correct = (accuracy * split.len() as f64).round() as usize;
    let entry = power.lookup(&c.architecture, q);
    let clock_mhz = entry.map_or(spec.clock_mhz, |e| e.clock_mhz);
    let period = 1000.0 / clock_mhz;
    let tm = if spec.width_aware {
        TimingModel::width_aware(&c.architecture, period)?
    } else {
        TimingModel::calibrated(period)?
    };
    let latency = latency_report(&tm, c.timesteps, entry.map(|e| e.power_mw / 1000.0))?;
    Ok(SweepRecord {
        index: c.index,
        architecture: c.architecture.clone(),
        quant: q,
        timesteps: c.timesteps,
        correct,
        total: split.len(),
        accuracy,
        clock_mhz,
        power_mw: entry.map(|e| e.power_mw),
        latency,
        pass: accuracy >= spec.accuracy_floor,
    })
}

/// Objectives of one design point: accuracy (maximize), latency in ns and
/// hardware cost WB + MB (both minimize).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objectives {
    pub accuracy: f64,
    pub latency_ns: f64,
    pub cost: u32,
}

impl From<&SweepRecord> for Objectives {
    fn from(r: &SweepRecord) -> Self {
        Self {
            accuracy: r.accuracy,
            latency_ns: r.latency.delta_t_ns,
            cost: r.hardware_cost(),
        }
    }
}

pub fn dominates(a: &Objectives, b: &Objectives) -> bool {
    let no_worse = a.accuracy >= b.accuracy && a.latency_ns <= b.latency_ns && a.cost <= b.cost;
    let better = a.accuracy > b.accuracy || a.latency_ns < b.latency_ns || a.cost < b.cost;
    no_worse && better
}

/// Positions of the non-dominated points, ascending.
pub fn pareto_indices(points: &[Objectives]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| !points.iter().any(|p| dominates(p, &points[i])))
        .collect()
}

/// Non-dominated records, ordered by config index.
pub fn pareto_front(records: &[SweepRecord]) -> Vec<SweepRecord> {
    let objs: Vec<Objectives> = records.iter().map(Objectives::from).collect();
    let mut front: Vec<SweepRecord> = pareto_indices(&objs).into_iter().map(|i| records[i].clone()).collect();
    front.sort_by_key(|r| r.index);
    front
}

/// The passing record with the best (img/s)/W; ties go to the lower index.
pub fn select_most_efficient(records: &[SweepRecord]) -> Option<&SweepRecord> {
    records
        .iter()
        .filter(|r| r.pass)
        .filter_map(|r| r.latency.efficiency.map(|e| (e, r)))
        .fold(None, |best: Option<(f64, &SweepRecord)>, (e, r)| match best {
            Some((be, br)) if be > e || (be == e && br.index < r.index) => Some((be, br)),
            _ => Some((e, r)),
        })
        .map(|(_, r)| r)
}
