//! `sfatti`: train, sweep, simulate, emit, pipeline, verify.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 training error,
//! 5 generation error. `SFATTI_SEED` overrides any seed given on the
//! command line or in a sweep spec.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use sfatti::checkpoint::{hash_json, Checkpoint, TrainingSetup};
use sfatti::dataset::{load_mnist_dir, load_mnist_test, DatasetSplit};
use sfatti::dse::{pareto_front, run_sweep, select_most_efficient, PowerTable, SweepRecord, SweepSpec};
use sfatti::encoder::{encode_indexed, EncodingConfig, SpikeTrain};
use sfatti::hdlgen::{emit_hdl, verify_manifest, GenerationOptions};
use sfatti::network::{infer, Architecture, LifParams, NetworkModel, QuantizedModel};
use sfatti::quantizer::{quantize_model, QuantConfig};
use sfatti::simulator::{latency_report, simulate_trace, TimingModel, TraceEvent};
use sfatti::trainer::TrainerConfig;
use sfatti::Error;

const TOOL: &str = concat!("sfatti ", env!("CARGO_PKG_VERSION"));
const DEFAULT_ARCHS: &str = "784-25-10,784-50-10,784-75-10,784-100-10";
const PARTIAL: &str = ".partial";

#[derive(Parser)]
#[command(name = "sfatti", version, about = "Spiking network training, quantization sweeps and VHDL generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a float model and write a checkpoint plus a training log.
    Train(TrainArgs),
    /// Evaluate a grid of quantization configurations.
    Sweep(SweepArgs),
    /// Report latency and run the cycle-annotated model on inputs.
    Simulate(SimulateArgs),
    /// Write VHDL, .coe ROM images and an XDC stub for one configuration.
    Emit(EmitArgs),
    /// Train, sweep, pick the most efficient passing configuration, emit it.
    Pipeline(PipelineArgs),
    /// Recompute hashes of an artifact and compare.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding the four MNIST IDX files (optionally gzipped).
    #[arg(long, env = "SFATTI_DATA_DIR", default_value = "data/mnist")]
    data_dir: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 0.95)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    threshold: f64,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    timesteps: u64,
    #[arg(long, default_value_t = 25, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: u64,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    batch_size: u64,
    #[arg(long, default_value_t = 5e-4)]
    learning_rate: f64,
    #[arg(long, default_value_t = 25.0)]
    surrogate_slope: f64,
    /// Train on the first N training samples only.
    #[arg(long)]
    train_limit: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "784-75-10")]
    arch: Architecture,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint path; the training log is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep spec, flat `key = value` lines or JSON.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Trained checkpoint; repeat for several architectures.
    #[arg(long = "checkpoint")]
    checkpoints: Vec<PathBuf>,
    /// Load every `*.ckpt` file in this directory.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Power table (`ARCH WB,MB,FPd POWER_MW CLOCK_MHZ` lines). Defaults to
    /// the published measurements of the reference design points.
    #[arg(long, alias = "power-mw")]
    power_table: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct TimingArgs {
    /// Clock frequency; overrides --period-ns.
    #[arg(long)]
    clock_mhz: Option<f64>,
    #[arg(long, default_value_t = 20.0)]
    period_ns: f64,
    /// Charge one cycle per presynaptic input per layer (not calibrated).
    #[arg(long)]
    width_aware: bool,
    #[arg(long)]
    cycles_per_timestep: Option<u64>,
    #[arg(long)]
    setup_cycles: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "6,9,5")]
    quant: String,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    timesteps: u64,
    #[command(flatten)]
    timing: TimingArgs,
    /// Measured or estimated power, for the efficiency figure.
    #[arg(long)]
    power_mw: Option<f64>,
    /// Number of test samples to run.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Simulate this spike dump instead of test samples and print its events.
    #[arg(long)]
    input_dump: Option<PathBuf>,
    /// Write the spike train of the first simulated test sample.
    #[arg(long)]
    dump_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct EmitArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "6,9,5")]
    quant: String,
    #[arg(long, default_value_t = 100.0)]
    clock_mhz: f64,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    timesteps: u64,
    #[arg(long)]
    width_aware: bool,
    #[arg(long)]
    cycles_per_timestep: Option<u64>,
    #[arg(long)]
    setup_cycles: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated architectures to train and sweep.
    #[arg(long, default_value = DEFAULT_ARCHS)]
    archs: String,
    /// Sweep spec; defaults to WB in {4,6,10}, MB in {4,9,10}, FPd in {4,5,6}.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, alias = "power-mw")]
    power_table: Option<PathBuf>,
    /// Reuse checkpoints already in OUT/checkpoints.
    #[arg(long)]
    skip_train: bool,
    /// Evaluate sweeps on a seeded subset of the test split.
    #[arg(long)]
    test_subset: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct VerifyArgs {
    /// A checkpoint, a bundle directory, a sweep results log or a training log.
    path: PathBuf,
    /// Spec the results log was produced from.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Checkpoint the artifact should have been derived from.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Self { code: 2, msg: msg.into() }
    }

    fn data(msg: impl Into<String>) -> Self {
        Self { code: 3, msg: msg.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidArgument(_) | Error::Config(_) => 2,
            Error::Format { .. } | Error::Io { .. } | Error::Serde(_) => 3,
            Error::Training { .. } => 4,
            Error::Generation(_) => 5,
        };
        Self { code, msg: e.to_string() }
    }
}

type CmdResult = Result<(), Failure>;

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }.into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Emit(a) => cmd_emit(a),
        Command::Pipeline(a) => cmd_pipeline(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn seed_override(flag: u64) -> Result<u64, Failure> {
    match std::env::var("SFATTI_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::usage(format!("SFATTI_SEED must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(flag),
    }
}

fn require_dir(path: &Path, what: &str) -> CmdResult {
    if !path.is_dir() {
        return Err(Failure::usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn require_file(path: &Path, what: &str) -> CmdResult {
    if !path.is_file() {
        return Err(Failure::usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(PARTIAL);
    PathBuf::from(s)
}

/// Writes `path` via `path.partial`, so an interrupted write leaves only the
/// marked file behind.
fn write_atomic(path: &Path, text: &str) -> CmdResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io(parent))?;
    }
    let tmp = partial_path(path);
    fs::write(&tmp, text).map_err(io(&tmp))?;
    fs::rename(&tmp, path).map_err(io(path))?;
    Ok(())
}

/// Marks a directory as incomplete until [`finish_dir`] is called.
fn start_dir(dir: &Path, stage: &str) -> CmdResult {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let marker = dir.join(PARTIAL);
    fs::write(&marker, format!("stage={stage}\n")).map_err(io(&marker))
}

fn finish_dir(dir: &Path) -> CmdResult {
    let marker = dir.join(PARTIAL);
    fs::remove_file(&marker).map_err(io(&marker))
}

fn trainer_config(m: &ModelArgs) -> Result<TrainerConfig, Failure> {
    let cfg = TrainerConfig {
        epochs: m.epochs as usize,
        batch_size: m.batch_size as usize,
        learning_rate: m.learning_rate,
        surrogate_slope: m.surrogate_slope,
        seed: seed_override(m.seed)?,
        timesteps: m.timesteps as usize,
        train_limit: m.train_limit,
        ..TrainerConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn training_setup(arch: Architecture, m: &ModelArgs) -> Result<TrainingSetup, Failure> {
    let trainer = trainer_config(m)?;
    let setup = TrainingSetup {
        architecture: arch,
        lif: LifParams::first_order(m.beta, m.threshold),
        init_seed: trainer.seed,
        trainer,
    };
    setup.lif.validate()?;
    Ok(setup)
}

fn train_log(ckpt: &Checkpoint) -> String {
    let mut out = format!("# tool={TOOL:?} format=train-report/1\n");
    let _ = writeln!(
        out,
        "# config_hash={} seed={} arch={} model_hash={}",
        ckpt.config_hash,
        ckpt.seed(),
        ckpt.setup.architecture,
        ckpt.model_hash
    );
    if let Some(r) = &ckpt.report {
        out.push_str(&r.to_log());
    }
    out
}

fn train_log_path(ckpt_path: &Path) -> PathBuf {
    ckpt_path.with_extension("train.log")
}

fn run_training(setup: &TrainingSetup, train: &DatasetSplit, test: &DatasetSplit, out: &Path) -> Result<Checkpoint, Failure> {
    let marker = partial_path(out);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io(parent))?;
    }
    fs::write(&marker, "").map_err(io(&marker))?;
    let started = Instant::now();
    let arch = setup.architecture.clone();
    let ckpt = setup.run(train, test, |e| {
        eprintln!(
            "[{arch}] epoch {} loss {:.4} train_accuracy {:.4} ({:.0}s)",
            e.epoch + 1,
            e.loss,
            e.train_accuracy,
            started.elapsed().as_secs_f64()
        )
    })?;
    write_atomic(out, &ckpt.to_json()?)?;
    write_atomic(&train_log_path(out), &train_log(&ckpt))?;
    if let Some(r) = &ckpt.report {
        eprintln!("[{arch}] float test accuracy {:.4}", r.test_accuracy);
    }
    Ok(ckpt)
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    require_dir(&a.data.data_dir, "data directory")?;
    let setup = training_setup(a.arch, &a.model)?;
    let (train, test) = load_mnist_dir(&a.data.data_dir)?;
    let ckpt = run_training(&setup, &train, &test, &a.out)?;
    println!("checkpoint={} config_hash={} seed={}", a.out.display(), ckpt.config_hash, ckpt.seed());
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    require_file(path, "checkpoint")?;
    Ok(Checkpoint::load(path)?)
}

fn collect_checkpoints(files: &[PathBuf], dir: Option<&Path>) -> Result<BTreeMap<Architecture, NetworkModel>, Failure> {
    let mut paths = files.to_vec();
    if let Some(dir) = dir {
        require_dir(dir, "checkpoint directory")?;
        let mut found: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
            .collect();
        found.sort();
        paths.extend(found);
    }
    let mut models = BTreeMap::new();
    for p in &paths {
        let ckpt = load_checkpoint(p)?;
        models.insert(ckpt.setup.architecture.clone(), ckpt.model);
    }
    Ok(models)
}

fn load_power(path: Option<&Path>) -> Result<PowerTable, Failure> {
    match path {
        None => Ok(PowerTable::reference()),
        Some(p) => {
            require_file(p, "power table")?;
            let text = fs::read_to_string(p).map_err(io(p))?;
            Ok(PowerTable::parse(&text)?)
        }
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn describe(r: &SweepRecord) -> String {
    let mut s = format!(
        "{} {{{}}} T={} accuracy={:.4} cycles={} clock_mhz={}",
        r.architecture, r.quant, r.timesteps, r.accuracy, r.latency.total_cycles, r.clock_mhz
    );
    if let Some(e) = r.latency.efficiency {
        let _ = write!(s, " efficiency={e:.1}");
    }
    s
}

fn summarize(records: &[SweepRecord], floor: f64) {
    let passing: Vec<&SweepRecord> = records.iter().filter(|r| r.pass).collect();
    if passing.is_empty() {
        println!("no config met floor {floor}");
    } else {
        println!("passing configurations ({} of {}):", passing.len(), records.len());
        for r in passing {
            println!("  {}", describe(r));
        }
    }
    println!("pareto front (accuracy, latency, WB+MB):");
    for r in pareto_front(records) {
        println!("  {}", describe(&r));
    }
}

fn load_spec(path: &Path) -> Result<SweepSpec, Failure> {
    require_file(path, "sweep spec")?;
    let text = fs::read_to_string(path).map_err(io(path))?;
    let mut spec = SweepSpec::parse(&text)?;
    spec.seed = seed_override(spec.seed)?;
    Ok(spec)
}

fn cmd_sweep(a: SweepArgs) -> CmdResult {
    let spec = load_spec(&a.spec)?;
    require_dir(&a.data.data_dir, "data directory")?;
    let models = collect_checkpoints(&a.checkpoints, a.checkpoint_dir.as_deref())?;
    let power = load_power(a.power_table.as_deref())?;
    let test = load_mnist_test(&a.data.data_dir)?;
    let results = run_sweep(&models, &test, &spec, &power, a.workers.unwrap_or_else(default_workers))?;
    write_atomic(&a.out, &results.to_log())?;
    summarize(&results.records, spec.accuracy_floor);
    println!("results={}", a.out.display());
    Ok(())
}

fn timing_model(t: &TimingArgs, arch: &Architecture) -> Result<TimingModel, Failure> {
    let period = match t.clock_mhz {
        Some(mhz) if mhz > 0.0 => 1000.0 / mhz,
        Some(mhz) => return Err(Failure::usage(format!("clock must be positive, got {mhz} MHz"))),
        None => t.period_ns,
    };
    let mut tm = if t.width_aware {
        TimingModel::width_aware(arch, period)?
    } else {
        TimingModel::calibrated(period)?
    };
    if let Some(c) = t.cycles_per_timestep {
        tm.cycles_per_timestep = c;
    }
    if let Some(s) = t.setup_cycles {
        tm.setup_cycles = s;
    }
    tm.validate()?;
    Ok(tm)
}

fn quantized(ckpt: &Checkpoint, quant: &str) -> Result<(QuantConfig, QuantizedModel), Failure> {
    let q: QuantConfig = quant.parse()?;
    Ok((q, quantize_model(&ckpt.model, q)?))
}

fn print_events(events: &[TraceEvent]) {
    for e in events {
        match e {
            TraceEvent::Start { cycle } => println!("event=start cycle={cycle}"),
            TraceEvent::Spike {
                cycle,
                timestep,
                layer,
                neuron,
            } => println!("event=spike cycle={cycle} timestep={timestep} layer={layer} neuron={neuron}"),
            TraceEvent::Ready { cycle, class } => println!("event=ready cycle={cycle} class={class}"),
        }
    }
}

fn cmd_simulate(a: SimulateArgs) -> CmdResult {
    let ckpt = load_checkpoint(&a.model)?;
    let (q, qm) = quantized(&ckpt, &a.quant)?;
    let tm = timing_model(&a.timing, &ckpt.setup.architecture)?;
    let power = match a.power_mw {
        Some(p) if p > 0.0 => Some(p / 1000.0),
        Some(p) => return Err(Failure::usage(format!("power must be positive, got {p} mW"))),
        None => None,
    };
    let timesteps = a.timesteps as usize;
    let report = latency_report(&tm, timesteps, power)?;
    println!("# tool={TOOL:?} config_hash={} seed={} quant={q}", ckpt.config_hash, seed_override(a.seed)?);
    println!("{}", report.to_log());

    if let Some(dump) = &a.input_dump {
        require_file(dump, "spike dump")?;
        let text = fs::read_to_string(dump).map_err(io(dump))?;
        let train = SpikeTrain::from_dump(&text).map_err(|e| Failure::data(format!("{}: {e}", dump.display())))?;
        let trace = simulate_trace(&qm, &tm, &train)?;
        print_events(&trace.events);
        println!("class={} latency_cycles={}", trace.class, trace.latency_cycles());
        return Ok(());
    }

    require_dir(&a.data.data_dir, "data directory")?;
    let test = load_mnist_test(&a.data.data_dir)?;
    let enc = EncodingConfig::new(timesteps, seed_override(a.seed)?)?;
    let n = a.samples.min(test.len());
    let (mut correct, mut agree) = (0, 0);
    for (i, sample) in test.samples.iter().take(n).enumerate() {
        let train = encode_indexed(sample, i as u64, &enc);
        if i == 0 {
            if let Some(out) = &a.dump_out {
                write_atomic(out, &train.to_dump())?;
            }
        }
        let trace = simulate_trace(&qm, &tm, &train)?;
        correct += (trace.class == sample.label as usize) as usize;
        agree += (trace.class == infer(&qm, &train)?) as usize;
    }
    println!(
        "samples={n} accuracy={:.6} trace_infer_agreement={agree}/{n}",
        correct as f64 / n.max(1) as f64
    );
    Ok(())
}

fn emit_bundle(
    ckpt: &Checkpoint,
    q: QuantConfig,
    qm: &QuantizedModel,
    tm: &TimingModel,
    timesteps: usize,
    out: &Path,
) -> CmdResult {
    let opts = GenerationOptions {
        timesteps,
        provenance: vec![
            ("config_hash".into(), ckpt.config_hash.clone()),
            ("seed".into(), ckpt.seed().to_string()),
            ("model_hash".into(), ckpt.model_hash.clone()),
            ("arch".into(), ckpt.setup.architecture.to_string()),
            ("quant".into(), q.to_string()),
            ("timesteps".into(), timesteps.to_string()),
            ("clock_mhz".into(), format!("{}", tm.clock_mhz())),
            ("cycles_per_timestep".into(), tm.cycles_per_timestep.to_string()),
            ("setup_cycles".into(), tm.setup_cycles.to_string()),
        ],
    };
    let bundle = emit_hdl(qm, tm, &opts)?;
    start_dir(out, "emit")?;
    bundle.write_to(out)?;
    finish_dir(out)
}

fn cmd_emit(a: EmitArgs) -> CmdResult {
    let ckpt = load_checkpoint(&a.model)?;
    let (q, qm) = quantized(&ckpt, &a.quant)?;
    let timing = TimingArgs {
        clock_mhz: Some(a.clock_mhz),
        period_ns: 0.0,
        width_aware: a.width_aware,
        cycles_per_timestep: a.cycles_per_timestep,
        setup_cycles: a.setup_cycles,
    };
    let tm = timing_model(&timing, &ckpt.setup.architecture)?;
    emit_bundle(&ckpt, q, &qm, &tm, a.timesteps as usize, &a.out)?;
    println!("bundle={} top=snn_top quant={q} clock_mhz={}", a.out.display(), a.clock_mhz);
    Ok(())
}

fn cmd_pipeline(a: PipelineArgs) -> CmdResult {
    let archs: Vec<Architecture> = a
        .archs
        .split(',')
        .map(|s| s.trim().parse::<Architecture>())
        .collect::<Result<_, _>>()?;
    let mut spec = match &a.spec {
        Some(p) => load_spec(p)?,
        None => SweepSpec {
            weight_bits: vec![4, 6, 10],
            membrane_bits: vec![4, 9, 10],
            frac_bits: vec![4, 5, 6],
            architectures: archs.clone(),
            seed: seed_override(a.model.seed)?,
            ..SweepSpec::default()
        },
    };
    if a.test_subset.is_some() {
        spec.test_subset = a.test_subset;
    }
    spec.timesteps = vec![a.model.timesteps as usize];
    spec.validate()?;
    let power = load_power(a.power_table.as_deref())?;
    require_dir(&a.data.data_dir, "data directory")?;

    start_dir(&a.out, "train")?;
    let ckpt_dir = a.out.join("checkpoints");
    let mut checkpoints = BTreeMap::new();
    if a.skip_train {
        for arch in &archs {
            let path = ckpt_dir.join(format!("{arch}.ckpt"));
            checkpoints.insert(arch.clone(), load_checkpoint(&path)?);
        }
    } else {
        let (train, test) = load_mnist_dir(&a.data.data_dir)?;
        for arch in &archs {
            let setup = training_setup(arch.clone(), &a.model)?;
            let ckpt = run_training(&setup, &train, &test, &ckpt_dir.join(format!("{arch}.ckpt")))?;
            checkpoints.insert(arch.clone(), ckpt);
        }
    }

    start_dir(&a.out, "sweep")?;
    let test = load_mnist_test(&a.data.data_dir)?;
    let models: BTreeMap<Architecture, NetworkModel> =
        checkpoints.iter().map(|(k, c)| (k.clone(), c.model.clone())).collect();
    let results = run_sweep(&models, &test, &spec, &power, a.workers.unwrap_or_else(default_workers))?;
    write_atomic(&a.out.join("results.log"), &results.to_log())?;
    summarize(&results.records, spec.accuracy_floor);

    start_dir(&a.out, "emit")?;
    let mut selection = format!("# tool={TOOL:?} spec_hash={} seed={}\n", results.spec_hash, spec.seed);
    match select_most_efficient(&results.records) {
        Some(best) => {
            let ckpt = &checkpoints[&best.architecture];
            let qm = quantize_model(&ckpt.model, best.quant)?;
            let mut tm = TimingModel::calibrated_mhz(best.clock_mhz)?;
            if spec.width_aware {
                tm = TimingModel::width_aware(&best.architecture, tm.clock_period_ns)?;
            }
            let bundle_dir = a.out.join("bundle");
            emit_bundle(ckpt, best.quant, &qm, &tm, best.timesteps, &bundle_dir)?;
            let _ = writeln!(selection, "selected index={} {}", best.index, describe(best));
            println!("selected {}", describe(best));
            println!("bundle={}", bundle_dir.display());
        }
        None => {
            selection.push_str("selected none: no passing configuration has a power figure\n");
            println!("no passing configuration with a power figure; nothing emitted");
        }
    }
    write_atomic(&a.out.join("selection.txt"), &selection)?;
    finish_dir(&a.out)
}

fn header_value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .flat_map(|l| l.split_whitespace())
        .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
}

fn mismatch(what: &str) -> Failure {
    Failure::data(format!("verification failed: {what}"))
}

fn cmd_verify(a: VerifyArgs) -> CmdResult {
    let companion = match &a.checkpoint {
        Some(p) => Some(load_checkpoint(p)?),
        None => None,
    };
    if a.path.is_dir() {
        let bad = verify_manifest(&a.path)?;
        if !bad.is_empty() {
            return Err(mismatch(&format!("content changed: {}", bad.join(", "))));
        }
        if let Some(c) = &companion {
            let manifest = fs::read_to_string(a.path.join("manifest.txt")).map_err(io(&a.path))?;
            if header_value(&manifest, "config_hash") != Some(c.config_hash.as_str()) {
                return Err(mismatch("bundle was not generated from this checkpoint"));
            }
        }
        println!("ok bundle {}", a.path.display());
        return Ok(());
    }
    require_file(&a.path, "artifact")?;
    let text = fs::read_to_string(&a.path).map_err(io(&a.path))?;
    if text.trim_start().starts_with('{') {
        let ckpt = Checkpoint::from_json(&text).map_err(|e| Failure::data(e.to_string()))?;
        ckpt.verify().map_err(|e| mismatch(&e.to_string()))?;
        println!("ok checkpoint config_hash={} seed={}", ckpt.config_hash, ckpt.seed());
        return Ok(());
    }
    if text.contains("format=sweep-results/") {
        let mut checked = 0;
        if let Some(spec) = &a.spec {
            let spec = load_spec(spec)?;
            if header_value(&text, "spec_hash") != Some(spec.hash().as_str()) {
                return Err(mismatch("results log was produced from a different spec"));
            }
            checked += 1;
        }
        if let Some(c) = &companion {
            let arch = c.setup.architecture.to_string();
            let listed = text
                .lines()
                .filter(|l| l.starts_with("# model "))
                .any(|l| l.contains(&format!("arch={arch} ")) && l.ends_with(&format!("model_hash={}", hash_json(&c.model))));
            if !listed {
                return Err(mismatch(&format!("results log does not list this {arch} checkpoint")));
            }
            checked += 1;
        }
        if checked == 0 {
            return Err(Failure::usage("verifying a results log needs --spec and/or --checkpoint"));
        }
        println!("ok results {}", a.path.display());
        return Ok(());
    }
    if text.contains("format=train-report/") {
        let c = companion.ok_or_else(|| Failure::usage("verifying a training log needs --checkpoint"))?;
        if header_value(&text, "config_hash") != Some(c.config_hash.as_str())
            || header_value(&text, "model_hash") != Some(c.model_hash.as_str())
        {
            return Err(mismatch("training log does not belong to this checkpoint"));
        }
        println!("ok training log {}", a.path.display());
        return Ok(());
    }
    Err(Failure::usage(format!("{} is not a recognized artifact", a.path.display())))
}
