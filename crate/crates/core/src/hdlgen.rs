//! VHDL, `.coe` and XDC generation for a quantized network.
//!
//! The emitted accelerator processes presynaptic inputs sequentially. Each
//! timestep is a slot of `cycles_per_timestep` cycles; inside it layer `l`
//! owns cycles `[offset_l, offset_l + fan_in_l)`, where `offset_l` is the
//! summed fan-in of the layers before it. One input is presented per cycle
//! and the neuron update (decay, compare, reset) is folded into the last
//! input cycle. Synaptic sums use a wide accumulator that is clipped only
//! when written to the membrane register, matching the software datapath.
//!
//! Emitted files are plain text and a pure function of the inputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::{Decay, QuantizedModel};
use crate::simulator::TimingModel;

pub const TOP_ENTITY: &str = "snn_top";
const TOOL: &str = concat!("sfatti ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GenerationOptions {
    pub timesteps: usize,
    /// `key=value` pairs recorded in the manifest header (seed, config hash).
    pub provenance: Vec<(String, String)>,
}

/// Generated sources keyed by their path relative to the output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HdlBundle {
    pub files: BTreeMap<String, String>,
    pub provenance: Vec<(String, String)>,
}

impl HdlBundle {
    fn file(&self, path: &str) -> &str {
        self.files.get(path).map(String::as_str).unwrap_or("")
    }

    pub fn top_entity(&self) -> &str {
        self.file("rtl/snn_top.vhd")
    }

    pub fn neuron_module(&self) -> &str {
        self.file("rtl/lif_neuron.vhd")
    }

    pub fn control_fsm(&self) -> &str {
        self.file("rtl/control_fsm.vhd")
    }

    pub fn constraints_stub(&self) -> &str {
        self.file("constr/pins.xdc")
    }

    pub fn rom_files(&self) -> impl Iterator<Item = (&str, &str)> {
        self.files
            .iter()
            .filter(|(k, _)| k.starts_with("mem/"))
            .map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// VHDL sources that make up the datapath and control.
    pub fn datapath_sources(&self) -> impl Iterator<Item = (&str, &str)> {
        self.files
            .iter()
            .filter(|(k, _)| k.starts_with("rtl/"))
            .map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// SHA-256 of every emitted file.
    pub fn manifest(&self) -> BTreeMap<String, String> {
        self.files
            .iter()
            .map(|(k, v)| (k.clone(), hex::encode(Sha256::digest(v.as_bytes()))))
            .collect()
    }

    pub fn manifest_text(&self) -> String {
        let mut out = format!("# {TOOL} manifest\n");
        for (k, v) in &self.provenance {
            let _ = writeln!(out, "# {k}={v}");
        }
        for (path, hash) in self.manifest() {
            let _ = writeln!(out, "{hash}  {path}");
        }
        out
    }

    /// Writes every file plus `manifest.txt` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        for (rel, content) in self.files.iter().map(|(k, v)| (k.as_str(), v.as_str())).chain([("manifest.txt", "")]) {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let text = if rel == "manifest.txt" { self.manifest_text() } else { content.to_string() };
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Checks a bundle directory against its `manifest.txt`. Returns the paths
/// whose content no longer matches.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join("manifest.txt");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut bad = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let (hash, rel) = line
            .split_once("  ")
            .ok_or_else(|| Error::invalid(format!("malformed manifest line {line:?}")))?;
        let actual = fs::read(dir.join(rel)).map(|b| hex::encode(Sha256::digest(&b)));
        if actual.ok().as_deref() != Some(hash) {
            bad.push(rel.to_string());
        }
    }
    Ok(bad)
}

/// Bits needed to index `n` distinct values (at least 1).
fn index_bits(n: u64) -> u32 {
    (64 - n.saturating_sub(1).leading_zeros()).max(1)
}

fn twos_complement(raw: i64, bits: u32) -> u64 {
    (raw as u64) & ((1u64 << bits) - 1)
}

/// `.coe` text for a ROM of `bits`-wide two's-complement words, radix 16.
pub fn emit_coe(weights: &[i32], bits: u32) -> Result<String> {
    if !(1..=32).contains(&bits) {
        return Err(Error::Generation(format!("unsupported word width {bits}")));
    }
    let (lo, hi) = (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1);
    let nibbles = bits.div_ceil(4) as usize;
    let mut words = Vec::with_capacity(weights.len());
    for (i, &w) in weights.iter().enumerate() {
        let w = w as i64;
        if w < lo || w > hi {
            return Err(Error::Generation(format!(
                "entry {i} = {w} does not fit in {bits}-bit two's complement"
            )));
        }
        words.push(format!("{:0nibbles$x}", twos_complement(w, bits)));
    }
    Ok(format!(
        "memory_initialization_radix=16;\nmemory_initialization_vector=\n{};\n",
        words.join(",")
    ))
}

/// Period in ns rounded up to three decimals, so the constraint never asks
/// for a faster clock than requested.
pub fn clock_period_ns(clock_mhz: f64) -> f64 {
    ((1000.0 / clock_mhz) * 1000.0 - 1e-6).ceil() / 1000.0
}

struct Port {
    name: &'static str,
    dir: &'static str,
    ty: String,
}

fn top_ports(qm: &QuantizedModel) -> Vec<Port> {
    let n_in = qm.input_size();
    let n_out = qm.output_size();
    let class_w = index_bits(n_out as u64);
    let vec = |n: usize| format!("std_logic_vector({} downto 0)", n - 1);
    vec![
        Port { name: "clk", dir: "in", ty: "std_logic".into() },
        Port { name: "rst", dir: "in", ty: "std_logic".into() },
        Port { name: "start", dir: "in", ty: "std_logic".into() },
        Port { name: "in_spikes", dir: "in", ty: vec(n_in) },
        Port { name: "in_latch", dir: "out", ty: "std_logic".into() },
        Port { name: "ready", dir: "out", ty: "std_logic".into() },
        Port { name: "class_out", dir: "out", ty: vec(class_w as usize) },
        Port { name: "out_spikes", dir: "out", ty: vec(n_out) },
    ]
}

/// XDC stub: the clock constraint plus one commented pin placeholder per
/// top-level port.
pub fn emit_xdc_stub(qm: &QuantizedModel, clock_mhz: f64) -> Result<String> {
    if !(clock_mhz > 0.0) || !clock_mhz.is_finite() {
        return Err(Error::invalid(format!("clock must be positive, got {clock_mhz} MHz")));
    }
    let mut out = String::new();
    let _ = writeln!(out, "## Generated by {TOOL}");
    let _ = writeln!(out, "## Clock: {clock_mhz} MHz");
    let _ = writeln!(
        out,
        "create_clock -period {:.3} -name sys_clk [get_ports clk]",
        clock_period_ns(clock_mhz)
    );
    let _ = writeln!(out, "## Pin placeholders: replace XX with package pins and set the I/O standard.");
    for p in top_ports(qm) {
        let target = if p.ty.starts_with("std_logic_vector") {
            format!("{{{}[*]}}", p.name)
        } else {
            p.name.to_string()
        };
        let _ = writeln!(
            out,
            "# set_property -dict {{PACKAGE_PIN XX IOSTANDARD LVCMOS33}} [get_ports {target}]"
        );
    }
    Ok(out)
}

fn header(out: &mut String, what: &str) {
    let _ = writeln!(out, "-- {what}");
    let _ = writeln!(out, "-- Generated by {TOOL}. Do not edit.");
    out.push_str("\nlibrary ieee;\nuse ieee.std_logic_1164.all;\nuse ieee.numeric_std.all;\n");
}

fn decay_generics(d: Decay) -> (u32, u32) {
    match d {
        Decay::Hold => (0, 0),
        Decay::Shift(k) => (1, k),
        Decay::Clear => (2, 0),
    }
}

const NEURON_VHD: &str = r#"
entity lif_neuron is
  generic (
    WB          : integer := 8;
    MB          : integer := 8;
    ACC_W       : integer := 20;
    MEM_MIN     : integer := -128;
    MEM_MAX     : integer := 127;
    THRESHOLD   : integer := 16;
    -- decay modes: 0 hold, 1 subtract-shift, 2 clear, 3 no register
    BETA_MODE   : integer := 1;
    BETA_SHIFT  : integer := 4;
    ALPHA_MODE  : integer := 3;
    ALPHA_SHIFT : integer := 1;
    RESET_ZERO  : boolean := false
  );
  port (
    clk      : in  std_logic;
    clear    : in  std_logic;
    enable   : in  std_logic;
    last     : in  std_logic;
    spike_in : in  std_logic;
    weight   : in  signed(WB-1 downto 0);
    spike    : out std_logic;
    count    : out unsigned(COUNT_W-1 downto 0)
  );
end entity;

architecture rtl of lif_neuron is
  signal acc      : signed(ACC_W-1 downto 0) := (others => '0');
  signal membrane : signed(MB-1 downto 0) := (others => '0');
  signal current  : signed(MB-1 downto 0) := (others => '0');
  signal spike_r  : std_logic := '0';
  signal count_r  : unsigned(COUNT_W-1 downto 0) := (others => '0');

  function decay(x : signed; mode : integer; k : integer) return signed is
  begin
    case mode is
      when 0 => return x;
      when 1 => return x - shift_right(x, k);
      when others => return to_signed(0, x'length);
    end case;
  end function;

  function clip(x : signed) return signed is
  begin
    if x > to_signed(MEM_MAX, ACC_W) then
      return to_signed(MEM_MAX, ACC_W);
    elsif x < to_signed(MEM_MIN, ACC_W) then
      return to_signed(MEM_MIN, ACC_W);
    end if;
    return x;
  end function;
begin
  spike <= spike_r;
  count <= count_r;

  process (clk)
    variable sum   : signed(ACC_W-1 downto 0);
    variable drive : signed(ACC_W-1 downto 0);
    variable v     : signed(ACC_W-1 downto 0);
  begin
    if rising_edge(clk) then
      if clear = '1' then
        acc      <= (others => '0');
        membrane <= (others => '0');
        current  <= (others => '0');
        spike_r  <= '0';
        count_r  <= (others => '0');
      elsif enable = '1' then
        sum := acc;
        if spike_in = '1' then
          sum := sum + resize(weight, ACC_W);
        end if;
        if last = '1' then
          if ALPHA_MODE = 3 then
            drive := sum;
          else
            drive := clip(decay(resize(current, ACC_W), ALPHA_MODE, ALPHA_SHIFT) + sum);
            current <= resize(drive, MB);
          end if;
          v := clip(decay(resize(membrane, ACC_W), BETA_MODE, BETA_SHIFT) + drive);
          if v > to_signed(THRESHOLD, ACC_W) then
            spike_r <= '1';
            count_r <= count_r + 1;
            if RESET_ZERO then
              membrane <= (others => '0');
            else
              membrane <= resize(clip(v - to_signed(THRESHOLD, ACC_W)), MB);
            end if;
          else
            spike_r  <= '0';
            membrane <= resize(v, MB);
          end if;
          acc <= (others => '0');
        else
          acc <= sum;
        end if;
      end if;
    end if;
  end process;
end architecture;
"#;

fn bin_word(raw: i64, bits: u32) -> String {
    format!("\"{:0width$b}\"", twos_complement(raw, bits), width = bits as usize)
}

fn aggregate(items: Vec<String>, indent: &str) -> String {
    if items.len() == 1 {
        return format!("(0 => {})", items[0]);
    }
    let mut out = String::from("(");
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push(',');
            if i % 8 == 0 {
                out.push('\n');
                out.push_str(indent);
            } else {
                out.push(' ');
            }
        }
        out.push_str(item);
    }
    out.push(')');
    out
}

fn weights_pkg(qm: &QuantizedModel, l: usize) -> String {
    let layer = &qm.layers[l];
    let wb = qm.weight_format.total_bits();
    let mut out = String::new();
    header(&mut out, &format!("Synaptic ROM of layer {l}, one row of {} weights per presynaptic input.", layer.fan_out));
    let _ = writeln!(out, "\npackage weights_l{l}_pkg is");
    let _ = writeln!(out, "  subtype l{l}_word is signed({} downto 0);", wb - 1);
    let _ = writeln!(out, "  type l{l}_row is array (0 to {}) of l{l}_word;", layer.fan_out - 1);
    let _ = writeln!(out, "  type l{l}_rom is array (0 to {}) of l{l}_row;", layer.fan_in - 1);
    let rows: Vec<String> = (0..layer.fan_in)
        .map(|pre| {
            let words = (0..layer.fan_out)
                .map(|post| bin_word(layer.weight(post, pre) as i64, wb))
                .collect();
            format!("\n    {}", aggregate(words, "     "))
        })
        .collect();
    let body = if rows.len() == 1 {
        format!("(0 => {})", rows[0].trim_start())
    } else {
        format!("({}\n  )", rows.join(","))
    };
    let _ = writeln!(out, "  constant L{l}_WEIGHTS : l{l}_rom := {body};");
    let _ = writeln!(out, "end package;");
    out
}

fn snn_pkg(qm: &QuantizedModel, timesteps: usize) -> String {
    let mut out = String::new();
    header(&mut out, "Shared constants and types.");
    let _ = writeln!(out, "\npackage snn_pkg is");
    let _ = writeln!(out, "  constant TIMESTEPS : integer := {timesteps};");
    let _ = writeln!(out, "  constant COUNT_W   : integer := {};", index_bits(timesteps as u64 + 1));
    let _ = writeln!(out, "  constant N_OUT     : integer := {};", qm.output_size());
    let _ = writeln!(out, "  type count_array is array (natural range <>) of unsigned(COUNT_W-1 downto 0);");
    let _ = writeln!(out, "end package;");
    out
}

fn layer_vhd(qm: &QuantizedModel, l: usize) -> String {
    let layer = &qm.layers[l];
    let wb = qm.weight_format.total_bits();
    let mb = qm.membrane_format.total_bits();
    let acc_w = wb.max(mb) + index_bits(layer.fan_in as u64 + 1) + 2;
    let (beta_mode, beta_shift) = decay_generics(layer.membrane_decay);
    let (alpha_mode, alpha_shift) = layer.current_decay.map_or((3, 0), decay_generics);
    let aw = index_bits(layer.fan_in as u64);
    let mut out = String::new();
    header(&mut out, &format!("Layer {l}: {} inputs, {} neurons.", layer.fan_in, layer.fan_out));
    let _ = writeln!(out, "use work.snn_pkg.all;\nuse work.weights_l{l}_pkg.all;\n");
    let _ = writeln!(out, "entity snn_layer_{l} is");
    let _ = writeln!(out, "  port (");
    let _ = writeln!(out, "    clk       : in  std_logic;");
    let _ = writeln!(out, "    clear     : in  std_logic;");
    let _ = writeln!(out, "    en        : in  std_logic;");
    let _ = writeln!(out, "    last      : in  std_logic;");
    let _ = writeln!(out, "    addr      : in  unsigned({} downto 0);", aw - 1);
    let _ = writeln!(out, "    spikes_in : in  std_logic_vector({} downto 0);", layer.fan_in - 1);
    let _ = writeln!(out, "    spikes    : out std_logic_vector({} downto 0);", layer.fan_out - 1);
    let _ = writeln!(out, "    counts    : out count_array(0 to {})", layer.fan_out - 1);
    let _ = writeln!(out, "  );");
    let _ = writeln!(out, "end entity;\n");
    let _ = writeln!(out, "architecture rtl of snn_layer_{l} is");
    let _ = writeln!(out, "  signal row      : l{l}_row;");
    let _ = writeln!(out, "  signal spike_in : std_logic;");
    let _ = writeln!(out, "begin");
    let _ = writeln!(out, "  row      <= L{l}_WEIGHTS(to_integer(addr));");
    let _ = writeln!(out, "  spike_in <= spikes_in(to_integer(addr));\n");
    let _ = writeln!(out, "  neurons : for j in 0 to {} generate", layer.fan_out - 1);
    let _ = writeln!(out, "    n : entity work.lif_neuron");
    let _ = writeln!(out, "      generic map (");
    let _ = writeln!(out, "        WB          => {wb},");
    let _ = writeln!(out, "        MB          => {mb},");
    let _ = writeln!(out, "        ACC_W       => {acc_w},");
    let _ = writeln!(out, "        MEM_MIN     => {},", qm.membrane_format.min_raw());
    let _ = writeln!(out, "        MEM_MAX     => {},", qm.membrane_format.max_raw());
    let _ = writeln!(out, "        THRESHOLD   => {},", layer.threshold);
    let _ = writeln!(out, "        BETA_MODE   => {beta_mode},");
    let _ = writeln!(out, "        BETA_SHIFT  => {beta_shift},");
    let _ = writeln!(out, "        ALPHA_MODE  => {alpha_mode},");
    let _ = writeln!(out, "        ALPHA_SHIFT => {alpha_shift},");
    let _ = writeln!(
        out,
        "        RESET_ZERO  => {}",
        matches!(layer.reset_mode, crate::network::ResetMode::ToZero)
    );
    let _ = writeln!(out, "      )");
    let _ = writeln!(out, "      port map (");
    let _ = writeln!(out, "        clk      => clk,");
    let _ = writeln!(out, "        clear    => clear,");
    let _ = writeln!(out, "        enable   => en,");
    let _ = writeln!(out, "        last     => last,");
    let _ = writeln!(out, "        spike_in => spike_in,");
    let _ = writeln!(out, "        weight   => row(j),");
    let _ = writeln!(out, "        spike    => spikes(j),");
    let _ = writeln!(out, "        count    => counts(j)");
    let _ = writeln!(out, "      );");
    let _ = writeln!(out, "  end generate;");
    let _ = writeln!(out, "end architecture;");
    out
}

struct Schedule {
    offsets: Vec<u64>,
    fan_in: Vec<u64>,
    cycles_per_timestep: u64,
    setup: u64,
    timesteps: u64,
}

fn control_fsm_vhd(s: &Schedule) -> String {
    let cw = index_bits(s.cycles_per_timestep);
    let tw = index_bits(s.timesteps);
    let sw = index_bits(s.setup);
    let mut out = String::new();
    header(&mut out, "Control FSM: setup, per-timestep layer phases, ready handshake.");
    let _ = writeln!(out, "\nentity control_fsm is");
    let _ = writeln!(out, "  port (");
    let _ = writeln!(out, "    clk   : in  std_logic;");
    let _ = writeln!(out, "    rst   : in  std_logic;");
    let _ = writeln!(out, "    start : in  std_logic;");
    let _ = writeln!(out, "    clear : out std_logic;");
    let _ = writeln!(out, "    latch : out std_logic;");
    for (l, &fi) in s.fan_in.iter().enumerate() {
        let _ = writeln!(out, "    en_{l}  : out std_logic;");
        let _ = writeln!(out, "    last_{l} : out std_logic;");
        let _ = writeln!(out, "    addr_{l} : out unsigned({} downto 0);", index_bits(fi) - 1);
    }
    let _ = writeln!(out, "    ready : out std_logic");
    let _ = writeln!(out, "  );");
    let _ = writeln!(out, "end entity;\n");
    let _ = writeln!(out, "architecture rtl of control_fsm is");
    let _ = writeln!(out, "  constant SETUP_LAST : integer := {};", s.setup - 2);
    let _ = writeln!(out, "  constant SLOT_LAST  : integer := {};", s.cycles_per_timestep - 1);
    let _ = writeln!(out, "  constant STEP_LAST  : integer := {};", s.timesteps - 1);
    let _ = writeln!(out, "  type state_t is (IDLE, SETUP, RUN, DONE);");
    let _ = writeln!(out, "  signal state     : state_t := IDLE;");
    let _ = writeln!(out, "  signal setup_cnt : unsigned({} downto 0) := (others => '0');", sw - 1);
    let _ = writeln!(out, "  signal cyc       : unsigned({} downto 0) := (others => '0');", cw - 1);
    let _ = writeln!(out, "  signal ts        : unsigned({} downto 0) := (others => '0');", tw - 1);
    let _ = writeln!(out, "  signal ready_r   : std_logic := '0';");
    for l in 0..s.fan_in.len() {
        let _ = writeln!(out, "  signal en_{l}_i     : std_logic;");
    }
    let _ = writeln!(out, "begin");
    let _ = writeln!(out, "  ready <= ready_r;");
    let _ = writeln!(out, "  clear <= '1' when state = SETUP else '0';");
    let _ = writeln!(out, "  -- the input register loads in the cycle before each timestep slot");
    let _ = writeln!(out, "  latch <= '1' when (state = SETUP and setup_cnt = SETUP_LAST)");
    let _ = writeln!(out, "                 or (state = RUN and cyc = SLOT_LAST and ts /= STEP_LAST) else '0';\n");
    for (l, (&off, &fi)) in s.offsets.iter().zip(&s.fan_in).enumerate() {
        let end = off + fi - 1;
        let aw = index_bits(fi);
        let _ = writeln!(out, "  -- layer {l} owns slot cycles {off} to {end}");
        let _ = writeln!(
            out,
            "  en_{l}_i <= '1' when state = RUN and cyc >= {off} and cyc <= {end} else '0';"
        );
        let _ = writeln!(out, "  en_{l}    <= en_{l}_i;");
        let _ = writeln!(out, "  last_{l}  <= '1' when en_{l}_i = '1' and cyc = {end} else '0';");
        let _ = writeln!(
            out,
            "  addr_{l}  <= resize(cyc - {off}, {aw}) when en_{l}_i = '1' else (others => '0');\n"
        );
    }
    out.push_str(
        r#"  process (clk)
  begin
    if rising_edge(clk) then
      if rst = '1' then
        state     <= IDLE;
        ready_r   <= '0';
        setup_cnt <= (others => '0');
        cyc       <= (others => '0');
        ts        <= (others => '0');
      else
        case state is
          when IDLE | DONE =>
            if start = '1' then
              state     <= SETUP;
              ready_r   <= '0';
              setup_cnt <= (others => '0');
            end if;
          when SETUP =>
            if setup_cnt = SETUP_LAST then
              state <= RUN;
              cyc   <= (others => '0');
              ts    <= (others => '0');
            else
              setup_cnt <= setup_cnt + 1;
            end if;
          when RUN =>
            if cyc = SLOT_LAST then
              cyc <= (others => '0');
              if ts = STEP_LAST then
                state   <= DONE;
                ready_r <= '1';
              else
                ts <= ts + 1;
              end if;
            else
              cyc <= cyc + 1;
            end if;
        end case;
      end if;
    end if;
  end process;
end architecture;
"#,
    );
    out
}

fn top_vhd(qm: &QuantizedModel, s: &Schedule) -> String {
    let n_layers = qm.layers.len();
    let last = n_layers - 1;
    let n_in = qm.input_size();
    let n_out = qm.output_size();
    let class_w = index_bits(n_out as u64);
    let mut out = String::new();
    let _ = writeln!(out, "-- Top level of the spiking network accelerator ({}).", qm.architecture());
    let _ = writeln!(out, "-- Generated by {TOOL}. Do not edit.");
    let _ = writeln!(out, "--");
    let _ = writeln!(out, "-- Handshake: raise start for one cycle; ready rises exactly {} cycles later", s.setup + s.timesteps * s.cycles_per_timestep);
    let _ = writeln!(out, "-- with the decision on class_out (largest output spike count, lowest index on ties).");
    let _ = writeln!(out, "-- in_spikes is a parallel port with one line per input neuron; it is sampled");
    let _ = writeln!(out, "-- whenever in_latch is high, once per timestep. Inputs are consumed");
    let _ = writeln!(out, "-- sequentially, so a dual-buffer front end can load the next vector into the");
    let _ = writeln!(out, "-- idle buffer while the other one is read, adding no latency.");
    let _ = writeln!(out, "-- Weights {}, membrane {}, timesteps {}.", qm.weight_format, qm.membrane_format, s.timesteps);
    out.push_str("\nlibrary ieee;\nuse ieee.std_logic_1164.all;\nuse ieee.numeric_std.all;\nuse work.snn_pkg.all;\n\n");
    let _ = writeln!(out, "entity {TOP_ENTITY} is");
    let _ = writeln!(out, "  port (");
    let ports = top_ports(qm);
    for (i, p) in ports.iter().enumerate() {
        let sep = if i + 1 == ports.len() { "" } else { ";" };
        let _ = writeln!(out, "    {:<10} : {:<3} {}{sep}", p.name, p.dir, p.ty);
    }
    let _ = writeln!(out, "  );");
    let _ = writeln!(out, "end entity;\n");
    let _ = writeln!(out, "architecture rtl of {TOP_ENTITY} is");
    let _ = writeln!(out, "  signal clear, latch : std_logic;");
    let _ = writeln!(out, "  signal in_buf       : std_logic_vector({} downto 0) := (others => '0');", n_in - 1);
    for (l, layer) in qm.layers.iter().enumerate() {
        let _ = writeln!(out, "  signal en_{l}, last_{l}   : std_logic;");
        let _ = writeln!(out, "  signal addr_{l}         : unsigned({} downto 0);", index_bits(layer.fan_in as u64) - 1);
        let _ = writeln!(out, "  signal spikes_{l}       : std_logic_vector({} downto 0);", layer.fan_out - 1);
        let _ = writeln!(out, "  signal counts_{l}       : count_array(0 to {});", layer.fan_out - 1);
    }
    let _ = writeln!(out, "begin");
    let _ = writeln!(out, "  in_latch   <= latch;");
    let _ = writeln!(out, "  out_spikes <= spikes_{last};\n");
    let _ = writeln!(out, "  process (clk)");
    let _ = writeln!(out, "  begin");
    let _ = writeln!(out, "    if rising_edge(clk) then");
    let _ = writeln!(out, "      if latch = '1' then");
    let _ = writeln!(out, "        in_buf <= in_spikes;");
    let _ = writeln!(out, "      end if;");
    let _ = writeln!(out, "    end if;");
    let _ = writeln!(out, "  end process;\n");
    let _ = writeln!(out, "  fsm : entity work.control_fsm");
    let _ = writeln!(out, "    port map (");
    let _ = writeln!(out, "      clk   => clk,");
    let _ = writeln!(out, "      rst   => rst,");
    let _ = writeln!(out, "      start => start,");
    let _ = writeln!(out, "      clear => clear,");
    let _ = writeln!(out, "      latch => latch,");
    for l in 0..n_layers {
        let _ = writeln!(out, "      en_{l}   => en_{l},");
        let _ = writeln!(out, "      last_{l} => last_{l},");
        let _ = writeln!(out, "      addr_{l} => addr_{l},");
    }
    let _ = writeln!(out, "      ready => ready");
    let _ = writeln!(out, "    );\n");
    for l in 0..n_layers {
        let src = if l == 0 { "in_buf".to_string() } else { format!("spikes_{}", l - 1) };
        let _ = writeln!(out, "  layer_{l} : entity work.snn_layer_{l}");
        let _ = writeln!(out, "    port map (");
        let _ = writeln!(out, "      clk       => clk,");
        let _ = writeln!(out, "      clear     => clear,");
        let _ = writeln!(out, "      en        => en_{l},");
        let _ = writeln!(out, "      last      => last_{l},");
        let _ = writeln!(out, "      addr      => addr_{l},");
        let _ = writeln!(out, "      spikes_in => {src},");
        let _ = writeln!(out, "      spikes    => spikes_{l},");
        let _ = writeln!(out, "      counts    => counts_{l}");
        let _ = writeln!(out, "    );\n");
    }
    let _ = writeln!(out, "  decision : process (counts_{last})");
    let _ = writeln!(out, "    variable best : integer range 0 to {};", n_out - 1);
    let _ = writeln!(out, "  begin");
    let _ = writeln!(out, "    best := 0;");
    let _ = writeln!(out, "    for k in 1 to {} loop", n_out - 1);
    let _ = writeln!(out, "      if counts_{last}(k) > counts_{last}(best) then");
    let _ = writeln!(out, "        best := k;");
    let _ = writeln!(out, "      end if;");
    let _ = writeln!(out, "    end loop;");
    let _ = writeln!(out, "    class_out <= std_logic_vector(to_unsigned(best, {class_w}));");
    let _ = writeln!(out, "  end process;");
    let _ = writeln!(out, "end architecture;");
    out
}

fn schedule(qm: &QuantizedModel, tm: &TimingModel, timesteps: usize) -> Result<Schedule> {
    tm.validate()?;
    if timesteps == 0 {
        return Err(Error::Generation("timesteps must be at least 1".into()));
    }
    if tm.setup_cycles < 2 {
        return Err(Error::Generation(format!(
            "setup must last at least 2 cycles, timing model has {}",
            tm.setup_cycles
        )));
    }
    let mut offsets = Vec::new();
    let mut fan_in = Vec::new();
    let mut used = 0u64;
    for (l, layer) in qm.layers.iter().enumerate() {
        if layer.fan_in == 0 || layer.fan_out == 0 {
            return Err(Error::Generation(format!("layer {l} is empty")));
        }
        offsets.push(used);
        fan_in.push(layer.fan_in as u64);
        used += layer.fan_in as u64;
        if used > tm.cycles_per_timestep {
            return Err(Error::Generation(format!(
                "layer {l} does not fit the timestep slot: {used} input cycles needed, {} available",
                tm.cycles_per_timestep
            )));
        }
    }
    Ok(Schedule {
        offsets,
        fan_in,
        cycles_per_timestep: tm.cycles_per_timestep,
        setup: tm.setup_cycles,
        timesteps: timesteps as u64,
    })
}

/// Prepends the provenance pairs as comments in the file's own syntax.
fn stamp(path: &str, text: &mut String, provenance: &[(String, String)]) {
    let lead = match path.rsplit('.').next() {
        Some("vhd") => "--",
        Some("coe") => ";",
        _ => "#",
    };
    let mut head = String::new();
    for (k, v) in provenance {
        let _ = writeln!(head, "{lead} {k}={v}");
    }
    text.insert_str(0, &head);
}

pub fn emit_hdl(qm: &QuantizedModel, tm: &TimingModel, opts: &GenerationOptions) -> Result<HdlBundle> {
    qm.validate().map_err(|e| Error::Generation(e.to_string()))?;
    let sched = schedule(qm, tm, opts.timesteps)?;
    let mut files = BTreeMap::new();

    let mut neuron = String::new();
    header(&mut neuron, "Multiplier-free LIF neuron: shift decay, saturating membrane, threshold compare.");
    neuron.push_str("use work.snn_pkg.all;\n");
    neuron.push_str(NEURON_VHD);
    files.insert("rtl/lif_neuron.vhd".to_string(), neuron);
    files.insert("rtl/snn_pkg.vhd".to_string(), snn_pkg(qm, opts.timesteps));
    files.insert("rtl/control_fsm.vhd".to_string(), control_fsm_vhd(&sched));
    files.insert("rtl/snn_top.vhd".to_string(), top_vhd(qm, &sched));
    for l in 0..qm.layers.len() {
        files.insert(format!("rtl/weights_l{l}_pkg.vhd"), weights_pkg(qm, l));
        files.insert(format!("rtl/snn_layer_{l}.vhd"), layer_vhd(qm, l));
        files.insert(
            format!("mem/weights_l{l}.coe"),
            emit_coe(&qm.layers[l].weights, qm.weight_format.total_bits())?,
        );
    }
    files.insert("constr/pins.xdc".to_string(), emit_xdc_stub(qm, tm.clock_mhz())?);
    for (path, text) in files.iter_mut() {
        stamp(path, text, &opts.provenance);
    }
    Ok(HdlBundle {
        files,
        provenance: opts.provenance.clone(),
    })
}
