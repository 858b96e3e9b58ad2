//! Command-line front end.
//!
//! Every subcommand writes a `#`-prefixed manifest header followed by a
//! plain CSV (or digit-dump) body. The header records the tool version and
//! the verbatim argument list, so re-running the listed command reproduces
//! the body byte for byte.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{self, SweepOptions};
use crate::codec::{self, CodecError, DEFAULT_DIGITS};
use crate::dac::{self, DacConfig, DacModel};
use crate::error::{Error, Result};
use crate::signal::{self, SimOptions, StimulusSpec, DEFAULT_FS_HZ};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "ternadac", version, about = "Ternary resistor-ladder DAC simulator")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// DAC configuration (TOML). Defaults to the built-in 20-stage prototype.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for mismatch draws and thermal noise.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file; standard output when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Sample rate in Hz.
    #[arg(long, global = true, default_value_t = DEFAULT_FS_HZ)]
    pub fs: f64,
    /// Ternary digits per sample; must match the config's stage count.
    #[arg(long, global = true)]
    pub digits: Option<usize>,
    /// Use the config's coupling resistors as written instead of calibrating.
    #[arg(long, global = true)]
    pub no_calibrate: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert samples to a digit dump.
    Encode(EncodeArgs),
    /// Print the weight table of a configuration.
    Weights,
    /// Simulate a stimulus or digit dump through the DAC.
    Simulate(SimulateArgs),
    /// SFDR, efficiency and rail currents over a range of levels.
    Sweep(SweepArgs),
    /// SFDR spread over random resistor mismatch.
    Montecarlo(MonteCarloArgs),
    /// Thermal-noise budget and dynamic range.
    Noise(NoiseArgs),
    /// Write the built-in prototype configuration as TOML.
    Prototype,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SignalKind {
    Sine,
    Burst,
    Silence,
    Click,
}

#[derive(Debug, Args)]
pub struct StimulusArgs {
    #[arg(long, value_enum, default_value_t = SignalKind::Sine)]
    pub signal: SignalKind,
    /// Amplitude in dBFS.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub level: f64,
    /// Tone frequency in Hz.
    #[arg(long, default_value_t = 800.0)]
    pub freq: f64,
    /// Duration in seconds.
    #[arg(long, default_value_t = 1.0)]
    pub duration: f64,
    /// Burst on-time in seconds.
    #[arg(long, default_value_t = 1.0)]
    pub on: f64,
    /// Burst off-time in seconds.
    #[arg(long, default_value_t = 1.0)]
    pub off: f64,
}

impl StimulusArgs {
    fn spec(&self, fs: f64) -> StimulusSpec {
        let spec = match self.signal {
            SignalKind::Sine => StimulusSpec::sine(self.level, self.freq, self.duration),
            SignalKind::Burst => {
                StimulusSpec::burst(self.level, self.freq, self.duration, self.on, self.off)
            }
            SignalKind::Silence => StimulusSpec::silence(self.duration),
            SignalKind::Click => StimulusSpec::click(self.level, self.duration),
        };
        spec.with_fs(fs)
    }
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Sample file: one signed 32-bit integer per line.
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub stimulus: StimulusArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Sample file: one signed 32-bit integer per line.
    #[arg(long, value_name = "PATH", conflicts_with = "digits_in")]
    pub input: Option<PathBuf>,
    /// Digit dump to play instead of a stimulus.
    #[arg(long, value_name = "PATH")]
    pub digits_in: Option<PathBuf>,
    /// Also write the digit words to this file.
    #[arg(long, value_name = "PATH")]
    pub dump: Option<PathBuf>,
    /// Add thermal noise at the load.
    #[arg(long)]
    pub noise: bool,
    /// Noise temperature in kelvin.
    #[arg(long, default_value_t = signal::DEFAULT_TEMPERATURE_K)]
    pub temp: f64,
    #[command(flatten)]
    pub stimulus: StimulusArgs,
}

#[derive(Debug, Args)]
pub struct RecordArgs {
    /// Record length in samples (power of two).
    #[arg(long, default_value_t = analysis::DEFAULT_RECORD)]
    pub record: usize,
    /// Tone frequency in Hz, snapped to the nearest odd bin.
    #[arg(long, default_value_t = 800.0)]
    pub freq: f64,
    /// Override the config's resistor tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
}

impl RecordArgs {
    fn options(&self, fs: f64, seed: u64) -> SweepOptions {
        SweepOptions {
            f0_hz: analysis::coherent_frequency(self.freq, fs, self.record),
            fs_hz: fs,
            record: self.record,
            seed,
            ..SweepOptions::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Lowest level in dBFS.
    #[arg(long, default_value_t = -60.0, allow_hyphen_values = true)]
    pub from: f64,
    /// Highest level in dBFS.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub to: f64,
    /// Level step in dB.
    #[arg(long, default_value_t = 2.0)]
    pub step: f64,
    /// Add thermal noise at the load.
    #[arg(long)]
    pub noise: bool,
    #[command(flatten)]
    pub record: RecordArgs,
}

#[derive(Debug, Args)]
pub struct MonteCarloArgs {
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Tone level in dBFS.
    #[arg(long, default_value_t = -20.0, allow_hyphen_values = true)]
    pub level: f64,
    #[command(flatten)]
    pub record: RecordArgs,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    /// Temperature in kelvin.
    #[arg(long = "t", default_value_t = 300.0, allow_hyphen_values = true)]
    pub t: f64,
    /// Bandwidth in Hz.
    #[arg(long = "b", default_value_t = 20_000.0, allow_hyphen_values = true)]
    pub b: f64,
    /// Maximum output power in dBm.
    #[arg(long, default_value_t = 47.4, allow_hyphen_values = true)]
    pub p_max: f64,
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(Error::Usage(e.to_string().trim_end().to_string()));
        }
    };
    let argv: Vec<String> = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let text = execute(&cli, &argv)?;
    emit(cli.common.out.as_deref(), &text)
}

fn execute(cli: &Cli, argv: &[String]) -> Result<String> {
    let c = &cli.common;
    let mut out = manifest(cli, argv);
    match &cli.command {
        Command::Encode(a) => {
            let n = c.digits.unwrap_or(DEFAULT_DIGITS);
            codec::max_magnitude(n)?;
            let samples = match &a.input {
                Some(p) => read_samples(p)?,
                None => signal::generate(&a.stimulus.spec(c.fs))?,
            };
            for &s in &samples {
                let (d, _) = codec::encode_sample(s, n)?;
                let _ = writeln!(out, "{d}");
            }
        }
        Command::Weights => {
            let cfg = load_config(c)?;
            let wt = dac::weights(&cfg)?;
            out.push_str("stage,weight_volts,ratio_to_next,attenuation_db\n");
            let w = wt.w();
            let ratios = wt.ratios();
            let att = wt.attenuation_db();
            for (k, wk) in w.iter().enumerate() {
                let ratio = ratios.get(k).map(|r| format!("{r:.9}")).unwrap_or_default();
                let att = att.get(k).map(|a| format!("{a:.6}")).unwrap_or_default();
                let _ = writeln!(out, "{},{wk:.9e},{ratio},{att}", k + 1);
            }
            let _ = writeln!(out, "z_out,{:.9},,", wt.z_out);
            let _ = writeln!(out, "v_full_scale,{:.9},,", wt.v_full_scale);
        }
        Command::Simulate(a) => {
            let cfg = load_config(c)?;
            let opts = SimOptions {
                thermal_noise: a.noise,
                temperature_k: a.temp,
                seed: c.seed,
                keep_digits: a.dump.is_some(),
                rail_currents: true,
            };
            let trace = match (&a.digits_in, &a.input) {
                (Some(p), _) => {
                    let words = codec::parse_digit_dump(&read_text(p)?, cfg.stage_count())?;
                    signal::simulate_digits(&words, &cfg, c.fs, &opts)?
                }
                (None, Some(p)) => signal::simulate(&read_samples(p)?, &cfg, c.fs, &opts)?,
                (None, None) => {
                    let stream = signal::generate(&a.stimulus.spec(c.fs))?;
                    signal::simulate(&stream, &cfg, c.fs, &opts)?
                }
            };
            let rail = |v: f64| trace.rail(v).map(|r| r.current.as_slice());
            let (i90, i12) = (rail(90.0), rail(12.0));
            out.push_str("time_s,v_out_volts,i90_amps,i12_amps\n");
            for (i, v) in trace.v_out.iter().enumerate() {
                let cell = |r: Option<&[f64]>| r.map(|x| format!("{:.9e}", x[i])).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{:.9e},{v:.9e},{},{}",
                    i as f64 / c.fs,
                    cell(i90),
                    cell(i12)
                );
            }
            if let (Some(path), Some(words)) = (&a.dump, &trace.digits) {
                let mut dump = manifest(cli, argv);
                for w in words {
                    let _ = writeln!(dump, "{w}");
                }
                emit(Some(path), &dump)?;
            }
        }
        Command::Sweep(a) => {
            let mut cfg = load_config(c)?;
            if let Some(t) = a.record.tol {
                cfg.tolerance = t;
            }
            let levels = level_grid(a.from, a.to, a.step)?;
            let mut opts = a.record.options(c.fs, c.seed);
            opts.thermal_noise = a.noise;
            let res = analysis::level_sweep(&cfg, &levels, &opts)?;
            let idx = |v: f64| res.rails.iter().position(|&r| r == v);
            let (i90, i12) = (idx(90.0), idx(12.0));
            out.push_str("level_dbfs,level_dbm,sfdr_db,efficiency_pct,i90_avg_a,i12_avg_a\n");
            for row in &res.rows {
                let cell = |k: Option<usize>| {
                    k.map(|k| format!("{:.9e}", row.i_rail_avg[k])).unwrap_or_default()
                };
                let eff = row.efficiency.percent().map(|p| format!("{p:.6}")).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{:.3},{:.6},{:.6},{eff},{},{}",
                    row.level_dbfs,
                    row.level_dbm,
                    row.sfdr_db,
                    cell(i90),
                    cell(i12)
                );
            }
        }
        Command::Montecarlo(a) => {
            let cfg = load_config(c)?;
            let tol = a.record.tol.unwrap_or(cfg.tolerance);
            let opts = a.record.options(c.fs, c.seed);
            let res = analysis::monte_carlo(&cfg, tol, a.trials, a.level, &opts)?;
            let _ = writeln!(
                out,
                "# median_db={:.6} p10_db={:.6} p90_db={:.6}",
                res.median, res.p10, res.p90
            );
            out.push_str("trial,sfdr_db\n");
            for (i, s) in res.sfdr_db.iter().enumerate() {
                let _ = writeln!(out, "{i},{s:.6}");
            }
        }
        Command::Noise(a) => {
            let nb = analysis::thermal_noise(a.t, a.b)?;
            let dr = analysis::dynamic_range(a.p_max, nb.noise_dbm);
            let n = c.digits.unwrap_or(DEFAULT_DIGITS);
            let _ = writeln!(
                out,
                "# quantization_dr_db={:.6}",
                analysis::quantization_dynamic_range(n)
            );
            out.push_str("t_k,b_hz,noise_w,noise_dbm,dr_db\n");
            let _ = writeln!(
                out,
                "{},{},{:.6e},{:.6},{:.6}",
                a.t, a.b, nb.noise_w, nb.noise_dbm, dr
            );
        }
        Command::Prototype => {
            out.push_str(&dac::build_prototype().to_toml_string());
        }
    }
    Ok(out)
}

fn manifest(cli: &Cli, argv: &[String]) -> String {
    let c = &cli.common;
    let sub = match cli.command {
        Command::Encode(_) => "encode",
        Command::Weights => "weights",
        Command::Simulate(_) => "simulate",
        Command::Sweep(_) => "sweep",
        Command::Montecarlo(_) => "montecarlo",
        Command::Noise(_) => "noise",
        Command::Prototype => "prototype",
    };
    let config = c
        .config
        .as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| "builtin:prototype".into());
    let mut m = String::new();
    let _ = writeln!(m, "# tool=ternadac {VERSION}");
    let _ = writeln!(m, "# subcommand={sub}");
    let _ = writeln!(m, "# config={config}");
    let _ = writeln!(m, "# seed={}", c.seed);
    let _ = writeln!(m, "# fs_hz={}", c.fs);
    let _ = writeln!(m, "# args={}", argv.join(" "));
    m
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// One signed 32-bit sample per line; blank lines and `#` comments skipped.
pub fn parse_samples(text: &str) -> std::result::Result<Vec<i32>, CodecError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let s = line.parse::<i32>().map_err(|e| CodecError::Parse {
            line: i + 1,
            message: format!("'{line}': {e}"),
        })?;
        out.push(s);
    }
    Ok(out)
}

fn read_samples(path: &Path) -> Result<Vec<i32>> {
    Ok(parse_samples(&read_text(path)?)?)
}

fn load_config(c: &Common) -> Result<DacConfig> {
    let cfg = match &c.config {
        Some(p) => {
            let cfg = DacConfig::from_toml_str(&read_text(p)?)?;
            if c.no_calibrate {
                cfg
            } else {
                dac::calibrate(&cfg)?
            }
        }
        None => dac::calibrated_prototype(),
    };
    if let Some(n) = c.digits {
        if n != cfg.stage_count() {
            return Err(Error::Usage(format!(
                "--digits {n} does not match the config's {} stages",
                cfg.stage_count()
            )));
        }
    }
    DacModel::new(&cfg)?;
    Ok(cfg)
}

fn level_grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    if !from.is_finite() || !to.is_finite() || step.is_nan() || step <= 0.0 || from > to {
        return Err(Error::Usage(format!(
            "level range needs from <= to and step > 0 (got {from}..{to} step {step})"
        )));
    }
    let count = ((to - from) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| from + i as f64 * step).collect())
}
