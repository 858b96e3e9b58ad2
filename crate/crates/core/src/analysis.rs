//! Figures of merit: SFDR, efficiency, thermal-noise budget, dynamic range,
//! level sweeps and Monte-Carlo tolerance studies.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use thiserror::Error;

use crate::codec::{self, DigitVector, Trit};
use crate::dac::{self, DacConfig, DacError, DacModel};
use crate::signal::{self, SignalError, SimOptions, SimulationTrace, StimulusSpec};

/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Default record length for spectral measurements.
pub const DEFAULT_RECORD: usize = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("record length {0} is not a power of two")]
    RecordLength(usize),
    #[error(
        "f0 = {f0} Hz is not coherent with the record ({bins:.6} cycles); \
         snap to the nearest bin, e.g. {suggested} Hz"
    )]
    NonCoherent { f0: f64, bins: f64, suggested: f64 },
    #[error("f0 = {0} Hz lies outside (0, fs/2)")]
    OutOfBand(f64),
    #[error("{0} must be > 0")]
    NonPositive(&'static str),
    #[error("efficiency undefined: supply power {supply_w} W with output power {output_w} W")]
    UndefinedEfficiency { supply_w: f64, output_w: f64 },
    #[error("trials must be >= 1")]
    NoTrials,
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Dac(#[from] DacError),
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w / 1e-3).log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseBudget {
    pub k_boltzmann: f64,
    pub temperature_k: f64,
    pub bandwidth_hz: f64,
    pub noise_w: f64,
    pub noise_dbm: f64,
}

/// Available thermal noise power `kTB`.
pub fn thermal_noise(temperature_k: f64, bandwidth_hz: f64) -> Result<NoiseBudget, AnalysisError> {
    if temperature_k.is_nan() || temperature_k <= 0.0 {
        return Err(AnalysisError::NonPositive("temperature"));
    }
    if bandwidth_hz.is_nan() || bandwidth_hz <= 0.0 {
        return Err(AnalysisError::NonPositive("bandwidth"));
    }
    let noise_w = BOLTZMANN * temperature_k * bandwidth_hz;
    Ok(NoiseBudget {
        k_boltzmann: BOLTZMANN,
        temperature_k,
        bandwidth_hz,
        noise_w,
        noise_dbm: watts_to_dbm(noise_w),
    })
}

pub fn dynamic_range(p_max_dbm: f64, noise_dbm: f64) -> f64 {
    p_max_dbm - noise_dbm
}

/// `20·log10(3^n)`: ratio of full scale to one code step.
pub fn quantization_dynamic_range(n_digits: usize) -> f64 {
    20.0 * n_digits as f64 * 3f64.log10()
}

/// Nearest odd FFT bin to `target_hz`, as a frequency. Odd bins share no
/// factor with a power-of-two record, so every sample hits a distinct phase.
pub fn coherent_frequency(target_hz: f64, fs_hz: f64, record: usize) -> f64 {
    let bin = target_hz * record as f64 / fs_hz;
    let mut k = bin.round() as i64;
    if k % 2 == 0 {
        k += if bin >= k as f64 { 1 } else { -1 };
    }
    k.max(1) as f64 * fs_hz / record as f64
}

fn magnitude_spectrum(samples: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf[..=samples.len() / 2].iter().map(|c| c.norm()).collect()
}

/// Spurious-free dynamic range of a coherently sampled sine, rectangular
/// window: fundamental bin over the largest other bin, DC excluded.
pub fn sfdr(samples: &[f64], f0_hz: f64, fs_hz: f64) -> Result<f64, AnalysisError> {
    let n = samples.len();
    if n < 4 || !n.is_power_of_two() {
        return Err(AnalysisError::RecordLength(n));
    }
    if !(f0_hz > 0.0 && f0_hz < fs_hz / 2.0) {
        return Err(AnalysisError::OutOfBand(f0_hz));
    }
    let bins = f0_hz * n as f64 / fs_hz;
    let k0 = bins.round();
    if (bins - k0).abs() > 1e-6 {
        return Err(AnalysisError::NonCoherent {
            f0: f0_hz,
            bins,
            suggested: coherent_frequency(f0_hz, fs_hz, n),
        });
    }
    let k0 = k0 as usize;
    let mag = magnitude_spectrum(samples);
    let spur = mag
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(k, _)| *k != k0)
        .fold(0.0f64, |m, (_, v)| m.max(*v));
    Ok(20.0 * (mag[k0] / spur).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Accounting {
    /// Rails absorbing current subtract from supply power.
    #[default]
    Signed,
    /// Back-fed current counts as zero.
    ClampedPositive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Efficiency {
    Percent(f64),
    /// No output and no supply power.
    Idle,
}

impl Efficiency {
    pub fn percent(self) -> Option<f64> {
        match self {
            Efficiency::Percent(p) => Some(p),
            Efficiency::Idle => None,
        }
    }
}

pub fn supply_power(trace: &SimulationTrace, accounting: Accounting) -> f64 {
    trace
        .rails
        .iter()
        .map(|r| {
            let sum: f64 = match accounting {
                Accounting::Signed => r.current.iter().sum(),
                Accounting::ClampedPositive => r.current.iter().map(|i| i.max(0.0)).sum(),
            };
            r.volts * sum / r.current.len().max(1) as f64
        })
        .sum()
}

pub fn output_power(trace: &SimulationTrace, load_ohms: f64) -> f64 {
    trace.v_out.iter().map(|v| v * v).sum::<f64>() / (trace.len().max(1) as f64 * load_ohms)
}

/// `100 · mean(v²/R_load) / Σ V_rail·mean(i_rail)`.
pub fn efficiency(
    trace: &SimulationTrace,
    config: &DacConfig,
    accounting: Accounting,
) -> Result<Efficiency, AnalysisError> {
    let p_out = output_power(trace, config.load_ohms);
    let p_in = supply_power(trace, accounting);
    if p_in > 0.0 {
        Ok(Efficiency::Percent(100.0 * p_out / p_in))
    } else if p_out == 0.0 && p_in == 0.0 {
        Ok(Efficiency::Idle)
    } else {
        Err(AnalysisError::UndefinedEfficiency {
            supply_w: p_in,
            output_w: p_out,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub f0_hz: f64,
    pub fs_hz: f64,
    pub record: usize,
    pub seed: u64,
    pub thermal_noise: bool,
    pub temperature_k: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        let fs = signal::DEFAULT_FS_HZ;
        SweepOptions {
            f0_hz: coherent_frequency(800.0, fs, DEFAULT_RECORD),
            fs_hz: fs,
            record: DEFAULT_RECORD,
            seed: 0,
            thermal_noise: false,
            temperature_k: signal::DEFAULT_TEMPERATURE_K,
        }
    }
}

impl SweepOptions {
    pub fn duration_s(&self) -> f64 {
        self.record as f64 / self.fs_hz
    }

    fn sim_options(&self, seed: u64) -> SimOptions {
        SimOptions {
            thermal_noise: self.thermal_noise,
            temperature_k: self.temperature_k,
            seed,
            ..SimOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub level_dbfs: f64,
    /// Sine power into the load at this level.
    pub level_dbm: f64,
    pub sfdr_db: f64,
    pub efficiency: Efficiency,
    /// Mean current per rail, highest voltage first.
    pub i_rail_avg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rails: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Level with the largest mean current on `rail` (index into `rails`).
    pub fn peak_current_level(&self, rail: usize) -> Option<f64> {
        self.rows
            .iter()
            .max_by(|a, b| a.i_rail_avg[rail].total_cmp(&b.i_rail_avg[rail]))
            .map(|r| r.level_dbfs)
    }
}

/// Sine power into the load at `level_dbfs`, in dBm.
pub fn level_to_dbm(model: &DacModel, level_dbfs: f64) -> f64 {
    let peak = model.weights.v_full_scale_loaded() * 10f64.powf(level_dbfs / 20.0);
    watts_to_dbm(peak * peak / (2.0 * model.config.load_ohms))
}

/// One simulate/SFDR/efficiency row per level. A config with non-zero
/// tolerance is perturbed once with `seed` before the sweep.
pub fn level_sweep(
    config: &DacConfig,
    levels: &[f64],
    opts: &SweepOptions,
) -> Result<SweepResult, AnalysisError> {
    let hw = dac::perturb(config, opts.seed)?;
    let model = DacModel::new(&hw)?;
    let rows = levels
        .par_iter()
        .enumerate()
        .map(|(i, &level)| {
            let spec = StimulusSpec::sine(level, opts.f0_hz, opts.duration_s()).with_fs(opts.fs_hz);
            let stream = signal::generate(&spec)?;
            let seed = opts.seed.wrapping_add(i as u64);
            let trace = signal::simulate_model(&stream, &model, opts.fs_hz, &opts.sim_options(seed))?;
            Ok(SweepRow {
                level_dbfs: level,
                level_dbm: level_to_dbm(&model, level),
                sfdr_db: sfdr(&trace.v_out, opts.f0_hz, opts.fs_hz)?,
                efficiency: efficiency(&trace, &hw, Accounting::Signed)?,
                i_rail_avg: trace
                    .rails
                    .iter()
                    .map(|r| r.current.iter().sum::<f64>() / r.current.len() as f64)
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    Ok(SweepResult {
        rails: model.rails.clone(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloResult {
    /// SFDR per trial, indexed by trial number.
    pub sfdr_db: Vec<f64>,
    pub median: f64,
    pub p10: f64,
    pub p90: f64,
}

/// Linear-interpolated percentile of sorted data, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// RNG for one Monte-Carlo trial: the ChaCha stream selects the trial.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Mismatch study: each trial perturbs the (calibrated) config, keeps the
/// ideal encoder, simulates a coherent sine and measures SFDR.
pub fn monte_carlo(
    config: &DacConfig,
    tolerance: f64,
    trials: usize,
    level_dbfs: f64,
    opts: &SweepOptions,
) -> Result<MonteCarloResult, AnalysisError> {
    if trials == 0 {
        return Err(AnalysisError::NoTrials);
    }
    let mut base = config.clone();
    base.tolerance = tolerance;
    base.validate()?;
    let spec = StimulusSpec::sine(level_dbfs, opts.f0_hz, opts.duration_s()).with_fs(opts.fs_hz);
    let stream = signal::generate(&spec)?;
    let n = base.stage_count();
    let words = stream
        .iter()
        .map(|&s| codec::encode_sample(s, n).map(|(d, _)| d))
        .collect::<Result<Vec<DigitVector>, _>>()
        .map_err(SignalError::from)?;
    let sfdr_db = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(opts.seed, trial as u64);
            let hw = dac::perturb_with(&base, &mut rng)?;
            let wt = dac::weights(&hw)?;
            let v: Vec<f64> = words
                .iter()
                .map(|d| {
                    d.iter()
                        .enumerate()
                        .map(|(k, t)| match t {
                            Trit::Pos => wt.loaded.upper[k],
                            Trit::Neg => -wt.loaded.lower[k],
                            Trit::Zero => 0.0,
                        })
                        .sum()
                })
                .collect();
            sfdr(&v, opts.f0_hz, opts.fs_hz)
        })
        .collect::<Result<Vec<f64>, AnalysisError>>()?;
    let mut sorted = sfdr_db.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(MonteCarloResult {
        median: percentile(&sorted, 0.5),
        p10: percentile(&sorted, 0.1),
        p90: percentile(&sorted, 0.9),
        sfdr_db,
    })
}
