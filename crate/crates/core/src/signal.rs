//! Stimulus generation and end-to-end simulation.
//!
//! Samples are 32-bit fixed point with full scale `i32::MAX`. Each sample is
//! scaled, encoded into balanced ternary, split onto the two half-ladders and
//! evaluated through the compiled [`DacModel`].

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::BOLTZMANN;
use crate::codec::{self, CodecError, DigitVector, SAMPLE_FULL_SCALE};
use crate::dac::{DacConfig, DacError, DacModel};

pub const DEFAULT_FS_HZ: f64 = 64_000.0;
pub const DEFAULT_TEMPERATURE_K: f64 = 300.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("stimulus: {0}")]
    Spec(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Dac(#[from] DacError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StimulusKind {
    Sine,
    Burst,
    Click,
    Silence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusSpec {
    pub kind: StimulusKind,
    pub amplitude_dbfs: f64,
    pub frequency_hz: f64,
    pub duration_s: f64,
    pub burst_on_s: f64,
    pub burst_off_s: f64,
    pub fs_hz: f64,
}

impl StimulusSpec {
    pub fn sine(amplitude_dbfs: f64, frequency_hz: f64, duration_s: f64) -> Self {
        StimulusSpec {
            kind: StimulusKind::Sine,
            amplitude_dbfs,
            frequency_hz,
            duration_s,
            burst_on_s: 0.0,
            burst_off_s: 0.0,
            fs_hz: DEFAULT_FS_HZ,
        }
    }

    pub fn burst(
        amplitude_dbfs: f64,
        frequency_hz: f64,
        duration_s: f64,
        on_s: f64,
        off_s: f64,
    ) -> Self {
        StimulusSpec {
            kind: StimulusKind::Burst,
            burst_on_s: on_s,
            burst_off_s: off_s,
            ..Self::sine(amplitude_dbfs, frequency_hz, duration_s)
        }
    }

    pub fn silence(duration_s: f64) -> Self {
        StimulusSpec {
            kind: StimulusKind::Silence,
            ..Self::sine(f64::NEG_INFINITY, 0.0, duration_s)
        }
    }

    pub fn click(amplitude_dbfs: f64, duration_s: f64) -> Self {
        StimulusSpec {
            kind: StimulusKind::Click,
            ..Self::sine(amplitude_dbfs, 0.0, duration_s)
        }
    }

    pub fn with_fs(mut self, fs_hz: f64) -> Self {
        self.fs_hz = fs_hz;
        self
    }

    pub fn sample_count(&self) -> usize {
        (self.duration_s * self.fs_hz).round() as usize
    }

    pub fn amplitude(&self) -> f64 {
        10f64.powf(self.amplitude_dbfs / 20.0)
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        let bad = |m: String| Err(SignalError::Spec(m));
        if !(self.fs_hz > 0.0 && self.fs_hz.is_finite()) {
            return bad(format!("fs_hz must be > 0, got {}", self.fs_hz));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad(format!("duration_s must be > 0, got {}", self.duration_s));
        }
        if self.amplitude_dbfs > 0.0 || self.amplitude_dbfs.is_nan() {
            return bad(format!("amplitude_dbfs must be <= 0, got {}", self.amplitude_dbfs));
        }
        if matches!(self.kind, StimulusKind::Sine | StimulusKind::Burst)
            && !(self.frequency_hz >= 0.0 && self.frequency_hz < self.fs_hz / 2.0)
        {
            return bad(format!(
                "frequency_hz must be in [0, fs/2), got {} at fs {}",
                self.frequency_hz, self.fs_hz
            ));
        }
        if self.kind == StimulusKind::Burst
            && !(self.burst_on_s > 0.0 && self.burst_off_s >= 0.0)
        {
            return bad("burst_on_s must be > 0 and burst_off_s >= 0".into());
        }
        Ok(())
    }
}

/// Fixed-point test stream. Sine phase starts at zero; bursts gate the same
/// continuous sine, starting in the on state.
pub fn generate(spec: &StimulusSpec) -> Result<Vec<i32>, SignalError> {
    spec.validate()?;
    let n = spec.sample_count();
    let a = spec.amplitude() * SAMPLE_FULL_SCALE as f64;
    let sine = |i: usize| {
        let cycles = (spec.frequency_hz * i as f64 / spec.fs_hz).fract();
        (a * (std::f64::consts::TAU * cycles).sin()).round() as i32
    };
    let out = match spec.kind {
        StimulusKind::Silence => vec![0; n],
        StimulusKind::Sine => (0..n).map(sine).collect(),
        StimulusKind::Burst => {
            let period = spec.burst_on_s + spec.burst_off_s;
            (0..n)
                .map(|i| {
                    let t = i as f64 / spec.fs_hz;
                    if t % period < spec.burst_on_s {
                        sine(i)
                    } else {
                        0
                    }
                })
                .collect()
        }
        StimulusKind::Click => {
            let mut v = vec![0; n];
            if let Some(first) = v.first_mut() {
                *first = a.round() as i32;
            }
            v
        }
    };
    Ok(out)
}

/// Current drawn from one supply rail over a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RailTrace {
    pub volts: f64,
    pub current: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub fs_hz: f64,
    /// Differential voltage across the load.
    pub v_out: Vec<f64>,
    /// Rails, highest voltage first.
    pub rails: Vec<RailTrace>,
    /// Number of digit changes per stage over the run.
    pub digit_toggles: Vec<u64>,
    pub leading_zeros: Vec<u8>,
    pub clamp_count: u64,
    pub digits: Option<Vec<DigitVector>>,
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.v_out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_out.is_empty()
    }

    pub fn rail(&self, volts: f64) -> Option<&RailTrace> {
        self.rails.iter().find(|r| r.volts == volts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub thermal_noise: bool,
    pub temperature_k: f64,
    pub seed: u64,
    /// Keep every digit word in the trace (for digit dumps).
    pub keep_digits: bool,
    /// Evaluate rail currents; off skips the per-sample admittance product.
    pub rail_currents: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            thermal_noise: false,
            temperature_k: DEFAULT_TEMPERATURE_K,
            seed: 0,
            keep_digits: false,
            rail_currents: true,
        }
    }
}

/// RMS thermal-noise voltage across the load: the output impedance's
/// Johnson noise `sqrt(4kTBz)` divided down by the load, `B = fs/2`. With a
/// matched load this delivers exactly `kTB`.
pub fn load_noise_rms(z_out: f64, load_ohms: f64, temperature_k: f64, fs_hz: f64) -> f64 {
    let b = fs_hz / 2.0;
    (4.0 * BOLTZMANN * temperature_k * b * z_out).sqrt() * load_ohms / (load_ohms + z_out)
}

pub fn simulate(
    stream: &[i32],
    config: &DacConfig,
    fs_hz: f64,
    opts: &SimOptions,
) -> Result<SimulationTrace, SignalError> {
    let model = DacModel::new(config)?;
    simulate_model(stream, &model, fs_hz, opts)
}

pub fn simulate_model(
    stream: &[i32],
    model: &DacModel,
    fs_hz: f64,
    opts: &SimOptions,
) -> Result<SimulationTrace, SignalError> {
    let n = model.stage_count();
    let mut clamps = 0u64;
    let words = stream.iter().map(|&s| {
        let (d, clamped) = codec::encode_sample(s, n)?;
        clamps += clamped as u64;
        Ok(d)
    });
    let mut trace = run(words, model, fs_hz, opts)?;
    trace.clamp_count = clamps;
    Ok(trace)
}

/// Simulate pre-encoded digit words (e.g. a digit dump).
pub fn simulate_digits(
    words: &[DigitVector],
    config: &DacConfig,
    fs_hz: f64,
    opts: &SimOptions,
) -> Result<SimulationTrace, SignalError> {
    let model = DacModel::new(config)?;
    run(words.iter().cloned().map(Ok), &model, fs_hz, opts)
}

fn run(
    words: impl Iterator<Item = Result<DigitVector, CodecError>>,
    model: &DacModel,
    fs_hz: f64,
    opts: &SimOptions,
) -> Result<SimulationTrace, SignalError> {
    let n = model.stage_count();
    let mut v_out = Vec::new();
    let mut rails: Vec<RailTrace> = model
        .rails
        .iter()
        .map(|&volts| RailTrace {
            volts,
            current: Vec::new(),
        })
        .collect();
    let mut toggles = vec![0u64; n];
    let mut leading_zeros = Vec::new();
    let mut kept = opts.keep_digits.then(Vec::new);
    let mut prev: Option<DigitVector> = None;
    let mut currents = vec![0.0; rails.len()];
    for word in words {
        let d = word?;
        v_out.push(model.output(&d)?);
        if opts.rail_currents {
            model.rail_currents_into(d.trits(), &mut currents);
        }
        for (r, i) in rails.iter_mut().zip(&currents) {
            r.current.push(*i);
        }
        if let Some(p) = &prev {
            for (k, (a, b)) in p.iter().zip(d.iter()).enumerate() {
                toggles[k] += (a != b) as u64;
            }
        }
        leading_zeros.push(codec::leading_zero_count(&d) as u8);
        if let Some(k) = kept.as_mut() {
            k.push(d.clone());
        }
        prev = Some(d);
    }
    if opts.thermal_noise {
        let w = &model.weights;
        let sigma = load_noise_rms(w.z_out, w.load_ohms, opts.temperature_k, fs_hz);
        let normal = Normal::new(0.0, sigma)
            .map_err(|e| SignalError::Spec(format!("noise: {e}")))?;
        let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
        for v in &mut v_out {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(SimulationTrace {
        fs_hz,
        v_out,
        rails,
        digit_toggles: toggles,
        leading_zeros,
        clamp_count: 0,
        digits: kept,
    })
}
