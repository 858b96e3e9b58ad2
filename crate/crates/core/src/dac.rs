//! Ladder DAC models.
//!
//! A [`DacConfig`] describes a differential, single-supply converter as an
//! ordered list of stages. Each stage drives both half-ladders through one
//! SPDT switch per half; the load sits across the two half outputs.
//!
//! Half-ladder layout:
//! - power-of-3 weighted stages connect their switch to the half output
//!   through `r_base / parallel_strings`;
//! - a run of 4R-3R stages with the same `r_base` and supply forms a ladder
//!   section: shunt `3R` from each switch to its node, series `4R` between
//!   nodes and `6R` from the last node to ground, so every node sees `2R`
//!   and each stage weighs a third of the one before;
//! - a ladder section hangs off the half output either directly (its first
//!   node is the output) or through a coupling resistor. Coupling resistors
//!   are the free elements [`calibrate`] adjusts to keep the weight ratio at
//!   exactly 3 across section boundaries, including supply changes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{DigitVector, Trit};
use crate::network::{ResistiveNetwork, Solver, SolverError, GROUND};

/// Weight ratio between consecutive stages.
pub const STAGE_RATIO: f64 = 3.0;

/// Relative accuracy calibration pins boundary ratios to.
pub const CALIBRATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DacError {
    #[error("config: {0}")]
    Config(String),
    #[error("calibration of boundary at stage {stage} unreachable: {reason}")]
    Calibration { stage: usize, reason: String },
    #[error("expected {expected} digits, got {got}")]
    DigitCount { expected: usize, got: usize },
    #[error("invalid digit {digit} for {topology:?}")]
    Digit { digit: i8, topology: TopologyKind },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Power3Weighted,
    #[serde(rename = "ladder_4r3r")]
    Ladder4R3R,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub kind: StageKind,
    pub r_base: f64,
    pub supply_v: f64,
    #[serde(default = "one")]
    pub parallel_strings: u32,
    /// Resistor between the half output and the first node of a ladder
    /// section; ignored on stages that do not start a section.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling_ohms: Option<f64>,
}

fn one() -> u32 {
    1
}

impl StageSpec {
    pub fn weighted(r_base: f64, supply_v: f64, parallel_strings: u32) -> Self {
        StageSpec {
            kind: StageKind::Power3Weighted,
            r_base,
            supply_v,
            parallel_strings,
            coupling_ohms: None,
        }
    }

    pub fn ladder(r_base: f64, supply_v: f64) -> Self {
        StageSpec {
            kind: StageKind::Ladder4R3R,
            r_base,
            supply_v,
            parallel_strings: 1,
            coupling_ohms: None,
        }
    }

    pub fn with_coupling(mut self, ohms: f64) -> Self {
        self.coupling_ohms = Some(ohms);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DacConfig {
    #[serde(rename = "stage")]
    pub stages: Vec<StageSpec>,
    pub load_ohms: f64,
    #[serde(default)]
    pub r_on: f64,
    #[serde(default)]
    pub tolerance: f64,
    /// Per-resistor mismatch multipliers in network build order; empty means
    /// nominal values.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub resistor_scale: Vec<f64>,
}

impl DacConfig {
    pub fn validate(&self) -> Result<(), DacError> {
        let err = |m: String| Err(DacError::Config(m));
        if self.stages.is_empty() {
            return err("stage: at least one stage required".into());
        }
        for (i, s) in self.stages.iter().enumerate() {
            if !(s.r_base > 0.0 && s.r_base.is_finite()) {
                return err(format!("stage[{i}].r_base must be > 0, got {}", s.r_base));
            }
            if !(s.supply_v > 0.0 && s.supply_v.is_finite()) {
                return err(format!("stage[{i}].supply_v must be > 0, got {}", s.supply_v));
            }
            if s.parallel_strings == 0 {
                return err(format!("stage[{i}].parallel_strings must be >= 1"));
            }
            if let Some(c) = s.coupling_ohms {
                if !(c >= 0.0 && c.is_finite()) {
                    return err(format!("stage[{i}].coupling_ohms must be >= 0, got {c}"));
                }
            }
        }
        if !(self.load_ohms > 0.0 && self.load_ohms.is_finite()) {
            return err(format!("load_ohms must be > 0, got {}", self.load_ohms));
        }
        if !(self.r_on >= 0.0 && self.r_on.is_finite()) {
            return err(format!("r_on must be >= 0, got {}", self.r_on));
        }
        if !(0.0..1.0).contains(&self.tolerance) {
            return err(format!("tolerance must be in [0, 1), got {}", self.tolerance));
        }
        if self.resistor_scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return err("resistor_scale entries must be > 0".into());
        }
        Ok(())
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    /// Distinct supply voltages, highest first.
    pub fn rails(&self) -> Vec<f64> {
        let mut rails: Vec<f64> = Vec::new();
        for s in &self.stages {
            if !rails.contains(&s.supply_v) {
                rails.push(s.supply_v);
            }
        }
        rails.sort_by(|a, b| b.total_cmp(a));
        rails
    }

    /// True when stage `k` opens a new ladder section.
    pub fn starts_section(&self, k: usize) -> bool {
        let s = &self.stages[k];
        if s.kind != StageKind::Ladder4R3R {
            return false;
        }
        match k.checked_sub(1).map(|j| &self.stages[j]) {
            None => true,
            Some(p) => p.kind != s.kind || p.r_base != s.r_base || p.supply_v != s.supply_v,
        }
    }

    /// Stages whose coupling resistor calibration adjusts.
    pub fn boundaries(&self) -> Vec<usize> {
        (1..self.stages.len()).filter(|&k| self.starts_section(k)).collect()
    }

    pub fn from_toml_str(text: &str) -> Result<DacConfig, DacError> {
        let cfg: DacConfig =
            toml::from_str(text).map_err(|e| DacError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Build the resistive network; `load` adds a resistor across the port.
    pub fn network(&self, load: Option<f64>) -> Result<DacNetwork, DacError> {
        self.validate()?;
        let mut net = ResistiveNetwork::new();
        let out_p = net.add_node("out_p");
        let out_n = net.add_node("out_n");
        let mut sources = vec![[0usize; 2]; self.stages.len()];
        let mut scale = self.resistor_scale.iter();
        let mut resistor_count = 0usize;
        let mut add = |net: &mut ResistiveNetwork, a, b, ohms: f64| {
            let f = if self.resistor_scale.is_empty() {
                Some(&1.0)
            } else {
                scale.next()
            };
            resistor_count += 1;
            net.add_resistor(a, b, ohms * f.copied().unwrap_or(f64::NAN));
        };
        let n = self.stages.len();
        for (h, (out, tag)) in [(out_p, 'u'), (out_n, 'l')].into_iter().enumerate() {
            let mut prev_node = out;
            for (k, s) in self.stages.iter().enumerate() {
                let sw = net.add_node(format!("sw_{tag}{k}"));
                sources[k][h] = net.add_source(sw, self.r_on, format!("{tag}{k}@{}V", s.supply_v));
                match s.kind {
                    StageKind::Power3Weighted => {
                        for _ in 0..s.parallel_strings {
                            add(&mut net, sw, out, s.r_base);
                        }
                    }
                    StageKind::Ladder4R3R => {
                        let node = if self.starts_section(k) {
                            match s.coupling_ohms {
                                Some(c) if c > 0.0 => {
                                    let node = net.add_node(format!("lad_{tag}{k}"));
                                    add(&mut net, out, node, c);
                                    node
                                }
                                _ => out,
                            }
                        } else {
                            let node = net.add_node(format!("lad_{tag}{k}"));
                            add(&mut net, prev_node, node, 4.0 * s.r_base);
                            node
                        };
                        add(&mut net, sw, node, 3.0 * s.r_base);
                        if k + 1 == n || self.starts_section(k + 1) || self.stages[k + 1].kind != s.kind {
                            add(&mut net, node, GROUND, 6.0 * s.r_base);
                        }
                        prev_node = node;
                    }
                }
            }
        }
        if !self.resistor_scale.is_empty() && self.resistor_scale.len() != resistor_count {
            return Err(DacError::Config(format!(
                "resistor_scale has {} entries, network has {resistor_count} resistors",
                self.resistor_scale.len()
            )));
        }
        net.set_port(out_p, out_n);
        if let Some(r) = load {
            net.add_resistor(out_p, out_n, r);
        }
        Ok(DacNetwork {
            net,
            sources,
            supply_v: self.stages.iter().map(|s| s.supply_v).collect(),
            resistor_count,
        })
    }
}

/// Network of a differential converter plus the stage-to-source map.
#[derive(Debug, Clone)]
pub struct DacNetwork {
    pub net: ResistiveNetwork,
    /// `[upper, lower]` source index per stage.
    pub sources: Vec<[usize; 2]>,
    pub supply_v: Vec<f64>,
    /// Resistors excluding the load.
    pub resistor_count: usize,
}

impl DacNetwork {
    pub fn source_levels(&self, d: &DigitVector) -> Result<Vec<f64>, DacError> {
        check_len(d, self.sources.len())?;
        let mut levels = vec![0.0; self.net.sources().len()];
        for ((src, v), t) in self.sources.iter().zip(&self.supply_v).zip(d.iter()) {
            match t {
                Trit::Pos => levels[src[0]] = *v,
                Trit::Neg => levels[src[1]] = *v,
                Trit::Zero => {}
            }
        }
        Ok(levels)
    }
}

fn check_len(d: &DigitVector, expected: usize) -> Result<(), DacError> {
    if d.len() != expected {
        return Err(DacError::DigitCount {
            expected,
            got: d.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TopologyKind {
    /// Binary R-2R ladder, single-ended, switches between +V and ground.
    R2R,
    /// Single-ended 4R-3R ladder with triple-throw switches (+V, 0, -V).
    Ternary4R3R,
    /// Two 4R-3R half-ladders on one +V supply, load across the outputs.
    Differential4R3R,
    /// Differential ladder whose leading stages are power-of-3 weighted.
    Power3Differential,
}

/// Number of weighted stages the power-of-3 topology uses before its ladder.
pub const POWER3_LEADING_STAGES: usize = 4;

#[derive(Debug, Clone)]
pub struct Topology {
    pub kind: TopologyKind,
    pub net: ResistiveNetwork,
    /// Source index per stage; differential kinds carry `[upper, lower]`.
    pub sources: Vec<[usize; 2]>,
    pub supply_v: f64,
}

impl Topology {
    /// Source levels for one word: bits for R-2R, trits otherwise; index 0 is
    /// the most significant stage.
    pub fn source_levels(&self, digits: &[i8]) -> Result<Vec<f64>, DacError> {
        if digits.len() != self.sources.len() {
            return Err(DacError::DigitCount {
                expected: self.sources.len(),
                got: digits.len(),
            });
        }
        let mut levels = vec![0.0; self.net.sources().len()];
        let v = self.supply_v;
        for (src, &d) in self.sources.iter().zip(digits) {
            let bad = DacError::Digit {
                digit: d,
                topology: self.kind,
            };
            match self.kind {
                TopologyKind::R2R => match d {
                    0 | 1 => levels[src[0]] = d as f64 * v,
                    _ => return Err(bad),
                },
                TopologyKind::Ternary4R3R => match d {
                    -1..=1 => levels[src[0]] = d as f64 * v,
                    _ => return Err(bad),
                },
                _ => match d {
                    1 => levels[src[0]] = v,
                    -1 => levels[src[1]] = v,
                    0 => {}
                    _ => return Err(bad),
                },
            }
        }
        Ok(levels)
    }
}

/// Build one of the reference topologies with unit resistance `r` and
/// reference voltage `v`.
pub fn build_topology(
    kind: TopologyKind,
    stage_count: usize,
    r: f64,
    v: f64,
) -> Result<Topology, DacError> {
    if stage_count == 0 {
        return Err(DacError::Config("stage_count must be >= 1".into()));
    }
    if !(r > 0.0 && v > 0.0) {
        return Err(DacError::Config("r and v must be > 0".into()));
    }
    let single_ended = |shunt: f64, series: f64, term: f64| {
        let mut net = ResistiveNetwork::new();
        let mut sources = Vec::with_capacity(stage_count);
        let mut prev = None;
        let mut out = GROUND;
        for k in 0..stage_count {
            let node = net.add_node(format!("n{k}"));
            let sw = net.add_node(format!("sw{k}"));
            sources.push([net.add_source(sw, 0.0, format!("s{k}")); 2]);
            net.add_resistor(sw, node, shunt);
            match prev {
                None => out = node,
                Some(p) => {
                    net.add_resistor(p, node, series);
                }
            }
            prev = Some(node);
        }
        net.add_resistor(prev.unwrap(), GROUND, term);
        net.set_port(out, GROUND);
        (net, sources)
    };
    let (net, sources) = match kind {
        TopologyKind::R2R => single_ended(2.0 * r, r, 2.0 * r),
        TopologyKind::Ternary4R3R => single_ended(3.0 * r, 4.0 * r, 6.0 * r),
        TopologyKind::Differential4R3R => {
            let cfg = DacConfig {
                stages: vec![StageSpec::ladder(r, v); stage_count],
                load_ohms: 1.0,
                r_on: 0.0,
                tolerance: 0.0,
                resistor_scale: Vec::new(),
            };
            let dn = cfg.network(None)?;
            (dn.net, dn.sources)
        }
        TopologyKind::Power3Differential => {
            let cfg = power3_config(stage_count, r, v, 1.0);
            let mut dn = cfg.network(None)?;
            if stage_count <= POWER3_LEADING_STAGES {
                // No ladder tail: terminate each half with the remainder of
                // the geometric series, 2x the last weighted resistor.
                let term = 2.0 * cfg.stages[stage_count - 1].r_base;
                let (p, n) = dn.net.port().expect("port set");
                dn.net.add_resistor(p, GROUND, term);
                dn.net.add_resistor(n, GROUND, term);
            }
            (dn.net, dn.sources)
        }
    };
    Ok(Topology {
        kind,
        net,
        sources,
        supply_v: v,
    })
}

/// Leading power-of-3 weighted stages (`R, 3R, 9R, 27R`) continued by a
/// 4R-3R ladder whose node impedance matches the remaining geometric tail.
pub fn power3_config(stage_count: usize, r: f64, v: f64, load_ohms: f64) -> DacConfig {
    let m = stage_count.min(POWER3_LEADING_STAGES);
    let mut stages: Vec<StageSpec> = (0..m)
        .map(|k| StageSpec::weighted(r * 3f64.powi(k as i32), v, 1))
        .collect();
    let ladder_r = r * 3f64.powi(m as i32 - 1);
    stages.extend((m..stage_count).map(|_| StageSpec::ladder(ladder_r, v)));
    DacConfig {
        stages,
        load_ohms,
        r_on: 0.0,
        tolerance: 0.0,
        resistor_scale: Vec::new(),
    }
}

/// Default 20-stage prototype: two high-current stages built from 100 Ω
/// strings (9 and 3 in parallel), four weighted stages of 100/300/900/2700 Ω,
/// six 4R-3R stages at R = 2 kΩ (6k/8k), all on 90 V, then eight 4R-3R
/// stages at R = 5 kΩ (15k/20k) on 12 V. Coupling resistors carry nearby
/// standard values until [`calibrate`] pins them.
pub fn build_prototype() -> DacConfig {
    let mut stages = vec![
        StageSpec::weighted(100.0, 90.0, 9),
        StageSpec::weighted(100.0, 90.0, 3),
        StageSpec::weighted(100.0, 90.0, 1),
        StageSpec::weighted(300.0, 90.0, 1),
        StageSpec::weighted(900.0, 90.0, 1),
        StageSpec::weighted(2700.0, 90.0, 1),
    ];
    stages.push(StageSpec::ladder(2000.0, 90.0).with_coupling(1500.0));
    stages.extend(std::iter::repeat_n(StageSpec::ladder(2000.0, 90.0), 5));
    stages.push(StageSpec::ladder(5000.0, 12.0).with_coupling(510_000.0));
    stages.extend(std::iter::repeat_n(StageSpec::ladder(5000.0, 12.0), 7));
    DacConfig {
        stages,
        load_ohms: 32.0,
        r_on: 0.0,
        tolerance: 0.05,
        resistor_scale: Vec::new(),
    }
}

/// Prototype with its boundaries calibrated.
pub fn calibrated_prototype() -> DacConfig {
    calibrate(&build_prototype()).expect("prototype calibrates")
}

fn open_stage_weight(solver: &Solver, dn: &DacNetwork, k: usize) -> Result<f64, DacError> {
    let mut levels = vec![0.0; dn.net.sources().len()];
    levels[dn.sources[k][0]] = dn.supply_v[k];
    Ok(solver.port_voltage(&solver.solve(&levels)?)?)
}

fn boundary_ratio(cfg: &DacConfig, k: usize) -> Result<f64, DacError> {
    let dn = cfg.network(None)?;
    let solver = Solver::new(&dn.net)?;
    Ok(open_stage_weight(&solver, &dn, k - 1)? / open_stage_weight(&solver, &dn, k)?)
}

/// Adjust every section-boundary coupling resistor so the weight ratio
/// across it is exactly [`STAGE_RATIO`]. The ratio grows monotonically with
/// the coupling resistance, so each boundary is a bracketed 1-D root search
/// in log-resistance. Boundaries already within tolerance are left alone.
pub fn calibrate(config: &DacConfig) -> Result<DacConfig, DacError> {
    config.validate()?;
    let mut cfg = config.clone();
    for k in cfg.boundaries() {
        let ratio_at = |cfg: &mut DacConfig, ohms: f64| {
            cfg.stages[k].coupling_ohms = Some(ohms);
            boundary_ratio(cfg, k)
        };
        let start = cfg.stages[k].coupling_ohms.unwrap_or(0.0);
        let current = boundary_ratio(&cfg, k)?;
        if (current / STAGE_RATIO - 1.0).abs() <= 1e-12 {
            continue;
        }
        let direct = ratio_at(&mut cfg, 0.0)?;
        if direct > STAGE_RATIO {
            return Err(DacError::Calibration {
                stage: k,
                reason: format!(
                    "ratio is {direct:.6} with the section connected directly; \
                     the stage is too weak for any positive coupling resistance"
                ),
            });
        }
        if (direct / STAGE_RATIO - 1.0).abs() <= 1e-12 {
            continue;
        }
        // Bracket in log-space.
        let mut hi = if start > 0.0 { start } else { cfg.stages[k].r_base };
        let mut lo = hi;
        while ratio_at(&mut cfg, hi)? < STAGE_RATIO {
            hi *= 4.0;
            if hi > 1e18 {
                return Err(DacError::Calibration {
                    stage: k,
                    reason: "no coupling resistance up to 1e18 Ω reaches the ratio".into(),
                });
            }
        }
        while ratio_at(&mut cfg, lo)? > STAGE_RATIO {
            lo /= 4.0;
            if lo < 1e-12 {
                return Err(DacError::Calibration {
                    stage: k,
                    reason: "no coupling resistance above 1e-12 Ω reaches the ratio".into(),
                });
            }
        }
        // Illinois regula falsi on ln(ohms).
        let (mut a, mut b) = (lo.ln(), hi.ln());
        let mut fa = ratio_at(&mut cfg, a.exp())? - STAGE_RATIO;
        let mut fb = ratio_at(&mut cfg, b.exp())? - STAGE_RATIO;
        let mut side = 0i8;
        let mut best = if fa.abs() < fb.abs() { (a, fa) } else { (b, fb) };
        for _ in 0..200 {
            if (best.1 / STAGE_RATIO).abs() <= 1e-14 || (b - a).abs() < 1e-15 {
                break;
            }
            let c = (a * fb - b * fa) / (fb - fa);
            let fc = ratio_at(&mut cfg, c.exp())? - STAGE_RATIO;
            if fc.abs() < best.1.abs() {
                best = (c, fc);
            }
            if fc.signum() == fb.signum() {
                b = c;
                fb = fc;
                if side == 1 {
                    fa /= 2.0;
                }
                side = 1;
            } else {
                a = c;
                fa = fc;
                if side == -1 {
                    fb /= 2.0;
                }
                side = -1;
            }
        }
        cfg.stages[k].coupling_ohms = Some(best.0.exp());
        if (best.1 / STAGE_RATIO).abs() > CALIBRATION_TOLERANCE {
            return Err(DacError::Calibration {
                stage: k,
                reason: format!("root search stalled at ratio {}", best.1 + STAGE_RATIO),
            });
        }
    }
    Ok(cfg)
}

/// Per-stage port voltage for a +1 digit (upper half driven) and the
/// magnitude for a -1 digit (lower half driven).
#[derive(Debug, Clone, PartialEq)]
pub struct StageWeights {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    /// Open-circuit differential weights.
    pub open: StageWeights,
    /// Weights with the configured load across the port.
    pub loaded: StageWeights,
    pub z_out: f64,
    /// Open-circuit output with every digit +1.
    pub v_full_scale: f64,
    pub load_ohms: f64,
}

impl WeightTable {
    /// Open-circuit weights of the upper half.
    pub fn w(&self) -> &[f64] {
        &self.open.upper
    }

    pub fn stage_count(&self) -> usize {
        self.open.upper.len()
    }

    /// `w[k] / w[k+1]` for every boundary.
    pub fn ratios(&self) -> Vec<f64> {
        self.w().windows(2).map(|p| p[0] / p[1]).collect()
    }

    pub fn attenuation_db(&self) -> Vec<f64> {
        self.ratios().iter().map(|r| 20.0 * r.log10()).collect()
    }

    /// Loaded full-scale peak.
    pub fn v_full_scale_loaded(&self) -> f64 {
        self.loaded.upper.iter().sum()
    }
}

fn stage_weights(solver: &Solver, dn: &DacNetwork) -> Result<StageWeights, DacError> {
    let per_volt = solver.superposition_weights()?;
    let upper = dn
        .sources
        .iter()
        .zip(&dn.supply_v)
        .map(|(s, v)| v * per_volt[s[0]])
        .collect();
    let lower = dn
        .sources
        .iter()
        .zip(&dn.supply_v)
        .map(|(s, v)| -v * per_volt[s[1]])
        .collect();
    Ok(StageWeights { upper, lower })
}

pub fn weights(config: &DacConfig) -> Result<WeightTable, DacError> {
    let open = config.network(None)?;
    let open_solver = Solver::new(&open.net)?;
    let loaded = config.network(Some(config.load_ohms))?;
    let loaded_solver = Solver::new(&loaded.net)?;
    let open_w = stage_weights(&open_solver, &open)?;
    let z_out = open_solver
        .thevenin(&vec![0.0; open.net.sources().len()])?
        .z_out;
    let v_full_scale = open_w.upper.iter().sum();
    Ok(WeightTable {
        open: open_w,
        loaded: stage_weights(&loaded_solver, &loaded)?,
        z_out,
        v_full_scale,
        load_ohms: config.load_ohms,
    })
}

/// Output across the load: weighted sum of the digit vector.
pub fn dac_output(d: &DigitVector, wt: &WeightTable) -> Result<f64, DacError> {
    check_len(d, wt.stage_count())?;
    Ok(d
        .iter()
        .enumerate()
        .map(|(k, t)| match t {
            Trit::Pos => wt.loaded.upper[k],
            Trit::Neg => -wt.loaded.lower[k],
            Trit::Zero => 0.0,
        })
        .sum())
}

/// Signed current drawn from each rail (ordered as [`DacConfig::rails`]),
/// from a direct MNA solve of the switch state with the load attached.
pub fn supply_currents(d: &DigitVector, config: &DacConfig) -> Result<Vec<f64>, DacError> {
    supply_currents_with_load(d, config, Some(config.load_ohms))
}

pub fn supply_currents_with_load(
    d: &DigitVector,
    config: &DacConfig,
    load: Option<f64>,
) -> Result<Vec<f64>, DacError> {
    let dn = config.network(load)?;
    let solver = Solver::new(&dn.net)?;
    let levels = dn.source_levels(d)?;
    let sol = solver.solve(&levels)?;
    let rails = config.rails();
    let mut out = vec![0.0; rails.len()];
    for (src, v) in dn.sources.iter().zip(&dn.supply_v) {
        let r = rails.iter().position(|x| x == v).unwrap();
        for &i in src {
            if levels[i] != 0.0 {
                out[r] += sol.source_currents[i];
            }
        }
    }
    Ok(out)
}

/// Port voltage of a switch state by direct MNA solve (load attached).
pub fn solve_output(d: &DigitVector, config: &DacConfig) -> Result<f64, DacError> {
    let dn = config.network(Some(config.load_ohms))?;
    let solver = Solver::new(&dn.net)?;
    Ok(solver.port_voltage(&solver.solve(&dn.source_levels(d)?)?)?)
}

/// Multiply every resistor by an independent `1 + u`, `u ~ U[-tol, +tol]`.
pub fn perturb(config: &DacConfig, seed: u64) -> Result<DacConfig, DacError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    perturb_with(config, &mut rng)
}

pub fn perturb_with<R: Rng>(config: &DacConfig, rng: &mut R) -> Result<DacConfig, DacError> {
    let tol = config.tolerance;
    if tol == 0.0 {
        return Ok(config.clone());
    }
    let count = config.network(None)?.resistor_count;
    let base = if config.resistor_scale.is_empty() {
        vec![1.0; count]
    } else {
        config.resistor_scale.clone()
    };
    let mut cfg = config.clone();
    cfg.resistor_scale = base
        .into_iter()
        .map(|s| s * (1.0 + rng.random_range(-tol..=tol)))
        .collect();
    Ok(cfg)
}

/// Compiled converter: weight table plus the source admittance matrix, so
/// per-sample output and rail currents need no linear solve.
#[derive(Debug, Clone)]
pub struct DacModel {
    pub config: DacConfig,
    pub weights: WeightTable,
    pub rails: Vec<f64>,
    sources: Vec<[usize; 2]>,
    source_rail: Vec<usize>,
    source_volts: Vec<f64>,
    admittance: Vec<Vec<f64>>,
}

impl DacModel {
    pub fn new(config: &DacConfig) -> Result<DacModel, DacError> {
        let weights = weights(config)?;
        let dn = config.network(Some(config.load_ohms))?;
        let admittance = Solver::new(&dn.net)?.source_admittance()?;
        let rails = config.rails();
        let m = dn.net.sources().len();
        let mut source_rail = vec![0; m];
        let mut source_volts = vec![0.0; m];
        for (src, v) in dn.sources.iter().zip(&dn.supply_v) {
            for &i in src {
                source_rail[i] = rails.iter().position(|x| x == v).unwrap();
                source_volts[i] = *v;
            }
        }
        Ok(DacModel {
            config: config.clone(),
            weights,
            rails,
            sources: dn.sources,
            source_rail,
            source_volts,
            admittance,
        })
    }

    pub fn stage_count(&self) -> usize {
        self.sources.len()
    }

    pub fn output(&self, d: &DigitVector) -> Result<f64, DacError> {
        dac_output(d, &self.weights)
    }

    /// Rail currents through the precomputed admittance matrix.
    pub fn rail_currents(&self, d: &DigitVector) -> Result<Vec<f64>, DacError> {
        check_len(d, self.sources.len())?;
        let mut out = vec![0.0; self.rails.len()];
        self.rail_currents_into(d.trits(), &mut out);
        Ok(out)
    }

    pub(crate) fn rail_currents_into(&self, d: &[Trit], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        let active = d.iter().zip(&self.sources).filter_map(|(t, s)| match t {
            Trit::Pos => Some(s[0]),
            Trit::Neg => Some(s[1]),
            Trit::Zero => None,
        });
        let active: Vec<usize> = active.collect();
        for &j in &active {
            let row = &self.admittance[j];
            let i: f64 = active.iter().map(|&i| row[i] * self.source_volts[i]).sum();
            out[self.source_rail[j]] += i;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{from_balanced_ternary, to_balanced_ternary};
    use crate::network::thevenin;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn reference_impedances() {
        for &r in &[100.0, 1000.0] {
            let t = build_topology(TopologyKind::R2R, 8, r, 5.0).unwrap();
            let zeros = vec![0.0; t.net.sources().len()];
            assert!(rel(thevenin(&t.net, &zeros).unwrap().z_out, r) < 1e-9);
            let t = build_topology(TopologyKind::Ternary4R3R, 8, r, 5.0).unwrap();
            assert!(rel(thevenin(&t.net, &zeros).unwrap().z_out, 2.0 * r) < 1e-9);
            let t = build_topology(TopologyKind::Power3Differential, 8, r, 5.0).unwrap();
            let zeros = vec![0.0; t.net.sources().len()];
            assert!(rel(thevenin(&t.net, &zeros).unwrap().z_out, 4.0 * r / 3.0) < 1e-9);
            let t = build_topology(TopologyKind::Differential4R3R, 8, r, 5.0).unwrap();
            assert!(rel(thevenin(&t.net, &zeros).unwrap().z_out, 4.0 * r) < 1e-9);
        }
    }

    #[test]
    fn r2r_limits() {
        let t = build_topology(TopologyKind::R2R, 10, 1000.0, 5.0).unwrap();
        let solver = Solver::new(&t.net).unwrap();
        let v = |bits: &[i8]| {
            let l = t.source_levels(bits).unwrap();
            solver.port_voltage(&solver.solve(&l).unwrap()).unwrap()
        };
        assert_eq!(v(&[0; 10]), 0.0);
        let fs = v(&[1; 10]);
        assert!(rel(fs, 5.0 * (1.0 - 2f64.powi(-10))) < 1e-12);
        assert!(matches!(t.source_levels(&[2; 10]), Err(DacError::Digit { digit: 2, .. })));
    }

    #[test]
    fn ternary_swing_and_levels() {
        let t = build_topology(TopologyKind::Ternary4R3R, 10, 1000.0, 1.0).unwrap();
        let solver = Solver::new(&t.net).unwrap();
        let v = |d: &[i8]| {
            let l = t.source_levels(d).unwrap();
            solver.port_voltage(&solver.solve(&l).unwrap()).unwrap()
        };
        let pp = v(&[1; 10]) - v(&[-1; 10]);
        assert!(rel(pp, 2.0) < 0.01);
        // 3^10 distinct, evenly spaced levels
        let lsb = v(&[0, 0, 0, 0, 0, 0, 0, 0, 0, 1]);
        let bound = crate::codec::max_magnitude(10).unwrap();
        assert_eq!(2 * bound + 1, 59_049);
        for t_val in [-bound, -777, 0, 5, 12345, bound] {
            let d = to_balanced_ternary(t_val, 10).unwrap();
            let raw: Vec<i8> = d.iter().map(|x| x.value()).collect();
            assert!((v(&raw) - t_val as f64 * lsb).abs() < 1e-12);
        }
    }

    #[test]
    fn power3_small_stage_counts_are_terminated() {
        for n in 1..=5 {
            let t = build_topology(TopologyKind::Power3Differential, n, 600.0, 1.0).unwrap();
            let zeros = vec![0.0; t.net.sources().len()];
            assert!(rel(thevenin(&t.net, &zeros).unwrap().z_out, 800.0) < 1e-9, "n={n}");
        }
        assert!(build_topology(TopologyKind::R2R, 0, 1.0, 1.0).is_err());
    }

    #[test]
    fn prototype_calibrates_to_exact_ratios() {
        let cal = calibrated_prototype();
        let wt = weights(&cal).unwrap();
        assert_eq!(wt.stage_count(), 20);
        for (k, r) in wt.ratios().iter().enumerate() {
            assert!(rel(*r, 3.0) < 1e-9, "boundary {k}: {r}");
        }
        // analytic couplings for the nominal values
        assert!(rel(cal.stages[6].coupling_ohms.unwrap(), 1400.0) < 1e-8);
        assert!(rel(cal.stages[12].coupling_ohms.unwrap(), 514_880.0) < 1e-8);
        assert!((wt.z_out - 15.0).abs() < 1.5);
        assert!(rel(2.0 * wt.v_full_scale, 180.0) < 0.01);
    }

    #[test]
    fn calibrate_is_fixed_point() {
        let cal = calibrated_prototype();
        assert_eq!(calibrate(&cal).unwrap(), cal);
        let ladder = power3_config(8, 100.0, 10.0, 32.0);
        assert_eq!(calibrate(&ladder).unwrap(), ladder);
    }

    #[test]
    fn calibration_reports_unreachable_boundary() {
        let mut cfg = build_prototype();
        for s in &mut cfg.stages[12..] {
            s.supply_v = 1e-6;
        }
        match calibrate(&cfg) {
            Err(DacError::Calibration { stage, .. }) => assert_eq!(stage, 12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_state_is_silent() {
        let cal = calibrated_prototype();
        let z = DigitVector::zeros(20);
        assert_eq!(supply_currents(&z, &cal).unwrap(), vec![0.0, 0.0]);
        assert_eq!(solve_output(&z, &cal).unwrap(), 0.0);
        let wt = weights(&cal).unwrap();
        assert_eq!(dac_output(&z, &wt).unwrap(), 0.0);
    }

    #[test]
    fn negation_symmetry() {
        let cal = calibrated_prototype();
        let model = DacModel::new(&cal).unwrap();
        for t in [1i64, 17, -400_000, 1_000_000_000] {
            let d = to_balanced_ternary(t, 20).unwrap();
            let n = d.negated();
            let (a, b) = (model.output(&d).unwrap(), model.output(&n).unwrap());
            assert!((a + b).abs() <= 1e-12 * a.abs());
            let a = supply_currents(&d, &cal).unwrap();
            let b = supply_currents(&n, &cal).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-12));
            }
        }
    }

    /// Series-parallel reduction of the nominal prototype half-ladder seen
    /// from the MSB source with everything else grounded and the load open.
    #[test]
    fn msb_current_matches_hand_reduction() {
        let cal = calibrated_prototype();
        let ladder_z = |r: f64, n: usize| {
            // node impedance looking into an n-stage section from its top
            let mut z = 6.0 * r;
            for i in 0..n {
                let shunt = 3.0 * r;
                z = 1.0 / (1.0 / shunt + 1.0 / z);
                if i + 1 < n {
                    z += 4.0 * r;
                }
            }
            z
        };
        let c1 = cal.stages[6].coupling_ohms.unwrap();
        let c2 = cal.stages[12].coupling_ohms.unwrap();
        let g_rest = 3.0 / 100.0
            + 1.0 / 100.0
            + 1.0 / 300.0
            + 1.0 / 900.0
            + 1.0 / 2700.0
            + 1.0 / (c1 + ladder_z(2000.0, 6))
            + 1.0 / (c2 + ladder_z(5000.0, 8));
        let r_seen = 100.0 / 9.0 + 1.0 / g_rest;
        let mut digits = vec![0i8; 20];
        digits[0] = 1;
        let d = DigitVector::from_i8s(&digits).unwrap();
        let i = supply_currents_with_load(&d, &cal, None).unwrap();
        assert!(rel(i[0], 90.0 / r_seen) < 1e-9);
        assert_eq!(i[1], 0.0);
    }

    #[test]
    fn fast_rail_currents_match_mna() {
        let cal = calibrated_prototype();
        let model = DacModel::new(&cal).unwrap();
        for t in [5i64, -1_000_000, 1_743_392_200, 123_456_789] {
            let d = to_balanced_ternary(t, 20).unwrap();
            let fast = model.rail_currents(&d).unwrap();
            let direct = supply_currents(&d, &cal).unwrap();
            for (a, b) in fast.iter().zip(&direct) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-9));
            }
            let v = solve_output(&d, &cal).unwrap();
            assert!((model.output(&d).unwrap() - v).abs() <= 1e-9 * v.abs());
        }
    }

    #[test]
    fn monotone_six_stage_exhaustive() {
        let cfg = power3_config(6, 100.0, 12.0, 32.0);
        let wt = weights(&cfg).unwrap();
        let bound = crate::codec::max_magnitude(6).unwrap();
        let mut last = f64::NEG_INFINITY;
        for t in -bound..=bound {
            let d = to_balanced_ternary(t, 6).unwrap();
            assert_eq!(from_balanced_ternary(&d).unwrap().value(), t);
            let v = dac_output(&d, &wt).unwrap();
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn perturbation_contract() {
        let cal = calibrated_prototype();
        let mut zero = cal.clone();
        zero.tolerance = 0.0;
        assert_eq!(perturb(&zero, 9).unwrap(), zero);
        let a = perturb(&cal, 42).unwrap();
        assert_eq!(a, perturb(&cal, 42).unwrap());
        assert_ne!(a, perturb(&cal, 43).unwrap());
        let nominal = cal.network(None).unwrap();
        let pert = a.network(None).unwrap();
        assert_eq!(a.resistor_scale.len(), nominal.resistor_count);
        for (p, n) in pert.net.resistors().iter().zip(nominal.net.resistors()) {
            assert!(rel(p.ohms, n.ohms) <= 0.05 + 1e-12);
        }
    }

    #[test]
    fn config_toml_roundtrip_and_errors() {
        let cal = calibrated_prototype();
        let text = cal.to_toml_string();
        assert_eq!(DacConfig::from_toml_str(&text).unwrap(), cal);
        let bad = text.replacen("r_base = 100.0", "r_base = -1.0", 1);
        match DacConfig::from_toml_str(&bad) {
            Err(DacError::Config(m)) => assert!(m.contains("stage[0].r_base"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
        let missing = "load_ohms = 32.0\n";
        assert!(matches!(DacConfig::from_toml_str(missing), Err(DacError::Config(_))));
    }
}
