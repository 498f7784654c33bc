//! Scenario files.
//!
//! Every key has a default taken from the reference parameter set, so an
//! empty file describes the reference pulsed scenario. Times marked
//! "time unit" are in round trips when `run.time_unit = "tau"` and in
//! seconds when it is `"seconds"`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use opoherald::filter::FilterConfig;
use opoherald::herald::{
    DetectionChain, HeraldScenario, OptimizeOptions, TriggerResolution, TriggerWindow, WindowOffset,
};
use opoherald::opo::{calibrate_cw_flux, OpoConfig, REFERENCE_R2_SQ, REFERENCE_T1_SQ, REFERENCE_TAU};

use crate::CliError;

const POWER_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioFile {
    pub opo: OpoSection,
    pub pump: PumpSection,
    pub chain: ChainSection,
    pub window: WindowSection,
    pub sweep: SweepSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpoSection {
    /// Power transmission of the output coupler.
    pub t1_sq: f64,
    /// Optional reflectance of the output coupler; must satisfy `t1² + r1² = 1`.
    pub r1_sq: Option<f64>,
    /// Optional transmission of the loss element; must satisfy `t2² + r2² = 1`.
    pub t2_sq: Option<f64>,
    /// Power loss per round trip.
    pub r2_sq: f64,
    /// Round-trip time in seconds.
    pub tau: f64,
    /// Output coupler fully transmitting (`t1² = 1`).
    pub single_pass: bool,
}

impl Default for OpoSection {
    fn default() -> Self {
        Self {
            t1_sq: REFERENCE_T1_SQ,
            r1_sq: None,
            t2_sq: None,
            r2_sq: REFERENCE_R2_SQ,
            tau: REFERENCE_TAU,
            single_pass: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PumpKind {
    Pulsed,
    Cw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PumpSection {
    pub kind: PumpKind,
    /// Pulse area parameter.
    pub s: f64,
    /// Pulse width (time unit).
    pub tp: f64,
    /// Constant squeezing per pass; if absent a CW pump is calibrated to `flux`.
    pub z: Option<f64>,
    /// Target degenerate-mode photon flux in s⁻¹ for CW calibration.
    pub flux: f64,
}

impl Default for PumpSection {
    fn default() -> Self {
        Self {
            kind: PumpKind::Pulsed,
            s: 0.05,
            tp: 3.0,
            z: None,
            flux: 2e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainSection {
    /// Tap reflectance towards the trigger arm.
    #[serde(rename = "R")]
    pub tap: f64,
    pub eta_t: f64,
    pub eta_s: f64,
    /// Filter bandwidth `2κ` in s⁻¹ for a symmetric filter.
    pub bandwidth: f64,
    /// Optional asymmetric coupling rates in s⁻¹, overriding `bandwidth`.
    pub kappa1: Option<f64>,
    pub kappa2: Option<f64>,
}

impl Default for ChainSection {
    fn default() -> Self {
        Self {
            tap: 0.05,
            eta_t: 0.07,
            eta_s: 0.70,
            bandwidth: opoherald::filter::REFERENCE_BANDWIDTH,
            kappa1: None,
            kappa2: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OffsetSpec {
    /// Window start (time unit), relative to the pump peak for pulses.
    Start(f64),
    /// `"max-probability"`.
    Named(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    Continuous,
    Binned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSection {
    /// Acceptance interval duration (time unit).
    #[serde(rename = "T")]
    pub duration: f64,
    pub offset: OffsetSpec,
    pub resolution: Resolution,
}

impl Default for WindowSection {
    fn default() -> Self {
        Self {
            duration: 32.4,
            offset: OffsetSpec::Named("max-probability".into()),
            resolution: Resolution::Continuous,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    Tau,
    Seconds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub time_unit: TimeUnit,
    /// Signal mode for `evaluate`: a built-in candidate name.
    pub mode: String,
    /// Two-column `(t_seconds, amplitude)` file used instead of `mode`.
    pub mode_file: Option<PathBuf>,
    pub grid_m: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        let opt = OptimizeOptions::default();
        Self {
            time_unit: TimeUnit::Tau,
            mode: "cah".into(),
            mode_file: None,
            grid_m: 8,
            seed: 0,
            restarts: opt.random_restarts,
            max_iterations: opt.max_iterations,
            tolerance: opt.tolerance,
        }
    }
}

/// Axes of a sweep. Empty axes keep the base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    #[serde(rename = "T")]
    pub duration: Vec<f64>,
    pub s: Vec<f64>,
    pub tp: Vec<f64>,
    pub z: Vec<f64>,
    pub single_pass: Vec<bool>,
    /// `"optimize"` (default) or a candidate name.
    pub mode: Option<String>,
}

/// One point of a sweep grid, all times in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub duration: f64,
    pub s: f64,
    pub tp: f64,
    pub z: Option<f64>,
    pub single_pass: bool,
}

impl GridPoint {
    pub fn key(&self) -> String {
        let z = self.z.map_or("-".to_string(), |z| format!("{z:e}"));
        format!(
            "T={:e};s={:e};tp={:e};z={z};single_pass={}",
            self.duration, self.s, self.tp, self.single_pass
        )
    }
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut file = Self::parse(&text)?;
        // Relative mode files are taken from the directory of the scenario file.
        if let (Some(mode), Some(dir)) = (&file.run.mode_file, path.parent()) {
            if mode.is_relative() {
                file.run.mode_file = Some(dir.join(mode));
            }
        }
        Ok(file)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let file: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        file.check()?;
        Ok(file)
    }

    fn check(&self) -> Result<(), CliError> {
        let o = &self.opo;
        if let Some(r1) = o.r1_sq {
            if (o.t1_sq + r1 - 1.0).abs() > POWER_TOL {
                return Err(CliError::Config(format!(
                    "opo.r1_sq: t1_sq + r1_sq = {} must equal 1",
                    o.t1_sq + r1
                )));
            }
        }
        if let Some(t2) = o.t2_sq {
            if (t2 + o.r2_sq - 1.0).abs() > POWER_TOL {
                return Err(CliError::Config(format!(
                    "opo.t2_sq: t2_sq + r2_sq = {} must equal 1",
                    t2 + o.r2_sq
                )));
            }
        }
        let c = &self.chain;
        for (key, v) in [
            ("opo.t1_sq", o.t1_sq),
            ("opo.r2_sq", o.r2_sq),
            ("chain.R", c.tap),
            ("chain.eta_t", c.eta_t),
            ("chain.eta_s", c.eta_s),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CliError::Config(format!("{key} = {v} is outside [0, 1]")));
            }
        }
        let p = &self.pump;
        for (key, v) in [("pump.s", Some(p.s)), ("pump.z", p.z)] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(CliError::Config(format!("{key} = {v} must be non-negative")));
                }
            }
        }
        for (key, v) in [
            ("pump.tp", p.tp),
            ("pump.flux", p.flux),
            ("chain.bandwidth", c.bandwidth),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Config(format!("{key} = {v} must be positive")));
            }
        }
        if !(o.tau > 0.0 && o.tau.is_finite()) {
            return Err(CliError::Config(format!("opo.tau = {} must be positive", o.tau)));
        }
        if self.run.grid_m < 4 {
            return Err(CliError::Config(format!(
                "run.grid_m = {} must be at least 4",
                self.run.grid_m
            )));
        }
        if let OffsetSpec::Named(name) = &self.window.offset {
            if name != "max-probability" {
                return Err(CliError::Config(format!(
                    "window.offset: expected a number or \"max-probability\", got \"{name}\""
                )));
            }
        }
        if self.window.duration <= 0.0 {
            return Err(CliError::Config(format!(
                "window.T = {} must be positive",
                self.window.duration
            )));
        }
        if let Some(m) = &self.sweep.mode {
            if m != "optimize" && !CANDIDATES.contains(&m.as_str()) {
                return Err(CliError::Config(format!("sweep.mode: unknown mode \"{m}\"")));
            }
        }
        if self.run.mode_file.is_none() && !CANDIDATES.contains(&self.run.mode.as_str()) {
            return Err(CliError::Config(format!(
                "run.mode: unknown candidate \"{}\"",
                self.run.mode
            )));
        }
        Ok(())
    }

    /// SHA-256 of the normalized configuration.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("scenario serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn seconds(&self, t: f64) -> f64 {
        match self.run.time_unit {
            TimeUnit::Tau => t * self.opo.tau,
            TimeUnit::Seconds => t,
        }
    }

    /// The base point of the scenario, in seconds.
    pub fn base_point(&self) -> GridPoint {
        GridPoint {
            duration: self.seconds(self.window.duration),
            s: self.pump.s,
            tp: self.seconds(self.pump.tp),
            z: self.pump.z,
            single_pass: self.opo.single_pass,
        }
    }

    /// Cartesian product of the sweep axes, outermost axis first in the
    /// order `single_pass, s, z, tp, T`.
    pub fn grid(&self) -> Vec<GridPoint> {
        let base = self.base_point();
        let sw = &self.sweep;
        let or_base = |v: &[f64], b: f64, conv: &dyn Fn(f64) -> f64| -> Vec<f64> {
            if v.is_empty() {
                vec![b]
            } else {
                v.iter().map(|x| conv(*x)).collect()
            }
        };
        let id = |x: f64| x;
        let secs = |x: f64| self.seconds(x);
        let sp = if sw.single_pass.is_empty() {
            vec![base.single_pass]
        } else {
            sw.single_pass.clone()
        };
        let ss = or_base(&sw.s, base.s, &id);
        let zs: Vec<Option<f64>> = if sw.z.is_empty() {
            vec![base.z]
        } else {
            sw.z.iter().map(|z| Some(*z)).collect()
        };
        let tps = or_base(&sw.tp, base.tp, &secs);
        let ts = or_base(&sw.duration, base.duration, &secs);
        let mut out = Vec::new();
        for &single_pass in &sp {
            for &s in &ss {
                for &z in &zs {
                    for &tp in &tps {
                        for &duration in &ts {
                            out.push(GridPoint {
                                duration,
                                s,
                                tp,
                                z,
                                single_pass,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn options(&self, seed: u64) -> OptimizeOptions {
        OptimizeOptions {
            seed,
            random_restarts: self.run.restarts,
            max_iterations: self.run.max_iterations,
            tolerance: self.run.tolerance,
            ..OptimizeOptions::default()
        }
    }

    /// Builds the scenario at `point` on a grid of `m` samples per round trip.
    pub fn scenario(&self, point: &GridPoint, m: usize) -> Result<HeraldScenario, CliError> {
        let o = &self.opo;
        let t1_sq = if point.single_pass { 1.0 } else { o.t1_sq };
        let opo = OpoConfig::from_powers(t1_sq, o.r2_sq, o.tau, m)?;
        let c = &self.chain;
        let filter = match (c.kappa1, c.kappa2) {
            (Some(k1), Some(k2)) => FilterConfig::lorentzian(k1, k2)?,
            (None, None) => FilterConfig::symmetric(c.bandwidth)?,
            _ => {
                return Err(CliError::Config(
                    "chain.kappa1 and chain.kappa2 must be given together".into(),
                ))
            }
        };
        let chain = DetectionChain::new(c.tap, c.eta_t, c.eta_s, filter)?;
        let resolution = match self.window.resolution {
            Resolution::Continuous => TriggerResolution::Continuous,
            Resolution::Binned => TriggerResolution::Binned,
        };
        let scenario = match self.pump.kind {
            PumpKind::Pulsed => {
                let offset = match &self.window.offset {
                    OffsetSpec::Start(t) => WindowOffset::Start(self.seconds(*t)),
                    OffsetSpec::Named(_) => WindowOffset::MaximizeProbability,
                };
                let trigger = TriggerWindow::new(point.duration, offset)?;
                HeraldScenario::pulsed(opo, point.s, point.tp, chain, trigger)?
            }
            PumpKind::Cw => {
                let z = match point.z {
                    Some(z) => z,
                    None => calibrate_cw_flux(&opo, self.pump.flux)?,
                };
                HeraldScenario::cw(opo, z, chain, point.duration)?
            }
        };
        Ok(scenario.with_resolution(resolution))
    }
}

pub const CANDIDATES: [&str; 5] = ["th", "cah", "comb", "eigenmode", "window"];
