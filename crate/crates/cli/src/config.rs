use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use weakcrit::critical::geometric_schedule;
use weakcrit::{Configuration, MassSystem, TimeGrid};

use crate::Failure;

/// Reads a JSON config, or the defaults when no file is given.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    pub seed: u64,
    /// Random paths per body count.
    pub paths: usize,
    pub m: usize,
    pub d: usize,
    pub alpha: f64,
    pub eps: f64,
    pub bodies: Vec<usize>,
    pub tol: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig { seed: 1, paths: 4, m: 32, d: 3, alpha: 1.0, eps: 0.1, bodies: vec![2, 3, 4], tol: 1e-6 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub d: usize,
    pub alpha: f64,
    pub masses: Vec<f64>,
}

impl SystemConfig {
    pub fn build(&self) -> weakcrit::Result<MassSystem> {
        MassSystem::new(self.d, self.alpha, self.masses.clone())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t1: f64,
    pub t2: f64,
    pub m: usize,
    /// Geometric grading towards mid-time; uniform when absent.
    #[serde(default)]
    pub ratio: Option<f64>,
    #[serde(default)]
    pub cap: Option<f64>,
}

impl GridConfig {
    pub fn build(&self) -> weakcrit::Result<TimeGrid> {
        match self.ratio {
            Some(r) => TimeGrid::graded(self.t1, self.t2, self.m, r, self.cap.unwrap_or(1e4)),
            None => TimeGrid::uniform(self.t1, self.t2, self.m),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometricSchedule {
    pub base: f64,
    pub from: i32,
    pub to: i32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SeedConfig {
    Linear,
    Bounce { pair: (usize, usize), impact: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    Critical,
    Minimize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuationConfig {
    pub seed: u64,
    pub system: SystemConfig,
    pub start: Vec<Vec<f64>>,
    pub end: Vec<Vec<f64>>,
    pub grid: GridConfig,
    /// Explicit eps values; takes precedence over `schedule`.
    pub eps: Option<Vec<f64>>,
    pub schedule: Option<GeometricSchedule>,
    pub start_path: SeedConfig,
    pub mode: ModeConfig,
    pub tol: f64,
    pub max_iter: usize,
    pub tail: usize,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        ContinuationConfig {
            seed: 7,
            system: SystemConfig { d: 3, alpha: 1.0, masses: vec![1.0, 1.0] },
            start: vec![vec![-0.5, 0.0, 0.0], vec![0.5, 0.0, 0.0]],
            end: vec![vec![-0.5, 0.0, 0.0], vec![0.5, 0.0, 0.0]],
            grid: GridConfig { t1: 0.0, t2: 0.03, m: 256, ratio: Some(1.12), cap: Some(50000.0) },
            eps: None,
            schedule: Some(GeometricSchedule { base: 4.0, from: 1, to: 8 }),
            start_path: SeedConfig::Bounce { pair: (0, 1), impact: 0.012 },
            mode: ModeConfig::Critical,
            tol: 1e-10,
            max_iter: 200,
            tail: 4,
        }
    }
}

impl ContinuationConfig {
    pub fn eps_schedule(&self) -> Vec<f64> {
        match (&self.eps, &self.schedule) {
            (Some(e), _) => e.clone(),
            (None, Some(s)) => geometric_schedule(s.base, s.from, s.to),
            (None, None) => Vec::new(),
        }
    }

    pub fn endpoints(&self) -> weakcrit::Result<(Configuration, Configuration)> {
        Ok((Configuration::from_rows(&self.start)?, Configuration::from_rows(&self.end)?))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub l: f64,
    pub mesh: usize,
    /// Radius at which the numeric angle is read.
    pub radius: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { alphas: vec![0.5, 1.0], lambdas: vec![0.0, 1.0, 3.0], l: 200.0, mesh: 4000, radius: 1e6 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseConfig {
    Auto,
    Finite,
    Infinite,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlowupConfig {
    pub sequence: PathBuf,
    /// Profiles are written for this many trailing records.
    pub last: usize,
    pub case: CaseConfig,
    pub window: f64,
    pub s_cap: f64,
    pub bump: weakcrit::collision::Bump,
}

impl Default for BlowupConfig {
    fn default() -> Self {
        BlowupConfig {
            sequence: PathBuf::from("out/sequence.json"),
            last: 4,
            case: CaseConfig::Auto,
            window: 0.25,
            s_cap: 200.0,
            bump: weakcrit::collision::Bump::default(),
        }
    }
}
