//! Run configuration: flat TOML (or JSON) keys plus named presets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::FockSettings;
use crate::geometry::{default_buffer_speed, ChannelParams};
use crate::nesting::NestingDepth;
use crate::optimize::{default_m_candidates, log_grid, Mode, SweepSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!("unknown format {other:?} (csv|json)"))),
        }
    }
}

/// Every knob of a run. Keys not listed here are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub alpha_db_per_km: f64,
    pub alpha_qm_db_per_km: f64,
    pub c_q: f64,
    pub c_c: f64,
    /// Defaults to `c_q` for 0.2 dB/km buffers and `c` otherwise.
    pub c_qm: Option<f64>,
    pub tau_s: f64,
    pub eta_switch: f64,
    pub eta_det: f64,
    pub dark_rate_hz: f64,
    pub base_b: u32,

    pub mode: Mode,
    pub chi_grid: Vec<f64>,
    /// Largest fixed-buffer depth searched.
    pub m_max: u32,
    pub d2_coarse_points: usize,
    pub d2_tol_frac: f64,
    pub m_top_k: usize,
    pub cutoff: usize,
    pub truncation_tol: f64,

    pub l_min_km: f64,
    pub l_max_km: f64,
    pub l_points: usize,
    pub alpha_qm_grid: Vec<f64>,

    /// Ideal-rate curves: speed ratio and depths ("0".."5", "inf").
    pub speed_ratio: Option<f64>,
    pub depths: Vec<String>,
    /// Capacity bounds drawn alongside rate curves.
    pub repeaters: Vec<u32>,
    /// Include the single-node reference curve.
    pub baseline: bool,

    pub seed: u64,
    pub trials: u64,
    pub histogram_bins: usize,

    pub format: OutputFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ch = ChannelParams::default();
        Self {
            alpha_db_per_km: ch.alpha_db_per_km,
            alpha_qm_db_per_km: ch.alpha_qm_db_per_km,
            c_q: ch.c_q,
            c_c: ch.c_c,
            c_qm: None,
            tau_s: ch.tau_s,
            eta_switch: ch.eta_switch,
            eta_det: ch.eta_det,
            dark_rate_hz: ch.dark_rate_hz,
            base_b: ch.base_b,
            mode: Mode::Analytic,
            chi_grid: vec![0.1],
            m_max: 10_000_000,
            d2_coarse_points: 64,
            d2_tol_frac: 1e-3,
            m_top_k: 3,
            cutoff: FockSettings::default().cutoff,
            truncation_tol: FockSettings::default().truncation_tol,
            l_min_km: 10.0,
            l_max_km: 1000.0,
            l_points: 100,
            alpha_qm_grid: vec![0.2],
            speed_ratio: None,
            depths: ["0", "1", "2", "3", "4", "5", "inf"].map(String::from).to_vec(),
            repeaters: vec![0, 1],
            baseline: false,
            seed: 1,
            trials: 1_000_000,
            histogram_bins: 50,
            format: OutputFormat::Csv,
        }
    }
}

pub const PRESETS: &[&str] = &["fig1c", "fig2b", "fig2c", "heatmap-d2"];

/// Squeezing grid for the numeric figures: 12 log-spaced values in
/// `[0.01, 0.5]`.
pub fn numeric_chi_grid() -> Vec<f64> {
    log_grid(0.01, 0.5, 12)
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self::default();
        let cfg = match name {
            "fig1c" => Self {
                l_min_km: 1.0,
                l_max_km: 600.0,
                l_points: 600,
                speed_ratio: Some(2.0 / 3.0),
                repeaters: vec![0, 1],
                ..base
            },
            "fig2b" => Self {
                mode: Mode::Numeric,
                chi_grid: numeric_chi_grid(),
                l_min_km: 50.0,
                l_max_km: 1800.0,
                l_points: 36,
                baseline: true,
                ..base
            },
            "fig2c" => Self {
                mode: Mode::Numeric,
                chi_grid: numeric_chi_grid(),
                alpha_qm_db_per_km: 0.02,
                l_min_km: 50.0,
                l_max_km: 1800.0,
                l_points: 36,
                baseline: true,
                ..base
            },
            "heatmap-d2" => Self {
                eta_switch: 1.0,
                l_min_km: 50.0,
                l_max_km: 1000.0,
                l_points: 20,
                alpha_qm_grid: (0..=40).map(|k| 0.005 * k as f64).collect(),
                ..base
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown preset {other:?}; available: {}",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(cfg)
    }

    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(format!("JSON config: {e}")))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(format!("TOML config: {e}")))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies the keys present in `text` on top of `self`.
    pub fn overlay(&self, text: &str) -> Result<Self> {
        let mut base = serde_json::to_value(self).map_err(|e| Error::Config(e.to_string()))?;
        let patch: serde_json::Value = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(format!("JSON config: {e}")))?
        } else {
            let t: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("TOML config: {e}")))?;
            serde_json::to_value(t).map_err(|e| Error::Config(e.to_string()))?
        };
        let serde_json::Value::Object(patch) = patch else {
            return Err(Error::Config("config must be a table of keys".into()));
        };
        let obj = base.as_object_mut().expect("RunConfig serialises to an object");
        for (k, v) in patch {
            obj.insert(k, v);
        }
        let cfg: Self = serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("RunConfig always serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.channel().validate()?;
        self.sweep().validate()?;
        if !(self.l_min_km > 0.0 && self.l_max_km >= self.l_min_km) || self.l_points == 0 {
            return Err(Error::Config(format!(
                "distance range needs 0 < l_min_km <= l_max_km and l_points >= 1 (got {}..{} x {})",
                self.l_min_km, self.l_max_km, self.l_points
            )));
        }
        if self.alpha_qm_grid.is_empty() || self.alpha_qm_grid.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::Config("alpha_qm_grid must be nonempty and >= 0".into()));
        }
        for d in &self.depths {
            d.parse::<NestingDepth>()?;
        }
        if let Some(f) = self.speed_ratio {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::domain("speed_ratio", f, "0 < f < 1"));
            }
        }
        if self.trials == 0 || self.histogram_bins == 0 {
            return Err(Error::Config("trials and histogram_bins must be >= 1".into()));
        }
        Ok(())
    }

    pub fn channel(&self) -> ChannelParams {
        ChannelParams {
            alpha_db_per_km: self.alpha_db_per_km,
            alpha_qm_db_per_km: self.alpha_qm_db_per_km,
            c_q: self.c_q,
            c_c: self.c_c,
            c_qm: self.c_qm.unwrap_or_else(|| default_buffer_speed(self.alpha_qm_db_per_km)),
            tau_s: self.tau_s,
            eta_switch: self.eta_switch,
            eta_det: self.eta_det,
            dark_rate_hz: self.dark_rate_hz,
            base_b: self.base_b,
        }
    }

    /// Channel with the buffer loss replaced, keeping an explicit `c_qm`.
    pub fn channel_with_buffer_loss(&self, alpha_qm: f64) -> ChannelParams {
        ChannelParams {
            alpha_qm_db_per_km: alpha_qm,
            c_qm: self.c_qm.unwrap_or_else(|| default_buffer_speed(alpha_qm)),
            ..self.channel()
        }
    }

    pub fn sweep(&self) -> SweepSpec {
        SweepSpec {
            mode: self.mode,
            chi_grid: self.chi_grid.clone(),
            m_candidates: default_m_candidates().into_iter().filter(|&m| m <= self.m_max).collect(),
            d2_coarse_points: self.d2_coarse_points,
            d2_tol_frac: self.d2_tol_frac,
            d2_fractions: None,
            m_top_k: self.m_top_k,
            fock: FockSettings {
                cutoff: self.cutoff,
                truncation_tol: self.truncation_tol,
            },
        }
    }

    pub fn l_grid(&self) -> Vec<f64> {
        if self.l_points == 1 {
            return vec![self.l_min_km];
        }
        (0..self.l_points)
            .map(|k| self.l_min_km + (self.l_max_km - self.l_min_km) * k as f64 / (self.l_points - 1) as f64)
            .collect()
    }

    pub fn speed_ratio(&self) -> f64 {
        self.speed_ratio.unwrap_or(self.c_q / self.c_c)
    }

    pub fn nesting_depths(&self) -> Result<Vec<NestingDepth>> {
        self.depths.iter().map(|d| d.parse()).collect()
    }
}
