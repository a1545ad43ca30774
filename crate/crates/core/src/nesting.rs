//! Ideal nested dual-rail layouts exploiting classical signals that outrun
//! the quantum ones.
//!
//! With speed ratio `f = c_q / c_c` and nesting depth `N` (`m = N + 1`
//! segment classes), segment lengths `d_1..d_m` obey the total-length
//! identity `L = 2 Σ 2^(m-i) d_i` and the catch-up timing constraints
//! `(1 - f) d_(k+1) = d_k + f S_k`, where `S_k = Σ_(i<=k) 2^(k-i) d_i`.
//! The partial sums solve a linear recurrence with characteristic roots 1
//! and `g = 2 / (1 - f)`, so `S_k = (L/2)(g^k - 1)/(g^m - 1)`. The ideal key
//! rate is `K_N = ½ η^(E_N / L)` with `E_N = Σ d_k`.

use serde::{Deserialize, Serialize};

use crate::bounds::{eta_from_distance, Transmissivity};
use crate::error::{Error, Result};

/// Ratios this close to 1 make `g` blow up; treated as infeasible.
pub const MAX_NESTED_SPEED_RATIO: f64 = 1.0 - 1e-9;

/// `f = c_q / c_c`, the quantum-to-classical signal speed ratio.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpeedRatio(f64);

impl SpeedRatio {
    pub fn new(f: f64) -> Result<Self> {
        if !f.is_finite() || f < 0.0 {
            return Err(Error::domain("f", f, "finite and >= 0"));
        }
        Ok(Self(f))
    }

    pub fn from_speeds(c_q_km_s: f64, c_c_km_s: f64) -> Result<Self> {
        if !(c_q_km_s > 0.0) || !(c_c_km_s > 0.0) {
            return Err(Error::domain("speed", c_q_km_s.min(c_c_km_s), "> 0"));
        }
        Self::new(c_q_km_s / c_c_km_s)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Characteristic root `g = 2 / (1 - f)`; errors unless `f < 1`.
    pub fn characteristic_root(self) -> Result<f64> {
        self.require_nestable()?;
        Ok(2.0 / (1.0 - self.0))
    }

    fn require_nestable(self) -> Result<()> {
        if self.0 > MAX_NESTED_SPEED_RATIO {
            return Err(Error::InfeasibleSpeedRatio(self.0));
        }
        Ok(())
    }
}

/// Nesting depth, including the `N -> ∞` limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NestingDepth {
    Finite(u32),
    Infinite,
}

impl NestingDepth {
    pub fn label(self) -> String {
        match self {
            NestingDepth::Finite(n) => n.to_string(),
            NestingDepth::Infinite => "inf".to_string(),
        }
    }
}

impl std::str::FromStr for NestingDepth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinity" | "∞" => Ok(NestingDepth::Infinite),
            other => other
                .parse::<u32>()
                .map(NestingDepth::Finite)
                .map_err(|_| Error::Config(format!("bad nesting depth `{other}`"))),
        }
    }
}

/// `scaling_N(f) = E_N / L`. `N = 0` gives exactly ½.
pub fn scaling_exponent(f: SpeedRatio, depth: u32) -> Result<f64> {
    if depth == 0 {
        f.require_nestable()?;
        return Ok(0.5);
    }
    Ok(scaling_asymptote(f) + scaling_excess(f, depth)?)
}

/// `scaling_N(f) - f/(1+f) = ½ m x / (1 - x)` with `x = g^-m`, `m = N + 1`.
/// Strictly decreasing in `N`; kept separate because it falls below the
/// resolution of the exponent itself around `N = 20`.
pub fn scaling_excess(f: SpeedRatio, depth: u32) -> Result<f64> {
    let g = f.characteristic_root()?;
    let m = f64::from(depth) + 1.0;
    let x = (-m * g.ln()).exp();
    Ok(0.5 * m * x / (1.0 - x))
}

/// `lim_(N->∞) scaling_N(f) = f / (1 + f)`, valid for `0 <= f <= 1`.
pub fn scaling_asymptote(f: SpeedRatio) -> f64 {
    f.0 / (1.0 + f.0)
}

pub fn scaling(f: SpeedRatio, depth: NestingDepth) -> Result<f64> {
    match depth {
        NestingDepth::Finite(n) => scaling_exponent(f, n),
        NestingDepth::Infinite => {
            f.require_nestable()?;
            Ok(scaling_asymptote(f))
        }
    }
}

/// The degree-N rational functions for `N = 1..=5`, written with `c_c = 1`.
/// Kept independent of [`scaling_exponent`] so the two can check each other.
pub fn scaling_polynomial(f: f64, depth: u32) -> Result<f64> {
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::domain("f", f, "0 < f < 1"));
    }
    let f2 = f * f;
    let f3 = f2 * f;
    let f4 = f3 * f;
    let f5 = f4 * f;
    let v = match depth {
        1 => -1.0 / (f - 3.0),
        2 => (-f2 + 2.0 * f + 3.0) / (2.0 * f2 - 8.0 * f + 14.0),
        3 => -(f3 - 4.0 * f2 + 5.0 * f + 2.0) / (f3 - 5.0 * f2 + 11.0 * f - 15.0),
        4 => {
            (-3.0 * f4 + 16.0 * f3 - 34.0 * f2 + 32.0 * f + 5.0)
                / (2.0 * f4 - 12.0 * f3 + 32.0 * f2 - 52.0 * f + 62.0)
        }
        5 => {
            -(2.0 * f5 - 13.0 * f4 + 36.0 * f3 - 54.0 * f2 + 42.0 * f + 3.0)
                / (f5 - 7.0 * f4 + 22.0 * f3 - 42.0 * f2 + 57.0 * f - 63.0)
        }
        n => return Err(Error::UnsupportedDepth(n as usize)),
    };
    Ok(v)
}

/// Optimal segment layout for depth `N` over total distance `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedSolution {
    pub depth: u32,
    pub f: f64,
    pub g: f64,
    pub total_km: f64,
    /// `S_0..=S_m`, km.
    pub partial_sums: Vec<f64>,
    /// `d_1..=d_m`, km.
    pub segments: Vec<f64>,
    /// `E_N = Σ d_k`, km.
    pub cost_km: f64,
    pub scaling: f64,
}

impl NestedSolution {
    pub fn classes(&self) -> usize {
        self.segments.len()
    }

    /// Classical path length `d_c_k = S_k + d_(k+1)` for `k = 1..=N`.
    pub fn classical_length(&self, k: usize) -> f64 {
        self.partial_sums[k] + self.segments[k]
    }

    /// `2 Σ 2^(m-i) d_i`, which must reproduce `L`.
    pub fn reconstructed_length(&self) -> f64 {
        let m = self.segments.len() as i32;
        2.0 * self
            .segments
            .iter()
            .enumerate()
            .map(|(i, d)| 2f64.powi(m - 1 - i as i32) * d)
            .sum::<f64>()
    }
}

pub fn segment_lengths(f: SpeedRatio, depth: u32, total_km: f64) -> Result<NestedSolution> {
    if !(total_km > 0.0) || !total_km.is_finite() {
        return Err(Error::domain("L", total_km, "finite and > 0"));
    }
    let g = f.characteristic_root()?;
    let m = depth as i32 + 1;
    let half = total_km / 2.0;
    let inv_gm = g.powi(-m);
    let partial_sums: Vec<f64> = (0..=m)
        .map(|k| half * (g.powi(k - m) - inv_gm) / (1.0 - inv_gm))
        .collect();
    let segments: Vec<f64> = (1..=m as usize)
        .map(|k| partial_sums[k] - 2.0 * partial_sums[k - 1])
        .collect();
    let cost_km: f64 = segments.iter().sum();
    Ok(NestedSolution {
        depth,
        f: f.value(),
        g,
        total_km,
        partial_sums,
        segments,
        cost_km,
        scaling: cost_km / total_km,
    })
}

/// `K_N = ½ η^scaling_N` in bits per channel use.
pub fn ideal_rate(f: SpeedRatio, depth: NestingDepth, total_km: f64, alpha_db_per_km: f64) -> Result<f64> {
    let eta = eta_from_distance(total_km, alpha_db_per_km)?;
    Ok(ideal_rate_for_eta(eta, scaling(f, depth)?))
}

pub fn ideal_rate_for_eta(eta: Transmissivity, scaling: f64) -> f64 {
    0.5 * eta.value().powf(scaling)
}

/// Optimal `N = 1` layout when lossy buffers `s_1, s_2` may absorb the
/// timing mismatch, with buffer loss `γ = α_QM / α` relative to the channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryThreshold {
    pub gamma: f64,
    pub gamma_star: f64,
    /// Minimum scaling cost, km.
    pub e1_min: f64,
    pub d1: f64,
    pub d2: f64,
    pub s1: f64,
    pub s2: f64,
}

impl MemoryThreshold {
    pub fn buffered(&self) -> bool {
        self.s1 > 0.0 || self.s2 > 0.0
    }
}

/// `γ* = f c_c / (c_QM (3 - f))`: buffering helps only for `γ < γ*`.
pub fn critical_gamma(f: f64, c_c: f64, c_qm: f64) -> Result<f64> {
    check_threshold_inputs(f, c_c, c_qm)?;
    Ok(f * c_c / (c_qm * (3.0 - f)))
}

/// Critical buffer attenuation `γ* α`, dB/km.
pub fn critical_memory_loss(f: f64, c_c: f64, c_qm: f64, alpha_db_per_km: f64) -> Result<f64> {
    Ok(critical_gamma(f, c_c, c_qm)? * alpha_db_per_km)
}

pub fn memory_threshold(gamma: f64, f: f64, c_c: f64, c_qm: f64, total_km: f64) -> Result<MemoryThreshold> {
    let gamma_star = critical_gamma(f, c_c, c_qm)?;
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::domain("gamma", gamma, "finite and >= 0"));
    }
    if !(total_km > 0.0) {
        return Err(Error::domain("L", total_km, "> 0"));
    }
    let l = total_km;
    let sol = if gamma < gamma_star {
        let s2 = c_qm * l / (4.0 * c_c) * (1.0 + 1.0 / f);
        MemoryThreshold {
            gamma,
            gamma_star,
            e1_min: l / 4.0 + gamma * s2,
            d1: l / 4.0,
            d2: 0.0,
            s1: 0.0,
            s2,
        }
    } else {
        MemoryThreshold {
            gamma,
            gamma_star,
            e1_min: l / (3.0 - f),
            d1: l * (1.0 - f) / (2.0 * (3.0 - f)),
            d2: l * (1.0 + f) / (2.0 * (3.0 - f)),
            s1: 0.0,
            s2: 0.0,
        }
    };
    Ok(sol)
}

/// Piecewise minimum scaling cost for `N = 1` with lossy buffers, km.
pub fn e1_min(gamma: f64, f: f64, c_c: f64, c_qm: f64, total_km: f64) -> Result<f64> {
    Ok(memory_threshold(gamma, f, c_c, c_qm, total_km)?.e1_min)
}

fn check_threshold_inputs(f: f64, c_c: f64, c_qm: f64) -> Result<()> {
    if !(f > 0.0 && f < 3.0) {
        return Err(Error::domain("f", f, "0 < f < 3"));
    }
    if !(c_c > 0.0) {
        return Err(Error::domain("c_c", c_c, "> 0"));
    }
    if !(c_qm > 0.0) {
        return Err(Error::domain("c_qm", c_qm, "> 0"));
    }
    Ok(())
}
