//! Geometry of the practical single-rail protocol with one nesting level.
//!
//! ```text
//! A ──d1── relay ──d2── [QM1][QM2/VB] ── C ── [QM2/VB][QM1] ──d2── relay ──d1── B
//! ```
//!
//! `L = 2(2 d1 + d2)`. The fixed buffer `d_QM1` holds the teleported state
//! until the relay's classical heralding (travelling `d1 + d2` at `c_c`)
//! catches up: `t2 + t_QM1 = t1 + t_c`. `d_QM2 = c_QM m τ` bounds how long a
//! heralded state waits for its partner from the other side.

use serde::{Deserialize, Serialize};

use crate::bounds::{eta_from_distance, Transmissivity};
use crate::error::{Error, Result};
use crate::SPEED_OF_LIGHT_KM_S;

/// Relative slack when testing `d2` against the feasibility bound.
const D2_BOUND_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub alpha_db_per_km: f64,
    pub alpha_qm_db_per_km: f64,
    /// Quantum signal speed in fibre, km/s.
    pub c_q: f64,
    /// Classical signal speed, km/s.
    pub c_c: f64,
    /// Signal speed inside the optical buffers, km/s.
    pub c_qm: f64,
    /// Pulse period, s.
    pub tau_s: f64,
    pub eta_switch: f64,
    pub eta_det: f64,
    pub dark_rate_hz: f64,
    /// Radix of the digital variable buffer (delays `b^k τ`).
    pub base_b: u32,
}

impl Default for ChannelParams {
    /// 0.2 dB/km everywhere, 1 GHz clock, 99 % switches, 93 % detectors,
    /// 0.01 Hz dark counts, `c_q = 2c/3`, `c_c = 0.9997c`.
    fn default() -> Self {
        let alpha_qm = 0.2;
        Self {
            alpha_db_per_km: 0.2,
            alpha_qm_db_per_km: alpha_qm,
            c_q: 2.0 / 3.0 * SPEED_OF_LIGHT_KM_S,
            c_c: 0.9997 * SPEED_OF_LIGHT_KM_S,
            c_qm: default_buffer_speed(alpha_qm),
            tau_s: 1e-9,
            eta_switch: 0.99,
            eta_det: 0.93,
            dark_rate_hz: 0.01,
            base_b: 2,
        }
    }
}

/// Buffers at 0.2 dB/km are fibre loops (`c_QM = c_q`); anything else is
/// taken to be a free-space or hollow-core buffer running at `c`.
pub fn default_buffer_speed(alpha_qm_db_per_km: f64) -> f64 {
    if (alpha_qm_db_per_km - 0.2).abs() < 1e-12 {
        2.0 / 3.0 * SPEED_OF_LIGHT_KM_S
    } else {
        SPEED_OF_LIGHT_KM_S
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::domain(name, v, "finite and >= 0"))
            }
        };
        let positive = |name, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::domain(name, v, "finite and > 0"))
            }
        };
        let efficiency = |name, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::domain(name, v, "0 < value <= 1"))
            }
        };
        nonneg("alpha_db_per_km", self.alpha_db_per_km)?;
        nonneg("alpha_qm_db_per_km", self.alpha_qm_db_per_km)?;
        positive("c_q", self.c_q)?;
        positive("c_c", self.c_c)?;
        positive("c_qm", self.c_qm)?;
        positive("tau_s", self.tau_s)?;
        efficiency("eta_switch", self.eta_switch)?;
        efficiency("eta_det", self.eta_det)?;
        nonneg("dark_rate_hz", self.dark_rate_hz)?;
        if self.base_b < 2 {
            return Err(Error::domain("base_b", f64::from(self.base_b), ">= 2"));
        }
        if self.dark_click_prob() >= 1.0 {
            return Err(Error::domain("dark_rate_hz * tau_s", self.dark_click_prob(), "< 1"));
        }
        Ok(())
    }

    /// Sets the buffer attenuation and re-applies the default buffer speed.
    pub fn with_buffer_loss(mut self, alpha_qm_db_per_km: f64) -> Self {
        self.alpha_qm_db_per_km = alpha_qm_db_per_km;
        self.c_qm = default_buffer_speed(alpha_qm_db_per_km);
        self
    }

    /// Dark-click probability per detection gate.
    pub fn dark_click_prob(&self) -> f64 {
        self.dark_rate_hz * self.tau_s
    }

    pub fn speed_ratio(&self) -> f64 {
        self.c_q / self.c_c
    }

    /// Largest `d2` keeping `t_QM1 >= 0` and `d1 >= 0`.
    pub fn d2_upper_bound(&self, total_km: f64) -> f64 {
        let timing = total_km * (self.c_c + self.c_q) / (6.0 * self.c_c - 2.0 * self.c_q);
        if 6.0 * self.c_c - 2.0 * self.c_q <= 0.0 {
            return total_km / 2.0;
        }
        timing.min(total_km / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PracticalGeometry {
    pub total_km: f64,
    pub d1_km: f64,
    pub d2_km: f64,
    pub d_qm1_km: f64,
    pub d_qm2_km: f64,
    pub m: u32,
    pub switch_uses: u32,
    pub t1_s: f64,
    pub t2_s: f64,
    pub t_c_s: f64,
    pub t_qm1_s: f64,
    pub t_qm2_s: f64,
    pub eta1: Transmissivity,
    pub eta2: Transmissivity,
    pub eta_qm1: Transmissivity,
    pub eta_qm2: Transmissivity,
    /// Worst-case transmissivity from the relay to the central station.
    pub eta_c: Transmissivity,
}

impl PracticalGeometry {
    /// Left-hand minus right-hand side of `t2 + t_QM1 = t1 + t_c`, s.
    pub fn timing_residual_s(&self) -> f64 {
        (self.t2_s + self.t_qm1_s) - (self.t1_s + self.t_c_s)
    }

    pub fn total_storage_s(&self) -> f64 {
        self.t_qm1_s + self.t_qm2_s
    }
}

/// Solves node positions, buffer lengths and transmissivities for total
/// distance `L`, relay-to-buffer distance `d2` and fixed-buffer depth `m`.
pub fn solve_geometry(total_km: f64, d2_km: f64, params: &ChannelParams, m: u32) -> Result<PracticalGeometry> {
    params.validate()?;
    if !(total_km > 0.0) || !total_km.is_finite() {
        return Err(Error::domain("L", total_km, "finite and > 0"));
    }
    let bound = params.d2_upper_bound(total_km);
    if !(d2_km >= 0.0) || d2_km > bound * (1.0 + D2_BOUND_SLACK) {
        return Err(Error::InfeasibleD2 { d2: d2_km, bound });
    }
    let d2 = d2_km.min(bound);
    let d1 = (total_km / 4.0 - d2 / 2.0).max(0.0);

    let t1 = d1 / params.c_q;
    let t2 = d2 / params.c_q;
    let t_c = (d1 + d2) / params.c_c;
    let t_qm1 = (t1 + t_c - t2).max(0.0);
    let d_qm1 = params.c_qm * t_qm1;
    let t_qm2 = f64::from(m) * params.tau_s;
    let d_qm2 = params.c_qm * t_qm2;

    let switch_uses = switch_count(m, params.base_b);
    let eta1 = eta_from_distance(d1, params.alpha_db_per_km)?;
    let eta2 = eta_from_distance(d2, params.alpha_db_per_km)?;
    let eta_qm1 = eta_from_distance(d_qm1, params.alpha_qm_db_per_km)?;
    let eta_qm2 = eta_from_distance(d_qm2, params.alpha_qm_db_per_km)?;
    let switches = Transmissivity::new(params.eta_switch)?.powi(switch_uses);
    let eta_c = eta2.then(eta_qm1).then(eta_qm2).then(switches);

    Ok(PracticalGeometry {
        total_km,
        d1_km: d1,
        d2_km: d2,
        d_qm1_km: d_qm1,
        d_qm2_km: d_qm2,
        m,
        switch_uses,
        t1_s: t1,
        t2_s: t2,
        t_c_s: t_c,
        t_qm1_s: t_qm1,
        t_qm2_s: t_qm2,
        eta1,
        eta2,
        eta_qm1,
        eta_qm2,
        eta_c,
    })
}

/// Worst-case switch traversals: `b ⌈log_b m⌉ + 1`, the `+1` being the
/// routing switch after the fixed buffer. `m = 0` uses only that switch.
pub fn switch_count(m: u32, base_b: u32) -> u32 {
    assert!(base_b >= 2, "buffer radix must be at least 2");
    base_b * digits_needed(m, base_b) + 1
}

/// Smallest `k` with `b^k >= m`, i.e. `⌈log_b m⌉` in exact integer arithmetic.
fn digits_needed(m: u32, base_b: u32) -> u32 {
    let mut k = 0;
    let mut reach: u64 = 1;
    while reach < u64::from(m) {
        reach *= u64::from(base_b);
        k += 1;
    }
    k
}

/// `η_QM = η_QM1 η_QM2 η_switch^(b⌈log_b m⌉+1)`.
pub fn buffer_transmissivity(geometry: &PracticalGeometry, params: &ChannelParams) -> Transmissivity {
    let switches = Transmissivity::new(params.eta_switch)
        .unwrap_or(Transmissivity::LOSSLESS)
        .powi(geometry.switch_uses);
    geometry.eta_qm1.then(geometry.eta_qm2).then(switches)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ChannelParams {
        ChannelParams::default()
    }

    #[test]
    fn switch_count_examples() {
        assert_eq!(switch_count(9, 10), 11);
        assert_eq!(switch_count(8, 2), 7);
        assert_eq!(switch_count(1, 2), 1);
        assert_eq!(switch_count(0, 2), 1);
        assert_eq!(switch_count(10, 10), 11);
        assert_eq!(switch_count(11, 10), 21);
        assert_eq!(switch_count(9, 2), 9);
        assert_eq!(switch_count(u32::MAX, 2), 65);
    }

    #[test]
    fn d2_at_bound_empties_first_buffer() {
        let p = params();
        let l = 300.0;
        let bound = l * (p.c_c + p.c_q) / (6.0 * p.c_c - 2.0 * p.c_q);
        assert_eq!(p.d2_upper_bound(l), bound);
        let g = solve_geometry(l, bound, &p, 10).unwrap();
        assert!(g.d_qm1_km.abs() < 1e-9);
        let err = solve_geometry(l, bound * 1.001, &p, 10).unwrap_err();
        assert!(matches!(err, Error::InfeasibleD2 { bound: b, .. } if b == bound));
        assert!(solve_geometry(l, -1.0, &p, 10).is_err());
    }

    #[test]
    fn zero_d2_buffer_length() {
        let p = params();
        let l = 120.0;
        let g = solve_geometry(l, 0.0, &p, 0).unwrap();
        let expected = l * p.c_qm * (p.c_c + p.c_q) / (4.0 * p.c_c * p.c_q);
        assert!((g.d_qm1_km - expected).abs() < 1e-12 * expected);
        assert_eq!(g.d_qm2_km, 0.0);
        assert_eq!(g.switch_uses, 1);
        assert_eq!(g.d1_km, l / 4.0);
    }

    #[test]
    fn printed_buffer_closed_form() {
        let p = params();
        let (l, d2) = (400.0, 37.5);
        let g = solve_geometry(l, d2, &p, 3).unwrap();
        let (cq, cc, cqm) = (p.c_q, p.c_c, p.c_qm);
        let printed = (l * cqm * cc + l * cqm * cq - 6.0 * cqm * cc * d2 + 2.0 * cqm * cq * d2) / (4.0 * cc * cq);
        assert!((g.d_qm1_km - printed).abs() < 1e-10 * printed);
        assert!((g.d_qm2_km - cqm * 3.0 * p.tau_s).abs() < 1e-15);
        assert_eq!(2.0 * (2.0 * g.d1_km + g.d2_km), l);
        assert!(g.timing_residual_s().abs() < 1e-12);
    }

    #[test]
    fn buffer_transmissivity_examples() {
        let mut p = params().with_buffer_loss(0.0);
        p.eta_switch = 1.0;
        let g = solve_geometry(100.0, 10.0, &p, 7).unwrap();
        assert_eq!(buffer_transmissivity(&g, &p).value(), 1.0);

        p.eta_switch = 0.99;
        p.base_b = 10;
        let g = solve_geometry(100.0, 10.0, &p, 9).unwrap();
        assert!((buffer_transmissivity(&g, &p).value() - 0.99f64.powi(11)).abs() < 1e-15);

        // 1 dB across both fixed buffers.
        let mut p = params();
        p.eta_switch = 1.0;
        p.c_qm = 5.0 / (3.0 * p.tau_s);
        let l = 1.0;
        let bound = p.d2_upper_bound(l);
        let g = solve_geometry(l, bound, &p, 3).unwrap();
        assert!((g.d_qm1_km + g.d_qm2_km - 5.0).abs() < 1e-6);
        assert!((buffer_transmissivity(&g, &p).value() - 10f64.powf(-0.1)).abs() < 1e-6);
    }

    #[test]
    fn eta_c_monotone() {
        let p = params();
        let l = 500.0;
        let base = solve_geometry(l, 50.0, &p, 20).unwrap().eta_c.value();
        assert!(solve_geometry(l, 50.0, &p, 40).unwrap().eta_c.value() <= base);
        // Moving the relay outward trades fibre for buffer, so η_C only falls
        // with d2 when the buffer is sufficiently better than fibre.
        let good_buffer = p.with_buffer_loss(0.02);
        let near = solve_geometry(l, 50.0, &good_buffer, 20).unwrap().eta_c.value();
        assert!(solve_geometry(l, 60.0, &good_buffer, 20).unwrap().eta_c.value() <= near);
        let lossier = ChannelParams { alpha_qm_db_per_km: 0.3, ..p };
        assert!(solve_geometry(l, 50.0, &lossier, 20).unwrap().eta_c.value() < base);
        let worse_switch = ChannelParams { eta_switch: 0.9, ..p };
        assert!(solve_geometry(l, 50.0, &worse_switch, 20).unwrap().eta_c.value() < base);
    }

    #[test]
    fn validation() {
        let mut p = params();
        p.base_b = 1;
        assert!(p.validate().is_err());
        let mut p = params();
        p.eta_det = 0.0;
        assert!(p.validate().is_err());
        assert!(solve_geometry(0.0, 0.0, &params(), 0).is_err());
    }
}
