//! Analytic key-rate pipeline in the small-χ limit.
//!
//! `SKR = r R / τ` with `R = 1/(Z₀ Z₁)`. `Z₀` is the mean number of slots
//! until both relays of one half have heralded within `m` slots of each
//! other, and `Z₁ = 1/P₁` for the final measurement, which has no cutoff.

use serde::{Deserialize, Serialize};

use crate::bounds::Transmissivity;
use crate::error::{Error, Result};
use crate::geometry::{ChannelParams, PracticalGeometry};

/// Ratio `P₀/(η₁/2)` at small χ. The brute-force Fock computation of the
/// relay gives `P₀ → η₁/2`, so the constant is exactly one.
pub const KAPPA0: f64 = 1.0;

/// Where the factors of a [`RateBreakdown`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateSource {
    /// Closed-form small-χ probabilities, `r = 1`.
    SmallChi,
    /// Probabilities and RCI from the Fock-space protocol state.
    Fock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateBreakdown {
    pub p0: f64,
    pub p1: f64,
    pub q: f64,
    pub m: u32,
    pub z0: f64,
    pub z1: f64,
    /// Successes per slot, `1/(Z₀ Z₁)`.
    pub repeater_rate: f64,
    /// Secret bits per success.
    pub raw_rate_bits: f64,
    pub skr_bits_per_use: f64,
    pub skr_bits_per_s: f64,
    pub source: RateSource,
}

impl RateBreakdown {
    /// Assembles the breakdown from the two stage probabilities.
    pub fn assemble(p0: f64, p1: f64, m: u32, raw_rate_bits: f64, tau_s: f64, source: RateSource) -> Result<Self> {
        let z0 = z0_mean_wait(p0, m)?;
        let z1 = z1_mean_wait(p1)?;
        let repeater_rate = repeater_rate(z0, z1);
        let skr_bits_per_use = raw_rate_bits * repeater_rate;
        Ok(Self {
            p0,
            p1,
            q: 1.0 - p0,
            m,
            z0,
            z1,
            repeater_rate,
            raw_rate_bits,
            skr_bits_per_use,
            skr_bits_per_s: skr_bits_per_use / tau_s,
            source,
        })
    }
}

pub fn p0_small_chi(eta1: Transmissivity) -> f64 {
    p0_small_chi_with(eta1, KAPPA0)
}

pub fn p0_small_chi_with(eta1: Transmissivity, kappa0: f64) -> f64 {
    kappa0 * eta1.value() / 2.0
}

/// `P₁ = 2χ²η_C`; fails once χ is too large for the expansion to be a
/// probability.
pub fn p1_small_chi(chi: f64, eta_c: Transmissivity) -> Result<f64> {
    if !(0.0..1.0).contains(&chi) {
        return Err(Error::domain("chi", chi, "0 <= chi < 1"));
    }
    let p1 = 2.0 * chi * chi * eta_c.value();
    if p1 > 1.0 {
        return Err(Error::ProbabilityOverflow(p1));
    }
    Ok(p1)
}

/// `1 - q^(m+1)` without cancellation for small `p0`.
fn survival_complement(p0: f64, m: u32) -> f64 {
    if p0 >= 1.0 {
        return 1.0;
    }
    -((f64::from(m) + 1.0) * (-p0).ln_1p()).exp_m1()
}

/// `Z₀ = (1 + 2q - 2q^(m+1)) / (P₀ (1 + q - 2q^(m+1)))`, evaluated as
/// `(1 - 2P₀ + 2u) / (P₀ (2u - P₀))` with `u = 1 - q^(m+1)`.
pub fn z0_mean_wait(p0: f64, m: u32) -> Result<f64> {
    if p0 == 0.0 {
        return Err(Error::InfiniteWait);
    }
    if !(p0 > 0.0 && p0 <= 1.0) {
        return Err(Error::domain("p0", p0, "0 < p0 <= 1"));
    }
    let u = survival_complement(p0, m);
    Ok((1.0 - 2.0 * p0 + 2.0 * u) / (p0 * (2.0 * u - p0)))
}

pub fn z1_mean_wait(p1: f64) -> Result<f64> {
    if p1 == 0.0 {
        return Err(Error::InfiniteWait);
    }
    if !(p1 > 0.0 && p1 <= 1.0) {
        return Err(Error::domain("p1", p1, "0 < p1 <= 1"));
    }
    Ok(1.0 / p1)
}

pub fn repeater_rate(z0: f64, z1: f64) -> f64 {
    1.0 / (z0 * z1)
}

/// Small-χ key rate of the practical protocol with `r = 1`.
pub fn skr_small_chi(geometry: &PracticalGeometry, params: &ChannelParams, chi: f64) -> Result<RateBreakdown> {
    let p0 = p0_small_chi(geometry.eta1);
    let p1 = p1_small_chi(chi, geometry.eta_c)?;
    RateBreakdown::assemble(p0, p1, geometry.m, 1.0, params.tau_s, RateSource::SmallChi)
}

/// The simplified closed form,
/// `χ²η₁η_C (η₁/2 + 2q^(m+1) - 2) / (τ (η₁ + 2q^(m+1) - 3))`, bits/s.
pub fn skr_closed_form(eta1: Transmissivity, eta_c: Transmissivity, chi: f64, m: u32, tau_s: f64) -> f64 {
    let e1 = eta1.value();
    let u = survival_complement(e1 / 2.0, m);
    // Numerator and denominator both negated to keep the cancellation in u.
    chi * chi * e1 * eta_c.value() * (2.0 * u - e1 / 2.0) / (tau_s * (1.0 + 2.0 * u - e1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::solve_geometry;
    use proptest::prelude::*;

    fn eta(v: f64) -> Transmissivity {
        Transmissivity::new(v).unwrap()
    }

    /// The printed expression verbatim; accurate when `p0` is not tiny.
    fn z0_printed(p0: f64, m: u32) -> f64 {
        let q = 1.0 - p0;
        let qm = q.powi(m as i32 + 1);
        (1.0 + 2.0 * q - 2.0 * qm) / (p0 * (1.0 + q - 2.0 * qm))
    }

    /// `E[max(G1, G2)]` when the pair must fall within `m` slots, from the
    /// renewal equation `Z = E[cycle] / P(match)`.
    fn z0_renewal(p: f64, m: u32) -> f64 {
        let q = 1.0 - p;
        // First herald by either side: mean 1/(1-q²).
        let first = 1.0 / (1.0 - q * q);
        let p_both = p * p / (1.0 - q * q);
        let p_one = 1.0 - p_both;
        // After a lone herald the other side gets up to m tries.
        let hit = 1.0 - q.powi(m as i32);
        let extra_hit: f64 = (1..=m).map(|k| k as f64 * q.powi(k as i32 - 1) * p).sum();
        let cycle = first + p_one * (extra_hit + (1.0 - hit) * f64::from(m));
        cycle / (p_both + p_one * hit)
    }

    #[test]
    fn probability_examples() {
        assert_eq!(p0_small_chi(eta(1.0)), 0.5);
        assert_eq!(p0_small_chi(eta(0.0)), 0.0);
        assert!((p0_small_chi(eta(0.1)) - 0.05).abs() < 1e-17);
        assert_eq!(p1_small_chi(0.25, eta(1.0)).unwrap(), 0.125);
        assert_eq!(p1_small_chi(0.0, eta(0.3)).unwrap(), 0.0);
        assert!((p1_small_chi(0.1, eta(0.5)).unwrap() - 0.01).abs() < 1e-17);
        assert!(matches!(p1_small_chi(0.9, eta(1.0)), Err(Error::ProbabilityOverflow(_))));
    }

    #[test]
    fn z0_examples() {
        for p in [0.01, 0.1, 0.5, 0.9] {
            let z = z0_mean_wait(p, 0).unwrap();
            assert!((z - 1.0 / (p * p)).abs() < 1e-10 * z);
        }
        let long = z0_mean_wait(0.1, 2000).unwrap();
        assert!((long - 2.8 / 0.19).abs() < 1e-9);
        assert_eq!(z0_mean_wait(1.0, 7).unwrap(), 1.0);
        assert_eq!(z0_mean_wait(0.0, 3), Err(Error::InfiniteWait));
        assert!(z0_mean_wait(1.5, 3).is_err());
    }

    #[test]
    fn z0_matches_printed_and_renewal() {
        for p in [0.02, 0.1, 0.37, 0.8] {
            for m in [0, 1, 2, 5, 20, 60] {
                let z = z0_mean_wait(p, m).unwrap();
                assert!((z - z0_printed(p, m)).abs() < 1e-11 * z, "p={p} m={m}");
                assert!((z - z0_renewal(p, m)).abs() < 1e-9 * z, "p={p} m={m}");
            }
        }
    }

    #[test]
    fn z0_stable_for_tiny_p0() {
        let p = 1e-12;
        let z = z0_mean_wait(p, 0).unwrap();
        assert!((z * p * p - 1.0).abs() < 1e-9);
        let z = z0_mean_wait(p, u32::MAX).unwrap();
        assert!(z.is_finite() && z > 1.0 / p);
    }

    #[test]
    fn closed_form_matches_pipeline() {
        let params = ChannelParams::default();
        let (e1, ec, chi, m) = (eta(0.2), eta(0.3), 0.1, 5);
        let closed = skr_closed_form(e1, ec, chi, m, 1e-9);
        let z0 = z0_mean_wait(0.1, m).unwrap();
        let z1 = 1.0 / (2.0 * chi * chi * 0.3);
        let via_waits = 1.0 / (z0 * z1 * 1e-9);
        assert!((closed - via_waits).abs() < 1e-12 * via_waits);

        let g = solve_geometry(300.0, 40.0, &params, 12).unwrap();
        let b = skr_small_chi(&g, &params, 0.05).unwrap();
        let c = skr_closed_form(g.eta1, g.eta_c, 0.05, 12, params.tau_s);
        assert!((b.skr_bits_per_s - c).abs() < 1e-12 * c);
        assert_eq!(b.z1, 1.0 / b.p1);
        assert!(b.repeater_rate <= b.p0.min(b.p1));
    }

    #[test]
    fn quadratic_in_chi() {
        let (e1, ec) = (eta(0.4), eta(0.2));
        let a = skr_closed_form(e1, ec, 1e-3, 9, 1e-9) / 1e-6;
        let b = skr_closed_form(e1, ec, 1e-4, 9, 1e-9) / 1e-8;
        assert!((a / b - 1.0).abs() < 1e-2);
    }

    #[test]
    fn infinite_storage_limit() {
        let (e1, ec, chi) = (0.3, 0.6, 0.1);
        let limit = chi * chi * e1 * ec * (2.0 - e1 / 2.0) / (3.0 - e1);
        let v = skr_closed_form(eta(e1), eta(ec), chi, 100_000, 1.0);
        assert!((v - limit).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn z0_bounds_and_monotone(p in 1e-4f64..=1.0, m in 0u32..500) {
            let z = z0_mean_wait(p, m).unwrap();
            let next = z0_mean_wait(p, m + 1).unwrap();
            prop_assert!(z >= 1.0 / p * (1.0 - 1e-12));
            prop_assert!(next <= z * (1.0 + 1e-12));
        }

        #[test]
        fn skr_monotone_in_distance(l in 10.0f64..800.0, frac in 0.0f64..0.9, m in 0u32..200) {
            let params = ChannelParams::default();
            let d2 = frac * params.d2_upper_bound(l);
            let near = solve_geometry(l, d2, &params, m).unwrap();
            let far = solve_geometry(l + 10.0, d2, &params, m).unwrap();
            let a = skr_small_chi(&near, &params, 0.1).unwrap().skr_bits_per_s;
            let b = skr_small_chi(&far, &params, 0.1).unwrap().skr_bits_per_s;
            prop_assert!(b <= a);
        }

        #[test]
        fn skr_monotone_in_switch_efficiency(sw in 0.5f64..0.999, m in 2u32..300) {
            let lo = ChannelParams { eta_switch: sw, ..ChannelParams::default() };
            let hi = ChannelParams { eta_switch: sw + 0.001, ..lo };
            let a = skr_small_chi(&solve_geometry(200.0, 10.0, &lo, m).unwrap(), &lo, 0.1).unwrap();
            let b = skr_small_chi(&solve_geometry(200.0, 10.0, &hi, m).unwrap(), &hi, 0.1).unwrap();
            prop_assert!(b.skr_bits_per_s >= a.skr_bits_per_s);
        }
    }
}
