//! Secret-key capacity benchmarks for a pure-loss channel.
//!
//! Distances are in km and attenuation in dB/km everywhere in this crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// End-to-end power transmissivity of a lossy channel, in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Transmissivity(f64);

impl Transmissivity {
    pub const LOSSLESS: Transmissivity = Transmissivity(1.0);

    pub fn new(eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::domain("eta", eta, "0 <= eta <= 1"));
        }
        Ok(Self(eta))
    }

    /// Transmissivity of `length_km` of fibre with attenuation `alpha_db_per_km`.
    pub fn from_distance(length_km: f64, alpha_db_per_km: f64) -> Result<Self> {
        eta_from_distance(length_km, alpha_db_per_km)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Loss in dB (non-negative).
    pub fn loss_db(self) -> f64 {
        -10.0 * self.0.log10()
    }

    /// Transmissivity of two channels in series.
    pub fn then(self, other: Transmissivity) -> Transmissivity {
        Transmissivity(self.0 * other.0)
    }

    pub fn powi(self, n: u32) -> Transmissivity {
        Transmissivity(self.0.powi(n as i32))
    }
}

impl From<Transmissivity> for f64 {
    fn from(t: Transmissivity) -> f64 {
        t.0
    }
}

/// `10^(-alpha * length / 10)`.
pub fn eta_from_distance(length_km: f64, alpha_db_per_km: f64) -> Result<Transmissivity> {
    if !length_km.is_finite() || length_km < 0.0 {
        return Err(Error::domain("length_km", length_km, "finite and >= 0"));
    }
    if !alpha_db_per_km.is_finite() || alpha_db_per_km < 0.0 {
        return Err(Error::domain(
            "alpha_db_per_km",
            alpha_db_per_km,
            "finite and >= 0",
        ));
    }
    Ok(Transmissivity(10f64.powf(-alpha_db_per_km * length_km / 10.0)))
}

/// Secret-key capacity (bits per use) of a pure-loss channel split by
/// `repeaters` equally spaced ideal repeaters: `-log2(1 - eta^(1/(n+1)))`.
///
/// `repeaters = 0` is the repeaterless bound, `repeaters = 1` the
/// single-repeater bound. Returns [`Error::InfiniteCapacity`] at `eta = 1`;
/// use [`skc_bound_or_inf`] to get `f64::INFINITY` instead.
pub fn skc_bound(eta: Transmissivity, repeaters: u32) -> Result<f64> {
    let per_link = eta.0.powf(1.0 / f64::from(repeaters + 1));
    if per_link >= 1.0 {
        return Err(Error::InfiniteCapacity);
    }
    // ln_1p keeps full precision for eta -> 0.
    Ok(-(-per_link).ln_1p() / std::f64::consts::LN_2)
}

pub fn skc_bound_or_inf(eta: Transmissivity, repeaters: u32) -> f64 {
    skc_bound(eta, repeaters).unwrap_or(f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eta_examples() {
        assert_eq!(eta_from_distance(0.0, 0.2).unwrap().value(), 1.0);
        assert!((eta_from_distance(50.0, 0.2).unwrap().value() - 0.1).abs() < 1e-15);
        let eta = eta_from_distance(41.2, 0.2).unwrap().value();
        assert!((eta - 10f64.powf(-0.824)).abs() < 1e-15);
        // the commonly quoted 0.15003 is 41.19 km; 41.2 km gives 0.149968
        assert!((eta - 0.149968).abs() < 1e-6);
    }

    #[test]
    fn eta_rejects_negative_inputs() {
        assert!(eta_from_distance(-1.0, 0.2).is_err());
        assert!(eta_from_distance(1.0, -0.2).is_err());
        assert!(eta_from_distance(f64::NAN, 0.2).is_err());
        assert!(Transmissivity::new(1.5).is_err());
    }

    #[test]
    fn skc_examples() {
        let half = Transmissivity::new(0.5).unwrap();
        assert!((skc_bound(half, 0).unwrap() - 1.0).abs() < 1e-15);
        let quarter = Transmissivity::new(0.25).unwrap();
        assert!((skc_bound(quarter, 1).unwrap() - 1.0).abs() < 1e-15);
        let at_crossover = Transmissivity::new(0.15003).unwrap();
        assert!((skc_bound(at_crossover, 0).unwrap() - 0.2345).abs() < 1e-3);
    }

    #[test]
    fn skc_at_unity_is_infinite() {
        assert_eq!(
            skc_bound(Transmissivity::LOSSLESS, 1),
            Err(Error::InfiniteCapacity)
        );
        assert_eq!(skc_bound_or_inf(Transmissivity::LOSSLESS, 0), f64::INFINITY);
    }

    #[test]
    fn skc_small_eta_asymptote() {
        for n in 0..4 {
            let mut prev_gap = f64::INFINITY;
            for eta in [1e-3, 1e-5, 1e-8, 1e-12] {
                let t = Transmissivity::new(eta).unwrap();
                let per_link = eta.powf(1.0 / f64::from(n + 1));
                let ratio = skc_bound(t, n).unwrap() / (per_link / std::f64::consts::LN_2);
                // -ln(1-x)/x - 1 = x/2 + x^2/3 + ... < x
                let gap = ratio - 1.0;
                assert!(gap > 0.0 && gap < per_link, "n={n} eta={eta} ratio={ratio}");
                assert!(gap < prev_gap);
                prev_gap = gap;
            }
            // below f64 resolution the ratio rounds to one but stays finite
            let tiny = skc_bound(Transmissivity::new(1e-16).unwrap(), n).unwrap();
            let lead = 1e-16f64.powf(1.0 / f64::from(n + 1)) / std::f64::consts::LN_2;
            assert!((tiny / lead - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn skc_ordering() {
        let mut prev = f64::INFINITY;
        for km in [1.0, 10.0, 100.0, 500.0] {
            let eta = eta_from_distance(km, 0.2).unwrap();
            let v = skc_bound(eta, 1).unwrap();
            assert!(v < prev);
            prev = v;
            assert!(skc_bound(eta, 2).unwrap() > v);
            assert!(skc_bound(eta, 0).unwrap() < v);
        }
    }
}
