use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bounds::Transmissivity;
use crate::error::{Error, Result};

/// Default bound on the discarded TMSV probability mass.
pub const DEFAULT_TRUNCATION_TOL: f64 = 1e-10;

/// Amplitudes below this magnitude are dropped after each operation.
const PRUNE: f64 = 1e-300;

pub type Occupation = Vec<u8>;

/// A multi-mode pure state (possibly unnormalised) stored sparsely by
/// occupation tuple. Operations never truncate: a beamsplitter only
/// redistributes photons, so `cutoff` grows to the largest occupation
/// actually present.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    modes: usize,
    cutoff: usize,
    amplitudes: BTreeMap<Occupation, Complex64>,
}

impl StateVector {
    pub fn vacuum(modes: usize) -> Self {
        Self::basis(vec![0; modes])
    }

    pub fn basis(occupation: Occupation) -> Self {
        let cutoff = occupation.iter().copied().max().unwrap_or(0) as usize;
        let modes = occupation.len();
        let mut amplitudes = BTreeMap::new();
        amplitudes.insert(occupation, Complex64::new(1.0, 0.0));
        Self {
            modes,
            cutoff,
            amplitudes,
        }
    }

    pub fn from_amplitudes(modes: usize, amplitudes: impl IntoIterator<Item = (Occupation, Complex64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (occ, amp) in amplitudes {
            if occ.len() != modes {
                return Err(Error::Numeric(format!(
                    "occupation {occ:?} does not have {modes} modes"
                )));
            }
            *map.entry(occ).or_insert(Complex64::new(0.0, 0.0)) += amp;
        }
        Ok(Self::from_map(modes, map))
    }

    fn from_map(modes: usize, mut amplitudes: BTreeMap<Occupation, Complex64>) -> Self {
        amplitudes.retain(|_, a| a.norm() > PRUNE);
        let cutoff = amplitudes
            .keys()
            .flat_map(|o| o.iter().copied())
            .max()
            .unwrap_or(0) as usize;
        Self {
            modes,
            cutoff,
            amplitudes,
        }
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// Largest photon number present in any single mode.
    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn amplitude(&self, occupation: &[u8]) -> Complex64 {
        self.amplitudes
            .get(occupation)
            .copied()
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Occupation, &Complex64)> {
        self.amplitudes.iter()
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    /// Squared norm; below one after post-selection.
    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn scaled(mut self, factor: Complex64) -> Self {
        for a in self.amplitudes.values_mut() {
            *a *= factor;
        }
        self
    }

    pub fn normalized(self) -> Result<Self> {
        let n = self.norm_sqr();
        if !(n > 0.0) {
            return Err(Error::ProbabilityUnderflow(n));
        }
        Ok(self.scaled(Complex64::new(1.0 / n.sqrt(), 0.0)))
    }

    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amplitudes
            .iter()
            .map(|(o, a)| a.conj() * other.amplitude(o))
            .sum()
    }

    /// Expected photon number in `mode`, divided by the squared norm.
    pub fn mean_photons(&self, mode: usize) -> f64 {
        let weighted: f64 = self
            .amplitudes
            .iter()
            .map(|(o, a)| f64::from(o[mode]) * a.norm_sqr())
            .sum();
        weighted / self.norm_sqr()
    }

    /// Tensor product with `other`, whose modes are appended.
    pub fn tensor(&self, other: &StateVector) -> StateVector {
        let mut map = BTreeMap::new();
        for (o1, a1) in &self.amplitudes {
            for (o2, a2) in &other.amplitudes {
                let mut occ = o1.clone();
                occ.extend_from_slice(o2);
                map.insert(occ, a1 * a2);
            }
        }
        Self::from_map(self.modes + other.modes, map)
    }

    /// Multiplies each amplitude by `phase^n` where `n` is the occupation of
    /// `mode`.
    pub fn phase_shift(mut self, mode: usize, phase: Complex64) -> Self {
        for (o, a) in self.amplitudes.iter_mut() {
            *a *= phase.powu(u32::from(o[mode]));
        }
        self
    }

    pub fn append_vacuum(&self) -> StateVector {
        let map = self
            .amplitudes
            .iter()
            .map(|(o, a)| {
                let mut occ = o.clone();
                occ.push(0);
                (occ, *a)
            })
            .collect();
        Self {
            modes: self.modes + 1,
            cutoff: self.cutoff,
            amplitudes: map,
        }
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.modes {
            return Err(Error::Numeric(format!(
                "mode {mode} out of range for a {}-mode state",
                self.modes
            )));
        }
        Ok(())
    }

    /// Serialisable view: one entry per nonzero amplitude.
    pub fn to_dump(&self) -> StateDump {
        StateDump {
            modes: self.modes,
            cutoff: self.cutoff,
            norm_sqr: self.norm_sqr(),
            amplitudes: self
                .amplitudes
                .iter()
                .map(|(o, a)| AmplitudeEntry {
                    occupation: o.clone(),
                    re: a.re,
                    im: a.im,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeEntry {
    pub occupation: Vec<u8>,
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDump {
    pub modes: usize,
    pub cutoff: usize,
    pub norm_sqr: f64,
    pub amplitudes: Vec<AmplitudeEntry>,
}

/// Discarded probability of a TMSV truncated at `cutoff` photons per mode.
pub fn tmsv_tail(chi: f64, cutoff: usize) -> f64 {
    chi.powi(2 * (cutoff as i32 + 1))
}

/// Smallest cutoff whose TMSV tail is below `tol`.
pub fn tmsv_cutoff_for(chi: f64, tol: f64) -> usize {
    if chi == 0.0 {
        return 0;
    }
    let n = (tol.ln() / (2.0 * chi.ln())).ceil() - 1.0;
    let mut cutoff = n.max(0.0) as usize;
    while tmsv_tail(chi, cutoff) >= tol {
        cutoff += 1;
    }
    cutoff
}

/// `√(1-χ²) Σₙ χⁿ |n,n⟩` for `n ≤ cutoff`.
pub fn tmsv(chi: f64, cutoff: usize, tol: f64) -> Result<StateVector> {
    if !(0.0..1.0).contains(&chi) {
        return Err(Error::domain("chi", chi, "0 <= chi < 1"));
    }
    if cutoff > usize::from(u8::MAX) / 2 {
        return Err(Error::domain("cutoff", cutoff as f64, "<= 127"));
    }
    let tail = tmsv_tail(chi, cutoff);
    if tail >= tol {
        return Err(Error::Truncation {
            cutoff,
            tail,
            limit: tol,
        });
    }
    let norm = (1.0 - chi * chi).sqrt();
    let amps = (0..=cutoff).map(|n| {
        (
            vec![n as u8, n as u8],
            Complex64::new(norm * chi.powi(n as i32), 0.0),
        )
    });
    StateVector::from_amplitudes(2, amps)
}

/// `sqrt(n!)` for the occupation numbers used here.
fn sqrt_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).sqrt()).product()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Two-mode beamsplitter `a_i† → t a_i† + r a_j†`, `a_j† → -r* a_i† + t* a_j†`.
///
/// Applied by expanding the creation-operator polynomial of every basis
/// vector, so it is exact and conserves the photon number of the pair.
pub fn beamsplitter(state: &StateVector, (i, j): (usize, usize), t: Complex64, r: Complex64) -> Result<StateVector> {
    state.check_mode(i)?;
    state.check_mode(j)?;
    if i == j {
        return Err(Error::Numeric("beamsplitter needs two distinct modes".into()));
    }
    let unitarity = t.norm_sqr() + r.norm_sqr();
    if (unitarity - 1.0).abs() > 1e-12 {
        return Err(Error::domain("|t|^2 + |r|^2", unitarity, "1 within 1e-12"));
    }
    if state.cutoff * 2 > usize::from(u8::MAX) {
        return Err(Error::domain("photons in beamsplitter pair", (state.cutoff * 2) as f64, "<= 255"));
    }
    let rc = -r.conj();
    let tc = t.conj();
    let mut out: BTreeMap<Occupation, Complex64> = BTreeMap::new();
    for (occ, amp) in &state.amplitudes {
        let (n1, n2) = (usize::from(occ[i]), usize::from(occ[j]));
        let norm_in = sqrt_factorial(n1) * sqrt_factorial(n2);
        for k in 0..=n1 {
            let left = t.powu(k as u32) * r.powu((n1 - k) as u32) * binomial(n1, k);
            for l in 0..=n2 {
                let right = rc.powu(l as u32) * tc.powu((n2 - l) as u32) * binomial(n2, l);
                let x = k + l;
                let y = n1 + n2 - x;
                let coeff = left * right * (sqrt_factorial(x) * sqrt_factorial(y) / norm_in);
                let mut o = occ.clone();
                o[i] = x as u8;
                o[j] = y as u8;
                *out.entry(o).or_insert(Complex64::new(0.0, 0.0)) += amp * coeff;
            }
        }
    }
    Ok(StateVector::from_map(state.modes, out))
}

/// Balanced beamsplitter with real `t = r = 1/√2`.
pub fn balanced_beamsplitter(state: &StateVector, modes: (usize, usize)) -> Result<StateVector> {
    let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    beamsplitter(state, modes, h, h)
}

/// Pure-loss channel: mixes `mode` with a fresh vacuum environment mode
/// (appended last) at transmissivity `eta`. The purification is kept.
pub fn loss_channel(state: &StateVector, mode: usize, eta: Transmissivity) -> Result<StateVector> {
    state.check_mode(mode)?;
    let widened = state.append_vacuum();
    let env = widened.modes - 1;
    let t = Complex64::new(eta.value().sqrt(), 0.0);
    let r = Complex64::new((1.0 - eta.value()).sqrt(), 0.0);
    beamsplitter(&widened, (mode, env), t, r)
}

/// Projects modes `i, j` onto `(|01⟩ ± |10⟩)/√2` and removes them. Returns
/// the unnormalised conditional state and its probability.
pub fn bell_project(state: &StateVector, (i, j): (usize, usize), plus: bool) -> Result<(StateVector, f64)> {
    state.check_mode(i)?;
    state.check_mode(j)?;
    if i == j {
        return Err(Error::Numeric("Bell projection needs two distinct modes".into()));
    }
    let sign = if plus { 1.0 } else { -1.0 };
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut out: BTreeMap<Occupation, Complex64> = BTreeMap::new();
    for (occ, amp) in &state.amplitudes {
        let weight = match (occ[i], occ[j]) {
            (0, 1) => h,
            (1, 0) => sign * h,
            _ => continue,
        };
        let rest = remove_modes(occ, &[i, j]);
        *out.entry(rest).or_insert(Complex64::new(0.0, 0.0)) += amp * weight;
    }
    let projected = StateVector::from_map(state.modes - 2, out);
    let p = projected.norm_sqr();
    Ok((projected, p))
}

/// Applies a POVM diagonal in the Fock basis of `mode` with element weights
/// `w(n)` and removes the mode. The result is one unnormalised branch per
/// photon number; their incoherent sum is the conditional state.
pub fn measure_diagonal(state: &StateVector, mode: usize, weight: impl Fn(usize) -> f64) -> Result<Vec<StateVector>> {
    state.check_mode(mode)?;
    let mut branches: BTreeMap<u8, BTreeMap<Occupation, Complex64>> = BTreeMap::new();
    for (occ, amp) in &state.amplitudes {
        let w = weight(usize::from(occ[mode]));
        if w <= 0.0 {
            continue;
        }
        let rest = remove_modes(occ, &[mode]);
        branches
            .entry(occ[mode])
            .or_default()
            .insert(rest, amp * w.sqrt());
    }
    Ok(branches
        .into_values()
        .map(|m| StateVector::from_map(state.modes - 1, m))
        .filter(|s| !s.is_empty())
        .collect())
}

fn remove_modes(occ: &[u8], drop: &[usize]) -> Occupation {
    occ.iter()
        .enumerate()
        .filter(|(k, _)| !drop.contains(k))
        .map(|(_, &n)| n)
        .collect()
}

/// Threshold (click / no-click) detector with finite efficiency and a
/// per-gate dark-click probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub efficiency: f64,
    pub dark_click_prob: f64,
}

impl DetectorModel {
    pub const IDEAL: DetectorModel = DetectorModel {
        efficiency: 1.0,
        dark_click_prob: 0.0,
    };

    pub fn new(efficiency: f64, dark_click_prob: f64) -> Result<Self> {
        if !(efficiency > 0.0 && efficiency <= 1.0) {
            return Err(Error::domain("detector efficiency", efficiency, "0 < value <= 1"));
        }
        if !(0.0..1.0).contains(&dark_click_prob) {
            return Err(Error::domain("dark-click probability", dark_click_prob, "0 <= value < 1"));
        }
        Ok(Self {
            efficiency,
            dark_click_prob,
        })
    }

    /// `(1 - p_dark)(1 - eff)^n`.
    pub fn no_click(&self, photons: usize) -> f64 {
        (1.0 - self.dark_click_prob) * (1.0 - self.efficiency).powi(photons as i32)
    }

    pub fn click(&self, photons: usize) -> f64 {
        1.0 - self.no_click(photons)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn assert_close(a: &StateVector, b: &StateVector, tol: f64) {
        let keys: std::collections::BTreeSet<_> = a.iter().chain(b.iter()).map(|(o, _)| o.clone()).collect();
        for k in keys {
            let d = (a.amplitude(&k) - b.amplitude(&k)).norm();
            assert!(d < tol, "amplitude {k:?} differs by {d}");
        }
    }

    #[test]
    fn tmsv_examples() {
        let vac = tmsv(0.0, 8, DEFAULT_TRUNCATION_TOL).unwrap();
        assert_eq!(vac.len(), 1);
        assert_eq!(vac.amplitude(&[0, 0]), c(1.0));

        let s = tmsv(0.25, 8, DEFAULT_TRUNCATION_TOL).unwrap();
        assert!((s.norm_sqr() - (1.0 - 0.25f64.powi(18))).abs() < 1e-15);
        assert!((s.norm_sqr() - 1.0).abs() < 1e-10);

        let chi: f64 = 0.3;
        let s = tmsv(chi, 40, DEFAULT_TRUNCATION_TOL).unwrap();
        let sinh2 = chi.atanh().sinh().powi(2);
        assert!((s.mean_photons(0) - sinh2).abs() < 1e-12);
        assert!((sinh2 - chi * chi / (1.0 - chi * chi)).abs() < 1e-12);
    }

    #[test]
    fn tmsv_truncation_guard() {
        let err = tmsv(0.5, 8, DEFAULT_TRUNCATION_TOL).unwrap_err();
        assert!(matches!(err, Error::Truncation { cutoff: 8, .. }));
        let cut = tmsv_cutoff_for(0.5, DEFAULT_TRUNCATION_TOL);
        assert!(tmsv(0.5, cut, DEFAULT_TRUNCATION_TOL).is_ok());
        assert!(tmsv(0.5, cut - 1, DEFAULT_TRUNCATION_TOL).is_err());
        assert_eq!(tmsv_cutoff_for(0.25, DEFAULT_TRUNCATION_TOL), 8);
    }

    #[test]
    fn single_photon_split() {
        let s = balanced_beamsplitter(&StateVector::basis(vec![1, 0]), (0, 1)).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s.amplitude(&[1, 0]) - c(h)).norm() < 1e-15);
        assert!((s.amplitude(&[0, 1]) - c(h)).norm() < 1e-15);
    }

    #[test]
    fn hong_ou_mandel() {
        let s = balanced_beamsplitter(&StateVector::basis(vec![1, 1]), (0, 1)).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(s.amplitude(&[1, 1]).norm() < 1e-15);
        assert!((s.amplitude(&[2, 0]) + c(h)).norm() < 1e-15);
        assert!((s.amplitude(&[0, 2]) - c(h)).norm() < 1e-15);
    }

    #[test]
    fn binomial_law() {
        let (t, r) = (0.6f64, 0.8f64);
        for n in 0..=6u8 {
            let s = beamsplitter(&StateVector::basis(vec![n, 0]), (0, 1), c(t), c(r)).unwrap();
            for k in 0..=n {
                let expected = binomial(n as usize, k as usize).sqrt() * t.powi(k as i32) * r.powi((n - k) as i32);
                assert!((s.amplitude(&[k, n - k]) - c(expected)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn inverse_beamsplitter_restores_state() {
        let t = Complex64::from_polar(0.7, 0.3);
        let r = Complex64::from_polar((1.0f64 - 0.49).sqrt(), -1.1);
        let psi = StateVector::from_amplitudes(
            3,
            [
                (vec![2, 1, 0], Complex64::new(0.5, 0.1)),
                (vec![0, 3, 1], Complex64::new(-0.2, 0.4)),
                (vec![1, 1, 2], Complex64::new(0.3, -0.6)),
            ],
        )
        .unwrap();
        let once = beamsplitter(&psi, (0, 2), t, r).unwrap();
        assert!((once.norm_sqr() - psi.norm_sqr()).abs() < 1e-12);
        let back = beamsplitter(&once, (0, 2), t.conj(), -r).unwrap();
        assert_close(&back, &psi, 1e-12);
    }

    #[test]
    fn loss_examples() {
        let one = StateVector::basis(vec![1]);
        let kept = loss_channel(&one, 0, Transmissivity::LOSSLESS).unwrap();
        assert_close(&kept, &StateVector::basis(vec![1, 0]), 1e-15);
        let lost = loss_channel(&one, 0, Transmissivity::new(0.0).unwrap()).unwrap();
        assert_close(&lost, &StateVector::basis(vec![0, 1]), 1e-15);

        let s = tmsv(0.2, 12, DEFAULT_TRUNCATION_TOL).unwrap();
        let before = s.mean_photons(1);
        let after = loss_channel(&s, 1, Transmissivity::new(0.37).unwrap()).unwrap();
        assert!((after.mean_photons(1) - 0.37 * before).abs() < 1e-14);
    }

    #[test]
    fn bell_projection_examples() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let bell = StateVector::from_amplitudes(2, [(vec![0, 1], c(h)), (vec![1, 0], c(h))]).unwrap();
        let (_, p) = bell_project(&bell, (0, 1), true).unwrap();
        assert!((p - 1.0).abs() < 1e-15);
        let (_, p) = bell_project(&bell, (0, 1), false).unwrap();
        assert!(p < 1e-30);
        let (_, p) = bell_project(&StateVector::vacuum(2), (0, 1), true).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn povm_weights_sum_to_one() {
        let d = DetectorModel::new(0.93, 1e-11).unwrap();
        for n in 0..10 {
            assert!((d.click(n) + d.no_click(n) - 1.0).abs() < 1e-15);
        }
        assert_eq!(DetectorModel::IDEAL.no_click(0), 1.0);
        assert_eq!(DetectorModel::IDEAL.click(3), 1.0);
    }

    #[test]
    fn measurement_conserves_probability() {
        let s = loss_channel(&tmsv(0.3, 20, DEFAULT_TRUNCATION_TOL).unwrap(), 1, Transmissivity::new(0.5).unwrap()).unwrap();
        let d = DetectorModel::new(0.8, 0.01).unwrap();
        let total: f64 = [true, false]
            .iter()
            .map(|&click| {
                measure_diagonal(&s, 1, |n| if click { d.click(n) } else { d.no_click(n) })
                    .unwrap()
                    .iter()
                    .map(StateVector::norm_sqr)
                    .sum::<f64>()
            })
            .sum();
        assert!((total - s.norm_sqr()).abs() < 1e-12);
    }
}
