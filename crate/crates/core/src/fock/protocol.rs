//! Finite-χ model of the single-rail protocol.
//!
//! Relay stage, per side: a TMSV on `A,C` and a split photon
//! `(|0⟩_D|1⟩_B + |1⟩_D|0⟩_B)/√2`. `C` and `D` each cross `d1` of fibre to
//! the relay, interfere on a balanced beamsplitter and are heralded by
//! exactly one of two threshold detectors clicking. `B` then travels to the
//! central station through the fibre, buffers and switches (`η_C`). The
//! final stage interferes `B` and `B'` the same way, leaving `ρ_{A,A'}`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::density::{rci, DensityMatrix};
use super::state::{
    balanced_beamsplitter, loss_channel, measure_diagonal, tmsv, DetectorModel, StateVector, DEFAULT_TRUNCATION_TOL,
};
use crate::bounds::Transmissivity;
use crate::error::{Error, Result};
use crate::geometry::{ChannelParams, PracticalGeometry};
use crate::rates::{RateBreakdown, RateSource};

/// Photon-number cutoff of the sources; adequate for χ ≤ 0.25.
pub const DEFAULT_CUTOFF: usize = 8;

const UNDERFLOW: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FockSettings {
    pub cutoff: usize,
    /// Upper bound on the discarded TMSV probability.
    pub truncation_tol: f64,
}

impl Default for FockSettings {
    fn default() -> Self {
        Self {
            cutoff: DEFAULT_CUTOFF,
            truncation_tol: DEFAULT_TRUNCATION_TOL,
        }
    }
}

impl FockSettings {
    /// Raises the cutoff if needed so a TMSV at `chi` passes the tail check.
    pub fn adequate_for(self, chi: f64) -> Self {
        let needed = super::state::tmsv_cutoff_for(chi, self.truncation_tol);
        Self {
            cutoff: self.cutoff.max(needed),
            ..self
        }
    }
}

fn detectors_from(params: &ChannelParams) -> Result<DetectorModel> {
    DetectorModel::new(params.eta_det, params.dark_click_prob())
}

/// Post-selects "first output clicks, second does not" (or the reverse) on
/// modes `first`, `first + 1` and removes both.
fn herald_single_click(state: &StateVector, first: usize, det: &DetectorModel, first_clicks: bool) -> Result<Vec<StateVector>> {
    let (w_first, w_second): (fn(&DetectorModel, usize) -> f64, fn(&DetectorModel, usize) -> f64) = if first_clicks {
        (DetectorModel::click, DetectorModel::no_click)
    } else {
        (DetectorModel::no_click, DetectorModel::click)
    };
    let mut out = Vec::new();
    for branch in measure_diagonal(state, first, |n| w_first(det, n))? {
        out.extend(measure_diagonal(&branch, first, |n| w_second(det, n))?);
    }
    Ok(out)
}

fn total_norm(branches: &[StateVector]) -> f64 {
    branches.iter().map(StateVector::norm_sqr).sum()
}

/// Heralded output of one relay: the purified `A,B` state with environment
/// modes, after the sign correction of the first-detector outcome.
#[derive(Debug, Clone)]
pub struct RelayState {
    /// Unnormalised branches over modes `A, B, E_C, E_D`.
    branches: Vec<StateVector>,
    pub p0: f64,
    /// Probability of each heralding pattern (first, second detector).
    pub pattern_probs: [f64; 2],
}

impl RelayState {
    /// Normalised teleported state `ρ_AB`.
    pub fn teleported(&self) -> Result<DensityMatrix> {
        DensityMatrix::from_branches(&self.branches, &[0, 1]).normalized()
    }

    /// `ρ_AB` after `B` crosses a channel of transmissivity `eta_c`.
    pub fn delivered(&self, eta_c: Transmissivity) -> Result<DensityMatrix> {
        let lossy = self
            .branches
            .iter()
            .map(|b| loss_channel(b, 1, eta_c))
            .collect::<Result<Vec<_>>>()?;
        DensityMatrix::from_branches(&lossy, &[0, 1]).normalized()
    }

    pub fn branches(&self) -> &[StateVector] {
        &self.branches
    }
}

pub fn relay_stage(chi: f64, eta1: Transmissivity, det: &DetectorModel, settings: FockSettings) -> Result<RelayState> {
    let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let source = tmsv(chi, settings.cutoff, settings.truncation_tol)?;
    let resource = StateVector::from_amplitudes(2, [(vec![0, 1], h), (vec![1, 0], h)])?;
    // A=0, C=1, D=2, B=3; losses append E_C=4, E_D=5.
    let mut state = source.tensor(&resource);
    state = loss_channel(&state, 1, eta1)?;
    state = loss_channel(&state, 2, eta1)?;
    state = balanced_beamsplitter(&state, (1, 2))?;

    let first = herald_single_click(&state, 1, det, true)?;
    let second = herald_single_click(&state, 1, det, false)?;
    let pattern_probs = [total_norm(&first), total_norm(&second)];
    let p0 = pattern_probs[0] + pattern_probs[1];
    if p0 < UNDERFLOW {
        return Err(Error::ProbabilityUnderflow(p0));
    }
    // The first-detector pattern heralds |11⟩ - |00⟩; a π phase on B maps
    // it onto the second pattern's |00⟩ + |11⟩.
    let minus_one = Complex64::new(-1.0, 0.0);
    let mut branches: Vec<StateVector> = first.into_iter().map(|b| b.phase_shift(1, minus_one)).collect();
    branches.extend(second);
    Ok(RelayState {
        branches,
        p0,
        pattern_probs,
    })
}

/// Result of the final measurement on `B, B'`.
#[derive(Debug, Clone)]
pub struct FinalStage {
    /// Normalised `ρ_{A,A'}` for the first-detector pattern.
    pub rho: DensityMatrix,
    pub p1: f64,
    /// Outcome-averaged reverse coherent information, bits per success.
    pub rci: f64,
    pub pattern_probs: [f64; 2],
}

/// Interferes `B` of `left` with `B'` of `right` (both `ρ_AB` with `A`
/// first) and post-selects on single clicks.
pub fn final_stage(left: &DensityMatrix, right: &DensityMatrix, det: &DetectorModel) -> Result<FinalStage> {
    let (da, db) = two_mode_dims(left)?;
    let (da2, db2) = two_mode_dims(right)?;
    // Nonzero entries of each `B`-block `⟨b|ρ|b̃⟩` as `(a, ã, value)`.
    // Photon-number conservation leaves these blocks banded and sparse.
    type Sparse = Vec<(usize, usize, Complex64)>;
    let blocks = |rho: &DensityMatrix, da: usize, db: usize| -> Vec<Vec<Sparse>> {
        (0..db)
            .map(|b| {
                (0..db)
                    .map(|bt| {
                        let mut entries = Vec::new();
                        for a in 0..da {
                            for at in 0..da {
                                let z = rho.matrix()[(a * db + b, at * db + bt)];
                                if z.re != 0.0 || z.im != 0.0 {
                                    entries.push((a, at, z));
                                }
                            }
                        }
                        entries
                    })
                    .collect()
            })
            .collect()
    };
    let lb = blocks(left, da, db);
    let rb = blocks(right, da2, db2);

    // Beamsplitter matrix elements ⟨x,y|U|b,b'⟩ grouped by output (x,y).
    let mut by_output: std::collections::BTreeMap<(usize, usize), Vec<(usize, usize, Complex64)>> = Default::default();
    for b in 0..db {
        for bp in 0..db2 {
            let out = balanced_beamsplitter(&StateVector::basis(vec![b as u8, bp as u8]), (0, 1))?;
            for (occ, amp) in out.iter() {
                by_output
                    .entry((usize::from(occ[0]), usize::from(occ[1])))
                    .or_default()
                    .push((b, bp, *amp));
            }
        }
    }

    let mut rhos = Vec::with_capacity(2);
    for first_clicks in [true, false] {
        // Σ_xy w(x,y) ⟨x,y|U|b,b'⟩ ⟨x,y|U|b̃,b̃'⟩*, keyed by (b, b', b̃, b̃').
        let mut coeffs: std::collections::BTreeMap<(usize, usize, usize, usize), Complex64> = Default::default();
        for (&(x, y), terms) in &by_output {
            let w = if first_clicks {
                det.click(x) * det.no_click(y)
            } else {
                det.no_click(x) * det.click(y)
            };
            if w <= 0.0 {
                continue;
            }
            for &(b, bp, u) in terms {
                for &(bt, bpt, ut) in terms {
                    *coeffs.entry((b, bp, bt, bpt)).or_default() += u * ut.conj() * w;
                }
            }
        }
        let mut acc = DMatrix::<Complex64>::zeros(da * da2, da * da2);
        for (&(b, bp, bt, bpt), &c) in &coeffs {
            if c.re == 0.0 && c.im == 0.0 {
                continue;
            }
            for &(a, at, l) in &lb[b][bt] {
                let cl = c * l;
                for &(a2, at2, r) in &rb[bp][bpt] {
                    acc[(a * da2 + a2, at * da2 + at2)] += cl * r;
                }
            }
        }
        rhos.push(DensityMatrix::new(vec![da, da2], acc)?);
    }
    let pattern_probs = [rhos[0].trace(), rhos[1].trace()];
    let p1 = pattern_probs[0] + pattern_probs[1];
    if p1 < UNDERFLOW {
        return Err(Error::ProbabilityUnderflow(p1));
    }
    let mut weighted = 0.0;
    let mut normalized = Vec::with_capacity(2);
    for (rho, p) in rhos.iter().zip(pattern_probs) {
        let n = rho.normalized()?;
        if p > 0.0 {
            weighted += p * rci(&n, &[0])?;
        }
        normalized.push(n);
    }
    Ok(FinalStage {
        rho: normalized.swap_remove(0),
        p1,
        rci: weighted / p1,
        pattern_probs,
    })
}

fn two_mode_dims(rho: &DensityMatrix) -> Result<(usize, usize)> {
    match rho.dims() {
        &[a, b] => Ok((a, b)),
        other => Err(Error::Numeric(format!("expected a two-mode state, got dims {other:?}"))),
    }
}

/// Output of the complete symmetric protocol.
#[derive(Debug, Clone)]
pub struct ProtocolState {
    pub rho_aa: DensityMatrix,
    /// Teleported state of one side before the journey to the centre.
    pub rho_ab: DensityMatrix,
    pub p0: f64,
    pub p1: f64,
    pub rci: f64,
}

pub fn full_protocol_state(
    chi: f64,
    eta1: Transmissivity,
    eta_c: Transmissivity,
    det: &DetectorModel,
    settings: FockSettings,
) -> Result<ProtocolState> {
    let relay = relay_stage(chi, eta1, det, settings)?;
    let delivered = relay.delivered(eta_c)?;
    let fin = final_stage(&delivered, &delivered, det)?;
    Ok(ProtocolState {
        rho_aa: fin.rho,
        rho_ab: relay.teleported()?,
        p0: relay.p0,
        p1: fin.p1,
        rci: fin.rci,
    })
}

/// Key rate with probabilities and RCI from the Fock model; waits from the
/// analytic formulas.
pub fn numeric_skr(geometry: &PracticalGeometry, params: &ChannelParams, chi: f64, settings: FockSettings) -> Result<RateBreakdown> {
    let det = detectors_from(params)?;
    let state = full_protocol_state(chi, geometry.eta1, geometry.eta_c, &det, settings)?;
    RateBreakdown::assemble(state.p0, state.p1, geometry.m, state.rci.max(0.0), params.tau_s, RateSource::Fock)
}

/// Memoryless single-node reference: two TMSVs whose halves meet at one
/// central measurement station after `L/2` of fibre each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRate {
    pub chi: f64,
    pub success_prob: f64,
    pub rci: f64,
    pub skr_bits_per_use: f64,
}

pub fn single_node_baseline(chi: f64, eta_half: Transmissivity, det: &DetectorModel, settings: FockSettings) -> Result<BaselineRate> {
    let source = tmsv(chi, settings.cutoff, settings.truncation_tol)?;
    // A=0, C=1, A'=2, C'=3; then env modes.
    let mut state = source.tensor(&source);
    state = loss_channel(&state, 1, eta_half)?;
    state = loss_channel(&state, 3, eta_half)?;
    state = balanced_beamsplitter(&state, (1, 3))?;
    let mut total = 0.0;
    let mut weighted = 0.0;
    for first_clicks in [true, false] {
        let (wc, wcp): (fn(&DetectorModel, usize) -> f64, fn(&DetectorModel, usize) -> f64) = if first_clicks {
            (DetectorModel::click, DetectorModel::no_click)
        } else {
            (DetectorModel::no_click, DetectorModel::click)
        };
        let mut branches = Vec::new();
        for b in measure_diagonal(&state, 1, |n| wc(det, n))? {
            // After removing C, C' sits at index 2.
            branches.extend(measure_diagonal(&b, 2, |n| wcp(det, n))?);
        }
        let p = total_norm(&branches);
        if p > UNDERFLOW {
            let rho = DensityMatrix::from_branches(&branches, &[0, 1]).normalized()?;
            weighted += p * rci(&rho, &[0])?;
        }
        total += p;
    }
    if total < UNDERFLOW {
        return Err(Error::ProbabilityUnderflow(total));
    }
    let r = weighted / total;
    Ok(BaselineRate {
        chi,
        success_prob: total,
        rci: r,
        skr_bits_per_use: r.max(0.0) * total,
    })
}

/// Baseline at total distance `L`, with detectors taken from `params`.
pub fn baseline_for_distance(total_km: f64, params: &ChannelParams, chi: f64, settings: FockSettings) -> Result<BaselineRate> {
    let det = detectors_from(params)?;
    let eta_half = Transmissivity::from_distance(total_km / 2.0, params.alpha_db_per_km)?;
    single_node_baseline(chi, eta_half, &det, settings)
}
