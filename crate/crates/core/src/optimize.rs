//! Parameter search and figure regeneration.
//!
//! For a distance `L` the key rate is maximised over the relay offset `d2`
//! (coarse grid, then golden section), the fixed-buffer depth `m` and the
//! squeezing `χ`. Ties go to the smaller `d2`, then `m`, then `χ`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::Transmissivity;
use crate::error::{Error, Result};
use crate::fock::{self, DetectorModel, FockSettings};
use crate::geometry::{solve_geometry, ChannelParams};
use crate::rates::{p0_small_chi, p1_small_chi, z0_mean_wait, RateBreakdown, RateSource};

/// Relative margin a candidate must beat the incumbent by.
const TIE_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Small-χ formulas with `r = 1`.
    Analytic,
    /// Fock-space probabilities and RCI.
    Numeric,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Analytic => "analytic",
            Mode::Numeric => "numeric",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(Mode::Analytic),
            "numeric" => Ok(Mode::Numeric),
            other => Err(Error::Config(format!("unknown mode {other:?} (analytic|numeric)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub mode: Mode,
    pub chi_grid: Vec<f64>,
    pub m_candidates: Vec<u32>,
    /// Coarse grid points over `[0, d2_max]` before golden-section refinement.
    pub d2_coarse_points: usize,
    /// Golden-section stopping width as a fraction of `L`.
    pub d2_tol_frac: f64,
    /// Evaluate only these fractions of `d2_max` instead of searching.
    pub d2_fractions: Option<Vec<f64>>,
    /// Numeric mode: how many proxy-ranked `m` values to evaluate exactly.
    pub m_top_k: usize,
    pub fock: FockSettings,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            mode: Mode::Analytic,
            chi_grid: vec![0.1],
            m_candidates: default_m_candidates(),
            d2_coarse_points: 64,
            d2_tol_frac: 1e-3,
            d2_fractions: None,
            m_top_k: 3,
            fock: FockSettings::default(),
        }
    }
}

impl SweepSpec {
    pub fn numeric(chi_grid: Vec<f64>) -> Self {
        Self {
            mode: Mode::Numeric,
            chi_grid,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chi_grid.is_empty() || self.m_candidates.is_empty() {
            return Err(Error::Config("chi_grid and m_candidates must be nonempty".into()));
        }
        if let Some(&bad) = self.chi_grid.iter().find(|&&c| !(c > 0.0 && c < 1.0)) {
            return Err(Error::domain("chi", bad, "0 < chi < 1"));
        }
        if self.d2_coarse_points < 2 {
            return Err(Error::domain("d2_coarse_points", self.d2_coarse_points as f64, ">= 2"));
        }
        if !(self.d2_tol_frac > 0.0) {
            return Err(Error::domain("d2_tol_frac", self.d2_tol_frac, "> 0"));
        }
        if let Some(fr) = &self.d2_fractions {
            if fr.is_empty() || fr.iter().any(|f| !(0.0..=1.0).contains(f)) {
                return Err(Error::Config("d2_fractions must be nonempty and within [0, 1]".into()));
            }
        }
        if self.m_candidates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("m_candidates must be strictly increasing".into()));
        }
        if self.m_top_k == 0 {
            return Err(Error::domain("m_top_k", 0.0, ">= 1"));
        }
        Ok(())
    }
}

/// `0..=200` followed by 80 log-spaced depths up to `10^7`.
pub fn default_m_candidates() -> Vec<u32> {
    let mut out: Vec<u32> = (0..=200).collect();
    let (lo, hi, n) = (200f64.log10(), 7.0, 80);
    for k in 1..=n {
        let m = 10f64.powf(lo + (hi - lo) * k as f64 / n as f64).round() as u32;
        if m > *out.last().unwrap() {
            out.push(m);
        }
    }
    out
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|k| (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub curve_id: String,
    pub mode: Mode,
    pub total_km: f64,
    pub skr_bits_per_use: f64,
    pub skr_bits_per_s: f64,
    pub best_d2_km: f64,
    pub best_m: u32,
    pub best_chi: f64,
    pub breakdown: Option<RateBreakdown>,
}

#[derive(Debug, Clone)]
struct Candidate {
    value: f64,
    d2: f64,
    m: u32,
    chi: f64,
    breakdown: Option<RateBreakdown>,
}

impl Candidate {
    fn none() -> Self {
        Self {
            value: 0.0,
            d2: f64::NAN,
            m: 0,
            chi: f64::NAN,
            breakdown: None,
        }
    }

    /// Strictly better, or equally good with less hardware.
    fn beats(&self, other: &Candidate) -> bool {
        if other.breakdown.is_none() {
            return self.breakdown.is_some();
        }
        if self.value > other.value * (1.0 + TIE_MARGIN) {
            return true;
        }
        if self.value < other.value * (1.0 - TIE_MARGIN) {
            return false;
        }
        (self.d2, self.m, self.chi) < (other.d2, other.m, other.chi)
    }
}

/// Rate ceiling for depths `>= m`: `η_C` only falls with `m` and
/// `Z₀(m) >= Z₀(∞)`.
fn depth_ceiling(p1: f64, p0: f64) -> Result<f64> {
    Ok(p1 / z0_mean_wait(p0, u32::MAX)?)
}

/// Best `m` for a fixed relay offset in analytic mode.
fn analytic_at(total_km: f64, d2: f64, params: &ChannelParams, spec: &SweepSpec) -> Result<Candidate> {
    let mut best = Candidate::none();
    for &chi in &spec.chi_grid {
        for &m in &spec.m_candidates {
            let g = solve_geometry(total_km, d2, params, m)?;
            let p0 = p0_small_chi(g.eta1);
            if p0 <= 0.0 {
                break;
            }
            let p1 = p1_small_chi(chi, g.eta_c)?;
            if best.breakdown.is_some() && depth_ceiling(p1, p0)? < best.value * (1.0 - TIE_MARGIN) {
                break;
            }
            if p1 <= 0.0 {
                continue;
            }
            let b = RateBreakdown::assemble(p0, p1, m, 1.0, params.tau_s, RateSource::SmallChi)?;
            let cand = Candidate {
                value: b.skr_bits_per_use,
                d2,
                m,
                chi,
                breakdown: Some(b),
            };
            if cand.beats(&best) {
                best = cand;
            }
        }
    }
    Ok(best)
}

fn detectors(params: &ChannelParams) -> Result<DetectorModel> {
    DetectorModel::new(params.eta_det, params.dark_click_prob())
}

/// Best `(χ, m)` for a fixed relay offset in numeric mode. `m` is ranked by
/// the proxy `η_C(m)/Z₀(P₀, m)` and the top few are evaluated exactly.
fn numeric_at(total_km: f64, d2: f64, params: &ChannelParams, spec: &SweepSpec) -> Result<Candidate> {
    let det = detectors(params)?;
    let mut best = Candidate::none();
    let geometries = spec
        .m_candidates
        .iter()
        .map(|&m| solve_geometry(total_km, d2, params, m))
        .collect::<Result<Vec<_>>>()?;
    let eta1 = geometries[0].eta1;
    for &chi in &spec.chi_grid {
        let settings = spec.fock.adequate_for(chi);
        let relay = match fock::relay_stage(chi, eta1, &det, settings) {
            Ok(r) => r,
            Err(Error::ProbabilityUnderflow(_)) => continue,
            Err(e) => return Err(e),
        };
        let mut ranked: Vec<(f64, usize)> = geometries
            .iter()
            .enumerate()
            .map(|(k, g)| Ok((g.eta_c.value() / z0_mean_wait(relay.p0, g.m)?, k)))
            .collect::<Result<_>>()?;
        // Highest proxy first; stable order keeps smaller m on ties.
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
        for &(_, k) in ranked.iter().take(spec.m_top_k) {
            let g = &geometries[k];
            let delivered = relay.delivered(g.eta_c)?;
            let fin = match fock::final_stage(&delivered, &delivered, &det) {
                Ok(f) => f,
                Err(Error::ProbabilityUnderflow(_)) => continue,
                Err(e) => return Err(e),
            };
            let b = RateBreakdown::assemble(relay.p0, fin.p1, g.m, fin.rci.max(0.0), params.tau_s, RateSource::Fock)?;
            let cand = Candidate {
                value: b.skr_bits_per_use,
                d2,
                m: g.m,
                chi,
                breakdown: Some(b),
            };
            if cand.beats(&best) {
                best = cand;
            }
        }
    }
    Ok(best)
}

fn evaluate(total_km: f64, d2: f64, params: &ChannelParams, spec: &SweepSpec) -> Result<Candidate> {
    match spec.mode {
        Mode::Analytic => analytic_at(total_km, d2, params, spec),
        Mode::Numeric => numeric_at(total_km, d2, params, spec),
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Maximises the key rate at one distance.
pub fn optimize_point(total_km: f64, params: &ChannelParams, spec: &SweepSpec) -> Result<CurvePoint> {
    spec.validate()?;
    params.validate()?;
    if !(total_km > 0.0) {
        return Err(Error::domain("L", total_km, "> 0"));
    }
    let d2_max = params.d2_upper_bound(total_km);
    let mut best = Candidate::none();
    let consider = |c: Candidate, best: &mut Candidate| {
        if c.beats(best) {
            *best = c;
        }
    };

    if let Some(fractions) = &spec.d2_fractions {
        for &fr in fractions {
            consider(evaluate(total_km, fr * d2_max, params, spec)?, &mut best);
        }
    } else {
        let n = spec.d2_coarse_points;
        let grid: Vec<f64> = (0..n).map(|k| d2_max * k as f64 / (n - 1) as f64).collect();
        let coarse = grid
            .iter()
            .map(|&d2| evaluate(total_km, d2, params, spec))
            .collect::<Result<Vec<_>>>()?;
        let mut arg = 0;
        for (k, c) in coarse.iter().enumerate() {
            if c.beats(&coarse[arg]) {
                arg = k;
            }
        }
        for c in coarse.iter().cloned() {
            consider(c, &mut best);
        }
        // Golden section inside the bracket around the best grid point.
        let mut a = grid[arg.saturating_sub(1)];
        let mut b = grid[(arg + 1).min(n - 1)];
        let tol = spec.d2_tol_frac * total_km;
        let mut x1 = b - INV_PHI * (b - a);
        let mut x2 = a + INV_PHI * (b - a);
        let mut f1 = evaluate(total_km, x1, params, spec)?;
        let mut f2 = evaluate(total_km, x2, params, spec)?;
        consider(f1.clone(), &mut best);
        consider(f2.clone(), &mut best);
        while b - a > tol {
            if f2.beats(&f1) {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + INV_PHI * (b - a);
                f2 = evaluate(total_km, x2, params, spec)?;
                consider(f2.clone(), &mut best);
            } else {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - INV_PHI * (b - a);
                f1 = evaluate(total_km, x1, params, spec)?;
                consider(f1.clone(), &mut best);
            }
        }
    }

    let breakdown = best
        .breakdown
        .clone()
        .ok_or_else(|| Error::Infeasible(format!("no configuration yields a positive rate at L = {total_km} km")))?;
    Ok(CurvePoint {
        curve_id: String::new(),
        mode: spec.mode,
        total_km,
        skr_bits_per_use: breakdown.skr_bits_per_use,
        skr_bits_per_s: breakdown.skr_bits_per_s,
        best_d2_km: best.d2,
        best_m: best.m,
        best_chi: best.chi,
        breakdown: Some(breakdown),
    })
}

/// Optimised curve over `l_grid`, in grid order. Distances where no
/// configuration has a positive rate are reported with zero rate.
pub fn sweep_curve(curve_id: &str, l_grid: &[f64], params: &ChannelParams, spec: &SweepSpec) -> Result<Vec<CurvePoint>> {
    l_grid
        .par_iter()
        .map(|&l| match optimize_point(l, params, spec) {
            Ok(mut p) => {
                p.curve_id = curve_id.to_string();
                Ok(p)
            }
            Err(Error::Infeasible(_)) => Ok(CurvePoint {
                curve_id: curve_id.to_string(),
                mode: spec.mode,
                total_km: l,
                skr_bits_per_use: 0.0,
                skr_bits_per_s: 0.0,
                best_d2_km: f64::NAN,
                best_m: 0,
                best_chi: f64::NAN,
                breakdown: None,
            }),
            Err(e) => Err(e),
        })
        .collect()
}

/// Memoryless single-node reference optimised over `spec.chi_grid`.
pub fn baseline_point(total_km: f64, params: &ChannelParams, spec: &SweepSpec) -> Result<CurvePoint> {
    let mut best: Option<fock::BaselineRate> = None;
    for &chi in &spec.chi_grid {
        let b = match fock::baseline_for_distance(total_km, params, chi, spec.fock.adequate_for(chi)) {
            Ok(b) => b,
            Err(Error::ProbabilityUnderflow(_)) => continue,
            Err(e) => return Err(e),
        };
        if best
            .as_ref()
            .is_none_or(|cur| b.skr_bits_per_use > cur.skr_bits_per_use * (1.0 + TIE_MARGIN))
        {
            best = Some(b);
        }
    }
    let b = best.ok_or_else(|| Error::Infeasible(format!("baseline has no signal at L = {total_km} km")))?;
    Ok(CurvePoint {
        curve_id: "single-node".into(),
        mode: Mode::Numeric,
        total_km,
        skr_bits_per_use: b.skr_bits_per_use,
        skr_bits_per_s: b.skr_bits_per_use / params.tau_s,
        best_d2_km: 0.0,
        best_m: 0,
        best_chi: b.chi,
        breakdown: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Crossover {
    /// `a - b` changes sign at `km`; `a_overtakes` tells which way.
    At { km: f64, a_overtakes: bool },
    NoCrossing,
}

impl Crossover {
    pub fn km(self) -> Option<f64> {
        match self {
            Crossover::At { km, .. } => Some(km),
            Crossover::NoCrossing => None,
        }
    }
}

pub const CROSSOVER_TOL_KM: f64 = 0.05;

fn log_gap(a: f64, b: f64) -> f64 {
    let la = if a > 0.0 { a.ln() } else { -1e300 };
    let lb = if b > 0.0 { b.ln() } else { -1e300 };
    la - lb
}

/// First crossing of two rate curves given as functions of `L`, located on
/// `scan` and refined by bisection to `tol_km`.
pub fn crossover<A, B>(curve_a: A, curve_b: B, scan: &[f64], tol_km: f64) -> Result<Crossover>
where
    A: Fn(f64) -> Result<f64>,
    B: Fn(f64) -> Result<f64>,
{
    let gap = |l: f64| -> Result<f64> { Ok(log_gap(curve_a(l)?, curve_b(l)?)) };
    let mut prev: Option<(f64, f64)> = None;
    for &l in scan {
        let g = gap(l)?;
        if let Some((lp, gp)) = prev {
            if gp == 0.0 && g == 0.0 {
                prev = Some((l, g));
                continue;
            }
            if (gp < 0.0) != (g < 0.0) && gp != 0.0 {
                let (mut lo, mut hi, g_lo) = (lp, l, gp);
                while hi - lo > tol_km {
                    let mid = 0.5 * (lo + hi);
                    let gm = gap(mid)?;
                    if (gm < 0.0) == (g_lo < 0.0) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return Ok(Crossover::At {
                    km: 0.5 * (lo + hi),
                    a_overtakes: g_lo < 0.0,
                });
            }
        }
        prev = Some((l, g));
    }
    Ok(Crossover::NoCrossing)
}

/// Crossing of two curves sampled on the same distances, interpolating the
/// log-rate gap linearly between samples.
pub fn crossover_sampled(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<Crossover> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.0 != y.0) {
        return Err(Error::Config("sampled curves must share their distance grid".into()));
    }
    let gaps: Vec<(f64, f64)> = a.iter().zip(b).map(|(x, y)| (x.0, log_gap(x.1, y.1))).collect();
    for w in gaps.windows(2) {
        let ((l0, g0), (l1, g1)) = (w[0], w[1]);
        if g0 != 0.0 && (g0 < 0.0) != (g1 < 0.0) {
            let km = l0 + (l1 - l0) * g0 / (g0 - g1);
            return Ok(Crossover::At {
                km,
                a_overtakes: g0 < 0.0,
            });
        }
    }
    Ok(Crossover::NoCrossing)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatCell {
    pub alpha_qm_db_per_km: f64,
    pub total_km: f64,
    pub feasible: bool,
    pub d2_over_l: f64,
    pub best_m: u32,
    pub skr_bits_per_use: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakEven {
    pub total_km: f64,
    /// Buffer loss where the optimal `d2` crosses half its maximum.
    pub alpha_qm_db_per_km: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub cells: Vec<HeatCell>,
    pub contour: Vec<BreakEven>,
}

/// Optimal `d2/L` over an `(α_QM, L)` grid (row-major in `alpha_qm_grid`),
/// plus the break-even buffer loss at each `L`. Switches are taken as ideal.
pub fn heatmap_optimal_d2(alpha_qm_grid: &[f64], l_grid: &[f64], params: &ChannelParams, spec: &SweepSpec) -> Result<Heatmap> {
    if alpha_qm_grid.is_empty() || l_grid.is_empty() {
        return Err(Error::Config("heatmap grids must be nonempty".into()));
    }
    let ideal = ChannelParams {
        eta_switch: 1.0,
        ..*params
    };
    let cells_in: Vec<(f64, f64)> = alpha_qm_grid
        .iter()
        .flat_map(|&a| l_grid.iter().map(move |&l| (a, l)))
        .collect();
    let cells = cells_in
        .par_iter()
        .map(|&(a, l)| {
            let p = ideal.with_buffer_loss(a);
            match optimize_point(l, &p, spec) {
                Ok(pt) => Ok(HeatCell {
                    alpha_qm_db_per_km: a,
                    total_km: l,
                    feasible: true,
                    d2_over_l: pt.best_d2_km / l,
                    best_m: pt.best_m,
                    skr_bits_per_use: pt.skr_bits_per_use,
                }),
                Err(Error::Infeasible(_)) => Ok(HeatCell {
                    alpha_qm_db_per_km: a,
                    total_km: l,
                    feasible: false,
                    d2_over_l: f64::NAN,
                    best_m: 0,
                    skr_bits_per_use: 0.0,
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let lo = alpha_qm_grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = alpha_qm_grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let contour = l_grid
        .par_iter()
        .map(|&l| {
            Ok(BreakEven {
                total_km: l,
                alpha_qm_db_per_km: break_even_alpha_qm(l, &ideal, spec, lo, hi)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Heatmap { cells, contour })
}

/// Buffer attenuation at which the optimal relay offset switches from the
/// node-sends-photon side (`d2` near zero) to the node-receives-photon side,
/// taken as the point where `d2_opt` reaches half of `d2_max`.
pub fn break_even_alpha_qm(total_km: f64, params: &ChannelParams, spec: &SweepSpec, lo: f64, hi: f64) -> Result<Option<f64>> {
    let half = 0.5 * params.d2_upper_bound(total_km);
    let side = |a: f64| -> Result<bool> {
        let p = params.with_buffer_loss(a);
        Ok(optimize_point(total_km, &p, spec)?.best_d2_km >= half)
    };
    let (mut a, mut b) = (lo, hi);
    let (sa, sb) = (side(a)?, side(b)?);
    if sa == sb {
        return Ok(None);
    }
    while b - a > 1e-4 {
        let mid = 0.5 * (a + b);
        if side(mid)? == sa {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(Some(0.5 * (a + b)))
}

/// Transmissivity over `L` for the fibre in `params`.
pub fn channel_eta(total_km: f64, params: &ChannelParams) -> Result<Transmissivity> {
    Transmissivity::from_distance(total_km, params.alpha_db_per_km)
}
