//! Seeded Monte Carlo of the heralding and buffering discipline.
//!
//! In each slot every idle side attempts its relay measurement, succeeding
//! with `p0`. A lone heralded state waits in the fixed buffer for at most
//! `m` further slots; if the partner heralds in time the pair is matched and
//! the central measurement fires with `p1`, otherwise the state is dropped
//! and both sides start over in the next slot. Matching is therefore always
//! oldest-first, since at most one state is ever waiting.
//!
//! Trials are split over [`STREAMS`] ChaCha8 streams derived from one seed
//! and merged in stream order, so results are bit-identical for a given seed
//! regardless of thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{solve_geometry, ChannelParams};
use crate::optimize::{optimize_point, SweepSpec};
use crate::rates::{z0_mean_wait, z1_mean_wait};

pub const STREAMS: u64 = 64;
pub const GENERATOR: &str = "ChaCha8 (rand_chacha), one stream per partition";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub p0: f64,
    pub p1: f64,
    pub m: u32,
    pub trials: u64,
    pub seed: u64,
    pub histogram_bins: usize,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p0", self.p0), ("p1", self.p1)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::domain(name, p, "0 <= p <= 1"));
            }
            if p == 0.0 {
                return Err(Error::InfiniteWait);
            }
        }
        if self.trials == 0 {
            return Err(Error::domain("trials", 0.0, ">= 1"));
        }
        if self.histogram_bins == 0 {
            return Err(Error::domain("histogram_bins", 0.0, ">= 1"));
        }
        Ok(())
    }
}

/// Fixed-edge histogram; the last bin is open-ended when `overflow` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub overflow: bool,
}

impl Histogram {
    fn uniform(lo: f64, hi: f64, bins: usize, overflow: bool) -> Self {
        let width = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..=bins).map(|k| lo + width * k as f64).collect();
        if overflow {
            edges.push(f64::INFINITY);
        }
        let n = edges.len() - 1;
        Self {
            edges,
            counts: vec![0; n],
            overflow,
        }
    }

    fn record(&mut self, x: f64) {
        let n = self.counts.len();
        let idx = self.edges[1..n].partition_point(|&e| e <= x);
        self.counts[idx.min(n - 1)] += 1;
    }

    fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `(bin_lo, bin_hi, mass)` rows; masses sum to one.
    pub fn rows(&self) -> Vec<(f64, f64, f64)> {
        let total = self.total().max(1) as f64;
        self.counts
            .iter()
            .enumerate()
            .map(|(k, &c)| (self.edges[k], self.edges[k + 1], c as f64 / total))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub config: SimConfig,
    pub mean_wait_slots: f64,
    pub stderr: f64,
    /// Successes per slot over all simulated time.
    pub empirical_rate: f64,
    pub matches: u64,
    /// Slots spent by the earlier state in the fixed buffer, per match.
    pub storage_hist: Histogram,
    /// Slots until the central measurement succeeds, per trial.
    pub wait_hist: Histogram,
    pub generator: String,
    pub streams: u64,
}

struct StreamTally {
    sum: u128,
    sum_sq: u128,
    trials: u64,
    matches: u64,
    storage: Histogram,
    wait: Histogram,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn split(total: u64, parts: u64, k: u64) -> u64 {
    total / parts + u64::from(k < total % parts)
}

/// Slots until the first success, at least one.
fn draw(geo: &Geometric, rng: &mut ChaCha8Rng) -> u64 {
    geo.sample(rng).saturating_add(1)
}

pub fn simulate_heralding(config: &SimConfig) -> Result<SimStats> {
    config.validate()?;
    let geo = Geometric::new(config.p0).map_err(|e| Error::Numeric(e.to_string()))?;
    let m = u64::from(config.m);
    let storage_template = if config.m as usize + 1 <= config.histogram_bins {
        Histogram::uniform(0.0, f64::from(config.m) + 1.0, config.m as usize + 1, false)
    } else {
        Histogram::uniform(0.0, f64::from(config.m) + 1.0, config.histogram_bins, false)
    };
    let expected = z0_mean_wait(config.p0, config.m)? * z1_mean_wait(config.p1)?;
    let wait_hi = (10.0 * expected).ceil().max(2.0);
    let wait_template = Histogram::uniform(1.0, 1.0 + wait_hi, config.histogram_bins, true);

    let tallies: Vec<StreamTally> = (0..STREAMS)
        .into_par_iter()
        .map(|stream| {
            let mut rng = stream_rng(config.seed, stream);
            let mut tally = StreamTally {
                sum: 0,
                sum_sq: 0,
                trials: split(config.trials, STREAMS, stream),
                matches: 0,
                storage: storage_template.clone(),
                wait: wait_template.clone(),
            };
            for _ in 0..tally.trials {
                let mut t: u64 = 0;
                loop {
                    let g1 = draw(&geo, &mut rng);
                    let g2 = draw(&geo, &mut rng);
                    let (a, b) = (g1.min(g2), g1.max(g2));
                    if b - a > m {
                        t = t.saturating_add(a + m);
                        continue;
                    }
                    t = t.saturating_add(b);
                    tally.matches += 1;
                    tally.storage.record((b - a) as f64);
                    if config.p1 >= 1.0 || rng.random::<f64>() < config.p1 {
                        break;
                    }
                }
                tally.sum += u128::from(t);
                tally.sum_sq += u128::from(t) * u128::from(t);
                tally.wait.record(t as f64);
            }
            tally
        })
        .collect();

    let mut sum = 0u128;
    let mut sum_sq = 0u128;
    let mut matches = 0;
    let mut storage = storage_template;
    let mut wait = wait_template;
    for t in &tallies {
        sum += t.sum;
        sum_sq += t.sum_sq;
        matches += t.matches;
        storage.merge(&t.storage);
        wait.merge(&t.wait);
    }
    let n = config.trials as f64;
    let mean = sum as f64 / n;
    let var = if config.trials > 1 {
        ((sum_sq as f64) - (sum as f64) * mean).max(0.0) / (n - 1.0)
    } else {
        0.0
    };
    Ok(SimStats {
        config: *config,
        mean_wait_slots: mean,
        stderr: (var / n).sqrt(),
        empirical_rate: n / sum as f64,
        matches,
        storage_hist: storage,
        wait_hist: wait,
        generator: GENERATOR.to_string(),
        streams: STREAMS,
    })
}

/// Successes per slot from a slot-by-slot run of the same discipline, with a
/// batch-means standard error over the streams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotRate {
    pub slots: u64,
    pub successes: u64,
    pub rate: f64,
    pub stderr: f64,
}

pub fn simulate_slots(p0: f64, p1: f64, m: u32, slots: u64, seed: u64) -> Result<SlotRate> {
    let probe = SimConfig {
        p0,
        p1,
        m,
        trials: 1,
        seed,
        histogram_bins: 1,
    };
    probe.validate()?;
    if slots < STREAMS {
        return Err(Error::domain("slots", slots as f64, ">= 64"));
    }
    let per_stream: Vec<(u64, u64)> = (0..STREAMS)
        .into_par_iter()
        .map(|stream| {
            let mut rng = stream_rng(seed, stream);
            let n = split(slots, STREAMS, stream);
            // None: both idle. Some(age): one state has waited `age` slots.
            let mut stored: Option<u32> = None;
            let mut successes = 0u64;
            for _ in 0..n {
                let matched = match stored {
                    Some(age) if age < m => {
                        if rng.random::<f64>() < p0 {
                            stored = None;
                            true
                        } else {
                            stored = Some(age + 1);
                            false
                        }
                    }
                    _ => {
                        let s1 = rng.random::<f64>() < p0;
                        let s2 = rng.random::<f64>() < p0;
                        stored = if s1 ^ s2 { Some(0) } else { None };
                        s1 && s2
                    }
                };
                if matched && rng.random::<f64>() < p1 {
                    successes += 1;
                }
            }
            (n, successes)
        })
        .collect();
    let total: u64 = per_stream.iter().map(|&(_, s)| s).sum();
    let rate = total as f64 / slots as f64;
    let batch: Vec<f64> = per_stream.iter().map(|&(n, s)| s as f64 / n as f64).collect();
    let k = batch.len() as f64;
    let mean = batch.iter().sum::<f64>() / k;
    let var = batch.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (k - 1.0);
    Ok(SlotRate {
        slots,
        successes: total,
        rate,
        stderr: (var / k).sqrt(),
    })
}

/// Which relay placement a storage map uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StorageConfiguration {
    /// Relays at the users (`d2 = 0`): the buffer absorbs the full
    /// classical round trip.
    Repeater,
    /// `d2` optimised; the heralding signal races ahead of the photon.
    SlowLight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageCell {
    pub alpha_qm_db_per_km: f64,
    pub total_km: f64,
    pub feasible: bool,
    pub d2_km: f64,
    pub m: u32,
    pub t_qm1_s: f64,
    /// Longest wait the fixed buffer allows, `m τ`.
    pub t_qm2_max_s: f64,
    /// `t_QM1` plus the simulated mean time in the fixed buffer.
    pub mean_storage_s: f64,
}

/// Storage times over an `(α_QM, L)` grid, row-major in `alpha_qm_grid`.
pub fn storage_time_map(
    alpha_qm_grid: &[f64],
    l_grid: &[f64],
    base: &ChannelParams,
    configuration: StorageConfiguration,
    sweep: &SweepSpec,
    trials: u64,
    seed: u64,
) -> Result<Vec<StorageCell>> {
    if alpha_qm_grid.is_empty() || l_grid.is_empty() {
        return Err(Error::Config("storage map grids must be nonempty".into()));
    }
    let cells: Vec<(f64, f64)> = alpha_qm_grid
        .iter()
        .flat_map(|&a| l_grid.iter().map(move |&l| (a, l)))
        .collect();
    cells
        .par_iter()
        .enumerate()
        .map(|(idx, &(alpha_qm, total_km))| {
            let params = base.with_buffer_loss(alpha_qm);
            let mut spec = sweep.clone();
            if configuration == StorageConfiguration::Repeater {
                spec.d2_fractions = Some(vec![0.0]);
            }
            let point = match optimize_point(total_km, &params, &spec) {
                Ok(p) => p,
                Err(_) => {
                    return Ok(StorageCell {
                        alpha_qm_db_per_km: alpha_qm,
                        total_km,
                        feasible: false,
                        d2_km: f64::NAN,
                        m: 0,
                        t_qm1_s: f64::NAN,
                        t_qm2_max_s: f64::NAN,
                        mean_storage_s: f64::NAN,
                    })
                }
            };
            let geometry = solve_geometry(total_km, point.best_d2_km, &params, point.best_m)?;
            let sim = simulate_heralding(&SimConfig {
                p0: crate::rates::p0_small_chi(geometry.eta1),
                p1: 1.0,
                m: point.best_m,
                trials,
                seed: seed.wrapping_add(idx as u64),
                histogram_bins: 64,
            })?;
            let mean_slots: f64 = sim
                .storage_hist
                .rows()
                .iter()
                .map(|&(lo, hi, mass)| 0.5 * (lo + hi - 1.0) * mass)
                .sum();
            Ok(StorageCell {
                alpha_qm_db_per_km: alpha_qm,
                total_km,
                feasible: true,
                d2_km: geometry.d2_km,
                m: point.best_m,
                t_qm1_s: geometry.t_qm1_s,
                t_qm2_max_s: geometry.t_qm2_s,
                mean_storage_s: geometry.t_qm1_s + mean_slots * params.tau_s,
            })
        })
        .collect()
}
