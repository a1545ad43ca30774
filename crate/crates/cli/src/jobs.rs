//! Table builders for each subcommand. A job is fully described by its
//! command name, the resolved `RunConfig` and a small JSON object of
//! command-specific arguments, all of which go into the output metadata so
//! `rerun` can rebuild the same table.

use serde::{Deserialize, Serialize};

use relayrate::bounds::{eta_from_distance, skc_bound_or_inf};
use relayrate::config::RunConfig;
use relayrate::export::{Cell, Table};
use relayrate::nesting::{critical_memory_loss, ideal_rate, memory_threshold, NestingDepth, SpeedRatio};
use relayrate::optimize::{
    baseline_point, crossover, crossover_sampled, heatmap_optimal_d2, sweep_curve, Crossover, CurvePoint,
};
use relayrate::rates::{z0_mean_wait, z1_mean_wait};
use relayrate::sim::{simulate_heralding, storage_time_map, SimConfig, StorageConfiguration, GENERATOR, STREAMS};
use relayrate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case", deny_unknown_fields)]
pub enum JobArgs {
    Bounds,
    Ideal,
    Practical,
    Heatmap,
    Sim { p0: f64, p1: f64, m: u32 },
    Storage { configuration: StorageConfiguration },
    Thresholds { speed_ratios: Vec<f64>, gammas: Vec<f64> },
}

impl JobArgs {
    pub fn name(&self) -> &'static str {
        match self {
            JobArgs::Bounds => "bounds",
            JobArgs::Ideal => "ideal",
            JobArgs::Practical => "practical",
            JobArgs::Heatmap => "heatmap",
            JobArgs::Sim { .. } => "sim",
            JobArgs::Storage { .. } => "storage",
            JobArgs::Thresholds { .. } => "thresholds",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Job {
    pub args: JobArgs,
    pub config: RunConfig,
}

impl Job {
    pub fn run(&self) -> Result<Table> {
        let mut table = match &self.args {
            JobArgs::Bounds => bounds(&self.config)?,
            JobArgs::Ideal => ideal(&self.config)?,
            JobArgs::Practical => practical(&self.config)?,
            JobArgs::Heatmap => heatmap(&self.config)?,
            JobArgs::Sim { p0, p1, m } => sim(&self.config, *p0, *p1, *m)?,
            JobArgs::Storage { configuration } => storage(&self.config, *configuration)?,
            JobArgs::Thresholds { speed_ratios, gammas } => thresholds(&self.config, speed_ratios, gammas)?,
        };
        let mut meta = vec![
            ("command".to_string(), self.args.name().to_string()),
            ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("mode".to_string(), self.config.mode.label().to_string()),
            ("seed".to_string(), self.config.seed.to_string()),
            ("generator".to_string(), GENERATOR.to_string()),
            ("config".to_string(), self.config.to_json()),
            (
                "args".to_string(),
                serde_json::to_string(&self.args).expect("job arguments serialise"),
            ),
        ];
        meta.append(&mut table.metadata);
        table.metadata = meta;
        Ok(table)
    }
}

fn distances(cfg: &RunConfig) -> Vec<f64> {
    cfg.l_grid()
}

fn bounds(cfg: &RunConfig) -> Result<Table> {
    let mut cols = vec!["total_km".to_string(), "eta".to_string()];
    cols.extend(cfg.repeaters.iter().map(|n| format!("skc{n}")));
    let mut t = Table::new(&cols.iter().map(String::as_str).collect::<Vec<_>>());
    for l in distances(cfg) {
        let eta = eta_from_distance(l, cfg.alpha_db_per_km)?;
        let mut row = vec![Cell::from(l), Cell::from(eta.value())];
        row.extend(cfg.repeaters.iter().map(|&n| Cell::from(skc_bound_or_inf(eta, n))));
        t.push(row)?;
    }
    Ok(t)
}

fn ideal(cfg: &RunConfig) -> Result<Table> {
    let f = SpeedRatio::new(cfg.speed_ratio())?;
    let depths = cfg.nesting_depths()?;
    let mut cols = vec!["total_km".to_string(), "eta".to_string()];
    cols.extend(depths.iter().map(|d| format!("k_{}", d.label())));
    cols.extend(cfg.repeaters.iter().map(|n| format!("skc{n}")));
    let mut t = Table::new(&cols.iter().map(String::as_str).collect::<Vec<_>>());
    let grid = distances(cfg);
    for &l in &grid {
        let eta = eta_from_distance(l, cfg.alpha_db_per_km)?;
        let mut row = vec![Cell::from(l), Cell::from(eta.value())];
        for &d in &depths {
            row.push(ideal_rate(f, d, l, cfg.alpha_db_per_km)?.into());
        }
        row.extend(cfg.repeaters.iter().map(|&n| Cell::from(skc_bound_or_inf(eta, n))));
        t.push(row)?;
    }
    t.meta("speed_ratio", format!("{:.11e}", f.value()));
    for &d in &depths {
        for &n in &cfg.repeaters {
            let k = move |l: f64| ideal_rate(f, d, l, cfg.alpha_db_per_km);
            let b = move |l: f64| Ok(skc_bound_or_inf(eta_from_distance(l, cfg.alpha_db_per_km)?, n));
            if let Crossover::At { km, .. } = crossover(k, b, &grid, 1e-3)? {
                t.meta(&format!("crossover_k_{}_skc{n}_km", d.label()), format!("{km:.3}"));
            }
        }
    }
    Ok(t)
}

const CURVE_COLUMNS: &[&str] = &[
    "curve",
    "mode",
    "total_km",
    "skr_bits_per_use",
    "skr_bits_per_s",
    "d2_km",
    "m",
    "chi",
    "p0",
    "p1",
    "z0",
    "z1",
    "raw_rate_bits",
];

fn curve_row(p: &CurvePoint) -> Vec<Cell> {
    let b = p.breakdown.as_ref();
    let pick = |f: fn(&relayrate::rates::RateBreakdown) -> f64| Cell::from(b.map_or(f64::NAN, f));
    vec![
        p.curve_id.as_str().into(),
        p.mode.label().into(),
        p.total_km.into(),
        p.skr_bits_per_use.into(),
        p.skr_bits_per_s.into(),
        p.best_d2_km.into(),
        p.best_m.into(),
        p.best_chi.into(),
        pick(|b| b.p0),
        pick(|b| b.p1),
        pick(|b| b.z0),
        pick(|b| b.z1),
        pick(|b| b.raw_rate_bits),
    ]
}

fn practical(cfg: &RunConfig) -> Result<Table> {
    let params = cfg.channel();
    let spec = cfg.sweep();
    let grid = distances(cfg);
    let mut t = Table::new(CURVE_COLUMNS);
    let multi = sweep_curve("multi-node", &grid, &params, &spec)?;
    for p in &multi {
        t.push(curve_row(p))?;
    }
    let sampled: Vec<(f64, f64)> = multi.iter().map(|p| (p.total_km, p.skr_bits_per_use)).collect();

    if cfg.baseline {
        let mut base = Vec::with_capacity(grid.len());
        for &l in &grid {
            let p = match baseline_point(l, &params, &spec) {
                Ok(p) => p,
                Err(Error::Infeasible(_)) => CurvePoint {
                    curve_id: "single-node".into(),
                    mode: spec.mode,
                    total_km: l,
                    skr_bits_per_use: 0.0,
                    skr_bits_per_s: 0.0,
                    best_d2_km: 0.0,
                    best_m: 0,
                    best_chi: f64::NAN,
                    breakdown: None,
                },
                Err(e) => return Err(e),
            };
            t.push(curve_row(&p))?;
            base.push((l, p.skr_bits_per_use));
        }
        if let Crossover::At { km, .. } = crossover_sampled(&sampled, &base)? {
            t.meta("crossover_single_node_km", format!("{km:.3}"));
        }
    }

    for &n in &cfg.repeaters {
        let mut bound = Vec::with_capacity(grid.len());
        for &l in &grid {
            let v = skc_bound_or_inf(eta_from_distance(l, cfg.alpha_db_per_km)?, n);
            t.push(vec![
                format!("skc{n}").into(),
                "bound".into(),
                l.into(),
                v.into(),
                (v / cfg.tau_s).into(),
                f64::NAN.into(),
                0u32.into(),
                f64::NAN.into(),
                f64::NAN.into(),
                f64::NAN.into(),
                f64::NAN.into(),
                f64::NAN.into(),
                f64::NAN.into(),
            ])?;
            bound.push((l, v));
        }
        if let Crossover::At { km, .. } = crossover_sampled(&sampled, &bound)? {
            t.meta(&format!("crossover_skc{n}_km"), format!("{km:.3}"));
        }
    }
    Ok(t)
}

fn heatmap(cfg: &RunConfig) -> Result<Table> {
    let params = cfg.channel();
    let map = heatmap_optimal_d2(&cfg.alpha_qm_grid, &distances(cfg), &params, &cfg.sweep())?;
    let mut t = Table::new(&["alpha_qm_db_per_km", "total_km", "feasible", "d2_over_l", "m", "skr_bits_per_use"]);
    for c in &map.cells {
        t.push(vec![
            c.alpha_qm_db_per_km.into(),
            c.total_km.into(),
            c.feasible.into(),
            c.d2_over_l.into(),
            c.best_m.into(),
            c.skr_bits_per_use.into(),
        ])?;
    }
    let contour: Vec<String> = map
        .contour
        .iter()
        .map(|b| {
            let a = b.alpha_qm_db_per_km.map_or("none".to_string(), |a| format!("{a:.4}"));
            format!("{}:{a}", b.total_km)
        })
        .collect();
    t.meta("break_even_alpha_qm_db_per_km", contour.join(" "));
    // The dual-rail analytic threshold uses buffers at vacuum light speed.
    let reference = critical_memory_loss(
        cfg.speed_ratio(),
        cfg.c_c,
        relayrate::SPEED_OF_LIGHT_KM_S,
        cfg.alpha_db_per_km,
    )?;
    t.meta("analytic_threshold_db_per_km", format!("{reference:.4}"));
    Ok(t)
}

fn sim(cfg: &RunConfig, p0: f64, p1: f64, m: u32) -> Result<Table> {
    let stats = simulate_heralding(&SimConfig {
        p0,
        p1,
        m,
        trials: cfg.trials,
        seed: cfg.seed,
        histogram_bins: cfg.histogram_bins,
    })?;
    let mut t = Table::new(&["histogram", "bin_lo", "bin_hi", "mass"]);
    for (name, h) in [("storage", &stats.storage_hist), ("wait", &stats.wait_hist)] {
        for (lo, hi, mass) in h.rows() {
            t.push(vec![name.into(), lo.into(), hi.into(), mass.into()])?;
        }
    }
    let expected = z0_mean_wait(p0, m)? * z1_mean_wait(p1)?;
    t.meta("trials", cfg.trials.to_string())
        .meta("streams", STREAMS.to_string())
        .meta("mean_wait_slots", format!("{:.11e}", stats.mean_wait_slots))
        .meta("stderr_slots", format!("{:.11e}", stats.stderr))
        .meta("analytic_wait_slots", format!("{expected:.11e}"))
        .meta("empirical_rate", format!("{:.11e}", stats.empirical_rate))
        .meta("matches", stats.matches.to_string());
    Ok(t)
}

fn storage(cfg: &RunConfig, configuration: StorageConfiguration) -> Result<Table> {
    let cells = storage_time_map(
        &cfg.alpha_qm_grid,
        &distances(cfg),
        &cfg.channel(),
        configuration,
        &cfg.sweep(),
        cfg.trials,
        cfg.seed,
    )?;
    let mut t = Table::new(&[
        "alpha_qm_db_per_km",
        "total_km",
        "feasible",
        "d2_km",
        "m",
        "t_qm1_s",
        "t_qm2_max_s",
        "mean_storage_s",
    ]);
    for c in cells {
        t.push(vec![
            c.alpha_qm_db_per_km.into(),
            c.total_km.into(),
            c.feasible.into(),
            c.d2_km.into(),
            c.m.into(),
            c.t_qm1_s.into(),
            c.t_qm2_max_s.into(),
            c.mean_storage_s.into(),
        ])?;
    }
    t.meta("configuration", serde_json::to_string(&configuration).expect("enum serialises"));
    Ok(t)
}

fn thresholds(cfg: &RunConfig, speed_ratios: &[f64], gammas: &[f64]) -> Result<Table> {
    // Buffers default to vacuum light speed here, the setting of the
    // analytic threshold; an explicit `c_qm` overrides it.
    let c_qm = cfg.c_qm.unwrap_or(relayrate::SPEED_OF_LIGHT_KM_S);
    let mut t = Table::new(&[
        "speed_ratio",
        "gamma",
        "gamma_star",
        "alpha_qm_crit_db_per_km",
        "e1_min_over_l",
        "d1_over_l",
        "d2_over_l",
        "s2_over_l",
        "buffered",
    ]);
    for &f in speed_ratios {
        let crit = critical_memory_loss(f, cfg.c_c, c_qm, cfg.alpha_db_per_km)?;
        for &g in gammas {
            let th = memory_threshold(g, f, cfg.c_c, c_qm, 1.0)?;
            t.push(vec![
                f.into(),
                g.into(),
                th.gamma_star.into(),
                crit.into(),
                th.e1_min.into(),
                th.d1.into(),
                th.d2.into(),
                th.s2.into(),
                th.buffered().into(),
            ])?;
        }
    }
    Ok(t)
}

/// Numeric body of a rendered table: everything after the metadata.
pub fn body(text: &str) -> String {
    if text.trim_start().starts_with('{') {
        let doc: serde_json::Value = serde_json::from_str(text).unwrap_or_default();
        return serde_json::to_string(&(doc.get("columns"), doc.get("rows"))).unwrap_or_default();
    }
    text.lines()
        .skip_while(|l| l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn parse_depths(list: &str) -> Result<Vec<String>> {
    let v: Vec<String> = list.split(',').map(|s| s.trim().to_string()).collect();
    for d in &v {
        d.parse::<NestingDepth>()?;
    }
    Ok(v)
}
