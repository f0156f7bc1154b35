//! Weak-convergence study: compare the rescaled microscopic speeds
//! v(eps^{-2} t) against samples of the limiting speed SDE, per coordinate
//! and observation time, across a decreasing schedule of field strengths.

use crate::error::{Error, Result};
use crate::micro::{self, ModelParams};
use crate::rng::RngStream;
use crate::sde::{ito_speed_run, NoiseScale, SdeConfig, SdeModel};
use crate::stats::ks::{ks_two_sample, KsOutcome};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceStudyConfig {
    pub n_particles: usize,
    pub dim: usize,
    pub collision_rate: f64,
    pub total_energy: f64,
    /// Strictly decreasing field strengths.
    pub eps_schedule: Vec<f64>,
    /// Macroscopic observation times.
    pub obs_times: Vec<f64>,
    pub paths: usize,
    pub micro_ode_step: f64,
    pub sde_step: f64,
    pub seed: u64,
    /// Microscopic-horizon budget: eps values whose rescaled horizon
    /// eps^{-2} max(obs_times) exceeds this are skipped and reported as
    /// omitted rather than failing the whole study. None = no cap.
    pub max_micro_horizon: Option<f64>,
}

/// First four raw moments of a sample.
pub fn raw_moments(xs: &[f64]) -> [f64; 4] {
    let n = xs.len() as f64;
    let mut m = [0.0f64; 4];
    for &x in xs {
        let mut p = 1.0;
        for mk in m.iter_mut() {
            p *= x;
            *mk += p;
        }
    }
    for mk in m.iter_mut() {
        *mk /= n;
    }
    m
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoordinateComparison {
    pub eps: f64,
    pub time: f64,
    pub coordinate: usize,
    pub ks: KsOutcome,
    pub micro_moments: [f64; 4],
    pub limit_moments: [f64; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonotoneTrend {
    pub time: f64,
    pub coordinate: usize,
    /// KS statistics in the order of the eps schedule.
    pub ks_statistics: Vec<f64>,
    pub strictly_decreasing: bool,
    /// Below the 5% critical value at the smallest eps.
    pub final_pass_5pct: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub config: ConvergenceStudyConfig,
    pub comparisons: Vec<CoordinateComparison>,
    pub trends: Vec<MonotoneTrend>,
    /// eps values skipped because their microscopic horizon exceeded the
    /// budget, with the reason.
    pub omitted: Vec<(f64, String)>,
    pub all_monotone: bool,
    pub all_final_pass: bool,
}

/// Microscopic speed samples: one ensemble per eps, speeds recorded at the
/// rescaled observation times.
fn micro_speed_samples(
    cfg: &ConvergenceStudyConfig,
    eps: f64,
    stream_base: u64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let t_micro_max = cfg.obs_times.iter().cloned().fold(0.0f64, f64::max) / (eps * eps);
    let params = ModelParams::new(
        cfg.n_particles,
        cfg.dim,
        cfg.collision_rate,
        eps,
        cfg.total_energy,
        t_micro_max,
        cfg.micro_ode_step,
    );
    params.validate()?;
    let initial = params.default_initial_state();
    let obs_micro: Vec<f64> = cfg.obs_times.iter().map(|t| t / (eps * eps)).collect();

    let per_path: Vec<Vec<f64>> = (0..cfg.paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(cfg.seed, stream_base + i as u64);
            micro::simulate_speeds_at(&params, &initial, &obs_micro, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    // reshape into [time][coordinate][path]
    let n = cfg.n_particles;
    let mut out = vec![vec![vec![0.0; cfg.paths]; n]; cfg.obs_times.len()];
    for (p, row) in per_path.iter().enumerate() {
        for ti in 0..cfg.obs_times.len() {
            for k in 0..n {
                out[ti][k][p] = row[ti * n + k];
            }
        }
    }
    Ok(out)
}

/// Limit-law samples from the speed SDE at the observation times,
/// [time][coordinate][path].
fn limit_speed_samples(
    cfg: &ConvergenceStudyConfig,
    stream_base: u64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let t_max = cfg.obs_times.iter().cloned().fold(0.0f64, f64::max);
    let params = ModelParams::new(
        cfg.n_particles,
        cfg.dim,
        cfg.collision_rate,
        0.0,
        cfg.total_energy,
        1.0,
        1.0,
    );
    let v0: Vec<f64> = params
        .default_initial_state()
        .chunks_exact(cfg.dim)
        .map(|b| b.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let sde_cfg = SdeConfig {
        model: SdeModel::ItoSpeed,
        n_particles: cfg.n_particles,
        dim: cfg.dim,
        collision_rate: cfg.collision_rate,
        total_energy: cfg.total_energy,
        step: cfg.sde_step,
        t_final: t_max,
        initial: v0,
        noise: NoiseScale::GreenKubo,
    };
    sde_cfg.validate()?;
    let h = sde_cfg.actual_step();
    let obs_steps: Vec<usize> = cfg
        .obs_times
        .iter()
        .map(|t| (t / h).round() as usize)
        .collect();

    let per_path: Vec<Vec<f64>> = (0..cfg.paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(cfg.seed, stream_base + i as u64);
            let mut row = vec![0.0; cfg.obs_times.len() * cfg.n_particles];
            ito_speed_run(&sde_cfg, &mut rng, |step, _, v| {
                for (ti, &os) in obs_steps.iter().enumerate() {
                    if step == os {
                        row[ti * cfg.n_particles..(ti + 1) * cfg.n_particles].copy_from_slice(v);
                    }
                }
            })?;
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;

    let n = cfg.n_particles;
    let mut out = vec![vec![vec![0.0; cfg.paths]; n]; cfg.obs_times.len()];
    for (p, row) in per_path.iter().enumerate() {
        for ti in 0..cfg.obs_times.len() {
            for k in 0..n {
                out[ti][k][p] = row[ti * n + k];
            }
        }
    }
    Ok(out)
}

pub fn weak_convergence_study(cfg: &ConvergenceStudyConfig) -> Result<ConvergenceReport> {
    if cfg.eps_schedule.windows(2).any(|w| w[1] >= w[0]) || cfg.eps_schedule.is_empty() {
        return Err(Error::param("eps_schedule", "must be strictly decreasing"));
    }
    if cfg.obs_times.is_empty() || cfg.obs_times.iter().any(|&t| t <= 0.0) {
        return Err(Error::param("obs_times", "must be positive"));
    }
    if let Some(cap) = cfg.max_micro_horizon {
        let t_max = cfg.obs_times.iter().cloned().fold(0.0f64, f64::max);
        if cfg.eps_schedule.iter().all(|&e| t_max / (e * e) > cap) {
            return Err(Error::InsufficientData {
                requested: t_max / (cfg.eps_schedule[0] * cfg.eps_schedule[0]),
                available: cap,
            });
        }
    }

    let limit = limit_speed_samples(cfg, 1_000_000_000)?;

    let t_max = cfg.obs_times.iter().cloned().fold(0.0f64, f64::max);
    let mut omitted = Vec::new();
    let mut included = Vec::new();
    for &eps in &cfg.eps_schedule {
        let horizon = t_max / (eps * eps);
        match cfg.max_micro_horizon {
            Some(cap) if horizon > cap => omitted.push((
                eps,
                format!("microscopic horizon {horizon} exceeds the budget {cap}"),
            )),
            _ => included.push(eps),
        }
    }

    let mut comparisons = Vec::new();
    for (ei, &eps) in included.iter().enumerate() {
        let micro = micro_speed_samples(cfg, eps, (ei as u64 + 1) * 10_000_000)?;
        for (ti, &t) in cfg.obs_times.iter().enumerate() {
            for k in 0..cfg.n_particles {
                let ks = ks_two_sample(&micro[ti][k], &limit[ti][k])?;
                comparisons.push(CoordinateComparison {
                    eps,
                    time: t,
                    coordinate: k,
                    ks,
                    micro_moments: raw_moments(&micro[ti][k]),
                    limit_moments: raw_moments(&limit[ti][k]),
                });
            }
        }
    }

    let mut trends = Vec::new();
    for (ti, &t) in cfg.obs_times.iter().enumerate() {
        for k in 0..cfg.n_particles {
            let stats: Vec<f64> = included
                .iter()
                .map(|&eps| {
                    comparisons
                        .iter()
                        .find(|c| c.eps == eps && c.time == t && c.coordinate == k)
                        .map(|c| c.ks.statistic)
                        .unwrap()
                })
                .collect();
            let strictly_decreasing = stats.windows(2).all(|w| w[1] < w[0]);
            let final_pass = {
                let last = comparisons
                    .iter()
                    .find(|c| {
                        c.eps == *included.last().unwrap() && c.time == t && c.coordinate == k
                    })
                    .unwrap();
                !last.ks.rejects_at_5pct()
            };
            trends.push(MonotoneTrend {
                time: t,
                coordinate: k,
                ks_statistics: stats,
                strictly_decreasing,
                final_pass_5pct: final_pass,
            });
            let _ = ti;
        }
    }

    let all_monotone = trends.iter().all(|t| t.strictly_decreasing);
    let all_final_pass = trends.iter().all(|t| t.final_pass_5pct);
    Ok(ConvergenceReport {
        config: cfg.clone(),
        comparisons,
        trends,
        omitted,
        all_monotone,
        all_final_pass,
    })
}
