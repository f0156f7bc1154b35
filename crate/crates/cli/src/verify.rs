//! Verification studies with JSON verdicts: each named study runs its
//! estimators at the requested ensemble size and compares against the
//! closed-form targets.

use anyhow::Result;
use serde::Serialize;
use serde_json::json;
use thermostat_lab::sde::{ou_projection_experiment, OuProjectionConfig};
use thermostat_lab::stats::converge::{weak_convergence_study, ConvergenceStudyConfig};
use thermostat_lab::stats::estimator::CorrelationEstimate;
use thermostat_lab::stats::moments::{driver_lift_ensemble, moment_scaling_fit, LiftLevel};
use thermostat_lab::stats::psi::{
    autocov_psi, green_kubo_constants, simulate_psi_ensemble, v_correlations, PsiEnsembleSpec,
};

#[derive(Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub estimate: f64,
    pub target: f64,
    pub std_error: f64,
    /// |estimate - target| / std_error (or a ratio/absolute detail when the
    /// check is not a band test).
    pub sigma_distance: f64,
}

#[derive(Debug, Serialize)]
pub struct Verdict {
    pub experiment: String,
    pub pass: bool,
    pub seed: u64,
    /// RNG streams consumed by the ensemble: [start, end).
    pub seed_streams: (u64, u64),
    pub params: serde_json::Value,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl Verdict {
    fn new(experiment: &str, seed: u64, streams: u64, params: serde_json::Value) -> Self {
        Verdict {
            experiment: experiment.to_string(),
            pass: true,
            seed,
            seed_streams: (0, streams),
            params,
            checks: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn push(&mut self, check: Check) {
        self.pass &= check.pass;
        self.checks.push(check);
    }

    fn band_check(&mut self, name: &str, estimate: f64, target: f64, se: f64, k: f64) {
        let dist = (estimate - target).abs() / se;
        self.push(Check {
            name: name.to_string(),
            pass: dist <= k,
            estimate,
            target,
            std_error: se,
            sigma_distance: dist,
        });
    }

    fn range_check(&mut self, name: &str, value: f64, lo: f64, hi: f64) {
        self.push(Check {
            name: name.to_string(),
            pass: (lo..=hi).contains(&value),
            estimate: value,
            target: 0.5 * (lo + hi),
            std_error: 0.5 * (hi - lo),
            sigma_distance: (value - 0.5 * (lo + hi)).abs() / (0.5 * (hi - lo)),
        });
    }

    /// One check per diagonal entry plus an aggregated off-diagonal check.
    fn matrix_checks(&mut self, est: &CorrelationEstimate, k: f64) {
        let nd = est.rows;
        for i in 0..nd {
            let idx = i * nd + i;
            self.band_check(
                &format!("{}[{i},{i}]", est.formula),
                est.estimate[idx],
                est.target[idx],
                est.std_error[idx],
                k,
            );
        }
        let mut worst = 0.0f64;
        let mut worst_idx = (0, 0);
        for i in 0..nd {
            for j in 0..nd {
                if i == j {
                    continue;
                }
                let idx = i * nd + j;
                let dist = (est.estimate[idx] - est.target[idx]).abs() / est.std_error[idx];
                if dist > worst {
                    worst = dist;
                    worst_idx = (i, j);
                }
            }
        }
        let idx = worst_idx.0 * nd + worst_idx.1;
        self.push(Check {
            name: format!("{} off-diagonal (worst entry)", est.formula),
            pass: worst <= k,
            estimate: est.estimate[idx],
            target: est.target[idx],
            std_error: est.std_error[idx],
            sigma_distance: worst,
        });
        if est.low_power {
            self.warnings.push(format!(
                "{}: fewer than 100 samples (low power)",
                est.formula
            ));
        }
    }
}

pub fn run_autocov(trajectories: usize, seed: u64) -> Result<Verdict> {
    let spec = PsiEnsembleSpec::stationary(2, 2, 1.0, 1.5, trajectories, seed);
    let ens = simulate_psi_ensemble(&spec)?;
    let estimates = autocov_psi(&ens, &[0.0, 1.0])?;
    let mut verdict = Verdict::new(
        "autocov",
        seed,
        trajectories as u64,
        serde_json::to_value(&spec)?,
    );
    for est in &estimates {
        verdict.matrix_checks(est, 3.0);
    }
    Ok(verdict)
}

pub fn run_vcorr(trajectories: usize, seed: u64) -> Result<Verdict> {
    let spec = PsiEnsembleSpec::stationary(2, 2, 1.0, 6.0, trajectories, seed);
    let ens = simulate_psi_ensemble(&spec)?;
    let estimates = v_correlations(&ens, 1)?;
    let mut verdict = Verdict::new(
        "vcorr",
        seed,
        trajectories as u64,
        serde_json::to_value(&spec)?,
    );
    for est in &estimates {
        verdict.matrix_checks(est, 3.0);
    }
    Ok(verdict)
}

pub fn run_greenkubo(trajectories: usize, seed: u64) -> Result<Verdict> {
    let spec = PsiEnsembleSpec::stationary(2, 2, 1.0, 15.0, trajectories, seed);
    let ens = simulate_psi_ensemble(&spec)?;
    let gk = green_kubo_constants(&ens, 14)?;
    let mut verdict = Verdict::new(
        "greenkubo",
        seed,
        trajectories as u64,
        serde_json::to_value(&spec)?,
    );
    verdict.matrix_checks(&gk.sigma_tilde, 3.0);
    verdict.matrix_checks(&gk.e_tilde, 3.0);
    verdict.matrix_checks(&gk.e_full, 3.0);
    verdict.matrix_checks(&gk.strat_cancellation, 3.0);
    verdict.push(Check {
        name: "green-kubo estimator identity".into(),
        pass: gk.identity_defect < 1e-12,
        estimate: gk.identity_defect,
        target: 0.0,
        std_error: 1e-12,
        sigma_distance: gk.identity_defect / 1e-12,
    });
    if gk.tail_warning {
        verdict.warnings.push(format!(
            "green-kubo tail bound {} is not negligible at k_max = {}",
            gk.tail_bound, gk.k_max
        ));
    }
    Ok(verdict)
}

pub fn run_momentfit(lifts: usize, seed: u64) -> Result<Verdict> {
    let gaps = [0.1, 0.316, 1.0, 3.16, 10.0];
    let params = json!({
        "n_particles": 2, "dim": 2, "lambda": 1.0,
        "eps": [0.1, 0.05], "q": 4.0, "gaps": gaps, "horizon": 20.0, "lifts": lifts,
    });
    let mut verdict = Verdict::new("momentfit", seed, 2 * lifts as u64, params);
    let mut slopes1 = Vec::new();
    for (i, &eps) in [0.1f64, 0.05].iter().enumerate() {
        let ensemble =
            driver_lift_ensemble(2, 2, 1.0, eps, 20.0, 401, lifts, seed + i as u64 * 1000)?;
        let l1 = moment_scaling_fit(&ensemble, &gaps, 4.0, LiftLevel::Path)?;
        let l2 = moment_scaling_fit(&ensemble, &gaps, 4.0, LiftLevel::Area)?;
        verdict.range_check(
            &format!("level-1 slope (eps = {eps})"),
            l1.slope,
            0.45,
            0.55,
        );
        verdict.range_check(&format!("level-2 slope (eps = {eps})"), l2.slope, 0.9, 1.1);
        slopes1.push(l1.slope);
    }
    verdict.range_check(
        "level-1 slope stability across eps",
        (slopes1[0] - slopes1[1]).abs(),
        0.0,
        0.05,
    );
    Ok(verdict)
}

pub fn run_converge(paths: usize, seed: u64) -> Result<Verdict> {
    let cfg = ConvergenceStudyConfig {
        n_particles: 2,
        dim: 2,
        collision_rate: 1.0,
        total_energy: 2.0,
        eps_schedule: vec![0.4, 0.2, 0.1],
        obs_times: vec![1.0],
        paths,
        micro_ode_step: 0.01,
        sde_step: 0.002,
        seed,
        max_micro_horizon: None,
    };
    let report = weak_convergence_study(&cfg)?;
    let mut verdict = Verdict::new("converge", seed, paths as u64, serde_json::to_value(&cfg)?);
    for trend in &report.trends {
        let name = format!("t = {}, v_{}", trend.time, trend.coordinate + 1);
        verdict.push(Check {
            name: format!("{name}: KS strictly decreasing in eps"),
            pass: trend.strictly_decreasing,
            estimate: *trend.ks_statistics.last().unwrap(),
            target: trend.ks_statistics[0],
            std_error: f64::NAN,
            sigma_distance: f64::NAN,
        });
        let last = report
            .comparisons
            .iter()
            .find(|c| {
                c.eps == *cfg.eps_schedule.last().unwrap()
                    && c.time == trend.time
                    && c.coordinate == trend.coordinate
            })
            .unwrap();
        verdict.push(Check {
            name: format!("{name}: below 5% critical value at eps = 0.1"),
            pass: trend.final_pass_5pct,
            estimate: last.ks.statistic,
            target: last.ks.critical_5pct,
            std_error: f64::NAN,
            sigma_distance: last.ks.statistic / last.ks.critical_5pct,
        });
    }
    Ok(verdict)
}

pub fn run_ou_limit(paths: usize, seed: u64) -> Result<Verdict> {
    let big = OuProjectionConfig {
        n: 256,
        t_final: 10.0,
        step: 0.01,
        paths,
        coupled_paths: (paths / 5).max(200),
        seed,
    };
    let small = OuProjectionConfig {
        n: 64,
        ..big.clone()
    };
    let report_big = ou_projection_experiment(&big)?;
    let report_small = ou_projection_experiment(&small)?;

    let mut verdict = Verdict::new(
        "ou-limit",
        seed,
        (2 * paths + big.coupled_paths) as u64,
        serde_json::to_value(&big)?,
    );
    verdict.push(Check {
        name: "u_1(10) vs OU marginal, KS below 1% critical value (n = 256)".into(),
        pass: !report_big.ks.rejects_at_1pct(),
        estimate: report_big.ks.statistic,
        target: report_big.ks.critical_1pct,
        std_error: f64::NAN,
        sigma_distance: report_big.ks.statistic / report_big.ks.critical_1pct,
    });
    let ratio = report_small.mean_sup_deviation / report_big.mean_sup_deviation;
    verdict.range_check("mean sup-deviation ratio n=64 / n=256", ratio, 1.6, 2.5);
    verdict.band_check(
        "stationary E[u_1^2] (n = 256)",
        report_big.mean_u1_sq,
        1.0,
        report_big.mean_u1_sq_se,
        3.0,
    );
    verdict.band_check(
        "OU variance at t = 10",
        report_big.ou_variance,
        1.0 - (-10.0f64).exp(),
        report_big.ou_variance_se,
        3.0,
    );
    Ok(verdict)
}
