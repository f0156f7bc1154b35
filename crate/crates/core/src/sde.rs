//! Integrators for the limiting processes: the Stratonovich sphere diffusion
//! of the slow variable, the Itô SDE for the speeds, and the exact
//! Ornstein-Uhlenbeck transition used by the large-dimension projection study.

use crate::error::{Error, Result};
use crate::geom::{dot, norm, project_to_sphere_in_place};
use crate::rng::RngStream;
use crate::stats::ks::{ks_two_sample, KsOutcome};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SdeModel {
    StratSphere,
    ItoSpeed,
    Ou,
}

/// Covariance rate of the driving Brownian motion.
///
/// `GreenKubo` is the diffusive-limit covariance 2/(lambda d); `Unit` is the identity
/// covariance of the large-dimension projection setup. The two conventions
/// are deliberately kept apart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseScale {
    GreenKubo,
    Unit,
    Custom(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeConfig {
    pub model: SdeModel,
    pub n_particles: usize,
    pub dim: usize,
    pub collision_rate: f64,
    pub total_energy: f64,
    /// Requested step size; the actual grid divides t_final evenly.
    pub step: f64,
    pub t_final: f64,
    pub initial: Vec<f64>,
    pub noise: NoiseScale,
}

impl SdeConfig {
    pub fn nd(&self) -> usize {
        self.n_particles * self.dim
    }

    /// Per-component variance rate of the driving noise. The diffusion
    /// coefficient delta = 2/(lambda d) is always derived, never stored.
    pub fn variance_rate(&self) -> f64 {
        match self.noise {
            NoiseScale::GreenKubo => 2.0 / (self.collision_rate * self.dim as f64),
            NoiseScale::Unit => 1.0,
            NoiseScale::Custom(rate) => rate,
        }
    }

    /// Number of steps; the grid is uniform and reaches t_final exactly.
    pub fn n_steps(&self) -> usize {
        ((self.t_final / self.step) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn actual_step(&self) -> f64 {
        self.t_final / self.n_steps() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 1 {
            return Err(Error::param("n_particles", "must be at least 1"));
        }
        if self.dim < 1 {
            return Err(Error::InvalidDimension(self.dim, 1));
        }
        if !(self.collision_rate > 0.0) {
            return Err(Error::param("collision_rate", "must be positive"));
        }
        if !(self.total_energy > 0.0) {
            return Err(Error::param("total_energy", "must be positive"));
        }
        if !(self.step > 0.0) || !(self.t_final > 0.0) {
            return Err(Error::param("step", "step and t_final must be positive"));
        }
        if let NoiseScale::Custom(rate) = self.noise {
            if rate < 0.0 {
                return Err(Error::param("noise", "variance rate must be nonnegative"));
            }
        }
        match self.model {
            SdeModel::StratSphere => {
                if self.initial.len() != self.nd() {
                    return Err(Error::param("initial", "need an Nd-vector"));
                }
                let n2 = dot(&self.initial, &self.initial);
                if (n2 - self.total_energy).abs() / self.total_energy > 1e-10 {
                    return Err(Error::InvalidInitialState {
                        expected: self.total_energy,
                        actual: n2,
                    });
                }
            }
            SdeModel::ItoSpeed => {
                if self.dim < 2 {
                    return Err(Error::UnsupportedModel(
                        "ito-speed requires dim >= 2 (the d = 1 speed SDE is a different process)"
                            .into(),
                    ));
                }
                if self.initial.len() != self.n_particles {
                    return Err(Error::param("initial", "need an N-vector of speeds"));
                }
                if self.initial.iter().any(|&v| v <= 0.0) {
                    return Err(Error::param("initial", "all speeds must be positive"));
                }
                let n2 = dot(&self.initial, &self.initial);
                if (n2 - self.total_energy).abs() / self.total_energy > 1e-10 {
                    return Err(Error::InvalidInitialState {
                        expected: self.total_energy,
                        actual: n2,
                    });
                }
            }
            SdeModel::Ou => {
                if self.initial.len() != 1 {
                    return Err(Error::param("initial", "the OU model is scalar"));
                }
            }
        }
        Ok(())
    }
}

/// One ensemble member on a uniform grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathSample {
    pub times: Vec<f64>,
    /// Row-major (grid x dim).
    pub states: Vec<f64>,
    pub dim: usize,
    pub seed: (u64, u64),
    pub rejected_steps: u64,
}

impl PathSample {
    pub fn state_at(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }
}

/// Centered Gaussian increments with variance `variance_rate * h` per component.
pub fn brownian_increment(
    variance_rate: f64,
    h: f64,
    rng: &mut RngStream,
    out: &mut [f64],
) -> Result<()> {
    if !(h > 0.0) {
        return Err(Error::param("h", "must be positive"));
    }
    if variance_rate == 0.0 {
        out.fill(0.0);
        return Ok(());
    }
    let sigma = (variance_rate * h).sqrt();
    for x in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *x = sigma * z;
    }
    Ok(())
}

/// Scratch buffers for the Heun sphere step.
struct HeunScratch {
    k1: Vec<f64>,
    pred: Vec<f64>,
}

impl HeunScratch {
    fn new(nd: usize) -> Self {
        HeunScratch {
            k1: vec![0.0; nd],
            pred: vec![0.0; nd],
        }
    }
}

/// One Stratonovich midpoint (Heun) step of du = (I - u u^*/U) o dW,
/// followed by projection back to the sphere.
fn heun_sphere_step(u: &mut [f64], dw: &[f64], u_total: f64, s: &mut HeunScratch) {
    let nd = u.len();
    let c1 = dot(u, dw) / u_total;
    for i in 0..nd {
        s.k1[i] = dw[i] - c1 * u[i];
        s.pred[i] = u[i] + s.k1[i];
    }
    let c2 = dot(&s.pred, dw) / u_total;
    for i in 0..nd {
        u[i] += 0.5 * (s.k1[i] + dw[i] - c2 * s.pred[i]);
    }
    let _ = project_to_sphere_in_place(u, u_total);
}

/// Stratonovich sphere diffusion du = (I - u u^*/U) o dW, integrated with a
/// Heun midpoint step followed by projection, so |u|^2 = U holds exactly at
/// every grid point. The observer sees (step index, time, state) after each
/// step, including step 0.
pub fn strat_sphere_run<F: FnMut(usize, f64, &[f64])>(
    cfg: &SdeConfig,
    rng: &mut RngStream,
    mut observe: F,
) -> Result<()> {
    cfg.validate()?;
    if cfg.model != SdeModel::StratSphere {
        return Err(Error::UnsupportedModel("expected strat-sphere".into()));
    }
    let nd = cfg.nd();
    let u_total = cfg.total_energy;
    let rate = cfg.variance_rate();
    let h = cfg.actual_step();
    let n_steps = cfg.n_steps();

    let mut u = cfg.initial.clone();
    let mut dw = vec![0.0; nd];
    let mut scratch = HeunScratch::new(nd);
    observe(0, 0.0, &u);
    for step in 1..=n_steps {
        brownian_increment(rate, h, rng, &mut dw)?;
        heun_sphere_step(&mut u, &dw, u_total, &mut scratch);
        observe(step, step as f64 * h, &u);
    }
    Ok(())
}

pub fn strat_sphere_solve(cfg: &SdeConfig, rng: &mut RngStream) -> Result<PathSample> {
    let seed = (rng.seed(), rng.stream_index());
    let mut times = Vec::with_capacity(cfg.n_steps() + 1);
    let mut states = Vec::with_capacity((cfg.n_steps() + 1) * cfg.nd());
    strat_sphere_run(cfg, rng, |_, t, u| {
        times.push(t);
        states.extend_from_slice(u);
    })?;
    Ok(PathSample {
        times,
        states,
        dim: cfg.nd(),
        seed,
        rejected_steps: 0,
    })
}

pub fn strat_sphere_final(cfg: &SdeConfig, rng: &mut RngStream) -> Result<Vec<f64>> {
    let mut last = vec![0.0; cfg.nd()];
    strat_sphere_run(cfg, rng, |_, _, u| last.copy_from_slice(u))?;
    Ok(last)
}

const MAX_HALVINGS: u32 = 40;

/// Itô SDE for the speeds (Euler-Maruyama):
/// dv_k = delta^{1/2} [dW_k - v_k sum_j v_j dW_j / U]
///      + delta [ (d-1)/(2 v_k) - (Nd-1) v_k / (2U) ] dt,
/// with delta = 2/(lambda d); each step is renormalized to sum v_k^2 = U and
/// rejected (halved, redrawn) whenever any speed crosses zero.
pub fn ito_speed_run<F: FnMut(usize, f64, &[f64])>(
    cfg: &SdeConfig,
    rng: &mut RngStream,
    mut observe: F,
) -> Result<u64> {
    cfg.validate()?;
    if cfg.model != SdeModel::ItoSpeed {
        return Err(Error::UnsupportedModel("expected ito-speed".into()));
    }
    let n = cfg.n_particles;
    let d = cfg.dim as f64;
    let u_total = cfg.total_energy;
    let delta = 2.0 / (cfg.collision_rate * d);
    let sqrt_delta = delta.sqrt();
    let nd1 = (n as f64) * d - 1.0;
    let h = cfg.actual_step();
    let n_steps = cfg.n_steps();

    let mut v = cfg.initial.clone();
    let mut dw = vec![0.0; n];
    let mut cand = vec![0.0; n];
    let mut rejections = 0u64;

    // One Euler-Maruyama substep of size `h`; false when a speed went
    // nonpositive and the step must be rejected.
    #[allow(clippy::too_many_arguments)]
    fn em_substep(
        v: &[f64],
        cand: &mut [f64],
        dw: &mut [f64],
        h: f64,
        delta: f64,
        sqrt_delta: f64,
        d: f64,
        nd1: f64,
        u_total: f64,
        rng: &mut RngStream,
    ) -> bool {
        let sqrt_h = h.sqrt();
        for x in dw.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *x = sqrt_h * z;
        }
        let mixed = dot(v, dw) / u_total;
        for k in 0..v.len() {
            let drift = delta * ((d - 1.0) / (2.0 * v[k]) - nd1 * v[k] / (2.0 * u_total));
            let diff = sqrt_delta * (dw[k] - v[k] * mixed);
            cand[k] = v[k] + drift * h + diff;
        }
        if cand.iter().any(|&x| x <= 0.0) {
            return false;
        }
        let _ = project_to_sphere_in_place(cand, u_total);
        true
    }

    // Advance over one nominal step of size `h`, bisecting on rejection.
    #[allow(clippy::too_many_arguments)]
    fn advance(
        v: &mut Vec<f64>,
        cand: &mut Vec<f64>,
        dw: &mut Vec<f64>,
        h: f64,
        depth: u32,
        delta: f64,
        sqrt_delta: f64,
        d: f64,
        nd1: f64,
        u_total: f64,
        rng: &mut RngStream,
        rejections: &mut u64,
    ) -> Result<()> {
        if em_substep(v, cand, dw, h, delta, sqrt_delta, d, nd1, u_total, rng) {
            std::mem::swap(v, cand);
            return Ok(());
        }
        if depth >= MAX_HALVINGS {
            return Err(Error::StepSizeUnderflow(MAX_HALVINGS));
        }
        *rejections += 1;
        for _ in 0..2 {
            advance(
                v,
                cand,
                dw,
                0.5 * h,
                depth + 1,
                delta,
                sqrt_delta,
                d,
                nd1,
                u_total,
                rng,
                rejections,
            )?;
        }
        Ok(())
    }

    observe(0, 0.0, &v);
    for step in 1..=n_steps {
        advance(
            &mut v,
            &mut cand,
            &mut dw,
            h,
            0,
            delta,
            sqrt_delta,
            d,
            nd1,
            u_total,
            rng,
            &mut rejections,
        )?;
        observe(step, step as f64 * h, &v);
    }
    Ok(rejections)
}

pub fn ito_speed_solve(cfg: &SdeConfig, rng: &mut RngStream) -> Result<PathSample> {
    let seed = (rng.seed(), rng.stream_index());
    let mut times = Vec::with_capacity(cfg.n_steps() + 1);
    let mut states = Vec::with_capacity((cfg.n_steps() + 1) * cfg.n_particles);
    let rejected = ito_speed_run(cfg, rng, |_, t, v| {
        times.push(t);
        states.extend_from_slice(v);
    })?;
    Ok(PathSample {
        times,
        states,
        dim: cfg.n_particles,
        seed,
        rejected_steps: rejected,
    })
}

pub fn ito_speed_final(cfg: &SdeConfig, rng: &mut RngStream) -> Result<(Vec<f64>, u64)> {
    let mut last = vec![0.0; cfg.n_particles];
    let rejected = ito_speed_run(cfg, rng, |_, _, v| last.copy_from_slice(v))?;
    Ok((last, rejected))
}

/// Exact transition of dX = dB - X/2 dt over a step of length h:
/// X' = e^{-h/2} X + xi sqrt(1 - e^{-h}), xi standard normal. Exact in
/// distribution for every h, so there is no step-size bias.
pub fn ou_exact_step(x: f64, h: f64, rng: &mut RngStream) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    let decay = (-0.5 * h).exp();
    let var = -(-h).exp_m1(); // 1 - e^{-h}, accurate for small h
    decay * x + var.sqrt() * z
}

/// OU path on the uniform grid of `cfg` via the exact transition.
pub fn ou_solve(cfg: &SdeConfig, rng: &mut RngStream) -> Result<PathSample> {
    cfg.validate()?;
    if cfg.model != SdeModel::Ou {
        return Err(Error::UnsupportedModel("expected ou".into()));
    }
    let seed = (rng.seed(), rng.stream_index());
    let h = cfg.actual_step();
    let n_steps = cfg.n_steps();
    let mut x = cfg.initial[0];
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    times.push(0.0);
    states.push(x);
    for step in 1..=n_steps {
        x = ou_exact_step(x, h, rng);
        times.push(step as f64 * h);
        states.push(x);
    }
    Ok(PathSample {
        times,
        states,
        dim: 1,
        seed,
        rejected_steps: 0,
    })
}

/// Setup of the large-dimension projection comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OuProjectionConfig {
    /// Sphere dimension n; the sphere has radius sqrt(n) and the driving
    /// noise identity covariance.
    pub n: usize,
    pub t_final: f64,
    pub step: f64,
    /// Paths used for the marginal comparison at t_final.
    pub paths: usize,
    /// Paths used for the coupled sup-deviation estimate.
    pub coupled_paths: usize,
    pub seed: u64,
}

/// Outcome of the projection experiment at a single n.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OuProjectionReport {
    pub config: OuProjectionConfig,
    /// KS comparison of u_1(t_final) against the exact OU marginal.
    pub ks: KsOutcome,
    /// Mean over coupled paths of sup_{t <= t_final} |u_1(t) - X(t)|.
    pub mean_sup_deviation: f64,
    pub sup_deviation_se: f64,
    /// Sample mean of u_1(t_final)^2 (exchangeability gives 1).
    pub mean_u1_sq: f64,
    pub mean_u1_sq_se: f64,
    /// Sample variance of the exact OU marginal at t_final.
    pub ou_variance: f64,
    pub ou_variance_se: f64,
}

/// Compare the first coordinate of the n-dimensional sphere diffusion
/// (radius sqrt(n), unit-covariance noise, started at (1, 1, ..., 1)) with
/// the Ornstein-Uhlenbeck process dX = dB - X/2 dt, X(0) = 1.
///
/// The sup-deviation paths drive the OU equation with the same first noise
/// coordinate as the sphere path; the marginal comparison uses independent
/// exact OU draws.
pub fn ou_projection_experiment(cfg: &OuProjectionConfig) -> Result<OuProjectionReport> {
    if cfg.n < 2 {
        return Err(Error::InvalidDimension(cfg.n, 2));
    }
    let sphere_cfg = SdeConfig {
        model: SdeModel::StratSphere,
        n_particles: cfg.n,
        dim: 1,
        collision_rate: 1.0,
        total_energy: cfg.n as f64,
        step: cfg.step,
        t_final: cfg.t_final,
        initial: vec![1.0; cfg.n],
        noise: NoiseScale::Unit,
    };

    // marginal ensemble: final u_1 per path
    let u1_final: Vec<f64> = (0..cfg.paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(cfg.seed, i as u64);
            strat_sphere_final(&sphere_cfg, &mut rng).map(|u| u[0])
        })
        .collect::<Result<Vec<_>>>()?;

    // independent exact OU marginals (one exact transition to t_final)
    let x_final: Vec<f64> = (0..cfg.paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(cfg.seed, (cfg.paths + i) as u64);
            ou_exact_step(1.0, cfg.t_final, &mut rng)
        })
        .collect();

    // coupled paths: the same dW_1 drives both the sphere diffusion and the
    // OU comparison process
    let h = sphere_cfg.actual_step();
    let n_steps = sphere_cfg.n_steps();
    let sup_devs: Vec<f64> = (0..cfg.coupled_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(cfg.seed, (2 * cfg.paths + i) as u64);
            let mut u = vec![1.0f64; cfg.n];
            let mut dw = vec![0.0f64; cfg.n];
            let mut scratch = HeunScratch::new(cfg.n);
            let mut x = 1.0f64;
            let mut sup = 0.0f64;
            for _ in 0..n_steps {
                brownian_increment(1.0, h, &mut rng, &mut dw)?;
                heun_sphere_step(&mut u, &dw, cfg.n as f64, &mut scratch);
                // Heun drift update for dX = dB - X/2 dt (additive noise)
                let k1 = -0.5 * x;
                let pred = x + h * k1 + dw[0];
                x += 0.5 * h * (k1 - 0.5 * pred) + dw[0];
                sup = sup.max((u[0] - x).abs());
            }
            Ok(sup)
        })
        .collect::<Result<Vec<_>>>()?;

    let (mean_sup, se_sup) = mean_se(&sup_devs);
    let u1_sq: Vec<f64> = u1_final.iter().map(|x| x * x).collect();
    let (mean_u1_sq, se_u1_sq) = mean_se(&u1_sq);
    let (ou_var, ou_var_se) = variance_se(&x_final);
    let ks = ks_two_sample(&u1_final, &x_final)?;

    Ok(OuProjectionReport {
        config: cfg.clone(),
        ks,
        mean_sup_deviation: mean_sup,
        sup_deviation_se: se_sup,
        mean_u1_sq,
        mean_u1_sq_se: se_u1_sq,
        ou_variance: ou_var,
        ou_variance_se: ou_var_se,
    })
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn variance_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    // large-sample standard error of the sample variance
    (var, var * (2.0 / (n - 1.0)).sqrt())
}

/// Speeds |u_k| of a stacked state.
pub fn speeds_of(u: &[f64], dim: usize) -> Vec<f64> {
    u.chunks_exact(dim).map(norm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::closed_form;
    use crate::stats::estimator::Accumulator;

    fn stream(n: u64) -> RngStream {
        RngStream::new(0x5de, n)
    }

    fn sphere_cfg(n: usize, d: usize, u_total: f64, t_final: f64, step: f64) -> SdeConfig {
        let mut initial = vec![0.0; n * d];
        let speed = (u_total / n as f64).sqrt();
        for k in 0..n {
            initial[k * d + (k % d)] = speed;
        }
        SdeConfig {
            model: SdeModel::StratSphere,
            n_particles: n,
            dim: d,
            collision_rate: 1.0,
            total_energy: u_total,
            step,
            t_final,
            initial,
            noise: NoiseScale::GreenKubo,
        }
    }

    #[test]
    fn brownian_increment_variance() {
        // lambda = 1, d = 2 gives variance rate 2/(lambda d) = 1
        let cfg = sphere_cfg(1, 2, 1.0, 1.0, 0.01);
        assert_eq!(cfg.variance_rate(), 1.0);
        let mut rng = stream(0);
        let h = 0.01;
        let mut acc = Accumulator::new();
        let mut cross = Accumulator::new();
        let mut dw = [0.0f64; 2];
        for _ in 0..500_000 {
            brownian_increment(1.0, h, &mut rng, &mut dw).unwrap();
            acc.push(dw[0] * dw[0]);
            acc.push(dw[1] * dw[1]);
            cross.push(dw[0] * dw[1]);
        }
        // 1e6 squared increments; se of the variance estimate
        let se = acc.std_error();
        assert!(
            (acc.mean() - h).abs() < 3.0 * se,
            "var {} se {se}",
            acc.mean()
        );
        assert!(cross.mean().abs() < 3.0 * cross.std_error());

        let mut zero = [1.0f64; 2];
        brownian_increment(0.0, h, &mut rng, &mut zero).unwrap();
        assert_eq!(zero, [0.0, 0.0]);
    }

    #[test]
    fn frozen_noise_gives_constant_sphere_path() {
        let mut cfg = sphere_cfg(1, 2, 1.0, 1.0, 0.1);
        cfg.noise = NoiseScale::Custom(0.0);
        let mut rng = stream(1);
        let path = strat_sphere_solve(&cfg, &mut rng).unwrap();
        for i in 0..path.times.len() {
            assert_eq!(path.state_at(i), &cfg.initial[..]);
        }
    }

    #[test]
    fn sphere_energy_is_exact_along_paths() {
        let cfg = sphere_cfg(2, 3, 2.5, 2.0, 0.01);
        let mut rng = stream(2);
        let path = strat_sphere_solve(&cfg, &mut rng).unwrap();
        for i in 0..path.times.len() {
            let e: f64 = path.state_at(i).iter().map(|x| x * x).sum();
            assert!((e - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn circle_diffusion_first_coordinate_decays() {
        // on the unit circle with rate 1 the angle is a Brownian motion, so
        // E[u_1(1)] = e^{-1/2}; second moments are pinned by the constraint
        let cfg = sphere_cfg(1, 2, 1.0, 1.0, 0.002);
        let paths = 10_000;
        let mut acc = Accumulator::new();
        for i in 0..paths {
            let mut rng = RngStream::new(0xc1c, i);
            let last = strat_sphere_final(&cfg, &mut rng).unwrap();
            let e: f64 = last.iter().map(|x| x * x).sum();
            assert!((e - 1.0).abs() < 1e-12);
            acc.push(last[0]);
        }
        let target = (-0.5f64).exp();
        let tol = 3.0 * acc.std_error() + 0.005; // 3 s.e. plus scheme bias allowance
        assert!(
            (acc.mean() - target).abs() < tol,
            "mean {} vs {target} (tol {tol})",
            acc.mean()
        );
        assert!(acc.mean() > 0.1 && acc.mean() < 0.9);
    }

    #[test]
    fn sphere_diffusion_equilibrates_to_uniform() {
        // long-time marginal: E[u_i u_j] = (U / Nd) delta_ij
        let cfg = sphere_cfg(2, 2, 2.0, 50.0, 0.01);
        let paths = 10_000;
        let mut acc = vec![Accumulator::new(); 16];
        for i in 0..paths {
            let mut rng = RngStream::new(0xe9u64, i);
            let last = strat_sphere_final(&cfg, &mut rng).unwrap();
            for a in 0..4 {
                for b in 0..4 {
                    acc[a * 4 + b].push(last[a] * last[b]);
                }
            }
        }
        for a in 0..4 {
            for b in 0..4 {
                let target = if a == b { 0.5 } else { 0.0 };
                let e = &acc[a * 4 + b];
                assert!(
                    (e.mean() - target).abs() < 3.0 * e.std_error(),
                    "entry ({a},{b}): {} vs {target} (se {})",
                    e.mean(),
                    e.std_error()
                );
            }
        }
    }

    #[test]
    fn sphere_law_is_rotation_equivariant() {
        // rotating the initial condition rotates the law: the second-moment
        // matrix from R u0 matches R M R^T from u0, within 3 s.e.
        let t_final = 1.0;
        let paths = 20_000u64;
        let angle = 0.8f64;
        let rot = crate::geom::RotationMatrix::rotation_2d(angle);
        let second_moments = |initial: Vec<f64>, seed: u64| -> ([f64; 4], [f64; 4]) {
            let cfg = SdeConfig {
                model: SdeModel::StratSphere,
                n_particles: 1,
                dim: 2,
                collision_rate: 1.0,
                total_energy: 1.0,
                step: 0.01,
                t_final,
                initial,
                noise: NoiseScale::GreenKubo,
            };
            let mut acc = [Accumulator::new(); 4];
            for i in 0..paths {
                let mut rng = RngStream::new(seed, i);
                let u = strat_sphere_final(&cfg, &mut rng).unwrap();
                for a in 0..2 {
                    for b in 0..2 {
                        acc[a * 2 + b].push(u[a] * u[b]);
                    }
                }
            }
            (
                [acc[0].mean(), acc[1].mean(), acc[2].mean(), acc[3].mean()],
                [
                    acc[0].std_error(),
                    acc[1].std_error(),
                    acc[2].std_error(),
                    acc[3].std_error(),
                ],
            )
        };
        let (m, se) = second_moments(vec![1.0, 0.0], 0xa0);
        let u0_rot = rot.apply(&[1.0, 0.0]);
        let (m_rot, se_rot) = second_moments(u0_rot, 0xa1);

        // R M R^T entrywise
        let r = |i: usize, j: usize| rot.entry(i, j);
        for a in 0..2 {
            for b in 0..2 {
                let mut expect = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        expect += r(a, i) * m[i * 2 + j] * r(b, j);
                    }
                }
                let combined = (se[a * 2 + b].powi(2) + se_rot[a * 2 + b].powi(2)).sqrt() * 3.0;
                assert!(
                    (m_rot[a * 2 + b] - expect).abs() < combined + 1e-12,
                    "entry ({a},{b}): {} vs {expect}",
                    m_rot[a * 2 + b]
                );
            }
        }
    }

    #[test]
    fn single_particle_speed_is_frozen() {
        let cfg = SdeConfig {
            model: SdeModel::ItoSpeed,
            n_particles: 1,
            dim: 2,
            collision_rate: 1.0,
            total_energy: 4.0,
            step: 0.01,
            t_final: 5.0,
            initial: vec![2.0],
            noise: NoiseScale::GreenKubo,
        };
        let mut rng = stream(3);
        let path = ito_speed_solve(&cfg, &mut rng).unwrap();
        assert!(path.states.iter().all(|&v| v == 2.0));
        assert_eq!(path.rejected_steps, 0);
    }

    #[test]
    fn huge_collision_rate_freezes_the_speeds() {
        let cfg = SdeConfig {
            model: SdeModel::ItoSpeed,
            n_particles: 2,
            dim: 2,
            collision_rate: 1e300,
            total_energy: 2.0,
            step: 0.01,
            t_final: 1.0,
            initial: vec![1.0, 1.0],
            noise: NoiseScale::GreenKubo,
        };
        let mut rng = stream(4);
        let path = ito_speed_solve(&cfg, &mut rng).unwrap();
        for i in 0..path.times.len() {
            let v = path.state_at(i);
            assert!((v[0] - 1.0).abs() < 1e-100 && (v[1] - 1.0).abs() < 1e-100);
        }
    }

    #[test]
    fn speed_sde_rejects_bad_initial_states() {
        let mut cfg = SdeConfig {
            model: SdeModel::ItoSpeed,
            n_particles: 2,
            dim: 2,
            collision_rate: 1.0,
            total_energy: 2.0,
            step: 0.01,
            t_final: 1.0,
            initial: vec![1.0, -1.0],
            noise: NoiseScale::GreenKubo,
        };
        assert!(cfg.validate().is_err()); // nonpositive speed
        cfg.initial = vec![1.0, 1.5];
        assert!(matches!(
            cfg.validate(),
            Err(Error::InvalidInitialState { .. })
        )); // off the energy sphere
    }

    #[test]
    fn speed_sde_rejects_one_dimension() {
        let cfg = SdeConfig {
            model: SdeModel::ItoSpeed,
            n_particles: 2,
            dim: 1,
            collision_rate: 1.0,
            total_energy: 2.0,
            step: 0.01,
            t_final: 1.0,
            initial: vec![1.0, 1.0],
            noise: NoiseScale::GreenKubo,
        };
        let mut rng = stream(5);
        assert!(matches!(
            ito_speed_solve(&cfg, &mut rng),
            Err(Error::UnsupportedModel(_))
        ));
    }

    #[test]
    fn absurd_step_size_reports_underflow() {
        // with h = 1e30 the net drift is hugely negative, so every halving
        // level keeps producing nonpositive speeds until the limit trips
        let cfg = SdeConfig {
            model: SdeModel::ItoSpeed,
            n_particles: 2,
            dim: 2,
            collision_rate: 1.0,
            total_energy: 2.0,
            step: 1e30,
            t_final: 2e30,
            initial: vec![1.0, 1.0],
            noise: NoiseScale::GreenKubo,
        };
        let mut rng = stream(6);
        assert!(matches!(
            ito_speed_solve(&cfg, &mut rng),
            Err(Error::StepSizeUnderflow(_))
        ));
    }

    #[test]
    fn speeds_maintain_energy_and_positivity() {
        let cfg = SdeConfig {
            model: SdeModel::ItoSpeed,
            n_particles: 2,
            dim: 2,
            collision_rate: 1.0,
            total_energy: 2.0,
            step: 0.005,
            t_final: 5.0,
            initial: vec![1.0, 1.0],
            noise: NoiseScale::GreenKubo,
        };
        for i in 0..50u64 {
            let mut rng = RngStream::new(0x9a9, i);
            let path = ito_speed_solve(&cfg, &mut rng).unwrap();
            for gi in 0..path.times.len() {
                let v = path.state_at(gi);
                assert!(v.iter().all(|&x| x > 0.0));
                let e: f64 = v.iter().map(|x| x * x).sum();
                assert!((e - 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ou_step_is_continuous_in_h() {
        let mut rng = stream(7);
        let x = 1.37;
        let out = ou_exact_step(x, 1e-12, &mut rng);
        assert!((out - x).abs() < 1e-5);
    }

    #[test]
    fn ou_reaches_unit_stationary_variance() {
        let paths = 100_000;
        let mut acc = Accumulator::new();
        for i in 0..paths {
            let mut rng = RngStream::new(0x09, i);
            let mut x = 0.0;
            for _ in 0..40 {
                x = ou_exact_step(x, 0.5, &mut rng);
            }
            acc.push(x);
        }
        let var = acc.variance();
        // se of a variance estimate ~ var * sqrt(2/(n-1))
        let se = var * (2.0 / (paths as f64 - 1.0)).sqrt();
        assert!(
            (var - closed_form::ou_stationary_variance()).abs() < 3.0 * se,
            "var {var}, se {se}"
        );
        assert!(acc.mean().abs() < 3.0 * acc.std_error());
    }

    #[test]
    fn ou_autocorrelation_at_unit_lag() {
        let paths = 100_000;
        let mut prod = Accumulator::new();
        let mut var0 = Accumulator::new();
        for i in 0..paths {
            let mut rng = RngStream::new(0x0a, i);
            let mut x = 0.0;
            for _ in 0..20 {
                x = ou_exact_step(x, 1.0, &mut rng);
            }
            let x0 = x;
            let x1 = ou_exact_step(x0, 1.0, &mut rng);
            prod.push(x0 * x1);
            var0.push(x0 * x0);
        }
        let corr = prod.mean() / var0.mean();
        let target = closed_form::ou_autocorr(1.0);
        let se = prod.std_error() / var0.mean();
        assert!(
            (corr - target).abs() < 3.0 * se + 0.005,
            "corr {corr} vs {target}"
        );
    }

    #[test]
    fn ou_transition_has_no_step_size_bias() {
        // reach t = 2 from x0 = 1 with very different step sizes
        let t = 2.0;
        let x0 = 1.0;
        let paths = 100_000u64;
        for &h in &[0.01f64, 0.5, 2.0] {
            let steps = (t / h).round() as usize;
            let mut acc = Accumulator::new();
            for i in 0..paths {
                let mut rng = RngStream::new(0x0b + h.to_bits(), i);
                let mut x = x0;
                for _ in 0..steps {
                    x = ou_exact_step(x, h, &mut rng);
                }
                acc.push(x);
            }
            let mean_target = closed_form::ou_mean(x0, t);
            let var_target = closed_form::ou_variance(t);
            assert!(
                (acc.mean() - mean_target).abs() < 3.0 * acc.std_error(),
                "h={h}: mean {} vs {mean_target}",
                acc.mean()
            );
            let var = acc.variance();
            let var_se = var * (2.0 / (paths as f64 - 1.0)).sqrt();
            assert!(
                (var - var_target).abs() < 3.0 * var_se,
                "h={h}: var {var} vs {var_target}"
            );
        }
    }

    #[test]
    fn projection_experiment_smoke() {
        let cfg = OuProjectionConfig {
            n: 16,
            t_final: 2.0,
            step: 0.02,
            paths: 400,
            coupled_paths: 100,
            seed: 0xabc,
        };
        let report = ou_projection_experiment(&cfg).unwrap();
        assert!(report.ks.statistic.is_finite());
        assert!(report.mean_sup_deviation > 0.0);
        assert!((report.mean_u1_sq - 1.0).abs() < 0.3);
    }
}
