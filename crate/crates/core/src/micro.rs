//! Event-driven simulation of the microscopic dynamics: thermostat ODE
//! between collisions, rotation collisions at Poisson times, and the
//! slow/fast decomposition into the jump-free variable `u`, the rotation
//! frames `phi` and the driver `Phi`.

use crate::error::{Error, Result};
use crate::geom::{self, dot, norm, project_to_sphere_in_place, EnergySphereSpec, RotationMatrix};
use crate::rng::RngStream;
use rand::Rng;
use rand_distr::Exp;
use serde::{Deserialize, Serialize};

/// Parameters of the microscopic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n_particles: usize,
    pub dim: usize,
    /// Poisson collision rate per particle.
    pub collision_rate: f64,
    /// Field strength epsilon (may be zero).
    pub field_strength: f64,
    /// Unit field direction.
    pub field_direction: Vec<f64>,
    pub total_energy: f64,
    pub t_final: f64,
    /// Upper bound on the internal RK4 substep.
    pub ode_step: f64,
}

impl ModelParams {
    /// Conventional setup: field along the first axis.
    pub fn new(
        n_particles: usize,
        dim: usize,
        collision_rate: f64,
        field_strength: f64,
        total_energy: f64,
        t_final: f64,
        ode_step: f64,
    ) -> Self {
        let mut field_direction = vec![0.0; dim];
        if dim > 0 {
            field_direction[0] = 1.0;
        }
        ModelParams {
            n_particles,
            dim,
            collision_rate,
            field_strength,
            field_direction,
            total_energy,
            t_final,
            ode_step,
        }
    }

    pub fn nd(&self) -> usize {
        self.n_particles * self.dim
    }

    pub fn sphere(&self) -> Result<EnergySphereSpec> {
        EnergySphereSpec::new(self.n_particles, self.dim, self.total_energy)
    }

    pub fn validate(&self) -> Result<()> {
        self.sphere()?;
        if self.dim < 2 {
            return Err(Error::InvalidDimension(self.dim, 2));
        }
        if !(self.collision_rate > 0.0) {
            return Err(Error::param("collision_rate", "must be positive"));
        }
        if self.field_strength < 0.0 {
            return Err(Error::param("field_strength", "must be nonnegative"));
        }
        if !(self.t_final > 0.0) {
            return Err(Error::param("t_final", "must be positive"));
        }
        if !(self.ode_step > 0.0) {
            return Err(Error::param("ode_step", "must be positive"));
        }
        if self.field_direction.len() != self.dim
            || (norm(&self.field_direction) - 1.0).abs() > 1e-14
        {
            return Err(Error::param("field_direction", "must be a unit d-vector"));
        }
        Ok(())
    }

    /// The deterministic initial condition: equal speeds sqrt(U/N),
    /// axis-aligned directions cycling through the coordinate axes.
    pub fn default_initial_state(&self) -> Vec<f64> {
        let speed = (self.total_energy / self.n_particles as f64).sqrt();
        let mut p = vec![0.0; self.nd()];
        for k in 0..self.n_particles {
            p[k * self.dim + (k % self.dim)] = speed;
        }
        p
    }

    /// Uniform initial state on the energy sphere (for stationary-law studies).
    pub fn uniform_initial_state(&self, rng: &mut RngStream) -> Result<Vec<f64>> {
        let mut p = geom::sample_unit_direction(self.nd(), rng)?;
        project_to_sphere_in_place(&mut p, self.total_energy)?;
        Ok(p)
    }
}

/// Velocities of the N-particle system at a given time, stacked into R^{Nd}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSystemState {
    pub time: f64,
    pub p: Vec<f64>,
}

/// One stochastic collision: particle `particle` is rotated by `rotation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub time: f64,
    pub particle: usize,
    pub rotation: RotationMatrix,
}

/// Per-particle collision arrivals on [0, t_final], merged and sorted by time.
/// Inter-arrival times are i.i.d. Exponential(lambda), rotations Haar on SO(d).
pub fn sample_collision_schedule(
    params: &ModelParams,
    rng: &mut RngStream,
) -> Result<Vec<CollisionEvent>> {
    // an empty window (t_final = 0) is allowed here and yields no events
    if params.dim < 2 {
        return Err(Error::InvalidDimension(params.dim, 2));
    }
    if !(params.collision_rate > 0.0) {
        return Err(Error::param("collision_rate", "must be positive"));
    }
    if params.t_final < 0.0 {
        return Err(Error::param("t_final", "must be nonnegative"));
    }
    let exp = Exp::new(params.collision_rate)
        .map_err(|e| Error::param("collision_rate", e.to_string()))?;
    let mut events = Vec::new();
    for k in 0..params.n_particles {
        let mut t = 0.0;
        loop {
            t += rng.sample(exp);
            if t > params.t_final {
                break;
            }
            events.push(CollisionEvent {
                time: t,
                particle: k,
                rotation: geom::sample_haar_rotation(params.dim, rng)?,
            });
        }
    }
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.particle.cmp(&b.particle)));
    Ok(events)
}

/// Right-hand side of the thermostatted equations of motion:
/// for each particle, eps * n_hat - eps * (sum_j n_hat . p_j / U) * p_k.
/// The result is tangent to the energy sphere.
pub fn thermostat_rhs(
    p: &[f64],
    eps: f64,
    n_hat: &[f64],
    total_energy: f64,
    out: &mut [f64],
) -> Result<()> {
    if !(total_energy > 0.0) {
        return Err(Error::param("total_energy", "must be positive"));
    }
    let d = n_hat.len();
    debug_assert_eq!(p.len() % d, 0);
    debug_assert_eq!(p.len(), out.len());
    let mut field_sum = 0.0;
    for block in p.chunks_exact(d) {
        field_sum += dot(n_hat, block);
    }
    let coeff = eps * field_sum / total_energy;
    for (ob, pb) in out.chunks_exact_mut(d).zip(p.chunks_exact(d)) {
        for i in 0..d {
            ob[i] = eps * n_hat[i] - coeff * pb[i];
        }
    }
    Ok(())
}

/// Scratch buffers for the fixed-step RK4 integrator.
struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    fn new(nd: usize) -> Self {
        Rk4Scratch {
            k1: vec![0.0; nd],
            k2: vec![0.0; nd],
            k3: vec![0.0; nd],
            k4: vec![0.0; nd],
            tmp: vec![0.0; nd],
        }
    }
}

/// One classical RK4 step of the thermostat flow followed by projection
/// back to the energy sphere.
fn rk4_project_step(
    p: &mut [f64],
    h: f64,
    eps: f64,
    n_hat: &[f64],
    total_energy: f64,
    s: &mut Rk4Scratch,
) -> Result<()> {
    thermostat_rhs(p, eps, n_hat, total_energy, &mut s.k1)?;
    for i in 0..p.len() {
        s.tmp[i] = p[i] + 0.5 * h * s.k1[i];
    }
    thermostat_rhs(&s.tmp, eps, n_hat, total_energy, &mut s.k2)?;
    for i in 0..p.len() {
        s.tmp[i] = p[i] + 0.5 * h * s.k2[i];
    }
    thermostat_rhs(&s.tmp, eps, n_hat, total_energy, &mut s.k3)?;
    for i in 0..p.len() {
        s.tmp[i] = p[i] + h * s.k3[i];
    }
    thermostat_rhs(&s.tmp, eps, n_hat, total_energy, &mut s.k4)?;
    for i in 0..p.len() {
        p[i] += h / 6.0 * (s.k1[i] + 2.0 * s.k2[i] + 2.0 * s.k3[i] + s.k4[i]);
    }
    project_to_sphere_in_place(p, total_energy)
}

fn integrate_interval(
    p: &mut [f64],
    dt: f64,
    params: &ModelParams,
    s: &mut Rk4Scratch,
) -> Result<()> {
    if dt <= 0.0 || params.field_strength == 0.0 {
        return Ok(());
    }
    let n_sub = (dt / params.ode_step).ceil().max(1.0) as usize;
    let h = dt / n_sub as f64;
    for _ in 0..n_sub {
        rk4_project_step(
            p,
            h,
            params.field_strength,
            &params.field_direction,
            params.total_energy,
            s,
        )?;
    }
    Ok(())
}

/// Deterministic flow between collisions: RK4 with substeps of size at most
/// `params.ode_step`, each followed by projection to the energy sphere.
pub fn step_between_collisions(
    state: &ParticleSystemState,
    dt: f64,
    params: &ModelParams,
) -> Result<ParticleSystemState> {
    if !(dt > 0.0) {
        return Err(Error::param("dt", "must be positive"));
    }
    let mut out = state.clone();
    let mut scratch = Rk4Scratch::new(state.p.len());
    integrate_interval(&mut out.p, dt, params, &mut scratch)?;
    out.time += dt;
    Ok(out)
}

/// Apply a collision: replace the block of the colliding particle by its
/// rotated image. Speed of the particle and total energy are preserved.
pub fn apply_collision(
    state: &ParticleSystemState,
    event: &CollisionEvent,
) -> Result<ParticleSystemState> {
    let d = event.rotation.dim();
    let count = state.p.len() / d;
    if event.particle >= count {
        return Err(Error::IndexOutOfRange {
            index: event.particle,
            count,
        });
    }
    let mut out = state.clone();
    let block = &state.p[event.particle * d..(event.particle + 1) * d];
    event.rotation.apply_into(
        block,
        &mut out.p[event.particle * d..(event.particle + 1) * d],
    );
    Ok(out)
}

/// Piecewise-constant rotation frames phi_k(t) = g_k^n ... g_k^1.
#[derive(Debug, Clone)]
pub struct FrameProcess {
    dim: usize,
    frames: Vec<RotationMatrix>,
}

impl FrameProcess {
    pub fn identity(n_particles: usize, dim: usize) -> Self {
        FrameProcess {
            dim,
            frames: vec![RotationMatrix::identity(dim); n_particles],
        }
    }

    /// Stationary initialization: independent Haar frames.
    pub fn haar(n_particles: usize, dim: usize, rng: &mut RngStream) -> Result<Self> {
        let frames = (0..n_particles)
            .map(|_| geom::sample_haar_rotation(dim, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(FrameProcess { dim, frames })
    }

    pub fn from_frames(dim: usize, frames: Vec<RotationMatrix>) -> Self {
        FrameProcess { dim, frames }
    }

    pub fn n_particles(&self) -> usize {
        self.frames.len()
    }

    pub fn frame(&self, k: usize) -> &RotationMatrix {
        &self.frames[k]
    }

    /// phi_k <- g * phi_k at a collision of particle k.
    pub fn apply_event(&mut self, k: usize, g: &RotationMatrix) {
        self.frames[k].compose_left(g);
    }

    /// Recompute the frames at time `t` from scratch out of an event log;
    /// the verification route for the incrementally maintained frames.
    pub fn from_events(n_particles: usize, dim: usize, events: &[CollisionEvent], t: f64) -> Self {
        let mut frames = FrameProcess::identity(n_particles, dim);
        for e in events {
            if e.time > t {
                break;
            }
            frames.apply_event(e.particle, &e.rotation);
        }
        frames
    }

    /// Stacked phi_k^T n_hat: the instantaneous driver slope.
    pub fn psi_into(&self, n_hat: &[f64], out: &mut [f64]) {
        for (k, frame) in self.frames.iter().enumerate() {
            frame.apply_transpose_into(n_hat, &mut out[k * self.dim..(k + 1) * self.dim]);
        }
    }

    /// Slow variable u = phi^* p, blockwise.
    pub fn slow_into(&self, p: &[f64], out: &mut [f64]) {
        for (k, frame) in self.frames.iter().enumerate() {
            frame.apply_transpose_into(
                &p[k * self.dim..(k + 1) * self.dim],
                &mut out[k * self.dim..(k + 1) * self.dim],
            );
        }
    }
}

/// A continuous piecewise-linear path, stored as breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverPath {
    dim: usize,
    times: Vec<f64>,
    values: Vec<f64>, // stride = dim
}

impl DriverPath {
    pub fn new(dim: usize, t0: f64, v0: &[f64]) -> Self {
        assert_eq!(v0.len(), dim);
        DriverPath {
            dim,
            times: vec![t0],
            values: v0.to_vec(),
        }
    }

    pub fn from_points(dim: usize, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || values.len() != times.len() * dim {
            return Err(Error::param("values", "length must be times.len() * dim"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("times", "must be strictly increasing"));
        }
        Ok(DriverPath { dim, times, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn breakpoint_count(&self) -> usize {
        self.times.len()
    }

    pub fn segment_count(&self) -> usize {
        self.times.len().saturating_sub(1)
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Append a breakpoint; times must not decrease. A repeated time with an
    /// identical value is ignored.
    pub fn push(&mut self, t: f64, v: &[f64]) {
        let last = self.end_time();
        assert!(t >= last, "driver breakpoints must be nondecreasing");
        if t == last {
            return;
        }
        self.times.push(t);
        self.values.extend_from_slice(v);
    }

    /// Linear interpolation (exact on the breakpoints).
    pub fn value_at_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        if t < self.start_time() - 1e-12 || t > self.end_time() + 1e-12 {
            return Err(Error::InsufficientData {
                requested: t,
                available: self.end_time(),
            });
        }
        let i = match self.times.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(i) => {
                out.copy_from_slice(self.value(i));
                return Ok(());
            }
            Err(i) => i.clamp(1, self.times.len() - 1),
        };
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let w = (t - t0) / (t1 - t0);
        let (a, b) = (self.value(i - 1), self.value(i));
        for j in 0..self.dim {
            out[j] = a[j] + w * (b[j] - a[j]);
        }
        Ok(())
    }

    pub fn value_at(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.value_at_into(t, &mut out)?;
        Ok(out)
    }

    /// Slope of segment i, per component.
    pub fn segment_slope(&self, i: usize) -> Vec<f64> {
        let dt = self.times[i + 1] - self.times[i];
        let (a, b) = (self.value(i), self.value(i + 1));
        (0..self.dim).map(|j| (b[j] - a[j]) / dt).collect()
    }

    /// Van Hove rescaling of the driver: t -> eps * Phi(eps^{-2} t) on
    /// [0, horizon]. Fails if the path does not reach eps^{-2} * horizon.
    pub fn rescale(&self, eps: f64, horizon: f64) -> Result<DriverPath> {
        if !(eps > 0.0) {
            return Err(Error::param("eps", "must be positive"));
        }
        if !(horizon > 0.0) {
            return Err(Error::param("horizon", "must be positive"));
        }
        let t_micro = horizon / (eps * eps);
        if t_micro > self.end_time() * (1.0 + 1e-12) {
            return Err(Error::InsufficientData {
                requested: t_micro,
                available: self.end_time(),
            });
        }
        let t_micro = t_micro.min(self.end_time());
        let mut out = DriverPath::new(
            self.dim,
            self.start_time() * eps * eps,
            &self.value(0).iter().map(|v| v * eps).collect::<Vec<_>>(),
        );
        let mut buf = vec![0.0; self.dim];
        for i in 1..self.times.len() {
            if self.times[i] >= t_micro {
                break;
            }
            buf.copy_from_slice(self.value(i));
            for v in &mut buf {
                *v *= eps;
            }
            out.push(self.times[i] * eps * eps, &buf);
        }
        self.value_at_into(t_micro, &mut buf)?;
        for v in &mut buf {
            *v *= eps;
        }
        out.push(horizon, &buf);
        Ok(out)
    }
}

/// A simulated microscopic trajectory with its slow/fast decomposition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub params: ModelParams,
    /// (master seed, stream index) when produced from an RngStream.
    pub seed: Option<(u64, u64)>,
    /// Uniform output grid.
    pub grid: Vec<f64>,
    /// Velocities p(t_i), row-major (grid x Nd).
    pub p: Vec<f64>,
    /// Slow variable u(t_i) = phi^*(t_i) p(t_i), row-major (grid x Nd).
    pub u: Vec<f64>,
    /// Driver Phi with exact breakpoints at collision times.
    pub driver: DriverPath,
    /// The collision schedule that produced this trajectory.
    pub events: Vec<CollisionEvent>,
    /// Largest |u(tau+) - u(tau-)| over all collisions.
    pub max_u_jump: f64,
    /// Largest relative energy defect seen after a step.
    pub max_energy_defect: f64,
}

impl Trajectory {
    pub fn nd(&self) -> usize {
        self.params.nd()
    }

    pub fn p_at(&self, i: usize) -> &[f64] {
        &self.p[i * self.nd()..(i + 1) * self.nd()]
    }

    pub fn u_at(&self, i: usize) -> &[f64] {
        &self.u[i * self.nd()..(i + 1) * self.nd()]
    }

    /// Speeds v_k(t_i) = |p_k(t_i)| at grid point i.
    pub fn speeds_at(&self, i: usize) -> Vec<f64> {
        let d = self.params.dim;
        self.p_at(i).chunks_exact(d).map(norm).collect()
    }
}

pub fn uniform_grid(t0: f64, t1: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2);
    (0..points)
        .map(|i| t0 + (t1 - t0) * i as f64 / (points - 1) as f64)
        .collect()
}

/// Deterministic core of the simulator: alternate thermostat flow and
/// collisions over a fixed schedule, maintaining frames and driver exactly.
pub fn simulate_with_schedule(
    params: &ModelParams,
    schedule: &[CollisionEvent],
    initial: &[f64],
    grid_points: usize,
) -> Result<Trajectory> {
    params.validate()?;
    let sphere = params.sphere()?;
    sphere.validate_state(initial)?;
    if grid_points < 2 {
        return Err(Error::param("grid_points", "need at least 2 grid points"));
    }
    if schedule.windows(2).any(|w| w[1].time < w[0].time) {
        return Err(Error::param("schedule", "events must be sorted by time"));
    }
    if schedule
        .iter()
        .any(|e| e.time < 0.0 || e.time > params.t_final)
    {
        return Err(Error::param("schedule", "event outside [0, t_final]"));
    }
    let nd = params.nd();
    let d = params.dim;

    let mut p = initial.to_vec();
    project_to_sphere_in_place(&mut p, params.total_energy)?;
    let mut frames = FrameProcess::identity(params.n_particles, d);
    let mut psi = vec![0.0; nd]; // current driver slope, phi^* n_hat stacked
    frames.psi_into(&params.field_direction, &mut psi);
    let mut phi = vec![0.0; nd]; // driver value
    let mut driver = DriverPath::new(nd, 0.0, &phi);

    let grid = uniform_grid(0.0, params.t_final, grid_points);
    let mut p_out = Vec::with_capacity(grid_points * nd);
    let mut u_out = Vec::with_capacity(grid_points * nd);
    let mut u_buf = vec![0.0; nd];

    let mut scratch = Rk4Scratch::new(nd);
    let mut block_buf = vec![0.0; d];

    let mut max_u_jump = 0.0f64;
    let mut max_energy_defect = 0.0f64;

    let mut t = 0.0;
    let mut ev = 0usize;
    let mut gi = 0usize;

    // record t = 0
    frames.slow_into(&p, &mut u_buf);
    p_out.extend_from_slice(&p);
    u_out.extend_from_slice(&u_buf);
    gi += 1;

    while gi < grid_points || ev < schedule.len() {
        let t_grid = if gi < grid_points {
            grid[gi]
        } else {
            params.t_final
        };
        let t_event = if ev < schedule.len() {
            schedule[ev].time
        } else {
            f64::INFINITY
        };
        let t_next = t_grid.min(t_event).min(params.t_final);

        // thermostat flow and exact driver accumulation over [t, t_next]
        let dt = t_next - t;
        if dt > 0.0 {
            integrate_interval(&mut p, dt, params, &mut scratch)?;
            for i in 0..nd {
                phi[i] += psi[i] * dt;
            }
            max_energy_defect = max_energy_defect.max(sphere.energy_defect(&p));
        }
        t = t_next;

        // all collisions at this time
        let mut collided = false;
        while ev < schedule.len() && schedule[ev].time <= t {
            let event = &schedule[ev];
            let k = event.particle;
            if k >= params.n_particles {
                return Err(Error::IndexOutOfRange {
                    index: k,
                    count: params.n_particles,
                });
            }
            let block = k * d..(k + 1) * d;
            // u is continuous across collisions; measure the numerical jump
            let u_before = frames.frame(k).apply_transpose(&p[block.clone()]);
            block_buf.copy_from_slice(&p[block.clone()]);
            event.rotation.apply_into(&block_buf, &mut p[block.clone()]);
            frames.apply_event(k, &event.rotation);
            let u_after = frames.frame(k).apply_transpose(&p[block.clone()]);
            let jump = u_before
                .iter()
                .zip(&u_after)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            max_u_jump = max_u_jump.max(jump);
            // slope of the affected block changes
            frames
                .frame(k)
                .apply_transpose_into(&params.field_direction, &mut psi[k * d..(k + 1) * d]);
            collided = true;
            ev += 1;
        }
        if collided {
            driver.push(t, &phi);
        }

        if gi < grid_points && t >= grid[gi] {
            frames.slow_into(&p, &mut u_buf);
            p_out.extend_from_slice(&p);
            u_out.extend_from_slice(&u_buf);
            gi += 1;
        }
    }
    driver.push(params.t_final, &phi);

    Ok(Trajectory {
        params: params.clone(),
        seed: None,
        grid,
        p: p_out,
        u: u_out,
        driver,
        events: schedule.to_vec(),
        max_u_jump,
        max_energy_defect,
    })
}

/// Simulate one trajectory from the deterministic default initial state.
pub fn simulate_trajectory(
    params: &ModelParams,
    grid_points: usize,
    rng: &mut RngStream,
) -> Result<Trajectory> {
    let seed = (rng.seed(), rng.stream_index());
    let schedule = sample_collision_schedule(params, rng)?;
    let initial = params.default_initial_state();
    let mut traj = simulate_with_schedule(params, &schedule, &initial, grid_points)?;
    traj.seed = Some(seed);
    Ok(traj)
}

/// Lean simulation returning only the particle speeds at the requested
/// times (no frames, no driver); used by large ensemble studies.
pub fn simulate_speeds_at(
    params: &ModelParams,
    initial: &[f64],
    obs_times: &[f64],
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    params.validate()?;
    let sphere = params.sphere()?;
    sphere.validate_state(initial)?;
    if obs_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::param("obs_times", "must be nondecreasing"));
    }
    if let Some(&last) = obs_times.last() {
        if last > params.t_final * (1.0 + 1e-12) {
            return Err(Error::InsufficientData {
                requested: last,
                available: params.t_final,
            });
        }
    }
    let d = params.dim;
    let exp = Exp::new(params.collision_rate)
        .map_err(|e| Error::param("collision_rate", e.to_string()))?;

    let mut p = initial.to_vec();
    project_to_sphere_in_place(&mut p, params.total_energy)?;
    let mut scratch = Rk4Scratch::new(p.len());
    let mut block_buf = vec![0.0; d];

    // per-particle next collision times, consumed chronologically
    let mut next: Vec<f64> = (0..params.n_particles).map(|_| rng.sample(exp)).collect();

    let mut out = Vec::with_capacity(obs_times.len() * params.n_particles);
    let mut t = 0.0;
    for &t_obs in obs_times {
        loop {
            let (k_min, &t_ev) = next
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .unwrap();
            if t_ev > t_obs {
                break;
            }
            integrate_interval(&mut p, t_ev - t, params, &mut scratch)?;
            t = t_ev;
            let g = geom::sample_haar_rotation(d, rng)?;
            block_buf.copy_from_slice(&p[k_min * d..(k_min + 1) * d]);
            g.apply_into(&block_buf, &mut p[k_min * d..(k_min + 1) * d]);
            next[k_min] = t_ev + rng.sample(exp);
        }
        integrate_interval(&mut p, t_obs - t, params, &mut scratch)?;
        t = t_obs;
        out.extend(p.chunks_exact(d).map(norm));
    }
    Ok(out)
}
