//! Exact canonical lifts of piecewise-linear drivers, Chen-relation and
//! Hölder-norm diagnostics, and a driven-ODE solver realizing the solution
//! map on smooth paths.

use crate::error::{Error, Result};
use crate::geom::{dot, project_to_sphere_in_place};
use crate::micro::DriverPath;
use serde::{Deserialize, Serialize};

/// A path and its iterated integral sampled on a time grid.
///
/// Level-2 data is anchored at the first grid point; arbitrary increments
/// are recovered through Chen's relation, so storage stays linear in the
/// grid size.
#[derive(Debug, Clone)]
pub struct RoughPathGrid {
    dim: usize,
    times: Vec<f64>,
    /// W(t_i) - W(t_0), row-major (grid x m).
    w: Vec<f64>,
    /// Anchored iterated integrals over [t_0, t_i], row-major (grid x m^2).
    ww: Vec<f64>,
}

impl RoughPathGrid {
    /// Exact canonical lift of a piecewise-linear path on the given grid.
    ///
    /// On a linear piece running from value `a` to value `b`, the anchored
    /// iterated integral gains `(W(start) - W(t_0)) (x) (b - a) +
    /// (b - a) (x) (b - a) / 2`; pieces compose by Chen's relation, so there
    /// is no quadrature error.
    pub fn canonical_lift(path: &DriverPath, grid: &[f64]) -> Result<Self> {
        let m = path.dim();
        if grid.len() < 2 {
            return Err(Error::param("grid", "need at least 2 grid points"));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("grid", "must be strictly increasing"));
        }
        if grid[0] < path.start_time() - 1e-12 || *grid.last().unwrap() > path.end_time() + 1e-12 {
            return Err(Error::InsufficientData {
                requested: *grid.last().unwrap(),
                available: path.end_time(),
            });
        }

        let mut w = Vec::with_capacity(grid.len() * m);
        let mut ww = Vec::with_capacity(grid.len() * m * m);
        let mut w_acc = vec![0.0; m];
        let mut ww_acc = vec![0.0; m * m];
        let mut prev = path.value_at(grid[0])?;
        let mut cur = vec![0.0; m];
        w.extend_from_slice(&w_acc);
        ww.extend_from_slice(&ww_acc);

        // merge path breakpoints with the requested grid
        let times = path.times();
        let mut bi = times.partition_point(|&t| t <= grid[0]);
        let mut gi = 1usize;
        while gi < grid.len() {
            let t_b = if bi < times.len() {
                times[bi]
            } else {
                f64::INFINITY
            };
            let t_g = grid[gi];
            let t = t_b.min(t_g);
            if t_b <= t_g {
                cur.copy_from_slice(path.value(bi));
                bi += 1;
            } else {
                path.value_at_into(t, &mut cur)?;
            }
            for i in 0..m {
                let dvi = cur[i] - prev[i];
                let row = &mut ww_acc[i * m..(i + 1) * m];
                for j in 0..m {
                    let dvj = cur[j] - prev[j];
                    row[j] += w_acc[i] * dvj + dvi * dvj * 0.5;
                }
            }
            // careful: the level-1 update must come after the level-2 one
            for i in 0..m {
                w_acc[i] += cur[i] - prev[i];
            }
            prev.copy_from_slice(&cur);
            if t_g <= t_b {
                w.extend_from_slice(&w_acc);
                ww.extend_from_slice(&ww_acc);
                gi += 1;
            }
        }

        Ok(RoughPathGrid {
            dim: m,
            times: grid.to_vec(),
            w,
            ww,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> &[f64] {
        &self.times
    }

    pub fn grid_len(&self) -> usize {
        self.times.len()
    }

    /// W(t_i) - W(t_0)
    pub fn w_anchored(&self, i: usize) -> &[f64] {
        &self.w[i * self.dim..(i + 1) * self.dim]
    }

    /// Anchored level-2 value over [t_0, t_i], row-major m x m.
    pub fn ww_anchored(&self, i: usize) -> &[f64] {
        &self.ww[i * self.dim * self.dim..(i + 1) * self.dim * self.dim]
    }

    /// Level-1 increment W(t_i, t_j).
    pub fn level1(&self, i: usize, j: usize) -> Vec<f64> {
        let (a, b) = (self.w_anchored(i), self.w_anchored(j));
        (0..self.dim).map(|k| b[k] - a[k]).collect()
    }

    /// Level-2 increment over [t_i, t_j], recovered via Chen's relation
    /// from the anchored values.
    pub fn level2(&self, i: usize, j: usize) -> Vec<f64> {
        let m = self.dim;
        let mut out = vec![0.0; m * m];
        self.level2_into(i, j, &mut out);
        out
    }

    fn level2_into(&self, i: usize, j: usize, out: &mut [f64]) {
        let m = self.dim;
        let (wi, wj) = (self.w_anchored(i), self.w_anchored(j));
        let (qi, qj) = (self.ww_anchored(i), self.ww_anchored(j));
        for a in 0..m {
            for b in 0..m {
                out[a * m + b] = qj[a * m + b] - qi[a * m + b] - wi[a] * (wj[b] - wi[b]);
            }
        }
    }

    /// Chen defect of the grid triple (t_i, t_j, t_k), i <= j <= k.
    pub fn chen_defect(&self, i: usize, j: usize, k: usize) -> Result<Vec<f64>> {
        if !(i <= j && j <= k && k < self.times.len()) {
            return Err(Error::NotAGridPoint(*[i, j, k].iter().max().unwrap() as f64));
        }
        Ok(chen_defect_terms(
            &self.level1(i, j),
            &self.level1(j, k),
            &self.level2(i, j),
            &self.level2(j, k),
            &self.level2(i, k),
        ))
    }

    /// Scale of the largest anchored level-2 entry, for relative comparisons.
    pub fn level2_scale(&self) -> f64 {
        self.ww.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Hölder seminorms over grid pairs. Exhaustive up to `PAIR_SCAN_CAP`
    /// grid points, dyadic-gap subsample beyond; either way the result is a
    /// lower bound of the continuum supremum.
    pub fn holder_report(&self, alpha: f64) -> Result<HolderReport> {
        if !(alpha > 1.0 / 3.0 && alpha < 0.5) {
            return Err(Error::param("alpha", "must lie in (1/3, 1/2)"));
        }
        let n = self.times.len();
        if n < 2 {
            return Err(Error::SampleTooSmall { need: 2, got: n });
        }
        let exhaustive = n <= PAIR_SCAN_CAP;
        let mut sup_w = 0.0f64;
        let mut sup_ww = 0.0f64;
        let m = self.dim;
        let mut lvl2 = vec![0.0; m * m];
        let mut scan = |i: usize, j: usize, sup_w: &mut f64, sup_ww: &mut f64| {
            let dt = self.times[j] - self.times[i];
            let (wi, wj) = (self.w_anchored(i), self.w_anchored(j));
            let mut n1 = 0.0;
            for a in 0..m {
                let d = wj[a] - wi[a];
                n1 += d * d;
            }
            *sup_w = sup_w.max(n1.sqrt() / dt.powf(alpha));
            self.level2_into(i, j, &mut lvl2);
            let n2 = dot(&lvl2, &lvl2).sqrt();
            *sup_ww = sup_ww.max(n2 / dt.powf(2.0 * alpha));
        };
        if exhaustive {
            for i in 0..n {
                for j in i + 1..n {
                    scan(i, j, &mut sup_w, &mut sup_ww);
                }
            }
        } else {
            let mut gap = 1usize;
            while gap < n {
                for i in 0..n - gap {
                    scan(i, i + gap, &mut sup_w, &mut sup_ww);
                }
                gap *= 2;
            }
        }
        Ok(HolderReport {
            alpha,
            seminorm_w: sup_w,
            seminorm_ww: sup_ww,
            norm: sup_w + sup_ww.sqrt(),
            grid_points: n,
            exhaustive_pairs: exhaustive,
        })
    }
}

/// Beyond this many grid points the pair scan switches to dyadic gaps.
pub const PAIR_SCAN_CAP: usize = 10_000;

/// Chen defect of explicitly given increments:
/// WW(s,t) - WW(s,u) - WW(u,t) - W(s,u) (x) W(u,t).
pub fn chen_defect_terms(
    w_su: &[f64],
    w_ut: &[f64],
    ww_su: &[f64],
    ww_ut: &[f64],
    ww_st: &[f64],
) -> Vec<f64> {
    let m = w_su.len();
    let mut out = vec![0.0; m * m];
    for a in 0..m {
        for b in 0..m {
            out[a * m + b] =
                ww_st[a * m + b] - ww_su[a * m + b] - ww_ut[a * m + b] - w_su[a] * w_ut[b];
        }
    }
    out
}

/// Hölder-norm diagnostics of a lifted path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HolderReport {
    pub alpha: f64,
    pub seminorm_w: f64,
    pub seminorm_ww: f64,
    /// |W|_alpha + sqrt(|WW|_{2 alpha})
    pub norm: f64,
    pub grid_points: usize,
    /// false when the pair scan was dyadically subsampled
    pub exhaustive_pairs: bool,
}

/// Coefficient map of a driven ODE du = A(u) dW.
pub trait DrivenField {
    fn state_dim(&self) -> usize;
    /// out = A(u) * w_dot
    fn apply(&self, u: &[f64], w_dot: &[f64], out: &mut [f64]);
    /// Optional post-step constraint restoration.
    fn renormalize(&self, _u: &mut [f64]) {}
    fn validate_initial(&self, _u0: &[f64]) -> Result<()> {
        Ok(())
    }
}

/// The sphere coefficient A(u) = I - u u^*/U; A(u) xi is tangent to the
/// energy sphere for every xi, so |u|^2 = U is conserved.
#[derive(Debug, Clone, Copy)]
pub struct SphereField {
    pub total_energy: f64,
    pub state_dim: usize,
}

impl DrivenField for SphereField {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn apply(&self, u: &[f64], w_dot: &[f64], out: &mut [f64]) {
        let c = dot(u, w_dot) / self.total_energy;
        for i in 0..u.len() {
            out[i] = w_dot[i] - c * u[i];
        }
    }

    fn renormalize(&self, u: &mut [f64]) {
        let _ = project_to_sphere_in_place(u, self.total_energy);
    }

    fn validate_initial(&self, u0: &[f64]) -> Result<()> {
        let n2 = dot(u0, u0);
        if u0.len() != self.state_dim || (n2 - self.total_energy).abs() / self.total_energy > 1e-8 {
            return Err(Error::InvalidInitialState {
                expected: self.total_energy,
                actual: n2,
            });
        }
        Ok(())
    }
}

/// Coefficient of the classic planar counterexample:
/// dy_1 = dx_1, dy_2 = y_1 dx_2.
#[derive(Debug, Clone, Copy)]
pub struct SpiralField;

impl DrivenField for SpiralField {
    fn state_dim(&self) -> usize {
        2
    }

    fn apply(&self, u: &[f64], w_dot: &[f64], out: &mut [f64]) {
        out[0] = w_dot[0];
        out[1] = u[0] * w_dot[1];
    }
}

/// Integrate du = A(u) dW along a piecewise-linear driver, sampling the
/// solution on `grid`. On each linear segment the ODE du/dt = A(u) * slope
/// is integrated by classical RK4 with substeps of size at most `max_step`,
/// each followed by the field's renormalization.
pub fn solve_driven_ode<F: DrivenField>(
    field: &F,
    path: &DriverPath,
    u0: &[f64],
    grid: &[f64],
    max_step: f64,
) -> Result<Vec<f64>> {
    field.validate_initial(u0)?;
    if !(max_step > 0.0) {
        return Err(Error::param("max_step", "must be positive"));
    }
    if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("grid", "must be nonempty and increasing"));
    }
    if grid[0] < path.start_time() - 1e-12 || *grid.last().unwrap() > path.end_time() + 1e-12 {
        return Err(Error::InsufficientData {
            requested: *grid.last().unwrap(),
            available: path.end_time(),
        });
    }

    let n = field.state_dim();
    let mut u = u0.to_vec();
    let mut out = Vec::with_capacity(grid.len() * n);
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    let mut gi = 0usize;
    if grid[0] <= path.start_time() + 1e-12 {
        out.extend_from_slice(&u);
        gi += 1;
    }

    let times = path.times();
    let mut t = grid[0].max(path.start_time());
    let mut bi = times.partition_point(|&x| x <= t);
    let mut prev_val = path.value_at(t)?;
    let mut cur_val = vec![0.0; path.dim()];
    let mut slope = vec![0.0; path.dim()];

    while gi < grid.len() {
        let t_b = if bi < times.len() {
            times[bi]
        } else {
            f64::INFINITY
        };
        let t_g = grid[gi];
        let t_next = t_b.min(t_g);
        if t_b <= t_g {
            cur_val.copy_from_slice(path.value(bi));
            bi += 1;
        } else {
            path.value_at_into(t_next, &mut cur_val)?;
        }
        let dt = t_next - t;
        if dt > 0.0 {
            for j in 0..path.dim() {
                slope[j] = (cur_val[j] - prev_val[j]) / dt;
            }
            let n_sub = (dt / max_step).ceil().max(1.0) as usize;
            let h = dt / n_sub as f64;
            for _ in 0..n_sub {
                field.apply(&u, &slope, &mut k1);
                for i in 0..n {
                    tmp[i] = u[i] + 0.5 * h * k1[i];
                }
                field.apply(&tmp, &slope, &mut k2);
                for i in 0..n {
                    tmp[i] = u[i] + 0.5 * h * k2[i];
                }
                field.apply(&tmp, &slope, &mut k3);
                for i in 0..n {
                    tmp[i] = u[i] + h * k3[i];
                }
                field.apply(&tmp, &slope, &mut k4);
                for i in 0..n {
                    u[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                field.renormalize(&mut u);
            }
        }
        prev_val.copy_from_slice(&cur_val);
        t = t_next;
        if t_g <= t_b {
            out.extend_from_slice(&u);
            gi += 1;
        }
    }
    Ok(out)
}

/// Piecewise-linear discretization of the shrinking spiral
/// x(t) = eps (cos(t/eps^2), sin(t/eps^2)) on [0, 1].
///
/// Its sup norm vanishes with eps while the second component of the driven
/// system dy = A(y) dx keeps y_2(1) near 1/2: the solution map is not
/// continuous in the uniform topology.
pub fn spiral_example(eps: f64, segments: usize) -> Result<DriverPath> {
    if !(eps > 0.0) {
        return Err(Error::param("eps", "must be positive"));
    }
    if segments < 10 {
        return Err(Error::param("segments", "need at least 10 segments"));
    }
    let omega = 1.0 / (eps * eps);
    let mut path = DriverPath::new(2, 0.0, &[eps, 0.0]);
    for i in 1..=segments {
        let t = i as f64 / segments as f64;
        let (s, c) = (omega * t).sin_cos();
        path.push(t, &[eps * c, eps * s]);
    }
    Ok(path)
}
