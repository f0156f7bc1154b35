//! Fixed-dimension vector/matrix primitives, Haar rotation sampling and
//! energy-sphere geometry shared by the simulation and SDE layers.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A square matrix in SO(d), stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl RotationMatrix {
    pub fn identity(dim: usize) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        RotationMatrix { dim, data }
    }

    /// Planar rotation by `angle`, only defined for d = 2.
    pub fn rotation_2d(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RotationMatrix {
            dim: 2,
            data: vec![c, -s, s, c],
        }
    }

    pub fn from_rows(dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), dim * dim);
        RotationMatrix { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// R v
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.apply_into(v, &mut out);
        out
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            out[i] = dot(&self.data[i * d..(i + 1) * d], v);
        }
    }

    /// R^T v (the inverse rotation, since R is orthogonal)
    pub fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.apply_transpose_into(v, &mut out);
        out
    }

    pub fn apply_transpose_into(&self, v: &[f64], out: &mut [f64]) {
        let d = self.dim;
        out.fill(0.0);
        for i in 0..d {
            let vi = v[i];
            let row = &self.data[i * d..(i + 1) * d];
            for j in 0..d {
                out[j] += row[j] * vi;
            }
        }
    }

    /// self <- g * self (composition of a new rotation after the accumulated one)
    pub fn compose_left(&mut self, g: &RotationMatrix) {
        debug_assert_eq!(self.dim, g.dim);
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                let gik = g.data[i * d + k];
                if gik == 0.0 {
                    continue;
                }
                for j in 0..d {
                    out[i * d + j] += gik * self.data[k * d + j];
                }
            }
        }
        self.data = out;
    }

    /// max_{i,j} |(R^T R - I)_{ij}|
    pub fn orthogonality_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += self.data[k * d + i] * self.data[k * d + j];
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }

    /// Determinant via LU with partial pivoting.
    pub fn det(&self) -> f64 {
        let d = self.dim;
        let mut a = self.data.clone();
        let mut det = 1.0;
        for col in 0..d {
            let mut pivot = col;
            for row in col + 1..d {
                if a[row * d + col].abs() > a[pivot * d + col].abs() {
                    pivot = row;
                }
            }
            if a[pivot * d + col] == 0.0 {
                return 0.0;
            }
            if pivot != col {
                for j in 0..d {
                    a.swap(col * d + j, pivot * d + j);
                }
                det = -det;
            }
            let p = a[col * d + col];
            det *= p;
            for row in col + 1..d {
                let f = a[row * d + col] / p;
                for j in col..d {
                    a[row * d + j] -= f * a[col * d + j];
                }
            }
        }
        det
    }

    /// A rotation mapping the unit vector `from` onto the unit vector `to`,
    /// acting in their common plane and fixing its orthogonal complement.
    pub fn rotation_between(from: &[f64], to: &[f64]) -> Result<Self> {
        let d = from.len();
        if d == 0 || to.len() != d {
            return Err(Error::InvalidDimension(d, 1));
        }
        for (name, v) in [("from", from), ("to", to)] {
            if (norm(v) - 1.0).abs() > 1e-10 {
                return Err(Error::param(
                    "rotation_between",
                    format!("`{name}` is not a unit vector"),
                ));
            }
        }
        let c = dot(from, to);
        // component of `to` orthogonal to `from`
        let mut w: Vec<f64> = to.iter().zip(from).map(|(t, f)| t - c * f).collect();
        let wn = norm(&w);
        if wn < 1e-12 {
            if c > 0.0 {
                return Ok(RotationMatrix::identity(d));
            }
            if d < 2 {
                return Err(Error::InvalidDimension(d, 2));
            }
            // antipodal: rotate by pi in the plane of `from` and an axis vector
            // not parallel to it
            let mut aux = vec![0.0; d];
            let k = from
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(i, _)| i)
                .unwrap();
            aux[k] = 1.0;
            let ca = dot(from, &aux);
            let mut u: Vec<f64> = aux.iter().zip(from).map(|(a, f)| a - ca * f).collect();
            let un = norm(&u);
            for x in &mut u {
                *x /= un;
            }
            // product of two reflections: maps `from` to `-from`, fixes the
            // complement of span{from, u}, determinant +1
            let refl = |n: &[f64]| {
                let mut m = RotationMatrix::identity(d);
                for i in 0..d {
                    for j in 0..d {
                        m.data[i * d + j] -= 2.0 * n[i] * n[j];
                    }
                }
                m
            };
            let mut r = refl(from);
            r.compose_left(&refl(&u));
            return Ok(r);
        }
        for x in &mut w {
            *x /= wn;
        }
        // rotation by angle theta with cos(theta) = c inside span{from, w}
        let s = wn.min(1.0);
        let mut r = RotationMatrix::identity(d);
        for i in 0..d {
            for j in 0..d {
                r.data[i * d + j] += (c - 1.0) * (from[i] * from[j] + w[i] * w[j])
                    + s * (w[i] * from[j] - from[i] * w[j]);
            }
        }
        Ok(r)
    }
}

/// Haar-uniform rotation in SO(d), via Householder QR of a Gaussian matrix
/// with the R-diagonal sign correction, then a single column flip into SO(d).
pub fn sample_haar_rotation(d: usize, rng: &mut RngStream) -> Result<RotationMatrix> {
    if d < 2 {
        return Err(Error::InvalidDimension(d, 2));
    }
    let mut a = vec![0.0f64; d * d];
    for x in &mut a {
        *x = rng.sample(StandardNormal);
    }

    // Householder QR: reduce `a`, record reflectors.
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(d);
    for k in 0..d {
        let mut v = vec![0.0; d - k];
        for (idx, row) in (k..d).enumerate() {
            v[idx] = a[row * d + k];
        }
        let x0 = v[0];
        let xn = norm(&v);
        if xn == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        let alpha = -x0.signum() * xn;
        v[0] -= alpha;
        let vn = norm(&v);
        if vn < f64::EPSILON * xn {
            reflectors.push(Vec::new());
            continue;
        }
        for x in &mut v {
            *x /= vn;
        }
        // apply H = I - 2 v v^T to the trailing block of `a`
        for col in k..d {
            let mut proj = 0.0;
            for (idx, row) in (k..d).enumerate() {
                proj += v[idx] * a[row * d + col];
            }
            for (idx, row) in (k..d).enumerate() {
                a[row * d + col] -= 2.0 * v[idx] * proj;
            }
        }
        reflectors.push(v);
    }

    // Q = H_0 H_1 ... H_{d-1}, built by applying reflectors to the identity
    // in reverse order; det(Q) = (-1)^{number of reflections applied}.
    let mut q = RotationMatrix::identity(d);
    let mut det_sign = 1.0f64;
    for k in (0..d).rev() {
        let v = &reflectors[k];
        if v.is_empty() {
            continue;
        }
        det_sign = -det_sign;
        for col in 0..d {
            let mut proj = 0.0;
            for (idx, row) in (k..d).enumerate() {
                proj += v[idx] * q.data[row * d + col];
            }
            for (idx, row) in (k..d).enumerate() {
                q.data[row * d + col] -= 2.0 * v[idx] * proj;
            }
        }
    }

    // R-diagonal sign correction (makes Q Haar on O(d), not just orthogonal)
    for j in 0..d {
        if a[j * d + j] < 0.0 {
            det_sign = -det_sign;
            for i in 0..d {
                q.data[i * d + j] = -q.data[i * d + j];
            }
        }
    }

    // land in SO(d): flipping one column swaps the two O(d) cosets
    if det_sign < 0.0 {
        for i in 0..d {
            q.data[i * d] = -q.data[i * d];
        }
    }
    Ok(q)
}

/// Uniform direction on the unit sphere S^{d-1} (normalized Gaussian vector).
pub fn sample_unit_direction(d: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    if d < 1 {
        return Err(Error::InvalidDimension(d, 1));
    }
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-100 {
            for x in &mut v {
                *x /= n;
            }
            return Ok(v);
        }
    }
}

/// Rescale `x` onto the sphere of squared radius `total_energy`.
pub fn project_to_sphere(x: &[f64], total_energy: f64) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    project_to_sphere_in_place(&mut out, total_energy)?;
    Ok(out)
}

pub fn project_to_sphere_in_place(x: &mut [f64], total_energy: f64) -> Result<()> {
    if total_energy <= 0.0 {
        return Err(Error::param("total_energy", "must be positive"));
    }
    let n2 = dot(x, x);
    if n2 == 0.0 {
        return Err(Error::DegenerateState);
    }
    let scale = (total_energy / n2).sqrt();
    for v in x {
        *v *= scale;
    }
    Ok(())
}

/// The constraint manifold: N particles in d dimensions with total energy U.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergySphereSpec {
    pub n_particles: usize,
    pub dim: usize,
    pub total_energy: f64,
}

impl EnergySphereSpec {
    pub fn new(n_particles: usize, dim: usize, total_energy: f64) -> Result<Self> {
        if n_particles < 1 {
            return Err(Error::param("n_particles", "must be at least 1"));
        }
        if dim < 1 {
            return Err(Error::InvalidDimension(dim, 1));
        }
        if !(total_energy > 0.0) {
            return Err(Error::param("total_energy", "must be positive"));
        }
        Ok(EnergySphereSpec {
            n_particles,
            dim,
            total_energy,
        })
    }

    pub fn nd(&self) -> usize {
        self.n_particles * self.dim
    }

    /// Relative energy defect |sum |p_k|^2 - U| / U of a stacked state.
    pub fn energy_defect(&self, p: &[f64]) -> f64 {
        (dot(p, p) - self.total_energy).abs() / self.total_energy
    }

    pub fn validate_state(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.nd() {
            return Err(Error::param("state", "wrong length"));
        }
        let defect = self.energy_defect(p);
        if defect > 1e-10 {
            return Err(Error::InvalidInitialState {
                expected: self.total_energy,
                actual: dot(p, p),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ks::ks_two_sample;

    fn stream(n: u64) -> RngStream {
        RngStream::new(0x5eed, n)
    }

    #[test]
    fn haar_rotation_is_special_orthogonal() {
        let mut rng = stream(0);
        for d in 2..=6 {
            for _ in 0..200 {
                let r = sample_haar_rotation(d, &mut rng).unwrap();
                assert!(r.orthogonality_defect() < 1e-12);
                assert!((r.det() - 1.0).abs() < 1e-12, "d={d} det={}", r.det());
            }
        }
    }

    #[test]
    fn haar_rejects_low_dimension() {
        let mut rng = stream(1);
        assert!(sample_haar_rotation(0, &mut rng).is_err());
        assert!(sample_haar_rotation(1, &mut rng).is_err());
    }

    #[test]
    fn haar_angle_uniform_in_2d() {
        let mut rng = stream(2);
        let n = 100_000;
        let mut quartiles = [0usize; 4];
        for _ in 0..n {
            let r = sample_haar_rotation(2, &mut rng).unwrap();
            let angle = r.entry(1, 0).atan2(r.entry(0, 0)); // in (-pi, pi]
            let frac = (angle / std::f64::consts::PI + 1.0) / 2.0;
            let bin = ((frac * 4.0) as usize).min(3);
            quartiles[bin] += 1;
        }
        for (i, &c) in quartiles.iter().enumerate() {
            let share = c as f64 / n as f64;
            assert!(
                (share - 0.25).abs() < 0.01,
                "quartile {i} holds {share}, want 0.25 +/- 0.01"
            );
        }
    }

    #[test]
    fn haar_mean_field_vanishes_in_3d() {
        let mut rng = stream(3);
        let n = 100_000;
        let n_hat = [1.0, 0.0, 0.0];
        let mut sums = [0.0f64; 3];
        for _ in 0..n {
            let r = sample_haar_rotation(3, &mut rng).unwrap();
            let v = r.apply(&n_hat);
            for i in 0..3 {
                sums[i] += v[i];
            }
        }
        // R n_hat is uniform on S^2, so each component has variance 1/3
        let se = (1.0f64 / 3.0 / n as f64).sqrt();
        for (i, &s) in sums.iter().enumerate() {
            let mean = s / n as f64;
            assert!(mean.abs() < 3.0 * se, "component {i}: mean {mean}, se {se}");
        }
    }

    #[test]
    fn haar_law_is_left_invariant_in_2d() {
        // the angle laws of R and QR agree for a fixed rotation Q
        let mut rng = stream(4);
        let q = RotationMatrix::rotation_2d(0.7314);
        let n = 100_000;
        let mut plain = Vec::with_capacity(n);
        let mut pre_rotated = Vec::with_capacity(n);
        for _ in 0..n {
            let mut r = sample_haar_rotation(2, &mut rng).unwrap();
            plain.push(r.entry(1, 0).atan2(r.entry(0, 0)));
            r.compose_left(&q);
            pre_rotated.push(r.entry(1, 0).atan2(r.entry(0, 0)));
        }
        let out = ks_two_sample(&plain, &pre_rotated).unwrap();
        assert!(
            !out.rejects_at_1pct(),
            "KS = {}, 1% critical = {}",
            out.statistic,
            out.critical_1pct
        );
    }

    #[test]
    fn unit_direction_normalized_and_symmetric() {
        let mut rng = stream(5);
        let n = 100_000;
        let mut sums = [0.0f64; 2];
        for _ in 0..n {
            let v = sample_unit_direction(2, &mut rng).unwrap();
            assert!((norm(&v) - 1.0).abs() < 1e-14);
            sums[0] += v[0];
            sums[1] += v[1];
        }
        let se = (0.5f64 / n as f64).sqrt(); // component variance 1/d
        for &s in &sums {
            assert!((s / n as f64).abs() < 3.0 * se);
        }
    }

    #[test]
    fn unit_direction_second_moment_in_3d() {
        let mut rng = stream(6);
        let n = 100_000;
        let mut sum_sq = 0.0f64;
        let mut sum_4 = 0.0f64;
        for _ in 0..n {
            let v = sample_unit_direction(3, &mut rng).unwrap();
            sum_sq += v[0] * v[0];
            sum_4 += v[0].powi(4);
        }
        let mean = sum_sq / n as f64;
        // E[v_1^4] = 3/(d(d+2)) = 1/5 on S^2, so Var[v_1^2] = 1/5 - 1/9
        let var = sum_4 / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - 1.0 / 3.0).abs() < 3.0 * se,
            "E[v1^2] = {mean}, se = {se}"
        );
    }

    #[test]
    fn unit_direction_law_is_rotation_invariant() {
        // applying a fixed rotation leaves the moment checks unchanged
        let mut rng = stream(7);
        let q = RotationMatrix::rotation_2d(-1.234);
        let n = 100_000;
        let mut sums = [0.0f64; 2];
        let mut sum_sq = 0.0f64;
        for _ in 0..n {
            let v = q.apply(&sample_unit_direction(2, &mut rng).unwrap());
            sums[0] += v[0];
            sums[1] += v[1];
            sum_sq += v[0] * v[0];
        }
        let se = (0.5f64 / n as f64).sqrt();
        assert!((sums[0] / n as f64).abs() < 3.0 * se);
        assert!((sums[1] / n as f64).abs() < 3.0 * se);
        // E[v_1^2] = 1/2; Var[v_1^2] = 3/8 - 1/4 = 1/8 on the circle
        let se2 = (0.125f64 / n as f64).sqrt();
        assert!((sum_sq / n as f64 - 0.5).abs() < 3.0 * se2);
    }

    #[test]
    fn unit_direction_rejects_zero_dimension() {
        let mut rng = stream(10);
        assert!(sample_unit_direction(0, &mut rng).is_err());
    }

    #[test]
    fn projection_examples() {
        // fixed point, exactly
        let x = vec![1.0, 0.0];
        assert_eq!(project_to_sphere(&x, 1.0).unwrap(), x);
        // pure rescale
        assert_eq!(project_to_sphere(&[2.0, 0.0], 1.0).unwrap(), vec![1.0, 0.0]);
        // zero vector is degenerate
        assert!(matches!(
            project_to_sphere(&[0.0, 0.0], 1.0),
            Err(Error::DegenerateState)
        ));
        assert!(project_to_sphere(&[1.0], 0.0).is_err());
    }

    #[test]
    fn projection_lands_on_sphere_and_is_idempotent() {
        let mut rng = stream(8);
        for _ in 0..100 {
            let mut x: Vec<f64> = (0..6)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            for v in &mut x {
                *v *= 3.0;
            }
            let u_total = 2.5;
            let y = project_to_sphere(&x, u_total).unwrap();
            assert!((dot(&y, &y) - u_total).abs() / u_total < 1e-14);
            let z = project_to_sphere(&y, u_total).unwrap();
            for (a, b) in y.iter().zip(&z) {
                assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rotation_between_maps_and_is_rotation() {
        let mut rng = stream(9);
        for d in [2usize, 3, 5] {
            for _ in 0..50 {
                let a = sample_unit_direction(d, &mut rng).unwrap();
                let b = sample_unit_direction(d, &mut rng).unwrap();
                let r = RotationMatrix::rotation_between(&a, &b).unwrap();
                assert!(r.orthogonality_defect() < 1e-12);
                assert!((r.det() - 1.0).abs() < 1e-12);
                let image = r.apply(&a);
                for i in 0..d {
                    assert!((image[i] - b[i]).abs() < 1e-12);
                }
            }
        }
        // identical and antipodal cases
        let e1 = vec![1.0, 0.0, 0.0];
        let id = RotationMatrix::rotation_between(&e1, &e1).unwrap();
        assert_eq!(id, RotationMatrix::identity(3));
        let neg: Vec<f64> = e1.iter().map(|x| -x).collect();
        let r = RotationMatrix::rotation_between(&e1, &neg).unwrap();
        assert!((r.det() - 1.0).abs() < 1e-12);
        let image = r.apply(&e1);
        assert!((image[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn energy_sphere_validation() {
        let sphere = EnergySphereSpec::new(2, 2, 2.0).unwrap();
        assert_eq!(sphere.nd(), 4);
        assert!(sphere.validate_state(&[1.0, 0.0, 0.0, 1.0]).is_ok());
        assert!(sphere.validate_state(&[1.0, 0.0, 0.0, 1.1]).is_err());
        assert!(EnergySphereSpec::new(0, 2, 1.0).is_err());
        assert!(EnergySphereSpec::new(1, 2, -1.0).is_err());
    }
}
