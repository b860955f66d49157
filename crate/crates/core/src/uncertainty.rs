//! Rating forecasts and the uncertainty sets built from them.
//!
//! Ratings are in p.u. of each DLR line's nominal rating. Sets live in a
//! whitened space `z` with `delta = mu + B z` and `Sigma = B B'`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_lr;

use crate::error::{invalid, Error, Result};

/// Default largest dimension for which vertices are enumerated.
pub const DEFAULT_VERTEX_CAP: usize = 6;

const SYMMETRY_TOL: f64 = 1e-9;

/// Multivariate normal model of DLR ratings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingForecast {
    /// DLR line ids the entries refer to; empty means "grid order".
    #[serde(default)]
    pub lines: Vec<String>,
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    /// Hours ahead; informational.
    #[serde(default)]
    pub lead_time: f64,
}

impl RatingForecast {
    pub fn new(mu: Vec<f64>, sigma: Vec<Vec<f64>>, lead_time: f64) -> Result<Self> {
        let f = RatingForecast { lines: Vec::new(), mu, sigma, lead_time };
        f.validate()?;
        Ok(f)
    }

    /// Uncorrelated forecast with standard deviations `sd`.
    pub fn independent(mu: Vec<f64>, sd: &[f64], lead_time: f64) -> Result<Self> {
        let k = sd.len();
        let sigma = (0..k).map(|i| (0..k).map(|j| if i == j { sd[i] * sd[i] } else { 0.0 }).collect()).collect();
        Self::new(mu, sigma, lead_time)
    }

    pub fn with_lines(mut self, lines: Vec<String>) -> Self {
        self.lines = lines;
        self
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        let k = self.dim();
        DMatrix::from_fn(k, k, |i, j| self.sigma[i][j])
    }

    /// Marginal standard deviations.
    pub fn sd(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.sigma[i][i].max(0.0).sqrt()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.mu.len();
        if k == 0 {
            return Err(invalid("forecast has no lines"));
        }
        if !self.lines.is_empty() && self.lines.len() != k {
            return Err(invalid("forecast line ids do not match the mean vector"));
        }
        if self.mu.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(invalid("forecast means must be positive"));
        }
        if self.sigma.len() != k || self.sigma.iter().any(|r| r.len() != k) {
            return Err(invalid("covariance must be a square matrix matching the mean"));
        }
        let s = self.sigma_matrix();
        if s.iter().any(|v| !v.is_finite()) {
            return Err(invalid("covariance must be finite"));
        }
        let scale = 1.0 + s.amax();
        for i in 0..k {
            for j in 0..i {
                if (s[(i, j)] - s[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(invalid("covariance must be symmetric"));
                }
            }
        }
        let min_eig = s.symmetric_eigenvalues().min();
        if min_eig < -1e-10 * scale {
            return Err(invalid("covariance must be positive semidefinite"));
        }
        Ok(())
    }
}

/// Sample mean and unbiased sample covariance of rating realizations, one
/// row per sample.
pub fn fit_forecast(samples: &[Vec<f64>], lead_time: f64) -> Result<RatingForecast> {
    if samples.len() < 2 {
        return Err(invalid("at least two samples are needed to fit a forecast"));
    }
    let k = samples[0].len();
    if k == 0 || samples.iter().any(|s| s.len() != k) {
        return Err(invalid("samples must share a nonzero line count"));
    }
    let n = samples.len() as f64;
    let mut mu = vec![0.0; k];
    for s in samples {
        for i in 0..k {
            mu[i] += s[i];
        }
    }
    mu.iter_mut().for_each(|m| *m /= n);
    let mut sigma = vec![vec![0.0; k]; k];
    for s in samples {
        for i in 0..k {
            let di = s[i] - mu[i];
            for j in 0..=i {
                sigma[i][j] += di * (s[j] - mu[j]);
            }
        }
    }
    for i in 0..k {
        for j in 0..=i {
            sigma[i][j] /= n - 1.0;
            sigma[j][i] = sigma[i][j];
        }
    }
    RatingForecast::new(mu, sigma, lead_time)
}

pub fn chi2_cdf(k: usize, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(k as f64 / 2.0, x / 2.0)
    }
}

/// The `gamma`-quantile of the chi-squared distribution with `k` degrees
/// of freedom.
pub fn chi2_quantile(k: usize, gamma: f64) -> Result<f64> {
    if k == 0 {
        return Err(invalid("chi-squared dimension must be at least 1"));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid(format!("confidence level {gamma} must lie in (0, 1)")));
    }
    let mut hi = k as f64 + 1.0;
    while chi2_cdf(k, hi) < gamma {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(k, mid) < gamma {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `E[max(0, y - delta)]` per line for `delta ~ N(mu, Sigma)`, using the
/// marginal variances only.
pub fn truncated_deficit_expectation(f: &RatingForecast, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != f.dim() {
        return Err(invalid("guarantee vector length does not match the forecast"));
    }
    Ok(f.sd()
        .iter()
        .zip(&f.mu)
        .zip(y)
        .map(|((&s, &m), &y)| {
            if s <= 0.0 {
                return (y - m).max(0.0);
            }
            let beta = (y - m) / s;
            ((y - m) * normal_cdf(beta) + s * normal_pdf(beta)).max(0.0)
        })
        .collect())
}

/// Factor `B` with `Sigma = B B'`, from the eigendecomposition of `Sigma`.
/// Diagonal covariances give `B = diag(sd)` exactly.
fn factor(f: &RatingForecast) -> DMatrix<f64> {
    let s = f.sigma_matrix();
    let k = f.dim();
    let diagonal = (0..k).all(|i| (0..k).all(|j| i == j || s[(i, j)] == 0.0));
    if diagonal {
        return DMatrix::from_diagonal(&DVector::from_vec(f.sd()));
    }
    let eig = s.symmetric_eigen();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut b = DMatrix::zeros(k, k);
    for (c, &e) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[e].max(0.0).sqrt();
        let v = eig.eigenvectors.column(e);
        let pivot = v.iter().copied().fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for r in 0..k {
            b[(r, c)] = sign * v[r] * lambda;
        }
    }
    b
}

fn pseudo_inverse(b: &DMatrix<f64>) -> DMatrix<f64> {
    let tol = 1e-12 * (1.0 + b.amax());
    b.clone().pseudo_inverse(tol).expect("nonnegative tolerance")
}

/// `{mu + B z : |z| <= sqrt(rho)}` with `rho` the chi-squared quantile.
#[derive(Debug, Clone)]
pub struct EllipsoidSet {
    pub mu: Vec<f64>,
    pub b: DMatrix<f64>,
    pub rho: f64,
    pub gamma: f64,
    b_pinv: DMatrix<f64>,
}

pub fn build_ellipsoid(f: &RatingForecast, gamma: f64) -> Result<EllipsoidSet> {
    f.validate()?;
    let rho = chi2_quantile(f.dim(), gamma)?;
    let b = factor(f);
    Ok(EllipsoidSet { mu: f.mu.clone(), b_pinv: pseudo_inverse(&b), b, rho, gamma })
}

impl EllipsoidSet {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn radius(&self) -> f64 {
        self.rho.sqrt()
    }

    pub fn delta_of(&self, z: &[f64]) -> Vec<f64> {
        let bz = &self.b * DVector::from_column_slice(z);
        self.mu.iter().zip(bz.iter()).map(|(m, v)| m + v).collect()
    }

    /// Whitened coordinates of `delta`, or `None` when `delta - mu` leaves
    /// the range of `B` (possible for singular covariances).
    pub fn z_of(&self, delta: &[f64]) -> Option<Vec<f64>> {
        let d = DVector::from_iterator(self.dim(), delta.iter().zip(&self.mu).map(|(x, m)| x - m));
        let z = &self.b_pinv * &d;
        let back = &self.b * &z;
        let miss = (back - &d).amax();
        (miss <= 1e-9 * (1.0 + d.amax())).then(|| z.as_slice().to_vec())
    }

    pub fn contains(&self, delta: &[f64]) -> bool {
        match self.z_of(delta) {
            Some(z) => z.iter().map(|v| v * v).sum::<f64>().sqrt() <= self.radius() * (1.0 + 1e-12),
            None => false,
        }
    }

    /// Marginal standard deviations (row norms of `B`).
    pub fn sd(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.b.row(i).norm()).collect()
    }

    pub fn sample_normal<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.delta_of(&z)
    }

    /// A point drawn uniformly from the boundary sphere, in z-space.
    pub fn sample_boundary_z<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        loop {
            let z: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
            let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 1e-12 {
                return z.iter().map(|v| v * self.radius() / n).collect();
            }
        }
    }
}

/// Outer polyhedral approximation `{mu + B z : S z <= h}` of an ellipsoid.
#[derive(Debug, Clone)]
pub struct PolytopeSet {
    pub mu: Vec<f64>,
    pub b: DMatrix<f64>,
    /// facets × k
    pub s: DMatrix<f64>,
    pub h: Vec<f64>,
    /// Vertices in delta-space, p.u., deduplicated.
    pub vertices: Vec<Vec<f64>>,
    pub facets_per_cycle: usize,
    z_vertices: Vec<Vec<f64>>,
    /// Half-width of the z-space bounding box per coordinate.
    z_extent: Vec<f64>,
}

/// One piece of a polytope split by the planes `delta_i = y_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    /// `true` where the cell lies on the deficit side `delta_i <= y_i`.
    pub deficit: Vec<bool>,
    pub vertices: Vec<Vec<f64>>,
}

pub fn build_polytope(e: &EllipsoidSet, facets_per_cycle: usize) -> Result<PolytopeSet> {
    build_polytope_capped(e, facets_per_cycle, DEFAULT_VERTEX_CAP)
}

/// Coordinates are paired, (z0, z1), (z2, z3), ..., and each pair is
/// bounded by a regular polygon circumscribing the circle of radius
/// `sqrt(rho)`; an unpaired last coordinate gets an interval.
pub fn build_polytope_capped(e: &EllipsoidSet, facets_per_cycle: usize, cap: usize) -> Result<PolytopeSet> {
    let k = e.dim();
    if k > cap {
        return Err(Error::Capacity { dim: k, cap });
    }
    if facets_per_cycle < 4 {
        return Err(invalid("at least 4 facets per cycle are required"));
    }
    let r = e.radius();
    let nf = facets_per_cycle;
    let pairs = k / 2;
    let rows = pairs * nf + 2 * (k % 2);
    let mut s = DMatrix::zeros(rows, k);
    let mut h = vec![r; rows];
    let mut row = 0;
    let tau = 2.0 * std::f64::consts::PI;
    // Polygon vertex angles sit halfway between adjacent facet normals.
    let corner = r / (std::f64::consts::PI / nf as f64).cos();
    let mut factors: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut z_extent = vec![r; k];
    for p in 0..pairs {
        let (a, b) = (2 * p, 2 * p + 1);
        let mut pts = Vec::with_capacity(nf);
        for j in 0..nf {
            let th = tau * j as f64 / nf as f64;
            s[(row, a)] = th.cos();
            s[(row, b)] = th.sin();
            row += 1;
            let tv = th + std::f64::consts::PI / nf as f64;
            pts.push(vec![corner * tv.cos(), corner * tv.sin()]);
        }
        factors.push(pts);
        z_extent[a] = corner;
        z_extent[b] = corner;
    }
    if k % 2 == 1 {
        s[(row, k - 1)] = 1.0;
        s[(row + 1, k - 1)] = -1.0;
        h[row] = r;
        h[row + 1] = r;
        factors.push(vec![vec![-r], vec![r]]);
    }

    // Cartesian product of the per-factor vertex lists.
    let mut z_vertices: Vec<Vec<f64>> = vec![Vec::new()];
    for f in &factors {
        let mut next = Vec::with_capacity(z_vertices.len() * f.len());
        for v in &z_vertices {
            for p in f {
                let mut w = v.clone();
                w.extend_from_slice(p);
                next.push(w);
            }
        }
        z_vertices = next;
    }

    let mut poly = PolytopeSet {
        mu: e.mu.clone(),
        b: e.b.clone(),
        s,
        h,
        vertices: Vec::new(),
        facets_per_cycle: nf,
        z_vertices,
        z_extent,
    };
    let mut vertices: Vec<Vec<f64>> = Vec::new();
    for z in &poly.z_vertices {
        push_unique(&mut vertices, poly.delta_of(z));
    }
    poly.vertices = vertices;
    Ok(poly)
}

fn push_unique(list: &mut Vec<Vec<f64>>, v: Vec<f64>) {
    let dup = list.iter().any(|w| w.iter().zip(&v).all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + a.abs())));
    if !dup {
        list.push(v);
    }
}

/// Solves a small dense system, `None` when (nearly) singular.
fn solve_small(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    let scale = a.amax();
    if scale == 0.0 {
        return None;
    }
    let svd = a.svd(true, true);
    let smin = svd.singular_values.min();
    if smin <= 1e-10 * scale {
        return None;
    }
    svd.solve(&b, 0.0).ok()
}

impl PolytopeSet {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn delta_of(&self, z: &[f64]) -> Vec<f64> {
        let bz = &self.b * DVector::from_column_slice(z);
        self.mu.iter().zip(bz.iter()).map(|(m, v)| m + v).collect()
    }

    pub fn z_vertices(&self) -> &[Vec<f64>] {
        &self.z_vertices
    }

    pub fn contains_z(&self, z: &[f64]) -> bool {
        (0..self.s.nrows()).all(|r| {
            let lhs: f64 = (0..self.dim()).map(|c| self.s[(r, c)] * z[c]).sum();
            lhs <= self.h[r] * (1.0 + 1e-12) + 1e-12
        })
    }

    /// Uniform sample from the polytope, mapped to delta-space.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        loop {
            let z: Vec<f64> = self.z_extent.iter().map(|&w| rng.random_range(-w..=w)).collect();
            if self.contains_z(&z) {
                return self.delta_of(&z);
            }
        }
    }

    /// Smallest rating each line reaches over the polytope.
    pub fn lower_corner(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.vertices.iter().map(|v| v[i]).fold(f64::INFINITY, f64::min)).collect()
    }

    /// Splits the polytope by the planes `delta_i = y_i` (p.u.) and returns
    /// the vertices of every nonempty piece.
    ///
    /// Vertices are found by intersecting every `k`-subset of facets and
    /// split planes, so the cost grows combinatorially with the dimension.
    pub fn cells(&self, y: &[f64]) -> Result<Vec<Cell>> {
        let k = self.dim();
        if y.len() != k {
            return Err(invalid("guarantee vector length does not match the polytope"));
        }
        // Constraint rows in z-space: facets first, then split planes
        // B_i z = y_i - mu_i.
        let nf = self.s.nrows();
        let mut planes: Vec<(Vec<f64>, f64)> =
            (0..nf).map(|r| ((0..k).map(|c| self.s[(r, c)]).collect(), self.h[r])).collect();
        for i in 0..k {
            planes.push(((0..k).map(|c| self.b[(i, c)]).collect(), y[i] - self.mu[i]));
        }

        let mut points: Vec<Vec<f64>> = Vec::new();
        let mut subset: Vec<usize> = (0..k).collect();
        let m = planes.len();
        loop {
            let a = DMatrix::from_fn(k, k, |r, c| planes[subset[r]].0[c]);
            let rhs = DVector::from_iterator(k, subset.iter().map(|&p| planes[p].1));
            if let Some(z) = solve_small(a, rhs) {
                let z = z.as_slice().to_vec();
                if self.contains_z_tol(&z, 1e-9) {
                    push_unique(&mut points, z);
                }
            }
            // Next k-subset in lexicographic order.
            let mut i = k;
            while i > 0 && subset[i - 1] == m - k + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            subset[i - 1] += 1;
            for j in i..k {
                subset[j] = subset[j - 1] + 1;
            }
        }
        // The degenerate polytope of a zero covariance is a single point.
        if k == 0 || self.b.amax() == 0.0 {
            points = vec![vec![0.0; k]];
        }

        let mut cells = Vec::new();
        for mask in 0..(1usize << k) {
            let deficit: Vec<bool> = (0..k).map(|i| mask >> i & 1 == 1).collect();
            let mut verts = Vec::new();
            for z in &points {
                let delta = self.delta_of(z);
                let inside = (0..k).all(|i| {
                    let tol = 1e-9 * (1.0 + y[i].abs());
                    if deficit[i] {
                        delta[i] <= y[i] + tol
                    } else {
                        delta[i] >= y[i] - tol
                    }
                });
                if inside {
                    push_unique(&mut verts, delta);
                }
            }
            if !verts.is_empty() {
                cells.push(Cell { deficit, vertices: verts });
            }
        }
        Ok(cells)
    }

    fn contains_z_tol(&self, z: &[f64], tol: f64) -> bool {
        (0..self.s.nrows()).all(|r| {
            let lhs: f64 = (0..self.dim()).map(|c| self.s[(r, c)] * z[c]).sum();
            lhs <= self.h[r] + tol * (1.0 + self.h[r].abs())
        })
    }
}
