//! Grids, the edge-blur forward operator, the radial smoothness prior and
//! synthetic data.
//!
//! The data live on `s_i = i/N`, `-N ≤ i ≤ N`, and the radial profile on the
//! midpoints `r_j = h(j - 1/2)`, `1 ≤ j ≤ N`, with `h = 1/N`. The forward
//! matrix is the midpoint rule applied to `b(s) = ∫ p(r) g(s, r) r dr`, so the
//! quadrature weight `h` and the radial Jacobian `r_j` are stored in `G`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use libm::erfc;

use crate::error::{check_len, Error, Result};
use crate::linalg::{cholesky, CholCounter, SpdMatrix};

/// Data grid: `2N+1` equispaced points on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGrid {
    n: usize,
    h: f64,
    s: Vec<f64>,
}

impl EdgeGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("grid resolution N must be positive".into()));
        }
        let nf = n as f64;
        let s = (-(n as i64)..=n as i64).map(|i| i as f64 / nf).collect();
        Ok(Self { n, h: 1.0 / nf, s })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    /// `M = 2N + 1`.
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Index of `s = 0`.
    pub fn center(&self) -> usize {
        self.n
    }
}

/// Radial grid: `N` cell midpoints on `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    n: usize,
    h: f64,
    r: Vec<f64>,
}

impl RadialGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("grid resolution N must be positive".into()));
        }
        let h = 1.0 / n as f64;
        let r = (1..=n).map(|j| h * (j as f64 - 0.5)).collect();
        Ok(Self { n, h, r })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

/// Angular integral of a half-plane indicator over the circle of radius `r`
/// centred a distance `s` from the edge.
pub fn edge_kernel(s: f64, r: f64) -> Result<f64> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Domain(format!("kernel radius must be positive, got {r}")));
    }
    if !s.is_finite() {
        return Err(Error::Domain(format!("kernel offset must be finite, got {s}")));
    }
    Ok(if s < -r {
        0.0
    } else if s > r {
        2.0 * PI
    } else {
        2.0 * (PI - (s / r).clamp(-1.0, 1.0).acos())
    })
}

/// Dense `(2N+1) × N` edge-blur matrix and the grids it was built on.
#[derive(Debug, Clone)]
pub struct ForwardOperator {
    matrix: Array2<f64>,
    edge: EdgeGrid,
    radial: RadialGrid,
}

pub fn build_forward(edge: &EdgeGrid, radial: &RadialGrid) -> Result<ForwardOperator> {
    if edge.n() != radial.n() {
        return Err(Error::Domain(format!(
            "edge grid N={} does not match radial grid N={}",
            edge.n(),
            radial.n()
        )));
    }
    let h = radial.h();
    let mut matrix = Array2::zeros((edge.len(), radial.len()));
    for (i, &s) in edge.s().iter().enumerate() {
        for (j, &r) in radial.r().iter().enumerate() {
            matrix[[i, j]] = h * edge_kernel(s, r)? * r;
        }
    }
    Ok(ForwardOperator {
        matrix,
        edge: edge.clone(),
        radial: radial.clone(),
    })
}

impl ForwardOperator {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn edge_grid(&self) -> &EdgeGrid {
        &self.edge
    }

    pub fn radial_grid(&self) -> &RadialGrid {
        &self.radial
    }

    /// `G p` for a raw coefficient vector.
    pub fn apply(&self, p: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_len(self.matrix.ncols(), p.len())?;
        Ok(self.matrix.dot(&p))
    }
}

pub fn apply_forward(forward: &ForwardOperator, profile: &RadialProfile) -> Result<Array1<f64>> {
    if profile.grid() != forward.radial_grid() {
        return Err(Error::Domain("profile grid differs from operator grid".into()));
    }
    forward.apply(profile.values().view())
}

/// Tridiagonal matrix stored by diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
}

impl Tridiagonal {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn apply(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let n = self.dim();
        check_len(n, x.len())?;
        Ok(Array1::from_shape_fn(n, |i| {
            let mut v = self.diag[i] * x[i];
            if i > 0 {
                v += self.sub[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                v += self.sup[i] * x[i + 1];
            }
            v
        }))
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.dim();
        let mut m = Array2::zeros((n, n));
        for i in 0..n {
            m[[i, i]] = self.diag[i];
            if i > 0 {
                m[[i, i - 1]] = self.sub[i - 1];
            }
            if i + 1 < n {
                m[[i, i + 1]] = self.sup[i];
            }
        }
        m
    }
}

/// `(sub, diag, super)` of row `j` (1-based) of the flux-form operator
/// `d/dr(r dp/dr)` on a midpoint grid with spacing `h`.
pub(crate) fn flux_stencil(j: usize, h: f64) -> (f64, f64, f64) {
    let rj = h * (j as f64 - 0.5);
    let left = rj - h / 2.0;
    let right = rj + h / 2.0;
    let h2 = h * h;
    (left / h2, -(left + right) / h2, right / h2)
}

/// Discrete `R p = d/dr(r dp/dr)`. The face at `r = 0` has zero weight,
/// which gives `p'(0) = 0`; the ghost value beyond `r_N` is zero.
pub fn build_r(radial: &RadialGrid) -> Result<Tridiagonal> {
    let n = radial.n();
    if n < 3 {
        return Err(Error::Domain(format!("radial operator needs N >= 3, got {n}")));
    }
    let h = radial.h();
    let mut sub = Vec::with_capacity(n - 1);
    let mut diag = Vec::with_capacity(n);
    let mut sup = Vec::with_capacity(n - 1);
    for j in 1..=n {
        let (l, d, u) = flux_stencil(j, h);
        if j > 1 {
            sub.push(l);
        }
        diag.push(d);
        if j < n {
            sup.push(u);
        }
    }
    Ok(Tridiagonal { sub, diag, sup })
}

/// Prior precision `L` of the radial profile together with the operator `R`
/// it is assembled from.
#[derive(Debug, Clone)]
pub struct PrecisionOperator {
    l: Array2<f64>,
    r: Tridiagonal,
}

/// Assembles `L = R·diag(1/r)·R`, the discrete `∫ (Rp)² / r dr`, i.e. the
/// squared 2D Laplacian of the radially symmetric PSF up to a constant
/// absorbed into δ. Fails if `L` does not factor.
pub fn build_precision(radial: &RadialGrid) -> Result<PrecisionOperator> {
    let r = build_r(radial)?;
    let n = r.dim();
    let dense = r.to_dense();
    let mut scaled = dense.clone();
    for (mut row, &rj) in scaled.rows_mut().into_iter().zip(radial.r()) {
        row.mapv_inplace(|v| v / rj);
    }
    let product = dense.t().dot(&scaled);
    let l = Array2::from_shape_fn((n, n), |(i, j)| 0.5 * (product[[i, j]] + product[[j, i]]));
    let mut scratch = CholCounter::new();
    cholesky(&SpdMatrix::new(l.clone())?, &mut scratch).map_err(|e| match e {
        Error::NotPositiveDefinite { pivot } => Error::Domain(format!(
            "prior precision is indefinite (pivot {pivot}); stencil is broken"
        )),
        other => other,
    })?;
    Ok(PrecisionOperator { l, r })
}

impl PrecisionOperator {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.l
    }

    pub fn radial_operator(&self) -> &Tridiagonal {
        &self.r
    }

    pub fn quadratic_form(&self, p: ArrayView1<f64>) -> Result<f64> {
        check_len(self.l.nrows(), p.len())?;
        Ok(p.dot(&self.l.dot(&p)))
    }
}

/// Radial PSF profile sampled on a [`RadialGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct RadialProfile {
    grid: RadialGrid,
    values: Array1<f64>,
}

impl RadialProfile {
    pub fn new(grid: RadialGrid, values: Array1<f64>) -> Result<Self> {
        check_len(grid.len(), values.len())?;
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array1<f64> {
        self.values
    }
}

/// Where a line-out came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub source: Option<String>,
    pub rows: Option<String>,
    pub normalized: bool,
}

/// Measured (or simulated) edge line-out on an [`EdgeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeData {
    grid: EdgeGrid,
    b: Array1<f64>,
    meta: Option<Provenance>,
}

impl EdgeData {
    pub fn new(grid: EdgeGrid, b: Array1<f64>) -> Result<Self> {
        check_len(grid.len(), b.len())?;
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("edge data"));
        }
        Ok(Self { grid, b, meta: None })
    }

    pub fn with_meta(mut self, meta: Provenance) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn grid(&self) -> &EdgeGrid {
        &self.grid
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.b
    }

    pub fn meta(&self) -> Option<&Provenance> {
        self.meta.as_ref()
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("sigma must be positive, got {sigma}")))
    }
}

/// Radial profile of a unit-mass isotropic 2D Gaussian with width `sigma`.
pub fn synth_profile(sigma: f64, radial: &RadialGrid) -> Result<RadialProfile> {
    check_sigma(sigma)?;
    let norm = 1.0 / (2.0 * PI * sigma * sigma);
    let values = radial
        .r()
        .iter()
        .map(|r| norm * (-r * r / (2.0 * sigma * sigma)).exp())
        .collect();
    RadialProfile::new(radial.clone(), values)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Exact edge response of [`synth_profile`]: `b(s) = Φ(s/σ)`.
pub fn synth_edge(sigma: f64, edge: &EdgeGrid) -> Result<Array1<f64>> {
    check_sigma(sigma)?;
    Ok(edge.s().iter().map(|s| normal_cdf(s / sigma)).collect())
}

/// Adds i.i.d. Gaussian noise with standard deviation
/// `noise_fraction × (max(clean) − min(clean))`. Returns the noisy data and
/// the corresponding noise precision `1/sd²`.
pub fn add_noise(
    edge: &EdgeGrid,
    clean: ArrayView1<f64>,
    noise_fraction: f64,
    seed: u64,
) -> Result<(EdgeData, f64)> {
    check_len(edge.len(), clean.len())?;
    if !(noise_fraction > 0.0) || !noise_fraction.is_finite() {
        return Err(Error::Domain(format!(
            "noise fraction must be positive, got {noise_fraction}"
        )));
    }
    let (lo, hi) = clean
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let strength = hi - lo;
    if !(strength > 0.0) || !strength.is_finite() {
        return Err(Error::Domain("clean signal has zero range".into()));
    }
    let sd = noise_fraction * strength;
    let normal = Normal::new(0.0, sd).map_err(|e| Error::Domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy = clean.mapv(|v| v + normal.sample(&mut rng));
    Ok((EdgeData::new(edge.clone(), noisy)?, 1.0 / (sd * sd)))
}

/// Renders the 2D PSF `k(u, v) = p(√(u² + v²))` on a `width × width` pixel
/// grid with spacing `h`, centred on the middle pixel. Values between grid
/// radii are linearly interpolated, held at `p_1` inside `r_1`, and zero
/// beyond `r_N`.
pub fn radial_to_2d(profile: &RadialProfile, width: usize) -> Result<Array2<f64>> {
    if width % 2 == 0 {
        return Err(Error::Domain(format!("image width must be odd, got {width}")));
    }
    let grid = profile.grid();
    let h = grid.h();
    let r = grid.r();
    let p = profile.values();
    let n = r.len();
    let c = (width / 2) as f64;
    let r_max = r[n - 1];
    Ok(Array2::from_shape_fn((width, width), |(i, j)| {
        let u = i as f64 - c;
        let v = j as f64 - c;
        let rho = h * (u * u + v * v).sqrt();
        if rho <= r[0] {
            p[0]
        } else if rho > r_max {
            0.0
        } else {
            let t = rho / h - 0.5;
            let k = (t.floor() as usize).min(n - 2);
            let frac = t - k as f64;
            (1.0 - frac) * p[k] + frac * p[k + 1]
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn kernel_values() {
        assert!((edge_kernel(0.0, 1.0).unwrap() - PI).abs() < 1e-15);
        assert_eq!(edge_kernel(2.0, 1.0).unwrap(), 2.0 * PI);
        assert_eq!(edge_kernel(-2.0, 1.0).unwrap(), 0.0);
        assert!((edge_kernel(1.0, 1.0).unwrap() - 2.0 * PI).abs() < 1e-15);
        assert_eq!(edge_kernel(-1.0, 1.0).unwrap(), 0.0);
        assert!(edge_kernel(0.0, 0.0).is_err());
        assert!(edge_kernel(0.0, -1.0).is_err());
    }

    #[test]
    fn kernel_continuous_at_support_edges() {
        for k in 1..=50 {
            let r = k as f64 * 0.04;
            for &s in &[-r, r] {
                let g0 = edge_kernel(s, r).unwrap();
                for &eps in &[1e-4, 1e-8, 1e-12] {
                    let d = (edge_kernel(s + eps, r).unwrap() - g0)
                        .abs()
                        .max((edge_kernel(s - eps, r).unwrap() - g0).abs());
                    // Square-root cusp: |Δg| ≈ 4√(ε/r).
                    assert!(d <= 4.5 * (eps / r).sqrt(), "r={r} s={s} eps={eps} d={d}");
                }
            }
        }
    }

    #[test]
    fn grids() {
        let e = EdgeGrid::new(4).unwrap();
        assert_eq!(e.len(), 9);
        assert_eq!(e.s()[e.center()], 0.0);
        assert!(e.s().windows(2).all(|w| w[1] > w[0]));
        for i in 0..e.len() {
            assert_eq!(e.s()[i], -e.s()[e.len() - 1 - i]);
        }
        let r = RadialGrid::new(4).unwrap();
        assert_eq!(r.r(), &[0.125, 0.375, 0.625, 0.875]);
        assert_eq!(r.r()[3], 1.0 - r.h() / 2.0);
        assert!(EdgeGrid::new(0).is_err());
    }

    #[test]
    fn forward_small_grid_by_hand() {
        let f = build_forward(&EdgeGrid::new(2).unwrap(), &RadialGrid::new(2).unwrap()).unwrap();
        assert_eq!(f.matrix().dim(), (5, 2));
        // s = 1, r = 1/4
        assert!((f.matrix()[[4, 0]] - PI / 4.0).abs() < 1e-15);
        assert!(build_forward(&EdgeGrid::new(2).unwrap(), &RadialGrid::new(3).unwrap()).is_err());
    }

    #[test]
    fn forward_structure() {
        for &n in &[3usize, 8, 33] {
            let eg = EdgeGrid::new(n).unwrap();
            let rg = RadialGrid::new(n).unwrap();
            let f = build_forward(&eg, &rg).unwrap();
            let g = f.matrix();
            assert!(g.iter().all(|&v| v >= 0.0));
            let last = g.row(eg.len() - 1);
            for (j, &r) in rg.r().iter().enumerate() {
                assert!((last[j] - 2.0 * PI * rg.h() * r).abs() < 1e-14);
            }
            assert!((last.sum() - PI).abs() < 1e-12);
            for (i, &s) in eg.s().iter().enumerate() {
                for (j, &r) in rg.r().iter().enumerate() {
                    if r < -s {
                        assert_eq!(g[[i, j]], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn apply_forward_basics() {
        let eg = EdgeGrid::new(6).unwrap();
        let rg = RadialGrid::new(6).unwrap();
        let f = build_forward(&eg, &rg).unwrap();
        let zero = RadialProfile::new(rg.clone(), Array1::zeros(6)).unwrap();
        assert!(apply_forward(&f, &zero).unwrap().iter().all(|&v| v == 0.0));
        let mut e1 = Array1::zeros(6);
        e1[0] = 1.0;
        let col = apply_forward(&f, &RadialProfile::new(rg, e1).unwrap()).unwrap();
        assert_eq!(col, f.matrix().column(0).to_owned());
        assert!(f.apply(Array1::zeros(5).view()).is_err());
    }

    fn rel_l2(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
        let d = a - b;
        d.dot(&d).sqrt() / b.dot(b).sqrt()
    }

    #[test]
    fn forward_matches_erf_edge_and_converges() {
        let sigma = 1.0 / 15.0;
        let mut errs = Vec::new();
        for &n in &[128usize, 256, 512] {
            let eg = EdgeGrid::new(n).unwrap();
            let rg = RadialGrid::new(n).unwrap();
            let f = build_forward(&eg, &rg).unwrap();
            let p = synth_profile(sigma, &rg).unwrap();
            let b = apply_forward(&f, &p).unwrap();
            errs.push(rel_l2(&b, &synth_edge(sigma, &eg).unwrap()));
        }
        assert!(errs[2] < 1e-3, "{errs:?}");
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
    }

    #[test]
    fn stencil_rows() {
        assert_eq!(flux_stencil(2, 1.0), (1.0, -3.0, 2.0));
        assert_eq!(flux_stencil(1, 1.0), (0.0, -1.0, 1.0));
        let r = build_r(&RadialGrid::new(5).unwrap()).unwrap();
        assert_eq!(r.sub.len(), 4);
        assert_eq!(r.sup.len(), 4);
        let ones = r.apply(Array1::ones(5).view()).unwrap();
        for v in &ones.as_slice().unwrap()[..4] {
            assert!(v.abs() < 1e-9);
        }
        assert!(ones[4] < 0.0);
        assert!(build_r(&RadialGrid::new(2).unwrap()).is_err());
    }

    #[test]
    fn precision_is_symmetric_and_matches_flux_energy() {
        let rg = RadialGrid::new(16).unwrap();
        let prec = build_precision(&rg).unwrap();
        let l = prec.matrix();
        assert_eq!(l, &l.t().to_owned());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let p: Array1<f64> = (0..16).map(|_| rng.random::<f64>() - 0.5).collect();
            let q = prec.quadratic_form(p.view()).unwrap();
            let rp = prec.radial_operator().apply(p.view()).unwrap();
            let energy: f64 = rp.iter().zip(rg.r()).map(|(v, r)| v * v / r).sum();
            assert!(((q - energy) / energy).abs() < 1e-12);
        }
    }

    #[test]
    fn precision_nonnegative_quadratic_form() {
        let prec = build_precision(&RadialGrid::new(32).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let p: Array1<f64> = (0..32).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            assert!(prec.quadratic_form(p.view()).unwrap() >= 0.0);
        }
    }

    #[test]
    fn precision_factors_at_several_sizes() {
        for &n in &[8usize, 64, 512] {
            let prec = build_precision(&RadialGrid::new(n).unwrap()).unwrap();
            let mut c = CholCounter::new();
            assert!(cholesky(&SpdMatrix::new(prec.matrix().clone()).unwrap(), &mut c).is_ok());
        }
    }

    // Extreme eigenvalues by power iteration (largest) and inverse power
    // iteration through Gaussian elimination (smallest).
    fn condition_number(a: &Array2<f64>) -> f64 {
        let n = a.nrows();
        let mut v = Array1::from_shape_fn(n, |i| 1.0 + (i as f64 * 0.37).sin());
        let mut lmax = 0.0;
        for _ in 0..2000 {
            let w = a.dot(&v);
            lmax = w.dot(&v) / v.dot(&v);
            v = &w / w.dot(&w).sqrt();
        }
        let solve = |rhs: &Array1<f64>| {
            let mut m = a.clone();
            let mut x = rhs.clone();
            for c in 0..n {
                for r in c + 1..n {
                    let f = m[[r, c]] / m[[c, c]];
                    for j in c..n {
                        m[[r, j]] -= f * m[[c, j]];
                    }
                    x[r] -= f * x[c];
                }
            }
            for c in (0..n).rev() {
                let mut s = x[c];
                for j in c + 1..n {
                    s -= m[[c, j]] * x[j];
                }
                x[c] = s / m[[c, c]];
            }
            x
        };
        let mut u = Array1::from_shape_fn(n, |i| 1.0 + (i as f64 * 0.11).cos());
        let mut inv_max = 0.0;
        for _ in 0..200 {
            let w = solve(&u);
            inv_max = w.dot(&u) / u.dot(&u);
            u = &w / w.dot(&w).sqrt();
        }
        lmax * inv_max
    }

    #[test]
    fn precision_conditioning_grows_with_n() {
        let conds: Vec<f64> = [16usize, 32, 64]
            .iter()
            .map(|&n| condition_number(build_precision(&RadialGrid::new(n).unwrap()).unwrap().matrix()))
            .collect();
        assert!(conds[0] < conds[1] && conds[1] < conds[2], "{conds:?}");
    }

    #[test]
    fn synthetic_profile() {
        let sigma = 1.0 / 15.0;
        let rg = RadialGrid::new(512).unwrap();
        let p = synth_profile(sigma, &rg).unwrap();
        let peak = 225.0 / (2.0 * PI);
        let r1 = rg.r()[0];
        let expected = peak * (-r1 * r1 * 225.0 / 2.0).exp();
        assert!((p.values()[0] - expected).abs() < 1e-12 * peak);
        assert!((peak - 35.81).abs() < 0.01);
        assert!(p.values().iter().all(|&v| v > 0.0));
        assert!(p.values().windows(2).into_iter().all(|w| w[1] < w[0]));
        assert!(synth_profile(0.0, &rg).is_err());
    }

    #[test]
    fn synthetic_edge() {
        let eg = EdgeGrid::new(512).unwrap();
        let b = synth_edge(1.0 / 15.0, &eg).unwrap();
        assert_eq!(b[eg.center()], 0.5);
        assert_eq!(b[eg.len() - 1], 1.0);
        assert!(b.windows(2).into_iter().all(|w| w[1] >= w[0]));
        // Φ(1), Φ(-3) to 1e-15.
        assert!((normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((normal_cdf(-3.0) - 0.001_349_898_031_630_094_6).abs() < 1e-17);
    }

    #[test]
    fn noise_model() {
        let eg = EdgeGrid::new(512).unwrap();
        let clean = synth_edge(1.0 / 15.0, &eg).unwrap();
        assert!(add_noise(&eg, clean.view(), 0.0, 1).is_err());
        let (noisy, lambda_true) = add_noise(&eg, clean.view(), 0.02, 1).unwrap();
        let range = clean[eg.len() - 1] - clean[0];
        assert!((lambda_true - 1.0 / (0.02 * range).powi(2)).abs() < 1e-9);
        assert!((lambda_true - 2500.0).abs() < 1e-6);
        let resid = noisy.values() - &clean;
        let sd = (resid.dot(&resid) / resid.len() as f64).sqrt();
        assert!((sd - 0.02).abs() < 0.05 * 0.02, "sd={sd}");
        let (again, _) = add_noise(&eg, clean.view(), 0.02, 1).unwrap();
        assert_eq!(noisy, again);
        let flat = Array1::from_elem(eg.len(), 0.3);
        assert!(add_noise(&eg, flat.view(), 0.02, 1).is_err());
    }

    #[test]
    fn psf_image() {
        let rg = RadialGrid::new(16).unwrap();
        let p = synth_profile(0.2, &rg).unwrap();
        let img = radial_to_2d(&p, 21).unwrap();
        assert_eq!(img[[10, 10]], p.values()[0]);
        for i in 0..21 {
            for j in 0..21 {
                // 90° rotation: (i, j) -> (j, 20 - i)
                assert_eq!(img[[i, j]], img[[j, 20 - i]]);
            }
        }
        let c = RadialProfile::new(rg.clone(), Array1::from_elem(16, 2.5)).unwrap();
        let flat = radial_to_2d(&c, 41).unwrap();
        for i in 0..41 {
            for j in 0..41 {
                let rho = rg.h() * (((i as f64 - 20.0).powi(2) + (j as f64 - 20.0).powi(2)).sqrt());
                if rho <= rg.r()[15] {
                    assert_eq!(flat[[i, j]], 2.5);
                } else {
                    assert_eq!(flat[[i, j]], 0.0);
                }
            }
        }
        assert!(radial_to_2d(&p, 20).is_err());
    }

    proptest! {
        #[test]
        fn kernel_bounded_and_monotone(r in 1e-3f64..2.0, s in -3.0f64..3.0, ds in 0.0f64..1.0) {
            let a = edge_kernel(s, r).unwrap();
            let b = edge_kernel(s + ds, r).unwrap();
            prop_assert!((0.0..=2.0 * PI).contains(&a));
            prop_assert!(b >= a);
        }

        #[test]
        fn forward_output_monotone_for_nonnegative_profiles(
            vals in proptest::collection::vec(0.0f64..10.0, 12)
        ) {
            let eg = EdgeGrid::new(12).unwrap();
            let rg = RadialGrid::new(12).unwrap();
            let f = build_forward(&eg, &rg).unwrap();
            let b = f.apply(Array1::from(vals).view()).unwrap();
            for w in b.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-12);
            }
        }
    }
}
