//! Dense symmetric positive definite linear algebra.
//!
//! The factor is kept as the lower triangle `Rᵀ` in row-major order so that
//! both the factorization and the forward substitution run over contiguous
//! rows. `upper()` hands out `R` itself where the upper convention
//! `RᵀR = A` is wanted.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, Error, Result};

const BLOCK: usize = 32;

/// Running count of Cholesky factorizations performed by one chain.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct CholCounter {
    count: u64,
}

impl CholCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self) -> u64 {
        self.count
    }

    fn bump(&mut self) {
        self.count += 1;
    }
}

/// A square matrix that is symmetric and meant to be positive definite.
/// Positive definiteness is only established by a successful factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(Array2<f64>);

impl SpdMatrix {
    /// Wraps `a` after checking it is square and symmetric to within a
    /// relative `1e-12` of its largest entry.
    pub fn new(a: Array2<f64>) -> Result<Self> {
        let n = a.nrows();
        check_len(n, a.ncols())?;
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !scale.is_finite() {
            return Err(Error::NonFinite("matrix"));
        }
        for i in 0..n {
            for j in 0..i {
                if (a[[i, j]] - a[[j, i]]).abs() > 1e-12 * scale {
                    return Err(Error::Domain(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self(a))
    }

    /// `λ·gram + δ·prec`, the posterior precision of the profile given the
    /// hyper-parameters. Symmetric whenever both operands are.
    pub fn combine(lambda: f64, gram: &Array2<f64>, delta: f64, prec: &Array2<f64>) -> Result<Self> {
        check_len(gram.nrows(), prec.nrows())?;
        check_len(gram.ncols(), prec.ncols())?;
        let mut a = Array2::<f64>::zeros(gram.raw_dim());
        ndarray::Zip::from(&mut a)
            .and(gram)
            .and(prec)
            .for_each(|a, &g, &l| *a = lambda * g + delta * l);
        Ok(Self(a))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Cholesky factor `R` (upper triangular, positive diagonal) with `RᵀR = A`.
#[derive(Debug, Clone)]
pub struct CholFactor {
    // Rᵀ, row-major, strict upper part zero.
    lower: Array2<f64>,
    provenance: Option<(f64, f64)>,
}

/// Factors `a` and bumps `counter` by one.
pub fn cholesky(a: &SpdMatrix, counter: &mut CholCounter) -> Result<CholFactor> {
    counter.bump();
    let mut work = a.as_array().as_standard_layout().into_owned();
    factor_in_place(&mut work)?;
    Ok(CholFactor {
        lower: work,
        provenance: None,
    })
}

/// Like [`cholesky`] but consumes the matrix, avoiding a copy on the hot path.
pub fn cholesky_owned(a: SpdMatrix, counter: &mut CholCounter) -> Result<CholFactor> {
    counter.bump();
    let mut work = a.into_inner();
    if !work.is_standard_layout() {
        work = work.as_standard_layout().into_owned();
    }
    factor_in_place(&mut work)?;
    Ok(CholFactor {
        lower: work,
        provenance: None,
    })
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// Records the `(λ, δ)` pair this factor was built for.
    pub fn with_provenance(mut self, lambda: f64, delta: f64) -> Self {
        self.provenance = Some((lambda, delta));
        self
    }

    pub fn provenance(&self) -> Option<(f64, f64)> {
        self.provenance
    }

    /// The upper-triangular factor `R`.
    pub fn upper(&self) -> Array2<f64> {
        self.lower.t().to_owned()
    }

    pub fn diagonal(&self) -> Array1<f64> {
        self.lower.diag().to_owned()
    }

    /// Solves `Rᵀ z = y`.
    pub fn solve_rt(&self, y: ArrayView1<f64>) -> Result<Array1<f64>> {
        let n = self.dim();
        check_len(n, y.len())?;
        let l = self.lower.as_slice().expect("standard layout");
        let mut z = y.to_owned();
        for i in 0..n {
            let row = &l[i * n..i * n + i];
            let zi = z[i] - dot(row, &z.as_slice().unwrap()[..i]);
            z[i] = zi / l[i * n + i];
        }
        Ok(z)
    }

    /// Solves `R x = z`.
    pub fn solve_r(&self, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        let n = self.dim();
        check_len(n, z.len())?;
        let l = self.lower.as_slice().expect("standard layout");
        let mut x = z.to_owned();
        let xs = x.as_slice_mut().unwrap();
        for i in (0..n).rev() {
            let xi = xs[i] / l[i * n + i];
            xs[i] = xi;
            for (xj, lij) in xs[..i].iter_mut().zip(&l[i * n..i * n + i]) {
                *xj -= lij * xi;
            }
        }
        Ok(x)
    }

    /// `A⁻¹ y` by forward then backward substitution.
    pub fn solve(&self, y: ArrayView1<f64>) -> Result<Array1<f64>> {
        let z = self.solve_rt(y)?;
        self.solve_r(z.view())
    }

    /// `ln det A = 2 Σ ln r_ii`.
    pub fn logdet(&self) -> f64 {
        2.0 * self.lower.diag().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `Rᵀ w`.
    pub fn rt_mul(&self, w: ArrayView1<f64>) -> Result<Array1<f64>> {
        let n = self.dim();
        check_len(n, w.len())?;
        let l = self.lower.as_slice().expect("standard layout");
        let ws = w.as_standard_layout();
        let ws = ws.as_slice().unwrap();
        Ok((0..n)
            .map(|i| dot(&l[i * n..=i * n + i], &ws[..=i]))
            .collect())
    }
}

/// Draws from `N(A⁻¹ λGᵀb, A⁻¹)` where `factor` holds `A = λGᵀG + δL`.
pub fn sample_gaussian_posterior<R: Rng + ?Sized>(
    factor: &CholFactor,
    lambda: f64,
    gtb: ArrayView1<f64>,
    rng: &mut R,
) -> Result<Array1<f64>> {
    let w: Array1<f64> = (0..factor.dim())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    gaussian_posterior_draw(factor, lambda, gtb, w.view())
}

/// The deterministic part of [`sample_gaussian_posterior`]: returns
/// `A⁻¹(λGᵀb + Rᵀw)` for a given standard normal vector `w`.
///
/// Since `A⁻¹Rᵀ = R⁻¹`, this is `R⁻¹(R⁻ᵀλGᵀb + w)`: one forward and one
/// backward substitution.
pub fn gaussian_posterior_draw(
    factor: &CholFactor,
    lambda: f64,
    gtb: ArrayView1<f64>,
    w: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    check_len(factor.dim(), gtb.len())?;
    check_len(factor.dim(), w.len())?;
    let scaled = gtb.mapv(|v| lambda * v);
    let mut z = factor.solve_rt(scaled.view())?;
    z += &w;
    factor.solve_r(z.view())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

// Blocked right-looking factorization on the lower triangle of a row-major
// matrix; the trailing update touches only the lower block triangle.
fn factor_in_place(a: &mut Array2<f64>) -> Result<()> {
    let n = a.nrows();
    let mut diag_block = vec![0.0; BLOCK * BLOCK];
    let mut k = 0;
    while k < n {
        let nb = BLOCK.min(n - k);
        factor_diagonal_block(a.as_slice_mut().unwrap(), n, k, nb)?;
        if k + nb < n {
            let data = a.as_slice_mut().unwrap();
            for j in 0..nb {
                for t in 0..=j {
                    diag_block[j * nb + t] = data[(k + j) * n + k + t];
                }
            }
            // Panel: X L11ᵀ = A21.
            for i in k + nb..n {
                let row = &mut data[i * n + k..i * n + k + nb];
                for j in 0..nb {
                    let lj = &diag_block[j * nb..j * nb + j];
                    row[j] = (row[j] - dot(&row[..j], lj)) / diag_block[j * nb + j];
                }
            }
            let panel = a.slice(s![k + nb.., k..k + nb]).to_owned();
            let mut i0 = k + nb;
            while i0 < n {
                let ib = BLOCK.min(n - i0);
                let off = i0 - k - nb;
                let pi = panel.slice(s![off..off + ib, ..]);
                let pj = panel.slice(s![..off + ib, ..]);
                let mut target = a.slice_mut(s![i0..i0 + ib, k + nb..i0 + ib]);
                general_mat_mul(-1.0, &pi, &pj.t(), 1.0, &mut target);
                i0 += ib;
            }
        }
        k += nb;
    }
    for i in 0..n {
        for j in i + 1..n {
            a[[i, j]] = 0.0;
        }
    }
    Ok(())
}

fn factor_diagonal_block(a: &mut [f64], ld: usize, off: usize, nb: usize) -> Result<()> {
    for j in 0..nb {
        let rj = (off + j) * ld + off;
        let pivot = a[rj + j] - dot(&a[rj..rj + j], &a[rj..rj + j]);
        // NaN fails this comparison too.
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: off + j });
        }
        let d = pivot.sqrt();
        a[rj + j] = d;
        for i in j + 1..nb {
            let ri = (off + i) * ld + off;
            let (lo, hi) = a.split_at_mut(ri);
            let row_j = &lo[rj..rj + j];
            let row_i = &mut hi[..=j];
            row_i[j] = (row_i[j] - dot(&row_i[..j], row_j)) / d;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = Array2::from_shape_fn((n, n), |_| rng.random::<f64>() - 0.5);
        let mut a = b.dot(&b.t());
        for i in 0..n {
            a[[i, i]] += 1.0;
        }
        a
    }

    // Determinant by partial-pivot elimination, independent of the factor.
    fn lu_logdet(a: &Array2<f64>) -> f64 {
        let n = a.nrows();
        let mut m = a.clone();
        let mut logdet = 0.0;
        for c in 0..n {
            let p = (c..n)
                .max_by(|&x, &y| m[[x, c]].abs().total_cmp(&m[[y, c]].abs()))
                .unwrap();
            if p != c {
                for j in 0..n {
                    m.swap([c, j], [p, j]);
                }
            }
            let piv = m[[c, c]];
            logdet += piv.abs().ln();
            for r in c + 1..n {
                let f = m[[r, c]] / piv;
                for j in c..n {
                    m[[r, j]] -= f * m[[c, j]];
                }
            }
        }
        logdet
    }

    #[test]
    fn identity_factor_is_identity() {
        let mut c = CholCounter::new();
        let f = cholesky(&SpdMatrix::new(Array2::eye(3)).unwrap(), &mut c).unwrap();
        assert_eq!(f.upper(), Array2::<f64>::eye(3));
        assert_eq!(c.get(), 1);
        assert_eq!(f.logdet(), 0.0);
        let y = array![1.0, -2.0, 3.5];
        assert_eq!(f.solve(y.view()).unwrap(), y);
    }

    #[test]
    fn two_by_two_by_hand() {
        let mut c = CholCounter::new();
        let a = SpdMatrix::new(array![[4.0, 2.0], [2.0, 3.0]]).unwrap();
        let f = cholesky(&a, &mut c).unwrap();
        let r = f.upper();
        let expected = array![[2.0, 1.0], [0.0, 2f64.sqrt()]];
        for (x, y) in r.iter().zip(expected.iter()) {
            assert!((x - y).abs() < 1e-15);
        }
        let x = f.solve(array![1.0, 0.0].view()).unwrap();
        assert!((x[0] - 0.375).abs() < 1e-15);
        assert!((x[1] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn logdet_of_diagonal() {
        let mut c = CholCounter::new();
        let f = cholesky(&SpdMatrix::new(array![[2.0, 0.0], [0.0, 8.0]]).unwrap(), &mut c).unwrap();
        assert!((f.logdet() - 16f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn reconstruction_and_logdet_on_random_spd() {
        for &(n, seed) in &[(10, 1u64), (37, 2), (64, 3), (100, 4)] {
            let a = random_spd(n, seed);
            let mut c = CholCounter::new();
            let f = cholesky(&SpdMatrix::new(a.clone()).unwrap(), &mut c).unwrap();
            let r = f.upper();
            let err = (&r.t().dot(&r) - &a).mapv(|v| v * v).sum().sqrt();
            let norm = a.mapv(|v| v * v).sum().sqrt();
            assert!(err < 1e-10 * norm.max(1.0), "n={n} err={err}");
            let direct = lu_logdet(&a);
            assert!(((f.logdet() - direct) / direct.abs().max(1.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn solve_residual_random_spd() {
        for &n in &[20usize, 128, 512] {
            let a = random_spd(n, n as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let y: Array1<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut c = CholCounter::new();
            let f = cholesky(&SpdMatrix::new(a.clone()).unwrap(), &mut c).unwrap();
            let x = f.solve(y.view()).unwrap();
            let res = &a.dot(&x) - &y;
            let rel = res.iter().fold(0.0f64, |m, v| m.max(v.abs()))
                / y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(rel < 1e-8, "n={n} rel={rel}");
            if n == 20 {
                let l2 = res.dot(&res).sqrt() / y.dot(&y).sqrt();
                assert!(l2 < 1e-10);
            }
        }
    }

    #[test]
    fn indefinite_matrix_reports_pivot() {
        let mut c = CholCounter::new();
        let a = SpdMatrix::new(array![[1.0, 2.0], [2.0, 1.0]]).unwrap();
        match cholesky(&a, &mut c) {
            Err(Error::NotPositiveDefinite { pivot }) => assert_eq!(pivot, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(c.get(), 1);
    }

    #[test]
    fn asymmetric_input_rejected() {
        assert!(SpdMatrix::new(array![[1.0, 2.0], [0.0, 1.0]]).is_err());
        assert!(SpdMatrix::new(Array2::zeros((2, 3))).is_err());
    }

    #[test]
    fn zero_noise_draw_is_conditional_mean() {
        let a = random_spd(6, 11);
        let mut c = CholCounter::new();
        let f = cholesky(&SpdMatrix::new(a.clone()).unwrap(), &mut c).unwrap();
        let gtb = array![1.0, -1.0, 0.5, 2.0, 0.0, 3.0];
        let lambda = 2.5;
        let x = gaussian_posterior_draw(&f, lambda, gtb.view(), Array1::zeros(6).view()).unwrap();
        let res = &a.dot(&x) - &gtb.mapv(|v| lambda * v);
        assert!(res.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn rt_mul_matches_dense() {
        let a = random_spd(9, 5);
        let mut c = CholCounter::new();
        let f = cholesky(&SpdMatrix::new(a).unwrap(), &mut c).unwrap();
        let w: Array1<f64> = (0..9).map(|i| i as f64 - 4.0).collect();
        let dense = f.upper().t().dot(&w);
        let fast = f.rt_mul(w.view()).unwrap();
        for (x, y) in dense.iter().zip(fast.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_covariance_draws_are_standard_normal() {
        let mut c = CholCounter::new();
        let f = cholesky(&SpdMatrix::new(Array2::eye(2)).unwrap(), &mut c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let zero = Array1::zeros(2);
        let k = 100_000;
        let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
        for _ in 0..k {
            let x = sample_gaussian_posterior(&f, 1.0, zero.view(), &mut rng).unwrap();
            s1 += x[0];
            s2 += x[0] * x[0];
            s4 += x[0].powi(4);
        }
        let kf = k as f64;
        assert!((s1 / kf).abs() < 4.0 / kf.sqrt());
        assert!((s2 / kf - 1.0).abs() < 0.02);
        assert!((s4 / kf - 3.0).abs() < 0.1);
    }

    #[test]
    fn posterior_draw_covariance_and_mean_at_n4() {
        let a = random_spd(4, 21);
        let mut c = CholCounter::new();
        let f = cholesky(&SpdMatrix::new(a.clone()).unwrap(), &mut c).unwrap();
        let gtb = array![0.3, -1.2, 0.7, 2.0];
        let lambda = 1.7;
        let mean = f.solve(gtb.mapv(|v| lambda * v).view()).unwrap();
        let cov = {
            let mut inv = Array2::<f64>::zeros((4, 4));
            for j in 0..4 {
                let mut e = Array1::zeros(4);
                e[j] = 1.0;
                inv.column_mut(j).assign(&f.solve(e.view()).unwrap());
            }
            inv
        };
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let k = 100_000;
        let draws: Vec<Array1<f64>> = (0..k)
            .map(|_| sample_gaussian_posterior(&f, lambda, gtb.view(), &mut rng).unwrap())
            .collect();
        let mut m = Array1::<f64>::zeros(4);
        for d in &draws {
            m += d;
        }
        m /= k as f64;
        let mut sc = Array2::<f64>::zeros((4, 4));
        for d in &draws {
            let e = d - &m;
            for i in 0..4 {
                for j in 0..4 {
                    sc[[i, j]] += e[i] * e[j];
                }
            }
        }
        sc /= (k - 1) as f64;
        for i in 0..4 {
            let se = (cov[[i, i]] / k as f64).sqrt();
            assert!((m[i] - mean[i]).abs() < 4.0 * se, "coord {i}");
        }
        let diff = (&sc - &cov).mapv(|v| v * v).sum().sqrt();
        let norm = cov.mapv(|v| v * v).sum().sqrt();
        assert!(diff / norm < 0.05, "rel frob {}", diff / norm);
    }
}
