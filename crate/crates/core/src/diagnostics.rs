//! Convergence and efficiency diagnostics for scalar chains.
//!
//! The autocovariance uses the global chain mean in both factors and the
//! `1/(n-k)` normalization. The integrated autocorrelation time is summed
//! over a window chosen by Sokal's self-consistency rule, and the Geweke
//! statistic estimates the spectral density at zero by averaging the lowest
//! periodogram ordinates of each segment.

use std::f64::consts::{PI, SQRT_2};

use libm::erfc;

use crate::error::{Error, Result};
use crate::samplers::{burn_count, Algorithm, ChainRecord};

/// Shortest chain the estimators accept.
pub const MIN_CHAIN_LEN: usize = 100;

fn check_chain(x: &[f64]) -> Result<()> {
    if x.len() < MIN_CHAIN_LEN {
        return Err(Error::ChainTooShort {
            len: x.len(),
            min: MIN_CHAIN_LEN,
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("chain sample"));
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn autocov_centered(x: &[f64], m: f64, k: usize) -> f64 {
    let n = x.len();
    let s: f64 = x[..n - k]
        .iter()
        .zip(&x[k..])
        .map(|(a, b)| (a - m) * (b - m))
        .sum();
    s / (n - k) as f64
}

/// Lag-`k` autocovariance `Ĉ(k)`.
pub fn autocovariance(x: &[f64], k: usize) -> Result<f64> {
    if x.is_empty() || k >= x.len() {
        return Err(Error::Domain(format!(
            "lag {k} out of range for a chain of length {}",
            x.len()
        )));
    }
    Ok(autocov_centered(x, mean(x), k))
}

/// Integrated autocorrelation time and effective sample size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssResult {
    /// `max(τ̂, 1)`; the floor keeps `ess ≤ n` for anticorrelated chains.
    pub tau_int: f64,
    /// The windowed sum `1 + 2 Σ_{k=1}^{N̄} ρ̂(k)` before flooring.
    pub tau_raw: f64,
    pub ess: f64,
    pub window: usize,
    /// Set when no self-consistent window exists below `n/3`; the estimate
    /// then comes from the largest window tried and is unreliable.
    pub too_short: bool,
}

pub fn iact(x: &[f64]) -> Result<EssResult> {
    check_chain(x)?;
    let n = x.len();
    let m = mean(x);
    let c0 = autocov_centered(x, m, 0);
    if !(c0 > 0.0) {
        return Err(Error::DegenerateChain("chain has zero variance".into()));
    }
    let max_window = (n - 1) / 3;
    let mut tau = 1.0;
    let mut window = 0;
    let mut too_short = true;
    for k in 1..=max_window {
        tau += 2.0 * autocov_centered(x, m, k) / c0;
        window = k;
        if k as f64 >= 3.0 * tau {
            too_short = false;
            break;
        }
    }
    let tau_int = tau.max(1.0);
    Ok(EssResult {
        tau_int,
        tau_raw: tau,
        ess: n as f64 / tau_int,
        window,
        too_short,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GewekeResult {
    pub z: f64,
    pub p_value: f64,
    pub n10: usize,
    pub n50: usize,
    pub s10: f64,
    pub s50: f64,
    pub mean10: f64,
    pub mean50: f64,
}

/// Spectral density at frequency zero, normalized so that the variance of
/// the segment mean is about `S(0)/p`.
pub fn spectral_density_at_zero(x: &[f64]) -> Result<f64> {
    let p = x.len();
    if p < 3 {
        return Err(Error::ChainTooShort { len: p, min: 3 });
    }
    let m = mean(x);
    let ordinates = ((p as f64).sqrt() / 0.3).ceil() as usize;
    let ordinates = ordinates.clamp(1, (p - 1) / 2);
    let mut sum = 0.0;
    for j in 1..=ordinates {
        let w = 2.0 * PI * j as f64 / p as f64;
        // Rotate a unit phasor instead of calling sin/cos per sample.
        let (sw, cw) = w.sin_cos();
        let (mut c, mut s) = (1.0f64, 0.0f64);
        let (mut re, mut im) = (0.0, 0.0);
        for (t, v) in x.iter().enumerate() {
            if t % 64 == 0 {
                let (st, ct) = (w * t as f64).sin_cos();
                c = ct;
                s = st;
            }
            let d = v - m;
            re += d * c;
            im -= d * s;
            let nc = c * cw - s * sw;
            s = s * cw + c * sw;
            c = nc;
        }
        sum += (re * re + im * im) / p as f64;
    }
    Ok(sum / ordinates as f64)
}

/// Geweke's test comparing the first 10% of the chain with the last 50%.
pub fn geweke(x: &[f64]) -> Result<GewekeResult> {
    check_chain(x)?;
    let n = x.len();
    let n10 = n / 10;
    let n50 = n / 2;
    let a = &x[..n10];
    let b = &x[n - n50..];
    let s10 = spectral_density_at_zero(a)?;
    let s50 = spectral_density_at_zero(b)?;
    if !(s10 > 0.0) || !(s50 > 0.0) {
        return Err(Error::DegenerateChain(
            "a Geweke segment has zero variance".into(),
        ));
    }
    let (mean10, mean50) = (mean(a), mean(b));
    let z = (mean10 - mean50) / (s10 / n10 as f64 + s50 / n50 as f64).sqrt();
    Ok(GewekeResult {
        z,
        p_value: erfc(z.abs() / SQRT_2),
        n10,
        n50,
        s10,
        s50,
        mean10,
        mean50,
    })
}

/// Which scalar of a chain state a summary describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Lambda,
    Delta,
    /// Profile coefficient, 0-based.
    Profile(usize),
}

impl Component {
    pub fn label(&self) -> String {
        match self {
            Component::Lambda => "lambda".into(),
            Component::Delta => "delta".into(),
            Component::Profile(j) => format!("p_{}", j + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSummary {
    pub component: Component,
    pub mean: f64,
    pub ess: EssResult,
    pub chol_per_ess: f64,
    pub geweke: Option<GewekeResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyReport {
    pub algorithm: Algorithm,
    pub n_mh: Option<usize>,
    pub iterations: usize,
    pub kept: usize,
    pub chol_count: u64,
    /// Factorizations attributed to the kept samples,
    /// `chol_count · kept / iterations`.
    pub chol_kept: f64,
    pub acceptance: Option<f64>,
    pub components: Vec<ComponentSummary>,
}

impl EfficiencyReport {
    pub fn get(&self, c: Component) -> Option<&ComponentSummary> {
        self.components.iter().find(|s| s.component == c)
    }
}

/// Per-component efficiency after dropping the initial state and the first
/// `⌊burn · iterations⌋` transitions. `λ` and `δ` are always included.
pub fn efficiency_report(rec: &ChainRecord, burn: f64, profile: &[usize]) -> Result<EfficiencyReport> {
    if !(0.0..=0.9).contains(&burn) {
        return Err(Error::Domain(format!("burn fraction must be in [0, 0.9], got {burn}")));
    }
    let iterations = rec.iterations();
    let skip = 1 + burn_count(iterations, burn);
    let kept_states = rec.states.get(skip..).unwrap_or(&[]);
    let kept = kept_states.len();
    if kept < MIN_CHAIN_LEN {
        return Err(Error::ChainTooShort {
            len: kept,
            min: MIN_CHAIN_LEN,
        });
    }
    let n = rec.states.first().map_or(0, |s| s.p.len());
    let mut comps = vec![Component::Lambda, Component::Delta];
    for &j in profile {
        if j >= n {
            return Err(Error::Domain(format!("profile index {j} out of range (N = {n})")));
        }
        comps.push(Component::Profile(j));
    }
    let chol_kept = rec.chol_count as f64 * kept as f64 / iterations as f64;
    let components = comps
        .into_iter()
        .map(|component| {
            let x: Vec<f64> = kept_states
                .iter()
                .map(|s| match component {
                    Component::Lambda => s.lambda,
                    Component::Delta => s.delta,
                    Component::Profile(j) => s.p[j],
                })
                .collect();
            let ess = iact(&x)?;
            Ok(ComponentSummary {
                component,
                mean: mean(&x),
                chol_per_ess: chol_kept / ess.ess,
                ess,
                geweke: geweke(&x).ok(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EfficiencyReport {
        algorithm: rec.algorithm,
        n_mh: rec.n_mh(),
        iterations,
        kept,
        chol_count: rec.chol_count,
        chol_kept,
        acceptance: rec.acceptance_rate(),
        components,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = rng.sample::<f64, _>(StandardNormal) / (1.0 - phi * phi).sqrt();
        (0..n)
            .map(|_| {
                x = phi * x + rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect()
    }

    #[test]
    fn autocovariance_basic_cases() {
        let c = vec![3.0; 200];
        for k in [0, 1, 50] {
            assert_eq!(autocovariance(&c, k).unwrap(), 0.0);
        }
        let alt: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let c0 = autocovariance(&alt, 0).unwrap();
        assert!((autocovariance(&alt, 1).unwrap() + c0).abs() < 1e-12);
        assert!(autocovariance(&alt, 1000).is_err());
    }

    #[test]
    fn ar1_lag_one_correlation() {
        let x = ar1(0.5, 100_000, 1);
        let r = autocovariance(&x, 1).unwrap() / autocovariance(&x, 0).unwrap();
        assert!((r / 0.5 - 1.0).abs() < 0.02, "{r}");
    }

    #[test]
    fn iact_of_ar1_matches_closed_form() {
        let phi = 0.9;
        let r = iact(&ar1(phi, 100_000, 2)).unwrap();
        let want = (1.0 + phi) / (1.0 - phi);
        assert!(!r.too_short);
        assert!((r.tau_int / want - 1.0).abs() < 0.15, "{}", r.tau_int);
        assert!(r.window as f64 >= 3.0 * r.tau_raw);
        assert!(((r.window - 1) as f64) < 3.0 * 19.0 * 1.5);
    }

    #[test]
    fn iid_chain_has_full_ess() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
        let r = iact(&x).unwrap();
        assert!((r.ess / 1e5 - 1.0).abs() < 0.1, "{}", r.ess);
        assert!(r.ess <= 1e5);
    }

    #[test]
    fn iact_flags_short_chains() {
        assert!(matches!(iact(&[1.0; 50]), Err(Error::ChainTooShort { .. })));
        assert!(matches!(iact(&[1.0; 500]), Err(Error::DegenerateChain(_))));
        // A ramp stays correlated at every lag below n/3.
        let walk: Vec<f64> = (0..300).map(|t| t as f64).collect();
        assert!(iact(&walk).unwrap().too_short);
    }

    #[test]
    fn sample_mean_error_follows_iact() {
        let (phi, n, reps) = (0.9, 10_000, 200);
        let sigma2 = 1.0 / (1.0 - phi * phi);
        let mut means = Vec::with_capacity(reps);
        let mut taus = 0.0;
        for r in 0..reps {
            let x = ar1(phi, n, 1000 + r as u64);
            means.push(mean(&x));
            taus += iact(&x).unwrap().tau_int;
        }
        let mm = mean(&means);
        let var = means.iter().map(|m| (m - mm).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let predicted = sigma2 / n as f64 * taus / reps as f64;
        assert!((var / predicted - 1.0).abs() < 0.25, "{var} vs {predicted}");
    }

    #[test]
    fn geweke_null_calibration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ok = 0;
        for _ in 0..100 {
            let x: Vec<f64> = (0..2000).map(|_| rng.sample(StandardNormal)).collect();
            let g = geweke(&x).unwrap();
            assert!((g.p_value - 2.0 * (1.0 - crate::model::normal_cdf(g.z.abs()))).abs() < 1e-12);
            ok += (g.z.abs() < 3.0) as usize;
        }
        assert!(ok >= 97, "{ok}");
    }

    #[test]
    fn geweke_detects_mean_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x: Vec<f64> = (0..2000)
            .map(|i| rng.sample::<f64, _>(StandardNormal) + if i < 1000 { 0.0 } else { 5.0 })
            .collect();
        assert!(geweke(&x).unwrap().p_value < 1e-6);
        assert!(matches!(geweke(&[2.0; 400]), Err(Error::DegenerateChain(_))));
    }

    #[test]
    fn spectral_density_of_white_noise_is_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..20_000).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let s = spectral_density_at_zero(&x).unwrap();
        assert!((s / 4.0 - 1.0).abs() < 0.15, "{s}");
    }

    #[test]
    fn spectral_density_matches_direct_dft() {
        let x = ar1(0.3, 500, 8);
        let m = mean(&x);
        let ords = ((500f64).sqrt() / 0.3).ceil() as usize;
        let mut sum = 0.0;
        for j in 1..=ords {
            let w = 2.0 * PI * j as f64 / 500.0;
            let re: f64 = x.iter().enumerate().map(|(t, v)| (v - m) * (w * t as f64).cos()).sum();
            let im: f64 = x.iter().enumerate().map(|(t, v)| (v - m) * (w * t as f64).sin()).sum();
            sum += (re * re + im * im) / 500.0;
        }
        let want = sum / ords as f64;
        assert!((spectral_density_at_zero(&x).unwrap() - want).abs() < 1e-10 * want);
    }

    fn synthetic_record(iters: usize) -> ChainRecord {
        use crate::samplers::{ChainSeeds, ChainState, HyperParams, ProposalConfig};
        let a = ar1(0.8, iters + 1, 9);
        let b = ar1(0.3, iters + 1, 10);
        ChainRecord {
            algorithm: Algorithm::PcGibbs,
            states: a
                .iter()
                .zip(&b)
                .map(|(u, v)| ChainState {
                    lambda: u.exp(),
                    delta: v.exp(),
                    p: ndarray::array![*u, *v, u + v],
                })
                .collect(),
            accepted: 600,
            proposed: 1000,
            chol_count: 2 * iters as u64,
            seeds: ChainSeeds::from(1),
            hyper: HyperParams::default(),
            proposal: Some(ProposalConfig::walk1d(0.1, 1).unwrap()),
        }
    }

    #[test]
    fn efficiency_report_attributes_kept_factorizations() {
        let rec = synthetic_record(1000);
        let r = efficiency_report(&rec, 0.5, &[2]).unwrap();
        assert_eq!(r.kept, 500);
        assert_eq!(r.chol_kept, 1000.0);
        assert_eq!(r.acceptance, Some(0.6));
        assert_eq!(r.n_mh, Some(1));
        assert_eq!(r.components.len(), 3);
        for c in &r.components {
            assert!((c.chol_per_ess - r.chol_kept / c.ess.ess).abs() < 1e-12);
        }
        let lam: Vec<f64> = rec.states[501..].iter().map(|s| s.lambda).collect();
        assert_eq!(r.get(Component::Lambda).unwrap().ess, iact(&lam).unwrap());
        assert_eq!(r.get(Component::Profile(2)).unwrap().component.label(), "p_3");
        assert_eq!(efficiency_report(&rec, 0.5, &[2]).unwrap(), r);
    }

    #[test]
    fn efficiency_report_validates_inputs() {
        let rec = synthetic_record(1000);
        assert!(efficiency_report(&rec, 0.95, &[]).is_err());
        assert!(efficiency_report(&rec, 0.5, &[3]).is_err());
        let short = synthetic_record(150);
        assert!(matches!(efficiency_report(&short, 0.5, &[]), Err(Error::ChainTooShort { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn estimators_are_affine_invariant(seed in 0u64..1000, a in 0.1f64..10.0, neg in any::<bool>(), b in -100.0f64..100.0) {
            let a = if neg { -a } else { a };
            let x = ar1(0.7, 2000, seed);
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let (rx, ry) = (iact(&x).unwrap(), iact(&y).unwrap());
            prop_assert_eq!(rx.window, ry.window);
            prop_assert!((rx.tau_int - ry.tau_int).abs() < 1e-9 * rx.tau_int);
            let (gx, gy) = (geweke(&x).unwrap(), geweke(&y).unwrap());
            let sign = if neg { -1.0 } else { 1.0 };
            prop_assert!((gx.z - sign * gy.z).abs() < 1e-8 * gx.z.abs().max(1.0));
        }

        #[test]
        fn autocorrelations_are_bounded(seed in 0u64..1000, phi in -0.95f64..0.95) {
            let x = ar1(phi, 1000, seed);
            let c0 = autocovariance(&x, 0).unwrap();
            prop_assert_eq!(autocovariance(&x, 0).unwrap() / c0, 1.0);
            let r = iact(&x).unwrap();
            for k in 1..=r.window {
                prop_assert!((autocovariance(&x, k).unwrap() / c0).abs() <= 1.0 + 1e-12);
            }
            prop_assert!(r.ess <= x.len() as f64);
        }
    }
}
