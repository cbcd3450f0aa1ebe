//! MCMC samplers for the hierarchical posterior
//!
//! ```text
//! π(p, λ, δ | b) ∝ λ^(M/2+α_λ-1) δ^(N/2+α_δ-1)
//!                  exp(-λ/2 ‖Gp - b‖² - δ/2 pᵀLp - β_λ λ - β_δ δ)
//! ```
//!
//! Three transition kernels share the density evaluators below:
//!
//! * [`run_gibbs`]: λ | p, δ | p, then p | λ, δ. One factorization per sweep.
//! * [`run_mtc`]: `n_mh` log-space random-walk steps on (λ, δ) targeting the
//!   marginal π(λ, δ | b), then p | λ, δ from the last accepted factor.
//! * [`run_pcgibbs`]: λ | p, then `n_mh` log-space steps on δ targeting
//!   π(δ | λ, b), then p | λ, δ. The step order is part of the algorithm and
//!   is not configurable.
//!
//! Gamma draws use the shape–rate convention. Every chain owns two ChaCha
//! streams: one for the hyper-parameter moves and one for the profile noise,
//! so the θ path of MTC does not depend on the profile stream.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{check_len, Error, Result};
use crate::linalg::{
    cholesky_owned, sample_gaussian_posterior, CholCounter, CholFactor, SpdMatrix,
};
use crate::model::{EdgeData, ForwardOperator, PrecisionOperator, RadialGrid, RadialProfile};

/// Gamma hyper-prior parameters for λ and δ (shape α, rate β).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub alpha_lambda: f64,
    pub beta_lambda: f64,
    pub alpha_delta: f64,
    pub beta_delta: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            alpha_lambda: 1.0,
            beta_lambda: 1e-6,
            alpha_delta: 1.0,
            beta_delta: 1e-6,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha_lambda,
            self.beta_lambda,
            self.alpha_delta,
            self.beta_delta,
        ];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "hyper-parameters must be positive: {self:?}"
            )))
        }
    }
}

/// Random-walk proposal in log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProposalConfig {
    /// Joint walk on `(ln λ, ln δ)` with covariance `[[c11, c12], [c12, c22]]`.
    Walk2d { cov: [f64; 3], n_mh: usize },
    /// Walk on `ln δ` with the given variance.
    Walk1d { variance: f64, n_mh: usize },
}

impl ProposalConfig {
    pub fn walk2d(c11: f64, c12: f64, c22: f64, n_mh: usize) -> Result<Self> {
        let cfg = ProposalConfig::Walk2d {
            cov: [c11, c12, c22],
            n_mh,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn walk1d(variance: f64, n_mh: usize) -> Result<Self> {
        let cfg = ProposalConfig::Walk1d { variance, n_mh };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n_mh(&self) -> usize {
        match *self {
            ProposalConfig::Walk2d { n_mh, .. } | ProposalConfig::Walk1d { n_mh, .. } => n_mh,
        }
    }

    pub fn with_n_mh(self, n: usize) -> Self {
        match self {
            ProposalConfig::Walk2d { cov, .. } => ProposalConfig::Walk2d { cov, n_mh: n },
            ProposalConfig::Walk1d { variance, .. } => ProposalConfig::Walk1d { variance, n_mh: n },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mh() == 0 {
            return Err(Error::Domain("n_mh must be at least 1".into()));
        }
        match *self {
            ProposalConfig::Walk2d { cov: [a, b, c], .. } => {
                if a > 0.0 && c > 0.0 && a * c - b * b > 0.0 && [a, b, c].iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::Domain(format!(
                        "proposal covariance [[{a}, {b}], [{b}, {c}]] is not positive definite"
                    )))
                }
            }
            ProposalConfig::Walk1d { variance, .. } => {
                if variance > 0.0 && variance.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Domain(format!(
                        "proposal variance must be positive, got {variance}"
                    )))
                }
            }
        }
    }

    // Lower Cholesky factor of the 2×2 covariance.
    fn sqrt_2d(&self) -> Result<[f64; 3]> {
        match *self {
            ProposalConfig::Walk2d { cov: [a, b, c], .. } => {
                let l11 = a.sqrt();
                let l21 = b / l11;
                Ok([l11, l21, (c - l21 * l21).sqrt()])
            }
            _ => Err(Error::Domain("expected a 2D proposal".into())),
        }
    }
}

/// One stored state of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub lambda: f64,
    pub delta: f64,
    pub p: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Gibbs,
    Mtc,
    PcGibbs,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Gibbs => "gibbs",
            Algorithm::Mtc => "mtc",
            Algorithm::PcGibbs => "pcgibbs",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gibbs" => Ok(Algorithm::Gibbs),
            "mtc" => Ok(Algorithm::Mtc),
            "pcgibbs" => Ok(Algorithm::PcGibbs),
            other => Err(Error::Domain(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// Seeds of the two random streams a chain consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainSeeds {
    /// λ/δ draws, MH proposals and accept/reject uniforms.
    pub hyper: u64,
    /// Standard normal vectors for the profile draws.
    pub profile: u64,
}

impl From<u64> for ChainSeeds {
    fn from(seed: u64) -> Self {
        Self {
            hyper: seed,
            profile: seed,
        }
    }
}

struct ChainRng {
    hyper: ChaCha8Rng,
    profile: ChaCha8Rng,
}

impl ChainRng {
    fn new(seeds: ChainSeeds) -> Self {
        let mut hyper = ChaCha8Rng::seed_from_u64(seeds.hyper);
        hyper.set_stream(1);
        let mut profile = ChaCha8Rng::seed_from_u64(seeds.profile);
        profile.set_stream(2);
        Self { hyper, profile }
    }
}

/// Output of a sampler run. `states[0]` is the initial state.
#[derive(Debug, Clone)]
pub struct ChainRecord {
    pub algorithm: Algorithm,
    pub states: Vec<ChainState>,
    pub accepted: u64,
    pub proposed: u64,
    pub chol_count: u64,
    pub seeds: ChainSeeds,
    pub hyper: HyperParams,
    pub proposal: Option<ProposalConfig>,
}

impl ChainRecord {
    /// Number of transitions performed.
    pub fn iterations(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    /// MH acceptance rate; `None` for Gibbs, which has no MH step.
    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }

    pub fn n_mh(&self) -> Option<usize> {
        self.proposal.map(|p| p.n_mh())
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.lambda).collect()
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.delta).collect()
    }

    /// Trace of profile coefficient `j` (0-based).
    pub fn profile_trace(&self, j: usize) -> Vec<f64> {
        self.states.iter().map(|s| s.p[j]).collect()
    }
}

/// Data and operators of one posterior, with the products every sampler
/// reuses precomputed.
#[derive(Debug, Clone)]
pub struct PosteriorModel {
    g: Array2<f64>,
    gram: Array2<f64>,
    l: Array2<f64>,
    b: Array1<f64>,
    gtb: Array1<f64>,
    btb: f64,
    hyper: HyperParams,
}

impl PosteriorModel {
    pub fn new(
        forward: &ForwardOperator,
        precision: &PrecisionOperator,
        data: &EdgeData,
        hyper: HyperParams,
    ) -> Result<Self> {
        if forward.edge_grid() != data.grid() {
            return Err(Error::Domain("edge data grid differs from operator grid".into()));
        }
        Self::from_parts(
            forward.matrix().clone(),
            precision.matrix().clone(),
            data.values().clone(),
            hyper,
        )
    }

    /// Builds a posterior from raw matrices: `g` is `M × N`, `l` is `N × N`
    /// symmetric positive definite, `b` has length `M`.
    pub fn from_parts(g: Array2<f64>, l: Array2<f64>, b: Array1<f64>, hyper: HyperParams) -> Result<Self> {
        hyper.validate()?;
        check_len(g.nrows(), b.len())?;
        check_len(g.ncols(), l.nrows())?;
        let l = SpdMatrix::new(l)?.into_inner();
        let gram = g.t().dot(&g);
        // Exact symmetry keeps λGᵀG + δL symmetric bit for bit.
        let gram = Array2::from_shape_fn(gram.raw_dim(), |(i, j)| {
            if i <= j {
                gram[[i, j]]
            } else {
                gram[[j, i]]
            }
        });
        let gtb = g.t().dot(&b);
        let btb = b.dot(&b);
        Ok(Self {
            g,
            gram,
            l,
            b,
            gtb,
            btb,
            hyper,
        })
    }

    /// Number of data points `M`.
    pub fn m(&self) -> usize {
        self.g.nrows()
    }

    /// Number of profile unknowns `N`.
    pub fn n(&self) -> usize {
        self.g.ncols()
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    pub fn forward_matrix(&self) -> &Array2<f64> {
        &self.g
    }

    pub fn precision_matrix(&self) -> &Array2<f64> {
        &self.l
    }

    pub fn data(&self) -> &Array1<f64> {
        &self.b
    }

    pub fn gtb(&self) -> &Array1<f64> {
        &self.gtb
    }

    pub fn residual_sq(&self, p: ArrayView1<f64>) -> Result<f64> {
        check_len(self.n(), p.len())?;
        let r = self.g.dot(&p) - &self.b;
        let v = r.dot(&r);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("data residual"))
        }
    }

    pub fn prior_energy(&self, p: ArrayView1<f64>) -> Result<f64> {
        check_len(self.n(), p.len())?;
        let v = p.dot(&self.l.dot(&p));
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("prior quadratic form"))
        }
    }

    /// Factor of `λGᵀG + δL`.
    pub fn factor(&self, lambda: f64, delta: f64, counter: &mut CholCounter) -> Result<CholFactor> {
        check_positive(lambda, delta)?;
        let a = SpdMatrix::combine(lambda, &self.gram, delta, &self.l)?;
        Ok(cholesky_owned(a, counter)?.with_provenance(lambda, delta))
    }

    // Marginal log density from an existing factor of λGᵀG + δL.
    fn log_marginal_from_factor(&self, lambda: f64, delta: f64, factor: &CholFactor) -> Result<f64> {
        let hp = &self.hyper;
        let m = self.m() as f64;
        let n = self.n() as f64;
        let z = factor.solve_rt(self.gtb.view())?;
        let quad = lambda * self.btb - lambda * lambda * z.dot(&z);
        let v = (m / 2.0 + hp.alpha_lambda - 1.0) * lambda.ln()
            + (n / 2.0 + hp.alpha_delta - 1.0) * delta.ln()
            - hp.beta_lambda * lambda
            - hp.beta_delta * delta
            - 0.5 * factor.logdet()
            - 0.5 * quad;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("marginal density"))
        }
    }
}

fn check_positive(lambda: f64, delta: f64) -> Result<()> {
    if lambda > 0.0 && delta > 0.0 && lambda.is_finite() && delta.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "λ and δ must be positive and finite, got ({lambda}, {delta})"
        )))
    }
}

fn gamma_draw<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !rate.is_finite() || !shape.is_finite() {
        return Err(Error::NonFinite("gamma parameters"));
    }
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(g.sample(rng))
}

/// λ | p, b ~ Γ(M/2 + α_λ, ½‖Gp − b‖² + β_λ).
pub fn sample_lambda_conditional<R: Rng + ?Sized>(
    model: &PosteriorModel,
    p: ArrayView1<f64>,
    rng: &mut R,
) -> Result<f64> {
    let hp = model.hyper();
    let rate = 0.5 * model.residual_sq(p)? + hp.beta_lambda;
    gamma_draw(model.m() as f64 / 2.0 + hp.alpha_lambda, rate, rng)
}

/// δ | p ~ Γ(N/2 + α_δ, ½ pᵀLp + β_δ).
pub fn sample_delta_conditional<R: Rng + ?Sized>(
    model: &PosteriorModel,
    p: ArrayView1<f64>,
    rng: &mut R,
) -> Result<f64> {
    let hp = model.hyper();
    let rate = 0.5 * model.prior_energy(p)? + hp.beta_delta;
    gamma_draw(model.n() as f64 / 2.0 + hp.alpha_delta, rate, rng)
}

/// Log of the joint posterior density, up to a constant that depends only
/// on the data, operators and hyper-parameters.
pub fn log_full_posterior(model: &PosteriorModel, state: &ChainState) -> Result<f64> {
    check_positive(state.lambda, state.delta)?;
    let hp = model.hyper();
    let (lambda, delta) = (state.lambda, state.delta);
    let m = model.m() as f64;
    let n = model.n() as f64;
    Ok((m / 2.0 + hp.alpha_lambda - 1.0) * lambda.ln()
        + (n / 2.0 + hp.alpha_delta - 1.0) * delta.ln()
        - 0.5 * lambda * model.residual_sq(state.p.view())?
        - 0.5 * delta * model.prior_energy(state.p.view())?
        - hp.beta_lambda * lambda
        - hp.beta_delta * delta)
}

/// Log of π(λ, δ | b) up to a constant, from one factorization of
/// `A = λGᵀG + δL`:
///
/// ```text
/// (M/2+α_λ-1) ln λ + (N/2+α_δ-1) ln δ - β_λ λ - β_δ δ
///     - ½ ln det A - ½ (λ‖b‖² - λ² bᵀG A⁻¹ Gᵀb)
/// ```
pub fn log_marginal_theta(
    model: &PosteriorModel,
    lambda: f64,
    delta: f64,
    counter: &mut CholCounter,
) -> Result<f64> {
    let factor = model.factor(lambda, delta, counter)?;
    model.log_marginal_from_factor(lambda, delta, &factor)
}

/// Current point of a marginal MH walk, with its log target and factor.
#[derive(Debug, Clone)]
pub struct MarginalCursor {
    lambda: f64,
    delta: f64,
    log_target: f64,
    factor: CholFactor,
}

impl MarginalCursor {
    /// Evaluates the marginal at `(λ, δ)`; costs one factorization.
    pub fn new(model: &PosteriorModel, lambda: f64, delta: f64, counter: &mut CholCounter) -> Result<Self> {
        let factor = model.factor(lambda, delta, counter)?;
        let log_target = model.log_marginal_from_factor(lambda, delta, &factor)?;
        Ok(Self {
            lambda,
            delta,
            log_target,
            factor,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn log_target(&self) -> f64 {
        self.log_target
    }

    pub fn factor(&self) -> &CholFactor {
        &self.factor
    }
}

/// Accept/reject rule of a random walk on log coordinates. The target
/// density lives on the natural scale, so `Σ ln x` of each point enters as
/// the Jacobian of the log transform.
pub fn log_walk_accepts(
    current_log_target: f64,
    current_log_coords: &[f64],
    proposed_log_target: f64,
    proposed_log_coords: &[f64],
    log_u: f64,
) -> bool {
    log_u
        < log_walk_log_alpha(
            current_log_target,
            current_log_coords,
            proposed_log_target,
            proposed_log_coords,
        )
}

/// Log acceptance probability of the same move.
pub fn log_walk_log_alpha(
    current_log_target: f64,
    current_log_coords: &[f64],
    proposed_log_target: f64,
    proposed_log_coords: &[f64],
) -> f64 {
    let jac: f64 = proposed_log_coords.iter().sum::<f64>() - current_log_coords.iter().sum::<f64>();
    (proposed_log_target - current_log_target + jac).min(0.0)
}

/// Result of one MH sub-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MhStep {
    pub lambda: f64,
    pub delta: f64,
    pub accepted: bool,
}

/// One joint log-space random-walk step on (λ, δ) targeting π(λ, δ | b),
/// with the standard normal pair `w` and `ln u` supplied by the caller.
pub fn mh_theta_2d_with(
    model: &PosteriorModel,
    cursor: &mut MarginalCursor,
    cfg: &ProposalConfig,
    w: [f64; 2],
    log_u: f64,
    counter: &mut CholCounter,
) -> Result<MhStep> {
    let [l11, l21, l22] = cfg.sqrt_2d()?;
    let cur = [cursor.lambda.ln(), cursor.delta.ln()];
    let prop = [cur[0] + l11 * w[0], cur[1] + l21 * w[0] + l22 * w[1]];
    let (lambda, delta) = (prop[0].exp(), prop[1].exp());
    let factor = model.factor(lambda, delta, counter)?;
    let log_target = model.log_marginal_from_factor(lambda, delta, &factor)?;
    let accepted = log_walk_accepts(cursor.log_target, &cur, log_target, &prop, log_u);
    if accepted {
        *cursor = MarginalCursor {
            lambda,
            delta,
            log_target,
            factor,
        };
    }
    Ok(MhStep {
        lambda: cursor.lambda,
        delta: cursor.delta,
        accepted,
    })
}

pub fn mh_theta_2d<R: Rng + ?Sized>(
    model: &PosteriorModel,
    cursor: &mut MarginalCursor,
    cfg: &ProposalConfig,
    counter: &mut CholCounter,
    rng: &mut R,
) -> Result<MhStep> {
    let w = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
    let log_u = rng.random::<f64>().ln();
    mh_theta_2d_with(model, cursor, cfg, w, log_u, counter)
}

/// One log-space random-walk step on δ with λ held at the cursor's value,
/// targeting π(δ | λ, b).
pub fn mh_delta_1d_with(
    model: &PosteriorModel,
    cursor: &mut MarginalCursor,
    cfg: &ProposalConfig,
    w: f64,
    log_u: f64,
    counter: &mut CholCounter,
) -> Result<MhStep> {
    let sigma = match *cfg {
        ProposalConfig::Walk1d { variance, .. } => variance.sqrt(),
        _ => return Err(Error::Domain("expected a 1D proposal".into())),
    };
    let lambda = cursor.lambda;
    let cur = cursor.delta.ln();
    let prop = cur + sigma * w;
    let delta = prop.exp();
    let factor = model.factor(lambda, delta, counter)?;
    // λ-only terms cancel in the ratio, so the joint marginal is a valid
    // unnormalized conditional.
    let log_target = model.log_marginal_from_factor(lambda, delta, &factor)?;
    let accepted = log_walk_accepts(cursor.log_target, &[cur], log_target, &[prop], log_u);
    if accepted {
        *cursor = MarginalCursor {
            lambda,
            delta,
            log_target,
            factor,
        };
    }
    Ok(MhStep {
        lambda,
        delta: cursor.delta,
        accepted,
    })
}

pub fn mh_delta_1d<R: Rng + ?Sized>(
    model: &PosteriorModel,
    cursor: &mut MarginalCursor,
    cfg: &ProposalConfig,
    counter: &mut CholCounter,
    rng: &mut R,
) -> Result<MhStep> {
    let w = rng.sample(StandardNormal);
    let log_u = rng.random::<f64>().ln();
    mh_delta_1d_with(model, cursor, cfg, w, log_u, counter)
}

/// `(λGᵀG + δL)⁻¹ λGᵀb`, the mode of p | λ, δ, b.
pub fn map_estimate(
    model: &PosteriorModel,
    lambda: f64,
    delta: f64,
    counter: &mut CholCounter,
) -> Result<Array1<f64>> {
    let factor = model.factor(lambda, delta, counter)?;
    factor.solve(model.gtb.mapv(|v| lambda * v).view())
}

/// Same as [`map_estimate`], wrapped as a profile on `grid`.
pub fn map_profile(
    model: &PosteriorModel,
    grid: &RadialGrid,
    lambda: f64,
    delta: f64,
    counter: &mut CholCounter,
) -> Result<RadialProfile> {
    RadialProfile::new(grid.clone(), map_estimate(model, lambda, delta, counter)?)
}

/// `λ = δ = 1` and the matching MAP profile. The factorization is not
/// charged to any chain.
pub fn default_init(model: &PosteriorModel) -> Result<ChainState> {
    let mut scratch = CholCounter::new();
    let p = map_estimate(model, 1.0, 1.0, &mut scratch)?;
    Ok(ChainState {
        lambda: 1.0,
        delta: 1.0,
        p,
    })
}

/// `‖p_ratio − truth‖₂` for the Tikhonov solutions with regularization
/// parameter `ratio = δ/λ`, one entry per ratio.
pub fn tikhonov_error_curve(model: &PosteriorModel, truth: ArrayView1<f64>, ratios: &[f64]) -> Result<Vec<f64>> {
    check_len(model.n(), truth.len())?;
    let mut scratch = CholCounter::new();
    ratios
        .iter()
        .map(|&ratio| {
            let p = map_estimate(model, 1.0, ratio, &mut scratch)?;
            let d = &p - &truth;
            Ok(d.dot(&d).sqrt())
        })
        .collect()
}

fn check_init(model: &PosteriorModel, init: &ChainState, iters: usize) -> Result<()> {
    if iters == 0 {
        return Err(Error::Domain("iterations must be at least 1".into()));
    }
    check_positive(init.lambda, init.delta)?;
    check_len(model.n(), init.p.len())
}

/// Hierarchical Gibbs sampler: per sweep λ | p, δ | p (both from the old
/// profile), then p | λ, δ. One factorization per sweep.
pub fn run_gibbs(
    model: &PosteriorModel,
    init: &ChainState,
    iters: usize,
    seeds: impl Into<ChainSeeds>,
) -> Result<ChainRecord> {
    check_init(model, init, iters)?;
    let seeds = seeds.into();
    let mut rng = ChainRng::new(seeds);
    let mut counter = CholCounter::new();
    let mut states = Vec::with_capacity(iters + 1);
    states.push(init.clone());
    let mut p = init.p.clone();
    for k in 1..=iters {
        let mut step = || -> Result<ChainState> {
            let lambda = sample_lambda_conditional(model, p.view(), &mut rng.hyper)?;
            let delta = sample_delta_conditional(model, p.view(), &mut rng.hyper)?;
            let factor = model.factor(lambda, delta, &mut counter)?;
            let p = sample_gaussian_posterior(&factor, lambda, model.gtb.view(), &mut rng.profile)?;
            Ok(ChainState { lambda, delta, p })
        };
        let state = step().map_err(|e| e.at_iteration(k))?;
        p.assign(&state.p);
        states.push(state);
    }
    Ok(ChainRecord {
        algorithm: Algorithm::Gibbs,
        states,
        accepted: 0,
        proposed: 0,
        chol_count: counter.get(),
        seeds,
        hyper: *model.hyper(),
        proposal: None,
    })
}

/// Marginal-then-conditional sampler with a joint log-space walk on (λ, δ).
/// The factor of the current θ is carried across sweeps, so a chain of `K`
/// sweeps costs `n_mh·K + 1` factorizations.
pub fn run_mtc(
    model: &PosteriorModel,
    init: &ChainState,
    iters: usize,
    cfg: &ProposalConfig,
    seeds: impl Into<ChainSeeds>,
) -> Result<ChainRecord> {
    check_init(model, init, iters)?;
    cfg.validate()?;
    if !matches!(cfg, ProposalConfig::Walk2d { .. }) {
        return Err(Error::Domain("MTC needs a 2D proposal".into()));
    }
    let seeds = seeds.into();
    let mut rng = ChainRng::new(seeds);
    let mut counter = CholCounter::new();
    let mut cursor = MarginalCursor::new(model, init.lambda, init.delta, &mut counter)
        .map_err(|e| e.at_iteration(0))?;
    let mut states = Vec::with_capacity(iters + 1);
    states.push(init.clone());
    let (mut accepted, mut proposed) = (0u64, 0u64);
    for k in 1..=iters {
        let mut step = || -> Result<ChainState> {
            for _ in 0..cfg.n_mh() {
                let s = mh_theta_2d(model, &mut cursor, cfg, &mut counter, &mut rng.hyper)?;
                proposed += 1;
                accepted += s.accepted as u64;
            }
            let p = sample_gaussian_posterior(
                cursor.factor(),
                cursor.lambda,
                model.gtb.view(),
                &mut rng.profile,
            )?;
            Ok(ChainState {
                lambda: cursor.lambda,
                delta: cursor.delta,
                p,
            })
        };
        let state = step().map_err(|e| e.at_iteration(k))?;
        states.push(state);
    }
    Ok(ChainRecord {
        algorithm: Algorithm::Mtc,
        states,
        accepted,
        proposed,
        chol_count: counter.get(),
        seeds,
        hyper: *model.hyper(),
        proposal: Some(*cfg),
    })
}

/// Partially collapsed Gibbs: λ | p, then δ | λ with p integrated out via
/// `n_mh` log-space MH steps, then p | λ, δ. `(n_mh + 1)` factorizations per
/// sweep.
pub fn run_pcgibbs(
    model: &PosteriorModel,
    init: &ChainState,
    iters: usize,
    cfg: &ProposalConfig,
    seeds: impl Into<ChainSeeds>,
) -> Result<ChainRecord> {
    check_init(model, init, iters)?;
    cfg.validate()?;
    if !matches!(cfg, ProposalConfig::Walk1d { .. }) {
        return Err(Error::Domain("PC Gibbs needs a 1D proposal".into()));
    }
    let seeds = seeds.into();
    let mut rng = ChainRng::new(seeds);
    let mut counter = CholCounter::new();
    let mut states = Vec::with_capacity(iters + 1);
    states.push(init.clone());
    let mut p = init.p.clone();
    let mut delta = init.delta;
    let (mut accepted, mut proposed) = (0u64, 0u64);
    for k in 1..=iters {
        let mut step = || -> Result<ChainState> {
            let lambda = sample_lambda_conditional(model, p.view(), &mut rng.hyper)?;
            let mut cursor = MarginalCursor::new(model, lambda, delta, &mut counter)?;
            for _ in 0..cfg.n_mh() {
                let s = mh_delta_1d(model, &mut cursor, cfg, &mut counter, &mut rng.hyper)?;
                proposed += 1;
                accepted += s.accepted as u64;
            }
            let p = sample_gaussian_posterior(cursor.factor(), lambda, model.gtb.view(), &mut rng.profile)?;
            Ok(ChainState {
                lambda,
                delta: cursor.delta,
                p,
            })
        };
        let state = step().map_err(|e| e.at_iteration(k))?;
        p.assign(&state.p);
        delta = state.delta;
        states.push(state);
    }
    Ok(ChainRecord {
        algorithm: Algorithm::PcGibbs,
        states,
        accepted,
        proposed,
        chol_count: counter.get(),
        seeds,
        hyper: *model.hyper(),
        proposal: Some(*cfg),
    })
}

/// Number of leading transitions dropped for a burn fraction.
pub fn burn_count(iterations: usize, burn: f64) -> usize {
    (burn * iterations as f64).floor() as usize
}

/// Random-walk proposals from a Gibbs pre-run: twice the covariance of the
/// post-burn-in `(ln λ, ln δ)` samples for MTC and twice the variance of
/// `ln δ` for PC Gibbs. Both configs come back with `n_mh = 1`.
pub fn tune_proposals(record: &ChainRecord, burn: f64) -> Result<(ProposalConfig, ProposalConfig)> {
    if !(0.0..1.0).contains(&burn) {
        return Err(Error::Domain(format!("burn fraction must be in [0, 1), got {burn}")));
    }
    let skip = 1 + burn_count(record.iterations(), burn);
    let kept = &record.states[skip.min(record.states.len())..];
    if kept.len() < 2 {
        return Err(Error::ChainTooShort { len: kept.len(), min: 2 });
    }
    let ll: Vec<f64> = kept.iter().map(|s| s.lambda.ln()).collect();
    let ld: Vec<f64> = kept.iter().map(|s| s.delta.ln()).collect();
    let n = kept.len() as f64;
    let ml = ll.iter().sum::<f64>() / n;
    let md = ld.iter().sum::<f64>() / n;
    let cov = |a: &[f64], ma: f64, b: &[f64], mb: f64| {
        a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0)
    };
    let c11 = cov(&ll, ml, &ll, ml);
    let c12 = cov(&ll, ml, &ld, md);
    let c22 = cov(&ld, md, &ld, md);
    if !(c11 > 0.0) || !(c22 > 0.0) || !(c11 * c22 - c12 * c12 > 0.0) {
        return Err(Error::DegenerateChain(
            "hyper-parameter samples have singular covariance".into(),
        ));
    }
    Ok((
        ProposalConfig::walk2d(2.0 * c11, 2.0 * c12, 2.0 * c22, 1)?,
        ProposalConfig::walk1d(2.0 * c22, 1)?,
    ))
}
