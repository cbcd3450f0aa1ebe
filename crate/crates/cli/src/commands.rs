use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use edgepsf::diagnostics::{efficiency_report, Component, EfficiencyReport};
use edgepsf::model::{
    add_noise, build_forward, build_precision, radial_to_2d, synth_edge, synth_profile, EdgeData, EdgeGrid,
    Provenance, RadialGrid, RadialProfile,
};
use edgepsf::samplers::{
    burn_count, default_init, run_gibbs, run_mtc, run_pcgibbs, tune_proposals, Algorithm, ChainRecord, ChainSeeds,
    HyperParams, PosteriorModel, ProposalConfig,
};
use ndarray::Array1;

use crate::error::{CliError, Result};
use crate::formats::{self, fmt_f64, Truth};
use crate::ingest::{extract_edge, line_out, load_image, Center, RowSelect};

#[derive(Debug, Parser)]
#[command(name = "edgepsf", version, about = "Bayesian PSF estimation from a blurred edge")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate noisy edge data from a Gaussian PSF.
    Synth(SynthArgs),
    /// Extract an edge line-out from an image.
    Ingest(IngestArgs),
    /// Run a sampler on edge data.
    Run(RunArgs),
    /// Efficiency diagnostics for a stored chain.
    Diag(DiagArgs),
    /// Posterior summaries of the PSF from a stored chain.
    Reconstruct(ReconstructArgs),
    /// Merge several diag outputs into one table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// PSF width σ.
    #[arg(long, default_value_t = 1.0 / 15.0)]
    pub sigma: f64,
    /// Noise standard deviation as a fraction of the signal range.
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
    #[arg(long, default_value_t = 512)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Truth file; defaults to `<out>.truth.csv`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub n: usize,
    /// Row index, or a half-open range `a:b` to average.
    #[arg(long, default_value = "0")]
    pub rows: RowSelect,
    /// `auto` or a pixel column.
    #[arg(long, default_value = "auto")]
    pub center: Center,
    /// Map the outer plateaus to 0 and 1.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgorithmArg {
    Gibbs,
    Mtc,
    Pcgibbs,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Gibbs => Algorithm::Gibbs,
            AlgorithmArg::Mtc => Algorithm::Mtc,
            AlgorithmArg::Pcgibbs => Algorithm::PcGibbs,
        }
    }
}

#[derive(Debug, Args)]
pub struct HyperArgs {
    #[arg(long, default_value_t = 1.0)]
    pub alpha_lambda: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub beta_lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha_delta: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub beta_delta: f64,
}

impl HyperArgs {
    fn params(&self) -> HyperParams {
        HyperParams {
            alpha_lambda: self.alpha_lambda,
            beta_lambda: self.beta_lambda,
            alpha_delta: self.alpha_delta,
            beta_delta: self.beta_delta,
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub algorithm: AlgorithmArg,
    #[arg(long, default_value_t = 10_000)]
    pub iters: usize,
    #[arg(long)]
    pub seed: u64,
    /// Seed of the profile-noise stream; defaults to `--seed`.
    #[arg(long)]
    pub profile_seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub n_mh: usize,
    /// Burn-in fraction of the tuning chain.
    #[arg(long, default_value_t = 0.5)]
    pub burn: f64,
    /// `auto`, `c11,c12,c22` for mtc, or a variance for pcgibbs.
    #[arg(long, default_value = "auto")]
    pub proposal: String,
    /// Gibbs chain used to tune an `auto` proposal.
    #[arg(long)]
    pub tune_from: Option<PathBuf>,
    /// Expected grid size; checked against the data.
    #[arg(long)]
    pub n: Option<usize>,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagArgs {
    #[arg(long)]
    pub chain: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub burn: f64,
    /// Profile coefficients to summarize (1-based).
    #[arg(long = "component", default_values_t = vec![1])]
    pub components: Vec<usize>,
    /// Output prefix for `.csv`, `.components.csv` and `.txt`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub chain: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub burn: f64,
    /// Side length of the 2D PSF image (odd); defaults to N rounded up to odd.
    #[arg(long)]
    pub width: Option<usize>,
    /// Output prefix for `.bands.csv`, `.psf2d.csv` and `.discrepancy.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Table rows written by `diag` (`<prefix>.csv`).
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    /// Output prefix for `.csv` and `.txt`.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Ingest(a) => cmd_ingest(&a),
        Command::Run(a) => cmd_run(&a).map(|_| ()),
        Command::Diag(a) => cmd_diag(&a).map(|_| ()),
        Command::Reconstruct(a) => cmd_reconstruct(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

pub fn default_truth_path(out: &Path) -> PathBuf {
    match out.to_str().and_then(|s| s.strip_suffix(".csv")) {
        Some(stem) => PathBuf::from(format!("{stem}.truth.csv")),
        None => with_suffix(out, ".truth.csv"),
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    if !(a.noise > 0.0) || !a.noise.is_finite() {
        return Err(CliError::Usage(format!("--noise must be positive, got {}", a.noise)));
    }
    if !(a.sigma > 0.0) || !a.sigma.is_finite() {
        return Err(CliError::Usage(format!("--sigma must be positive, got {}", a.sigma)));
    }
    if a.n < 3 {
        return Err(CliError::Usage(format!("--n must be at least 3, got {}", a.n)));
    }
    let edge = EdgeGrid::new(a.n)?;
    let radial = RadialGrid::new(a.n)?;
    let clean = synth_edge(a.sigma, &edge)?;
    let (data, lambda_true) = add_noise(&edge, clean.view(), a.noise, a.seed)?;
    let data = data.with_meta(Provenance {
        source: Some("synthetic".into()),
        rows: None,
        normalized: false,
    });
    let extra = [
        kv("sigma", fmt_f64(a.sigma)),
        kv("noise", fmt_f64(a.noise)),
        kv("seed", a.seed),
    ];
    formats::write_edge_data(&a.out, &data, &extra)?;
    let truth = Truth {
        lambda_true,
        sigma: a.sigma,
        profile: synth_profile(a.sigma, &radial)?,
    };
    let tpath = a.truth.clone().unwrap_or_else(|| default_truth_path(&a.out));
    formats::write_truth(&tpath, &truth)
}

pub fn cmd_ingest(a: &IngestArgs) -> Result<()> {
    if a.n < 3 {
        return Err(CliError::Usage(format!("--n must be at least 3, got {}", a.n)));
    }
    let img = load_image(&a.image)?;
    let line = line_out(&img, a.rows)?;
    let (b, fit) = extract_edge(&line, a.n, a.center, a.normalize)?;
    let data = EdgeData::new(EdgeGrid::new(a.n)?, b)?.with_meta(Provenance {
        source: Some(a.image.display().to_string()),
        rows: Some(a.rows.describe()),
        normalized: a.normalize,
    });
    let mut extra = vec![kv("center", fmt_f64(fit.center)), kv("mirrored", fit.mirrored)];
    if let Some((lo, hi)) = fit.plateaus {
        extra.push(kv("plateau_low", fmt_f64(lo)));
        extra.push(kv("plateau_high", fmt_f64(hi)));
    }
    formats::write_edge_data(&a.out, &data, &extra)
}

fn parse_numbers(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad number '{t}' in --proposal")))
        })
        .collect()
}

fn resolve_proposal(a: &RunArgs) -> Result<Option<ProposalConfig>> {
    let algorithm: Algorithm = a.algorithm.into();
    if algorithm == Algorithm::Gibbs {
        return Ok(None);
    }
    let usage = |e: edgepsf::Error| CliError::Usage(e.to_string());
    if a.proposal == "auto" {
        let path = a
            .tune_from
            .as_ref()
            .ok_or_else(|| CliError::Usage("--proposal auto needs --tune-from <gibbs chain>".into()))?;
        let (rec, _) = formats::read_chain(path)?;
        if rec.algorithm != Algorithm::Gibbs {
            return Err(CliError::Usage(format!(
                "{} is a {} chain; tuning needs a gibbs chain",
                path.display(),
                rec.algorithm
            )));
        }
        let (two_d, one_d) = tune_proposals(&rec, a.burn)?;
        let cfg = if algorithm == Algorithm::Mtc { two_d } else { one_d };
        return Ok(Some(cfg.with_n_mh(a.n_mh)));
    }
    let nums = parse_numbers(&a.proposal)?;
    let cfg = match (algorithm, &nums[..]) {
        (Algorithm::Mtc, [c11, c12, c22]) => ProposalConfig::walk2d(*c11, *c12, *c22, a.n_mh).map_err(usage)?,
        (Algorithm::PcGibbs, [v]) => ProposalConfig::walk1d(*v, a.n_mh).map_err(usage)?,
        _ => {
            return Err(CliError::Usage(format!(
                "--proposal '{}' does not fit {algorithm}",
                a.proposal
            )))
        }
    };
    Ok(Some(cfg))
}

/// Operators and posterior for an edge data set.
pub fn posterior_for(data: &EdgeData, hyper: HyperParams) -> Result<PosteriorModel> {
    let n = data.grid().n();
    let radial = RadialGrid::new(n)?;
    let forward = build_forward(data.grid(), &radial)?;
    let precision = build_precision(&radial)?;
    Ok(PosteriorModel::new(&forward, &precision, data, hyper)?)
}

pub fn cmd_run(a: &RunArgs) -> Result<ChainRecord> {
    if a.iters == 0 {
        return Err(CliError::Usage("--iters must be at least 1".into()));
    }
    if a.n_mh == 0 {
        return Err(CliError::Usage("--n-mh must be at least 1".into()));
    }
    let hyper = a.hyper.params();
    hyper.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let proposal = resolve_proposal(a)?;
    let (data, _) = formats::read_edge_data(&a.data)?;
    if let Some(n) = a.n {
        if n != data.grid().n() {
            return Err(CliError::Usage(format!(
                "--n {n} does not match the data grid (N = {})",
                data.grid().n()
            )));
        }
    }
    let model = posterior_for(&data, hyper)?;
    let init = default_init(&model)?;
    let seeds = ChainSeeds {
        hyper: a.seed,
        profile: a.profile_seed.unwrap_or(a.seed),
    };
    let start = Instant::now();
    let rec = match (a.algorithm, proposal) {
        (AlgorithmArg::Gibbs, _) => run_gibbs(&model, &init, a.iters, seeds)?,
        (AlgorithmArg::Mtc, Some(cfg)) => run_mtc(&model, &init, a.iters, &cfg, seeds)?,
        (AlgorithmArg::Pcgibbs, Some(cfg)) => run_pcgibbs(&model, &init, a.iters, &cfg, seeds)?,
        _ => unreachable!("proposal resolved for every MH sampler"),
    };
    let info = formats::RunInfo {
        data: Some(a.data.display().to_string()),
        wall_time_s: Some(start.elapsed().as_secs_f64()),
    };
    formats::write_chain(&a.out, &rec, &info)?;
    Ok(rec)
}

pub const DIAG_COLUMNS: [&str; 12] = [
    "algorithm",
    "n_mh",
    "lambda_hat",
    "delta_hat",
    "acceptance",
    "delta_chol_per_ess",
    "lambda_chol_per_ess",
    "center_chol_per_ess",
    "iterations",
    "kept",
    "chol_count",
    "burn",
];

/// Table row for one report. Gibbs has no MH step and is listed with
/// acceptance 1 so that rows of different samplers line up.
pub fn diag_row(r: &EfficiencyReport, burn: f64, center: Component) -> Result<Vec<String>> {
    let get = |c: Component| {
        r.get(c)
            .ok_or_else(|| CliError::Data(format!("report lacks component {}", c.label())))
    };
    Ok(vec![
        r.algorithm.to_string(),
        r.n_mh.unwrap_or(0).to_string(),
        fmt_f64(get(Component::Lambda)?.mean),
        fmt_f64(get(Component::Delta)?.mean),
        fmt_f64(r.acceptance.unwrap_or(1.0)),
        fmt_f64(get(Component::Delta)?.chol_per_ess),
        fmt_f64(get(Component::Lambda)?.chol_per_ess),
        fmt_f64(get(center)?.chol_per_ess),
        r.iterations.to_string(),
        r.kept.to_string(),
        r.chol_count.to_string(),
        fmt_f64(burn),
    ])
}

fn human_report(r: &EfficiencyReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "algorithm {}  n_mh {}  iterations {}  kept {}  factorizations {}",
        r.algorithm,
        r.n_mh.map_or("-".to_string(), |v| v.to_string()),
        r.iterations,
        r.kept,
        r.chol_count
    );
    let _ = writeln!(
        s,
        "acceptance {}",
        r.acceptance.map_or("n/a".to_string(), |v| format!("{v:.3}"))
    );
    let _ = writeln!(
        s,
        "{:<10} {:>14} {:>10} {:>10} {:>6} {:>12} {:>9}",
        "component", "mean", "tau_int", "ess", "window", "#chol/ess", "geweke_p"
    );
    for c in &r.components {
        let _ = writeln!(
            s,
            "{:<10} {:>14.6e} {:>10.3} {:>10.1} {:>6} {:>12.3} {:>9}{}",
            c.component.label(),
            c.mean,
            c.ess.tau_int,
            c.ess.ess,
            c.ess.window,
            c.chol_per_ess,
            c.geweke.map_or("-".to_string(), |g| format!("{:.3}", g.p_value)),
            if c.ess.too_short { "  (chain too short for a stable window)" } else { "" }
        );
    }
    s
}

pub fn cmd_diag(a: &DiagArgs) -> Result<EfficiencyReport> {
    if !(0.0..=0.9).contains(&a.burn) {
        return Err(CliError::Usage(format!("--burn must be in [0, 0.9], got {}", a.burn)));
    }
    if a.components.iter().any(|&j| j == 0) {
        return Err(CliError::Usage("--component indices are 1-based".into()));
    }
    let (rec, _) = formats::read_chain(&a.chain)?;
    let profile: Vec<usize> = a.components.iter().map(|j| j - 1).collect();
    let report = efficiency_report(&rec, a.burn, &profile)?;
    let center = Component::Profile(profile[0]);
    let columns: Vec<String> = DIAG_COLUMNS.iter().map(|c| c.to_string()).collect();
    let row = diag_row(&report, a.burn, center)?;
    let meta = [kv("chain", a.chain.display()), kv("center", center.label())];
    formats::write_table(&with_suffix(&a.out, ".csv"), formats::DIAG, &meta, &columns, &[row])?;

    let ccols: Vec<String> = [
        "component",
        "mean",
        "tau_int",
        "tau_raw",
        "ess",
        "window",
        "too_short",
        "chol_per_ess",
        "geweke_z",
        "geweke_p",
    ]
    .iter()
    .map(|c| c.to_string())
    .collect();
    let crows: Vec<Vec<String>> = report
        .components
        .iter()
        .map(|c| {
            vec![
                c.component.label(),
                fmt_f64(c.mean),
                fmt_f64(c.ess.tau_int),
                fmt_f64(c.ess.tau_raw),
                fmt_f64(c.ess.ess),
                c.ess.window.to_string(),
                c.ess.too_short.to_string(),
                fmt_f64(c.chol_per_ess),
                c.geweke.map_or("nan".into(), |g| fmt_f64(g.z)),
                c.geweke.map_or("nan".into(), |g| fmt_f64(g.p_value)),
            ]
        })
        .collect();
    formats::write_table(
        &with_suffix(&a.out, ".components.csv"),
        formats::DIAG_COMPONENTS,
        &meta,
        &ccols,
        &crows,
    )?;
    let txt = with_suffix(&a.out, ".txt");
    formats::write_atomic(&txt, human_report(&report).as_bytes())?;
    Ok(report)
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let k = pos.floor() as usize;
    let f = pos - k as f64;
    if k + 1 < sorted.len() {
        sorted[k] + f * (sorted[k + 1] - sorted[k])
    } else {
        sorted[k]
    }
}

pub const BAND_LEVELS: [(&str, f64); 7] = [
    ("q025", 0.025),
    ("q10", 0.10),
    ("q25", 0.25),
    ("q50", 0.50),
    ("q70", 0.70),
    ("q90", 0.90),
    ("q975", 0.975),
];

pub fn cmd_reconstruct(a: &ReconstructArgs) -> Result<()> {
    if !(0.0..=0.9).contains(&a.burn) {
        return Err(CliError::Usage(format!("--burn must be in [0, 0.9], got {}", a.burn)));
    }
    let (rec, _) = formats::read_chain(&a.chain)?;
    let (data, _) = formats::read_edge_data(&a.data)?;
    let n = data.grid().n();
    if rec.states[0].p.len() != n {
        return Err(CliError::Data(format!(
            "chain has {} profile coefficients, data grid has N = {n}",
            rec.states[0].p.len()
        )));
    }
    let skip = 1 + burn_count(rec.iterations(), a.burn);
    let kept = &rec.states[skip.min(rec.states.len())..];
    if kept.is_empty() {
        return Err(CliError::Data("no samples left after burn-in".into()));
    }
    let radial = RadialGrid::new(n)?;
    let k = kept.len() as f64;
    let mean: Array1<f64> = kept.iter().fold(Array1::zeros(n), |acc, s| acc + &s.p) / k;
    let lambda_hat = kept.iter().map(|s| s.lambda).sum::<f64>() / k;

    let mut columns = vec!["r".to_string(), "mean".to_string()];
    columns.extend(BAND_LEVELS.iter().map(|(name, _)| name.to_string()));
    let mut col = vec![0.0; kept.len()];
    let rows: Vec<Vec<String>> = (0..n)
        .map(|j| {
            for (c, s) in col.iter_mut().zip(kept) {
                *c = s.p[j];
            }
            col.sort_by(|x, y| x.total_cmp(y));
            let mut row = vec![fmt_f64(radial.r()[j]), fmt_f64(mean[j])];
            row.extend(BAND_LEVELS.iter().map(|(_, q)| fmt_f64(quantile(&col, *q))));
            row
        })
        .collect();
    let meta = [
        kv("chain", a.chain.display()),
        kv("kept", kept.len()),
        kv("lambda_hat", fmt_f64(lambda_hat)),
    ];
    formats::write_table(&with_suffix(&a.out, ".bands.csv"), formats::BANDS, &meta, &columns, &rows)?;

    let width = a.width.unwrap_or(n | 1);
    if width % 2 == 0 || width == 0 {
        return Err(CliError::Usage(format!("--width must be odd, got {width}")));
    }
    let profile = RadialProfile::new(radial.clone(), mean.clone())?;
    let img = radial_to_2d(&profile, width)?;
    let pmeta = [kv("width", width), kv("spacing", fmt_f64(radial.h()))];
    formats::write_matrix(&with_suffix(&a.out, ".psf2d.csv"), formats::PSF2D, &pmeta, &img)?;

    let forward = build_forward(data.grid(), &radial)?;
    let gp = forward.apply(mean.view())?;
    let dcols: Vec<String> = ["s", "b", "gp", "residual", "log10_abs_residual"]
        .iter()
        .map(|c| c.to_string())
        .collect();
    let drows: Vec<Vec<String>> = data
        .grid()
        .s()
        .iter()
        .zip(data.values())
        .zip(&gp)
        .map(|((s, b), g)| {
            let r = g - b;
            vec![fmt_f64(*s), fmt_f64(*b), fmt_f64(*g), fmt_f64(r), fmt_f64(r.abs().log10())]
        })
        .collect();
    let dmeta = [
        kv("lambda_hat", fmt_f64(lambda_hat)),
        kv("noise_floor", fmt_f64(1.0 / lambda_hat.sqrt())),
    ];
    formats::write_table(
        &with_suffix(&a.out, ".discrepancy.csv"),
        formats::DISCREPANCY,
        &dmeta,
        &dcols,
        &drows,
    )
}

pub fn cmd_report(a: &ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for p in &a.inputs {
        let (_, columns, body) = formats::read_string_table(p, formats::DIAG)?;
        if columns.iter().map(String::as_str).ne(DIAG_COLUMNS.iter().copied()) {
            return Err(CliError::Data(format!("{}: unexpected diag columns", p.display())));
        }
        rows.extend(body);
    }
    let columns: Vec<String> = DIAG_COLUMNS.iter().map(|c| c.to_string()).collect();
    formats::write_table(&with_suffix(&a.out, ".csv"), formats::REPORT, &[], &columns, &rows)?;

    let num = |s: &str| s.parse::<f64>().unwrap_or(f64::NAN);
    let mut t = String::new();
    let _ = writeln!(
        t,
        "{:<10} {:>5} {:>14} {:>14} {:>9} {:>14} {:>14}",
        "algorithm", "n_mh", "lambda (1e4)", "delta (1e-7)", "acc rate", "delta #chol/ess", "lambda #chol/ess"
    );
    for r in &rows {
        let n_mh = if r[1] == "0" { "-".to_string() } else { r[1].clone() };
        let _ = writeln!(
            t,
            "{:<10} {:>5} {:>14.4} {:>14.4} {:>9.3} {:>14.3} {:>14.3}",
            r[0],
            n_mh,
            num(&r[2]) / 1e4,
            num(&r[3]) / 1e-7,
            num(&r[4]),
            num(&r[5]),
            num(&r[6])
        );
    }
    formats::write_atomic(&with_suffix(&a.out, ".txt"), t.as_bytes())
}
