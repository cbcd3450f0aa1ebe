//! On-disk formats. Every file starts with a `# edgepsf <kind> v<version>`
//! line, followed by `# key=value` metadata lines and, for tables, a CSV
//! body with a header row. Floats are written in shortest round-trip form,
//! so reading a file back reproduces the exact values.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use edgepsf::model::{EdgeData, EdgeGrid, Provenance, RadialGrid, RadialProfile};
use edgepsf::samplers::{Algorithm, ChainRecord, ChainSeeds, ChainState, HyperParams, ProposalConfig};
use ndarray::{Array1, Array2};

use crate::error::{CliError, Result};

pub const EDGE_DATA: &str = "edge-data";
pub const TRUTH: &str = "truth";
pub const CHAIN: &str = "chain";
pub const CHAIN_META: &str = "chain-meta";
pub const DIAG: &str = "diag";
pub const DIAG_COMPONENTS: &str = "diag-components";
pub const REPORT: &str = "report";
pub const BANDS: &str = "bands";
pub const PSF2D: &str = "psf2d";
pub const DISCREPANCY: &str = "discrepancy";

const VERSION: u32 = 1;

pub type Meta = BTreeMap<String, String>;

pub fn header_line(kind: &str) -> String {
    format!("# edgepsf {kind} v{VERSION}")
}

/// Shortest round-trip decimal, switching to exponent form for very small
/// or very large magnitudes.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| CliError::io(&dir, e))?;
    tmp.write_all(contents).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Splits a document into its metadata and body, checking the kind and
/// version on the first line.
pub fn parse_document<'a>(text: &'a str, kind: &str, path: &Path) -> Result<(Meta, &'a str)> {
    let (first, mut rest) = split_line(text);
    if first != header_line(kind) {
        let prefix = format!("# edgepsf {kind} v");
        return Err(CliError::Data(if let Some(v) = first.strip_prefix(&prefix) {
            format!("{}: unsupported {kind} format version {v}", path.display())
        } else {
            format!("{}: not an edgepsf {kind} file", path.display())
        }));
    }
    let mut meta = Meta::new();
    while let Some(stripped) = rest.strip_prefix("# ") {
        let (line, tail) = split_line(stripped);
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Data(format!("{}: malformed metadata line '{line}'", path.display())))?;
        meta.insert(k.to_string(), v.to_string());
        rest = tail;
    }
    Ok((meta, rest))
}

fn split_line(s: &str) -> (&str, &str) {
    match s.find('\n') {
        Some(i) => (s[..i].trim_end_matches('\r'), &s[i + 1..]),
        None => (s.trim_end_matches('\r'), ""),
    }
}

fn render(kind: &str, meta: &[(String, String)], columns: &[String], rows: &[Vec<String>]) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(&header_line(kind));
    out.push('\n');
    for (k, v) in meta {
        out.push_str(&format!("# {k}={v}\n"));
    }
    let mut w = csv::Writer::from_writer(out.into_bytes());
    // Writing into a Vec cannot fail.
    w.write_record(columns).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}

/// A parsed numeric table.
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

fn parse_table(body: &str, path: &Path) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(body.as_bytes());
    let bad = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    let columns: Vec<String> = rdr.headers().map_err(bad)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(bad)?;
        let row = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Data(format!("{}: bad number '{f}'", path.display())))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { columns, rows })
}

fn expect_columns(table: &Table, want: &[&str], path: &Path) -> Result<()> {
    if table.columns.iter().map(String::as_str).eq(want.iter().copied()) {
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "{}: expected columns {want:?}, found {:?}",
            path.display(),
            table.columns
        )))
    }
}

fn meta_get<'a>(meta: &'a Meta, key: &str, path: &Path) -> Result<&'a str> {
    meta.get(key)
        .map(String::as_str)
        .ok_or_else(|| CliError::Data(format!("{}: missing '{key}'", path.display())))
}

fn meta_parse<T: std::str::FromStr>(meta: &Meta, key: &str, path: &Path) -> Result<T> {
    let v = meta_get(meta, key, path)?;
    v.parse()
        .map_err(|_| CliError::Data(format!("{}: bad value '{v}' for '{key}'", path.display())))
}

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

/// Infers `N` from the number of edge samples.
fn grid_from_len(len: usize, path: &Path) -> Result<usize> {
    if len < 7 || len % 2 == 0 {
        return Err(CliError::Data(format!(
            "{}: need an odd number (at least 7) of samples, found {len}",
            path.display()
        )));
    }
    Ok((len - 1) / 2)
}

pub fn write_edge_data(path: &Path, data: &EdgeData, extra: &[(String, String)]) -> Result<()> {
    let mut meta = vec![kv("n", data.grid().n())];
    if let Some(p) = data.meta() {
        if let Some(s) = &p.source {
            meta.push(kv("source", s));
        }
        if let Some(r) = &p.rows {
            meta.push(kv("rows", r));
        }
        meta.push(kv("normalized", p.normalized));
    }
    meta.extend_from_slice(extra);
    let rows: Vec<Vec<String>> = data
        .grid()
        .s()
        .iter()
        .zip(data.values())
        .map(|(s, b)| vec![fmt_f64(*s), fmt_f64(*b)])
        .collect();
    write_atomic(path, &render(EDGE_DATA, &meta, &["s".into(), "b".into()], &rows))
}

pub fn read_edge_data(path: &Path) -> Result<(EdgeData, Meta)> {
    let text = read_text(path)?;
    let (meta, body) = parse_document(&text, EDGE_DATA, path)?;
    let table = parse_table(body, path)?;
    expect_columns(&table, &["s", "b"], path)?;
    let n = grid_from_len(table.rows.len(), path)?;
    let grid = EdgeGrid::new(n)?;
    for (row, s) in table.rows.iter().zip(grid.s()) {
        if (row[0] - s).abs() > 1e-9 {
            return Err(CliError::Data(format!(
                "{}: abscissa {} does not match the grid value {s}",
                path.display(),
                row[0]
            )));
        }
    }
    let b: Array1<f64> = table.rows.iter().map(|r| r[1]).collect();
    let mut data = EdgeData::new(grid, b)?;
    if meta.contains_key("source") || meta.contains_key("normalized") {
        data = data.with_meta(Provenance {
            source: meta.get("source").cloned(),
            rows: meta.get("rows").cloned(),
            normalized: meta.get("normalized").is_some_and(|v| v == "true"),
        });
    }
    Ok((data, meta))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub lambda_true: f64,
    pub sigma: f64,
    pub profile: RadialProfile,
}

pub fn write_truth(path: &Path, truth: &Truth) -> Result<()> {
    let meta = [
        kv("n", truth.profile.grid().n()),
        kv("lambda_true", fmt_f64(truth.lambda_true)),
        kv("sigma", fmt_f64(truth.sigma)),
    ];
    let rows: Vec<Vec<String>> = truth
        .profile
        .grid()
        .r()
        .iter()
        .zip(truth.profile.values())
        .map(|(r, p)| vec![fmt_f64(*r), fmt_f64(*p)])
        .collect();
    write_atomic(path, &render(TRUTH, &meta, &["r".into(), "p_true".into()], &rows))
}

pub fn read_truth(path: &Path) -> Result<Truth> {
    let text = read_text(path)?;
    let (meta, body) = parse_document(&text, TRUTH, path)?;
    let table = parse_table(body, path)?;
    expect_columns(&table, &["r", "p_true"], path)?;
    let grid = RadialGrid::new(table.rows.len())?;
    let profile = RadialProfile::new(grid, table.rows.iter().map(|r| r[1]).collect())?;
    Ok(Truth {
        lambda_true: meta_parse(&meta, "lambda_true", path)?,
        sigma: meta_parse(&meta, "sigma", path)?,
        profile,
    })
}

pub fn meta_path(chain: &Path) -> PathBuf {
    let mut s = chain.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn proposal_to_string(p: Option<&ProposalConfig>) -> String {
    match p {
        None => "none".into(),
        Some(ProposalConfig::Walk2d { cov: [a, b, c], .. }) => {
            format!("walk2d:{},{},{}", fmt_f64(*a), fmt_f64(*b), fmt_f64(*c))
        }
        Some(ProposalConfig::Walk1d { variance, .. }) => format!("walk1d:{}", fmt_f64(*variance)),
    }
}

fn proposal_from_string(s: &str, n_mh: usize) -> std::result::Result<Option<ProposalConfig>, String> {
    if s == "none" {
        return Ok(None);
    }
    let nums = |t: &str| -> std::result::Result<Vec<f64>, String> {
        t.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| format!("bad number '{v}'")))
            .collect()
    };
    let cfg = if let Some(t) = s.strip_prefix("walk2d:") {
        match nums(t)?[..] {
            [a, b, c] => ProposalConfig::walk2d(a, b, c, n_mh),
            _ => return Err(format!("walk2d needs three numbers, got '{t}'")),
        }
    } else if let Some(t) = s.strip_prefix("walk1d:") {
        match nums(t)?[..] {
            [v] => ProposalConfig::walk1d(v, n_mh),
            _ => return Err(format!("walk1d needs one number, got '{t}'")),
        }
    } else {
        return Err(format!("unknown proposal '{s}'"));
    };
    cfg.map(Some).map_err(|e| e.to_string())
}

/// Run context stored next to a chain but not part of the [`ChainRecord`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunInfo {
    pub data: Option<String>,
    pub wall_time_s: Option<f64>,
}

pub fn write_chain(path: &Path, rec: &ChainRecord, info: &RunInfo) -> Result<()> {
    let n = rec.states.first().map_or(0, |s| s.p.len());
    let mut columns = vec!["iter".to_string(), "lambda".into(), "delta".into()];
    columns.extend((1..=n).map(|j| format!("p_{j}")));
    let rows: Vec<Vec<String>> = rec
        .states
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let mut r = Vec::with_capacity(n + 3);
            r.push(k.to_string());
            r.push(fmt_f64(s.lambda));
            r.push(fmt_f64(s.delta));
            r.extend(s.p.iter().map(|v| fmt_f64(*v)));
            r
        })
        .collect();
    let meta = [kv("algorithm", rec.algorithm), kv("n", n)];
    write_atomic(path, &render(CHAIN, &meta, &columns, &rows))?;

    let mut side = vec![
        kv("algorithm", rec.algorithm),
        kv("iterations", rec.iterations()),
        kv("n", n),
        kv("seed_hyper", rec.seeds.hyper),
        kv("seed_profile", rec.seeds.profile),
        kv("n_mh", rec.n_mh().unwrap_or(0)),
        kv("proposal", proposal_to_string(rec.proposal.as_ref())),
        kv("accepted", rec.accepted),
        kv("proposed", rec.proposed),
        kv(
            "acceptance",
            rec.acceptance_rate().map_or("n/a".to_string(), fmt_f64),
        ),
        kv("chol_count", rec.chol_count),
        kv("alpha_lambda", fmt_f64(rec.hyper.alpha_lambda)),
        kv("beta_lambda", fmt_f64(rec.hyper.beta_lambda)),
        kv("alpha_delta", fmt_f64(rec.hyper.alpha_delta)),
        kv("beta_delta", fmt_f64(rec.hyper.beta_delta)),
    ];
    if let Some(d) = &info.data {
        side.push(kv("data", d));
    }
    if let Some(t) = info.wall_time_s {
        side.push(kv("wall_time_s", format!("{t:.3}")));
    }
    let mut text = header_line(CHAIN_META);
    text.push('\n');
    for (k, v) in side {
        text.push_str(&format!("# {k}={v}\n"));
    }
    write_atomic(&meta_path(path), text.as_bytes())
}

pub fn read_chain(path: &Path) -> Result<(ChainRecord, RunInfo)> {
    let mpath = meta_path(path);
    let mtext = read_text(&mpath)?;
    let (meta, _) = parse_document(&mtext, CHAIN_META, &mpath)?;
    let text = read_text(path)?;
    let (_, body) = parse_document(&text, CHAIN, path)?;
    let table = parse_table(body, path)?;
    let n: usize = meta_parse(&meta, "n", &mpath)?;
    let mut want = vec!["iter".to_string(), "lambda".into(), "delta".into()];
    want.extend((1..=n).map(|j| format!("p_{j}")));
    if table.columns != want {
        return Err(CliError::Data(format!("{}: unexpected chain columns", path.display())));
    }
    let iterations: usize = meta_parse(&meta, "iterations", &mpath)?;
    if table.rows.len() != iterations + 1 {
        return Err(CliError::Data(format!(
            "{}: {} rows for {iterations} iterations",
            path.display(),
            table.rows.len()
        )));
    }
    let states = table
        .rows
        .iter()
        .map(|r| ChainState {
            lambda: r[1],
            delta: r[2],
            p: r[3..].iter().copied().collect(),
        })
        .collect();
    let algorithm: Algorithm = meta_get(&meta, "algorithm", &mpath)?.parse()?;
    let n_mh: usize = meta_parse(&meta, "n_mh", &mpath)?;
    let proposal = proposal_from_string(meta_get(&meta, "proposal", &mpath)?, n_mh)
        .map_err(|e| CliError::Data(format!("{}: {e}", mpath.display())))?;
    let rec = ChainRecord {
        algorithm,
        states,
        accepted: meta_parse(&meta, "accepted", &mpath)?,
        proposed: meta_parse(&meta, "proposed", &mpath)?,
        chol_count: meta_parse(&meta, "chol_count", &mpath)?,
        seeds: ChainSeeds {
            hyper: meta_parse(&meta, "seed_hyper", &mpath)?,
            profile: meta_parse(&meta, "seed_profile", &mpath)?,
        },
        hyper: HyperParams {
            alpha_lambda: meta_parse(&meta, "alpha_lambda", &mpath)?,
            beta_lambda: meta_parse(&meta, "beta_lambda", &mpath)?,
            alpha_delta: meta_parse(&meta, "alpha_delta", &mpath)?,
            beta_delta: meta_parse(&meta, "beta_delta", &mpath)?,
        },
        proposal,
    };
    let info = RunInfo {
        data: meta.get("data").cloned(),
        wall_time_s: meta.get("wall_time_s").and_then(|v| v.parse().ok()),
    };
    Ok((rec, info))
}

/// Writes a generic table of preformatted cells.
pub fn write_table(
    path: &Path,
    kind: &str,
    meta: &[(String, String)],
    columns: &[String],
    rows: &[Vec<String>],
) -> Result<()> {
    write_atomic(path, &render(kind, meta, columns, rows))
}

/// Reads a table written by [`write_table`] whose cells are all numeric.
pub fn read_numeric_table(path: &Path, kind: &str) -> Result<(Meta, Table)> {
    let text = read_text(path)?;
    let (meta, body) = parse_document(&text, kind, path)?;
    Ok((meta, parse_table(body, path)?))
}

/// Reads a table whose cells are kept as strings.
pub fn read_string_table(path: &Path, kind: &str) -> Result<(Meta, Vec<String>, Vec<Vec<String>>)> {
    let text = read_text(path)?;
    let (meta, body) = parse_document(&text, kind, path)?;
    let mut rdr = csv::ReaderBuilder::new().from_reader(body.as_bytes());
    let bad = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    let columns = rdr.headers().map_err(bad)?.iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()).map_err(bad))
        .collect::<Result<Vec<Vec<String>>>>()?;
    Ok((meta, columns, rows))
}

pub fn write_matrix(path: &Path, kind: &str, meta: &[(String, String)], m: &Array2<f64>) -> Result<()> {
    let columns: Vec<String> = (0..m.ncols()).map(|j| format!("c{j}")).collect();
    let rows: Vec<Vec<String>> = m
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| fmt_f64(*v)).collect())
        .collect();
    write_table(path, kind, meta, &columns, &rows)
}
