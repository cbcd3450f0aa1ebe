//! Edge line-outs from images.
//!
//! Images are either portable graymaps (8 or 16 bit, plain or raw) or plain
//! text matrices with one image row per line, entries separated by commas
//! or whitespace and `#` starting a comment line.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{CliError, Result};

/// Rows averaged into the line-out; `Range` is half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSelect {
    Single(usize),
    Range(usize, usize),
}

impl RowSelect {
    pub fn describe(&self) -> String {
        match self {
            RowSelect::Single(r) => r.to_string(),
            RowSelect::Range(a, b) => format!("{a}:{b}"),
        }
    }
}

impl std::str::FromStr for RowSelect {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad row '{t}'"));
        match s.split_once(':') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a >= b {
                    Err(format!("empty row range {a}:{b}"))
                } else {
                    Ok(RowSelect::Range(a, b))
                }
            }
            None => Ok(RowSelect::Single(num(s)?)),
        }
    }
}

/// Edge location in pixel columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Center {
    /// Midpoint of the steepest finite difference.
    Auto,
    /// Explicit column, in original (unmirrored) pixel coordinates.
    Column(f64),
}

impl std::str::FromStr for Center {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(Center::Auto);
        }
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite() && *v >= 0.0)
            .map(Center::Column)
            .ok_or_else(|| format!("center must be 'auto' or a column index, got '{s}'"))
    }
}

fn is_pnm(path: &Path, bytes: &[u8]) -> bool {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    matches!(ext.as_deref(), Some("pgm" | "pnm" | "ppm" | "pbm"))
        || (bytes.len() > 2 && bytes[0] == b'P' && (b'1'..=b'6').contains(&bytes[1]) && bytes[2].is_ascii_whitespace())
}

/// Loads an image as a matrix of intensities (rows × columns).
pub fn load_image(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if is_pnm(path, &bytes) {
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Pnm)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let luma = img.into_luma16();
        let depth_8 = luma.iter().all(|v| v % 257 == 0);
        // 8-bit graymaps are widened by ×257; undo that so values keep
        // their original scale.
        let scale = if depth_8 { 1.0 / 257.0 } else { 1.0 };
        return Ok(Array2::from_shape_fn((h, w), |(r, c)| {
            luma.get_pixel(c as u32, r as u32)[0] as f64 * scale
        }));
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::Data(format!("{}: neither a graymap nor a text matrix", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| CliError::Data(format!("{}:{}: bad number '{t}'", path.display(), i + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let w = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || w == 0 || rows.iter().any(|r| r.len() != w) {
        return Err(CliError::Data(format!("{}: ragged or empty matrix", path.display())));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((flat.len() / w, w), flat).expect("shape checked"))
}

/// Average of the selected rows.
pub fn line_out(img: &Array2<f64>, rows: RowSelect) -> Result<Vec<f64>> {
    let (a, b) = match rows {
        RowSelect::Single(r) => (r, r + 1),
        RowSelect::Range(a, b) => (a, b),
    };
    if b > img.nrows() {
        return Err(CliError::Data(format!(
            "row selection {} exceeds the image height {}",
            rows.describe(),
            img.nrows()
        )));
    }
    let n = (b - a) as f64;
    Ok((0..img.ncols())
        .map(|c| (a..b).map(|r| img[[r, c]]).sum::<f64>() / n)
        .collect())
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// How a line-out was mapped onto the edge grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFit {
    /// Edge position in (possibly mirrored) pixel coordinates.
    pub center: f64,
    /// True when the line was reversed to make the edge rise.
    pub mirrored: bool,
    /// Low and high plateau levels used for normalization.
    pub plateaus: Option<(f64, f64)>,
}

/// Recentres a line-out on its edge and resamples it onto the `2N + 1`
/// points `s_i = i/N`, one pixel per grid step. Samples beyond the ends of
/// the line take the nearest end value.
pub fn extract_edge(line: &[f64], n: usize, center: Center, normalize: bool) -> Result<(Array1<f64>, EdgeFit)> {
    let w = line.len();
    if w < 2 * n + 1 {
        return Err(CliError::Data(format!(
            "line-out has {w} columns, need at least {} for N = {n}",
            2 * n + 1
        )));
    }
    if line.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Data("line-out contains non-finite values".into()));
    }
    let diffs: Vec<f64> = line.windows(2).map(|p| p[1] - p[0]).collect();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (peak, peak_abs) = abs
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |best, (i, v)| if v > best.1 { (i, v) } else { best });
    if !(peak_abs > 0.0) || peak_abs < 5.0 * median(&abs) {
        return Err(CliError::Data("no detectable edge in the line-out".into()));
    }
    let mirrored = diffs[peak] < 0.0;
    let x: Vec<f64> = if mirrored {
        line.iter().rev().copied().collect()
    } else {
        line.to_vec()
    };
    let c = match center {
        Center::Auto => {
            let p = if mirrored { w - 2 - peak } else { peak };
            p as f64 + 0.5
        }
        Center::Column(col) => {
            if col > (w - 1) as f64 {
                return Err(CliError::Data(format!("center column {col} outside the line-out")));
            }
            if mirrored {
                (w - 1) as f64 - col
            } else {
                col
            }
        }
    };
    let sample = |u: f64| {
        if u <= 0.0 {
            x[0]
        } else if u >= (w - 1) as f64 {
            x[w - 1]
        } else {
            let k = u.floor() as usize;
            let f = u - k as f64;
            (1.0 - f) * x[k] + f * x[(k + 1).min(w - 1)]
        }
    };
    let mut b: Array1<f64> = (-(n as i64)..=n as i64).map(|i| sample(c + i as f64)).collect();
    let plateaus = if normalize {
        let k = (w / 10).max(1);
        let lo = median(&x[..k]);
        let hi = median(&x[w - k..]);
        if !(hi > lo) {
            return Err(CliError::Data(format!(
                "plateaus do not bracket an edge (low {lo}, high {hi})"
            )));
        }
        b.mapv_inplace(|v| (v - lo) / (hi - lo));
        Some((lo, hi))
    } else {
        None
    };
    Ok((
        b,
        EdgeFit {
            center: c,
            mirrored,
            plateaus,
        },
    ))
}
