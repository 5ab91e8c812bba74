//! CSV and SVG emission, sample-set serialization.
//!
//! Floats are written with `{:.16e}` (17 significant digits), which parses
//! back to the same bits.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use thiserror::Error;

use crate::lab::{SampleMeta, SampleSet};
use crate::regimes::{MapCell, RegimeKind, RegimeLabel};
use crate::simulator::ReplicaResult;

pub const SAMPLES_SCHEMA: &str = "brwlab-samples/1";
pub const REGIME_MAP_SCHEMA: &str = "brwlab-regime-map/1";
pub const SNAIL_SCHEMA: &str = "brwlab-snail/1";
pub const REPLICAS_SCHEMA: &str = "brwlab-replicas/1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn parse_err(line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse { line, message: message.into() }
}

/// Float in the fixed 17-significant-digit form.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `contents`, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<(), IoError> {
    let wrap = |source| IoError::Io { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(wrap)?;
    }
    std::fs::write(path, contents).map_err(wrap)
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::Io { path: path.to_path_buf(), source })
}

const META_KEYS: [&str; 11] = [
    "source",
    "law_id",
    "lambda_re",
    "lambda_im",
    "n",
    "extra_m",
    "replicas",
    "regime",
    "seed",
    "extinct_count",
    "rejected",
];

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

pub fn samples_to_csv(set: &SampleSet) -> String {
    let m = &set.meta;
    let mut out = String::new();
    let _ = writeln!(out, "# schema: {SAMPLES_SCHEMA}");
    let values = [
        one_line(&m.source),
        one_line(&m.law_id),
        fmt_float(m.lambda.re),
        fmt_float(m.lambda.im),
        m.n.to_string(),
        m.extra_m.to_string(),
        m.replicas.to_string(),
        one_line(&m.regime),
        m.seed.to_string(),
        m.extinct_count.to_string(),
        m.rejected.to_string(),
    ];
    for (k, v) in META_KEYS.iter().zip(values) {
        let _ = writeln!(out, "# {k}: {v}");
    }
    out.push_str("re,im\n");
    for z in &set.samples {
        let _ = writeln!(out, "{},{}", fmt_float(z.re), fmt_float(z.im));
    }
    out
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, IoError>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| parse_err(line, format!("{key}: {e}")))
}

/// Parses the `# key: value` header lines; returns the metadata and the number
/// of lines consumed.
pub fn parse_sample_meta(text: &str) -> Result<(SampleMeta, usize), IoError> {
    let mut lines = text.split('\n');
    match lines.next() {
        Some(first) if first.strip_suffix('\r').unwrap_or(first) == format!("# schema: {SAMPLES_SCHEMA}") => {}
        Some(_) => return Err(parse_err(1, format!("expected schema line '# schema: {SAMPLES_SCHEMA}'"))),
        None => return Err(parse_err(1, "empty input")),
    }
    let mut values: [Option<String>; 11] = Default::default();
    let mut consumed = 1;
    for raw in lines {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let Some(body) = line.strip_prefix("# ") else { break };
        consumed += 1;
        let (key, value) = body.split_once(": ").ok_or_else(|| parse_err(consumed, "expected '# key: value'"))?;
        let idx = META_KEYS
            .iter()
            .position(|k| *k == key)
            .ok_or_else(|| parse_err(consumed, format!("unknown metadata key '{key}'")))?;
        if values[idx].replace(value.to_string()).is_some() {
            return Err(parse_err(consumed, format!("duplicate metadata key '{key}'")));
        }
    }
    let get = |i: usize| -> Result<&str, IoError> {
        values[i].as_deref().ok_or_else(|| parse_err(consumed, format!("missing metadata key '{}'", META_KEYS[i])))
    };
    let meta = SampleMeta {
        source: get(0)?.to_string(),
        law_id: get(1)?.to_string(),
        lambda: Complex64::new(parse_num(consumed, "lambda_re", get(2)?)?, parse_num(consumed, "lambda_im", get(3)?)?),
        n: parse_num(consumed, "n", get(4)?)?,
        extra_m: parse_num(consumed, "extra_m", get(5)?)?,
        replicas: parse_num(consumed, "replicas", get(6)?)?,
        regime: get(7)?.to_string(),
        seed: parse_num(consumed, "seed", get(8)?)?,
        extinct_count: parse_num(consumed, "extinct_count", get(9)?)?,
        rejected: parse_num(consumed, "rejected", get(10)?)?,
    };
    Ok((meta, consumed))
}

/// Inverse of [`samples_to_csv`]. Never panics; malformed input is an error
/// with a line number.
pub fn samples_from_csv(text: &str) -> Result<SampleSet, IoError> {
    let (meta, consumed) = parse_sample_meta(text)?;
    let body_start: usize = text.split_inclusive('\n').take(consumed).map(str::len).sum();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(&text.as_bytes()[body_start..]);
    let header_line = consumed + 1;
    let headers = reader.headers().map_err(|e| parse_err(header_line, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["re", "im"] {
        return Err(parse_err(header_line, "expected header 're,im'"));
    }
    let mut samples = Vec::with_capacity(meta.replicas.min(1 << 20));
    for (i, record) in reader.records().enumerate() {
        let line = header_line + 1 + i;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.len() != 2 {
            return Err(parse_err(line, format!("expected 2 fields, found {}", record.len())));
        }
        let re: f64 = parse_num(line, "re", &record[0])?;
        let im: f64 = parse_num(line, "im", &record[1])?;
        samples.push(Complex64::new(re, im));
    }
    if samples.len() != meta.replicas {
        return Err(parse_err(header_line, format!("metadata says {} replicas, found {} rows", meta.replicas, samples.len())));
    }
    Ok(SampleSet { samples, meta })
}

pub fn write_samples(path: &Path, set: &SampleSet) -> Result<(), IoError> {
    write_text(path, &samples_to_csv(set))
}

pub fn read_samples(path: &Path) -> Result<SampleSet, IoError> {
    samples_from_csv(&read_text(path)?)
}

fn label_columns(label: &RegimeLabel) -> (String, String, String, &'static str) {
    let nan = || fmt_float(f64::NAN);
    match *label {
        RegimeLabel::StableBoundary { alpha, w, .. } => (fmt_float(alpha), fmt_float(w.re), fmt_float(w.im), ""),
        RegimeLabel::OutOfTheory { reason } => (nan(), nan(), nan(), reason.as_str()),
        _ => (nan(), nan(), nan(), ""),
    }
}

/// One row per grid cell: `theta,eta,regime,alpha,w_re,w_im,reason`.
pub fn regime_map_csv(cells: &[MapCell]) -> String {
    let mut out = format!("# schema: {REGIME_MAP_SCHEMA}\ntheta,eta,regime,alpha,w_re,w_im,reason\n");
    for c in cells {
        let (alpha, w_re, w_im, reason) = label_columns(&c.label);
        let _ = writeln!(
            out,
            "{},{},{},{alpha},{w_re},{w_im},{reason}",
            fmt_float(c.theta),
            fmt_float(c.eta),
            c.label.kind().as_str()
        );
    }
    out
}

pub fn regime_color(kind: RegimeKind) -> &'static str {
    match kind {
        RegimeKind::GaussianInterior => "#4c72b0",
        RegimeKind::GaussianBoundary => "#8172b3",
        RegimeKind::Extremal => "#55a868",
        RegimeKind::StableBoundary => "#c44e52",
        RegimeKind::OutOfTheory => "#d9d9d9",
    }
}

const SVG_W: f64 = 760.0;
const SVG_H: f64 = 520.0;
const PLOT: (f64, f64, f64, f64) = (60.0, 20.0, 500.0, 460.0);

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo.is_finite() && hi > lo {
        (lo, hi)
    } else if lo.is_finite() {
        (lo - 0.5, lo + 0.5)
    } else {
        (0.0, 1.0)
    }
}

fn distinct_sorted(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn svg_frame(out: &mut String, x_label: &str, y_label: &str, xr: (f64, f64), yr: (f64, f64)) {
    let (x0, y0, w, h) = PLOT;
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {SVG_W} {SVG_H}\" width=\"{SVG_W}\" height=\"{SVG_H}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(out, "<rect x=\"0\" y=\"0\" width=\"{SVG_W}\" height=\"{SVG_H}\" fill=\"white\"/>");
    let _ = writeln!(out, "<rect x=\"{x0}\" y=\"{y0}\" width=\"{w}\" height=\"{h}\" fill=\"none\" stroke=\"black\"/>");
    let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{x_label}</text>", x0 + w / 2.0, y0 + h + 34.0);
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{y_label}</text>",
        y0 + h / 2.0,
        y0 + h / 2.0
    );
    let _ = writeln!(out, "<text x=\"{x0}\" y=\"{:.1}\" text-anchor=\"start\">{:.3}</text>", y0 + h + 16.0, xr.0);
    let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.3}</text>", x0 + w, y0 + h + 16.0, xr.1);
    let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.3}</text>", x0 - 4.0, y0 + h, yr.0);
    let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.3}</text>", x0 - 4.0, y0 + 10.0, yr.1);
}

/// Grid cells as colored rectangles with a legend of all regime kinds.
pub fn regime_map_svg(cells: &[MapCell]) -> String {
    let thetas = distinct_sorted(cells.iter().map(|c| c.theta));
    let etas = distinct_sorted(cells.iter().map(|c| c.eta));
    let xr = bounds(thetas.iter().copied());
    let yr = bounds(etas.iter().copied());
    let (x0, y0, w, h) = PLOT;
    let cw = w / thetas.len().max(1) as f64;
    let ch = h / etas.len().max(1) as f64;
    let mut out = String::new();
    svg_frame(&mut out, "Re lambda", "Im lambda", xr, yr);
    out.push_str("<g shape-rendering=\"crispEdges\">\n");
    for c in cells {
        let i = thetas.partition_point(|&t| t < c.theta);
        let j = etas.partition_point(|&e| e < c.eta);
        let x = x0 + i as f64 * cw;
        let y = y0 + h - (j + 1) as f64 * ch;
        let _ = writeln!(
            out,
            "<rect x=\"{x:.3}\" y=\"{y:.3}\" width=\"{cw:.3}\" height=\"{ch:.3}\" fill=\"{}\"/>",
            regime_color(c.label.kind())
        );
    }
    out.push_str("</g>\n");
    let lx = x0 + w + 20.0;
    for (k, kind) in RegimeKind::ALL.iter().enumerate() {
        let ly = y0 + 10.0 + 22.0 * k as f64;
        let _ = writeln!(
            out,
            "<rect x=\"{lx}\" y=\"{ly}\" width=\"14\" height=\"14\" fill=\"{}\" stroke=\"black\"/>",
            regime_color(*kind)
        );
        let _ = writeln!(out, "<text x=\"{}\" y=\"{}\">{}</text>", lx + 20.0, ly + 11.0, kind.as_str());
    }
    out.push_str("</svg>\n");
    out
}

/// `curve,index,re,im` for each point of each polyline.
pub fn snail_csv(curves: &[Vec<Complex64>]) -> String {
    let mut out = format!("# schema: {SNAIL_SCHEMA}\ncurve,index,re,im\n");
    for (c, curve) in curves.iter().enumerate() {
        for (i, z) in curve.iter().enumerate() {
            let _ = writeln!(out, "{c},{i},{},{}", fmt_float(z.re), fmt_float(z.im));
        }
    }
    out
}

/// One `<polyline>` per curve, on a square window around the origin.
pub fn snail_svg(curves: &[Vec<Complex64>]) -> String {
    let r = curves.iter().flatten().map(|z| z.re.abs().max(z.im.abs())).filter(|v| v.is_finite()).fold(0.0, f64::max);
    let r = if r > 0.0 { r * 1.05 } else { 1.0 };
    let (x0, y0, w, h) = PLOT;
    let mut out = String::new();
    svg_frame(&mut out, "Re", "Im", (-r, r), (-r, r));
    for curve in curves {
        let pts: Vec<String> = curve
            .iter()
            .filter(|z| z.re.is_finite() && z.im.is_finite())
            .map(|z| format!("{:.3},{:.3}", x0 + (z.re + r) / (2.0 * r) * w, y0 + h - (z.im + r) / (2.0 * r) * h))
            .collect();
        let _ = writeln!(out, "<polyline fill=\"none\" stroke=\"#c44e52\" stroke-width=\"1\" points=\"{}\"/>", pts.join(" "));
    }
    out.push_str("</svg>\n");
    out
}

/// Per replica and depth: `replica,depth,re_Z,im_Z,W,dW,minV,supw,pop` for
/// parameter `param`. Boundary columns are `NaN` when not recorded.
pub fn replicas_csv(reps: &[ReplicaResult], param: usize) -> String {
    let mut out = format!("# schema: {REPLICAS_SCHEMA}\nreplica,depth,re_Z,im_Z,W,dW,minV,supw,pop\n");
    for r in reps {
        for d in 0..=r.total_depth() {
            let z = r.z.get(param).map_or(Complex64::new(f64::NAN, f64::NAN), |zs| zs[d]);
            let col = |v: &[f64]| fmt_float(v.get(d).copied().unwrap_or(f64::NAN));
            let _ = writeln!(
                out,
                "{},{d},{},{},{},{},{},{},{}",
                r.replica,
                fmt_float(z.re),
                fmt_float(z.im),
                col(&r.w),
                col(&r.dw),
                col(&r.min_v),
                col(&r.sup_weight),
                r.population[d]
            );
        }
    }
    out
}
