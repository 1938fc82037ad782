//! PSNR, SSIM and per-perspective light-field reports.
//!
//! Conventions: PSNR pools the squared error of all channels; SSIM is the
//! mean of per-channel SSIM, each using an 11x11 Gaussian window
//! (`sigma = 1.5`), `K1 = 0.01`, `K2 = 0.03`, dynamic range 1 and only the
//! window positions that fit inside the image.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lightfield::{Image, LightField};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_same(a: &Image, b: &Image, what: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(what, a.shape(), b.shape()));
    }
    Ok(())
}

pub fn mse(reference: &Image, test: &Image) -> Result<f64> {
    check_same(reference, test, "mse")?;
    let sum: f64 = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / reference.data().len() as f64)
}

/// `10 log10(peak^2 / MSE)` in dB; identical images give `f64::INFINITY`.
pub fn psnr(reference: &Image, test: &Image, peak: f64) -> Result<f64> {
    if peak.is_nan() || peak <= 0.0 {
        return Err(Error::Config(format!("PSNR peak must be positive, got {peak}")));
    }
    let m = mse(reference, test)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - mid;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / sum).collect()
}

/// Valid separable filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut horiz = vec![0.0; h * ow];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = taps.iter().zip(&row[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * horiz[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

fn ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let xx: Vec<f64> = x.iter().map(|a| a * a).collect();
    let yy: Vec<f64> = y.iter().map(|a| a * a).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mx = filter_valid(x, h, w, &taps);
    let my = filter_valid(y, h, w, &taps);
    let exx = filter_valid(&xx, h, w, &taps);
    let eyy = filter_valid(&yy, h, w, &taps);
    let exy = filter_valid(&xy, h, w, &taps);
    let n = mx.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ux, uy) = (mx[i], my[i]);
        let sxx = exx[i] - ux * ux;
        let syy = eyy[i] - uy * uy;
        let sxy = exy[i] - ux * uy;
        total += ((2.0 * (ux * uy) + c1) * (2.0 * sxy + c2))
            / ((ux * ux + uy * uy + c1) * (sxx + syy + c2));
    }
    total / n as f64
}

/// Mean SSIM; multi-channel images average their per-channel values.
pub fn ssim(reference: &Image, test: &Image) -> Result<f64> {
    check_same(reference, test, "ssim")?;
    let (c, h, w) = reference.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(
            "ssim image",
            format!("at least {SSIM_WINDOW}x{SSIM_WINDOW}"),
            (h, w),
        ));
    }
    let sum: f64 = (0..c)
        .map(|ch| ssim_plane(reference.plane(ch), test.plane(ch), h, w))
        .sum();
    Ok(sum / c as f64)
}

/// Serializes `+inf` as the string `"inf"` so reports stay valid JSON.
mod inf_as_string {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("expected number or \"inf\", got {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerspectiveScore {
    pub u: usize,
    pub v: usize,
    #[serde(with = "inf_as_string")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    #[serde(with = "inf_as_string")]
    pub min: f64,
    #[serde(with = "inf_as_string")]
    pub avg: f64,
    #[serde(with = "inf_as_string")]
    pub max: f64,
}

impl Stats {
    /// Panics on an empty slice.
    pub fn of(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "statistics of an empty set");
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let avg = values.iter().sum::<f64>() / values.len() as f64;
        // rounding can push the mean of equal values just outside [min, max]
        Self {
            min,
            avg: avg.clamp(min, max),
            max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub psnr: Stats,
    pub ssim: Stats,
}

/// How a summary was formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Over the perspectives of one light field.
    Perspectives,
    /// Every perspective of every light field in one pool.
    Pooled,
    /// Each light field reduced to its perspective average first; the
    /// summary is then taken over light fields.
    PerImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub aggregation: Aggregation,
    pub per_perspective: Vec<PerspectiveScore>,
    pub summary: Summary,
}

impl EvalReport {
    fn from_scores(method: &str, aggregation: Aggregation, scores: Vec<PerspectiveScore>, summary: Summary) -> Self {
        Self {
            method: method.to_string(),
            aggregation,
            per_perspective: scores,
            summary,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let agg = match self.aggregation {
            Aggregation::Perspectives => "perspectives",
            Aggregation::Pooled => "pooled",
            Aggregation::PerImage => "per-image",
        };
        let _ = writeln!(out, "method: {}  (aggregation: {agg})", self.method);
        let _ = writeln!(out, "{:>4} {:>4} {:>10} {:>8}", "u", "v", "PSNR dB", "SSIM");
        for p in &self.per_perspective {
            let _ = writeln!(out, "{:>4} {:>4} {:>10.4} {:>8.4}", p.u, p.v, p.psnr, p.ssim);
        }
        let _ = writeln!(out, "{:>9} {:>10} {:>8}", "", "PSNR dB", "SSIM");
        for (name, pick) in [("min", 0), ("avg", 1), ("max", 2)] {
            let get = |s: &Stats| [s.min, s.avg, s.max][pick];
            let _ = writeln!(
                out,
                "{name:>9} {:>10.4} {:>8.4}",
                get(&self.summary.psnr),
                get(&self.summary.ssim)
            );
        }
        out
    }
}

fn summarize(psnr: &[f64], ssim: &[f64]) -> Summary {
    Summary {
        psnr: Stats::of(psnr),
        ssim: Stats::of(ssim),
    }
}

/// Scores every included perspective of `test` against `reference`
/// (all perspectives when `included` is `None`) at peak 1.
pub fn evaluate_lf(
    reference: &LightField,
    test: &LightField,
    included: Option<&[(usize, usize)]>,
    method: &str,
) -> Result<EvalReport> {
    if reference.shape() != test.shape() {
        return Err(Error::shape("evaluated light field", reference.shape(), test.shape()));
    }
    let a = reference.angular();
    let views: Vec<(usize, usize)> = match included {
        Some([]) => {
            return Err(Error::Config("empty perspective inclusion set".into()));
        }
        Some(v) => {
            let mut v = v.to_vec();
            v.sort_unstable();
            v.dedup();
            v
        }
        None => (0..a * a).map(|i| (i / a, i % a)).collect(),
    };
    let scores = views
        .par_iter()
        .map(|&(u, v)| {
            let r = reference.extract_perspective(u, v)?.image;
            let t = test.extract_perspective(u, v)?.image;
            Ok(PerspectiveScore {
                u,
                v,
                psnr: psnr(&r, &t, 1.0)?,
                ssim: ssim(&r, &t)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let p: Vec<f64> = scores.iter().map(|s| s.psnr).collect();
    let s: Vec<f64> = scores.iter().map(|s| s.ssim).collect();
    let summary = summarize(&p, &s);
    Ok(EvalReport::from_scores(method, Aggregation::Perspectives, scores, summary))
}

/// Combines per-field reports. `per_perspective` holds every entry of every
/// report in order.
pub fn aggregate(reports: &[EvalReport], mode: Aggregation, method: &str) -> Result<EvalReport> {
    if reports.is_empty() {
        return Err(Error::Config("no reports to aggregate".into()));
    }
    let scores: Vec<PerspectiveScore> = reports.iter().flat_map(|r| r.per_perspective.clone()).collect();
    let (p, s): (Vec<f64>, Vec<f64>) = match mode {
        Aggregation::Pooled | Aggregation::Perspectives => {
            scores.iter().map(|x| (x.psnr, x.ssim)).unzip()
        }
        Aggregation::PerImage => reports
            .iter()
            .map(|r| (r.summary.psnr.avg, r.summary.ssim.avg))
            .unzip(),
    };
    let summary = summarize(&p, &s);
    Ok(EvalReport::from_scores(method, mode, scores, summary))
}
