//! Full-reference image quality measures and evaluation reports.
//!
//! Every measure takes (3, H, W) arrays in byte range [0, 255]. Grayscale
//! conversion uses the BT.601 luma weights.

mod classifier;

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::Generator;
use crate::types::{DomainLabel, ImageTensor, RangeTag};

pub use classifier::{colour_features, DomainClassifier, FitOptions};

/// Value reported for PSNR of identical images.
pub const PSNR_CAP: f64 = 100.0;
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const DYNAMIC_RANGE: f64 = 255.0;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

pub const HAARPSI_C: f64 = 30.0;
pub const HAARPSI_ALPHA: f64 = 4.2;
const HAARPSI_SCALES: usize = 3;

fn same_shape(a: &ArrayView3<'_, f64>, b: &ArrayView3<'_, f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(a.shape(), b.shape()));
    }
    Ok(())
}

/// BT.601 luma of a (3, H, W) image; single-channel input passes through.
pub fn luma(a: &ArrayView3<'_, f64>) -> Array2<f64> {
    if a.dim().0 == 1 {
        return a.index_axis(Axis(0), 0).to_owned();
    }
    let mut out = Array2::zeros((a.dim().1, a.dim().2));
    for (c, w) in LUMA.iter().enumerate() {
        out.scaled_add(*w, &a.index_axis(Axis(0), c));
    }
    out
}

/// Peak signal-to-noise ratio in dB with the MSE pooled over every
/// channel and pixel. Identical images give `+inf`.
pub fn psnr(a: ArrayView3<'_, f64>, b: ArrayView3<'_, f64>) -> Result<f64> {
    same_shape(&a, &b)?;
    let mse = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (DYNAMIC_RANGE * DYNAMIC_RANGE / mse).log10()
    })
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable correlation keeping only fully covered positions.
fn filter_valid(x: &ArrayView2<'_, f64>, taps: &[f64]) -> Array2<f64> {
    let k = taps.len();
    let (h, w) = x.dim();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = Array2::zeros((h, ow));
    for i in 0..h {
        for j in 0..ow {
            rows[[i, j]] = (0..k).map(|t| taps[t] * x[[i, j + t]]).sum::<f64>();
        }
    }
    let mut out = Array2::zeros((oh, ow));
    for i in 0..oh {
        for j in 0..ow {
            out[[i, j]] = (0..k).map(|t| taps[t] * rows[[i + t, j]]).sum::<f64>();
        }
    }
    out
}

/// Mean luminance-similarity and contrast-structure terms of two
/// grayscale images.
struct SsimTerms {
    ssim: f64,
    cs: f64,
}

fn ssim_terms(x: &ArrayView2<'_, f64>, y: &ArrayView2<'_, f64>) -> Result<SsimTerms> {
    let (h, w) = x.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Input(format!(
            "{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let f = |a: &Array2<f64>| filter_valid(&a.view(), &taps);
    let (xo, yo) = (x.to_owned(), y.to_owned());
    let mx = f(&xo);
    let my = f(&yo);
    let sxx = f(&(&xo * &xo)) - &mx * &mx;
    let syy = f(&(&yo * &yo)) - &my * &my;
    let sxy = f(&(&xo * &yo)) - &mx * &my;
    let c1 = (SSIM_K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (SSIM_K2 * DYNAMIC_RANGE).powi(2);
    let n = mx.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mx.len() {
        let (mx, my) = (mx.as_slice().unwrap()[i], my.as_slice().unwrap()[i]);
        let (sxx, syy, sxy) = (
            sxx.as_slice().unwrap()[i],
            syy.as_slice().unwrap()[i],
            sxy.as_slice().unwrap()[i],
        );
        let c = (2.0 * sxy + c2) / (sxx + syy + c2);
        let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
        ssim += l * c;
        cs += c;
    }
    Ok(SsimTerms {
        ssim: ssim / n,
        cs: cs / n,
    })
}

/// Mean SSIM over all fully covered 11×11 Gaussian windows of the luma.
pub fn ssim(a: ArrayView3<'_, f64>, b: ArrayView3<'_, f64>) -> Result<f64> {
    same_shape(&a, &b)?;
    Ok(ssim_terms(&luma(&a).view(), &luma(&b).view())?.ssim)
}

fn avg_pool2(x: &Array2<f64>) -> Array2<f64> {
    let (h, w) = (x.dim().0 / 2, x.dim().1 / 2);
    Array2::from_shape_fn((h, w), |(i, j)| {
        (x[[2 * i, 2 * j]] + x[[2 * i + 1, 2 * j]] + x[[2 * i, 2 * j + 1]] + x[[2 * i + 1, 2 * j + 1]]) / 4.0
    })
}

/// Scale count and exponents for an image whose smaller side is `min_dim`:
/// as many of the five standard scales as keep the coarsest one at least
/// one window wide, with the exponents renormalized to sum to one.
pub fn ms_ssim_weights(min_dim: usize) -> Vec<f64> {
    let mut m = MS_SSIM_WEIGHTS.len();
    while m > 1 && min_dim >> (m - 1) < SSIM_WINDOW {
        m -= 1;
    }
    let w = &MS_SSIM_WEIGHTS[..m];
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Multi-scale SSIM on the luma with 2×2 average-pool downsampling.
/// Negative per-scale terms are clamped to zero.
pub fn ms_ssim(a: ArrayView3<'_, f64>, b: ArrayView3<'_, f64>) -> Result<f64> {
    same_shape(&a, &b)?;
    let (mut x, mut y) = (luma(&a), luma(&b));
    let weights = ms_ssim_weights(x.dim().0.min(x.dim().1));
    let last = weights.len() - 1;
    let mut out = 1.0;
    for (j, w) in weights.iter().enumerate() {
        let t = ssim_terms(&x.view(), &y.view())?;
        let term = if j == last { t.ssim } else { t.cs };
        out *= term.max(0.0).powf(*w);
        if j < last {
            x = avg_pool2(&x);
            y = avg_pool2(&y);
        }
    }
    Ok(out)
}

/// 2-D convolution with zero padding, cropped to the input size the way
/// `scipy.signal.convolve2d(..., mode="same")` does.
pub fn convolve_same(x: &ArrayView2<'_, f64>, k: &ArrayView2<'_, f64>) -> Array2<f64> {
    let (h, w) = x.dim();
    let (kh, kw) = k.dim();
    let (oy, ox) = ((kh - 1) / 2, (kw - 1) / 2);
    Array2::from_shape_fn((h, w), |(i, j)| {
        let mut acc = 0.0;
        for a in 0..kh {
            for b in 0..kw {
                let (si, sj) = ((i + oy) as isize - a as isize, (j + ox) as isize - b as isize);
                if si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < w {
                    acc += k[[a, b]] * x[[si as usize, sj as usize]];
                }
            }
        }
        acc
    })
}

fn haar_filter(scale: usize) -> Array2<f64> {
    let n = 1 << scale;
    let v = 2f64.powi(-(scale as i32));
    Array2::from_shape_fn((n, n), |(r, _)| if r < n / 2 { -v } else { v })
}

fn subsample(x: &Array2<f64>) -> Array2<f64> {
    let s = convolve_same(&x.view(), &Array2::from_elem((2, 2), 0.25).view());
    let (h, w) = (s.dim().0.div_ceil(2), s.dim().1.div_ceil(2));
    Array2::from_shape_fn((h, w), |(i, j)| s[[2 * i, 2 * j]])
}

/// Haar responses per scale: `[horizontal filter scales.., transposed..]`.
fn haar_decompose(x: &Array2<f64>) -> Vec<Array2<f64>> {
    let mut out = Vec::with_capacity(2 * HAARPSI_SCALES);
    let filters: Vec<Array2<f64>> = (1..=HAARPSI_SCALES).map(haar_filter).collect();
    for f in &filters {
        out.push(convolve_same(&x.view(), &f.view()));
    }
    for f in &filters {
        out.push(convolve_same(&x.view(), &f.t()));
    }
    out
}

fn logistic(v: f64, alpha: f64) -> f64 {
    1.0 / (1.0 + (-alpha * v).exp())
}

fn logit(v: f64, alpha: f64) -> f64 {
    (v / (1.0 - v)).ln() / alpha
}

/// Haar wavelet-based perceptual similarity index in [0, 1] for RGB
/// images, with the published reference constants and 2× pre-subsampling.
pub fn haarpsi(a: ArrayView3<'_, f64>, b: ArrayView3<'_, f64>) -> Result<f64> {
    same_shape(&a, &b)?;
    let (c, h, w) = a.dim();
    if c != 3 {
        return Err(Error::Input(format!("haarpsi expects 3 channels, got {c}")));
    }
    if h.min(w) < 8 {
        return Err(Error::Input(format!("haarpsi needs at least 8x8 pixels, got {h}x{w}")));
    }
    let yiq = |img: &ArrayView3<'_, f64>| -> [Array2<f64>; 3] {
        let ch = |wts: [f64; 3]| {
            let mut out = Array2::zeros((h, w));
            for (k, wt) in wts.iter().enumerate() {
                out.scaled_add(*wt, &img.index_axis(Axis(0), k));
            }
            subsample(&out)
        };
        [ch(LUMA), ch([0.596, -0.274, -0.322]), ch([0.211, -0.523, 0.312])]
    };
    let [ya, ia, qa] = yiq(&a);
    let [yb, ib, qb] = yiq(&b);
    let ca = haar_decompose(&ya);
    let cb = haar_decompose(&yb);
    let box2 = Array2::from_elem((2, 2), 0.25);
    let chroma = |x: &Array2<f64>| convolve_same(&x.view(), &box2.view()).mapv(f64::abs);
    let (ia, ib, qa, qb) = (chroma(&ia), chroma(&ib), chroma(&qa), chroma(&qb));
    let sim = |x: f64, y: f64| (2.0 * x * y + HAARPSI_C) / (x * x + y * y + HAARPSI_C);

    let (sh, sw) = ya.dim();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..sh {
        for j in 0..sw {
            let mut wts = [0.0; 3];
            let mut sims = [0.0; 3];
            for o in 0..2 {
                let base = o * HAARPSI_SCALES;
                wts[o] = ca[base + 2][[i, j]].abs().max(cb[base + 2][[i, j]].abs());
                sims[o] = (0..2)
                    .map(|s| sim(ca[base + s][[i, j]].abs(), cb[base + s][[i, j]].abs()))
                    .sum::<f64>()
                    / 2.0;
            }
            sims[2] = (sim(ia[[i, j]], ib[[i, j]]) + sim(qa[[i, j]], qb[[i, j]])) / 2.0;
            wts[2] = (wts[0] + wts[1]) / 2.0;
            for k in 0..3 {
                num += logistic(sims[k], HAARPSI_ALPHA) * wts[k];
                den += wts[k];
            }
        }
    }
    if den == 0.0 {
        // no structure at the coarsest scale in either image
        return Ok(1.0);
    }
    Ok(logit(num / den, HAARPSI_ALPHA).powi(2).clamp(0.0, 1.0))
}

/// CIELAB (D65) of one 8-bit sRGB pixel, rescaled to unit ranges:
/// `(L / 100, (a + 128) / 255, (b + 128) / 255)`.
pub fn lab_normalized(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(|v| {
        let c = (v / 255.0).clamp(0.0, 1.0);
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    });
    let x = 0.412_456_4 * lin[0] + 0.357_576_1 * lin[1] + 0.180_437_5 * lin[2];
    let y = 0.212_672_9 * lin[0] + 0.715_152_2 * lin[1] + 0.072_175_0 * lin[2];
    let z = 0.019_333_9 * lin[0] + 0.119_192_0 * lin[1] + 0.950_304_1 * lin[2];
    let f = |t: f64| {
        let d: f64 = 6.0 / 29.0;
        if t > d.powi(3) {
            t.cbrt()
        } else {
            t / (3.0 * d * d) + 4.0 / 29.0
        }
    };
    let (fx, fy, fz) = (f(x / 0.950_47), f(y), f(z / 1.088_83));
    let l = 116.0 * fy - 16.0;
    let a = 500.0 * (fx - fy);
    let b = 200.0 * (fy - fz);
    [l / 100.0, (a + 128.0) / 255.0, (b + 128.0) / 255.0]
}

fn mean_lab_distance(a: &ArrayView3<'_, f64>, b: &ArrayView3<'_, f64>) -> f64 {
    let (_, h, w) = a.dim();
    let mut total = 0.0;
    for i in 0..h {
        for j in 0..w {
            let la = lab_normalized([a[[0, i, j]], a[[1, i, j]], a[[2, i, j]]]);
            let lb = lab_normalized([b[[0, i, j]], b[[1, i, j]], b[[2, i, j]]]);
            total += (0..3).map(|k| (la[k] - lb[k]).powi(2)).sum::<f64>().sqrt();
        }
    }
    total / (h * w) as f64
}

/// `mean‖Lab(output) − Lab(target)‖ − mean‖Lab(input) − Lab(target)‖`;
/// negative when the output is closer in colour to the target than the
/// input was.
pub fn mean_color_difference(
    input: ArrayView3<'_, f64>,
    output: ArrayView3<'_, f64>,
    target: ArrayView3<'_, f64>,
) -> Result<f64> {
    same_shape(&input, &output)?;
    same_shape(&input, &target)?;
    if input.dim().0 != 3 {
        return Err(Error::Input("mean color difference needs RGB images".into()));
    }
    Ok(mean_lab_distance(&output, &target) - mean_lab_distance(&input, &target))
}

/// One evaluated pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub pair_id: String,
    pub domain_pair: String,
    /// Capped at [`PSNR_CAP`].
    pub psnr: f64,
    pub ssim: f64,
    pub ms_ssim: f64,
    pub haarpsi: f64,
    pub mcd: Option<f64>,
}

impl MetricRow {
    /// All measures between `a` and `b` (byte range) plus the colour
    /// difference when a target is given.
    pub fn compute(
        pair_id: &str,
        domain_pair: &str,
        a: ArrayView3<'_, f64>,
        b: ArrayView3<'_, f64>,
        target: Option<ArrayView3<'_, f64>>,
    ) -> Result<Self> {
        Ok(Self {
            pair_id: pair_id.to_string(),
            domain_pair: domain_pair.to_string(),
            psnr: psnr(a, b)?.min(PSNR_CAP),
            ssim: ssim(a, b)?,
            ms_ssim: ms_ssim(a, b)?,
            haarpsi: haarpsi(a, b)?,
            mcd: target.map(|t| mean_color_difference(a, b, t)).transpose()?,
        })
    }
}

/// Column means of a set of rows.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricMeans {
    pub psnr: f64,
    pub ssim: f64,
    pub ms_ssim: f64,
    pub haarpsi: f64,
    pub mcd: Option<f64>,
}

/// Per-pair rows plus aggregates for one or more domain pairs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

pub const REPORT_HEADER: [&str; 7] = ["pair_id", "domain_pair", "psnr", "ssim", "ms_ssim", "haarpsi", "mcd"];

impl MetricReport {
    pub fn extend(&mut self, other: MetricReport) {
        self.rows.extend(other.rows);
    }

    fn means_of<'a>(rows: impl Iterator<Item = &'a MetricRow> + Clone) -> MetricMeans {
        let n = rows.clone().count().max(1) as f64;
        let mean = |f: fn(&MetricRow) -> f64| rows.clone().map(f).sum::<f64>() / n;
        let mcds: Vec<f64> = rows.clone().filter_map(|r| r.mcd).collect();
        MetricMeans {
            psnr: mean(|r| r.psnr),
            ssim: mean(|r| r.ssim),
            ms_ssim: mean(|r| r.ms_ssim),
            haarpsi: mean(|r| r.haarpsi),
            mcd: (!mcds.is_empty() && mcds.len() == rows.count()).then(|| mcds.iter().sum::<f64>() / mcds.len() as f64),
        }
    }

    pub fn means(&self) -> MetricMeans {
        Self::means_of(self.rows.iter())
    }

    /// Means per domain pair, in first-appearance order.
    pub fn pair_means(&self) -> Vec<(String, MetricMeans)> {
        let mut pairs: Vec<String> = Vec::new();
        for r in &self.rows {
            if !pairs.contains(&r.domain_pair) {
                pairs.push(r.domain_pair.clone());
            }
        }
        pairs
            .into_iter()
            .map(|p| {
                let m = Self::means_of(self.rows.iter().filter(|r| r.domain_pair == p));
                (p, m)
            })
            .collect()
    }

    /// Tab-separated table: header, one line per pair, then one `mean`
    /// line per domain pair and an overall `mean` line.
    pub fn to_tsv(&self) -> String {
        let mut out = REPORT_HEADER.join("\t") + "\n";
        let fmt_mcd = |m: Option<f64>| m.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
        let mut line = |id: &str, pair: &str, m: MetricMeans| {
            let _ = writeln!(
                out,
                "{id}\t{pair}\t{:.4}\t{:.6}\t{:.6}\t{:.6}\t{}",
                m.psnr,
                m.ssim,
                m.ms_ssim,
                m.haarpsi,
                fmt_mcd(m.mcd)
            );
        };
        for r in &self.rows {
            let m = MetricMeans {
                psnr: r.psnr,
                ssim: r.ssim,
                ms_ssim: r.ms_ssim,
                haarpsi: r.haarpsi,
                mcd: r.mcd,
            };
            line(&r.pair_id, &r.domain_pair, m);
        }
        for (p, m) in self.pair_means() {
            line("mean", &p, m);
        }
        line("mean", "all", self.means());
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Images to translate from one source domain, with optional
/// pixel-aligned targets for the colour-difference column.
pub struct PairSet<'a> {
    pub source_name: &'a str,
    pub target_name: &'a str,
    pub target: DomainLabel,
    pub ids: &'a [String],
    /// (3, H, W) in [-1, 1].
    pub inputs: &'a [Array3<f64>],
    pub targets: Option<&'a [Array3<f64>]>,
}

/// Translates every input to `set.target` and scores it against the
/// input, in batches of `batch_size`.
pub fn evaluate_pair_set(generator: &Generator, set: &PairSet<'_>, batch_size: usize) -> Result<MetricReport> {
    evaluate_pair_set_with(generator, set, batch_size, |_, _| {})
}

/// As [`evaluate_pair_set`], also handing each translation (in [-1, 1])
/// and its input index to `visit`.
pub fn evaluate_pair_set_with(
    generator: &Generator,
    set: &PairSet<'_>,
    batch_size: usize,
    mut visit: impl FnMut(usize, ArrayView3<'_, f64>),
) -> Result<MetricReport> {
    let label = format!("{}->{}", set.source_name, set.target_name);
    let mut report = MetricReport::default();
    for (chunk_no, chunk) in set.inputs.chunks(batch_size.max(1)).enumerate() {
        let views: Vec<_> = chunk.iter().map(|a| a.view()).collect();
        let x = ImageTensor::stack(&views, RangeTag::UnitSigned)?;
        let labels = vec![set.target; chunk.len()];
        let yu = generator.translate(&x, &labels)?;
        let y = yu.convert_range(RangeTag::Byte);
        let xb = x.convert_range(RangeTag::Byte);
        for k in 0..chunk.len() {
            let idx = chunk_no * batch_size.max(1) + k;
            visit(idx, yu.sample(k));
            let target = set
                .targets
                .map(|t| t[idx].mapv(|v| crate::types::convert_value(v, RangeTag::UnitSigned, RangeTag::Byte)));
            report.rows.push(MetricRow::compute(
                &set.ids[idx],
                &label,
                xb.sample(k),
                y.sample(k),
                target.as_ref().map(|t| t.view()),
            )?);
        }
    }
    Ok(report)
}
