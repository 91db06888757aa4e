//! Classification metrics (accuracy, ROC, AUC) and full-reference image
//! quality metrics (PSNR, SSIM, UQI), plus PNM image I/O and report files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::write_atomic;

/// One ROC operating point at a given decision threshold (score >= threshold
/// predicts positive).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    // JSON has no infinity literal, so the leading point's +inf threshold is
    // written as the string "inf".
    #[serde(with = "inf_as_string")]
    pub threshold: f64,
}

mod inf_as_string {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Finite(f64),
        Named(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            Repr::Finite(*v).serialize(s)
        } else {
            Repr::Named(v.to_string()).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Finite(v) => Ok(v),
            Repr::Named(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc: f64,
    pub auc: f64,
    pub roc: Vec<RocPoint>,
    pub n_samples: usize,
    pub n_positive: usize,
}

/// Fraction of agreeing prediction/label pairs.
pub fn accuracy(preds: &[u8], labels: &[u8]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// ROC curve over the sorted unique scores as thresholds, with AUC by the
/// trapezoidal rule. Tied positive/negative scores fall on one curve segment
/// and therefore earn half credit, matching the Mann-Whitney statistic.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<EvalReport> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }

    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();

    let mut roc = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let mut auc = 0.0;
    let (mut tp, mut fp) = (0usize, 0usize);
    for &t in &thresholds {
        // Everything scoring exactly t joins the positive side at this step.
        for (s, &l) in scores.iter().zip(labels) {
            if *s == t {
                if l == 1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let tpr = tp as f64 / n_pos as f64;
        let fpr = fp as f64 / n_neg as f64;
        let prev = *roc.last().unwrap();
        auc += (fpr - prev.fpr) * (tpr + prev.tpr) / 2.0;
        roc.push(RocPoint {
            fpr,
            tpr,
            threshold: t,
        });
    }

    // Accuracy at the conventional 0.5 cut (score > 0.5 predicts positive).
    let preds: Vec<u8> = scores.iter().map(|&s| u8::from(s > 0.5)).collect();
    let acc = accuracy(&preds, labels)?;

    Ok(EvalReport {
        acc,
        auc,
        roc,
        n_samples: labels.len(),
        n_positive: n_pos,
    })
}

/// Row-major grayscale image with intensities in [0, 255].
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlane {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl ImagePlane {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<ImagePlane> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} pixels for {width}x{height} image",
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(*p >= 0.0 && *p <= 255.0)) {
            return Err(Error::invalid("pixel values must lie in [0, 255]"));
        }
        Ok(ImagePlane {
            width,
            height,
            pixels,
        })
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    fn same_size(&self, other: &ImagePlane) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

fn mse(a: &ImagePlane, b: &ImagePlane) -> f64 {
    let n = a.pixels.len() as f64;
    a.pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}

/// Peak signal-to-noise ratio in dB; identical images give `f64::INFINITY`.
pub fn psnr(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    a.same_size(b)?;
    let e = mse(a, b);
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / e).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_kernel(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window as f64 - 1.0) / 2.0;
    let mut k: Vec<f64> = (0..window * window)
        .map(|i| {
            let dx = (i % window) as f64 - c;
            let dy = (i / window) as f64 - c;
            (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    for w in &mut k {
        *w /= s;
    }
    k
}

/// Mean structural similarity over all fully-interior windows with Gaussian
/// weighting and dynamic range 255.
pub fn ssim(a: &ImagePlane, b: &ImagePlane, window: usize) -> Result<f64> {
    a.same_size(b)?;
    if window % 2 == 0 || window == 0 {
        return Err(Error::invalid("window size must be odd"));
    }
    if a.width < window || a.height < window {
        return Err(Error::invalid(format!(
            "image {}x{} smaller than {window}x{window} window",
            a.width, a.height
        )));
    }
    let c1 = (SSIM_K1 * 255.0) * (SSIM_K1 * 255.0);
    let c2 = (SSIM_K2 * 255.0) * (SSIM_K2 * 255.0);
    let kernel = gaussian_kernel(window, SSIM_SIGMA);

    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=a.height - window {
        for x0 in 0..=a.width - window {
            let (mut mu_a, mut mu_b) = (0.0, 0.0);
            for (i, w) in kernel.iter().enumerate() {
                let (x, y) = (x0 + i % window, y0 + i / window);
                mu_a += w * a.at(x, y);
                mu_b += w * b.at(x, y);
            }
            let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
            for (i, w) in kernel.iter().enumerate() {
                let (x, y) = (x0 + i % window, y0 + i / window);
                let da = a.at(x, y) - mu_a;
                let db = b.at(x, y) - mu_b;
                var_a += w * da * da;
                var_b += w * db * db;
                cov += w * da * db;
            }
            total += (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub const UQI_WINDOW: usize = 8;

/// Universal quality index result; windows with a zero denominator carry no
/// defined quality value and are excluded from the mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UqiResult {
    pub value: f64,
    pub skipped_windows: usize,
}

/// Mean universal quality index over all sliding windows (uniform weights,
/// the zero-stabilizer special case of SSIM).
pub fn uqi(a: &ImagePlane, b: &ImagePlane, window: usize) -> Result<UqiResult> {
    a.same_size(b)?;
    if window == 0 {
        return Err(Error::invalid("window size must be positive"));
    }
    if a.width < window || a.height < window {
        return Err(Error::invalid(format!(
            "image {}x{} smaller than {window}x{window} window",
            a.width, a.height
        )));
    }
    let n = (window * window) as f64;
    let mut total = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for y0 in 0..=a.height - window {
        for x0 in 0..=a.width - window {
            let (mut sa, mut sb) = (0.0, 0.0);
            for i in 0..window * window {
                let (x, y) = (x0 + i % window, y0 + i / window);
                sa += a.at(x, y);
                sb += b.at(x, y);
            }
            let (mu_a, mu_b) = (sa / n, sb / n);
            let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..window * window {
                let (x, y) = (x0 + i % window, y0 + i / window);
                let da = a.at(x, y) - mu_a;
                let db = b.at(x, y) - mu_b;
                var_a += da * da;
                var_b += db * db;
                cov += da * db;
            }
            var_a /= n;
            var_b /= n;
            cov /= n;
            let denom = (var_a + var_b) * (mu_a * mu_a + mu_b * mu_b);
            if denom == 0.0 {
                skipped += 1;
                continue;
            }
            total += 4.0 * cov * mu_a * mu_b / denom;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Degenerate(
            "every window had a zero denominator".into(),
        ));
    }
    Ok(UqiResult {
        value: total / used as f64,
        skipped_windows: skipped,
    })
}

/// Read a binary PNM image: PGM (P5) directly, PPM (P6) converted to
/// grayscale with the BT.601 luma weights. Maximum value must be 255.
pub fn read_image(path: &Path) -> Result<ImagePlane> {
    let bytes = std::fs::read(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: Box::new(Error::Io(e)),
    })?;
    parse_pnm(&bytes).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: Box::new(e),
    })
}

fn parse_pnm(bytes: &[u8]) -> Result<ImagePlane> {
    // Header tokens separated by whitespace; '#' starts a comment to EOL.
    let mut pos = 0usize;
    let mut next_token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::invalid("truncated image header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = next_token()?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::invalid(format!("unsupported image magic {other:?}"))),
    };
    let width: usize = next_token()?
        .parse()
        .map_err(|_| Error::invalid("bad image width"))?;
    let height: usize = next_token()?
        .parse()
        .map_err(|_| Error::invalid("bad image height"))?;
    let maxval: usize = next_token()?
        .parse()
        .map_err(|_| Error::invalid("bad image maxval"))?;
    if maxval != 255 {
        return Err(Error::invalid(format!(
            "unsupported maxval {maxval}, expected 255"
        )));
    }
    // Exactly one whitespace byte separates the header from pixel data.
    let data = &bytes[pos + 1..];
    let needed = width * height * channels;
    if data.len() < needed {
        return Err(Error::invalid(format!(
            "pixel data truncated: {} bytes, expected {needed}",
            data.len()
        )));
    }
    let pixels: Vec<f64> = if channels == 1 {
        data[..needed].iter().map(|&b| b as f64).collect()
    } else {
        data[..needed]
            .chunks_exact(3)
            .map(|rgb| 0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64)
            .collect()
    };
    ImagePlane::new(width, height, pixels)
}

/// Write an image as a binary PGM, rounding intensities to bytes.
pub fn write_pgm(path: &Path, image: &ImagePlane) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    bytes.extend(image.pixels.iter().map(|&p| p.round().clamp(0.0, 255.0) as u8));
    write_atomic(path, &bytes).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: Box::new(Error::Io(e)),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Write a report as JSON (full fields) or CSV (ROC points only).
pub fn write_report(report: &EvalReport, path: &Path, format: ReportFormat) -> Result<()> {
    let bytes = match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            s.into_bytes()
        }
        ReportFormat::Csv => {
            let mut s = String::from("fpr,tpr,threshold\n");
            for p in &report.roc {
                s.push_str(&format!("{},{},{}\n", p.fpr, p.tpr, p.threshold));
            }
            s.into_bytes()
        }
    };
    write_atomic(path, &bytes).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: Box::new(Error::Io(e)),
    })
}

pub fn read_report_json(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: Box::new(Error::Io(e)),
    })?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Pair-counting AUC: each correctly ordered positive/negative pair
    /// scores 1, each tie 0.5.
    fn auc_brute_force(scores: &[f64], labels: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0.0;
        for (i, (&si, &li)) in scores.iter().zip(labels).enumerate() {
            for (&sj, &lj) in scores.iter().zip(labels).skip(i + 1) {
                let (pos, neg) = match (li, lj) {
                    (1, 0) => (si, sj),
                    (0, 1) => (sj, si),
                    _ => continue,
                };
                pairs += 1.0;
                if pos > neg {
                    num += 1.0;
                } else if pos == neg {
                    num += 0.5;
                }
            }
        }
        num / pairs
    }

    fn random_image(rng: &mut Rng, w: usize, h: usize) -> ImagePlane {
        let pixels = (0..w * h).map(|_| (rng.uniform() * 255.0).floor()).collect();
        ImagePlane::new(w, h, pixels).unwrap()
    }

    #[test]
    fn accuracy_counts() {
        assert_eq!(accuracy(&[1, 0, 1, 1], &[1, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1, 0, 0], &[1, 0, 1, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 0, 1, 1], &[1, 0, 0, 1]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn auc_perfect_separation() {
        let r = roc_auc(&[0.9, 0.8, 0.3, 0.1], &[1, 1, 0, 0]).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.acc, 1.0);
        assert_eq!(r.n_samples, 4);
        assert_eq!(r.n_positive, 2);
    }

    #[test]
    fn auc_three_of_four_pairs() {
        let r = roc_auc(&[0.9, 0.6, 0.4, 0.1], &[1, 0, 1, 0]).unwrap();
        assert!((r.auc - 0.75).abs() < 1e-15);
    }

    #[test]
    fn auc_all_ties_is_half() {
        let r = roc_auc(&[0.5, 0.5, 0.5, 0.5], &[1, 0, 1, 0]).unwrap();
        assert_eq!(r.auc, 0.5);
    }

    #[test]
    fn auc_single_class_errors() {
        assert!(matches!(
            roc_auc(&[0.1, 0.9], &[1, 1]),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn roc_endpoints_and_monotone() {
        let mut rng = Rng::seed_from(10);
        for _ in 0..50 {
            let n = 2 + rng.below(30) as usize;
            let scores: Vec<f64> = (0..n).map(|_| (rng.uniform() * 8.0).floor() / 8.0).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.below(2) as u8).collect();
            labels[0] = 0;
            labels[1] = 1;
            let r = roc_auc(&scores, &labels).unwrap();
            let first = r.roc.first().unwrap();
            let last = r.roc.last().unwrap();
            assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
            assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
            for w in r.roc.windows(2) {
                assert!(w[1].fpr >= w[0].fpr);
                assert!(w[1].tpr >= w[0].tpr);
                assert!(w[1].threshold <= w[0].threshold);
            }
        }
    }

    #[test]
    fn auc_matches_pair_counting_with_ties() {
        let mut rng = Rng::seed_from(11);
        for _ in 0..300 {
            let n = 2 + rng.below(19) as usize;
            // Coarse score grid forces frequent ties.
            let scores: Vec<f64> = (0..n).map(|_| (rng.uniform() * 5.0).floor() / 5.0).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.below(2) as u8).collect();
            labels[0] = 0;
            labels[n - 1] = 1;
            let r = roc_auc(&scores, &labels).unwrap();
            let oracle = auc_brute_force(&scores, &labels);
            assert!(
                (r.auc - oracle).abs() < 1e-12,
                "auc {} vs pair counting {oracle}",
                r.auc
            );
        }
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let mut rng = Rng::seed_from(12);
        for _ in 0..50 {
            let n = 4 + rng.below(16) as usize;
            let scores: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.below(2) as u8).collect();
            labels[0] = 0;
            labels[1] = 1;
            let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 0.5).collect();
            let a = roc_auc(&scores, &labels).unwrap().auc;
            let b = roc_auc(&transformed, &labels).unwrap().auc;
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let mut rng = Rng::seed_from(13);
        let a = random_image(&mut rng, 16, 12);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_uniform_offset_sixteen() {
        let a = ImagePlane::new(8, 8, vec![100.0; 64]).unwrap();
        let b = ImagePlane::new(8, 8, vec![116.0; 64]).unwrap();
        let expected = 10.0 * (65025.0_f64 / 256.0).log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 24.05).abs() < 0.01);
    }

    #[test]
    fn psnr_dimension_mismatch() {
        let a = ImagePlane::new(8, 8, vec![0.0; 64]).unwrap();
        let b = ImagePlane::new(8, 4, vec![0.0; 32]).unwrap();
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn psnr_symmetric() {
        let mut rng = Rng::seed_from(14);
        let a = random_image(&mut rng, 10, 10);
        let b = random_image(&mut rng, 10, 10);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ssim_identical_is_one() {
        let mut rng = Rng::seed_from(15);
        let a = random_image(&mut rng, 20, 16);
        assert!((ssim(&a, &a, SSIM_WINDOW).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_negative_image_below_one() {
        let mut rng = Rng::seed_from(16);
        let a = random_image(&mut rng, 20, 16);
        let neg = ImagePlane::new(20, 16, a.pixels.iter().map(|p| 255.0 - p).collect()).unwrap();
        assert!(ssim(&a, &neg, SSIM_WINDOW).unwrap() < 1.0);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = ImagePlane::new(8, 8, vec![0.0; 64]).unwrap();
        assert!(ssim(&a, &a, 11).is_err());
    }

    #[test]
    fn ssim_matches_direct_window_oracle() {
        // Oracle computes each window from raw weighted moments
        // (E[x²]−E[x]², E[xy]−E[x]E[y]) instead of centered sums.
        let mut rng = Rng::seed_from(17);
        let a = random_image(&mut rng, 24, 18);
        let noisy: Vec<f64> = a
            .pixels
            .iter()
            .map(|p| (p + rng.normal() * 10.0).clamp(0.0, 255.0))
            .collect();
        let b = ImagePlane::new(24, 18, noisy).unwrap();

        let w = SSIM_WINDOW;
        let kernel = gaussian_kernel(w, SSIM_SIGMA);
        let c1 = (0.01_f64 * 255.0).powi(2);
        let c2 = (0.03_f64 * 255.0).powi(2);
        let mut total = 0.0;
        let mut count = 0;
        for y0 in 0..=a.height - w {
            for x0 in 0..=a.width - w {
                let (mut ex, mut ey, mut exx, mut eyy, mut exy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (i, wt) in kernel.iter().enumerate() {
                    let px = a.at(x0 + i % w, y0 + i / w);
                    let py = b.at(x0 + i % w, y0 + i / w);
                    ex += wt * px;
                    ey += wt * py;
                    exx += wt * px * px;
                    eyy += wt * py * py;
                    exy += wt * px * py;
                }
                let vx = exx - ex * ex;
                let vy = eyy - ey * ey;
                let cxy = exy - ex * ey;
                total += (2.0 * ex * ey + c1) * (2.0 * cxy + c2)
                    / ((ex * ex + ey * ey + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        let oracle = total / count as f64;
        let got = ssim(&a, &b, w).unwrap();
        assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
    }

    #[test]
    fn ssim_symmetric() {
        let mut rng = Rng::seed_from(18);
        let a = random_image(&mut rng, 16, 16);
        let b = random_image(&mut rng, 16, 16);
        let d = (ssim(&a, &b, SSIM_WINDOW).unwrap() - ssim(&b, &a, SSIM_WINDOW).unwrap()).abs();
        assert!(d < 1e-15);
    }

    #[test]
    fn uqi_identical_nonconstant_is_one() {
        let mut rng = Rng::seed_from(19);
        let a = random_image(&mut rng, 16, 12);
        let r = uqi(&a, &a, UQI_WINDOW).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
        assert_eq!(r.skipped_windows, 0);
    }

    #[test]
    fn uqi_constant_offset_below_one() {
        let mut rng = Rng::seed_from(20);
        let a = random_image(&mut rng, 16, 12);
        let b = ImagePlane::new(
            16,
            12,
            a.pixels.iter().map(|p| (p * 0.8) + 40.0).collect(),
        )
        .unwrap();
        assert!(uqi(&a, &b, UQI_WINDOW).unwrap().value < 1.0);
    }

    #[test]
    fn uqi_skips_zero_denominator_windows() {
        // Both images identically zero on the left half: those windows have
        // zero means and variances.
        let w = 16;
        let h = 8;
        let mut rng = Rng::seed_from(21);
        let mut pa = vec![0.0; w * h];
        let mut pb = vec![0.0; w * h];
        for y in 0..h {
            for x in 12..w {
                pa[y * w + x] = (rng.uniform() * 255.0).floor();
                pb[y * w + x] = (rng.uniform() * 255.0).floor();
            }
        }
        let a = ImagePlane::new(w, h, pa).unwrap();
        let b = ImagePlane::new(w, h, pb).unwrap();
        let r = uqi(&a, &b, 8).unwrap();
        // Windows starting at x0 ∈ {0..4} see only zeros (x0+7 < 12).
        assert_eq!(r.skipped_windows, 5);
        assert!(r.value.is_finite());
    }

    #[test]
    fn uqi_matches_direct_block_oracle() {
        let mut rng = Rng::seed_from(22);
        let a = random_image(&mut rng, 20, 14);
        let b = random_image(&mut rng, 20, 14);
        let w = 8;
        let n = (w * w) as f64;
        let mut total = 0.0;
        let mut used = 0;
        for y0 in 0..=a.height - w {
            for x0 in 0..=a.width - w {
                let (mut ex, mut ey, mut exx, mut eyy, mut exy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..w * w {
                    let px = a.at(x0 + i % w, y0 + i / w);
                    let py = b.at(x0 + i % w, y0 + i / w);
                    ex += px;
                    ey += py;
                    exx += px * px;
                    eyy += py * py;
                    exy += px * py;
                }
                let (mx, my) = (ex / n, ey / n);
                let vx = exx / n - mx * mx;
                let vy = eyy / n - my * my;
                let cxy = exy / n - mx * my;
                let denom = (vx + vy) * (mx * mx + my * my);
                if denom == 0.0 {
                    continue;
                }
                total += 4.0 * cxy * mx * my / denom;
                used += 1;
            }
        }
        let oracle = total / used as f64;
        let got = uqi(&a, &b, w).unwrap().value;
        assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
    }

    #[test]
    fn pgm_round_trip() {
        let mut rng = Rng::seed_from(23);
        let a = random_image(&mut rng, 9, 7);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.pgm");
        write_pgm(&p, &a).unwrap();
        assert_eq!(read_image(&p).unwrap(), a);
    }

    #[test]
    fn ppm_grayscale_conversion() {
        // One pure-red, one pure-green, one pure-blue pixel.
        let mut bytes = b"P6\n3 1\n255\n".to_vec();
        bytes.extend([255, 0, 0, 0, 255, 0, 0, 0, 255]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.ppm");
        std::fs::write(&p, &bytes).unwrap();
        let img = read_image(&p).unwrap();
        assert!((img.at(0, 0) - 0.299 * 255.0).abs() < 1e-12);
        assert!((img.at(1, 0) - 0.587 * 255.0).abs() < 1e-12);
        assert!((img.at(2, 0) - 0.114 * 255.0).abs() < 1e-12);
    }

    #[test]
    fn pnm_header_comments_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.pgm");
        std::fs::write(&p, b"P5\n# a comment\n2 1\n255\n\x07\x09").unwrap();
        let img = read_image(&p).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.pixels, vec![7.0, 9.0]);

        std::fs::write(&p, b"P4\n2 1\n255\n\x00").unwrap();
        assert!(read_image(&p).is_err());
        std::fs::write(&p, b"P5\n2 2\n255\n\x00").unwrap();
        assert!(read_image(&p).is_err());
    }

    #[test]
    fn report_round_trip_and_csv_rows() {
        let r = roc_auc(&[0.9, 0.6, 0.4, 0.1], &[1, 0, 1, 0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let j = dir.path().join("report.json");
        let c = dir.path().join("roc.csv");
        write_report(&r, &j, ReportFormat::Json).unwrap();
        write_report(&r, &c, ReportFormat::Csv).unwrap();
        assert_eq!(read_report_json(&j).unwrap(), r);
        let csv_text = std::fs::read_to_string(&c).unwrap();
        assert_eq!(csv_text.lines().count(), r.roc.len() + 1);
        assert!(csv_text.starts_with("fpr,tpr,threshold\n"));
    }
}
