//! Evaluation protocol: PSNR and SSIM on the BT.601 luminance channel, mean
//! L1 on the [0,1] luma scale, and per-dataset aggregates.
//!
//! All metric arithmetic runs in `f64` regardless of the model's element
//! type. PSNR and SSIM are evaluated on the 0-255 scale; identical images
//! yield the +inf PSNR sentinel and an SSIM of exactly 1.0.

use crate::data::Dataset;
use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// SSIM window edge (11x11 Gaussian).
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const DYNAMIC_RANGE: f64 = 255.0;

/// Studio-swing BT.601 luminance of a (3,H,W) image in [0,1], as (1,H,W)
/// still scaled to [0,1]: Y = (16 + 65.481 R + 128.553 G + 24.966 B) / 255.
pub fn rgb_to_luma<T: Elem>(img: &Tensor<T>) -> Result<Tensor<f64>> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::ShapeMismatch {
            op: "rgb_to_luma",
            lhs: s.to_vec(),
            rhs: vec![3, 0, 0],
        });
    }
    let (h, w) = (s[1], s[2]);
    let plane = h * w;
    let d = img.data();
    let out = Tensor::from_fn(vec![1, h, w], |i| {
        let r = d[i].as_f64();
        let g = d[plane + i].as_f64();
        let b = d[2 * plane + i].as_f64();
        (16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0
    });
    Ok(out)
}

/// Peak signal-to-noise ratio in dB between two same-shaped luma images in
/// [0,1], evaluated on the 0-255 scale. Identical inputs give +inf.
pub fn psnr(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "psnr",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut acc = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = DYNAMIC_RANGE * (x - y);
        acc += d * d;
    }
    let mse = acc / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * DYNAMIC_RANGE.log10() - 10.0 * mse.log10())
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    let mut total = 0.0;
    for dy in -half..=half {
        for dx in -half..=half {
            let v = (-((dy * dy + dx * dx) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w.push(v);
            total += v;
        }
    }
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Mean local SSIM between two same-shaped luma images in [0,1]:
/// 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range
/// 255, windows fully inside the image (no padding).
pub fn ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "ssim",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let s = a.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Domain {
            op: "ssim",
            detail: format!("image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        });
    }
    let window = gaussian_window();
    let c1 = (SSIM_K1 * DYNAMIC_RANGE) * (SSIM_K1 * DYNAMIC_RANGE);
    let c2 = (SSIM_K2 * DYNAMIC_RANGE) * (SSIM_K2 * DYNAMIC_RANGE);

    let ad = a.data();
    let bd = b.data();
    let mut total = 0.0f64;
    let mut count = 0usize;
    for y0 in 0..=(h - SSIM_WINDOW) {
        for x0 in 0..=(w - SSIM_WINDOW) {
            let (mut mx, mut my) = (0.0f64, 0.0f64);
            let (mut xx, mut yy, mut xy) = (0.0f64, 0.0f64, 0.0f64);
            for wy in 0..SSIM_WINDOW {
                for wx in 0..SSIM_WINDOW {
                    let wgt = window[wy * SSIM_WINDOW + wx];
                    let xv = DYNAMIC_RANGE * ad[(y0 + wy) * w + (x0 + wx)];
                    let yv = DYNAMIC_RANGE * bd[(y0 + wy) * w + (x0 + wx)];
                    mx += wgt * xv;
                    my += wgt * yv;
                    xx += wgt * xv * xv;
                    yy += wgt * yv * yv;
                    xy += wgt * xv * yv;
                }
            }
            let vx = xx - mx * mx;
            let vy = yy - my * my;
            let cov = xy - mx * my;
            let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Per-image metric triple.
#[derive(Debug, Clone)]
pub struct ImageMetrics {
    pub id: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub l1: f64,
}

/// Mean and population standard deviation of each metric.
#[derive(Debug, Clone, Copy, Default)]
pub struct MetricSummary {
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub l1_mean: f64,
    pub l1_std: f64,
}

/// Evaluation results for one dataset.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub per_image: Vec<ImageMetrics>,
    pub summary: MetricSummary,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl EvalReport {
    fn from_rows(per_image: Vec<ImageMetrics>) -> Self {
        let (psnr_mean, psnr_std) = mean_std(per_image.iter().map(|m| m.psnr_db));
        let (ssim_mean, ssim_std) = mean_std(per_image.iter().map(|m| m.ssim));
        let (l1_mean, l1_std) = mean_std(per_image.iter().map(|m| m.l1));
        Self {
            per_image,
            summary: MetricSummary {
                psnr_mean,
                psnr_std,
                ssim_mean,
                ssim_std,
                l1_mean,
                l1_std,
            },
        }
    }

    /// One row per image plus mean and stddev summary rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,psnr_db,ssim,l1\n");
        for m in &self.per_image {
            out.push_str(&format!("{},{},{},{}\n", m.id, m.psnr_db, m.ssim, m.l1));
        }
        let s = &self.summary;
        out.push_str(&format!(
            "mean,{},{},{}\n",
            s.psnr_mean, s.ssim_mean, s.l1_mean
        ));
        out.push_str(&format!(
            "stddev,{},{},{}\n",
            s.psnr_std, s.ssim_std, s.l1_std
        ));
        out
    }
}

/// Compare one super-resolved image against its target on the luminance
/// channel. The SR image is clamped to [0,1] first (matching what a saved
/// 8-bit image would contain, up to quantization).
pub fn image_metrics<T: Elem>(
    id: &str,
    sr: &Tensor<T>,
    hr: &Tensor<T>,
) -> Result<ImageMetrics> {
    if sr.shape() != hr.shape() {
        return Err(Error::ShapeMismatch {
            op: "image_metrics",
            lhs: sr.shape().to_vec(),
            rhs: hr.shape().to_vec(),
        });
    }
    let clamped = Tensor::<f64>::from_fn(sr.shape().to_vec(), |i| {
        sr.data()[i].as_f64().clamp(0.0, 1.0)
    });
    let ya = rgb_to_luma(&clamped)?;
    let yb = rgb_to_luma(&hr.cast::<f64>())?;
    let l1 = ya.l1_distance(&yb)?;
    Ok(ImageMetrics {
        id: id.to_string(),
        psnr_db: psnr(&ya, &yb)?,
        ssim: ssim(&ya, &yb)?,
        l1,
    })
}

/// Run the model over every pair of a dataset and aggregate. `sr` maps an
/// LR image (3,h,w) to its HR-sized reconstruction. `threads` caps worker
/// threads; per-image results are collected in dataset order regardless.
pub fn evaluate<T: Elem, F>(sr: F, dataset: &Dataset<T>, threads: usize) -> Result<EvalReport>
where
    F: Fn(&Tensor<T>) -> Result<Tensor<T>> + Sync,
{
    if dataset.is_empty() {
        return Err(Error::Domain {
            op: "evaluate",
            detail: "dataset is empty".into(),
        });
    }
    let one = |pair: &crate::data::ImagePair<T>| -> Result<ImageMetrics> {
        let out = sr(&pair.lr)?;
        image_metrics(&pair.source_id, &out, &pair.hr)
    };
    let rows: Vec<Result<ImageMetrics>> = if threads <= 1 || dataset.len() == 1 {
        dataset.pairs.iter().map(one).collect()
    } else {
        let workers = threads.min(dataset.len());
        let mut rows: Vec<Option<Result<ImageMetrics>>> = Vec::new();
        rows.resize_with(dataset.len(), || None);
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<std::sync::Mutex<&mut Option<Result<ImageMetrics>>>> =
            rows.iter_mut().map(std::sync::Mutex::new).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if i >= dataset.len() {
                        break;
                    }
                    let result = one(&dataset.pairs[i]);
                    **slots[i].lock().expect("slot lock") = Some(result);
                });
            }
        });
        rows.into_iter().map(|r| r.expect("slot filled")).collect()
    };
    let rows: Result<Vec<ImageMetrics>> = rows.into_iter().collect();
    Ok(EvalReport::from_rows(rows?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, Dataset, ImagePair};
    use crate::rng::Rng;

    fn luma_of_uniform(r: f64, g: f64, b: f64) -> f64 {
        let img = Tensor::<f64>::from_fn(vec![3, 2, 2], |i| match i / 4 {
            0 => r,
            1 => g,
            _ => b,
        });
        rgb_to_luma(&img).unwrap().data()[0]
    }

    #[test]
    fn luma_formula_anchors() {
        assert!((luma_of_uniform(1.0, 1.0, 1.0) - 235.0 / 255.0).abs() < 1e-9);
        assert!((luma_of_uniform(0.0, 0.0, 0.0) - 16.0 / 255.0).abs() < 1e-9);
        assert!((luma_of_uniform(0.5, 0.5, 0.5) - 125.5 / 255.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_sentinel_and_uniform_difference() {
        let a = Tensor::<f64>::full(vec![1, 4, 4], 0.5);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);

        // uniform |diff| of 16/255 on the byte scale: MSE = 256
        let b = Tensor::<f64>::full(vec![1, 4, 4], 0.5 + 16.0 / 255.0);
        let got = psnr(&a, &b).unwrap();
        let want = 20.0 * 255.0f64.log10() - 10.0 * 256.0f64.log10();
        assert!((got - want).abs() < 1e-9);
        assert!((got - 24.048).abs() < 1e-3);
    }

    #[test]
    fn psnr_matches_direct_formula_on_random_pairs() {
        let mut rng = Rng::new(3);
        for _ in 0..10 {
            let a = Tensor::<f64>::from_fn(vec![1, 6, 6], |_| rng.next_range(0.0, 1.0));
            let b = Tensor::<f64>::from_fn(vec![1, 6, 6], |_| rng.next_range(0.0, 1.0));
            let mse: f64 = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| {
                    let d = 255.0 * (x - y);
                    d * d
                })
                .sum::<f64>()
                / 36.0;
            let want = 10.0 * (255.0f64 * 255.0 / mse).log10();
            let got = psnr(&a, &b).unwrap();
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn psnr_is_symmetric_and_monotone_in_noise() {
        let mut rng = Rng::new(4);
        let a = Tensor::<f64>::from_fn(vec![1, 8, 8], |_| rng.next_range(0.2, 0.8));
        let noise: Vec<f64> = (0..64).map(|_| rng.next_range(-1.0, 1.0)).collect();
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.02, 0.04, 0.08, 0.16] {
            let b = Tensor::<f64>::from_fn(vec![1, 8, 8], |i| a.data()[i] + amp * noise[i]);
            let p = psnr(&a, &b).unwrap();
            let q = psnr(&b, &a).unwrap();
            assert!((p - q).abs() < 1e-12);
            assert!(p < last, "psnr must fall as noise grows");
            last = p;
        }
    }

    #[test]
    fn ssim_identity_is_exactly_one() {
        let mut rng = Rng::new(5);
        let a = Tensor::<f64>::from_fn(vec![1, 16, 16], |_| rng.next_range(0.0, 1.0));
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ssim_inverted_image_scores_below_one() {
        let mut rng = Rng::new(6);
        let a = Tensor::<f64>::from_fn(vec![1, 16, 16], |_| rng.next_range(0.0, 1.0));
        let b = Tensor::<f64>::from_fn(vec![1, 16, 16], |i| 1.0 - a.data()[i]);
        let v = ssim(&a, &b).unwrap();
        assert!(v < 1.0);
        let w = ssim(&b, &a).unwrap();
        assert!((v - w).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Tensor::<f64>::zeros(vec![1, 8, 8]);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn evaluate_identity_pipeline() {
        // hr is the nearest-upsampled lr, and the "model" is the same
        // upsampling, so reconstruction is perfect
        let mut rng = Rng::new(7);
        let lr = Tensor::<f64>::from_fn(vec![3, 4, 4], |_| rng.next_range(0.0, 1.0));
        let up = |t: &Tensor<f64>| -> Tensor<f64> {
            let s = t.shape();
            let (c, h, w) = (s[0], s[1], s[2]);
            Tensor::from_fn(vec![c, h * 4, w * 4], |i| {
                let ci = i / (16 * h * w);
                let y = (i / (4 * w)) % (4 * h);
                let x = i % (4 * w);
                t.data()[(ci * h + y / 4) * w + x / 4].as_f64()
            })
        };
        let hr = up(&lr);
        let pair = ImagePair::new(lr, hr, "identity").unwrap();
        let ds = Dataset {
            pairs: vec![pair],
            augment: false,
        };
        let report = evaluate(|lr| Ok(up(lr)), &ds, 1).unwrap();
        assert_eq!(report.per_image[0].psnr_db, f64::INFINITY);
        assert_eq!(report.per_image[0].ssim, 1.0);
        assert_eq!(report.per_image[0].l1, 0.0);
        // single image: stddev 0
        assert_eq!(report.summary.ssim_std, 0.0);
        assert_eq!(report.summary.l1_std, 0.0);
    }

    #[test]
    fn evaluate_aggregates_match_hand_average() {
        let pairs = synth_dataset::<f64>(42, 2, 32).unwrap();
        let ds = Dataset {
            pairs,
            augment: false,
        };
        // a cheap deterministic "model": nearest upsample
        let up = |t: &Tensor<f64>| -> Result<Tensor<f64>> {
            let s = t.shape();
            let (c, h, w) = (s[0], s[1], s[2]);
            Ok(Tensor::from_fn(vec![c, h * 4, w * 4], |i| {
                let ci = i / (16 * h * w);
                let y = (i / (4 * w)) % (4 * h);
                let x = i % (4 * w);
                t.data()[(ci * h + y / 4) * w + x / 4]
            }))
        };
        let report = evaluate(up, &ds, 1).unwrap();
        let hand_mean =
            (report.per_image[0].l1 + report.per_image[1].l1) / 2.0;
        assert!((report.summary.l1_mean - hand_mean).abs() < 1e-15);
        let hand_var = ((report.per_image[0].l1 - hand_mean).powi(2)
            + (report.per_image[1].l1 - hand_mean).powi(2))
            / 2.0;
        assert!((report.summary.l1_std - hand_var.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn evaluate_is_deterministic_across_thread_counts() {
        let pairs = synth_dataset::<f32>(9, 4, 32).unwrap();
        let ds = Dataset {
            pairs,
            augment: false,
        };
        let up = |t: &Tensor<f32>| -> Result<Tensor<f32>> {
            let s = t.shape();
            let (c, h, w) = (s[0], s[1], s[2]);
            Ok(Tensor::from_fn(vec![c, h * 4, w * 4], |i| {
                let ci = i / (16 * h * w);
                let y = (i / (4 * w)) % (4 * h);
                let x = i % (4 * w);
                t.data()[(ci * h + y / 4) * w + x / 4].as_f64()
            }))
        };
        let seq = evaluate(up, &ds, 1).unwrap();
        let par = evaluate(up, &ds, 4).unwrap();
        assert_eq!(seq.to_csv(), par.to_csv());
    }
}
