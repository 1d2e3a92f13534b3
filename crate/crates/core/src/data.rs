//! HR/LR pair construction: antialiased bicubic 4x downscaling, the eight
//! dihedral augmentations, a procedural synthetic dataset, and PNG/PPM I/O.
//!
//! Resampling weights are always computed and accumulated in `f64` and cast
//! to the element type at the end, so the geometric identities (constant
//! images stay constant, downscaling commutes with flips and rotations) hold
//! to near machine precision.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::nets::SCALE;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Cubic convolution kernel with shape parameter `a`.
pub fn cubic(x: f64, a: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

/// The bicubic kernel used throughout (a = -0.5).
pub fn bicubic_kernel(x: f64) -> f64 {
    cubic(x, -0.5)
}

/// Per-output-pixel taps for one axis of an antialiased 4x reduction:
/// the kernel is stretched by the scale factor, source coordinates are
/// clamped at the edges, and weights are renormalized to sum to 1.
fn downscale_taps(in_len: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = SCALE as f64;
    let out_len = in_len / SCALE;
    let radius = 2.0 * scale;
    (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale - 0.5;
            let lo = (center - radius).ceil() as isize;
            let hi = (center + radius).floor() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::with_capacity((hi - lo + 1) as usize);
            let mut total = 0.0;
            for j in lo..=hi {
                let w = bicubic_kernel((j as f64 - center) / scale);
                if w == 0.0 {
                    continue;
                }
                let src = j.clamp(0, in_len as isize - 1) as usize;
                taps.push((src, w));
                total += w;
            }
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Antialiased separable bicubic 4x reduction of a (C,H,W) tensor.
/// Both spatial dims must be divisible by 4.
pub fn downscale4<T: Elem>(hr: &Tensor<T>) -> Result<Tensor<T>> {
    let s = hr.shape();
    if s.len() != 3 {
        return Err(Error::ShapeMismatch {
            op: "downscale4",
            lhs: s.to_vec(),
            rhs: vec![3, 0, 0],
        });
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if h % SCALE != 0 || w % SCALE != 0 {
        return Err(Error::Domain {
            op: "downscale4",
            detail: format!("spatial dims {h}x{w} not divisible by {SCALE}"),
        });
    }
    let (oh, ow) = (h / SCALE, w / SCALE);
    let x_taps = downscale_taps(w);
    let y_taps = downscale_taps(h);

    // horizontal pass then vertical pass, all in f64
    let mut tmp = vec![0.0f64; c * h * ow];
    for ci in 0..c {
        for y in 0..h {
            let row: Vec<f64> = hr.data()[(ci * h + y) * w..][..w]
                .iter()
                .map(|v| v.as_f64())
                .collect();
            for (ox, taps) in x_taps.iter().enumerate() {
                let mut acc = 0.0;
                for &(src, wgt) in taps {
                    acc += wgt * row[src];
                }
                tmp[(ci * h + y) * ow + ox] = acc;
            }
        }
    }
    let mut out = vec![T::zero(); c * oh * ow];
    for ci in 0..c {
        for (oy, taps) in y_taps.iter().enumerate() {
            for ox in 0..ow {
                let mut acc = 0.0;
                for &(src, wgt) in taps {
                    acc += wgt * tmp[(ci * h + src) * ow + ox];
                }
                out[(ci * oh + oy) * ow + ox] = T::from_f64(acc);
            }
        }
    }
    Tensor::new_unchecked(vec![c, oh, ow], out)
}

/// Apply one of the eight dihedral symmetries to a (C,H,W) tensor.
/// Variants 0..4 rotate by 90 degrees times the variant; variants 4..8
/// flip horizontally first and then rotate.
pub fn augment_tensor<T: Elem>(t: &Tensor<T>, variant: u8) -> Result<Tensor<T>> {
    if variant >= 8 {
        return Err(Error::Domain {
            op: "augment",
            detail: format!("variant {variant} out of range 0..8"),
        });
    }
    let s = t.shape();
    if s.len() != 3 {
        return Err(Error::ShapeMismatch {
            op: "augment",
            lhs: s.to_vec(),
            rhs: vec![3, 0, 0],
        });
    }
    let mut cur = t.clone();
    if variant >= 4 {
        cur = hflip(&cur);
    }
    for _ in 0..variant % 4 {
        cur = rot90(&cur);
    }
    Ok(cur)
}

fn hflip<T: Elem>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = vec![T::zero(); c * h * w];
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[(ci * h + y) * w + x] = t.data()[(ci * h + y) * w + (w - 1 - x)];
            }
        }
    }
    Tensor::new_unchecked(vec![c, h, w], out).expect("same element count")
}

/// Clockwise quarter turn: (C,H,W) -> (C,W,H).
fn rot90<T: Elem>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = vec![T::zero(); c * h * w];
    for ci in 0..c {
        for y in 0..w {
            for x in 0..h {
                out[(ci * w + y) * h + x] = t.data()[(ci * h + (h - 1 - x)) * w + y];
            }
        }
    }
    Tensor::new_unchecked(vec![c, w, h], out).expect("same element count")
}

/// An LR/HR training pair with provenance.
#[derive(Debug, Clone)]
pub struct ImagePair<T> {
    pub lr: Tensor<T>,
    pub hr: Tensor<T>,
    pub source_id: String,
    pub augment_tag: u8,
}

impl<T: Elem> ImagePair<T> {
    pub fn new(lr: Tensor<T>, hr: Tensor<T>, source_id: impl Into<String>) -> Result<Self> {
        let (ls, hs) = (lr.shape(), hr.shape());
        let ok = ls.len() == 3
            && hs.len() == 3
            && ls[0] == 3
            && hs[0] == 3
            && hs[1] == ls[1] * SCALE
            && hs[2] == ls[2] * SCALE;
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "image_pair",
                lhs: ls.to_vec(),
                rhs: hs.to_vec(),
            });
        }
        for t in [&lr, &hr] {
            if t.data()
                .iter()
                .any(|v| v.as_f64() < 0.0 || v.as_f64() > 1.0)
            {
                return Err(Error::Domain {
                    op: "image_pair",
                    detail: "values must lie in [0,1]".into(),
                });
            }
        }
        Ok(Self {
            lr,
            hr,
            source_id: source_id.into(),
            augment_tag: 0,
        })
    }

    /// Same geometric transform applied to both resolutions.
    pub fn augment(&self, variant: u8) -> Result<Self> {
        Ok(Self {
            lr: augment_tensor(&self.lr, variant)?,
            hr: augment_tensor(&self.hr, variant)?,
            source_id: self.source_id.clone(),
            augment_tag: variant,
        })
    }
}

/// Where training pairs come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    Synthetic { seed: u64 },
    Directory(PathBuf),
}

/// Dataset description. `patch_size` is the HR patch edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSpec {
    pub source: DataSource,
    pub patch_size: usize,
    pub augment: bool,
    pub count: usize,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 8 || self.patch_size % SCALE != 0 {
            return Err(Error::Config(format!(
                "patch_size must be >= 8 and divisible by {SCALE}, got {}",
                self.patch_size
            )));
        }
        if self.count == 0 {
            return Err(Error::Config("dataset count must be >= 1".into()));
        }
        Ok(())
    }
}

/// In-memory dataset; iteration order is the stored order.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub pairs: Vec<ImagePair<T>>,
    pub augment: bool,
}

impl<T: Elem> Dataset<T> {
    pub fn load(spec: &DatasetSpec) -> Result<Self> {
        spec.validate()?;
        let pairs = match &spec.source {
            DataSource::Synthetic { seed } => {
                synth_dataset(*seed, spec.count, spec.patch_size)?
            }
            DataSource::Directory(dir) => load_directory(dir, spec.patch_size, spec.count)?,
        };
        Ok(Self {
            pairs,
            augment: spec.augment,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Deterministic procedural HR patches: a base gradient plus sinusoids and
/// soft rectangles, min-max normalized into [0,1], with bicubic LR mates.
pub fn synth_dataset<T: Elem>(
    seed: u64,
    count: usize,
    patch: usize,
) -> Result<Vec<ImagePair<T>>> {
    if count == 0 {
        return Err(Error::Config("synth count must be >= 1".into()));
    }
    (0..count)
        .map(|idx| {
            let hr = synth_patch::<T>(seed, idx, patch);
            let lr = downscale4(&hr)?;
            ImagePair::new(lr, hr, format!("synth:{seed}/{idx}"))
        })
        .collect()
}

fn synth_patch<T: Elem>(seed: u64, index: usize, patch: usize) -> Tensor<T> {
    let mut rng = Rng::stream(seed, &format!("synth/{index}"));
    let n = patch as f64;
    let gx = rng.next_range(-1.0, 1.0);
    let gy = rng.next_range(-1.0, 1.0);
    let n_waves = 1 + rng.next_below(3);
    let waves: Vec<(f64, f64, f64, f64)> = (0..n_waves)
        .map(|_| {
            (
                rng.next_range(0.5, 4.0),
                rng.next_range(0.5, 4.0),
                rng.next_range(0.0, std::f64::consts::TAU),
                rng.next_range(0.3, 1.0),
            )
        })
        .collect();
    let n_rects = rng.next_below(3);
    let rects: Vec<(f64, f64, f64, f64, f64)> = (0..n_rects)
        .map(|_| {
            (
                rng.next_range(0.0, 0.7) * n,
                rng.next_range(0.0, 0.7) * n,
                rng.next_range(0.15, 0.4) * n,
                rng.next_range(0.15, 0.4) * n,
                rng.next_range(-1.0, 1.0),
            )
        })
        .collect();
    let chan_shift = [
        rng.next_range(-0.2, 0.2),
        rng.next_range(-0.2, 0.2),
        rng.next_range(-0.2, 0.2),
    ];

    let mut vals = vec![0.0f64; 3 * patch * patch];
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for y in 0..patch {
        for x in 0..patch {
            let (fx, fy) = (x as f64 / n, y as f64 / n);
            let mut v = gx * fx + gy * fy;
            for &(wx, wy, phase, amp) in &waves {
                v += amp * (std::f64::consts::TAU * (wx * fx + wy * fy) + phase).sin();
            }
            for &(rx, ry, rw, rh, amp) in &rects {
                let inside = x as f64 >= rx
                    && (x as f64) < rx + rw
                    && y as f64 >= ry
                    && (y as f64) < ry + rh;
                if inside {
                    v += amp;
                }
            }
            for (c, shift) in chan_shift.iter().enumerate() {
                let cv = v + shift * fx;
                vals[(c * patch + y) * patch + x] = cv;
                lo = lo.min(cv);
                hi = hi.max(cv);
            }
        }
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    Tensor::from_fn(vec![3, patch, patch], |i| (vals[i] - lo) / span)
}

fn load_directory<T: Elem>(
    dir: &Path,
    patch: usize,
    count: usize,
) -> Result<Vec<ImagePair<T>>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("png" | "ppm")
            )
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Io(format!(
            "no .png or .ppm images in {}",
            dir.display()
        )));
    }
    files
        .iter()
        .take(count)
        .map(|path| {
            let img = read_image::<T>(path)?;
            let hr = center_crop(&img, patch)?;
            let lr = downscale4(&hr)?;
            ImagePair::new(lr, hr, path.display().to_string())
        })
        .collect()
}

fn center_crop<T: Elem>(img: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    let s = img.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    if h < patch || w < patch {
        return Err(Error::Domain {
            op: "center_crop",
            detail: format!("image {h}x{w} smaller than patch {patch}"),
        });
    }
    let (y0, x0) = ((h - patch) / 2, (w - patch) / 2);
    let mut out = vec![T::zero(); c * patch * patch];
    for ci in 0..c {
        for y in 0..patch {
            let src = &img.data()[(ci * h + y0 + y) * w + x0..][..patch];
            out[(ci * patch + y) * patch..][..patch].copy_from_slice(src);
        }
    }
    Tensor::new_unchecked(vec![c, patch, patch], out)
}

// ---- image file I/O ----

/// Quantize a unit-interval value to a byte, rounding halves up.
fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Read an 8-bit PNG or binary PPM into a (3,H,W) tensor scaled to [0,1].
pub fn read_image<T: Elem>(path: &Path) -> Result<Tensor<T>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => read_png(path),
        Some("ppm") => read_ppm(path),
        other => Err(Error::UnsupportedFormat(format!(
            "{:?} (expected .png or .ppm)",
            other
        ))),
    }
}

/// Write a (3,H,W) tensor as an 8-bit image; values are clamped to [0,1]
/// and quantized round-half-up.
pub fn write_image<T: Elem>(path: &Path, img: &Tensor<T>) -> Result<()> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::ShapeMismatch {
            op: "write_image",
            lhs: s.to_vec(),
            rhs: vec![3, 0, 0],
        });
    }
    if img.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "write_image" });
    }
    let (h, w) = (s[1], s[2]);
    let mut bytes = vec![0u8; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                bytes[(y * w + x) * 3 + c] = quantize(img.data()[(c * h + y) * w + x].as_f64());
            }
        }
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => write_png(path, &bytes, w, h),
        Some("ppm") => write_ppm(path, &bytes, w, h),
        other => Err(Error::UnsupportedFormat(format!(
            "{:?} (expected .png or .ppm)",
            other
        ))),
    }
}

fn bytes_to_tensor<T: Elem>(rgb: &[u8], w: usize, h: usize) -> Tensor<T> {
    Tensor::from_fn(vec![3, h, w], |i| {
        let c = i / (h * w);
        let y = (i / w) % h;
        let x = i % w;
        rgb[(y * w + x) * 3 + c] as f64 / 255.0
    })
}

fn read_png<T: Elem>(path: &Path) -> Result<Tensor<T>> {
    let file = fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::UnsupportedFormat(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::UnsupportedFormat(format!("{}: {e}", path.display())))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!(
            "{}: only 8-bit PNG is supported",
            path.display()
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let rgb: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => buf[..w * h * 3].to_vec(),
        png::ColorType::Rgba => buf[..w * h * 4]
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .collect(),
        png::ColorType::Grayscale => buf[..w * h].iter().flat_map(|&g| [g, g, g]).collect(),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: unsupported PNG color type {other:?}",
                path.display()
            )))
        }
    };
    Ok(bytes_to_tensor(&rgb, w, h))
}

fn write_png(path: &Path, rgb: &[u8], w: usize, h: usize) -> Result<()> {
    let file =
        fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Io(e.to_string()))?;
    writer
        .write_image_data(rgb)
        .map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

fn read_ppm<T: Elem>(path: &Path) -> Result<Tensor<T>> {
    let mut raw = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?
        .read_to_end(&mut raw)?;
    let bad = |msg: &str| Error::UnsupportedFormat(format!("{}: {msg}", path.display()));
    if !raw.starts_with(b"P6") {
        return Err(bad("not a binary PPM (P6)"));
    }
    // header: magic, width, height, maxval, single whitespace, then payload
    let mut pos = 2;
    let mut fields = Vec::new();
    while fields.len() < 3 {
        while pos < raw.len() && raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < raw.len() && raw[pos] == b'#' {
            while pos < raw.len() && raw[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < raw.len() && !raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let field: usize = std::str::from_utf8(&raw[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("malformed header"))?;
        fields.push(field);
    }
    pos += 1; // single whitespace after maxval
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    let need = w * h * 3;
    if raw.len() < pos + need {
        return Err(bad("truncated pixel data"));
    }
    Ok(bytes_to_tensor(&raw[pos..pos + need], w, h))
}

fn write_ppm(path: &Path, rgb: &[u8], w: usize, h: usize) -> Result<()> {
    let file =
        fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut out = BufWriter::new(file);
    write!(out, "P6\n{w} {h}\n255\n")?;
    out.write_all(rgb)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_interpolation_nodes() {
        assert_eq!(bicubic_kernel(0.0), 1.0);
        assert_eq!(bicubic_kernel(1.0), 0.0);
        assert_eq!(bicubic_kernel(2.0), 0.0);
        assert_eq!(bicubic_kernel(-1.0), 0.0);
    }

    #[test]
    fn kernel_half_value() {
        // 1.5 * 0.125 - 2.5 * 0.25 + 1
        assert!((bicubic_kernel(0.5) - 0.5625).abs() < 1e-12);
    }

    #[test]
    fn downscale_constant_stays_constant() {
        let hr = Tensor::<f64>::full(vec![3, 16, 16], 0.37);
        let lr = downscale4(&hr).unwrap();
        assert_eq!(lr.shape(), &[3, 4, 4]);
        for v in lr.data() {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn downscale_matches_explicit_weighted_sum() {
        // checkerboard through an independently implemented per-pixel sum
        let hr = Tensor::<f64>::from_fn(vec![1, 8, 8], |i| {
            let (y, x) = (i / 8, i % 8);
            ((x + y) % 2) as f64
        });
        let lr = downscale4(&hr).unwrap();

        let taps = |i: usize, len: usize| {
            let center = (i as f64 + 0.5) * 4.0 - 0.5;
            let mut pairs = Vec::new();
            let (lo, hi) = ((center - 8.0).ceil() as isize, (center + 8.0).floor() as isize);
            let mut sum = 0.0;
            for j in lo..=hi {
                let w = bicubic_kernel((j as f64 - center) / 4.0);
                if w != 0.0 {
                    pairs.push((j.clamp(0, len as isize - 1) as usize, w));
                    sum += w;
                }
            }
            (pairs, sum)
        };
        for oy in 0..2 {
            for ox in 0..2 {
                let (ty, sy) = taps(oy, 8);
                let (tx, sx) = taps(ox, 8);
                let mut acc = 0.0;
                for &(y, wy) in &ty {
                    for &(x, wx) in &tx {
                        acc += (wy / sy) * (wx / sx) * hr.data()[y * 8 + x];
                    }
                }
                let got = lr.data()[oy * 2 + ox];
                assert!((got - acc).abs() < 1e-10, "({oy},{ox}): {got} vs {acc}");
            }
        }
    }

    #[test]
    fn downscale_rejects_indivisible() {
        let hr = Tensor::<f64>::zeros(vec![3, 10, 12]);
        assert!(downscale4(&hr).is_err());
    }

    #[test]
    fn augment_identity_and_involutions() {
        let t = Tensor::<f64>::from_fn(vec![3, 4, 4], |i| i as f64 / 48.0);
        let same = augment_tensor(&t, 0).unwrap();
        assert_eq!(t.data(), same.data());

        // horizontal flip twice is the identity
        let f = hflip(&hflip(&t));
        assert_eq!(t.data(), f.data());

        // four quarter turns are the identity
        let r = rot90(&rot90(&rot90(&rot90(&t))));
        assert_eq!(t.data(), r.data());

        assert!(augment_tensor(&t, 8).is_err());
    }

    #[test]
    fn downscale_commutes_with_augmentations() {
        let mut rng = Rng::new(17);
        let hr = Tensor::<f64>::from_fn(vec![3, 16, 16], |_| rng.next_range(0.0, 1.0));
        for variant in 0..8 {
            let a = downscale4(&augment_tensor(&hr, variant).unwrap()).unwrap();
            let b = augment_tensor(&downscale4(&hr).unwrap(), variant).unwrap();
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-10, "variant {variant}");
            }
        }
    }

    #[test]
    fn synth_is_deterministic_and_well_formed() {
        let a = synth_dataset::<f32>(7, 16, 32).unwrap();
        let b = synth_dataset::<f32>(7, 16, 32).unwrap();
        assert_eq!(a.len(), 16);
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(pa.hr.data(), pb.hr.data());
            assert_eq!(pa.lr.data(), pb.lr.data());
            assert_eq!(pa.hr.shape(), &[3, 32, 32]);
            assert_eq!(pa.lr.shape(), &[3, 8, 8]);
        }
        let c = synth_dataset::<f32>(8, 2, 32).unwrap();
        assert_ne!(a[0].hr.data(), c[0].hr.data());
    }

    #[test]
    fn quantization_rule() {
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(0.5), 128); // round-half-up of 127.5
        assert_eq!(quantize(1.5), 255); // clamped
        assert_eq!(quantize(-0.2), 0);
    }

    #[test]
    fn png_round_trip_is_bitwise_for_quantized_tensors() {
        let dir = std::env::temp_dir().join("lsrgan_data_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("round_trip.png");
        // already-quantized values k/255
        let img = Tensor::<f32>::from_fn(vec![3, 5, 7], |i| ((i * 37) % 256) as f64 / 255.0);
        write_image(&path, &img).unwrap();
        let back = read_image::<f32>(&path).unwrap();
        assert_eq!(img.shape(), back.shape());
        assert_eq!(img.data(), back.data());
    }

    #[test]
    fn ppm_round_trip_is_bitwise_for_quantized_tensors() {
        let dir = std::env::temp_dir().join("lsrgan_data_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("round_trip.ppm");
        let img = Tensor::<f64>::from_fn(vec![3, 4, 6], |i| ((i * 11) % 256) as f64 / 255.0);
        write_image(&path, &img).unwrap();
        let back = read_image::<f64>(&path).unwrap();
        assert_eq!(img.data(), back.data());
    }

    #[test]
    fn unsupported_extension_is_error() {
        let img = Tensor::<f32>::zeros(vec![3, 4, 4]);
        let err = write_image(Path::new("/tmp/x.jpg"), &img).unwrap_err();
        assert!(matches!(err, Error::UnsupportedFormat(_)));
    }

    #[test]
    fn directory_dataset_crops_and_pairs() {
        let dir = std::env::temp_dir().join("lsrgan_dir_dataset");
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        for (i, seed) in [3u64, 4].iter().enumerate() {
            let img = synth_patch::<f32>(*seed, 0, 24);
            write_image(&dir.join(format!("img{i}.png")), &img).unwrap();
        }
        fs::write(dir.join("notes.txt"), "ignored").unwrap();

        let spec = DatasetSpec {
            source: DataSource::Directory(dir.clone()),
            patch_size: 16,
            augment: false,
            count: 8,
        };
        let ds = Dataset::<f32>::load(&spec).unwrap();
        assert_eq!(ds.len(), 2);
        for pair in &ds.pairs {
            assert_eq!(pair.hr.shape(), &[3, 16, 16]);
            assert_eq!(pair.lr.shape(), &[3, 4, 4]);
        }
        // deterministic order: sorted by file name
        assert!(ds.pairs[0].source_id.ends_with("img0.png"));

        let empty = DatasetSpec {
            source: DataSource::Directory(dir.join("missing")),
            patch_size: 16,
            augment: false,
            count: 1,
        };
        assert!(Dataset::<f32>::load(&empty).is_err());
    }
}
