//! 2-D cross-correlation kernels (forward and both backward passes).
//!
//! Layout is NCHW for activations and OIKK for kernels, with no physical
//! padding. Stride-1 convolutions (the bulk of the compute) go through an
//! im2col buffer so the innermost loops run over full output planes; strided
//! convolutions use a direct tap-wise path. Accumulation order over
//! (in-channel, ky, kx) is identical in both paths and fixed, so results are
//! bit-reproducible.

use crate::elem::Elem;

/// Output spatial dims for the standard floor formula, or `None` when a
/// dimension would be < 1.
pub fn conv2d_out_dims(
    in_h: usize,
    in_w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Option<(usize, usize)> {
    let oh = (in_h + 2 * pad).checked_sub(k)? / stride + 1;
    let ow = (in_w + 2 * pad).checked_sub(k)? / stride + 1;
    if oh == 0 || ow == 0 {
        None
    } else {
        Some((oh, ow))
    }
}

/// Valid output-coordinate range [lo, hi) such that
/// `0 <= o*stride + tap - pad < input_extent` for all `o` in the range.
#[inline]
fn valid_range(
    out_extent: usize,
    in_extent: usize,
    tap: usize,
    stride: usize,
    pad: usize,
) -> (usize, usize) {
    let tap = tap as isize;
    let pad = pad as isize;
    let s = stride as isize;
    let lo = if tap >= pad {
        0isize
    } else {
        (pad - tap + s - 1) / s
    };
    let hi_num = in_extent as isize - 1 + pad - tap;
    let hi = if hi_num < 0 { 0 } else { hi_num / s + 1 };
    let lo = lo.clamp(0, out_extent as isize) as usize;
    let hi = hi.clamp(0, out_extent as isize) as usize;
    (lo, hi.max(lo))
}

/// Scatter one image's planes into patch-row layout:
/// `cols[(i*k*k + ky*k + kx) * oh*ow + oy*ow + ox] = x[i][oy+ky-pad][ox+kx-pad]`
/// with zeros where the tap falls outside the input. Stride 1 only.
fn im2col<T: Elem>(
    input: &[T],
    (ic, ih, iw): (usize, usize, usize),
    k: usize,
    pad: usize,
    (oh, ow): (usize, usize),
    cols: &mut [T],
) {
    let ohow = oh * ow;
    for i in 0..ic {
        let plane = &input[i * ih * iw..][..ih * iw];
        for ky in 0..k {
            let (oy_lo, oy_hi) = valid_range(oh, ih, ky, 1, pad);
            for kx in 0..k {
                let row = &mut cols[((i * k + ky) * k + kx) * ohow..][..ohow];
                let (ox_lo, ox_hi) = valid_range(ow, iw, kx, 1, pad);
                row[..oy_lo * ow].fill(T::zero());
                row[oy_hi * ow..].fill(T::zero());
                for oy in oy_lo..oy_hi {
                    let iy = oy + ky - pad;
                    let dst = &mut row[oy * ow..][..ow];
                    dst[..ox_lo].fill(T::zero());
                    dst[ox_hi..].fill(T::zero());
                    if ox_lo < ox_hi {
                        let shift = (ox_lo + kx) - pad;
                        dst[ox_lo..ox_hi]
                            .copy_from_slice(&plane[iy * iw + shift..][..ox_hi - ox_lo]);
                    }
                }
            }
        }
    }
}

/// Inverse of [`im2col`]: add every patch row back into the input gradient.
fn col2im_add<T: Elem>(
    cols: &[T],
    (ic, ih, iw): (usize, usize, usize),
    k: usize,
    pad: usize,
    (oh, ow): (usize, usize),
    din: &mut [T],
) {
    let ohow = oh * ow;
    for i in 0..ic {
        let plane = &mut din[i * ih * iw..][..ih * iw];
        for ky in 0..k {
            let (oy_lo, oy_hi) = valid_range(oh, ih, ky, 1, pad);
            for kx in 0..k {
                let row = &cols[((i * k + ky) * k + kx) * ohow..][..ohow];
                let (ox_lo, ox_hi) = valid_range(ow, iw, kx, 1, pad);
                if ox_lo >= ox_hi {
                    continue;
                }
                for oy in oy_lo..oy_hi {
                    let iy = oy + ky - pad;
                    let shift = (ox_lo + kx) - pad;
                    let dst = &mut plane[iy * iw + shift..][..ox_hi - ox_lo];
                    let src = &row[oy * ow + ox_lo..][..ox_hi - ox_lo];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = *d + *s;
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy<T: Elem>(dst: &mut [T], src: &[T], a: T) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + a * *s;
    }
}

/// 16-lane dot product. The lane structure and combine tree are fixed, so
/// the result is deterministic (though not equal to a strictly sequential
/// sum); the lanes let the reduction vectorize.
#[inline]
pub(crate) fn dot<T: Elem>(a: &[T], b: &[T]) -> T {
    const LANES: usize = 16;
    let mut acc = [T::zero(); LANES];
    let chunks = a.len() / LANES;
    for c in 0..chunks {
        let av = &a[c * LANES..][..LANES];
        let bv = &b[c * LANES..][..LANES];
        for l in 0..LANES {
            acc[l] = acc[l] + av[l] * bv[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * LANES..a.len() {
        tail = tail + a[i] * b[i];
    }
    let mut width = LANES;
    while width > 1 {
        width /= 2;
        for l in 0..width {
            acc[l] = acc[l] + acc[l + width];
        }
    }
    acc[0] + tail
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_raw<T: Elem>(
    input: &[T],
    (bn, ic, ih, iw): (usize, usize, usize, usize),
    kernel: &[T],
    (oc, kic, kh, kw): (usize, usize, usize, usize),
    stride: usize,
    pad: usize,
    out: &mut [T],
    (oh, ow): (usize, usize),
) {
    debug_assert_eq!(ic, kic);
    debug_assert_eq!(kh, kw);
    let k = kh;
    if stride == 1 {
        let ohow = oh * ow;
        let kk = ic * k * k;
        let mut cols = vec![T::zero(); kk * ohow];
        for n in 0..bn {
            im2col(
                &input[n * ic * ih * iw..][..ic * ih * iw],
                (ic, ih, iw),
                k,
                pad,
                (oh, ow),
                &mut cols,
            );
            for o in 0..oc {
                let out_row = &mut out[(n * oc + o) * ohow..][..ohow];
                let w_row = &kernel[o * kk..][..kk];
                for (j, &wv) in w_row.iter().enumerate() {
                    axpy(out_row, &cols[j * ohow..][..ohow], wv);
                }
            }
        }
        return;
    }
    for n in 0..bn {
        for o in 0..oc {
            let out_plane = &mut out[(n * oc + o) * oh * ow..][..oh * ow];
            for i in 0..ic {
                let in_plane = &input[(n * ic + i) * ih * iw..][..ih * iw];
                let w_base = &kernel[(o * ic + i) * k * k..][..k * k];
                for ky in 0..k {
                    let (oy_lo, oy_hi) = valid_range(oh, ih, ky, stride, pad);
                    for kx in 0..k {
                        let wv = w_base[ky * k + kx];
                        let (ox_lo, ox_hi) = valid_range(ow, iw, kx, stride, pad);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - pad;
                            let in_row = &in_plane[iy * iw..][..iw];
                            let out_row = &mut out_plane[oy * ow..][..ow];
                            for ox in ox_lo..ox_hi {
                                let ix = ox * stride + kx - pad;
                                out_row[ox] = out_row[ox] + wv * in_row[ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates d(loss)/d(input) into `din` given the upstream gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_input<T: Elem>(
    grad_out: &[T],
    (bn, oc, oh, ow): (usize, usize, usize, usize),
    kernel: &[T],
    (koc, ic, kh, _kw): (usize, usize, usize, usize),
    stride: usize,
    pad: usize,
    din: &mut [T],
    (ih, iw): (usize, usize),
) {
    debug_assert_eq!(oc, koc);
    let k = kh;
    if stride == 1 {
        let ohow = oh * ow;
        let kk = ic * k * k;
        let mut dcols = vec![T::zero(); kk * ohow];
        for n in 0..bn {
            dcols.fill(T::zero());
            for o in 0..oc {
                let g_row = &grad_out[(n * oc + o) * ohow..][..ohow];
                let w_row = &kernel[o * kk..][..kk];
                for (j, &wv) in w_row.iter().enumerate() {
                    axpy(&mut dcols[j * ohow..][..ohow], g_row, wv);
                }
            }
            col2im_add(
                &dcols,
                (ic, ih, iw),
                k,
                pad,
                (oh, ow),
                &mut din[n * ic * ih * iw..][..ic * ih * iw],
            );
        }
        return;
    }
    for n in 0..bn {
        for i in 0..ic {
            let din_plane = &mut din[(n * ic + i) * ih * iw..][..ih * iw];
            for o in 0..oc {
                let g_plane = &grad_out[(n * oc + o) * oh * ow..][..oh * ow];
                let w_base = &kernel[(o * ic + i) * k * k..][..k * k];
                for ky in 0..k {
                    let (oy_lo, oy_hi) = valid_range(oh, ih, ky, stride, pad);
                    for kx in 0..k {
                        let wv = w_base[ky * k + kx];
                        let (ox_lo, ox_hi) = valid_range(ow, iw, kx, stride, pad);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - pad;
                            let g_row = &g_plane[oy * ow..][..ow];
                            let din_row = &mut din_plane[iy * iw..][..iw];
                            for ox in ox_lo..ox_hi {
                                let ix = ox * stride + kx - pad;
                                din_row[ix] = din_row[ix] + wv * g_row[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates d(loss)/d(kernel) into `dw` given the upstream gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_kernel<T: Elem>(
    grad_out: &[T],
    (bn, oc, oh, ow): (usize, usize, usize, usize),
    input: &[T],
    (_ibn, ic, ih, iw): (usize, usize, usize, usize),
    stride: usize,
    pad: usize,
    dw: &mut [T],
    k: usize,
) {
    if stride == 1 {
        let ohow = oh * ow;
        let kk = ic * k * k;
        let mut cols = vec![T::zero(); kk * ohow];
        for n in 0..bn {
            im2col(
                &input[n * ic * ih * iw..][..ic * ih * iw],
                (ic, ih, iw),
                k,
                pad,
                (oh, ow),
                &mut cols,
            );
            for o in 0..oc {
                let g_row = &grad_out[(n * oc + o) * ohow..][..ohow];
                let dw_row = &mut dw[o * kk..][..kk];
                for (j, d) in dw_row.iter_mut().enumerate() {
                    *d = *d + dot(g_row, &cols[j * ohow..][..ohow]);
                }
            }
        }
        return;
    }
    for o in 0..oc {
        for i in 0..ic {
            let dw_base = &mut dw[(o * ic + i) * k * k..][..k * k];
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_range(oh, ih, ky, stride, pad);
                for kx in 0..k {
                    let (ox_lo, ox_hi) = valid_range(ow, iw, kx, stride, pad);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let mut acc = T::zero();
                    for n in 0..bn {
                        let g_plane = &grad_out[(n * oc + o) * oh * ow..][..oh * ow];
                        let in_plane = &input[(n * ic + i) * ih * iw..][..ih * iw];
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - pad;
                            let g_row = &g_plane[oy * ow..][..ow];
                            let in_row = &in_plane[iy * iw..][..iw];
                            for ox in ox_lo..ox_hi {
                                let ix = ox * stride + kx - pad;
                                acc = acc + g_row[ox] * in_row[ix];
                            }
                        }
                    }
                    dw_base[ky * k + kx] = dw_base[ky * k + kx] + acc;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_dims_floor_formula() {
        assert_eq!(conv2d_out_dims(8, 8, 3, 1, 1), Some((8, 8)));
        assert_eq!(conv2d_out_dims(8, 8, 3, 2, 1), Some((4, 4)));
        assert_eq!(conv2d_out_dims(2, 2, 3, 1, 0), None);
        assert_eq!(conv2d_out_dims(5, 5, 3, 2, 1), Some((3, 3)));
    }

    #[test]
    fn valid_range_covers_padded_taps() {
        // 3x3 kernel, pad 1, stride 1, extent 4: tap 0 misses output 0.
        assert_eq!(valid_range(4, 4, 0, 1, 1), (1, 4));
        assert_eq!(valid_range(4, 4, 1, 1, 1), (0, 4));
        assert_eq!(valid_range(4, 4, 2, 1, 1), (0, 3));
    }

    #[test]
    fn im2col_then_col2im_is_multiplicity_map() {
        // col2im(im2col(x)) multiplies each pixel by the number of patches
        // covering it; interior pixels of a 3x3/pad-1 conv are covered 9x.
        let ih = 5;
        let iw = 5;
        let x: Vec<f64> = (0..ih * iw).map(|i| i as f64 + 1.0).collect();
        let mut cols = vec![0.0; 9 * ih * iw];
        im2col(&x, (1, ih, iw), 3, 1, (ih, iw), &mut cols);
        let mut back = vec![0.0; ih * iw];
        col2im_add(&cols, (1, ih, iw), 3, 1, (ih, iw), &mut back);
        assert_eq!(back[2 * iw + 2], 9.0 * x[2 * iw + 2]);
        assert_eq!(back[0], 4.0 * x[0]);
    }
}
