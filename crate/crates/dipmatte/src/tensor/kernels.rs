//! CPU kernels for the op set. Forward and adjoint pairs, no tape knowledge.

use super::Element;

/// Reflect index without edge repetition: -1 -> 1, n -> n-2.
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let mut i = i;
    // One bounce suffices for pad < n, which conv2d's size check guarantees.
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * n - 2 - i;
    }
    i as usize
}

/// Materializes the reflect-padded input plane stack: `[c, h+2p, w+2p]`.
pub fn pad_reflect<E: Element>(input: &[E], c: usize, h: usize, w: usize, p: usize) -> Vec<E> {
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut out = vec![E::zero(); c * hp * wp];
    for ch in 0..c {
        let src = &input[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * hp * wp..(ch + 1) * hp * wp];
        for py in 0..hp {
            let sy = reflect(py as isize - p as isize, h);
            for px in 0..wp {
                let sx = reflect(px as isize - p as isize, w);
                dst[py * wp + px] = src[sy * w + sx];
            }
        }
    }
    out
}

/// Output spatial size for reflect-padded conv: `ceil(n / stride)`.
#[inline]
pub fn conv_out_size(n: usize, stride: usize) -> usize {
    n.div_ceil(stride)
}

/// Direct convolution over a pre-padded input.
/// `kernel` is `[c_out, c_in, k, k]`; output is `[c_out, oh, ow]`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward<E: Element>(
    padded: &[E],
    c_in: usize,
    hp: usize,
    wp: usize,
    kernel: &[E],
    c_out: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> Vec<E> {
    let mut out = vec![E::zero(); c_out * oh * ow];
    for co in 0..c_out {
        let oplane = &mut out[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..c_in {
            let pplane = &padded[ci * hp * wp..(ci + 1) * hp * wp];
            let kbase = (co * c_in + ci) * k * k;
            for ky in 0..k {
                for kx in 0..k {
                    let w = kernel[kbase + ky * k + kx];
                    if w == E::zero() {
                        continue;
                    }
                    for oy in 0..oh {
                        let prow = &pplane[(oy * stride + ky) * wp + kx..];
                        let orow = &mut oplane[oy * ow..(oy + 1) * ow];
                        if stride == 1 {
                            for (o, p) in orow.iter_mut().zip(prow.iter()) {
                                *o += w * *p;
                            }
                        } else {
                            for (ox, o) in orow.iter_mut().enumerate() {
                                *o += w * prow[ox * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of `conv2d_forward` with respect to the kernel.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_grad_kernel<E: Element>(
    padded: &[E],
    c_in: usize,
    hp: usize,
    wp: usize,
    grad_out: &[E],
    c_out: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> Vec<E> {
    let mut gk = vec![E::zero(); c_out * c_in * k * k];
    for co in 0..c_out {
        let gplane = &grad_out[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..c_in {
            let pplane = &padded[ci * hp * wp..(ci + 1) * hp * wp];
            let kbase = (co * c_in + ci) * k * k;
            for ky in 0..k {
                for kx in 0..k {
                    let mut acc = E::zero();
                    for oy in 0..oh {
                        let prow = &pplane[(oy * stride + ky) * wp + kx..];
                        let grow = &gplane[oy * ow..(oy + 1) * ow];
                        if stride == 1 {
                            for (g, p) in grow.iter().zip(prow.iter()) {
                                acc += *g * *p;
                            }
                        } else {
                            for (ox, g) in grow.iter().enumerate() {
                                acc += *g * prow[ox * stride];
                            }
                        }
                    }
                    gk[kbase + ky * k + kx] = acc;
                }
            }
        }
    }
    gk
}

/// Adjoint of `conv2d_forward` with respect to the (unpadded) input.
/// Accumulates through the padded buffer, then folds reflections back.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_grad_input<E: Element>(
    grad_out: &[E],
    kernel: &[E],
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> Vec<E> {
    let p = k / 2;
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut gpad = vec![E::zero(); c_in * hp * wp];
    for ci in 0..c_in {
        let gpplane = &mut gpad[ci * hp * wp..(ci + 1) * hp * wp];
        for co in 0..c_out {
            let gplane = &grad_out[co * oh * ow..(co + 1) * oh * ow];
            let kbase = (co * c_in + ci) * k * k;
            for ky in 0..k {
                for kx in 0..k {
                    let wgt = kernel[kbase + ky * k + kx];
                    if wgt == E::zero() {
                        continue;
                    }
                    for oy in 0..oh {
                        let prow = &mut gpplane[(oy * stride + ky) * wp + kx..];
                        let grow = &gplane[oy * ow..(oy + 1) * ow];
                        if stride == 1 {
                            for (p, g) in prow.iter_mut().zip(grow.iter()) {
                                *p += wgt * *g;
                            }
                        } else {
                            for (ox, g) in grow.iter().enumerate() {
                                prow[ox * stride] += wgt * *g;
                            }
                        }
                    }
                }
            }
        }
    }
    // Fold padded adjoints onto their reflected sources.
    let mut gin = vec![E::zero(); c_in * h * w];
    for ci in 0..c_in {
        let src = &gpad[ci * hp * wp..(ci + 1) * hp * wp];
        let dst = &mut gin[ci * h * w..(ci + 1) * h * w];
        for py in 0..hp {
            let sy = reflect(py as isize - p as isize, h);
            for px in 0..wp {
                let sx = reflect(px as isize - p as isize, w);
                dst[sy * w + sx] += src[py * wp + px];
            }
        }
    }
    gin
}

pub fn upsample2_forward<E: Element>(input: &[E], c: usize, h: usize, w: usize) -> Vec<E> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![E::zero(); c * oh * ow];
    for ch in 0..c {
        let src = &input[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for y in 0..h {
            for x in 0..w {
                let v = src[y * w + x];
                let base = 2 * y * ow + 2 * x;
                dst[base] = v;
                dst[base + 1] = v;
                dst[base + ow] = v;
                dst[base + ow + 1] = v;
            }
        }
    }
    out
}

pub fn upsample2_backward<E: Element>(grad_out: &[E], c: usize, h: usize, w: usize) -> Vec<E> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut gin = vec![E::zero(); c * h * w];
    for ch in 0..c {
        let g = &grad_out[ch * oh * ow..(ch + 1) * oh * ow];
        let d = &mut gin[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let base = 2 * y * ow + 2 * x;
                d[y * w + x] = g[base] + g[base + 1] + g[base + ow] + g[base + ow + 1];
            }
        }
    }
    gin
}

/// Per-pixel L1 norm of forward spatial differences, summed over channels.
/// The last row/column use a zero difference.
pub fn spatial_grad_l1_forward<E: Element>(input: &[E], c: usize, h: usize, w: usize) -> Vec<E> {
    let mut out = vec![E::zero(); h * w];
    for ch in 0..c {
        let plane = &input[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let v = plane[y * w + x];
                let mut acc = E::zero();
                if x + 1 < w {
                    acc += (plane[y * w + x + 1] - v).abs();
                }
                if y + 1 < h {
                    acc += (plane[(y + 1) * w + x] - v).abs();
                }
                out[y * w + x] += acc;
            }
        }
    }
    out
}

pub fn spatial_grad_l1_backward<E: Element>(
    input: &[E],
    grad_out: &[E],
    c: usize,
    h: usize,
    w: usize,
) -> Vec<E> {
    let mut gin = vec![E::zero(); c * h * w];
    for ch in 0..c {
        let plane = &input[ch * h * w..(ch + 1) * h * w];
        let gplane = &mut gin[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let v = plane[y * w + x];
                let g = grad_out[y * w + x];
                if x + 1 < w {
                    let s = sign(plane[y * w + x + 1] - v);
                    gplane[y * w + x + 1] += g * s;
                    gplane[y * w + x] -= g * s;
                }
                if y + 1 < h {
                    let s = sign(plane[(y + 1) * w + x] - v);
                    gplane[(y + 1) * w + x] += g * s;
                    gplane[y * w + x] -= g * s;
                }
            }
        }
    }
    gin
}

#[inline]
fn sign<E: Element>(v: E) -> E {
    if v > E::zero() {
        E::one()
    } else if v < E::zero() {
        -E::one()
    } else {
        E::zero()
    }
}

/// Per-channel normalization over H×W. Returns (output, mean, inv_std).
pub fn instance_norm_forward<E: Element>(
    input: &[E],
    c: usize,
    hw: usize,
    eps: E,
) -> (Vec<E>, Vec<E>, Vec<E>) {
    let mut out = vec![E::zero(); c * hw];
    let mut means = vec![E::zero(); c];
    let mut inv_stds = vec![E::zero(); c];
    let n = E::from_f64(hw as f64);
    for ch in 0..c {
        let src = &input[ch * hw..(ch + 1) * hw];
        let dst = &mut out[ch * hw..(ch + 1) * hw];
        let mut mean = E::zero();
        for v in src {
            mean += *v;
        }
        mean /= n;
        let mut var = E::zero();
        for v in src {
            let d = *v - mean;
            var += d * d;
        }
        var /= n;
        let inv_std = E::one() / (var + eps).sqrt();
        for (d, v) in dst.iter_mut().zip(src.iter()) {
            *d = (*v - mean) * inv_std;
        }
        means[ch] = mean;
        inv_stds[ch] = inv_std;
    }
    (out, means, inv_stds)
}

/// Adjoint of instance norm, using the saved normalized output and inv_std.
pub fn instance_norm_backward<E: Element>(
    normalized: &[E],
    grad_out: &[E],
    inv_stds: &[E],
    c: usize,
    hw: usize,
) -> Vec<E> {
    let mut gin = vec![E::zero(); c * hw];
    let n = E::from_f64(hw as f64);
    for ch in 0..c {
        let y = &normalized[ch * hw..(ch + 1) * hw];
        let g = &grad_out[ch * hw..(ch + 1) * hw];
        let d = &mut gin[ch * hw..(ch + 1) * hw];
        let mut gsum = E::zero();
        let mut gysum = E::zero();
        for i in 0..hw {
            gsum += g[i];
            gysum += g[i] * y[i];
        }
        let gmean = gsum / n;
        let gymean = gysum / n;
        let inv_std = inv_stds[ch];
        for i in 0..hw {
            d[i] = inv_std * (g[i] - gmean - y[i] * gymean);
        }
    }
    gin
}
