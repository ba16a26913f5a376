//! im2col / col2im lowering for 2-D convolution over NCHW batches.

use super::tensor::Element;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn columns(&self) -> usize {
        self.n * self.ho * self.wo
    }
}

/// Column matrix of shape `[c*kh*kw, n*ho*wo]`; out-of-bounds taps read zero.
pub(crate) fn im2col<T: Element>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let cols = g.columns();
    let plane = g.ho * g.wo;
    let mut col = vec![T::zero(); g.patch() * cols];
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst_row = &mut col[row * cols..(row + 1) * cols];
                for ni in 0..g.n {
                    let src = &x[(ni * g.c + ci) * g.h * g.w..(ni * g.c + ci + 1) * g.h * g.w];
                    let dst = &mut dst_row[ni * plane..(ni + 1) * plane];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let dst_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-adds columns back into an NCHW buffer.
pub(crate) fn col2im<T: Element>(col: &[T], g: &ConvGeom) -> Vec<T> {
    let cols = g.columns();
    let plane = g.ho * g.wo;
    let mut x = vec![T::zero(); g.n * g.c * g.h * g.w];
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src_row = &col[row * cols..(row + 1) * cols];
                for ni in 0..g.n {
                    let dst = &mut x[(ni * g.c + ci) * g.h * g.w..(ni * g.c + ci + 1) * g.h * g.w];
                    let src = &src_row[ni * plane..(ni + 1) * plane];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst_row[ix as usize] += src[oy * g.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[o, n*plane]` -> `[n, o, plane]`
pub(crate) fn channels_to_batch<T: Element>(m: &[T], n: usize, o: usize, plane: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * o * plane];
    for oi in 0..o {
        for ni in 0..n {
            let src = &m[oi * n * plane + ni * plane..oi * n * plane + (ni + 1) * plane];
            out[(ni * o + oi) * plane..(ni * o + oi + 1) * plane].copy_from_slice(src);
        }
    }
    out
}

/// `[n, o, plane]` -> `[o, n*plane]`
pub(crate) fn batch_to_channels<T: Element>(x: &[T], n: usize, o: usize, plane: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * o * plane];
    for ni in 0..n {
        for oi in 0..o {
            let src = &x[(ni * o + oi) * plane..(ni * o + oi + 1) * plane];
            out[oi * n * plane + ni * plane..oi * n * plane + (ni + 1) * plane].copy_from_slice(src);
        }
    }
    out
}

/// Stride-1 "same" convolutions over large planes skip the column buffer:
/// each kernel tap becomes one shifted multiply-add over a whole plane.
pub(crate) fn prefers_direct(g: &ConvGeom) -> bool {
    g.stride == 1 && g.ho == g.h && g.wo == g.w && g.h * g.w >= 256
}

/// Horizontal tap offsets `kj - pad`.
fn column_offsets(g: &ConvGeom) -> impl Iterator<Item = isize> + '_ {
    (0..g.kw).map(move |kj| kj as isize - g.pad as isize)
}

/// Copy of `plane` (width `w`) read at horizontal offset `dx`: the columns a
/// flat shift would wrap into the neighbouring row are zeroed.
fn wrap_masked<T: Element>(plane: &[T], w: usize, dx: isize) -> Vec<T> {
    let mut out = plane.to_vec();
    let bad = if dx > 0 { 0..dx as usize } else { (w as isize + dx) as usize..w };
    for row in out.chunks_mut(w) {
        row[bad.clone()].iter_mut().for_each(|v| *v = T::zero());
    }
    out
}

/// Overlap of a flat shift where destination `i` reads source `i + shift`:
/// `(dst_start, src_start, len)`.
fn flat_span(len: usize, shift: isize) -> (usize, usize, usize) {
    let lo = (-shift).max(0);
    let hi = (len as isize - shift).min(len as isize);
    if lo >= hi {
        (0, 0, 0)
    } else {
        (lo as usize, (lo + shift) as usize, (hi - lo) as usize)
    }
}

fn axpy<T: Element>(dst: &mut [T], src: &[T], k: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

/// Dot product with eight independent partial sums so it vectorizes.
fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail = ca.remainder().iter().zip(cb.remainder()).fold(T::zero(), |s, (&p, &q)| s + p * q);
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

fn tap<T: Element>(w: &[T], g: &ConvGeom, oi: usize, ci: usize, ki: usize, kj: usize) -> T {
    w[((oi * g.c + ci) * g.kh + ki) * g.kw + kj]
}

/// Masked copies of every `[n, c]` plane of `x`, one per horizontal offset:
/// index `((ni * c + ci) * kw + kj) * plane`.
fn masked_planes<T: Element>(x: &[T], planes: usize, g: &ConvGeom, negate: bool) -> Vec<T> {
    let plane = g.h * g.w;
    let mut out = Vec::with_capacity(planes * g.kw * plane);
    for p in 0..planes {
        let src = &x[p * plane..(p + 1) * plane];
        for dx in column_offsets(g) {
            out.extend(wrap_masked(src, g.w, if negate { -dx } else { dx }));
        }
    }
    out
}

/// Forward pass, NCHW in and out.
pub(crate) fn direct_forward<T: Element>(x: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let plane = g.h * g.w;
    let masked = masked_planes(x, g.n * g.c, g, false);
    let mut out = vec![T::zero(); g.n * g.o * plane];
    for ni in 0..g.n {
        for oi in 0..g.o {
            let dst = &mut out[(ni * g.o + oi) * plane..(ni * g.o + oi + 1) * plane];
            for ci in 0..g.c {
                for ki in 0..g.kh {
                    let dy = ki as isize - g.pad as isize;
                    for (kj, dx) in column_offsets(g).enumerate() {
                        let src = &masked[((ni * g.c + ci) * g.kw + kj) * plane..][..plane];
                        let (d0, s0, n) = flat_span(plane, dy * g.w as isize + dx);
                        axpy(&mut dst[d0..d0 + n], &src[s0..s0 + n], tap(w, g, oi, ci, ki, kj));
                    }
                }
            }
        }
    }
    out
}

/// Input gradient from the output gradient `dy` (NCHW).
pub(crate) fn direct_input_grad<T: Element>(dy: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let plane = g.h * g.w;
    // dx[i] gathers dy[i - offset], so the source is read at the negated offset
    let masked = masked_planes(dy, g.n * g.o, g, true);
    let mut dx = vec![T::zero(); g.n * g.c * plane];
    for ni in 0..g.n {
        for ci in 0..g.c {
            let dst = &mut dx[(ni * g.c + ci) * plane..(ni * g.c + ci + 1) * plane];
            for oi in 0..g.o {
                for ki in 0..g.kh {
                    let oy = ki as isize - g.pad as isize;
                    for (kj, ox) in column_offsets(g).enumerate() {
                        let src = &masked[((ni * g.o + oi) * g.kw + kj) * plane..][..plane];
                        let (d0, s0, n) = flat_span(plane, -(oy * g.w as isize + ox));
                        axpy(&mut dst[d0..d0 + n], &src[s0..s0 + n], tap(w, g, oi, ci, ki, kj));
                    }
                }
            }
        }
    }
    dx
}

/// Weight gradient, laid out like the kernel `[O,C,KH,KW]`.
pub(crate) fn direct_weight_grad<T: Element>(x: &[T], dy: &[T], g: &ConvGeom) -> Vec<T> {
    let plane = g.h * g.w;
    let masked = masked_planes(x, g.n * g.c, g, false);
    let mut dw = vec![T::zero(); g.o * g.c * g.kh * g.kw];
    for oi in 0..g.o {
        for ci in 0..g.c {
            for ki in 0..g.kh {
                let oy = ki as isize - g.pad as isize;
                for (kj, ox) in column_offsets(g).enumerate() {
                    let (d0, s0, n) = flat_span(plane, oy * g.w as isize + ox);
                    let mut acc = T::zero();
                    for ni in 0..g.n {
                        let d = &dy[(ni * g.o + oi) * plane + d0..][..n];
                        let s = &masked[((ni * g.c + ci) * g.kw + kj) * plane + s0..][..n];
                        acc += dot(d, s);
                    }
                    dw[((oi * g.c + ci) * g.kh + ki) * g.kw + kj] = acc;
                }
            }
        }
    }
    dw
}
