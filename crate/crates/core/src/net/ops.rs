//! Tensor primitives with hand-written backward passes. Tensors are flat
//! channel-major (C, H, W) slices.

use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub dil: usize,
    pub h_in: usize,
    pub w_in: usize,
}

impl ConvShape {
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize, dil: usize, h_in: usize, w_in: usize) -> Self {
        ConvShape { cin, cout, k, stride, dil, h_in, w_in }
    }
    pub fn pad(&self) -> usize {
        self.dil * (self.k - 1) / 2
    }
    pub fn h_out(&self) -> usize {
        self.h_in.div_ceil(self.stride)
    }
    pub fn w_out(&self) -> usize {
        self.w_in.div_ceil(self.stride)
    }
    pub fn in_len(&self) -> usize {
        self.cin * self.h_in * self.w_in
    }
    pub fn out_len(&self) -> usize {
        self.cout * self.h_out() * self.w_out()
    }
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }
}

/// Σ a·b with eight independent accumulators so the loop vectorises.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]);
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        s += x * y;
    }
    s
}

/// y += alpha·x
#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (d, &v) in y.iter_mut().zip(x) {
        *d += alpha * v;
    }
}

/// Geometry of the phase-plane layout used by the convolutions: the input is
/// zero padded and split into stride×stride phase planes, which turns every
/// tap into one contiguous shifted run over the whole output.
struct Phases {
    s: usize,
    hq: usize,
    wq: usize,
    /// Flattened output length (rows of width `wq`).
    len: usize,
}

impl Phases {
    fn new(sh: &ConvShape) -> Self {
        let s = sh.stride;
        let reach = (sh.k - 1) * sh.dil / s;
        let wq = sh.w_out() + reach + 1;
        let hq = sh.h_out() + reach + 1;
        Phases { s, hq, wq, len: sh.h_out() * wq }
    }
    fn plane_len(&self) -> usize {
        self.hq * self.wq
    }
    /// (phase plane, flattened shift) for tap (ky, kx).
    fn tap(&self, sh: &ConvShape, ky: usize, kx: usize) -> (usize, usize) {
        let (dy, dx) = (ky * sh.dil, kx * sh.dil);
        ((dy % self.s) * self.s + dx % self.s, (dy / self.s) * self.wq + dx / self.s)
    }
    /// Runs (input row, phase, plane row, first input column, first plane
    /// column, count) covering the interior of the padded input.
    fn runs(&self, sh: &ConvShape, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
        let pad = sh.pad();
        let pl = self.plane_len();
        for r in 0..sh.h_in {
            let rp = r + pad;
            let (py, qr) = (rp % self.s, rp / self.s);
            if qr >= self.hq {
                continue;
            }
            for px in 0..self.s {
                let c0 = (px + self.s - pad % self.s) % self.s;
                if c0 >= sh.w_in {
                    continue;
                }
                let q0 = (c0 + pad) / self.s;
                let n = ((sh.w_in - c0).div_ceil(self.s)).min(self.wq.saturating_sub(q0));
                f(r * sh.w_in + c0, (py * self.s + px) * pl + qr * self.wq + q0, n, self.s, 0);
            }
        }
    }
    /// Scatter one padded input channel into the phase planes.
    fn split<T: Real>(&self, sh: &ConvShape, x: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|v| *v = T::zero());
        self.runs(sh, |src, dst, n, step, _| {
            for (j, d) in out[dst..dst + n].iter_mut().enumerate() {
                *d = x[src + j * step];
            }
        });
    }
    fn merge_add<T: Real>(&self, sh: &ConvShape, d: &[T], dx: &mut [T]) {
        self.runs(sh, |dst, src, n, step, _| {
            for (j, &v) in d[src..src + n].iter().enumerate() {
                dx[dst + j * step] += v;
            }
        });
    }
}

/// `out += conv(x, w)`; the caller initialises `out` (zeros or bias).
pub fn conv_forward<T: Real>(sh: &ConvShape, x: &[T], w: &[T], out: &mut [T]) {
    let (ho, wo) = (sh.h_out(), sh.w_out());
    let (hi, wi) = (sh.h_in, sh.w_in);
    debug_assert_eq!(x.len(), sh.in_len());
    debug_assert_eq!(out.len(), sh.out_len());
    let kk = sh.k * sh.k;
    if kk == 1 && sh.stride == 1 {
        let n = hi * wi;
        for o in 0..sh.cout {
            for i in 0..sh.cin {
                axpy(w[o * sh.cin + i], &x[i * n..(i + 1) * n], &mut out[o * n..(o + 1) * n]);
            }
        }
        return;
    }
    let ph = Phases::new(sh);
    let pl = ph.plane_len();
    let mut planes = vec![T::zero(); sh.stride * sh.stride * pl];
    let mut buf = vec![T::zero(); sh.cout * ph.len];
    for i in 0..sh.cin {
        ph.split(sh, &x[i * hi * wi..(i + 1) * hi * wi], &mut planes);
        for o in 0..sh.cout {
            let acc = &mut buf[o * ph.len..(o + 1) * ph.len];
            let w_oi = &w[(o * sh.cin + i) * kk..(o * sh.cin + i + 1) * kk];
            for ky in 0..sh.k {
                for kx in 0..sh.k {
                    let wv = w_oi[ky * sh.k + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    let (p, shift) = ph.tap(sh, ky, kx);
                    axpy(wv, &planes[p * pl + shift..p * pl + shift + ph.len], acc);
                }
            }
        }
    }
    for o in 0..sh.cout {
        for oy in 0..ho {
            let src = &buf[o * ph.len + oy * ph.wq..o * ph.len + oy * ph.wq + wo];
            for (d, &v) in out[(o * ho + oy) * wo..(o * ho + oy + 1) * wo].iter_mut().zip(src) {
                *d += v;
            }
        }
    }
}

/// Accumulate weight gradients into `dw` and, if given, input gradients into `dx`.
pub fn conv_backward<T: Real>(sh: &ConvShape, x: &[T], w: &[T], dout: &[T], dx: Option<&mut [T]>, dw: &mut [T]) {
    let (ho, wo) = (sh.h_out(), sh.w_out());
    let (hi, wi) = (sh.h_in, sh.w_in);
    let kk = sh.k * sh.k;
    let mut dx = dx;
    if kk == 1 && sh.stride == 1 {
        let n = hi * wi;
        for o in 0..sh.cout {
            let go = &dout[o * n..(o + 1) * n];
            for i in 0..sh.cin {
                dw[o * sh.cin + i] += dot(go, &x[i * n..(i + 1) * n]);
                if let Some(dx) = dx.as_deref_mut() {
                    axpy(w[o * sh.cin + i], go, &mut dx[i * n..(i + 1) * n]);
                }
            }
        }
        return;
    }
    let ph = Phases::new(sh);
    let pl = ph.plane_len();
    let n_planes = sh.stride * sh.stride;
    // dout in the flattened layout, zero in the spare columns
    let mut g = vec![T::zero(); sh.cout * ph.len];
    for o in 0..sh.cout {
        for oy in 0..ho {
            g[o * ph.len + oy * ph.wq..o * ph.len + oy * ph.wq + wo]
                .copy_from_slice(&dout[(o * ho + oy) * wo..(o * ho + oy + 1) * wo]);
        }
    }
    let mut planes = vec![T::zero(); n_planes * pl];
    let mut dplanes = vec![T::zero(); if dx.is_some() { n_planes * pl } else { 0 }];
    for i in 0..sh.cin {
        ph.split(sh, &x[i * hi * wi..(i + 1) * hi * wi], &mut planes);
        dplanes.iter_mut().for_each(|v| *v = T::zero());
        for o in 0..sh.cout {
            let go = &g[o * ph.len..(o + 1) * ph.len];
            let base = (o * sh.cin + i) * kk;
            for ky in 0..sh.k {
                for kx in 0..sh.k {
                    let (p, shift) = ph.tap(sh, ky, kx);
                    let r = p * pl + shift..p * pl + shift + ph.len;
                    dw[base + ky * sh.k + kx] += dot(go, &planes[r.clone()]);
                    if !dplanes.is_empty() {
                        axpy(w[base + ky * sh.k + kx], go, &mut dplanes[r]);
                    }
                }
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            ph.merge_add(sh, &dplanes, &mut dx[i * hi * wi..(i + 1) * hi * wi]);
        }
    }
}

/// Add a per-channel bias.
pub fn add_bias<T: Real>(out: &mut [T], b: &[T], plane: usize) {
    for (c, &bv) in b.iter().enumerate() {
        for v in &mut out[c * plane..(c + 1) * plane] {
            *v += bv;
        }
    }
}

pub fn bias_backward<T: Real>(dout: &[T], db: &mut [T], plane: usize) {
    for (c, d) in db.iter_mut().enumerate() {
        *d += dout[c * plane..(c + 1) * plane].iter().copied().sum::<T>();
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Smooth gated activation x·g(x) with the algebraic gate
/// g(x) = (1 + x/√(1+x²))/2. Shaped like SiLU but needs only a square root,
/// and being smooth keeps finite differences second-order accurate.
#[inline]
pub fn act<T: Real>(x: T) -> T {
    let half = T::c(0.5);
    x * half * (T::one() + x / (T::one() + x * x).sqrt())
}

#[inline]
pub fn act_grad<T: Real>(x: T) -> T {
    let half = T::c(0.5);
    let q = T::one() + x * x;
    let r = q.sqrt();
    half * (T::one() + x / r) + half * x / (q * r)
}

pub fn act_inplace<T: Real>(pre: &[T], out: &mut [T]) {
    for (o, &p) in out.iter_mut().zip(pre) {
        *o = act(p);
    }
}

/// dpre = dout ⊙ act'(pre), in place on `d`.
pub fn act_backward<T: Real>(pre: &[T], d: &mut [T]) {
    for (g, &p) in d.iter_mut().zip(pre) {
        *g *= act_grad(p);
    }
}

/// Bilinear resampling table for one axis (half-pixel centres, edge clamp).
#[derive(Debug, Clone)]
pub struct Interp {
    pub i0: Vec<usize>,
    pub i1: Vec<usize>,
    pub f: Vec<f64>,
}

impl Interp {
    pub fn new(n_coarse: usize, factor: usize) -> Self {
        let n = n_coarse * factor;
        let (mut i0, mut i1, mut f) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for d in 0..n {
            let s = ((d as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let a = (s.floor() as usize).min(n_coarse - 1);
            let b = (a + 1).min(n_coarse - 1);
            i0.push(a);
            i1.push(b);
            f.push(if a == b { 0.0 } else { s - a as f64 });
        }
        Interp { i0, i1, f }
    }
}

/// Upsample `c` channels of (hc, wc) by the factors encoded in the tables.
pub fn upsample<T: Real>(x: &[T], c: usize, hc: usize, wc: usize, ty: &Interp, tx: &Interp, out: &mut [T]) {
    let (h, w) = (ty.i0.len(), tx.i0.len());
    let fx: Vec<T> = tx.f.iter().map(|&v| T::c(v)).collect();
    let fy: Vec<T> = ty.f.iter().map(|&v| T::c(v)).collect();
    let mut tmp = vec![T::zero(); hc * w];
    for ch in 0..c {
        let xc = &x[ch * hc * wc..(ch + 1) * hc * wc];
        for r in 0..hc {
            let row = &xc[r * wc..(r + 1) * wc];
            for j in 0..w {
                let (a, b) = (row[tx.i0[j]], row[tx.i1[j]]);
                tmp[r * w + j] = a + (b - a) * fx[j];
            }
        }
        let oc = &mut out[ch * h * w..(ch + 1) * h * w];
        for i in 0..h {
            let (ra, rb) = (&tmp[ty.i0[i] * w..(ty.i0[i] + 1) * w], &tmp[ty.i1[i] * w..(ty.i1[i] + 1) * w]);
            let f = fy[i];
            for ((o, &a), &b) in oc[i * w..(i + 1) * w].iter_mut().zip(ra).zip(rb) {
                *o = a + (b - a) * f;
            }
        }
    }
}

/// Accumulate the adjoint of `upsample` into `dx`.
pub fn upsample_backward<T: Real>(dout: &[T], c: usize, hc: usize, wc: usize, ty: &Interp, tx: &Interp, dx: &mut [T]) {
    let (h, w) = (ty.i0.len(), tx.i0.len());
    let fx: Vec<T> = tx.f.iter().map(|&v| T::c(v)).collect();
    let fy: Vec<T> = ty.f.iter().map(|&v| T::c(v)).collect();
    let mut tmp = vec![T::zero(); hc * w];
    for ch in 0..c {
        tmp.iter_mut().for_each(|v| *v = T::zero());
        let dc = &dout[ch * h * w..(ch + 1) * h * w];
        for i in 0..h {
            let f = fy[i];
            let (a, b) = (ty.i0[i], ty.i1[i]);
            for j in 0..w {
                let g = dc[i * w + j];
                tmp[a * w + j] += g * (T::one() - f);
                tmp[b * w + j] += g * f;
            }
        }
        let dxc = &mut dx[ch * hc * wc..(ch + 1) * hc * wc];
        for r in 0..hc {
            for j in 0..w {
                let g = tmp[r * w + j];
                dxc[r * wc + tx.i0[j]] += g * (T::one() - fx[j]);
                dxc[r * wc + tx.i1[j]] += g * fx[j];
            }
        }
    }
}

/// Pool one channel over r×r blocks: `scale` times the block mean.
pub fn avg_pool<T: Real>(x: &[T], h: usize, w: usize, r: usize, scale: f64, out: &mut [T]) {
    let (hc, wc) = (h / r, w / r);
    let inv = T::c(scale / (r * r) as f64);
    for cy in 0..hc {
        for cx in 0..wc {
            let mut s = T::zero();
            for y in cy * r..(cy + 1) * r {
                s += x[y * w + cx * r..y * w + (cx + 1) * r].iter().copied().sum::<T>();
            }
            out[cy * wc + cx] = s * inv;
        }
    }
}

pub fn avg_pool_backward<T: Real>(dout: &[T], h: usize, w: usize, r: usize, scale: f64, dx: &mut [T]) {
    let (hc, wc) = (h / r, w / r);
    let inv = T::c(scale / (r * r) as f64);
    for cy in 0..hc {
        for cx in 0..wc {
            let g = dout[cy * wc + cx] * inv;
            for y in cy * r..(cy + 1) * r {
                dx[y * w + cx * r..y * w + (cx + 1) * r].iter_mut().for_each(|v| *v += g);
            }
        }
    }
}

/// Numerically stable softmax over the whole slice.
pub fn softmax<T: Real>(z: &[T], out: &mut [T]) {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - m).exp();
        s += *o;
    }
    let inv = T::one() / s;
    out.iter_mut().for_each(|v| *v *= inv);
}

/// dz = p ⊙ (dp − ⟨p, dp⟩), accumulated into `dz`.
pub fn softmax_backward<T: Real>(p: &[T], dp: &[T], dz: &mut [T]) {
    let dot: T = p.iter().zip(dp).map(|(&a, &b)| a * b).sum();
    for ((d, &pi), &g) in dz.iter_mut().zip(p).zip(dp) {
        *d += pi * (g - dot);
    }
}

/// Dense layer y = W x + b with W stored row-major (out × in).
pub fn fc_forward<T: Real>(w: &[T], b: &[T], x: &[T], y: &mut [T]) {
    let n_in = x.len();
    for (o, yo) in y.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        *yo = b[o] + row.iter().zip(x).map(|(&a, &c)| a * c).sum::<T>();
    }
}

pub fn fc_backward<T: Real>(w: &[T], x: &[T], dy: &[T], dw: &mut [T], db: &mut [T], dx: &mut [T]) {
    let n_in = x.len();
    for (o, &g) in dy.iter().enumerate() {
        db[o] += g;
        let row = &w[o * n_in..(o + 1) * n_in];
        let drow = &mut dw[o * n_in..(o + 1) * n_in];
        for j in 0..n_in {
            drow[j] += g * x[j];
            dx[j] += g * row[j];
        }
    }
}

/// Gather a (2r+1)² patch of every channel around pixel (u, v); outside
/// pixels read as zero. Layout: channel-major, then row, then column.
#[allow(clippy::too_many_arguments)]
pub fn gather_patch<T: Real>(x: &[T], c: usize, h: usize, w: usize, u: usize, v: usize, r: usize, out: &mut [T]) {
    let s = 2 * r + 1;
    for ch in 0..c {
        for dy in 0..s {
            for dx in 0..s {
                let (yy, xx) = (v as isize + dy as isize - r as isize, u as isize + dx as isize - r as isize);
                out[ch * s * s + dy * s + dx] = if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                    x[ch * h * w + yy as usize * w + xx as usize]
                } else {
                    T::zero()
                };
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn gather_patch_backward<T: Real>(
    dout: &[T],
    c: usize,
    h: usize,
    w: usize,
    u: usize,
    v: usize,
    r: usize,
    dx: &mut [T],
) {
    let s = 2 * r + 1;
    for ch in 0..c {
        for dy in 0..s {
            for ddx in 0..s {
                let (yy, xx) = (v as isize + dy as isize - r as isize, u as isize + ddx as isize - r as isize);
                if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                    dx[ch * h * w + yy as usize * w + xx as usize] += dout[ch * s * s + dy * s + ddx];
                }
            }
        }
    }
}

/// First index of the maximum: lowest v, then lowest u in row-major order.
pub fn argmax<T: Real>(x: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}
