//! Forward passes (with tapes) and the reverse pass.

use super::ops::*;
use super::{Arch, ConvP, FcP, NetParams, AGENT_EXTRA, PERCEPTION_EXTRA};
use crate::error::{Error, Result};
use crate::geometry::{Pose, RasterFrame, Trajectory};
use crate::raster::InputStack;
use crate::real::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn conv<T: Real>(p: &[T], c: &ConvP, x: &[T], out: &mut [T]) {
    if let Some(b) = &c.b {
        add_bias(out, &p[b.clone()], c.sh.h_out() * c.sh.w_out());
    }
    conv_forward(&c.sh, x, &p[c.w.clone()], out);
}

fn conv_new<T: Real>(p: &[T], c: &ConvP, x: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); c.sh.out_len()];
    conv(p, c, x, &mut out);
    out
}

fn conv_back<T: Real>(p: &[T], g: &mut [T], c: &ConvP, x: &[T], dout: &[T], dx: Option<&mut [T]>) {
    conv_backward(&c.sh, x, &p[c.w.clone()], dout, dx, &mut g[c.w.clone()]);
    if let Some(b) = &c.b {
        bias_backward(dout, &mut g[b.clone()], c.sh.h_out() * c.sh.w_out());
    }
}

fn fc<T: Real>(p: &[T], f: &FcP, x: &[T]) -> Vec<T> {
    let mut y = vec![T::zero(); f.n_out];
    fc_forward(&p[f.w.clone()], &p[f.b.clone()], x, &mut y);
    y
}

fn fc_back<T: Real>(p: &[T], g: &mut [T], f: &FcP, x: &[T], dy: &[T], dx: &mut [T]) {
    let (w, b) = (f.w.clone(), f.b.clone());
    let (gw, gb) = if w.start < b.start {
        let (lo, hi) = g.split_at_mut(b.start);
        (&mut lo[w], &mut hi[..b.end - b.start])
    } else {
        let (lo, hi) = g.split_at_mut(w.start);
        (&mut hi[..w.end - w.start], &mut lo[b])
    };
    fc_backward(&p[f.w.clone()], x, dy, gw, gb, dx);
}

fn activate<T: Real>(pre: &[T]) -> Vec<T> {
    pre.iter().map(|&v| act(v)).collect()
}

/// Shared per-example state: input, skip features, FeatureNet activations
/// and the step-independent parts of the decoders.
#[derive(Debug, Clone)]
pub struct Context<T> {
    pub x: Vec<T>,
    pub s_pre: Vec<T>,
    pub s: Vec<T>,
    pub feat_pre: Vec<Vec<T>>,
    pub feat: Vec<Vec<T>>,
    /// F-dependent part of the first agent decoder layer (with bias).
    pub df: Vec<T>,
    /// Skip-dependent part of the fine agent layer (with bias).
    pub ls: Vec<T>,
    pub coords: Vec<T>,
}

impl<T: Real> Context<T> {
    pub fn features(&self) -> &[T] {
        self.feat.last().map(|v| v.as_slice()).unwrap_or(&self.x)
    }
}

pub fn context<T: Real>(arch: &Arch, p: &[T], input: &[f32]) -> Result<Context<T>> {
    let cfg = &arch.cfg;
    let expect = cfg.in_channels * cfg.width * cfg.height;
    if input.len() != expect {
        return Err(Error::ShapeMismatch(format!("input has {} values, expected {expect}", input.len())));
    }
    let x: Vec<T> = input.iter().map(|&v| T::c(v as f64)).collect();
    let s_pre = conv_new(p, &arch.skip, &x);
    let s = activate(&s_pre);
    let mut feat_pre = Vec::new();
    let mut feat: Vec<Vec<T>> = Vec::new();
    for (i, l) in arch.feat.iter().enumerate() {
        let inp = if i == 0 { &x } else { &feat[i - 1] };
        let pre = conv_new(p, l, inp);
        let mut post = activate(&pre);
        if cfg.feature[i].residual {
            for (o, &r) in post.iter_mut().zip(&feat[i - 1]) {
                *o += r;
            }
        }
        feat_pre.push(pre);
        feat.push(post);
    }
    let f = feat.last().expect("non-empty FeatureNet");
    let df = conv_new(p, &arch.dec1_f, f);
    let ls = conv_new(p, &arch.fine_s, &s);
    let (hc, wc) = arch.coarse();
    let mut coords = vec![T::zero(); 2 * hc * wc];
    for y in 0..hc {
        for xx in 0..wc {
            coords[y * wc + xx] = T::c((xx as f64 + 0.5) / wc as f64 - 0.5);
            coords[hc * wc + y * wc + xx] = T::c((y as f64 + 0.5) / hc as f64 - 0.5);
        }
    }
    Ok(Context { x, s_pre, s, feat_pre, feat, df, ls, coords })
}

#[derive(Debug, Clone)]
pub struct StepTape<T> {
    pub pixel: usize,
    bm: Vec<T>,
    e: Vec<T>,
    h1_pre: Vec<T>,
    h1: Vec<T>,
    h2_pre: Vec<T>,
    mix_in: Vec<T>,
    g_pre: Vec<T>,
    g: Vec<T>,
    pub z: Vec<T>,
    pub p: Vec<T>,
    pub b: Vec<T>,
    patch: Vec<T>,
    m1_pre: Vec<T>,
    m1: Vec<T>,
    /// (δu, δv, θ, speed)
    pub meta: [T; 4],
}

fn agent_step<T: Real>(
    arch: &Arch,
    p: &[T],
    ctx: &Context<T>,
    k: usize,
    m_prev: &[T],
    b_prev: &[T],
    choose: &mut dyn FnMut(usize, &[T]) -> Result<usize>,
) -> Result<StepTape<T>> {
    let cfg = &arch.cfg;
    let (h, w) = (cfg.height, cfg.width);
    let hw = h * w;
    let r = cfg.stride();
    let (hc, wc) = arch.coarse();
    let cc = hc * wc;
    let kn = T::c(k as f64 / cfg.n_future as f64);

    let mut e = vec![T::zero(); AGENT_EXTRA * cc];
    avg_pool(m_prev, h, w, r, (r * r) as f64, &mut e[..cc]);
    avg_pool(b_prev, h, w, r, 1.0, &mut e[cc..2 * cc]);
    e[2 * cc..3 * cc].iter_mut().for_each(|v| *v = kn);
    e[3 * cc..5 * cc].copy_from_slice(&ctx.coords);
    let mut h1_pre = ctx.df.clone();
    conv(p, &arch.dec1_e, &e, &mut h1_pre);
    let h1 = activate(&h1_pre);
    let h2_pre = conv_new(p, &arch.dec2, &h1);
    let h2 = activate(&h2_pre);

    let n_up = cfg.dec_out * hw;
    let mut mix_in = vec![T::zero(); (cfg.dec_out + cfg.fine_channels) * hw];
    upsample(&h2, cfg.dec_out, hc, wc, &arch.iy, &arch.ix, &mut mix_in[..n_up]);
    let mut bm = Vec::with_capacity(2 * hw);
    bm.extend_from_slice(b_prev);
    bm.extend_from_slice(m_prev);
    mix_in[n_up..].copy_from_slice(&ctx.ls);
    conv(p, &arch.fine_bm, &bm, &mut mix_in[n_up..]);
    let g_pre = conv_new(p, &arch.mix, &mix_in);
    let g = activate(&g_pre);
    let z = conv_new(p, &arch.out, &g);
    let mut pm = vec![T::zero(); hw];
    softmax(&z[..hw], &mut pm);
    let b: Vec<T> = z[hw..].iter().map(|&v| sigmoid(v)).collect();
    let pixel = choose(k, &pm)?;
    if pixel >= hw {
        return Err(Error::OutOfRange((pixel % w) as i64, (pixel / w) as i64));
    }
    let (u, v) = (pixel % w, pixel / w);
    let pr = cfg.patch_radius;
    let ps = (2 * pr + 1) * (2 * pr + 1);
    let mh = cfg.mix_hidden;
    let mut patch = vec![T::zero(); (mh + 2) * ps + 1];
    gather_patch(&g, mh, h, w, u, v, pr, &mut patch[..mh * ps]);
    gather_patch(&z, 2, h, w, u, v, pr, &mut patch[mh * ps..(mh + 2) * ps]);
    patch[(mh + 2) * ps] = kn;
    let m1_pre = fc(p, &arch.meta1, &patch);
    let m1 = activate(&m1_pre);
    let raw = fc(p, &arch.meta2, &m1);
    let meta = [sigmoid(raw[0]), sigmoid(raw[1]), raw[2], T::c(cfg.speed_scale) * raw[3]];
    Ok(StepTape { pixel, bm, e, h1_pre, h1, h2_pre, mix_in, g_pre, g, z, p: pm, b, patch, m1_pre, m1, meta })
}

#[derive(Debug, Clone)]
pub struct PerceptionStep<T> {
    e: Vec<T>,
    q_pre: Vec<T>,
    uq: Vec<T>,
    obj_prev: Vec<T>,
    pub obj: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct RoadTape<T> {
    r_pre: Vec<T>,
    ur: Vec<T>,
    pub road: Vec<T>,
}

fn perception_step<T: Real>(arch: &Arch, p: &[T], ctx: &Context<T>, per_f: &[T], k: usize, obj_prev: &[T]) -> PerceptionStep<T> {
    let cfg = &arch.cfg;
    let (h, w) = (cfg.height, cfg.width);
    let hw = h * w;
    let r = cfg.stride();
    let (hc, wc) = arch.coarse();
    let cc = hc * wc;
    let mut e = vec![T::zero(); PERCEPTION_EXTRA * cc];
    avg_pool(obj_prev, h, w, r, 1.0, &mut e[..cc]);
    e[cc..2 * cc].iter_mut().for_each(|v| *v = T::c(k as f64 / cfg.n_future as f64));
    e[2 * cc..4 * cc].copy_from_slice(&ctx.coords);
    let mut q_pre = per_f.to_vec();
    conv(p, &arch.per_e, &e, &mut q_pre);
    let q = activate(&q_pre);
    let mut uq = vec![T::zero(); cfg.perception_hidden * hw];
    upsample(&q, cfg.perception_hidden, hc, wc, &arch.iy, &arch.ix, &mut uq);
    let mut z = conv_new(p, &arch.per_up, &uq);
    conv(p, &arch.per_fine, obj_prev, &mut z);
    let obj = z.iter().map(|&v| sigmoid(v)).collect();
    PerceptionStep { e, q_pre, uq, obj_prev: obj_prev.to_vec(), obj }
}

fn road_forward<T: Real>(arch: &Arch, p: &[T], ctx: &Context<T>) -> RoadTape<T> {
    let cfg = &arch.cfg;
    let hw = cfg.height * cfg.width;
    let (hc, wc) = arch.coarse();
    let r_pre = conv_new(p, &arch.road1, ctx.features());
    let rr = activate(&r_pre);
    let mut ur = vec![T::zero(); cfg.road_hidden * hw];
    upsample(&rr, cfg.road_hidden, hc, wc, &arch.iy, &arch.ix, &mut ur);
    let mut z = conv_new(p, &arch.road_up, &ur);
    conv(p, &arch.road_fine, &ctx.s, &mut z);
    RoadTape { r_pre, ur, road: z.iter().map(|&v| sigmoid(v)).collect() }
}

/// Borrowed inputs of one training example.
#[derive(Debug, Clone, Copy)]
pub struct ExampleRef<'a> {
    pub input: &'a [f32],
    /// B_0: the rendered current agent box.
    pub agent_box: &'a [f32],
    /// Obj_0: ground-truth objects at the current time.
    pub objects0: &'a [f32],
    /// Teacher-forced waypoint pixels (flat index) for k = 1..N.
    pub truth_pixels: &'a [usize],
}

#[derive(Debug, Clone)]
pub struct Forward<T> {
    pub ctx: Context<T>,
    pub steps: Vec<StepTape<T>>,
    per_f: Vec<T>,
    pub perception: Vec<PerceptionStep<T>>,
    pub road: Option<RoadTape<T>>,
}

/// Training forward pass. Memory updates and meta-head gathers use the
/// ground-truth pixels; the box heatmap is fed back as predicted. With
/// `auxiliary` false the PerceptionRNN and road head are skipped.
pub fn forward_train<T: Real>(arch: &Arch, params: &NetParams<T>, ex: ExampleRef<'_>, auxiliary: bool) -> Result<Forward<T>> {
    let p = &params.data;
    let cfg = &arch.cfg;
    let hw = cfg.height * cfg.width;
    if ex.truth_pixels.len() != cfg.n_future || ex.agent_box.len() != hw || ex.objects0.len() != hw {
        return Err(Error::ShapeMismatch("training example does not match the network config".into()));
    }
    let ctx = context(arch, p, ex.input)?;
    let mut memory = vec![T::zero(); hw];
    let mut steps: Vec<StepTape<T>> = Vec::with_capacity(cfg.n_future);
    let b0: Vec<T> = ex.agent_box.iter().map(|&v| T::c(v as f64)).collect();
    for k in 1..=cfg.n_future {
        let truth = ex.truth_pixels[k - 1];
        let b_prev = if k == 1 { &b0 } else { &steps[k - 2].b };
        let st = agent_step(arch, p, &ctx, k, &memory, b_prev, &mut |_, _| Ok(truth))?;
        memory[truth] += T::one();
        steps.push(st);
    }
    let (mut per_f, mut perception, mut road) = (Vec::new(), Vec::new(), None);
    if auxiliary {
        per_f = conv_new(p, &arch.per_f, ctx.features());
        let mut prev: Vec<T> = ex.objects0.iter().map(|&v| T::c(v as f64)).collect();
        for k in 1..=cfg.n_future {
            let st = perception_step(arch, p, &ctx, &per_f, k, &prev);
            prev = st.obj.clone();
            perception.push(st);
        }
        road = Some(road_forward(arch, p, &ctx));
    }
    Ok(Forward { ctx, steps, per_f, perception, road })
}

/// Loss gradients with respect to the network outputs.
#[derive(Debug, Clone)]
pub struct OutputGrads<T> {
    /// dL/dP_k, each W·H (empty = zero).
    pub d_p: Vec<Vec<T>>,
    /// dL/dB_k.
    pub d_b: Vec<Vec<T>>,
    /// dL/d(δu, δv, θ, speed) per step.
    pub d_meta: Vec<[T; 4]>,
    pub d_obj: Vec<Vec<T>>,
    pub d_road: Vec<T>,
}

impl<T: Real> OutputGrads<T> {
    pub fn zeros(n: usize) -> Self {
        OutputGrads {
            d_p: vec![Vec::new(); n],
            d_b: vec![Vec::new(); n],
            d_meta: vec![[T::zero(); 4]; n],
            d_obj: vec![Vec::new(); n],
            d_road: Vec::new(),
        }
    }
}

/// Reverse pass; returns gradients aligned with the parameter vector.
pub fn backward<T: Real>(arch: &Arch, params: &NetParams<T>, fwd: &Forward<T>, seeds: &OutputGrads<T>) -> Vec<T> {
    let p = &params.data;
    let cfg = &arch.cfg;
    let (h, w) = (cfg.height, cfg.width);
    let hw = h * w;
    let r = cfg.stride();
    let (hc, wc) = arch.coarse();
    let cc = hc * wc;
    let mut g = vec![T::zero(); arch.n_params];
    let ctx = &fwd.ctx;
    let f = ctx.features();
    let mut d_f = vec![T::zero(); f.len()];
    let mut d_s = vec![T::zero(); ctx.s.len()];
    let mut d_df = vec![T::zero(); ctx.df.len()];
    let mut d_ls = vec![T::zero(); ctx.ls.len()];
    let pr = cfg.patch_radius;
    let ps = (2 * pr + 1) * (2 * pr + 1);
    let mh = cfg.mix_hidden;
    let n_up = cfg.dec_out * hw;

    let mut d_bnext = vec![T::zero(); hw];
    for (i, st) in fwd.steps.iter().enumerate().rev() {
        let (u, v) = (st.pixel % w, st.pixel / w);
        let dm = seeds.d_meta[i];
        let one = T::one();
        let d_raw = [
            dm[0] * st.meta[0] * (one - st.meta[0]),
            dm[1] * st.meta[1] * (one - st.meta[1]),
            dm[2],
            dm[3] * T::c(cfg.speed_scale),
        ];
        let mut d_m1 = vec![T::zero(); cfg.meta_hidden];
        fc_back(p, &mut g, &arch.meta2, &st.m1, &d_raw, &mut d_m1);
        act_backward(&st.m1_pre, &mut d_m1);
        let mut d_patch = vec![T::zero(); st.patch.len()];
        fc_back(p, &mut g, &arch.meta1, &st.patch, &d_m1, &mut d_patch);
        let mut dg = vec![T::zero(); mh * hw];
        gather_patch_backward(&d_patch[..mh * ps], mh, h, w, u, v, pr, &mut dg);
        let mut dz = vec![T::zero(); 2 * hw];
        gather_patch_backward(&d_patch[mh * ps..(mh + 2) * ps], 2, h, w, u, v, pr, &mut dz);
        if !seeds.d_p[i].is_empty() {
            softmax_backward(&st.p, &seeds.d_p[i], &mut dz[..hw]);
        }
        let db = &seeds.d_b[i];
        for j in 0..hw {
            let gb = d_bnext[j] + if db.is_empty() { T::zero() } else { db[j] };
            dz[hw + j] += gb * st.b[j] * (one - st.b[j]);
        }
        conv_back(p, &mut g, &arch.out, &st.g, &dz, Some(&mut dg));
        act_backward(&st.g_pre, &mut dg);
        let mut d_mix = vec![T::zero(); st.mix_in.len()];
        conv_back(p, &mut g, &arch.mix, &st.mix_in, &dg, Some(&mut d_mix));
        let dl = &d_mix[n_up..];
        for (a, &b) in d_ls.iter_mut().zip(dl) {
            *a += b;
        }
        let mut d_bm = vec![T::zero(); 2 * hw];
        conv_back(p, &mut g, &arch.fine_bm, &st.bm, dl, Some(&mut d_bm));
        let mut dh2 = vec![T::zero(); cfg.dec_out * cc];
        upsample_backward(&d_mix[..n_up], cfg.dec_out, hc, wc, &arch.iy, &arch.ix, &mut dh2);
        act_backward(&st.h2_pre, &mut dh2);
        let mut dh1 = vec![T::zero(); cfg.dec_hidden * cc];
        conv_back(p, &mut g, &arch.dec2, &st.h1, &dh2, Some(&mut dh1));
        act_backward(&st.h1_pre, &mut dh1);
        for (a, &b) in d_df.iter_mut().zip(&dh1) {
            *a += b;
        }
        let mut de = vec![T::zero(); AGENT_EXTRA * cc];
        conv_back(p, &mut g, &arch.dec1_e, &st.e, &dh1, Some(&mut de));
        let mut d_bprev = d_bm[..hw].to_vec();
        avg_pool_backward(&de[cc..2 * cc], h, w, r, 1.0, &mut d_bprev);
        d_bnext = d_bprev;
    }
    conv_back(p, &mut g, &arch.dec1_f, f, &d_df, Some(&mut d_f));
    conv_back(p, &mut g, &arch.fine_s, &ctx.s, &d_ls, Some(&mut d_s));

    if !fwd.perception.is_empty() {
        let mut d_perf = vec![T::zero(); fwd.per_f.len()];
        let mut d_next = vec![T::zero(); hw];
        for (i, st) in fwd.perception.iter().enumerate().rev() {
            let dobj = &seeds.d_obj[i];
            let dz: Vec<T> = (0..hw)
                .map(|j| (d_next[j] + if dobj.is_empty() { T::zero() } else { dobj[j] }) * st.obj[j] * (T::one() - st.obj[j]))
                .collect();
            let mut duq = vec![T::zero(); st.uq.len()];
            conv_back(p, &mut g, &arch.per_up, &st.uq, &dz, Some(&mut duq));
            let mut d_prev = vec![T::zero(); hw];
            conv_back(p, &mut g, &arch.per_fine, &st.obj_prev, &dz, Some(&mut d_prev));
            let mut dq = vec![T::zero(); cfg.perception_hidden * cc];
            upsample_backward(&duq, cfg.perception_hidden, hc, wc, &arch.iy, &arch.ix, &mut dq);
            act_backward(&st.q_pre, &mut dq);
            for (a, &b) in d_perf.iter_mut().zip(&dq) {
                *a += b;
            }
            let mut de = vec![T::zero(); st.e.len()];
            conv_back(p, &mut g, &arch.per_e, &st.e, &dq, Some(&mut de));
            avg_pool_backward(&de[..cc], h, w, r, 1.0, &mut d_prev);
            d_next = d_prev;
        }
        conv_back(p, &mut g, &arch.per_f, f, &d_perf, Some(&mut d_f));
    }
    if let (Some(rt), false) = (&fwd.road, seeds.d_road.is_empty()) {
        let dz: Vec<T> = (0..hw).map(|j| seeds.d_road[j] * rt.road[j] * (T::one() - rt.road[j])).collect();
        let mut dur = vec![T::zero(); rt.ur.len()];
        conv_back(p, &mut g, &arch.road_up, &rt.ur, &dz, Some(&mut dur));
        conv_back(p, &mut g, &arch.road_fine, &ctx.s, &dz, Some(&mut d_s));
        let mut dr = vec![T::zero(); cfg.road_hidden * cc];
        upsample_backward(&dur, cfg.road_hidden, hc, wc, &arch.iy, &arch.ix, &mut dr);
        act_backward(&rt.r_pre, &mut dr);
        conv_back(p, &mut g, &arch.road1, f, &dr, Some(&mut d_f));
    }

    // FeatureNet
    let mut d = d_f;
    for i in (0..arch.feat.len()).rev() {
        let residual = cfg.feature[i].residual;
        let mut dpre = d.clone();
        act_backward(&ctx.feat_pre[i], &mut dpre);
        if i == 0 {
            conv_back(p, &mut g, &arch.feat[0], &ctx.x, &dpre, None);
        } else {
            let mut d_in = vec![T::zero(); ctx.feat[i - 1].len()];
            conv_back(p, &mut g, &arch.feat[i], &ctx.feat[i - 1], &dpre, Some(&mut d_in));
            if residual {
                for (a, &b) in d_in.iter_mut().zip(&d) {
                    *a += b;
                }
            }
            d = d_in;
        }
    }
    act_backward(&ctx.s_pre, &mut d_s);
    conv_back(p, &mut g, &arch.skip, &ctx.x, &d_s, None);
    g
}

/// M_k = M_{k−1} + 1 at `pixel`.
pub fn memory_update(m_prev: &[f32], width: usize, pixel: (usize, usize)) -> Result<Vec<f32>> {
    let (u, v) = pixel;
    if u >= width || v * width + u >= m_prev.len() {
        return Err(Error::OutOfRange(u as i64, v as i64));
    }
    let mut m = m_prev.to_vec();
    m[v * width + u] += 1.0;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub enum UnrollMode {
    Argmax,
    Sample(u64),
    /// Renormalise P_k over the mask support before sampling. The mask is
    /// either one W·H image shared by all steps or N stacked images.
    ConstrainedSample { mask: Vec<f32>, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepPrediction {
    pub heatmap: Vec<f32>,
    pub pixel: (usize, usize),
    pub subpixel: [f64; 2],
    /// Heading relative to the frame's up axis.
    pub theta: f64,
    pub speed: f64,
    pub box_heatmap: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unroll {
    pub steps: Vec<StepPrediction>,
    pub memory: Vec<f32>,
    /// World-frame poses at t0 + k·dt for k = 0..N; k = 0 is the frame origin.
    pub trajectory: Trajectory,
}

fn sample_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let target = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &wv) in weights.iter().enumerate() {
        if wv > 0.0 {
            last = i;
            acc += wv;
            if acc > target {
                return i;
            }
        }
    }
    last
}

/// Inference unroll of the AgentRNN for N steps from M_0 = 0 and B_0 = the
/// rendered agent box.
pub fn unroll(
    arch: &Arch,
    params: &NetParams<f32>,
    input: &InputStack,
    frame: &RasterFrame,
    t0: f64,
    dt: f64,
    mode: &UnrollMode,
) -> Result<Unroll> {
    let cfg = &arch.cfg;
    if input.channels() != cfg.in_channels || input.width != cfg.width || input.height != cfg.height {
        return Err(Error::ShapeMismatch(format!(
            "input {}×{}×{} vs network {}×{}×{}",
            input.channels(),
            input.height,
            input.width,
            cfg.in_channels,
            cfg.height,
            cfg.width
        )));
    }
    let hw = cfg.height * cfg.width;
    let n = cfg.n_future;
    let p = &params.data;
    let ctx: Context<f32> = context(arch, p, &input.data)?;
    let mut rng = match mode {
        UnrollMode::Argmax => ChaCha8Rng::seed_from_u64(0),
        UnrollMode::Sample(s) | UnrollMode::ConstrainedSample { seed: s, .. } => ChaCha8Rng::seed_from_u64(*s),
    };
    if let UnrollMode::ConstrainedSample { mask, .. } = mode {
        if mask.len() != hw && mask.len() != n * hw {
            return Err(Error::ShapeMismatch(format!("mask has {} values", mask.len())));
        }
    }
    let mut choose = |k: usize, pm: &[f32]| -> Result<usize> {
        match mode {
            UnrollMode::Argmax => Ok(argmax(pm)),
            UnrollMode::Sample(_) => {
                let wts: Vec<f64> = pm.iter().map(|&v| v as f64).collect();
                Ok(sample_index(&wts, &mut rng))
            }
            UnrollMode::ConstrainedSample { mask, .. } => {
                let m = if mask.len() == hw { &mask[..] } else { &mask[(k - 1) * hw..k * hw] };
                let wts: Vec<f64> = pm.iter().zip(m).map(|(&a, &b)| if b > 0.0 { a as f64 * b as f64 } else { 0.0 }).collect();
                if wts.iter().sum::<f64>() <= 0.0 {
                    return Err(Error::EmptyMaskSupport(k));
                }
                Ok(sample_index(&wts, &mut rng))
            }
        }
    };
    let agent_box = input.channel(input.layout.agent_box()).to_vec();
    let mut memory = vec![0.0f32; hw];
    let mut steps = Vec::with_capacity(n);
    let mut poses = Vec::with_capacity(n + 1);
    poses.push(frame.origin_pose);
    let mut b_prev = agent_box;
    for k in 1..=n {
        let st = agent_step(arch, p, &ctx, k, &memory, &b_prev, &mut choose)?;
        let (u, v) = (st.pixel % cfg.width, st.pixel / cfg.width);
        memory = memory_update(&memory, cfg.width, (u, v))?;
        let sub = [st.meta[0] as f64, st.meta[1] as f64];
        let (x, y) = frame.raster_to_world(u as f64 + sub[0], v as f64 + sub[1]);
        let theta = st.meta[2] as f64;
        let speed = st.meta[3] as f64;
        poses.push(Pose::new(x, y, frame.heading_to_world(theta), speed.max(0.0)));
        b_prev = st.b.clone();
        steps.push(StepPrediction { heatmap: st.p, pixel: (u, v), subpixel: sub, theta, speed, box_heatmap: st.b });
    }
    Ok(Unroll { steps, memory, trajectory: Trajectory::new(t0, dt, poses)? })
}

/// FeatureNet output F for one input.
pub fn feature_forward(arch: &Arch, params: &NetParams<f32>, input: &InputStack) -> Result<Vec<f32>> {
    Ok(context::<f32>(arch, &params.data, &input.data)?.features().to_vec())
}

/// One AgentRNN step with argmax pixel selection.
pub fn agent_rnn_step(
    arch: &Arch,
    params: &NetParams<f32>,
    input: &InputStack,
    k: usize,
    m_prev: &[f32],
    b_prev: &[f32],
) -> Result<StepPrediction> {
    let hw = arch.cfg.width * arch.cfg.height;
    if k == 0 || k > arch.cfg.n_future || m_prev.len() != hw || b_prev.len() != hw {
        return Err(Error::ShapeMismatch("agent step state does not match the network".into()));
    }
    let ctx: Context<f32> = context(arch, &params.data, &input.data)?;
    let st = agent_step(arch, &params.data, &ctx, k, m_prev, b_prev, &mut |_, pm| Ok(argmax(pm)))?;
    let w = arch.cfg.width;
    Ok(StepPrediction {
        heatmap: st.p,
        pixel: (st.pixel % w, st.pixel / w),
        subpixel: [st.meta[0] as f64, st.meta[1] as f64],
        theta: st.meta[2] as f64,
        speed: st.meta[3] as f64,
        box_heatmap: st.b,
    })
}

/// PerceptionRNN unrolled from Obj_0 for `steps` iterations.
pub fn perception_rollout(
    arch: &Arch,
    params: &NetParams<f32>,
    input: &InputStack,
    objects0: &[f32],
    steps: usize,
) -> Result<Vec<Vec<f32>>> {
    let hw = arch.cfg.width * arch.cfg.height;
    if objects0.len() != hw {
        return Err(Error::ShapeMismatch("objects mask size".into()));
    }
    let p = &params.data;
    let ctx: Context<f32> = context(arch, p, &input.data)?;
    let per_f = conv_new(p, &arch.per_f, ctx.features());
    let mut prev = objects0.to_vec();
    let mut out = Vec::with_capacity(steps);
    for k in 1..=steps {
        let st = perception_step(arch, p, &ctx, &per_f, k.min(arch.cfg.n_future), &prev);
        prev = st.obj.clone();
        out.push(st.obj);
    }
    Ok(out)
}

pub fn road_head_forward(arch: &Arch, params: &NetParams<f32>, input: &InputStack) -> Result<Vec<f32>> {
    let ctx: Context<f32> = context(arch, &params.data, &input.data)?;
    Ok(road_forward(arch, &params.data, &ctx).road)
}
