//! The ten loss terms, their gradients with respect to the network outputs,
//! and the weighted combination that defines the model variants M0–M4.

use crate::error::{Error, Result};
use crate::geometry::wrap_angle;
use crate::net::{Forward, OutputGrads};
use crate::raster::TargetStack;
use crate::real::Real;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Probabilities entering a cross-entropy are clipped to [ε, 1−ε].
pub const CE_EPS: f64 = 1e-7;

pub const LOSS_NAMES: [&str; 10] =
    ["waypoint", "box", "heading", "subpixel", "speed", "collision", "onroad", "geometry", "objects", "road"];
pub const N_IMITATION: usize = 5;

/// Loss values, each summed over the unrolled iterations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub waypoint: f64,
    pub agent_box: f64,
    pub heading: f64,
    pub subpixel: f64,
    pub speed: f64,
    pub collision: f64,
    pub onroad: f64,
    pub geometry: f64,
    pub objects: f64,
    pub road: f64,
}

impl LossBundle {
    pub fn from_values(v: [f64; 10]) -> Self {
        LossBundle {
            waypoint: v[0],
            agent_box: v[1],
            heading: v[2],
            subpixel: v[3],
            speed: v[4],
            collision: v[5],
            onroad: v[6],
            geometry: v[7],
            objects: v[8],
            road: v[9],
        }
    }

    pub fn values(&self) -> [f64; 10] {
        [
            self.waypoint,
            self.agent_box,
            self.heading,
            self.subpixel,
            self.speed,
            self.collision,
            self.onroad,
            self.geometry,
            self.objects,
            self.road,
        ]
    }

    pub fn imitation(&self) -> f64 {
        self.values()[..N_IMITATION].iter().sum()
    }

    pub fn environment(&self) -> f64 {
        self.values()[N_IMITATION..].iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    pub fn add_scaled(&mut self, other: &LossBundle, s: f64) {
        let mut v = self.values();
        for (a, b) in v.iter_mut().zip(other.values()) {
            *a += s * b;
        }
        *self = LossBundle::from_values(v);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelId {
    M0,
    M1,
    M2,
    M3,
    M4,
}

impl ModelId {
    pub const ALL: [ModelId; 5] = [ModelId::M0, ModelId::M1, ModelId::M2, ModelId::M3, ModelId::M4];
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for ModelId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelId::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown model {s:?} (expected M0..M4)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub id: ModelId,
    pub w_imit: f64,
    pub w_env: f64,
    /// Probability that an example's imitation group is dropped (w_imit → 0).
    pub imitation_dropout: f64,
    pub use_perturbations: bool,
    /// Per-term multipliers in `LOSS_NAMES` order.
    pub multipliers: [f64; 10],
}

impl ModelConfig {
    pub fn preset(id: ModelId) -> Self {
        let (w_imit, w_env, imitation_dropout, use_perturbations) = match id {
            ModelId::M0 => (1.0, 0.0, 0.0, false),
            ModelId::M1 => (1.0, 0.0, 0.0, true),
            ModelId::M2 => (1.0, 1.0, 0.0, true),
            ModelId::M3 => (0.5, 1.0, 0.0, true),
            ModelId::M4 => (1.0, 1.0, 0.5, true),
        };
        ModelConfig { id, w_imit, w_env, imitation_dropout, use_perturbations, multipliers: [1.0; 10] }
    }

    /// Whether the environment terms and auxiliary heads contribute at all.
    pub fn uses_environment(&self) -> bool {
        self.w_env != 0.0
    }

    /// Per-term weights for one example given the drawn imitation weight.
    pub fn term_weights(&self, w_imit: f64, example_weight: f64) -> [f64; 10] {
        let mut w = self.multipliers;
        for (i, v) in w.iter_mut().enumerate() {
            *v *= example_weight * if i < N_IMITATION { w_imit } else { self.w_env };
        }
        w
    }

    /// Draw this example's imitation weight.
    pub fn draw_w_imit<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.imitation_dropout > 0.0 && rng.gen_bool(self.imitation_dropout.min(1.0)) {
            0.0
        } else {
            self.w_imit
        }
    }
}

/// Weighted total for one example; returns (total, w_imit used).
pub fn total_loss<R: Rng>(bundle: &LossBundle, cfg: &ModelConfig, example_weight: f64, rng: &mut R) -> (f64, f64) {
    let w_imit = cfg.draw_w_imit(rng);
    let w = cfg.term_weights(w_imit, example_weight);
    (bundle.values().iter().zip(w).map(|(v, w)| v * w).sum(), w_imit)
}

fn clip<T: Real>(p: T) -> (T, bool) {
    let (lo, hi) = (T::c(CE_EPS), T::c(1.0 - CE_EPS));
    if p < lo {
        (lo, true)
    } else if p > hi {
        (hi, true)
    } else {
        (p, false)
    }
}

/// −log P(gt) for a one-hot target. Adds `scale`·∂/∂P into `grad`.
pub fn waypoint_ce<T: Real>(p: &[T], gt: usize, grad: Option<(&mut [T], T)>) -> T {
    let (q, clipped) = clip(p[gt]);
    if let (Some((g, s)), false) = (grad, clipped) {
        g[gt] -= s / q;
    }
    -q.ln()
}

/// Mean binary cross-entropy between predictions and a [0,1] target image.
pub fn bce_mean<T: Real>(pred: &[T], target: &[f32], grad: Option<(&mut [T], T)>) -> T {
    let n = T::c(pred.len() as f64);
    let mut acc = T::zero();
    let mut grad = grad;
    for (j, (&p, &t)) in pred.iter().zip(target).enumerate() {
        let t = T::c(t as f64);
        let (q, clipped) = clip(p);
        acc -= t * q.ln() + (T::one() - t) * (T::one() - q).ln();
        if let (Some((g, s)), false) = (grad.as_mut(), clipped) {
            g[j] -= *s * (t / q - (T::one() - t) / (T::one() - q)) / n;
        }
    }
    acc / n
}

/// (1/WH)·Σ B·mask, or Σ B·(1 − mask) with `complement`.
pub fn overlap<T: Real>(b: &[T], mask: &[f32], complement: bool, grad: Option<(&mut [T], T)>) -> T {
    let n = T::c(b.len() as f64);
    let mut acc = T::zero();
    let mut grad = grad;
    for (j, (&bv, &m)) in b.iter().zip(mask).enumerate() {
        let m = T::c(if complement { 1.0 - m as f64 } else { m as f64 });
        acc += bv * m;
        if let Some((g, s)) = grad.as_mut() {
            g[j] += *s * m / n;
        }
    }
    acc / n
}

/// Collision loss for one step: overlap of the box heatmap with other agents.
pub fn collision_loss<T: Real>(b: &[T], objects: &[f32]) -> T {
    overlap(b, objects, false, None)
}

/// Off-road loss: box mass outside the road mask.
pub fn onroad_loss<T: Real>(b: &[T], road: &[f32]) -> T {
    overlap(b, road, true, None)
}

/// Geometry loss: box mass outside the target-geometry mask.
pub fn geometry_loss<T: Real>(b: &[T], geometry: &[f32]) -> T {
    overlap(b, geometry, true, None)
}

/// |θ − θ_gt| with the difference wrapped into (−π, π].
pub fn heading_l1(theta: f64, gt: f64) -> (f64, f64) {
    let d = wrap_angle(theta - gt);
    (d.abs(), if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 })
}

fn l1(a: f64, b: f64) -> (f64, f64) {
    let d = a - b;
    (d.abs(), if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 })
}

/// Per-step predictions as consumed by the imitation losses.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutputs<'a, T> {
    pub heatmap: &'a [T],
    pub box_heatmap: &'a [T],
    /// (δu, δv, θ, speed)
    pub meta: [T; 4],
}

/// The five imitation terms for a sequence of predictions, summed over k.
pub fn imitation_losses<T: Real>(steps: &[StepOutputs<'_, T>], tgt: &TargetStack) -> Result<[f64; 5]> {
    if steps.len() != tgt.n || steps.iter().any(|s| s.heatmap.len() != tgt.pixels() || s.box_heatmap.len() != tgt.pixels()) {
        return Err(Error::ShapeMismatch("predictions do not match targets".into()));
    }
    let mut out = [0.0; 5];
    for (k, st) in steps.iter().enumerate() {
        let vals = [
            waypoint_ce(st.heatmap, tgt.waypoint_pixel[k], None).f64(),
            bce_mean(st.box_heatmap, tgt.box_mask(k), None).f64(),
            heading_l1(st.meta[2].f64(), tgt.theta[k]).0,
            l1(st.meta[0].f64(), tgt.subpixel[k][0]).0 + l1(st.meta[1].f64(), tgt.subpixel[k][1]).0,
            l1(st.meta[3].f64(), tgt.speed[k]).0,
        ];
        for (o, v) in out.iter_mut().zip(vals) {
            *o += v;
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("imitation_losses"));
    }
    Ok(out)
}

/// Auxiliary head losses: (objects summed over k, road).
pub fn auxiliary_losses<T: Real>(objects: &[Vec<T>], tgt: &TargetStack, road: &[T]) -> Result<(f64, f64)> {
    let mut lo = 0.0;
    for (k, o) in objects.iter().enumerate() {
        lo += bce_mean(o, tgt.objects_at(k + 1), None).f64();
    }
    let lr = bce_mean(road, &tgt.road, None).f64();
    if !lo.is_finite() || !lr.is_finite() {
        return Err(Error::NonFiniteInput("auxiliary_losses"));
    }
    Ok((lo, lr))
}

/// Loss values and the gradient seeds for `net::backward` of one example.
/// `w` holds the per-term weights (see `ModelConfig::term_weights`); terms
/// with zero weight are still evaluated but contribute no gradient, except
/// that the environment terms are skipped entirely when the auxiliary heads
/// were not run.
pub fn example_losses<T: Real>(fwd: &Forward<T>, tgt: &TargetStack, w: &[f64; 10]) -> Result<(LossBundle, OutputGrads<T>)> {
    let n = fwd.steps.len();
    let hw = tgt.pixels();
    if n != tgt.n || fwd.steps.iter().any(|s| s.p.len() != hw) {
        return Err(Error::ShapeMismatch("forward pass does not match targets".into()));
    }
    let env = fwd.road.is_some();
    let mut v = [0.0; 10];
    let mut g = OutputGrads::zeros(n);
    let wt: Vec<T> = w.iter().map(|&x| T::c(x)).collect();
    for (k, st) in fwd.steps.iter().enumerate() {
        let mut dp = vec![T::zero(); hw];
        let mut db = vec![T::zero(); hw];
        v[0] += waypoint_ce(&st.p, tgt.waypoint_pixel[k], Some((&mut dp, wt[0]))).f64();
        v[1] += bce_mean(&st.b, tgt.box_mask(k), Some((&mut db, wt[1]))).f64();
        let (lh, sh) = heading_l1(st.meta[2].f64(), tgt.theta[k]);
        let (lu, su) = l1(st.meta[0].f64(), tgt.subpixel[k][0]);
        let (lv, sv) = l1(st.meta[1].f64(), tgt.subpixel[k][1]);
        let (ls, ss) = l1(st.meta[3].f64(), tgt.speed[k]);
        v[2] += lh;
        v[3] += lu + lv;
        v[4] += ls;
        g.d_meta[k] = [T::c(w[3] * su), T::c(w[3] * sv), T::c(w[2] * sh), T::c(w[4] * ss)];
        if env {
            v[5] += overlap(&st.b, tgt.objects_at(k + 1), false, Some((&mut db, wt[5]))).f64();
            v[6] += overlap(&st.b, &tgt.road, true, Some((&mut db, wt[6]))).f64();
            v[7] += overlap(&st.b, &tgt.geometry, true, Some((&mut db, wt[7]))).f64();
        }
        g.d_p[k] = dp;
        g.d_b[k] = db;
    }
    if let Some(road) = &fwd.road {
        for (k, st) in fwd.perception.iter().enumerate() {
            let mut d = vec![T::zero(); hw];
            v[8] += bce_mean(&st.obj, tgt.objects_at(k + 1), Some((&mut d, wt[8]))).f64();
            g.d_obj[k] = d;
        }
        let mut d = vec![T::zero(); hw];
        v[9] = bce_mean(&road.road, &tgt.road, Some((&mut d, wt[9]))).f64();
        g.d_road = d;
    }
    let bundle = LossBundle::from_values(v);
    if !bundle.is_finite() {
        return Err(Error::NonFiniteInput("example_losses"));
    }
    Ok((bundle, g))
}

/// Weighted total of a bundle.
pub fn weighted(bundle: &LossBundle, w: &[f64; 10]) -> f64 {
    bundle.values().iter().zip(w).map(|(a, b)| a * b).sum()
}
