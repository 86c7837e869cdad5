//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

/// Curvature of the circle through three points (0 when collinear).
pub fn circumcurvature(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let ab = (b[0] - a[0]).hypot(b[1] - a[1]);
    let bc = (c[0] - b[0]).hypot(c[1] - b[1]);
    let ca = (a[0] - c[0]).hypot(a[1] - c[1]);
    let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let denom = ab * bc * ca;
    if denom < 1e-15 {
        0.0
    } else {
        2.0 * cross.abs() / denom
    }
}

/// Largest three-point curvature along a densely sampled point sequence.
pub fn max_curvature(points: &[[f64; 2]]) -> f64 {
    points.windows(3).map(|w| circumcurvature(w[0], w[1], w[2])).fold(0.0, f64::max)
}

/// Rotate a W×H mask by `angle` about (u0, v0): every output pixel averages
/// 4×4 inverse-mapped sub-samples of the source and is thresholded at 1/2.
pub fn rotate_image(img: &[f32], w: usize, h: usize, angle: f64, u0: f64, v0: f64) -> Vec<f32> {
    let (s, c) = angle.sin_cos();
    let mut out = vec![0.0; w * h];
    for v in 0..h {
        for u in 0..w {
            let mut acc = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    let x = u as f64 + (i as f64 + 0.5) / 4.0 - u0;
                    let y = v as f64 + (j as f64 + 0.5) / 4.0 - v0;
                    let (xs, ys) = (c * x + s * y + u0, -s * x + c * y + v0);
                    if xs >= 0.0 && ys >= 0.0 && xs < w as f64 && ys < h as f64 {
                        acc += img[ys as usize * w + xs as usize] as f64;
                    }
                }
            }
            out[v * w + u] = if acc / 16.0 >= 0.5 { 1.0 } else { 0.0 };
        }
    }
    out
}

pub fn iou(a: &[f32], b: &[f32]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x > 0.5, y > 0.5);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub const EPS: f64 = 1e-7;

fn clip(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

/// (1/WH)·Σ_v Σ_u B·m, with m replaced by 1 − m when `complement`.
pub fn overlap(b: &[f64], m: &[f32], w: usize, h: usize, complement: bool) -> f64 {
    let mut s = 0.0;
    for v in 0..h {
        for u in 0..w {
            let mv = m[v * w + u] as f64;
            s += b[v * w + u] * if complement { 1.0 - mv } else { mv };
        }
    }
    s / (w * h) as f64
}

pub fn bce(p: &[f64], t: &[f32], w: usize, h: usize) -> f64 {
    let mut s = 0.0;
    for v in 0..h {
        for u in 0..w {
            let q = clip(p[v * w + u]);
            let tv = t[v * w + u] as f64;
            s -= tv * q.ln() + (1.0 - tv) * (1.0 - q).ln();
        }
    }
    s / (w * h) as f64
}

/// Cross-entropy against the one-hot image with its 1 at (gu, gv).
pub fn one_hot_ce(p: &[f64], w: usize, h: usize, gu: usize, gv: usize) -> f64 {
    let mut s = 0.0;
    for v in 0..h {
        for u in 0..w {
            let t = if (u, v) == (gu, gv) { 1.0 } else { 0.0 };
            s -= t * clip(p[v * w + u]).ln();
        }
    }
    s
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

/// A constant-curvature drive: `n` samples every `dt` at `speed`.
pub fn arc_trajectory(n: usize, dt: f64, speed: f64, kappa: f64, x0: f64, y0: f64, th0: f64) -> midsim::geometry::Trajectory {
    let poses = (0..n)
        .map(|i| {
            let s = speed * dt * i as f64;
            let (x, y) = if kappa.abs() < 1e-12 {
                (s, 0.0)
            } else {
                ((kappa * s).sin() / kappa, (1.0 - (kappa * s).cos()) / kappa)
            };
            let (sn, cs) = th0.sin_cos();
            midsim::geometry::Pose::new(x0 + cs * x - sn * y, y0 + sn * x + cs * y, th0 + kappa * s, speed)
        })
        .collect();
    midsim::geometry::Trajectory::new(0.0, dt, poses).unwrap()
}
