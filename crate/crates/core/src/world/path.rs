//! Arc-length parameterised polylines.

use crate::geometry::wrap_angle;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub points: Vec<[f64; 2]>,
    #[serde(skip)]
    cum: Vec<f64>,
}

/// Position, tangent heading and left normal at an arc length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl PathPoint {
    pub fn offset(&self, d: f64) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        [self.x - s * d, self.y + c * d]
    }
}

impl Polyline {
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        let mut p = Polyline { points, cum: Vec::new() };
        p.rebuild();
        p
    }

    /// Recompute cached arc lengths (needed after deserialisation).
    pub fn rebuild(&mut self) {
        let mut cum = Vec::with_capacity(self.points.len());
        let mut acc = 0.0;
        for (i, p) in self.points.iter().enumerate() {
            if i > 0 {
                let q = self.points[i - 1];
                acc += (p[0] - q[0]).hypot(p[1] - q[1]);
            }
            cum.push(acc);
        }
        self.cum = cum;
    }

    pub fn length(&self) -> f64 {
        self.cum.last().copied().unwrap_or(0.0)
    }

    fn segment_heading(&self, i: usize) -> f64 {
        let (a, b) = (self.points[i], self.points[i + 1]);
        (b[1] - a[1]).atan2(b[0] - a[0])
    }

    fn vertex_heading(&self, i: usize) -> f64 {
        let n = self.points.len();
        if i == 0 {
            return self.segment_heading(0);
        }
        if i >= n - 1 {
            return self.segment_heading(n - 2);
        }
        let h0 = self.segment_heading(i - 1);
        let h1 = self.segment_heading(i);
        wrap_angle(h0 + 0.5 * wrap_angle(h1 - h0))
    }

    fn locate(&self, s: f64) -> (usize, f64) {
        let n = self.points.len();
        let i = match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 2),
        };
        let len = self.cum[i + 1] - self.cum[i];
        (i, if len > 0.0 { (s - self.cum[i]) / len } else { 0.0 })
    }

    /// Point at arc length `s`; extrapolates linearly past either end.
    pub fn at(&self, s: f64) -> PathPoint {
        let (i, f) = self.locate(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let (h0, h1) = (self.vertex_heading(i), self.vertex_heading(i + 1));
        let fc = f.clamp(0.0, 1.0);
        PathPoint {
            x: a[0] + (b[0] - a[0]) * f,
            y: a[1] + (b[1] - a[1]) * f,
            heading: wrap_angle(h0 + wrap_angle(h1 - h0) * fc),
        }
    }

    /// Closest point: (arc length, signed lateral offset, positive to the left).
    pub fn project(&self, x: f64, y: f64) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..self.points.len() - 1 {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len2 = dx * dx + dy * dy;
            if len2 == 0.0 {
                continue;
            }
            let first = i == 0;
            let last = i == self.points.len() - 2;
            let mut f = ((x - a[0]) * dx + (y - a[1]) * dy) / len2;
            if !(first && f < 0.0) && !(last && f > 1.0) {
                f = f.clamp(0.0, 1.0);
            }
            let (px, py) = (a[0] + f * dx, a[1] + f * dy);
            let dist2 = (x - px).powi(2) + (y - py).powi(2);
            if dist2 < best.0 {
                let len = len2.sqrt();
                let lateral = (dx * (y - a[1]) - dy * (x - a[0])) / len;
                best = (dist2, self.cum[i] + f * len, lateral);
            }
        }
        (best.1, best.2)
    }

    /// Offset curve at constant lateral distance (left positive).
    pub fn offset(&self, d: f64) -> Polyline {
        let pts = (0..self.points.len())
            .map(|i| {
                let h = self.vertex_heading(i);
                let p = self.points[i];
                [p[0] - h.sin() * d, p[1] + h.cos() * d]
            })
            .collect();
        Polyline::new(pts)
    }

    pub fn reversed(&self) -> Polyline {
        let mut pts = self.points.clone();
        pts.reverse();
        Polyline::new(pts)
    }

    /// Points between two arc lengths (inclusive of interpolated ends).
    pub fn slice(&self, s0: f64, s1: f64) -> Vec<[f64; 2]> {
        let mut out = Vec::new();
        let p = self.at(s0);
        out.push([p.x, p.y]);
        for (i, &c) in self.cum.iter().enumerate() {
            if c > s0 && c < s1 {
                out.push(self.points[i]);
            }
        }
        let p = self.at(s1);
        out.push([p.x, p.y]);
        out
    }
}
