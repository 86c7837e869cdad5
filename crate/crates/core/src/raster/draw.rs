//! Scan-conversion primitives on single-channel f32 canvases. A pixel (i, j)
//! covers [i, i+1) × [j, j+1); it is set when its centre lies inside the
//! shape. Writes take the maximum with the existing value.

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image { width, height, data: vec![0.0; width * height] }
    }

    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.data[v * self.width + u]
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&x| x != 0.0).count()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&x| x as f64).sum()
    }
}

/// Mutable view onto one channel.
pub struct Canvas<'a> {
    pub width: usize,
    pub height: usize,
    pub data: &'a mut [f32],
}

impl<'a> Canvas<'a> {
    pub fn new(width: usize, height: usize, data: &'a mut [f32]) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Canvas { width, height, data }
    }

    #[inline]
    pub fn put(&mut self, u: i64, v: i64, value: f32) {
        if u >= 0 && v >= 0 && (u as usize) < self.width && (v as usize) < self.height {
            let px = &mut self.data[v as usize * self.width + u as usize];
            if value > *px {
                *px = value;
            }
        }
    }

    fn clip_range(&self, lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
        // pixel centres c = i + 0.5 with lo <= c <= hi
        let a = (lo - 0.5).ceil().max(0.0);
        let b = (hi - 0.5).floor().min(n as f64 - 1.0);
        if a > b {
            None
        } else {
            Some((a as usize, b as usize))
        }
    }

    /// Fill a convex polygon given in raster coordinates (either winding).
    pub fn fill_convex(&mut self, poly: &[[f64; 2]], value: f32) {
        let n = poly.len();
        if n < 3 {
            return;
        }
        let mut area = 0.0;
        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            area += a[0] * b[1] - b[0] * a[1];
        }
        if area.abs() < 1e-12 {
            return;
        }
        let sign = area.signum();
        let (mut u_lo, mut u_hi, mut v_lo, mut v_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in poly {
            u_lo = u_lo.min(p[0]);
            u_hi = u_hi.max(p[0]);
            v_lo = v_lo.min(p[1]);
            v_hi = v_hi.max(p[1]);
        }
        let (Some((u0, u1)), Some((v0, v1))) =
            (self.clip_range(u_lo, u_hi, self.width), self.clip_range(v_lo, v_hi, self.height))
        else {
            return;
        };
        const EPS: f64 = 1e-9;
        for v in v0..=v1 {
            let cy = v as f64 + 0.5;
            // intersect the scanline with every half-plane to get a u interval
            let (mut lo, mut hi) = (u_lo - 1.0, u_hi + 1.0);
            for i in 0..n {
                let (a, b) = (poly[i], poly[(i + 1) % n]);
                // inside iff sign * cross(b - a, c - a) >= 0
                let ex = b[0] - a[0];
                let ey = b[1] - a[1];
                // cross = ex*(cy - a1) - ey*(cx - a0) = k + m*cx
                let m = -ey * sign;
                let k = (ex * (cy - a[1]) + ey * a[0]) * sign;
                if m.abs() < 1e-15 {
                    if k < -EPS {
                        lo = f64::MAX;
                        break;
                    }
                } else if m > 0.0 {
                    lo = lo.max((-EPS - k) / m);
                } else {
                    hi = hi.min((-EPS - k) / m);
                }
            }
            if lo > hi {
                continue;
            }
            if let Some((a, b)) = self.clip_range(lo.max(u0 as f64), hi.min(u1 as f64 + 1.0), self.width) {
                let row = &mut self.data[v * self.width..(v + 1) * self.width];
                for px in &mut row[a.max(u0)..=b.min(u1)] {
                    if value > *px {
                        *px = value;
                    }
                }
            }
        }
    }

    pub fn fill_disk(&mut self, c: [f64; 2], r: f64, value: f32) {
        let (Some((u0, u1)), Some((v0, v1))) =
            (self.clip_range(c[0] - r, c[0] + r, self.width), self.clip_range(c[1] - r, c[1] + r, self.height))
        else {
            return;
        };
        for v in v0..=v1 {
            for u in u0..=u1 {
                let dx = u as f64 + 0.5 - c[0];
                let dy = v as f64 + 0.5 - c[1];
                if dx * dx + dy * dy <= r * r {
                    self.put(u as i64, v as i64, value);
                }
            }
        }
    }

    /// 1-px line: every pixel the segment passes through (sampled at 1/4 px).
    pub fn line(&mut self, a: [f64; 2], b: [f64; 2], value: f32) {
        let len = (b[0] - a[0]).abs().max((b[1] - a[1]).abs());
        if !self.touches(a, b, 1.0) {
            return;
        }
        let steps = (len * 4.0).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let u = a[0] + (b[0] - a[0]) * t;
            let v = a[1] + (b[1] - a[1]) * t;
            self.put(u.floor() as i64, v.floor() as i64, value);
        }
    }

    pub fn polyline(&mut self, pts: &[[f64; 2]], value: f32) {
        for w in pts.windows(2) {
            self.line(w[0], w[1], value);
        }
    }

    /// Thick polyline of full width `width` px, with round joins.
    pub fn stroke(&mut self, pts: &[[f64; 2]], width: f64, value: f32) {
        let hw = width / 2.0;
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            if !self.touches(a, b, hw + 1.0) {
                continue;
            }
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len = dx.hypot(dy);
            if len > 1e-12 {
                let (nx, ny) = (-dy / len * hw, dx / len * hw);
                self.fill_convex(
                    &[[a[0] + nx, a[1] + ny], [b[0] + nx, b[1] + ny], [b[0] - nx, b[1] - ny], [a[0] - nx, a[1] - ny]],
                    value,
                );
            }
        }
        for p in pts {
            if p[0] > -hw - 1.0 && p[1] > -hw - 1.0 && p[0] < self.width as f64 + hw + 1.0 && p[1] < self.height as f64 + hw + 1.0 {
                self.fill_disk(*p, hw, value);
            }
        }
    }

    fn touches(&self, a: [f64; 2], b: [f64; 2], margin: f64) -> bool {
        let (w, h) = (self.width as f64 + margin, self.height as f64 + margin);
        !(a[0].max(b[0]) < -margin || a[1].max(b[1]) < -margin || a[0].min(b[0]) > w || a[1].min(b[1]) > h)
    }
}

/// Corners of an oriented rectangle, counter-clockwise in world axes.
pub fn box_corners(center: [f64; 2], heading: f64, length: f64, width: f64) -> [[f64; 2]; 4] {
    let (s, c) = heading.sin_cos();
    let (hl, hw) = (length / 2.0, width / 2.0);
    let f = [c * hl, s * hl];
    let l = [-s * hw, c * hw];
    [
        [center[0] + f[0] - l[0], center[1] + f[1] - l[1]],
        [center[0] + f[0] + l[0], center[1] + f[1] + l[1]],
        [center[0] - f[0] + l[0], center[1] - f[1] + l[1]],
        [center[0] - f[0] - l[0], center[1] - f[1] - l[1]],
    ]
}
