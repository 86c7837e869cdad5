//! Top-down rendering of the input channel stack and the training targets.

mod draw;

pub use draw::{box_corners, Canvas, Image};

use crate::error::{Error, Result};
use crate::geometry::{fit_smooth_curve, Pose, RasterFrame, TimedPose, Trajectory};
use crate::world::{LightState, RoutePath, ScriptedAgent, World};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    pub u0: f64,
    pub v0: f64,
    /// Metres per pixel.
    pub resolution: f64,
    pub dt: f64,
    pub t_scene: f64,
    pub t_pose: f64,
    pub n_future: usize,
    /// Half-range of the training-time frame rotation, radians.
    pub rotation_jitter_max: f64,
    pub light_red: f32,
    pub light_yellow: f32,
    pub light_green: f32,
    pub speed_norm: f64,
    pub ego_length: f64,
    pub ego_width: f64,
}

impl RenderConfig {
    pub fn desk() -> Self {
        RenderConfig {
            width: 128,
            height: 128,
            u0: 64.0,
            v0: 102.0,
            resolution: 0.5,
            dt: 0.2,
            t_scene: 1.0,
            t_pose: 8.0,
            n_future: 10,
            rotation_jitter_max: 25f64.to_radians(),
            light_red: 1.0,
            light_yellow: 0.6,
            light_green: 0.3,
            speed_norm: 20.0,
            ego_length: 4.8,
            ego_width: 2.1,
        }
    }

    pub fn paper() -> Self {
        RenderConfig { width: 400, height: 400, u0: 200.0, v0: 320.0, resolution: 0.2, ..Self::desk() }
    }

    /// Tiny frame used by gradient checks and unit tests.
    pub fn tiny() -> Self {
        RenderConfig { width: 16, height: 16, u0: 8.0, v0: 12.0, resolution: 2.0, n_future: 3, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.width >= 8
            && self.height >= 8
            && self.resolution > 0.0
            && self.dt > 0.0
            && self.t_scene >= 0.0
            && self.t_pose >= self.t_scene
            && self.n_future >= 1
            && self.light_red > self.light_yellow
            && self.light_yellow > self.light_green
            && self.light_green > 0.0
            && self.light_red <= 1.0
            && self.speed_norm > 0.0;
        if !ok {
            return Err(Error::Invalid(format!("render config out of range: {self:?}")));
        }
        RasterFrame::new(Pose::default(), 0.0, self.width, self.height, self.u0, self.v0, self.resolution)?;
        Ok(())
    }

    pub fn n_scene_frames(&self) -> usize {
        (self.t_scene / self.dt).round() as usize + 1
    }

    pub fn n_past(&self) -> usize {
        (self.t_pose / self.dt).round() as usize + 1
    }

    pub fn layout(&self) -> Layout {
        Layout { n_scene: self.n_scene_frames() }
    }

    pub fn channel_count(&self) -> usize {
        self.layout().count()
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// History needed before the current time.
    pub fn history(&self) -> f64 {
        self.t_pose.max(self.t_scene)
    }

    pub fn frame(&self, origin: Pose, jitter: f64) -> RasterFrame {
        RasterFrame {
            origin_pose: origin,
            rotation_jitter: jitter,
            width_px: self.width,
            height_px: self.height,
            u0: self.u0,
            v0: self.v0,
            resolution: self.resolution,
        }
    }

    fn light_level(&self, s: LightState) -> f32 {
        match s {
            LightState::Red => self.light_red,
            LightState::Yellow => self.light_yellow,
            LightState::Green | LightState::Unknown => self.light_green,
        }
    }
}

/// Channel order of the input stack. Scene frames are indexed by age:
/// frame 0 is the current time, frame j is j·dt in the past.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n_scene: usize,
}

impl Layout {
    pub const ROAD: usize = 0;
    pub const LANES: usize = 1;
    /// Stop lines, crosswalks and curbs share one palette channel.
    pub const MARKINGS: usize = 2;

    pub fn light(&self, j: usize) -> usize {
        3 + j
    }
    pub fn speed_limit(&self) -> usize {
        3 + self.n_scene
    }
    pub fn route(&self) -> usize {
        4 + self.n_scene
    }
    pub fn agent_box(&self) -> usize {
        5 + self.n_scene
    }
    pub fn dynamic(&self, j: usize) -> usize {
        6 + self.n_scene + j
    }
    pub fn past(&self) -> usize {
        6 + 2 * self.n_scene
    }
    pub fn count(&self) -> usize {
        7 + 2 * self.n_scene
    }

    pub fn name(&self, c: usize) -> String {
        match c {
            0 => "roadmap-road".into(),
            1 => "roadmap-lanes".into(),
            2 => "roadmap-markings".into(),
            c if c < self.speed_limit() => format!("lights-t-{}", c - 3),
            c if c == self.speed_limit() => "speed-limit".into(),
            c if c == self.route() => "route".into(),
            c if c == self.agent_box() => "agent-box".into(),
            c if c < self.past() => format!("dynamic-t-{}", c - self.dynamic(0)),
            _ => "past-poses".into(),
        }
    }
}

/// Marking palette values in the markings channel.
pub const STOP_LINE_LEVEL: f32 = 1.0;
pub const CROSSWALK_LEVEL: f32 = 0.6;
pub const CURB_LEVEL: f32 = 0.3;
/// Length of lane coloured by a traffic light, metres before the light.
pub const LIGHT_LANE_SPAN: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct InputStack {
    pub width: usize,
    pub height: usize,
    pub layout: Layout,
    /// Channel-major, row-major within a channel.
    pub data: Vec<f32>,
    pub past_dropout: bool,
}

impl InputStack {
    pub fn zeros(cfg: &RenderConfig) -> Self {
        let layout = cfg.layout();
        InputStack {
            width: cfg.width,
            height: cfg.height,
            layout,
            data: vec![0.0; layout.count() * cfg.pixels()],
            past_dropout: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.layout.count()
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn canvas(&mut self, c: usize) -> Canvas<'_> {
        let n = self.width * self.height;
        Canvas::new(self.width, self.height, &mut self.data[c * n..(c + 1) * n])
    }
}

/// Everything in the scene except the ego vehicle.
#[derive(Clone, Copy)]
pub struct Scene<'a> {
    pub world: &'a World,
    pub agents: &'a [ScriptedAgent],
    /// The planned route; `None` leaves the route channel empty.
    pub route: Option<&'a RoutePath>,
}

fn to_raster(frame: &RasterFrame, p: [f64; 2]) -> [f64; 2] {
    let (u, v) = frame.world_to_raster(p[0], p[1]);
    [u, v]
}

fn project(frame: &RasterFrame, pts: &[[f64; 2]]) -> Vec<[f64; 2]> {
    pts.iter().map(|&p| to_raster(frame, p)).collect()
}

/// Rough visibility test in world space so long polylines are clipped early.
struct View {
    c: [f64; 2],
    r2: f64,
}

impl View {
    fn new(frame: &RasterFrame) -> Self {
        let (x, y) = frame.raster_to_world(frame.width_px as f64 / 2.0, frame.height_px as f64 / 2.0);
        let r = 0.5 * (frame.width_px as f64).hypot(frame.height_px as f64) * frame.resolution + 6.0;
        View { c: [x, y], r2: r * r }
    }
    fn sees(&self, p: [f64; 2]) -> bool {
        let (dx, dy) = (p[0] - self.c[0], p[1] - self.c[1]);
        dx * dx + dy * dy <= self.r2
    }
    /// Runs of consecutive visible points (with one point of context).
    fn runs(&self, pts: &[[f64; 2]]) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = None;
        for (i, &p) in pts.iter().enumerate() {
            match (self.sees(p), start) {
                (true, None) => start = Some(i.saturating_sub(1)),
                (false, Some(s)) => {
                    out.push(s..i + 1);
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push(s..pts.len());
        }
        out
    }
}

pub fn rasterize_oriented_box(
    canvas: &mut Canvas<'_>,
    frame: &RasterFrame,
    center: [f64; 2],
    heading: f64,
    length: f64,
    width: f64,
    value: f32,
) {
    let c = box_corners(center, heading, length, width);
    canvas.fill_convex(&c.map(|p| to_raster(frame, p)), value);
}

/// Box mask as a standalone image.
pub fn oriented_box_image(frame: &RasterFrame, center: [f64; 2], heading: f64, length: f64, width: f64) -> Image {
    let mut img = Image::new(frame.width_px, frame.height_px);
    let mut c = Canvas::new(img.width, img.height, &mut img.data);
    rasterize_oriented_box(&mut c, frame, center, heading, length, width, 1.0);
    img
}

fn fill_road(canvas: &mut Canvas<'_>, frame: &RasterFrame, view: &View, world: &World) {
    for corr in &world.road {
        for q in corr.quads() {
            if q.iter().any(|&p| view.sees(p)) {
                canvas.fill_convex(&q.map(|p| to_raster(frame, p)), 1.0);
            }
        }
    }
}

fn stroke_world(canvas: &mut Canvas<'_>, frame: &RasterFrame, view: &View, pts: &[[f64; 2]], width_m: f64, value: f32) {
    for r in view.runs(pts) {
        canvas.stroke(&project(frame, &pts[r]), width_m / frame.resolution, value);
    }
}

fn line_world(canvas: &mut Canvas<'_>, frame: &RasterFrame, view: &View, pts: &[[f64; 2]], value: f32) {
    for r in view.runs(pts) {
        canvas.polyline(&project(frame, &pts[r]), value);
    }
}

/// Render the input stack at time `t_now` in `frame`.
pub fn render_input(
    scene: Scene<'_>,
    ego_history: &Trajectory,
    frame: &RasterFrame,
    t_now: f64,
    cfg: &RenderConfig,
    past_dropout: bool,
) -> Result<InputStack> {
    let need = t_now - cfg.history();
    if ego_history.start_time > need + 1e-6 || ego_history.end_time() < t_now - 1e-6 {
        return Err(Error::InsufficientHistory(format!(
            "ego history covers [{:.2}, {:.2}], need [{need:.2}, {t_now:.2}]",
            ego_history.start_time,
            ego_history.end_time()
        )));
    }
    let mut stack = InputStack::zeros(cfg);
    stack.past_dropout = past_dropout;
    let layout = stack.layout;
    let view = View::new(frame);
    let world = scene.world;

    fill_road(&mut stack.canvas(Layout::ROAD), frame, &view, world);
    {
        let mut lanes = stack.canvas(Layout::LANES);
        for lane in &world.lanes {
            line_world(&mut lanes, frame, &view, &lane.centerline.points, 1.0);
        }
    }
    {
        let mut marks = stack.canvas(Layout::MARKINGS);
        for curb in &world.curbs {
            line_world(&mut marks, frame, &view, curb, CURB_LEVEL);
        }
        for cw in &world.crosswalks {
            stroke_world(&mut marks, frame, &view, cw, 3.0, CROSSWALK_LEVEL);
        }
        for sign in &world.stop_signs {
            if let Some(lane) = world.lane(sign.lane) {
                let p = lane.centerline.at(sign.s);
                let seg = [p.offset(lane.width / 2.0), p.offset(-lane.width / 2.0)];
                stroke_world(&mut marks, frame, &view, &seg, 0.6, STOP_LINE_LEVEL);
            }
        }
    }
    for j in 0..layout.n_scene {
        let t = t_now - j as f64 * cfg.dt;
        let mut ch = stack.canvas(layout.light(j));
        for light in &world.traffic_lights {
            if let Some(lane) = world.lane(light.lane) {
                let seg = lane.centerline.slice(light.s - LIGHT_LANE_SPAN, light.s);
                stroke_world(&mut ch, frame, &view, &seg, 1.5, cfg.light_level(light.state_at(t)));
            }
        }
    }
    {
        let mut ch = stack.canvas(layout.speed_limit());
        for lane in &world.lanes {
            let level = (lane.speed_limit / cfg.speed_norm).clamp(0.0, 1.0) as f32;
            let left = lane.centerline.offset(lane.width / 2.0);
            let right = lane.centerline.offset(-lane.width / 2.0);
            for i in 0..left.points.len().saturating_sub(1) {
                let q = [left.points[i], left.points[i + 1], right.points[i + 1], right.points[i]];
                if q.iter().any(|&p| view.sees(p)) {
                    ch.fill_convex(&q.map(|p| to_raster(frame, p)), level);
                }
            }
        }
    }
    if let Some(route) = scene.route {
        stroke_world(&mut stack.canvas(layout.route()), frame, &view, &route.line.points, 1.0, 1.0);
    }

    let ego = ego_history.sample(t_now);
    rasterize_oriented_box(
        &mut stack.canvas(layout.agent_box()),
        frame,
        ego.position(),
        ego.theta,
        cfg.ego_length,
        cfg.ego_width,
        1.0,
    );
    for j in 0..layout.n_scene {
        let t = t_now - j as f64 * cfg.dt;
        let mut ch = stack.canvas(layout.dynamic(j));
        for a in scene.agents {
            let p = a.pose_at(t);
            if view.sees(p.position()) {
                rasterize_oriented_box(&mut ch, frame, p.position(), p.theta, a.agent.length, a.agent.width, 1.0);
            }
        }
    }
    {
        let n_past = if past_dropout { 1 } else { cfg.n_past() };
        let mut ch = stack.canvas(layout.past());
        for j in 0..n_past {
            let p = ego_history.sample(t_now - j as f64 * cfg.dt);
            let [u, v] = to_raster(frame, p.position());
            ch.put(u.floor() as i64, v.floor() as i64, 1.0);
        }
    }
    Ok(stack)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetStack {
    pub width: usize,
    pub height: usize,
    pub n: usize,
    /// Continuous raster position of each future waypoint.
    pub waypoints: Vec<[f64; 2]>,
    /// Flat index (v·W + u) of ⌊p_k⌋.
    pub waypoint_pixel: Vec<usize>,
    pub subpixel: Vec<[f64; 2]>,
    /// Heading relative to the frame's up axis.
    pub theta: Vec<f64>,
    pub speed: Vec<f64>,
    /// N box masks, each W·H.
    pub boxes: Vec<f32>,
    /// N+1 object masks; index 0 is the current time.
    pub objects: Vec<f32>,
    pub road: Vec<f32>,
    pub geometry: Vec<f32>,
}

impl TargetStack {
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn waypoint_onehot(&self, k: usize) -> Image {
        let mut img = Image::new(self.width, self.height);
        img.data[self.waypoint_pixel[k]] = 1.0;
        img
    }

    pub fn box_mask(&self, k: usize) -> &[f32] {
        let n = self.pixels();
        &self.boxes[k * n..(k + 1) * n]
    }

    /// Objects at future step k (1..=N) or the current time (k = 0).
    pub fn objects_at(&self, k: usize) -> &[f32] {
        let n = self.pixels();
        &self.objects[k * n..(k + 1) * n]
    }

    pub fn pixel_uv(&self, k: usize) -> (usize, usize) {
        (self.waypoint_pixel[k] % self.width, self.waypoint_pixel[k] / self.width)
    }
}

/// Render ground truth for the N poses following `t_now` on `future`.
pub fn render_targets(
    scene: Scene<'_>,
    future: &Trajectory,
    frame: &RasterFrame,
    t_now: f64,
    cfg: &RenderConfig,
) -> Result<TargetStack> {
    let n = cfg.n_future;
    let t_last = t_now + n as f64 * cfg.dt;
    if future.start_time > t_now + cfg.dt + 1e-6 || future.end_time() < t_last - 1e-6 {
        return Err(Error::InsufficientHistory(format!(
            "future covers [{:.2}, {:.2}], need up to {t_last:.2}",
            future.start_time,
            future.end_time()
        )));
    }
    let (w, h) = (cfg.width, cfg.height);
    let npx = w * h;
    let poses: Vec<Pose> = (1..=n).map(|k| future.sample(t_now + k as f64 * cfg.dt)).collect();
    let mut out = TargetStack {
        width: w,
        height: h,
        n,
        waypoints: Vec::with_capacity(n),
        waypoint_pixel: Vec::with_capacity(n),
        subpixel: Vec::with_capacity(n),
        theta: Vec::with_capacity(n),
        speed: Vec::with_capacity(n),
        boxes: vec![0.0; n * npx],
        objects: vec![0.0; (n + 1) * npx],
        road: vec![0.0; npx],
        geometry: vec![0.0; npx],
    };
    for (k, p) in poses.iter().enumerate() {
        let (u, v) = frame.world_to_raster(p.x, p.y);
        if !(u >= 0.0 && v >= 0.0 && u < w as f64 && v < h as f64) {
            return Err(Error::WaypointOutOfView { index: k + 1, u, v });
        }
        let (fu, fv) = (u.floor(), v.floor());
        out.waypoints.push([u, v]);
        out.waypoint_pixel.push(fv as usize * w + fu as usize);
        out.subpixel.push([u - fu, v - fv]);
        out.theta.push(frame.heading_to_raster(p.theta));
        out.speed.push(p.speed);
        let mut c = Canvas::new(w, h, &mut out.boxes[k * npx..(k + 1) * npx]);
        rasterize_oriented_box(&mut c, frame, p.position(), p.theta, cfg.ego_length, cfg.ego_width, 1.0);
    }
    let view = View::new(frame);
    for k in 0..=n {
        let t = t_now + k as f64 * cfg.dt;
        let mut c = Canvas::new(w, h, &mut out.objects[k * npx..(k + 1) * npx]);
        for a in scene.agents {
            let p = a.pose_at(t);
            if view.sees(p.position()) {
                rasterize_oriented_box(&mut c, frame, p.position(), p.theta, a.agent.length, a.agent.width, 1.0);
            }
        }
    }
    fill_road(&mut Canvas::new(w, h, &mut out.road), frame, &view, scene.world);

    // target geometry: smooth curve through the current pose and the waypoints
    let current = future.sample(t_now);
    let mut knots = vec![TimedPose { t: 0.0, pose: current }];
    knots.extend(poses.iter().enumerate().map(|(k, p)| TimedPose { t: (k + 1) as f64 * cfg.dt, pose: *p }));
    let pts: Vec<[f64; 2]> = if knots.len() >= 3 {
        let curve = fit_smooth_curve(&knots, true)?;
        let m = 8 * n;
        (0..=m).map(|i| curve.position(n as f64 * cfg.dt * i as f64 / m as f64)).collect()
    } else {
        knots.iter().map(|k| k.pose.position()).collect()
    };
    Canvas::new(w, h, &mut out.geometry).stroke(&project(frame, &pts), cfg.ego_width / cfg.resolution, 1.0);
    Ok(out)
}
