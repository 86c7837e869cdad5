//! On-disk formats: the rendered-example cache, graymap channel dumps and
//! per-tick trace dumps.

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::raster::{InputStack, RenderConfig, TargetStack};
use crate::trainer::Example;
use byteorder::{LittleEndian, ReadBytesExt};
use std::io::{Cursor, Read, Write};

pub const EXAMPLE_MAGIC: &[u8] = b"midsim-ex v1\n";

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    out.reserve(v.len() * 4);
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_f64s(out: &mut Vec<u8>, v: impl IntoIterator<Item = f64>) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Target section of the example format (also used for content hashing).
pub fn targets_bytes(t: &TargetStack) -> Vec<u8> {
    let mut out = Vec::new();
    put_f64s(&mut out, t.waypoints.iter().flatten().copied());
    for &p in &t.waypoint_pixel {
        out.extend_from_slice(&(p as u32).to_le_bytes());
    }
    put_f64s(&mut out, t.subpixel.iter().flatten().copied());
    put_f64s(&mut out, t.theta.iter().copied());
    put_f64s(&mut out, t.speed.iter().copied());
    put_f32s(&mut out, &t.boxes);
    put_f32s(&mut out, &t.objects);
    put_f32s(&mut out, &t.road);
    put_f32s(&mut out, &t.geometry);
    out
}

/// Little-endian: magic, u32 W, H, channels, N, u8 flags (bit 0 perturbed,
/// bit 1 past dropout), f64 weight, frame origin (x, y, θ, speed) and
/// jitter, channel data as row-major f32, then the target section.
pub fn encode_example(ex: &Example) -> Vec<u8> {
    let mut out = EXAMPLE_MAGIC.to_vec();
    for v in [ex.input.width, ex.input.height, ex.input.channels(), ex.targets.n] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(ex.perturbed as u8 | (ex.past_dropout as u8) << 1);
    let o = ex.frame.origin_pose;
    put_f64s(&mut out, [ex.weight, o.x, o.y, o.theta, o.speed, ex.frame.rotation_jitter]);
    put_f32s(&mut out, &ex.input.data);
    out.extend_from_slice(&targets_bytes(&ex.targets));
    out
}

fn f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut v = vec![0.0f32; n];
    r.read_f32_into::<LittleEndian>(&mut v)?;
    Ok(v)
}

fn f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut v = vec![0.0f64; n];
    r.read_f64_into::<LittleEndian>(&mut v)?;
    Ok(v)
}

fn pairs(v: Vec<f64>) -> Vec<[f64; 2]> {
    v.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

pub fn decode_example(bytes: &[u8], cfg: &RenderConfig) -> Result<Example> {
    if !bytes.starts_with(EXAMPLE_MAGIC) {
        return Err(Error::Format("not a midsim example".into()));
    }
    let mut r = Cursor::new(&bytes[EXAMPLE_MAGIC.len()..]);
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = r.read_u32::<LittleEndian>()? as usize;
    }
    let [w, h, c, n] = dims;
    if w != cfg.width || h != cfg.height || c != cfg.channel_count() || n != cfg.n_future {
        return Err(Error::Format(format!("example {w}x{h}x{c} N={n} does not match the render config")));
    }
    let flags = r.read_u8()?;
    let head = f64s(&mut r, 6)?;
    let hw = w * h;
    let mut input = InputStack::zeros(cfg);
    input.data = f32s(&mut r, c * hw)?;
    input.past_dropout = flags & 2 != 0;
    let waypoints = pairs(f64s(&mut r, 2 * n)?);
    let waypoint_pixel =
        (0..n).map(|_| r.read_u32::<LittleEndian>().map(|p| p as usize)).collect::<std::io::Result<Vec<_>>>()?;
    let subpixel = pairs(f64s(&mut r, 2 * n)?);
    let theta = f64s(&mut r, n)?;
    let speed = f64s(&mut r, n)?;
    let targets = TargetStack {
        width: w,
        height: h,
        n,
        waypoints,
        waypoint_pixel,
        subpixel,
        theta,
        speed,
        boxes: f32s(&mut r, n * hw)?,
        objects: f32s(&mut r, (n + 1) * hw)?,
        road: f32s(&mut r, hw)?,
        geometry: f32s(&mut r, hw)?,
    };
    if (r.position() as usize) != bytes.len() - EXAMPLE_MAGIC.len() {
        return Err(Error::Format("trailing bytes in example".into()));
    }
    let frame = cfg.frame(Pose::new(head[1], head[2], head[3], head[4]), head[5]);
    Ok(Example { input, targets, weight: head[0], perturbed: flags & 1 != 0, past_dropout: flags & 2 != 0, frame })
}

/// Linear map of a channel onto 0..=255: `round(255 · clamp((v − lo) / (hi − lo), 0, 1))`.
pub fn to_gray(v: &[f32], lo: f32, hi: f32) -> Vec<u8> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    v.iter().map(|&x| (255.0 * ((x - lo) / span).clamp(0.0, 1.0)).round() as u8).collect()
}

/// Binary portable graymap.
pub fn write_pgm<W: Write>(mut out: W, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::ShapeMismatch(format!("{} pixels for {width}x{height}", pixels.len())));
    }
    write!(out, "P5\n{width} {height}\n255\n")?;
    out.write_all(pixels)?;
    Ok(())
}

pub fn read_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = || Error::Format("malformed graymap".into());
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| bad())?.to_string());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad());
    }
    let w: usize = fields[1].parse().map_err(|_| bad())?;
    let h: usize = fields[2].parse().map_err(|_| bad())?;
    let data = bytes.get(i + 1..).ok_or_else(bad)?;
    if data.len() != w * h {
        return Err(bad());
    }
    Ok((w, h, data.to_vec()))
}

/// One simulator tick for trace dumps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub speed: f64,
    pub steering: f64,
}

pub const TRACE_HEADER: &str = "t,x,y,theta,speed,steering";

pub fn write_trace<W: Write>(mut out: W, rows: &[TraceRow]) -> Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in rows {
        writeln!(out, "{:.3},{:.6},{:.6},{:.6},{:.6},{:.6}", r.t, r.x, r.y, r.theta, r.speed, r.steering)?;
    }
    Ok(())
}

pub fn read_trace(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(Error::Format("missing trace header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|x| x.trim().parse::<f64>()).collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("bad trace line {l:?}: {e}")))?;
            if v.len() != 6 {
                return Err(Error::Format(format!("bad trace line {l:?}")));
            }
            Ok(TraceRow { t: v[0], x: v[1], y: v[2], theta: v[3], speed: v[4], steering: v[5] })
        })
        .collect()
}
