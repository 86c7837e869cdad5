//! The driving network: FeatureNet, AgentRNN with additive memory and a
//! meta-prediction head, PerceptionRNN and the road-mask head. Forward and
//! backward passes are written by hand and are generic over the scalar type.
//!
//! Architecture (r = total FeatureNet stride, 8 by default):
//!
//! - skip:  S = act(1×1 conv of the input), full resolution
//! - FeatureNet: 3×3 convs with strides 2,1,2,1,2,1 (the last dilated by 3)
//!   and residual additions after layers 4 and 6. Receptive field of an
//!   output cell: 3 + 2·2 + 2·2 + 2·4 + 2·4 + 2·3·8 = 75 input pixels.
//! - AgentRNN step k: coarse decoder over [F, sum-pool(M), mean-pool(B),
//!   k/N, u, v] (two 3×3 convs), bilinear upsampling to full resolution, a
//!   fine term (3×3 conv of S plus a 1×1 conv of [B_{k−1}, M_{k−1}]), a 1×1
//!   mixing layer and a 1×1
//!   output giving waypoint logits (spatial softmax) and box logits
//!   (sigmoid).
//! - meta head: 5×5 patch of [mix features, both logits] around the chosen
//!   pixel plus k/N, one hidden dense layer, outputs (δu, δv, θ, speed).
//! - PerceptionRNN and road head: coarse 3×3 conv, upsampling, 1×1 output
//!   plus a full-resolution 3×3 term.

pub(crate) mod model;
pub mod ops;

pub use model::{
    agent_rnn_step, backward, feature_forward, forward_train, memory_update, perception_rollout, road_head_forward,
    unroll, ExampleRef, Forward, OutputGrads, StepPrediction, Unroll, UnrollMode,
};

use crate::error::{Error, Result};
use crate::real::Real;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ops::{ConvShape, Interp};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayer {
    pub out: usize,
    pub stride: usize,
    pub dilation: usize,
    /// Add the previous layer's output after activation.
    pub residual: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub in_channels: usize,
    pub width: usize,
    pub height: usize,
    pub n_future: usize,
    pub feature: Vec<FeatureLayer>,
    pub skip_channels: usize,
    pub dec_hidden: usize,
    pub dec_out: usize,
    pub fine_channels: usize,
    pub mix_hidden: usize,
    pub patch_radius: usize,
    pub meta_hidden: usize,
    pub perception_hidden: usize,
    pub road_hidden: usize,
    /// Speed output = speed_scale · raw.
    pub speed_scale: f64,
}

impl NetConfig {
    pub fn new(in_channels: usize, width: usize, height: usize, n_future: usize) -> Self {
        let l = |out, stride, dilation, residual| FeatureLayer { out, stride, dilation, residual };
        NetConfig {
            in_channels,
            width,
            height,
            n_future,
            feature: vec![
                l(8, 2, 1, false),
                l(8, 1, 1, false),
                l(16, 2, 1, false),
                l(16, 1, 1, true),
                l(32, 2, 1, false),
                l(32, 1, 3, true),
            ],
            skip_channels: 2,
            dec_hidden: 16,
            dec_out: 4,
            fine_channels: 2,
            mix_hidden: 4,
            patch_radius: 2,
            meta_hidden: 32,
            perception_hidden: 4,
            road_hidden: 4,
            speed_scale: 10.0,
        }
    }

    pub fn for_render(cfg: &crate::raster::RenderConfig) -> Self {
        Self::new(cfg.channel_count(), cfg.width, cfg.height, cfg.n_future)
    }

    pub fn stride(&self) -> usize {
        self.feature.iter().map(|l| l.stride).product()
    }

    pub fn feature_channels(&self) -> usize {
        self.feature.last().map(|l| l.out).unwrap_or(self.in_channels)
    }

    /// Receptive field (pixels) of one FeatureNet output cell.
    pub fn receptive_field(&self) -> usize {
        let (mut rf, mut jump) = (1, 1);
        for l in &self.feature {
            rf += 2 * l.dilation * jump;
            jump *= l.stride;
        }
        rf
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.stride();
        let bad = self.feature.is_empty()
            || !self.width.is_multiple_of(r)
            || !self.height.is_multiple_of(r)
            || self.n_future == 0
            || self.feature.windows(2).any(|w| w[1].residual && (w[1].stride != 1 || w[1].out != w[0].out))
            || self.feature[0].residual;
        if bad {
            return Err(Error::Invalid(format!("inconsistent network config: {self:?}")));
        }
        Ok(())
    }

    /// Stable hash of the architecture, hex encoded.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).unwrap_or_default();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blob {
    pub name: String,
    pub shape: Vec<usize>,
    pub range: Range<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct ConvP {
    pub w: Range<usize>,
    pub b: Option<Range<usize>>,
    pub sh: ConvShape,
}

#[derive(Debug, Clone)]
pub(crate) struct FcP {
    pub w: Range<usize>,
    pub b: Range<usize>,
    pub n_out: usize,
}

/// Parameter layout plus precomputed resampling tables.
#[derive(Debug, Clone)]
pub struct Arch {
    pub cfg: NetConfig,
    pub blobs: Vec<Blob>,
    pub n_params: usize,
    pub(crate) skip: ConvP,
    pub(crate) feat: Vec<ConvP>,
    pub(crate) dec1_f: ConvP,
    pub(crate) dec1_e: ConvP,
    pub(crate) dec2: ConvP,
    pub(crate) fine_s: ConvP,
    pub(crate) fine_bm: ConvP,
    pub(crate) mix: ConvP,
    pub(crate) out: ConvP,
    pub(crate) meta1: FcP,
    pub(crate) meta2: FcP,
    pub(crate) per_f: ConvP,
    pub(crate) per_e: ConvP,
    pub(crate) per_up: ConvP,
    pub(crate) per_fine: ConvP,
    pub(crate) road1: ConvP,
    pub(crate) road_up: ConvP,
    pub(crate) road_fine: ConvP,
    pub(crate) iy: Interp,
    pub(crate) ix: Interp,
}

/// Agent decoder coarse extras: sum-pooled memory, pooled box, k/N, u, v.
pub(crate) const AGENT_EXTRA: usize = 5;
/// Perception coarse extras: pooled objects, k/N, u, v.
pub(crate) const PERCEPTION_EXTRA: usize = 4;

struct Builder {
    blobs: Vec<Blob>,
    n: usize,
}

impl Builder {
    fn add(&mut self, name: &str, shape: Vec<usize>) -> Range<usize> {
        let len: usize = shape.iter().product();
        let r = self.n..self.n + len;
        self.n += len;
        self.blobs.push(Blob { name: name.into(), shape, range: r.clone() });
        r
    }
    fn conv(&mut self, name: &str, sh: ConvShape, bias: bool) -> ConvP {
        let w = self.add(&format!("{name}.w"), vec![sh.cout, sh.cin, sh.k, sh.k]);
        let b = bias.then(|| self.add(&format!("{name}.b"), vec![sh.cout]));
        ConvP { w, b, sh }
    }
    fn fc(&mut self, name: &str, n_in: usize, n_out: usize) -> FcP {
        let w = self.add(&format!("{name}.w"), vec![n_out, n_in]);
        let b = self.add(&format!("{name}.b"), vec![n_out]);
        FcP { w, b, n_out }
    }
}

impl Arch {
    pub fn new(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        let (h, w) = (cfg.height, cfg.width);
        let r = cfg.stride();
        let (hc, wc) = (h / r, w / r);
        let fch = cfg.feature_channels();
        let mut b = Builder { blobs: Vec::new(), n: 0 };
        let skip = b.conv("skip", ConvShape::new(cfg.in_channels, cfg.skip_channels, 1, 1, 1, h, w), true);
        let mut feat = Vec::new();
        let (mut cin, mut fh, mut fw) = (cfg.in_channels, h, w);
        for (i, l) in cfg.feature.iter().enumerate() {
            let sh = ConvShape::new(cin, l.out, 3, l.stride, l.dilation, fh, fw);
            feat.push(b.conv(&format!("feature.{}", i + 1), sh, true));
            cin = l.out;
            fh = sh.h_out();
            fw = sh.w_out();
        }
        let dec1_f = b.conv("agent.dec1.features", ConvShape::new(fch, cfg.dec_hidden, 3, 1, 1, hc, wc), true);
        let dec1_e = b.conv("agent.dec1.extras", ConvShape::new(AGENT_EXTRA, cfg.dec_hidden, 3, 1, 1, hc, wc), false);
        let dec2 = b.conv("agent.dec2", ConvShape::new(cfg.dec_hidden, cfg.dec_out, 3, 1, 1, hc, wc), true);
        let fine_s = b.conv("agent.fine.skip", ConvShape::new(cfg.skip_channels, cfg.fine_channels, 3, 1, 1, h, w), true);
        let fine_bm = b.conv("agent.fine.state", ConvShape::new(2, cfg.fine_channels, 1, 1, 1, h, w), false);
        let mix = b.conv("agent.mix", ConvShape::new(cfg.dec_out + cfg.fine_channels, cfg.mix_hidden, 1, 1, 1, h, w), true);
        let out = b.conv("agent.out", ConvShape::new(cfg.mix_hidden, 2, 1, 1, 1, h, w), true);
        let s = 2 * cfg.patch_radius + 1;
        let meta1 = b.fc("agent.meta1", (cfg.mix_hidden + 2) * s * s + 1, cfg.meta_hidden);
        let meta2 = b.fc("agent.meta2", cfg.meta_hidden, 4);
        let per_f = b.conv("perception.features", ConvShape::new(fch, cfg.perception_hidden, 3, 1, 1, hc, wc), true);
        let per_e =
            b.conv("perception.extras", ConvShape::new(PERCEPTION_EXTRA, cfg.perception_hidden, 3, 1, 1, hc, wc), false);
        let per_up = b.conv("perception.out", ConvShape::new(cfg.perception_hidden, 1, 1, 1, 1, h, w), true);
        let per_fine = b.conv("perception.fine", ConvShape::new(1, 1, 3, 1, 1, h, w), false);
        let road1 = b.conv("road.features", ConvShape::new(fch, cfg.road_hidden, 3, 1, 1, hc, wc), true);
        let road_up = b.conv("road.out", ConvShape::new(cfg.road_hidden, 1, 1, 1, 1, h, w), true);
        let road_fine = b.conv("road.fine", ConvShape::new(cfg.skip_channels, 1, 3, 1, 1, h, w), false);
        Ok(Arch {
            cfg: cfg.clone(),
            blobs: b.blobs,
            n_params: b.n,
            skip,
            feat,
            dec1_f,
            dec1_e,
            dec2,
            fine_s,
            fine_bm,
            mix,
            out,
            meta1,
            meta2,
            per_f,
            per_e,
            per_up,
            per_fine,
            road1,
            road_up,
            road_fine,
            iy: Interp::new(hc, r),
            ix: Interp::new(wc, r),
        })
    }

    pub fn coarse(&self) -> (usize, usize) {
        let r = self.cfg.stride();
        (self.cfg.height / r, self.cfg.width / r)
    }

    pub fn blob(&self, name: &str) -> Option<&Blob> {
        self.blobs.iter().find(|b| b.name == name)
    }
}

/// Flat parameter vector with named views given by the architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<T> {
    pub data: Vec<T>,
}

impl<T: Real> NetParams<T> {
    pub fn zeros(arch: &Arch) -> Self {
        NetParams { data: vec![T::zero(); arch.n_params] }
    }

    /// He-normal weights, zero biases; output layers start near zero so the
    /// initial heatmaps are close to uniform.
    pub fn init(arch: &Arch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = vec![T::zero(); arch.n_params];
        for b in &arch.blobs {
            if b.name.ends_with(".b") {
                continue;
            }
            let fan_in: usize = b.shape[1..].iter().product();
            let gain = if b.name == "agent.out.w" || b.name == "agent.meta2.w" { 0.05 } else { 1.0 };
            let std = gain * (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            for v in &mut data[b.range.clone()] {
                *v = T::c(normal.sample(&mut rng));
            }
        }
        NetParams { data }
    }

    pub fn cast<U: Real>(&self) -> NetParams<U> {
        NetParams { data: self.data.iter().map(|&v| U::c(v.f64())).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub const CHECKPOINT_MAGIC: &str = "midsim-ckpt v1";

/// Checkpoint layout (little-endian): magic line, u32 length + config hash,
/// u32 length + config TOML, u32 blob count, then per blob: u16 name length,
/// name, u8 rank, u32 dims, f32 values.
pub fn write_checkpoint<W: Write>(mut out: W, arch: &Arch, params: &NetParams<f32>) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC.as_bytes())?;
    out.write_all(b"\n")?;
    let hash = arch.cfg.hash();
    out.write_u32::<LittleEndian>(hash.len() as u32)?;
    out.write_all(hash.as_bytes())?;
    let cfg_text = toml::to_string(&arch.cfg).map_err(|e| Error::Format(e.to_string()))?;
    out.write_u32::<LittleEndian>(cfg_text.len() as u32)?;
    out.write_all(cfg_text.as_bytes())?;
    out.write_u32::<LittleEndian>(arch.blobs.len() as u32)?;
    for b in &arch.blobs {
        out.write_u16::<LittleEndian>(b.name.len() as u16)?;
        out.write_all(b.name.as_bytes())?;
        out.write_u8(b.shape.len() as u8)?;
        for &d in &b.shape {
            out.write_u32::<LittleEndian>(d as u32)?;
        }
        for &v in &params.data[b.range.clone()] {
            out.write_f32::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

fn read_string<R: Read>(r: &mut R, len: usize) -> Result<String> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

fn read_magic<R: Read>(r: &mut R) -> Result<()> {
    let mut buf = vec![0u8; CHECKPOINT_MAGIC.len() + 1];
    let ok = r.read_exact(&mut buf).is_ok() && buf[..CHECKPOINT_MAGIC.len()] == *CHECKPOINT_MAGIC.as_bytes();
    if !ok {
        return Err(Error::Format("not a midsim checkpoint".into()));
    }
    Ok(())
}

/// Read the config stored in a checkpoint.
pub fn read_checkpoint_config<R: Read>(mut r: R) -> Result<NetConfig> {
    read_magic(&mut r)?;
    let n = r.read_u32::<LittleEndian>()? as usize;
    let _hash = read_string(&mut r, n)?;
    let n = r.read_u32::<LittleEndian>()? as usize;
    let text = read_string(&mut r, n)?;
    toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))
}

/// Load parameters for `arch`, refusing files written for another config.
pub fn read_checkpoint<R: Read>(mut r: R, arch: &Arch) -> Result<NetParams<f32>> {
    read_magic(&mut r)?;
    let n = r.read_u32::<LittleEndian>()? as usize;
    let found = read_string(&mut r, n)?;
    let expected = arch.cfg.hash();
    if found != expected {
        return Err(Error::ConfigMismatch { found, expected });
    }
    let n = r.read_u32::<LittleEndian>()? as usize;
    let _cfg = read_string(&mut r, n)?;
    let n_blobs = r.read_u32::<LittleEndian>()? as usize;
    if n_blobs != arch.blobs.len() {
        return Err(Error::Format(format!("expected {} blobs, found {n_blobs}", arch.blobs.len())));
    }
    let mut params = NetParams::zeros(arch);
    for b in &arch.blobs {
        let len = r.read_u16::<LittleEndian>()? as usize;
        let name = read_string(&mut r, len)?;
        let rank = r.read_u8()? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| r.read_u32::<LittleEndian>().map(|d| d as usize)).collect::<std::io::Result<_>>()?;
        if name != b.name || shape != b.shape {
            return Err(Error::Format(format!("blob {name} {shape:?} does not match {} {:?}", b.name, b.shape)));
        }
        for v in &mut params.data[b.range.clone()] {
            *v = r.read_f32::<LittleEndian>()?;
        }
    }
    Ok(params)
}

pub fn save_checkpoint(path: &std::path::Path, arch: &Arch, params: &NetParams<f32>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(&mut w, arch, params)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path, arch: &Arch) -> Result<NetParams<f32>> {
    let f = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(f), arch)
}

#[cfg(test)]
mod tests;
