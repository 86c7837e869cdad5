use super::ops::*;
use super::*;
use crate::geometry::Pose;
use crate::raster::{InputStack, RenderConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn randn(n: usize, rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

const H: f64 = 1e-3;

/// Central differences of `f` at every coordinate of `x` against `analytic`.
fn check_all(x: &[f64], analytic: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + H;
        let fp = f(&xp);
        xp[i] = x[i] - H;
        let fm = f(&xp);
        xp[i] = x[i];
        worst = worst.max(rel_err(analytic[i], (fp - fm) / (2.0 * H)));
    }
    worst
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &(k, stride, dil, h, w) in &[(3, 1, 1, 6, 5), (3, 2, 1, 7, 6), (3, 1, 3, 8, 8), (1, 1, 1, 4, 4), (3, 2, 2, 9, 8)] {
        let sh = ConvShape::new(2, 3, k, stride, dil, h, w);
        let x = randn(sh.in_len(), &mut rng, 1.0);
        let wt = randn(sh.weight_len(), &mut rng, 0.5);
        let c = randn(sh.out_len(), &mut rng, 1.0);
        let loss = |x: &[f64], wt: &[f64]| {
            let mut out = vec![0.0; sh.out_len()];
            conv_forward(&sh, x, wt, &mut out);
            dot(&out, &c)
        };
        let mut dx = vec![0.0; x.len()];
        let mut dw = vec![0.0; wt.len()];
        conv_backward(&sh, &x, &wt, &c, Some(&mut dx), &mut dw);
        assert!(check_all(&x, &dx, |xx| loss(xx, &wt)) <= 1e-4, "dx k={k} s={stride} d={dil}");
        assert!(check_all(&wt, &dw, |ww| loss(&x, ww)) <= 1e-4, "dw k={k} s={stride} d={dil}");
    }
}

#[test]
fn conv_matches_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sh = ConvShape::new(2, 2, 3, 2, 2, 9, 7);
    let x = randn(sh.in_len(), &mut rng, 1.0);
    let wt = randn(sh.weight_len(), &mut rng, 1.0);
    let mut out = vec![0.0; sh.out_len()];
    conv_forward(&sh, &x, &wt, &mut out);
    let (ho, wo) = (sh.h_out(), sh.w_out());
    let pad = sh.pad() as isize;
    for o in 0..2 {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for i in 0..2 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * 2) as isize + (ky * 2) as isize - pad;
                            let ix = (ox * 2) as isize + (kx * 2) as isize - pad;
                            if iy >= 0 && ix >= 0 && (iy as usize) < 9 && (ix as usize) < 7 {
                                acc += wt[((o * 2 + i) * 3 + ky) * 3 + kx] * x[(i * 9 + iy as usize) * 7 + ix as usize];
                            }
                        }
                    }
                }
                assert!((acc - out[(o * ho + oy) * wo + ox]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn elementwise_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = randn(40, &mut rng, 2.0);
    let c = randn(40, &mut rng, 1.0);
    let mut d = c.clone();
    act_backward(&x, &mut d);
    assert!(check_all(&x, &d, |xx| xx.iter().zip(&c).map(|(&v, &cc)| act(v) * cc).sum()) <= 1e-4);
    let ds: Vec<f64> = x.iter().zip(&c).map(|(&v, &cc)| cc * sigmoid(v) * (1.0 - sigmoid(v))).collect();
    assert!(check_all(&x, &ds, |xx| xx.iter().zip(&c).map(|(&v, &cc)| sigmoid(v) * cc).sum()) <= 1e-4);
    let mut db = vec![0.0; 4];
    bias_backward(&c, &mut db, 10);
    let b0 = vec![0.0; 4];
    assert!(
        check_all(&b0, &db, |b| {
            let mut out = vec![0.0; 40];
            add_bias(&mut out, b, 10);
            dot(&out, &c)
        }) <= 1e-4
    );
}

#[test]
fn upsample_and_pool_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (c, hc, wc, r) = (2, 3, 4, 4);
    let (iy, ix) = (Interp::new(hc, r), Interp::new(wc, r));
    let x = randn(c * hc * wc, &mut rng, 1.0);
    let cf = randn(c * hc * r * wc * r, &mut rng, 1.0);
    let mut dx = vec![0.0; x.len()];
    upsample_backward(&cf, c, hc, wc, &iy, &ix, &mut dx);
    let err = check_all(&x, &dx, |xx| {
        let mut out = vec![0.0; cf.len()];
        upsample(xx, c, hc, wc, &iy, &ix, &mut out);
        dot(&out, &cf)
    });
    assert!(err <= 1e-4);

    let fine = randn(hc * r * wc * r, &mut rng, 1.0);
    let cc = randn(hc * wc, &mut rng, 1.0);
    for scale in [1.0, (r * r) as f64] {
        let mut d = vec![0.0; fine.len()];
        avg_pool_backward(&cc, hc * r, wc * r, r, scale, &mut d);
        let err = check_all(&fine, &d, |xx| {
            let mut out = vec![0.0; hc * wc];
            avg_pool(xx, hc * r, wc * r, r, scale, &mut out);
            dot(&out, &cc)
        });
        assert!(err <= 1e-4);
    }
}

#[test]
fn upsample_preserves_constants_and_pool_sums() {
    let (iy, ix) = (Interp::new(2, 8), Interp::new(3, 8));
    let x = vec![0.7; 6];
    let mut out = vec![0.0; 16 * 24];
    upsample(&x, 1, 2, 3, &iy, &ix, &mut out);
    assert!(out.iter().all(|&v| (v - 0.7f64).abs() < 1e-12));
    let mut m = vec![0.0; 16 * 24];
    m[5 * 24 + 9] = 1.0;
    m[5 * 24 + 10] = 2.0;
    let mut pooled = vec![0.0; 6];
    avg_pool(&m, 16, 24, 8, 64.0, &mut pooled);
    assert_eq!(pooled[1], 3.0);
    assert_eq!(pooled.iter().sum::<f64>(), 3.0);
}

#[test]
fn softmax_fc_and_patch_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z = randn(30, &mut rng, 2.0);
    let c = randn(30, &mut rng, 1.0);
    let mut p = vec![0.0; 30];
    softmax(&z, &mut p);
    let mut dz = vec![0.0; 30];
    softmax_backward(&p, &c, &mut dz);
    let err = check_all(&z, &dz, |zz| {
        let mut q = vec![0.0; 30];
        softmax(zz, &mut q);
        dot(&q, &c)
    });
    assert!(err <= 1e-4);

    let (n_in, n_out) = (7, 3);
    let w = randn(n_in * n_out, &mut rng, 1.0);
    let b = randn(n_out, &mut rng, 1.0);
    let x = randn(n_in, &mut rng, 1.0);
    let cy = randn(n_out, &mut rng, 1.0);
    let (mut dw, mut db, mut dx) = (vec![0.0; w.len()], vec![0.0; n_out], vec![0.0; n_in]);
    fc_backward(&w, &x, &cy, &mut dw, &mut db, &mut dx);
    let f = |w: &[f64], b: &[f64], x: &[f64]| {
        let mut y = vec![0.0; n_out];
        fc_forward(w, b, x, &mut y);
        dot(&y, &cy)
    };
    assert!(check_all(&w, &dw, |ww| f(ww, &b, &x)) <= 1e-4);
    assert!(check_all(&b, &db, |bb| f(&w, bb, &x)) <= 1e-4);
    assert!(check_all(&x, &dx, |xx| f(&w, &b, xx)) <= 1e-4);

    // patch touching the border, so some taps fall outside
    let (ch, h, wd, r) = (2, 5, 6, 2);
    let img = randn(ch * h * wd, &mut rng, 1.0);
    let cp = randn(ch * 25, &mut rng, 1.0);
    for &(u, v) in &[(0, 0), (3, 2), (5, 4)] {
        let mut d = vec![0.0; img.len()];
        gather_patch_backward(&cp, ch, h, wd, u, v, r, &mut d);
        let err = check_all(&img, &d, |xx| {
            let mut out = vec![0.0; ch * 25];
            gather_patch(xx, ch, h, wd, u, v, r, &mut out);
            dot(&out, &cp)
        });
        assert!(err <= 1e-4);
    }
}

#[test]
fn softmax_normalised_and_peaked() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let z: Vec<f32> = randn(256, &mut rng, 5.0).into_iter().map(|v| v as f32).collect();
        let mut p = vec![0.0f32; 256];
        softmax(&z, &mut p);
        let s: f64 = p.iter().map(|&v| v as f64).sum();
        assert!((s - 1.0).abs() <= 1e-5);
        assert!(p.iter().all(|&v| v > 0.0));
    }
    let mut z = vec![0.0f32; 256];
    z[3 * 16 + 11] = 20.0;
    let mut p = vec![0.0f32; 256];
    softmax(&z, &mut p);
    assert_eq!(argmax(&p), 3 * 16 + 11);
    assert!(p[3 * 16 + 11] > 0.99);
}

#[test]
fn argmax_takes_first_maximum() {
    assert_eq!(argmax(&[1.0f32, 3.0, 3.0, 2.0]), 1);
    assert_eq!(argmax(&[0.5f32; 9]), 0);
    let z = [0.1f64, 0.9, 0.3, 0.9];
    let shifted: Vec<f64> = z.iter().map(|v| v + 7.5).collect();
    assert_eq!(argmax(&z), argmax(&shifted));
}

#[test]
fn memory_update_is_additive() {
    let m0 = vec![0.0f32; 16];
    let m1 = memory_update(&m0, 4, (2, 1)).unwrap();
    assert_eq!(m1[6], 1.0);
    assert_eq!(m1.iter().sum::<f32>(), 1.0);
    let m2 = memory_update(&m1, 4, (2, 1)).unwrap();
    assert_eq!(m2[6], 2.0);
    assert_eq!(m2.iter().sum::<f32>(), m1.iter().sum::<f32>() + 1.0);
    assert!(matches!(memory_update(&m0, 4, (4, 0)), Err(Error::OutOfRange(4, 0))));
    assert!(matches!(memory_update(&m0, 4, (0, 4)), Err(Error::OutOfRange(0, 4))));
}

fn tiny() -> (RenderConfig, Arch) {
    let rc = RenderConfig::tiny();
    let arch = Arch::new(&NetConfig::for_render(&rc)).unwrap();
    (rc, arch)
}

fn random_input(rc: &RenderConfig, seed: u64) -> InputStack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut input = InputStack::zeros(rc);
    for v in &mut input.data {
        *v = if rng.gen_bool(0.3) { rng.gen() } else { 0.0 };
    }
    input
}

/// Parameters with every blob (biases included) non-zero.
fn noisy_params(arch: &Arch, seed: u64, scale: f64) -> NetParams<f64> {
    let mut p: NetParams<f64> = NetParams::init(arch, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for v in &mut p.data {
        *v += scale * rng.sample::<f64, _>(StandardNormal);
    }
    p
}

struct Probe {
    c_p: Vec<Vec<f64>>,
    c_b: Vec<Vec<f64>>,
    c_meta: Vec<[f64; 4]>,
    c_obj: Vec<Vec<f64>>,
    c_road: Vec<f64>,
}

impl Probe {
    fn new(n: usize, hw: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut meta = || {
            let v = randn(4, rng, 1.0);
            [v[0], v[1], v[2], v[3]]
        };
        let c_meta = (0..n).map(|_| meta()).collect();
        Probe {
            c_p: (0..n).map(|_| randn(hw, rng, 1.0)).collect(),
            c_b: (0..n).map(|_| randn(hw, rng, 1.0)).collect(),
            c_meta,
            c_obj: (0..n).map(|_| randn(hw, rng, 1.0)).collect(),
            c_road: randn(hw, rng, 1.0),
        }
    }

    fn loss(&self, f: &Forward<f64>) -> f64 {
        let mut l = 0.0;
        for (k, st) in f.steps.iter().enumerate() {
            l += dot(&st.p, &self.c_p[k]) + dot(&st.b, &self.c_b[k]) + dot(&st.meta, &self.c_meta[k]);
        }
        for (k, st) in f.perception.iter().enumerate() {
            l += dot(&st.obj, &self.c_obj[k]);
        }
        if let Some(r) = &f.road {
            l += dot(&r.road, &self.c_road);
        }
        l
    }

    fn grads(&self) -> OutputGrads<f64> {
        OutputGrads {
            d_p: self.c_p.clone(),
            d_b: self.c_b.clone(),
            d_meta: self.c_meta.clone(),
            d_obj: self.c_obj.clone(),
            d_road: self.c_road.clone(),
        }
    }
}

struct Fixture {
    input: Vec<f32>,
    agent_box: Vec<f32>,
    objects0: Vec<f32>,
    truth: Vec<usize>,
}

impl Fixture {
    fn new(rc: &RenderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hw = rc.pixels();
        let input = random_input(rc, seed).data;
        Fixture {
            input,
            agent_box: (0..hw).map(|_| if rng.gen_bool(0.2) { 1.0 } else { 0.0 }).collect(),
            objects0: (0..hw).map(|_| if rng.gen_bool(0.2) { 1.0 } else { 0.0 }).collect(),
            // two steps on the same pixel exercise memory counts above 1
            truth: vec![rng.gen_range(0..hw), 5 * 16 + 7, 5 * 16 + 7],
        }
    }
    fn example(&self) -> ExampleRef<'_> {
        ExampleRef { input: &self.input, agent_box: &self.agent_box, objects0: &self.objects0, truth_pixels: &self.truth }
    }
}

#[test]
fn composed_model_gradient_check() {
    let (rc, arch) = tiny();
    let params = noisy_params(&arch, 11, 0.1);
    let fx = Fixture::new(&rc, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let probe = Probe::new(arch.cfg.n_future, rc.pixels(), &mut rng);
    let fwd = forward_train(&arch, &params, fx.example(), true).unwrap();
    let g = backward(&arch, &params, &fwd, &probe.grads());

    // sample coordinates from every blob so that each layer is covered
    let per_blob = 200usize.div_ceil(arch.blobs.len()) + 1;
    let mut coords = Vec::new();
    for b in &arch.blobs {
        let n = b.range.len();
        if n <= per_blob {
            coords.extend(b.range.clone());
        } else {
            coords.extend((0..per_blob).map(|_| b.range.start + rng.gen_range(0..n)));
        }
    }
    assert!(coords.len() >= 200);
    let mut worst = (0.0, String::new());
    let mut p = params.clone();
    for &i in &coords {
        let x0 = p.data[i];
        p.data[i] = x0 + H;
        let lp = probe.loss(&forward_train(&arch, &p, fx.example(), true).unwrap());
        p.data[i] = x0 - H;
        let lm = probe.loss(&forward_train(&arch, &p, fx.example(), true).unwrap());
        p.data[i] = x0;
        let e = rel_err(g[i], (lp - lm) / (2.0 * H));
        if e > worst.0 {
            let blob = arch.blobs.iter().find(|b| b.range.contains(&i)).unwrap();
            worst = (e, format!("{}[{}] analytic {} numeric {}", blob.name, i - blob.range.start, g[i], (lp - lm) / (2.0 * H)));
        }
    }
    assert!(worst.0 <= 1e-4, "worst relative error {:.3e} at {}", worst.0, worst.1);
}

#[test]
fn zero_seed_gives_zero_gradient_and_backward_is_deterministic() {
    let (rc, arch) = tiny();
    let params = noisy_params(&arch, 21, 0.1);
    let fx = Fixture::new(&rc, 22);
    let fwd = forward_train(&arch, &params, fx.example(), true).unwrap();
    let g0 = backward(&arch, &params, &fwd, &OutputGrads::zeros(arch.cfg.n_future));
    assert!(g0.iter().all(|&v| v == 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let probe = Probe::new(arch.cfg.n_future, rc.pixels(), &mut rng);
    let a = backward(&arch, &params, &fwd, &probe.grads());
    let b = backward(&arch, &params, &forward_train(&arch, &params, fx.example(), true).unwrap(), &probe.grads());
    assert_eq!(a, b);
}

#[test]
fn zero_params_give_uniform_heads() {
    let (rc, arch) = tiny();
    let params = NetParams::<f32>::zeros(&arch);
    let input = random_input(&rc, 31);
    let road = road_head_forward(&arch, &params, &input).unwrap();
    assert!(road.iter().all(|&v| v == 0.5));
    let obj = perception_rollout(&arch, &params, &input, &vec![1.0; rc.pixels()], 2).unwrap();
    assert!(obj.iter().flatten().all(|&v| v == 0.5));
    let hw = rc.pixels();
    let st = agent_rnn_step(&arch, &params, &input, 1, &vec![0.0; hw], &vec![0.0; hw]).unwrap();
    assert_eq!(st.pixel, (0, 0));
    assert!(st.heatmap.iter().all(|&v| (v - 1.0 / hw as f32).abs() < 1e-9));
}

#[test]
fn zero_input_and_biases_give_zero_features() {
    let (rc, arch) = tiny();
    let params: NetParams<f32> = NetParams::init(&arch, 41);
    let f = feature_forward(&arch, &params, &InputStack::zeros(&rc)).unwrap();
    assert!(f.iter().all(|&v| v == 0.0));
    let input = random_input(&rc, 42);
    assert_eq!(feature_forward(&arch, &params, &input).unwrap(), feature_forward(&arch, &params, &input).unwrap());
}

#[test]
fn heads_stay_in_unit_interval_over_long_perception_rollout() {
    let (rc, arch) = tiny();
    let params: NetParams<f32> = noisy_params(&arch, 51, 0.1).cast();
    for seed in 0..5 {
        let input = random_input(&rc, 52 + seed);
        let objs = perception_rollout(&arch, &params, &input, input.channel(input.layout.agent_box()), 10).unwrap();
        assert_eq!(objs.len(), 10);
        for o in &objs {
            assert_eq!(o.len(), rc.pixels());
            assert!(o.iter().all(|&v| v.is_finite() && v > 0.0 && v < 1.0));
        }
        let road = road_head_forward(&arch, &params, &input).unwrap();
        assert!(road.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

/// Input rows and columns that can influence FeatureNet output cell `c`,
/// obtained by walking the layers backwards.
fn support(cfg: &NetConfig, c: usize) -> (isize, isize) {
    let (mut lo, mut hi) = (c as isize, c as isize);
    for l in cfg.feature.iter().rev() {
        let s = l.stride as isize;
        let d = l.dilation as isize;
        lo = lo * s - d;
        hi = hi * s + d;
    }
    (lo, hi)
}

#[test]
fn impulse_response_stays_inside_receptive_field() {
    let cfg = NetConfig::new(2, 96, 96, 3);
    assert!(cfg.receptive_field() >= 64);
    let arch = Arch::new(&cfg).unwrap();
    let params: NetParams<f64> = NetParams::init(&arch, 61);
    let (py, px) = (50usize, 37usize);
    let mut x = vec![0.0f32; 2 * 96 * 96];
    x[py * 96 + px] = 1.0;
    let ctx = model::context::<f64>(&arch, &params.data, &x).unwrap();
    let f = ctx.features();
    let (hc, wc) = arch.coarse();
    let mut inside = 0;
    for c in 0..cfg.feature_channels() {
        for cy in 0..hc {
            for cx in 0..wc {
                let (ylo, yhi) = support(&cfg, cy);
                let (xlo, xhi) = support(&cfg, cx);
                let covered = (ylo..=yhi).contains(&(py as isize)) && (xlo..=xhi).contains(&(px as isize));
                let v = f[(c * hc + cy) * wc + cx];
                if !covered {
                    assert_eq!(v, 0.0, "cell ({cy},{cx}) outside the receptive field responds");
                } else if v != 0.0 {
                    inside += 1;
                }
                if c == 0 && cy == 0 && cx == 0 {
                    assert_eq!((yhi - ylo + 1) as usize, cfg.receptive_field());
                }
            }
        }
    }
    assert!(inside > 0);
}

fn origin() -> Pose {
    Pose::new(10.0, -4.0, 0.3, 5.0)
}

#[test]
fn unroll_argmax_is_deterministic_and_counts_memory() {
    let (rc, arch) = tiny();
    let params: NetParams<f32> = noisy_params(&arch, 71, 0.2).cast();
    let input = random_input(&rc, 72);
    let frame = rc.frame(origin(), 0.1);
    let a = unroll(&arch, &params, &input, &frame, 2.0, rc.dt, &UnrollMode::Argmax).unwrap();
    let b = unroll(&arch, &params, &input, &frame, 2.0, rc.dt, &UnrollMode::Argmax).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.memory.iter().sum::<f32>(), arch.cfg.n_future as f32);
    assert_eq!(a.trajectory.len(), arch.cfg.n_future + 1);
    for st in &a.steps {
        let s: f64 = st.heatmap.iter().map(|&v| v as f64).sum();
        assert!((s - 1.0).abs() <= 1e-5);
        assert_eq!(st.pixel.1 * rc.width + st.pixel.0, argmax(&st.heatmap));
        assert!(st.subpixel.iter().all(|v| (0.0..1.0).contains(v)));
    }
    let (x, y) = frame.raster_to_world(a.steps[0].pixel.0 as f64 + a.steps[0].subpixel[0], a.steps[0].pixel.1 as f64 + a.steps[0].subpixel[1]);
    assert!((a.trajectory.poses[1].x - x).abs() < 1e-9 && (a.trajectory.poses[1].y - y).abs() < 1e-9);
}

#[test]
fn single_step_unroll_equals_agent_step() {
    let rc = RenderConfig { n_future: 1, ..RenderConfig::tiny() };
    let arch = Arch::new(&NetConfig::for_render(&rc)).unwrap();
    let params: NetParams<f32> = noisy_params(&arch, 81, 0.2).cast();
    let input = random_input(&rc, 82);
    let u = unroll(&arch, &params, &input, &rc.frame(origin(), 0.0), 0.0, 0.2, &UnrollMode::Argmax).unwrap();
    let hw = rc.pixels();
    let st =
        agent_rnn_step(&arch, &params, &input, 1, &vec![0.0; hw], input.channel(input.layout.agent_box())).unwrap();
    assert_eq!(u.steps, vec![st]);
}

#[test]
fn constrained_sampling_follows_single_pixel_masks() {
    let (rc, arch) = tiny();
    let params: NetParams<f32> = noisy_params(&arch, 91, 0.2).cast();
    let input = random_input(&rc, 92);
    let hw = rc.pixels();
    let path = [(8usize, 10usize), (8, 8), (9, 6)];
    let mut mask = vec![0.0f32; 3 * hw];
    for (k, &(u, v)) in path.iter().enumerate() {
        mask[k * hw + v * rc.width + u] = 1.0;
    }
    let frame = rc.frame(origin(), 0.0);
    let mode = UnrollMode::ConstrainedSample { mask, seed: 3 };
    let out = unroll(&arch, &params, &input, &frame, 0.0, 0.2, &mode).unwrap();
    let got: Vec<_> = out.steps.iter().map(|s| s.pixel).collect();
    assert_eq!(got, path);

    let empty = UnrollMode::ConstrainedSample { mask: vec![0.0; hw], seed: 3 };
    assert!(matches!(unroll(&arch, &params, &input, &frame, 0.0, 0.2, &empty), Err(Error::EmptyMaskSupport(1))));
}

#[test]
fn sampling_is_seeded() {
    let (rc, arch) = tiny();
    let params: NetParams<f32> = noisy_params(&arch, 93, 0.2).cast();
    let input = random_input(&rc, 94);
    let frame = rc.frame(origin(), 0.0);
    let run = |s| unroll(&arch, &params, &input, &frame, 0.0, 0.2, &UnrollMode::Sample(s)).unwrap();
    assert_eq!(run(5), run(5));
    let distinct = (0..8).map(|s| run(s).steps.iter().map(|st| st.pixel).collect::<Vec<_>>()).collect::<std::collections::HashSet<_>>();
    assert!(distinct.len() > 1);
}

#[test]
fn shape_mismatch_is_rejected() {
    let (_, arch) = tiny();
    let params = NetParams::<f32>::zeros(&arch);
    let other = RenderConfig { width: 24, ..RenderConfig::tiny() };
    let input = InputStack::zeros(&other);
    assert!(matches!(feature_forward(&arch, &params, &input), Err(Error::ShapeMismatch(_))));
    let frame = other.frame(origin(), 0.0);
    assert!(matches!(unroll(&arch, &params, &input, &frame, 0.0, 0.2, &UnrollMode::Argmax), Err(Error::ShapeMismatch(_))));
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let (_, arch) = tiny();
    let params: NetParams<f32> = noisy_params(&arch, 101, 0.2).cast();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &arch, &params).unwrap();
    assert_eq!(load_checkpoint(&path, &arch).unwrap(), params);
    let cfg = read_checkpoint_config(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(cfg, arch.cfg);

    let mut other = arch.cfg.clone();
    other.dec_hidden += 1;
    let arch2 = Arch::new(&other).unwrap();
    assert!(matches!(load_checkpoint(&path, &arch2), Err(Error::ConfigMismatch { .. })));
    std::fs::write(&path, b"garbage\n").unwrap();
    assert!(matches!(load_checkpoint(&path, &arch), Err(Error::Format(_))));
}

#[test]
fn road_head_overfits_single_example() {
    let cfg = NetConfig::new(3, 32, 32, 2);
    let arch = Arch::new(&cfg).unwrap();
    let hw = 32 * 32;
    let mut input = vec![0.0f32; 3 * hw];
    let mut road = vec![0.0f32; hw];
    for v in 0..32 {
        for u in 0..32 {
            let on = (u as f64 - 12.0 - 0.2 * v as f64).abs() < 4.0 || (v > 20 && v < 26);
            road[v * 32 + u] = on as u8 as f32;
            input[v * 32 + u] = road[v * 32 + u];
            input[hw + v * 32 + u] = ((u * 7 + v * 3) % 5) as f32 / 5.0;
        }
    }
    let zeros = vec![0.0f32; hw];
    let truth = vec![0usize; 2];
    let ex = ExampleRef { input: &input, agent_box: &zeros, objects0: &zeros, truth_pixels: &truth };
    let mut params: NetParams<f32> = NetParams::init(&arch, 111);
    let mut vel = vec![0.0f32; arch.n_params];
    let accuracy = |p: &NetParams<f32>| {
        let f = forward_train(&arch, p, ex, true).unwrap();
        let r = &f.road.unwrap().road;
        r.iter().zip(&road).filter(|(&a, &b)| (a > 0.5) == (b > 0.5)).count() as f64 / hw as f64
    };
    for _ in 0..200 {
        let f = forward_train(&arch, &params, ex, true).unwrap();
        let pred = &f.road.as_ref().unwrap().road;
        let mut seeds = OutputGrads::zeros(2);
        // mean binary cross-entropy
        seeds.d_road = pred
            .iter()
            .zip(&road)
            .map(|(&p, &t)| {
                let p = p.clamp(1e-7, 1.0 - 1e-7);
                (p - t) / (p * (1.0 - p)) / hw as f32
            })
            .collect();
        let g = backward(&arch, &params, &f, &seeds);
        for ((w, v), gi) in params.data.iter_mut().zip(&mut vel).zip(&g) {
            *v = 0.9 * *v - 0.5 * gi;
            *w += *v;
        }
    }
    let acc = accuracy(&params);
    assert!(acc >= 0.99, "pixel accuracy {acc}");
}
