//! The neural time field: random Fourier encoding, a residual C-space
//! encoder shared by both endpoints, the max/min symmetric combination and a
//! residual generator producing the factorized time `τ > 0`.

mod checkpoint;
mod reference;
pub mod speed;

use std::ops::Range;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::dense::{
    activation_backward, activation_forward, linear_backward, linear_forward, JetBatch,
};
use crate::autodiff::{self, Activation, DiffBundle, Jet, JetProgram, ParamTape, Scalar, Tape, Var};
use crate::env::{distance, Environment, FourierCode};
use crate::error::{Error, Result};

pub use speed::{eikonal_speed, viscous_speed};

/// `softplus(TAU_SHIFT) == 1`, so a zero generator output means `τ = 1`.
pub const TAU_SHIFT: f64 = 0.541_324_854_612_918_1;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
const EVAL_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub dims: usize,
    pub fourier_h: usize,
    pub width: usize,
    pub blocks: usize,
    pub activation: Activation,
}

impl NetConfig {
    /// Hidden width 128 with five residual blocks per sub-network.
    pub fn standard(dims: usize, fourier_h: usize) -> Self {
        NetConfig {
            dims,
            fourier_h,
            width: 128,
            blocks: 5,
            activation: Activation::Softplus,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dims == 0 || self.fourier_h == 0 || self.width == 0 {
            return Err(Error::Shape(format!("degenerate network config {self:?}")));
        }
        if !self.activation.has_second_derivative() {
            return Err(Error::Unsupported(format!(
                "activation {} has no second derivative",
                self.activation
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub out: usize,
    pub inp: usize,
}

#[derive(Clone, Copy, Debug)]
struct Slot {
    shape: LayerShape,
    w: usize,
    b: usize,
}

#[derive(Clone, Debug)]
struct Layers {
    enc_in: Slot,
    enc_blocks: Vec<[Slot; 2]>,
    gen_in: Slot,
    gen_blocks: Vec<[Slot; 2]>,
    gen_out: Slot,
    total: usize,
}

impl Layers {
    fn new(cfg: &NetConfig) -> Self {
        let mut total = 0;
        let mut slot = |out: usize, inp: usize| {
            let s = Slot {
                shape: LayerShape { out, inp },
                w: total,
                b: total + out * inp,
            };
            total += out * inp + out;
            s
        };
        let w = cfg.width;
        let enc_in = slot(w, 2 * cfg.fourier_h);
        let enc_blocks = (0..cfg.blocks).map(|_| [slot(w, w), slot(w, w)]).collect();
        let gen_in = slot(w, 2 * w);
        let gen_blocks = (0..cfg.blocks).map(|_| [slot(w, w), slot(w, w)]).collect();
        let gen_out = slot(1, w);
        Layers {
            enc_in,
            enc_blocks,
            gen_in,
            gen_blocks,
            gen_out,
            total,
        }
    }

    fn in_order(&self) -> Vec<Slot> {
        let mut v = vec![self.enc_in];
        v.extend(self.enc_blocks.iter().flatten());
        v.push(self.gen_in);
        v.extend(self.gen_blocks.iter().flatten());
        v.push(self.gen_out);
        v
    }
}

/// Predicted speeds at both endpoints of a query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeedPair<S = f64> {
    pub s_start: S,
    pub s_goal: S,
}

/// Per-sample loss on predicted speeds.
pub trait SpeedLoss {
    fn eval<S: Scalar>(&self, sample: usize, s_start: S, s_goal: S) -> S;
}

struct BlockCache {
    h_in: JetBatch,
    u: JetBatch,
    a: JetBatch,
}

struct EncCache {
    x0: JetBatch,
    z0: JetBatch,
    blocks: Vec<BlockCache>,
}

struct GenCache {
    c: JetBatch,
    z0: JetBatch,
    blocks: Vec<BlockCache>,
    hf: JetBatch,
    p: JetBatch,
    zout: JetBatch,
}

struct ForwardCache {
    start: EncCache,
    goal: EncCache,
    start_is_max: Vec<bool>,
    gen: GenCache,
}

/// Output jets of τ for a batch, plus what the reverse sweep needs.
pub struct Forward {
    pub tau: JetBatch,
    cache: Option<ForwardCache>,
}

/// Network parameters together with the table of per-environment codes.
#[derive(Clone, Debug)]
pub struct FieldNet {
    cfg: NetConfig,
    layers: Layers,
    params: Vec<f64>,
    codes: Vec<(u32, FourierCode)>,
    /// Last progressive-speed parameter the weights were trained at.
    pub trained_alpha: f64,
}

impl FieldNet {
    pub fn new(cfg: NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let layers = Layers::new(&cfg);
        let mut params = vec![0.0; layers.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in layers.in_order() {
            let k = 1.0 / (s.shape.inp as f64).sqrt();
            for p in &mut params[s.w..s.b + s.shape.out] {
                *p = rng.random_range(-k..k);
            }
        }
        Ok(FieldNet {
            cfg,
            layers,
            params,
            codes: Vec::new(),
            trained_alpha: 0.0,
        })
    }

    /// A network sized for `env`, with its code registered.
    pub fn for_environment(env: &Environment, width: usize, blocks: usize, seed: u64) -> Result<Self> {
        let mut cfg = NetConfig::standard(env.dims(), env.fourier_code().h);
        cfg.width = width;
        cfg.blocks = blocks;
        let mut net = FieldNet::new(cfg, seed)?;
        net.register(env)?;
        Ok(net)
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        self.layers.in_order().iter().map(|s| s.shape).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "{} parameters for a network of {}",
                params.len(),
                self.params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Adds (or verifies) the Fourier code of `env`.
    pub fn register(&mut self, env: &Environment) -> Result<()> {
        let code = env.fourier_code();
        if code.dims != self.cfg.dims || code.h != self.cfg.fourier_h {
            return Err(Error::Incompatible(format!(
                "environment {} has a {}x{} code, network expects {}x{}",
                env.id(),
                code.dims,
                code.h,
                self.cfg.dims,
                self.cfg.fourier_h
            )));
        }
        match self.codes.iter().find(|(id, _)| *id == env.id()) {
            Some((_, existing)) if existing != code => Err(Error::Incompatible(format!(
                "environment {} code differs from the one stored in the network",
                env.id()
            ))),
            Some(_) => Ok(()),
            None => {
                self.codes.push((env.id(), code.clone()));
                Ok(())
            }
        }
    }

    pub fn env_ids(&self) -> Vec<u32> {
        self.codes.iter().map(|(id, _)| *id).collect()
    }

    pub fn code(&self, env_id: u32) -> Result<&FourierCode> {
        self.codes
            .iter()
            .find(|(id, _)| *id == env_id)
            .map(|(_, c)| c)
            .ok_or_else(|| Error::Incompatible(format!("network has no code for environment {env_id}")))
    }

    /// Checks that `env` can be evaluated by this network.
    pub fn check_compatible(&self, env: &Environment) -> Result<()> {
        if env.dims() != self.cfg.dims {
            return Err(Error::Incompatible(format!(
                "environment {} is {}-dimensional, network is {}-dimensional",
                env.id(),
                env.dims(),
                self.cfg.dims
            )));
        }
        let code = self.code(env.id())?;
        if code != env.fourier_code() {
            return Err(Error::Incompatible(format!(
                "environment {} code does not match the network's copy",
                env.id()
            )));
        }
        Ok(())
    }

    /// The time field of one environment.
    pub fn field(&self, env_id: u32) -> Result<Field<'_>> {
        Ok(Field {
            net: self,
            code: self.code(env_id)?,
        })
    }

    fn w(&self, s: &Slot) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape(
            (s.shape.out, s.shape.inp),
            &self.params[s.w..s.w + s.shape.out * s.shape.inp],
        )
        .expect("layer shape")
    }

    fn b(&self, s: &Slot) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[s.b..s.b + s.shape.out])
    }

    /// Random Fourier features and their jets along `coords`.
    fn fourier(&self, q: &[f64], codes: &[&FourierCode], coords: &[usize], second: bool) -> JetBatch {
        let (d, h) = (self.cfg.dims, self.cfg.fourier_h);
        let rows = codes.len();
        let n = coords.len();
        let mut x = JetBatch::zeros(rows, n, second, 2 * h);
        let width = 2 * h;
        let data = x.data.as_slice_mut().expect("standard layout");
        // channel c, row r, column j
        let at = |c: usize, r: usize, j: usize| (c * rows + r) * width + j;
        for (r, code) in codes.iter().enumerate() {
            let qr = &q[r * d..(r + 1) * d];
            for j in 0..h {
                let theta: f64 = TWO_PI * (0..d).map(|i| code.get(i, j) * qr[i]).sum::<f64>();
                let (sn, cs) = theta.sin_cos();
                data[at(0, r, j)] = cs;
                data[at(0, r, h + j)] = sn;
                for (k, &axis) in coords.iter().enumerate() {
                    let w = TWO_PI * code.get(axis, j);
                    data[at(1 + k, r, j)] = -sn * w;
                    data[at(1 + k, r, h + j)] = cs * w;
                    if second {
                        data[at(1 + n + k, r, j)] = -cs * w * w;
                        data[at(1 + n + k, r, h + j)] = -sn * w * w;
                    }
                }
            }
        }
        x
    }

    fn residual_stack(&self, mut h: JetBatch, blocks: &[[Slot; 2]], keep: bool) -> (JetBatch, Vec<BlockCache>) {
        let act = self.cfg.activation;
        let mut caches = Vec::new();
        for [l1, l2] in blocks {
            let u = linear_forward(&h, self.w(l1), self.b(l1));
            let a = activation_forward(&u, act);
            let mut v = linear_forward(&a, self.w(l2), self.b(l2));
            if keep {
                v.add_assign(&h);
                caches.push(BlockCache { h_in: h, u, a });
                h = v;
            } else {
                h.add_assign(&v);
            }
        }
        (h, caches)
    }

    fn residual_stack_backward(
        &self,
        caches: &[BlockCache],
        blocks: &[[Slot; 2]],
        mut dh: JetBatch,
        grads: &mut [f64],
    ) -> JetBatch {
        let act = self.cfg.activation;
        for (c, [l1, l2]) in caches.iter().zip(blocks).rev() {
            let (gw, gb) = grad_views(grads, l2);
            let da = linear_backward(&c.a, self.w(l2), &dh, gw, gb, true).expect("dx");
            let du = activation_backward(&c.u, act, &da);
            let (gw, gb) = grad_views(grads, l1);
            let dh_in = linear_backward(&c.h_in, self.w(l1), &du, gw, gb, true).expect("dx");
            dh.add_assign(&dh_in);
        }
        dh
    }

    fn encode(&self, x0: JetBatch, keep: bool) -> (JetBatch, Option<EncCache>) {
        let l = &self.layers;
        let z0 = linear_forward(&x0, self.w(&l.enc_in), self.b(&l.enc_in));
        let h = activation_forward(&z0, self.cfg.activation);
        let (out, blocks) = self.residual_stack(h, &l.enc_blocks, keep);
        let cache = keep.then_some(EncCache { x0, z0, blocks });
        (out, cache)
    }

    fn encode_backward(&self, cache: &EncCache, dout: JetBatch, grads: &mut [f64]) {
        let l = &self.layers;
        let dh = self.residual_stack_backward(&cache.blocks, &l.enc_blocks, dout, grads);
        let dz0 = activation_backward(&cache.z0, self.cfg.activation, &dh);
        let (gw, gb) = grad_views(grads, &l.enc_in);
        linear_backward(&cache.x0, self.w(&l.enc_in), &dz0, gw, gb, false);
    }

    /// Evaluates τ for a batch of pairs. Directions are carried along the
    /// start coordinates in `start_coords` followed by the goal coordinates
    /// in `goal_coords`. `keep` retains what [`FieldNet::backward`] needs.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        qs: &[f64],
        qg: &[f64],
        codes: &[&FourierCode],
        start_coords: &[usize],
        goal_coords: &[usize],
        second: bool,
        keep: bool,
    ) -> Result<Forward> {
        let d = self.cfg.dims;
        let rows = codes.len();
        if qs.len() != rows * d || qg.len() != rows * d {
            return Err(Error::DimensionMismatch {
                expected: rows * d,
                got: qs.len().min(qg.len()),
            });
        }
        if start_coords.iter().chain(goal_coords).any(|&c| c >= d) {
            return Err(Error::Shape("direction outside the configuration".into()));
        }
        let xs = self.fourier(qs, codes, start_coords, second);
        let xg = self.fourier(qg, codes, goal_coords, second);
        let (es, cs) = self.encode(xs, keep);
        let (eg, cg) = self.encode(xg, keep);
        let (c, start_is_max) = combine(&es, &eg);
        drop((es, eg));

        let l = &self.layers;
        let act = self.cfg.activation;
        let z0 = linear_forward(&c, self.w(&l.gen_in), self.b(&l.gen_in));
        let h = activation_forward(&z0, act);
        let (hf, blocks) = self.residual_stack(h, &l.gen_blocks, keep);
        let p = activation_forward(&hf, act);
        let mut zout = linear_forward(&p, self.w(&l.gen_out), self.b(&l.gen_out));
        zout.value_mut().mapv_inplace(|z| z + TAU_SHIFT);
        let tau = activation_forward(&zout, Activation::Softplus);

        if !tau.all_finite() {
            let bad = (0..rows)
                .find(|&r| !tau.value()[[r, 0]].is_finite())
                .unwrap_or(0);
            return Err(Error::non_finite(format!(
                "tau at q_s={:?} q_g={:?}",
                &qs[bad * d..(bad + 1) * d],
                &qg[bad * d..(bad + 1) * d]
            )));
        }
        let cache = keep.then(|| ForwardCache {
            start: cs.expect("cache"),
            goal: cg.expect("cache"),
            start_is_max,
            gen: GenCache {
                c,
                z0,
                blocks,
                hf,
                p,
                zout,
            },
        });
        Ok(Forward { tau, cache })
    }

    /// Reverse sweep: accumulates parameter gradients of `Σ dtau · tau_jets`.
    pub fn backward(&self, fwd: &Forward, dtau: &JetBatch, grads: &mut ParamTape) -> Result<()> {
        let cache = fwd
            .cache
            .as_ref()
            .ok_or_else(|| Error::Shape("forward pass kept no cache".into()))?;
        if grads.len() != self.params.len() {
            return Err(Error::Shape("gradient tape does not match parameters".into()));
        }
        let g = grads.as_mut_slice();
        let l = &self.layers;
        let act = self.cfg.activation;
        let gc = &cache.gen;
        let dz = activation_backward(&gc.zout, Activation::Softplus, dtau);
        let (gw, gb) = grad_views(g, &l.gen_out);
        let dp = linear_backward(&gc.p, self.w(&l.gen_out), &dz, gw, gb, true).expect("dx");
        let dhf = activation_backward(&gc.hf, act, &dp);
        let dh = self.residual_stack_backward(&gc.blocks, &l.gen_blocks, dhf, g);
        let dz0 = activation_backward(&gc.z0, act, &dh);
        let (gw, gb) = grad_views(g, &l.gen_in);
        let dc = linear_backward(&gc.c, self.w(&l.gen_in), &dz0, gw, gb, true).expect("dx");
        let (des, deg) = combine_backward(
            &dc,
            &cache.start_is_max,
            cache.start.x0.dirs,
            cache.goal.x0.dirs,
        );
        self.encode_backward(&cache.start, des, g);
        self.encode_backward(&cache.goal, deg, g);
        Ok(())
    }

    /// Summed `loss` over a batch and its parameter gradient. Speeds
    /// come from the viscous read-out with the given `epsilon`.
    pub fn param_grad<L: SpeedLoss>(
        &self,
        qs: &[f64],
        qg: &[f64],
        codes: &[&FourierCode],
        epsilon: f64,
        loss: &L,
    ) -> Result<(f64, ParamTape)> {
        let d = self.cfg.dims;
        let coords: Vec<usize> = (0..d).collect();
        let fwd = self.forward(qs, qg, codes, &coords, &coords, true, true)?;
        let mut dtau = fwd.tau.same_shape();
        let mut total = 0.0;
        let mut tape = Tape::with_capacity(256);
        for r in 0..codes.len() {
            tape.clear();
            let (q_s, q_g) = (&qs[r * d..(r + 1) * d], &qg[r * d..(r + 1) * d]);
            let tau = tape.var(fwd.tau.value()[[r, 0]]);
            let g: Vec<Var<'_>> = (0..2 * d).map(|k| tape.var(fwd.tau.d1(k)[[r, 0]])).collect();
            let h: Vec<Var<'_>> = (0..2 * d).map(|k| tape.var(fwd.tau.d2(k)[[r, 0]])).collect();
            let speeds = viscous_pair(tau, &g, &h, q_s, q_g, epsilon);
            let l = loss.eval(r, speeds.s_start, speeds.s_goal);
            if !l.value().is_finite() {
                return Err(Error::non_finite(format!("loss at q_s={q_s:?} q_g={q_g:?}")));
            }
            total += l.value();
            let adj = tape.gradient(l);
            dtau.value_mut()[[r, 0]] = adj.wrt(tau);
            for k in 0..2 * d {
                dtau.d1_mut(k)[[r, 0]] = adj.wrt(g[k]);
                dtau.d2_mut(k)[[r, 0]] = adj.wrt(h[k]);
            }
        }
        let mut grads = ParamTape::zeros(self.params.len());
        self.backward(&fwd, &dtau, &mut grads)?;
        Ok((total, grads))
    }

    /// Loss value only, for the same batch and read-out as [`param_grad`](Self::param_grad).
    pub fn loss_value<L: SpeedLoss>(
        &self,
        qs: &[f64],
        qg: &[f64],
        codes: &[&FourierCode],
        epsilon: f64,
        loss: &L,
    ) -> Result<f64> {
        let d = self.cfg.dims;
        let coords: Vec<usize> = (0..d).collect();
        let fwd = self.forward(qs, qg, codes, &coords, &coords, true, false)?;
        let mut total = 0.0;
        for r in 0..codes.len() {
            let tau = fwd.tau.value()[[r, 0]];
            let g: Vec<f64> = (0..2 * d).map(|k| fwd.tau.d1(k)[[r, 0]]).collect();
            let h: Vec<f64> = (0..2 * d).map(|k| fwd.tau.d2(k)[[r, 0]]).collect();
            let sp = viscous_pair(tau, &g, &h, &qs[r * d..(r + 1) * d], &qg[r * d..(r + 1) * d], epsilon);
            total += loss.eval(r, sp.s_start, sp.s_goal);
        }
        Ok(total)
    }
}

/// Viscous speeds at both endpoints from τ's jets over `[q_s, q_g]`.
pub fn viscous_pair<S: Scalar>(tau: S, grad: &[S], hess_diag: &[S], qs: &[f64], qg: &[f64], epsilon: f64) -> SpeedPair<S> {
    let d = qs.len();
    let sum = |xs: &[S]| xs[1..].iter().fold(xs[0], |acc, &x| acc + x);
    let diff_g: Vec<f64> = qg.iter().zip(qs).map(|(g, s)| g - s).collect();
    let diff_s: Vec<f64> = diff_g.iter().map(|x| -x).collect();
    SpeedPair {
        s_start: viscous_speed(tau, &grad[..d], sum(&hess_diag[..d]), &diff_s, epsilon),
        s_goal: viscous_speed(tau, &grad[d..], sum(&hess_diag[d..]), &diff_g, epsilon),
    }
}

fn grad_views<'g>(grads: &'g mut [f64], s: &Slot) -> (ArrayViewMut2<'g, f64>, ArrayViewMut1<'g, f64>) {
    let nw = s.shape.out * s.shape.inp;
    let (w, rest) = grads[s.w..].split_at_mut(nw);
    (
        ArrayViewMut2::from_shape((s.shape.out, s.shape.inp), w).expect("layer shape"),
        ArrayViewMut1::from(&mut rest[..s.shape.out]),
    )
}

/// `[max(u, v), min(u, v)]` featurewise, carrying each branch's directions
/// (start directions first). Ties select the start branch.
/// Output channel of each input channel when `dirs` directions are placed
/// after `offset` others in a batch with `total` directions.
fn channel_map(dirs: usize, offset: usize, total: usize, second: bool) -> Vec<usize> {
    let mut m = vec![0];
    m.extend((0..dirs).map(|k| 1 + offset + k));
    if second {
        m.extend((0..dirs).map(|k| 1 + total + offset + k));
    }
    m
}

fn combine(es: &JetBatch, eg: &JetBatch) -> (JetBatch, Vec<bool>) {
    let (rows, w) = (es.rows, es.width());
    let (ns, ng) = (es.dirs, eg.dirs);
    let second = es.second;
    let mut out = JetBatch::zeros(rows, ns + ng, second, 2 * w);
    let (vs, vg) = (es.value(), eg.value());
    let sel: Vec<bool> = (0..rows)
        .flat_map(|r| (0..w).map(move |j| (r, j)))
        .map(|(r, j)| vs[[r, j]] >= vg[[r, j]])
        .collect();
    let dst = out.data.as_slice_mut().expect("standard layout");
    for (src, map, start) in [
        (es, channel_map(ns, 0, ns + ng, second), true),
        (eg, channel_map(ng, ns, ns + ng, second), false),
    ] {
        let src = src.data.as_slice().expect("standard layout");
        for (c, &oc) in map.iter().enumerate() {
            for r in 0..rows {
                let from = &src[(c * rows + r) * w..][..w];
                let to = &mut dst[(oc * rows + r) * 2 * w..][..2 * w];
                for (j, &x) in from.iter().enumerate() {
                    let col = if sel[r * w + j] == start { j } else { w + j };
                    to[col] = x;
                }
            }
        }
    }
    (out, sel)
}

fn combine_backward(dc: &JetBatch, sel: &[bool], ns: usize, ng: usize) -> (JetBatch, JetBatch) {
    let (rows, w) = (dc.rows, dc.width() / 2);
    let second = dc.second;
    let src = dc.data.as_slice().expect("standard layout");
    let mut ds = JetBatch::zeros(rows, ns, second, w);
    let mut dg = JetBatch::zeros(rows, ng, second, w);
    for (dst, map, start) in [
        (&mut ds, channel_map(ns, 0, ns + ng, second), true),
        (&mut dg, channel_map(ng, ns, ns + ng, second), false),
    ] {
        let dst = dst.data.as_slice_mut().expect("standard layout");
        for (c, &oc) in map.iter().enumerate() {
            for r in 0..rows {
                let from = &src[(oc * rows + r) * 2 * w..][..2 * w];
                let to = &mut dst[(c * rows + r) * w..][..w];
                for (j, x) in to.iter_mut().enumerate() {
                    let col = if sel[r * w + j] == start { j } else { w + j };
                    *x = from[col];
                }
            }
        }
    }
    (ds, dg)
}

/// Which endpoint a derivative is taken with respect to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endpoint {
    Start,
    Goal,
}

/// Arrival time, its gradient at one endpoint and the Eikonal speed there.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGradient {
    pub time: f64,
    pub grad: Vec<f64>,
    pub speed: f64,
}

/// The time field of one environment.
#[derive(Clone, Copy)]
pub struct Field<'a> {
    net: &'a FieldNet,
    code: &'a FourierCode,
}

impl<'a> Field<'a> {
    pub fn net(&self) -> &'a FieldNet {
        self.net
    }

    pub fn dims(&self) -> usize {
        self.net.cfg.dims
    }

    fn check_pair(&self, qs: &[f64], qg: &[f64]) -> Result<()> {
        let d = self.dims();
        for q in [qs, qg] {
            if q.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: q.len(),
                });
            }
            if q.iter().any(|x| !x.is_finite()) {
                return Err(Error::non_finite(format!("configuration {q:?}")));
            }
        }
        Ok(())
    }

    pub fn tau(&self, qs: &[f64], qg: &[f64]) -> Result<f64> {
        self.check_pair(qs, qg)?;
        let f = self.net.forward(qs, qg, &[self.code], &[], &[], false, false)?;
        Ok(f.tau.value()[[0, 0]])
    }

    /// τ for many pairs given as flat `rows x d` arrays.
    pub fn tau_batch(&self, qs: &[f64], qg: &[f64]) -> Result<Vec<f64>> {
        let d = self.dims();
        if qs.len() != qg.len() || qs.len() % d != 0 {
            return Err(Error::Shape("pair arrays differ in length".into()));
        }
        let mut out = Vec::with_capacity(qs.len() / d);
        for (cs, cg) in qs.chunks(EVAL_CHUNK * d).zip(qg.chunks(EVAL_CHUNK * d)) {
            let codes = vec![self.code; cs.len() / d];
            let f = self.net.forward(cs, cg, &codes, &[], &[], false, false)?;
            out.extend(f.tau.value().column(0).iter());
        }
        Ok(out)
    }

    pub fn arrival_time(&self, qs: &[f64], qg: &[f64]) -> Result<f64> {
        let dist = distance(qs, qg);
        if dist == 0.0 {
            return Err(Error::Coincident);
        }
        Ok(dist / self.tau(qs, qg)?)
    }

    pub fn value_grad(&self, qs: &[f64], qg: &[f64], block: Range<usize>) -> Result<DiffBundle> {
        autodiff::value_grad(self, &[qs, qg].concat(), block)
    }

    pub fn value_grad_laplacian(&self, qs: &[f64], qg: &[f64], block: Range<usize>) -> Result<DiffBundle> {
        autodiff::value_grad_laplacian(self, &[qs, qg].concat(), block)
    }

    /// Speeds from the plain Eikonal relation.
    pub fn speed_eq3(&self, qs: &[f64], qg: &[f64]) -> Result<SpeedPair> {
        if qs == qg {
            return Err(Error::Coincident);
        }
        let d = self.dims();
        let b = self.value_grad(qs, qg, 0..2 * d)?;
        let diff_g: Vec<f64> = qg.iter().zip(qs).map(|(g, s)| g - s).collect();
        let diff_s: Vec<f64> = diff_g.iter().map(|x| -x).collect();
        let pair = SpeedPair {
            s_start: eikonal_speed(b.value, &b.grad[..d], &diff_s),
            s_goal: eikonal_speed(b.value, &b.grad[d..], &diff_g),
        };
        check_speeds(pair, qs, qg)
    }

    /// Speeds from the viscosity-regularized relation.
    pub fn speed_eq7(&self, qs: &[f64], qg: &[f64], epsilon: f64) -> Result<SpeedPair> {
        if qs == qg {
            return Err(Error::Coincident);
        }
        if !(epsilon >= 0.0) {
            return Err(Error::Shape(format!("epsilon must be nonnegative, got {epsilon}")));
        }
        let d = self.dims();
        let b = self.value_grad_laplacian(qs, qg, 0..2 * d)?;
        let hess = b.hess_diag.as_ref().expect("second order");
        check_speeds(viscous_pair(b.value, &b.grad, hess, qs, qg, epsilon), qs, qg)
    }

    /// `T`, `∇T` and the Eikonal speed at the chosen endpoint.
    pub fn time_gradient(&self, qs: &[f64], qg: &[f64], at: Endpoint) -> Result<TimeGradient> {
        let d = self.dims();
        let block = match at {
            Endpoint::Start => 0..d,
            Endpoint::Goal => d..2 * d,
        };
        let b = self.value_grad(qs, qg, block)?;
        let (here, there) = match at {
            Endpoint::Start => (qs, qg),
            Endpoint::Goal => (qg, qs),
        };
        let diff: Vec<f64> = here.iter().zip(there).map(|(a, b)| a - b).collect();
        let dist = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
        if dist == 0.0 {
            return Err(Error::Coincident);
        }
        let tau = b.value;
        let grad = diff
            .iter()
            .zip(&b.grad)
            .map(|(x, g)| x / (dist * tau) - dist * g / (tau * tau))
            .collect();
        let speed = eikonal_speed(tau, &b.grad, &diff);
        if !speed.is_finite() || speed <= 0.0 {
            return Err(Error::non_finite(format!("speed at {here:?}")));
        }
        Ok(TimeGradient {
            time: dist / tau,
            grad,
            speed,
        })
    }
}

fn check_speeds(p: SpeedPair, qs: &[f64], qg: &[f64]) -> Result<SpeedPair> {
    if p.s_start.is_finite() && p.s_goal.is_finite() && p.s_start > 0.0 && p.s_goal > 0.0 {
        Ok(p)
    } else {
        Err(Error::non_finite(format!(
            "speeds {p:?} at q_s={qs:?} q_g={qg:?}"
        )))
    }
}

impl JetProgram for Field<'_> {
    fn input_len(&self) -> usize {
        2 * self.dims()
    }

    fn jet(&self, inputs: &[f64], block: Range<usize>, second_order: bool) -> Result<Jet<f64>> {
        let d = self.dims();
        let start: Vec<usize> = block.clone().filter(|&i| i < d).collect();
        let goal: Vec<usize> = block.filter(|&i| i >= d).map(|i| i - d).collect();
        let f = self.net.forward(
            &inputs[..d],
            &inputs[d..],
            &[self.code],
            &start,
            &goal,
            second_order,
            false,
        )?;
        let n = start.len() + goal.len();
        let t = &f.tau;
        Ok(Jet {
            value: t.value()[[0, 0]],
            d1: (0..n).map(|k| t.d1(k)[[0, 0]]).collect(),
            d2: if second_order {
                (0..n).map(|k| t.d2(k)[[0, 0]]).collect()
            } else {
                vec![0.0; n]
            },
        })
    }
}

#[cfg(test)]
mod tests;
