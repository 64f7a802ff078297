//! Progressive training: α schedule, speed-ratio loss, the loss-ratio guard
//! and the optimizer.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamTape, Scalar};
use crate::env::{progressive, Environment, FourierCode, PairDataset};
use crate::error::{Error, Result};
use crate::field::{FieldNet, SpeedLoss};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Hold `alpha_init` through the warmup, then ramp.
    HoldThenRamp,
    /// Ramp from the first epoch on.
    RampFromStart,
    /// Keep `alpha_init` for every epoch.
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `S*/S + S/S*` at both endpoints, minus 4.
    Isotropic,
    /// `|1 − sqrt(S*/S)| + |1 − sqrt(S/S*)|` at both endpoints.
    L1,
}

/// What the guard does once every retry of an epoch has been used up.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exhausted {
    /// Restore the pre-epoch parameters and stop with a divergence error.
    Fail,
    /// Keep the attempt with the lowest loss and carry on.
    Accept,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha_init: f64,
    pub warmup_epochs: usize,
    pub step_phase1: f64,
    pub phase2_epoch: usize,
    pub step_phase2: f64,
    pub alpha_final: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub schedule: Schedule,
    pub loss: LossKind,
    pub retry_cap: usize,
    pub on_exhausted: Exhausted,
    /// Rescales each batch gradient to at most this Euclidean norm.
    pub clip_norm: Option<f64>,
    /// Hard limit on epochs; required for the constant schedule.
    pub max_epochs: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha_init: 0.5,
            warmup_epochs: 1000,
            step_phase1: 1.0 / 4000.0,
            phase2_epoch: 4000,
            step_phase2: 1.0 / 8000.0,
            alpha_final: 1.05,
            eta: 1.5,
            epsilon: 0.01,
            learning_rate: 1e-3,
            weight_decay: 0.1,
            batch_size: 100,
            seed: 0,
            schedule: Schedule::HoldThenRamp,
            loss: LossKind::Isotropic,
            retry_cap: 5,
            on_exhausted: Exhausted::Fail,
            clip_norm: None,
            max_epochs: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidEnvironment(format!("training config: {m}")));
        if !(self.eta > 1.0) {
            return bad(format!("eta must exceed 1, got {}", self.eta));
        }
        if !(self.alpha_final >= 1.0) {
            return bad(format!("alpha_final must be at least 1, got {}", self.alpha_final));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.alpha_init >= 0.0) || !(self.weight_decay >= 0.0) || !(self.epsilon >= 0.0) {
            return bad("alpha_init, weight_decay and epsilon must be nonnegative".into());
        }
        if !(self.step_phase1 >= 0.0 && self.step_phase2 >= 0.0) {
            return bad("alpha steps must be nonnegative".into());
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip_norm must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if self.schedule == Schedule::Constant && self.max_epochs.is_none() {
            return bad("a constant schedule needs max_epochs".into());
        }
        if self.schedule != Schedule::Constant
            && self.max_epochs.is_none()
            && self.step_phase2 == 0.0
            && (self.step_phase1 == 0.0 || self.phase2_epoch <= self.warmup_epochs)
        {
            return bad("the alpha schedule never reaches alpha_final; set max_epochs".into());
        }
        Ok(())
    }

    /// α used during `epoch` (1-based).
    pub fn alpha(&self, epoch: usize) -> f64 {
        let ramp = |from: usize| {
            let e1 = epoch.min(self.phase2_epoch).saturating_sub(from);
            let e2 = epoch.saturating_sub(self.phase2_epoch.max(from));
            self.step_phase1 * e1 as f64 + self.step_phase2 * e2 as f64
        };
        let a = match self.schedule {
            Schedule::Constant => return self.alpha_init,
            Schedule::HoldThenRamp => self.alpha_init + ramp(self.warmup_epochs),
            Schedule::RampFromStart => self.alpha_init + ramp(0),
        };
        a.min(self.alpha_final)
    }

    /// Whether training stops after `epoch`.
    pub fn finished_after(&self, epoch: usize) -> bool {
        if self.max_epochs.is_some_and(|m| epoch >= m) {
            return true;
        }
        self.schedule != Schedule::Constant && self.alpha(epoch) >= self.alpha_final
    }
}

/// Speed-ratio loss at both endpoints.
pub fn loss_eq12(pred_s: f64, pred_g: f64, truth_s: f64, truth_g: f64) -> Result<f64> {
    for s in [pred_s, pred_g, truth_s, truth_g] {
        if !(s > 0.0) {
            return Err(Error::NonPositiveSpeed(s));
        }
    }
    Ok(isotropic(pred_s, truth_s) + isotropic(pred_g, truth_g))
}

/// The non-smooth ablation loss at both endpoints.
pub fn loss_l1(pred_s: f64, pred_g: f64, truth_s: f64, truth_g: f64) -> Result<f64> {
    for s in [pred_s, pred_g, truth_s, truth_g] {
        if !(s > 0.0) {
            return Err(Error::NonPositiveSpeed(s));
        }
    }
    Ok(l1(pred_s, truth_s) + l1(pred_g, truth_g))
}

/// `S*/S + S/S* − 2`, written as `(S − S*)² / (S S*)` so rounding cannot
/// push it below zero.
fn isotropic<S: Scalar>(pred: S, truth: f64) -> S {
    let d = pred - truth;
    d * d / (pred * truth)
}

fn l1<S: Scalar>(pred: S, truth: f64) -> S {
    let r = (pred.recip() * truth).sqrt();
    (-r + 1.0).abs() + (-r.recip() + 1.0).abs()
}

struct Targets<'a> {
    kind: LossKind,
    start: &'a [f64],
    goal: &'a [f64],
}

impl SpeedLoss for Targets<'_> {
    fn eval<S: Scalar>(&self, r: usize, s_start: S, s_goal: S) -> S {
        match self.kind {
            LossKind::Isotropic => isotropic(s_start, self.start[r]) + isotropic(s_goal, self.goal[r]),
            LossKind::L1 => l1(s_start, self.start[r]) + l1(s_goal, self.goal[r]),
        }
    }
}

/// Adam moments with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    pub fn new(n: usize) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &ParamTape, lr: f64, wd: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        grads.check_finite(self.t as usize)?;
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads.as_slice()).enumerate() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            *p = *p - lr * mhat / (vhat.sqrt() + self.eps) - lr * wd * *p;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub alpha: f64,
    pub loss: f64,
    #[serde(rename = "reshuffles")]
    pub reshuffle_count: usize,
    #[serde(rename = "seconds")]
    pub wall_time: f64,
}

impl EpochReport {
    /// Equality ignoring wall time.
    pub fn same_outcome(&self, o: &EpochReport) -> bool {
        self.epoch == o.epoch
            && self.alpha.to_bits() == o.alpha.to_bits()
            && self.loss.to_bits() == o.loss.to_bits()
            && self.reshuffle_count == o.reshuffle_count
    }
}

/// Observation points inside the training loop.
pub trait TrainHook {
    /// Sees every attempt of an epoch before its first batch.
    fn attempt_started(&mut self, _epoch: usize, _attempt: usize, _params: &[f64], _order: &[usize]) {}

    /// May replace the epoch loss before the guard looks at it.
    fn epoch_loss(&mut self, _epoch: usize, _attempt: usize, loss: f64) -> f64 {
        loss
    }

    /// Called right after the guard restored the pre-epoch parameters.
    fn restored(&mut self, _epoch: usize, _params: &[f64]) {}

    /// Called after each accepted epoch; returning `false` stops training.
    fn epoch_done(&mut self, _report: &EpochReport, _net: &FieldNet) -> Result<bool> {
        Ok(true)
    }
}

pub struct NoHook;

impl TrainHook for NoHook {}

/// Owns the network, the pair set and optimizer state for one run.
pub struct Trainer {
    cfg: TrainConfig,
    net: FieldNet,
    codes: Vec<FourierCode>,
    qs: Vec<f64>,
    qg: Vec<f64>,
    env_of: Vec<usize>,
    gt_s: Vec<f64>,
    gt_g: Vec<f64>,
    order: Vec<usize>,
    rng: ChaCha8Rng,
    opt: AdamW,
    epoch: usize,
    prev_loss: f64,
    history: Vec<EpochReport>,
}

impl Trainer {
    /// Pairs from each dataset are matched to the environment with the same id.
    pub fn new(mut net: FieldNet, envs: &[Environment], datasets: &[PairDataset], cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let d = net.config().dims;
        let mut codes = Vec::with_capacity(envs.len());
        for env in envs {
            net.register(env)?;
            codes.push(env.fourier_code().clone());
        }
        let (mut qs, mut qg, mut env_of, mut gt_s, mut gt_g) = (vec![], vec![], vec![], vec![], vec![]);
        for data in datasets {
            let e = envs
                .iter()
                .position(|env| env.id() == data.env_id)
                .ok_or_else(|| Error::Incompatible(format!("no environment with id {}", data.env_id)))?;
            if data.dims() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: data.dims(),
                });
            }
            for (s, g) in data.iter() {
                qs.extend_from_slice(s);
                qg.extend_from_slice(g);
                env_of.push(e);
                gt_s.push(envs[e].ground_truth_speed(s)?);
                gt_g.push(envs[e].ground_truth_speed(g)?);
            }
        }
        if env_of.is_empty() {
            return Err(Error::InvalidEnvironment("no training pairs".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..env_of.len()).collect();
        order.shuffle(&mut rng);
        let opt = AdamW::new(net.param_count());
        Ok(Trainer {
            cfg,
            net,
            codes,
            qs,
            qg,
            env_of,
            gt_s,
            gt_g,
            order,
            rng,
            opt,
            epoch: 0,
            prev_loss: f64::INFINITY,
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn net(&self) -> &FieldNet {
        &self.net
    }

    pub fn into_net(self) -> FieldNet {
        self.net
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[EpochReport] {
        &self.history
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn is_done(&self) -> bool {
        self.epoch > 0 && self.cfg.finished_after(self.epoch)
    }

    /// One pass over the batches at the current α; returns the summed
    /// batch-mean losses.
    fn pass(&mut self, alpha: f64) -> Result<f64> {
        let d = self.net.config().dims;
        let mut total = 0.0;
        let n = self.order.len();
        let bs = self.cfg.batch_size;
        let (mut bqs, mut bqg, mut ts, mut tg) = (vec![], vec![], vec![], vec![]);
        for (j, start) in (0..n).step_by(bs).enumerate() {
            let rows = &self.order[start..(start + bs).min(n)];
            bqs.clear();
            bqg.clear();
            ts.clear();
            tg.clear();
            let mut codes = Vec::with_capacity(rows.len());
            for &r in rows {
                bqs.extend_from_slice(&self.qs[r * d..(r + 1) * d]);
                bqg.extend_from_slice(&self.qg[r * d..(r + 1) * d]);
                ts.push(progressive(self.gt_s[r], alpha));
                tg.push(progressive(self.gt_g[r], alpha));
                codes.push(&self.codes[self.env_of[r]]);
            }
            if let Some(&s) = ts.iter().chain(&tg).find(|s| !(**s > 0.0)) {
                return Err(Error::NonPositiveSpeed(s));
            }
            let targets = Targets {
                kind: self.cfg.loss,
                start: &ts,
                goal: &tg,
            };
            let (sum, mut grads) = self.net.param_grad(&bqs, &bqg, &codes, self.cfg.epsilon, &targets)?;
            let inv = 1.0 / rows.len() as f64;
            grads.scale(inv);
            grads.check_finite(j)?;
            if let Some(c) = self.cfg.clip_norm {
                let norm = grads.norm();
                if norm > c {
                    grads.scale(c / norm);
                }
            }
            total += sum * inv;
            self.opt
                .step(self.net.params_mut(), &grads, self.cfg.learning_rate, self.cfg.weight_decay)?;
        }
        Ok(total)
    }

    /// Trains the next epoch, retrying with reshuffled batches while the loss
    /// ratio exceeds `eta`.
    pub fn train_epoch(&mut self, hook: &mut dyn TrainHook) -> Result<EpochReport> {
        let epoch = self.epoch + 1;
        let alpha = self.cfg.alpha(epoch);
        let clock = Instant::now();
        let snapshot = (self.net.params().to_vec(), self.opt.clone());
        let mut attempt = 0;
        let mut best: Option<(f64, Vec<f64>, AdamW)> = None;
        let loss = loop {
            hook.attempt_started(epoch, attempt, self.net.params(), &self.order);
            let loss = hook.epoch_loss(epoch, attempt, self.pass(alpha)?);
            if !(loss.is_finite() && loss >= 0.0) {
                return Err(Error::non_finite(format!("epoch {epoch} loss {loss}")));
            }
            if !(loss / self.prev_loss > self.cfg.eta) {
                break loss;
            }
            if self.cfg.on_exhausted == Exhausted::Accept {
                if best.as_ref().is_none_or(|b| loss < b.0) {
                    best = Some((loss, self.net.params().to_vec(), self.opt.clone()));
                }
                if attempt == self.cfg.retry_cap {
                    let (loss, params, opt) = best.take().expect("at least one attempt");
                    self.net.set_params(&params)?;
                    self.opt = opt;
                    break loss;
                }
            }
            self.net.set_params(&snapshot.0)?;
            self.opt = snapshot.1.clone();
            hook.restored(epoch, self.net.params());
            if attempt == self.cfg.retry_cap {
                return Err(Error::TrainingDiverged {
                    epoch,
                    retries: attempt,
                    history: self.history.clone(),
                });
            }
            self.order.shuffle(&mut self.rng);
            attempt += 1;
        };
        self.epoch = epoch;
        self.prev_loss = loss;
        self.net.trained_alpha = alpha;
        let report = EpochReport {
            epoch,
            alpha,
            loss,
            reshuffle_count: attempt,
            wall_time: clock.elapsed().as_secs_f64(),
        };
        self.history.push(report.clone());
        Ok(report)
    }

    /// Trains until the schedule or the epoch cap ends the run, or the hook
    /// asks to stop.
    pub fn run(&mut self, hook: &mut dyn TrainHook) -> Result<()> {
        while !self.is_done() {
            let report = self.train_epoch(hook)?;
            if !hook.epoch_done(&report, &self.net)? {
                break;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvironmentSpec;
    use proptest::prelude::*;

    #[test]
    fn loss_examples() {
        assert_eq!(loss_eq12(0.3, 0.7, 0.3, 0.7).unwrap(), 0.0);
        assert!((loss_eq12(0.6, 1.4, 0.3, 0.7).unwrap() - 1.0).abs() < 1e-15);
        assert!((loss_eq12(0.15, 0.35, 0.3, 0.7).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(loss_eq12(0.0, 1.0, 1.0, 1.0), Err(Error::NonPositiveSpeed(_))));
        assert_eq!(loss_l1(0.3, 0.7, 0.3, 0.7).unwrap(), 0.0);
    }

    #[test]
    fn l1_has_a_kink_where_isotropic_is_smooth() {
        let h = 1e-6;
        let slope = |f: &dyn Fn(f64) -> f64, side: f64| (f(1.0 + side * h) - f(1.0)) / (side * h);
        let iso = |s: f64| loss_eq12(s, 1.0, 1.0, 1.0).unwrap();
        let abl = |s: f64| loss_l1(s, 1.0, 1.0, 1.0).unwrap();
        assert!((slope(&iso, 1.0) - slope(&iso, -1.0)).abs() < 1e-5);
        assert!((slope(&abl, 1.0) - slope(&abl, -1.0)).abs() > 0.5);
    }

    #[test]
    fn schedule_examples() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.alpha(500), 0.5);
        assert_eq!(cfg.alpha(1000), 0.5);
        assert_eq!(cfg.alpha(2000), 0.75);
        assert_eq!(cfg.alpha(3200), 1.05);
        assert_eq!(cfg.alpha(100_000), 1.05);
        assert!(!cfg.finished_after(3199));
        assert!(cfg.finished_after(3200));

        let late = TrainConfig {
            alpha_final: 2.0,
            ..TrainConfig::default()
        };
        assert!((late.alpha(5000) - (0.5 + 3000.0 / 4000.0 + 1000.0 / 8000.0)).abs() < 1e-15);

        let from_start = TrainConfig {
            schedule: Schedule::RampFromStart,
            ..TrainConfig::default()
        };
        assert_eq!(from_start.alpha(1), 0.5 + 1.0 / 4000.0);

        let constant = TrainConfig {
            schedule: Schedule::Constant,
            alpha_init: 0.0,
            max_epochs: Some(10),
            ..TrainConfig::default()
        };
        assert_eq!(constant.alpha(7), 0.0);
        assert!(constant.finished_after(10));
        assert!(TrainConfig {
            max_epochs: None,
            ..constant
        }
        .validate()
        .is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { eta: 1.0, ..Default::default() },
            TrainConfig { alpha_final: 0.9, ..Default::default() },
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn adamw_examples() {
        let mut p = vec![0.5, -2.0];
        let mut opt = AdamW::new(2);
        opt.step(&mut p, &ParamTape::zeros(2), 1e-3, 0.0).unwrap();
        assert_eq!(p, vec![0.5, -2.0]);
        opt.step(&mut p, &ParamTape::zeros(2), 1e-3, 0.1).unwrap();
        assert_eq!(p, vec![0.5 * (1.0 - 1e-4), -2.0 * (1.0 - 1e-4)]);
        let bad = ParamTape::from_vec(vec![0.0, f64::NAN]);
        assert!(matches!(opt.step(&mut p, &bad, 1e-3, 0.0), Err(Error::NonFiniteGradient { index: 1, .. })));
    }

    #[test]
    fn adamw_finds_quadratic_minimum() {
        // (x − 3)² has its minimizer at 3
        let mut x = vec![-1.0];
        let mut opt = AdamW::new(1);
        for k in 0..5000 {
            let lr = if k < 4000 { 1e-2 } else { 1e-3 };
            let g = ParamTape::from_vec(vec![2.0 * (x[0] - 3.0)]);
            opt.step(&mut x, &g, lr, 0.0).unwrap();
        }
        assert!((x[0] - 3.0).abs() < 1e-6, "{}", x[0]);
    }

    fn tiny_setup(seed: u64) -> (FieldNet, Vec<Environment>, Vec<PairDataset>) {
        let mut spec = EnvironmentSpec::empty(1, vec![[-1.0, 1.0]; 2]);
        spec.fourier_h = 8;
        let env = Environment::new(spec).unwrap();
        let data = env.sample_pairs(40, seed).unwrap();
        let net = FieldNet::for_environment(&env, 8, 1, seed).unwrap();
        (net, vec![env], vec![data])
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            alpha_init: 0.0,
            schedule: Schedule::Constant,
            max_epochs: Some(50),
            batch_size: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn constant_speed_loss_decreases() {
        let (net, envs, data) = tiny_setup(3);
        let mut t = Trainer::new(net, &envs, &data, tiny_cfg()).unwrap();
        t.run(&mut NoHook).unwrap();
        let h = t.history();
        assert_eq!(h.len(), 50);
        assert!(h.last().unwrap().loss < 0.5 * h[0].loss);
        let rises = h.windows(2).filter(|w| w[1].loss > w[0].loss).count();
        assert!(rises <= 2, "{rises} increases");
    }

    #[test]
    fn clipped_gradients_shrink_the_step() {
        let max_move = |clip| {
            let (net, envs, data) = tiny_setup(3);
            let before = net.params().to_vec();
            let cfg = TrainConfig {
                clip_norm: clip,
                weight_decay: 0.0,
                ..tiny_cfg()
            };
            let mut t = Trainer::new(net, &envs, &data, cfg).unwrap();
            t.train_epoch(&mut NoHook).unwrap();
            t.net().params().iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        // Adam's epsilon dominates a vanishing gradient, so the step all but stops
        assert!(max_move(Some(1e-15)) < 1e-9);
        assert!(max_move(None) > 1e-4);
    }

    #[test]
    fn runs_are_reproducible() {
        let run = || {
            let (net, envs, data) = tiny_setup(5);
            let mut t = Trainer::new(net, &envs, &data, TrainConfig {
                max_epochs: Some(5),
                ..tiny_cfg()
            })
            .unwrap();
            t.run(&mut NoHook).unwrap();
            (t.history().to_vec(), t.into_net().params().to_vec())
        };
        let (h1, p1) = run();
        let (h2, p2) = run();
        assert!(h1.iter().zip(&h2).all(|(a, b)| a.same_outcome(b)));
        assert_eq!(p1, p2);
    }

    /// Doubles the loss of the first attempt at `epoch` and records what the
    /// guard does.
    #[derive(Default)]
    struct Adversary {
        epoch: usize,
        starts: Vec<(usize, Vec<f64>, Vec<usize>)>,
        restored: Vec<Vec<f64>>,
        last_loss: f64,
    }

    impl TrainHook for Adversary {
        fn attempt_started(&mut self, epoch: usize, attempt: usize, params: &[f64], order: &[usize]) {
            if epoch == self.epoch {
                self.starts.push((attempt, params.to_vec(), order.to_vec()));
            }
        }
        fn epoch_loss(&mut self, epoch: usize, attempt: usize, loss: f64) -> f64 {
            let out = if epoch == self.epoch && attempt == 0 { 2.0 * self.last_loss } else { loss };
            self.last_loss = out;
            out
        }
        fn restored(&mut self, _epoch: usize, params: &[f64]) {
            self.restored.push(params.to_vec());
        }
    }

    #[test]
    fn guard_restores_and_reshuffles() {
        let (net, envs, data) = tiny_setup(7);
        let mut t = Trainer::new(net, &envs, &data, tiny_cfg()).unwrap();
        let mut adv = Adversary {
            epoch: 2,
            ..Default::default()
        };
        t.train_epoch(&mut adv).unwrap();
        let r = t.train_epoch(&mut adv).unwrap();
        assert_eq!(r.reshuffle_count, 1);
        assert_eq!(adv.restored.len(), 1);
        assert_eq!(adv.starts.len(), 2);
        assert_eq!(adv.restored[0], adv.starts[0].1);
        assert_eq!(adv.starts[1].1, adv.starts[0].1);
        assert_ne!(adv.starts[1].2, adv.starts[0].2);
        let r3 = t.train_epoch(&mut adv).unwrap();
        assert_eq!(r3.epoch, 3);
    }

    struct AlwaysWorse;

    impl TrainHook for AlwaysWorse {
        fn epoch_loss(&mut self, epoch: usize, _attempt: usize, loss: f64) -> f64 {
            if epoch > 1 {
                1e9
            } else {
                loss
            }
        }
    }

    #[test]
    fn guard_gives_up_after_the_cap() {
        let (net, envs, data) = tiny_setup(7);
        let mut t = Trainer::new(net, &envs, &data, tiny_cfg()).unwrap();
        t.train_epoch(&mut AlwaysWorse).unwrap();
        match t.train_epoch(&mut AlwaysWorse) {
            Err(Error::TrainingDiverged { epoch, retries, history }) => {
                assert_eq!((epoch, retries, history.len()), (2, 5, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn exhausted_guard_can_keep_the_last_attempt() {
        let (net, envs, data) = tiny_setup(7);
        let cfg = TrainConfig {
            on_exhausted: Exhausted::Accept,
            ..tiny_cfg()
        };
        let mut t = Trainer::new(net, &envs, &data, cfg).unwrap();
        t.train_epoch(&mut AlwaysWorse).unwrap();
        let before = t.net().params().to_vec();
        let r = t.train_epoch(&mut AlwaysWorse).unwrap();
        assert_eq!((r.epoch, r.reshuffle_count, r.loss), (2, 5, 1e9));
        assert_ne!(t.net().params(), &before[..]);
    }

    #[test]
    fn report_json_keys() {
        let r = EpochReport {
            epoch: 3,
            alpha: 0.5,
            loss: 0.25,
            reshuffle_count: 1,
            wall_time: 2.0,
        };
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for k in ["epoch", "alpha", "loss", "reshuffles", "seconds"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }

    proptest! {
        #[test]
        fn isotropic_loss_nonnegative(a in 1e-3f64..1e3, b in 1e-3f64..1e3, c in 1e-3f64..1e3, d in 1e-3f64..1e3) {
            prop_assert!(loss_eq12(a, b, c, d).unwrap() >= 0.0);
        }

        #[test]
        fn alpha_monotone_and_clamped(e in 1usize..20_000) {
            let cfg = TrainConfig::default();
            prop_assert!(cfg.alpha(e + 1) >= cfg.alpha(e));
            prop_assert!(cfg.alpha(e) >= cfg.alpha_init && cfg.alpha(e) <= cfg.alpha_final);
        }
    }
}
