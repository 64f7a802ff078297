//! Bidirectional marching along the learned time field, path validation and
//! the evaluation metrics.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::env::{distance, Environment, PairDataset};
use crate::error::{Error, Result};
use crate::field::{Endpoint, FieldNet};
use crate::fmm::{fmm_descend, fmm_solve, SpeedGrid};

/// Goal tolerance and step gain defaults.
pub const DEFAULT_BETA: f64 = 0.03;
pub const DEFAULT_D_GOAL: f64 = 0.06;

#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub waypoints: Vec<Vec<f64>>,
    pub length: f64,
    /// Minimum clearance along the path; NaN until validated.
    pub safe_margin: f64,
    pub plan_seconds: f64,
    pub success: bool,
}

impl Path {
    pub fn new(waypoints: Vec<Vec<f64>>, success: bool) -> Self {
        let length = waypoints.windows(2).map(|w| distance(&w[0], &w[1])).sum();
        Path {
            waypoints,
            length,
            safe_margin: f64::NAN,
            plan_seconds: 0.0,
            success,
        }
    }

    /// Waypoints as CSV, one configuration per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for w in &self.waypoints {
            let line: Vec<String> = w.iter().map(|x| x.to_string()).collect();
            writeln!(out, "{}", line.join(",")).expect("string write");
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub beta: f64,
    pub d_goal: f64,
    /// Defaults to `10 · diameter / (beta · s_min)`.
    pub max_iters: Option<usize>,
    /// Collision-check spacing; defaults to `d_min / 2`.
    pub check_step: Option<f64>,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            beta: DEFAULT_BETA,
            d_goal: DEFAULT_D_GOAL,
            max_iters: None,
            check_step: None,
        }
    }
}

impl PlanConfig {
    pub fn max_iters_for(&self, env: &Environment) -> usize {
        self.max_iters
            .unwrap_or_else(|| (10.0 * env.diameter() / (self.beta * env.s_min())).round() as usize)
    }

    pub fn check_step_for(&self, env: &Environment) -> f64 {
        self.check_step.unwrap_or_else(|| {
            if env.d_min() > 0.0 {
                env.d_min() / 2.0
            } else {
                env.diameter() / 1000.0
            }
        })
    }
}

fn check_endpoint(env: &Environment, q: &[f64]) -> Result<()> {
    if env.clearance(q)? <= 0.0 {
        return Err(Error::EndpointInCollision(q.to_vec()));
    }
    Ok(())
}

/// Marches start and goal toward each other, each half-step moving one end by
/// `−β S² ∇T` with the field refreshed in between.
pub fn plan(net: &FieldNet, env: &Environment, qs: &[f64], qg: &[f64], cfg: &PlanConfig) -> Result<Path> {
    net.check_compatible(env)?;
    check_endpoint(env, qs)?;
    check_endpoint(env, qg)?;
    if !(cfg.beta > 0.0 && cfg.d_goal > 0.0) {
        return Err(Error::InvalidEnvironment("beta and d_goal must be positive".into()));
    }
    let field = net.field(env.id())?;
    let clock = Instant::now();
    let max_iters = cfg.max_iters_for(env);

    let mut a = qs.to_vec();
    let mut b = qg.to_vec();
    let mut front = vec![a.clone()];
    let mut back = vec![b.clone()];
    let mut met = distance(&a, &b) < cfg.d_goal;
    'march: for _ in 0..max_iters {
        if met {
            break;
        }
        for end in [Endpoint::Start, Endpoint::Goal] {
            let tg = match field.time_gradient(&a, &b, end) {
                Ok(tg) => tg,
                Err(e) if e.is_numerical() => break 'march,
                Err(e) => return Err(e),
            };
            let gain = cfg.beta * tg.speed * tg.speed;
            let (q, trail) = match end {
                Endpoint::Start => (&mut a, &mut front),
                Endpoint::Goal => (&mut b, &mut back),
            };
            for (x, g) in q.iter_mut().zip(&tg.grad) {
                *x -= gain * g;
            }
            env.clip(q);
            if q.iter().any(|x| !x.is_finite()) {
                break 'march;
            }
            trail.push(q.clone());
            if distance(&a, &b) < cfg.d_goal {
                met = true;
                break;
            }
        }
    }
    let elapsed = clock.elapsed().as_secs_f64();
    front.extend(back.into_iter().rev());
    let mut path = Path::new(front, met);
    let (valid, margin) = validate_path(env, &path, cfg.check_step_for(env));
    path.safe_margin = margin;
    path.success = met && valid;
    path.plan_seconds = elapsed;
    Ok(path)
}

/// Checks every segment at spacing at most `check_step`. Returns validity and
/// the smallest clearance seen (`+inf` without obstacles).
pub fn validate_path(env: &Environment, path: &Path, check_step: f64) -> (bool, f64) {
    let step = if check_step > 0.0 { check_step } else { env.diameter() / 1000.0 };
    let mut margin = f64::INFINITY;
    if path.waypoints.iter().any(|w| !env.contains(w)) {
        return (false, f64::NEG_INFINITY);
    }
    let mut probe = vec![0.0; env.dims()];
    let mut visit = |q: &[f64]| margin = margin.min(env.clearance_unchecked(q));
    if let Some(first) = path.waypoints.first() {
        visit(first);
    }
    for w in path.waypoints.windows(2) {
        let n = (distance(&w[0], &w[1]) / step).ceil().max(1.0) as usize;
        for k in 1..=n {
            let t = k as f64 / n as f64;
            for i in 0..probe.len() {
                probe[i] = w[0][i] + t * (w[1][i] - w[0][i]);
            }
            visit(&probe);
        }
    }
    (margin > 0.0, margin)
}

/// One planned query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub time: f64,
    pub length: f64,
    pub margin: f64,
    pub success: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return MeanStd {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

/// Aggregates over successful queries, plus the success percentage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub queries: usize,
    pub success_rate: f64,
    pub time: MeanStd,
    pub length: MeanStd,
    pub margin: MeanStd,
}

impl Summary {
    pub fn of(records: &[PlanRecord]) -> Self {
        let ok: Vec<&PlanRecord> = records.iter().filter(|r| r.success).collect();
        let col = |f: fn(&PlanRecord) -> f64| MeanStd::of(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
        Summary {
            queries: records.len(),
            success_rate: if records.is_empty() {
                0.0
            } else {
                100.0 * ok.len() as f64 / records.len() as f64
            },
            time: col(|r| r.time),
            length: col(|r| r.length),
            margin: col(|r| r.margin),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub records: Vec<PlanRecord>,
    pub summary: Summary,
}

impl Evaluation {
    pub fn from_records(records: Vec<PlanRecord>) -> Self {
        let summary = Summary::of(&records);
        Evaluation { records, summary }
    }

    /// `time,length,margin,success` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,length,margin,success\n");
        for r in &self.records {
            writeln!(out, "{},{},{},{}", r.time, r.length, r.margin, u8::from(r.success)).expect("string write");
        }
        out
    }
}

fn record(p: &Path) -> PlanRecord {
    PlanRecord {
        time: p.plan_seconds,
        length: p.length,
        margin: p.safe_margin,
        success: p.success,
    }
}

/// Plans and validates every pair of `dataset`.
pub fn evaluate(net: &FieldNet, env: &Environment, dataset: &PairDataset, cfg: &PlanConfig) -> Result<Evaluation> {
    if dataset.env_id != env.id() {
        return Err(Error::Incompatible(format!(
            "dataset belongs to environment {}, not {}",
            dataset.env_id,
            env.id()
        )));
    }
    let mut records = Vec::with_capacity(dataset.len());
    for (qs, qg) in dataset.iter() {
        records.push(record(&plan(net, env, qs, qg, cfg)?));
    }
    Ok(Evaluation::from_records(records))
}

/// The grid baseline on the same queries: a march from each goal followed by
/// descent from the start, timed together.
pub fn evaluate_fmm(env: &Environment, dataset: &PairDataset, grid: &SpeedGrid, cfg: &PlanConfig) -> Result<Evaluation> {
    let step = 0.5 * grid.geometry.spacing.iter().copied().fold(f64::INFINITY, f64::min);
    let check = cfg.check_step_for(env);
    let mut records = Vec::with_capacity(dataset.len());
    for (qs, qg) in dataset.iter() {
        let clock = Instant::now();
        let tg = fmm_solve(grid, qg)?;
        let mut path = fmm_descend(&tg, grid, qs, step, step)?;
        path.plan_seconds = clock.elapsed().as_secs_f64();
        let (valid, margin) = validate_path(env, &path, check);
        path.safe_margin = margin;
        path.success &= valid;
        records.push(record(&path));
    }
    Ok(Evaluation::from_records(records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Config, EnvironmentSpec, Obstacle};
    use crate::fmm::rasterize;

    fn sphere_env() -> Environment {
        let mut spec = EnvironmentSpec::empty(2, vec![[0.0, 1.0], [0.0, 1.0]]);
        spec.obstacles.push(Obstacle::Sphere {
            center: vec![0.5, 0.5],
            radius: 0.2,
        });
        spec.fourier_h = 8;
        Environment::new(spec).unwrap()
    }

    /// A network whose generator output is zeroed, so `τ ≡ 1` and `T` is the
    /// Euclidean distance.
    fn unit_tau_net(env: &Environment) -> FieldNet {
        let mut net = FieldNet::for_environment(env, 8, 1, 0).unwrap();
        let n = net.param_count();
        for p in &mut net.params_mut()[n - 9..] {
            *p = 0.0;
        }
        net
    }

    #[test]
    fn path_length_is_exact_sum() {
        let p = Path::new(vec![vec![0.0, 0.0], vec![3.0, 4.0], vec![3.0, 5.0]], true);
        assert_eq!(p.length, 6.0);
        assert_eq!(p.to_csv(), "0,0\n3,4\n3,5\n");
    }

    #[test]
    fn validate_examples() {
        let env = sphere_env();
        let through = Path::new(vec![vec![0.1, 0.5], vec![0.9, 0.5]], true);
        let (ok, margin) = validate_path(&env, &through, 0.01);
        assert!(!ok);
        assert!((margin + 0.2).abs() < 0.01);
        let empty = Environment::new(EnvironmentSpec::empty(0, vec![[0.0, 1.0]; 2])).unwrap();
        assert_eq!(validate_path(&empty, &through, 0.01), (true, f64::INFINITY));
        let outside = Path::new(vec![vec![0.1, 0.5], vec![1.5, 0.5]], true);
        assert!(!validate_path(&empty, &outside, 0.01).0);
    }

    #[test]
    fn fmm_path_keeps_more_margin_than_the_straight_line() {
        let env = sphere_env();
        let sg = rasterize(&env, &[64, 64], 1.0).unwrap();
        let (a, b) = ([0.1, 0.5], [0.9, 0.5]);
        let tg = fmm_solve(&sg, &b).unwrap();
        let h = sg.geometry.spacing[0];
        let p = fmm_descend(&tg, &sg, &a, 0.5 * h, 0.5 * h).unwrap();
        let straight = Path::new(vec![a.to_vec(), b.to_vec()], true);
        let (ok, m) = validate_path(&env, &p, 0.01);
        let (_, ms) = validate_path(&env, &straight, 0.01);
        assert!(ok);
        assert!(m >= ms);
    }

    #[test]
    fn unit_field_plans_straight() {
        let env = Environment::new({
            let mut s = EnvironmentSpec::empty(4, vec![[0.0, 1.0]; 2]);
            s.fourier_h = 8;
            s
        })
        .unwrap();
        let net = unit_tau_net(&env);
        let cfg = PlanConfig::default();
        for (a, b) in [([0.1, 0.1], [0.9, 0.8]), ([0.5, 0.95], [0.45, 0.05])] {
            let p = plan(&net, &env, &a, &b, &cfg).unwrap();
            assert!(p.success);
            assert!(p.length <= 1.05 * distance(&a, &b));
            assert_eq!(p.waypoints.first().unwrap(), &a.to_vec());
            assert_eq!(p.waypoints.last().unwrap(), &b.to_vec());
        }
        let close = plan(&net, &env, &[0.5, 0.5], &[0.52, 0.5], &cfg).unwrap();
        assert!(close.success);
        assert_eq!(close.waypoints.len(), 2);
    }

    #[test]
    fn rejects_bad_endpoints() {
        let env = sphere_env();
        let net = unit_tau_net(&env);
        let cfg = PlanConfig::default();
        assert!(matches!(
            plan(&net, &env, &[0.5, 0.5], &[0.1, 0.1], &cfg),
            Err(Error::EndpointInCollision(_))
        ));
        assert!(matches!(
            plan(&net, &env, &[1.5, 0.5], &[0.1, 0.1], &cfg),
            Err(Error::OutOfBounds { .. })
        ));
        let other = Environment::new(EnvironmentSpec::empty(9, vec![[0.0, 1.0]; 2])).unwrap();
        assert!(plan(&net, &other, &[0.1, 0.1], &[0.2, 0.9], &cfg).is_err());
    }

    #[test]
    fn blocked_straight_line_fails_for_unit_field() {
        // T is the Euclidean distance, so marching goes straight into the sphere
        let env = sphere_env();
        let net = unit_tau_net(&env);
        let p = plan(&net, &env, &[0.1, 0.5], &[0.9, 0.5], &PlanConfig::default()).unwrap();
        assert!(!p.success);
        assert!(p.safe_margin < 0.0);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let env = Environment::new({
            let mut s = EnvironmentSpec::empty(4, vec![[0.0, 1.0]; 2]);
            s.fourier_h = 8;
            s
        })
        .unwrap();
        let net = unit_tau_net(&env);
        let data = env.sample_pairs(5, 3).unwrap();
        let cfg = PlanConfig::default();
        let a = evaluate(&net, &env, &data, &cfg).unwrap();
        let b = evaluate(&net, &env, &data, &cfg).unwrap();
        let strip = |e: &Evaluation| e.records.iter().map(|r| (r.length, r.margin, r.success)).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(a.summary.success_rate, 100.0);
        assert!(a.to_csv().starts_with("time,length,margin,success\n"));

        let close = PairDataset::from_pairs(
            4,
            2,
            &[(Config::new(vec![0.3, 0.3]), Config::new(vec![0.31, 0.3]))],
        )
        .unwrap();
        let e = evaluate(&net, &env, &close, &cfg).unwrap();
        assert_eq!(e.summary.success_rate, 100.0);
        assert!(e.summary.length.mean < 0.02);
    }

    #[test]
    fn summary_statistics() {
        let recs = vec![
            PlanRecord { time: 1.0, length: 2.0, margin: 0.5, success: true },
            PlanRecord { time: 3.0, length: 4.0, margin: 0.1, success: true },
            PlanRecord { time: 9.0, length: 9.0, margin: -1.0, success: false },
        ];
        let s = Summary::of(&recs);
        assert!((s.success_rate - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.time, MeanStd { mean: 2.0, std: 1.0 });
        assert_eq!(s.length.mean, 3.0);
    }
}
