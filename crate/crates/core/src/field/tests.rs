use super::*;
use crate::env::EnvironmentSpec;
use proptest::prelude::*;

fn small_env(id: u32, dims: usize) -> Environment {
    let mut spec = EnvironmentSpec::empty(id, vec![[-1.0, 1.0]; dims]);
    spec.fourier_h = 6;
    Environment::new(spec).unwrap()
}

fn small_net(dims: usize, seed: u64) -> (FieldNet, Environment) {
    let env = small_env(3, dims);
    let net = FieldNet::for_environment(&env, 7, 2, seed).unwrap();
    (net, env)
}

fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

struct Ratio;

impl SpeedLoss for Ratio {
    fn eval<S: Scalar>(&self, sample: usize, s_start: S, s_goal: S) -> S {
        let target = 0.5 + 0.1 * sample as f64;
        s_start * (1.0 / target) + s_start.recip() * target + s_goal * (1.0 / target) + s_goal.recip() * target
            - 4.0
    }
}

#[test]
fn layout_covers_every_parameter() {
    let (net, _) = small_net(2, 1);
    let total: usize = net.layer_shapes().iter().map(|s| s.out * s.inp + s.out).sum();
    assert_eq!(total, net.param_count());
    let shapes = net.layer_shapes();
    assert_eq!(shapes[0], LayerShape { out: 7, inp: 12 });
    assert_eq!(shapes.last().unwrap(), &LayerShape { out: 1, inp: 7 });
}

#[test]
fn zero_generator_output_gives_unit_tau() {
    let (mut net, env) = small_net(2, 1);
    let s = net.layers.gen_out;
    for p in &mut net.params[s.w..s.b + 1] {
        *p = 0.0;
    }
    let t = net.field(env.id()).unwrap().tau(&[0.1, 0.2], &[-0.3, 0.4]).unwrap();
    assert!((t - 1.0).abs() < 1e-15);
}

#[test]
fn same_seed_same_weights() {
    let (a, _) = small_net(2, 9);
    let (b, _) = small_net(2, 9);
    let (c, _) = small_net(2, 10);
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
}

#[test]
fn matches_reference_program() {
    for dims in [2, 3] {
        let (net, env) = small_net(dims, 4);
        let (prog, _) = net.to_program(env.id()).unwrap();
        let field = net.field(env.id()).unwrap();
        let qs: Vec<f64> = (0..dims).map(|i| 0.3 - 0.2 * i as f64).collect();
        let qg: Vec<f64> = (0..dims).map(|i| -0.5 + 0.35 * i as f64).collect();
        let x = [qs.clone(), qg.clone()].concat();
        for block in [0..2 * dims, 0..dims, dims..2 * dims, 1..dims + 1] {
            let fast = field.value_grad_laplacian(&qs, &qg, block.clone()).unwrap();
            let slow = autodiff::value_grad_laplacian(&prog, &x, block).unwrap();
            assert!(rel(fast.value, slow.value, 1e-12) < 1e-12);
            for (a, b) in fast.grad.iter().zip(&slow.grad) {
                assert!((a - b).abs() < 1e-11, "{a} vs {b}");
            }
            for (a, b) in fast.hess_diag.unwrap().iter().zip(slow.hess_diag.as_ref().unwrap()) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn derivatives_match_finite_differences() {
    let (net, env) = small_net(2, 5);
    let field = net.field(env.id()).unwrap();
    let x = [0.21, -0.4, 0.55, 0.13];
    let f = |x: &[f64]| field.tau(&x[..2], &x[2..]).unwrap();
    let b = field.value_grad_laplacian(&x[..2], &x[2..], 0..4).unwrap();
    let hd = b.hess_diag.as_ref().unwrap();
    for i in 0..4 {
        let shifted = |h: f64| {
            let mut y = x;
            y[i] += h;
            f(&y)
        };
        let h = 1e-5;
        let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
        assert!(rel(b.grad[i], fd, 1e-3) < 1e-6, "grad {i}: {} vs {fd}", b.grad[i]);
        // Richardson-extrapolated second difference
        let second = |h: f64| (shifted(h) - 2.0 * f(&x) + shifted(-h)) / (h * h);
        let fd2 = (4.0 * second(1e-3) - second(2e-3)) / 3.0;
        assert!(rel(hd[i], fd2, 1e-2) < 1e-4, "hess {i}: {} vs {fd2}", hd[i]);
    }
}

#[test]
fn param_grad_matches_reference_route() {
    let (net, env) = small_net(2, 6);
    let (prog, map) = net.to_program(env.id()).unwrap();
    let samples = [[0.1, 0.2, -0.4, 0.5], [0.7, -0.6, 0.3, 0.3], [-0.2, -0.2, 0.25, -0.9]];
    let qs: Vec<f64> = samples.iter().flat_map(|s| s[..2].to_vec()).collect();
    let qg: Vec<f64> = samples.iter().flat_map(|s| s[2..].to_vec()).collect();
    let codes = vec![net.code(env.id()).unwrap(); 3];
    let eps = 0.05;
    let (loss, grads) = net.param_grad(&qs, &qg, &codes, eps, &Ratio).unwrap();

    let batch: Vec<Vec<f64>> = samples.iter().map(|s| s.to_vec()).collect();
    let index = |x: &[f64]| samples.iter().position(|s| s[..] == x[..]).unwrap();
    let (ref_loss, ref_grads) = autodiff::param_grad(&prog, &batch, 0..4, |jet, x| {
        let sp = viscous_pair(jet.value, &jet.d1, &jet.d2, &x[..2], &x[2..], eps);
        Ratio.eval(index(x), sp.s_start, sp.s_goal)
    })
    .unwrap();
    assert!(rel(loss, ref_loss, 1e-12) < 1e-11);
    let mut folded = vec![0.0; net.param_count()];
    for (g, m) in ref_grads.as_slice().iter().zip(&map) {
        if let Some(i) = m {
            folded[*i] += g;
        }
    }
    for (i, (a, b)) in grads.as_slice().iter().zip(&folded).enumerate() {
        assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "param {i}: {a} vs {b}");
    }
    let v = net.loss_value(&qs, &qg, &codes, eps, &Ratio).unwrap();
    assert!(rel(v, loss, 1e-12) < 1e-12);
}

#[test]
fn param_grad_matches_finite_differences() {
    let (mut net, env) = small_net(2, 8);
    let qs = [0.1, 0.2, 0.6, -0.5];
    let qg = [-0.4, 0.5, 0.2, 0.1];
    let code = net.code(env.id()).unwrap().clone();
    let codes = vec![&code; 2];
    let (_, grads) = net.param_grad(&qs, &qg, &codes, 0.02, &Ratio).unwrap();
    for i in (0..net.param_count()).step_by(17) {
        let p0 = net.params[i];
        let h = 1e-6;
        net.params[i] = p0 + h;
        let lp = net.loss_value(&qs, &qg, &codes, 0.02, &Ratio).unwrap();
        net.params[i] = p0 - h;
        let lm = net.loss_value(&qs, &qg, &codes, 0.02, &Ratio).unwrap();
        net.params[i] = p0;
        let fd = (lp - lm) / (2.0 * h);
        assert!((grads.as_slice()[i] - fd).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {} vs {fd}", grads.as_slice()[i]);
    }
}

#[test]
fn symmetric_in_endpoints() {
    let (net, env) = small_net(3, 2);
    let field = net.field(env.id()).unwrap();
    let a = [0.3, -0.2, 0.9];
    let b = [-0.7, 0.4, 0.1];
    assert_eq!(field.tau(&a, &b).unwrap().to_bits(), field.tau(&b, &a).unwrap().to_bits());
    let ta = field.arrival_time(&a, &b).unwrap();
    let tb = field.arrival_time(&b, &a).unwrap();
    assert!((ta - tb).abs() <= 1e-12 * ta);
    let sab = field.speed_eq3(&a, &b).unwrap();
    let sba = field.speed_eq3(&b, &a).unwrap();
    assert!((sab.s_start - sba.s_goal).abs() < 1e-12);
    assert!((sab.s_goal - sba.s_start).abs() < 1e-12);
}

#[test]
fn coincident_and_bad_inputs() {
    let (net, env) = small_net(2, 2);
    let field = net.field(env.id()).unwrap();
    assert!(matches!(field.arrival_time(&[0.1, 0.1], &[0.1, 0.1]), Err(Error::Coincident)));
    assert!(matches!(field.speed_eq3(&[0.1, 0.1], &[0.1, 0.1]), Err(Error::Coincident)));
    assert!(matches!(field.tau(&[0.1], &[0.1, 0.1]), Err(Error::DimensionMismatch { .. })));
    assert!(field.tau(&[f64::NAN, 0.0], &[0.1, 0.1]).unwrap_err().is_numerical());
    assert!(matches!(net.field(99), Err(Error::Incompatible(_))));
}

#[test]
fn batch_agrees_with_single_queries() {
    let (net, env) = small_net(2, 3);
    let field = net.field(env.id()).unwrap();
    let qs: Vec<f64> = (0..600).map(|i| ((i as f64) * 0.37).sin()).collect();
    let qg: Vec<f64> = (0..600).map(|i| ((i as f64) * 0.91).cos()).collect();
    let taus = field.tau_batch(&qs, &qg).unwrap();
    assert_eq!(taus.len(), 300);
    for i in [0, 17, 255, 256, 299] {
        let t = field.tau(&qs[2 * i..2 * i + 2], &qg[2 * i..2 * i + 2]).unwrap();
        assert!((taus[i] - t).abs() <= 1e-14 * t);
    }
}

#[test]
fn eikonal_speed_from_time_gradient() {
    let (net, env) = small_net(2, 7);
    let field = net.field(env.id()).unwrap();
    let (qs, qg) = ([0.2, -0.1], [-0.5, 0.6]);
    let s = field.speed_eq3(&qs, &qg).unwrap();
    let tg = field.time_gradient(&qs, &qg, Endpoint::Goal).unwrap();
    let norm = tg.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    assert!(rel(1.0 / norm, s.s_goal, 1e-12) < 1e-10);
    assert!(rel(tg.speed, s.s_goal, 1e-12) < 1e-12);
    let ts = field.time_gradient(&qs, &qg, Endpoint::Start).unwrap();
    assert!(rel(ts.speed, s.s_start, 1e-12) < 1e-12);
    // a step against the gradient shortens the arrival time
    let h = 1e-4;
    let moved: Vec<f64> = qg.iter().zip(&tg.grad).map(|(q, g)| q - h * g / norm).collect();
    let t1 = field.arrival_time(&qs, &moved).unwrap();
    assert!(t1 < tg.time);
}

#[test]
fn eq7_without_viscosity_is_eq3() {
    let (net, env) = small_net(2, 7);
    let field = net.field(env.id()).unwrap();
    let a = field.speed_eq3(&[0.2, 0.3], &[-0.1, -0.7]).unwrap();
    let b = field.speed_eq7(&[0.2, 0.3], &[-0.1, -0.7], 0.0).unwrap();
    assert!(rel(a.s_start, b.s_start, 1e-12) < 1e-12);
    assert!(rel(a.s_goal, b.s_goal, 1e-12) < 1e-12);
    assert!(field.speed_eq7(&[0.2, 0.3], &[-0.1, -0.7], -1.0).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let (mut net, env) = small_net(2, 11);
    net.register(&small_env(8, 2)).unwrap();
    net.trained_alpha = 0.75;
    let mut buf = Vec::new();
    net.write_to(&mut buf).unwrap();
    assert_eq!(&buf[..4], b"EPNN");
    let back = FieldNet::read_from(&mut buf.as_slice()).unwrap();
    assert_eq!(back.params(), net.params());
    assert_eq!(back.config(), net.config());
    assert_eq!(back.env_ids(), vec![3, 8]);
    assert_eq!(back.trained_alpha, 0.75);
    let q = ([0.1, 0.4], [-0.3, 0.2]);
    assert_eq!(
        back.field(env.id()).unwrap().tau(&q.0, &q.1).unwrap().to_bits(),
        net.field(env.id()).unwrap().tau(&q.0, &q.1).unwrap().to_bits()
    );

    buf[0] = b'X';
    assert!(matches!(FieldNet::read_from(&mut buf.as_slice()), Err(Error::Format(_))));
}

#[test]
fn checkpoint_rejects_mismatches() {
    let (net, _) = small_net(2, 11);
    let mut buf = Vec::new();
    net.write_to(&mut buf).unwrap();
    let mut truncated = &buf[..buf.len() - 9];
    assert!(FieldNet::read_from(&mut truncated).is_err());
    // claim a different parameter count
    let mut bad = buf.clone();
    let n_layers = u32::from_le_bytes(bad[36..40].try_into().unwrap()) as usize;
    let at = 40 + 8 * n_layers;
    bad[at] ^= 1;
    assert!(matches!(FieldNet::read_from(&mut bad.as_slice()), Err(Error::Incompatible(_))));
}

#[test]
fn register_checks_codes() {
    let (mut net, _) = small_net(2, 1);
    assert!(net.register(&small_env(3, 2)).is_ok());
    let mut spec = EnvironmentSpec::empty(3, vec![[-1.0, 1.0]; 2]);
    spec.fourier_h = 6;
    spec.fourier_seed = 77;
    assert!(matches!(net.register(&Environment::new(spec).unwrap()), Err(Error::Incompatible(_))));
    assert!(matches!(net.register(&small_env(4, 3)), Err(Error::Incompatible(_))));
    assert!(net.check_compatible(&small_env(3, 2)).is_ok());
    assert!(net.check_compatible(&small_env(5, 2)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn tau_positive_and_symmetric(a in prop::array::uniform2(-1.0f64..1.0), b in prop::array::uniform2(-1.0f64..1.0), seed in 0u64..50) {
        let (net, env) = small_net(2, seed);
        let field = net.field(env.id()).unwrap();
        let t1 = field.tau(&a, &b).unwrap();
        let t2 = field.tau(&b, &a).unwrap();
        prop_assert!(t1 > 0.0 && t1.is_finite());
        prop_assert_eq!(t1.to_bits(), t2.to_bits());
    }
}
