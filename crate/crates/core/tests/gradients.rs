//! Central-difference checks of every tape operation, the full network and
//! the two-stage training loss.

use dgnn::experiments::{experiment_by_name, EXPERIMENT_NAMES};
use dgnn::field::ElementField;
use dgnn::mesh::Mesh1D;
use dgnn::network::{rdn_forward_on_tape, InitOptions, NetworkParams, ParamNodes, RDNConfig, Tape};
use dgnn::optimize::record_step_loss;
use dgnn::weakform::Discretization;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Checks `d f / d x` for a function built on a fresh tape, where `x` is
/// registered as a differentiable input.
fn check_input_grad(
    x0: Vec<f64>,
    shape: Vec<usize>,
    build: impl Fn(&mut Tape, dgnn::network::NodeId) -> dgnn::network::NodeId,
) -> f64 {
    let eval = |x: &[f64]| {
        let mut t = Tape::new();
        let xi = t.input(shape.clone(), x.to_vec(), true).unwrap();
        let out = build(&mut t, xi);
        t.scalar(out)
    };
    let mut t = Tape::new();
    let xi = t.input(shape.clone(), x0.clone(), true).unwrap();
    let out = build(&mut t, xi);
    let g = t.backward(out).unwrap();
    let ad = g.get(xi).unwrap().to_vec();
    let mut worst = 0.0f64;
    for i in 0..x0.len() {
        let mut p = x0.clone();
        let mut m = x0.clone();
        p[i] += STEP;
        m[i] -= STEP;
        let fd = (eval(&p) - eval(&m)) / (2.0 * STEP);
        worst = worst.max(rel_err(ad[i], fd));
    }
    worst
}

fn weighted_sum(t: &mut Tape, y: dgnn::network::NodeId, seed: u64) -> dgnn::network::NodeId {
    let n = t.value(y).len();
    let shape = t.shape(y).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = t.input(shape, random_vec(&mut rng, n), false).unwrap();
    let p = t.mul(y, c).unwrap();
    t.sum(p)
}

#[test]
fn conv_input_weight_and_bias_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in [1, 3, 5] {
        let (c_in, c_out, n) = (3, 2, 7);
        let w = random_vec(&mut rng, c_out * c_in * k);
        let b = random_vec(&mut rng, c_out);
        let x = random_vec(&mut rng, c_in * n);
        // input
        let (wc, bc) = (w.clone(), b.clone());
        let e = check_input_grad(x.clone(), vec![c_in, n], move |t, xi| {
            let wi = t.input(vec![c_out, c_in, k], wc.clone(), false).unwrap();
            let bi = t.input(vec![c_out], bc.clone(), false).unwrap();
            let y = t.conv1d(xi, wi, bi).unwrap();
            weighted_sum(t, y, 7)
        });
        assert!(e < 1e-7, "conv input k={k}: {e}");
        // weight
        let (xc, bc) = (x.clone(), b.clone());
        let e = check_input_grad(w.clone(), vec![c_out, c_in, k], move |t, wi| {
            let xi = t.input(vec![c_in, n], xc.clone(), false).unwrap();
            let bi = t.input(vec![c_out], bc.clone(), false).unwrap();
            let y = t.conv1d(xi, wi, bi).unwrap();
            weighted_sum(t, y, 8)
        });
        assert!(e < 1e-7, "conv weight k={k}: {e}");
        // bias
        let (xc, wc) = (x.clone(), w.clone());
        let e = check_input_grad(b.clone(), vec![c_out], move |t, bi| {
            let xi = t.input(vec![c_in, n], xc.clone(), false).unwrap();
            let wi = t.input(vec![c_out, c_in, k], wc.clone(), false).unwrap();
            let y = t.conv1d(xi, wi, bi).unwrap();
            weighted_sum(t, y, 9)
        });
        assert!(e < 1e-7, "conv bias k={k}: {e}");
    }
}

#[test]
fn elementwise_op_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // keep entries away from the ReLU kink
    let x: Vec<f64> = random_vec(&mut rng, 12)
        .into_iter()
        .map(|v| if v.abs() < 0.05 { v + 0.1 } else { v })
        .collect();
    let e = check_input_grad(x.clone(), vec![2, 6], |t, xi| {
        let r = t.relu(xi);
        weighted_sum(t, r, 3)
    });
    assert!(e < 1e-7, "relu: {e}");
    let e = check_input_grad(x.clone(), vec![2, 6], |t, xi| {
        let r = t.relu(xi);
        let c = t.concat(&[xi, r, xi]).unwrap();
        weighted_sum(t, c, 4)
    });
    assert!(e < 1e-7, "concat: {e}");
    let e = check_input_grad(x.clone(), vec![2, 6], |t, xi| {
        let s = t.scale(xi, -1.7);
        let a = t.add(xi, s).unwrap();
        let m = t.mul(a, xi).unwrap();
        let z = t.axpy(m, xi, 0.3).unwrap();
        weighted_sum(t, z, 5)
    });
    assert!(e < 1e-7, "add/mul/axpy: {e}");
    let e = check_input_grad(x.clone(), vec![2, 6], |t, xi| {
        let o = t.overwrite(xi, &[0, 11], &[3.0, -2.0]);
        let w = weighted_sum(t, o, 6);
        let m = t.mean_abs(o, Some(&[true; 12])).unwrap();
        t.add(w, m).unwrap()
    });
    assert!(e < 1e-7, "overwrite/mean_abs: {e}");
}

fn toy_config() -> RDNConfig {
    RDNConfig {
        blocks: 1,
        layers: 2,
        growth: 4,
        features: 4,
        kernel: 3,
        input_affine: None,
    }
}

/// Max relative error over every parameter of `loss(params)`.
fn param_grad_error<'a>(
    params: &NetworkParams,
    loss: impl Fn(&mut Tape<'a>, &ParamNodes) -> dgnn::network::NodeId,
) -> f64 {
    let mut t = Tape::new();
    let p = ParamNodes::load(&mut t, params);
    let l = loss(&mut t, &p);
    let mut acc = params.clone();
    acc.zero_grad();
    t.backward(l).unwrap().accumulate_into(&mut acc.tensors);
    let ad = acc.flat_grad();
    let flat = params.flat();
    let eval = |f: &[f64]| {
        let mut q = params.clone();
        q.set_flat(f).unwrap();
        let mut t = Tape::new();
        let p = ParamNodes::load(&mut t, &q);
        let l = loss(&mut t, &p);
        t.scalar(l)
    };
    let mut worst = 0.0f64;
    for i in 0..flat.len() {
        let mut a = flat.clone();
        let mut b = flat.clone();
        a[i] += STEP;
        b[i] -= STEP;
        let fd = (eval(&a) - eval(&b)) / (2.0 * STEP);
        let mut e = rel_err(ad[i], fd);
        if e > 1e-6 {
            // The loss is piecewise smooth (ReLU, |.|). Retry with a smaller
            // step in case the wide stencil straddled a kink.
            let h = STEP * 1e-2;
            let mut a = flat.clone();
            let mut b = flat.clone();
            a[i] += h;
            b[i] -= h;
            let fd2 = (eval(&a) - eval(&b)) / (2.0 * h);
            e = e.min(rel_err(ad[i], fd2));
        }
        worst = worst.max(e);
    }
    worst
}

#[test]
fn full_network_parameter_gradients() {
    let params = NetworkParams::init(
        toy_config(),
        InitOptions {
            seed: 17,
            zero_output: false,
        },
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let u = random_vec(&mut rng, 8);
    let cfg = params.config;
    let e = param_grad_error(&params, |t, p| {
        let x = t.input(vec![1, 8], u.clone(), false).unwrap();
        let y = rdn_forward_on_tape(t, p, &cfg, x).unwrap();
        weighted_sum(t, y, 12)
    });
    println!("toy RDN max relative gradient error {e:.3e}");
    assert!(e < 1e-5, "{e}");
}

#[test]
fn network_input_jacobian_on_three_elements() {
    let params = NetworkParams::init(
        toy_config(),
        InitOptions {
            seed: 5,
            zero_output: false,
        },
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let u = random_vec(&mut rng, 6);
    let cfg = params.config;
    let e = check_input_grad(u, vec![1, 6], |t, x| {
        let p = ParamNodes::load(t, &params);
        let y = rdn_forward_on_tape(t, &p, &cfg, x).unwrap();
        weighted_sum(t, y, 13)
    });
    assert!(e < 1e-5, "{e}");
}

/// The two-stage loss flows through the network, the stage-1 state and the
/// weak-form residual of every benchmark problem.
#[test]
fn step_loss_parameter_gradients() {
    for (i, name) in EXPERIMENT_NAMES.iter().enumerate() {
        let spec = experiment_by_name(name).unwrap();
        let mesh = Mesh1D::new(spec.problem.x_min, spec.problem.x_max, 4, 2).unwrap();
        let disc = Discretization::new(mesh, 2).unwrap();
        let u0 = disc.project(|x, s| (spec.problem.u0)(x, s));
        let mut rng = ChaCha8Rng::seed_from_u64(20 + i as u64);
        let noise = random_vec(&mut rng, u0.len());
        let u = ElementField::from_vec(4, 2, u0.data.iter().zip(&noise).map(|(a, b)| a + 0.1 * b).collect()).unwrap();
        let params = NetworkParams::init(
            toy_config(),
            InitOptions {
                seed: 30 + i as u64,
                zero_output: false,
            },
        )
        .unwrap();
        let cfg = params.config;
        let prob = &spec.problem;
        let disc = &disc;
        let e = param_grad_error(&params, |t, p| {
            record_step_loss(t, p, &cfg, disc, prob, &u, 0.1, 0.05, (1.0, 1.0))
                .unwrap()
                .loss
        });
        println!("{name}: step-loss max relative gradient error {e:.3e}");
        assert!(e < 1e-5, "{name}: {e}");
    }
}
