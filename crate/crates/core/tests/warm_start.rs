//! Warm versus cold start on the smooth advection problem. This is a
//! reported diagnostic (target: at least 20% fewer epochs with warm start),
//! not a gate. Slow, so it is ignored by default:
//! `cargo test -p dgnn --test warm_start -- --ignored --nocapture`.

use dgnn::experiments::experiment_by_name;
use dgnn::network::{InitOptions, NetworkParams};
use dgnn::optimize::Trainer;
use dgnn::weakform::{apply_dirichlet_in_place, Discretization};

const STEPS: usize = 6;
const TOL: f64 = 1e-4;

#[test]
#[ignore]
fn warm_start_epoch_reduction() {
    let mut spec = experiment_by_name("advection-smooth").unwrap();
    spec.train.tol = TOL;
    let disc = Discretization::new(spec.mesh().unwrap(), spec.n_quad).unwrap();
    let prob = &spec.problem;
    let fresh = || {
        NetworkParams::init(
            spec.network,
            InitOptions {
                seed: 0,
                zero_output: true,
            },
        )
        .unwrap()
    };
    let mut u = disc.project(|x, s| (prob.u0)(x, s));
    apply_dirichlet_in_place(&mut u.data, &prob.bc, 0.0);
    let mut warm = Trainer::new(&disc, prob, fresh(), spec.train).unwrap();
    let (mut warm_epochs, mut cold_epochs) = (Vec::new(), Vec::new());
    for n in 0..STEPS {
        let t = n as f64 * spec.dt;
        let (next, rep) = warm.train_time_step(&u, t, spec.dt).unwrap();
        if n > 0 {
            // cold: a new network and optimiser on the same state
            let mut cold = Trainer::new(&disc, prob, fresh(), spec.train).unwrap();
            let (_, crep) = cold.train_time_step(&u, t, spec.dt).unwrap();
            warm_epochs.push(rep.epochs as f64);
            cold_epochs.push(crep.epochs as f64);
            println!("step {n}: warm {} epochs, cold {} epochs", rep.epochs, crep.epochs);
        }
        u = next;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (w, c) = (mean(&warm_epochs), mean(&cold_epochs));
    let reduction = 1.0 - w / c;
    let verdict = if reduction >= 0.2 { "meets" } else { "below" };
    println!(
        "mean epochs warm {w:.1}, cold {c:.1}, reduction {:.0}% ({verdict} the 20% target)",
        100.0 * reduction
    );
    assert!(w.is_finite() && c > 0.0);
}
