mod common;

use common::rng;
use leibenson_pinn::collocation::{assemble, CollocationConfig, CollocationSet};
use leibenson_pinn::field::ExactField;
use leibenson_pinn::mlp::NetworkConfig;
use leibenson_pinn::problem::{make_problem, ProblemId, ProblemParams, ProblemSpec};
use leibenson_pinn::trainer::{
    adam_step, compute_loss, compute_loss_field, train, train_with, AdamConfig, AdamState,
    LossWeights, Objective, TrainConfig,
};
use leibenson_pinn::Error;
use rand::Rng;

fn p1() -> ProblemSpec {
    make_problem(ProblemId::P1, &ProblemParams::default()).unwrap()
}

fn small(spec: &ProblemSpec) -> CollocationSet {
    let cfg = CollocationConfig {
        spatial: 49,
        time: 3,
        ..Default::default()
    };
    assemble(spec, &cfg, 0).unwrap()
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let spec = p1();
    let set = small(&spec);
    let ncfg = NetworkConfig::default();
    let cfg = TrainConfig {
        epochs: 0,
        seed: 4,
        ..Default::default()
    };
    let report = train(&spec, &set, &ncfg, &cfg).unwrap();
    let net = ncfg.build().unwrap();
    let theta = net.init_params(4);
    assert_eq!(report.epochs_run, 0);
    assert!(report.history.is_empty());
    assert_eq!(report.params, theta);
    let l = compute_loss(&theta, &net, &spec, &set, LossWeights::default()).unwrap();
    assert_eq!(report.final_loss, l);
}

#[test]
fn short_run_lowers_the_loss() {
    let spec = p1();
    let set = small(&spec);
    let cfg = TrainConfig {
        epochs: 200,
        ..Default::default()
    };
    let report = train(&spec, &set, &NetworkConfig::default(), &cfg).unwrap();
    assert_eq!(report.history.len(), 200);
    assert!(report.final_loss.total < 0.1 * report.initial_loss().total);
    assert!(report.history.iter().all(|l| l.total.is_finite()));
}

#[test]
fn same_seed_same_history_bits() {
    let spec = make_problem(
        ProblemId::P2,
        &ProblemParams {
            alpha: Some(0.5),
            ..Default::default()
        },
    )
    .unwrap();
    let set = small(&spec);
    let cfg = TrainConfig {
        epochs: 30,
        seed: 11,
        ..Default::default()
    };
    let a = train(&spec, &set, &NetworkConfig::default(), &cfg).unwrap();
    let threaded = TrainConfig {
        threads: 3,
        ..cfg.clone()
    };
    let b = train(&spec, &set, &NetworkConfig::default(), &threaded).unwrap();
    assert_eq!(a.history.len(), b.history.len());
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!(x.total.to_bits(), y.total.to_bits());
    }
    assert_eq!(a.params, b.params);
    assert_eq!(a.config_hash, b.config_hash);

    let mut csv_a = Vec::new();
    let mut csv_b = Vec::new();
    a.write_history_csv(&mut csv_a).unwrap();
    b.write_history_csv(&mut csv_b).unwrap();
    assert_eq!(csv_a, csv_b);
    assert!(String::from_utf8(csv_a).unwrap().starts_with("epoch,physics,boundary,total\n"));
}

#[test]
fn different_seed_different_run() {
    let spec = p1();
    let set = small(&spec);
    let run = |seed| {
        let cfg = TrainConfig {
            epochs: 3,
            seed,
            ..Default::default()
        };
        train(&spec, &set, &NetworkConfig::default(), &cfg).unwrap()
    };
    let (a, b) = (run(1), run(2));
    assert_ne!(a.params, b.params);
    assert_ne!(a.config_hash, b.config_hash);
}

#[test]
fn divergence_guard_stops_the_run() {
    let spec = p1();
    let set = small(&spec);
    let cfg = TrainConfig {
        epochs: 500,
        lr: 50.0,
        divergence_factor: 2.0,
        ..Default::default()
    };
    match train(&spec, &set, &NetworkConfig::default(), &cfg) {
        Err(Error::Diverged(d)) => {
            assert!(d.epoch > 0 && d.epoch < 500);
            assert!(d.total > 2.0 * d.initial || !d.total.is_finite());
            assert_eq!(d.report.history.len(), d.epoch);
            assert_eq!(d.report.history[0].total, d.initial);
            assert!(d.to_string().contains("diverged"));
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn invalid_settings_are_rejected() {
    let spec = p1();
    let set = small(&spec);
    for (cfg, field) in [
        (
            TrainConfig {
                lr: 0.0,
                ..Default::default()
            },
            "train.lr",
        ),
        (
            TrainConfig {
                weights: LossWeights {
                    physics: -1.0,
                    boundary: 1.0,
                },
                ..Default::default()
            },
            "train.weights.physics",
        ),
        (
            TrainConfig {
                divergence_factor: 1.0,
                ..Default::default()
            },
            "train.divergence_factor",
        ),
    ] {
        let err = train(&spec, &set, &NetworkConfig::default(), &cfg).unwrap_err();
        assert!(matches!(&err, Error::Config { field: f, .. } if f == field), "{err}");
    }
}

#[test]
fn exact_solution_has_zero_loss() {
    for (id, prm) in [
        (ProblemId::P1, ProblemParams::default()),
        (ProblemId::P3, ProblemParams::default()),
        (ProblemId::P4, ProblemParams::default()),
        (
            ProblemId::P2,
            ProblemParams {
                alpha: Some(0.5),
                ..Default::default()
            },
        ),
        (
            ProblemId::P5,
            ProblemParams {
                alpha: Some(1.3),
                t_final: Some(2.0),
                ..Default::default()
            },
        ),
    ] {
        let spec = make_problem(id, &prm).unwrap();
        let set = assemble(&spec, &CollocationConfig::default(), 0).unwrap();
        let l = compute_loss_field(&ExactField(&spec), &spec, &set, LossWeights::default()).unwrap();
        assert!(l.physics <= 1e-18, "{id}: physics {:e}", l.physics);
        assert!(l.boundary <= 1e-18, "{id}: boundary {:e}", l.boundary);
    }
}

#[test]
fn field_route_agrees_with_network_route() {
    let spec = p1();
    let set = small(&spec);
    let net = NetworkConfig::default().build().unwrap();
    let theta = net.init_params(6);
    let w = LossWeights {
        physics: 0.3,
        boundary: 2.0,
    };
    let a = compute_loss(&theta, &net, &spec, &set, w).unwrap();
    let field = leibenson_pinn::field::NetworkField {
        net: &net,
        params: &theta,
    };
    let b = compute_loss_field(&field, &spec, &set, w).unwrap();
    assert!((a.physics - b.physics).abs() <= 1e-12 * a.physics);
    assert!((a.boundary - b.boundary).abs() <= 1e-12 * a.boundary);
}

#[test]
fn loss_is_linear_in_the_weights() {
    let spec = p1();
    let set = small(&spec);
    let net = NetworkConfig::default().build().unwrap();
    let theta = net.init_params(2);
    let obj = Objective::new(&spec, &set, &net).unwrap();
    let mut r = rng(30);
    let unit = obj.loss(&theta, LossWeights::default()).unwrap();
    let mut g_f = vec![0.0; theta.len()];
    let mut g_b = vec![0.0; theta.len()];
    obj.loss_and_grad(&theta, LossWeights { physics: 1.0, boundary: 0.0 }, &mut g_f)
        .unwrap();
    obj.loss_and_grad(&theta, LossWeights { physics: 0.0, boundary: 1.0 }, &mut g_b)
        .unwrap();
    for _ in 0..10 {
        let w = LossWeights {
            physics: r.gen_range(0.0..5.0),
            boundary: r.gen_range(0.0..5.0),
        };
        let l = obj.loss(&theta, w).unwrap();
        assert_eq!(l.physics, unit.physics);
        assert_eq!(l.boundary, unit.boundary);
        let expected = w.physics * unit.physics + w.boundary * unit.boundary;
        assert!((l.total - expected).abs() <= 1e-14 * expected);

        let mut g = vec![0.0; theta.len()];
        obj.loss_and_grad(&theta, w, &mut g).unwrap();
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..g.len() {
            let e = w.physics * g_f[i] + w.boundary * g_b[i];
            assert!((g[i] - e).abs() <= 1e-12 * scale);
        }
    }
}

#[test]
fn scaling_both_weights_keeps_the_minimizer() {
    // Adam normalizes the step, so a common positive factor on the weights
    // leaves the trajectory unchanged up to the eps term
    let spec = p1();
    let set = small(&spec);
    let run = |c: f64| {
        let cfg = TrainConfig {
            epochs: 20,
            weights: LossWeights {
                physics: c,
                boundary: c,
            },
            ..Default::default()
        };
        train(&spec, &set, &NetworkConfig::default(), &cfg).unwrap()
    };
    let a = run(1.0);
    let b = run(8.0);
    for (x, y) in a.params.as_slice().iter().zip(b.params.as_slice()) {
        assert!((x - y).abs() < 1e-6, "{x} vs {y}");
    }
    for (x, y) in a.history.iter().zip(&b.history) {
        assert!((8.0 * x.total - y.total).abs() <= 1e-6 * y.total);
    }
}

fn textbook_adam(
    theta: &mut [f64],
    grads: &[Vec<f64>],
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
) {
    let n = theta.len();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let (mut p1, mut p2) = (1.0, 1.0);
    for g in grads {
        p1 *= b1;
        p2 *= b2;
        for i in 0..n {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / (1.0 - p1);
            let vh = v[i] / (1.0 - p2);
            theta[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

#[test]
fn adam_matches_textbook_update() {
    let mut r = rng(31);
    for _ in 0..1000 {
        let n = r.gen_range(1..6);
        let steps = r.gen_range(1..20);
        let cfg = AdamConfig {
            lr: r.gen_range(1e-4..1e-1),
            ..AdamConfig::default()
        };
        let theta0: Vec<f64> = (0..n).map(|_| r.gen_range(-2.0..2.0)).collect();
        let grads: Vec<Vec<f64>> = (0..steps)
            .map(|_| (0..n).map(|_| r.gen_range(-10.0..10.0)).collect())
            .collect();
        let mut ours = theta0.clone();
        let mut state = AdamState::new(n, cfg);
        for g in &grads {
            state.update(&mut ours, g).unwrap();
        }
        let mut reference = theta0;
        textbook_adam(&mut reference, &grads, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
        for (a, b) in ours.iter().zip(&reference) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
        assert_eq!(state.step, steps as u64);
    }
}

#[test]
fn functional_adam_step_matches_in_place_update() {
    let net = NetworkConfig::default().build().unwrap();
    let theta = net.init_params(0);
    let grad = net.init_params(1);
    let state = AdamState::new(theta.len(), AdamConfig::default());
    let (s1, t1) = adam_step(&state, &theta, &grad).unwrap();
    let mut s2 = state.clone();
    let mut t2 = theta.clone();
    s2.update(t2.as_mut_slice(), grad.as_slice()).unwrap();
    assert_eq!(s1, s2);
    assert_eq!(t1, t2);
    assert_eq!(state.step, 0);
}

#[test]
fn adam_rejects_bad_gradients() {
    let mut s = AdamState::new(3, AdamConfig::default());
    let mut th = [0.0; 3];
    assert!(matches!(
        s.update(&mut th, &[0.0, f64::NAN, 0.0]),
        Err(Error::NonFiniteGradient { index: 1 })
    ));
    assert!(matches!(s.update(&mut th, &[0.0; 2]), Err(Error::Structural(_))));
    assert_eq!(th, [0.0; 3]);
}

#[test]
fn hook_sees_every_epoch_and_checkpoints() {
    let spec = p1();
    let set = small(&spec);
    let cfg = TrainConfig {
        epochs: 7,
        checkpoint_every: 3,
        ..Default::default()
    };
    let mut seen = Vec::new();
    let mut last = None;
    let report = train_with(&spec, &set, &NetworkConfig::default(), &cfg, |p| {
        seen.push((p.epoch, p.checkpoint));
        last = Some(p.params.clone());
        Ok(())
    })
    .unwrap();
    let flagged: Vec<usize> = seen.iter().filter(|s| s.1).map(|s| s.0).collect();
    assert_eq!(seen.len(), 7);
    assert_eq!(flagged, vec![2, 5, 6]);
    assert_eq!(last.unwrap(), report.params);
}

#[test]
fn hook_error_stops_training() {
    let spec = p1();
    let set = small(&spec);
    let cfg = TrainConfig {
        epochs: 10,
        ..Default::default()
    };
    let mut calls = 0;
    let err = train_with(&spec, &set, &NetworkConfig::default(), &cfg, |p| {
        calls += 1;
        if p.epoch == 3 {
            Err(Error::Unsupported("stop".into()))
        } else {
            Ok(())
        }
    })
    .unwrap_err();
    assert_eq!(calls, 4);
    assert!(matches!(err, Error::Unsupported(_)));
}
