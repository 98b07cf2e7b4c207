mod common;

use std::collections::HashSet;

use common::{rng, sample_domain};
use leibenson_pinn::collocation::{
    assemble, spatial_points, time_grid, CollocationConfig, CollocationSet,
};
use leibenson_pinn::problem::{make_problem, Domain, ProblemId, ProblemParams, ProblemSpec, Role};
use proptest::prelude::*;

fn spec(id: ProblemId) -> ProblemSpec {
    let prm = ProblemParams {
        alpha: id.needs_alpha().then_some(0.5),
        eps: (id == ProblemId::P1Regularized).then_some(1e-3),
        ..Default::default()
    };
    make_problem(id, &prm).unwrap()
}

fn key(x: &[f64], t: f64) -> Vec<u64> {
    x.iter().chain([t].iter()).map(|v| v.to_bits()).collect()
}

#[test]
fn square_counts() {
    let s = spec(ProblemId::P3);
    let set = assemble(&s, &CollocationConfig::default(), 0).unwrap();
    assert_eq!(set.provenance.spatial_boundary, 80);
    assert_eq!(set.interior.len(), (441 - 80) * 20);
    assert_eq!(set.boundary.len(), 80 * 20);
    assert_eq!(set.initial.len(), 441);
    set.validate(&s).unwrap();
}

#[test]
fn every_problem_validates() {
    for id in ProblemId::ALL {
        let s = spec(id);
        let set = assemble(&s, &CollocationConfig::default(), 3).unwrap();
        set.validate(&s).unwrap();
        let n_space = set.provenance.spatial;
        let n_b = set.provenance.spatial_boundary;
        assert!(n_b > 0 && n_b < n_space, "{id}");
        assert_eq!(set.interior.len(), (n_space - n_b) * 20, "{id}");
        assert_eq!(set.boundary.len(), n_b * 20, "{id}");
        assert_eq!(set.initial.len(), n_space, "{id}");
        assert_eq!(set.provenance.time_levels, 21);
        let dim = s.dim();
        assert!(set.points().all(|p| p.x.len() == dim));
    }
}

#[test]
fn spatial_count_is_near_target() {
    for domain in [Domain::Disk { radius: 1.0 }, Domain::Ball { radius: 0.57 }] {
        for target in [100, 441, 1000] {
            let sp = spatial_points(&domain, target, 0, 0.0).unwrap();
            let n = sp.len() as f64;
            assert!((n - target as f64).abs() <= 0.1 * target as f64, "{domain:?}: {n} for {target}");
        }
    }
}

#[test]
fn spatial_points_cover_the_domain() {
    let mut r = rng(20);
    for domain in [
        Domain::Disk { radius: 1.0 },
        Domain::Square { half_side: 1.0 },
        Domain::Ball { radius: 0.57 },
    ] {
        let sp = spatial_points(&domain, 441, 1, 0.0).unwrap();
        let pts: Vec<&Vec<f64>> = sp.all().collect();
        for _ in 0..1000 {
            let y = sample_domain(&domain, &mut r);
            let d = pts
                .iter()
                .map(|p| p.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(d <= 2.0 * sp.spacing, "{domain:?}: {y:?} is {d} from the set");
        }
    }
}

#[test]
fn boundary_points_lie_on_the_boundary() {
    for domain in [
        Domain::Disk { radius: 1.0 },
        Domain::Square { half_side: 1.0 },
        Domain::Ball { radius: 0.57 },
    ] {
        let sp = spatial_points(&domain, 441, 2, 0.0).unwrap();
        for x in &sp.boundary {
            assert!(domain.on_boundary(x, 1e-12), "{x:?}");
        }
        for x in &sp.interior {
            assert!(domain.contains(x), "{x:?}");
        }
    }
}

#[test]
fn same_seed_same_set() {
    for id in ProblemId::ALL {
        let s = spec(id);
        let a = assemble(&s, &CollocationConfig::default(), 17).unwrap();
        let b = assemble(&s, &CollocationConfig::default(), 17).unwrap();
        assert_eq!(a, b);
        let mut wa = Vec::new();
        let mut wb = Vec::new();
        a.write_csv(&mut wa).unwrap();
        b.write_csv(&mut wb).unwrap();
        assert_eq!(wa, wb);
    }
}

#[test]
fn seed_rotates_curved_domains_only() {
    let disk = spec(ProblemId::P1);
    let a = assemble(&disk, &CollocationConfig::default(), 1).unwrap();
    let b = assemble(&disk, &CollocationConfig::default(), 2).unwrap();
    assert_ne!(a.interior, b.interior);
    let square = spec(ProblemId::P3);
    let a = assemble(&square, &CollocationConfig::default(), 1).unwrap();
    let b = assemble(&square, &CollocationConfig::default(), 2).unwrap();
    assert_eq!(a.interior, b.interior);
}

fn assert_roles_disjoint(set: &CollocationSet) {
    let mut seen = HashSet::new();
    for p in set.points() {
        assert!(seen.insert(key(&p.x, p.t)), "{:?} at t={} appears twice", p.x, p.t);
    }
}

#[test]
fn no_point_carries_two_roles() {
    for id in ProblemId::ALL {
        let set = assemble(&spec(id), &CollocationConfig::default(), 5).unwrap();
        assert_roles_disjoint(&set);
    }
}

#[test]
fn initial_slice_is_exactly_t1_and_others_later() {
    for id in ProblemId::ALL {
        let s = spec(id);
        let set = assemble(&s, &CollocationConfig::default(), 0).unwrap();
        let (t1, t2) = s.window;
        assert!(set.initial.iter().all(|p| p.t == t1 && p.role == Role::Initial));
        assert!(set.interior.iter().chain(&set.boundary).all(|p| p.t > t1 && p.t <= t2));
        assert!(set.interior.iter().any(|p| p.t == t2));
    }
}

#[test]
fn origin_is_excluded_for_singular_problems() {
    for id in [ProblemId::P2, ProblemId::P5] {
        let set = assemble(&spec(id), &CollocationConfig::default(), 0).unwrap();
        assert_eq!(set.provenance.origin_exclusion, Some(1e-3));
        for p in set.points() {
            let r = p.x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(r >= 1e-3, "{id}: {:?}", p.x);
        }
    }
    for id in [ProblemId::P1, ProblemId::P4] {
        let set = assemble(&spec(id), &CollocationConfig::default(), 0).unwrap();
        assert_eq!(set.provenance.origin_exclusion, None);
        assert!(set.initial.iter().any(|p| p.x.iter().all(|&v| v == 0.0)), "{id}");
    }
}

#[test]
fn long_horizon_rule() {
    assert_eq!(time_grid(0.0, 1.0, true).len(), 21);
    assert_eq!(time_grid(0.0, 10.0, true).len(), 21);
    assert_eq!(time_grid(0.0, 100.0, true).len(), 210);
    assert_eq!(time_grid(0.0, 100.0, false).len(), 21);
    let set = assemble(
        &make_problem(
            ProblemId::P1,
            &ProblemParams {
                t_final: Some(100.0),
                ..Default::default()
            },
        )
        .unwrap(),
        &CollocationConfig::default(),
        0,
    )
    .unwrap();
    assert_eq!(set.provenance.time_levels, 210);
}

#[test]
fn csv_header_and_rows() {
    let s = spec(ProblemId::P4);
    let set = assemble(&s, &CollocationConfig::default(), 0).unwrap();
    let mut buf = Vec::new();
    set.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,y,z,t,role"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), set.len());
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f.len(), 5);
        assert!(matches!(f[4], "interior" | "boundary" | "initial"));
        for v in &f[..4] {
            v.parse::<f64>().unwrap();
        }
    }
}

#[test]
fn bad_counts_are_config_errors() {
    let s = spec(ProblemId::P3);
    let cfg = CollocationConfig {
        spatial: 440,
        ..Default::default()
    };
    let err = assemble(&s, &cfg, 0).unwrap_err();
    assert!(err.to_string().contains("collocation.spatial"), "{err}");
    let cfg = CollocationConfig {
        time: 1,
        ..Default::default()
    };
    let err = assemble(&s, &cfg, 0).unwrap_err();
    assert!(err.to_string().contains("collocation.time"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn any_seed_gives_a_valid_set(seed in any::<u64>(), which in 0usize..6, spatial in 60usize..500) {
        let id = ProblemId::ALL[which];
        let s = spec(id);
        let spatial = if id == ProblemId::P3 {
            let k = (spatial as f64).sqrt().round() as usize;
            k * k
        } else {
            spatial
        };
        let cfg = CollocationConfig { spatial, time: 5, ..Default::default() };
        let set = assemble(&s, &cfg, seed).unwrap();
        prop_assert!(set.validate(&s).is_ok());
        assert_roles_disjoint(&set);
    }
}
