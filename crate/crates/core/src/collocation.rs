//! Space-time collocation points.
//!
//! Spatial points are placed once and reused at every time level:
//!
//! * square: a `k x k` tensor grid, `k^2` = requested count; grid points on
//!   the edges are boundary points.
//! * disk: an optional center point plus `m` concentric rings at radii
//!   `R j / m`. Ring `j` receives a share of the points proportional to `j`
//!   (the annulus measure), rounded by largest remainder, and starts at a
//!   seeded random phase. The outermost ring lies on the boundary.
//! * ball: the same with spherical shells, shares proportional to `j^2`, and
//!   a Fibonacci lattice on each shell under a seeded random rotation.
//!
//! `m` is chosen so the radial spacing and the in-shell spacing come out
//! roughly equal. When an origin-exclusion radius is active the center point
//! is dropped and its share goes to the rings.
//!
//! Times come from [`time_grid`]. The interior role pairs interior spatial
//! points with the times after `t1`; the boundary role pairs boundary
//! spatial points with the same times; the initial role holds every spatial
//! point at `t1`. No point carries two roles.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{norm, Domain, EvalPoint, ProblemId, ProblemSpec, Role};

/// Time-window length from which the long-horizon rule scales the number of
/// time levels with the window.
pub const LONG_HORIZON: f64 = 100.0;

/// Requested point counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollocationConfig {
    pub spatial: usize,
    pub time: usize,
    /// Scale the time levels with the window length on long horizons.
    pub long_horizon_rule: bool,
    /// Radius of the ball around the origin kept free of points for problems
    /// whose forcing is singular there.
    pub origin_exclusion_radius: f64,
}

impl Default for CollocationConfig {
    fn default() -> Self {
        Self {
            spatial: 441,
            time: 21,
            long_horizon_rule: true,
            origin_exclusion_radius: 1e-3,
        }
    }
}

/// Equispaced times on `[t1, t2]`, endpoints included, with the default count.
pub fn time_grid(t1: f64, t2: f64, long_horizon_rule: bool) -> Vec<f64> {
    time_grid_with(t1, t2, 21, long_horizon_rule)
}

/// Equispaced times with `count` levels per unit-length-ten window; on
/// windows of length at least [`LONG_HORIZON`] with the rule on, the count
/// grows to `ceil(count * (t2 - t1) / 10)`.
pub fn time_grid_with(t1: f64, t2: f64, count: usize, long_horizon_rule: bool) -> Vec<f64> {
    assert!(t1 < t2, "empty time window");
    let span = t2 - t1;
    let n = if long_horizon_rule && span >= LONG_HORIZON {
        // the tolerance keeps 2.1 * 100 from rounding up to 211
        (count as f64 * span / 10.0 - 1e-9).ceil() as usize
    } else {
        count
    };
    let n = n.max(2);
    (0..n)
        .map(|i| {
            if i + 1 == n {
                t2
            } else {
                t1 + span * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Spatial points split into interior and boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialPoints {
    pub interior: Vec<Vec<f64>>,
    pub boundary: Vec<Vec<f64>>,
    /// Description of the construction.
    pub strategy: String,
    /// Radial or grid spacing of the construction.
    pub spacing: f64,
}

impl SpatialPoints {
    pub fn len(&self) -> usize {
        self.interior.len() + self.boundary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.interior.iter().chain(&self.boundary)
    }
}

/// Places `target` spatial points in `domain`. Points closer to the origin
/// than `exclusion_radius` are never produced.
pub fn spatial_points(
    domain: &Domain,
    target: usize,
    seed: u64,
    exclusion_radius: f64,
) -> Result<SpatialPoints> {
    if target < 9 {
        return Err(Error::config(
            "collocation.spatial",
            format!("need at least 9 points, got {target}"),
        ));
    }
    match *domain {
        Domain::Square { half_side } => square_grid(half_side, target, exclusion_radius),
        Domain::Disk { radius } => disk_rings(radius, target, seed, exclusion_radius),
        Domain::Ball { radius } => ball_shells(radius, target, seed, exclusion_radius),
    }
}

fn square_grid(h: f64, target: usize, exclusion: f64) -> Result<SpatialPoints> {
    let k = (target as f64).sqrt().round() as usize;
    if k * k != target {
        return Err(Error::config(
            "collocation.spatial",
            format!("the square grid needs a perfect square count, got {target}"),
        ));
    }
    if exclusion > 0.0 {
        return Err(Error::config(
            "collocation.origin_exclusion_radius",
            "not supported on the square grid",
        ));
    }
    let coord = |i: usize| {
        if i + 1 == k {
            h
        } else {
            -h + 2.0 * h * i as f64 / (k - 1) as f64
        }
    };
    let mut interior = Vec::new();
    let mut boundary = Vec::new();
    for i in 0..k {
        for j in 0..k {
            let x = vec![coord(i), coord(j)];
            if i == 0 || j == 0 || i + 1 == k || j + 1 == k {
                boundary.push(x);
            } else {
                interior.push(x);
            }
        }
    }
    Ok(SpatialPoints {
        interior,
        boundary,
        strategy: format!("tensor grid {k}x{k}"),
        spacing: 2.0 * h / (k - 1) as f64,
    })
}

/// Splits `total` into integer shares proportional to `weights`, each at
/// least 1, by largest remainder.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| (e.floor() as usize).max(1)).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // ties resolved toward outer shells
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(b.cmp(&a))
    });
    let mut assigned: usize = counts.iter().sum();
    let mut idx = 0;
    while assigned < total {
        counts[order[idx % order.len()]] += 1;
        assigned += 1;
        idx += 1;
    }
    while assigned > total {
        // only reachable when the max(1) floor over-assigned; trim the largest
        let big = (0..counts.len()).max_by_key(|&i| (counts[i], i)).unwrap();
        counts[big] -= 1;
        assigned -= 1;
    }
    counts
}

fn disk_rings(radius: f64, target: usize, seed: u64, exclusion: f64) -> Result<SpatialPoints> {
    let center = exclusion <= 0.0;
    let on_rings = target - usize::from(center);
    // pi m (m + 1) = points on rings makes the arc spacing match the radial one
    let m = ((-1.0 + (1.0 + 4.0 * on_rings as f64 / PI).sqrt()) / 2.0)
        .round()
        .max(1.0) as usize;
    let h = radius / m as f64;
    if h <= exclusion {
        return Err(Error::config(
            "collocation.origin_exclusion_radius",
            format!("exclusion radius {exclusion} swallows the first ring"),
        ));
    }
    let weights: Vec<f64> = (1..=m).map(|j| j as f64).collect();
    let counts = apportion(on_rings, &weights);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut interior = Vec::with_capacity(target);
    let mut boundary = Vec::new();
    if center {
        interior.push(vec![0.0, 0.0]);
    }
    for (j, &n) in counts.iter().enumerate() {
        let ring = j + 1;
        let r = if ring == m { radius } else { h * ring as f64 };
        let phase: f64 = rng.gen::<f64>() * 2.0 * PI;
        let dest = if ring == m { &mut boundary } else { &mut interior };
        for i in 0..n {
            let th = phase + 2.0 * PI * i as f64 / n as f64;
            dest.push(vec![r * th.cos(), r * th.sin()]);
        }
    }
    Ok(SpatialPoints {
        interior,
        boundary,
        strategy: format!(
            "{}{m} concentric rings, counts {:?}, seeded phases",
            if center { "center + " } else { "" },
            counts
        ),
        spacing: h,
    })
}

fn ball_shells(radius: f64, target: usize, seed: u64, exclusion: f64) -> Result<SpatialPoints> {
    let center = exclusion <= 0.0;
    let on_shells = target - usize::from(center);
    // 4 pi sum j^2 = points on shells balances in-shell and radial spacing
    let goal = 6.0 * on_shells as f64 / (4.0 * PI);
    let m = (1..=on_shells)
        .find(|&m| {
            let m = m as f64;
            m * (m + 1.0) * (2.0 * m + 1.0) >= goal
        })
        .unwrap_or(1);
    let below = |m: usize| {
        let m = m as f64;
        (m * (m + 1.0) * (2.0 * m + 1.0) - goal).abs()
    };
    let m = if m > 1 && below(m - 1) < below(m) { m - 1 } else { m };
    let h = radius / m as f64;
    if h <= exclusion {
        return Err(Error::config(
            "collocation.origin_exclusion_radius",
            format!("exclusion radius {exclusion} swallows the first shell"),
        ));
    }
    let weights: Vec<f64> = (1..=m).map(|j| (j * j) as f64).collect();
    let counts = apportion(on_shells, &weights);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut interior = Vec::with_capacity(target);
    let mut boundary = Vec::new();
    if center {
        interior.push(vec![0.0, 0.0, 0.0]);
    }
    let golden = PI * (3.0 - 5f64.sqrt());
    for (j, &n) in counts.iter().enumerate() {
        let shell = j + 1;
        let r = if shell == m { radius } else { h * shell as f64 };
        let rot = random_rotation(&mut rng);
        let dest = if shell == m { &mut boundary } else { &mut interior };
        for i in 0..n {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let s = (1.0 - z * z).max(0.0).sqrt();
            let ph = golden * i as f64;
            let u = [s * ph.cos(), s * ph.sin(), z];
            let mut p = vec![0.0; 3];
            for (a, row) in rot.iter().enumerate() {
                p[a] = r * (row[0] * u[0] + row[1] * u[1] + row[2] * u[2]);
            }
            dest.push(p);
        }
    }
    Ok(SpatialPoints {
        interior,
        boundary,
        strategy: format!(
            "{}{m} spherical shells, counts {:?}, Fibonacci lattice with seeded rotations",
            if center { "center + " } else { "" },
            counts
        ),
        spacing: h,
    })
}

/// Uniform random rotation from a uniform unit quaternion.
fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (
        a * (2.0 * PI * u2).sin(),
        a * (2.0 * PI * u2).cos(),
        b * (2.0 * PI * u3).sin(),
        b * (2.0 * PI * u3).cos(),
    );
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Where a collocation set came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub strategy: String,
    pub seed: u64,
    pub spatial: usize,
    pub spatial_boundary: usize,
    pub time_levels: usize,
    /// Origin-exclusion radius actually applied, if any.
    pub origin_exclusion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollocationSet {
    pub interior: Vec<EvalPoint>,
    pub boundary: Vec<EvalPoint>,
    pub initial: Vec<EvalPoint>,
    pub provenance: Provenance,
}

/// Whether the problem needs the origin kept free of points.
pub fn excludes_origin(id: ProblemId) -> bool {
    matches!(id, ProblemId::P2 | ProblemId::P5)
}

pub fn assemble(spec: &ProblemSpec, cfg: &CollocationConfig, seed: u64) -> Result<CollocationSet> {
    if cfg.time < 2 {
        return Err(Error::config(
            "collocation.time",
            format!("need at least 2 time levels, got {}", cfg.time),
        ));
    }
    let exclusion = if excludes_origin(spec.id) {
        cfg.origin_exclusion_radius
    } else {
        0.0
    };
    let sp = spatial_points(&spec.domain, cfg.spatial, seed, exclusion)?;
    let (t1, t2) = spec.window;
    let times = time_grid_with(t1, t2, cfg.time, cfg.long_horizon_rule);
    let later = &times[1..];

    let tag = |xs: &[Vec<f64>], ts: &[f64], role| {
        let mut out = Vec::with_capacity(xs.len() * ts.len());
        for &t in ts {
            for x in xs {
                out.push(EvalPoint {
                    x: x.clone(),
                    t,
                    role,
                });
            }
        }
        out
    };
    let interior = tag(&sp.interior, later, Role::Interior);
    let boundary = tag(&sp.boundary, later, Role::Boundary);
    let all: Vec<Vec<f64>> = sp.all().cloned().collect();
    let initial = tag(&all, &[t1], Role::Initial);

    Ok(CollocationSet {
        interior,
        boundary,
        initial,
        provenance: Provenance {
            strategy: sp.strategy,
            seed,
            spatial: sp.interior.len() + sp.boundary.len(),
            spatial_boundary: sp.boundary.len(),
            time_levels: times.len(),
            origin_exclusion: (exclusion > 0.0).then_some(exclusion),
        },
    })
}

impl CollocationSet {
    pub fn len(&self) -> usize {
        self.interior.len() + self.boundary.len() + self.initial.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> impl Iterator<Item = &EvalPoint> {
        self.interior.iter().chain(&self.boundary).chain(&self.initial)
    }

    /// Boundary and initial points, the ones carrying data.
    pub fn data_points(&self) -> impl Iterator<Item = &EvalPoint> {
        self.boundary.iter().chain(&self.initial)
    }

    /// Writes `x,y[,z],t,role` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let dim = self.points().next().map_or(2, |p| p.x.len());
        let names = ["x", "y", "z"];
        writeln!(w, "{},t,role", names[..dim].join(","))?;
        for p in self.points() {
            for v in &p.x {
                write!(w, "{v},")?;
            }
            writeln!(w, "{},{}", p.t, p.role)?;
        }
        Ok(())
    }

    /// Checks every role invariant against `spec`; returns the first
    /// offending point.
    pub fn validate(&self, spec: &ProblemSpec) -> Result<()> {
        let tol = 1e-12 * spec.domain.extent().max(spec.window.1.abs()).max(1.0);
        for p in self.points() {
            if !spec.check_point(p, tol) {
                return Err(Error::structural(format!(
                    "{} point x={:?} t={} violates its role",
                    p.role, p.x, p.t
                )));
            }
            if let Some(r) = self.provenance.origin_exclusion {
                if norm(&p.x) < r {
                    return Err(Error::structural(format!(
                        "point x={:?} inside the excluded ball",
                        p.x
                    )));
                }
            }
        }
        Ok(())
    }
}
