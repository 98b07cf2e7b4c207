//! The five test problems and the regularized variant of the first one.
//!
//! | id | domain | solution | forcing |
//! |----|--------|----------|---------|
//! | P1 | unit disk | `|x|^2/2 + t` | 1 |
//! | P2 | unit disk | `t r^{2a}` | piecewise |
//! | P3 | square `(-1,1)^2` | `1 + t` for `x <= 0`, `1 - x + t` for `x > 0` | 1 |
//! | P4 | unit ball | `|x|^2/2 + t` | 1 |
//! | P5 | unit ball | `t r^{2a}` | piecewise |
//! | P1_regularized | disk of radius `R` (default 1/2) | as P1 | 1, with `eps * Laplacian` |
//!
//! The piecewise forcings switch on `2 a t r^{2a-1} <= 1`; equality belongs to
//! the first branch.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProblemId {
    P1,
    P2,
    P3,
    P4,
    P5,
    #[serde(rename = "P1_regularized")]
    P1Regularized,
}

impl ProblemId {
    pub const ALL: [ProblemId; 6] = [
        ProblemId::P1,
        ProblemId::P2,
        ProblemId::P3,
        ProblemId::P4,
        ProblemId::P5,
        ProblemId::P1Regularized,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemId::P1 => "P1",
            ProblemId::P2 => "P2",
            ProblemId::P3 => "P3",
            ProblemId::P4 => "P4",
            ProblemId::P5 => "P5",
            ProblemId::P1Regularized => "P1_regularized",
        }
    }

    pub fn needs_alpha(self) -> bool {
        matches!(self, ProblemId::P2 | ProblemId::P5)
    }
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ProblemId::ALL
            .into_iter()
            .find(|id| id.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config("problem", format!("unknown problem `{s}`")))
    }
}

/// Spatial domain. All problem domains are centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    Disk { radius: f64 },
    Square { half_side: f64 },
    Ball { radius: f64 },
}

impl Domain {
    pub fn dim(&self) -> usize {
        match self {
            Domain::Disk { .. } | Domain::Square { .. } => 2,
            Domain::Ball { .. } => 3,
        }
    }

    /// Strict interior membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        match *self {
            Domain::Disk { radius } | Domain::Ball { radius } => norm(x) < radius,
            Domain::Square { half_side } => x.iter().all(|v| v.abs() < half_side),
        }
    }

    pub fn contains_closed(&self, x: &[f64], tol: f64) -> bool {
        match *self {
            Domain::Disk { radius } | Domain::Ball { radius } => norm(x) <= radius + tol,
            Domain::Square { half_side } => x.iter().all(|v| v.abs() <= half_side + tol),
        }
    }

    pub fn distance_to_boundary(&self, x: &[f64]) -> f64 {
        match *self {
            Domain::Disk { radius } | Domain::Ball { radius } => (radius - norm(x)).abs(),
            Domain::Square { half_side } => {
                if self.contains(x) {
                    x.iter()
                        .map(|v| half_side - v.abs())
                        .fold(f64::INFINITY, f64::min)
                } else {
                    x.iter()
                        .map(|v| (v.abs() - half_side).max(0.0))
                        .map(|d| d * d)
                        .sum::<f64>()
                        .sqrt()
                }
            }
        }
    }

    pub fn on_boundary(&self, x: &[f64], tol: f64) -> bool {
        self.distance_to_boundary(x) <= tol && self.contains_closed(x, tol)
    }

    /// Lebesgue measure.
    pub fn measure(&self) -> f64 {
        match *self {
            Domain::Disk { radius } => PI * radius * radius,
            Domain::Square { half_side } => (2.0 * half_side).powi(2),
            Domain::Ball { radius } => 4.0 / 3.0 * PI * radius.powi(3),
        }
    }

    /// Half-width of the axis-aligned bounding box.
    pub fn extent(&self) -> f64 {
        match *self {
            Domain::Disk { radius } | Domain::Ball { radius } => radius,
            Domain::Square { half_side } => half_side,
        }
    }
}

#[inline]
pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Interior,
    Boundary,
    Initial,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Interior => "interior",
            Role::Boundary => "boundary",
            Role::Initial => "initial",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint {
    pub x: Vec<f64>,
    pub t: f64,
    pub role: Role,
}

impl EvalPoint {
    /// `(x, t)` as one network input.
    pub fn z(&self) -> Vec<f64> {
        let mut z = self.x.clone();
        z.push(self.t);
        z
    }
}

/// Parameters accepted by [`make_problem`]. Missing values fall back to
/// per-problem defaults where one exists.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemParams {
    /// Exponent of P2 and P5; required there.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Regularization; required for P1_regularized, default 0 elsewhere.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// Final time `T` of the window `(0, T)`; default 1.
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    /// Explicit `(t1, t2)`; overrides `T`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    /// Radius of the disk subdomain of P1_regularized; default 1/2.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subdomain_radius: Option<f64>,
}

/// A fully specified problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub id: ProblemId,
    pub domain: Domain,
    /// `(t1, t2)`, `t1 < t2`.
    pub window: (f64, f64),
    pub alpha: Option<f64>,
    pub eps: f64,
}

/// Default window of P1_regularized: the cylinder `B_{1/2} x (7/4, 2)`.
pub const REGULARIZED_WINDOW: (f64, f64) = (1.75, 2.0);
pub const REGULARIZED_RADIUS: f64 = 0.5;

pub fn make_problem(id: ProblemId, params: &ProblemParams) -> Result<ProblemSpec> {
    let alpha = if id.needs_alpha() {
        let a = params
            .alpha
            .ok_or_else(|| Error::config("alpha", format!("{id} requires alpha > 0")))?;
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::config("alpha", format!("must be positive, got {a}")));
        }
        Some(a)
    } else {
        None
    };

    let eps = match (id, params.eps) {
        (ProblemId::P1Regularized, None) => {
            return Err(Error::config("eps", "P1_regularized requires eps"))
        }
        (_, Some(e)) if !(e >= 0.0 && e.is_finite()) => {
            return Err(Error::config("eps", format!("must be >= 0, got {e}")))
        }
        (_, e) => e.unwrap_or(0.0),
    };

    let window = match (params.window, params.t_final) {
        (Some([t1, t2]), _) => (t1, t2),
        (None, Some(t)) => (0.0, t),
        (None, None) if id == ProblemId::P1Regularized => REGULARIZED_WINDOW,
        (None, None) => (0.0, 1.0),
    };
    if !(window.0 < window.1 && window.0.is_finite() && window.1.is_finite()) {
        let field = if params.window.is_some() { "window" } else { "T" };
        return Err(Error::config(
            field,
            format!("need t1 < t2, got ({}, {})", window.0, window.1),
        ));
    }
    if window.0 < 0.0 {
        return Err(Error::config("window", "times must be non-negative"));
    }

    let domain = match id {
        ProblemId::P1 | ProblemId::P2 => Domain::Disk { radius: 1.0 },
        ProblemId::P3 => Domain::Square { half_side: 1.0 },
        ProblemId::P4 | ProblemId::P5 => Domain::Ball { radius: 1.0 },
        ProblemId::P1Regularized => {
            let r = params.subdomain_radius.unwrap_or(REGULARIZED_RADIUS);
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::config(
                    "subdomain_radius",
                    format!("must lie in (0, 1], got {r}"),
                ));
            }
            Domain::Disk { radius: r }
        }
    };
    if params.subdomain_radius.is_some() && id != ProblemId::P1Regularized {
        return Err(Error::config(
            "subdomain_radius",
            "only P1_regularized has a subdomain",
        ));
    }

    Ok(ProblemSpec {
        id,
        domain,
        window,
        alpha,
        eps,
    })
}

/// Closed-form derivatives of an exact solution at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDerivs {
    pub value: f64,
    pub du_dt: f64,
    pub grad: Vec<f64>,
    /// Row-major `n x n`.
    pub hess: Vec<f64>,
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn input_dim(&self) -> usize {
        self.dim() + 1
    }

    pub fn t_final(&self) -> f64 {
        self.window.1
    }

    fn alpha(&self) -> f64 {
        self.alpha.expect("alpha is set for P2 and P5")
    }

    /// Left side of the branch condition `2 a t r^{2a-1} <= 1`.
    pub fn branch_indicator(&self, x: &[f64], t: f64) -> Option<f64> {
        if !self.id.needs_alpha() {
            return None;
        }
        let a = self.alpha();
        if t == 0.0 {
            return Some(0.0);
        }
        Some(2.0 * a * t * norm(x).powf(2.0 * a - 1.0))
    }

    /// Whether `(x, t)` lies in the second (diffusive) branch of a piecewise
    /// forcing.
    pub fn in_active_branch(&self, x: &[f64], t: f64) -> bool {
        self.branch_indicator(x, t).is_some_and(|v| v > 1.0)
    }

    pub fn forcing(&self, x: &[f64], t: f64) -> f64 {
        match self.id {
            ProblemId::P1 | ProblemId::P3 | ProblemId::P4 | ProblemId::P1Regularized => 1.0,
            ProblemId::P2 => {
                let a = self.alpha();
                let r = norm(x);
                if !self.in_active_branch(x, t) {
                    r.powf(2.0 * a)
                } else {
                    r.powf(2.0 * a) - 4.0 * a * a * t * r.powf(2.0 * a - 2.0) + 1.0 / r
                }
            }
            ProblemId::P5 => {
                let a = self.alpha();
                let r = norm(x);
                if !self.in_active_branch(x, t) {
                    r.powf(2.0 * a)
                } else {
                    let omega = 2.0 * a * (2.0 * a + 1.0);
                    r.powf(2.0 * a - 2.0) * (r * r - omega * t) + 2.0 / r
                }
            }
        }
    }

    /// Initial datum on the closed domain at `t = t1`.
    pub fn initial(&self, x: &[f64]) -> f64 {
        let t1 = self.window.0;
        match self.id {
            ProblemId::P1 | ProblemId::P4 | ProblemId::P1Regularized => half_sq(x) + t1,
            ProblemId::P2 | ProblemId::P5 => t1 * norm(x).powf(2.0 * self.alpha()),
            ProblemId::P3 => p3(x, t1),
        }
    }

    /// Lateral boundary datum for `x` on the boundary.
    pub fn boundary(&self, x: &[f64], t: f64) -> f64 {
        match self.id {
            // |x| = 1 on the boundary of the unit disk and ball
            ProblemId::P1 | ProblemId::P4 => 0.5 + t,
            ProblemId::P1Regularized => half_sq(x) + t,
            ProblemId::P2 | ProblemId::P5 => t,
            ProblemId::P3 => p3(x, t),
        }
    }

    /// Prescribed data for a point on the parabolic boundary.
    pub fn data(&self, x: &[f64], t: f64, role: Role) -> f64 {
        match role {
            Role::Initial => self.initial(x),
            _ => self.boundary(x, t),
        }
    }

    pub fn exact(&self, x: &[f64], t: f64) -> Option<f64> {
        Some(match self.id {
            ProblemId::P1 | ProblemId::P4 | ProblemId::P1Regularized => half_sq(x) + t,
            ProblemId::P2 | ProblemId::P5 => t * norm(x).powf(2.0 * self.alpha()),
            ProblemId::P3 => p3(x, t),
        })
    }

    pub fn has_exact(&self) -> bool {
        true
    }

    /// Analytic derivatives of the exact solution. P2/P5 are singular at the
    /// origin and P3 along `x = 0`; callers sample away from those sets.
    pub fn exact_derivs(&self, x: &[f64], t: f64) -> Option<ExactDerivs> {
        let n = x.len();
        let mut hess = vec![0.0; n * n];
        let d = match self.id {
            ProblemId::P1 | ProblemId::P4 | ProblemId::P1Regularized => {
                for i in 0..n {
                    hess[i * n + i] = 1.0;
                }
                ExactDerivs {
                    value: half_sq(x) + t,
                    du_dt: 1.0,
                    grad: x.to_vec(),
                    hess,
                }
            }
            ProblemId::P2 | ProblemId::P5 => {
                let a = self.alpha();
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let r = r2.sqrt();
                let k = 2.0 * a * t * r.powf(2.0 * a - 2.0);
                for i in 0..n {
                    for j in 0..n {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        hess[i * n + j] = k * (delta + (2.0 * a - 2.0) * x[i] * x[j] / r2);
                    }
                }
                ExactDerivs {
                    value: t * r.powf(2.0 * a),
                    du_dt: r.powf(2.0 * a),
                    grad: x.iter().map(|v| k * v).collect(),
                    hess,
                }
            }
            ProblemId::P3 => {
                let mut grad = vec![0.0; n];
                if x[0] > 0.0 {
                    grad[0] = -1.0;
                }
                ExactDerivs {
                    value: p3(x, t),
                    du_dt: 1.0,
                    grad,
                    hess,
                }
            }
        };
        Some(d)
    }

    /// `||u(., t)||^2` over the domain, in closed form.
    pub fn norm_sq_exact(&self, t: f64) -> Result<f64> {
        Ok(match (self.id, self.domain) {
            (ProblemId::P1, _) => PI * (t * t + t / 2.0 + 1.0 / 12.0),
            (ProblemId::P1Regularized, Domain::Disk { radius }) => {
                // integral of (r^2/2 + t)^2 over the disk of radius R
                let r2 = radius * radius;
                PI * (r2 * r2 * r2 / 12.0 + t * r2 * r2 / 2.0 + t * t * r2)
            }
            (ProblemId::P2, _) => PI * t * t / (2.0 * self.alpha() + 1.0),
            (ProblemId::P3, _) => 4.0 * t * t + 6.0 * t + 8.0 / 3.0,
            (ProblemId::P4, _) => PI * (4.0 * t * t / 3.0 + 4.0 * t / 5.0 + 1.0 / 7.0),
            (ProblemId::P5, _) => 4.0 * PI * t * t / (4.0 * self.alpha() + 3.0),
            (id, _) => {
                return Err(Error::Unsupported(format!("no closed-form norm for {id}")));
            }
        })
    }

    /// `sup over (t1, t2)` of the squared norm. Every closed form is a convex
    /// quadratic in `t`, so the supremum sits at an endpoint.
    pub fn norm_sq_sup(&self) -> Result<f64> {
        let (t1, t2) = self.window;
        Ok(self.norm_sq_exact(t1)?.max(self.norm_sq_exact(t2)?))
    }

    /// `E / sup ||u||^2`.
    pub fn relative_error(&self, e: f64) -> Result<f64> {
        Ok(e / self.norm_sq_sup()?)
    }

    /// Whether `p` satisfies the invariant of its role, up to `tol`.
    pub fn check_point(&self, p: &EvalPoint, tol: f64) -> bool {
        let (t1, t2) = self.window;
        if p.x.len() != self.dim() {
            return false;
        }
        match p.role {
            Role::Interior => self.domain.contains(&p.x) && p.t > t1 && p.t <= t2 + tol,
            Role::Boundary => self.domain.on_boundary(&p.x, tol) && p.t > t1 && p.t <= t2 + tol,
            Role::Initial => {
                self.domain.contains_closed(&p.x, tol) && (p.t - t1).abs() <= tol
            }
        }
    }
}

#[inline]
fn half_sq(x: &[f64]) -> f64 {
    0.5 * x.iter().map(|v| v * v).sum::<f64>()
}

#[inline]
fn p3(x: &[f64], t: f64) -> f64 {
    if x[0] <= 0.0 {
        1.0 + t
    } else {
        1.0 - x[0] + t
    }
}
