//! L2 norms over the spatial domains and the error functionals
//!
//! ```text
//! E(T)     = sup_{t in (t1, T)} || u_hat(., t) - u(., t) ||^2
//! E_rel(T) = E(T) / sup_{t in (t1, T)} || u(., t) ||^2
//! ```
//!
//! Both carry the square of the norm. The supremum in time is taken over a
//! discrete set of times, by default the training time grid.
//!
//! Integrals use midpoint tensor rules in polar (disk), Cartesian (square)
//! and spherical (ball) coordinates. Each node's weight is the exact measure
//! of its cell, so the weights add up to the domain measure.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ExactField, Field};
use crate::problem::{Domain, ProblemId, ProblemParams, ProblemSpec};

/// Default refinement for the disk and the square.
pub const REFINEMENT_2D: usize = 200;
/// Default refinement for the ball.
pub const REFINEMENT_3D: usize = 64;

const NODE_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub domain: Domain,
    pub refinement: usize,
    /// Flat node coordinates, `dim` per node.
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// `refinement` radial cells and `4 * refinement` angular cells.
    pub fn disk(radius: f64, refinement: usize) -> Self {
        let (nr, nt) = (refinement, 4 * refinement);
        let dr = radius / nr as f64;
        let dt = 2.0 * PI / nt as f64;
        let mut nodes = Vec::with_capacity(2 * nr * nt);
        let mut weights = Vec::with_capacity(nr * nt);
        for i in 0..nr {
            let (r0, r1) = (i as f64 * dr, (i + 1) as f64 * dr);
            let r = 0.5 * (r0 + r1);
            let w = 0.5 * (r1 * r1 - r0 * r0) * dt;
            for j in 0..nt {
                let th = (j as f64 + 0.5) * dt;
                nodes.extend_from_slice(&[r * th.cos(), r * th.sin()]);
                weights.push(w);
            }
        }
        Self {
            domain: Domain::Disk { radius },
            refinement,
            nodes,
            weights,
        }
    }

    /// `refinement x refinement` cells.
    pub fn square(half_side: f64, refinement: usize) -> Self {
        let n = refinement;
        let h = 2.0 * half_side / n as f64;
        let mut nodes = Vec::with_capacity(2 * n * n);
        for i in 0..n {
            for j in 0..n {
                nodes.extend_from_slice(&[
                    -half_side + (i as f64 + 0.5) * h,
                    -half_side + (j as f64 + 0.5) * h,
                ]);
            }
        }
        Self {
            domain: Domain::Square { half_side },
            refinement,
            nodes,
            weights: vec![h * h; n * n],
        }
    }

    /// `refinement` radial and polar cells, `2 * refinement` azimuthal cells.
    pub fn ball(radius: f64, refinement: usize) -> Self {
        let (nr, nth, nph) = (refinement, refinement, 2 * refinement);
        let dr = radius / nr as f64;
        let dth = PI / nth as f64;
        let dph = 2.0 * PI / nph as f64;
        let mut nodes = Vec::with_capacity(3 * nr * nth * nph);
        let mut weights = Vec::with_capacity(nr * nth * nph);
        for i in 0..nr {
            let (r0, r1) = (i as f64 * dr, (i + 1) as f64 * dr);
            let r = 0.5 * (r0 + r1);
            let wr = (r1.powi(3) - r0.powi(3)) / 3.0;
            for j in 0..nth {
                let (t0, t1) = (j as f64 * dth, (j + 1) as f64 * dth);
                let th = 0.5 * (t0 + t1);
                let wt = t0.cos() - t1.cos();
                for k in 0..nph {
                    let ph = (k as f64 + 0.5) * dph;
                    nodes.extend_from_slice(&[
                        r * th.sin() * ph.cos(),
                        r * th.sin() * ph.sin(),
                        r * th.cos(),
                    ]);
                    weights.push(wr * wt * dph);
                }
            }
        }
        Self {
            domain: Domain::Ball { radius },
            refinement,
            nodes,
            weights,
        }
    }

    pub fn for_domain(domain: &Domain, refinement: usize) -> Self {
        match *domain {
            Domain::Disk { radius } => Self::disk(radius, refinement),
            Domain::Square { half_side } => Self::square(half_side, refinement),
            Domain::Ball { radius } => Self::ball(radius, refinement),
        }
    }

    /// The rule at the default refinement for the domain's dimension.
    pub fn default_for(domain: &Domain) -> Self {
        let n = if domain.dim() == 3 {
            REFINEMENT_3D
        } else {
            REFINEMENT_2D
        };
        Self::for_domain(domain, n)
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.nodes[i * d..(i + 1) * d]
    }

    /// `sum_i w_i g(x_i)`, summed in node order.
    pub fn integrate(&self, g: impl Fn(&[f64]) -> f64) -> f64 {
        (0..self.len()).map(|i| self.weights[i] * g(self.node(i))).sum()
    }
}

/// `|| g ||^2 = sum_i w_i g(x_i)^2`.
pub fn l2_norm_sq(g: impl Fn(&[f64]) -> f64, rule: &QuadratureRule) -> f64 {
    rule.integrate(|x| {
        let v = g(x);
        v * v
    })
}

/// `|| a(., t) - b(., t) ||^2`, with field evaluations in parallel chunks and
/// a sequential reduction.
pub fn l2_diff_sq(a: &dyn Field, b: &dyn Field, t: f64, rule: &QuadratureRule) -> f64 {
    let d = rule.dim();
    let partial: Vec<f64> = (0..rule.len())
        .step_by(NODE_CHUNK)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&s| {
            let e = (s + NODE_CHUNK).min(rule.len());
            let mut pts = Vec::with_capacity((e - s) * (d + 1));
            for i in s..e {
                pts.extend_from_slice(rule.node(i));
                pts.push(t);
            }
            let mut va = vec![0.0; e - s];
            let mut vb = vec![0.0; e - s];
            a.values(&pts, &mut va);
            b.values(&pts, &mut vb);
            (s..e)
                .map(|i| {
                    let diff = va[i - s] - vb[i - s];
                    rule.weights[i] * diff * diff
                })
                .sum::<f64>()
        })
        .collect();
    partial.iter().sum()
}

struct Zero(usize);

impl Field for Zero {
    fn spatial_dim(&self) -> usize {
        self.0
    }
    fn value(&self, _: &[f64], _: f64) -> f64 {
        0.0
    }
    fn bundle(&self, _: &[f64], _: f64) -> crate::mlp::Bundle {
        crate::mlp::Bundle {
            value: 0.0,
            du_dt: 0.0,
            grad_x: vec![0.0; self.0],
            hess_x: vec![0.0; self.0 * self.0],
        }
    }
    fn values(&self, _: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// `|| f(., t) ||^2`.
pub fn l2_field_sq(f: &dyn Field, t: f64, rule: &QuadratureRule) -> f64 {
    l2_diff_sq(f, &Zero(rule.dim()), t, rule)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorSource {
    ClosedForm,
    Quadrature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub times: Vec<f64>,
    /// Squared L2 error at each time.
    pub per_time: Vec<f64>,
    /// Largest entry of `per_time`.
    pub e: f64,
    pub e_rel: f64,
    /// Supremum of the squared norm of the exact solution.
    pub denominator: f64,
    pub denominator_source: DenominatorSource,
    pub refinement: usize,
}

/// Squared-norm supremum of the exact solution over the window of `spec`.
pub fn denominator(
    spec: &ProblemSpec,
    times: &[f64],
    rule: &QuadratureRule,
) -> (f64, DenominatorSource) {
    match spec.norm_sq_sup() {
        Ok(v) => (v, DenominatorSource::ClosedForm),
        Err(_) => {
            let exact = ExactField(spec);
            let (t1, t2) = spec.window;
            let v = times
                .iter()
                .chain([t1, t2].iter())
                .map(|&t| l2_field_sq(&exact, t, rule))
                .fold(0.0, f64::max);
            (v, DenominatorSource::Quadrature)
        }
    }
}

/// `E` and `E_rel` of `model` against the exact solution of `spec`, the
/// supremum taken over `eval_times`.
pub fn sup_error(
    model: &dyn Field,
    spec: &ProblemSpec,
    eval_times: &[f64],
    rule: &QuadratureRule,
) -> Result<ErrorReport> {
    if !spec.has_exact() {
        return Err(Error::Unsupported(format!("{} has no exact solution", spec.id)));
    }
    if rule.domain != spec.domain {
        return Err(Error::structural("quadrature rule is for a different domain"));
    }
    if model.spatial_dim() != spec.dim() {
        return Err(Error::structural(format!(
            "model is {}-dimensional, {} is {}-dimensional",
            model.spatial_dim(),
            spec.id,
            spec.dim()
        )));
    }
    if eval_times.is_empty() {
        return Err(Error::config("eval_times", "need at least one time"));
    }
    let exact = ExactField(spec);
    let per_time: Vec<f64> = eval_times
        .iter()
        .map(|&t| l2_diff_sq(model, &exact, t, rule))
        .collect();
    let e = per_time.iter().copied().fold(0.0, f64::max);
    let (den, source) = denominator(spec, eval_times, rule);
    Ok(ErrorReport {
        times: eval_times.to_vec(),
        per_time,
        e,
        e_rel: e / den,
        denominator: den,
        denominator_source: source,
        refinement: rule.refinement,
    })
}

/// Times of `grid` not after `t_final`, with `t_final` appended when absent.
/// Nested in `t_final`, so `E` computed on them is monotone.
pub fn eval_times_up_to(grid: &[f64], t_final: f64) -> Vec<f64> {
    let mut ts: Vec<f64> = grid.iter().copied().filter(|&t| t <= t_final).collect();
    if ts.last() != Some(&t_final) {
        ts.push(t_final);
    }
    ts
}

/// One row of an error table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    /// Final time or regularization parameter.
    pub key: f64,
    pub e: f64,
    pub e_rel: f64,
}

/// Rows `(T, E(T), E_rel(T))` for a model trained on `spec`.
pub fn error_table(
    model: &dyn Field,
    spec: &ProblemSpec,
    grid: &[f64],
    finals: &[f64],
    rule: &QuadratureRule,
) -> Result<Vec<TableRow>> {
    finals
        .iter()
        .map(|&t_final| {
            let (t1, t2) = spec.window;
            if !(t_final > t1 && t_final <= t2) {
                return Err(Error::config(
                    "times",
                    format!("T = {t_final} outside the trained window ({t1}, {t2}]"),
                ));
            }
            let sub = ProblemSpec {
                window: (t1, t_final),
                ..spec.clone()
            };
            let r = sup_error(model, &sub, &eval_times_up_to(grid, t_final), rule)?;
            Ok(TableRow {
                key: t_final,
                e: r.e,
                e_rel: r.e_rel,
            })
        })
        .collect()
}

/// `E_eps` and `E_rel(eps)` for models trained on the regularized problem,
/// all measured against the exact solution on the cylinder of `base`.
pub fn eps_sweep_error(
    models: &[(f64, &dyn Field)],
    base: &ProblemSpec,
    eval_times: &[f64],
    rule: &QuadratureRule,
) -> Result<Vec<TableRow>> {
    if base.id != ProblemId::P1Regularized {
        return Err(Error::config(
            "problem",
            format!("an eps sweep needs P1_regularized, got {}", base.id),
        ));
    }
    models
        .iter()
        .map(|&(eps, model)| {
            let spec = crate::problem::make_problem(
                ProblemId::P1Regularized,
                &ProblemParams {
                    eps: Some(eps),
                    window: Some([base.window.0, base.window.1]),
                    subdomain_radius: Some(base.domain.extent()),
                    ..Default::default()
                },
            )?;
            let r = sup_error(model, &spec, eval_times, rule)?;
            Ok(TableRow {
                key: eps,
                e: r.e,
                e_rel: r.e_rel,
            })
        })
        .collect()
}

/// Writes `key,E,E_rel` rows; `key` is `T` or `eps`.
pub fn write_table_csv<W: Write>(key: &str, rows: &[TableRow], mut w: W) -> Result<()> {
    writeln!(w, "{key},E,E_rel")?;
    for r in rows {
        writeln!(w, "{},{:e},{:e}", r.key, r.e, r.e_rel)?;
    }
    Ok(())
}
