//! Loss assembly and ADAM training.
//!
//! ```text
//! L_F   = mean over interior points of R(x, t)^2
//! L_B   = mean over boundary and initial points of (u_hat - w)^2
//! total = w_F L_F + w_B L_B
//! ```
//!
//! Points are processed in fixed-size chunks. Each chunk produces its own
//! partial sums and parameter gradient, and the partials are added in chunk
//! order, so the result is bitwise independent of the number of threads.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collocation::CollocationSet;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::mlp::{JetLayout, JetWorkspace, Network, NetworkConfig, ParameterVector};
use crate::operator::{residual_parts, residual_with_partials};
use crate::problem::{EvalPoint, ProblemSpec, Role};

/// Points per work unit.
pub const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub physics: f64,
    pub boundary: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            physics: 1.0,
            boundary: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub physics: f64,
    pub boundary: f64,
    pub weights: LossWeights,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(physics: f64, boundary: f64, weights: LossWeights) -> Self {
        Self {
            physics,
            boundary,
            weights,
            total: weights.physics * physics + weights.boundary * boundary,
        }
    }
}

/// Flattened collocation data for one problem.
#[derive(Debug, Clone)]
pub struct Objective {
    net: Network,
    eps: f64,
    d: usize,
    interior: Vec<f64>,
    forcing: Vec<f64>,
    data: Vec<f64>,
    targets: Vec<f64>,
    data_roles: Vec<Role>,
}

enum Task {
    Interior(usize, usize),
    Data(usize, usize),
}

struct Partial {
    physics: f64,
    boundary: f64,
    grad: Vec<f64>,
}

fn flatten(points: &[&EvalPoint], d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len() * d);
    for p in points {
        out.extend_from_slice(&p.x);
        out.push(p.t);
    }
    out
}

fn point_at(flat: &[f64], d: usize, i: usize) -> (Vec<f64>, f64) {
    let z = &flat[i * d..(i + 1) * d];
    (z[..d - 1].to_vec(), z[d - 1])
}

impl Objective {
    pub fn new(spec: &ProblemSpec, colloc: &CollocationSet, net: &Network) -> Result<Self> {
        let d = spec.input_dim();
        if net.input_dim() != d {
            return Err(Error::structural(format!(
                "network takes {} inputs, {} needs {d}",
                net.input_dim(),
                spec.id
            )));
        }
        let interior: Vec<&EvalPoint> = colloc.interior.iter().collect();
        let data: Vec<&EvalPoint> = colloc.data_points().collect();
        let mut forcing = Vec::with_capacity(interior.len());
        for p in &interior {
            let f = spec.forcing(&p.x, p.t);
            if !f.is_finite() {
                return Err(Error::NonFiniteResidual {
                    role: p.role,
                    x: p.x.clone(),
                    t: p.t,
                });
            }
            forcing.push(f);
        }
        let mut targets = Vec::with_capacity(data.len());
        for p in &data {
            let w = spec.data(&p.x, p.t, p.role);
            if !w.is_finite() {
                return Err(Error::NonFiniteResidual {
                    role: p.role,
                    x: p.x.clone(),
                    t: p.t,
                });
            }
            targets.push(w);
        }
        Ok(Self {
            net: net.clone(),
            eps: spec.eps,
            d,
            interior: flatten(&interior, d),
            forcing,
            data: flatten(&data, d),
            targets,
            data_roles: data.iter().map(|p| p.role).collect(),
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn num_interior(&self) -> usize {
        self.forcing.len()
    }

    pub fn num_data(&self) -> usize {
        self.targets.len()
    }

    fn tasks(&self) -> Vec<Task> {
        let mut tasks = Vec::new();
        for s in (0..self.num_interior()).step_by(CHUNK) {
            tasks.push(Task::Interior(s, (s + CHUNK).min(self.num_interior())));
        }
        for s in (0..self.num_data()).step_by(CHUNK) {
            tasks.push(Task::Data(s, (s + CHUNK).min(self.num_data())));
        }
        tasks
    }

    /// For each interior point, whether `|grad u_hat| > 1` there. The
    /// residual jumps when a point changes regime.
    pub fn active_set(&self, theta: &ParameterVector) -> Vec<bool> {
        let d = self.d;
        let n = d - 1;
        let jl = JetLayout::bundle(n);
        let mut ws = JetWorkspace::new(&self.net, jl, CHUNK);
        let mut out = Vec::with_capacity(self.num_interior());
        for chunk in self.interior.chunks(CHUNK * d) {
            ws.forward(&self.net, theta.as_slice(), chunk);
            for p in 0..chunk.len() / d {
                let r2: f64 = (0..n).map(|i| ws.output(jl.grad(i), p).powi(2)).sum();
                out.push(r2 > 1.0);
            }
        }
        out
    }

    pub fn loss(&self, theta: &ParameterVector, weights: LossWeights) -> Result<LossBreakdown> {
        self.evaluate(theta, weights, None)
    }

    /// Loss and its gradient; `grad` is overwritten.
    pub fn loss_and_grad(
        &self,
        theta: &ParameterVector,
        weights: LossWeights,
        grad: &mut [f64],
    ) -> Result<LossBreakdown> {
        self.evaluate(theta, weights, Some(grad))
    }

    fn evaluate(
        &self,
        theta: &ParameterVector,
        weights: LossWeights,
        grad: Option<&mut [f64]>,
    ) -> Result<LossBreakdown> {
        if theta.layout() != self.net.layout() {
            return Err(Error::structural("parameters do not match the network"));
        }
        let with_grad = grad.is_some();
        let n_spatial = self.d - 1;
        let nf = self.num_interior().max(1) as f64;
        let nb = self.num_data().max(1) as f64;
        let sf = 2.0 * weights.physics / nf;
        let sb = 2.0 * weights.boundary / nb;
        let th = theta.as_slice();
        let len = theta.len();

        let partials: Vec<Result<Partial>> = self
            .tasks()
            .par_iter()
            .map_init(
                || {
                    (
                        JetWorkspace::new(&self.net, JetLayout::bundle(n_spatial), CHUNK),
                        JetWorkspace::new(&self.net, JetLayout::value_only(n_spatial), CHUNK),
                    )
                },
                |(jets, vals), task| {
                    let mut out = Partial {
                        physics: 0.0,
                        boundary: 0.0,
                        grad: if with_grad { vec![0.0; len] } else { Vec::new() },
                    };
                    match *task {
                        Task::Interior(s, e) => {
                            self.interior_chunk(jets, th, s, e, sf, with_grad, &mut out)?
                        }
                        Task::Data(s, e) => {
                            self.data_chunk(vals, th, s, e, sb, with_grad, &mut out)?
                        }
                    }
                    Ok(out)
                },
            )
            .collect();

        let mut physics = 0.0;
        let mut boundary = 0.0;
        let mut grad = grad;
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        for part in partials {
            let part = part?;
            physics += part.physics;
            boundary += part.boundary;
            if let Some(g) = grad.as_deref_mut() {
                for (a, b) in g.iter_mut().zip(&part.grad) {
                    *a += b;
                }
            }
        }
        if let Some(g) = grad {
            if let Some(index) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { index });
            }
        }
        Ok(LossBreakdown::new(physics / nf, boundary / nb, weights))
    }

    #[allow(clippy::too_many_arguments)]
    fn interior_chunk(
        &self,
        ws: &mut JetWorkspace,
        theta: &[f64],
        s: usize,
        e: usize,
        scale: f64,
        with_grad: bool,
        out: &mut Partial,
    ) -> Result<()> {
        let d = self.d;
        let n = d - 1;
        let jl = ws.layout();
        ws.forward(&self.net, theta, &self.interior[s * d..e * d]);
        if with_grad {
            ws.reset_adjoint();
        }
        let mut grad = [0.0; 3];
        let mut hess = [0.0; 9];
        for p in 0..e - s {
            for i in 0..n {
                grad[i] = ws.output(jl.grad(i), p);
            }
            for (i, j) in jl.pairs() {
                let v = ws.output(jl.hess(i, j), p);
                hess[i * n + j] = v;
                hess[j * n + i] = v;
            }
            let du_dt = ws.output(jl.time(), p);
            let f = self.forcing[s + p];
            let r = if with_grad {
                let rp = residual_with_partials(du_dt, &grad[..n], &hess[..n * n], f, self.eps);
                let c = scale * rp.value;
                ws.set_adjoint(jl.time(), p, c * rp.du_dt);
                for i in 0..n {
                    ws.set_adjoint(jl.grad(i), p, c * rp.grad[i]);
                }
                for (i, j) in jl.pairs() {
                    let h = if i == j {
                        rp.hess[i * n + i]
                    } else {
                        rp.hess[i * n + j] + rp.hess[j * n + i]
                    };
                    ws.set_adjoint(jl.hess(i, j), p, c * h);
                }
                rp.value
            } else {
                residual_parts(du_dt, &grad[..n], &hess[..n * n], f, self.eps)
            };
            if !r.is_finite() {
                let (x, t) = point_at(&self.interior, d, s + p);
                return Err(Error::NonFiniteResidual {
                    role: Role::Interior,
                    x,
                    t,
                });
            }
            out.physics += r * r;
        }
        if with_grad {
            ws.backward(&self.net, theta, &mut out.grad);
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn data_chunk(
        &self,
        ws: &mut JetWorkspace,
        theta: &[f64],
        s: usize,
        e: usize,
        scale: f64,
        with_grad: bool,
        out: &mut Partial,
    ) -> Result<()> {
        let d = self.d;
        ws.forward(&self.net, theta, &self.data[s * d..e * d]);
        if with_grad {
            ws.reset_adjoint();
        }
        for p in 0..e - s {
            let diff = ws.value(p) - self.targets[s + p];
            if !diff.is_finite() {
                let (x, t) = point_at(&self.data, d, s + p);
                return Err(Error::NonFiniteResidual {
                    role: self.data_roles[s + p],
                    x,
                    t,
                });
            }
            out.boundary += diff * diff;
            if with_grad {
                ws.set_adjoint(JetLayout::VALUE, p, scale * diff);
            }
        }
        if with_grad {
            ws.backward(&self.net, theta, &mut out.grad);
        }
        Ok(())
    }
}

/// Loss of a network on a collocation set.
pub fn compute_loss(
    theta: &ParameterVector,
    net: &Network,
    spec: &ProblemSpec,
    colloc: &CollocationSet,
    weights: LossWeights,
) -> Result<LossBreakdown> {
    Objective::new(spec, colloc, net)?.loss(theta, weights)
}

/// Loss of an arbitrary field, evaluated point by point.
pub fn compute_loss_field(
    field: &dyn Field,
    spec: &ProblemSpec,
    colloc: &CollocationSet,
    weights: LossWeights,
) -> Result<LossBreakdown> {
    let mut physics = 0.0;
    for p in &colloc.interior {
        let b = field.bundle(&p.x, p.t);
        let r = residual_parts(b.du_dt, &b.grad_x, &b.hess_x, spec.forcing(&p.x, p.t), spec.eps);
        if !r.is_finite() {
            return Err(Error::NonFiniteResidual {
                role: p.role,
                x: p.x.clone(),
                t: p.t,
            });
        }
        physics += r * r;
    }
    let mut boundary = 0.0;
    let mut count = 0usize;
    for p in colloc.data_points() {
        let diff = field.value(&p.x, p.t) - spec.data(&p.x, p.t, p.role);
        if !diff.is_finite() {
            return Err(Error::NonFiniteResidual {
                role: p.role,
                x: p.x.clone(),
                t: p.t,
            });
        }
        boundary += diff * diff;
        count += 1;
    }
    Ok(LossBreakdown::new(
        physics / colloc.interior.len().max(1) as f64,
        boundary / count.max(1) as f64,
        weights,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            config,
        }
    }

    /// One in-place update of `theta`.
    pub fn update(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        if theta.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::structural(format!(
                "optimizer holds {} moments, got {} parameters and {} gradients",
                self.m.len(),
                theta.len(),
                grad.len()
            )));
        }
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index });
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step += 1;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((th, g), m), v) in theta
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *th -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::update`].
pub fn adam_step(
    state: &AdamState,
    theta: &ParameterVector,
    grad: &ParameterVector,
) -> Result<(AdamState, ParameterVector)> {
    theta.same_layout(grad)?;
    let mut s = state.clone();
    let mut th = theta.clone();
    s.update(th.as_mut_slice(), grad.as_slice())?;
    Ok((s, th))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub weights: LossWeights,
    /// Worker threads; 1 runs on the calling thread, 0 uses every core.
    pub threads: usize,
    /// Emit an intermediate checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Abort once the total loss exceeds this multiple of its initial value.
    pub divergence_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80_000,
            lr: 3e-3,
            seed: 0,
            weights: LossWeights::default(),
            threads: 1,
            checkpoint_every: 0,
            divergence_factor: 1e6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr", format!("must be positive, got {}", self.lr)));
        }
        for (field, w) in [
            ("train.weights.physics", self.weights.physics),
            ("train.weights.boundary", self.weights.boundary),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::config(field, format!("must be >= 0, got {w}")));
            }
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::config(
                "train.divergence_factor",
                format!("must exceed 1, got {}", self.divergence_factor),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Loss at the start of each epoch, before its update.
    pub history: Vec<LossBreakdown>,
    /// Loss at the returned parameters.
    pub final_loss: LossBreakdown,
    pub params: ParameterVector,
    pub wall_clock_secs: f64,
    pub seed: u64,
    pub config_hash: String,
}

impl TrainReport {
    pub fn initial_loss(&self) -> LossBreakdown {
        self.history.first().copied().unwrap_or(self.final_loss)
    }

    /// Writes `epoch,physics,boundary,total` rows.
    pub fn write_history_csv<W: Write>(&self, w: W) -> Result<()> {
        write_history_csv(&self.history, w)
    }
}

pub fn write_history_csv<W: Write>(history: &[LossBreakdown], mut w: W) -> Result<()> {
    writeln!(w, "epoch,physics,boundary,total")?;
    for (e, l) in history.iter().enumerate() {
        writeln!(w, "{e},{:e},{:e},{:e}", l.physics, l.boundary, l.total)?;
    }
    Ok(())
}

/// Training stopped because the loss blew up.
#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub epoch: usize,
    pub total: f64,
    pub initial: f64,
    pub report: TrainReport,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "training diverged at epoch {}: total loss {:e} against initial {:e}",
            self.epoch, self.total, self.initial
        )
    }
}

/// 64-bit FNV-1a, hex encoded. Stable across platforms and builds.
pub fn stable_hash(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn config_hash(spec: &ProblemSpec, net: &NetworkConfig, cfg: &TrainConfig, colloc: &CollocationSet) -> String {
    // thread count does not change results
    let cfg = TrainConfig { threads: 0, ..cfg.clone() };
    stable_hash(format!("{spec:?}|{net:?}|{cfg:?}|{:?}", colloc.provenance).as_bytes())
}

/// What a training hook is told.
#[derive(Debug)]
pub struct Progress<'a> {
    pub epoch: usize,
    pub loss: &'a LossBreakdown,
    pub params: &'a ParameterVector,
    /// Set on the periodic checkpoint epochs and at the end.
    pub checkpoint: bool,
}

pub fn train(
    spec: &ProblemSpec,
    colloc: &CollocationSet,
    net_config: &NetworkConfig,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    train_with(spec, colloc, net_config, cfg, |_| Ok(()))
}

/// Trains from the seeded initialization, calling `hook` after every epoch.
pub fn train_with<F>(
    spec: &ProblemSpec,
    colloc: &CollocationSet,
    net_config: &NetworkConfig,
    cfg: &TrainConfig,
    hook: F,
) -> Result<TrainReport>
where
    F: FnMut(Progress<'_>) -> Result<()>,
{
    cfg.validate()?;
    let net = net_config.build()?;
    let theta = net.init_params(cfg.seed);
    train_from(spec, colloc, net_config, theta, cfg, hook)
}

/// Trains from given parameters.
pub fn train_from<F>(
    spec: &ProblemSpec,
    colloc: &CollocationSet,
    net_config: &NetworkConfig,
    theta: ParameterVector,
    cfg: &TrainConfig,
    mut hook: F,
) -> Result<TrainReport>
where
    F: FnMut(Progress<'_>) -> Result<()>,
{
    cfg.validate()?;
    let net = net_config.build()?;
    let objective = Objective::new(spec, colloc, &net)?;
    let hash = config_hash(spec, net_config, cfg, colloc);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::config("threads", e))?;
    let start = Instant::now();

    {
        let mut theta = theta;
        let mut grad = vec![0.0; theta.len()];
        let mut adam = AdamState::new(
            theta.len(),
            AdamConfig {
                lr: cfg.lr,
                ..AdamConfig::default()
            },
        );
        let mut history = Vec::with_capacity(cfg.epochs);
        let report = |history: Vec<LossBreakdown>, final_loss, params| TrainReport {
            epochs_run: history.len(),
            history,
            final_loss,
            params,
            wall_clock_secs: start.elapsed().as_secs_f64(),
            seed: cfg.seed,
            config_hash: hash.clone(),
        };

        for epoch in 0..cfg.epochs {
            let loss = pool.install(|| objective.loss_and_grad(&theta, cfg.weights, &mut grad))?;
            let initial = history.first().map_or(loss.total, |l: &LossBreakdown| l.total);
            if !loss.total.is_finite() || loss.total > cfg.divergence_factor * initial {
                let r = report(history, loss, theta);
                return Err(Error::Diverged(Box::new(Divergence {
                    epoch,
                    total: loss.total,
                    initial,
                    report: r,
                })));
            }
            history.push(loss);
            adam.update(theta.as_mut_slice(), &grad)?;
            let checkpoint = epoch + 1 == cfg.epochs
                || cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0;
            hook(Progress {
                epoch,
                loss: &loss,
                params: &theta,
                checkpoint,
            })?;
        }
        let final_loss = pool.install(|| objective.loss(&theta, cfg.weights))?;
        Ok(report(history, final_loss, theta))
    }
}
