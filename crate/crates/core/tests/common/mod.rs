//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use leibenson_pinn::autodiff::{Tape, Var};
use leibenson_pinn::collocation::CollocationSet;
use leibenson_pinn::mlp::{Network, ParameterVector};
use leibenson_pinn::problem::{Domain, ProblemId, ProblemSpec};
use leibenson_pinn::trainer::{LossWeights, Objective};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform sample of the open domain by rejection from its bounding box.
pub fn sample_domain(domain: &Domain, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let h = domain.extent();
    loop {
        let x: Vec<f64> = (0..domain.dim()).map(|_| rng.gen_range(-h..h)).collect();
        if domain.contains(&x) {
            return x;
        }
    }
}

/// Interior point away from the sets where the exact solution is not smooth:
/// the origin and the branch interface for P2/P5, the crease `x = 0` for P3.
pub fn sample_admissible(spec: &ProblemSpec, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    let (t1, t2) = spec.window;
    loop {
        let x = sample_domain(&spec.domain, rng);
        let t = rng.gen_range(t1..t2);
        let ok = match spec.id {
            ProblemId::P2 | ProblemId::P5 => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let ind = spec.branch_indicator(&x, t).unwrap();
                r >= 1e-3 && (ind - 1.0).abs() > 1e-6
            }
            ProblemId::P3 => x[0].abs() >= 1e-3,
            _ => true,
        };
        if ok {
            return (x, t);
        }
    }
}

/// Central difference of `f` along coordinate `i`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, z: &[f64], i: usize, h: f64) -> f64 {
    let mut a = z.to_vec();
    let mut b = z.to_vec();
    a[i] += h;
    b[i] -= h;
    (f(&a) - f(&b)) / (2.0 * h)
}

/// Eigenvalues of a small symmetric row-major matrix by cyclic Jacobi
/// rotations.
pub fn sym_eigenvalues(m: &[f64], n: usize) -> Vec<f64> {
    let mut a = m.to_vec();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j].powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

/// The network rebuilt from tape primitives: tanh hidden layers, linear
/// output, weights stored row-major per layer followed by the biases.
pub fn tape_network<'t>(sizes: &[usize], params: &[Var<'t>], z: &[Var<'t>]) -> Var<'t> {
    let mut h: Vec<Var<'t>> = z.to_vec();
    let mut off = 0;
    let layers = sizes.len() - 1;
    for l in 0..layers {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let w = &params[off..off + fan_in * fan_out];
        let b = &params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        off += fan_in * fan_out + fan_out;
        h = (0..fan_out)
            .map(|o| {
                let mut a = b[o];
                for i in 0..fan_in {
                    a = a + w[o * fan_in + i] * h[i];
                }
                if l + 1 < layers {
                    a.tanh()
                } else {
                    a
                }
            })
            .collect();
    }
    h[0]
}

/// Residual of the network at `(x, t)` built from the flux itself:
/// `H = (|g| - 1)_+ g / |g|`, then `div H` by differentiating each component
/// of `H` along its own coordinate. Shares nothing with the closed-form
/// Jacobian used by the trainer.
pub fn tape_residual<'t>(
    tape: &'t Tape,
    sizes: &[usize],
    params: &[Var<'t>],
    x: &[f64],
    t: f64,
    f: f64,
    eps: f64,
) -> Var<'t> {
    let n = x.len();
    let mut z: Vec<Var<'t>> = x.iter().map(|&v| tape.constant(v)).collect();
    z.push(tape.constant(t));
    let u = tape_network(sizes, params, &z);
    let du = u.grad(&z);
    let g = &du[..n];
    let r2 = g.iter().fold(tape.constant(0.0), |acc, &gi| acc + gi * gi);
    let r = r2.sqrt();
    let coef = (r - 1.0).pos_part() / r;
    let mut div = tape.constant(0.0);
    for i in 0..n {
        let flux = coef * g[i] + eps * g[i];
        div = div + flux.grad(&z[i..i + 1])[0];
    }
    du[n] - div - f
}

/// Loss and parameter gradient through the tape, one point at a time.
pub fn tape_loss(
    net: &Network,
    theta: &ParameterVector,
    spec: &ProblemSpec,
    colloc: &CollocationSet,
    weights: LossWeights,
) -> (f64, Vec<f64>) {
    let sizes = net.layout().sizes().to_vec();
    let nf = colloc.interior.len() as f64;
    let data: Vec<_> = colloc.data_points().collect();
    let nb = data.len() as f64;
    let tape = Tape::new();
    let params = tape.inputs(theta.len());
    let mut phys = tape.constant(0.0);
    for p in &colloc.interior {
        let f = spec.forcing(&p.x, p.t);
        let r = tape_residual(&tape, &sizes, &params, &p.x, p.t, f, spec.eps);
        phys = phys + r * r;
    }
    let mut bnd = tape.constant(0.0);
    for p in &data {
        let mut z: Vec<Var<'_>> = p.x.iter().map(|&v| tape.constant(v)).collect();
        z.push(tape.constant(p.t));
        let d = tape_network(&sizes, &params, &z) - spec.data(&p.x, p.t, p.role);
        bnd = bnd + d * d;
    }
    let total = phys * (weights.physics / nf) + bnd * (weights.boundary / nb);
    let values = tape.forward(theta.as_slice()).unwrap();
    let adj = tape.backward(&values, total.id()).unwrap();
    let grad = params.iter().map(|p| adj[p.id().index()]).collect();
    (values[total.id().index()], grad)
}

/// Outcome of a finite-difference check of the loss gradient.
#[derive(Debug, Clone)]
pub struct FdCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub step: f64,
}

impl FdCheck {
    pub fn rel_err(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }
}

/// Central differences of the total loss along `indices`. The residual jumps
/// when a point changes regime, so the step shrinks until no interior point
/// changes regime across the stencil.
pub fn fd_check_loss(
    obj: &Objective,
    theta: &ParameterVector,
    weights: LossWeights,
    indices: &[usize],
) -> Vec<FdCheck> {
    let mut grad = vec![0.0; theta.len()];
    obj.loss_and_grad(theta, weights, &mut grad).unwrap();
    indices
        .iter()
        .map(|&i| {
            let scale = theta.as_slice()[i].abs().max(1.0);
            let mut h = 1e-6 * scale;
            loop {
                let mut plus = theta.clone();
                let mut minus = theta.clone();
                plus.as_mut_slice()[i] += h;
                minus.as_mut_slice()[i] -= h;
                let smooth = obj.active_set(&plus) == obj.active_set(&minus);
                if smooth || h < 1e-10 * scale {
                    let lp = obj.loss(&plus, weights).unwrap().total;
                    let lm = obj.loss(&minus, weights).unwrap().total;
                    return FdCheck {
                        index: i,
                        analytic: grad[i],
                        numeric: (lp - lm) / (2.0 * h),
                        step: h,
                    };
                }
                h /= 10.0;
            }
        })
        .collect()
}
