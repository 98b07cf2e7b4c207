//! Space-time scalar fields: a trained network, an exact solution, or any
//! other surrogate a test wants to inject.

use crate::mlp::{Bundle, JetLayout, JetWorkspace, Network, ParameterVector};
use crate::problem::ProblemSpec;

/// A function `u(x, t)` with access to the derivatives the residual needs.
pub trait Field: Sync {
    fn spatial_dim(&self) -> usize;

    fn value(&self, x: &[f64], t: f64) -> f64;

    fn bundle(&self, x: &[f64], t: f64) -> Bundle;

    /// Values at a flat list of `(x, t)` points.
    fn values(&self, points: &[f64], out: &mut [f64]) {
        let d = self.spatial_dim() + 1;
        for (z, o) in points.chunks_exact(d).zip(out.iter_mut()) {
            *o = self.value(&z[..d - 1], z[d - 1]);
        }
    }
}

/// The exact solution of a problem.
#[derive(Debug, Clone, Copy)]
pub struct ExactField<'a>(pub &'a ProblemSpec);

impl Field for ExactField<'_> {
    fn spatial_dim(&self) -> usize {
        self.0.dim()
    }

    fn value(&self, x: &[f64], t: f64) -> f64 {
        self.0.exact(x, t).expect("problem has an exact solution")
    }

    fn bundle(&self, x: &[f64], t: f64) -> Bundle {
        let d = self.0.exact_derivs(x, t).expect("problem has an exact solution");
        Bundle {
            value: d.value,
            du_dt: d.du_dt,
            grad_x: d.grad,
            hess_x: d.hess,
        }
    }
}

/// A network with fixed parameters.
#[derive(Debug, Clone, Copy)]
pub struct NetworkField<'a> {
    pub net: &'a Network,
    pub params: &'a ParameterVector,
}

const BATCH: usize = 256;

impl Field for NetworkField<'_> {
    fn spatial_dim(&self) -> usize {
        self.net.input_dim() - 1
    }

    fn value(&self, x: &[f64], t: f64) -> f64 {
        let mut z = x.to_vec();
        z.push(t);
        self.net.evaluate(self.params, &z).expect("input matches the network")
    }

    fn bundle(&self, x: &[f64], t: f64) -> Bundle {
        let mut z = x.to_vec();
        z.push(t);
        self.net
            .evaluate_bundle(self.params, &z)
            .expect("input matches the network")
    }

    fn values(&self, points: &[f64], out: &mut [f64]) {
        let d = self.net.input_dim();
        let mut ws = JetWorkspace::new(self.net, JetLayout::value_only(d - 1), BATCH);
        for (chunk, o) in points.chunks(BATCH * d).zip(out.chunks_mut(BATCH)) {
            ws.forward(self.net, self.params.as_slice(), chunk);
            for (p, v) in o.iter_mut().enumerate() {
                *v = ws.value(p);
            }
        }
    }
}
