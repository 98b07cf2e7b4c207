//! The degenerate flux `H(xi) = (|xi| - 1)+ xi / |xi|` and the strong-form
//! residual
//!
//! ```text
//! R = u_t - tr(DH(grad u) * hess u) - eps * tr(hess u) - f
//! ```
//!
//! which is `u_t - div(H(grad u) + eps grad u) - f` with the divergence
//! expanded. `eps = 0` gives the strongly degenerate equation.
//!
//! `H` vanishes on the closed unit ball. Its Jacobian there is taken to be
//! zero as well, including on the sphere `|xi| = 1` where `H` has a kink; the
//! active branch requires `|xi| > 1` strictly.

use crate::mlp::Bundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `|xi| <= 1`: no diffusion.
    Degenerate,
    /// `|xi| > 1`.
    Active,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientState {
    pub xi: Vec<f64>,
    pub norm: f64,
    pub regime: Regime,
}

impl GradientState {
    pub fn new(xi: &[f64]) -> Self {
        let norm = norm(xi);
        Self {
            xi: xi.to_vec(),
            norm,
            regime: regime(norm),
        }
    }
}

#[inline]
fn norm(xi: &[f64]) -> f64 {
    xi.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[inline]
fn regime(norm: f64) -> Regime {
    if norm > 1.0 {
        Regime::Active
    } else {
        Regime::Degenerate
    }
}

pub fn h_map(xi: &[f64]) -> Vec<f64> {
    let r = norm(xi);
    match regime(r) {
        Regime::Degenerate => vec![0.0; xi.len()],
        Regime::Active => {
            let c = 1.0 - 1.0 / r;
            xi.iter().map(|v| c * v).collect()
        }
    }
}

/// `DH(xi)`, row-major `n x n`:
/// `(1 - 1/|xi|) I + xi xi^T / |xi|^3` when `|xi| > 1`, zero otherwise.
pub fn h_jacobian(xi: &[f64]) -> Vec<f64> {
    let n = xi.len();
    let mut out = vec![0.0; n * n];
    let r = norm(xi);
    if regime(r) == Regime::Active {
        let c = 1.0 - 1.0 / r;
        let r3 = r * r * r;
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = xi[i] * xi[j] / r3 + if i == j { c } else { 0.0 };
            }
        }
    }
    out
}

/// `tr(DH(grad) * hess)`, the expanded `div H(grad u)`. `hess` is row-major.
pub fn divergence_term(grad: &[f64], hess: &[f64]) -> f64 {
    let n = grad.len();
    debug_assert_eq!(hess.len(), n * n);
    let r = norm(grad);
    if regime(r) == Regime::Degenerate {
        return 0.0;
    }
    let trace: f64 = (0..n).map(|i| hess[i * n + i]).sum();
    let quad = quadratic_form(grad, hess);
    (1.0 - 1.0 / r) * trace + quad / (r * r * r)
}

#[inline]
fn quadratic_form(g: &[f64], h: &[f64]) -> f64 {
    let n = g.len();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            q += g[i] * h[i * n + j] * g[j];
        }
    }
    q
}

/// Pointwise residual from raw derivative slices.
pub fn residual_parts(du_dt: f64, grad: &[f64], hess: &[f64], f: f64, eps: f64) -> f64 {
    let n = grad.len();
    let trace: f64 = (0..n).map(|i| hess[i * n + i]).sum();
    du_dt - divergence_term(grad, hess) - eps * trace - f
}

pub fn residual(bundle: &Bundle, f: f64, eps: f64) -> f64 {
    residual_parts(bundle.du_dt, &bundle.grad_x, &bundle.hess_x, f, eps)
}

/// Residual together with its partial derivatives in the network outputs.
///
/// `hess[i][j]` partials are returned for the full matrix; the residual
/// depends on the symmetric part only, so callers storing one triangle
/// should add the `(i, j)` and `(j, i)` entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualPartials {
    pub value: f64,
    pub du_dt: f64,
    pub grad: [f64; 3],
    pub hess: [f64; 9],
}

pub fn residual_with_partials(
    du_dt: f64,
    grad: &[f64],
    hess: &[f64],
    f: f64,
    eps: f64,
) -> ResidualPartials {
    let n = grad.len();
    assert!(n <= 3 && hess.len() == n * n);
    let trace: f64 = (0..n).map(|i| hess[i * n + i]).sum();
    let mut out = ResidualPartials {
        value: 0.0,
        du_dt: 1.0,
        grad: [0.0; 3],
        hess: [0.0; 9],
    };
    for i in 0..n {
        out.hess[i * n + i] = -eps;
    }
    let r = norm(grad);
    let div = if regime(r) == Regime::Active {
        let r3 = r * r * r;
        let r5 = r3 * r * r;
        let c = 1.0 - 1.0 / r;
        let quad = quadratic_form(grad, hess);
        for k in 0..n {
            let hg: f64 = (0..n).map(|j| hess[k * n + j] * grad[j]).sum();
            out.grad[k] = -(grad[k] * trace / r3 + 2.0 * hg / r3 - 3.0 * quad * grad[k] / r5);
        }
        for i in 0..n {
            for j in 0..n {
                let dh = grad[i] * grad[j] / r3 + if i == j { c } else { 0.0 };
                out.hess[i * n + j] -= dh;
            }
        }
        c * trace + quad / r3
    } else {
        0.0
    };
    out.value = du_dt - div - eps * trace - f;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn h_map_examples() {
        assert_eq!(h_map(&[2.0, 0.0]), vec![1.0, 0.0]);
        assert_eq!(h_map(&[0.5, 0.0]), vec![0.0, 0.0]);
        assert_eq!(h_map(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(h_map(&[1.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn gradient_state_regimes() {
        let s = GradientState::new(&[0.6, 0.8]);
        assert_eq!(s.norm, 1.0);
        assert_eq!(s.regime, Regime::Degenerate);
        assert_eq!(GradientState::new(&[3.0, 4.0]).regime, Regime::Active);
    }

    #[test]
    fn jacobian_examples() {
        assert_eq!(h_jacobian(&[2.0, 0.0]), vec![1.0, 0.0, 0.0, 0.5]);
        assert_eq!(h_jacobian(&[0.3, 0.4]), vec![0.0; 4]);
        assert_eq!(h_jacobian(&[1.0, 0.0]), vec![0.0; 4]);
    }

    #[test]
    fn jacobian_example_matches_finite_differences() {
        let xi = [2.0, 0.0];
        let j = h_jacobian(&xi);
        let h = 1e-6;
        for c in 0..2 {
            let mut p = xi;
            let mut m = xi;
            p[c] += h;
            m[c] -= h;
            let (hp, hm) = (h_map(&p), h_map(&m));
            for r in 0..2 {
                let fd = (hp[r] - hm[r]) / (2.0 * h);
                assert!((fd - j[r * 2 + c]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn residual_of_p1_exact_in_degenerate_region() {
        let r = residual_parts(1.0, &[0.3, 0.4], &[1.0, 0.0, 0.0, 1.0], 1.0, 0.0);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn residual_of_zero_bundle_is_zero() {
        for eps in [0.0, 1e-3, 0.5] {
            assert_eq!(residual_parts(0.0, &[0.0, 0.0], &[0.0; 4], 0.0, eps), 0.0);
        }
    }

    #[test]
    fn residual_of_p2_exact_in_active_region() {
        // u = t r^{2a}: grad = 2a t r^{2a-2} x, hess = 2a t r^{2a-2} (I + (2a-2) x x^T / r^2)
        let (alpha, t) = (1.3_f64, 2.0_f64);
        let x = [0.6, -0.5];
        let r2: f64 = x[0] * x[0] + x[1] * x[1];
        let r = r2.sqrt();
        let k = 2.0 * alpha * t * r.powf(2.0 * alpha - 2.0);
        assert!(k * r > 1.0);
        let grad = [k * x[0], k * x[1]];
        let mut hess = [0.0; 4];
        for i in 0..2 {
            for j in 0..2 {
                hess[i * 2 + j] = k
                    * ((if i == j { 1.0 } else { 0.0 }) + (2.0 * alpha - 2.0) * x[i] * x[j] / r2);
            }
        }
        let f = r.powf(2.0 * alpha) - 4.0 * alpha * alpha * t * r.powf(2.0 * alpha - 2.0) + 1.0 / r;
        let res = residual_parts(r.powf(2.0 * alpha), &grad, &hess, f, 0.0);
        assert!(res.abs() < 1e-12, "{res}");
    }

    #[test]
    fn eps_enters_linearly() {
        let grad = [1.7, -0.4];
        let hess = [0.3, 0.2, 0.2, -1.1];
        for eps in [1e-9, 1e-3, 0.7] {
            let diff = residual_parts(0.4, &grad, &hess, 0.1, eps)
                - residual_parts(0.4, &grad, &hess, 0.1, 0.0);
            assert!((diff + eps * (0.3 - 1.1)).abs() < 1e-15);
        }
    }

    #[test]
    fn partials_match_finite_differences() {
        let grad = [1.3, -0.9, 0.4];
        let hess = [0.5, 0.1, -0.2, 0.1, -0.7, 0.3, -0.2, 0.3, 1.1];
        let p = residual_with_partials(0.2, &grad, &hess, 0.3, 1e-2);
        assert_eq!(p.value, residual_parts(0.2, &grad, &hess, 0.3, 1e-2));
        let h = 1e-6;
        for k in 0..3 {
            let mut gp = grad;
            let mut gm = grad;
            gp[k] += h;
            gm[k] -= h;
            let fd = (residual_parts(0.2, &gp, &hess, 0.3, 1e-2)
                - residual_parts(0.2, &gm, &hess, 0.3, 1e-2))
                / (2.0 * h);
            assert!((fd - p.grad[k]).abs() < 1e-7, "grad {k}: {fd} vs {}", p.grad[k]);
        }
        for e in 0..9 {
            let mut hp = hess;
            let mut hm = hess;
            hp[e] += h;
            hm[e] -= h;
            let fd = (residual_parts(0.2, &grad, &hp, 0.3, 1e-2)
                - residual_parts(0.2, &grad, &hm, 0.3, 1e-2))
                / (2.0 * h);
            assert!((fd - p.hess[e]).abs() < 1e-7);
        }
    }

    fn vec2() -> impl Strategy<Value = [f64; 2]> {
        [-4.0..4.0f64, -4.0..4.0f64]
    }

    proptest! {
        #[test]
        fn h_norm_is_positive_part(xi in vec2()) {
            let h = h_map(&xi);
            let n = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
            let hn = (h[0] * h[0] + h[1] * h[1]).sqrt();
            prop_assert!((hn - (n - 1.0).max(0.0)).abs() <= 1e-15 * n.max(1.0));
        }

        #[test]
        fn residual_is_linear_in_hessian(
            g in vec2(),
            a in [-2.0..2.0f64, -2.0..2.0, -2.0..2.0],
            b in [-2.0..2.0f64, -2.0..2.0, -2.0..2.0],
            s in -3.0..3.0f64,
        ) {
            let ha = [a[0], a[1], a[1], a[2]];
            let hb = [b[0], b[1], b[1], b[2]];
            let hs: Vec<f64> = ha.iter().zip(&hb).map(|(x, y)| x + s * y).collect();
            let r = |h: &[f64]| residual_parts(0.0, &g, h, 0.0, 0.1);
            let lhs = r(&hs);
            let rhs = r(&ha) + s * r(&hb);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
