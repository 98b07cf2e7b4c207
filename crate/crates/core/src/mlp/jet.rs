//! Batched second-order jets through the network.
//!
//! Every neuron carries a small vector of channels for each point of a batch:
//! its value, its first derivatives with respect to the space-time inputs,
//! and its second derivatives with respect to pairs of spatial inputs. Affine
//! layers act linearly on all channels (only the value channel receives the
//! bias), so a layer is one matrix product over `channels * batch` columns.
//! Activations apply the chain rule per point:
//!
//! ```text
//! h     = phi(a)
//! h_i   = phi'(a) a_i
//! h_ij  = phi'(a) a_ij + phi''(a) a_i a_j
//! ```
//!
//! [`JetWorkspace::backward`] is the adjoint of that forward pass. It turns
//! adjoints of the output channels (for example `dLoss/du_t`, `dLoss/du_xx`)
//! into the gradient with respect to the flat parameter vector.
//!
//! Matrices are row-major `width x (channels * batch)`; the column of channel
//! `c` for point `p` is `c * batch + p`.

use super::Network;

/// Largest supported number of spatial dimensions.
pub const MAX_SPATIAL: usize = 3;

/// Which channels a jet carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JetLayout {
    n_spatial: usize,
    derivs: bool,
}

impl JetLayout {
    /// Value only, for boundary and initial points.
    pub fn value_only(n_spatial: usize) -> Self {
        assert!(n_spatial <= MAX_SPATIAL);
        Self {
            n_spatial,
            derivs: false,
        }
    }

    /// Value, spatial gradient, time derivative and spatial Hessian.
    pub fn bundle(n_spatial: usize) -> Self {
        assert!(n_spatial <= MAX_SPATIAL);
        Self {
            n_spatial,
            derivs: true,
        }
    }

    pub fn n_spatial(&self) -> usize {
        self.n_spatial
    }

    pub fn has_derivs(&self) -> bool {
        self.derivs
    }

    pub fn num_pairs(&self) -> usize {
        self.n_spatial * (self.n_spatial + 1) / 2
    }

    pub fn channels(&self) -> usize {
        if self.derivs {
            2 + self.n_spatial + self.num_pairs()
        } else {
            1
        }
    }

    pub const VALUE: usize = 0;

    pub fn grad(&self, i: usize) -> usize {
        1 + i
    }

    pub fn time(&self) -> usize {
        1 + self.n_spatial
    }

    /// Channel of the second derivative in spatial directions `i <= j`.
    pub fn hess(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let n = self.n_spatial;
        debug_assert!(j < n, "pair ({i}, {j}) outside {n} dimensions");
        // upper-triangle pairs enumerated row by row
        2 + n + i * n - i * i.saturating_sub(1) / 2 + (j - i)
    }

    /// Spatial index pairs `(i, j)`, `i <= j`, in channel order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n_spatial;
        (0..n).flat_map(move |i| (i..n).map(move |j| (i, j)))
    }
}

/// Network value and the input-derivatives the residual consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub value: f64,
    pub du_dt: f64,
    pub grad_x: Vec<f64>,
    /// Row-major `n x n`, symmetric.
    pub hess_x: Vec<f64>,
}

impl Bundle {
    pub fn n(&self) -> usize {
        self.grad_x.len()
    }

    pub fn hess(&self, i: usize, j: usize) -> f64 {
        self.hess_x[i * self.n() + j]
    }
}

/// Scratch buffers for one batch of points.
#[derive(Debug, Clone)]
pub struct JetWorkspace {
    layout: JetLayout,
    batch: usize,
    cols: usize,
    input_dim: usize,
    len: usize,
    /// `pre[l]` = affine output of layer `l`; the last entry is the network output.
    pre: Vec<Vec<f64>>,
    /// `post[0]` = input jets, `post[l + 1]` = activation of `pre[l]`.
    post: Vec<Vec<f64>>,
    adj_out: Vec<f64>,
    adj_a: Vec<f64>,
    adj_b: Vec<f64>,
}

impl JetWorkspace {
    pub fn new(net: &Network, layout: JetLayout, batch: usize) -> Self {
        assert!(batch > 0);
        let sizes = net.layout().sizes();
        assert_eq!(sizes.last(), Some(&1), "jets need a scalar output");
        assert_eq!(sizes[0], layout.n_spatial + 1, "input is (x, t)");
        let cols = layout.channels() * batch;
        let widest = *sizes.iter().max().unwrap();
        Self {
            layout,
            batch,
            cols,
            input_dim: sizes[0],
            len: 0,
            pre: sizes[1..].iter().map(|&w| vec![0.0; w * cols]).collect(),
            post: sizes[..sizes.len() - 1]
                .iter()
                .map(|&w| vec![0.0; w * cols])
                .collect(),
            adj_out: vec![0.0; cols],
            adj_a: vec![0.0; widest * cols],
            adj_b: vec![0.0; widest * cols],
        }
    }

    pub fn layout(&self) -> JetLayout {
        self.layout
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Number of points loaded by the last [`forward`](Self::forward).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Evaluates jets at up to `batch` points given as a flat list of
    /// `input_dim` coordinates per point.
    pub fn forward(&mut self, net: &Network, theta: &[f64], points: &[f64]) {
        let d = self.input_dim;
        let len = points.len() / d;
        assert!(len * d == points.len() && len <= self.batch);
        self.len = len;
        let (b, cols) = (self.batch, self.cols);
        let jl = self.layout;

        let input = &mut self.post[0];
        input.fill(0.0);
        let mut scaled = [0.0; MAX_SPATIAL + 1];
        for p in 0..len {
            net.scaled_input(&points[p * d..(p + 1) * d], &mut scaled[..d]);
            for k in 0..d {
                input[k * cols + p] = scaled[k];
            }
        }
        if jl.derivs {
            for k in 0..d {
                let scale = net.scaling().map_or(1.0, |s| s.scale[k]);
                let ch = if k + 1 == d { jl.time() } else { jl.grad(k) };
                input[k * cols + ch * b..k * cols + ch * b + len].fill(scale);
            }
        }

        let layout = net.layout();
        let last = layout.num_layers() - 1;
        for l in 0..=last {
            let (fan_in, fan_out) = layout.shape(l);
            let w = &theta[layout.weights(l)];
            let bias = &theta[layout.biases(l)];
            let a = &mut self.pre[l];
            gemm(
                fan_out,
                fan_in,
                cols,
                Mat::row_major(w, fan_in),
                Mat::row_major(&self.post[l], cols),
                0.0,
                a,
                cols,
            );
            for o in 0..fan_out {
                for v in &mut a[o * cols..o * cols + b] {
                    *v += bias[o];
                }
            }
            if l < last {
                let (pre, post) = (&self.pre[l], &mut self.post[l + 1]);
                for o in 0..fan_out {
                    let row = o * cols;
                    activate_row(
                        net.activation(),
                        jl,
                        b,
                        &pre[row..row + cols],
                        &mut post[row..row + cols],
                    );
                }
            }
        }
    }

    /// Output channel `c` at point `p` of the last forward pass.
    #[inline]
    pub fn output(&self, channel: usize, p: usize) -> f64 {
        self.pre.last().unwrap()[channel * self.batch + p]
    }

    pub fn value(&self, p: usize) -> f64 {
        self.output(JetLayout::VALUE, p)
    }

    pub fn bundle(&self, p: usize) -> Bundle {
        let jl = self.layout;
        assert!(jl.derivs, "workspace carries values only");
        let n = jl.n_spatial;
        let mut hess_x = vec![0.0; n * n];
        for (i, j) in jl.pairs() {
            let v = self.output(jl.hess(i, j), p);
            hess_x[i * n + j] = v;
            hess_x[j * n + i] = v;
        }
        Bundle {
            value: self.value(p),
            du_dt: self.output(jl.time(), p),
            grad_x: (0..n).map(|i| self.output(jl.grad(i), p)).collect(),
            hess_x,
        }
    }

    /// Clears the output adjoints before a new backward pass.
    pub fn reset_adjoint(&mut self) {
        self.adj_out.fill(0.0);
    }

    /// Sets `dLoss / d(output channel c at point p)`.
    #[inline]
    pub fn set_adjoint(&mut self, channel: usize, p: usize, value: f64) {
        self.adj_out[channel * self.batch + p] = value;
    }

    /// Accumulates the parameter gradient implied by the output adjoints
    /// into `grad`. Requires the buffers of the preceding forward pass.
    pub fn backward(&mut self, net: &Network, theta: &[f64], grad: &mut [f64]) {
        let layout = net.layout();
        let last = layout.num_layers() - 1;
        let (b, cols) = (self.batch, self.cols);
        let jl = self.layout;

        // adj_a holds the adjoint of pre[l]; start at the output layer.
        self.adj_a[..cols].copy_from_slice(&self.adj_out);
        for l in (0..=last).rev() {
            let (fan_in, fan_out) = layout.shape(l);
            let adj_pre = &self.adj_a[..fan_out * cols];
            let prev = &self.post[l];

            gemm(
                fan_out,
                cols,
                fan_in,
                Mat::row_major(adj_pre, cols),
                Mat::transposed(prev, cols),
                1.0,
                &mut grad[layout.weights(l)],
                fan_in,
            );
            let gb = &mut grad[layout.biases(l)];
            for o in 0..fan_out {
                gb[o] += adj_pre[o * cols..o * cols + b].iter().sum::<f64>();
            }
            if l == 0 {
                break;
            }

            let w = &theta[layout.weights(l)];
            gemm(
                fan_in,
                fan_out,
                cols,
                Mat::transposed(w, fan_in),
                Mat::row_major(adj_pre, cols),
                0.0,
                &mut self.adj_b[..fan_in * cols],
                cols,
            );
            // adj_b = adjoint of post[l]; map back through the activation.
            let pre = &self.pre[l - 1];
            let post = &self.post[l];
            for o in 0..fan_in {
                let row = o * cols;
                activate_row_adjoint(
                    net.activation(),
                    jl,
                    b,
                    &pre[row..row + cols],
                    &post[row..row + cols],
                    &self.adj_b[row..row + cols],
                    &mut self.adj_a[row..row + cols],
                );
            }
        }
    }
}

fn activate_row(
    act: super::Activation,
    jl: JetLayout,
    b: usize,
    pre: &[f64],
    post: &mut [f64],
) {
    let (a0, rest) = pre.split_at(b);
    let (h0, hrest) = post.split_at_mut(b);
    if !jl.derivs {
        for p in 0..b {
            h0[p] = act.apply(a0[p]);
        }
        return;
    }
    let n = jl.n_spatial;
    let mut d1 = [0.0; 64];
    let mut d2 = [0.0; 64];
    for start in (0..b).step_by(64) {
        let end = (start + 64).min(b);
        for p in start..end {
            let (s, g1, g2, _) = act.derivs(a0[p]);
            h0[p] = s;
            d1[p - start] = g1;
            d2[p - start] = g2;
        }
        // first-order channels (spatial gradient and time)
        for c in 1..=n + 1 {
            let a = &rest[(c - 1) * b..c * b];
            let h = &mut hrest[(c - 1) * b..c * b];
            for p in start..end {
                h[p] = d1[p - start] * a[p];
            }
        }
        for (i, j) in jl.pairs() {
            let c = jl.hess(i, j);
            let ai = &rest[(jl.grad(i) - 1) * b..jl.grad(i) * b];
            let aj = &rest[(jl.grad(j) - 1) * b..jl.grad(j) * b];
            let aij = &rest[(c - 1) * b..c * b];
            let h = &mut hrest[(c - 1) * b..c * b];
            for p in start..end {
                let k = p - start;
                h[p] = d1[k] * aij[p] + d2[k] * ai[p] * aj[p];
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn activate_row_adjoint(
    act: super::Activation,
    jl: JetLayout,
    b: usize,
    pre: &[f64],
    post: &[f64],
    adj_post: &[f64],
    adj_pre: &mut [f64],
) {
    let mut d1 = [0.0; 64];
    let mut d2 = [0.0; 64];
    let mut d3 = [0.0; 64];
    let n = jl.n_spatial;
    for start in (0..b).step_by(64) {
        let end = (start + 64).min(b);
        let k = end - start;
        for p in start..end {
            let (_, g1, g2, g3) = derivs_from(act, pre[p], post[p]);
            d1[p - start] = g1;
            d2[p - start] = g2;
            d3[p - start] = g3;
        }
        let (d1, d2, d3) = (&d1[..k], &d2[..k], &d3[..k]);
        let row = |c: usize| c * b + start..c * b + end;
        {
            let (ap, ab) = (&mut adj_pre[row(0)], &adj_post[row(0)]);
            for q in 0..k {
                ap[q] = ab[q] * d1[q];
            }
        }
        if !jl.derivs {
            continue;
        }
        // first-order channels: h_i = phi' a_i
        for c in 1..=n + 1 {
            let (a, hb) = (&pre[row(c)], &adj_post[row(c)]);
            let mut abar = [0.0; 64];
            {
                let ap = &mut adj_pre[row(c)];
                for q in 0..k {
                    ap[q] = hb[q] * d1[q];
                    abar[q] = hb[q] * d2[q] * a[q];
                }
            }
            let a0 = &mut adj_pre[row(0)];
            for q in 0..k {
                a0[q] += abar[q];
            }
        }
        // second-order channels: h_ij = phi' a_ij + phi'' a_i a_j
        for (i, j) in jl.pairs() {
            let c = jl.hess(i, j);
            let (gi, gj) = (jl.grad(i), jl.grad(j));
            let mut abar = [0.0; 64];
            let mut ai_bar = [0.0; 64];
            let mut aj_bar = [0.0; 64];
            {
                let (aij, ai, aj, hb) = (&pre[row(c)], &pre[row(gi)], &pre[row(gj)], &adj_post[row(c)]);
                let ap = &mut adj_pre[row(c)];
                for q in 0..k {
                    ap[q] = hb[q] * d1[q];
                    abar[q] = hb[q] * (d2[q] * aij[q] + d3[q] * ai[q] * aj[q]);
                    ai_bar[q] = hb[q] * d2[q] * aj[q];
                    aj_bar[q] = hb[q] * d2[q] * ai[q];
                }
            }
            for (ch, add) in [(0, &abar), (gi, &ai_bar), (gj, &aj_bar)] {
                let ap = &mut adj_pre[row(ch)];
                for q in 0..k {
                    ap[q] += add[q];
                }
            }
        }
    }
}

#[inline]
fn derivs_from(act: super::Activation, a: f64, s: f64) -> (f64, f64, f64, f64) {
    match act {
        super::Activation::Tanh => {
            let d1 = 1.0 - s * s;
            let d2 = -2.0 * s * d1;
            let d3 = d1 * (6.0 * s * s - 2.0);
            (s, d1, d2, d3)
        }
        super::Activation::Identity => act.derivs(a),
    }
}

struct Mat<'a> {
    data: &'a [f64],
    rs: isize,
    cs: isize,
}

impl<'a> Mat<'a> {
    fn row_major(data: &'a [f64], stride: usize) -> Self {
        Self {
            data,
            rs: stride as isize,
            cs: 1,
        }
    }

    /// Transpose of a row-major matrix with row stride `stride`.
    fn transposed(data: &'a [f64], stride: usize) -> Self {
        Self {
            data,
            rs: 1,
            cs: stride as isize,
        }
    }
}

/// `c = a * b + beta * c` with `a: m x k`, `b: k x n`, `c` row-major `m x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: Mat<'_>, b: Mat<'_>, beta: f64, c: &mut [f64], ldc: usize) {
    let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows as isize - 1) * rs + (cols as isize - 1) * cs + 1
        }
    };
    assert!(a.data.len() as isize >= span(m, k, a.rs, a.cs));
    assert!(b.data.len() as isize >= span(k, n, b.rs, b.cs));
    assert!(c.len() as isize >= span(m, n, ldc as isize, 1));
    // SAFETY: the asserts above bound every element the kernel touches.
    // gemm computes dst = alpha * dst + beta * lhs * rhs.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            c.as_mut_ptr(),
            1,
            ldc as isize,
            beta != 0.0,
            a.data.as_ptr(),
            a.cs,
            a.rs,
            b.data.as_ptr(),
            b.cs,
            b.rs,
            beta,
            1.0,
            false,
            false,
            false,
            gemm::Parallelism::None,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Activation, Network, NetworkConfig, ParameterVector};
    use super::*;

    #[test]
    fn channel_indices() {
        let jl = JetLayout::bundle(2);
        assert_eq!(jl.channels(), 7);
        assert_eq!((jl.grad(0), jl.grad(1), jl.time()), (1, 2, 3));
        assert_eq!((jl.hess(0, 0), jl.hess(0, 1), jl.hess(1, 0), jl.hess(1, 1)), (4, 5, 5, 6));
        let jl3 = JetLayout::bundle(3);
        assert_eq!(jl3.channels(), 11);
        let chans: Vec<usize> = jl3.pairs().map(|(i, j)| jl3.hess(i, j)).collect();
        assert_eq!(chans, (5..11).collect::<Vec<_>>());
        assert_eq!(JetLayout::value_only(3).channels(), 1);
    }

    #[test]
    fn batched_values_match_pointwise() {
        let net = NetworkConfig::default().build().unwrap();
        let theta = net.init_params(11);
        let pts = [0.1, 0.2, 0.3, -0.7, 0.5, 2.0, 0.0, 0.0, 0.0];
        for jl in [JetLayout::value_only(2), JetLayout::bundle(2)] {
            let mut ws = JetWorkspace::new(&net, jl, 4);
            ws.forward(&net, theta.as_slice(), &pts);
            for p in 0..3 {
                let direct = net.evaluate(&theta, &pts[p * 3..p * 3 + 3]).unwrap();
                assert!((ws.value(p) - direct).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn identity_activation_has_constant_gradient() {
        let net = Network::from_sizes(&[3, 4, 1], Activation::Identity).unwrap();
        let theta: ParameterVector = net.init_params(2);
        let b1 = net.evaluate_bundle(&theta, &[0.1, 0.2, 0.3]).unwrap();
        let b2 = net.evaluate_bundle(&theta, &[-1.0, 5.0, 2.0]).unwrap();
        assert!((b1.grad_x[0] - b2.grad_x[0]).abs() < 1e-14);
        assert!(b1.hess_x.iter().all(|v| v.abs() < 1e-15));
    }
}
