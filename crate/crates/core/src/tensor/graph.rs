//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node whose inputs are earlier nodes, so the tape is
//! topologically ordered by construction and the backward sweep is a single
//! reverse pass.

use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};

use super::kernels::{self, ConvShape};
use super::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf { tracked: bool },
    Conv2d { x: Var, w: Var, b: Var, shape: ConvShape },
    ConvTranspose2d { x: Var, w: Var, b: Var, shape: ConvShape },
    Relu(Var),
    Abs(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    WindowMean { x: Var, size: usize },
    NeighborDiff { x: Var, dy: isize, dx: isize },
    Upsample2x(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf { .. } => vec![],
            Op::Conv2d { x, w, b, .. } | Op::ConvTranspose2d { x, w, b, .. } => vec![x, w, b],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![a, b],
            Op::Relu(a)
            | Op::Abs(a)
            | Op::AddScalar(a)
            | Op::Scale(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Upsample2x(a)
            | Op::WindowMean { x: a, .. }
            | Op::NeighborDiff { x: a, .. } => vec![a],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    /// Whether any tracked leaf reaches this node.
    tracked: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients from one backward sweep, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros if `v` did not
    /// influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf whose gradient is wanted.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf { tracked: true }, true)
    }

    /// Leaf treated as a constant; backward never produces its gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf { tracked: false }, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        debug_assert!(op.inputs().iter().all(|i| i.0 < self.nodes.len()));
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor, op: Op) -> Var {
        let tracked = op.inputs().iter().any(|i| self.nodes[i.0].tracked);
        self.push(value, op, tracked)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let shape = ConvShape::conv2d(self.value(x), self.value(w), self.value(b), stride, padding)?;
        let y = kernels::conv2d_forward(self.value(x), self.value(w), self.value(b), &shape);
        Ok(self.record(y, Op::Conv2d { x, w, b, shape }))
    }

    /// Transposed convolution; `output_padding` extends the bottom/right
    /// edge so stride-2 layers can hit even target extents exactly.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var> {
        let shape = ConvShape::conv_transpose2d(
            self.value(x),
            self.value(w),
            self.value(b),
            stride,
            padding,
            output_padding,
        )?;
        let y = kernels::conv_transpose2d_forward(self.value(x), self.value(w), self.value(b), &shape);
        Ok(self.record(y, Op::ConvTranspose2d { x, w, b, shape }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(0.0));
        self.record(y, Op::Relu(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let y = self.value(x).map(f64::abs);
        self.record(y, Op::Abs(x))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let va = self.value(a);
        let vb = self.value(b);
        let y = if vb.rank() == 0 && va.rank() > 0 {
            let s = vb.data()[0];
            va.map(|v| f(v, s))
        } else if va.rank() == 0 && vb.rank() > 0 {
            let s = va.data()[0];
            vb.map(|v| f(s, v))
        } else {
            va.zip_map(vb, name, &f)?
        };
        Ok(self.record(y, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let y = self.value(x).map(|v| v + c);
        self.record(y, Op::AddScalar(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let y = self.value(x).map(|v| v * c);
        self.record(y, Op::Scale(x, c))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.record(y, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).mean());
        self.record(y, Op::Mean(x))
    }

    /// Mean over a `size` x `size` window around each pixel, reflecting at
    /// the borders.
    pub fn window_mean(&mut self, x: Var, size: usize) -> Result<Var> {
        let y = kernels::window_mean(self.value(x), size, false)?;
        Ok(self.record(y, Op::WindowMean { x, size }))
    }

    /// Windowed variance `E[x^2] - E[x]^2`.
    pub fn window_variance(&mut self, x: Var, size: usize) -> Result<Var> {
        self.window_covariance(x, x, size)
    }

    /// Windowed covariance `E[ab] - E[a]E[b]`.
    pub fn window_covariance(&mut self, a: Var, b: Var, size: usize) -> Result<Var> {
        let ab = self.mul(a, b)?;
        let e_ab = self.window_mean(ab, size)?;
        let ma = self.window_mean(a, size)?;
        let mb = if a == b { ma } else { self.window_mean(b, size)? };
        let prod = self.mul(ma, mb)?;
        self.sub(e_ab, prod)
    }

    /// Difference between each pixel and its neighbour at `(dy, dx)`,
    /// restricted to pixels whose neighbour lies inside the image.
    pub fn neighbor_diff(&mut self, x: Var, dy: isize, dx: isize) -> Result<Var> {
        let y = kernels::neighbor_diff(self.value(x), dy, dx)?;
        Ok(self.record(y, Op::NeighborDiff { x, dy, dx }))
    }

    /// Bilinear x2 upsampling with half-pixel centres.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let y = kernels::upsample2x(self.value(x), false)?;
        Ok(self.record(y, Op::Upsample2x(x)))
    }

    /// Fingerprint of the sign pattern at every ReLU and |x| input.
    ///
    /// Finite-difference checks compare fingerprints of the `+h` and `-h`
    /// evaluations to detect a perturbation that crossed a kink.
    pub fn kink_fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            if let Op::Relu(x) | Op::Abs(x) = node.op {
                for &v in self.value(x).data() {
                    (v > 0.0).hash(&mut h);
                }
            }
        }
        h.finish()
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", lv.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::ones(lv.shape()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if let Op::Leaf { .. } = node.op {
                grads[idx] = Some(g);
                continue;
            }
            for (input, gi) in self.local_grads(node, &g)? {
                if !self.nodes[input.0].tracked {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&gi)?,
                    slot => *slot = Some(gi),
                }
            }
        }
        grads.resize(self.nodes.len(), None);
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf { tracked: true }) {
                grads[i] = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    /// Gradient contributions of `node` to each of its inputs.
    fn local_grads(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let v = |x: Var| self.value(x);
        // Undo scalar broadcasting for a binary op input.
        let reduce = |x: Var, t: Tensor| -> Tensor {
            if v(x).rank() == 0 && t.rank() > 0 {
                Tensor::scalar(t.sum())
            } else {
                t
            }
        };
        let bcast = |x: Var, other: Var| -> Tensor {
            let t = v(x);
            if t.rank() == 0 && v(other).rank() > 0 {
                Tensor::full(v(other).shape(), t.data()[0])
            } else {
                t.clone()
            }
        };
        Ok(match node.op {
            Op::Leaf { .. } => vec![],
            Op::Conv2d { x, w, b, shape } => {
                let need = kernels::Need {
                    x: self.is_tracked(x),
                    w: self.is_tracked(w),
                };
                let (gx, gw, gb) = kernels::conv2d_backward(v(x), v(w), g, &shape, need);
                let mut out = vec![(b, gb)];
                out.extend(gx.map(|t| (x, t)));
                out.extend(gw.map(|t| (w, t)));
                out
            }
            Op::ConvTranspose2d { x, w, b, shape } => {
                let need = kernels::Need {
                    x: self.is_tracked(x),
                    w: self.is_tracked(w),
                };
                let (gx, gw, gb) = kernels::conv_transpose2d_backward(v(x), v(w), g, &shape, need);
                let mut out = vec![(b, gb)];
                out.extend(gx.map(|t| (x, t)));
                out.extend(gw.map(|t| (w, t)));
                out
            }
            Op::Relu(x) => vec![(x, v(x).zip_map(g, "relu", |xv, gv| if xv > 0.0 { gv } else { 0.0 })?)],
            Op::Abs(x) => vec![(x, v(x).zip_map(g, "abs", |xv, gv| gv * sign(xv))?)],
            Op::Add(a, b) => vec![(a, reduce(a, g.clone())), (b, reduce(b, g.clone()))],
            Op::Sub(a, b) => vec![(a, reduce(a, g.clone())), (b, reduce(b, g.map(|x| -x)))],
            Op::Mul(a, b) => {
                let (va, vb) = (bcast(a, b), bcast(b, a));
                vec![
                    (a, reduce(a, g.zip_map(&vb, "mul", |gv, y| gv * y)?)),
                    (b, reduce(b, g.zip_map(&va, "mul", |gv, x| gv * x)?)),
                ]
            }
            Op::Div(a, b) => {
                let (va, vb) = (bcast(a, b), bcast(b, a));
                let ga = g.zip_map(&vb, "div", |gv, y| gv / y)?;
                let q = va.zip_map(&vb, "div", |x, y| x / (y * y))?;
                let gb = g.zip_map(&q, "div", |gv, qv| -gv * qv)?;
                vec![(a, reduce(a, ga)), (b, reduce(b, gb))]
            }
            Op::AddScalar(x) => vec![(x, g.clone())],
            Op::Scale(x, c) => vec![(x, g.map(|gv| gv * c))],
            Op::Sum(x) => vec![(x, Tensor::full(v(x).shape(), g.data()[0]))],
            Op::Mean(x) => {
                let n = v(x).len() as f64;
                vec![(x, Tensor::full(v(x).shape(), g.data()[0] / n))]
            }
            Op::WindowMean { x, size } => vec![(x, kernels::window_mean(g, size, true)?)],
            Op::NeighborDiff { x, dy, dx } => {
                vec![(x, kernels::neighbor_diff_backward(v(x).shape(), g, dy, dx))]
            }
            Op::Upsample2x(x) => vec![(x, kernels::upsample2x(g, true)?)],
        })
    }
}

/// Subgradient of |x|, zero at the kink.
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_forward_and_subgradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_fn(&[2, 3], |i| i as f64));
        let s = g.sum(x);
        assert_eq!(g.backward(s).unwrap().wrt(x), Tensor::ones(&[2, 3]));
    }

    #[test]
    fn half_mse_gradient() {
        let xs = vec![0.5, -1.0, 2.0, 3.0];
        let ts = vec![1.0, 1.0, 1.0, 1.0];
        let mut g = Graph::new();
        let x = g.param(Tensor::new(&[4], xs.clone()).unwrap());
        let t = g.constant(Tensor::new(&[4], ts.clone()).unwrap());
        let d = g.sub(x, t).unwrap();
        let sq = g.mul(d, d).unwrap();
        let m = g.mean(sq);
        let loss = g.scale(m, 0.5);
        let grad = g.backward(loss).unwrap().wrt(x);
        for i in 0..4 {
            assert!((grad.data()[i] - (xs[i] - ts[i]) / 4.0).abs() < 1e-15);
        }
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn untouched_param_gets_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::ones(&[2]));
        let unused = g.param(Tensor::ones(&[3]));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.wrt(unused), Tensor::zeros(&[3]));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::ones(&[2]));
        let x = g.param(Tensor::ones(&[2]));
        let y = g.mul(c, x).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.wrt(x), Tensor::ones(&[2]));
    }

    #[test]
    fn scalar_broadcast_gradients() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let s = g.param(Tensor::scalar(2.0));
        let y = g.mul(x, s).unwrap();
        let l = g.sum(y);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(s).data(), &[6.0]);
        assert_eq!(grads.wrt(x).data(), &[2.0, 2.0, 2.0]);
    }
}
