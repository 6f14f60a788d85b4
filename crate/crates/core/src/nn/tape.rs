//! Reverse-mode tape over row-major 2-D values.

use super::{gemm, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Relu,
    Softplus,
}

enum Op<T> {
    Leaf,
    /// `cols` holds the replicate-padded im2col matrix, empty for width 1.
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        kernel: usize,
        cols: Vec<T>,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    Mul {
        x: Var,
        mask: Vec<T>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    Offset(Var),
    Rows {
        x: Var,
        idx: Vec<usize>,
    },
    Diff2(Var),
    Qmul(Var, Var),
    Qrot(Var, Var),
    Normalize(Var),
    Sum(Var),
    WeightedSumSq {
        x: Var,
        w: Option<Vec<T>>,
    },
    Msle {
        pred: Var,
        target: Vec<T>,
    },
    Bce {
        logits: Var,
        labels: Vec<T>,
    },
    Geodesic {
        q: Var,
        reference: Vec<T>,
    },
}

struct Node<T> {
    value: Vec<T>,
    rows: usize,
    cols: usize,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn quat<T: Scalar>(v: &[T], r: usize) -> [T; 4] {
    [v[4 * r], v[4 * r + 1], v[4 * r + 2], v[4 * r + 3]]
}

fn vec3<T: Scalar>(v: &[T], r: usize) -> [T; 3] {
    [v[3 * r], v[3 * r + 1], v[3 * r + 2]]
}

fn hamilton<T: Scalar>(a: [T; 4], b: [T; 4]) -> [T; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

fn conj<T: Scalar>(q: [T; 4]) -> [T; 4] {
    [q[0], -q[1], -q[2], -q[3]]
}

fn cross<T: Scalar>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot<T: Scalar>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn rotate<T: Scalar>(q: [T; 4], v: [T; 3]) -> [T; 3] {
    let u = [q[1], q[2], q[3]];
    let two = T::lit(2.0);
    let uv = cross(u, v);
    let t = [two * uv[0], two * uv[1], two * uv[2]];
    let ut = cross(u, t);
    [
        v[0] + q[0] * t[0] + ut[0],
        v[1] + q[0] * t[1] + ut[1],
        v[2] + q[0] * t[2] + ut[2],
    ]
}

/// `acos(d)` and `acos(d)/sqrt(1-d²)`, the latter continued to 1 at `d = 1`.
/// Half of the 4-sphere angle between `q` and the sign-aligned `r`, as
/// `atan2(‖q−r‖, ‖q+r‖)`, with `‖q−r‖`, `‖q+r‖` and the aligned `r`.
fn half_angle<T: Scalar>(q: &[T], r: &[T]) -> (T, T, T, [T; 4]) {
    let d = (0..4).map(|i| q[i] * r[i]).sum::<T>();
    let sign = if d < T::zero() { -T::one() } else { T::one() };
    let r = [r[0] * sign, r[1] * sign, r[2] * sign, r[3] * sign];
    let u = (0..4).map(|i| (q[i] - r[i]) * (q[i] - r[i])).sum::<T>().sqrt();
    let v = (0..4).map(|i| (q[i] + r[i]) * (q[i] + r[i])).sum::<T>().sqrt();
    (u.atan2(v), u, v, r)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<T>, rows: usize, cols: usize, op: Op<T>, inputs: &[Var]) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input.
    pub fn param(&mut self, value: Vec<T>, rows: usize, cols: usize) -> Var {
        assert_eq!(value.len(), rows * cols, "leaf shape");
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input excluded from differentiation.
    pub fn constant(&mut self, value: Vec<T>, rows: usize, cols: usize) -> Var {
        assert_eq!(value.len(), rows * cols, "leaf shape");
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Temporal convolution of `x` (`T×Cin`) with `w` (`K·Cin×Cout`, kernel
    /// major) and replicate padding, preserving length. `K = 1` is a dense layer.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, kernel: usize) -> Var {
        assert!(kernel % 2 == 1, "kernel must be odd");
        let (t, cin) = self.shape(x);
        let (wr, cout) = self.shape(w);
        assert_eq!(wr, kernel * cin, "conv weight rows");
        let kc = kernel * cin;
        let mut cols = Vec::new();
        if kernel > 1 {
            let xv = self.value(x);
            let pad = kernel / 2;
            cols = vec![T::zero(); t * kc];
            for r in 0..t {
                for k in 0..kernel {
                    let src = (r + k).saturating_sub(pad).min(t - 1);
                    cols[r * kc + k * cin..r * kc + (k + 1) * cin].copy_from_slice(&xv[src * cin..(src + 1) * cin]);
                }
            }
        }
        let mut out = vec![T::zero(); t * cout];
        {
            let a = if kernel > 1 { &cols[..] } else { self.value(x) };
            gemm(t, kc, cout, a, false, self.value(w), false, &mut out, false);
        }
        if let Some(b) = b {
            assert_eq!(self.shape(b), (1, cout), "bias shape");
            let bv = self.value(b);
            for row in out.chunks_exact_mut(cout) {
                for (o, &bb) in row.iter_mut().zip(bv) {
                    *o = *o + bb;
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(out, t, cout, Op::Conv { x, w, b, kernel, cols }, &inputs)
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        self.conv1d(x, w, b, 1)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let (r, c) = self.shape(x);
        let f: fn(T) -> T = match kind {
            Activation::Elu => |v| if v > T::zero() { v } else { v.exp_m1() },
            Activation::Relu => |v| v.max(T::zero()),
            Activation::Softplus => softplus,
        };
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        self.push(out, r, c, Op::Act { x, kind }, &[x])
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Elu)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Softplus)
    }

    /// Elementwise product with a constant, used for dropout masks.
    pub fn mul_const(&mut self, x: Var, mask: Vec<T>) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(mask.len(), r * c, "mask shape");
        let out = self.value(x).iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        self.push(out, r, c, Op::Mul { x, mask }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        self.push(out, r, c, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shapes");
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x - y).collect();
        self.push(out, r, c, Op::Sub(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|&v| v * s).collect();
        self.push(out, r, c, Op::Scale(x, s), &[x])
    }

    /// `x - c` for a constant `c` of the same shape.
    pub fn sub_const(&mut self, x: Var, c: &[T]) -> Var {
        let (r, cc) = self.shape(x);
        assert_eq!(c.len(), r * cc, "offset shape");
        let out = self.value(x).iter().zip(c).map(|(&a, &b)| a - b).collect();
        self.push(out, r, cc, Op::Offset(x), &[x])
    }

    /// Gathers rows of `x`.
    pub fn rows(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let (r, c) = self.shape(x);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            assert!(i < r, "row index out of range");
            out.extend_from_slice(&xv[i * c..(i + 1) * c]);
        }
        let n = idx.len();
        self.push(out, n, c, Op::Rows { x, idx }, &[x])
    }

    /// Second difference along rows, `T-2` rows (zero rows when `T < 3`).
    pub fn diff2(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let n = r.saturating_sub(2);
        let xv = self.value(x);
        let two = T::lit(2.0);
        let out = (0..n * c)
            .map(|i| xv[i] - two * xv[i + c] + xv[i + 2 * c])
            .collect();
        self.push(out, n, c, Op::Diff2(x), &[x])
    }

    /// Row-wise Hamilton product of `N×4` quaternions (w, x, y, z).
    pub fn qmul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "qmul shapes");
        let (n, c) = self.shape(a);
        assert_eq!(c, 4);
        let (av, bv) = (self.value(a), self.value(b));
        let out = (0..n).flat_map(|r| hamilton(quat(av, r), quat(bv, r))).collect();
        self.push(out, n, 4, Op::Qmul(a, b), &[a, b])
    }

    /// Rotates row vectors `v` (`N×3`) by quaternions `q` (`N×4`, unit).
    pub fn qrot(&mut self, q: Var, v: Var) -> Var {
        let (n, c) = self.shape(q);
        assert_eq!((c, self.shape(v)), (4, (n, 3)), "qrot shapes");
        let (qv, vv) = (self.value(q), self.value(v));
        let out = (0..n).flat_map(|r| rotate(quat(qv, r), vec3(vv, r))).collect();
        self.push(out, n, 3, Op::Qrot(q, v), &[q, v])
    }

    /// Scales each row of `x` to unit norm.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let (n, c) = self.shape(x);
        let xv = self.value(x);
        let mut out = xv.to_vec();
        for row in out.chunks_exact_mut(c) {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            for v in row {
                *v = *v / norm;
            }
        }
        self.push(out, n, c, Op::Normalize(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        self.push(vec![s], 1, 1, Op::Sum(x), &[x])
    }

    /// `Σ wᵢ·xᵢ²`, unit weights when `w` is `None`.
    pub fn weighted_sum_sq(&mut self, x: Var, w: Option<Vec<T>>) -> Var {
        let xv = self.value(x);
        let s = match &w {
            Some(w) => {
                assert_eq!(w.len(), xv.len(), "weight shape");
                xv.iter().zip(w).map(|(&a, &b)| b * a * a).sum()
            }
            None => xv.iter().map(|&a| a * a).sum(),
        };
        self.push(vec![s], 1, 1, Op::WeightedSumSq { x, w }, &[x])
    }

    pub fn sum_sq(&mut self, x: Var) -> Var {
        self.weighted_sum_sq(x, None)
    }

    /// Mean of `(ln(target+1) − ln(pred+1))²`.
    pub fn msle(&mut self, pred: Var, target: Vec<T>) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.len(), target.len(), "msle shapes");
        let n = T::lit(pv.len().max(1) as f64);
        let s = pv
            .iter()
            .zip(&target)
            .map(|(&p, &f)| {
                let d = f.ln_1p() - p.ln_1p();
                d * d
            })
            .sum::<T>()
            / n;
        self.push(vec![s], 1, 1, Op::Msle { pred, target }, &[pred])
    }

    /// Mean binary cross-entropy of logits against `{0, 1}` labels.
    pub fn bce(&mut self, logits: Var, labels: Vec<T>) -> Var {
        let zv = self.value(logits);
        assert_eq!(zv.len(), labels.len(), "bce shapes");
        let n = T::lit(zv.len().max(1) as f64);
        let s = zv
            .iter()
            .zip(&labels)
            .map(|(&z, &c)| softplus(-(c + c - T::one()) * z))
            .sum::<T>()
            / n;
        self.push(vec![s], 1, 1, Op::Bce { logits, labels }, &[logits])
    }

    /// `Σ θ²` of the rotation angles between rows of `q` and `reference`.
    /// Both are unit `N×4` quaternions; the sign ambiguity is ignored.
    pub fn geodesic_sq(&mut self, q: Var, reference: Vec<T>) -> Var {
        let (n, c) = self.shape(q);
        assert_eq!((c, reference.len()), (4, 4 * n), "geodesic shapes");
        let qv = self.value(q);
        let s = (0..n)
            .map(|r| {
                let th = T::lit(4.0) * half_angle(&qv[4 * r..4 * r + 4], &reference[4 * r..4 * r + 4]).0;
                th * th
            })
            .sum();
        self.push(vec![s], 1, 1, Op::Geodesic { q, reference }, &[q])
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.shape(loss), (1, 1), "loss must be a scalar");
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let two = T::lit(2.0);
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let len = self.nodes[v.0].value.len();
            let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv {
                x,
                w,
                b,
                kernel,
                cols,
            } => {
                let (t, cin) = self.shape(*x);
                let cout = node.cols;
                let kc = kernel * cin;
                let a: &[T] = if *kernel > 1 { cols } else { self.value(*x) };
                acc(*w, &mut |dw| gemm(kc, t, cout, a, true, g, false, dw, true));
                if let Some(b) = b {
                    acc(*b, &mut |db| {
                        for row in g.chunks_exact(cout) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d = *d + v;
                            }
                        }
                    });
                }
                if self.wants(*x) {
                    let wv = self.value(*w);
                    if *kernel == 1 {
                        acc(*x, &mut |dx| gemm(t, cout, cin, g, false, wv, true, dx, true));
                    } else {
                        let mut dcols = vec![T::zero(); t * kc];
                        gemm(t, cout, kc, g, false, wv, true, &mut dcols, false);
                        let pad = kernel / 2;
                        acc(*x, &mut |dx| {
                            for r in 0..t {
                                for k in 0..*kernel {
                                    let src = (r + k).saturating_sub(pad).min(t - 1);
                                    let d = &dcols[r * kc + k * cin..r * kc + (k + 1) * cin];
                                    for (o, &v) in dx[src * cin..(src + 1) * cin].iter_mut().zip(d) {
                                        *o = *o + v;
                                    }
                                }
                            }
                        });
                    }
                }
            }
            Op::Act { x, kind } => {
                let xv = self.value(*x);
                let yv = &node.value;
                acc(*x, &mut |dx| {
                    for i in 0..dx.len() {
                        let d = match kind {
                            Activation::Elu => {
                                if xv[i] > T::zero() {
                                    T::one()
                                } else {
                                    yv[i] + T::one()
                                }
                            }
                            Activation::Relu => {
                                if xv[i] > T::zero() {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Activation::Softplus => sigmoid(xv[i]),
                        };
                        dx[i] = dx[i] + g[i] * d;
                    }
                });
            }
            Op::Mul { x, mask } => acc(*x, &mut |dx| {
                for i in 0..dx.len() {
                    dx[i] = dx[i] + g[i] * mask[i];
                }
            }),
            Op::Add(a, b) => {
                for v in [a, b] {
                    acc(*v, &mut |d| {
                        for (o, &gi) in d.iter_mut().zip(g) {
                            *o = *o + gi;
                        }
                    });
                }
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| {
                    for (o, &gi) in d.iter_mut().zip(g) {
                        *o = *o + gi;
                    }
                });
                acc(*b, &mut |d| {
                    for (o, &gi) in d.iter_mut().zip(g) {
                        *o = *o - gi;
                    }
                });
            }
            Op::Scale(x, s) => acc(*x, &mut |d| {
                for (o, &gi) in d.iter_mut().zip(g) {
                    *o = *o + gi * *s;
                }
            }),
            Op::Offset(x) => acc(*x, &mut |d| {
                for (o, &gi) in d.iter_mut().zip(g) {
                    *o = *o + gi;
                }
            }),
            Op::Rows { x, idx } => {
                let c = node.cols;
                acc(*x, &mut |d| {
                    for (k, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            d[i * c + j] = d[i * c + j] + g[k * c + j];
                        }
                    }
                });
            }
            Op::Diff2(x) => {
                let c = node.cols;
                acc(*x, &mut |d| {
                    for (i, &gi) in g.iter().enumerate() {
                        d[i] = d[i] + gi;
                        d[i + c] = d[i + c] - two * gi;
                        d[i + 2 * c] = d[i + 2 * c] + gi;
                    }
                });
            }
            Op::Qmul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let n = node.rows;
                acc(*a, &mut |d| {
                    for r in 0..n {
                        let v = hamilton(quat(g, r), conj(quat(bv, r)));
                        for i in 0..4 {
                            d[4 * r + i] = d[4 * r + i] + v[i];
                        }
                    }
                });
                acc(*b, &mut |d| {
                    for r in 0..n {
                        let v = hamilton(conj(quat(av, r)), quat(g, r));
                        for i in 0..4 {
                            d[4 * r + i] = d[4 * r + i] + v[i];
                        }
                    }
                });
            }
            Op::Qrot(q, v) => {
                let (qv, vv) = (self.value(*q), self.value(*v));
                let n = node.rows;
                acc(*q, &mut |d| {
                    for r in 0..n {
                        let (qq, x, gg) = (quat(qv, r), vec3(vv, r), vec3(g, r));
                        let u = [qq[1], qq[2], qq[3]];
                        let w = qq[0];
                        let uv = cross(u, x);
                        let vg = cross(x, gg);
                        let (ux, gu, gx) = (dot(u, x), dot(gg, u), dot(gg, x));
                        d[4 * r] = d[4 * r] + two * dot(gg, uv);
                        for i in 0..3 {
                            let du = two * w * vg[i] + two * (ux * gg[i] + gu * x[i] - two * gx * u[i]);
                            d[4 * r + 1 + i] = d[4 * r + 1 + i] + du;
                        }
                    }
                });
                acc(*v, &mut |d| {
                    for r in 0..n {
                        let (qq, gg) = (quat(qv, r), vec3(g, r));
                        let u = [qq[1], qq[2], qq[3]];
                        let ug = cross(u, gg);
                        let uug = cross(u, ug);
                        for i in 0..3 {
                            d[3 * r + i] = d[3 * r + i] + gg[i] - two * qq[0] * ug[i] + two * uug[i];
                        }
                    }
                });
            }
            Op::Normalize(x) => {
                let xv = self.value(*x);
                let c = node.cols;
                let y = &node.value;
                acc(*x, &mut |d| {
                    for r in 0..node.rows {
                        let s = r * c..(r + 1) * c;
                        let norm = xv[s.clone()].iter().map(|&v| v * v).sum::<T>().sqrt();
                        let yg: T = y[s.clone()].iter().zip(&g[s.clone()]).map(|(&a, &b)| a * b).sum();
                        for i in s {
                            d[i] = d[i] + (g[i] - y[i] * yg) / norm;
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |d| {
                for o in d.iter_mut() {
                    *o = *o + g[0];
                }
            }),
            Op::WeightedSumSq { x, w } => {
                let xv = self.value(*x);
                acc(*x, &mut |d| {
                    for i in 0..d.len() {
                        let wi = w.as_ref().map_or(T::one(), |w| w[i]);
                        d[i] = d[i] + g[0] * two * wi * xv[i];
                    }
                });
            }
            Op::Msle { pred, target } => {
                let pv = self.value(*pred);
                let n = T::lit(pv.len().max(1) as f64);
                acc(*pred, &mut |d| {
                    for i in 0..d.len() {
                        let diff = pv[i].ln_1p() - target[i].ln_1p();
                        d[i] = d[i] + g[0] * two * diff / ((T::one() + pv[i]) * n);
                    }
                });
            }
            Op::Bce { logits, labels } => {
                let zv = self.value(*logits);
                let n = T::lit(zv.len().max(1) as f64);
                acc(*logits, &mut |d| {
                    for i in 0..d.len() {
                        d[i] = d[i] + g[0] * (sigmoid(zv[i]) - labels[i]) / n;
                    }
                });
            }
            Op::Geodesic { q, reference } => {
                let qv = self.value(*q);
                let n = self.shape(*q).0;
                acc(*q, &mut |d| {
                    for r in 0..n {
                        let qr = &qv[4 * r..4 * r + 4];
                        let (a, u, v, rr) = half_angle(qr, &reference[4 * r..4 * r + 4]);
                        // θ² = 16a²; ∂a/∂q = (v·(q−r)/u − u·(q+r)/v) / (u² + v²)
                        let uv = u * u + v * v;
                        let a_over_u = if u < T::lit(1e-12) { T::one() / v } else { a / u };
                        let c1 = T::lit(32.0) * a_over_u * v / uv;
                        let c2 = T::lit(32.0) * a * u / (v * uv);
                        for i in 0..4 {
                            let gi = c1 * (qr[i] - rr[i]) - c2 * (qr[i] + rr[i]);
                            d[4 * r + i] = d[4 * r + i] + g[0] * gi;
                        }
                    }
                });
            }
        }
    }
}

pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v`, `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
