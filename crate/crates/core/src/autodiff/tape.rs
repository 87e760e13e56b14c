//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value and the handles
//! of its parents. Node indices are a topological order by construction, so
//! the backward pass is a single reverse sweep.

use super::tensor::{axis_extents, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Tanh,
    Abs,
    Exp,
    Log,
    Neg,
    Elu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Max,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Bmm(Var, Var),
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    Scale(Var, f64),
    Reduce {
        input: Var,
        kind: ReduceKind,
        axis: usize,
        argmax: Vec<usize>,
    },
    SetSum {
        input: Var,
        axis: usize,
    },
    Softmax {
        input: Var,
        axis: usize,
    },
    Reshape(Var),
    TransposeLast2(Var),
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    GatherRows {
        input: Var,
        index: Vec<usize>,
    },
    Pick {
        input: Var,
        index: Vec<usize>,
    },
    StraightThrough(Var),
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation graph.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `var`, or zeros of the given length when nothing reached it.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<f64> {
        self.get(var).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// `small` broadcasts into `big` when, after dropping its leading unit axes,
/// it equals a suffix of `big`.
fn leading_broadcastable(big: &[usize], small: &[usize]) -> bool {
    let first = small.iter().position(|&d| d != 1).unwrap_or(small.len());
    let core = &small[first..];
    core.len() <= big.len() && big[big.len() - core.len()..] == *core
}

/// Below this many elements in the right operand a plain loop beats the
/// packing cost of the blocked kernel. The choice depends only on the
/// operand shape, never on the row count, so a row's result does not depend
/// on how many rows share the call.
const SMALL_RHS: usize = 512;

/// `out += a·b` for row-major a (n,p) and b (p,q).
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], n: usize, p: usize, q: usize) {
    if p * q >= SMALL_RHS {
        gemm(n, p, q, a, (p, 1), b, (q, 1), out);
        return;
    }
    for i in 0..n {
        let row = &mut out[i * q..(i + 1) * q];
        for k in 0..p {
            let aik = a[i * p + k];
            let brow = &b[k * q..(k + 1) * q];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

/// out += aᵀ·g where a is (n,p), g is (n,q), out is (p,q).
fn matmul_at_b_into(a: &[f64], g: &[f64], out: &mut [f64], n: usize, p: usize, q: usize) {
    gemm(p, n, q, a, (1, p), g, (q, 1), out);
}

/// out += g·bᵀ where g is (n,q), b is (p,q), out is (n,p).
fn matmul_a_bt_into(g: &[f64], b: &[f64], out: &mut [f64], n: usize, p: usize, q: usize) {
    gemm(n, q, p, g, (q, 1), b, (1, q), out);
}

/// `c += a·b` with a (m,k) and b (k,n) given by (row, column) strides and c
/// row-major (m,n).
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand sizes");
    // SAFETY: the strides address only elements inside `a`, `b` and `c`,
    // whose lengths were checked above, and `c` does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn add_owned(dst: &mut Option<Vec<f64>>, src: Vec<f64>) {
    match dst {
        Some(_) => add_into(dst, &src),
        None => *dst = Some(src),
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => {
            for (a, b) in d.iter_mut().zip(src) {
                *a += b;
            }
        }
        None => *dst = Some(src.to_vec()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            data,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// Records a tensor as a graph input; it receives gradients iff
    /// `requires_grad` is set on it.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    pub fn constant(&mut self, shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t.shape().to_vec(), t.into_data(), Op::Leaf, false))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.data.clone()).expect("node shapes are validated")
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = self.node(v);
        let (shape, data) = (n.shape.clone(), n.data.clone());
        self.push(shape, data, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (n, p, q) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; n * q];
        matmul_into(self.value(a), self.value(b), &mut out, n, p, q);
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        Ok(self.push(vec![n, q], out, Op::MatMul(a, b), ng))
    }

    /// Batched product of (B,n,p) and (B,p,q).
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(shape_err("bmm", sa, sb));
        }
        let (bs, n, p, q) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * n * q];
        let (av, bv) = (self.value(a), self.value(b));
        for i in 0..bs {
            matmul_into(
                &av[i * n * p..(i + 1) * n * p],
                &bv[i * p * q..(i + 1) * p * q],
                &mut out[i * n * q..(i + 1) * n * q],
                n,
                p,
                q,
            );
        }
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        Ok(self.push(vec![bs, n, q], out, Op::Bmm(a, b), ng))
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = if sa == sb || leading_broadcastable(&sa, &sb) {
            sa.clone()
        } else if leading_broadcastable(&sb, &sa) {
            sb.clone()
        } else {
            let op = match kind {
                Binary::Add => "add",
                Binary::Sub => "sub",
                Binary::Mul => "mul",
                Binary::Div => "div",
            };
            return Err(shape_err(op, &sa, &sb));
        };
        let (av, bv) = (self.value(a), self.value(b));
        let n: usize = out_shape.iter().product();
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let mut out = Vec::with_capacity(n);
        if av.len() == bv.len() || n == 0 {
            out.extend(av.iter().zip(bv).map(|(&x, &y)| f(x, y)));
        } else if av.len() == n {
            for ca in av.chunks_exact(bv.len()) {
                out.extend(ca.iter().zip(bv).map(|(&x, &y)| f(x, y)));
            }
        } else {
            for cb in bv.chunks_exact(av.len()) {
                out.extend(av.iter().zip(cb).map(|(&x, &y)| f(x, y)));
            }
        }
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        Ok(self.push(out_shape, out, Op::Binary(kind, a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    pub fn unary(&mut self, kind: Unary, a: Var) -> Var {
        let f: fn(f64) -> f64 = match kind {
            Unary::Relu => |x| if x > 0.0 { x } else { 0.0 },
            Unary::Tanh => f64::tanh,
            Unary::Abs => f64::abs,
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
            Unary::Neg => |x| -x,
            Unary::Elu => |x| if x > 0.0 { x } else { x.exp_m1() },
        };
        let n = self.node(a);
        let out = n.data.iter().map(|&x| f(x)).collect();
        let (shape, ng) = (n.shape.clone(), n.needs_grad);
        self.push(shape, out, Op::Unary(kind, a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(Unary::Abs, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(Unary::Log, a)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(Unary::Neg, a)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(Unary::Elu, a)
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let n = self.node(a);
        let out = n.data.iter().map(|&x| x * c).collect();
        let (shape, ng) = (n.shape.clone(), n.needs_grad);
        self.push(shape, out, Op::Scale(a, c), ng)
    }

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<()> {
        let rank = self.shape(a).len();
        if axis >= rank {
            return Err(Error::Axis { op, axis, rank });
        }
        Ok(())
    }

    fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
        let mut s: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != axis)
            .map(|(_, &d)| d)
            .collect();
        if s.is_empty() {
            s.push(1);
        }
        s
    }

    /// Reduces along `axis`, removing it. Max routes its gradient to the first
    /// maximal element along the axis.
    pub fn reduce(&mut self, a: Var, kind: ReduceKind, axis: usize) -> Result<Var> {
        self.check_axis("reduce", a, axis)?;
        let n = self.node(a);
        let (outer, len, inner) = axis_extents(&n.shape, axis);
        let mut out = vec![0.0; outer * inner];
        let mut argmax = Vec::new();
        match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                for o in 0..outer {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        for i in 0..inner {
                            out[o * inner + i] += n.data[base + i];
                        }
                    }
                }
                if kind == ReduceKind::Mean {
                    let inv = len as f64;
                    out.iter_mut().for_each(|x| *x /= inv);
                }
            }
            ReduceKind::Max => {
                argmax = vec![0; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = 0;
                        let mut best_v = n.data[o * len * inner + i];
                        for l in 1..len {
                            let v = n.data[(o * len + l) * inner + i];
                            if v > best_v {
                                best_v = v;
                                best = l;
                            }
                        }
                        out[o * inner + i] = best_v;
                        argmax[o * inner + i] = best;
                    }
                }
            }
        }
        let shape = Self::reduced_shape(&n.shape, axis);
        let ng = n.needs_grad;
        Ok(self.push(
            shape,
            out,
            Op::Reduce {
                input: a,
                kind,
                axis,
                argmax,
            },
            ng,
        ))
    }

    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, ReduceKind::Sum, axis)
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, ReduceKind::Mean, axis)
    }

    pub fn max(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, ReduceKind::Max, axis)
    }

    /// Sum of every element, as a shape-[1] tensor.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let flat = self.reshape(a, vec![n])?;
        self.sum(flat, 0)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let flat = self.reshape(a, vec![n])?;
        self.mean(flat, 0)
    }

    /// Sum along `axis` whose result does not depend on the order of the
    /// summands: each output position adds its inputs in ascending value
    /// order, so any permutation along the axis yields identical bits.
    pub fn set_sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("set_sum", a, axis)?;
        let n = self.node(a);
        let (outer, len, inner) = axis_extents(&n.shape, axis);
        let mut out = vec![0.0; outer * inner];
        let mut buf = Vec::with_capacity(len);
        for o in 0..outer {
            for i in 0..inner {
                buf.clear();
                buf.extend((0..len).map(|l| n.data[(o * len + l) * inner + i]));
                buf.sort_by(f64::total_cmp);
                out[o * inner + i] = buf.iter().sum();
            }
        }
        let shape = Self::reduced_shape(&n.shape, axis);
        let ng = n.needs_grad;
        Ok(self.push(shape, out, Op::SetSum { input: a, axis }, ng))
    }

    /// Softmax along `axis`, stabilized by subtracting the axis maximum.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", a, axis)?;
        let n = self.node(a);
        let (outer, len, inner) = axis_extents(&n.shape, axis);
        let mut out = vec![0.0; n.data.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let m = (0..len)
                    .map(|l| n.data[idx(l)])
                    .fold(f64::NEG_INFINITY, f64::max);
                if m == f64::NEG_INFINITY {
                    return Err(Error::FullyMasked);
                }
                let mut z = 0.0;
                for l in 0..len {
                    let e = (n.data[idx(l)] - m).exp();
                    out[idx(l)] = e;
                    z += e;
                }
                for l in 0..len {
                    out[idx(l)] /= z;
                }
            }
        }
        let (shape, ng) = (n.shape.clone(), n.needs_grad);
        Ok(self.push(shape, out, Op::Softmax { input: a, axis }, ng))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let n = self.node(a);
        if shape.iter().product::<usize>() != n.data.len() || shape.contains(&0) {
            return Err(shape_err("reshape", &n.shape, &shape));
        }
        let (data, ng) = (n.data.clone(), n.needs_grad);
        Ok(self.push(shape, data, Op::Reshape(a), ng))
    }

    /// Swaps the last two axes (plain transpose for matrices).
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let n = self.node(a);
        let r = n.shape.len();
        if r < 2 {
            return Err(Error::Axis {
                op: "transpose",
                axis: 1,
                rank: r,
            });
        }
        let (rows, cols) = (n.shape[r - 2], n.shape[r - 1]);
        let batch = n.data.len() / (rows * cols);
        let mut out = vec![0.0; n.data.len()];
        for b in 0..batch {
            let off = b * rows * cols;
            for i in 0..rows {
                for j in 0..cols {
                    out[off + j * rows + i] = n.data[off + i * cols + j];
                }
            }
        }
        let mut shape = n.shape.clone();
        shape.swap(r - 2, r - 1);
        let ng = n.needs_grad;
        Ok(self.push(shape, out, Op::TransposeLast2(a), ng))
    }

    /// Contiguous range `start..start+len` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis("slice", a, axis)?;
        let n = self.node(a);
        if len == 0 || start + len > n.shape[axis] {
            return Err(shape_err("slice", &n.shape, &[start, len]));
        }
        let (outer, full, inner) = axis_extents(&n.shape, axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&n.data[base..base + len * inner]);
        }
        let mut shape = n.shape.clone();
        shape[axis] = len;
        let ng = n.needs_grad;
        Ok(self.push(shape, out, Op::Slice { input: a, axis, start }, ng))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs.first().ok_or(Error::Empty("concat inputs"))?;
        self.check_axis("concat", first, axis)?;
        let base_shape = self.shape(first).to_vec();
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base_shape.len()
                && s.iter()
                    .zip(&base_shape)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(shape_err("concat", &base_shape, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_extents(&base_shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis];
                let chunk = len * inner;
                out.extend_from_slice(&self.value(v)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base_shape;
        shape[axis] = total;
        let ng = inputs.iter().any(|&v| self.node(v).needs_grad);
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            ng,
        ))
    }

    /// Selects rows (entries along axis 0) by index; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let n = self.node(a);
        let rows = n.shape[0];
        if index.is_empty() || index.iter().any(|&i| i >= rows) {
            return Err(shape_err("gather_rows", &n.shape, &[index.len()]));
        }
        let width = n.data.len() / rows;
        let mut out = Vec::with_capacity(index.len() * width);
        for &i in index {
            out.extend_from_slice(&n.data[i * width..(i + 1) * width]);
        }
        let mut shape = n.shape.clone();
        shape[0] = index.len();
        let ng = n.needs_grad;
        Ok(self.push(
            shape,
            out,
            Op::GatherRows {
                input: a,
                index: index.to_vec(),
            },
            ng,
        ))
    }

    /// From an (N, A) matrix picks column `index[n]` of each row, giving (N).
    pub fn pick(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let n = self.node(a);
        if n.shape.len() != 2 || index.len() != n.shape[0] || index.iter().any(|&i| i >= n.shape[1])
        {
            return Err(shape_err("pick", &n.shape, &[index.len()]));
        }
        let cols = n.shape[1];
        let out = index
            .iter()
            .enumerate()
            .map(|(r, &c)| n.data[r * cols + c])
            .collect();
        let ng = n.needs_grad;
        Ok(self.push(
            vec![index.len()],
            out,
            Op::Pick {
                input: a,
                index: index.to_vec(),
            },
            ng,
        ))
    }

    /// Forward value `hard`, backward gradient passed unchanged to `soft`.
    pub fn straight_through(&mut self, hard: Vec<f64>, soft: Var) -> Result<Var> {
        let n = self.node(soft);
        if hard.len() != n.data.len() {
            return Err(shape_err("straight_through", &n.shape, &[hard.len()]));
        }
        let (shape, ng) = (n.shape.clone(), n.needs_grad);
        Ok(self.push(shape, hard, Op::StraightThrough(soft), ng))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let ln = self.node(loss);
        if ln.data.len() != 1 {
            return Err(shape_err("backward", &ln.shape, &[1]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.node(v).needs_grad
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (n, p, q) = (sa[0], sa[1], sb[1]);
                if self.wants(*a) {
                    let mut ga = vec![0.0; n * p];
                    matmul_a_bt_into(g, self.value(*b), &mut ga, n, p, q);
                    add_owned(&mut grads[a.0], ga);
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; p * q];
                    matmul_at_b_into(self.value(*a), g, &mut gb, n, p, q);
                    add_owned(&mut grads[b.0], gb);
                }
            }
            Op::Bmm(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (bs, n, p, q) = (sa[0], sa[1], sa[2], sb[2]);
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let mut ga = vec![0.0; bs * n * p];
                    for i in 0..bs {
                        matmul_a_bt_into(
                            &g[i * n * q..(i + 1) * n * q],
                            &bv[i * p * q..(i + 1) * p * q],
                            &mut ga[i * n * p..(i + 1) * n * p],
                            n,
                            p,
                            q,
                        );
                    }
                    add_owned(&mut grads[a.0], ga);
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; bs * p * q];
                    for i in 0..bs {
                        matmul_at_b_into(
                            &av[i * n * p..(i + 1) * n * p],
                            &g[i * n * q..(i + 1) * n * q],
                            &mut gb[i * p * q..(i + 1) * p * q],
                            n,
                            p,
                            q,
                        );
                    }
                    add_owned(&mut grads[b.0], gb);
                }
            }
            Op::Binary(kind, a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (la, lb) = (av.len(), bv.len());
                // The output repeats the shorter operand, so walk it in
                // blocks of that length. Accumulation order matches a flat
                // index sweep.
                let block = la.min(lb).max(1);
                if self.wants(*a) {
                    let mut ga = vec![0.0; la];
                    for (k, gc) in g.chunks_exact(block).enumerate() {
                        let yb = if lb == block { bv } else { &bv[k * block..(k + 1) * block] };
                        let ob = (k * block) % la;
                        let gs = &mut ga[ob..ob + block];
                        for ((o, &gi), &y) in gs.iter_mut().zip(gc).zip(yb) {
                            *o += match kind {
                                Binary::Add | Binary::Sub => gi,
                                Binary::Mul => gi * y,
                                Binary::Div => gi / y,
                            };
                        }
                    }
                    add_owned(&mut grads[a.0], ga);
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; lb];
                    for (k, gc) in g.chunks_exact(block).enumerate() {
                        let xb = if la == block { av } else { &av[k * block..(k + 1) * block] };
                        let yb = if lb == block { bv } else { &bv[k * block..(k + 1) * block] };
                        let ob = (k * block) % lb;
                        let gs = &mut gb[ob..ob + block];
                        for (((o, &gi), &x), &y) in gs.iter_mut().zip(gc).zip(xb).zip(yb) {
                            *o += match kind {
                                Binary::Add => gi,
                                Binary::Sub => -gi,
                                Binary::Mul => gi * x,
                                Binary::Div => -gi * x / (y * y),
                            };
                        }
                    }
                    add_owned(&mut grads[b.0], gb);
                }
            }
            Op::Unary(kind, a) => {
                let x = self.value(*a);
                let y = &node.data;
                let ga: Vec<f64> = g
                    .iter()
                    .enumerate()
                    .map(|(i, &gi)| {
                        gi * match kind {
                            Unary::Relu => {
                                if x[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Tanh => 1.0 - y[i] * y[i],
                            Unary::Abs => {
                                if x[i] > 0.0 {
                                    1.0
                                } else if x[i] < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Exp => y[i],
                            Unary::Log => 1.0 / x[i],
                            Unary::Neg => -1.0,
                            Unary::Elu => {
                                if x[i] > 0.0 {
                                    1.0
                                } else {
                                    y[i] + 1.0
                                }
                            }
                        }
                    })
                    .collect();
                add_owned(&mut grads[a.0], ga);
            }
            Op::Scale(a, c) => {
                let ga: Vec<f64> = g.iter().map(|x| x * c).collect();
                add_owned(&mut grads[a.0], ga);
            }
            Op::Reduce {
                input,
                kind,
                axis,
                argmax,
            } => {
                let shape = self.shape(*input);
                let (outer, len, inner) = axis_extents(shape, *axis);
                let mut ga = vec![0.0; outer * len * inner];
                let scale = if *kind == ReduceKind::Mean {
                    1.0 / len as f64
                } else {
                    1.0
                };
                for o in 0..outer {
                    for i in 0..inner {
                        let gi = g[o * inner + i];
                        match kind {
                            ReduceKind::Sum | ReduceKind::Mean => {
                                for l in 0..len {
                                    ga[(o * len + l) * inner + i] += gi * scale;
                                }
                            }
                            ReduceKind::Max => {
                                let l = argmax[o * inner + i];
                                ga[(o * len + l) * inner + i] += gi;
                            }
                        }
                    }
                }
                add_owned(&mut grads[input.0], ga);
            }
            Op::SetSum { input, axis } => {
                let shape = self.shape(*input);
                let (outer, len, inner) = axis_extents(shape, *axis);
                let mut ga = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            ga[(o * len + l) * inner + i] = g[o * inner + i];
                        }
                    }
                }
                add_owned(&mut grads[input.0], ga);
            }
            Op::Softmax { input, axis } => {
                let (outer, len, inner) = axis_extents(&node.shape, *axis);
                let y = &node.data;
                let mut ga = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + i;
                        let dot: f64 = (0..len).map(|l| y[idx(l)] * g[idx(l)]).sum();
                        for l in 0..len {
                            ga[idx(l)] = y[idx(l)] * (g[idx(l)] - dot);
                        }
                    }
                }
                add_owned(&mut grads[input.0], ga);
            }
            Op::Reshape(a) | Op::StraightThrough(a) => add_into(&mut grads[a.0], g),
            Op::TransposeLast2(a) => {
                let s = &node.shape;
                let r = s.len();
                // node is (.., cols, rows) of an input shaped (.., rows, cols)
                let (cols, rows) = (s[r - 2], s[r - 1]);
                let batch = g.len() / (rows * cols);
                let mut ga = vec![0.0; g.len()];
                for b in 0..batch {
                    let off = b * rows * cols;
                    for i in 0..rows {
                        for j in 0..cols {
                            ga[off + i * cols + j] = g[off + j * rows + i];
                        }
                    }
                }
                add_owned(&mut grads[a.0], ga);
            }
            Op::Slice { input, axis, start } => {
                let in_shape = self.shape(*input);
                let (outer, full, inner) = axis_extents(in_shape, *axis);
                let len = node.shape[*axis];
                let mut ga = vec![0.0; outer * full * inner];
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    let src = o * len * inner;
                    ga[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                add_owned(&mut grads[input.0], ga);
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_extents(&node.shape, *axis);
                let mut offset = 0;
                for v in inputs {
                    let len = self.shape(*v)[*axis];
                    if self.wants(*v) {
                        let mut gv = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            gv.extend_from_slice(&g[base..base + len * inner]);
                        }
                        add_owned(&mut grads[v.0], gv);
                    }
                    offset += len;
                }
            }
            Op::GatherRows { input, index } => {
                let in_len = self.value(*input).len();
                let width = in_len / self.shape(*input)[0];
                let mut ga = vec![0.0; in_len];
                for (r, &i) in index.iter().enumerate() {
                    for c in 0..width {
                        ga[i * width + c] += g[r * width + c];
                    }
                }
                add_owned(&mut grads[input.0], ga);
            }
            Op::Pick { input, index } => {
                let cols = self.shape(*input)[1];
                let mut ga = vec![0.0; self.value(*input).len()];
                for (r, &c) in index.iter().enumerate() {
                    ga[r * cols + c] += g[r];
                }
                add_owned(&mut grads[input.0], ga);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape, shape: &[usize], data: &[f64]) -> Var {
        let t = Tensor::new(shape.to_vec(), data.to_vec())
            .unwrap()
            .with_requires_grad(true);
        tape.leaf(&t)
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut tape = Tape::new();
        let i = leaf(&mut tape, &[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let v = leaf(&mut tape, &[2, 1], &[3.0, 4.0]);
        let out = tape.matmul(i, v).unwrap();
        assert_eq!(tape.value(out), &[3.0, 4.0]);

        let a = leaf(&mut tape, &[1, 2], &[1.0, 2.0]);
        let out = tape.matmul(a, v).unwrap();
        assert_eq!(tape.value(out), &[11.0]);
        assert_eq!(tape.shape(out), &[1, 1]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[2, 3], &[0.0; 6]);
        let b = leaf(&mut tape, &[2, 3], &[0.0; 6]);
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            Error::Shape {
                op: "matmul",
                lhs: vec![2, 3],
                rhs: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2], &[-1.0, 2.0]);
        let r = tape.relu(x);
        assert_eq!(tape.value(r), &[0.0, 2.0]);
        let y = leaf(&mut tape, &[2], &[-3.0, 3.0]);
        let a = tape.abs(y);
        assert_eq!(tape.value(a), &[3.0, 3.0]);

        let z = leaf(&mut tape, &[1], &[0.0]);
        let t = tape.tanh(z);
        let g = tape.backward(t).unwrap();
        assert_eq!(g.get(z).unwrap(), &[1.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1], &[0.0]);
        let r = tape.relu(x);
        let g = tape.backward(r).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0.0]);
    }

    #[test]
    fn leading_broadcast_only() {
        let mut tape = Tape::new();
        let m = leaf(&mut tape, &[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = leaf(&mut tape, &[3], &[10.0, 20.0, 30.0]);
        let s = tape.add(m, b).unwrap();
        assert_eq!(tape.value(s), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let total = tape.sum_all(s).unwrap();
        let g = tape.backward(total).unwrap();
        assert_eq!(g.get(b).unwrap(), &[2.0, 2.0, 2.0]);

        let col = leaf(&mut tape, &[2, 1], &[1.0, 2.0]);
        assert!(matches!(tape.add(m, col), Err(Error::Shape { op: "add", .. })));
        let lead = leaf(&mut tape, &[1, 3], &[1.0, 1.0, 1.0]);
        assert!(tape.mul(m, lead).is_ok());
    }

    #[test]
    fn reduce_examples() {
        let mut tape = Tape::new();
        let m = leaf(&mut tape, &[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let s = tape.sum(m, 0).unwrap();
        assert_eq!(tape.value(s), &[4.0, 6.0]);

        let v = leaf(&mut tape, &[3], &[1.0, 5.0, 5.0]);
        let mx = tape.max(v, 0).unwrap();
        assert_eq!(tape.value(mx), &[5.0]);
        let g = tape.backward(mx).unwrap();
        assert_eq!(g.get(v).unwrap(), &[0.0, 1.0, 0.0]);

        let w = leaf(&mut tape, &[2], &[2.0, 4.0]);
        let mn = tape.mean(w, 0).unwrap();
        assert_eq!(tape.value(mn), &[3.0]);

        assert_eq!(
            tape.sum(w, 1).unwrap_err(),
            Error::Axis {
                op: "reduce",
                axis: 1,
                rank: 1
            }
        );
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[3], &[0.0, 0.0, 0.0]);
        let s = tape.softmax(x, 0).unwrap();
        for &p in tape.value(s) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let big = leaf(&mut tape, &[2], &[1000.0, 0.0]);
        let s = tape.softmax(big, 0).unwrap();
        assert_eq!(tape.value(s)[0], 1.0);
        assert!(tape.value(s)[1] >= 0.0 && tape.value(s)[1] < 1e-300);

        let masked = leaf(&mut tape, &[2], &[f64::NEG_INFINITY, f64::NEG_INFINITY]);
        assert_eq!(tape.softmax(masked, 0).unwrap_err(), Error::FullyMasked);
    }

    #[test]
    fn multiple_consumers_accumulate() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[3], &[1.0, -2.0, 0.5]);
        let y = tape.add(x, x).unwrap();
        let l = tape.sum_all(y).unwrap();
        let g_sum = tape.backward(l).unwrap().get(x).unwrap().to_vec();

        let mut tape2 = Tape::new();
        let x2 = leaf(&mut tape2, &[3], &[1.0, -2.0, 0.5]);
        let y2 = tape2.scale(x2, 2.0);
        let l2 = tape2.sum_all(y2).unwrap();
        let g_scale = tape2.backward(l2).unwrap().get(x2).unwrap().to_vec();
        assert_eq!(g_sum, g_scale);
        assert_eq!(g_sum, vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn set_sum_is_order_independent() {
        let rows = [0.1, 1e16, -1e16, 0.3, 0.7, 1e-3];
        let mut tape = Tape::new();
        let a = tape.constant(vec![6, 1], rows.to_vec()).unwrap();
        let s1 = tape.set_sum(a, 0).unwrap();
        let mut rev = rows.to_vec();
        rev.reverse();
        let b = tape.constant(vec![6, 1], rev).unwrap();
        let s2 = tape.set_sum(b, 0).unwrap();
        assert_eq!(tape.value(s1)[0].to_bits(), tape.value(s2)[0].to_bits());
    }

    #[test]
    fn slice_concat_transpose_roundtrip() {
        let mut tape = Tape::new();
        let m = leaf(&mut tape, &[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let a = tape.slice(m, 1, 0, 1).unwrap();
        let b = tape.slice(m, 1, 1, 2).unwrap();
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c), tape.value(m));
        let t = tape.transpose(m).unwrap();
        assert_eq!(tape.shape(t), &[3, 2]);
        assert_eq!(tape.value(t), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn straight_through_passes_soft_gradient() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2], &[0.3, 0.7]);
        let st = tape.straight_through(vec![0.0, 1.0], x).unwrap();
        assert_eq!(tape.value(st), &[0.0, 1.0]);
        let w = tape.constant(vec![2], vec![2.0, 3.0]).unwrap();
        let p = tape.mul(st, w).unwrap();
        let l = tape.sum_all(p).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap(), &[2.0, 3.0]);
    }
}
