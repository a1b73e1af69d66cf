//! Define-by-run reverse-mode differentiation.
//!
//! Every primitive appends one node to the [`Tape`]; node inputs always
//! precede the node itself, so a single reverse sweep over the node list is a
//! valid topological replay. Only leaves keep a persistent gradient buffer,
//! and repeated calls to [`Tape::backward`] add into it until
//! [`Tape::zero_grad`].

use crate::error::{KtError, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise primitives exposed through [`Tape::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Mul,
    Tanh,
    Sigmoid,
    Exp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unary {
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Softplus,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    ScaleRows(usize, usize),
    Affine(usize, f64),
    Unary(usize, Unary),
    MaskedSoftmax {
        input: usize,
        mask: Vec<bool>,
        width: usize,
    },
    GatherRows {
        table: usize,
        idx: Vec<usize>,
    },
    Pick {
        input: usize,
        idx: Vec<usize>,
    },
    SliceCols {
        input: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    Sum(usize),
    Mean(usize),
    Bce {
        probs: usize,
        targets: Vec<f64>,
        mask: Vec<bool>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Probabilities are clamped into `[BCE_EPS, 1 - BCE_EPS]` inside the loss.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    t.dims2().ok_or_else(|| KtError::Dimension {
        op,
        lhs: t.shape().to_vec(),
        rhs: vec![],
    })
}

fn slot(adj: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut Vec<f64> {
    adj[idx].get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(KtError::Numeric(name.to_string()));
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddBias(a, b)
            | Op::ScaleRows(a, b) => self.nodes[*a].requires_grad || self.nodes[*b].requires_grad,
            Op::Transpose(a)
            | Op::Affine(a, _)
            | Op::Unary(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::MaskedSoftmax { input: a, .. }
            | Op::GatherRows { table: a, .. }
            | Op::Pick { input: a, .. }
            | Op::SliceCols { input: a, .. }
            | Op::Bce { probs: a, .. } => self.nodes[*a].requires_grad,
            Op::ConcatCols(parts) => parts.iter().any(|&p| self.nodes[p].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    /// Registers an input tensor. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf; zeros when nothing has reached it.
    pub fn grad(&self, v: Var) -> Tensor {
        let value = &self.nodes[v.0].value;
        match &self.grads[v.0] {
            Some(g) => Tensor::from_parts(value.shape().to_vec(), g.clone()),
            None => Tensor::zeros(value.shape()),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (Some((m, k)), Some((k2, n))) = (ta.dims2(), tb.dims2()) else {
            return Err(KtError::Dimension {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        };
        if ta.shape().len() != 2 || tb.shape().len() != 2 || k != k2 {
            return Err(KtError::Dimension {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul(a.0, b.0),
            "matmul",
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 2 {
            return Err(KtError::Dimension {
                op: "transpose",
                lhs: t.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (m, n) = (t.shape()[0], t.shape()[1]);
        let d = t.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        self.push(
            Tensor::from_parts(vec![n, m], out),
            Op::Transpose(a.0),
            "transpose",
        )
    }

    fn binary_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() || tb.is_scalar() {
            Ok(ta.shape().to_vec())
        } else if ta.is_scalar() {
            Ok(tb.shape().to_vec())
        } else {
            Err(KtError::Dimension {
                op,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            })
        }
    }

    fn binary_values(
        &self,
        shape: &[usize],
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|i| {
                let x = if ta.is_scalar() {
                    ta.item()
                } else {
                    ta.data()[i]
                };
                let y = if tb.is_scalar() {
                    tb.item()
                } else {
                    tb.data()[i]
                };
                f(x, y)
            })
            .collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shape("add", a, b)?;
        let v = self.binary_values(&shape, a, b, |x, y| x + y);
        self.push(v, Op::Add(a.0, b.0), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shape("sub", a, b)?;
        let v = self.binary_values(&shape, a, b, |x, y| x - y);
        self.push(v, Op::Sub(a.0, b.0), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shape("mul", a, b)?;
        let v = self.binary_values(&shape, a, b, |x, y| x * y);
        self.push(v, Op::Mul(a.0, b.0), "mul")
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| scale * v + shift).collect();
        let v = Tensor::from_parts(t.shape().to_vec(), data);
        self.push(v, Op::Affine(x.0, scale), "affine")
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.affine(x, factor, 0.0)
    }

    fn unary(&mut self, x: Var, u: Unary) -> Result<Var> {
        let t = self.value(x);
        let f: fn(f64) -> f64 = match u {
            Unary::Tanh => f64::tanh,
            Unary::Sigmoid => sigmoid,
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
            Unary::Softplus => softplus,
        };
        let data = t.data().iter().map(|&v| f(v)).collect();
        let v = Tensor::from_parts(t.shape().to_vec(), data);
        let name = match u {
            Unary::Tanh => "tanh",
            Unary::Sigmoid => "sigmoid",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Softplus => "softplus",
        };
        self.push(v, Op::Unary(x.0, u), name)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Log)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Softplus)
    }

    /// Dispatches one of the named pointwise primitives.
    pub fn elementwise(&mut self, op: Elementwise, inputs: &[Var]) -> Result<Var> {
        let arity = match op {
            Elementwise::Add | Elementwise::Mul => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(KtError::Contract(format!(
                "{op:?} takes {arity} inputs, got {}",
                inputs.len()
            )));
        }
        match op {
            Elementwise::Add => self.add(inputs[0], inputs[1]),
            Elementwise::Mul => self.mul(inputs[0], inputs[1]),
            Elementwise::Tanh => self.tanh(inputs[0]),
            Elementwise::Sigmoid => self.sigmoid(inputs[0]),
            Elementwise::Exp => self.exp(inputs[0]),
        }
    }

    /// Adds a length-`n` bias to every row of an `m x n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (m, n) = dims2(tx, "add_bias")?;
        if tb.numel() != n {
            return Err(KtError::Dimension {
                op: "add_bias",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut data = tx.data().to_vec();
        for i in 0..m {
            for (o, b) in data[i * n..(i + 1) * n].iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let v = Tensor::from_parts(tx.shape().to_vec(), data);
        self.push(v, Op::AddBias(x.0, bias.0), "add_bias")
    }

    /// Multiplies row `i` of an `m x n` matrix by `s[i]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (self.value(x), self.value(s));
        let (m, n) = dims2(tx, "scale_rows")?;
        if ts.numel() != m {
            return Err(KtError::Dimension {
                op: "scale_rows",
                lhs: tx.shape().to_vec(),
                rhs: ts.shape().to_vec(),
            });
        }
        let mut data = tx.data().to_vec();
        for i in 0..m {
            let f = ts.data()[i];
            data[i * n..(i + 1) * n].iter_mut().for_each(|v| *v *= f);
        }
        let v = Tensor::from_parts(tx.shape().to_vec(), data);
        self.push(v, Op::ScaleRows(x.0, s.0), "scale_rows")
    }

    /// Softmax over the unmasked entries of a vector; masked entries are 0.
    pub fn masked_softmax(&mut self, logits: Var, mask: &[bool]) -> Result<Var> {
        let t = self.value(logits);
        let n = t.numel();
        let shape = t.shape().to_vec();
        self.softmax_impl(logits, 1, n, shape, mask, false, "masked_softmax")
    }

    /// Row-wise masked softmax of an `m x n` matrix. Rows with no unmasked
    /// entry are an error unless `allow_empty_rows`, in which case they are 0.
    pub fn masked_softmax_rows(
        &mut self,
        logits: Var,
        mask: &[bool],
        allow_empty_rows: bool,
    ) -> Result<Var> {
        let t = self.value(logits);
        let (m, n) = dims2(t, "masked_softmax_rows")?;
        let shape = t.shape().to_vec();
        self.softmax_impl(
            logits,
            m,
            n,
            shape,
            mask,
            allow_empty_rows,
            "masked_softmax_rows",
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn softmax_impl(
        &mut self,
        logits: Var,
        m: usize,
        n: usize,
        shape: Vec<usize>,
        mask: &[bool],
        allow_empty_rows: bool,
        name: &'static str,
    ) -> Result<Var> {
        if mask.len() != m * n {
            return Err(KtError::Dimension {
                op: name,
                lhs: shape,
                rhs: vec![mask.len()],
            });
        }
        let x = self.value(logits).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let rmask = &mask[i * n..(i + 1) * n];
            let max = row
                .iter()
                .zip(rmask)
                .filter(|(_, &keep)| keep)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                if allow_empty_rows {
                    continue;
                }
                return Err(KtError::EmptySupport(name));
            }
            let orow = &mut out[i * n..(i + 1) * n];
            let mut total = 0.0;
            for j in 0..n {
                if rmask[j] {
                    let e = (row[j] - max).exp();
                    orow[j] = e;
                    total += e;
                }
            }
            orow.iter_mut().for_each(|v| *v /= total);
        }
        let v = Tensor::from_parts(shape, out);
        self.push(
            v,
            Op::MaskedSoftmax {
                input: logits.0,
                mask: mask.to_vec(),
                width: n,
            },
            name,
        )
    }

    /// Embedding lookup: row `idx[i]` of `table` becomes row `i` of the output.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, cols) = match t.shape() {
            [r] => (*r, 1),
            [r, c] => (*r, *c),
            s => {
                return Err(KtError::Dimension {
                    op: "gather_rows",
                    lhs: s.to_vec(),
                    rhs: vec![],
                })
            }
        };
        if idx.is_empty() {
            return Err(KtError::Contract(
                "gather_rows needs at least one index".into(),
            ));
        }
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &r in idx {
            if r >= rows {
                return Err(KtError::Index {
                    what: "embedding table",
                    index: r,
                    size: rows,
                });
            }
            data.extend_from_slice(&t.data()[r * cols..(r + 1) * cols]);
        }
        let v = Tensor::from_parts(vec![idx.len(), cols], data);
        self.push(
            v,
            Op::GatherRows {
                table: table.0,
                idx: idx.to_vec(),
            },
            "gather_rows",
        )
    }

    /// Selects column `idx[i]` from row `i`, producing an `m x 1` matrix.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = dims2(t, "pick")?;
        if idx.len() != m {
            return Err(KtError::Dimension {
                op: "pick",
                lhs: t.shape().to_vec(),
                rhs: vec![idx.len()],
            });
        }
        let mut data = Vec::with_capacity(m);
        for (i, &j) in idx.iter().enumerate() {
            if j >= n {
                return Err(KtError::Index {
                    what: "pick column",
                    index: j,
                    size: n,
                });
            }
            data.push(t.data()[i * n + j]);
        }
        let v = Tensor::from_parts(vec![m, 1], data);
        self.push(
            v,
            Op::Pick {
                input: x.0,
                idx: idx.to_vec(),
            },
            "pick",
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = dims2(t, "slice_cols")?;
        if len == 0 || start + len > n {
            return Err(KtError::Dimension {
                op: "slice_cols",
                lhs: t.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&t.data()[i * n + start..i * n + start + len]);
        }
        let v = Tensor::from_parts(vec![m, len], data);
        self.push(v, Op::SliceCols { input: x.0, start }, "slice_cols")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| KtError::Contract("concat_cols needs at least one input".into()))?;
        let (m, _) = dims2(self.value(*first), "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            let (pm, pn) = dims2(t, "concat_cols")?;
            if pm != m {
                return Err(KtError::Dimension {
                    op: "concat_cols",
                    lhs: self.value(*first).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let v = Tensor::from_parts(vec![m, total], data);
        self.push(
            v,
            Op::ConcatCols(parts.iter().map(|p| p.0).collect()),
            "concat_cols",
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x.0), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x.0), "mean")
    }

    /// Mean binary cross-entropy over positions where `mask` is true.
    pub fn bce(&mut self, probs: Var, targets: &[f64], mask: &[bool]) -> Result<Var> {
        let t = self.value(probs);
        if targets.len() != t.numel() || mask.len() != t.numel() {
            return Err(KtError::Dimension {
                op: "bce",
                lhs: t.shape().to_vec(),
                rhs: vec![targets.len(), mask.len()],
            });
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(KtError::NoSignal("every loss position is masked".into()));
        }
        let mut total = 0.0;
        for ((&p, &y), &keep) in t.data().iter().zip(targets).zip(mask) {
            if keep {
                let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                total -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
            }
        }
        let v = Tensor::scalar(total / count as f64);
        self.push(
            v,
            Op::Bce {
                probs: probs.0,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
            },
            "bce",
        )
    }

    /// Reverse sweep from a scalar `loss`, adding into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(KtError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(i, &g, &mut adj)?;
            if matches!(self.nodes[i].op, Op::Leaf) {
                match &mut self.grads[i] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) -> Result<()> {
        let nodes = &self.nodes;
        let needs = |j: usize| nodes[j].requires_grad;
        let val = |j: usize| &nodes[j].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if needs(*a) {
                    let da = slot(adj, *a, m * k);
                    let bd = tb.data();
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            da[r * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if needs(*b) {
                    let db = slot(adj, *b, k * n);
                    let ad = ta.data();
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let av = ad[r * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (d, gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d += av * gv;
                            }
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let t = val(*a);
                let (m, n) = (t.shape()[0], t.shape()[1]);
                let da = slot(adj, *a, m * n);
                for r in 0..m {
                    for c in 0..n {
                        da[r * n + c] += g[c * m + r];
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let op = &nodes[i].op;
                let is_mul = matches!(op, Op::Mul(..));
                let b_sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let at = |t: &Tensor, k: usize| if t.is_scalar() { t.item() } else { t.data()[k] };
                for (side, other, sign) in [(*a, *b, 1.0), (*b, *a, b_sign)] {
                    if !needs(side) {
                        continue;
                    }
                    let (ts, to) = (val(side), val(other));
                    let broadcast = ts.is_scalar() && g.len() > 1;
                    let dst = slot(adj, side, ts.numel());
                    for (k, gv) in g.iter().enumerate() {
                        let d = if is_mul { gv * at(to, k) } else { gv * sign };
                        dst[if broadcast { 0 } else { k }] += d;
                    }
                }
            }
            Op::AddBias(x, b) => {
                let n = val(*b).numel();
                if needs(*x) {
                    let dx = slot(adj, *x, g.len());
                    dx.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
                if needs(*b) {
                    let db = slot(adj, *b, n);
                    for row in g.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                }
            }
            Op::ScaleRows(x, s) => {
                let (tx, ts) = (val(*x), val(*s));
                let m = ts.numel();
                let n = tx.numel() / m;
                if needs(*x) {
                    let dx = slot(adj, *x, g.len());
                    for r in 0..m {
                        let f = ts.data()[r];
                        for c in 0..n {
                            dx[r * n + c] += g[r * n + c] * f;
                        }
                    }
                }
                if needs(*s) {
                    let ds = slot(adj, *s, m);
                    for r in 0..m {
                        ds[r] += (0..n)
                            .map(|c| g[r * n + c] * tx.data()[r * n + c])
                            .sum::<f64>();
                    }
                }
            }
            Op::Affine(x, scale) => {
                let dx = slot(adj, *x, g.len());
                dx.iter_mut().zip(g).for_each(|(d, v)| *d += v * scale);
            }
            Op::Unary(x, u) => {
                let xin = val(*x).data();
                let y = nodes[i].value.data();
                let dx = slot(adj, *x, g.len());
                for k in 0..g.len() {
                    let local = match u {
                        Unary::Tanh => 1.0 - y[k] * y[k],
                        Unary::Sigmoid => y[k] * (1.0 - y[k]),
                        Unary::Exp => y[k],
                        Unary::Log => 1.0 / xin[k],
                        Unary::Softplus => sigmoid(xin[k]),
                    };
                    dx[k] += g[k] * local;
                }
            }
            Op::MaskedSoftmax { input, mask, width } => {
                let y = nodes[i].value.data();
                let n = *width;
                let dx = slot(adj, *input, g.len());
                for r in 0..y.len() / n {
                    let range = r * n..(r + 1) * n;
                    let dot: f64 = range
                        .clone()
                        .filter(|&k| mask[k])
                        .map(|k| g[k] * y[k])
                        .sum();
                    for k in range {
                        if mask[k] {
                            dx[k] += y[k] * (g[k] - dot);
                        }
                    }
                }
            }
            Op::GatherRows { table, idx } => {
                let t = val(*table);
                let cols = t.numel() / t.shape()[0];
                let dt = slot(adj, *table, t.numel());
                for (i, &r) in idx.iter().enumerate() {
                    for c in 0..cols {
                        dt[r * cols + c] += g[i * cols + c];
                    }
                }
            }
            Op::Pick { input, idx } => {
                let t = val(*input);
                let n = t.numel() / idx.len();
                let dx = slot(adj, *input, t.numel());
                for (r, &c) in idx.iter().enumerate() {
                    dx[r * n + c] += g[r];
                }
            }
            Op::SliceCols { input, start } => {
                let t = val(*input);
                let (m, n) = t.dims2().expect("checked at forward");
                let len = g.len() / m;
                let dx = slot(adj, *input, t.numel());
                for r in 0..m {
                    for c in 0..len {
                        dx[r * n + start + c] += g[r * len + c];
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let m = nodes[i].value.shape()[0];
                let total = g.len() / m;
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).numel() / m;
                    if needs(p) {
                        let dp = slot(adj, p, m * w);
                        for r in 0..m {
                            for c in 0..w {
                                dp[r * w + c] += g[r * total + offset + c];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Sum(x) => {
                let dx = slot(adj, *x, val(*x).numel());
                dx.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Mean(x) => {
                let n = val(*x).numel();
                let dx = slot(adj, *x, n);
                dx.iter_mut().for_each(|d| *d += g[0] / n as f64);
            }
            Op::Bce {
                probs,
                targets,
                mask,
            } => {
                let p = val(*probs).data();
                let count = mask.iter().filter(|&&m| m).count() as f64;
                let dp = slot(adj, *probs, p.len());
                for k in 0..p.len() {
                    if !mask[k] || p[k] <= BCE_EPS || p[k] >= 1.0 - BCE_EPS {
                        continue;
                    }
                    let y = targets[k];
                    dp[k] += g[0] * -(y / p[k] - (1.0 - y) / (1.0 - p[k])) / count;
                }
            }
        }
        Ok(())
    }
}
