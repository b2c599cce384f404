use std::collections::{BTreeMap, HashMap};

use super::{gemm, ParamStore, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Map { x: Var, df: fn(f64) -> f64 },
    Softmax(Var),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    SliceLast { x: Var, start: usize, len: usize },
    SliceRows { x: Var, start: usize, len: usize },
    GatherRows { x: Var, rows: Vec<usize> },
    Reshape(Var),
    MeanAxis { x: Var, axis: usize },
    Sum(Var),
    Embedding { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize> },
    SquaredError { pred: Var, target: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Computation graph recorded eagerly during the forward pass.
///
/// Nodes are appended in evaluation order, so every node's inputs precede
/// it and the node list is already a topological order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A leaf node. Gradients are still recorded for it, which is how
    /// derivatives with respect to non-parameter inputs are obtained.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds a parameter from `store` into the graph (once per path).
    pub fn param(&mut self, store: &ParamStore, path: &str) -> Var {
        if let Some(&v) = self.param_index.get(path) {
            return v;
        }
        let value = store
            .get(path)
            .unwrap_or_else(|| panic!("unknown parameter `{path}`"))
            .clone();
        let v = self.push(value, Op::Leaf);
        self.params.push((path.to_string(), v));
        self.param_index.insert(path.to_string(), v);
        v
    }

    /// `[.., k] · [k, n]`; leading axes of `a` are treated as rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(bv.ndim(), 2, "matmul rhs must be a matrix");
        let k = av.last_dim();
        assert_eq!(bv.shape()[0], k, "matmul inner dimension mismatch");
        let n = bv.shape()[1];
        let m = av.rows();
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, false);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        self.push(Tensor::new(shape, out), Op::MatMul(a, b))
    }

    /// Batched product of `[bt, m, k]` with `[bt, k, n]`, or with
    /// `[bt, n, k]` read transposed when `trans_b` is set.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(
            av.ndim() == 3 && bv.ndim() == 3,
            "batch_matmul needs 3-d operands"
        );
        let (bt, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        assert_eq!(bv.shape()[0], bt);
        let n = if trans_b {
            assert_eq!(bv.shape()[2], k);
            bv.shape()[1]
        } else {
            assert_eq!(bv.shape()[1], k);
            bv.shape()[2]
        };
        let mut out = vec![0.0; bt * m * n];
        for i in 0..bt {
            gemm(
                m,
                k,
                n,
                &av.data()[i * m * k..(i + 1) * m * k],
                false,
                &bv.data()[i * k * n..(i + 1) * k * n],
                trans_b,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        self.push(
            Tensor::new([bt, m, n], out),
            Op::BatchMatMul { a, b, trans_b },
        )
    }

    fn zip_same(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_same(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    /// Adds a vector to every row of `a` (bias broadcast over the last axis).
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        let n = av.last_dim();
        assert_eq!(rv.len(), n, "row broadcast length mismatch");
        let mut data = av.data().to_vec();
        for chunk in data.chunks_mut(n) {
            for (x, r) in chunk.iter_mut().zip(rv.data()) {
                *x += r;
            }
        }
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, data), Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_same(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_same(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// Elementwise map with a caller-supplied derivative `df(x)`.
    pub fn map(&mut self, a: Var, f: fn(f64) -> f64, df: fn(f64) -> f64) -> Var {
        let v = self.value(a).map(f);
        self.push(v, Op::Map { x: a, df })
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = av.last_dim();
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, data), Op::Softmax(a))
    }

    /// Concatenation along the last axis; all inputs share leading axes.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).last_dim()).collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat row mismatch");
            for r in 0..rows {
                data[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&pv.data()[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let mut shape = self.value(parts[0]).shape().to_vec();
        *shape.last_mut().unwrap() = total;
        self.push(Tensor::new(shape, data), Op::Concat(parts.to_vec()))
    }

    /// Stacks `L` tensors of shape `[b, h]` into `[b, L, h]`.
    pub fn stack(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let first = self.value(parts[0]);
        assert_eq!(first.ndim(), 2, "stack expects [b, h] inputs");
        let (b, h) = (first.shape()[0], first.shape()[1]);
        let l = parts.len();
        let mut data = vec![0.0; b * l * h];
        for (t, &p) in parts.iter().enumerate() {
            let pv = self.value(p);
            assert_eq!(pv.shape(), [b, h]);
            for i in 0..b {
                data[(i * l + t) * h..(i * l + t + 1) * h]
                    .copy_from_slice(&pv.data()[i * h..(i + 1) * h]);
            }
        }
        self.push(Tensor::new([b, l, h], data), Op::Stack(parts.to_vec()))
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let n = av.last_dim();
        assert!(start + len <= n, "slice out of range");
        let mut data = Vec::with_capacity(av.rows() * len);
        for row in av.data().chunks(n) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        self.push(Tensor::new(shape, data), Op::SliceLast { x: a, start, len })
    }

    /// Rows `start..start+len` of a matrix view `[rows, last]`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let n = av.last_dim();
        assert!(start + len <= av.rows(), "row slice out of range");
        let data = av.data()[start * n..(start + len) * n].to_vec();
        self.push(
            Tensor::new([len, n], data),
            Op::SliceRows { x: a, start, len },
        )
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let av = self.value(a);
        let n = av.last_dim();
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            data.extend_from_slice(&av.data()[r * n..(r + 1) * n]);
        }
        self.push(
            Tensor::new([rows.len(), n], data),
            Op::GatherRows {
                x: a,
                rows: rows.to_vec(),
            },
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self.value(a).clone().reshape(shape.to_vec());
        self.push(v, Op::Reshape(a))
    }

    /// Arithmetic mean over one axis, which is removed from the shape.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Var {
        let av = self.value(a);
        let (outer, len, inner) = split_axis(av.shape(), axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut data[o * inner..(o + 1) * inner];
            for t in 0..len {
                let src = &av.data()[(o * len + t) * inner..(o * len + t + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            for d in dst.iter_mut() {
                *d /= len as f64;
            }
        }
        let mut shape = av.shape().to_vec();
        shape.remove(axis);
        self.push(Tensor::new(shape, data), Op::MeanAxis { x: a, axis })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    /// Mean over all elements.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Looks up rows of an embedding table: output `[ids.len(), dim]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = self.value(table);
        let dim = tv.last_dim();
        let vocab = tv.rows();
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            assert!(
                id < vocab,
                "token {id} outside embedding vocabulary {vocab}"
            );
            data.extend_from_slice(&tv.data()[id * dim..(id + 1) * dim]);
        }
        self.push(
            Tensor::new([ids.len(), dim], data),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Summed softmax cross-entropy of each logit row against its target
    /// class. Entries equal to `-inf` are treated as excluded classes.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lv = self.value(logits);
        let n = lv.last_dim();
        assert_eq!(lv.rows(), targets.len(), "one target per logit row");
        let mut total = 0.0;
        for (row, &t) in lv.data().chunks(n).zip(targets) {
            assert!(row[t].is_finite(), "target class {t} is masked out");
            total += log_sum_exp(row) - row[t];
        }
        self.push(
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
        )
    }

    /// `Σ (pred − target)²` against a constant target.
    pub fn squared_error(&mut self, pred: Var, target: Tensor) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.len(), target.len(), "squared error length mismatch");
        let total = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        self.push(Tensor::scalar(total), Op::SquaredError { pred, target })
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Panics if `loss` holds more than one element.
    pub fn backward(&self, loss: Var) -> Gradients {
        let lv = self.value(loss);
        assert_eq!(
            lv.len(),
            1,
            "backward requires a scalar loss, got shape {:?}",
            lv.shape()
        );
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients {
            grads,
            params: self.params.clone(),
        }
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.last_dim(), bv.shape()[1]);
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, g.data(), false, bv.data(), true, &mut da, false);
                accumulate(grads, *a, av.shape(), da);
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, av.data(), true, g.data(), false, &mut db, false);
                accumulate(grads, *b, bv.shape(), db);
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (bt, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = out.shape()[2];
                let mut da = vec![0.0; bt * m * k];
                let mut db = vec![0.0; bt * k * n];
                for s in 0..bt {
                    let gs = &g.data()[s * m * n..(s + 1) * m * n];
                    let as_ = &av.data()[s * m * k..(s + 1) * m * k];
                    let bs = &bv.data()[s * k * n..(s + 1) * k * n];
                    let das = &mut da[s * m * k..(s + 1) * m * k];
                    let dbs = &mut db[s * k * n..(s + 1) * k * n];
                    if *trans_b {
                        // b stored [n, k]: out = a · bᵀ
                        gemm(m, n, k, gs, false, bs, false, das, false);
                        gemm(n, m, k, gs, true, as_, false, dbs, false);
                    } else {
                        gemm(m, n, k, gs, false, bs, true, das, false);
                        gemm(k, m, n, as_, true, gs, false, dbs, false);
                    }
                }
                accumulate(grads, *a, av.shape(), da);
                accumulate(grads, *b, bv.shape(), db);
            }
            Op::Add(a, b) => {
                accumulate_ref(grads, *a, g);
                accumulate_ref(grads, *b, g);
            }
            Op::AddRow(a, row) => {
                accumulate_ref(grads, *a, g);
                let rv = self.value(*row);
                let n = rv.len();
                let mut dr = vec![0.0; n];
                for chunk in g.data().chunks(n) {
                    for (d, x) in dr.iter_mut().zip(chunk) {
                        *d += x;
                    }
                }
                accumulate(grads, *row, rv.shape(), dr);
            }
            Op::Sub(a, b) => {
                accumulate_ref(grads, *a, g);
                accumulate(grads, *b, g.shape(), g.data().iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = g.data().iter().zip(bv.data()).map(|(g, y)| g * y).collect();
                let db = g.data().iter().zip(av.data()).map(|(g, x)| g * x).collect();
                accumulate(grads, *a, av.shape(), da);
                accumulate(grads, *b, bv.shape(), db);
            }
            Op::Scale(a, c) => {
                accumulate(
                    grads,
                    *a,
                    g.shape(),
                    g.data().iter().map(|x| x * c).collect(),
                );
            }
            Op::Tanh(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                accumulate(grads, *a, g.shape(), d);
            }
            Op::Sigmoid(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                accumulate(grads, *a, g.shape(), d);
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(grads, *a, g.shape(), d);
            }
            Op::Map { x, df } => {
                let xv = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(g, &x)| g * df(x))
                    .collect();
                accumulate(grads, *x, g.shape(), d);
            }
            Op::Softmax(a) => {
                let n = out.last_dim();
                let mut d = vec![0.0; out.len()];
                for ((drow, yrow), grow) in d
                    .chunks_mut(n)
                    .zip(out.data().chunks(n))
                    .zip(g.data().chunks(n))
                {
                    let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                    for ((dx, y), gy) in drow.iter_mut().zip(yrow).zip(grow) {
                        *dx = y * (gy - dot);
                    }
                }
                accumulate(grads, *a, out.shape(), d);
            }
            Op::Concat(parts) => {
                let total = out.last_dim();
                let rows = out.rows();
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let w = pv.last_dim();
                    let mut d = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                    }
                    accumulate(grads, p, pv.shape(), d);
                    offset += w;
                }
            }
            Op::Stack(parts) => {
                let (b, l, h) = (out.shape()[0], out.shape()[1], out.shape()[2]);
                for (t, &p) in parts.iter().enumerate() {
                    let mut d = Vec::with_capacity(b * h);
                    for s in 0..b {
                        d.extend_from_slice(&g.data()[(s * l + t) * h..(s * l + t + 1) * h]);
                    }
                    accumulate(grads, p, &[b, h], d);
                }
            }
            Op::SliceLast { x, start, len } => {
                let xv = self.value(*x);
                let n = xv.last_dim();
                let slot = grads[x.0].get_or_insert_with(|| Tensor::zeros(xv.shape().to_vec()));
                for (drow, grow) in slot.data_mut().chunks_mut(n).zip(g.data().chunks(*len)) {
                    for (d, s) in drow[*start..start + len].iter_mut().zip(grow) {
                        *d += s;
                    }
                }
            }
            Op::SliceRows { x, start, len } => {
                let xv = self.value(*x);
                let n = xv.last_dim();
                let slot = grads[x.0].get_or_insert_with(|| Tensor::zeros(xv.shape().to_vec()));
                for (d, s) in slot.data_mut()[start * n..(start + len) * n]
                    .iter_mut()
                    .zip(g.data())
                {
                    *d += s;
                }
            }
            Op::GatherRows { x, rows } => {
                let xv = self.value(*x);
                let n = xv.last_dim();
                let slot = grads[x.0].get_or_insert_with(|| Tensor::zeros(xv.shape().to_vec()));
                for (k, &r) in rows.iter().enumerate() {
                    for (d, s) in slot.data_mut()[r * n..(r + 1) * n]
                        .iter_mut()
                        .zip(&g.data()[k * n..(k + 1) * n])
                    {
                        *d += s;
                    }
                }
            }
            Op::Reshape(a) => {
                let av = self.value(*a);
                accumulate(grads, *a, av.shape(), g.data().to_vec());
            }
            Op::MeanAxis { x, axis } => {
                let xv = self.value(*x);
                let (outer, len, inner) = split_axis(xv.shape(), *axis);
                let scale = 1.0 / len as f64;
                let mut d = vec![0.0; xv.len()];
                for o in 0..outer {
                    let src = &g.data()[o * inner..(o + 1) * inner];
                    for t in 0..len {
                        let dst = &mut d[(o * len + t) * inner..(o * len + t + 1) * inner];
                        for (dd, s) in dst.iter_mut().zip(src) {
                            *dd = s * scale;
                        }
                    }
                }
                accumulate(grads, *x, xv.shape(), d);
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                accumulate(grads, *a, av.shape(), vec![g.item(); av.len()]);
            }
            Op::Embedding { table, ids } => {
                let tv = self.value(*table);
                let dim = tv.last_dim();
                let slot = grads[table.0].get_or_insert_with(|| Tensor::zeros(tv.shape().to_vec()));
                for (k, &id) in ids.iter().enumerate() {
                    for (d, s) in slot.data_mut()[id * dim..(id + 1) * dim]
                        .iter_mut()
                        .zip(&g.data()[k * dim..(k + 1) * dim])
                    {
                        *d += s;
                    }
                }
            }
            Op::CrossEntropy { logits, targets } => {
                let lv = self.value(*logits);
                let n = lv.last_dim();
                let scale = g.item();
                let mut d = lv.data().to_vec();
                for (row, &t) in d.chunks_mut(n).zip(targets) {
                    softmax_in_place(row);
                    row[t] -= 1.0;
                    for x in row.iter_mut() {
                        *x *= scale;
                    }
                }
                accumulate(grads, *logits, lv.shape(), d);
            }
            Op::SquaredError { pred, target } => {
                let pv = self.value(*pred);
                let scale = g.item();
                let d = pv
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(p, t)| 2.0 * (p - t) * scale)
                    .collect();
                accumulate(grads, *pred, pv.shape(), d);
            }
        }
    }
}

/// Per-node gradients from one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(String, Var)>,
}

impl Gradients {
    /// Gradient with respect to any node; `None` if no path reaches the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of every bound parameter that received one, keyed by path.
    pub fn into_params(mut self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (path, v) in &self.params {
            if let Some(g) = self.grads.get_mut(v.0).and_then(Option::take) {
                out.insert(path.clone(), g);
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], data: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(&data) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(Tensor::new(shape.to_vec(), data)),
    }
}

fn accumulate_ref(grads: &mut [Option<Tensor>], v: Var, g: &Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(g),
        slot @ None => *slot = Some(g.clone()),
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    assert!(axis < shape.len(), "axis {axis} out of range for {shape:?}");
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Hyperbolic tangent through a single `exp`, which is markedly cheaper
/// than the libm routine. Small arguments use libm to avoid cancellation.
pub(crate) fn tanh(x: f64) -> f64 {
    let a = x.abs();
    if a < 0.02 {
        return x.tanh();
    }
    let e = (-2.0 * a).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn max_finite(row: &[f64]) -> f64 {
    row.iter()
        .copied()
        .filter(|x| x.is_finite())
        .fold(f64::NEG_INFINITY, f64::max)
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = max_finite(row);
    let s: f64 = row.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = max_finite(row);
    let mut s = 0.0;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in row.iter_mut() {
        *x /= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_has_gradient_six_at_three() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(3.0));
        let y = g.mul(x, x);
        let grads = g.backward(y);
        assert_eq!(g.value(y).item(), 9.0);
        assert_eq!(grads.wrt(x).unwrap().item(), 6.0);
    }

    #[test]
    fn mean_spreads_gradient_evenly() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(vec![1.0, -2.0, 5.0, 0.5]));
        let y = g.mean(x);
        let grads = g.backward(y);
        assert_eq!(grads.wrt(x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    #[should_panic(expected = "scalar loss")]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(vec![1.0, 2.0]));
        let y = g.tanh(x);
        let _ = g.backward(y);
    }

    #[test]
    fn masked_logits_get_zero_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new([1, 3], vec![0.3, -1.0, 2.0]));
        let mask = g.input(Tensor::new([1, 3], vec![0.0, 0.0, f64::NEG_INFINITY]));
        let masked = g.add(x, mask);
        let loss = g.cross_entropy(masked, &[1]);
        let want = (0.3f64.exp() + (-1.0f64).exp()).ln() + 1.0;
        assert!((g.value(loss).item() - want).abs() < 1e-12);
        let grads = g.backward(loss);
        let dx = grads.wrt(x).unwrap().data();
        assert_eq!(dx[2], 0.0);
        assert!((dx[0] + dx[1]).abs() < 1e-12);
    }

    #[test]
    fn unused_branches_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(1.0));
        let unused = g.input(Tensor::scalar(2.0));
        let _dead = g.tanh(unused);
        let y = g.scale(x, 3.0);
        let grads = g.backward(y);
        assert!(grads.wrt(unused).is_none());
    }

    #[test]
    fn stack_then_mean_axis_recovers_average() {
        let mut g = Graph::new();
        let a = g.input(Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let b = g.input(Tensor::new([2, 2], vec![3.0, 6.0, 5.0, 0.0]));
        let s = g.stack(&[a, b]);
        assert_eq!(g.value(s).shape(), &[2, 2, 2]);
        let m = g.mean_axis(s, 1);
        assert_eq!(g.value(m).data(), &[2.0, 4.0, 4.0, 2.0]);
    }
}
