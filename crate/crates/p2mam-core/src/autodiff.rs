//! Reverse-mode differentiation over a flat tape of matrix-valued nodes.
//!
//! A `Tape` borrows parameter matrices as leaves, records the forward
//! computation as it happens, and replays it backwards on demand. Gradients
//! accumulate additively across fan-out, so a node consumed twice receives
//! the sum of both path gradients. The softmax+cross-entropy pair is a
//! single fused node: its backward rule is `scores - onehot(target)`, which
//! avoids the cancellation of differentiating the two halves separately.

use alloc::vec;
use alloc::vec::Vec;

use crate::matrix::Matrix;
use crate::softmax::{masked_softmax_slice, softmax_slice, LOG_FLOOR};

pub type NodeId = usize;

enum Value<'p> {
    Borrowed(&'p Matrix),
    Owned(Matrix),
}

impl Value<'_> {
    fn get(&self) -> &Matrix {
        match self {
            Value::Borrowed(m) => m,
            Value::Owned(m) => m,
        }
    }
}

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    /// `a * b^T` with `a: r x k`, `b: c x k`.
    MatMulNt(NodeId, NodeId),
    /// Row lookup: output row `i` is `table` row `rows[i]`.
    Gather { table: NodeId, rows: Vec<usize> },
    /// Column-wise concatenation of row vectors.
    ConcatCols(Vec<NodeId>),
    /// Stabilized softmax of `input / scale` over unmasked positions.
    MaskedSoftmax {
        input: NodeId,
        mask: Vec<bool>,
        scale: f64,
    },
    /// Tied-embedding output logits: `out[j] = query . table[j + 1]`,
    /// skipping the padding row 0.
    ScoreLogits { query: NodeId, table: NodeId },
    /// Fused softmax + negative log likelihood; caches the normalized
    /// scores computed on the way forward.
    SoftmaxXent {
        logits: NodeId,
        target_col: usize,
        probs: Vec<f64>,
    },
}

pub struct Tape<'p> {
    values: Vec<Value<'p>>,
    ops: Vec<Op>,
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        self.values[id].get()
    }

    fn push(&mut self, value: Value<'p>, op: Op) -> NodeId {
        self.values.push(value);
        self.ops.push(op);
        self.ops.len() - 1
    }

    /// Parameter leaf; the tape only borrows it.
    pub fn leaf(&mut self, m: &'p Matrix) -> NodeId {
        self.push(Value::Borrowed(m), Op::Leaf)
    }

    /// Constant leaf with an owned value. Gradients reaching it are
    /// accumulated but go nowhere.
    pub fn constant(&mut self, m: Matrix) -> NodeId {
        self.push(Value::Owned(m), Op::Leaf)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).add(self.value(b));
        self.push(Value::Owned(v), Op::Add(a, b))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).scaled(s);
        self.push(Value::Owned(v), Op::Scale(a, s))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(Value::Owned(v), Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul_nt(self.value(b));
        self.push(Value::Owned(v), Op::MatMulNt(a, b))
    }

    pub fn gather(&mut self, table: NodeId, rows: Vec<usize>) -> NodeId {
        assert!(!rows.is_empty(), "gather needs at least one row");
        let t = self.value(table);
        let mut out = Matrix::zeros(rows.len(), t.cols());
        for (i, &r) in rows.iter().enumerate() {
            assert!(r < t.rows(), "gather row {} out of range", r);
            out.row_mut(i).copy_from_slice(t.row(r));
        }
        self.push(Value::Owned(out), Op::Gather { table, rows })
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> NodeId {
        assert!(!parts.is_empty());
        let mut data = Vec::new();
        for &p in &parts {
            let v = self.value(p);
            assert_eq!(v.rows(), 1, "concat_cols expects row vectors");
            data.extend_from_slice(v.row(0));
        }
        let v = Matrix::row_vector(data);
        self.push(Value::Owned(v), Op::ConcatCols(parts))
    }

    pub fn masked_softmax(&mut self, input: NodeId, mask: Vec<bool>, scale: f64) -> NodeId {
        let x = self.value(input);
        assert_eq!(x.rows(), 1, "masked_softmax expects a row vector");
        let out = masked_softmax_slice(x.row(0), &mask, scale)
            .expect("masked_softmax requires at least one live position");
        let v = Matrix::row_vector(out);
        self.push(Value::Owned(v), Op::MaskedSoftmax { input, mask, scale })
    }

    pub fn score_logits(&mut self, query: NodeId, table: NodeId) -> NodeId {
        let q = self.value(query);
        let t = self.value(table);
        assert_eq!(q.rows(), 1, "score query must be a row vector");
        assert_eq!(q.cols(), t.cols(), "query width must match embedding width");
        assert!(t.rows() >= 2, "embedding table needs at least one real item");
        let m = t.rows() - 1;
        let mut out = vec![0.0; m];
        for j in 0..m {
            let row = t.row(j + 1);
            let mut s = 0.0;
            for (a, b) in q.row(0).iter().zip(row) {
                s += a * b;
            }
            out[j] = s;
        }
        let v = Matrix::row_vector(out);
        self.push(Value::Owned(v), Op::ScoreLogits { query, table })
    }

    /// Returns the loss node (`1 x 1`). `target` is a 1-based item id.
    pub fn softmax_xent(&mut self, logits: NodeId, target: u32) -> NodeId {
        let l = self.value(logits);
        assert_eq!(l.rows(), 1);
        let m = l.cols();
        assert!(target >= 1 && target as usize <= m, "target out of range");
        let target_col = target as usize - 1;
        let probs = softmax_slice(l.row(0));
        let loss = -libm::log(probs[target_col].max(LOG_FLOOR));
        let v = Matrix::from_vec(1, 1, vec![loss]);
        self.push(
            Value::Owned(v),
            Op::SoftmaxXent {
                logits,
                target_col,
                probs,
            },
        )
    }

    /// Normalized scores cached by a [`Tape::softmax_xent`] node.
    pub fn xent_probs(&self, id: NodeId) -> &[f64] {
        match &self.ops[id] {
            Op::SoftmaxXent { probs, .. } => probs,
            _ => panic!("node {} is not a softmax_xent node", id),
        }
    }

    /// Propagates d(root)/d(node) to every node and returns the per-node
    /// gradients, indexed by `NodeId`. `root` must be a `1 x 1` scalar.
    pub fn backward(&self, root: NodeId) -> Vec<Matrix> {
        let rv = self.value(root);
        assert_eq!((rv.rows(), rv.cols()), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Matrix> = self
            .values
            .iter()
            .map(|v| Matrix::zeros(v.get().rows(), v.get().cols()))
            .collect();
        grads[root].set(0, 0, 1.0);

        for id in (0..=root).rev() {
            match &self.ops[id] {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    let g = grads[id].clone();
                    grads[*a].add_assign(&g);
                    grads[*b].add_assign(&g);
                }
                Op::Scale(a, s) => {
                    let g = grads[id].clone();
                    grads[*a].add_assign_scaled(&g, *s);
                }
                Op::MatMul(a, b) => {
                    let g = grads[id].clone();
                    let da = g.matmul_nt(self.value(*b));
                    let db = self.value(*a).matmul_tn(&g);
                    grads[*a].add_assign(&da);
                    grads[*b].add_assign(&db);
                }
                Op::MatMulNt(a, b) => {
                    let g = grads[id].clone();
                    let da = g.matmul(self.value(*b));
                    let db = g.matmul_tn(self.value(*a));
                    grads[*a].add_assign(&da);
                    grads[*b].add_assign(&db);
                }
                Op::Gather { table, rows } => {
                    let g = grads[id].clone();
                    let gt = &mut grads[*table];
                    for (i, &r) in rows.iter().enumerate() {
                        let src = g.row(i);
                        let dst = gt.row_mut(r);
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let g = grads[id].clone();
                    let mut off = 0;
                    for &p in parts {
                        let w = grads[p].cols();
                        let dst = grads[p].row_mut(0);
                        dst.iter_mut()
                            .zip(&g.row(0)[off..off + w])
                            .for_each(|(d, s)| *d += s);
                        off += w;
                    }
                }
                Op::MaskedSoftmax { input, mask, scale } => {
                    let y = self.value(id).row(0);
                    let g = grads[id].row(0).to_vec();
                    let mut dot = 0.0;
                    for i in 0..y.len() {
                        if !mask[i] {
                            dot += g[i] * y[i];
                        }
                    }
                    let gin = grads[*input].row_mut(0);
                    for i in 0..y.len() {
                        if !mask[i] {
                            gin[i] += y[i] * (g[i] - dot) / scale;
                        }
                    }
                }
                Op::ScoreLogits { query, table } => {
                    let g = grads[id].clone();
                    let q = self.value(*query).row(0).to_vec();
                    let t = self.value(*table);
                    let m = t.rows() - 1;
                    {
                        let gq = grads[*query].row_mut(0);
                        for j in 0..m {
                            let gj = g.at(0, j);
                            if gj == 0.0 {
                                continue;
                            }
                            for (d, s) in gq.iter_mut().zip(t.row(j + 1)) {
                                *d += gj * s;
                            }
                        }
                    }
                    let gt = &mut grads[*table];
                    for j in 0..m {
                        let gj = g.at(0, j);
                        if gj == 0.0 {
                            continue;
                        }
                        for (d, s) in gt.row_mut(j + 1).iter_mut().zip(&q) {
                            *d += gj * s;
                        }
                    }
                }
                Op::SoftmaxXent {
                    logits,
                    target_col,
                    probs,
                } => {
                    let g = grads[id].at(0, 0);
                    let gl = grads[*logits].row_mut(0);
                    for (j, p) in probs.iter().enumerate() {
                        let delta = if j == *target_col { 1.0 } else { 0.0 };
                        gl[j] += g * (p - delta);
                    }
                }
            }
        }
        grads
    }
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_scalar<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn fanout_accumulates() {
        // y = x + x  =>  dy/dx = 2
        let x = Matrix::from_vec(1, 1, vec![3.0]);
        let mut t = Tape::new();
        let xi = t.leaf(&x);
        let y = t.add(xi, xi);
        let grads = t.backward(y);
        assert_eq!(grads[xi].at(0, 0), 2.0);
    }

    #[test]
    fn matmul_backward_rule() {
        // loss = sum of elements of A*B, checked against finite differences
        let a = Matrix::from_vec(2, 3, vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75]);
        let b = Matrix::from_vec(3, 2, vec![1.0, 0.5, -0.5, 2.0, 0.75, -1.25]);
        let ones = Matrix::from_vec(2, 1, vec![1.0, 1.0]);
        let ones_row = Matrix::from_vec(1, 2, vec![1.0, 1.0]);

        let mut t = Tape::new();
        let ai = t.leaf(&a);
        let bi = t.leaf(&b);
        let ci = t.matmul(ai, bi);
        let oi = t.constant(ones);
        let or = t.constant(ones_row);
        let col = t.matmul(ci, oi);
        let loss = t.matmul(or, col);
        let grads = t.backward(loss);

        let h = 1e-6;
        for r in 0..2 {
            for c in 0..3 {
                let num = fd_scalar(
                    |v| {
                        let mut a2 = a.clone();
                        a2.set(r, c, v);
                        let prod = a2.matmul(&b);
                        prod.data().iter().sum::<f64>()
                    },
                    a.at(r, c),
                    h,
                );
                assert!((grads[ai].at(r, c) - num).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn fused_xent_matches_finite_difference() {
        let logits = Matrix::row_vector(vec![0.2, -0.4, 1.1, 0.0, -2.3]);
        let target = 3u32;
        let mut t = Tape::new();
        let li = t.leaf(&logits);
        let loss = t.softmax_xent(li, target);
        let grads = t.backward(loss);

        let h = 1e-6;
        for j in 0..5 {
            let num = fd_scalar(
                |v| {
                    let mut l2 = logits.clone();
                    l2.set(0, j, v);
                    let p = softmax_slice(l2.row(0));
                    -libm::log(p[(target - 1) as usize])
                },
                logits.at(0, j),
                h,
            );
            let a = grads[li].at(0, j);
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1.0);
            assert!(rel < 1e-6, "col {}: analytic {} numeric {}", j, a, num);
        }
    }

    #[test]
    fn masked_softmax_backward_zero_on_masked() {
        let x = Matrix::row_vector(vec![1.0, 2.0, 3.0, 4.0]);
        let w = Matrix::from_vec(4, 1, vec![0.3, -0.7, 0.9, 0.1]);
        let mask = vec![true, false, false, true];
        let mut t = Tape::new();
        let xi = t.leaf(&x);
        let sm = t.masked_softmax(xi, mask.clone(), 1.3);
        let wi = t.constant(w.clone());
        let loss = t.matmul(sm, wi);
        let grads = t.backward(loss);
        assert_eq!(grads[xi].at(0, 0), 0.0);
        assert_eq!(grads[xi].at(0, 3), 0.0);

        let h = 1e-6;
        for j in 1..3 {
            let num = fd_scalar(
                |v| {
                    let mut x2 = x.clone();
                    x2.set(0, j, v);
                    let y = masked_softmax_slice(x2.row(0), &mask, 1.3).unwrap();
                    y.iter().zip(w.data()).map(|(a, b)| a * b).sum()
                },
                x.at(0, j),
                h,
            );
            assert!((grads[xi].at(0, j) - num).abs() < 1e-7);
        }
    }

    #[test]
    fn score_logits_skips_padding_row() {
        let table = Matrix::from_vec(4, 2, vec![9.0, 9.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let q = Matrix::row_vector(vec![2.0, 3.0]);
        let mut t = Tape::new();
        let ti = t.leaf(&table);
        let qi = t.leaf(&q);
        let lg = t.score_logits(qi, ti);
        assert_eq!(t.value(lg).cols(), 3);
        assert_eq!(t.value(lg).row(0), &[2.0, 3.0, 5.0]);

        let loss = t.softmax_xent(lg, 2);
        let grads = t.backward(loss);
        // padding row never receives gradient through scoring
        assert_eq!(grads[ti].row(0), &[0.0, 0.0]);
    }

    #[test]
    fn gather_accumulates_duplicate_rows() {
        let table = Matrix::from_vec(3, 2, vec![0.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
        let ones = Matrix::from_vec(2, 1, vec![1.0, 1.0]);
        let row = Matrix::from_vec(1, 3, vec![1.0, 1.0, 1.0]);
        let mut t = Tape::new();
        let ti = t.leaf(&table);
        let g = t.gather(ti, vec![1, 1, 2]);
        let oi = t.constant(ones);
        let ri = t.constant(row);
        let col = t.matmul(g, oi);
        let loss = t.matmul(ri, col);
        let grads = t.backward(loss);
        assert_eq!(grads[ti].row(1), &[2.0, 2.0]);
        assert_eq!(grads[ti].row(2), &[1.0, 1.0]);
    }
}
