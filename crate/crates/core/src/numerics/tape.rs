//! Reverse-mode gradient tape over [`Matrix`] values.
//!
//! A [`Tape`] records one forward pass as a flat list of nodes; `backward`
//! walks it in reverse, pushing vector-Jacobian products to the inputs.
//! Tapes are confined to a single thread. Parallelism happens across
//! independent samples (one tape each), never within one tape.

use crate::error::CoreError;
use crate::numerics::Matrix;
use crate::Result;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Expr {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    ElemMul(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Relu(Var),
    RowSoftmax(Var),
    RowRmsNorm { x: Var, eps: f64 },
    RowL2Norm { x: Var, eps: f64 },
    Dot(Var, Var),
    StackRows(Vec<(Var, usize)>),
    ReplaceRow { base: Var, row: usize, value: Var },
    CrossEntropy { logits: Var, target: usize },
}

struct Node {
    value: Matrix,
    expr: Expr,
    needs_grad: bool,
}

/// The primitive kinds exposed uniformly for dispatch and verification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrimitiveKind {
    Matmul,
    Add,
    RowSoftmax,
    Relu,
    Scale(f64),
    Transpose,
    Dot,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or a zero matrix of the given shape if `v` was
    /// never reached by the backward sweep.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Matrix {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Matrix::zeros(rows, cols),
        }
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Operation tape for one forward pass.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable input. Rejects non-finite values.
    pub fn leaf(&mut self, value: Matrix) -> Result<Var> {
        value.check_finite("leaf")?;
        Ok(self.push(value, Expr::Leaf, true))
    }

    /// Non-trainable input; backward never flows into it.
    pub fn constant(&mut self, value: Matrix) -> Result<Var> {
        value.check_finite("constant")?;
        Ok(self.push(value, Expr::Constant, false))
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, expr: Expr, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            expr,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Expr::MatMul(a, b), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Expr::Add(a, b), needs))
    }

    pub fn elem_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).elem_mul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Expr::ElemMul(a, b), needs))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        let needs = self.needs(a);
        self.push(value, Expr::Scale(a, c), needs)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let needs = self.needs(a);
        self.push(value, Expr::Transpose(a), needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).relu();
        let needs = self.needs(a);
        self.push(value, Expr::Relu(a), needs)
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let value = self.value(a).row_softmax();
        let needs = self.needs(a);
        self.push(value, Expr::RowSoftmax(a), needs)
    }

    pub fn row_rms_norm(&mut self, a: Var, eps: f64) -> Var {
        let value = self.value(a).row_rms_norm(eps);
        let needs = self.needs(a);
        self.push(value, Expr::RowRmsNorm { x: a, eps }, needs)
    }

    pub fn row_l2_normalize(&mut self, a: Var, eps: f64) -> Var {
        let value = self.value(a).row_l2_normalize(eps);
        let needs = self.needs(a);
        self.push(value, Expr::RowL2Norm { x: a, eps }, needs)
    }

    /// Sum of elementwise products of two same-shape matrices, as a 1x1.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = Matrix::scalar(self.value(a).dot(self.value(b))?);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Expr::Dot(a, b), needs))
    }

    /// Stack single rows taken from other values into a new k x d matrix.
    pub fn stack_rows(&mut self, parts: &[(Var, usize)]) -> Result<Var> {
        if parts.is_empty() {
            return Err(CoreError::dim("stack_rows", "no parts"));
        }
        let cols = self.value(parts[0].0).cols();
        let mut data = Vec::with_capacity(parts.len() * cols);
        let mut needs = false;
        for &(v, r) in parts {
            let m = self.value(v);
            if m.cols() != cols {
                return Err(CoreError::dim(
                    "stack_rows",
                    format!("part has {} cols, expected {cols}", m.cols()),
                ));
            }
            if r >= m.rows() {
                return Err(CoreError::dim(
                    "stack_rows",
                    format!("row {r} out of bounds for {} rows", m.rows()),
                ));
            }
            data.extend(m.view().row(r).iter().copied());
            needs |= self.needs(v);
        }
        let value = Matrix::from_vec(parts.len(), cols, data)?;
        Ok(self.push(value, Expr::StackRows(parts.to_vec()), needs))
    }

    /// Extract one row as a 1 x d matrix.
    pub fn extract_row(&mut self, v: Var, row: usize) -> Result<Var> {
        self.stack_rows(&[(v, row)])
    }

    /// Copy of `base` with `row` replaced by the 1 x d `value`.
    pub fn replace_row(&mut self, base: Var, row: usize, value: Var) -> Result<Var> {
        let b = self.value(base);
        let v = self.value(value);
        if v.rows() != 1 || v.cols() != b.cols() {
            return Err(CoreError::dim(
                "replace_row",
                format!("value {:?} vs base {:?}", v.shape(), b.shape()),
            ));
        }
        if row >= b.rows() {
            return Err(CoreError::dim(
                "replace_row",
                format!("row {row} out of bounds for {} rows", b.rows()),
            ));
        }
        let mut out = b.clone();
        for c in 0..out.cols() {
            out.set(row, c, v.get(0, c));
        }
        let needs = self.needs(base) || self.needs(value);
        Ok(self.push(out, Expr::ReplaceRow { base, row, value }, needs))
    }

    /// Softmax cross-entropy of a 1 x C logits row against a class index,
    /// fused for numerical stability: logsumexp(z) - z[target].
    pub fn cross_entropy_logits(&mut self, logits: Var, target: usize) -> Result<Var> {
        let z = self.value(logits);
        if z.rows() != 1 {
            return Err(CoreError::dim("cross_entropy", "logits must be 1 x C"));
        }
        if target >= z.cols() {
            return Err(CoreError::dim(
                "cross_entropy",
                format!("target {target} out of bounds for {} classes", z.cols()),
            ));
        }
        let row = z.row_vec(0);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let value = Matrix::scalar(lse - row[target]);
        let needs = self.needs(logits);
        Ok(self.push(value, Expr::CrossEntropy { logits, target }, needs))
    }

    /// Uniform dispatch over the basic primitive kinds.
    pub fn apply(&mut self, kind: PrimitiveKind, inputs: &[Var]) -> Result<Var> {
        let need = |n: usize| -> Result<()> {
            if inputs.len() != n {
                Err(CoreError::dim(
                    "apply",
                    format!("{kind:?} takes {n} inputs, got {}", inputs.len()),
                ))
            } else {
                Ok(())
            }
        };
        match kind {
            PrimitiveKind::Matmul => {
                need(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            PrimitiveKind::Add => {
                need(2)?;
                self.add(inputs[0], inputs[1])
            }
            PrimitiveKind::RowSoftmax => {
                need(1)?;
                Ok(self.row_softmax(inputs[0]))
            }
            PrimitiveKind::Relu => {
                need(1)?;
                Ok(self.relu(inputs[0]))
            }
            PrimitiveKind::Scale(c) => {
                need(1)?;
                Ok(self.scale(inputs[0], c))
            }
            PrimitiveKind::Transpose => {
                need(1)?;
                Ok(self.transpose(inputs[0]))
            }
            PrimitiveKind::Dot => {
                need(2)?;
                self.dot(inputs[0], inputs[1])
            }
        }
    }

    /// Backward from a scalar (1x1) output, seeding with 1.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).shape() != (1, 1) {
            return Err(CoreError::dim(
                "backward",
                format!("output must be 1x1, got {:?}", self.value(output).shape()),
            ));
        }
        self.backward_seeded(&[(output, Matrix::scalar(1.0))])
    }

    /// Backward seeded with explicit cotangents on any recorded values.
    /// Cotangents are accumulated; backward is linear in the seeds.
    pub fn backward_seeded(&self, seeds: &[(Var, Matrix)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, cot) in seeds {
            if cot.shape() != self.value(*v).shape() {
                return Err(CoreError::dim(
                    "backward_seeded",
                    format!(
                        "cotangent {:?} vs value {:?}",
                        cot.shape(),
                        self.value(*v).shape()
                    ),
                ));
            }
            accumulate(&mut grads[v.0], cot.clone());
        }
        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].needs_grad {
                grads[i] = None;
                continue;
            }
            let Some(up) = grads[i].clone() else { continue };
            self.propagate(i, &up, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, up: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.expr {
            Expr::Leaf | Expr::Constant => {}
            Expr::MatMul(a, b) => {
                if self.needs(*a) {
                    let d = up.matmul(&self.value(*b).transpose())?;
                    accumulate(&mut grads[a.0], d);
                }
                if self.needs(*b) {
                    let d = self.value(*a).transpose().matmul(up)?;
                    accumulate(&mut grads[b.0], d);
                }
            }
            Expr::Add(a, b) => {
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], up.clone());
                }
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], up.clone());
                }
            }
            Expr::ElemMul(a, b) => {
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], up.elem_mul(self.value(*b))?);
                }
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], up.elem_mul(self.value(*a))?);
                }
            }
            Expr::Scale(a, c) => {
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], up.scale(*c));
                }
            }
            Expr::Transpose(a) => {
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], up.transpose());
                }
            }
            Expr::Relu(a) => {
                if self.needs(*a) {
                    let x = self.value(*a);
                    let mut d = up.clone();
                    for r in 0..d.rows() {
                        for c in 0..d.cols() {
                            if x.get(r, c) <= 0.0 {
                                d.set(r, c, 0.0);
                            }
                        }
                    }
                    accumulate(&mut grads[a.0], d);
                }
            }
            Expr::RowSoftmax(a) => {
                if self.needs(*a) {
                    // dx = y ⊙ (dy - rowsum(dy ⊙ y))
                    let y = &node.value;
                    let prod = up.elem_mul(y)?;
                    let mut d = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let s: f64 = prod.view().row(r).iter().sum();
                        for c in 0..y.cols() {
                            d.set(r, c, y.get(r, c) * (up.get(r, c) - s));
                        }
                    }
                    accumulate(&mut grads[a.0], d);
                }
            }
            Expr::RowRmsNorm { x, eps } => {
                if self.needs(*x) {
                    // y = x / r with r = sqrt(mean(x^2) + eps)
                    // dx = (dy - y * mean(dy ⊙ y)) / r
                    let xm = self.value(*x);
                    let y = &node.value;
                    let dcols = xm.cols() as f64;
                    let mut d = Matrix::zeros(xm.rows(), xm.cols());
                    for r in 0..xm.rows() {
                        let ms = xm.view().row(r).iter().map(|v| v * v).sum::<f64>() / dcols;
                        let inv_r = 1.0 / (ms + eps).sqrt();
                        let mean_dy_y = up
                            .view()
                            .row(r)
                            .iter()
                            .zip(y.view().row(r).iter())
                            .map(|(g, yv)| g * yv)
                            .sum::<f64>()
                            / dcols;
                        for c in 0..xm.cols() {
                            d.set(r, c, (up.get(r, c) - y.get(r, c) * mean_dy_y) * inv_r);
                        }
                    }
                    accumulate(&mut grads[x.0], d);
                }
            }
            Expr::RowL2Norm { x, eps } => {
                if self.needs(*x) {
                    let xm = self.value(*x);
                    let y = &node.value;
                    let mut d = Matrix::zeros(xm.rows(), xm.cols());
                    for r in 0..xm.rows() {
                        let norm = xm.view().row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                        if norm > *eps {
                            // dx = (dy - y (y · dy)) / ||x||
                            let ydy: f64 = y
                                .view()
                                .row(r)
                                .iter()
                                .zip(up.view().row(r).iter())
                                .map(|(a, b)| a * b)
                                .sum();
                            for c in 0..xm.cols() {
                                d.set(r, c, (up.get(r, c) - y.get(r, c) * ydy) / norm);
                            }
                        } else {
                            // linear branch y = x / eps
                            for c in 0..xm.cols() {
                                d.set(r, c, up.get(r, c) / eps);
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], d);
                }
            }
            Expr::Dot(a, b) => {
                let s = up.item();
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], self.value(*b).scale(s));
                }
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], self.value(*a).scale(s));
                }
            }
            Expr::StackRows(parts) => {
                for (k, &(v, r)) in parts.iter().enumerate() {
                    if !self.needs(v) {
                        continue;
                    }
                    let src = self.value(v);
                    let slot = &mut grads[v.0];
                    if slot.is_none() {
                        *slot = Some(Matrix::zeros(src.rows(), src.cols()));
                    }
                    let g = slot.as_mut().expect("just initialized");
                    for c in 0..src.cols() {
                        g.set(r, c, g.get(r, c) + up.get(k, c));
                    }
                }
            }
            Expr::ReplaceRow { base, row, value } => {
                if self.needs(*base) {
                    let mut d = up.clone();
                    for c in 0..d.cols() {
                        d.set(*row, c, 0.0);
                    }
                    accumulate(&mut grads[base.0], d);
                }
                if self.needs(*value) {
                    let mut d = Matrix::zeros(1, up.cols());
                    for c in 0..up.cols() {
                        d.set(0, c, up.get(*row, c));
                    }
                    accumulate(&mut grads[value.0], d);
                }
            }
            Expr::CrossEntropy { logits, target } => {
                if self.needs(*logits) {
                    let s = up.item();
                    let mut d = self.value(*logits).row_softmax();
                    d.set(0, *target, d.get(0, *target) - 1.0);
                    accumulate(&mut grads[logits.0], d.scale(s));
                }
            }
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Matrix>, delta: Matrix) {
    match slot {
        Some(g) => {
            *g = g.add(&delta).expect("gradient shapes agree");
        }
        None => *slot = Some(delta),
    }
}

/// Pure forward application of a primitive (no tape).
pub fn apply_primitive(kind: PrimitiveKind, inputs: &[&Matrix]) -> Result<Matrix> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|m| tape.constant((*m).clone()))
        .collect::<Result<_>>()?;
    let out = tape.apply(kind, &vars)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let i3 = t.constant(Matrix::identity(3)).unwrap();
        let a = t
            .constant(m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]))
            .unwrap();
        let out = t.matmul(i3, a).unwrap();
        assert_eq!(t.value(out), t.value(a));
    }

    #[test]
    fn matmul_hand_expansion() {
        // [[1,2],[3,4]] x [[5],[6]] = [[17],[39]]
        let mut t = Tape::new();
        let a = t.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
        let b = t.constant(m(&[&[5.0], &[6.0]])).unwrap();
        let out = t.matmul(a, b).unwrap();
        assert_eq!(t.value(out), &m(&[&[17.0], &[39.0]]));
    }

    #[test]
    fn shape_mismatch_names_operands() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::zeros(2, 3)).unwrap();
        let b = t.constant(Matrix::zeros(2, 3)).unwrap();
        let err = t.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul"), "unexpected message: {msg}");
    }

    #[test]
    fn non_finite_leaf_rejected() {
        let mut t = Tape::new();
        let bad = Matrix::zeros(1, 1);
        // route around the constructor check to simulate a corrupted value
        let mut bad = bad;
        bad.as_array_mut()[(0, 0)] = f64::INFINITY;
        assert!(t.leaf(bad).is_err());
    }

    #[test]
    fn backward_of_dot_is_linear_in_seed() {
        let mut t = Tape::new();
        let x = t.leaf(m(&[&[1.0, 2.0, 3.0]])).unwrap();
        let w = t.constant(m(&[&[4.0, 5.0, 6.0]])).unwrap();
        let s = t.dot(x, w).unwrap();

        let g1 = t.backward_seeded(&[(s, Matrix::scalar(1.0))]).unwrap();
        let g2 = t.backward_seeded(&[(s, Matrix::scalar(2.5))]).unwrap();
        let a = g1.get(x).unwrap();
        let b = g2.get(x).unwrap();
        assert!(b.max_abs_diff(&a.scale(2.5)) < 1e-15);
    }

    #[test]
    fn chain_rule_through_replace_and_stack() {
        // base rows feed both the replaced row (via extract) and the rest.
        let mut t = Tape::new();
        let base = t.leaf(m(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
        let row = t.extract_row(base, 1).unwrap();
        let doubled = t.scale(row, 2.0);
        let out = t.replace_row(base, 1, doubled).unwrap();
        // loss = sum of all entries
        let ones = t.constant(m(&[&[1.0, 1.0], &[1.0, 1.0]])).unwrap();
        let loss = t.dot(out, ones).unwrap();
        let g = t.backward(loss).unwrap();
        // row 0 contributes once; row 1 contributes through the doubling.
        assert_eq!(g.get(base).unwrap(), &m(&[&[1.0, 1.0], &[2.0, 2.0]]));
    }

    #[test]
    fn cross_entropy_matches_manual() {
        let mut t = Tape::new();
        let z = t.leaf(m(&[&[0.3, -0.2, 1.1]])).unwrap();
        let loss = t.cross_entropy_logits(z, 2).unwrap();
        let row = [0.3_f64, -0.2, 1.1];
        let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        assert!((t.value(loss).item() - (lse - 1.1)).abs() < 1e-12);
        let g = t.backward(loss).unwrap();
        let p = m(&[&row]).row_softmax();
        let expect = m(&[&[p.get(0, 0), p.get(0, 1), p.get(0, 2) - 1.0]]);
        assert!(g.get(z).unwrap().max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn equal_logits_loss_is_ln_n() {
        let mut t = Tape::new();
        let z = t.leaf(Matrix::zeros(1, 2)).unwrap();
        let loss = t.cross_entropy_logits(z, 0).unwrap();
        assert!((t.value(loss).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(m(&[&[2.0]])).unwrap();
        let c = t.constant(m(&[&[3.0]])).unwrap();
        let y = t.elem_mul(x, c).unwrap();
        let g = t.backward(y).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().item(), 3.0);
    }
}
