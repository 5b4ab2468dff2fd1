//! Reverse-mode automatic differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every primitive applied to its [`Var`]s during one
//! forward pass. [`Tape::backward`] then walks the record in reverse and
//! accumulates adjoints. Tapes are rebuilt for each evaluation and never
//! shared across threads.

use std::cell::{Cell, RefCell};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, MatrixOps};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
enum Op<T: Scalar> {
    Leaf,
    MatMul(usize, usize),
    MatMulNt(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Hadamard(usize, usize),
    Scale(usize, T),
    Mask(usize, Matrix<T>),
    Offset(usize),
    Embed { src: usize, row0: usize, col0: usize },
    Slice { src: usize, row0: usize, col0: usize },
    Square(usize),
    Sum(usize),
}

impl<T: Scalar> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Hadamard(..) => "hadamard",
            Op::Scale(..) => "scale",
            Op::Mask(..) => "mask",
            Op::Offset(..) => "offset",
            Op::Embed { .. } => "embed",
            Op::Slice { .. } => "slice",
            Op::Square(..) => "square",
            Op::Sum(..) => "sum",
        }
    }
}

struct Node<T: Scalar> {
    value: Matrix<T>,
    op: Op<T>,
}

pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    first_non_finite: Cell<Option<(&'static str, usize)>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            first_non_finite: Cell::new(None),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&self, value: Matrix<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf)
    }

    fn push(&self, value: Matrix<T>, op: Op<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        if self.first_non_finite.get().is_none() && !value.is_finite() {
            self.first_non_finite.set(Some((op.name(), id)));
        }
        nodes.push(Node { value, op });
        Var { tape: self, id }
    }

    fn unary(&self, a: usize, op: Op<T>, f: impl FnOnce(&Matrix<T>) -> Matrix<T>) -> Var<'_, T> {
        let value = f(&self.nodes.borrow()[a].value);
        self.push(value, op)
    }

    fn binary(&self, a: usize, b: usize, op: Op<T>, f: impl FnOnce(&Matrix<T>, &Matrix<T>) -> Matrix<T>) -> Var<'_, T> {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a].value, &nodes[b].value)
        };
        self.push(value, op)
    }

    /// Fails with the first primitive that produced a non-finite entry.
    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite.get() {
            Some((op, node)) => Err(Error::NumericOverflow { op, node }),
            None => Ok(()),
        }
    }

    /// Adjoints of every node with respect to the scalar `root`.
    pub fn backward(&self, root: Var<'_, T>) -> Result<Adjoints<T>> {
        self.check_finite()?;
        let nodes = self.nodes.borrow();
        if nodes[root.id].value.shape() != (1, 1) {
            return Err(Error::Argument(format!(
                "backward needs a 1x1 root, got {:?}",
                nodes[root.id].value.shape()
            )));
        }
        let mut adj: Vec<Option<Matrix<T>>> = vec![None; root.id + 1];
        adj[root.id] = Some(Matrix::scalar(T::one()));

        fn acc<T: Scalar>(slot: &mut Option<Matrix<T>>, g: Matrix<T>) {
            match slot {
                Some(existing) => existing.add_assign(&g),
                None => *slot = Some(g),
            }
        }

        for id in (0..=root.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {
                    adj[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    let ga = g.matmul_nt(vb);
                    let gb = va.matmul_tn(&g);
                    acc(&mut adj[*a], ga);
                    acc(&mut adj[*b], gb);
                }
                Op::MatMulNt(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    let ga = g.matmul(vb);
                    let gb = g.matmul_tn(va);
                    acc(&mut adj[*a], ga);
                    acc(&mut adj[*b], gb);
                }
                Op::Add(a, b) => {
                    acc(&mut adj[*b], g.clone());
                    acc(&mut adj[*a], g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj[*b], g.scale(-T::one()));
                    acc(&mut adj[*a], g);
                }
                Op::Hadamard(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    acc(&mut adj[*a], g.hadamard(vb));
                    acc(&mut adj[*b], g.hadamard(va));
                }
                Op::Scale(a, c) => acc(&mut adj[*a], g.scale(*c)),
                Op::Mask(a, mask) => acc(&mut adj[*a], g.hadamard(mask)),
                Op::Offset(a) => acc(&mut adj[*a], g),
                Op::Embed { src, row0, col0 } => {
                    let (r, c) = nodes[*src].value.shape();
                    acc(&mut adj[*src], g.slice(*row0, *col0, r, c));
                }
                Op::Slice { src, row0, col0 } => {
                    let (r, c) = nodes[*src].value.shape();
                    acc(&mut adj[*src], g.embed(r, c, *row0, *col0));
                }
                Op::Square(a) => {
                    let va = &nodes[*a].value;
                    acc(&mut adj[*a], g.hadamard(va).scale(T::of_f64(2.0)));
                }
                Op::Sum(a) => {
                    let (r, c) = nodes[*a].value.shape();
                    let s = g[(0, 0)];
                    acc(&mut adj[*a], Matrix::from_fn(r, c, |_, _| s));
                }
            }
        }
        for (id, slot) in adj.iter_mut().enumerate() {
            if let Some(g) = slot {
                if !g.is_finite() {
                    return Err(Error::NumericOverflow {
                        op: nodes[id].op.name(),
                        node: id,
                    });
                }
            }
        }
        Ok(Adjoints { adj })
    }
}

/// Result of a backward pass, indexed by variable.
pub struct Adjoints<T: Scalar> {
    adj: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Adjoints<T> {
    /// Adjoint of `var`, or zeros if the root does not depend on it.
    pub fn wrt(&self, var: &Var<'_, T>) -> Matrix<T> {
        match self.adj.get(var.id).and_then(|g| g.clone()) {
            Some(g) => g,
            None => {
                let (r, c) = var.dims();
                Matrix::zeros(r, c)
            }
        }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn value(&self) -> Matrix<T> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn scalar_value(&self) -> T {
        self.tape.nodes.borrow()[self.id].value[(0, 0)]
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn sum(&self) -> Self {
        self.tape.unary(self.id, Op::Sum(self.id), |a| Matrix::scalar(a.sum()))
    }

    fn same_tape(&self, other: &Self) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "variables belong to different tapes"
        );
    }
}

impl<'t, T: Scalar> MatrixOps<T> for Var<'t, T> {
    fn dims(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    fn mm(&self, rhs: &Self) -> Self {
        self.same_tape(rhs);
        self.tape
            .binary(self.id, rhs.id, Op::MatMul(self.id, rhs.id), |a, b| a.matmul(b))
    }

    fn mm_nt(&self, rhs: &Self) -> Self {
        self.same_tape(rhs);
        self.tape
            .binary(self.id, rhs.id, Op::MatMulNt(self.id, rhs.id), |a, b| a.matmul_nt(b))
    }

    fn plus(&self, rhs: &Self) -> Self {
        self.same_tape(rhs);
        self.tape
            .binary(self.id, rhs.id, Op::Add(self.id, rhs.id), |a, b| a.add(b))
    }

    fn minus(&self, rhs: &Self) -> Self {
        self.same_tape(rhs);
        self.tape
            .binary(self.id, rhs.id, Op::Sub(self.id, rhs.id), |a, b| a.sub(b))
    }

    fn hadamard_with(&self, rhs: &Self) -> Self {
        self.same_tape(rhs);
        self.tape
            .binary(self.id, rhs.id, Op::Hadamard(self.id, rhs.id), |a, b| a.hadamard(b))
    }

    fn scaled(&self, c: T) -> Self {
        self.tape.unary(self.id, Op::Scale(self.id, c), |a| a.scale(c))
    }

    fn masked(&self, mask: &Matrix<T>) -> Self {
        self.tape
            .unary(self.id, Op::Mask(self.id, mask.clone()), |a| a.hadamard(mask))
    }

    fn offset(&self, c: &Matrix<T>) -> Self {
        self.tape.unary(self.id, Op::Offset(self.id), |a| a.add(c))
    }

    fn embedded(&self, rows: usize, cols: usize, row0: usize, col0: usize) -> Self {
        let op = Op::Embed {
            src: self.id,
            row0,
            col0,
        };
        self.tape.unary(self.id, op, |a| a.embed(rows, cols, row0, col0))
    }

    fn sliced(&self, row0: usize, col0: usize, rows: usize, cols: usize) -> Self {
        let op = Op::Slice {
            src: self.id,
            row0,
            col0,
        };
        self.tape.unary(self.id, op, |a| a.slice(row0, col0, rows, cols))
    }

    fn squared(&self) -> Self {
        self.tape.unary(self.id, Op::Square(self.id), |a| a.map(|x| x * x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_of_scalar() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Matrix::scalar(3.0));
        let y = x.squared();
        let adj = tape.backward(y).unwrap();
        assert_eq!(y.scalar_value(), 9.0);
        assert_eq!(adj.wrt(&x)[(0, 0)], 6.0);
    }

    #[test]
    fn reused_variable_accumulates() {
        // y = sum(x ⊙ x + x) -> dy/dx = 2x + 1
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Matrix::from_rows(&[[1.0, -2.0]]));
        let y = x.hadamard_with(&x).plus(&x).sum();
        let g = tape.backward(y).unwrap().wrt(&x);
        assert_eq!(g, Matrix::from_rows(&[[3.0, -3.0]]));
    }

    #[test]
    fn overflow_names_the_primitive() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Matrix::scalar(1e200));
        let y = x.hadamard_with(&x).sum();
        match tape.backward(y) {
            Err(Error::NumericOverflow { op, .. }) => assert_eq!(op, "hadamard"),
            other => panic!("expected overflow, got {:?}", other.err()),
        }
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Matrix::zeros(2, 2));
        assert!(tape.backward(x).is_err());
    }
}
