//! Reverse-mode automatic differentiation over scalar computation graphs.
//!
//! The tape is a Wengert list: every node records its value, up to two parent
//! indices, and the local partial derivative with respect to each parent.
//! Because parents always precede children, the graph is acyclic by
//! construction and a single reverse sweep accumulates exact gradients.

use crate::error::{Error, Result};

/// Handle to one node on a [`Tape`]. Cheap to copy; only valid for the tape
/// that created it (and until that tape is cleared).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

impl Var {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Scalar computation graph with gradient accumulators.
///
/// Leaves are created with [`Tape::leaf`] (differentiable inputs) or
/// [`Tape::constant`]; every arithmetic method appends one node. After
/// [`Tape::backward`], `grad(v)` holds the partial derivative of the root
/// with respect to `v`.
#[derive(Debug, Default)]
pub struct Tape {
    vals: Vec<f64>,
    grads: Vec<f64>,
    parents: Vec<[u32; 2]>,
    partials: Vec<[f64; 2]>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Tape {
            vals: Vec::with_capacity(nodes),
            grads: Vec::with_capacity(nodes),
            parents: Vec::with_capacity(nodes),
            partials: Vec::with_capacity(nodes),
        }
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    /// Drops all nodes but keeps allocated capacity.
    pub fn clear(&mut self) {
        self.vals.clear();
        self.grads.clear();
        self.parents.clear();
        self.partials.clear();
    }

    #[inline]
    pub fn value(&self, v: Var) -> f64 {
        self.vals[v.index()]
    }

    #[inline]
    pub fn grad(&self, v: Var) -> f64 {
        self.grads[v.index()]
    }

    #[inline]
    fn push(&mut self, value: f64, parents: [u32; 2], partials: [f64; 2]) -> Var {
        let idx = self.vals.len() as u32;
        self.vals.push(value);
        self.grads.push(0.0);
        self.parents.push(parents);
        self.partials.push(partials);
        Var(idx)
    }

    /// New differentiable input node.
    #[inline]
    pub fn leaf(&mut self, value: f64) -> Var {
        // A leaf is its own parent with zero partials; the reverse sweep
        // then needs no special casing.
        let idx = self.vals.len() as u32;
        self.push(value, [idx, idx], [0.0, 0.0])
    }

    /// New constant node. Structurally identical to a leaf; the distinction
    /// is only that callers never read its gradient.
    #[inline]
    pub fn constant(&mut self, value: f64) -> Var {
        self.leaf(value)
    }

    #[inline]
    fn unary(&mut self, a: Var, value: f64, da: f64) -> Var {
        self.push(value, [a.0, a.0], [da, 0.0])
    }

    #[inline]
    fn binary(&mut self, a: Var, b: Var, value: f64, da: f64, db: f64) -> Var {
        self.push(value, [a.0, b.0], [da, db])
    }

    #[inline]
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.vals[a.index()] + self.vals[b.index()];
        self.binary(a, b, v, 1.0, 1.0)
    }

    #[inline]
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.vals[a.index()] - self.vals[b.index()];
        self.binary(a, b, v, 1.0, -1.0)
    }

    #[inline]
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.vals[a.index()], self.vals[b.index()]);
        self.binary(a, b, va * vb, vb, va)
    }

    #[inline]
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.vals[a.index()], self.vals[b.index()]);
        self.binary(a, b, va / vb, 1.0 / vb, -va / (vb * vb))
    }

    #[inline]
    pub fn neg(&mut self, a: Var) -> Var {
        let v = -self.vals[a.index()];
        self.unary(a, v, -1.0)
    }

    #[inline]
    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.vals[a.index()] + c;
        self.unary(a, v, 1.0)
    }

    #[inline]
    pub fn mul_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.vals[a.index()] * c;
        self.unary(a, v, c)
    }

    #[inline]
    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.vals[a.index()].exp();
        self.unary(a, v, v)
    }

    #[inline]
    pub fn ln(&mut self, a: Var) -> Var {
        let x = self.vals[a.index()];
        self.unary(a, x.ln(), 1.0 / x)
    }

    #[inline]
    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.vals[a.index()].tanh();
        self.unary(a, v, 1.0 - v * v)
    }

    /// Softplus ln(1 + e^x), computed in the overflow-safe form.
    #[inline]
    pub fn softplus(&mut self, a: Var) -> Var {
        let x = self.vals[a.index()];
        let v = if x > 30.0 { x } else { x.exp().ln_1p() };
        let sigmoid = 1.0 / (1.0 + (-x).exp());
        self.unary(a, v, sigmoid)
    }

    /// max(0, x); the subgradient at the kink is 0.
    #[inline]
    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.vals[a.index()];
        if x > 0.0 {
            self.unary(a, x, 1.0)
        } else {
            self.unary(a, 0.0, 0.0)
        }
    }

    /// max(a, b); ties route the gradient to the first operand.
    #[inline]
    pub fn max(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.vals[a.index()], self.vals[b.index()]);
        if va >= vb {
            self.binary(a, b, va, 1.0, 0.0)
        } else {
            self.binary(a, b, vb, 0.0, 1.0)
        }
    }

    /// |x|; the subgradient at 0 is 0.
    #[inline]
    pub fn abs(&mut self, a: Var) -> Var {
        let x = self.vals[a.index()];
        self.unary(a, x.abs(), if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 })
    }

    #[inline]
    pub fn square(&mut self, a: Var) -> Var {
        let x = self.vals[a.index()];
        self.unary(a, x * x, 2.0 * x)
    }

    #[inline]
    pub fn powi(&mut self, a: Var, n: i32) -> Var {
        let x = self.vals[a.index()];
        self.unary(a, x.powi(n), f64::from(n) * x.powi(n - 1))
    }

    #[inline]
    pub fn recip(&mut self, a: Var) -> Var {
        let x = self.vals[a.index()];
        self.unary(a, 1.0 / x, -1.0 / (x * x))
    }

    /// Dot product of two equal-length slices of vars.
    pub fn dot(&mut self, a: &[Var], b: &[Var]) -> Result<Var> {
        if a.len() != b.len() {
            return Err(Error::ShapeMismatch {
                context: "tape dot product",
                expected: a.len(),
                actual: b.len(),
            });
        }
        let mut acc = self.constant(0.0);
        for (&x, &y) in a.iter().zip(b) {
            let p = self.mul(x, y);
            acc = self.add(acc, p);
        }
        Ok(acc)
    }

    /// Reverse sweep from `root`, which must be a scalar node of this tape.
    ///
    /// All gradient accumulators are zeroed first, so repeated calls yield
    /// identical results. After the sweep, `grad(v)` is d(root)/d(v) for
    /// every node `v`.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let n = self.vals.len();
        if root.index() >= n {
            return Err(Error::invalid("tape backward", "root is not a node of this tape"));
        }
        for g in &mut self.grads {
            *g = 0.0;
        }
        self.grads[root.index()] = 1.0;
        for i in (0..n).rev() {
            let g = self.grads[i];
            if g == 0.0 {
                continue;
            }
            let [p1, p2] = self.parents[i];
            let [d1, d2] = self.partials[i];
            // Leaves are their own parent with zero partials, so these adds
            // are no-ops there.
            self.grads[p1 as usize] += d1 * g;
            self.grads[p2 as usize] += d2 * g;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        // f(x) = x^2 at x = 3 -> df/dx = 6
        let mut t = Tape::new();
        let x = t.leaf(3.0);
        let y = t.square(x);
        t.backward(y).unwrap();
        assert_eq!(t.value(y), 9.0);
        assert_eq!(t.grad(x), 6.0);
    }

    #[test]
    fn relu_subgradient() {
        let mut t = Tape::new();
        let a = t.leaf(-1.0);
        let b = t.leaf(2.0);
        let ra = t.relu(a);
        let rb = t.relu(b);
        let s = t.add(ra, rb);
        t.backward(s).unwrap();
        assert_eq!(t.grad(a), 0.0);
        assert_eq!(t.grad(b), 1.0);

        // Kink: pre-activation exactly 0 uses subgradient 0.
        let mut t = Tape::new();
        let z = t.leaf(0.0);
        let r = t.relu(z);
        t.backward(r).unwrap();
        assert_eq!(t.grad(z), 0.0);
    }

    #[test]
    fn fan_out_accumulates() {
        // f(x) = x*x + x -> df/dx = 2x + 1
        let mut t = Tape::new();
        let x = t.leaf(4.0);
        let xx = t.mul(x, x);
        let y = t.add(xx, x);
        t.backward(y).unwrap();
        assert_eq!(t.grad(x), 9.0);
    }

    #[test]
    fn repeated_backward_is_identical() {
        let mut t = Tape::new();
        let x = t.leaf(1.5);
        let e = t.exp(x);
        let y = t.mul(e, x);
        t.backward(y).unwrap();
        let g1 = t.grad(x);
        t.backward(y).unwrap();
        assert_eq!(g1, t.grad(x));
    }

    #[test]
    fn max_tie_routes_to_first() {
        let mut t = Tape::new();
        let a = t.leaf(2.0);
        let b = t.leaf(2.0);
        let m = t.max(a, b);
        t.backward(m).unwrap();
        assert_eq!(t.grad(a), 1.0);
        assert_eq!(t.grad(b), 0.0);
    }

    #[test]
    fn division_and_ln() {
        // f(a, b) = ln(a / b), df/da = 1/a, df/db = -1/b
        let mut t = Tape::new();
        let a = t.leaf(3.0);
        let b = t.leaf(5.0);
        let q = t.div(a, b);
        let y = t.ln(q);
        t.backward(y).unwrap();
        assert!((t.grad(a) - 1.0 / 3.0).abs() < 1e-15);
        assert!((t.grad(b) + 1.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn foreign_root_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(1.0);
        let _ = x;
        assert!(t.backward(Var(7)).is_err());
    }
}
