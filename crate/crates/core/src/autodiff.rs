//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! The operation set is closed: exactly the products, activations, and
//! reductions the encoder, decoder, and clustering losses are built from.
//! Nodes are appended to a [`Graph`] in evaluation order, so the tape is a
//! topological order and the graph cannot contain cycles.

use crate::error::{Error, Result};
use crate::linalg::{matmul_into, Matrix};

/// Rows with norm below this value are rejected by [`Graph::row_normalize`].
pub const NORM_GUARD: f64 = 1e-8;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How [`Graph::weighted_sum`] treats the entries it reduces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SumMode {
    /// `Σ w·|a|`, with d|a|/da = 0 at a = 0.
    Absolute,
    /// `Σ w·a`.
    Signed,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    RowNormalize { input: Var, norms: Vec<f64> },
    Gram(Var),
    WeightedSum { input: Var, weights: Matrix, mode: SumMode },
    FrobeniusSq(Var, Var),
    Combine { a: Var, ca: f64, b: Var, cb: f64 },
    Scale(Var, f64),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// A computation tape.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` influenced it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`; zeros when `v` did not reach the loss.
    pub fn wrt(&self, v: Var) -> Matrix {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf that receives no gradient (inputs, fixed targets).
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn parameter(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.as_slice()[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    /// Adds a 1xC bias row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::dim(
                "add_bias",
                format!("bias {:?} for input {:?}", bv.shape(), av.shape()),
            ));
        }
        let mut value = av.clone();
        let b = bv.as_slice();
        for r in 0..value.rows() {
            for (x, &bb) in value.row_mut(r).iter_mut().zip(b) {
                *x += bb;
            }
        }
        let ng = self.needs(a) || self.needs(bias);
        Ok(self.push(value, Op::AddBias(a, bias), ng))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let ng = self.needs(a);
        self.push(value, Op::Relu(a), ng)
    }

    /// Scales every row to unit L2 norm; rows with norm below
    /// [`NORM_GUARD`] are an error.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let norms = av.row_norms();
        if let Some((row, &norm)) = norms.iter().enumerate().find(|(_, n)| !(**n >= NORM_GUARD)) {
            return Err(Error::DegenerateRow { row, norm });
        }
        let mut value = av.clone();
        for (r, &n) in norms.iter().enumerate() {
            for x in value.row_mut(r) {
                *x /= n;
            }
        }
        let ng = self.needs(a);
        Ok(self.push(value, Op::RowNormalize { input: a, norms }, ng))
    }

    /// `a · aᵀ`.
    pub fn gram(&mut self, a: Var) -> Var {
        let value = self.value(a).gram();
        let ng = self.needs(a);
        self.push(value, Op::Gram(a), ng)
    }

    /// Scalar `Σᵢⱼ wᵢⱼ·f(aᵢⱼ)` with `f` chosen by `mode`.
    pub fn weighted_sum(&mut self, a: Var, weights: Matrix, mode: SumMode) -> Result<Var> {
        let av = self.value(a);
        av.check_same_shape(&weights, "weighted_sum")?;
        let s: f64 = av
            .as_slice()
            .iter()
            .zip(weights.as_slice())
            .map(|(&x, &w)| match mode {
                SumMode::Absolute => w * x.abs(),
                SumMode::Signed => w * x,
            })
            .sum();
        let ng = self.needs(a);
        Ok(self.push(
            Matrix::filled(1, 1, s),
            Op::WeightedSum {
                input: a,
                weights,
                mode,
            },
            ng,
        ))
    }

    /// Scalar `‖a − b‖²_F`.
    pub fn frobenius_sq(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        av.check_same_shape(bv, "frobenius_sq")?;
        let s: f64 = av
            .as_slice()
            .iter()
            .zip(bv.as_slice())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Matrix::filled(1, 1, s), Op::FrobeniusSq(a, b), ng))
    }

    /// `ca·a + cb·b` for same-shaped nodes.
    pub fn combine(&mut self, a: Var, ca: f64, b: Var, cb: f64) -> Result<Var> {
        let value = self
            .value(a)
            .zip_map(self.value(b), |x, y| ca * x + cb * y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Combine { a, ca, b, cb }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.combine(a, 1.0, b, 1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.combine(a, 1.0, b, -1.0)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, s), ng)
    }

    /// Reverse sweep from a 1x1 `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        grads.resize(self.nodes.len(), None);
        for (i, g) in grads.iter_mut().enumerate() {
            if !self.nodes[i].needs_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    accumulate(grads, *a, g.matmul_t(bv)?)?;
                }
                if self.needs(*b) {
                    accumulate(grads, *b, av.t_matmul(g)?)?;
                }
            }
            Op::AddBias(a, bias) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.clone())?;
                }
                if self.needs(*bias) {
                    let mut db = Matrix::zeros(1, g.cols());
                    for row in g.iter_rows() {
                        for (d, &x) in db.as_mut_slice().iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                    accumulate(grads, *bias, db)?;
                }
            }
            Op::Relu(a) => {
                let da = self
                    .value(*a)
                    .zip_map(g, |x, gg| if x > 0.0 { gg } else { 0.0 })?;
                accumulate(grads, *a, da)?;
            }
            Op::RowNormalize { input, norms } => {
                // dx = (g − y·(yᵀg)) / ‖x‖
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for (r, &n) in norms.iter().enumerate() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let proj = crate::linalg::dot(yr, gr);
                    for ((d, &yv), &gv) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *d = (gv - yv * proj) / n;
                    }
                }
                accumulate(grads, *input, dx)?;
            }
            Op::Gram(a) => {
                // d(AAᵀ) -> (G + Gᵀ)A
                let sym = g.zip_map(&g.transpose(), |x, y| x + y)?;
                let mut da = Matrix::zeros(self.value(*a).rows(), self.value(*a).cols());
                matmul_into(&sym, self.value(*a), &mut da);
                accumulate(grads, *a, da)?;
            }
            Op::WeightedSum {
                input,
                weights,
                mode,
            } => {
                let s = g.as_slice()[0];
                let da = match mode {
                    SumMode::Absolute => self.value(*input).zip_map(weights, |x, w| {
                        if x > 0.0 {
                            s * w
                        } else if x < 0.0 {
                            -s * w
                        } else {
                            0.0
                        }
                    })?,
                    SumMode::Signed => weights.scale(s),
                };
                accumulate(grads, *input, da)?;
            }
            Op::FrobeniusSq(a, b) => {
                let s = g.as_slice()[0];
                let diff = self.value(*a).zip_map(self.value(*b), |x, y| x - y)?;
                if self.needs(*a) {
                    accumulate(grads, *a, diff.scale(2.0 * s))?;
                }
                if self.needs(*b) {
                    accumulate(grads, *b, diff.scale(-2.0 * s))?;
                }
            }
            Op::Combine { a, ca, b, cb } => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.scale(*ca))?;
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g.scale(*cb))?;
                }
            }
            Op::Scale(a, s) => {
                accumulate(grads, *a, g.scale(*s))?;
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, delta: Matrix) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&delta),
        slot @ None => {
            *slot = Some(delta);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    /// Central differences of `f` around `x`, one coordinate at a time.
    fn numeric_grad(x: &Matrix, f: impl Fn(&Matrix) -> f64) -> Matrix {
        let h = 1e-6;
        let mut out = Matrix::zeros(x.rows(), x.cols());
        let mut probe = x.clone();
        for i in 0..x.len() {
            let orig = probe.as_slice()[i];
            probe.as_mut_slice()[i] = orig + h;
            let fp = f(&probe);
            probe.as_mut_slice()[i] = orig - h;
            let fm = f(&probe);
            probe.as_mut_slice()[i] = orig;
            out.as_mut_slice()[i] = (fp - fm) / (2.0 * h);
        }
        out
    }

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        let diff = a.zip_map(b, |x, y| x - y).unwrap().frobenius_norm();
        diff / a.frobenius_norm().max(b.frobenius_norm()).max(1e-12)
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(5, 4, &mut rng);
        let b = random(4, 3, &mut rng);
        let ones = Matrix::filled(5, 3, 1.0);
        let eval = |a: &Matrix, b: &Matrix| a.matmul(b).unwrap().sum();

        let mut g = Graph::new();
        let (va, vb) = (g.parameter(a.clone()), g.parameter(b.clone()));
        let prod = g.matmul(va, vb).unwrap();
        let loss = g.weighted_sum(prod, ones, SumMode::Signed).unwrap();
        let grads = g.backward(loss).unwrap();

        assert!(rel_err(&grads.wrt(va), &numeric_grad(&a, |x| eval(x, &b))) <= 1e-6);
        assert!(rel_err(&grads.wrt(vb), &numeric_grad(&b, |x| eval(&a, x))) <= 1e-6);
    }

    #[test]
    fn relu_values_and_gradient() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::from_rows(&[[-1.0, 2.0]]).unwrap());
        let r = g.relu(x);
        assert_eq!(g.value(r).as_slice(), &[0.0, 2.0]);

        let neg = g.constant(Matrix::filled(2, 3, -0.5));
        let r = g.relu(neg);
        assert_eq!(g.value(r), &Matrix::zeros(2, 3));

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut x = random(4, 5, &mut rng);
        for v in x.as_mut_slice() {
            if v.abs() < 1e-4 {
                *v = 0.5;
            }
        }
        let w = random(4, 5, &mut rng);
        let f = |m: &Matrix| {
            m.zip_map(&w, |a, b| a.max(0.0) * b).unwrap().sum()
        };
        let mut g = Graph::new();
        let vx = g.parameter(x.clone());
        let r = g.relu(vx);
        let loss = g.weighted_sum(r, w.clone(), SumMode::Signed).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(rel_err(&grads.wrt(vx), &numeric_grad(&x, f)) <= 1e-6);
    }

    #[test]
    fn row_normalize_cases() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::from_rows(&[[3.0, 4.0]]).unwrap());
        let y = g.row_normalize(x).unwrap();
        assert_eq!(g.value(y).as_slice(), &[0.6, 0.8]);

        let y2 = g.row_normalize(y).unwrap();
        for (a, b) in g.value(y).as_slice().iter().zip(g.value(y2).as_slice()) {
            assert!((a - b).abs() <= 1e-12);
        }

        let z = g.constant(Matrix::from_rows(&[[1.0, 0.0], [0.0, 1e-9]]).unwrap());
        assert!(matches!(
            g.row_normalize(z),
            Err(Error::DegenerateRow { row: 1, .. })
        ));
    }

    #[test]
    fn row_normalize_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(6, 4, &mut rng);
        let w = random(6, 6, &mut rng);
        // smooth downstream scalar: Σ w ∘ (ỹỹᵀ)
        let f = |m: &Matrix| {
            let y = m.normalize_rows(NORM_GUARD).unwrap();
            y.gram().zip_map(&w, |a, b| a * b).unwrap().sum()
        };
        let mut g = Graph::new();
        let vx = g.parameter(x.clone());
        let y = g.row_normalize(vx).unwrap();
        let c = g.gram(y);
        let loss = g.weighted_sum(c, w.clone(), SumMode::Signed).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(rel_err(&grads.wrt(vx), &numeric_grad(&x, f)) <= 1e-5);
    }

    #[test]
    fn gram_cases() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap());
        let c = g.gram(x);
        assert_eq!(g.value(c), &Matrix::identity(2));

        let h = std::f64::consts::FRAC_1_SQRT_2;
        let x = g.constant(Matrix::from_rows(&[[1.0, 0.0], [h, h]]).unwrap());
        let c = g.gram(x);
        assert!((g.value(c)[(0, 1)] - h).abs() < 1e-15);
        assert_eq!(g.value(c)[(0, 1)], g.value(c)[(1, 0)]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let raw = g.constant(random(7, 3, &mut rng));
        let unit = g.row_normalize(raw).unwrap();
        let c = g.gram(unit);
        let cv = g.value(c);
        for i in 0..7 {
            assert!((cv[(i, i)] - 1.0).abs() <= 1e-12);
            for j in 0..7 {
                assert_eq!(cv[(i, j)].to_bits(), cv[(j, i)].to_bits());
                assert!(cv[(i, j)].abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn gram_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(5, 3, &mut rng);
        let w = random(5, 5, &mut rng);
        let f = |m: &Matrix| m.gram().zip_map(&w, |a, b| a * b).unwrap().sum();
        let mut g = Graph::new();
        let vx = g.parameter(x.clone());
        let c = g.gram(vx);
        let loss = g.weighted_sum(c, w.clone(), SumMode::Signed).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(rel_err(&grads.wrt(vx), &numeric_grad(&x, f)) <= 1e-6);
    }

    #[test]
    fn weighted_sum_cases() {
        let mut g = Graph::new();
        let a = g.constant(Matrix::from_rows(&[[1.0, -1.0]]).unwrap());
        let z = g.weighted_sum(a, Matrix::zeros(1, 2), SumMode::Absolute).unwrap();
        assert_eq!(g.scalar(z), 0.0);
        let s = g.weighted_sum(a, Matrix::filled(1, 2, 1.0), SumMode::Absolute).unwrap();
        assert_eq!(g.scalar(s), 2.0);
        let s = g.weighted_sum(a, Matrix::filled(1, 2, 1.0), SumMode::Signed).unwrap();
        assert_eq!(g.scalar(s), 0.0);
        assert!(g.weighted_sum(a, Matrix::zeros(2, 2), SumMode::Signed).is_err());
    }

    #[test]
    fn absolute_subgradient_is_zero_at_zero() {
        let mut g = Graph::new();
        let a = g.parameter(Matrix::from_rows(&[[0.0, 2.0, -3.0]]).unwrap());
        let s = g.weighted_sum(a, Matrix::filled(1, 3, 0.5), SumMode::Absolute).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(a).as_slice(), &[0.0, 0.5, -0.5]);
    }

    #[test]
    fn frobenius_cases() {
        let mut g = Graph::new();
        let a = g.parameter(Matrix::from_rows(&[[1.0, 0.0]]).unwrap());
        let b = g.constant(Matrix::zeros(1, 2));
        let f = g.frobenius_sq(a, b).unwrap();
        assert_eq!(g.scalar(f), 1.0);
        let same = g.frobenius_sq(a, a).unwrap();
        assert_eq!(g.scalar(same), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random(3, 4, &mut rng);
        let y = random(3, 4, &mut rng);
        let mut g = Graph::new();
        let vx = g.parameter(x.clone());
        let vy = g.constant(y.clone());
        let loss = g.frobenius_sq(vx, vy).unwrap();
        let grads = g.backward(loss).unwrap();
        let expected = x.zip_map(&y, |p, q| 2.0 * (p - q)).unwrap();
        assert!(rel_err(&grads.wrt(vx), &expected) <= 1e-12);
        let fd = numeric_grad(&x, |m| {
            m.zip_map(&y, |p, q| (p - q) * (p - q)).unwrap().sum()
        });
        assert!(rel_err(&grads.wrt(vx), &fd) <= 1e-6);
    }

    #[test]
    fn backward_contracts() {
        let mut g = Graph::new();
        let p = g.parameter(Matrix::filled(2, 2, 1.0));
        assert!(matches!(g.backward(p), Err(Error::Contract(_))));

        // constant loss: the parameter never reaches it
        let c = g.constant(Matrix::filled(1, 1, 4.0));
        let grads = g.backward(c).unwrap();
        assert_eq!(grads.wrt(p), Matrix::zeros(2, 2));
    }

    #[test]
    fn backward_is_repeatable_and_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random(4, 3, &mut rng);
        let t = random(4, 3, &mut rng);
        let w = random(4, 4, &mut rng);

        let build = |g: &mut Graph| {
            let vx = g.parameter(x.clone());
            let vt = g.constant(t.clone());
            let c = g.gram(vx);
            let l1 = g.weighted_sum(c, w.clone(), SumMode::Absolute).unwrap();
            let l2 = g.frobenius_sq(vx, vt).unwrap();
            (vx, l1, l2)
        };
        let mut g = Graph::new();
        let (vx, l1, l2) = build(&mut g);
        let total = g.combine(l1, 1.0, l2, 0.25).unwrap();
        let first = g.backward(total).unwrap().wrt(vx);
        let second = g.backward(total).unwrap().wrt(vx);
        assert_eq!(
            first.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            second.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );

        let mut separate = g.backward(l1).unwrap().wrt(vx);
        separate.axpy(0.25, &g.backward(l2).unwrap().wrt(vx)).unwrap();
        assert!(rel_err(&first, &separate) <= 1e-14);
    }
}
