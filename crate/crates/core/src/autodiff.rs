//! A small reverse-mode tape over dense `f64` matrices.
//!
//! Every value is an `Array2<f64>`; scalars are `1×1`. Ops record their inputs
//! and whatever forward intermediates their backward pass needs. The op set is
//! exactly what the encoders, the alignment objective and the detector need;
//! losses with closed-form gradients enter through [`Tape::scalar_with_grads`].

use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A fixed sparse operator with its transpose, shared across tape steps.
#[derive(Debug)]
pub struct SparseOperator {
    forward: CsrMatrix,
    transpose: CsrMatrix,
}

impl SparseOperator {
    pub fn new(forward: CsrMatrix) -> Rc<Self> {
        let transpose = forward.transpose();
        Rc::new(Self { forward, transpose })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.forward
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleByExp(Var, Var),
    LeakyRelu(Var, f64),
    Gelu(Var),
    Spmm(Rc<SparseOperator>, Var),
    Gather(Var, Rc<Vec<usize>>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        segments: Rc<Vec<(usize, usize)>>,
        heads: usize,
        probs: Vec<Array2<f64>>,
    },
    RowNormalize {
        x: Var,
        norms: Vec<f64>,
    },
    Energy {
        x: Var,
        softmax: Array2<f64>,
    },
    Msp {
        x: Var,
        softmax: Array2<f64>,
        argmax: Vec<usize>,
    },
    Scalar(Vec<(Var, Array2<f64>)>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Recorded computation. Create one per forward/backward step.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; `None` for values the output does not depend on.
pub struct Gradients(Vec<Option<Array2<f64>>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.0[v.0].as_ref()
    }

    /// Gradient or zeros shaped like `like`.
    pub fn take_or_zeros(&mut self, v: Var, like: &Array2<f64>) -> Array2<f64> {
        self.0[v.0].take().unwrap_or_else(|| Array2::zeros(like.raw_dim()))
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

pub(crate) fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// The value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        self.push(value, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    /// Adds the `1×m` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + &self.value(b).row(0);
        self.push(value, Op::AddRow(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        self.push(value, Op::Scale(a, c))
    }

    /// `a · exp(s)` for a `1×1` node `s`.
    pub fn scale_by_exp(&mut self, a: Var, s: Var) -> Var {
        let value = self.value(a) * self.scalar(s).exp();
        self.push(value, Op::ScaleByExp(a, s))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(value, Op::LeakyRelu(a, slope))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| {
            let t = (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh();
            0.5 * x * (1.0 + t)
        });
        self.push(value, Op::Gelu(a))
    }

    pub fn spmm(&mut self, op: &Rc<SparseOperator>, x: Var) -> Var {
        let value = op.forward.matmul(self.value(x).view());
        self.push(value, Op::Spmm(Rc::clone(op), x))
    }

    /// Rows of `x` at `idx`, in order; repeated indices allowed.
    pub fn gather(&mut self, x: Var, idx: Rc<Vec<usize>>) -> Var {
        let value = self.value(x).select(Axis(0), &idx);
        self.push(value, Op::Gather(x, idx))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let width = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / width;
            let var = row.fold(0.0, |a, &v| a + (v - mean) * (v - mean)) / width;
            let is = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        let value = &xhat * &self.value(gamma).row(0) + &self.value(beta).row(0);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Multi-head scaled dot-product self-attention over variable-length
    /// sequences. Rows of `q`, `k`, `v` are tokens; `segments` lists each
    /// sequence as `(first_row, len)`. Tokens attend only within their sequence.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, segments: Rc<Vec<(usize, usize)>>, heads: usize) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let width = qv.ncols();
        assert!(heads > 0 && width % heads == 0, "width {width} not divisible by {heads} heads");
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Array2::zeros(qv.raw_dim());
        let mut probs = Vec::with_capacity(segments.len() * heads);
        for &(start, len) in segments.iter() {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qs = qv.slice(s![start..start + len, cols.clone()]);
                let ks = kv.slice(s![start..start + len, cols.clone()]);
                let vs = vv.slice(s![start..start + len, cols.clone()]);
                let p = softmax_rows(&(qs.dot(&ks.t()) * scale));
                out.slice_mut(s![start..start + len, cols]).assign(&p.dot(&vs));
                probs.push(p);
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                segments,
                heads,
                probs,
            },
        )
    }

    /// Each row divided by its L2 norm; all-zero rows stay zero.
    pub fn row_normalize(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        let mut norms = Vec::with_capacity(value.nrows());
        for mut row in value.rows_mut() {
            let n = row.dot(&row).sqrt();
            if n > 0.0 {
                row.mapv_inplace(|v| v / n);
            }
            norms.push(n);
        }
        self.push(value, Op::RowNormalize { x, norms })
    }

    /// Per-row energy `-T log Σ_c exp(x_c / T)` as an `n×1` column.
    pub fn energy(&mut self, x: Var, temperature: f64) -> Var {
        let xv = self.value(x);
        let mut out = Array2::zeros((xv.nrows(), 1));
        for (i, row) in xv.rows().into_iter().enumerate() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m / temperature + row.fold(0.0, |a, &b| a + ((b - m) / temperature).exp()).ln();
            out[[i, 0]] = -temperature * lse;
        }
        let softmax = softmax_rows(&(xv / temperature));
        self.push(out, Op::Energy { x, softmax })
    }

    /// Per-row negative maximum softmax probability as an `n×1` column.
    pub fn msp(&mut self, x: Var) -> Var {
        let softmax = softmax_rows(self.value(x));
        let mut argmax = Vec::with_capacity(softmax.nrows());
        let mut out = Array2::zeros((softmax.nrows(), 1));
        for (i, row) in softmax.rows().into_iter().enumerate() {
            let (j, p) = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (j, &p)| if p > acc.1 { (j, p) } else { acc });
            argmax.push(j);
            out[[i, 0]] = -p;
        }
        self.push(out, Op::Msp { x, softmax, argmax })
    }

    /// A scalar whose gradient with respect to each input was computed by the
    /// caller; each gradient must match its input's shape.
    pub fn scalar_with_grads(&mut self, value: f64, grads: Vec<(Var, Array2<f64>)>) -> Var {
        for (v, g) in &grads {
            assert_eq!(self.value(*v).dim(), g.dim(), "local gradient shape");
        }
        self.push(Array2::from_elem((1, 1), value), Op::Scalar(grads))
    }

    /// Reverse pass from the `1×1` node `out`.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.value(out).dim(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
            match &mut grads[v.0] {
                Some(g) => *g += &delta,
                slot => *slot = Some(delta),
            }
        }

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.dot(&self.value(*b).t()));
                    acc(&mut grads, *b, self.value(*a).t().dot(&g));
                }
                Op::MatMulT(a, b) => {
                    acc(&mut grads, *a, g.dot(self.value(*b)));
                    acc(&mut grads, *b, g.t().dot(self.value(*a)));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, b) => {
                    acc(&mut grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, g);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g * *c),
                Op::ScaleByExp(a, s) => {
                    let e = self.scalar(*s).exp();
                    let ds = (&g * &node.value).sum();
                    acc(&mut grads, *s, Array2::from_elem((1, 1), ds));
                    acc(&mut grads, *a, g * e);
                }
                Op::LeakyRelu(a, slope) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(self.value(*a))
                        .for_each(|d, &x| if x <= 0.0 { *d *= slope });
                    acc(&mut grads, *a, d);
                }
                Op::Gelu(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                        let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
                        let t = u.tanh();
                        let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
                        *d *= 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                    });
                    acc(&mut grads, *a, d);
                }
                Op::Spmm(op, x) => acc(&mut grads, *x, op.transpose.matmul(g.view())),
                Op::Gather(x, idx) => {
                    let mut d = Array2::zeros(self.value(*x).raw_dim());
                    for (k, &i) in idx.iter().enumerate() {
                        let mut row = d.row_mut(i);
                        row += &g.row(k);
                    }
                    acc(&mut grads, *x, d);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    acc(&mut grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *gamma, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxhat = &g * &self.value(*gamma).row(0);
                    let n = xhat.ncols() as f64;
                    let mut dx = Array2::zeros(xhat.raw_dim());
                    for (i, mut out_row) in dx.rows_mut().into_iter().enumerate() {
                        let dh = dxhat.row(i);
                        let xh = xhat.row(i);
                        let sum_dh = dh.sum();
                        let sum_dh_xh = dh.dot(&xh);
                        Zip::from(&mut out_row).and(&dh).and(&xh).for_each(|o, &d, &h| {
                            *o = inv_std[i] / n * (n * d - sum_dh - h * sum_dh_xh);
                        });
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    segments,
                    heads,
                    probs,
                } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let dh = qv.ncols() / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = Array2::zeros(qv.raw_dim());
                    let mut dk = Array2::zeros(kv.raw_dim());
                    let mut dv = Array2::zeros(vv.raw_dim());
                    let mut p_iter = probs.iter();
                    for &(start, len) in segments.iter() {
                        for h in 0..*heads {
                            let p = p_iter.next().expect("attention cache");
                            let rows = start..start + len;
                            let cols = h * dh..(h + 1) * dh;
                            let go = g.slice(s![rows.clone(), cols.clone()]);
                            let qs = qv.slice(s![rows.clone(), cols.clone()]);
                            let ks = kv.slice(s![rows.clone(), cols.clone()]);
                            let vs = vv.slice(s![rows.clone(), cols.clone()]);
                            dv.slice_mut(s![rows.clone(), cols.clone()]).assign(&p.t().dot(&go));
                            let dp = go.dot(&vs.t());
                            let mut ds = &dp * p;
                            for (i, mut row) in ds.rows_mut().into_iter().enumerate() {
                                let inner: f64 = row.sum();
                                Zip::from(&mut row)
                                    .and(&p.row(i))
                                    .for_each(|d, &pi| *d -= pi * inner);
                            }
                            ds *= scale;
                            dq.slice_mut(s![rows.clone(), cols.clone()]).assign(&ds.dot(&ks));
                            dk.slice_mut(s![rows, cols]).assign(&ds.t().dot(&qs));
                        }
                    }
                    acc(&mut grads, *q, dq);
                    acc(&mut grads, *k, dk);
                    acc(&mut grads, *v, dv);
                }
                Op::RowNormalize { x, norms } => {
                    let y = &node.value;
                    let mut dx = g;
                    for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
                        if norms[i] > 0.0 {
                            let yr = y.row(i);
                            let proj = yr.dot(&row);
                            Zip::from(&mut row)
                                .and(&yr)
                                .for_each(|d, &yy| *d = (*d - yy * proj) / norms[i]);
                        } else {
                            row.fill(0.0);
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Energy { x, softmax } => {
                    let mut dx = softmax.clone();
                    for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
                        let gi = g[[i, 0]];
                        row.mapv_inplace(|p| -gi * p);
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Msp { x, softmax, argmax } => {
                    let mut dx = Array2::zeros(softmax.raw_dim());
                    for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
                        let gi = g[[i, 0]];
                        let pm = softmax[[i, argmax[i]]];
                        for (c, d) in row.iter_mut().enumerate() {
                            let delta = if c == argmax[i] { 1.0 } else { 0.0 };
                            *d = -gi * pm * (delta - softmax[[i, c]]);
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Scalar(local) => {
                    let g0 = g[[0, 0]];
                    for (v, lg) in local {
                        acc(&mut grads, *v, lg * g0);
                    }
                }
            }
        }
        Gradients(grads)
    }
}

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Central finite differences against the tape, used across module tests.

    use ndarray::Array2;

    /// Largest elementwise relative error between `analytic` and central
    /// differences of `f` at `x` (step `h`). Entries where both magnitudes are
    /// below `1e-9` are compared absolutely.
    pub fn max_rel_error(f: &mut dyn FnMut(&Array2<f64>) -> f64, x: &Array2<f64>, analytic: &Array2<f64>, h: f64) -> f64 {
        let mut worst: f64 = 0.0;
        let mut xp = x.clone();
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let orig = xp[[r, c]];
            xp[[r, c]] = orig + h;
            let fp = f(&xp);
            xp[[r, c]] = orig - h;
            let fm = f(&xp);
            xp[[r, c]] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[[r, c]];
            let denom = a.abs().max(numeric.abs());
            let err = if denom < 1e-9 { (a - numeric).abs() } else { (a - numeric).abs() / denom };
            worst = worst.max(err);
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::gradcheck::max_rel_error;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    /// Checks d(sum(probe ⊙ f(x)))/dx against finite differences for input slot `slot`.
    fn check(inputs: Vec<Array2<f64>>, slot: usize, build: impl Fn(&mut Tape, &[Var]) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let probe = {
            let mut t = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
            let y = build(&mut t, &vars);
            rand_mat(&mut rng, t.value(y).nrows(), t.value(y).ncols())
        };
        let run = |xs: &[Array2<f64>]| -> (f64, Array2<f64>) {
            let mut t = Tape::new();
            let vars: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone())).collect();
            let y = build(&mut t, &vars);
            let val = (t.value(y) * &probe).sum();
            let out = t.scalar_with_grads(val, vec![(y, probe.clone())]);
            let mut g = t.backward(out);
            let gx = g.take_or_zeros(vars[slot], &xs[slot]);
            (val, gx)
        };
        let (_, analytic) = run(&inputs);
        let mut f = |x: &Array2<f64>| {
            let mut xs = inputs.clone();
            xs[slot] = x.clone();
            run(&xs).0
        };
        let err = max_rel_error(&mut f, &inputs[slot], &analytic, 1e-5);
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn dense_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_mat(&mut rng, 3, 4);
        let b = rand_mat(&mut rng, 4, 2);
        let c = rand_mat(&mut rng, 5, 4);
        for slot in 0..2 {
            check(vec![a.clone(), b.clone()], slot, |t, v| t.matmul(v[0], v[1]));
            check(vec![a.clone(), c.clone()], slot, |t, v| t.matmul_t(v[0], v[1]));
        }
        let row = rand_mat(&mut rng, 1, 4);
        check(vec![a.clone(), row.clone()], 1, |t, v| t.add_row(v[0], v[1]));
        check(vec![a.clone()], 0, |t, v| t.leaky_relu(v[0], 0.1));
        check(vec![a.clone()], 0, |t, v| t.gelu(v[0]));
        check(vec![a.clone()], 0, |t, v| t.row_normalize(v[0]));
        check(vec![a.clone()], 0, |t, v| t.energy(v[0], 1.5));
        check(vec![a.clone()], 0, |t, v| t.msp(v[0]));
        let s = Array2::from_elem((1, 1), 0.3);
        for slot in 0..2 {
            check(vec![a.clone(), s.clone()], slot, |t, v| t.scale_by_exp(v[0], v[1]));
        }
        let idx = Rc::new(vec![2, 0, 2]);
        check(vec![a.clone()], 0, move |t, v| t.gather(v[0], Rc::clone(&idx)));
    }

    #[test]
    fn layer_norm_and_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_mat(&mut rng, 5, 6);
        let gamma = rand_mat(&mut rng, 1, 6);
        let beta = rand_mat(&mut rng, 1, 6);
        for slot in 0..3 {
            check(vec![x.clone(), gamma.clone(), beta.clone()], slot, |t, v| {
                t.layer_norm(v[0], v[1], v[2], 1e-5)
            });
        }
        let q = rand_mat(&mut rng, 7, 4);
        let k = rand_mat(&mut rng, 7, 4);
        let vv = rand_mat(&mut rng, 7, 4);
        let seg = Rc::new(vec![(0, 3), (3, 1), (4, 3)]);
        for slot in 0..3 {
            let seg = Rc::clone(&seg);
            check(vec![q.clone(), k.clone(), vv.clone()], slot, move |t, v| {
                t.attention(v[0], v[1], v[2], Rc::clone(&seg), 2)
            });
        }
    }

    #[test]
    fn sparse_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let op = SparseOperator::new(CsrMatrix::from_rows(vec![
            vec![(0, 0.5), (2, 0.25)],
            vec![(1, 1.0)],
            vec![(0, -0.3), (1, 0.7), (2, 0.1)],
        ]));
        let x = rand_mat(&mut rng, 3, 2);
        check(vec![x], 0, move |t, v| t.spmm(&op, v[0]));
    }

    #[test]
    fn zero_rows_normalize_to_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Array2::zeros((2, 3)));
        let y = t.row_normalize(x);
        assert!(t.value(y).iter().all(|&v| v == 0.0));
    }
}
