//! Reverse-mode differentiation over a linear tape of vector operations.
//!
//! A [`Graph`] records every operation as it is evaluated. Parameter leaves
//! borrow their values from a [`ParamStore`], so building a graph does not
//! copy the model. [`Graph::backward`] replays the tape in reverse and
//! [`Graph::param_gradients`] gathers the adjoints of every registered
//! parameter, filling zeros for parameters the loss never touched.

use std::borrow::Cow;
use std::collections::HashMap;

use crate::error::{MsanError, Result};
use crate::params::ParamStore;
use crate::tensor::{log_softmax_slice, matvec_raw, sigmoid_scalar, softmax_slice, Tensor};

/// Lower clamp applied to probabilities before taking logs in [`Graph::bce`].
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatVec(Var, Var),
    Add(Var, Var),
    AddN(Vec<Var>),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MaskMul(Var, Vec<f64>),
    Sigmoid(Var),
    Tanh(Var),
    Dot(Var, Var),
    Sum(Var),
    SquaredNorm(Var),
    Concat(Vec<Var>),
    Element(Var, usize),
    Column(Var, usize),
    Softmax(Var),
    WeightedSum { weights: Var, items: Vec<Var> },
    Nll { logits: Var, target: usize },
    Bce { probs: Var, targets: Vec<f64> },
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, [f64]>,
    rows: usize,
    cols: usize,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
}

/// Adjoints for every node of a graph after a backward pass.
#[derive(Debug)]
pub struct Adjoints {
    grads: Vec<Vec<f64>>,
}

impl Adjoints {
    /// Gradient of the loss with respect to `v`; `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        let g = &self.grads[v.0];
        if g.is_empty() {
            None
        } else {
            Some(g)
        }
    }
}

fn add_into(dst: &mut Vec<f64>, len: usize) -> &mut [f64] {
    if dst.is_empty() {
        dst.resize(len, 0.0);
    }
    dst
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, [f64]>, rows: usize, cols: usize, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { value, rows, cols, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    fn vlen(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    /// Constant column vector.
    pub fn input(&mut self, data: Vec<f64>) -> Var {
        let n = data.len();
        self.push(Cow::Owned(data), n, 1, Op::Leaf)
    }

    /// Constant borrowed from an existing tensor.
    pub fn constant(&mut self, t: &'a Tensor) -> Var {
        let (r, c) = t.dims2();
        self.push(Cow::Borrowed(t.data()), r, c, Op::Leaf)
    }

    /// Registers `t` as parameter `name`; repeated calls return the same leaf.
    pub fn param_tensor(&mut self, name: &str, t: &'a Tensor) -> Var {
        if let Some(&v) = self.param_index.get(name) {
            return v;
        }
        let v = self.constant(t);
        self.params.push((name.to_string(), v));
        self.param_index.insert(name.to_string(), v);
        v
    }

    pub fn param(&mut self, store: &'a ParamStore, name: &str) -> Result<Var> {
        Ok(self.param_tensor(name, store.get(name)?))
    }

    pub fn matvec(&mut self, m: Var, x: Var) -> Var {
        let (r, c) = self.shape(m);
        assert_eq!(self.vlen(x), c, "matvec: matrix is {r}x{c}, vector has {}", self.vlen(x));
        let out = matvec_raw(self.value(m), r, c, self.value(x));
        self.push(Cow::Owned(out), r, 1, Op::MatVec(m, x))
    }

    fn elementwise(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        assert_eq!(self.vlen(a), self.vlen(b), "elementwise length mismatch");
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let (r, c) = self.shape(a);
        self.push(Cow::Owned(out), r, c, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.elementwise(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.elementwise(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.elementwise(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn add_n(&mut self, items: &[Var]) -> Var {
        assert!(!items.is_empty(), "add_n of nothing");
        let n = self.vlen(items[0]);
        let mut out = vec![0.0; n];
        for &v in items {
            assert_eq!(self.vlen(v), n, "add_n length mismatch");
            for (o, x) in out.iter_mut().zip(self.value(v)) {
                *o += x;
            }
        }
        let (r, c) = self.shape(items[0]);
        self.push(Cow::Owned(out), r, c, Op::AddN(items.to_vec()))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * k).collect();
        let (r, c) = self.shape(a);
        self.push(Cow::Owned(out), r, c, Op::Scale(a, k))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask_mul(&mut self, a: Var, mask: Vec<f64>) -> Var {
        assert_eq!(mask.len(), self.vlen(a));
        let out = self.value(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let (r, c) = self.shape(a);
        self.push(Cow::Owned(out), r, c, Op::MaskMul(a, mask))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| sigmoid_scalar(x)).collect();
        let (r, c) = self.shape(a);
        self.push(Cow::Owned(out), r, c, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|x| x.tanh()).collect();
        let (r, c) = self.shape(a);
        self.push(Cow::Owned(out), r, c, Op::Tanh(a))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.vlen(a), self.vlen(b), "dot length mismatch");
        let s: f64 = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        self.push(Cow::Owned(vec![s]), 1, 1, Op::Dot(a, b))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(Cow::Owned(vec![s]), 1, 1, Op::Sum(a))
    }

    pub fn squared_norm(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().map(|x| x * x).sum();
        self.push(Cow::Owned(vec![s]), 1, 1, Op::SquaredNorm(a))
    }

    pub fn concat(&mut self, items: &[Var]) -> Var {
        let out: Vec<f64> = items.iter().flat_map(|&v| self.value(v).iter().copied()).collect();
        let n = out.len();
        self.push(Cow::Owned(out), n, 1, Op::Concat(items.to_vec()))
    }

    pub fn element(&mut self, a: Var, i: usize) -> Var {
        let v = self.value(a)[i];
        self.push(Cow::Owned(vec![v]), 1, 1, Op::Element(a, i))
    }

    /// Column `j` of a matrix, as a vector (embedding lookup).
    pub fn column(&mut self, m: Var, j: usize) -> Var {
        let (r, c) = self.shape(m);
        assert!(j < c, "column {j} out of range for {r}x{c}");
        let out: Vec<f64> = (0..r).map(|i| self.value(m)[i * c + j]).collect();
        self.push(Cow::Owned(out), r, 1, Op::Column(m, j))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax_slice(self.value(a));
        let n = out.len();
        self.push(Cow::Owned(out), n, 1, Op::Softmax(a))
    }

    /// `sum_i weights[i] * items[i]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Var {
        assert_eq!(self.vlen(weights), items.len(), "weighted_sum arity");
        let n = self.vlen(items[0]);
        let mut out = vec![0.0; n];
        for (k, &v) in items.iter().enumerate() {
            let w = self.value(weights)[k];
            for (o, x) in out.iter_mut().zip(self.value(v)) {
                *o += w * x;
            }
        }
        self.push(
            Cow::Owned(out),
            n,
            1,
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
        )
    }

    /// `-log softmax(logits)[target]`.
    pub fn nll(&mut self, logits: Var, target: usize) -> Var {
        let ls = log_softmax_slice(self.value(logits));
        assert!(target < ls.len(), "nll target out of range");
        self.push(Cow::Owned(vec![-ls[target]]), 1, 1, Op::Nll { logits, target })
    }

    /// Binary cross-entropy `-sum_k [y log s + (1-y) log(1-s)]` with `s` clamped
    /// to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn bce(&mut self, probs: Var, targets: Vec<f64>) -> Var {
        assert_eq!(self.vlen(probs), targets.len());
        let loss: f64 = self
            .value(probs)
            .iter()
            .zip(&targets)
            .map(|(&s, &y)| {
                let s = s.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
            })
            .sum();
        self.push(Cow::Owned(vec![loss]), 1, 1, Op::Bce { probs, targets })
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Adjoints> {
        if self.vlen(loss) != 1 {
            return Err(MsanError::Usage(format!(
                "backward requires a scalar loss, got {} values",
                self.vlen(loss)
            )));
        }
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        grads[loss.0] = vec![1.0];
        for idx in (0..=loss.0).rev() {
            if grads[idx].is_empty() {
                continue;
            }
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let g = std::mem::take(&mut grads[idx]);
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatVec(m, x) => {
                    let (r, c) = self.shape(*m);
                    let mv = self.value(*m);
                    let xv = self.value(*x);
                    {
                        let dm = add_into(&mut grads[m.0], r * c);
                        for i in 0..r {
                            let gi = g[i];
                            if gi == 0.0 {
                                continue;
                            }
                            for (d, &xj) in dm[i * c..(i + 1) * c].iter_mut().zip(xv) {
                                *d += gi * xj;
                            }
                        }
                    }
                    let dx = add_into(&mut grads[x.0], c);
                    for i in 0..r {
                        let gi = g[i];
                        if gi == 0.0 {
                            continue;
                        }
                        for (d, &mij) in dx.iter_mut().zip(&mv[i * c..(i + 1) * c]) {
                            *d += gi * mij;
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        let d = add_into(&mut grads[v.0], g.len());
                        d.iter_mut().zip(&g).for_each(|(d, gi)| *d += gi);
                    }
                }
                Op::AddN(items) => {
                    for v in items {
                        let d = add_into(&mut grads[v.0], g.len());
                        d.iter_mut().zip(&g).for_each(|(d, gi)| *d += gi);
                    }
                }
                Op::Sub(a, b) => {
                    let d = add_into(&mut grads[a.0], g.len());
                    d.iter_mut().zip(&g).for_each(|(d, gi)| *d += gi);
                    let d = add_into(&mut grads[b.0], g.len());
                    d.iter_mut().zip(&g).for_each(|(d, gi)| *d -= gi);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let d = add_into(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        d[i] += g[i] * bv[i];
                    }
                    let d = add_into(&mut grads[b.0], g.len());
                    for i in 0..g.len() {
                        d[i] += g[i] * av[i];
                    }
                }
                Op::Scale(a, k) => {
                    let d = add_into(&mut grads[a.0], g.len());
                    d.iter_mut().zip(&g).for_each(|(d, gi)| *d += k * gi);
                }
                Op::MaskMul(a, mask) => {
                    let d = add_into(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        d[i] += g[i] * mask[i];
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let d = add_into(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        d[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let d = add_into(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        d[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let n = av.len();
                    let d = add_into(&mut grads[a.0], n);
                    for i in 0..n {
                        d[i] += g[0] * bv[i];
                    }
                    let d = add_into(&mut grads[b.0], n);
                    for i in 0..n {
                        d[i] += g[0] * av[i];
                    }
                }
                Op::Sum(a) => {
                    let n = self.vlen(*a);
                    let d = add_into(&mut grads[a.0], n);
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
                Op::SquaredNorm(a) => {
                    let av = self.value(*a);
                    let d = add_into(&mut grads[a.0], av.len());
                    for (d, x) in d.iter_mut().zip(av) {
                        *d += 2.0 * g[0] * x;
                    }
                }
                Op::Concat(items) => {
                    let mut offset = 0;
                    for v in items {
                        let n = self.vlen(*v);
                        let d = add_into(&mut grads[v.0], n);
                        for i in 0..n {
                            d[i] += g[offset + i];
                        }
                        offset += n;
                    }
                }
                Op::Element(a, i) => {
                    let n = self.vlen(*a);
                    add_into(&mut grads[a.0], n)[*i] += g[0];
                }
                Op::Column(m, j) => {
                    let (r, c) = self.shape(*m);
                    let d = add_into(&mut grads[m.0], r * c);
                    for i in 0..r {
                        d[i * c + j] += g[i];
                    }
                }
                Op::Softmax(a) => {
                    let s = &node.value;
                    let gs: f64 = g.iter().zip(s.iter()).map(|(x, y)| x * y).sum();
                    let d = add_into(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        d[i] += s[i] * (g[i] - gs);
                    }
                }
                Op::WeightedSum { weights, items } => {
                    let wv = self.value(*weights).to_vec();
                    for (k, v) in items.iter().enumerate() {
                        let iv = self.value(*v);
                        let dk: f64 = g.iter().zip(iv).map(|(x, y)| x * y).sum();
                        add_into(&mut grads[weights.0], items.len())[k] += dk;
                        let d = add_into(&mut grads[v.0], g.len());
                        for i in 0..g.len() {
                            d[i] += wv[k] * g[i];
                        }
                    }
                }
                Op::Nll { logits, target } => {
                    let s = softmax_slice(self.value(*logits));
                    let d = add_into(&mut grads[logits.0], s.len());
                    for (i, p) in s.iter().enumerate() {
                        let onehot = if i == *target { 1.0 } else { 0.0 };
                        d[i] += g[0] * (p - onehot);
                    }
                }
                Op::Bce { probs, targets } => {
                    let pv = self.value(*probs);
                    let d = add_into(&mut grads[probs.0], pv.len());
                    for i in 0..pv.len() {
                        let s = pv[i];
                        if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&s) {
                            continue;
                        }
                        let y = targets[i];
                        d[i] += g[0] * (-y / s + (1.0 - y) / (1.0 - s));
                    }
                }
            }
        }
        Ok(Adjoints { grads })
    }

    /// Gradients of every entry in `store`, zero for parameters not on this graph.
    pub fn param_gradients(&self, adj: &Adjoints, store: &ParamStore) -> Result<ParamStore> {
        let mut out = store.zeros_like();
        for (name, var) in &self.params {
            if let Some(g) = adj.get(*var) {
                let t = out
                    .get_mut(name)
                    .ok_or_else(|| MsanError::Usage(format!("parameter {name:?} is not in the store")))?;
                t.data_mut().copy_from_slice(g);
            }
        }
        Ok(out)
    }
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub coordinates: usize,
}

/// |a - n| / max(1e-8, |a| + |n|).
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Analytic gradient of `loss_fn` w.r.t. every parameter in `params`.
pub fn gradient<F>(params: &ParamStore, loss_fn: &F) -> Result<(f64, ParamStore)>
where
    F: for<'g> Fn(&mut Graph<'g>, &'g ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, params)?;
    let value = g.scalar(loss);
    let adj = g.backward(loss)?;
    Ok((value, g.param_gradients(&adj, params)?))
}

/// Compares the analytic gradient against central differences
/// `(f(p + eps) - f(p - eps)) / (2 eps)` on every coordinate.
pub fn grad_check<F>(params: &ParamStore, eps: f64, loss_fn: F) -> Result<GradCheck>
where
    F: for<'g> Fn(&mut Graph<'g>, &'g ParamStore) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(MsanError::Usage(format!("grad_check eps {eps} outside [1e-6, 1e-3]")));
    }
    let (_, analytic) = gradient(params, &loss_fn)?;
    let eval = |p: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let loss = loss_fn(&mut g, p)?;
        Ok(g.scalar(loss))
    };
    let mut work = params.clone();
    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        coordinates: 0,
    };
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let n = params.get(&name)?.len();
        for i in 0..n {
            let orig = params.get(&name)?.data()[i];
            work.get_mut(&name).unwrap().data_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work.get_mut(&name).unwrap().data_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work.get_mut(&name).unwrap().data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(&name)?.data()[i];
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_param = name.clone();
                report.worst_index = i;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store(entries: &[(&str, Vec<usize>, Vec<f64>)]) -> ParamStore {
        let mut s = ParamStore::new();
        for (name, shape, data) in entries {
            s.insert(*name, Tensor::new(shape.clone(), data.clone()).unwrap());
        }
        s
    }

    #[test]
    fn gradient_of_sum_is_ones() {
        let p = store(&[("p", vec![3], vec![1.0, 2.0, 3.0])]);
        let (v, g) = gradient(&p, &|g, s| {
            let x = g.param(s, "p")?;
            Ok(g.sum(x))
        })
        .unwrap();
        assert_eq!(v, 6.0);
        assert_eq!(g.get("p").unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn gradient_of_self_dot() {
        let p = store(&[("p", vec![2], vec![2.0, 3.0])]);
        let (_, g) = gradient(&p, &|g, s| {
            let x = g.param(s, "p")?;
            Ok(g.dot(x, x))
        })
        .unwrap();
        assert_eq!(g.get("p").unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn unused_parameters_get_zero_gradient() {
        let p = store(&[("a", vec![2], vec![1.0, 1.0]), ("b", vec![2, 2], vec![5.0; 4])]);
        let (_, g) = gradient(&p, &|g, s| {
            let x = g.param(s, "a")?;
            Ok(g.sum(x))
        })
        .unwrap();
        assert_eq!(g.get("b").unwrap().shape(), &[2, 2]);
        assert!(g.get("b").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_loss_is_usage_error() {
        let p = store(&[("p", vec![2], vec![1.0, 2.0])]);
        let mut g = Graph::new();
        let x = g.param(&p, "p").unwrap();
        assert!(matches!(g.backward(x), Err(MsanError::Usage(_))));
    }

    #[test]
    fn quadratic_grad_check_is_exact() {
        let p = store(&[("p", vec![4], vec![0.3, -1.2, 2.0, 0.7])]);
        let r = grad_check(&p, 1e-4, |g, s| {
            let x = g.param(s, "p")?;
            let y = g.scale(x, 3.0);
            Ok(g.dot(x, y))
        })
        .unwrap();
        assert!(r.max_relative_error < 1e-9, "{r:?}");
    }

    #[test]
    fn grad_check_rejects_bad_eps() {
        let p = store(&[("p", vec![1], vec![1.0])]);
        let r = grad_check(&p, 0.1, |g, s| {
            let x = g.param(s, "p")?;
            Ok(g.sum(x))
        });
        assert!(r.is_err());
    }

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    // Every op in one composite loss on random small shapes.
    #[test]
    fn every_op_matches_central_differences() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = rng.gen_range(2..5);
            let c = rng.gen_range(2..5);
            let p = store(&[
                ("m", vec![r, c], random(&mut rng, r * c)),
                ("x", vec![c], random(&mut rng, c)),
                ("y", vec![r], random(&mut rng, r)),
                ("w", vec![3], random(&mut rng, 3)),
            ]);
            let mask: Vec<f64> = (0..r).map(|i| if i % 2 == 0 { 2.0 } else { 0.0 }).collect();
            let targets: Vec<f64> = (0..r).map(|i| (i % 2) as f64).collect();
            let res = grad_check(&p, 1e-4, |g, s| {
                let m = g.param(s, "m")?;
                let x = g.param(s, "x")?;
                let y = g.param(s, "y")?;
                let w = g.param(s, "w")?;
                let mx = g.matvec(m, x);
                let a = g.add(mx, y);
                let t = g.tanh(a);
                let sg = g.sigmoid(a);
                let prod = g.mul(t, sg);
                let diff = g.sub(prod, y);
                let dropped = g.mask_mul(diff, mask.clone());
                let sm = g.softmax(w);
                let ws = g.weighted_sum(sm, &[t, sg, dropped]);
                let col = g.column(m, 1);
                let e = g.element(x, 0);
                let cat = g.concat(&[ws, e]);
                let sq = g.squared_norm(cat);
                let lg = g.nll(ws, 0);
                let bce = g.bce(sg, targets.clone());
                let sc = g.sum(col);
                let d = g.dot(ws, y);
                let half = g.scale(sq, 0.5);
                Ok(g.add_n(&[half, lg, bce, sc, d]))
            })
            .unwrap();
            assert!(res.max_relative_error < 1e-6, "seed {seed}: {res:?}");
        }
    }
}
