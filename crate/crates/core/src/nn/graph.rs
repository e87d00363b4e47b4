//! Reverse-mode automatic differentiation over `[C, H, W]` feature maps.
//!
//! A [`Graph`] records operations on [`Var`]s whose value depends on a
//! gradient-carrying leaf. Everything else (inputs, frozen parameters, any
//! result computed only from those) is a constant and leaves no tape entry,
//! so backward never visits frozen subgraphs. With recording disabled the
//! graph is a plain forward evaluator and intermediates are freed as soon as
//! their `Var` drops.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::conv::{conv2d_backward, conv2d_forward};
use super::params::{ParamId, ParamStore, LEAKY_SLOPE};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Var {
    id: Option<usize>,
    value: Rc<Tensor>,
}

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.id.is_some()
    }

    /// Scalar value of a one-element result.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.value.len(), 1);
        self.value.data()[0]
    }
}

/// Backward rule for an operation implemented outside this module.
pub trait CustomBackward {
    /// Gradients for each input given the output gradient; entries whose
    /// `need` flag is false may be `None`.
    fn backward(&self, dout: &[f64], need: &[bool]) -> Vec<Option<Vec<f64>>>;
}

enum Op {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Option<usize>>,
        cin: usize,
        cout: usize,
        k: usize,
    },
    Add(Option<usize>, Option<usize>),
    Sub(Option<usize>, Option<usize>),
    Scale(usize, f64),
    Leaky(Var),
    Concat(Vec<(Option<usize>, usize)>),
    Mse {
        x: Var,
        target: Rc<Tensor>,
        scale: f64,
    },
    Charbonnier {
        x: Var,
        target: Rc<Tensor>,
        eps: f64,
    },
    WeightedSum(Vec<(usize, f64)>),
    Dot(usize, Rc<Tensor>),
    Custom(Vec<Option<usize>>, Box<dyn CustomBackward>),
}

struct Node {
    op: Op,
    len: usize,
}

pub struct Graph<'a> {
    store: &'a ParamStore,
    record: bool,
    tape: RefCell<Vec<Node>>,
    params: RefCell<HashMap<ParamId, Var>>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    by_node: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, usize, Vec<usize>)>,
}

impl Gradients {
    /// Gradient of a trainable parameter that the loss depends on.
    pub fn param(&self, id: ParamId) -> Option<Tensor> {
        self.params
            .iter()
            .find(|p| p.0 == id)
            .and_then(|(_, node, shape)| self.by_node[*node].as_ref().map(|g| Tensor::from_vec(shape, g.clone())))
    }

    pub fn of(&self, v: &Var) -> Option<Tensor> {
        let id = v.id?;
        self.by_node[id]
            .as_ref()
            .map(|g| Tensor::from_vec(v.shape(), g.clone()))
    }

    /// Every parameter gradient in registration order.
    pub fn params(&self) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = self
            .params
            .iter()
            .filter_map(|(pid, node, shape)| {
                self.by_node[*node]
                    .as_ref()
                    .map(|g| (*pid, Tensor::from_vec(shape, g.clone())))
            })
            .collect();
        out.sort_by_key(|p| p.0);
        out
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

fn accumulate_slice(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

impl<'a> Graph<'a> {
    /// A graph that records operations for backward.
    pub fn new(store: &'a ParamStore) -> Self {
        Self::with_recording(store, true)
    }

    /// A forward-only graph.
    pub fn inference(store: &'a ParamStore) -> Self {
        Self::with_recording(store, false)
    }

    fn with_recording(store: &'a ParamStore, record: bool) -> Self {
        Graph {
            store,
            record,
            tape: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn tape_len(&self) -> usize {
        self.tape.borrow().len()
    }

    fn push(&self, op: Op, value: Tensor) -> Var {
        let mut tape = self.tape.borrow_mut();
        tape.push(Node { op, len: value.len() });
        Var {
            id: Some(tape.len() - 1),
            value: Rc::new(value),
        }
    }

    fn constant_var(value: Tensor) -> Var {
        Var {
            id: None,
            value: Rc::new(value),
        }
    }

    pub fn constant(&self, value: Tensor) -> Var {
        Self::constant_var(value)
    }

    /// A leaf that receives a gradient (only when recording).
    pub fn input(&self, value: Tensor) -> Var {
        if self.record {
            self.push(Op::Leaf, value)
        } else {
            Self::constant_var(value)
        }
    }

    /// Parameter as a variable; frozen parameters are constants.
    pub fn param(&self, id: ParamId) -> Var {
        if let Some(v) = self.params.borrow().get(&id) {
            return v.clone();
        }
        let p = self.store.get(id);
        let v = if self.record && p.trainable {
            self.push(Op::Leaf, p.value.clone())
        } else {
            Self::constant_var(p.value.clone())
        };
        self.params.borrow_mut().insert(id, v.clone());
        v
    }

    /// Zero-padded stride-1 convolution; `x: [cin, h, w]`, `w: [cout, cin, k, k]`.
    pub fn conv2d(&self, x: &Var, w: &Var, b: Option<&Var>) -> Var {
        let (cin, h, wd) = x.value.chw();
        let ws = w.shape();
        assert!(
            ws.len() == 4 && ws[1] == cin && ws[2] == ws[3],
            "conv weight {ws:?} vs input {:?}",
            x.shape()
        );
        let (cout, k) = (ws[0], ws[2]);
        let out = conv2d_forward(
            x.value.data(),
            cin,
            h,
            wd,
            w.value.data(),
            cout,
            k,
            b.map(|b| b.value.data()),
        );
        let out = Tensor::from_vec(&[cout, h, wd], out);
        let b_id = b.map(|b| b.id);
        if x.id.is_none() && w.id.is_none() && b_id.flatten().is_none() {
            return Self::constant_var(out);
        }
        self.push(
            Op::Conv {
                x: x.clone(),
                w: w.clone(),
                b: b_id,
                cin,
                cout,
                k,
            },
            out,
        )
    }

    pub fn add(&self, a: &Var, b: &Var) -> Var {
        let v = a.value.add(&b.value).expect("add shape");
        if a.id.is_none() && b.id.is_none() {
            return Self::constant_var(v);
        }
        self.push(Op::Add(a.id, b.id), v)
    }

    pub fn sub(&self, a: &Var, b: &Var) -> Var {
        let v = a.value.sub(&b.value).expect("sub shape");
        if a.id.is_none() && b.id.is_none() {
            return Self::constant_var(v);
        }
        self.push(Op::Sub(a.id, b.id), v)
    }

    pub fn scale(&self, a: &Var, f: f64) -> Var {
        let v = a.value.scale(f);
        match a.id {
            None => Self::constant_var(v),
            Some(id) => self.push(Op::Scale(id, f), v),
        }
    }

    pub fn leaky_relu(&self, a: &Var) -> Var {
        let v = a.value.map(|x| if x > 0.0 { x } else { LEAKY_SLOPE * x });
        match a.id {
            None => Self::constant_var(v),
            Some(_) => self.push(Op::Leaky(a.clone()), v),
        }
    }

    /// Channel concatenation of `[c_i, h, w]` maps.
    pub fn concat(&self, parts: &[&Var]) -> Var {
        let tensors: Vec<&Tensor> = parts.iter().map(|p| p.value.as_ref()).collect();
        let v = Tensor::concat_channels(&tensors).expect("concat shape");
        if parts.iter().all(|p| p.id.is_none()) {
            return Self::constant_var(v);
        }
        self.push(Op::Concat(parts.iter().map(|p| (p.id, p.value.len())).collect()), v)
    }

    /// `scale · mean((x − target)²)`
    pub fn mse(&self, x: &Var, target: &Tensor, scale: f64) -> Var {
        let n = x.value.len() as f64;
        let s = x
            .value
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        let v = Tensor::from_vec(&[1], vec![scale * s / n]);
        assert_eq!(x.shape(), target.shape(), "mse shape");
        match x.id {
            None => Self::constant_var(v),
            Some(_) => self.push(
                Op::Mse {
                    x: x.clone(),
                    target: Rc::new(target.clone()),
                    scale,
                },
                v,
            ),
        }
    }

    /// `mean(sqrt((x − target)² + eps²))`
    pub fn charbonnier(&self, x: &Var, target: &Tensor, eps: f64) -> Var {
        assert_eq!(x.shape(), target.shape(), "charbonnier shape");
        let v = Tensor::from_vec(&[1], vec![charbonnier_value(x.value.data(), target.data(), eps)]);
        match x.id {
            None => Self::constant_var(v),
            Some(_) => self.push(
                Op::Charbonnier {
                    x: x.clone(),
                    target: Rc::new(target.clone()),
                    eps,
                },
                v,
            ),
        }
    }

    /// `Σ w_i · s_i` over scalar variables.
    pub fn weighted_sum(&self, terms: &[(&Var, f64)]) -> Var {
        let v: f64 = terms.iter().map(|(s, w)| w * s.item()).sum();
        let ids: Vec<(usize, f64)> = terms.iter().filter_map(|(s, w)| s.id.map(|i| (i, *w))).collect();
        let v = Tensor::from_vec(&[1], vec![v]);
        if ids.is_empty() {
            return Self::constant_var(v);
        }
        self.push(Op::WeightedSum(ids), v)
    }

    /// `Σ x ⊙ c` for a constant `c`.
    pub fn dot(&self, x: &Var, c: &Tensor) -> Var {
        assert_eq!(x.value.len(), c.len(), "dot length");
        let v: f64 = x.value.data().iter().zip(c.data()).map(|(a, b)| a * b).sum();
        let v = Tensor::from_vec(&[1], vec![v]);
        match x.id {
            None => Self::constant_var(v),
            Some(id) => self.push(Op::Dot(id, Rc::new(c.clone())), v),
        }
    }

    /// Record an externally computed value with its backward rule.
    pub fn custom(&self, value: Tensor, inputs: &[&Var], backward: Box<dyn CustomBackward>) -> Var {
        if !self.record || inputs.iter().all(|v| v.id.is_none()) {
            return Self::constant_var(value);
        }
        self.push(Op::Custom(inputs.iter().map(|v| v.id).collect(), backward), value)
    }

    /// Gradients of the scalar `loss` with respect to every recorded leaf.
    pub fn backward(&self, loss: &Var) -> Gradients {
        let tape = self.tape.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(tape.len());
        grads.resize_with(tape.len(), || None);
        let params = self
            .params
            .borrow()
            .iter()
            .filter_map(|(pid, v)| v.id.map(|n| (*pid, n, v.shape().to_vec())))
            .collect();
        let Some(root) = loss.id else {
            return Gradients { by_node: grads, params };
        };
        assert_eq!(loss.value.len(), 1, "backward needs a scalar loss");
        grads[root] = Some(vec![1.0]);

        for idx in (0..=root).rev() {
            let Some(dout) = grads[idx].take() else { continue };
            let node = &tape[idx];
            debug_assert_eq!(dout.len(), node.len);
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(dout);
                }
                Op::Conv { x, w, b, cin, cout, k } => {
                    let (_, h, wd) = x.value.chw();
                    let bid = b.flatten();
                    let g = conv2d_backward(
                        &dout,
                        x.value.data(),
                        *cin,
                        h,
                        wd,
                        w.value.data(),
                        *cout,
                        *k,
                        (x.id.is_some(), w.id.is_some(), bid.is_some()),
                    );
                    if let (Some(i), Some(d)) = (x.id, g.dx) {
                        accumulate(&mut grads[i], d);
                    }
                    if let (Some(i), Some(d)) = (w.id, g.dw) {
                        accumulate(&mut grads[i], d);
                    }
                    if let (Some(i), Some(d)) = (bid, g.db) {
                        accumulate(&mut grads[i], d);
                    }
                }
                Op::Add(a, b) => match (a, b) {
                    (Some(a), Some(b)) => {
                        accumulate_slice(&mut grads[*a], &dout);
                        accumulate(&mut grads[*b], dout);
                    }
                    (Some(i), None) | (None, Some(i)) => accumulate(&mut grads[*i], dout),
                    (None, None) => {}
                },
                Op::Sub(a, b) => {
                    if let Some(a) = a {
                        accumulate_slice(&mut grads[*a], &dout);
                    }
                    if let Some(b) = b {
                        accumulate(&mut grads[*b], dout.iter().map(|v| -v).collect());
                    }
                }
                Op::Scale(a, f) => {
                    accumulate(&mut grads[*a], dout.iter().map(|v| v * f).collect());
                }
                Op::Leaky(x) => {
                    let g = dout
                        .iter()
                        .zip(x.value.data())
                        .map(|(d, &v)| if v > 0.0 { *d } else { LEAKY_SLOPE * d })
                        .collect();
                    accumulate(&mut grads[x.id.expect("leaky input")], g);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for (id, len) in parts {
                        if let Some(i) = id {
                            accumulate_slice(&mut grads[*i], &dout[off..off + len]);
                        }
                        off += len;
                    }
                }
                Op::Mse { x, target, scale } => {
                    let f = 2.0 * scale * dout[0] / x.value.len() as f64;
                    let g = x
                        .value
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(a, b)| f * (a - b))
                        .collect();
                    accumulate(&mut grads[x.id.expect("mse input")], g);
                }
                Op::Charbonnier { x, target, eps } => {
                    let f = dout[0] / x.value.len() as f64;
                    let g = x
                        .value
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(a, b)| {
                            let d = a - b;
                            f * d / (d * d + eps * eps).sqrt()
                        })
                        .collect();
                    accumulate(&mut grads[x.id.expect("charbonnier input")], g);
                }
                Op::WeightedSum(terms) => {
                    for (i, w) in terms {
                        accumulate(&mut grads[*i], vec![w * dout[0]]);
                    }
                }
                Op::Dot(i, c) => {
                    accumulate(&mut grads[*i], c.data().iter().map(|v| v * dout[0]).collect());
                }
                Op::Custom(inputs, op) => {
                    let need: Vec<bool> = inputs.iter().map(Option::is_some).collect();
                    let gs = op.backward(&dout, &need);
                    for (id, g) in inputs.iter().zip(gs) {
                        if let (Some(i), Some(g)) = (id, g) {
                            accumulate(&mut grads[*i], g);
                        }
                    }
                }
            }
        }
        Gradients { by_node: grads, params }
    }
}

pub fn charbonnier_value(a: &[f64], b: &[f64], eps: f64) -> f64 {
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| ((x - y) * (x - y) + eps * eps).sqrt())
        .sum();
    s / a.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Init;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn net(g: &Graph, x: &Var, store: &ParamStore) -> Var {
        let w1 = g.param(store.id("w1").unwrap());
        let b1 = g.param(store.id("b1").unwrap());
        let w2 = g.param(store.id("w2").unwrap());
        let h = g.leaky_relu(&g.conv2d(x, &w1, Some(&b1)));
        let cat = g.concat(&[&h, x]);
        let y = g.conv2d(&cat, &w2, None);
        g.sub(&g.add(&y, &g.scale(x, 0.5)), &h)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        store.add_init("w1", &[3, 3, 3, 3], Init::Kaiming { scale: 1.0 }, &mut rng);
        store.add_init("b1", &[3], Init::Kaiming { scale: 1.0 }, &mut rng);
        store.add_init("w2", &[3, 6, 1, 1], Init::Kaiming { scale: 1.0 }, &mut rng);
        let x0 = rand_tensor(&mut rng, &[3, 5, 4]);
        let target = rand_tensor(&mut rng, &[3, 5, 4]);
        let loss_of = |store: &ParamStore, x: &Tensor| {
            let g = Graph::inference(store);
            let y = net(&g, &g.constant(x.clone()), store);
            let a = g.mse(&y, &target, 0.7);
            let b = g.charbonnier(&y, &target, 1e-2);
            g.weighted_sum(&[(&a, 1.0), (&b, 2.0)]).item()
        };

        let g = Graph::new(&store);
        let x = g.input(x0.clone());
        let y = net(&g, &x, &store);
        let a = g.mse(&y, &target, 0.7);
        let b = g.charbonnier(&y, &target, 1e-2);
        let loss = g.weighted_sum(&[(&a, 1.0), (&b, 2.0)]);
        let grads = g.backward(&loss);

        let h = 1e-6;
        let gx = grads.of(&x).unwrap();
        for i in 0..x0.len() {
            let mut p = x0.clone();
            p.data_mut()[i] += h;
            let mut m = x0.clone();
            m.data_mut()[i] -= h;
            let fd = (loss_of(&store, &p) - loss_of(&store, &m)) / (2.0 * h);
            assert!(
                (fd - gx.data()[i]).abs() < 1e-6 * (1.0 + fd.abs()),
                "x[{i}] {fd} vs {}",
                gx.data()[i]
            );
        }
        for name in ["w1", "b1", "w2"] {
            let id = store.id(name).unwrap();
            let gp = grads.param(id).unwrap();
            for i in 0..gp.len() {
                let mut s = store.clone();
                s.value_mut(id).data_mut()[i] += h;
                let lp = loss_of(&s, &x0);
                s.value_mut(id).data_mut()[i] -= 2.0 * h;
                let lm = loss_of(&s, &x0);
                let fd = (lp - lm) / (2.0 * h);
                assert!((fd - gp.data()[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{name}[{i}]");
            }
        }
    }

    #[test]
    fn frozen_parameters_leave_no_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let w = store.add_init("w", &[2, 2, 3, 3], Init::Kaiming { scale: 1.0 }, &mut rng);
        store.set_trainable("w", false);
        let g = Graph::new(&store);
        let x = g.constant(rand_tensor(&mut rng, &[2, 4, 4]));
        let y = g.conv2d(&x, &g.param(w), None);
        let l = g.mse(&y, &Tensor::zeros(&[2, 4, 4]), 1.0);
        assert!(!l.requires_grad());
        assert_eq!(g.tape_len(), 0);
        assert!(g.backward(&l).param(w).is_none());
    }

    #[test]
    fn inference_matches_recorded_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        store.add_init("w1", &[3, 3, 3, 3], Init::Kaiming { scale: 1.0 }, &mut rng);
        store.add_init("b1", &[3], Init::Zero, &mut rng);
        store.add_init("w2", &[3, 6, 1, 1], Init::Kaiming { scale: 1.0 }, &mut rng);
        let x = rand_tensor(&mut rng, &[3, 6, 6]);
        let g1 = Graph::new(&store);
        let a = net(&g1, &g1.input(x.clone()), &store);
        let g2 = Graph::inference(&store);
        let b = net(&g2, &g2.constant(x), &store);
        assert_eq!(a.value(), b.value());
        assert_eq!(g2.tape_len(), 0);
    }
}
