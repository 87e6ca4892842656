use std::sync::atomic::{AtomicU64, Ordering};

use super::{relu, sigmoid, Result, Tensor, TensorError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Leaf,
    MatVec(usize, usize),
    Hadamard(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Concat(usize, usize),
    Slice { src: usize, start: usize, end: usize },
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Dot(usize, usize),
    Sum(usize),
    Scale(usize, f64),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Ordered record of every primitive evaluated during a forward pass.
///
/// Entries only ever reference earlier entries, so the record is topologically
/// sorted by construction and the reverse sweep is a single backwards loop.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.tape == self.id && v.index < self.nodes.len() {
            Ok(v.index)
        } else {
            Err(TensorError::MissingRecord)
        }
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.nodes[self.index(v)?].value)
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn record(&mut self, op: Op) -> Result<Var> {
        let value = forward(&op, |i| &self.nodes[i].value)?;
        Ok(self.push(op, value))
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t)
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.leaf(Tensor::scalar(value))
    }

    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var> {
        let op = Op::MatVec(self.index(m)?, self.index(v)?);
        self.record(op)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Hadamard(self.index(a)?, self.index(b)?);
        self.record(op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Add(self.index(a)?, self.index(b)?);
        self.record(op)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Sub(self.index(a)?, self.index(b)?);
        self.record(op)
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Concat(self.index(a)?, self.index(b)?);
        self.record(op)
    }

    /// Entries `start..end` of a vector.
    pub fn slice(&mut self, v: Var, start: usize, end: usize) -> Result<Var> {
        let op = Op::Slice {
            src: self.index(v)?,
            start,
            end,
        };
        self.record(op)
    }

    /// Single entry of a vector as a rank-0 value.
    pub fn element(&mut self, v: Var, i: usize) -> Result<Var> {
        let s = self.slice(v, i, i + 1)?;
        self.sum(s)
    }

    pub fn sigmoid(&mut self, v: Var) -> Result<Var> {
        let op = Op::Sigmoid(self.index(v)?);
        self.record(op)
    }

    pub fn tanh(&mut self, v: Var) -> Result<Var> {
        let op = Op::Tanh(self.index(v)?);
        self.record(op)
    }

    pub fn relu(&mut self, v: Var) -> Result<Var> {
        let op = Op::Relu(self.index(v)?);
        self.record(op)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Dot(self.index(a)?, self.index(b)?);
        self.record(op)
    }

    /// Sum of all entries, as a rank-0 value.
    pub fn sum(&mut self, v: Var) -> Result<Var> {
        let op = Op::Sum(self.index(v)?);
        self.record(op)
    }

    pub fn scale(&mut self, v: Var, factor: f64) -> Result<Var> {
        let op = Op::Scale(self.index(v)?, factor);
        self.record(op)
    }

    /// Smallest `|x|` over every recorded ReLU input, or `None` without ReLUs.
    pub fn min_relu_margin(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(i) => Some(&self.nodes[i].value),
                _ => None,
            })
            .flat_map(|t| t.data().iter().map(|x| x.abs()))
            .reduce(f64::min)
    }

    /// Re-evaluates every non-leaf entry from the stored leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match node.op {
                Op::Leaf => node.value.clone(),
                op => forward(&op, |i| &values[i])?,
            };
            values.push(value);
        }
        Ok(values)
    }

    /// Reverse sweep from a scalar `loss`. Every leaf that `loss` depends on
    /// receives an accumulated gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.index(loss)?;
        let root_value = &self.nodes[root].value;
        if root_value.len() != 1 {
            return Err(TensorError::Rank {
                op: "backward",
                expected: 0,
                found: root_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root + 1];
        grads[root] = Some(vec![1.0]);

        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let val = |j: usize| self.nodes[j].value.data();
            match node.op {
                Op::Leaf => {}
                Op::MatVec(m, v) => {
                    let cols = self.nodes[m].value.shape()[1];
                    let (md, vd) = (val(m), val(v));
                    let gm = accum(&mut grads, m, md.len());
                    for (r, gr) in g.iter().enumerate() {
                        for c in 0..cols {
                            gm[r * cols + c] += gr * vd[c];
                        }
                    }
                    let gv = accum(&mut grads, v, vd.len());
                    for (r, gr) in g.iter().enumerate() {
                        let row = &md[r * cols..(r + 1) * cols];
                        for (acc, w) in gv.iter_mut().zip(row) {
                            *acc += gr * w;
                        }
                    }
                }
                Op::Hadamard(a, b) => {
                    let (ad, bd) = (val(a), val(b));
                    let ga = accum(&mut grads, a, ad.len());
                    for ((acc, gi), bi) in ga.iter_mut().zip(&g).zip(bd) {
                        *acc += gi * bi;
                    }
                    let gb = accum(&mut grads, b, bd.len());
                    for ((acc, gi), ai) in gb.iter_mut().zip(&g).zip(ad) {
                        *acc += gi * ai;
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    add_into(accum(&mut grads, a, g.len()), &g, 1.0);
                    add_into(accum(&mut grads, b, g.len()), &g, sign);
                }
                Op::Concat(a, b) => {
                    let split = val(a).len();
                    add_into(accum(&mut grads, a, split), &g[..split], 1.0);
                    add_into(accum(&mut grads, b, g.len() - split), &g[split..], 1.0);
                }
                Op::Slice { src, start, end } => {
                    let n = val(src).len();
                    add_into(&mut accum(&mut grads, src, n)[start..end], &g, 1.0);
                }
                Op::Sigmoid(a) => {
                    let out = node.value.data();
                    let ga = accum(&mut grads, a, out.len());
                    for ((acc, gi), s) in ga.iter_mut().zip(&g).zip(out) {
                        *acc += gi * s * (1.0 - s);
                    }
                }
                Op::Tanh(a) => {
                    let out = node.value.data();
                    let ga = accum(&mut grads, a, out.len());
                    for ((acc, gi), t) in ga.iter_mut().zip(&g).zip(out) {
                        *acc += gi * (1.0 - t * t);
                    }
                }
                Op::Relu(a) => {
                    let input = val(a);
                    let ga = accum(&mut grads, a, input.len());
                    for ((acc, gi), x) in ga.iter_mut().zip(&g).zip(input) {
                        // subgradient at exactly zero is zero
                        if *x > 0.0 {
                            *acc += gi;
                        }
                    }
                }
                Op::Dot(a, b) => {
                    let (ad, bd) = (val(a), val(b));
                    add_into(accum(&mut grads, a, ad.len()), bd, g[0]);
                    add_into(accum(&mut grads, b, bd.len()), ad, g[0]);
                }
                Op::Sum(a) => {
                    let n = val(a).len();
                    accum(&mut grads, a, n).iter_mut().for_each(|x| *x += g[0]);
                }
                Op::Scale(a, f) => {
                    add_into(accum(&mut grads, a, g.len()), &g, f);
                }
            }
            // Leaves keep their gradient for the caller.
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| Tensor {
                    shape: self.nodes[i].value.shape().to_vec(),
                    data,
                })
            })
            .collect();
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}

fn accum(grads: &mut [Option<Vec<f64>>], i: usize, len: usize) -> &mut Vec<f64> {
    grads[i].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], factor: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += factor * s;
    }
}

fn forward<'a>(op: &Op, get: impl Fn(usize) -> &'a Tensor) -> Result<Tensor> {
    let map = |i: usize, f: fn(f64) -> f64| {
        let t = get(i);
        Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&x| f(x)).collect(),
        }
    };
    let same_shape = |name: &'static str, a: &Tensor, b: &Tensor| {
        if a.shape() == b.shape() {
            Ok(())
        } else {
            Err(TensorError::Dimension {
                op: name,
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            })
        }
    };
    Ok(match *op {
        Op::Leaf => unreachable!("leaves are stored, not computed"),
        Op::MatVec(m, v) => {
            let (m, v) = (get(m), get(v));
            m.expect_rank("matvec", 2)?;
            v.expect_rank("matvec", 1)?;
            let (rows, cols) = (m.shape()[0], m.shape()[1]);
            if cols != v.len() {
                return Err(TensorError::Dimension {
                    op: "matvec",
                    left: m.shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
            let data = m
                .data()
                .chunks_exact(cols.max(1))
                .take(rows)
                .map(|row| row.iter().zip(v.data()).map(|(a, b)| a * b).sum())
                .collect::<Vec<f64>>();
            // a [p, 0] matrix has no rows to chunk
            let data = if cols == 0 { vec![0.0; rows] } else { data };
            Tensor::vector(data)
        }
        Op::Hadamard(a, b) | Op::Add(a, b) | Op::Sub(a, b) => {
            let (name, f): (&'static str, fn(f64, f64) -> f64) = match op {
                Op::Hadamard(..) => ("hadamard", |x, y| x * y),
                Op::Add(..) => ("add", |x, y| x + y),
                _ => ("sub", |x, y| x - y),
            };
            let (a, b) = (get(a), get(b));
            same_shape(name, a, b)?;
            Tensor {
                shape: a.shape().to_vec(),
                data: a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
            }
        }
        Op::Concat(a, b) => {
            let (a, b) = (get(a), get(b));
            a.expect_rank("concat", 1)?;
            b.expect_rank("concat", 1)?;
            let mut data = Vec::with_capacity(a.len() + b.len());
            data.extend_from_slice(a.data());
            data.extend_from_slice(b.data());
            Tensor::vector(data)
        }
        Op::Slice { src, start, end } => {
            let t = get(src);
            t.expect_rank("slice", 1)?;
            if start > end || end > t.len() {
                return Err(TensorError::Slice {
                    start,
                    end,
                    len: t.len(),
                });
            }
            Tensor::vector(t.data()[start..end].to_vec())
        }
        Op::Sigmoid(a) => map(a, sigmoid),
        Op::Tanh(a) => map(a, f64::tanh),
        Op::Relu(a) => map(a, relu),
        Op::Dot(a, b) => {
            let (a, b) = (get(a), get(b));
            a.expect_rank("dot", 1)?;
            same_shape("dot", a, b)?;
            Tensor::scalar(a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum())
        }
        Op::Sum(a) => Tensor::scalar(get(a).data().iter().sum()),
        Op::Scale(a, f) => {
            let t = get(a);
            Tensor {
                shape: t.shape().to_vec(),
                data: t.data().iter().map(|x| x * f).collect(),
            }
        }
    })
}

/// Result of [`Tape::backward`]: gradients keyed by the tape's variables.
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` if the loss does not reach it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    /// Like [`get`](Self::get) but yields zeros of `like`'s shape when the loss
    /// does not depend on `v`.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}
