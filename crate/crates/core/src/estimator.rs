//! The stacked dense network that turns support `(embedding, label)` pairs into
//! linear-regression parameters.
//!
//! Each support embedding gets its label appended, passes through `L` square
//! affine+ReLU layers, and the per-support outputs are summed across supports.
//! The first `h` entries of the sum are the regression weights, the last entry
//! is the intercept.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedNetWeights {
    pub layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLayer {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Debug, Clone)]
pub struct BoundNet {
    pub layers: Vec<BoundLayer>,
    width: usize,
}

/// Regression parameters as plain values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionParams {
    pub w: Vec<f64>,
    pub beta: f64,
}

/// Regression parameters on a tape; `w` has length `h`, `beta` is rank 0.
#[derive(Debug, Clone, Copy)]
pub struct TapeRegression {
    pub w: Var,
    pub beta: Var,
}

impl StackedNetWeights {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self, ModelError> {
        let Some(first) = layers.first() else {
            return Err(ModelError::shape("stacked net", "at least one layer", "0"));
        };
        let side = first.weight.shape().first().copied().unwrap_or(0);
        for l in &layers {
            if l.weight.shape() != [side, side] {
                return Err(ModelError::shape(
                    "stacked layer weight",
                    format!("[{side}, {side}]"),
                    format!("{:?}", l.weight.shape()),
                ));
            }
            if l.bias.shape() != [side] {
                return Err(ModelError::shape(
                    "stacked layer bias",
                    format!("[{side}]"),
                    format!("{:?}", l.bias.shape()),
                ));
            }
        }
        Ok(Self { layers })
    }

    /// `depth` square layers of side `hidden + 1`, uniform `±1/sqrt(hidden + 1)`.
    pub fn init(hidden: usize, depth: usize, seed: u64) -> Self {
        assert!(depth >= 1, "stacking count must be positive");
        let side = hidden + 1;
        let bound = 1.0 / (side as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..depth)
            .map(|_| DenseLayer {
                weight: Tensor::from_fn(&[side, side], |_| rng.gen_range(-bound..=bound)),
                bias: Tensor::from_fn(&[side], |_| rng.gen_range(-bound..=bound)),
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(hidden: usize, depth: usize) -> Self {
        let side = hidden + 1;
        Self {
            layers: (0..depth)
                .map(|_| DenseLayer {
                    weight: Tensor::zeros(&[side, side]),
                    bias: Tensor::zeros(&[side]),
                })
                .collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Side length of every layer, `h + 1`.
    pub fn width(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundNet {
        BoundNet {
            layers: self
                .layers
                .iter()
                .map(|l| BoundLayer {
                    weight: tape.leaf(l.weight.clone()),
                    bias: tape.leaf(l.bias.clone()),
                })
                .collect(),
            width: self.width(),
        }
    }

    /// Plain-value version of [`estimate_params`].
    pub fn estimate(&self, support: &[(Vec<f64>, f64)]) -> Result<RegressionParams, ModelError> {
        let mut tape = Tape::new();
        let net = self.bind(&mut tape);
        let pairs: Vec<(Var, f64)> = support
            .iter()
            .map(|(z, y)| (tape.leaf(Tensor::vector(z.clone())), *y))
            .collect();
        let p = estimate_params(&mut tape, &net, &pairs)?;
        Ok(RegressionParams {
            w: tape.value(p.w)?.data().to_vec(),
            beta: tape.value(p.beta)?.data()[0],
        })
    }
}

impl BoundNet {
    /// Rebuilds a binding from `2·L` variables laid out like
    /// [`StackedNetWeights::tensors`].
    pub fn from_vars(vars: &[Var], width: usize) -> Self {
        assert!(vars.len().is_multiple_of(2) && !vars.is_empty());
        Self {
            layers: vars
                .chunks_exact(2)
                .map(|c| BoundLayer {
                    weight: c[0],
                    bias: c[1],
                })
                .collect(),
            width,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

/// `[z_1 .. z_h, y]`.
pub fn append_label(tape: &mut Tape, z: Var, y: f64) -> Result<Var, ModelError> {
    let label = tape.leaf(Tensor::vector(vec![y]));
    Ok(tape.concat(z, label)?)
}

pub fn stacked_forward(tape: &mut Tape, net: &BoundNet, v: Var) -> Result<Var, ModelError> {
    let mut h = v;
    for layer in &net.layers {
        let a = tape.matvec(layer.weight, h)?;
        let a = tape.add(a, layer.bias)?;
        h = tape.relu(a)?;
    }
    Ok(h)
}

/// Sums the stacked-network outputs of all support pairs, in input order,
/// and splits the sum into `w` (first `h` entries) and `beta` (last entry).
pub fn estimate_params(
    tape: &mut Tape,
    net: &BoundNet,
    support: &[(Var, f64)],
) -> Result<TapeRegression, ModelError> {
    if support.is_empty() {
        return Err(ModelError::EmptySupport);
    }
    let mut total: Option<Var> = None;
    for &(z, y) in support {
        let v = append_label(tape, z, y)?;
        let out = stacked_forward(tape, net, v)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, out)?,
            None => out,
        });
    }
    let total = total.expect("support is non-empty");
    let h = net.width() - 1;
    Ok(TapeRegression {
        w: tape.slice(total, 0, h)?,
        beta: tape.element(total, h)?,
    })
}
