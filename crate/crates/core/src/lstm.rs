//! Single-layer LSTM used to embed the feature vectors of an episode.
//!
//! Members are consumed oldest support first and target last, so the target's
//! hidden state carries the memory of every support subject before it. Each
//! gate sees the previous hidden state concatenated with the current input,
//! hidden part first.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::tensor::{Tape, Tensor, Var};

/// Weight matrix `[h, h + d]` and bias `[h]` of one gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmWeights {
    pub forget: Gate,
    /// Candidate cell values (the tanh branch of the input gate).
    pub candidate: Gate,
    pub input: Gate,
    pub output: Gate,
}

/// Gate weights as tape variables.
#[derive(Debug, Clone, Copy)]
pub struct BoundGate {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLstm {
    pub forget: BoundGate,
    pub candidate: BoundGate,
    pub input: BoundGate,
    pub output: BoundGate,
    hidden: usize,
}

/// Cell and hidden state recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct TapeState {
    pub cell: Var,
    pub hidden: Var,
}

/// Cell and hidden state as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub cell: Vec<f64>,
    pub hidden: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            cell: vec![0.0; hidden],
            hidden: vec![0.0; hidden],
        }
    }
}

/// Gate activations of one step, for inspection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateActivations {
    pub forget: Vec<f64>,
    pub candidate: Vec<f64>,
    pub input: Vec<f64>,
    pub output: Vec<f64>,
}

impl LstmWeights {
    pub fn new(forget: Gate, candidate: Gate, input: Gate, output: Gate) -> Result<Self, ModelError> {
        let w = Self {
            forget,
            candidate,
            input,
            output,
        };
        let shape = w.forget.weight.shape().to_vec();
        if shape.len() != 2 || shape[1] < shape[0] {
            return Err(ModelError::shape("lstm weight", "[h, h + d]", format!("{shape:?}")));
        }
        for gate in w.gates() {
            if gate.weight.shape() != shape.as_slice() {
                return Err(ModelError::shape(
                    "lstm weight",
                    format!("{shape:?}"),
                    format!("{:?}", gate.weight.shape()),
                ));
            }
            if gate.bias.shape() != [shape[0]] {
                return Err(ModelError::shape(
                    "lstm bias",
                    format!("[{}]", shape[0]),
                    format!("{:?}", gate.bias.shape()),
                ));
            }
        }
        Ok(w)
    }

    /// Uniform `[-1/sqrt(h), 1/sqrt(h)]` initialisation.
    pub fn init(input_dim: usize, hidden: usize, seed: u64) -> Self {
        assert!(input_dim >= 1 && hidden >= 1, "dimensions must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut gate = || Gate {
            weight: Tensor::from_fn(&[hidden, hidden + input_dim], |_| rng.gen_range(-bound..=bound)),
            bias: Tensor::from_fn(&[hidden], |_| rng.gen_range(-bound..=bound)),
        };
        Self {
            forget: gate(),
            candidate: gate(),
            input: gate(),
            output: gate(),
        }
    }

    /// All-zero weights; every embedding is then the zero vector.
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let gate = || Gate {
            weight: Tensor::zeros(&[hidden, hidden + input_dim]),
            bias: Tensor::zeros(&[hidden]),
        };
        Self {
            forget: gate(),
            candidate: gate(),
            input: gate(),
            output: gate(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.forget.weight.shape()[0]
    }

    pub fn input_dim(&self) -> usize {
        self.forget.weight.shape()[1] - self.hidden_dim()
    }

    pub fn gates(&self) -> [&Gate; 4] {
        [&self.forget, &self.candidate, &self.input, &self.output]
    }

    /// Weight then bias for each gate, in forget/candidate/input/output order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.gates().into_iter().flat_map(|g| [&g.weight, &g.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        [&mut self.forget, &mut self.candidate, &mut self.input, &mut self.output]
            .into_iter()
            .flat_map(|g| [&mut g.weight, &mut g.bias])
            .collect()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundLstm {
        let mut gate = |g: &Gate| BoundGate {
            weight: tape.leaf(g.weight.clone()),
            bias: tape.leaf(g.bias.clone()),
        };
        BoundLstm {
            forget: gate(&self.forget),
            candidate: gate(&self.candidate),
            input: gate(&self.input),
            output: gate(&self.output),
            hidden: self.hidden_dim(),
        }
    }

    /// One step outside of any training tape.
    pub fn step(&self, prev: &LstmState, x: &[f64]) -> Result<LstmState, ModelError> {
        self.step_with_gates(prev, x).map(|(s, _)| s)
    }

    pub fn step_with_gates(
        &self,
        prev: &LstmState,
        x: &[f64],
    ) -> Result<(LstmState, GateActivations), ModelError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let state = TapeState {
            cell: tape.leaf(Tensor::vector(prev.cell.clone())),
            hidden: tape.leaf(Tensor::vector(prev.hidden.clone())),
        };
        let x = tape.leaf(Tensor::vector(x.to_vec()));
        let (next, gates) = step_inner(&mut tape, &bound, state, x)?;
        let read = |v: Var| tape.value(v).map(|t| t.data().to_vec());
        Ok((
            LstmState {
                cell: read(next.cell)?,
                hidden: read(next.hidden)?,
            },
            GateActivations {
                forget: read(gates[0])?,
                candidate: read(gates[1])?,
                input: read(gates[2])?,
                output: read(gates[3])?,
            },
        ))
    }

    /// Hidden states for a sequence of plain feature vectors.
    pub fn embed(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(Tensor::vector(x.clone()))).collect();
        let zs = embed_episode(&mut tape, &bound, &vars)?;
        zs.into_iter()
            .map(|z| Ok(tape.value(z)?.data().to_vec()))
            .collect()
    }
}

impl BoundLstm {
    /// Rebuilds a binding from eight variables laid out like
    /// [`LstmWeights::tensors`].
    pub fn from_vars(vars: &[Var], hidden: usize) -> Self {
        assert_eq!(vars.len(), 8, "an LSTM binding needs eight variables");
        let g = |i: usize| BoundGate {
            weight: vars[2 * i],
            bias: vars[2 * i + 1],
        };
        Self {
            forget: g(0),
            candidate: g(1),
            input: g(2),
            output: g(3),
            hidden,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn zero_state(&self, tape: &mut Tape) -> TapeState {
        TapeState {
            cell: tape.leaf(Tensor::zeros(&[self.hidden])),
            hidden: tape.leaf(Tensor::zeros(&[self.hidden])),
        }
    }
}

fn gate_preact(tape: &mut Tape, g: &BoundGate, joined: Var) -> Result<Var, ModelError> {
    let m = tape.matvec(g.weight, joined)?;
    Ok(tape.add(m, g.bias)?)
}

fn step_inner(
    tape: &mut Tape,
    w: &BoundLstm,
    prev: TapeState,
    x: Var,
) -> Result<(TapeState, [Var; 4]), ModelError> {
    let joined = tape.concat(prev.hidden, x)?;
    let f = gate_preact(tape, &w.forget, joined)?;
    let forget = tape.sigmoid(f)?;
    let g = gate_preact(tape, &w.candidate, joined)?;
    let candidate = tape.tanh(g)?;
    let i = gate_preact(tape, &w.input, joined)?;
    let input = tape.sigmoid(i)?;
    let o = gate_preact(tape, &w.output, joined)?;
    let output = tape.sigmoid(o)?;

    let kept = tape.hadamard(prev.cell, forget)?;
    let written = tape.hadamard(candidate, input)?;
    let cell = tape.add(kept, written)?;
    let squashed = tape.tanh(cell)?;
    let hidden = tape.hadamard(output, squashed)?;
    Ok((TapeState { cell, hidden }, [forget, candidate, input, output]))
}

/// One recorded LSTM step.
pub fn lstm_step(tape: &mut Tape, w: &BoundLstm, prev: TapeState, x: Var) -> Result<TapeState, ModelError> {
    step_inner(tape, w, prev, x).map(|(s, _)| s)
}

/// Runs the LSTM from a zero state over `xs` and returns one hidden state per
/// input, in input order.
pub fn embed_episode(tape: &mut Tape, w: &BoundLstm, xs: &[Var]) -> Result<Vec<Var>, ModelError> {
    if xs.is_empty() {
        return Err(ModelError::EmptyEpisode);
    }
    let mut state = w.zero_state(tape);
    let mut out = Vec::with_capacity(xs.len());
    for &x in xs {
        state = lstm_step(tape, w, state, x)?;
        out.push(state.hidden);
    }
    Ok(out)
}
