//! Independent reimplementations used as references by the acceptance suite.

use super::dd::Dd;

/// Weights in the same flattened order as `ModelParams::tensors`: four LSTM
/// gates (forget, candidate, input, output; weight then bias), then each
/// stacked layer's weight and bias.
pub struct FlatModel<'a> {
    pub tensors: &'a [Vec<Dd>],
    pub input_dim: usize,
    pub hidden: usize,
}

pub struct EpisodeData {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

fn affine(w: &[Dd], b: &[Dd], v: &[Dd]) -> Vec<Dd> {
    let cols = v.len();
    b.iter()
        .enumerate()
        .map(|(i, &bi)| {
            w[i * cols..(i + 1) * cols]
                .iter()
                .zip(v)
                .fold(bi, |acc, (&a, &x)| acc + a * x)
        })
        .collect()
}

impl FlatModel<'_> {
    fn gate(&self, g: usize, joined: &[Dd], act: fn(Dd) -> Dd) -> Vec<Dd> {
        affine(&self.tensors[2 * g], &self.tensors[2 * g + 1], joined)
            .into_iter()
            .map(act)
            .collect()
    }

    /// Target prediction. `margins` collects |pre-activation| of every ReLU.
    pub fn predict(&self, e: &EpisodeData, margins: &mut Vec<f64>) -> Dd {
        let h = self.hidden;
        let k = e.features.len();
        if k == 1 {
            return Dd::ZERO;
        }
        let mut cell = vec![Dd::ZERO; h];
        let mut hid = vec![Dd::ZERO; h];
        let mut zs = Vec::with_capacity(k);
        for x in &e.features {
            assert_eq!(x.len(), self.input_dim);
            let joined: Vec<Dd> = hid.iter().copied().chain(x.iter().map(|&v| Dd::new(v))).collect();
            let f = self.gate(0, &joined, Dd::sigmoid);
            let g = self.gate(1, &joined, Dd::tanh);
            let i = self.gate(2, &joined, Dd::sigmoid);
            let o = self.gate(3, &joined, Dd::sigmoid);
            for j in 0..h {
                cell[j] = cell[j] * f[j] + g[j] * i[j];
                hid[j] = o[j] * cell[j].tanh();
            }
            zs.push(hid.clone());
        }
        let layers = (self.tensors.len() - 8) / 2;
        let mut total = vec![Dd::ZERO; h + 1];
        for (z, &y) in zs.iter().zip(&e.labels).take(k - 1) {
            let mut v: Vec<Dd> = z.iter().copied().chain(std::iter::once(Dd::new(y))).collect();
            for l in 0..layers {
                let pre = affine(&self.tensors[8 + 2 * l], &self.tensors[9 + 2 * l], &v);
                margins.extend(pre.iter().map(|p| p.to_f64().abs()));
                v = pre.into_iter().map(Dd::relu).collect();
            }
            for (t, x) in total.iter_mut().zip(v) {
                *t = *t + x;
            }
        }
        let target = &zs[k - 1];
        (0..h).fold(total[h], |acc, j| acc + total[j] * target[j])
    }

    pub fn batch_loss(&self, batch: &[EpisodeData], margins: &mut Vec<f64>) -> Dd {
        let sum = batch.iter().fold(Dd::ZERO, |acc, e| {
            let r = Dd::new(*e.labels.last().unwrap()) - self.predict(e, margins);
            acc + r * r
        });
        sum / Dd::new(batch.len() as f64)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar LSTM step with hidden and input size 1. Each gate is
/// `(w_hidden, w_input, bias)`.
pub fn scalar_lstm_step(
    gates: [(f64, f64, f64); 4],
    cell: f64,
    hidden: f64,
    x: f64,
) -> (f64, f64) {
    let pre = |(wh, wx, b): (f64, f64, f64)| wh * hidden + wx * x + b;
    let f = sigmoid(pre(gates[0]));
    let g = pre(gates[1]).tanh();
    let i = sigmoid(pre(gates[2]));
    let o = sigmoid(pre(gates[3]));
    let c = f * cell + i * g;
    (c, o * c.tanh())
}
