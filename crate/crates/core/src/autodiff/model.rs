use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseSpec {
    pub width: usize,
    pub activation: Activation,
}

/// Shape of the LSTM-attention-MLP regressor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Features per time step (F).
    pub input_size: usize,
    /// Time steps per window (T).
    pub seq_len: usize,
    /// LSTM hidden size (H).
    pub hidden: usize,
    /// Dense head, the last layer must have width 1.
    pub head: Vec<DenseSpec>,
}

impl Architecture {
    /// Tanh hidden layers of the given widths followed by a linear scalar output.
    pub fn new(input_size: usize, seq_len: usize, hidden: usize, head_widths: &[usize]) -> Result<Self> {
        let mut head: Vec<DenseSpec> = head_widths
            .iter()
            .map(|&width| DenseSpec {
                width,
                activation: Activation::Tanh,
            })
            .collect();
        head.push(DenseSpec {
            width: 1,
            activation: Activation::Identity,
        });
        let arch = Self {
            input_size,
            seq_len,
            hidden,
            head,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Default head: one tanh layer of width H, then the scalar output.
    pub fn with_default_head(input_size: usize, seq_len: usize, hidden: usize) -> Result<Self> {
        Self::new(input_size, seq_len, hidden, &[hidden])
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.seq_len == 0 || self.hidden == 0 {
            return Err(Error::Argument(format!(
                "architecture sizes must be positive (F={}, T={}, H={})",
                self.input_size, self.seq_len, self.hidden
            )));
        }
        match self.head.last() {
            Some(last) if last.width == 1 => {}
            _ => return Err(Error::Argument("dense head must end in a width-1 layer".into())),
        }
        if self.head.iter().any(|d| d.width == 0) {
            return Err(Error::Argument("dense head widths must be positive".into()));
        }
        Ok(())
    }

    fn lstm_len(&self) -> usize {
        let (f, h) = (self.input_size, self.hidden);
        4 * (f * h + h * h + h) + 3 * h
    }

    pub fn param_count(&self) -> usize {
        let mut n = self.lstm_len() + self.hidden + 1;
        let mut inputs = self.hidden;
        for d in &self.head {
            n += inputs * d.width + d.width;
            inputs = d.width;
        }
        n
    }

    pub fn window_len(&self) -> usize {
        self.seq_len * self.input_size
    }
}

/// LSTM cell with diagonal peephole connections. Input matrices are stored
/// `F×H`, recurrent matrices `H×H`, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub input_size: usize,
    pub hidden: usize,
    pub w_xi: Vec<f64>,
    pub w_hi: Vec<f64>,
    pub w_ci: Vec<f64>,
    pub b_i: Vec<f64>,
    pub w_xf: Vec<f64>,
    pub w_hf: Vec<f64>,
    pub w_cf: Vec<f64>,
    pub b_f: Vec<f64>,
    pub w_xc: Vec<f64>,
    pub w_hc: Vec<f64>,
    pub b_c: Vec<f64>,
    pub w_xo: Vec<f64>,
    pub w_ho: Vec<f64>,
    pub w_co: Vec<f64>,
    pub b_o: Vec<f64>,
}

/// One score per time step from `W_att · h_t + b_att`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    pub w_att: Vec<f64>,
    pub b_att: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// `inputs × outputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Structured view of a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParts {
    pub cell: LstmCell,
    pub attention: AttentionHead,
    pub head: Vec<DenseLayer>,
}

/// Offsets into the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct GateOffsets {
    wx: usize,
    wh: usize,
    peep: Option<usize>,
    b: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    gates: [GateOffsets; 4],
    w_att: usize,
    b_att: usize,
    dense: Vec<(usize, usize, usize, usize)>, // (w offset, b offset, inputs, outputs)
}

impl Layout {
    fn of(arch: &Architecture) -> Self {
        let (f, h) = (arch.input_size, arch.hidden);
        let mut at = 0;
        let mut gate = |peephole: bool| {
            let wx = at;
            at += f * h;
            let wh = at;
            at += h * h;
            let peep = if peephole {
                let p = at;
                at += h;
                Some(p)
            } else {
                None
            };
            let b = at;
            at += h;
            GateOffsets { wx, wh, peep, b }
        };
        // input, forget, candidate, output
        let gates = [gate(true), gate(true), gate(false), gate(true)];
        let w_att = at;
        at += h;
        let b_att = at;
        at += 1;
        let mut dense = Vec::with_capacity(arch.head.len());
        let mut inputs = h;
        for d in &arch.head {
            let w = at;
            at += inputs * d.width;
            let b = at;
            at += d.width;
            dense.push((w, b, inputs, d.width));
            inputs = d.width;
        }
        debug_assert_eq!(at, arch.param_count());
        Self {
            gates,
            w_att,
            b_att,
            dense,
        }
    }
}

/// The LSTM-attention-MLP regressor: architecture plus flat parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveModel {
    arch: Architecture,
    params: Vec<f64>,
}

/// Recorded forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub predictions: Vec<f64>,
    pub graph: Graph,
    output: Option<NodeId>,
    attention: Option<NodeId>,
}

impl Forward {
    /// Appends the mean squared error against `labels` and returns its node.
    pub fn loss(&mut self, labels: &[f64]) -> Result<NodeId> {
        let output = self
            .output
            .ok_or_else(|| Error::Argument("loss over an empty batch".into()))?;
        self.graph.mse(output, labels)
    }

    pub fn output(&self) -> Option<NodeId> {
        self.output
    }

    /// `[B×T]` attention weights, one row per window.
    pub fn attention_weights(&self) -> Option<&Tensor> {
        self.attention.map(|id| self.graph.value(id))
    }
}

/// `(1/k) Σ (ŷ − y)²`.
pub fn mse_loss(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} predictions but {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Argument("mse over zero samples".into()));
    }
    let sum: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(p, y)| (p - y) * (p - y))
        .sum();
    Ok(sum / labels.len() as f64)
}

impl PredictiveModel {
    /// Uniform `[-1/√fan_in, 1/√fan_in]` initialization; forget-gate bias 1.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::of(&arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; arch.param_count()];
        let lstm_bound = 1.0 / ((arch.input_size + arch.hidden) as f64).sqrt();
        let lstm_len = arch.lstm_len();
        for p in &mut params[..lstm_len] {
            *p = rng.random_range(-lstm_bound..lstm_bound);
        }
        let forget_b = layout.gates[1].b;
        params[forget_b..forget_b + arch.hidden].fill(1.0);
        let att_bound = 1.0 / (arch.hidden as f64).sqrt();
        for p in &mut params[layout.w_att..=layout.b_att] {
            *p = rng.random_range(-att_bound..att_bound);
        }
        for &(w, _, inputs, outputs) in &layout.dense {
            let bound = 1.0 / (inputs as f64).sqrt();
            for p in &mut params[w..w + inputs * outputs + outputs] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(Self { arch, params })
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::Dimension {
                axis: "parameter vector",
                expected: arch.param_count(),
                actual: params.len(),
            });
        }
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Copy of this model carrying `params` instead.
    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        Self::from_params(self.arch.clone(), params)
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Dimension {
                axis: "parameter vector",
                expected: self.params.len(),
                actual: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn parts(&self) -> ModelParts {
        let layout = Layout::of(&self.arch);
        let p = &self.params;
        let (f, h) = (self.arch.input_size, self.arch.hidden);
        let slice = |at: usize, n: usize| p[at..at + n].to_vec();
        let g = &layout.gates;
        let cell = LstmCell {
            input_size: f,
            hidden: h,
            w_xi: slice(g[0].wx, f * h),
            w_hi: slice(g[0].wh, h * h),
            w_ci: slice(g[0].peep.unwrap(), h),
            b_i: slice(g[0].b, h),
            w_xf: slice(g[1].wx, f * h),
            w_hf: slice(g[1].wh, h * h),
            w_cf: slice(g[1].peep.unwrap(), h),
            b_f: slice(g[1].b, h),
            w_xc: slice(g[2].wx, f * h),
            w_hc: slice(g[2].wh, h * h),
            b_c: slice(g[2].b, h),
            w_xo: slice(g[3].wx, f * h),
            w_ho: slice(g[3].wh, h * h),
            w_co: slice(g[3].peep.unwrap(), h),
            b_o: slice(g[3].b, h),
        };
        let attention = AttentionHead {
            w_att: slice(layout.w_att, h),
            b_att: p[layout.b_att],
        };
        let head = layout
            .dense
            .iter()
            .zip(&self.arch.head)
            .map(|(&(w, b, inputs, outputs), spec)| DenseLayer {
                inputs,
                outputs,
                weights: slice(w, inputs * outputs),
                bias: slice(b, outputs),
                activation: spec.activation,
            })
            .collect();
        ModelParts {
            cell,
            attention,
            head,
        }
    }

    pub fn from_parts(arch: Architecture, parts: &ModelParts) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::of(&arch);
        let (f, h) = (arch.input_size, arch.hidden);
        let mut params = vec![0.0; arch.param_count()];
        let mut put = |at: usize, src: &[f64], n: usize, what: &'static str| -> Result<()> {
            if src.len() != n {
                return Err(Error::Dimension {
                    axis: what,
                    expected: n,
                    actual: src.len(),
                });
            }
            params[at..at + n].copy_from_slice(src);
            Ok(())
        };
        let c = &parts.cell;
        let g = &layout.gates;
        put(g[0].wx, &c.w_xi, f * h, "W_xi")?;
        put(g[0].wh, &c.w_hi, h * h, "W_hi")?;
        put(g[0].peep.unwrap(), &c.w_ci, h, "W_ci")?;
        put(g[0].b, &c.b_i, h, "b_i")?;
        put(g[1].wx, &c.w_xf, f * h, "W_xf")?;
        put(g[1].wh, &c.w_hf, h * h, "W_hf")?;
        put(g[1].peep.unwrap(), &c.w_cf, h, "W_cf")?;
        put(g[1].b, &c.b_f, h, "b_f")?;
        put(g[2].wx, &c.w_xc, f * h, "W_xc")?;
        put(g[2].wh, &c.w_hc, h * h, "W_hc")?;
        put(g[2].b, &c.b_c, h, "b_c")?;
        put(g[3].wx, &c.w_xo, f * h, "W_xo")?;
        put(g[3].wh, &c.w_ho, h * h, "W_ho")?;
        put(g[3].peep.unwrap(), &c.w_co, h, "W_co")?;
        put(g[3].b, &c.b_o, h, "b_o")?;
        put(layout.w_att, &parts.attention.w_att, h, "W_att")?;
        put(layout.b_att, &[parts.attention.b_att], 1, "b_att")?;
        if parts.head.len() != layout.dense.len() {
            return Err(Error::Dimension {
                axis: "dense layers",
                expected: layout.dense.len(),
                actual: parts.head.len(),
            });
        }
        for (&(w, b, inputs, outputs), layer) in layout.dense.iter().zip(&parts.head) {
            put(w, &layer.weights, inputs * outputs, "dense weights")?;
            put(b, &layer.bias, outputs, "dense bias")?;
        }
        Self::from_params(arch, params)
    }

    fn check_windows(&self, windows: &[&[f64]]) -> Result<()> {
        let expected = self.arch.window_len();
        for w in windows {
            if w.len() != expected {
                return Err(Error::Dimension {
                    axis: "window length (T×F)",
                    expected,
                    actual: w.len(),
                });
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input("non-finite feature value in window".into()));
            }
        }
        Ok(())
    }

    /// Records the full forward computation for a batch of `T×F` windows.
    pub fn forward(&self, windows: &[&[f64]]) -> Result<Forward> {
        self.check_windows(windows)?;
        let mut graph = Graph::new(self.params.len());
        if windows.is_empty() {
            return Ok(Forward {
                predictions: Vec::new(),
                graph,
                output: None,
                attention: None,
            });
        }
        let arch = &self.arch;
        let (f, h, steps, batch) = (arch.input_size, arch.hidden, arch.seq_len, windows.len());
        let layout = Layout::of(arch);
        let p = &self.params;
        let g = &mut graph;

        struct Gate {
            wx: NodeId,
            wh: NodeId,
            peep: Option<NodeId>,
            b: NodeId,
        }
        let gates: Vec<Gate> = layout
            .gates
            .iter()
            .map(|o| Gate {
                wx: g.param(p, o.wx, f, h),
                wh: g.param(p, o.wh, h, h),
                peep: o.peep.map(|at| g.param(p, at, 1, h)),
                b: g.param(p, o.b, 1, h),
            })
            .collect();
        let w_att = g.param(p, layout.w_att, h, 1);
        let b_att = g.param(p, layout.b_att, 1, 1);

        let pre = |g: &mut Graph, gate: &Gate, x: NodeId, hprev: NodeId| {
            let xw = g.matmul(x, gate.wx);
            let hw = g.matmul(hprev, gate.wh);
            let s = g.add(xw, hw);
            (s, gate.b)
        };

        let mut hidden = g.input(Tensor::zeros(batch, h));
        let mut cell = g.input(Tensor::zeros(batch, h));
        let mut hs = Vec::with_capacity(steps);
        let mut scores = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut xt = Vec::with_capacity(batch * f);
            for w in windows {
                xt.extend_from_slice(&w[t * f..(t + 1) * f]);
            }
            let x = g.input(Tensor::matrix(batch, f, xt));

            let (s, b) = pre(g, &gates[0], x, hidden);
            let pc = g.mul_row(cell, gates[0].peep.unwrap());
            let s = g.add(s, pc);
            let s = g.add_row(s, b);
            let input_gate = g.sigmoid(s);

            let (s, b) = pre(g, &gates[1], x, hidden);
            let pc = g.mul_row(cell, gates[1].peep.unwrap());
            let s = g.add(s, pc);
            let s = g.add_row(s, b);
            let forget_gate = g.sigmoid(s);

            let (s, b) = pre(g, &gates[2], x, hidden);
            let s = g.add_row(s, b);
            let candidate = g.tanh(s);

            let kept = g.mul(forget_gate, cell);
            let written = g.mul(input_gate, candidate);
            let new_cell = g.add(kept, written);

            let (s, b) = pre(g, &gates[3], x, hidden);
            let pc = g.mul_row(new_cell, gates[3].peep.unwrap());
            let s = g.add(s, pc);
            let s = g.add_row(s, b);
            let output_gate = g.sigmoid(s);

            let squashed = g.tanh(new_cell);
            hidden = g.mul(output_gate, squashed);
            cell = new_cell;
            hs.push(hidden);

            let score = g.matmul(hidden, w_att);
            scores.push(g.add_row(score, b_att));
        }

        let scores = g.concat(&scores);
        let alpha = g.softmax_rows(scores);
        let mut context = None;
        for (t, &ht) in hs.iter().enumerate() {
            let a = g.column(alpha, t);
            let weighted = g.mul_col(ht, a);
            context = Some(match context {
                None => weighted,
                Some(acc) => g.add(acc, weighted),
            });
        }
        let mut act = context.expect("seq_len > 0");
        for (&(w, b, inputs, outputs), spec) in layout.dense.iter().zip(&arch.head) {
            let wn = g.param(p, w, inputs, outputs);
            let bn = g.param(p, b, 1, outputs);
            let z = g.matmul(act, wn);
            let z = g.add_row(z, bn);
            act = match spec.activation {
                Activation::Tanh => g.tanh(z),
                Activation::Identity => z,
            };
        }
        let predictions = g.value(act).data().to_vec();
        if predictions.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: 0,
                detail: "non-finite prediction".into(),
            });
        }
        Ok(Forward {
            predictions,
            graph,
            output: Some(act),
            attention: Some(alpha),
        })
    }

    pub fn predict(&self, windows: &[&[f64]]) -> Result<Vec<f64>> {
        Ok(self.forward(windows)?.predictions)
    }

    /// Mean squared error over the batch and its gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, windows: &[&[f64]], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut fwd = self.forward(windows)?;
        let loss = fwd.loss(labels)?;
        let value = fwd.graph.value(loss).data()[0];
        let grad = fwd.graph.backward(loss)?;
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: 0,
                detail: "non-finite gradient".into(),
            });
        }
        Ok((value, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn windows(arch: &Architecture, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..arch.window_len()).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    fn refs(ws: &[Vec<f64>]) -> Vec<&[f64]> {
        ws.iter().map(|w| w.as_slice()).collect()
    }

    #[test]
    fn param_count_matches_layout() {
        let arch = Architecture::with_default_head(3, 5, 4).unwrap();
        // 4 gates × (3·4 + 4·4 + 4) + 3 peepholes × 4 + attention 5 + dense (16 + 4) + (4 + 1)
        assert_eq!(arch.param_count(), 4 * 32 + 12 + 5 + 20 + 5);
    }

    #[test]
    fn zero_parameters_predict_output_bias() {
        let arch = Architecture::with_default_head(3, 5, 4).unwrap();
        let mut params = vec![0.0; arch.param_count()];
        let last = params.len() - 1;
        params[last] = 0.75;
        let model = PredictiveModel::from_params(arch.clone(), params).unwrap();
        let ws = windows(&arch, 4, 1);
        let fwd = model.forward(&refs(&ws)).unwrap();
        assert_eq!(fwd.predictions, vec![0.75; 4]);
    }

    #[test]
    fn zero_attention_is_uniform() {
        let arch = Architecture::with_default_head(2, 6, 3).unwrap();
        let mut model = PredictiveModel::init(arch.clone(), 7).unwrap();
        let layout = Layout::of(&arch);
        model.params_mut()[layout.w_att..=layout.b_att].fill(0.0);
        let ws = windows(&arch, 3, 2);
        let fwd = model.forward(&refs(&ws)).unwrap();
        for &a in fwd.attention_weights().unwrap().data() {
            assert!((a - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_batch_gives_empty_graph() {
        let arch = Architecture::with_default_head(2, 3, 2).unwrap();
        let model = PredictiveModel::init(arch, 0).unwrap();
        let fwd = model.forward(&[]).unwrap();
        assert!(fwd.predictions.is_empty());
        assert!(fwd.graph.is_empty());
    }

    #[test]
    fn rejects_wrong_window_shape_and_nan() {
        let arch = Architecture::with_default_head(2, 3, 2).unwrap();
        let model = PredictiveModel::init(arch, 0).unwrap();
        let short = vec![0.0; 5];
        match model.forward(&[&short]) {
            Err(Error::Dimension { axis, expected, actual }) => {
                assert!(axis.contains("window"));
                assert_eq!((expected, actual), (6, 5));
            }
            other => panic!("unexpected {other:?}"),
        }
        let bad = vec![0.0, 1.0, f64::NAN, 0.0, 0.0, 0.0];
        assert!(matches!(model.forward(&[&bad]), Err(Error::Input(_))));
    }

    #[test]
    fn forget_bias_initialized_to_one() {
        let arch = Architecture::with_default_head(3, 4, 5).unwrap();
        let model = PredictiveModel::init(arch, 3).unwrap();
        assert_eq!(model.parts().cell.b_f, vec![1.0; 5]);
    }

    #[test]
    fn parts_round_trip() {
        let arch = Architecture::new(4, 3, 5, &[6, 3]).unwrap();
        let model = PredictiveModel::init(arch.clone(), 11).unwrap();
        let back = PredictiveModel::from_parts(arch, &model.parts()).unwrap();
        assert_eq!(back.params(), model.params());
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 5.0);
        assert_eq!(mse_loss(&[2.0], &[0.0]).unwrap(), 4.0);
        assert!(mse_loss(&[], &[]).is_err());
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }
}
