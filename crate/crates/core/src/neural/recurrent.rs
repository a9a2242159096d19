use serde::{Deserialize, Serialize};

use super::tensor::{affine, matvec_add, matvec_t_add, outer_add, Standardizer, Tensor};
use super::train::Trainable;
use super::{INIT_BIAS, INIT_STD};
use crate::error::{Error, Result};
use crate::featurize::LabelTransform;

/// Which timesteps carry a training target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeqMode {
    /// Every prefix is labeled; the loss averages over timesteps.
    ManyToMany,
    /// Only the full sequence is labeled.
    ManyToOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecurrentArch {
    pub width: usize,
    pub depth: usize,
    pub mode: SeqMode,
}

impl RecurrentArch {
    pub fn new(width: usize, depth: usize) -> Self {
        RecurrentArch { width, depth, mode: SeqMode::ManyToMany }
    }
}

/// Raw step features and per-prefix selectivities. Under
/// [`SeqMode::ManyToOne`] only the last selectivity is used.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqSample {
    pub xs: Vec<Vec<f64>>,
    pub selectivities: Vec<f64>,
}

/// Raw step features with per-step targets in transformed label space.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqExample {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
}

/// Stacked tanh cells. Layer `l` owns `[W_x, W_h, b]` at `3l..3l+3`; the
/// readout `[W_r, b_r]` comes last. Layers above the first add their input
/// to their output.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentNet {
    pub input_width: usize,
    pub hidden_width: usize,
    pub depth: usize,
    pub mode: SeqMode,
    pub params: Vec<Tensor>,
    pub input_standardizer: Option<Standardizer>,
    pub label_transform: Option<LabelTransform>,
    pub init_seed: u64,
}

struct Trace {
    /// `inputs[l][t]`: what layer `l` sees at step `t`.
    inputs: Vec<Vec<Vec<f64>>>,
    states: Vec<Vec<Vec<f64>>>,
    /// Top-layer outputs per step.
    top: Vec<Vec<f64>>,
    outputs: Vec<f64>,
}

impl RecurrentNet {
    pub fn init(arch: RecurrentArch, input_width: usize, seed: u64) -> Result<Self> {
        if arch.width == 0 || arch.depth == 0 || input_width == 0 {
            return Err(Error::InvalidArgument("network widths and depth must be at least 1".into()));
        }
        let mut rng = crate::seed::rng(seed);
        let h = arch.width;
        let mut params = Vec::with_capacity(3 * arch.depth + 2);
        for l in 0..arch.depth {
            let fan_in = if l == 0 { input_width } else { h };
            params.push(Tensor::normal(&[h, fan_in], INIT_STD, &mut rng));
            params.push(Tensor::normal(&[h, h], INIT_STD, &mut rng));
            params.push(Tensor::filled(&[h], INIT_BIAS));
        }
        params.push(Tensor::normal(&[1, h], INIT_STD, &mut rng));
        params.push(Tensor::filled(&[1], INIT_BIAS));
        Ok(RecurrentNet {
            input_width,
            hidden_width: h,
            depth: arch.depth,
            mode: arch.mode,
            params,
            input_standardizer: None,
            label_transform: None,
            init_seed: seed,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn check_sequence(&self, xs: &[Vec<f64>]) -> Result<()> {
        if xs.is_empty() {
            return Err(Error::InvalidArgument("empty input sequence".into()));
        }
        for x in xs {
            if x.len() != self.input_width {
                return Err(Error::ShapeMismatch {
                    expected: self.input_width,
                    got: x.len(),
                });
            }
        }
        Ok(())
    }

    fn trace(&self, xs: &[Vec<f64>]) -> Trace {
        let h = self.hidden_width;
        let steps = xs.len();
        let mut layer_in: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| {
                let mut v = Vec::with_capacity(x.len());
                match &self.input_standardizer {
                    Some(s) => s.apply_into(x, &mut v),
                    None => v.extend_from_slice(x),
                }
                v
            })
            .collect();
        let mut inputs = Vec::with_capacity(self.depth);
        let mut states = Vec::with_capacity(self.depth);
        for l in 0..self.depth {
            let (wx, wh, b) = (&self.params[3 * l].data, &self.params[3 * l + 1].data, &self.params[3 * l + 2].data);
            let mut s_seq: Vec<Vec<f64>> = Vec::with_capacity(steps);
            let mut out_seq = Vec::with_capacity(steps);
            for t in 0..steps {
                let mut z = vec![0.0; h];
                affine(wx, b, &layer_in[t], &mut z);
                if t > 0 {
                    matvec_add(wh, &s_seq[t - 1], &mut z);
                }
                let s: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
                let out = if l > 0 {
                    s.iter().zip(&layer_in[t]).map(|(a, b)| a + b).collect()
                } else {
                    s.clone()
                };
                s_seq.push(s);
                out_seq.push(out);
            }
            inputs.push(std::mem::replace(&mut layer_in, out_seq));
            states.push(s_seq);
        }
        let (wr, br) = (&self.params[3 * self.depth].data, &self.params[3 * self.depth + 1].data);
        let outputs = layer_in
            .iter()
            .map(|o| {
                let mut y = [0.0];
                affine(wr, br, o, &mut y);
                y[0]
            })
            .collect();
        Trace { inputs, states, top: layer_in, outputs }
    }

    /// Per-step predictions in transformed label space and per-step top-layer
    /// hidden outputs.
    pub fn forward(&self, xs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        self.check_sequence(xs)?;
        let t = self.trace(xs);
        Ok((t.outputs, t.top))
    }

    /// Prediction for the whole sequence: the last step's output.
    pub fn predict(&self, xs: &[Vec<f64>]) -> Result<f64> {
        Ok(*self.forward(xs)?.0.last().expect("nonempty"))
    }

    pub fn predict_selectivity(&self, xs: &[Vec<f64>]) -> Result<f64> {
        let t = self.label_transform.as_ref().ok_or(Error::Untrained)?;
        if self.input_standardizer.is_none() {
            return Err(Error::Untrained);
        }
        Ok(t.invert(self.predict(xs)?))
    }

    /// Final-step hidden output per input sequence.
    pub fn extract_latents(&self, inputs: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
        inputs
            .iter()
            .map(|xs| Ok(self.forward(xs)?.1.pop().expect("nonempty")))
            .collect()
    }

    /// Per-step loss weights: `1/T` on every step, or `1` on the last.
    fn step_weights(&self, steps: usize) -> Vec<f64> {
        match self.mode {
            SeqMode::ManyToMany => vec![1.0 / steps as f64; steps],
            SeqMode::ManyToOne => {
                let mut w = vec![0.0; steps];
                w[steps - 1] = 1.0;
                w
            }
        }
    }

    fn sequence_loss(&self, outputs: &[f64], ex: &SeqExample) -> f64 {
        self.step_weights(outputs.len())
            .iter()
            .zip(outputs)
            .zip(&ex.ys)
            .filter(|((w, _), _)| **w != 0.0)
            .map(|((w, o), y)| w * (o - y).powi(2))
            .sum()
    }

    /// Backpropagation through time for one sequence.
    fn backprop(&self, ex: &SeqExample, scale: f64, grads: &mut [Tensor]) -> f64 {
        let tr = self.trace(&ex.xs);
        let steps = ex.xs.len();
        let h = self.hidden_width;
        let weights = self.step_weights(steps);
        let top = 3 * self.depth;
        let mut d_out: Vec<Vec<f64>> = vec![vec![0.0; h]; steps];
        for t in 0..steps {
            if weights[t] == 0.0 {
                continue;
            }
            let dy = 2.0 * weights[t] * scale * (tr.outputs[t] - ex.ys[t]);
            outer_add(&mut grads[top].data, &[dy], &tr.top[t]);
            grads[top + 1].data[0] += dy;
            for (d, w) in d_out[t].iter_mut().zip(&self.params[top].data) {
                *d = w * dy;
            }
        }
        for l in (0..self.depth).rev() {
            let (wx, wh) = (&self.params[3 * l].data, &self.params[3 * l + 1].data);
            let in_width = tr.inputs[l][0].len();
            let mut d_in = if l > 0 { vec![vec![0.0; in_width]; steps] } else { Vec::new() };
            let mut carry = vec![0.0; h];
            for t in (0..steps).rev() {
                let s = &tr.states[l][t];
                let dpre: Vec<f64> = d_out[t]
                    .iter()
                    .zip(&carry)
                    .zip(s)
                    .map(|((d, c), s)| (d + c) * (1.0 - s * s))
                    .collect();
                outer_add(&mut grads[3 * l].data, &dpre, &tr.inputs[l][t]);
                if t > 0 {
                    outer_add(&mut grads[3 * l + 1].data, &dpre, &tr.states[l][t - 1]);
                }
                for (g, d) in grads[3 * l + 2].data.iter_mut().zip(&dpre) {
                    *g += d;
                }
                carry.iter_mut().for_each(|c| *c = 0.0);
                matvec_t_add(wh, &dpre, &mut carry);
                if l > 0 {
                    d_in[t].copy_from_slice(&d_out[t]);
                    matvec_t_add(wx, &dpre, &mut d_in[t]);
                }
            }
            d_out = d_in;
        }
        self.sequence_loss(&tr.outputs, ex)
    }
}

impl Trainable for RecurrentNet {
    type Sample = SeqSample;
    type Example = SeqExample;

    fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    fn is_weight(&self, index: usize) -> bool {
        let top = 3 * self.depth;
        if index >= top {
            index == top
        } else {
            index % 3 != 2
        }
    }

    fn fit_standardizers(&mut self, train: &[SeqSample]) -> Result<()> {
        if self.input_standardizer.is_none() {
            let rows = train.iter().flat_map(|s| s.xs.iter().map(Vec::as_slice));
            self.input_standardizer = Some(Standardizer::fit(rows, self.input_width)?);
        }
        if self.label_transform.is_none() {
            let sels: Vec<f64> = match self.mode {
                SeqMode::ManyToMany => train.iter().flat_map(|s| s.selectivities.iter().copied()).collect(),
                SeqMode::ManyToOne => train.iter().filter_map(|s| s.selectivities.last().copied()).collect(),
            };
            self.label_transform = Some(LabelTransform::fit(&sels)?);
        }
        Ok(())
    }

    fn to_example(&self, s: &SeqSample) -> Result<SeqExample> {
        let t = self.label_transform.as_ref().ok_or(Error::Untrained)?;
        let ex = SeqExample {
            xs: s.xs.clone(),
            ys: s.selectivities.iter().map(|&v| t.apply(v)).collect(),
        };
        self.check_example(&ex)?;
        Ok(ex)
    }

    fn check_example(&self, ex: &SeqExample) -> Result<()> {
        self.check_sequence(&ex.xs)?;
        let needed = match self.mode {
            SeqMode::ManyToMany => ex.xs.len(),
            SeqMode::ManyToOne => 1,
        };
        if ex.ys.len() != ex.xs.len() && !(self.mode == SeqMode::ManyToOne && ex.ys.len() >= needed) {
            return Err(Error::ShapeMismatch {
                expected: ex.xs.len(),
                got: ex.ys.len(),
            });
        }
        Ok(())
    }

    fn loss_and_gradients(&self, batch: &[&SeqExample]) -> (f64, Vec<Tensor>) {
        let mut grads = Tensor::zeros_like(&self.params);
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for ex in batch {
            loss += self.backprop(&self.aligned(ex), scale, &mut grads);
        }
        (loss * scale, grads)
    }

    fn example_loss(&self, ex: &SeqExample) -> f64 {
        let ex = self.aligned(ex);
        self.sequence_loss(&self.trace(&ex.xs).outputs, &ex)
    }
}

impl RecurrentNet {
    /// Many-to-one examples may carry only the final target; pad so that
    /// targets line up with steps.
    fn aligned<'a>(&self, ex: &'a SeqExample) -> std::borrow::Cow<'a, SeqExample> {
        if ex.ys.len() == ex.xs.len() {
            std::borrow::Cow::Borrowed(ex)
        } else {
            let mut ys = vec![0.0; ex.xs.len()];
            ys[ex.xs.len() - 1] = *ex.ys.last().expect("checked");
            std::borrow::Cow::Owned(SeqExample { xs: ex.xs.clone(), ys })
        }
    }
}
