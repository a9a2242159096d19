use serde::{Deserialize, Serialize};

use super::tensor::{affine, matvec_t_add, outer_add, Standardizer, Tensor};
use super::train::Trainable;
use super::{INIT_BIAS, INIT_STD};
use crate::error::{Error, Result};
use crate::featurize::LabelTransform;

/// Negative-side slope of the hidden activation.
pub const LEAKY_SLOPE: f64 = 0.01;

fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

fn leaky_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseArch {
    pub width: usize,
    pub depth: usize,
    pub residual: bool,
}

impl DenseArch {
    pub fn new(width: usize, depth: usize) -> Self {
        DenseArch { width, depth, residual: true }
    }
}

/// Raw training pair: unstandardized features and a selectivity.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSample {
    pub x: Vec<f64>,
    pub selectivity: f64,
}

/// Raw features with a target already in transformed label space.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseExample {
    pub x: Vec<f64>,
    pub y: f64,
}

/// Parameters are laid out `[W_0, b_0, …, W_{L-1}, b_{L-1}, W_out, b_out]`
/// with `W_i: [out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    pub input_width: usize,
    pub hidden_widths: Vec<usize>,
    pub residual: bool,
    pub params: Vec<Tensor>,
    pub input_standardizer: Option<Standardizer>,
    pub label_transform: Option<LabelTransform>,
    pub init_seed: u64,
}

/// Activations kept for the backward pass.
struct Trace {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    output: f64,
}

impl DenseNet {
    pub fn init(arch: DenseArch, input_width: usize, seed: u64) -> Result<Self> {
        if arch.width == 0 || arch.depth == 0 || input_width == 0 {
            return Err(Error::InvalidArgument("network widths and depth must be at least 1".into()));
        }
        let mut rng = crate::seed::rng(seed);
        let hidden_widths = vec![arch.width; arch.depth];
        let mut params = Vec::with_capacity(2 * arch.depth + 2);
        let mut fan_in = input_width;
        for &w in &hidden_widths {
            params.push(Tensor::normal(&[w, fan_in], INIT_STD, &mut rng));
            params.push(Tensor::filled(&[w], INIT_BIAS));
            fan_in = w;
        }
        params.push(Tensor::normal(&[1, fan_in], INIT_STD, &mut rng));
        params.push(Tensor::filled(&[1], INIT_BIAS));
        Ok(DenseNet {
            input_width,
            hidden_widths,
            residual: arch.residual,
            params,
            input_standardizer: None,
            label_transform: None,
            init_seed: seed,
        })
    }

    pub fn depth(&self) -> usize {
        self.hidden_widths.len()
    }

    fn skips(&self, layer: usize) -> bool {
        self.residual && layer > 0 && self.hidden_widths[layer] == self.hidden_widths[layer - 1]
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn check_width(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_width {
            return Err(Error::ShapeMismatch {
                expected: self.input_width,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut input = Vec::with_capacity(x.len());
        match &self.input_standardizer {
            Some(s) => s.apply_into(x, &mut input),
            None => input.extend_from_slice(x),
        }
        let depth = self.depth();
        let mut pre = Vec::with_capacity(depth);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(depth);
        for l in 0..depth {
            let a = if l == 0 { &input } else { &post[l - 1] };
            let mut z = vec![0.0; self.hidden_widths[l]];
            affine(&self.params[2 * l].data, &self.params[2 * l + 1].data, a, &mut z);
            let mut h: Vec<f64> = z.iter().map(|&v| leaky(v)).collect();
            if self.skips(l) {
                for (hv, av) in h.iter_mut().zip(a) {
                    *hv += av;
                }
            }
            pre.push(z);
            post.push(h);
        }
        let last = post.last().expect("depth ≥ 1");
        let mut out = [0.0];
        affine(&self.params[2 * depth].data, &self.params[2 * depth + 1].data, last, &mut out);
        Trace { input, pre, post, output: out[0] }
    }

    /// Prediction in transformed label space and the last hidden layer.
    pub fn forward(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_width(x)?;
        let mut t = self.trace(x);
        Ok((t.output, t.post.pop().expect("depth ≥ 1")))
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward(x)?.0)
    }

    /// Predicted selectivity after inverting the label transform.
    pub fn predict_selectivity(&self, x: &[f64]) -> Result<f64> {
        let t = self.label_transform.as_ref().ok_or(Error::Untrained)?;
        if self.input_standardizer.is_none() {
            return Err(Error::Untrained);
        }
        Ok(t.invert(self.predict(x)?))
    }

    pub fn extract_latents(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        inputs.iter().map(|x| Ok(self.forward(x)?.1)).collect()
    }

    /// Accumulates `scale · ∂(ŷ − y)²/∂θ` into `grads`; returns the squared error.
    fn backprop(&self, ex: &DenseExample, scale: f64, grads: &mut [Tensor]) -> f64 {
        let t = self.trace(&ex.x);
        let depth = self.depth();
        let diff = t.output - ex.y;
        let dy = 2.0 * diff * scale;
        outer_add(&mut grads[2 * depth].data, &[dy], &t.post[depth - 1]);
        grads[2 * depth + 1].data[0] += dy;
        let mut dh: Vec<f64> = self.params[2 * depth].data.iter().map(|w| w * dy).collect();
        for l in (0..depth).rev() {
            let dz: Vec<f64> = dh.iter().zip(&t.pre[l]).map(|(d, &z)| d * leaky_grad(z)).collect();
            let a = if l == 0 { &t.input } else { &t.post[l - 1] };
            outer_add(&mut grads[2 * l].data, &dz, a);
            for (g, d) in grads[2 * l + 1].data.iter_mut().zip(&dz) {
                *g += d;
            }
            if l > 0 {
                let mut da = if self.skips(l) { dh.clone() } else { vec![0.0; a.len()] };
                matvec_t_add(&self.params[2 * l].data, &dz, &mut da);
                dh = da;
            }
        }
        diff * diff
    }
}

impl Trainable for DenseNet {
    type Sample = DenseSample;
    type Example = DenseExample;

    fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    fn is_weight(&self, index: usize) -> bool {
        index % 2 == 0
    }

    fn fit_standardizers(&mut self, train: &[DenseSample]) -> Result<()> {
        if self.input_standardizer.is_none() {
            self.input_standardizer =
                Some(Standardizer::fit(train.iter().map(|s| s.x.as_slice()), self.input_width)?);
        }
        if self.label_transform.is_none() {
            let sels: Vec<f64> = train.iter().map(|s| s.selectivity).collect();
            self.label_transform = Some(LabelTransform::fit(&sels)?);
        }
        Ok(())
    }

    fn to_example(&self, s: &DenseSample) -> Result<DenseExample> {
        self.check_width(&s.x)?;
        let t = self.label_transform.as_ref().ok_or(Error::Untrained)?;
        Ok(DenseExample { x: s.x.clone(), y: t.apply(s.selectivity) })
    }

    fn check_example(&self, ex: &DenseExample) -> Result<()> {
        self.check_width(&ex.x)
    }

    fn loss_and_gradients(&self, batch: &[&DenseExample]) -> (f64, Vec<Tensor>) {
        let mut grads = Tensor::zeros_like(&self.params);
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for ex in batch {
            loss += self.backprop(ex, scale, &mut grads);
        }
        (loss * scale, grads)
    }

    fn example_loss(&self, ex: &DenseExample) -> f64 {
        (self.trace(&ex.x).output - ex.y).powi(2)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::neural::train::{gradients, mse};
    use proptest::prelude::*;

    #[test]
    fn init_contract() {
        let net = DenseNet::init(DenseArch::new(100, 1), 11, 7).unwrap();
        assert_eq!(net.parameter_count(), 11 * 100 + 100 + 100 + 1);
        for (i, p) in net.params.iter().enumerate() {
            if i % 2 == 1 {
                assert!(p.data.iter().all(|&b| b == 0.01));
            }
        }
        assert_eq!(net, DenseNet::init(DenseArch::new(100, 1), 11, 7).unwrap());
        assert_ne!(net.params[0], DenseNet::init(DenseArch::new(100, 1), 11, 8).unwrap().params[0]);
        let w = &net.params[0].data;
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        assert!(mean.abs() < 0.01 && (std - 0.05).abs() < 0.005, "{mean} {std}");
        assert!(DenseNet::init(DenseArch::new(0, 1), 11, 7).is_err());
        assert!(DenseNet::init(DenseArch::new(4, 0), 11, 7).is_err());
    }

    #[test]
    fn deeper_is_larger() {
        let a = DenseNet::init(DenseArch::new(50, 2), 11, 0).unwrap().parameter_count();
        let b = DenseNet::init(DenseArch::new(50, 4), 11, 0).unwrap().parameter_count();
        assert!(b > a);
    }

    #[test]
    fn activation() {
        assert_eq!(leaky(-2.0), -0.02);
        assert_eq!(leaky(3.0), 3.0);
    }

    #[test]
    fn width_mismatch_rejected() {
        let net = DenseNet::init(DenseArch::new(4, 1), 3, 0).unwrap();
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::ShapeMismatch { expected: 3, got: 2 })));
    }

    #[test]
    fn residual_layer_with_zero_parameters_is_identity() {
        let mut net = DenseNet::init(DenseArch::new(5, 2), 5, 3).unwrap();
        net.params[2] = Tensor::zeros(&[5, 5]);
        net.params[3] = Tensor::zeros(&[5]);
        let x = [0.3, 0.0, 1.2, 4.0, 0.7];
        let first = {
            let mut z = vec![0.0; 5];
            affine(&net.params[0].data, &net.params[1].data, &x, &mut z);
            z.into_iter().map(leaky).collect::<Vec<_>>()
        };
        let (_, latent) = net.forward(&x).unwrap();
        assert_eq!(latent, first);
    }

    #[test]
    fn zero_network_latents() {
        let mut net = DenseNet::init(DenseArch::new(6, 2), 4, 3).unwrap();
        for p in &mut net.params {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let l = net.extract_latents(&[vec![1.0, -2.0, 3.0, 0.5], vec![1.0, -2.0, 3.0, 0.5]]).unwrap();
        assert_eq!(l.len(), 2);
        assert!(l[0].iter().all(|&v| v == 0.0));
        assert_eq!(l[0], l[1]);
    }

    #[test]
    fn latent_shape() {
        let net = DenseNet::init(DenseArch::new(100, 1), 11, 1).unwrap();
        let inputs: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 / 50.0; 11]).collect();
        let l = net.extract_latents(&inputs).unwrap();
        assert_eq!((l.len(), l[0].len()), (50, 100));
    }

    #[test]
    fn perfect_predictions_have_zero_gradient() {
        let net = DenseNet::init(DenseArch::new(4, 2), 3, 9).unwrap();
        let batch: Vec<DenseExample> = [[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]]
            .iter()
            .map(|x| DenseExample { x: x.to_vec(), y: net.predict(x).unwrap() })
            .collect();
        let g = gradients(&net, &batch).unwrap();
        assert!(g.iter().all(|t| t.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn batch_gradient_is_mean_of_singles() {
        let net = DenseNet::init(DenseArch::new(4, 2), 3, 9).unwrap();
        let a = DenseExample { x: vec![0.1, 0.2, 0.3], y: 1.0 };
        let b = DenseExample { x: vec![1.0, -1.0, 0.5], y: -0.5 };
        let ga = gradients(&net, std::slice::from_ref(&a)).unwrap();
        let gb = gradients(&net, std::slice::from_ref(&b)).unwrap();
        let gab = gradients(&net, &[a, b]).unwrap();
        for ((x, y), z) in ga.iter().zip(&gb).zip(&gab) {
            for i in 0..x.len() {
                assert!((0.5 * (x.data[i] + y.data[i]) - z.data[i]).abs() < 1e-12);
            }
        }
    }

    pub(crate) fn finite_difference_check<N: Trainable>(net: &N, batch: &[N::Example]) {
        let analytic = gradients(net, batch).unwrap();
        let h = 1e-6;
        for (pi, t) in net.params().iter().enumerate() {
            for i in 0..t.len() {
                let mut plus = net.clone();
                plus.params_mut()[pi].data[i] += h;
                let mut minus = net.clone();
                minus.params_mut()[pi].data[i] -= h;
                let numeric = (mse(&plus, batch) - mse(&minus, batch)) / (2.0 * h);
                let a = analytic[pi].data[i];
                let err = (a - numeric).abs();
                assert!(
                    err <= 1e-8 || err <= 1e-4 * a.abs().max(numeric.abs()),
                    "param {pi}[{i}]: analytic {a} numeric {numeric}"
                );
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn gradients_match_finite_differences(
            width in 1usize..=8,
            depth in 1usize..=2,
            input in 1usize..=5,
            residual in any::<bool>(),
            seed in any::<u64>(),
            data in proptest::collection::vec((proptest::collection::vec(-2.0f64..2.0, 5), -2.0f64..2.0), 1..4),
        ) {
            let mut net = DenseNet::init(DenseArch { width, depth, residual }, input, seed).unwrap();
            // Larger weights keep pre-activations away from the kink.
            for p in &mut net.params {
                p.data.iter_mut().for_each(|v| *v *= 10.0);
            }
            let batch: Vec<DenseExample> =
                data.into_iter().map(|(x, y)| DenseExample { x: x[..input].to_vec(), y }).collect();
            finite_difference_check(&net, &batch);
        }
    }
}
