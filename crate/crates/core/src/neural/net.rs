use crate::numkit::matrix::{add_column_broadcast, gemm, Op};
use crate::numkit::{softmax_columns, Matrix, SeededRng};

use super::lstm::{cell_backward, cell_forward, CellCache, LstmLayerParams, LstmState};
use super::NeuralError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Linear,
    Softmax,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Linear => "linear",
            HeadKind::Softmax => "softmax",
        }
    }
}

/// Per-time-step readout shared across all steps.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputHead {
    /// `out × H`
    pub weights: Matrix,
    /// `out × 1`
    pub bias: Matrix,
    pub kind: HeadKind,
}

/// Architecture of a [`StackedNet`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub head: HeadKind,
}

impl NetSpec {
    /// `layers` LSTM layers of `cells` units each.
    pub fn uniform(input_dim: usize, layers: usize, cells: usize, output_dim: usize, head: HeadKind) -> Self {
        Self {
            input_dim,
            hidden: vec![cells; layers],
            output_dim,
            head,
        }
    }
}

/// Which family a parameter tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    InputWeights,
    RecurrentWeights,
    Bias,
    HeadWeights,
    HeadBias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackedNet {
    pub layers: Vec<LstmLayerParams>,
    pub head: OutputHead,
}

/// Gradient record shaped exactly like the parameters of a [`StackedNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradient {
    pub layers: Vec<LstmLayerParams>,
    pub head_weights: Matrix,
    pub head_bias: Matrix,
}

/// Cached activations of one forward pass, indexed `[t][layer]`.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    pub steps: Vec<Vec<CellCache>>,
    pub outputs: Vec<Matrix>,
    top_hidden: Vec<Matrix>,
}

impl ForwardTape {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.outputs.first().map_or(0, Matrix::cols)
    }
}

impl StackedNet {
    pub fn new(spec: &NetSpec, rng: &mut SeededRng) -> Result<Self, NeuralError> {
        if spec.hidden.is_empty() {
            return Err(NeuralError::Spec("at least one LSTM layer is required".into()));
        }
        if spec.input_dim == 0 || spec.output_dim == 0 || spec.hidden.contains(&0) {
            return Err(NeuralError::Spec(format!("zero-sized dimension in {spec:?}")));
        }
        let mut layers = Vec::with_capacity(spec.hidden.len());
        let mut fan_in = spec.input_dim;
        for &h in &spec.hidden {
            layers.push(LstmLayerParams::init(fan_in, h, rng));
            fan_in = h;
        }
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weights = Matrix::from_fn(spec.output_dim, fan_in, |_, _| rng.uniform_range(-bound, bound));
        let head = OutputHead {
            weights,
            bias: Matrix::zeros(spec.output_dim, 1),
            kind: spec.head,
        };
        Ok(Self { layers, head })
    }

    /// Assembles a network from explicit parameters, validating the stack.
    pub fn from_parts(layers: Vec<LstmLayerParams>, head: OutputHead) -> Result<Self, NeuralError> {
        let net = Self { layers, head };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.layers.is_empty() {
            return Err(NeuralError::Spec("at least one LSTM layer is required".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.check_shapes()?;
            if i > 0 && layer.input_dim() != self.layers[i - 1].hidden_dim() {
                return Err(NeuralError::Spec(format!(
                    "layer {i} expects {} inputs but layer {} has {} cells",
                    layer.input_dim(),
                    i - 1,
                    self.layers[i - 1].hidden_dim()
                )));
            }
        }
        let top = self.layers.last().map(LstmLayerParams::hidden_dim).unwrap_or(0);
        if self.head.weights.cols() != top || self.head.bias.shape() != (self.head.weights.rows(), 1) {
            return Err(NeuralError::Spec(format!(
                "head {:?}/{:?} does not fit {top} cells",
                self.head.weights.shape(),
                self.head.bias.shape()
            )));
        }
        Ok(())
    }

    pub fn spec(&self) -> NetSpec {
        NetSpec {
            input_dim: self.input_dim(),
            hidden: self.layers.iter().map(LstmLayerParams::hidden_dim).collect(),
            output_dim: self.output_dim(),
            head: self.head.kind,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.head.weights.rows()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|m| m.len()).sum()
    }

    /// Parameter tensors in flatten order.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &self.layers {
            out.extend([&l.input_weights, &l.recurrent_weights, &l.bias]);
        }
        out.extend([&self.head.weights, &self.head.bias]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &mut self.layers {
            out.extend([&mut l.input_weights, &mut l.recurrent_weights, &mut l.bias]);
        }
        out.extend([&mut self.head.weights, &mut self.head.bias]);
        out
    }

    /// Roles of [`Self::tensors`], position by position.
    pub fn tensor_roles(&self) -> Vec<TensorRole> {
        tensor_roles(self.layers.len())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|m| m.data().iter().copied()).collect()
    }

    pub fn unflatten(&mut self, values: &[f64]) -> Result<(), NeuralError> {
        let expected = self.param_count();
        if values.len() != expected {
            return Err(NeuralError::ParamCount {
                got: values.len(),
                expected,
            });
        }
        let mut offset = 0;
        for m in self.tensors_mut() {
            let n = m.len();
            m.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Runs the sequence from zero initial states. Output `t` depends only on
    /// inputs `0..=t`.
    pub fn forward(&self, inputs: &[Matrix]) -> Result<(Vec<Matrix>, ForwardTape), NeuralError> {
        let first = inputs.first().ok_or(NeuralError::EmptySequence)?;
        let batch = first.cols();
        let mut states: Vec<LstmState> = self
            .layers
            .iter()
            .map(|l| LstmState::zeros(l.hidden_dim(), batch))
            .collect();
        let mut steps = Vec::with_capacity(inputs.len());
        let mut outputs = Vec::with_capacity(inputs.len());
        let mut top_hidden = Vec::with_capacity(inputs.len());

        for (t, w_t) in inputs.iter().enumerate() {
            if w_t.rows() != self.input_dim() || w_t.cols() != batch {
                return Err(NeuralError::InputDim {
                    step: t,
                    got: w_t.rows(),
                    expected: self.input_dim(),
                });
            }
            let mut caches = Vec::with_capacity(self.layers.len());
            let mut below = w_t.clone();
            for (layer, state) in self.layers.iter().zip(states.iter_mut()) {
                let (next, cache) = cell_forward(layer, &below, state)?;
                below = next.h.clone();
                *state = next;
                caches.push(cache);
            }
            outputs.push(self.apply_head(&below)?);
            top_hidden.push(below);
            steps.push(caches);
        }
        let tape = ForwardTape {
            steps,
            outputs: outputs.clone(),
            top_hidden,
        };
        Ok((outputs, tape))
    }

    fn apply_head(&self, h: &Matrix) -> Result<Matrix, NeuralError> {
        let mut logits = Matrix::zeros(self.output_dim(), h.cols());
        gemm(1.0, &self.head.weights, Op::N, h, Op::N, 0.0, &mut logits)?;
        add_column_broadcast(&mut logits, &self.head.bias);
        Ok(match self.head.kind {
            HeadKind::Linear => logits,
            HeadKind::Softmax => softmax_columns(&logits),
        })
    }

    /// Reverse accumulation through time and layers.
    ///
    /// `d_outputs[t]` is the derivative of a scalar loss with respect to the
    /// head output at step `t` (the probabilities, for a softmax head).
    /// Returns the parameter gradient and the derivatives with respect to
    /// every input step.
    pub fn backward(
        &self,
        tape: &ForwardTape,
        d_outputs: &[Matrix],
    ) -> Result<(NetGradient, Vec<Matrix>), NeuralError> {
        let steps = tape.len();
        if d_outputs.len() != steps {
            return Err(NeuralError::TapeMismatch(format!(
                "{} output gradients for a tape of length {steps}",
                d_outputs.len()
            )));
        }
        if tape.steps.iter().any(|s| s.len() != self.layers.len()) {
            return Err(NeuralError::TapeMismatch("layer count differs".into()));
        }
        let batch = tape.batch();
        let mut grads = NetGradient::zeros_like(self);
        let mut d_inputs = vec![Matrix::zeros(self.input_dim(), batch); steps];
        let mut d_h_next: Vec<Matrix> = self
            .layers
            .iter()
            .map(|l| Matrix::zeros(l.hidden_dim(), batch))
            .collect();
        let mut d_c_next = d_h_next.clone();

        for t in (0..steps).rev() {
            let d_out = &d_outputs[t];
            let out = &tape.outputs[t];
            if d_out.shape() != out.shape() {
                return Err(NeuralError::TapeMismatch(format!(
                    "output gradient at step {t} is {:?}, output is {:?}",
                    d_out.shape(),
                    out.shape()
                )));
            }
            let d_logits = match self.head.kind {
                HeadKind::Linear => d_out.clone(),
                HeadKind::Softmax => softmax_backward(out, d_out),
            };
            gemm(1.0, &d_logits, Op::N, &tape.top_hidden[t], Op::T, 1.0, &mut grads.head_weights)?;
            grads.head_bias.add_assign(&d_logits.sum_columns())?;
            let top = self.layers.len() - 1;
            let mut d_from_above = Matrix::zeros(self.layers[top].hidden_dim(), batch);
            gemm(1.0, &self.head.weights, Op::T, &d_logits, Op::N, 0.0, &mut d_from_above)?;

            for l in (0..self.layers.len()).rev() {
                d_from_above.add_assign(&d_h_next[l])?;
                let (d_in, d_h_prev, d_c_prev) = cell_backward(
                    &self.layers[l],
                    &tape.steps[t][l],
                    &d_from_above,
                    &d_c_next[l],
                    &mut grads.layers[l],
                )?;
                d_h_next[l] = d_h_prev;
                d_c_next[l] = d_c_prev;
                d_from_above = d_in;
            }
            d_inputs[t] = d_from_above;
        }
        Ok((grads, d_inputs))
    }
}

/// Vector-Jacobian product of a column softmax: `p ⊙ (d − Σ p ⊙ d)`.
fn softmax_backward(p: &Matrix, d: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(p.rows(), p.cols());
    for c in 0..p.cols() {
        let dot: f64 = (0..p.rows()).map(|r| p[(r, c)] * d[(r, c)]).sum();
        for r in 0..p.rows() {
            out[(r, c)] = p[(r, c)] * (d[(r, c)] - dot);
        }
    }
    out
}

fn tensor_roles(layers: usize) -> Vec<TensorRole> {
    let mut roles = Vec::with_capacity(3 * layers + 2);
    for _ in 0..layers {
        roles.extend([TensorRole::InputWeights, TensorRole::RecurrentWeights, TensorRole::Bias]);
    }
    roles.extend([TensorRole::HeadWeights, TensorRole::HeadBias]);
    roles
}

impl NetGradient {
    pub fn zeros_like(net: &StackedNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LstmLayerParams::zeros(l.input_dim(), l.hidden_dim()))
                .collect(),
            head_weights: Matrix::zeros(net.head.weights.rows(), net.head.weights.cols()),
            head_bias: Matrix::zeros(net.head.bias.rows(), 1),
        }
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &self.layers {
            out.extend([&l.input_weights, &l.recurrent_weights, &l.bias]);
        }
        out.extend([&self.head_weights, &self.head_bias]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &mut self.layers {
            out.extend([&mut l.input_weights, &mut l.recurrent_weights, &mut l.bias]);
        }
        out.extend([&mut self.head_weights, &mut self.head_bias]);
        out
    }

    pub fn tensor_roles(&self) -> Vec<TensorRole> {
        tensor_roles(self.layers.len())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|m| m.data().iter().copied()).collect()
    }

    /// `self += alpha * other`; shapes must agree.
    pub fn axpy(&mut self, alpha: f64, other: &NetGradient) -> Result<(), NeuralError> {
        let others = other.tensors();
        let mine = self.tensors_mut();
        if others.len() != mine.len() {
            return Err(NeuralError::TapeMismatch("gradient records differ in layer count".into()));
        }
        for (a, b) in mine.into_iter().zip(others) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        for m in self.tensors_mut() {
            m.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|m| m.data().iter().all(|&v| v == 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors().iter().map(|m| m.frobenius_sq()).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_inputs(rng: &mut SeededRng, dim: usize, batch: usize, steps: usize) -> Vec<Matrix> {
        (0..steps)
            .map(|_| Matrix::from_fn(dim, batch, |_, _| rng.uniform_range(-1.0, 1.0)))
            .collect()
    }

    #[test]
    fn single_step_is_cell_plus_head() {
        let mut rng = SeededRng::new(1);
        let net = StackedNet::new(&NetSpec::uniform(3, 1, 4, 2, HeadKind::Linear), &mut rng).unwrap();
        let x = random_inputs(&mut rng, 3, 2, 1);
        let (out, tape) = net.forward(&x).unwrap();
        let (state, _) = cell_forward(&net.layers[0], &x[0], &LstmState::zeros(4, 2)).unwrap();
        let expected = crate::numkit::affine(&net.head.weights, &state.h, &net.head.bias).unwrap();
        assert_eq!(out[0], expected);
        assert_eq!(tape.len(), 1);
    }

    #[test]
    fn two_layer_unroll_matches_manual_composition() {
        let mut rng = SeededRng::new(2);
        let net = StackedNet::new(&NetSpec::uniform(2, 2, 3, 2, HeadKind::Softmax), &mut rng).unwrap();
        let x = random_inputs(&mut rng, 2, 4, 3);
        let (out, _) = net.forward(&x).unwrap();
        let mut s1 = LstmState::zeros(3, 4);
        let mut s2 = LstmState::zeros(3, 4);
        for t in 0..3 {
            s1 = cell_forward(&net.layers[0], &x[t], &s1).unwrap().0;
            s2 = cell_forward(&net.layers[1], &s1.h, &s2).unwrap().0;
            let logits = crate::numkit::affine(&net.head.weights, &s2.h, &net.head.bias).unwrap();
            assert_eq!(out[t], softmax_columns(&logits));
            for c in 0..4 {
                let col = out[t].column(c);
                assert!((col.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(col.iter().all(|&p| p >= 0.0));
            }
        }
    }

    #[test]
    fn later_inputs_do_not_affect_earlier_outputs() {
        let mut rng = SeededRng::new(3);
        let net = StackedNet::new(&NetSpec::uniform(2, 2, 5, 1, HeadKind::Linear), &mut rng).unwrap();
        let x = random_inputs(&mut rng, 2, 3, 8);
        let (base, _) = net.forward(&x).unwrap();
        let mut y = x.clone();
        y[4] = y[4].map(|v| v + 0.7);
        let (moved, _) = net.forward(&y).unwrap();
        for t in 0..4 {
            assert_eq!(base[t], moved[t]);
        }
        assert_ne!(base[4], moved[4]);
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradient() {
        let mut rng = SeededRng::new(4);
        let net = StackedNet::new(&NetSpec::uniform(2, 2, 4, 3, HeadKind::Softmax), &mut rng).unwrap();
        let x = random_inputs(&mut rng, 2, 2, 5);
        let (out, tape) = net.forward(&x).unwrap();
        let zeros: Vec<Matrix> = out.iter().map(|o| Matrix::zeros(o.rows(), o.cols())).collect();
        let (g, dx) = net.backward(&tape, &zeros).unwrap();
        assert!(g.is_zero());
        assert!(dx.iter().all(|m| m.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn head_gradient_matches_least_squares_closed_form() {
        // L = ½ Σ (W h + b − y)², so ∂L/∂W = r hᵀ and ∂L/∂b = Σ_batch r.
        let mut rng = SeededRng::new(5);
        let net = StackedNet::new(&NetSpec::uniform(3, 1, 4, 2, HeadKind::Linear), &mut rng).unwrap();
        let x = random_inputs(&mut rng, 3, 5, 1);
        let target = Matrix::from_fn(2, 5, |_, _| rng.uniform());
        let (out, tape) = net.forward(&x).unwrap();
        let residual = out[0].sub(&target).unwrap();
        let (g, _) = net.backward(&tape, std::slice::from_ref(&residual)).unwrap();
        let h = cell_forward(&net.layers[0], &x[0], &LstmState::zeros(4, 5)).unwrap().0.h;
        for i in 0..2 {
            for j in 0..4 {
                let expected: f64 = (0..5).map(|b| residual[(i, b)] * h[(j, b)]).sum();
                assert!((g.head_weights[(i, j)] - expected).abs() < 1e-14);
            }
            let expected_b: f64 = (0..5).map(|b| residual[(i, b)]).sum();
            assert!((g.head_bias[(i, 0)] - expected_b).abs() < 1e-14);
        }
    }

    #[test]
    fn flatten_roundtrip_and_order() {
        let mut rng = SeededRng::new(6);
        let net = StackedNet::new(&NetSpec::uniform(2, 2, 3, 1, HeadKind::Linear), &mut rng).unwrap();
        let flat = net.flatten();
        assert_eq!(flat.len(), net.param_count());
        // first layer input weights lead, head bias trails
        assert_eq!(flat[0], net.layers[0].input_weights.data()[0]);
        assert_eq!(*flat.last().unwrap(), net.head.bias[(0, 0)]);
        let mut other = StackedNet::new(&net.spec(), &mut SeededRng::new(99)).unwrap();
        other.unflatten(&flat).unwrap();
        assert_eq!(other, net);
        assert!(other.unflatten(&flat[1..]).is_err());
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let mut rng = SeededRng::new(7);
        let net = StackedNet::new(&NetSpec::uniform(2, 1, 3, 1, HeadKind::Linear), &mut rng).unwrap();
        assert!(matches!(net.forward(&[]), Err(NeuralError::EmptySequence)));
        assert!(net.forward(&[Matrix::zeros(3, 1)]).is_err());
        let (_, tape) = net.forward(&[Matrix::zeros(2, 1)]).unwrap();
        assert!(net.backward(&tape, &[]).is_err());
    }

    #[test]
    fn inconsistent_stacks_are_rejected() {
        let mut rng = SeededRng::new(8);
        let layers = vec![LstmLayerParams::init(2, 3, &mut rng), LstmLayerParams::init(4, 3, &mut rng)];
        let head = OutputHead {
            weights: Matrix::zeros(1, 3),
            bias: Matrix::zeros(1, 1),
            kind: HeadKind::Linear,
        };
        assert!(StackedNet::from_parts(layers, head).is_err());
    }
}
