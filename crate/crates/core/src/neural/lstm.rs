use crate::numkit::matrix::{add_column_broadcast, gemm, sigmoid, Op};
use crate::numkit::{Matrix, SeededRng};

use super::NeuralError;

/// The four gating units of a cell, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Forget = 0,
    Input = 1,
    Output = 2,
    Candidate = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Output, Gate::Candidate];
}

/// Weights of one LSTM layer. The per-gate matrices are row blocks of
/// `hidden_dim` rows each, in [`Gate::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    /// `4H × I`
    pub input_weights: Matrix,
    /// `4H × H`
    pub recurrent_weights: Matrix,
    /// `4H × 1`
    pub bias: Matrix,
}

impl LstmLayerParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_weights: Matrix::zeros(4 * hidden_dim, input_dim),
            recurrent_weights: Matrix::zeros(4 * hidden_dim, hidden_dim),
            bias: Matrix::zeros(4 * hidden_dim, 1),
        }
    }

    /// Uniform weights in `±1/√(input_dim + hidden_dim)`, zero biases except
    /// the forget gate which starts at 1.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / ((input_dim + hidden_dim) as f64).sqrt();
        let mut draw = |_: usize, _: usize| rng.uniform_range(-bound, bound);
        let input_weights = Matrix::from_fn(4 * hidden_dim, input_dim, &mut draw);
        let recurrent_weights = Matrix::from_fn(4 * hidden_dim, hidden_dim, &mut draw);
        let bias = Matrix::from_fn(4 * hidden_dim, 1, |r, _| {
            if r < hidden_dim {
                1.0
            } else {
                0.0
            }
        });
        Self {
            input_weights,
            recurrent_weights,
            bias,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_weights.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.recurrent_weights.cols()
    }

    /// `V^u` for a single gate.
    pub fn input_block(&self, gate: Gate) -> Matrix {
        gate_rows(&self.input_weights, gate, self.hidden_dim())
    }

    /// `K^u` for a single gate.
    pub fn recurrent_block(&self, gate: Gate) -> Matrix {
        gate_rows(&self.recurrent_weights, gate, self.hidden_dim())
    }

    /// `b^u` for a single gate.
    pub fn bias_block(&self, gate: Gate) -> Matrix {
        gate_rows(&self.bias, gate, self.hidden_dim())
    }

    pub(crate) fn check_shapes(&self) -> Result<(), NeuralError> {
        let h = self.hidden_dim();
        let ok = self.recurrent_weights.rows() == 4 * h
            && self.input_weights.rows() == 4 * h
            && self.bias.shape() == (4 * h, 1);
        if ok {
            Ok(())
        } else {
            Err(NeuralError::Spec(format!(
                "inconsistent layer shapes: V {:?}, K {:?}, b {:?}",
                self.input_weights.shape(),
                self.recurrent_weights.shape(),
                self.bias.shape()
            )))
        }
    }
}

fn gate_rows(m: &Matrix, gate: Gate, hidden: usize) -> Matrix {
    let start = gate as usize * hidden;
    m.row_slice(start, start + hidden)
}

/// Hidden and cell state, each `hidden_dim × batch`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Matrix,
    pub c: Matrix,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize, batch: usize) -> Self {
        Self {
            h: Matrix::zeros(hidden_dim, batch),
            c: Matrix::zeros(hidden_dim, batch),
        }
    }
}

/// Everything the backward pass needs from one cell evaluation.
#[derive(Debug, Clone)]
pub struct CellCache {
    pub input: Matrix,
    pub prev: LstmState,
    /// Post-activation gates stacked `[f; g; o; c̃]`, `4H × B`.
    pub gates: Matrix,
    pub c: Matrix,
    pub tanh_c: Matrix,
}

impl CellCache {
    pub fn gate(&self, gate: Gate) -> Matrix {
        gate_rows(&self.gates, gate, self.c.rows())
    }
}

/// One time step:
///
/// ```text
/// f  = σ(b^f + K^f h + V^f w)      g = σ(b^g + K^g h + V^g w)
/// o  = σ(b^o + K^o h + V^o w)      c̃ = tanh(b^c + K^c h + V^c w)
/// C' = f ⊙ C + g ⊙ c̃               h' = o ⊙ tanh(C')
/// ```
pub fn cell_forward(
    params: &LstmLayerParams,
    w_t: &Matrix,
    prev: &LstmState,
) -> Result<(LstmState, CellCache), NeuralError> {
    let hidden = params.hidden_dim();
    let batch = w_t.cols();
    if w_t.rows() != params.input_dim() {
        return Err(NeuralError::InputDim {
            step: 0,
            got: w_t.rows(),
            expected: params.input_dim(),
        });
    }
    if prev.h.shape() != (hidden, batch) || prev.c.shape() != (hidden, batch) {
        return Err(NeuralError::Num(crate::numkit::NumError::Shape {
            op: "cell state",
            left: (hidden, batch),
            right: prev.h.shape(),
        }));
    }

    let mut gates = Matrix::zeros(4 * hidden, batch);
    gemm(1.0, &params.input_weights, Op::N, w_t, Op::N, 0.0, &mut gates)?;
    gemm(1.0, &params.recurrent_weights, Op::N, &prev.h, Op::N, 1.0, &mut gates)?;
    add_column_broadcast(&mut gates, &params.bias);
    {
        let data = gates.data_mut();
        let split = 3 * hidden * batch;
        data[..split].iter_mut().for_each(|v| *v = sigmoid(*v));
        data[split..].iter_mut().for_each(|v| *v = v.tanh());
    }

    let n = hidden * batch;
    let g = gates.data();
    let (f, rest) = g.split_at(n);
    let (ig, rest) = rest.split_at(n);
    let (o, cand) = rest.split_at(n);
    let mut c = Matrix::zeros(hidden, batch);
    let mut tanh_c = Matrix::zeros(hidden, batch);
    let mut h = Matrix::zeros(hidden, batch);
    {
        let prev_c = prev.c.data();
        let (cd, td, hd) = (c.data_mut(), tanh_c.data_mut(), h.data_mut());
        for i in 0..n {
            cd[i] = f[i] * prev_c[i] + ig[i] * cand[i];
            td[i] = cd[i].tanh();
            hd[i] = o[i] * td[i];
        }
    }

    let state = LstmState { h, c: c.clone() };
    let cache = CellCache {
        input: w_t.clone(),
        prev: prev.clone(),
        gates,
        c,
        tanh_c,
    };
    Ok((state, cache))
}

/// Reverse of [`cell_forward`]. Accumulates parameter gradients into `grads`
/// and returns `(∂/∂w_t, ∂/∂h_{t-1}, ∂/∂C_{t-1})`.
pub fn cell_backward(
    params: &LstmLayerParams,
    cache: &CellCache,
    d_h: &Matrix,
    d_c_next: &Matrix,
    grads: &mut LstmLayerParams,
) -> Result<(Matrix, Matrix, Matrix), NeuralError> {
    let hidden = params.hidden_dim();
    let batch = cache.c.cols();
    let n = hidden * batch;
    if d_h.shape() != (hidden, batch) || d_c_next.shape() != (hidden, batch) {
        return Err(NeuralError::TapeMismatch(format!(
            "state gradient shape {:?}, expected {:?}",
            d_h.shape(),
            (hidden, batch)
        )));
    }

    let g = cache.gates.data();
    let (f, rest) = g.split_at(n);
    let (ig, rest) = rest.split_at(n);
    let (o, cand) = rest.split_at(n);
    let (prev_c, tanh_c) = (cache.prev.c.data(), cache.tanh_c.data());
    let (dh, dcn) = (d_h.data(), d_c_next.data());

    let mut d_pre = Matrix::zeros(4 * hidden, batch);
    let mut d_c_prev = Matrix::zeros(hidden, batch);
    {
        let dp = d_pre.data_mut();
        let dcp = d_c_prev.data_mut();
        for i in 0..n {
            let d_o = dh[i] * tanh_c[i];
            let dc = dcn[i] + dh[i] * o[i] * (1.0 - tanh_c[i] * tanh_c[i]);
            let d_f = dc * prev_c[i];
            let d_g = dc * cand[i];
            let d_cand = dc * ig[i];
            dcp[i] = dc * f[i];
            dp[i] = d_f * f[i] * (1.0 - f[i]);
            dp[n + i] = d_g * ig[i] * (1.0 - ig[i]);
            dp[2 * n + i] = d_o * o[i] * (1.0 - o[i]);
            dp[3 * n + i] = d_cand * (1.0 - cand[i] * cand[i]);
        }
    }

    gemm(1.0, &d_pre, Op::N, &cache.input, Op::T, 1.0, &mut grads.input_weights)?;
    gemm(1.0, &d_pre, Op::N, &cache.prev.h, Op::T, 1.0, &mut grads.recurrent_weights)?;
    grads.bias.add_assign(&d_pre.sum_columns())?;

    let mut d_input = Matrix::zeros(params.input_dim(), batch);
    gemm(1.0, &params.input_weights, Op::T, &d_pre, Op::N, 0.0, &mut d_input)?;
    let mut d_h_prev = Matrix::zeros(hidden, batch);
    gemm(1.0, &params.recurrent_weights, Op::T, &d_pre, Op::N, 0.0, &mut d_h_prev)?;
    Ok((d_input, d_h_prev, d_c_prev))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Element-by-element reference for one cell step.
    fn scalar_step(p: &LstmLayerParams, w: &Matrix, prev: &LstmState) -> (Matrix, Matrix) {
        let hd = p.hidden_dim();
        let mut h = Matrix::zeros(hd, w.cols());
        let mut c = Matrix::zeros(hd, w.cols());
        for b in 0..w.cols() {
            for j in 0..hd {
                let mut pre = [0.0; 4];
                for (u, gate) in Gate::ALL.iter().enumerate() {
                    let v = p.input_block(*gate);
                    let k = p.recurrent_block(*gate);
                    let mut s = p.bias_block(*gate)[(j, 0)];
                    for i in 0..p.input_dim() {
                        s += v[(j, i)] * w[(i, b)];
                    }
                    for i in 0..hd {
                        s += k[(j, i)] * prev.h[(i, b)];
                    }
                    pre[u] = s;
                }
                let (f, g, o, cand) = (sig(pre[0]), sig(pre[1]), sig(pre[2]), pre[3].tanh());
                c[(j, b)] = f * prev.c[(j, b)] + g * cand;
                h[(j, b)] = o * c[(j, b)].tanh();
            }
        }
        (h, c)
    }

    #[test]
    fn zero_parameters_give_half_open_gates() {
        let p = LstmLayerParams::zeros(3, 4);
        let (state, cache) = cell_forward(&p, &Matrix::zeros(3, 2), &LstmState::zeros(4, 2)).unwrap();
        for gate in [Gate::Forget, Gate::Input, Gate::Output] {
            assert!(cache.gate(gate).data().iter().all(|&v| v == 0.5));
        }
        assert!(state.c.data().iter().all(|&v| v == 0.0));
        assert!(state.h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_keeps_memory() {
        let mut rng = SeededRng::new(2);
        let mut p = LstmLayerParams::init(3, 4, &mut rng);
        p.input_weights.fill(0.0);
        p.recurrent_weights.fill(0.0);
        for j in 0..4 {
            p.bias[(j, 0)] = 30.0;
            p.bias[(4 + j, 0)] = -30.0;
        }
        let prev = LstmState {
            h: Matrix::zeros(4, 2),
            c: Matrix::from_fn(4, 2, |r, c| r as f64 - c as f64 * 0.5),
        };
        let w = Matrix::from_fn(3, 2, |_, _| rng.uniform_range(-1.0, 1.0));
        let (state, _) = cell_forward(&p, &w, &prev).unwrap();
        for (a, b) in state.c.data().iter().zip(prev.c.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn matches_scalar_reference() {
        let mut rng = SeededRng::new(3);
        let p = LstmLayerParams::init(3, 5, &mut rng);
        let prev = LstmState {
            h: Matrix::from_fn(5, 4, |_, _| rng.uniform_range(-0.5, 0.5)),
            c: Matrix::from_fn(5, 4, |_, _| rng.uniform_range(-1.0, 1.0)),
        };
        let w = Matrix::from_fn(3, 4, |_, _| rng.uniform_range(-2.0, 2.0));
        let (state, _) = cell_forward(&p, &w, &prev).unwrap();
        let (h, c) = scalar_step(&p, &w, &prev);
        for (a, b) in state.h.data().iter().zip(h.data()) {
            assert!((a - b).abs() < 1e-14);
        }
        for (a, b) in state.c.data().iter().zip(c.data()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(state.h.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn rejects_wrong_input_rows() {
        let p = LstmLayerParams::zeros(3, 4);
        assert!(cell_forward(&p, &Matrix::zeros(2, 1), &LstmState::zeros(4, 1)).is_err());
        assert!(cell_forward(&p, &Matrix::zeros(3, 2), &LstmState::zeros(4, 1)).is_err());
    }
}
