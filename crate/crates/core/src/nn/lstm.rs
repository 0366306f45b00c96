//! Single-layer LSTM with a classification or time-distributed regression head,
//! and exact backpropagation through time.
//!
//! Gate order everywhere is (input, forget, cell, output). All parameters live
//! in one flat buffer laid out as `W | U | b | V | c`:
//!
//! | block | shape            | role                        |
//! |-------|------------------|-----------------------------|
//! | `W`   | 4·hidden × input | input → gate pre-activations |
//! | `U`   | 4·hidden × hidden| recurrent weights            |
//! | `b`   | 4·hidden         | gate biases                  |
//! | `V`   | out × hidden     | head weights                 |
//! | `c`   | out              | head bias                    |

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{axpy, matvec_acc, matvec_t_acc, outer_acc, Matrix2D};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    /// Softmax over two classes applied to the last hidden state.
    FinalSoftmax2,
    /// Linear readout applied to every hidden state.
    PerStepLinear,
}

impl HeadKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            HeadKind::FinalSoftmax2 => 0,
            HeadKind::PerStepLinear => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(HeadKind::FinalSoftmax2),
            1 => Some(HeadKind::PerStepLinear),
            _ => None,
        }
    }
}

/// Weights of an LSTM plus its output head. Also used to hold gradients and
/// optimizer moments, which share the exact same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceModelParams {
    input_dim: usize,
    hidden_dim: usize,
    out_dim: usize,
    head: HeadKind,
    data: Vec<f64>,
}

fn param_count(input_dim: usize, hidden_dim: usize, out_dim: usize) -> usize {
    let g = 4 * hidden_dim;
    g * input_dim + g * hidden_dim + g + out_dim * hidden_dim + out_dim
}

impl SequenceModelParams {
    /// All-zero parameters. The softmax head always has two outputs.
    pub fn zeros(input_dim: usize, hidden_dim: usize, out_dim: usize, head: HeadKind) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidConfig(
                "model dimensions must be positive".into(),
            ));
        }
        if head == HeadKind::FinalSoftmax2 && out_dim != 2 {
            return Err(Error::DimensionMismatch {
                context: "softmax head width",
                expected: 2,
                actual: out_dim,
            });
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            out_dim,
            head,
            data: vec![0.0; param_count(input_dim, hidden_dim, out_dim)],
        })
    }

    /// Uniform(−k, k) with k = 1/√hidden everywhere, forget-gate bias 1, head bias 0.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        out_dim: usize,
        head: HeadKind,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::zeros(input_dim, hidden_dim, out_dim, head)?;
        let k = 1.0 / (hidden_dim as f64).sqrt();
        for v in p.data.iter_mut() {
            *v = rng.random_range(-k..k);
        }
        let h = hidden_dim;
        let b = p.b_mut();
        b[..h].fill(0.0);
        b[h..2 * h].fill(1.0);
        b[2 * h..].fill(0.0);
        p.c_mut().fill(0.0);
        Ok(p)
    }

    /// Rebuilds parameters from a flat buffer in `W | U | b | V | c` order.
    pub fn from_flat(
        input_dim: usize,
        hidden_dim: usize,
        out_dim: usize,
        head: HeadKind,
        data: Vec<f64>,
    ) -> Result<Self> {
        let mut p = Self::zeros(input_dim, hidden_dim, out_dim, head)?;
        if data.len() != p.data.len() {
            return Err(Error::DimensionMismatch {
                context: "flat parameter buffer",
                expected: p.data.len(),
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
        p.data = data;
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            data: vec![0.0; self.data.len()],
            ..*self
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }
    pub fn head(&self) -> HeadKind {
        self.head
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.input_dim == other.input_dim
            && self.hidden_dim == other.hidden_dim
            && self.out_dim == other.out_dim
            && self.head == other.head
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn offsets(&self) -> [usize; 6] {
        let g = 4 * self.hidden_dim;
        let w = 0;
        let u = w + g * self.input_dim;
        let b = u + g * self.hidden_dim;
        let v = b + g;
        let c = v + self.out_dim * self.hidden_dim;
        [w, u, b, v, c, c + self.out_dim]
    }

    pub fn w(&self) -> &[f64] {
        let o = self.offsets();
        &self.data[o[0]..o[1]]
    }
    pub fn u(&self) -> &[f64] {
        let o = self.offsets();
        &self.data[o[1]..o[2]]
    }
    pub fn b(&self) -> &[f64] {
        let o = self.offsets();
        &self.data[o[2]..o[3]]
    }
    pub fn v(&self) -> &[f64] {
        let o = self.offsets();
        &self.data[o[3]..o[4]]
    }
    pub fn c(&self) -> &[f64] {
        let o = self.offsets();
        &self.data[o[4]..o[5]]
    }
    pub fn w_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.data[o[0]..o[1]]
    }
    pub fn u_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.data[o[1]..o[2]]
    }
    pub fn b_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.data[o[2]..o[3]]
    }
    pub fn v_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.data[o[3]..o[4]]
    }
    pub fn c_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.data[o[4]..o[5]]
    }

    /// Mutable views of all five blocks at once, in `W, U, b, V, c` order.
    fn blocks_mut(&mut self) -> [&mut [f64]; 5] {
        let o = self.offsets();
        let (w, rest) = self.data.split_at_mut(o[1]);
        let (u, rest) = rest.split_at_mut(o[2] - o[1]);
        let (b, rest) = rest.split_at_mut(o[3] - o[2]);
        let (v, c) = rest.split_at_mut(o[4] - o[3]);
        [w, u, b, v, c]
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.data.iter_mut() {
            *a *= s;
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Runs the recurrence from a zero state.
    pub fn forward(&self, seq: &Matrix2D) -> Result<ForwardPass> {
        self.forward_from(seq, &LstmState::zeros(self.hidden_dim))
    }

    /// Runs the recurrence from a given state (used for truncated BPTT).
    pub fn forward_from(&self, seq: &Matrix2D, state: &LstmState) -> Result<ForwardPass> {
        if seq.cols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "sequence width vs model input_dim",
                expected: self.input_dim,
                actual: seq.cols(),
            });
        }
        if seq.rows() == 0 {
            return Err(Error::Empty("input sequence"));
        }
        if !seq.is_finite() {
            return Err(Error::NonFinite("input sequence"));
        }
        if state.h.len() != self.hidden_dim || state.c.len() != self.hidden_dim {
            return Err(Error::DimensionMismatch {
                context: "initial state width",
                expected: self.hidden_dim,
                actual: state.h.len(),
            });
        }
        let steps = seq.rows();
        let h = self.hidden_dim;
        let g4 = 4 * h;
        let (w, u, b, v, c) = (self.w(), self.u(), self.b(), self.v(), self.c());

        let mut gates = vec![0.0; steps * g4];
        let mut cells = vec![0.0; steps * h];
        let mut hidden = vec![0.0; steps * h];
        let mut tanh_c = vec![0.0; steps * h];
        let mut c_new = vec![0.0; h];

        for t in 0..steps {
            let (h_prev, c_prev): (&[f64], &[f64]) = if t == 0 {
                (&state.h, &state.c)
            } else {
                (&hidden[(t - 1) * h..t * h], &cells[(t - 1) * h..t * h])
            };
            let a = &mut gates[t * g4..(t + 1) * g4];
            a.copy_from_slice(b);
            matvec_acc(w, seq.row(t), a);
            matvec_acc(u, h_prev, a);
            for j in 0..h {
                a[j] = sigmoid(a[j]);
                a[h + j] = sigmoid(a[h + j]);
                a[2 * h + j] = a[2 * h + j].tanh();
                a[3 * h + j] = sigmoid(a[3 * h + j]);
            }
            for j in 0..h {
                c_new[j] = a[h + j] * c_prev[j] + a[j] * a[2 * h + j];
            }
            for j in 0..h {
                let tc = c_new[j].tanh();
                tanh_c[t * h + j] = tc;
                hidden[t * h + j] = a[3 * h + j] * tc;
            }
            cells[t * h..(t + 1) * h].copy_from_slice(&c_new);
        }

        let mut logits = Vec::new();
        let output = match self.head {
            HeadKind::FinalSoftmax2 => {
                logits = c.to_vec();
                matvec_acc(v, &hidden[(steps - 1) * h..], &mut logits);
                Matrix2D::from_vec(1, 2, softmax2(&logits))
                    .map_err(|_| Error::NonFinite("softmax output"))?
            }
            HeadKind::PerStepLinear => {
                let mut out = vec![0.0; steps * self.out_dim];
                for (t, row) in out.chunks_exact_mut(self.out_dim).enumerate() {
                    row.copy_from_slice(c);
                    matvec_acc(v, &hidden[t * h..(t + 1) * h], row);
                }
                Matrix2D::from_vec(steps, self.out_dim, out)
                    .map_err(|_| Error::NonFinite("regression output"))?
            }
        };

        Ok(ForwardPass {
            hidden_dim: h,
            steps,
            init: state.clone(),
            gates,
            cells,
            hidden,
            tanh_c,
            logits,
            output,
        })
    }

    /// Backpropagates `out_grad` through the head and the recurrence.
    ///
    /// `out_grad` is the gradient of the loss with respect to the head's
    /// pre-softmax logits (1×2) for the softmax head, or with respect to each
    /// per-step output (T×out) for the linear head. Gradients do not flow into
    /// the pass's initial state.
    pub fn backward(&self, seq: &Matrix2D, pass: &ForwardPass, out_grad: &Matrix2D) -> Result<SequenceModelParams> {
        let steps = pass.steps;
        let h = self.hidden_dim;
        let g4 = 4 * h;
        if seq.rows() != steps || seq.cols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "backward sequence shape",
                expected: steps,
                actual: seq.rows(),
            });
        }
        let expected_rows = match self.head {
            HeadKind::FinalSoftmax2 => 1,
            HeadKind::PerStepLinear => steps,
        };
        if out_grad.rows() != expected_rows || out_grad.cols() != self.out_dim {
            return Err(Error::DimensionMismatch {
                context: "output gradient shape",
                expected: expected_rows * self.out_dim,
                actual: out_grad.rows() * out_grad.cols(),
            });
        }

        let mut grads = self.zeros_like();
        let [dw, du, db, dv, dc] = grads.blocks_mut();
        let (u, v) = (self.u(), self.v());

        // dL/dh_t contributed by the head.
        let mut dh_head = vec![0.0; steps * h];
        match self.head {
            HeadKind::FinalSoftmax2 => {
                let g = out_grad.row(0);
                let h_last = &pass.hidden[(steps - 1) * h..];
                outer_acc(g, h_last, dv);
                axpy(1.0, g, dc);
                matvec_t_acc(v, g, &mut dh_head[(steps - 1) * h..]);
            }
            HeadKind::PerStepLinear => {
                for t in 0..steps {
                    let g = out_grad.row(t);
                    let h_t = &pass.hidden[t * h..(t + 1) * h];
                    outer_acc(g, h_t, dv);
                    axpy(1.0, g, dc);
                    matvec_t_acc(v, g, &mut dh_head[t * h..(t + 1) * h]);
                }
            }
        }

        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut da = vec![0.0; g4];
        for t in (0..steps).rev() {
            let a = &pass.gates[t * g4..(t + 1) * g4];
            let tc = &pass.tanh_c[t * h..(t + 1) * h];
            let c_prev: &[f64] = if t == 0 {
                &pass.init.c
            } else {
                &pass.cells[(t - 1) * h..t * h]
            };
            let h_prev: &[f64] = if t == 0 {
                &pass.init.h
            } else {
                &pass.hidden[(t - 1) * h..t * h]
            };
            for j in 0..h {
                let dh = dh_head[t * h + j] + dh_next[j];
                let (i, f, g, o) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
                let d_o = dh * tc[j];
                let dcell = dh * o * (1.0 - tc[j] * tc[j]) + dc_next[j];
                da[j] = dcell * g * i * (1.0 - i);
                da[h + j] = dcell * c_prev[j] * f * (1.0 - f);
                da[2 * h + j] = dcell * i * (1.0 - g * g);
                da[3 * h + j] = d_o * o * (1.0 - o);
                dc_next[j] = dcell * f;
            }
            outer_acc(&da, seq.row(t), dw);
            outer_acc(&da, h_prev, du);
            axpy(1.0, &da, db);
            dh_next.fill(0.0);
            matvec_t_acc(u, &da, &mut dh_next);
        }
        Ok(grads)
    }
}

/// Recurrent state `(h, c)` carried between chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            h: vec![0.0; hidden_dim],
            c: vec![0.0; hidden_dim],
        }
    }
}

/// Activations cached by a forward pass for use in [`SequenceModelParams::backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    hidden_dim: usize,
    steps: usize,
    init: LstmState,
    gates: Vec<f64>,
    cells: Vec<f64>,
    hidden: Vec<f64>,
    tanh_c: Vec<f64>,
    logits: Vec<f64>,
    output: Matrix2D,
}

impl ForwardPass {
    /// Hidden states, T × hidden.
    pub fn hidden(&self) -> Matrix2D {
        Matrix2D::from_vec(self.steps, self.hidden_dim, self.hidden.clone())
            .expect("hidden states are finite")
    }

    /// Softmax probabilities (1×2) or per-step regression outputs (T×out).
    pub fn output(&self) -> &Matrix2D {
        &self.output
    }

    /// Pre-softmax logits of the classification head; empty for the linear head.
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// State after the last step, for continuing into the next chunk.
    pub fn final_state(&self) -> LstmState {
        let h = self.hidden_dim;
        let s = self.steps;
        LstmState {
            h: self.hidden[(s - 1) * h..].to_vec(),
            c: self.cells[(s - 1) * h..].to_vec(),
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax2(logits: &[f64]) -> Vec<f64> {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    vec![e0 / s, e1 / s]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_hidden_and_even_softmax() {
        let p = SequenceModelParams::zeros(3, 4, 2, HeadKind::FinalSoftmax2).unwrap();
        let seq = Matrix2D::from_vec(5, 3, (0..15).map(|i| i as f64 * 0.3 - 2.0).collect()).unwrap();
        let pass = p.forward(&seq).unwrap();
        assert!(pass.hidden().as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(pass.output().as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn scalar_cell_bias_trace_matches_hand_recurrence() {
        let mut p = SequenceModelParams::zeros(1, 1, 1, HeadKind::PerStepLinear).unwrap();
        p.b_mut()[2] = 1.0;
        let seq = Matrix2D::from_vec(1, 1, vec![0.0]).unwrap();
        let pass = p.forward(&seq).unwrap();
        // Independent scalar evaluation of the recurrence.
        let c1 = 0.5 * 1.0f64.tanh();
        let h1 = 0.5 * c1.tanh();
        assert!((pass.hidden().get(0, 0) - h1).abs() < 1e-15);
        assert!((h1 - 0.181_699_742).abs() < 1e-9);
    }

    #[test]
    fn hidden_shape_follows_sequence_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = SequenceModelParams::init(2, 4, 1, HeadKind::PerStepLinear, &mut rng).unwrap();
        let seq = Matrix2D::zeros(3, 2);
        let pass = p.forward(&seq).unwrap();
        assert_eq!(pass.hidden().shape(), (3, 4));
        assert_eq!(pass.output().shape(), (3, 1));
    }

    #[test]
    fn rejects_width_mismatch_and_non_finite_input() {
        let p = SequenceModelParams::zeros(2, 2, 1, HeadKind::PerStepLinear).unwrap();
        assert!(matches!(
            p.forward(&Matrix2D::zeros(3, 3)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(SequenceModelParams::zeros(2, 2, 3, HeadKind::FinalSoftmax2).is_err());
    }

    #[test]
    fn init_sets_forget_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = SequenceModelParams::init(2, 3, 2, HeadKind::FinalSoftmax2, &mut rng).unwrap();
        assert_eq!(p.b(), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let k = 1.0 / 3f64.sqrt();
        assert!(p.w().iter().all(|v| v.abs() < k));
    }
}
