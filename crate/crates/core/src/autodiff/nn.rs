use rand::Rng;

use super::{Gradients, Tape, Tensor, TensorError, Var};

/// Index of a tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub(crate) fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Records every parameter as a differentiable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound(self.values.iter().map(|v| tape.var(v.clone())).collect())
    }

    /// Records every parameter as a constant: gradients flow through it but
    /// are not collected.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound(self.values.iter().map(|v| tape.constant(v.clone())).collect())
    }

    /// Replaces values from `other`, matching by name and shape.
    pub fn load_from(&mut self, other: &ParamSet) -> Result<(), TensorError> {
        if other.names != self.names {
            return Err(TensorError::Format(format!(
                "parameter names differ: expected {} tensors, checkpoint has {}",
                self.len(),
                other.len()
            )));
        }
        for (name, (mine, theirs)) in self.names.iter().zip(self.values.iter_mut().zip(&other.values)) {
            if mine.shape() != theirs.shape() {
                return Err(TensorError::Format(format!(
                    "{name}: expected shape {:?}, checkpoint has {:?}",
                    mine.shape(),
                    theirs.shape()
                )));
            }
            *mine = theirs.clone();
        }
        Ok(())
    }
}

/// Parameters of one [`ParamSet`] recorded on a tape.
pub struct Bound<'t>(Vec<Var<'t>>);

impl<'t> Bound<'t> {
    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.0[id.0]
    }

    /// Gradient for every parameter, zero where the loss does not reach it.
    pub fn grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.0
            .iter()
            .map(|v| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(&v.shape())))
            .collect()
    }
}

/// Uniform samples in `[-bound, bound)`.
pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

/// He-uniform initialization: bound `sqrt(6 / fan_in)`.
pub fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    uniform(shape, (6.0 / fan_in as f64).sqrt(), rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(ps: &mut ParamSet, name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: ps.add(format!("{name}.weight"), he_uniform(&[outputs, inputs], inputs, rng)),
            bias: ps.add(format!("{name}.bias"), Tensor::zeros(&[outputs])),
        }
    }

    pub fn forward<'t>(&self, b: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>, TensorError> {
        x.linear(b.var(self.weight), b.var(self.bias))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv3d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv3d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_ch * k * k * k;
        Self {
            weight: ps.add(format!("{name}.weight"), he_uniform(&[out_ch, in_ch, k, k, k], fan_in, rng)),
            bias: ps.add(format!("{name}.bias"), Tensor::zeros(&[out_ch])),
            stride,
            pad,
        }
    }

    pub fn forward<'t>(&self, b: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>, TensorError> {
        x.conv3d(b.var(self.weight), b.var(self.bias), self.stride, self.pad)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvTranspose3d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose3d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        // each output voxel sees about in_ch * (k / stride)^3 taps
        let fan_in = (in_ch * k * k * k / (stride * stride * stride)).max(1);
        Self {
            weight: ps.add(format!("{name}.weight"), he_uniform(&[in_ch, out_ch, k, k, k], fan_in, rng)),
            bias: ps.add(format!("{name}.bias"), Tensor::zeros(&[out_ch])),
            stride,
            pad,
        }
    }

    pub fn forward<'t>(&self, b: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>, TensorError> {
        x.conv3d_transpose(b.var(self.weight), b.var(self.bias), self.stride, self.pad)
    }
}

/// Hidden and cell state of an LSTM, both `[N, H]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmState<'t> {
    pub h: Var<'t>,
    pub s: Var<'t>,
}

impl<'t> LstmState<'t> {
    pub fn zeros(tape: &'t Tape, batch: usize, hidden: usize) -> Self {
        Self {
            h: tape.constant(Tensor::zeros(&[batch, hidden])),
            s: tape.constant(Tensor::zeros(&[batch, hidden])),
        }
    }
}

/// Gate weights `[H, I + H]` and biases `[H]` of one cell.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams<'t> {
    pub w_i: Var<'t>,
    pub w_f: Var<'t>,
    pub w_o: Var<'t>,
    pub w_s: Var<'t>,
    pub b_i: Var<'t>,
    pub b_f: Var<'t>,
    pub b_o: Var<'t>,
    pub b_s: Var<'t>,
}

/// One LSTM step on `x: [N, I]`.
pub fn lstm_cell<'t>(
    x: Var<'t>,
    prev: &LstmState<'t>,
    p: &LstmParams<'t>,
) -> Result<LstmState<'t>, TensorError> {
    let xh = x.concat_cols(prev.h)?;
    let i = xh.linear(p.w_i, p.b_i)?.sigmoid();
    let f = xh.linear(p.w_f, p.b_f)?.sigmoid();
    let o = xh.linear(p.w_o, p.b_o)?.sigmoid();
    let cand = xh.linear(p.w_s, p.b_s)?.tanh();
    let s = f.mul(prev.s)?.add(i.mul(cand)?)?;
    let h = o.mul(s.tanh())?;
    Ok(LstmState { h, s })
}

/// LSTM layer parameters inside a [`ParamSet`].
#[derive(Debug, Clone, Copy)]
pub struct Lstm {
    pub input: usize,
    pub hidden: usize,
    w: [ParamId; 4],
    b: [ParamId; 4],
}

impl Lstm {
    pub fn new(ps: &mut ParamSet, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w = ["i", "f", "o", "s"]
            .map(|g| ps.add(format!("{name}.w_{g}"), uniform(&[hidden, input + hidden], bound, rng)));
        let b = ["i", "f", "o", "s"].map(|g| {
            let init = if g == "f" { 1.0 } else { 0.0 };
            ps.add(format!("{name}.b_{g}"), Tensor::full(&[hidden], init))
        });
        Self { input, hidden, w, b }
    }

    pub fn params<'t>(&self, b: &Bound<'t>) -> LstmParams<'t> {
        LstmParams {
            w_i: b.var(self.w[0]),
            w_f: b.var(self.w[1]),
            w_o: b.var(self.w[2]),
            w_s: b.var(self.w[3]),
            b_i: b.var(self.b[0]),
            b_f: b.var(self.b[1]),
            b_o: b.var(self.b[2]),
            b_s: b.var(self.b[3]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use crate::autodiff::sigmoid;

    fn zero_params<'t>(tape: &'t Tape, i: usize, h: usize, b_f: f64) -> LstmParams<'t> {
        let w = || tape.var(Tensor::zeros(&[h, i + h]));
        let b = |v: f64| tape.var(Tensor::full(&[h], v));
        LstmParams {
            w_i: w(),
            w_f: w(),
            w_o: w(),
            w_s: w(),
            b_i: b(0.0),
            b_f: b(b_f),
            b_o: b(0.0),
            b_s: b(0.0),
        }
    }

    #[test]
    fn lstm_zero_algebra() {
        let tape = Tape::new();
        let p = zero_params(&tape, 3, 4, 0.0);
        let x = tape.constant(Tensor::zeros(&[1, 3]));
        let next = lstm_cell(x, &LstmState::zeros(&tape, 1, 4), &p).unwrap();
        assert!(next.h.value().data().iter().all(|&v| v == 0.0));
        assert!(next.s.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_saturated_forget_gate_keeps_cell() {
        let tape = Tape::new();
        let p = zero_params(&tape, 2, 3, 20.0);
        let c = Tensor::new(vec![1, 3], vec![0.7, -1.2, 3.0]).unwrap();
        let prev = LstmState {
            h: tape.constant(Tensor::zeros(&[1, 3])),
            s: tape.constant(c.clone()),
        };
        let x = tape.constant(Tensor::full(&[1, 2], 0.4));
        let next = lstm_cell(x, &prev, &p).unwrap();
        let f = sigmoid(20.0);
        for (got, want) in next.s.value().data().iter().zip(c.data()) {
            assert!((got - f * want).abs() < 1e-15);
            assert!((got - want).abs() < 1e-8 * want.abs().max(1.0));
        }
    }

    #[test]
    fn he_uniform_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = he_uniform(&[64, 27], 27, &mut rng);
        let b = (6.0f64 / 27.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= b));
        assert!(t.max_abs() > 0.8 * b);
    }

    #[test]
    fn lstm_forget_bias_starts_at_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::new();
        Lstm::new(&mut ps, "lstm", 5, 4, &mut rng);
        let (_, bf) = ps.iter().find(|(n, _)| *n == "lstm.b_f").unwrap();
        assert_eq!(bf, &Tensor::ones(&[4]));
    }

    #[test]
    fn frozen_binding_passes_gradient_through() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", Tensor::scalar(3.0));
        let tape = Tape::new();
        let b = ps.bind_frozen(&tape);
        let x = tape.var(Tensor::scalar(2.0));
        let g = tape.backward(x.mul(b.var(w)).unwrap()).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 3.0);
        assert!(g.get(b.var(w)).is_none());
        assert_eq!(b.grads(&g)[0], Tensor::zeros(&[1]));
    }
}
