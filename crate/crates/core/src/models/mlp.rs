use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{BoundParams, ParamVector};
use crate::ad::{Activation, Tape, Tensor, Var};
use crate::{Error, Result};

/// Layer widths and activations of a fully connected network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// `[input, hidden.., output]`.
    pub widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl MlpSpec {
    pub fn new(
        widths: Vec<usize>,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        if widths.len() < 3 {
            return Err(Error::Spec(format!(
                "an MLP needs at least one hidden layer, got widths {widths:?}"
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Spec(format!("zero width in {widths:?}")));
        }
        Ok(Self {
            widths,
            hidden_activation,
            output_activation,
        })
    }

    /// Tanh hidden layers with a linear output.
    pub fn tanh(widths: Vec<usize>) -> Result<Self> {
        Self::new(widths, Activation::Tanh, Activation::Identity)
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// `(rows, cols)` of each parameter block: weight `[in, out]` then bias
    /// `[1, out]` for every layer.
    pub fn block_shapes(&self) -> Vec<(usize, usize)> {
        self.widths
            .windows(2)
            .flat_map(|w| [(w[0], w[1]), (1, w[1])])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }
}

/// A network and its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: ParamVector,
}

impl Mlp {
    pub fn zeros(spec: MlpSpec) -> Self {
        let params = ParamVector::zeros(&spec.block_shapes());
        Self { spec, params }
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Self {
        let mut mlp = Self::zeros(spec);
        let bounds: Vec<f64> = mlp
            .spec
            .widths
            .windows(2)
            .flat_map(|w| {
                let b = 1.0 / (w[0] as f64).sqrt();
                [b, b]
            })
            .collect();
        mlp.params.fill_uniform(&bounds, rng);
        mlp
    }

    pub fn from_values(spec: MlpSpec, values: Vec<f64>) -> Result<Self> {
        let params = ParamVector::from_values(&spec.block_shapes(), values)?;
        Ok(Self { spec, params })
    }

    /// Weight block of `layer`, row-major `[in, out]`.
    pub fn weight(&self, layer: usize) -> &[f64] {
        self.params.block(2 * layer)
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        self.params.block(2 * layer + 1)
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut [f64] {
        self.params.block_mut(2 * layer)
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        self.params.block_mut(2 * layer + 1)
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundMlp> {
        Ok(BoundMlp {
            spec: self.spec.clone(),
            params: self.params.bind(tape, trainable)?,
        })
    }

    /// Evaluates the network on a batch of rows without keeping gradients.
    pub fn forward_values(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let net = self.bind(&mut tape, false)?;
        let xv = tape.constant(x.clone())?;
        let y = net.forward(&mut tape, xv)?;
        Ok(tape.value(y).clone())
    }
}

/// An [`Mlp`] recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    pub spec: MlpSpec,
    pub params: BoundParams,
}

/// Intermediate values of a forward pass.
pub struct ForwardTrace {
    /// Pre-activation of every layer, including the output layer.
    pub pre: Vec<Var>,
    /// Post-activation of every hidden layer.
    pub hidden: Vec<Var>,
    pub output: Var,
}

impl BoundMlp {
    fn weight(&self, layer: usize) -> Var {
        self.params.vars[2 * layer]
    }

    fn bias(&self, layer: usize) -> Var {
        self.params.vars[2 * layer + 1]
    }

    fn check_input(&self, tape: &Tape, x: Var) -> Result<()> {
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[1] != self.spec.input_dim() {
            return Err(Error::Dimension(format!(
                "network expects {} inputs, got shape {shape:?}",
                self.spec.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward_trace(&self, tape: &mut Tape, x: Var) -> Result<ForwardTrace> {
        self.check_input(tape, x)?;
        let n = self.spec.num_layers();
        let mut pre = Vec::with_capacity(n);
        let mut hidden = Vec::with_capacity(n - 1);
        let mut h = x;
        for layer in 0..n {
            let a = tape.matmul(h, self.weight(layer))?;
            let a = tape.add_row(a, self.bias(layer))?;
            pre.push(a);
            h = tape.activate(a, self.spec.activation(layer))?;
            if layer + 1 < n {
                hidden.push(h);
            }
        }
        Ok(ForwardTrace {
            pre,
            hidden,
            output: h,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        Ok(self.forward_trace(tape, x)?.output)
    }

    /// Gradient of the scalar output with respect to the input rows, built
    /// as an explicit first-order graph:
    /// `δ_L = σ_out'(a_L)`, `δ_{l-1} = (δ_l W_lᵀ) ⊙ σ'(a_{l-1})`, `∇x = δ_1 W_1ᵀ`.
    /// Backpropagating through the result gives exact parameter gradients of
    /// anything built on top of `∇x`.
    pub fn input_gradient(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.spec.output_dim() != 1 {
            return Err(Error::Spec(format!(
                "input gradient needs a scalar output, network has {}",
                self.spec.output_dim()
            )));
        }
        let trace = self.forward_trace(tape, x)?;
        let rows = tape.shape(x)[0];
        let n = self.spec.num_layers();
        let mut delta = match self.spec.output_activation {
            Activation::Identity => tape.constant(Tensor::filled(vec![rows, 1], 1.0))?,
            act => tape.activation_derivative(trace.pre[n - 1], act)?,
        };
        for layer in (0..n).rev() {
            delta = tape.matmul_bt(delta, self.weight(layer))?;
            if layer > 0 {
                let d = tape.activation_derivative(trace.pre[layer - 1], self.spec.hidden_activation)?;
                delta = tape.mul(delta, d)?;
            }
        }
        Ok(delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn eval_scalar(mlp: &Mlp, x: &[f64]) -> f64 {
        mlp.forward_values(&Tensor::row(x.to_vec())).unwrap().data()[0]
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::tanh(vec![2, 1]).is_err());
        assert!(MlpSpec::tanh(vec![2, 0, 1]).is_err());
        let s = MlpSpec::tanh(vec![20, 256, 1]).unwrap();
        assert_eq!(s.param_count(), 20 * 256 + 256 + 256 + 1);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mlp = Mlp::zeros(MlpSpec::tanh(vec![3, 5, 2]).unwrap());
        let y = mlp.forward_values(&Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.1, 9.0])).unwrap();
        assert_eq!(y.data(), &[0.0; 4]);
    }

    #[test]
    fn unit_chain_at_zero() {
        let mut mlp = Mlp::zeros(MlpSpec::tanh(vec![1, 1, 1]).unwrap());
        mlp.weight_mut(0)[0] = 1.0;
        mlp.weight_mut(1)[0] = 1.0;
        assert_eq!(eval_scalar(&mlp, &[0.0]), 0.0);
    }

    #[test]
    fn matches_hand_rolled_matrix_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mlp = Mlp::init(MlpSpec::tanh(vec![2, 3, 1]).unwrap(), &mut rng);
        let x = [0.7, -1.3];
        let w1 = mlp.weight(0);
        let b1 = mlp.bias(0);
        let w2 = mlp.weight(1);
        let b2 = mlp.bias(1);
        let mut y = b2[0];
        for j in 0..3 {
            let a = x[0] * w1[j] + x[1] * w1[3 + j] + b1[j];
            y += a.tanh() * w2[j];
        }
        assert!((eval_scalar(&mlp, &x) - y).abs() < 1e-12);
    }

    #[test]
    fn one_hidden_layer_gradient_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mlp = Mlp::init(MlpSpec::tanh(vec![3, 4, 1]).unwrap(), &mut rng);
        let x = vec![0.2, -0.4, 1.1];
        let mut tape = Tape::new();
        let net = mlp.bind(&mut tape, false).unwrap();
        let xv = tape.constant(Tensor::row(x.clone())).unwrap();
        let g = net.input_gradient(&mut tape, xv).unwrap();
        let g = tape.value(g).data().to_vec();

        // W₁ᵀ (w₂ ⊙ (1 − tanh²(W₁x + b₁)))
        let (w1, b1, w2) = (mlp.weight(0), mlp.bias(0), mlp.weight(1));
        let mut expected = [0.0; 3];
        for j in 0..4 {
            let a: f64 = (0..3).map(|i| x[i] * w1[i * 4 + j]).sum::<f64>() + b1[j];
            let s = w2[j] * (1.0 - a.tanh().powi(2));
            for i in 0..3 {
                expected[i] += w1[i * 4 + j] * s;
            }
        }
        for i in 0..3 {
            assert!((g[i] - expected[i]).abs() < 1e-12);
            let h = 1e-6;
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (eval_scalar(&mlp, &xp) - eval_scalar(&mlp, &xm)) / (2.0 * h);
            assert!((g[i] - fd).abs() / fd.abs().max(1.0) < 1e-6);
        }
    }

    #[test]
    fn deep_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for act in [Activation::Tanh, Activation::Sigmoid] {
            for out in [Activation::Identity, Activation::Sigmoid] {
                let spec = MlpSpec::new(vec![4, 6, 5, 3, 1], act, out).unwrap();
                let mlp = Mlp::init(spec, &mut rng);
                let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
                let mut tape = Tape::new();
                let net = mlp.bind(&mut tape, false).unwrap();
                let xv = tape.constant(Tensor::row(x.clone())).unwrap();
                let g = net.input_gradient(&mut tape, xv).unwrap();
                let g = tape.value(g).data().to_vec();
                for i in 0..4 {
                    let h = 1e-5;
                    let mut xp = x.clone();
                    xp[i] += h;
                    let mut xm = x.clone();
                    xm[i] -= h;
                    let fd = (eval_scalar(&mlp, &xp) - eval_scalar(&mlp, &xm)) / (2.0 * h);
                    assert!((g[i] - fd).abs() / fd.abs().max(1e-3) < 1e-6, "{act:?}/{out:?}");
                }
            }
        }
    }

    #[test]
    fn input_gradient_is_lipschitz_smooth() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mlp = Mlp::init(MlpSpec::tanh(vec![2, 16, 1]).unwrap(), &mut rng);
        let grad_at = |x: Vec<f64>| {
            let mut tape = Tape::new();
            let net = mlp.bind(&mut tape, false).unwrap();
            let xv = tape.constant(Tensor::row(x)).unwrap();
            let g = net.input_gradient(&mut tape, xv).unwrap();
            tape.value(g).data().to_vec()
        };
        let x0 = vec![0.3, -0.2];
        // empirical Lipschitz constant from a moderate step, then check a smaller one
        let g0 = grad_at(x0.clone());
        let h = 1e-2;
        let g1 = grad_at(vec![x0[0] + h, x0[1]]);
        let lip = g0.iter().zip(&g1).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / h;
        let g2 = grad_at(vec![x0[0] + 1e-4, x0[1]]);
        let d = g0.iter().zip(&g2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(d <= 2.0 * lip * 1e-4);
    }

    #[test]
    fn input_gradient_requires_scalar_output() {
        let mlp = Mlp::zeros(MlpSpec::tanh(vec![2, 3, 2]).unwrap());
        let mut tape = Tape::new();
        let net = mlp.bind(&mut tape, false).unwrap();
        let x = tape.constant(Tensor::row(vec![0.0, 0.0])).unwrap();
        assert!(net.input_gradient(&mut tape, x).is_err());
        let bad = tape.constant(Tensor::row(vec![0.0; 3])).unwrap();
        assert!(net.forward(&mut tape, bad).is_err());
    }
}
