//! Parameterized building blocks: conv, transposed conv, batch/layer norm,
//! linear, and the transformer MLP. Each struct owns its tensors, exposes a
//! `forward`, and registers its parameters (and stat buffers) under a dotted
//! prefix.

use crate::error::Result;
use crate::init::Rng;
use crate::ops;
use crate::params::ParamSet;
use crate::tape::Tape;
use crate::tensor::{Scalar, Tensor};

pub use crate::ops::Mode;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
pub const LN_EPS: f64 = 1e-6;

/// Weight-init family for the layer constructors.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Kaiming-normal with fan-out accounting — the CNN/decoder convention.
    KaimingFanOut,
    /// Truncated normal (±2 std) — the transformer convention.
    TruncNormal(f64),
}

fn init_weight<T: Scalar>(rng: &mut Rng, shape: Vec<usize>, fan_out: usize, init: Init) -> Tensor<T> {
    match init {
        Init::KaimingFanOut => rng.fill_kaiming(shape, fan_out),
        Init::TruncNormal(std) => rng.fill_trunc_normal(shape, std),
    }
}

pub struct Conv2d<T: Scalar> {
    pub weight: Tensor<T>, // Cout×Cin×kh×kw
    pub bias: Option<Tensor<T>>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl<T: Scalar> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rng: &mut Rng,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        bias: bool,
        init: Init,
    ) -> Self {
        let fan_out = cout * kernel.0 * kernel.1;
        Self {
            weight: init_weight(rng, vec![cout, cin, kernel.0, kernel.1], fan_out, init),
            bias: bias.then(|| Tensor::zeros(vec![cout])),
            stride,
            padding,
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv2d(tape, x, &self.weight, self.bias.as_ref(), self.stride, self.padding)
    }

    pub fn collect(&self, prefix: &str, params: &mut ParamSet<T>) {
        params.push(format!("{prefix}.weight"), &self.weight);
        if let Some(b) = &self.bias {
            params.push(format!("{prefix}.bias"), b);
        }
    }
}

pub struct ConvTranspose2d<T: Scalar> {
    pub weight: Tensor<T>, // Cin×Cout×kh×kw
    pub bias: Option<Tensor<T>>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new(
        rng: &mut Rng,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        bias: bool,
    ) -> Self {
        let fan_out = cout * kernel.0 * kernel.1;
        Self {
            weight: init_weight(rng, vec![cin, cout, kernel.0, kernel.1], fan_out, Init::KaimingFanOut),
            bias: bias.then(|| Tensor::zeros(vec![cout])),
            stride,
            padding: (0, 0),
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv_transpose2d(tape, x, &self.weight, self.bias.as_ref(), self.stride, self.padding)
    }

    pub fn collect(&self, prefix: &str, params: &mut ParamSet<T>) {
        params.push(format!("{prefix}.weight"), &self.weight);
        if let Some(b) = &self.bias {
            params.push(format!("{prefix}.bias"), b);
        }
    }
}

pub struct BatchNorm2d<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(vec![channels], T::ONE),
            beta: Tensor::zeros(vec![channels]),
            running_mean: Tensor::zeros(vec![channels]),
            running_var: Tensor::full(vec![channels], T::ONE),
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        ops::batch_norm2d(
            tape,
            x,
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
            mode,
            BN_MOMENTUM,
            BN_EPS,
        )
    }

    pub fn collect(&self, prefix: &str, params: &mut ParamSet<T>, buffers: &mut ParamSet<T>) {
        params.push(format!("{prefix}.gamma"), &self.gamma);
        params.push(format!("{prefix}.beta"), &self.beta);
        buffers.push(format!("{prefix}.running_mean"), &self.running_mean);
        buffers.push(format!("{prefix}.running_var"), &self.running_var);
    }
}

pub struct LayerNorm<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        Self { gamma: Tensor::full(vec![dim], T::ONE), beta: Tensor::zeros(vec![dim]) }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::layer_norm(tape, x, &self.gamma, &self.beta, LN_EPS)
    }

    pub fn collect(&self, prefix: &str, params: &mut ParamSet<T>) {
        params.push(format!("{prefix}.gamma"), &self.gamma);
        params.push(format!("{prefix}.beta"), &self.beta);
    }
}

pub struct Linear<T: Scalar> {
    pub weight: Tensor<T>, // out×in
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(rng: &mut Rng, din: usize, dout: usize, bias: bool, init: Init) -> Self {
        Self {
            weight: init_weight(rng, vec![dout, din], dout, init),
            bias: bias.then(|| Tensor::zeros(vec![dout])),
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::linear(tape, x, &self.weight, self.bias.as_ref())
    }

    pub fn collect(&self, prefix: &str, params: &mut ParamSet<T>) {
        params.push(format!("{prefix}.weight"), &self.weight);
        if let Some(b) = &self.bias {
            params.push(format!("{prefix}.bias"), b);
        }
    }
}

/// Transformer feed-forward: fc1 → GELU → fc2.
pub struct Mlp<T: Scalar> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(rng: &mut Rng, dim: usize, hidden: usize) -> Self {
        Self {
            fc1: Linear::new(rng, dim, hidden, true, Init::TruncNormal(0.02)),
            fc2: Linear::new(rng, hidden, dim, true, Init::TruncNormal(0.02)),
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.fc1.forward(tape, x)?;
        let h = ops::gelu(tape, &h)?;
        self.fc2.forward(tape, &h)
    }

    pub fn collect(&self, prefix: &str, params: &mut ParamSet<T>) {
        self.fc1.collect(&format!("{prefix}.fc1"), params);
        self.fc2.collect(&format!("{prefix}.fc2"), params);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{assert_grad_matches_fd, seeded_tensor};

    #[test]
    fn conv_layer_forward_matches_op_and_registers_params() {
        let mut rng = Rng::seeded(1);
        let conv = Conv2d::<f64>::new(&mut rng, 3, 5, (3, 3), (1, 1), (1, 1), true, Init::KaimingFanOut);
        let x = seeded_tensor::<f64>(vec![2, 3, 8, 8], 2, 1.0);
        let tape = Tape::no_grad();
        let y = conv.forward(&tape, &x).unwrap();
        assert_eq!(y.shape(), &[2, 5, 8, 8]);

        let mut ps = ParamSet::new();
        conv.collect("enc.conv", &mut ps);
        let names: Vec<&str> = ps.names().collect();
        assert_eq!(names, vec!["enc.conv.weight", "enc.conv.bias"]);
    }

    #[test]
    fn bn_layer_separates_params_from_buffers() {
        let bn = BatchNorm2d::<f64>::new(4);
        let (mut ps, mut bs) = (ParamSet::new(), ParamSet::new());
        bn.collect("bn", &mut ps, &mut bs);
        assert_eq!(ps.names().collect::<Vec<_>>(), vec!["bn.gamma", "bn.beta"]);
        assert_eq!(
            bs.names().collect::<Vec<_>>(),
            vec!["bn.running_mean", "bn.running_var"]
        );
    }

    #[test]
    fn mlp_gradients_flow_through_both_layers() {
        let mut rng = Rng::seeded(3);
        let mlp = Mlp::<f64>::new(&mut rng, 4, 8);
        let x = seeded_tensor::<f64>(vec![2, 3, 4], 4, 1.0);
        assert_grad_matches_fd(
            &[&x, &mlp.fc1.weight, &mlp.fc2.weight],
            |t, i| {
                let h = ops::linear(t, &i[0], &i[1], mlp.fc1.bias.as_ref())?;
                let h = ops::gelu(t, &h)?;
                ops::linear(t, &h, &i[2], mlp.fc2.bias.as_ref())
            },
            1e-5,
        );
    }

    #[test]
    fn trunc_normal_init_is_bounded() {
        let mut rng = Rng::seeded(5);
        let lin = Linear::<f64>::new(&mut rng, 64, 64, true, Init::TruncNormal(0.02));
        for v in lin.weight.to_vec() {
            assert!(v.abs() <= 0.04 + 1e-12);
        }
        assert!(lin.bias.unwrap().to_vec().iter().all(|&v| v == 0.0));
    }
}
