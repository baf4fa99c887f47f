use crate::error::Result;
use crate::nn::{Conv2d, ConvTranspose2d, ParamSet};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub enum Layer {
    Conv(Conv2d),
    ConvT(ConvTranspose2d),
    Relu,
    LeakyRelu(f64),
    Tanh,
    /// `x + inner(x)`
    Residual(Seq),
}

#[derive(Debug)]
enum Trace {
    Input(Tensor),
    Output(Tensor),
    Residual(SeqTrace),
}

/// Activations recorded by [`Seq::forward`] for the backward pass.
#[derive(Debug, Default)]
pub struct SeqTrace(Vec<Trace>);

/// A feed-forward stack of layers over NCHW tensors.
#[derive(Clone, Debug, Default)]
pub struct Seq {
    pub layers: Vec<Layer>,
}

impl Seq {
    pub fn eval(&self, ps: &ParamSet, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Conv(c) => c.forward(ps, &h)?,
                Layer::ConvT(c) => c.forward(ps, &h)?,
                Layer::Relu => h.map(|v| v.max(0.0)),
                Layer::LeakyRelu(a) => h.map(|v| if v > 0.0 { v } else { a * v }),
                Layer::Tanh => h.map(f64::tanh),
                Layer::Residual(inner) => {
                    let mut out = inner.eval(ps, &h)?;
                    out.add_assign(&h);
                    out
                }
            };
        }
        Ok(h)
    }

    pub fn forward(&self, ps: &ParamSet, x: &Tensor) -> Result<(Tensor, SeqTrace)> {
        let mut trace = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Conv(c) => {
                    let out = c.forward(ps, &h)?;
                    trace.push(Trace::Input(h));
                    out
                }
                Layer::ConvT(c) => {
                    let out = c.forward(ps, &h)?;
                    trace.push(Trace::Input(h));
                    out
                }
                Layer::Relu | Layer::LeakyRelu(_) | Layer::Tanh => {
                    let out = match layer {
                        Layer::Relu => h.map(|v| v.max(0.0)),
                        Layer::LeakyRelu(a) => h.map(|v| if v > 0.0 { v } else { a * v }),
                        _ => h.map(f64::tanh),
                    };
                    trace.push(Trace::Output(out.clone()));
                    out
                }
                Layer::Residual(inner) => {
                    let (mut out, t) = inner.forward(ps, &h)?;
                    out.add_assign(&h);
                    trace.push(Trace::Residual(t));
                    out
                }
            };
        }
        Ok((h, SeqTrace(trace)))
    }

    /// Returns the gradient with respect to the input; parameter gradients are
    /// accumulated into `grads` when given.
    pub fn backward(&self, ps: &ParamSet, trace: &SeqTrace, dout: &Tensor, mut grads: Option<&mut ParamSet>) -> Tensor {
        let mut d = dout.clone();
        for (layer, t) in self.layers.iter().zip(&trace.0).rev() {
            d = match (layer, t) {
                (Layer::Conv(c), Trace::Input(x)) => c.backward(ps, x, &d, grads.as_deref_mut()),
                (Layer::ConvT(c), Trace::Input(x)) => c.backward(ps, x, &d, grads.as_deref_mut()),
                (Layer::Relu, Trace::Output(y)) => {
                    for (g, &o) in d.data_mut().iter_mut().zip(y.data()) {
                        if o <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    d
                }
                (Layer::LeakyRelu(a), Trace::Output(y)) => {
                    for (g, &o) in d.data_mut().iter_mut().zip(y.data()) {
                        if o <= 0.0 {
                            *g *= a;
                        }
                    }
                    d
                }
                (Layer::Tanh, Trace::Output(y)) => {
                    for (g, &o) in d.data_mut().iter_mut().zip(y.data()) {
                        *g *= 1.0 - o * o;
                    }
                    d
                }
                (Layer::Residual(inner), Trace::Residual(t)) => {
                    let mut dx = inner.backward(ps, t, &d, grads.as_deref_mut());
                    dx.add_assign(&d);
                    dx
                }
                _ => unreachable!("trace does not match layer"),
            };
        }
        d
    }

    /// Indices of every parameter owned by this stack.
    pub fn param_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => out.extend([c.weight, c.bias]),
                Layer::ConvT(c) => out.extend([c.weight, c.bias]),
                Layer::Residual(inner) => out.extend(inner.param_indices()),
                _ => {}
            }
        }
        out
    }
}

/// Appends layers to a [`Seq`] while registering parameters under `prefix`.
pub struct SeqBuilder<'a> {
    ps: &'a mut ParamSet,
    rng: &'a mut Rng,
    prefix: String,
    seq: Seq,
}

impl<'a> SeqBuilder<'a> {
    pub fn new(ps: &'a mut ParamSet, rng: &'a mut Rng, prefix: &str) -> Self {
        Self { ps, rng, prefix: prefix.to_string(), seq: Seq::default() }
    }

    fn next_name(&self) -> String {
        format!("{}.{}", self.prefix, self.seq.layers.len())
    }

    pub fn conv(mut self, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Self {
        let name = self.next_name();
        let c = Conv2d::new(self.ps, &name, cin, cout, k, stride, pad, self.rng);
        self.seq.layers.push(Layer::Conv(c));
        self
    }

    pub fn conv_t(mut self, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Self {
        let name = self.next_name();
        let c = ConvTranspose2d::new(self.ps, &name, cin, cout, k, stride, pad, self.rng);
        self.seq.layers.push(Layer::ConvT(c));
        self
    }

    pub fn relu(mut self) -> Self {
        self.seq.layers.push(Layer::Relu);
        self
    }

    pub fn leaky_relu(mut self, slope: f64) -> Self {
        self.seq.layers.push(Layer::LeakyRelu(slope));
        self
    }

    pub fn tanh(mut self) -> Self {
        self.seq.layers.push(Layer::Tanh);
        self
    }

    /// Residual block `x + conv1x1(relu(conv3x3(relu(x))))`.
    pub fn res_block(mut self, channels: usize, hidden: usize) -> Self {
        let prefix = self.next_name();
        let inner = SeqBuilder::new(self.ps, self.rng, &prefix)
            .relu()
            .conv(channels, hidden, 3, 1, 1)
            .relu()
            .conv(hidden, channels, 1, 1, 0)
            .build();
        self.seq.layers.push(Layer::Residual(inner));
        self
    }

    pub fn build(self) -> Seq {
        self.seq
    }
}
