//! Fully connected networks whose parameters live outside any graph.
//!
//! A forward pass first [binds](Mlp::bind) the parameters into a graph (as
//! variables when trainable, as constants when frozen), runs the layers, and
//! after `backward` the gradients are pulled back with
//! [`Mlp::accumulate_grads`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply<F: Scalar>(self, g: &mut Graph<F>, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Identity => Ok(x),
        }
    }
}

/// A learned tensor and its most recent gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<F> {
    pub value: Tensor<F>,
    pub grad: Option<Tensor<F>>,
}

impl<F: Scalar> Param<F> {
    pub fn new(value: Tensor<F>) -> Self {
        Self { value, grad: None }
    }

    pub fn accumulate(&mut self, g: &Tensor<F>) -> Result<()> {
        match &mut self.grad {
            Some(acc) => acc.add_assign(g),
            None => {
                self.value.same_shape(g, "accumulate")?;
                self.grad = Some(g.clone());
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<F> {
    /// `fan_in x fan_out`
    pub weight: Param<F>,
    /// `1 x fan_out`
    pub bias: Param<F>,
    pub activation: Activation,
}

impl<F: Scalar> Dense<F> {
    pub fn fan_in(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.value.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<F> {
    layers: Vec<Dense<F>>,
}

/// Graph handles of one bound [`Mlp`].
#[derive(Clone, Debug)]
pub struct BoundMlp {
    vars: Vec<(Var, Var)>,
    activations: Vec<Activation>,
    trainable: bool,
}

impl BoundMlp {
    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, x: Var) -> Result<Var> {
        let mut h = x;
        for (&(w, b), &act) in self.vars.iter().zip(&self.activations) {
            let lin = g.matmul(h, w)?;
            let lin = g.add_row(lin, b)?;
            h = act.apply(g, lin)?;
        }
        Ok(h)
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    /// Weight and bias handles, layer by layer.
    pub fn vars(&self) -> &[(Var, Var)] {
        &self.vars
    }
}

impl<F: Scalar> Mlp<F> {
    /// Glorot-uniform weights, zero biases. `activations[i]` follows layer `i`.
    pub fn new<R: Rng + ?Sized>(
        widths: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        Self::check_widths(widths, activations)?;
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| F::lit(rng.gen_range(-limit..=limit)))
                    .collect();
                Dense {
                    weight: Param::new(Tensor::from_vec(fan_in, fan_out, data).expect("sized")),
                    bias: Param::new(Tensor::zeros(1, fan_out)),
                    activation,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// Hidden layers use `hidden`, the last layer `output`.
    pub fn with_activations<R: Rng + ?Sized>(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let n = widths.len().saturating_sub(1);
        let mut acts = vec![hidden; n];
        if let Some(last) = acts.last_mut() {
            *last = output;
        }
        Self::new(widths, &acts, rng)
    }

    pub fn from_layers(layers: Vec<Dense<F>>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::Invalid(format!(
                    "layer widths {} -> {} do not chain",
                    pair[0].fan_out(),
                    pair[1].fan_in()
                )));
            }
        }
        for l in &layers {
            if l.bias.value.shape() != (1, l.fan_out()) {
                return Err(Error::Invalid("bias must be a 1 x fan_out row".into()));
            }
        }
        if layers.is_empty() {
            return Err(Error::Invalid("an MLP needs at least one layer".into()));
        }
        Ok(Self { layers })
    }

    fn check_widths(widths: &[usize], activations: &[Activation]) -> Result<()> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Invalid(format!("bad layer widths {widths:?}")));
        }
        if activations.len() != widths.len() - 1 {
            return Err(Error::Invalid(format!(
                "{} activations for {} layers",
                activations.len(),
                widths.len() - 1
            )));
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Dense<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<F>] {
        &mut self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].fan_in()];
        w.extend(self.layers.iter().map(Dense::fan_out));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    /// `Σ (w_i·w_{i+1} + w_{i+1})`
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.value.len() + l.bias.value.len())
            .sum()
    }

    /// Sets the last layer's weights and bias to zero, so the network outputs
    /// exactly zero for any input.
    pub fn zero_last_layer(&mut self) {
        let last = self.layers.last_mut().expect("non-empty");
        last.weight
            .value
            .data_mut()
            .iter_mut()
            .for_each(|x| *x = F::zero());
        last.bias
            .value
            .data_mut()
            .iter_mut()
            .for_each(|x| *x = F::zero());
    }

    pub fn bind(&self, g: &mut Graph<F>, trainable: bool) -> BoundMlp {
        let vars = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (
                        g.variable(l.weight.value.clone()),
                        g.variable(l.bias.value.clone()),
                    )
                } else {
                    (
                        g.constant(l.weight.value.clone()),
                        g.constant(l.bias.value.clone()),
                    )
                }
            })
            .collect();
        BoundMlp {
            vars,
            activations: self.activations(),
            trainable,
        }
    }

    /// Adds the gradients of a trainable binding onto the parameters.
    pub fn accumulate_grads(&mut self, bound: &BoundMlp, grads: &Gradients<F>) -> Result<()> {
        if !bound.trainable {
            return Ok(());
        }
        if bound.vars.len() != self.layers.len() {
            return Err(Error::ParamCountMismatch {
                expected: self.layers.len(),
                got: bound.vars.len(),
            });
        }
        for (layer, &(w, b)) in self.layers.iter_mut().zip(&bound.vars) {
            // A layer can be cut off from the root (e.g. zero upstream); its
            // gradient is then zero, not missing.
            match grads.wrt(w) {
                Ok(gw) => layer.weight.accumulate(gw)?,
                Err(_) => layer
                    .weight
                    .accumulate(&Tensor::zeros(layer.fan_in(), layer.fan_out()))?,
            }
            match grads.wrt(b) {
                Ok(gb) => layer.bias.accumulate(gb)?,
                Err(_) => layer.bias.accumulate(&Tensor::zeros(1, layer.fan_out()))?,
            }
        }
        Ok(())
    }

    /// Forward pass on a batch without keeping a graph around.
    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let input = g.constant(x.clone());
        let out = bound.forward(&mut g, input)?;
        Ok(g.value(out).clone())
    }

    pub fn params(&self) -> Vec<&Param<F>> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.grad = None;
        }
    }

    pub fn cast<G: Scalar>(&self) -> Mlp<G> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: Param::new(l.weight.value.cast()),
                    bias: Param::new(l.bias.value.cast()),
                    activation: l.activation,
                })
                .collect(),
        }
    }
}
