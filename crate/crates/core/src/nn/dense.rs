use rand::Rng;

use crate::error::ShapeError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, xs: &mut [f64]) {
        match self {
            Activation::Tanh => xs.iter_mut().for_each(|x| *x = x.tanh()),
            Activation::Relu => xs.iter_mut().for_each(|x| *x = x.max(0.0)),
            Activation::Identity => {}
        }
    }

    /// Derivative expressed through the activation's output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer. `weights[i * n_out + o]` connects input `i` to
/// output `o`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(n_in: usize, n_out: usize, activation: Activation) -> Self {
        Layer { n_in, n_out, weights: vec![0.0; n_in * n_out], bias: vec![0.0; n_out], activation }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Activations recorded by a batched forward pass; `acts[0]` is the input,
/// `acts[l + 1]` the post-activation output of layer `l`.
#[derive(Clone, Debug)]
pub struct Trace {
    pub batch: usize,
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace always holds the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.acts[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

impl DenseNet {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, ShapeError> {
        assert!(!layers.is_empty(), "a network needs at least one layer");
        for pair in layers.windows(2) {
            ShapeError::check("layer chaining", pair[0].n_out, pair[1].n_in)?;
        }
        Ok(DenseNet { layers })
    }

    /// `sizes = [in, h1, ..., out]`; hidden layers use `hidden`, the last
    /// layer is linear. Uniform `±1/sqrt(fan_in)` initialisation.
    pub fn mlp<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == sizes.len() { Activation::Identity } else { hidden };
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut l = Layer::zeros(w[0], w[1], act);
                l.weights.iter_mut().for_each(|x| *x = rng.random_range(-bound..bound));
                l.bias.iter_mut().for_each(|x| *x = rng.random_range(-bound..bound));
                l
            })
            .collect();
        DenseNet { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out
    }

    /// Layer widths `[in, h1, ..., out]`.
    pub fn shape(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.n_out)).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<(), ShapeError> {
        ShapeError::check("flat parameter vector", self.param_count(), flat.len())?;
        let mut o = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[o..o + nw]);
            o += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[o..o + nb]);
            o += nb;
        }
        Ok(())
    }

    pub fn params_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.bias).all(|x| x.is_finite()))
    }

    /// Applies `f(own, other)` to every parameter pair of two same-shaped nets.
    pub fn zip_params_mut(&mut self, other: &DenseNet, mut f: impl FnMut(&mut f64, f64)) {
        assert_eq!(self.shape(), other.shape(), "zip over differently shaped networks");
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, &y)| f(x, y));
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, &y)| f(x, y));
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, ShapeError> {
        Ok(self.forward_batch(input, 1)?.output().to_vec())
    }

    /// `input` holds `batch` rows of `input_dim` values.
    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Result<Trace, ShapeError> {
        ShapeError::check("network input", batch * self.input_dim(), input.len())?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for l in &self.layers {
            let x = acts.last().unwrap();
            let mut y = vec![0.0; batch * l.n_out];
            for b in 0..batch {
                let row = &mut y[b * l.n_out..(b + 1) * l.n_out];
                row.copy_from_slice(&l.bias);
                for (i, &xi) in x[b * l.n_in..(b + 1) * l.n_in].iter().enumerate() {
                    // Image inputs are mostly background zeros.
                    if xi == 0.0 {
                        continue;
                    }
                    let w = &l.weights[i * l.n_out..(i + 1) * l.n_out];
                    row.iter_mut().zip(w).for_each(|(r, &wi)| *r += xi * wi);
                }
                l.activation.apply(row);
            }
            acts.push(y);
        }
        Ok(Trace { batch, acts })
    }

    /// Gradient of `Σ output·out_grad` with respect to every parameter.
    pub fn backward(&self, input: &[f64], out_grad: &[f64]) -> Result<Vec<f64>, ShapeError> {
        let trace = self.forward_batch(input, 1)?;
        let mut g = vec![0.0; self.param_count()];
        self.backward_batch(&trace, out_grad, Some(&mut g), None)?;
        Ok(g)
    }

    /// Backpropagates `out_grad` (one row per batch element) through `trace`.
    ///
    /// Parameter gradients are *accumulated* into `param_grad`. When
    /// `input_grad` is `Some((buf, from))`, the gradient with respect to input
    /// columns `from..input_dim` is written to `buf` (`batch × (input_dim - from)`).
    pub fn backward_batch(
        &self,
        trace: &Trace,
        out_grad: &[f64],
        mut param_grad: Option<&mut [f64]>,
        input_grad: Option<(&mut [f64], usize)>,
    ) -> Result<(), ShapeError> {
        let batch = trace.batch;
        ShapeError::check("output gradient", batch * self.output_dim(), out_grad.len())?;
        if let Some(g) = param_grad.as_deref() {
            ShapeError::check("parameter gradient buffer", self.param_count(), g.len())?;
        }
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut o = 0;
        for l in &self.layers {
            offsets.push(o);
            o += l.param_count();
        }

        let mut input_grad = input_grad;
        let mut delta_out = out_grad.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let x = &trace.acts[li];
            let y = &trace.acts[li + 1];
            // Pre-activation gradient.
            let delta: Vec<f64> = delta_out
                .iter()
                .zip(y)
                .map(|(&d, &yv)| d * l.activation.derivative_from_output(yv))
                .collect();

            if let Some(g) = param_grad.as_deref_mut() {
                let base = offsets[li];
                let (gw, gb) = g[base..base + l.param_count()].split_at_mut(l.weights.len());
                for b in 0..batch {
                    let d = &delta[b * l.n_out..(b + 1) * l.n_out];
                    gb.iter_mut().zip(d).for_each(|(g, &dv)| *g += dv);
                    for (i, &xi) in x[b * l.n_in..(b + 1) * l.n_in].iter().enumerate() {
                        if xi == 0.0 {
                            continue;
                        }
                        gw[i * l.n_out..(i + 1) * l.n_out]
                            .iter_mut()
                            .zip(d)
                            .for_each(|(g, &dv)| *g += xi * dv);
                    }
                }
            }

            if li == 0 {
                if let Some((buf, from)) = input_grad.take() {
                    let width = l.n_in - from;
                    ShapeError::check("input gradient buffer", batch * width, buf.len())?;
                    for b in 0..batch {
                        let d = &delta[b * l.n_out..(b + 1) * l.n_out];
                        for i in from..l.n_in {
                            let w = &l.weights[i * l.n_out..(i + 1) * l.n_out];
                            buf[b * width + i - from] = w.iter().zip(d).map(|(a, b)| a * b).sum();
                        }
                    }
                }
            } else {
                let mut prev = vec![0.0; batch * l.n_in];
                for b in 0..batch {
                    let d = &delta[b * l.n_out..(b + 1) * l.n_out];
                    for i in 0..l.n_in {
                        let w = &l.weights[i * l.n_out..(i + 1) * l.n_out];
                        prev[b * l.n_in + i] = w.iter().zip(d).map(|(a, b)| a * b).sum();
                    }
                }
                delta_out = prev;
            }
        }
        Ok(())
    }
}
