use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Differentiable, Predictor, Task};
use crate::data::{stats_of, LabeledData};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpSpec {
    /// Number of hidden ReLU layers.
    pub layers: usize,
    pub neurons: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// `None` trains on the full dataset each step.
    pub batch_size: Option<usize>,
}

impl Default for MlpSpec {
    fn default() -> Self {
        MlpSpec {
            layers: 3,
            neurons: 32,
            epochs: 500,
            learning_rate: 1e-3,
            batch_size: None,
        }
    }
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.neurons == 0 {
            return Err(Error::invalid("mlp needs layers >= 1 and neurons >= 1"));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == Some(0) {
            return Err(Error::invalid("mlp needs a positive learning rate and batch size"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Dense {
    /// out × in
    weights: Array2<f64>,
    bias: Array1<f64>,
}

impl Dense {
    fn he(fan_in: usize, fan_out: usize, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let sd = (gain / fan_in as f64).sqrt();
        Dense {
            weights: Array2::from_shape_simple_fn((fan_out, fan_in), || sd * rng.sample::<f64, _>(StandardNormal)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn apply(&self, h: &Array2<f64>) -> Array2<f64> {
        h.dot(&self.weights.t()) + &self.bias
    }
}

/// Fully connected ReLU network with a scalar output.
///
/// Inputs are standardized with the training means and deviations; regression
/// outputs are rescaled to the training target's scale, classification outputs
/// pass through the logistic function. Both affine maps are part of the model
/// and enter the input gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    hidden: Vec<Dense>,
    output: Dense,
    input_mean: Array1<f64>,
    input_scale: Array1<f64>,
    output_shift: f64,
    output_scale: f64,
    task: Task,
}

struct Forward {
    /// Pre-activations of every hidden layer.
    pre: Vec<Array2<f64>>,
    /// Post-activations, starting with the standardized input.
    post: Vec<Array2<f64>>,
    raw: Array1<f64>,
}

impl Mlp {
    pub fn fit(data: &LabeledData, spec: &MlpSpec, task: Task, seed: u64) -> Result<Self> {
        spec.validate()?;
        let x = data.features.values();
        let y = task.training_target(&data.target);
        let n = y.len();
        let stats = stats_of(x);
        let input_mean = Array1::from(stats.mean);
        let input_scale = Array1::from(stats.sd).mapv(|s| if s > 0.0 { s } else { 1.0 });
        let (output_shift, output_scale, fit_target) = match task {
            Task::Regression => {
                let ys = stats_of(y.view().insert_axis(Axis(1)));
                // a constant target gives scale 0, so predictions equal it exactly
                let scale = ys.sd[0];
                let divisor = if scale > 0.0 { scale } else { 1.0 };
                (ys.mean[0], scale, y.mapv(|v| (v - ys.mean[0]) / divisor))
            }
            Task::Classification { .. } => (0.0, 1.0, y.clone()),
        };

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fan_in = x.ncols();
        let mut hidden = Vec::with_capacity(spec.layers);
        for _ in 0..spec.layers {
            hidden.push(Dense::he(fan_in, spec.neurons, 2.0, &mut rng));
            fan_in = spec.neurons;
        }
        let output = Dense::he(fan_in, 1, 1.0, &mut rng);
        let mut mlp = Mlp {
            hidden,
            output,
            input_mean,
            input_scale,
            output_shift,
            output_scale,
            task,
        };

        let adam = AdamConfig::with_learning_rate(spec.learning_rate);
        let mut opt: Vec<(Adam, Adam)> = mlp
            .layers()
            .map(|d| (Adam::new(d.weights.len(), adam), Adam::new(d.bias.len(), adam)))
            .collect();
        let standardized = mlp.standardize(x);
        let batch = spec.batch_size.unwrap_or(n).min(n);
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..spec.epochs {
            if batch < n {
                order.shuffle(&mut rng);
            }
            for chunk in order.chunks(batch) {
                let (xb, tb) = if batch < n {
                    (standardized.select(Axis(0), chunk), fit_target.select(Axis(0), chunk))
                } else {
                    (standardized.clone(), fit_target.clone())
                };
                let grads = mlp.parameter_gradients(xb, &tb);
                for (layer, ((opt_w, opt_b), (gw, gb))) in
                    mlp.layers_mut().zip(opt.iter_mut().zip(grads.iter()))
                {
                    opt_w.step(layer.weights.as_slice_mut().expect("standard layout"), gw.as_slice().expect("standard layout"));
                    opt_b.step(layer.bias.as_slice_mut().expect("standard layout"), gb.as_slice().expect("standard layout"));
                }
            }
        }
        if mlp.layers().any(|d| d.weights.iter().any(|w| !w.is_finite())) {
            return Err(Error::DegenerateFit("mlp training diverged".into()));
        }
        Ok(mlp)
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn architecture(&self) -> (usize, usize) {
        (self.hidden.len(), self.hidden[0].bias.len())
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.hidden.iter().chain(std::iter::once(&self.output))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.hidden.iter_mut().chain(std::iter::once(&mut self.output))
    }

    fn standardize(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.input_mean) / &self.input_scale
    }

    fn forward_standardized(&self, h0: Array2<f64>) -> Forward {
        let mut pre = Vec::with_capacity(self.hidden.len());
        let mut post = Vec::with_capacity(self.hidden.len() + 1);
        post.push(h0);
        for layer in &self.hidden {
            let z = layer.apply(post.last().expect("input present"));
            post.push(z.mapv(|v| v.max(0.0)));
            pre.push(z);
        }
        let raw = self
            .output
            .apply(post.last().expect("input present"))
            .remove_axis(Axis(1));
        Forward { pre, post, raw }
    }

    /// Hidden-layer pre-activations for each row (useful for locating ReLU kinks).
    pub fn hidden_pre_activations(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        self.forward_standardized(self.standardize(x)).pre
    }

    fn finish(&self, raw: f64) -> f64 {
        match self.task {
            Task::Regression => self.output_shift + self.output_scale * raw,
            Task::Classification { .. } => 1.0 / (1.0 + (-raw).exp()),
        }
    }

    /// Backpropagates `delta` (d/d raw output, one per row) to the standardized input.
    /// Returns per-layer (weight, bias) gradients when `collect` is set.
    fn backward(&self, fwd: &Forward, delta: &Array1<f64>, collect: bool) -> (Array2<f64>, Vec<(Array2<f64>, Array1<f64>)>) {
        let mut grads = Vec::new();
        let d = delta.view().insert_axis(Axis(1)).to_owned();
        if collect {
            let last = fwd.post.last().expect("input present");
            grads.push((d.t().dot(last), d.sum_axis(Axis(0))));
        }
        let mut g = d.dot(&self.output.weights);
        for (layer, (z, a_prev)) in self
            .hidden
            .iter()
            .zip(fwd.pre.iter().zip(fwd.post.iter()))
            .rev()
        {
            Zip::from(&mut g).and(z).for_each(|g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
            if collect {
                grads.push((g.t().dot(a_prev), g.sum_axis(Axis(0))));
            }
            g = g.dot(&layer.weights);
        }
        // collected output-first; flip to hidden layers first, output last
        grads.reverse();
        (g, grads)
    }

    fn parameter_gradients(&self, xb: Array2<f64>, target: &Array1<f64>) -> Vec<(Array2<f64>, Array1<f64>)> {
        let n = target.len() as f64;
        let fwd = self.forward_standardized(xb);
        let delta = match self.task {
            // mean squared error on the standardized target
            Task::Regression => (&fwd.raw - target) * (2.0 / n),
            // logistic log-loss with logits
            Task::Classification { .. } => {
                (fwd.raw.mapv(|r| 1.0 / (1.0 + (-r).exp())) - target) / n
            }
        };
        self.backward(&fwd, &delta, true).1
    }
}

impl Predictor for Mlp {
    fn n_features(&self) -> usize {
        self.input_mean.len()
    }

    fn predict_rows(&self, x: ArrayView2<f64>) -> Array1<f64> {
        self.forward_standardized(self.standardize(x)).raw.mapv(|r| self.finish(r))
    }
}

impl Differentiable for Mlp {
    fn input_gradient_rows(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.predict_with_gradient_rows(x).1
    }

    fn predict_with_gradient_rows(&self, x: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
        let fwd = self.forward_standardized(self.standardize(x));
        let delta = match self.task {
            Task::Regression => Array1::from_elem(fwd.raw.len(), self.output_scale),
            Task::Classification { .. } => fwd.raw.mapv(|r| {
                let p = 1.0 / (1.0 + (-r).exp());
                p * (1.0 - p)
            }),
        };
        let (g, _) = self.backward(&fwd, &delta, false);
        (fwd.raw.mapv(|r| self.finish(r)), g / &self.input_scale)
    }
}
