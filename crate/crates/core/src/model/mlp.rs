use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{LabelDistributions, LocalDataset};
use super::params::ParamVector;
use crate::error::{Error, Result};

/// Which parameter spans local training may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrainMode {
    #[default]
    Full,
    /// Only the output layer moves; every other entry stays bit-identical.
    LastLayerOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub mode: TrainMode,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            lr: 0.05,
            batch_size: 10,
            mode: TrainMode::Full,
        }
    }
}

/// Softmax classifier with an optional ReLU hidden layer.
///
/// Flattened layout, layer-major and row-major within a layer:
/// `[W1 (hidden x input), b1, W2 (classes x hidden), b2]`, or `[W, b]` when
/// there is no hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    pub input_dim: usize,
    pub hidden: Option<usize>,
    pub classes: usize,
}

impl Mlp {
    pub fn new(input_dim: usize, hidden: usize, classes: usize) -> Self {
        Self {
            input_dim,
            hidden: Some(hidden),
            classes,
        }
    }

    pub fn linear(input_dim: usize, classes: usize) -> Self {
        Self {
            input_dim,
            hidden: None,
            classes,
        }
    }

    pub fn layout(&self) -> Vec<usize> {
        match self.hidden {
            Some(h) => {
                let l1 = h * self.input_dim + h;
                vec![0, l1, l1 + self.classes * h + self.classes]
            }
            None => vec![0, self.classes * self.input_dim + self.classes],
        }
    }

    pub fn param_count(&self) -> usize {
        *self.layout().last().unwrap()
    }

    pub fn zeros(&self) -> ParamVector {
        ParamVector::new(vec![0.0; self.param_count()], self.layout()).expect("layout is valid")
    }

    /// Uniform Glorot initialisation for weights, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut v = Vec::with_capacity(self.param_count());
        let mut push_layer = |v: &mut Vec<f64>, rows: usize, cols: usize| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            for _ in 0..rows * cols {
                v.push(rng.random_range(-bound..bound));
            }
            v.extend(std::iter::repeat_n(0.0, rows));
        };
        match self.hidden {
            Some(h) => {
                push_layer(&mut v, h, self.input_dim);
                push_layer(&mut v, self.classes, h);
            }
            None => push_layer(&mut v, self.classes, self.input_dim),
        }
        ParamVector::new(v, self.layout()).expect("layout is valid")
    }

    fn check(&self, params: &ParamVector, data: Option<&LocalDataset>) -> Result<()> {
        if params.boundaries() != self.layout().as_slice() {
            return Err(Error::invalid(format!(
                "parameter layout {:?} does not match architecture {:?}",
                params.boundaries(),
                self.layout()
            )));
        }
        if let Some(d) = data {
            if d.dim() != self.input_dim || d.classes() != self.classes {
                return Err(Error::invalid(format!(
                    "dataset ({} features, {} classes) does not match architecture ({}, {})",
                    d.dim(),
                    d.classes(),
                    self.input_dim,
                    self.classes
                )));
            }
        }
        Ok(())
    }

    /// Writes class probabilities into `probs`; `hidden` receives the
    /// post-ReLU activations when there is a hidden layer.
    fn forward(&self, p: &[f64], x: &[f64], hidden: &mut [f64], probs: &mut [f64]) {
        let d = self.input_dim;
        let j = self.classes;
        match self.hidden {
            Some(h) => {
                let (w1, rest) = p.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(j * h);
                for (r, out) in hidden.iter_mut().enumerate() {
                    let z = dot(&w1[r * d..(r + 1) * d], x) + b1[r];
                    *out = z.max(0.0);
                }
                for (c, out) in probs.iter_mut().enumerate() {
                    *out = dot(&w2[c * h..(c + 1) * h], hidden) + b2[c];
                }
            }
            None => {
                let (w, b) = p.split_at(j * d);
                for (c, out) in probs.iter_mut().enumerate() {
                    *out = dot(&w[c * d..(c + 1) * d], x) + b[c];
                }
            }
        }
        softmax_in_place(probs);
    }

    fn hidden_width(&self) -> usize {
        self.hidden.unwrap_or(0)
    }

    pub fn probabilities(&self, params: &ParamVector, x: &[f64]) -> Vec<f64> {
        let mut hidden = vec![0.0; self.hidden_width()];
        let mut probs = vec![0.0; self.classes];
        self.forward(params.values(), x, &mut hidden, &mut probs);
        probs
    }

    pub fn predict(&self, params: &ParamVector, x: &[f64]) -> usize {
        argmax(&self.probabilities(params, x))
    }

    /// Fraction of correctly classified samples; 0 for an empty dataset.
    pub fn accuracy(&self, params: &ParamVector, data: &LocalDataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let mut hidden = vec![0.0; self.hidden_width()];
        let mut probs = vec![0.0; self.classes];
        let correct = data
            .iter()
            .filter(|(x, y)| {
                self.forward(params.values(), x, &mut hidden, &mut probs);
                argmax(&probs) == *y
            })
            .count();
        correct as f64 / data.len() as f64
    }

    /// Mean cross-entropy over `rows` and its gradient (accumulated into
    /// `grad`, which is overwritten). Frozen spans get zero gradient.
    fn loss_and_grad(
        &self,
        p: &[f64],
        data: &LocalDataset,
        rows: &[usize],
        mode: TrainMode,
        grad: &mut [f64],
    ) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let d = self.input_dim;
        let j = self.classes;
        let mut hidden = vec![0.0; self.hidden_width()];
        let mut probs = vec![0.0; j];
        let mut dh = vec![0.0; self.hidden_width()];
        let mut loss = 0.0;
        for &i in rows {
            let x = data.features(i);
            let y = data.label(i);
            self.forward(p, x, &mut hidden, &mut probs);
            loss -= probs[y].max(1e-300).ln();
            probs[y] -= 1.0; // dL/dlogits
            match self.hidden {
                Some(h) => {
                    let w2_off = h * d + h;
                    let b2_off = w2_off + j * h;
                    for c in 0..j {
                        let g = probs[c];
                        axpy(&mut grad[w2_off + c * h..w2_off + (c + 1) * h], g, &hidden);
                        grad[b2_off + c] += g;
                    }
                    if mode == TrainMode::Full {
                        let w2 = &p[w2_off..b2_off];
                        for r in 0..h {
                            dh[r] = if hidden[r] > 0.0 {
                                (0..j).map(|c| w2[c * h + r] * probs[c]).sum()
                            } else {
                                0.0
                            };
                        }
                        for r in 0..h {
                            if dh[r] != 0.0 {
                                axpy(&mut grad[r * d..(r + 1) * d], dh[r], x);
                                grad[h * d + r] += dh[r];
                            }
                        }
                    }
                }
                None => {
                    for c in 0..j {
                        let g = probs[c];
                        axpy(&mut grad[c * d..(c + 1) * d], g, x);
                        grad[j * d + c] += g;
                    }
                }
            }
        }
        let inv = 1.0 / rows.len() as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        loss * inv
    }

    /// Mean cross-entropy loss and full analytic gradient over a dataset.
    pub fn gradient(&self, params: &ParamVector, data: &LocalDataset) -> Result<(f64, Vec<f64>)> {
        self.check(params, Some(data))?;
        if data.is_empty() {
            return Err(Error::invalid("empty dataset"));
        }
        let rows: Vec<usize> = (0..data.len()).collect();
        let mut grad = vec![0.0; params.len()];
        let loss = self.loss_and_grad(params.values(), data, &rows, TrainMode::Full, &mut grad);
        Ok((loss, grad))
    }

    pub fn loss(&self, params: &ParamVector, data: &LocalDataset) -> Result<f64> {
        Ok(self.gradient(params, data)?.0)
    }

    /// Mini-batch SGD on cross-entropy. Row order is shuffled per epoch
    /// from `seed`, so identical inputs give bit-identical outputs.
    pub fn sgd_train(
        &self,
        params: &ParamVector,
        data: &LocalDataset,
        cfg: &SgdConfig,
        seed: u64,
    ) -> Result<ParamVector> {
        self.check(params, Some(data))?;
        if data.is_empty() {
            return Err(Error::invalid("cannot train on an empty dataset"));
        }
        if !(cfg.lr >= 0.0) || cfg.batch_size == 0 {
            return Err(Error::invalid("learning rate must be >= 0 and batch size > 0"));
        }
        let mut p = params.values().to_vec();
        let mut grad = vec![0.0; p.len()];
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frozen_end = match cfg.mode {
            TrainMode::Full => 0,
            TrainMode::LastLayerOnly => params.final_span().start,
        };
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                let loss = self.loss_and_grad(&p, data, batch, cfg.mode, &mut grad);
                if !loss.is_finite() {
                    return Err(Error::DivergedTraining { epoch });
                }
                for (w, g) in p[frozen_end..].iter_mut().zip(&grad[frozen_end..]) {
                    *w -= cfg.lr * g;
                }
            }
            if p.iter().any(|w| !w.is_finite()) {
                return Err(Error::DivergedTraining { epoch });
            }
        }
        Ok(params.with_values(p))
    }

    /// Per-class argmax counts and mean softmax probabilities.
    pub fn infer_distributions(
        &self,
        params: &ParamVector,
        data: &LocalDataset,
    ) -> Result<LabelDistributions> {
        self.check(params, Some(data))?;
        if data.is_empty() {
            return Err(Error::invalid("cannot infer distributions on an empty dataset"));
        }
        let mut hidden = vec![0.0; self.hidden_width()];
        let mut probs = vec![0.0; self.classes];
        let mut hard = vec![0u64; self.classes];
        let mut soft = vec![0.0; self.classes];
        for (x, _) in data.iter() {
            self.forward(params.values(), x, &mut hidden, &mut probs);
            hard[argmax(&probs)] += 1;
            soft.iter_mut().zip(&probs).for_each(|(s, p)| *s += p);
        }
        let inv = 1.0 / data.len() as f64;
        soft.iter_mut().for_each(|s| *s *= inv);
        Ok(LabelDistributions { hard, soft })
    }

    /// Worst relative error between the analytic gradient and central
    /// finite differences (step 1e-4). Relative error uses `max(1, |g|)`
    /// as the denominator.
    pub fn gradient_check(&self, params: &ParamVector, data: &LocalDataset) -> Result<f64> {
        let (_, analytic) = self.gradient(params, data)?;
        let step = 1e-4;
        let mut probe = params.clone();
        let mut worst: f64 = 0.0;
        for k in 0..params.len() {
            let orig = probe.values()[k];
            probe.values_mut()[k] = orig + step;
            let up = self.loss(&probe, data)?;
            probe.values_mut()[k] = orig - step;
            let down = self.loss(&probe, data)?;
            probe.values_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = (numeric - analytic[k]).abs() / analytic[k].abs().max(1.0);
            worst = worst.max(err);
        }
        Ok(worst)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

/// Index of the largest value; the lowest index wins ties.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}
