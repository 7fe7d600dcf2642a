use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::softmax_in_place;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorConfig {
    pub hidden: usize,
    pub lr: f64,
    /// Global gradient-norm clip.
    pub clip: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self { hidden: 128, lr: 0.01, clip: 5.0 }
    }
}

/// Offsets of each weight block inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Layout {
    h: usize,
    wx1: usize,
    wh1: usize,
    b1: usize,
    wx2: usize,
    wh2: usize,
    b2: usize,
    wo: usize,
    bo: usize,
    len: usize,
}

impl Layout {
    fn new(h: usize) -> Self {
        let wx1 = 0;
        let wh1 = wx1 + h;
        let b1 = wh1 + h * h;
        let wx2 = b1 + h;
        let wh2 = wx2 + h * h;
        let b2 = wh2 + h * h;
        let wo = b2 + h;
        let bo = wo + 2 * h;
        Self { h, wx1, wh1, b1, wx2, wh2, b2, wo, bo, len: bo + 2 }
    }
}

/// Two stacked tanh Elman layers over a scalar sequence with a two-way
/// softmax head read from the final step. Class 1 means "broadcast".
#[derive(Debug, Clone, PartialEq)]
pub struct RnnPredictor {
    config: PredictorConfig,
    layout: Layout,
    weights: Vec<f64>,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    steps: u64,
    pub pretrained: bool,
}

struct Trace {
    xs: Vec<f64>,
    h1: Vec<Vec<f64>>,
    h2: Vec<Vec<f64>>,
    probs: [f64; 2],
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const PROB_FLOOR: f64 = 1e-12;

impl RnnPredictor {
    pub fn new(config: PredictorConfig, seed: u64) -> Self {
        let layout = Layout::new(config.hidden.max(1));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 1.0 / (layout.h as f64).sqrt();
        let mut weights = vec![0.0; layout.len];
        for (k, w) in weights.iter_mut().enumerate() {
            let bias = (layout.b1..layout.b1 + layout.h).contains(&k)
                || (layout.b2..layout.b2 + layout.h).contains(&k)
                || k >= layout.bo;
            *w = if bias {
                0.0
            } else if k < layout.wh1 {
                rng.random_range(-1.0..1.0)
            } else {
                rng.random_range(-s..s)
            };
        }
        Self {
            config,
            layout,
            adam_m: vec![0.0; layout.len],
            adam_v: vec![0.0; layout.len],
            weights,
            steps: 0,
            pretrained: false,
        }
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    /// Scale a raw history by its maximum so inputs lie in `[0, 1]`.
    pub fn normalize(seq: &[f64]) -> Vec<f64> {
        let max = seq.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            seq.iter().map(|v| v / max).collect()
        } else {
            vec![0.0; seq.len()]
        }
    }

    fn forward(&self, seq: &[f64]) -> Trace {
        let l = self.layout;
        let h = l.h;
        let w = &self.weights;
        let xs = Self::normalize(seq);
        let mut h1s = Vec::with_capacity(xs.len());
        let mut h2s = Vec::with_capacity(xs.len());
        let mut h1 = vec![0.0; h];
        let mut h2 = vec![0.0; h];
        for &x in &xs {
            let mut n1 = vec![0.0; h];
            for i in 0..h {
                let row = &w[l.wh1 + i * h..l.wh1 + (i + 1) * h];
                let a = w[l.wx1 + i] * x + w[l.b1 + i] + dot(row, &h1);
                n1[i] = a.tanh();
            }
            let mut n2 = vec![0.0; h];
            for i in 0..h {
                let rx = &w[l.wx2 + i * h..l.wx2 + (i + 1) * h];
                let rh = &w[l.wh2 + i * h..l.wh2 + (i + 1) * h];
                let a = w[l.b2 + i] + dot(rx, &n1) + dot(rh, &h2);
                n2[i] = a.tanh();
            }
            h1s.push(n1.clone());
            h2s.push(n2.clone());
            h1 = n1;
            h2 = n2;
        }
        let mut z = [w[l.bo], w[l.bo + 1]];
        for (c, zc) in z.iter_mut().enumerate() {
            *zc += dot(&w[l.wo + c * h..l.wo + (c + 1) * h], &h2);
        }
        softmax_in_place(&mut z);
        Trace { xs, h1: h1s, h2: h2s, probs: z }
    }

    /// `[P(no broadcast), P(broadcast)]`.
    pub fn probabilities(&self, seq: &[f64]) -> [f64; 2] {
        self.forward(seq).probs
    }

    pub fn predict(&self, seq: &[f64]) -> f64 {
        self.probabilities(seq)[1]
    }

    pub fn loss(&self, seq: &[f64], label: bool) -> f64 {
        -self.probabilities(seq)[label as usize].max(PROB_FLOOR).ln()
    }

    /// Cross-entropy and its gradient by backpropagation through time.
    pub fn loss_and_grad(&self, seq: &[f64], label: bool) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.layout.len];
        let loss = self.accumulate_grad(seq, label, &mut grad);
        (loss, grad)
    }

    fn accumulate_grad(&self, seq: &[f64], label: bool, grad: &mut [f64]) -> f64 {
        let l = self.layout;
        let h = l.h;
        let w = &self.weights;
        let tr = self.forward(seq);
        let y = label as usize;
        let loss = -tr.probs[y].max(PROB_FLOOR).ln();
        let t_len = tr.xs.len();
        if t_len == 0 {
            return loss;
        }
        let zeros = vec![0.0; h];
        let dz = [tr.probs[0] - (y == 0) as u8 as f64, tr.probs[1] - (y == 1) as u8 as f64];
        let last = &tr.h2[t_len - 1];
        let mut dh2 = vec![0.0; h];
        for c in 0..2 {
            grad[l.bo + c] += dz[c];
            for i in 0..h {
                grad[l.wo + c * h + i] += dz[c] * last[i];
                dh2[i] += w[l.wo + c * h + i] * dz[c];
            }
        }
        let mut dh1_carry = vec![0.0; h];
        let mut da2 = vec![0.0; h];
        let mut da1 = vec![0.0; h];
        for t in (0..t_len).rev() {
            let h1 = &tr.h1[t];
            let h2 = &tr.h2[t];
            let h1_prev = if t > 0 { &tr.h1[t - 1] } else { &zeros };
            let h2_prev = if t > 0 { &tr.h2[t - 1] } else { &zeros };
            for i in 0..h {
                da2[i] = dh2[i] * (1.0 - h2[i] * h2[i]);
            }
            let mut dh1 = std::mem::take(&mut dh1_carry);
            let mut dh2_prev = vec![0.0; h];
            for i in 0..h {
                let g = da2[i];
                if g == 0.0 {
                    continue;
                }
                grad[l.b2 + i] += g;
                let gx = &mut grad[l.wx2 + i * h..l.wx2 + (i + 1) * h];
                axpy(g, h1, gx);
                let gh = &mut grad[l.wh2 + i * h..l.wh2 + (i + 1) * h];
                axpy(g, h2_prev, gh);
                axpy(g, &w[l.wx2 + i * h..l.wx2 + (i + 1) * h], &mut dh1);
                axpy(g, &w[l.wh2 + i * h..l.wh2 + (i + 1) * h], &mut dh2_prev);
            }
            for i in 0..h {
                da1[i] = dh1[i] * (1.0 - h1[i] * h1[i]);
            }
            let mut carry = vec![0.0; h];
            for i in 0..h {
                let g = da1[i];
                if g == 0.0 {
                    continue;
                }
                grad[l.b1 + i] += g;
                grad[l.wx1 + i] += g * tr.xs[t];
                let gh = &mut grad[l.wh1 + i * h..l.wh1 + (i + 1) * h];
                axpy(g, h1_prev, gh);
                axpy(g, &w[l.wh1 + i * h..l.wh1 + (i + 1) * h], &mut carry);
            }
            dh1_carry = carry;
            dh2 = dh2_prev;
        }
        loss
    }

    /// One optimizer step on a single labeled history.
    pub fn train_step(&mut self, seq: &[f64], label: bool) -> Result<f64> {
        let (loss, grad) = self.loss_and_grad(seq, label);
        self.apply(loss, grad)
    }

    /// One optimizer step on the mean gradient of a batch. Returns the mean
    /// loss before the step.
    pub fn train_batch(&mut self, batch: &[(Vec<f64>, bool)]) -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let mut grad = vec![0.0; self.layout.len];
        let mut loss = 0.0;
        for (seq, label) in batch {
            loss += self.accumulate_grad(seq, *label, &mut grad);
        }
        let n = batch.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        self.apply(loss / n, grad)
    }

    fn apply(&mut self, loss: f64, mut grad: Vec<f64>) -> Result<f64> {
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::DivergedPredictor);
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > self.config.clip {
            let s = self.config.clip / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let lr = self.config.lr;
        for k in 0..grad.len() {
            let g = grad[k];
            self.adam_m[k] = BETA1 * self.adam_m[k] + (1.0 - BETA1) * g;
            self.adam_v[k] = BETA2 * self.adam_v[k] + (1.0 - BETA2) * g * g;
            let m = self.adam_m[k] / c1;
            let v = self.adam_v[k] / c2;
            self.weights[k] -= lr * m / (v.sqrt() + ADAM_EPS);
        }
        if !self.is_finite() {
            return Err(Error::DivergedPredictor);
        }
        Ok(loss)
    }

    /// Several passes of shuffled minibatch training.
    pub fn fit(&mut self, data: &[(Vec<f64>, bool)], epochs: usize, batch_size: usize, seed: u64) -> Result<f64> {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut last = 0.0;
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(batch_size.max(1)) {
                let batch: Vec<_> = chunk.iter().map(|&i| data[i].clone()).collect();
                total += self.train_batch(&batch)? * batch.len() as f64;
            }
            last = total / data.len().max(1) as f64;
        }
        Ok(last)
    }

    /// Elementwise mean of two predictors' weights; optimizer state restarts.
    pub fn average(a: &RnnPredictor, b: &RnnPredictor) -> Result<RnnPredictor> {
        if a.layout != b.layout {
            return Err(Error::invalid("cannot average predictors of different width"));
        }
        let mut out = a.clone();
        for (w, &o) in out.weights.iter_mut().zip(&b.weights) {
            *w = 0.5 * (*w + o);
        }
        out.adam_m.iter_mut().for_each(|m| *m = 0.0);
        out.adam_v.iter_mut().for_each(|v| *v = 0.0);
        out.steps = 0;
        out.pretrained = a.pretrained || b.pretrained;
        Ok(out)
    }

    /// Worst relative error of the analytic gradient against central finite
    /// differences with step 1e-4.
    pub fn gradient_check(&self, seq: &[f64], label: bool) -> f64 {
        const STEP: f64 = 1e-4;
        let (_, grad) = self.loss_and_grad(seq, label);
        let mut probe = self.clone();
        let mut worst: f64 = 0.0;
        for k in 0..grad.len() {
            let w0 = probe.weights[k];
            probe.weights[k] = w0 + STEP;
            let up = probe.loss(seq, label);
            probe.weights[k] = w0 - STEP;
            let down = probe.loss(seq, label);
            probe.weights[k] = w0;
            let numeric = (up - down) / (2.0 * STEP);
            let err = (numeric - grad[k]).abs() / grad[k].abs().max(1.0);
            worst = worst.max(err);
        }
        worst
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> RnnPredictor {
        RnnPredictor::new(PredictorConfig { hidden: 4, lr: 0.01, clip: 5.0 }, seed)
    }

    #[test]
    fn forward_is_deterministic_and_normalized() {
        let p = RnnPredictor::new(PredictorConfig::default(), 3);
        let seq = [0.0, 1.0, 0.5, 2.0];
        assert_eq!(p.probabilities(&seq), p.probabilities(&seq));
        let pr = p.probabilities(&seq);
        assert!((pr[0] + pr[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = small(11);
        for (seq, label) in [(vec![0.0, 0.3, 1.2, 0.7, 0.1], true), (vec![2.0, 0.0, 0.0, 1.0], false)] {
            let err = p.gradient_check(&seq, label);
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn repeated_steps_reduce_loss_on_one_pair() {
        let mut p = RnnPredictor::new(PredictorConfig { hidden: 8, lr: 0.001, clip: 5.0 }, 2);
        let seq = [0.1, 0.4, 0.2, 0.9];
        let mut prev = p.loss(&seq, true);
        for _ in 0..20 {
            p.train_step(&seq, true).unwrap();
            let now = p.loss(&seq, true);
            assert!(now <= prev + 1e-12);
            prev = now;
        }
    }

    #[test]
    fn averaging_is_midpoint() {
        let a = small(1);
        let b = small(2);
        let m = RnnPredictor::average(&a, &b).unwrap();
        for k in 0..a.weights.len() {
            assert_eq!(m.weights[k], 0.5 * (a.weights[k] + b.weights[k]));
        }
        assert!(RnnPredictor::average(&a, &RnnPredictor::new(PredictorConfig::default(), 0)).is_err());
    }
}
