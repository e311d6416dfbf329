//! Two-layer frame classifier: affine, ReLU, dropout, affine to phones + blank.
//! Parameters live in one flat vector laid out as `w1 | b1 | w2 | b2`.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadShape {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl HeadShape {
    pub fn param_count(&self) -> usize {
        self.hidden * self.input + self.hidden + self.output * self.hidden + self.output
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.output * self.hidden;
        (b1, w2, b2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionHead {
    pub shape: HeadShape,
    pub params: Vec<f64>,
    pub dropout: f64,
}

/// Activations kept from a forward pass for the backward pass.
pub struct ForwardCache {
    frames: usize,
    /// Post-ReLU, post-dropout hidden activations.
    hidden: Vec<f64>,
    /// Dropout scale per hidden unit (0 where dropped or inactive).
    gate: Vec<f64>,
}

impl PredictionHead {
    /// Uniform Glorot initialization, zero biases.
    pub fn init<R: Rng>(shape: HeadShape, dropout: f64, rng: &mut R) -> Self {
        let mut params = vec![0.0; shape.param_count()];
        let (b1, w2, b2) = shape.offsets();
        let a1 = (6.0 / (shape.input + shape.hidden) as f64).sqrt();
        let a2 = (6.0 / (shape.hidden + shape.output) as f64).sqrt();
        let d1 = Uniform::new_inclusive(-a1, a1);
        let d2 = Uniform::new_inclusive(-a2, a2);
        for p in &mut params[..b1] {
            *p = d1.sample(rng);
        }
        for p in &mut params[w2..b2] {
            *p = d2.sample(rng);
        }
        PredictionHead { shape, params, dropout }
    }

    pub fn from_params(shape: HeadShape, params: Vec<f64>, dropout: f64) -> Self {
        assert_eq!(params.len(), shape.param_count(), "parameter count");
        PredictionHead { shape, params, dropout }
    }

    /// Logits `frames x output`. Dropout applies only when `rng` is given.
    pub fn forward<R: Rng>(&self, x: &[f64], frames: usize, rng: Option<&mut R>) -> (Vec<f64>, ForwardCache) {
        let HeadShape { input, hidden, output } = self.shape;
        assert_eq!(x.len(), frames * input, "input shape");
        let (b1o, w2o, b2o) = self.shape.offsets();
        let w1 = &self.params[..b1o];
        let b1 = &self.params[b1o..w2o];
        let w2 = &self.params[w2o..b2o];
        let b2 = &self.params[b2o..];
        let mut h = vec![0.0; frames * hidden];
        let mut gate = vec![0.0; frames * hidden];
        let keep = 1.0 - self.dropout;
        let mut rng = rng;
        for t in 0..frames {
            let xt = &x[t * input..(t + 1) * input];
            for j in 0..hidden {
                let row = &w1[j * input..(j + 1) * input];
                let z = b1[j] + row.iter().zip(xt).map(|(w, v)| w * v).sum::<f64>();
                let mut g = if z > 0.0 { 1.0 } else { 0.0 };
                if let Some(r) = rng.as_deref_mut() {
                    if self.dropout > 0.0 {
                        g = if r.gen::<f64>() < keep { g / keep } else { 0.0 };
                    }
                }
                gate[t * hidden + j] = g;
                h[t * hidden + j] = if z > 0.0 { z * g } else { 0.0 };
            }
        }
        let mut logits = vec![0.0; frames * output];
        for t in 0..frames {
            let ht = &h[t * hidden..(t + 1) * hidden];
            for k in 0..output {
                let row = &w2[k * hidden..(k + 1) * hidden];
                logits[t * output + k] = b2[k] + row.iter().zip(ht).map(|(w, v)| w * v).sum::<f64>();
            }
        }
        (logits, ForwardCache { frames, hidden: h, gate })
    }

    /// Accumulates parameter gradients for `dlogits` into `grad`.
    pub fn backward(&self, x: &[f64], cache: &ForwardCache, dlogits: &[f64], grad: &mut [f64]) {
        let HeadShape { input, hidden, output } = self.shape;
        let (b1o, w2o, b2o) = self.shape.offsets();
        let w2 = &self.params[w2o..b2o];
        let mut dh = vec![0.0; hidden];
        for t in 0..cache.frames {
            let dl = &dlogits[t * output..(t + 1) * output];
            if dl.iter().all(|g| *g == 0.0) {
                continue;
            }
            let ht = &cache.hidden[t * hidden..(t + 1) * hidden];
            dh.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..output {
                let g = dl[k];
                if g == 0.0 {
                    continue;
                }
                grad[b2o + k] += g;
                let gw = &mut grad[w2o + k * hidden..w2o + (k + 1) * hidden];
                let w = &w2[k * hidden..(k + 1) * hidden];
                for j in 0..hidden {
                    gw[j] += g * ht[j];
                    dh[j] += g * w[j];
                }
            }
            let xt = &x[t * input..(t + 1) * input];
            let gate = &cache.gate[t * hidden..(t + 1) * hidden];
            for j in 0..hidden {
                let dz = dh[j] * gate[j];
                if dz == 0.0 {
                    continue;
                }
                grad[b1o + j] += dz;
                let gw = &mut grad[j * input..(j + 1) * input];
                for i in 0..input {
                    gw[i] += dz * xt[i];
                }
            }
        }
    }
}
