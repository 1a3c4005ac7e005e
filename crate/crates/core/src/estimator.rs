//! Two-headed feed-forward value network approximating the expected
//! aleatoric and epistemic uncertainty of acquiring each feature.
//!
//! Input: standardized observed values (zero where unobserved), the mask,
//! and the current sub-model prediction. Two ReLU hidden layers feed a `u`
//! head and an `e` head of width M each.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::data::{training_means, Dataset, PartialObservation};
use crate::model::GlobalModel;
use crate::uncertainty::aleatoric_u;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("expected {expected} features, got {got}")]
    FeatureWidth { expected: usize, got: usize },
    #[error("expected {expected} classes, got {got}")]
    ClassWidth { expected: usize, got: usize },
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Used only by the single-head variant, whose target is `u + λe`.
    pub lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            lambda: 0.1,
        }
    }
}

/// Target generation, architecture and optimizer settings for one net.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub masks_per_sample: usize,
    pub hidden: usize,
    pub single_head: bool,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            masks_per_sample: 8,
            hidden: ValueNet::DEFAULT_HIDDEN,
            single_head: false,
            seed: 0,
            train: TrainConfig::default(),
        }
    }
}

/// Builds targets from `model` on `ds` and trains a fresh standardized net.
pub fn fit_value_net(
    ds: &Dataset,
    model: &GlobalModel,
    cfg: &EstimatorConfig,
) -> Result<(ValueNet, TrainReport), EstimatorError> {
    let batch = build_targets(ds, model, cfg.masks_per_sample, cfg.seed);
    let mut net = ValueNet::new(ds.n_features(), ds.n_classes(), cfg.hidden, cfg.seed).with_standardization(ds);
    net.single_head = cfg.single_head;
    let report = net.train(&batch, &TrainConfig { seed: cfg.seed, ..cfg.train })?;
    Ok((net, report))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layer {
    inputs: usize,
    outputs: usize,
    offset: usize,
}

impl Layer {
    fn weight(&self, o: usize, i: usize) -> usize {
        self.offset + o * self.inputs + i
    }

    fn bias(&self, o: usize) -> usize {
        self.offset + self.outputs * self.inputs + o
    }

    fn size(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }

    fn apply(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| {
                let row = &params[self.weight(o, 0)..self.weight(o, 0) + self.inputs];
                params[self.bias(o)] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. `x`.
    fn backward(&self, params: &[f64], x: &[f64], dout: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.inputs];
        for (o, &d) in dout.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad[self.bias(o)] += d;
            let w0 = self.weight(o, 0);
            for i in 0..self.inputs {
                grad[w0 + i] += d * x[i];
                dx[i] += params[w0 + i] * d;
            }
        }
        dx
    }
}

struct Cache {
    x: Vec<f64>,
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    u: Vec<f64>,
    e: Vec<f64>,
}

fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|v| v.max(0.0)).collect()
}

/// One training example: a masked sample, its sub-model prediction and
/// per-feature targets, valid only where the feature is unobserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub observation: PartialObservation,
    pub sub_prediction: Vec<f64>,
    pub target_u: Vec<f64>,
    pub target_e: Vec<f64>,
    pub valid: Vec<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingBatch {
    pub records: Vec<TrainingRecord>,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Draws a random mask with size uniform in `0..M` and a uniform subset of that size.
pub fn draw_mask(rng: &mut ChaCha8Rng, m: usize) -> Vec<usize> {
    let k = rng.gen_range(0..m);
    let mut features: Vec<usize> = (0..m).collect();
    features.shuffle(rng);
    let mut chosen = features[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Exact targets at the true feature values for `masks_per_sample` random
/// masks of every sample. Each sample draws from its own seeded stream.
pub fn build_targets(ds: &Dataset, model: &GlobalModel, masks_per_sample: usize, seed: u64) -> TrainingBatch {
    let m = ds.n_features();
    let records = ds
        .samples
        .par_iter()
        .enumerate()
        .flat_map_iter(|(n, x)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let global = model.predict_full(x);
            (0..masks_per_sample)
                .map(|_| {
                    let obs = PartialObservation::from_sample(x, &draw_mask(&mut rng, m));
                    let mut target_u = vec![0.0; m];
                    let mut target_e = vec![0.0; m];
                    let mut valid = vec![false; m];
                    for i in obs.unobserved_indices() {
                        let next = obs.with(i, x[i]);
                        target_u[i] = aleatoric_u(&global, model.predict_partial(&next));
                        target_e[i] = model.epistemic(&next);
                        valid[i] = true;
                    }
                    TrainingRecord {
                        sub_prediction: model.predict_partial(&obs).into_vec(),
                        observation: obs,
                        target_u,
                        target_e,
                        valid,
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    TrainingBatch { records }
}

/// Per-epoch mean training loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    pub n_features: usize,
    pub n_classes: usize,
    pub hidden: usize,
    /// Train one head on `q = u + λe`; the `e` head is then unused.
    pub single_head: bool,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    params: Vec<f64>,
    /// Test hook: scales every analytic gradient by 1.5.
    pub corrupt_gradients: bool,
}

impl ValueNet {
    pub const DEFAULT_HIDDEN: usize = 128;

    /// He-uniform weights, zero biases, identity standardization.
    pub fn new(n_features: usize, n_classes: usize, hidden: usize, seed: u64) -> Self {
        let mut net = ValueNet {
            n_features,
            n_classes,
            hidden,
            single_head: false,
            input_mean: vec![0.0; n_features],
            input_scale: vec![1.0; n_features],
            params: Vec::new(),
            corrupt_gradients: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = net.layers();
        net.params = vec![0.0; layers.iter().map(Layer::size).sum()];
        for layer in layers {
            let bound = (6.0 / layer.inputs as f64).sqrt();
            for o in 0..layer.outputs {
                for i in 0..layer.inputs {
                    net.params[layer.weight(o, i)] = rng.gen_range(-bound..bound);
                }
            }
        }
        net
    }

    /// Standardizes observed inputs with the training means and deviations.
    pub fn with_standardization(mut self, ds: &Dataset) -> Self {
        let means = training_means(ds);
        self.input_scale = (0..ds.n_features())
            .map(|j| {
                let var = ds.samples.iter().map(|x| (x[j] - means[j]).powi(2)).sum::<f64>() / ds.n_samples() as f64;
                if var > 0.0 { var.sqrt() } else { 1.0 }
            })
            .collect();
        self.input_mean = means;
        self
    }

    pub fn input_width(&self) -> usize {
        2 * self.n_features + self.n_classes
    }

    fn layers(&self) -> [Layer; 4] {
        let (d, h, m) = (self.input_width(), self.hidden, self.n_features);
        let l1 = Layer { inputs: d, outputs: h, offset: 0 };
        let l2 = Layer { inputs: h, outputs: h, offset: l1.size() };
        let lu = Layer { inputs: h, outputs: m, offset: l2.offset + l2.size() };
        let le = Layer { inputs: h, outputs: m, offset: lu.offset + lu.size() };
        [l1, l2, lu, le]
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn encode(&self, obs: &PartialObservation, sub_prediction: &[f64]) -> Result<Vec<f64>, EstimatorError> {
        if obs.len() != self.n_features {
            return Err(EstimatorError::FeatureWidth { expected: self.n_features, got: obs.len() });
        }
        if sub_prediction.len() != self.n_classes {
            return Err(EstimatorError::ClassWidth { expected: self.n_classes, got: sub_prediction.len() });
        }
        let mut x = Vec::with_capacity(self.input_width());
        for j in 0..self.n_features {
            x.push(obs.get(j).map_or(0.0, |v| (v - self.input_mean[j]) / self.input_scale[j]));
        }
        x.extend(obs.mask().iter().map(|&b| f64::from(u8::from(b))));
        x.extend_from_slice(sub_prediction);
        Ok(x)
    }

    fn forward(&self, params: &[f64], x: Vec<f64>) -> Cache {
        let [l1, l2, lu, le] = self.layers();
        let z1 = l1.apply(params, &x);
        let h1 = relu(&z1);
        let z2 = l2.apply(params, &h1);
        let h2 = relu(&z2);
        let u = lu.apply(params, &h2);
        let e = le.apply(params, &h2);
        Cache { x, z1, h1, z2, h2, u, e }
    }

    /// Raw head outputs `(h_u, h_e)`.
    pub fn heads(&self, obs: &PartialObservation, sub_prediction: &[f64]) -> Result<(Vec<f64>, Vec<f64>), EstimatorError> {
        let c = self.forward(&self.params, self.encode(obs, sub_prediction)?);
        Ok((c.u, c.e))
    }

    /// Per-feature `(û, ê)`, clamped at zero; `None` for observed features.
    /// The single-head variant reports its `q` estimate as `û` and `ê = 0`.
    pub fn predict_values(
        &self,
        obs: &PartialObservation,
        sub_prediction: impl AsRef<[f64]>,
    ) -> Result<Vec<Option<(f64, f64)>>, EstimatorError> {
        let (u, e) = self.heads(obs, sub_prediction.as_ref())?;
        Ok((0..self.n_features)
            .map(|i| {
                (!obs.is_observed(i)).then(|| {
                    let ei = if self.single_head { 0.0 } else { e[i].max(0.0) };
                    (u[i].max(0.0), ei)
                })
            })
            .collect())
    }

    fn record_targets(&self, r: &TrainingRecord, lambda: f64) -> (Vec<f64>, Vec<f64>) {
        if self.single_head {
            let q = r.target_u.iter().zip(&r.target_e).map(|(u, e)| u + lambda * e).collect();
            (q, vec![0.0; self.n_features])
        } else {
            (r.target_u.clone(), r.target_e.clone())
        }
    }

    /// Mean over records of the masked squared error; adds its gradient to `grad`.
    fn loss_and_grad(&self, params: &[f64], records: &[&TrainingRecord], lambda: f64, grad: Option<&mut [f64]>) -> f64 {
        let [l1, l2, lu, le] = self.layers();
        let scale = 1.0 / records.len().max(1) as f64;
        let mut loss = 0.0;
        let mut grad = grad;
        for r in records {
            let Ok(x) = self.encode(&r.observation, &r.sub_prediction) else {
                continue;
            };
            let c = self.forward(params, x);
            let (tu, te) = self.record_targets(r, lambda);
            let mut du = vec![0.0; self.n_features];
            let mut de = vec![0.0; self.n_features];
            for i in 0..self.n_features {
                if !r.valid[i] {
                    continue;
                }
                let ru = c.u[i] - tu[i];
                loss += scale * ru * ru;
                du[i] = 2.0 * scale * ru;
                if !self.single_head {
                    let re = c.e[i] - te[i];
                    loss += scale * re * re;
                    de[i] = 2.0 * scale * re;
                }
            }
            let Some(g) = grad.as_deref_mut() else {
                continue;
            };
            let mut dh2 = lu.backward(params, &c.h2, &du, g);
            for (a, b) in dh2.iter_mut().zip(le.backward(params, &c.h2, &de, g)) {
                *a += b;
            }
            let dz2: Vec<f64> = dh2.iter().zip(&c.z2).map(|(d, z)| if *z > 0.0 { *d } else { 0.0 }).collect();
            let dh1 = l2.backward(params, &c.h1, &dz2, g);
            let dz1: Vec<f64> = dh1.iter().zip(&c.z1).map(|(d, z)| if *z > 0.0 { *d } else { 0.0 }).collect();
            l1.backward(params, &c.x, &dz1, g);
        }
        if self.corrupt_gradients {
            if let Some(g) = grad {
                g.iter_mut().for_each(|v| *v *= 1.5);
            }
        }
        loss
    }

    /// Loss of the current weights over a batch.
    pub fn loss(&self, batch: &TrainingBatch, lambda: f64) -> f64 {
        let refs: Vec<&TrainingRecord> = batch.records.iter().collect();
        self.loss_and_grad(&self.params, &refs, lambda, None)
    }

    /// Analytic gradient of the batch loss.
    pub fn gradient(&self, batch: &TrainingBatch, lambda: f64) -> Vec<f64> {
        let refs: Vec<&TrainingRecord> = batch.records.iter().collect();
        let mut g = vec![0.0; self.params.len()];
        self.loss_and_grad(&self.params, &refs, lambda, Some(&mut g));
        g
    }

    /// Mini-batch Adam over shuffled records; deterministic per seed.
    pub fn train(&mut self, batch: &TrainingBatch, cfg: &TrainConfig) -> Result<TrainReport, EstimatorError> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let mut m = vec![0.0; self.params.len()];
        let mut v = vec![0.0; self.params.len()];
        let mut t = 0i32;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..batch.len()).collect();
        let mut epoch_losses = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                let records: Vec<&TrainingRecord> = chunk.iter().map(|&k| &batch.records[k]).collect();
                let mut g = vec![0.0; self.params.len()];
                let loss = self.loss_and_grad(&self.params, &records, cfg.lambda, Some(&mut g));
                if !loss.is_finite() {
                    return Err(EstimatorError::Diverged { epoch, loss });
                }
                total += loss * records.len() as f64;
                t += 1;
                let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
                for k in 0..self.params.len() {
                    m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                    v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                    self.params[k] -= cfg.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                }
            }
            let mean = total / batch.len().max(1) as f64;
            if !mean.is_finite() || self.params.iter().any(|p| !p.is_finite()) {
                return Err(EstimatorError::Diverged { epoch, loss: mean });
            }
            epoch_losses.push(mean);
        }
        Ok(TrainReport { epoch_losses })
    }

    /// Largest relative error `|a − n| / max(|a|, |n|, 1e-6)` between analytic
    /// and central-difference gradients over `n_weights` seeded parameters.
    pub fn gradient_check(&self, batch: &TrainingBatch, h: f64, n_weights: usize, seed: u64) -> f64 {
        let lambda = 0.1;
        let analytic = self.gradient(batch, lambda);
        let refs: Vec<&TrainingRecord> = batch.records.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks: Vec<usize> = (0..n_weights).map(|_| rng.gen_range(0..self.params.len())).collect();
        picks
            .par_iter()
            .map(|&k| {
                let mut p = self.params.clone();
                p[k] += h;
                let plus = self.loss_and_grad(&p, &refs, lambda, None);
                p[k] -= 2.0 * h;
                let minus = self.loss_and_grad(&p, &refs, lambda, None);
                let numeric = (plus - minus) / (2.0 * h);
                let a = analytic[k];
                (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6)
            })
            .reduce(|| 0.0, f64::max)
    }
}

/// Portable serialized form: shapes plus little-endian f64 weights in base 64.
#[derive(Serialize, Deserialize)]
struct NetRepr {
    n_features: usize,
    n_classes: usize,
    hidden: usize,
    single_head: bool,
    input_mean: Vec<f64>,
    input_scale: Vec<f64>,
    layer_dims: Vec<(usize, usize)>,
    weights: String,
}

impl Serialize for ValueNet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let bytes: Vec<u8> = self.params.iter().flat_map(|p| p.to_le_bytes()).collect();
        NetRepr {
            n_features: self.n_features,
            n_classes: self.n_classes,
            hidden: self.hidden,
            single_head: self.single_head,
            input_mean: self.input_mean.clone(),
            input_scale: self.input_scale.clone(),
            layer_dims: self.layers().iter().map(|l| (l.outputs, l.inputs)).collect(),
            weights: B64.encode(bytes),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ValueNet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let r = NetRepr::deserialize(d)?;
        let bytes = B64.decode(&r.weights).map_err(D::Error::custom)?;
        let params: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut net = ValueNet::new(r.n_features, r.n_classes, r.hidden, 0);
        if params.len() != net.params.len() || bytes.len() % 8 != 0 {
            return Err(D::Error::custom(format!(
                "expected {} weights, found {}",
                net.params.len(),
                params.len()
            )));
        }
        if r.input_mean.len() != r.n_features || r.input_scale.len() != r.n_features {
            return Err(D::Error::custom("standardization width mismatch"));
        }
        net.params = params;
        net.single_head = r.single_head;
        net.input_mean = r.input_mean;
        net.input_scale = r.input_scale;
        Ok(net)
    }
}
