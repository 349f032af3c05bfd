use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binary::{clip_latent, sign, ste_backward};
use crate::error::{Error, Result};
use crate::layers::{
    relu, relu_backward, sigmoid, sigmoid_backward, softmax, softmax_cross_entropy_backward, BatchNorm,
    BnCache, ConvLayer, DenseActivation, DenseLayer, Precision,
};
use crate::tensor::{Axis, DenseTensor, Shape};

use super::config::{Head, LayerPlan, ModelConfig, UnitActivation};

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub(crate) config: ModelConfig,
    pub(crate) plan: LayerPlan,
    pub(crate) seed: u64,
    pub(crate) convs: Vec<ConvLayer>,
    pub(crate) bns: Vec<BatchNorm>,
    pub(crate) dense: Vec<DenseLayer>,
}

/// Outcome of one forward/backward pass over a training batch.
#[derive(Debug, Clone)]
pub struct BatchResult {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    pub correct: usize,
    /// Gradients in [`Model::param_groups_mut`] order.
    pub grads: Vec<Vec<f32>>,
}

/// A mutable view of one parameter tensor.
pub struct ParamGroup<'a> {
    pub values: &'a mut [f32],
    /// Latent weights of a binary layer; clipped to [-1, 1] after every update.
    pub binary_latent: bool,
}

fn glorot(rng: &mut ChaCha8Rng, n: usize, fan_in: usize, fan_out: usize) -> Vec<f32> {
    let r = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    (0..n).map(|_| rng.random_range(-r..=r)).collect()
}

impl Model {
    /// Builds the network with deterministic parameters for `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Model> {
        let plan = config.plan()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::with_capacity(plan.convs.len());
        let mut bns = Vec::with_capacity(plan.convs.len());
        for unit in &plan.convs {
            let mut conv = ConvLayer::new(unit.kernel, unit.stride, unit.in_maps, unit.out_maps, unit.precision)?;
            let n = conv.weights().len();
            let weights = match unit.precision {
                Precision::Full => {
                    let fan_out = unit.out_maps * unit.kernel.electrodes * unit.kernel.time;
                    glorot(&mut rng, n, conv.filter_len(), fan_out)
                }
                Precision::Binary => (0..n).map(|_| rng.random_range(-1.0f32..=1.0)).collect(),
            };
            conv.set_weights(weights)?;
            convs.push(conv);
            bns.push(BatchNorm::new(unit.out_maps, config.bn_eps, config.bn_momentum)?);
        }
        let mut dense = Vec::with_capacity(plan.dense.len());
        for d in &plan.dense {
            let mut layer = DenseLayer::new(d.in_dim, d.out_dim, d.activation)?;
            layer.weights = glorot(&mut rng, d.in_dim * d.out_dim, d.in_dim, d.out_dim);
            dense.push(layer);
        }
        Ok(Model {
            config,
            plan,
            seed,
            convs,
            bns,
            dense,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn plan(&self) -> &LayerPlan {
        &self.plan
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_shape(&self) -> Shape {
        self.config.input_shape
    }

    pub fn convs(&self) -> &[ConvLayer] {
        &self.convs
    }

    pub fn batch_norms(&self) -> &[BatchNorm] {
        &self.bns
    }

    pub fn batch_norms_mut(&mut self) -> &mut [BatchNorm] {
        &mut self.bns
    }

    pub fn dense_layers(&self) -> &[DenseLayer] {
        &self.dense
    }

    pub(crate) fn check_input(&self, window: &DenseTensor) -> Result<()> {
        if window.shape() != self.config.input_shape {
            return Err(Error::ShapeMismatch(format!(
                "model expects input {}, got {}",
                self.config.input_shape,
                window.shape()
            )));
        }
        Ok(())
    }

    /// Inference-mode class probabilities `[p_interictal, p_preictal]`,
    /// computed with arithmetic batch norm followed by the activation.
    pub fn forward(&self, window: &DenseTensor) -> Result<[f32; 2]> {
        self.check_input(window)?;
        let mut x = window.clone();
        for (i, unit) in self.plan.convs.iter().enumerate() {
            let y = self.bns[i].forward_infer(&self.convs[i].forward(&x)?)?;
            x = match unit.activation {
                UnitActivation::Relu => y.map(relu),
                UnitActivation::Sign => y.map(sign),
            };
        }
        self.head_forward(&x)
    }

    /// Preictal probability of each window.
    pub fn predict_scores(&self, windows: &[DenseTensor]) -> Result<Vec<f32>> {
        windows.iter().map(|w| Ok(self.forward(w)?[1])).collect()
    }

    pub(crate) fn features(&self, x: &DenseTensor) -> Result<Vec<f32>> {
        Ok(match self.config.head {
            Head::GlobalMeanPool => x.mean_over(&[Axis::Electrode, Axis::Time])?.into_vec(),
            Head::Flatten => x.data().to_vec(),
        })
    }

    pub(crate) fn dense_forward(&self, features: Vec<f32>) -> Result<[f32; 2]> {
        let mut h = features;
        for layer in &self.dense {
            let z = layer.forward(&h)?;
            h = match layer.activation {
                DenseActivation::Sigmoid => z.into_iter().map(sigmoid).collect(),
                DenseActivation::Softmax => softmax(&z),
            };
        }
        Ok([h[0], h[1]])
    }

    fn head_forward(&self, x: &DenseTensor) -> Result<[f32; 2]> {
        self.dense_forward(self.features(x)?)
    }

    /// Parameter tensors in a fixed order: per conv unit its weights, bias
    /// (full precision only), BN gamma and beta; then per dense layer its
    /// weights and bias.
    pub fn param_groups_mut(&mut self) -> Vec<ParamGroup<'_>> {
        let mut groups = Vec::new();
        for (conv, bn) in self.convs.iter_mut().zip(self.bns.iter_mut()) {
            let binary_latent = conv.precision() == Precision::Binary;
            let (w, b) = conv.params_mut();
            groups.push(ParamGroup {
                values: w,
                binary_latent,
            });
            if let Some(b) = b {
                groups.push(ParamGroup {
                    values: b,
                    binary_latent: false,
                });
            }
            groups.push(ParamGroup {
                values: &mut bn.gamma,
                binary_latent: false,
            });
            groups.push(ParamGroup {
                values: &mut bn.beta,
                binary_latent: false,
            });
        }
        for layer in &mut self.dense {
            groups.push(ParamGroup {
                values: &mut layer.weights,
                binary_latent: false,
            });
            groups.push(ParamGroup {
                values: &mut layer.bias,
                binary_latent: false,
            });
        }
        groups
    }

    /// Clips binary latent weights into [-1, 1] and rebuilds the packed signs.
    /// Must be called after parameters are changed through
    /// [`Self::param_groups_mut`].
    pub fn refresh(&mut self) {
        for conv in &mut self.convs {
            if conv.precision() == Precision::Binary {
                let (w, _) = conv.params_mut();
                for v in w.iter_mut() {
                    *v = clip_latent(*v);
                }
            }
            conv.refresh();
        }
    }

    /// Train-mode forward pass over a batch (batch statistics in every batch
    /// norm, running statistics updated), cross-entropy loss, and the full
    /// backward pass with the straight-through estimator at every sign.
    pub fn train_batch(&mut self, windows: &[&DenseTensor], labels: &[usize]) -> Result<BatchResult> {
        if windows.is_empty() || windows.len() != labels.len() {
            return Err(Error::InvalidDataset(format!(
                "batch has {} windows and {} labels",
                windows.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidDataset(format!("label {bad} is not 0 or 1")));
        }
        for w in windows {
            self.check_input(w)?;
        }
        let batch = windows.len();
        let units = self.plan.convs.len();

        // Forward.
        let mut conv_inputs: Vec<Vec<DenseTensor>> = Vec::with_capacity(units);
        let mut bn_outputs: Vec<Vec<DenseTensor>> = Vec::with_capacity(units);
        let mut bn_caches: Vec<BnCache<f32>> = Vec::with_capacity(units);
        let mut acts: Vec<DenseTensor> = windows.iter().map(|&w| w.clone()).collect();
        for i in 0..units {
            let pre = acts
                .iter()
                .map(|x| self.convs[i].forward(x))
                .collect::<Result<Vec<_>>>()?;
            let (y, cache) = self.bns[i].forward_train(&pre)?;
            let next: Vec<DenseTensor> = match self.plan.convs[i].activation {
                UnitActivation::Relu => y.iter().map(|t| t.map(relu)).collect(),
                UnitActivation::Sign => y.iter().map(|t| t.map(sign)).collect(),
            };
            conv_inputs.push(std::mem::replace(&mut acts, next));
            bn_outputs.push(y);
            bn_caches.push(cache);
        }
        let last_shape = acts[0].shape();

        // Dense head; keep each layer's input and activated output.
        let mut dense_io: Vec<Vec<(Vec<f32>, Vec<f32>)>> = Vec::with_capacity(batch);
        let mut loss = 0.0f64;
        let mut correct = 0usize;
        let mut head_grads: Vec<Vec<f32>> = Vec::with_capacity(batch);
        for (x, &label) in acts.iter().zip(labels) {
            let mut h = self.features(x)?;
            let mut io = Vec::with_capacity(self.dense.len());
            for layer in &self.dense {
                let z = layer.forward(&h)?;
                let out = match layer.activation {
                    DenseActivation::Sigmoid => z.into_iter().map(sigmoid).collect(),
                    DenseActivation::Softmax => softmax(&z),
                };
                io.push((std::mem::replace(&mut h, out.clone()), out));
            }
            let p = &h;
            loss -= (p[label] as f64).max(f64::MIN_POSITIVE).ln();
            if (p[1] >= p[0]) == (label == 1) {
                correct += 1;
            }
            head_grads.push(softmax_cross_entropy_backward(p, label)?);
            dense_io.push(io);
        }
        loss /= batch as f64;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch: 0,
                batch: 0,
                loss,
            });
        }

        // Backward through the dense head.
        let inv_batch = 1.0 / batch as f32;
        let mut dense_w: Vec<Vec<f32>> = self.dense.iter().map(|l| vec![0.0; l.weights.len()]).collect();
        let mut dense_b: Vec<Vec<f32>> = self.dense.iter().map(|l| vec![0.0; l.bias.len()]).collect();
        let mut feature_grads = Vec::with_capacity(batch);
        for (io, g) in dense_io.iter().zip(head_grads) {
            let mut g: Vec<f32> = g.into_iter().map(|v| v * inv_batch).collect();
            for (l, layer) in self.dense.iter().enumerate().rev() {
                let (input, output) = &io[l];
                if layer.activation == DenseActivation::Sigmoid {
                    for (gi, &yi) in g.iter_mut().zip(output) {
                        *gi = sigmoid_backward(*gi, yi);
                    }
                }
                let grads = layer.backward(input, &g)?;
                for (a, b) in dense_w[l].iter_mut().zip(&grads.weights) {
                    *a += b;
                }
                for (a, b) in dense_b[l].iter_mut().zip(&grads.bias) {
                    *a += b;
                }
                g = grads.input;
            }
            feature_grads.push(g);
        }

        // Back into the last activation map.
        let mut upstream: Vec<DenseTensor> = feature_grads
            .into_iter()
            .map(|g| match self.config.head {
                Head::GlobalMeanPool => {
                    let n = (last_shape.electrodes * last_shape.time) as f32;
                    let per: Vec<f32> = g.iter().map(|v| v / n).collect();
                    let mut data = Vec::with_capacity(last_shape.len());
                    for _ in 0..last_shape.electrodes * last_shape.time {
                        data.extend_from_slice(&per);
                    }
                    DenseTensor::from_raw(last_shape, data)
                }
                Head::Flatten => DenseTensor::from_raw(last_shape, g),
            })
            .collect();

        let mut conv_grads: Vec<(Vec<f32>, Option<Vec<f32>>, Vec<f32>, Vec<f32>)> = Vec::with_capacity(units);
        for i in (0..units).rev() {
            let activation = self.plan.convs[i].activation;
            for (g, y) in upstream.iter_mut().zip(&bn_outputs[i]) {
                for (gv, &yv) in g.data_mut().iter_mut().zip(y.data()) {
                    *gv = match activation {
                        UnitActivation::Relu => relu_backward(*gv, yv),
                        UnitActivation::Sign => ste_backward(*gv, yv),
                    };
                }
            }
            let bn_grads = self.bns[i].backward_train(&bn_caches[i], &upstream)?;
            let conv = &self.convs[i];
            let mut wg = vec![0.0f32; conv.weights().len()];
            let mut bg = conv.bias().map(|b| vec![0.0f32; b.len()]);
            let mut next = Vec::with_capacity(if i > 0 { batch } else { 0 });
            for (x, g) in conv_inputs[i].iter().zip(&bn_grads.input) {
                if i > 0 {
                    let mut ig = vec![0.0f32; x.shape().len()];
                    conv.backward_into(x, g, Some(&mut ig), &mut wg, bg.as_deref_mut())?;
                    next.push(DenseTensor::from_raw(x.shape(), ig));
                } else {
                    conv.backward_into(x, g, None, &mut wg, bg.as_deref_mut())?;
                }
            }
            conv_grads.push((wg, bg, bn_grads.gamma, bn_grads.beta));
            upstream = next;
        }
        conv_grads.reverse();

        let mut grads = Vec::new();
        for (wg, bg, gg, bb) in conv_grads {
            grads.push(wg);
            if let Some(bg) = bg {
                grads.push(bg);
            }
            grads.push(gg);
            grads.push(bb);
        }
        for (w, b) in dense_w.into_iter().zip(dense_b) {
            grads.push(w);
            grads.push(b);
        }
        Ok(BatchResult { loss, correct, grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ConvMode;

    fn random_window(shape: Shape, seed: u64) -> DenseTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseTensor::from_vec(shape, (0..shape.len()).map(|_| rng.random_range(-2.0f32..2.0)).collect()).unwrap()
    }

    fn small_config() -> ModelConfig {
        let mut c = ModelConfig::for_input(4, 600);
        c.blocks[0].maps = 4;
        c.blocks[1].maps = 8;
        c.blocks[2].maps = 8;
        c.blocks[3].maps = 16;
        c.blocks[4].maps = 16;
        c.fc_dims = vec![8, 4, 2];
        c
    }

    #[test]
    fn builds_default_profiles() {
        let m = Model::build(ModelConfig::aes(), 1).unwrap();
        assert_eq!(m.convs()[0].out_maps(), 16);
        Model::build(ModelConfig::chbmit(), 1).unwrap();
        let mut bad = ModelConfig::aes();
        bad.blocks.truncate(4);
        assert!(matches!(Model::build(bad, 1), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn build_is_deterministic_and_latents_in_range() {
        let a = Model::build(small_config(), 7).unwrap();
        let b = Model::build(small_config(), 7).unwrap();
        let c = Model::build(small_config(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for conv in a.convs() {
            if conv.precision() == Precision::Binary {
                assert!(conv.weights().iter().all(|w| (-1.0..=1.0).contains(w)));
            }
        }
        for bn in a.batch_norms() {
            assert!(bn.gamma.iter().all(|&g| g == 1.0) && bn.beta.iter().all(|&b| b == 0.0));
            assert!(bn.running_mean.iter().all(|&v| v == 0.0) && bn.running_var.iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn forward_produces_probabilities() {
        let m = Model::build(small_config(), 3).unwrap();
        let shape = m.input_shape();
        let zero = DenseTensor::zeros(shape).unwrap();
        let p = m.forward(&zero).unwrap();
        assert!(p.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        for s in 0..10 {
            let w = random_window(shape, s);
            let p = m.forward(&w).unwrap();
            assert!(((p[0] + p[1]) - 1.0).abs() < 1e-6);
            assert_eq!(p, m.forward(&w.clone()).unwrap());
        }
        let wrong = DenseTensor::zeros(Shape::new(3, 600, 1)).unwrap();
        assert!(matches!(m.forward(&wrong), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn every_conv_mode_runs() {
        for mode in ConvMode::ALL {
            let m = Model::build(small_config().with_conv_mode(mode), 1).unwrap();
            let p = m.forward(&random_window(m.input_shape(), 1)).unwrap();
            assert!(((p[0] + p[1]) - 1.0).abs() < 1e-6, "{mode}");
        }
    }

    #[test]
    fn gradients_line_up_with_parameters() {
        let mut m = Model::build(small_config(), 5).unwrap();
        let shape = m.input_shape();
        let ws: Vec<DenseTensor> = (0..4).map(|s| random_window(shape, s)).collect();
        let refs: Vec<&DenseTensor> = ws.iter().collect();
        let r = m.train_batch(&refs, &[0, 1, 0, 1]).unwrap();
        assert!(r.loss.is_finite() && r.loss > 0.0);
        let sizes: Vec<usize> = m.param_groups_mut().iter().map(|g| g.values.len()).collect();
        assert_eq!(sizes, r.grads.iter().map(Vec::len).collect::<Vec<_>>());
        assert!(r.grads.iter().all(|g| g.iter().all(|v| v.is_finite())));
        // Binary latents start inside the clip region, so a generic batch
        // reaches every binary layer.
        let mut k = 0;
        for conv in m.convs() {
            if conv.precision() == Precision::Binary {
                assert!(r.grads[k].iter().any(|&v| v != 0.0));
            }
            k += if conv.bias().is_some() { 4 } else { 3 };
        }
        assert!(m.batch_norms()[0].running_mean.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn train_batch_rejects_bad_labels() {
        let mut m = Model::build(small_config(), 5).unwrap();
        let w = random_window(m.input_shape(), 0);
        assert!(m.train_batch(&[&w], &[2]).is_err());
        assert!(m.train_batch(&[&w], &[]).is_err());
    }

    #[test]
    fn refresh_clips_latents() {
        let mut m = Model::build(small_config(), 5).unwrap();
        for g in m.param_groups_mut() {
            if g.binary_latent {
                g.values.iter_mut().for_each(|v| *v *= 5.0);
            }
        }
        m.refresh();
        for conv in m.convs() {
            if conv.precision() == Precision::Binary {
                assert!(conv.weights().iter().all(|w| (-1.0..=1.0).contains(w)));
            }
        }
    }
}
