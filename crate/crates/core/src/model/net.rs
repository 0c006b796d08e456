//! Forward pass, analytic backprop, and mini-batch SGD training for both
//! architectures.
//!
//! Dropout is inverted: surviving units are scaled by `1/(1-p)` at train
//! time so evaluation applies no correction. Masks are explicit values
//! (`0` or `1/(1-p)`) so gradient checks can hold them fixed across
//! finite-difference probes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, ModelSpec, ModelState};

/// Sampled dropout masks, one vector per dropout site in forward order.
/// Entries are `0.0` (dropped) or `1/(1-p)` (kept and rescaled).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub masks: Vec<Vec<f64>>,
}

impl DropoutMasks {
    /// All-ones masks: train-mode forward with these equals eval exactly.
    pub fn identity(spec: &ModelSpec) -> DropoutMasks {
        DropoutMasks {
            masks: spec.dropout_sites().into_iter().map(|(n, _)| vec![1.0; n]).collect(),
        }
    }
}

/// Parameter gradients with the same shapes as the model's layers.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    fn zeros(model: &ModelState) -> Gradients {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
                .collect(),
        }
    }

    fn add(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.0.iter_mut().zip(&b.0) {
                *x += y;
            }
            for (x, y) in a.1.iter_mut().zip(&b.1) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for (w, b) in &mut self.layers {
            for x in w.iter_mut() {
                *x *= s;
            }
            for x in b.iter_mut() {
                *x *= s;
            }
        }
    }
}

/// Loss, optimizer, and schedule settings for [`train`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig { learning_rate: 0.01, momentum: 0.9, epochs: 300, batch_size: 16, seed: 0 }
    }
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Binary cross-entropy of probability `p` against label `y`, with the
/// probability clamped away from 0/1 so the loss stays finite.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

struct DnnCache {
    /// Input to each affine layer (post-ReLU, post-dropout).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each affine layer.
    zs: Vec<Vec<f64>>,
    p: f64,
}

struct CnnCache {
    grid: Vec<f64>,
    conv_z: Vec<f64>,
    /// Post-dropout pooled map, channel-major.
    pooled_dropped: Vec<f64>,
    /// Argmax cell per pooled entry (index into the channel's grid).
    argmax: Vec<usize>,
    fc1_z: Vec<f64>,
    fc1_out: Vec<f64>,
    p: f64,
}

impl ModelState {
    fn check_input(&self, x: &[f64]) -> Result<(), ModelError> {
        let expected = self.spec.input_dim();
        if x.len() != expected {
            return Err(ModelError::ShapeMismatch { expected, found: x.len() });
        }
        Ok(())
    }

    /// Deterministic forward pass without dropout.
    pub fn forward_eval(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.forward_train(x, &DropoutMasks::identity(&self.spec))
    }

    /// Forward pass with the given dropout masks applied at the spec's
    /// dropout sites.
    pub fn forward_train(&self, x: &[f64], masks: &DropoutMasks) -> Result<f64, ModelError> {
        self.check_input(x)?;
        Ok(match &self.spec {
            ModelSpec::Dnn(_) => self.dnn_forward(x, masks).p,
            ModelSpec::Cnn(_) => self.cnn_forward(x, masks).p,
        })
    }

    /// Sample fresh dropout masks from the stream.
    pub fn sample_masks(&self, rng: &mut ChaCha8Rng) -> DropoutMasks {
        DropoutMasks {
            masks: self
                .spec
                .dropout_sites()
                .into_iter()
                .map(|(n, p)| {
                    let keep = 1.0 - p;
                    (0..n)
                        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect()
                })
                .collect(),
        }
    }

    /// Per-example loss and parameter gradients. `masks = None` runs the
    /// dropout-free (eval) path.
    pub fn loss_and_grad(
        &self,
        x: &[f64],
        y: f64,
        masks: Option<&DropoutMasks>,
    ) -> Result<(f64, Gradients), ModelError> {
        self.check_input(x)?;
        let identity;
        let masks = match masks {
            Some(m) => m,
            None => {
                identity = DropoutMasks::identity(&self.spec);
                &identity
            }
        };
        Ok(match &self.spec {
            ModelSpec::Dnn(_) => self.dnn_backward(x, y, masks),
            ModelSpec::Cnn(_) => self.cnn_backward(x, y, masks),
        })
    }

    fn dnn_forward(&self, x: &[f64], masks: &DropoutMasks) -> DnnCache {
        let mut inputs = Vec::with_capacity(4);
        let mut zs = Vec::with_capacity(4);
        let mut a = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            inputs.push(a.clone());
            let mut z = Vec::new();
            layer.affine(&a, &mut z);
            zs.push(z.clone());
            if i < 3 {
                a = z.into_iter().map(relu).collect();
                // dropout after the second and third hidden activations
                if i == 1 {
                    for (v, m) in a.iter_mut().zip(&masks.masks[0]) {
                        *v *= m;
                    }
                } else if i == 2 {
                    for (v, m) in a.iter_mut().zip(&masks.masks[1]) {
                        *v *= m;
                    }
                }
            }
        }
        let p = sigmoid(zs[3][0]);
        DnnCache { inputs, zs, p }
    }

    fn dnn_backward(&self, x: &[f64], y: f64, masks: &DropoutMasks) -> (f64, Gradients) {
        let cache = self.dnn_forward(x, masks);
        let loss = bce_loss(cache.p, y);
        let mut grads = Gradients::zeros(self);

        // delta on the current layer's pre-activation, walked backwards
        let mut delta = vec![cache.p - y];
        for i in (0..4).rev() {
            let layer = &self.layers[i];
            let input = &cache.inputs[i];
            let (dw, db) = &mut grads.layers[i];
            for r in 0..layer.rows {
                db[r] = delta[r];
                let row = &mut dw[r * layer.cols..(r + 1) * layer.cols];
                for c in 0..layer.cols {
                    row[c] = delta[r] * input[c];
                }
            }
            if i == 0 {
                break;
            }
            // propagate to the previous layer's activation
            let mut prev = vec![0.0; layer.cols];
            for r in 0..layer.rows {
                let row = &layer.w[r * layer.cols..(r + 1) * layer.cols];
                for c in 0..layer.cols {
                    prev[c] += row[c] * delta[r];
                }
            }
            // undo dropout, then the ReLU gate on the previous z
            if i == 2 {
                for (v, m) in prev.iter_mut().zip(&masks.masks[0]) {
                    *v *= m;
                }
            } else if i == 3 {
                for (v, m) in prev.iter_mut().zip(&masks.masks[1]) {
                    *v *= m;
                }
            }
            for (v, z) in prev.iter_mut().zip(&cache.zs[i - 1]) {
                if *z <= 0.0 {
                    *v = 0.0;
                }
            }
            delta = prev;
        }

        (loss, grads)
    }

    fn cnn_spec(&self) -> &super::CnnSpec {
        match &self.spec {
            ModelSpec::Cnn(s) => s,
            ModelSpec::Dnn(_) => unreachable!("cnn path on dnn spec"),
        }
    }

    fn cnn_forward(&self, x: &[f64], masks: &DropoutMasks) -> CnnCache {
        let s = self.cnn_spec();
        let (h, w) = (s.grid_h, s.grid_w);
        let (ph, pw) = s.pooled_dims();
        let cells = h * w;

        let mut grid = vec![0.0; cells];
        grid[..x.len()].copy_from_slice(x);

        let conv = &self.layers[0];
        let mut conv_z = vec![0.0; s.channels * cells];
        for c in 0..s.channels {
            let (wc, bc) = (conv.w[c], conv.b[c]);
            for i in 0..cells {
                conv_z[c * cells + i] = wc * grid[i] + bc;
            }
        }

        // 2x2 max-pool over the ReLU map, stride 2, truncated at odd edges
        let mut pooled = vec![0.0; s.channels * ph * pw];
        let mut argmax = vec![0usize; s.channels * ph * pw];
        for c in 0..s.channels {
            for pi in 0..ph {
                for pj in 0..pw {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for di in 0..2 {
                        for dj in 0..2 {
                            let (i, j) = (pi * 2 + di, pj * 2 + dj);
                            if i < h && j < w {
                                let v = relu(conv_z[c * cells + i * w + j]);
                                if v > best {
                                    best = v;
                                    best_idx = i * w + j;
                                }
                            }
                        }
                    }
                    pooled[c * ph * pw + pi * pw + pj] = best;
                    argmax[c * ph * pw + pi * pw + pj] = best_idx;
                }
            }
        }

        let mut pooled_dropped = pooled;
        for (v, m) in pooled_dropped.iter_mut().zip(&masks.masks[0]) {
            *v *= m;
        }

        let fc1 = &self.layers[1];
        let mut fc1_z = Vec::new();
        fc1.affine(&pooled_dropped, &mut fc1_z);
        let mut fc1_out: Vec<f64> = fc1_z.iter().copied().map(relu).collect();
        for (v, m) in fc1_out.iter_mut().zip(&masks.masks[1]) {
            *v *= m;
        }

        let out = &self.layers[2];
        let mut z_out = Vec::new();
        out.affine(&fc1_out, &mut z_out);
        let p = sigmoid(z_out[0]);

        CnnCache { grid, conv_z, pooled_dropped, argmax, fc1_z, fc1_out, p }
    }

    fn cnn_backward(&self, x: &[f64], y: f64, masks: &DropoutMasks) -> (f64, Gradients) {
        let s = self.cnn_spec();
        let (h, w) = (s.grid_h, s.grid_w);
        let (ph, pw) = s.pooled_dims();
        let cells = h * w;

        let cache = self.cnn_forward(x, masks);
        let loss = bce_loss(cache.p, y);
        let mut grads = Gradients::zeros(self);

        let dz_out = cache.p - y;
        {
            let out = &self.layers[2];
            let (dw, db) = &mut grads.layers[2];
            db[0] = dz_out;
            for c in 0..out.cols {
                dw[c] = dz_out * cache.fc1_out[c];
            }
        }

        // back through fc_out -> dropout -> ReLU -> fc1
        let out = &self.layers[2];
        let mut d_fc1: Vec<f64> = (0..out.cols).map(|c| out.w[c] * dz_out).collect();
        for ((v, m), z) in d_fc1.iter_mut().zip(&masks.masks[1]).zip(&cache.fc1_z) {
            *v *= m;
            if *z <= 0.0 {
                *v = 0.0;
            }
        }

        let fc1 = &self.layers[1];
        {
            let (dw, db) = &mut grads.layers[1];
            for r in 0..fc1.rows {
                db[r] = d_fc1[r];
                let row = &mut dw[r * fc1.cols..(r + 1) * fc1.cols];
                for c in 0..fc1.cols {
                    row[c] = d_fc1[r] * cache.pooled_dropped[c];
                }
            }
        }

        // back to the pooled map, then route through argmax to the conv map
        let mut d_pooled = vec![0.0; fc1.cols];
        for r in 0..fc1.rows {
            let row = &fc1.w[r * fc1.cols..(r + 1) * fc1.cols];
            for c in 0..fc1.cols {
                d_pooled[c] += row[c] * d_fc1[r];
            }
        }
        for (v, m) in d_pooled.iter_mut().zip(&masks.masks[0]) {
            *v *= m;
        }

        let (dw_conv, db_conv) = &mut grads.layers[0];
        for c in 0..s.channels {
            for cell in 0..ph * pw {
                let g = d_pooled[c * ph * pw + cell];
                if g == 0.0 {
                    continue;
                }
                let idx = cache.argmax[c * ph * pw + cell];
                let z = cache.conv_z[c * cells + idx];
                if z > 0.0 {
                    dw_conv[c] += g * cache.grid[idx];
                    db_conv[c] += g;
                }
            }
        }

        (loss, grads)
    }
}

/// Mini-batch SGD with momentum on binary cross-entropy. Rows are shuffled
/// per epoch from a seeded stream and dropout masks come from a second
/// seeded stream, so training is bit-reproducible for a fixed seed and row
/// order. Returns the trained model and the mean loss per epoch.
pub fn train(
    mut model: ModelState,
    x: &[Vec<f64>],
    y: &[u8],
    cfg: &TrainConfig,
) -> Result<(ModelState, Vec<f64>), ModelError> {
    if x.len() != y.len() {
        return Err(ModelError::ShapeMismatch { expected: x.len(), found: y.len() });
    }
    if !(y.iter().any(|&v| v == 1) && y.iter().any(|&v| v == 0)) {
        return Err(ModelError::SingleClass);
    }
    for (r, row) in x.iter().enumerate() {
        model.check_input(row)?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite(format!("training input row {r}")));
        }
    }
    if cfg.learning_rate <= 0.0 && cfg.learning_rate != 0.0 {
        return Err(ModelError::InvalidSpec("negative learning rate".into()));
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xD6E8_FEB8_6659_FD93);

    let mut velocity: Vec<(Vec<f64>, Vec<f64>)> = model
        .layers
        .iter()
        .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
        .collect();

    let n = x.len();
    let batch = cfg.batch_size.max(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        // Fisher-Yates off the seeded stream
        for i in (1..n).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let mut grad_sum = Gradients::zeros(&model);
            for &idx in chunk {
                let masks = model.sample_masks(&mut dropout_rng);
                let (loss, g) = model.loss_and_grad(&x[idx], y[idx] as f64, Some(&masks))?;
                epoch_loss += loss;
                grad_sum.add(&g);
            }
            grad_sum.scale(1.0 / chunk.len() as f64);

            for (l, ((vw, vb), (gw, gb))) in
                model.layers.iter_mut().zip(velocity.iter_mut().zip(&grad_sum.layers))
            {
                for i in 0..l.w.len() {
                    vw[i] = cfg.momentum * vw[i] - cfg.learning_rate * gw[i];
                    l.w[i] += vw[i];
                }
                for i in 0..l.b.len() {
                    vb[i] = cfg.momentum * vb[i] - cfg.learning_rate * gb[i];
                    l.b[i] += vb[i];
                }
            }
        }

        let mean_loss = epoch_loss / n as f64;
        if !mean_loss.is_finite() || !model.params_finite() {
            return Err(ModelError::NonFinite(format!("loss diverged at epoch {epoch}")));
        }
        history.push(mean_loss);
    }

    model.epochs_trained += cfg.epochs as u64;
    Ok((model, history))
}

/// Eval-mode predictions: `label = 1` iff `probability >= threshold`.
pub fn predict(
    model: &ModelState,
    x: &[Vec<f64>],
    threshold: f64,
) -> Result<Vec<(u8, f64)>, ModelError> {
    x.iter()
        .map(|row| {
            let p = model.forward_eval(row)?;
            Ok((u8::from(p >= threshold), p))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::{init_model, CnnSpec, DnnSpec, ModelSpec};
    use super::*;

    fn zero_weights(model: &mut ModelState) {
        for l in &mut model.layers {
            l.w.iter_mut().for_each(|v| *v = 0.0);
            l.b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn zero_model_outputs_half() {
        for spec in [
            ModelSpec::Dnn(DnnSpec::new(7, [5, 4, 3])),
            ModelSpec::Cnn(CnnSpec::for_input_dim(7)),
        ] {
            let mut m = init_model(spec, 0).unwrap();
            zero_weights(&mut m);
            let x = vec![0.3; 7];
            assert_eq!(m.forward_eval(&x).unwrap(), 0.5);
        }
    }

    #[test]
    fn eval_is_deterministic() {
        let m = init_model(ModelSpec::Dnn(DnnSpec::new(5, [6, 5, 4])), 3).unwrap();
        let x = vec![0.1, -0.4, 0.9, 0.0, 2.0];
        assert_eq!(m.forward_eval(&x).unwrap(), m.forward_eval(&x).unwrap());
    }

    #[test]
    fn identity_masks_match_eval_exactly() {
        for spec in [
            ModelSpec::Dnn(DnnSpec::new(9, [8, 6, 4])),
            ModelSpec::Cnn(CnnSpec::for_input_dim(9)),
        ] {
            let m = init_model(spec, 11).unwrap();
            let x: Vec<f64> = (0..9).map(|i| (i as f64) / 3.0 - 1.0).collect();
            let masks = DropoutMasks::identity(&m.spec);
            assert_eq!(m.forward_eval(&x).unwrap(), m.forward_train(&x, &masks).unwrap());
        }
    }

    #[test]
    fn rate_zero_dropout_is_identity() {
        let spec = ModelSpec::Dnn(DnnSpec { layer_sizes: [5, 4, 3, 3, 1], dropout_rate: 0.0 });
        let m = init_model(spec, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let masks = m.sample_masks(&mut rng);
        assert!(masks.masks.iter().flatten().all(|&v| v == 1.0));
        let x = vec![0.5; 5];
        assert_eq!(m.forward_train(&x, &masks).unwrap(), m.forward_eval(&x).unwrap());
    }

    /// Inverted-dropout scaling: a kept unit is multiplied by 1/(1-p), so
    /// the mask's expectation is 1 and a fixed activation keeps its mean.
    #[test]
    fn dropout_mask_expectation_is_one()
    {
        let m = init_model(ModelSpec::Dnn(DnnSpec::new(10, [8, 64, 4])), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let fixed_activation = 0.7312;
        let mut sum = 0.0;
        let draws = 10_000;
        for _ in 0..draws {
            let masks = m.sample_masks(&mut rng);
            sum += masks.masks[0][17] * fixed_activation;
        }
        let mean = sum / draws as f64;
        let rel = (mean - fixed_activation).abs() / fixed_activation;
        assert!(rel < 0.03, "dropout expectation off by {rel}");
    }

    #[test]
    fn shape_mismatch_rejected() {
        let m = init_model(ModelSpec::Dnn(DnnSpec::new(5, [4, 3, 2])), 1).unwrap();
        assert!(matches!(
            m.forward_eval(&[1.0, 2.0]),
            Err(ModelError::ShapeMismatch { expected: 5, found: 2 })
        ));
    }

    /// The 1x1 conv followed by ReLU is five scalar-scaled copies of the
    /// grid; checked against a direct elementwise oracle.
    #[test]
    fn conv_1x1_equals_scalar_scaling() {
        let spec = CnnSpec::for_input_dim(9);
        let m = init_model(ModelSpec::Cnn(spec), 21).unwrap();
        let x: Vec<f64> = (0..9).map(|i| (i as f64 - 4.0) / 3.0).collect();
        let masks = DropoutMasks::identity(&m.spec);
        let cache = m.cnn_forward(&x, &masks);
        let cells = spec.grid_h * spec.grid_w;
        for c in 0..spec.channels {
            for i in 0..cells {
                let g = if i < x.len() { x[i] } else { 0.0 };
                let expected = m.layers[0].w[c] * g + m.layers[0].b[c];
                assert_eq!(cache.conv_z[c * cells + i], expected);
            }
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let spec = ModelSpec::Dnn(DnnSpec::new(3, [4, 3, 2]));
        let m = init_model(spec, 9).unwrap();
        let before = m.clone();
        let x = vec![vec![0.1, 0.2, 0.3], vec![-0.5, 0.0, 1.0]];
        let y = vec![0, 1];
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 17, ..TrainConfig::default() };
        let (after, history) = train(m, &x, &y, &cfg).unwrap();
        assert_eq!(after.layers, before.layers);
        assert_eq!(history.len(), 17);
    }

    #[test]
    fn single_class_training_rejected() {
        let m = init_model(ModelSpec::Dnn(DnnSpec::new(2, [3, 3, 2])), 0).unwrap();
        let x = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert!(matches!(
            train(m, &x, &[1, 1], &TrainConfig::default()),
            Err(ModelError::SingleClass)
        ));
    }

    fn two_cluster_data(n: usize) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let label = (i % 2) as u8;
            let center = if label == 1 { 1.5 } else { -1.5 };
            x.push(vec![center + rng.gen_range(-0.5..0.5), center + rng.gen_range(-0.5..0.5)]);
            y.push(label);
        }
        (x, y)
    }

    /// Linearly separable clusters: training accuracy hits 1.0 and the
    /// final-epoch loss drops under 0.1. A logistic-regression oracle on
    /// the same data also separates it, confirming the data is easy.
    #[test]
    fn separable_clusters_reach_perfect_accuracy() {
        let (x, y) = two_cluster_data(40);

        // independent oracle: plain logistic regression via gradient descent
        let mut w = [0.0f64; 3];
        for _ in 0..500 {
            let mut g = [0.0f64; 3];
            for (xi, &yi) in x.iter().zip(&y) {
                let z = w[0] * xi[0] + w[1] * xi[1] + w[2];
                let p = 1.0 / (1.0 + (-z).exp());
                let d = p - yi as f64;
                g[0] += d * xi[0];
                g[1] += d * xi[1];
                g[2] += d;
            }
            for i in 0..3 {
                w[i] -= 0.1 * g[i] / x.len() as f64;
            }
        }
        let oracle_correct = x
            .iter()
            .zip(&y)
            .filter(|(xi, &yi)| {
                let z = w[0] * xi[0] + w[1] * xi[1] + w[2];
                u8::from(z >= 0.0) == yi
            })
            .count();
        assert_eq!(oracle_correct, x.len(), "oracle could not separate the data");

        let spec = ModelSpec::Dnn(DnnSpec::new(2, [16, 8, 4]));
        let m = init_model(spec, 1).unwrap();
        let cfg = TrainConfig { epochs: 200, seed: 1, ..TrainConfig::default() };
        let (trained, history) = train(m, &x, &y, &cfg).unwrap();

        let preds = predict(&trained, &x, 0.5).unwrap();
        let correct = preds.iter().zip(&y).filter(|((l, _), &yi)| *l == yi).count();
        assert_eq!(correct, x.len());
        assert!(history.last().unwrap() < &0.1, "final loss {}", history.last().unwrap());
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let (x, y) = two_cluster_data(24);
        let spec = ModelSpec::Cnn(CnnSpec::for_input_dim(2));
        let cfg = TrainConfig { epochs: 10, seed: 5, ..TrainConfig::default() };
        let (m1, h1) = train(init_model(spec, 2).unwrap(), &x, &y, &cfg).unwrap();
        let (m2, h2) = train(init_model(spec, 2).unwrap(), &x, &y, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn predict_threshold_is_inclusive() {
        let mut m = init_model(ModelSpec::Dnn(DnnSpec::new(2, [3, 3, 2])), 0).unwrap();
        zero_weights(&mut m);
        let preds = predict(&m, &[vec![1.0, -1.0]], 0.5).unwrap();
        assert_eq!(preds, vec![(1, 0.5)]);
    }

    /// Central finite differences against the analytic gradient, dropout
    /// masks held fixed, for both architectures. Biases are drawn randomly
    /// so no pre-activation sits exactly on the ReLU kink, where one-sided
    /// slopes would defeat the comparison.
    #[test]
    fn gradient_check_small_models() {
        let delta = 1e-5;
        for (spec, seed) in [
            (ModelSpec::Dnn(DnnSpec::new(6, [5, 4, 3])), 10u64),
            (ModelSpec::Cnn(CnnSpec::for_input_dim(6)), 11u64),
        ] {
            let mut model = init_model(spec, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            for l in &mut model.layers {
                for b in &mut l.b {
                    *b = rng.gen_range(-0.3..0.3);
                }
            }
            for trial in 0..5 {
                let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let y = f64::from(rng.gen::<bool>());
                let masks = model.sample_masks(&mut rng);
                let (_, analytic) = model.loss_and_grad(&x, y, Some(&masks)).unwrap();

                let flat_analytic: Vec<f64> = analytic
                    .layers
                    .iter()
                    .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
                    .collect();

                let mut probe = model.clone();
                for i in 0..model.param_count() {
                    let orig = probe.get_param(i);
                    probe.set_param(i, orig + delta);
                    let lp = probe.forward_train(&x, &masks).map(|p| bce_loss(p, y)).unwrap();
                    probe.set_param(i, orig - delta);
                    let lm = probe.forward_train(&x, &masks).map(|p| bce_loss(p, y)).unwrap();
                    probe.set_param(i, orig);
                    let numeric = (lp - lm) / (2.0 * delta);
                    let a = flat_analytic[i];
                    let denom = a.abs().max(numeric.abs());
                    if denom > 1e-8 {
                        let rel = (a - numeric).abs() / denom;
                        assert!(
                            rel < 1e-4,
                            "trial {trial} param {i}: analytic {a}, numeric {numeric}, rel {rel}"
                        );
                    } else {
                        assert!((a - numeric).abs() < 1e-8);
                    }
                }
            }
        }
    }
}
