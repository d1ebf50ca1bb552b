//! Localization stage: the binary classifier, its class activation maps,
//! and CAM-to-seed thresholding.
//!
//! The classifier is three 3×3 conv layers (32, 32, 64 channels, ReLU) with
//! 2×2 max pooling after the first two, a global average pooling head, and a
//! dense layer to 2 logits. CAMs weight the final conv feature maps by the
//! dense weights of the target class, upsample bilinearly to image size, and
//! min-max normalize.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{bilinear_upsample, Image, SeedMap};
use crate::tensor::adam::AdamState;
use crate::tensor::network::{Network, NetworkBuilder, NodeId, Workspace};
use crate::tensor::Tensor;

/// A trained (or training) localization classifier.
pub struct ClassifierModel {
    pub net: Network,
    feature_node: NodeId,
    logits_node: NodeId,
}

impl ClassifierModel {
    pub fn feature_node(&self) -> NodeId {
        self.feature_node
    }

    pub fn logits_node(&self) -> NodeId {
        self.logits_node
    }

    pub fn input_height(&self) -> usize {
        self.net.input_shape()[1]
    }

    pub fn input_width(&self) -> usize {
        self.net.input_shape()[2]
    }

    /// Feature-map resolution (input downsampled by the two pools).
    pub fn feature_dims(&self) -> (usize, usize) {
        let s = self.net.node_shape(self.feature_node);
        (s[1], s[2])
    }

    /// Dense weights of one class row, indexed by feature channel.
    pub fn class_weights(&self, class_index: usize) -> &[f64] {
        let p = self.net.params_of(self.logits_node).expect("dense layer has parameters");
        let nin = p.weights.shape()[1];
        &p.weights.values()[class_index * nin..(class_index + 1) * nin]
    }
}

pub fn build_classifier(h: usize, w: usize, seed: u64) -> Result<ClassifierModel> {
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::InvalidConfig(format!(
            "classifier input {h}x{w} must be divisible by 4 (two pooling stages)"
        )));
    }
    let mut b = NetworkBuilder::new(&[1, h, w]);
    let c1 = b.conv2d(b.input(), 32, 3)?;
    let r1 = b.relu(c1)?;
    let p1 = b.maxpool2x2(r1)?;
    let c2 = b.conv2d(p1, 32, 3)?;
    let r2 = b.relu(c2)?;
    let p2 = b.maxpool2x2(r2)?;
    let c3 = b.conv2d(p2, 64, 3)?;
    let feature = b.relu(c3)?;
    let gap = b.global_avg_pool(feature)?;
    let logits = b.dense(gap, 2)?;
    let net = b.build(logits, seed)?;
    Ok(ClassifierModel {
        net,
        feature_node: feature,
        logits_node: logits,
    })
}

#[derive(Debug, Clone)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop once training accuracy is 1.0 and the epoch mean loss is below
    /// this for `early_stop_patience` consecutive epochs.
    pub early_stop_loss: Option<f64>,
    pub early_stop_patience: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 300,
            learning_rate: 1e-3,
            batch_size: 8,
            seed: 0,
            early_stop_loss: Some(0.02),
            early_stop_patience: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierEpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
}

fn image_tensor(image: &Image) -> Tensor {
    Tensor::from_vec(&[1, image.height(), image.width()], image.pixels().to_vec())
        .expect("image buffer length matches its dimensions")
}

fn softmax2(logits: &[f64]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

/// Trains the classifier on image-level labels with softmax cross entropy.
/// Deterministic for a fixed config; batch members run in parallel with
/// fixed-order gradient reduction.
pub fn train_classifier(
    images: &[Image],
    labels: &[u8],
    cfg: &ClassifierConfig,
) -> Result<(ClassifierModel, Vec<ClassifierEpochStats>)> {
    if images.is_empty() || images.len() != labels.len() {
        return Err(Error::InvalidConfig(format!(
            "training set of {} images with {} labels",
            images.len(),
            labels.len()
        )));
    }
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(Error::InvalidConfig(
            "classifier training needs both classes present (CAM is undefined for an absent class)".into(),
        ));
    }
    let (h, w) = (images[0].height(), images[0].width());
    let model = build_classifier(h, w, cfg.seed)?;
    let mut net = model.net;
    let mut adam = AdamState::new(net.param_len(), cfg.learning_rate, 0.0);
    let inputs: Vec<Tensor> = images.iter().map(image_tensor).collect();

    let batch = cfg.batch_size.max(1);
    let mut slots: Vec<Workspace> = (0..batch.min(images.len())).map(|_| net.workspace()).collect();
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x10c0_c1a5_51f1_e500);
    let mut params = net.params_flat();
    let mut trace = Vec::new();
    let mut calm = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(batch) {
            let active = chunk.len();
            let results: Vec<Result<(f64, bool)>> = slots[..active]
                .par_iter_mut()
                .zip(chunk.par_iter())
                .map(|(ws, &ix)| {
                    ws.zero_param_grads();
                    let logits = net.forward(ws, &inputs[ix])?.to_vec();
                    let p = softmax2(&logits);
                    let y = labels[ix] as usize;
                    let loss = -(p[y].max(1e-12)).ln();
                    let mut dlogits = [p[0], p[1]];
                    dlogits[y] -= 1.0;
                    net.backward(ws, &dlogits)?;
                    let pred = usize::from(p[1] > p[0]);
                    Ok((loss, pred == y))
                })
                .collect();
            let mut grad = vec![0.0; net.param_len()];
            for (slot, res) in slots[..active].iter().zip(results) {
                let (l, ok) = res?;
                loss_sum += l;
                correct += usize::from(ok);
                for (g, pg) in grad.iter_mut().zip(slot.param_grads()) {
                    *g += pg;
                }
            }
            let inv = 1.0 / active as f64;
            for g in &mut grad {
                *g *= inv;
            }
            adam.step(&mut params, &grad)?;
            net.set_params_flat(&params)?;
        }
        let mean_loss = loss_sum / images.len() as f64;
        let accuracy = correct as f64 / images.len() as f64;
        trace.push(ClassifierEpochStats {
            epoch,
            mean_loss,
            accuracy,
        });
        if let Some(stop) = cfg.early_stop_loss {
            if accuracy == 1.0 && mean_loss < stop {
                calm += 1;
            } else {
                calm = 0;
            }
            if calm >= cfg.early_stop_patience {
                break;
            }
        }
    }
    Ok((
        ClassifierModel {
            net,
            feature_node: model.feature_node,
            logits_node: model.logits_node,
        },
        trace,
    ))
}

/// Predicted label and class probabilities for one image.
pub fn predict(model: &ClassifierModel, image: &Image) -> Result<(u8, [f64; 2])> {
    let mut ws = model.net.workspace();
    let logits = model.net.forward(&mut ws, &image_tensor(image))?;
    let p = softmax2(logits);
    Ok((u8::from(p[1] > p[0]), p))
}

/// Classification accuracy over a labeled set; images evaluate in parallel.
pub fn evaluate_accuracy(model: &ClassifierModel, images: &[Image], labels: &[u8]) -> Result<f64> {
    let hits: Vec<Result<bool>> = images
        .par_iter()
        .zip(labels.par_iter())
        .map(|(img, &y)| {
            let (pred, _) = predict(model, img)?;
            Ok(pred == y)
        })
        .collect();
    let mut correct = 0usize;
    for h in hits {
        correct += usize::from(h?);
    }
    Ok(correct as f64 / images.len().max(1) as f64)
}

/// A class activation map; `normalized` records whether min-max scaling to
/// [0,1] was applied (a constant raw map normalizes to all zeros).
#[derive(Debug, Clone)]
pub struct CamMap {
    pub values: Vec<f64>,
    pub h: usize,
    pub w: usize,
    pub normalized: bool,
}

/// CAM at feature resolution, before upsampling or normalization:
/// cam(x, y) = Σ_c w_{class,c} · f_c(x, y).
pub fn compute_cam_raw(model: &ClassifierModel, image: &Image, class_index: usize) -> Result<CamMap> {
    let mut ws = model.net.workspace();
    model.net.forward(&mut ws, &image_tensor(image))?;
    let feat = model.net.activation(&ws, model.feature_node);
    let (fh, fw) = model.feature_dims();
    let weights = model.class_weights(class_index);
    let plane = fh * fw;
    let mut values = vec![0.0; plane];
    for (c, &wc) in weights.iter().enumerate() {
        for (v, f) in values.iter_mut().zip(&feat[c * plane..(c + 1) * plane]) {
            *v += wc * f;
        }
    }
    Ok(CamMap {
        values,
        h: fh,
        w: fw,
        normalized: false,
    })
}

/// Image-resolution CAM: bilinear upsampling then min-max normalization.
pub fn compute_cam(model: &ClassifierModel, image: &Image, class_index: usize) -> Result<CamMap> {
    let raw = compute_cam_raw(model, image, class_index)?;
    let (h, w) = (image.height(), image.width());
    let mut values = bilinear_upsample(&raw.values, raw.h, raw.w, h, w);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max - min < 1e-12 {
        values.fill(0.0);
    } else {
        for v in &mut values {
            *v = (*v - min) / (max - min);
        }
    }
    Ok(CamMap {
        values,
        h,
        w,
        normalized: true,
    })
}

/// Thresholds a normalized CAM into adipose seeds. Negative images produce
/// no seeds regardless of the map.
pub fn extract_seeds(cam: &CamMap, image_label: u8, threshold: f64) -> SeedMap {
    debug_assert!(cam.normalized, "extract_seeds expects a normalized CAM");
    let mut seeds = SeedMap::empty(cam.h, cam.w);
    if image_label == 0 {
        return seeds;
    }
    for (mark, &v) in seeds.marks_mut().iter_mut().zip(&cam.values) {
        *mark = v >= threshold;
    }
    seeds
}
