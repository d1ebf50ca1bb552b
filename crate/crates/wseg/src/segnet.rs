//! Segmentation stage: the U-Net, the three loss terms, and training on
//! pseudo labels.
//!
//! Losses follow the usual soft formulations: pixel-mean cross entropy,
//! a seed loss that is cross entropy restricted to pixels labeled adipose
//! (so pseudo-label false negatives cost nothing), and a soft Dice loss
//! averaged over both classes. The combined objective is
//! `w1·CEL + (1−w1)·SL + w2·DL`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Image, LabelMask};
use crate::tensor::adam::AdamState;
use crate::tensor::network::{Network, NetworkBuilder, NodeId, Workspace};
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 2;

/// Probabilities are clamped to at least this before any logarithm.
const LOG_FLOOR: f64 = 1e-12;
/// Stabilizer added to every Dice denominator.
const DICE_EPS: f64 = 1e-7;

/// Per-pixel class probabilities, 2×H×W, each pixel summing to 1.
#[derive(Debug, Clone)]
pub struct ProbabilityMap {
    h: usize,
    w: usize,
    values: Vec<f64>,
}

impl ProbabilityMap {
    pub fn from_vec(h: usize, w: usize, values: Vec<f64>) -> Result<ProbabilityMap> {
        if values.len() != NUM_CLASSES * h * w {
            return Err(Error::shape("ProbabilityMap::from_vec", NUM_CLASSES * h * w, values.len()));
        }
        Ok(ProbabilityMap { h, w, values })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Probability of the adipose class at each pixel.
    pub fn class1(&self) -> &[f64] {
        &self.values[self.h * self.w..]
    }

    /// Hard per-pixel argmax segmentation.
    pub fn argmax_mask(&self) -> LabelMask {
        let plane = self.h * self.w;
        let mut mask = LabelMask::zeros(self.h, self.w);
        for px in 0..plane {
            if self.values[plane + px] > self.values[px] {
                mask.classes_mut()[px] = 1;
            }
        }
        mask
    }
}

/// One-hot encoding of a binary mask, 2×H×W with exactly one 1 per pixel.
#[derive(Debug, Clone)]
pub struct OneHotLabel {
    h: usize,
    w: usize,
    values: Vec<u8>,
}

impl OneHotLabel {
    pub fn from_mask(mask: &LabelMask) -> OneHotLabel {
        let (h, w) = (mask.height(), mask.width());
        let plane = h * w;
        let mut values = vec![0u8; NUM_CLASSES * plane];
        for (px, &c) in mask.classes().iter().enumerate() {
            values[c as usize * plane + px] = 1;
        }
        OneHotLabel { h, w, values }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    /// Number of pixels labeled with class 1 (|Ω₁|).
    pub fn positive_count(&self) -> usize {
        let plane = self.h * self.w;
        self.values[plane..].iter().filter(|&&v| v == 1).count()
    }
}

/// Weights of the combined objective: `w1` trades CEL against SL, `w2`
/// scales the Dice term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w1: f64,
    pub w2: f64,
}

impl LossWeights {
    pub fn new(w1: f64, w2: f64) -> Result<LossWeights> {
        if !(0.0..=1.0).contains(&w1) || !w1.is_finite() {
            return Err(Error::InvalidConfig(format!("w1 must lie in [0,1], got {w1}")));
        }
        if w2 < 0.0 || !w2.is_finite() {
            return Err(Error::InvalidConfig(format!("w2 must be >= 0, got {w2}")));
        }
        Ok(LossWeights { w1, w2 })
    }
}

/// The default `w1`: the adipose pixel fraction of the training labels,
/// clamped to [0.1, 0.9]; `w2` is fixed at 0.5.
pub fn default_loss_weights(labels: &[LabelMask]) -> LossWeights {
    let total: usize = labels.iter().map(|m| m.classes().len()).sum();
    let positive: usize = labels.iter().map(|m| m.positive_count()).sum();
    let frac = if total == 0 { 0.5 } else { positive as f64 / total as f64 };
    LossWeights {
        w1: frac.clamp(0.1, 0.9),
        w2: 0.5,
    }
}

fn check_same_shape(p: &ProbabilityMap, y: &OneHotLabel, context: &str) -> Result<()> {
    if p.h != y.h || p.w != y.w {
        return Err(Error::shape(
            context,
            format!("{}x{}", p.h, p.w),
            format!("{}x{}", y.h, y.w),
        ));
    }
    Ok(())
}

#[inline]
fn clamped(p: f64) -> f64 {
    p.max(LOG_FLOOR)
}

/// Pixel-mean cross entropy: −(1/|Ω|) Σ_x Σ_k y_k(x) log p_k(x).
pub fn cel(p: &ProbabilityMap, y: &OneHotLabel) -> Result<f64> {
    check_same_shape(p, y, "cel")?;
    let n = (p.h * p.w) as f64;
    let mut acc = 0.0;
    for (pv, &yv) in p.values.iter().zip(&y.values) {
        if yv == 1 {
            acc -= clamped(*pv).ln();
        }
    }
    Ok(acc / n)
}

/// d(CEL)/dp, same 2×H×W layout as the probability map.
pub fn cel_grad(p: &ProbabilityMap, y: &OneHotLabel) -> Result<Vec<f64>> {
    check_same_shape(p, y, "cel_grad")?;
    let n = (p.h * p.w) as f64;
    Ok(p.values
        .iter()
        .zip(&y.values)
        .map(|(pv, &yv)| if yv == 1 { -1.0 / (n * clamped(*pv)) } else { 0.0 })
        .collect())
}

/// Seed loss: cross entropy restricted to Ω₁ (pixels labeled adipose),
/// −(1/|Ω₁|) Σ_{x∈Ω₁} log p₁(x). Returns 0 when Ω₁ is empty.
pub fn seed_loss(p: &ProbabilityMap, y: &OneHotLabel) -> Result<f64> {
    check_same_shape(p, y, "seed_loss")?;
    let plane = p.h * p.w;
    let omega1 = y.positive_count();
    if omega1 == 0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for px in 0..plane {
        if y.values[plane + px] == 1 {
            acc -= clamped(p.values[plane + px]).ln();
        }
    }
    Ok(acc / omega1 as f64)
}

pub fn seed_loss_grad(p: &ProbabilityMap, y: &OneHotLabel) -> Result<Vec<f64>> {
    check_same_shape(p, y, "seed_loss_grad")?;
    let plane = p.h * p.w;
    let mut grad = vec![0.0; NUM_CLASSES * plane];
    let omega1 = y.positive_count();
    if omega1 == 0 {
        return Ok(grad);
    }
    let inv = 1.0 / omega1 as f64;
    for px in 0..plane {
        if y.values[plane + px] == 1 {
            grad[plane + px] = -inv / clamped(p.values[plane + px]);
        }
    }
    Ok(grad)
}

/// Soft Dice loss averaged over both classes:
/// 1 − (1/K) Σ_k 2·Σ p_k y_k / (Σ p_k² + Σ y_k² + ε).
pub fn dice_loss(p: &ProbabilityMap, y: &OneHotLabel) -> Result<f64> {
    check_same_shape(p, y, "dice_loss")?;
    let plane = p.h * p.w;
    let mut acc = 0.0;
    for k in 0..NUM_CLASSES {
        let pk = &p.values[k * plane..(k + 1) * plane];
        let yk = &y.values[k * plane..(k + 1) * plane];
        let mut inter = 0.0;
        let mut psq = 0.0;
        let mut ysq = 0.0;
        for (pv, &yv) in pk.iter().zip(yk) {
            inter += pv * yv as f64;
            psq += pv * pv;
            ysq += (yv * yv) as f64;
        }
        acc += 2.0 * inter / (psq + ysq + DICE_EPS);
    }
    Ok(1.0 - acc / NUM_CLASSES as f64)
}

pub fn dice_loss_grad(p: &ProbabilityMap, y: &OneHotLabel) -> Result<Vec<f64>> {
    check_same_shape(p, y, "dice_loss_grad")?;
    let plane = p.h * p.w;
    let mut grad = vec![0.0; NUM_CLASSES * plane];
    for k in 0..NUM_CLASSES {
        let pk = &p.values[k * plane..(k + 1) * plane];
        let yk = &y.values[k * plane..(k + 1) * plane];
        let mut inter = 0.0;
        let mut psq = 0.0;
        let mut ysq = 0.0;
        for (pv, &yv) in pk.iter().zip(yk) {
            inter += pv * yv as f64;
            psq += pv * pv;
            ysq += (yv * yv) as f64;
        }
        let denom = psq + ysq + DICE_EPS;
        let gk = &mut grad[k * plane..(k + 1) * plane];
        for ((g, pv), &yv) in gk.iter_mut().zip(pk).zip(yk) {
            // d/dp of 2·inter/denom, then negated and averaged over classes
            let d = (2.0 * yv as f64 * denom - 4.0 * inter * pv) / (denom * denom);
            *g = -d / NUM_CLASSES as f64;
        }
    }
    Ok(grad)
}

/// `w1·CEL + (1−w1)·SL + w2·DL`.
pub fn combined_loss(p: &ProbabilityMap, y: &OneHotLabel, w: LossWeights) -> Result<f64> {
    Ok(w.w1 * cel(p, y)? + (1.0 - w.w1) * seed_loss(p, y)? + w.w2 * dice_loss(p, y)?)
}

/// The three components of the combined objective, in (cel, sl, dl) order.
pub fn loss_components(p: &ProbabilityMap, y: &OneHotLabel) -> Result<(f64, f64, f64)> {
    Ok((cel(p, y)?, seed_loss(p, y)?, dice_loss(p, y)?))
}

pub fn combined_loss_grad(p: &ProbabilityMap, y: &OneHotLabel, w: LossWeights) -> Result<Vec<f64>> {
    let gc = cel_grad(p, y)?;
    let gs = seed_loss_grad(p, y)?;
    let gd = dice_loss_grad(p, y)?;
    Ok(gc
        .iter()
        .zip(&gs)
        .zip(&gd)
        .map(|((c, s), d)| w.w1 * c + (1.0 - w.w1) * s + w.w2 * d)
        .collect())
}

// ---------------------------------------------------------------------------
// U-Net
// ---------------------------------------------------------------------------

/// Architecture knobs for the segmentation U-Net.
#[derive(Debug, Clone, Copy)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_channels: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            depth: 3,
            base_channels: 16,
        }
    }
}

/// A built U-Net; the output node is the pixelwise softmax.
pub struct SegModel {
    pub net: Network,
    prob_node: NodeId,
}

impl SegModel {
    pub fn prob_node(&self) -> NodeId {
        self.prob_node
    }

    pub fn input_height(&self) -> usize {
        self.net.input_shape()[1]
    }

    pub fn input_width(&self) -> usize {
        self.net.input_shape()[2]
    }
}

/// Builds the encoder/decoder network: `depth` levels of conv-conv-pool, a
/// bottleneck, then upsample + skip concatenation back up, a 1×1 conv to 2
/// channels, and a pixelwise softmax.
pub fn build_unet(h: usize, w: usize, cfg: UNetConfig, seed: u64) -> Result<SegModel> {
    if cfg.depth == 0 || cfg.base_channels == 0 {
        return Err(Error::InvalidConfig("unet depth and base_channels must be positive".into()));
    }
    let div = 1usize << cfg.depth;
    if h % div != 0 || w % div != 0 {
        return Err(Error::InvalidConfig(format!(
            "unet input {h}x{w} must be divisible by 2^depth = {div}"
        )));
    }
    let mut b = NetworkBuilder::new(&[1, h, w]);
    let mut x = b.input();
    let conv_relu = |b: &mut NetworkBuilder, x: NodeId, ch: usize| -> Result<NodeId> {
        let c = b.conv2d(x, ch, 3)?;
        b.relu(c)
    };
    let mut skips = Vec::with_capacity(cfg.depth);
    for d in 0..cfg.depth {
        let ch = cfg.base_channels << d;
        x = conv_relu(&mut b, x, ch)?;
        x = conv_relu(&mut b, x, ch)?;
        skips.push(x);
        x = b.maxpool2x2(x)?;
    }
    let bott = cfg.base_channels << cfg.depth;
    x = conv_relu(&mut b, x, bott)?;
    x = conv_relu(&mut b, x, bott)?;
    for d in (0..cfg.depth).rev() {
        let ch = cfg.base_channels << d;
        x = b.upsample2x(x)?;
        x = b.concat_skip(x, skips[d])?;
        x = conv_relu(&mut b, x, ch)?;
        x = conv_relu(&mut b, x, ch)?;
    }
    let logits = b.conv2d(x, NUM_CLASSES, 1)?;
    let prob = b.softmax_pixelwise(logits)?;
    let net = b.build(prob, seed)?;
    Ok(SegModel {
        net,
        prob_node: prob,
    })
}

fn image_tensor(image: &Image) -> Tensor {
    Tensor::from_vec(&[1, image.height(), image.width()], image.pixels().to_vec())
        .expect("image buffer length matches its dimensions")
}

/// Forward pass producing per-pixel class probabilities.
pub fn segment_probabilities(model: &SegModel, ws: &mut Workspace, image: &Image) -> Result<ProbabilityMap> {
    let out = model.net.forward(ws, &image_tensor(image))?;
    ProbabilityMap::from_vec(image.height(), image.width(), out.to_vec())
}

/// Hard segmentation of one image.
pub fn predict_mask(model: &SegModel, image: &Image) -> Result<LabelMask> {
    let mut ws = model.net.workspace();
    Ok(segment_probabilities(model, &mut ws, image)?.argmax_mask())
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SegTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub unet: UNetConfig,
    /// `None` resolves to [`default_loss_weights`] on the training labels.
    pub loss_weights: Option<LossWeights>,
    pub seed: u64,
    /// Stop once the epoch mean loss has improved by less than
    /// `early_stop_min_delta` (relatively) for this many consecutive epochs;
    /// 0 disables early stopping.
    pub early_stop_patience: usize,
    pub early_stop_min_delta: f64,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        SegTrainConfig {
            epochs: 200,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 4,
            unet: UNetConfig::default(),
            loss_weights: None,
            seed: 0,
            early_stop_patience: 0,
            early_stop_min_delta: 0.0,
        }
    }
}

/// Per-epoch loss trace; `val_dice` is present only when a validation set was
/// supplied and evaluated that epoch.
#[derive(Debug, Clone)]
pub struct SegEpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub cel: f64,
    pub sl: f64,
    pub dl: f64,
    pub val_dice: Option<f64>,
}

/// Trains the U-Net with Adam under the combined objective. Deterministic
/// for a fixed config and seed; batch members run in parallel but gradients
/// are reduced in batch order.
pub fn train_segmentation(
    images: &[Image],
    labels: &[LabelMask],
    cfg: &SegTrainConfig,
    validation: Option<(&[Image], &[LabelMask])>,
) -> Result<(SegModel, Vec<SegEpochStats>)> {
    if images.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    if images.len() != labels.len() {
        return Err(Error::shape("train_segmentation labels", images.len(), labels.len()));
    }
    let (h, w) = (images[0].height(), images[0].width());
    for (i, (img, lab)) in images.iter().zip(labels).enumerate() {
        if img.height() != h || img.width() != w || lab.height() != h || lab.width() != w {
            return Err(Error::shape(
                format!("training sample {i}"),
                format!("{h}x{w}"),
                format!("{}x{} / {}x{}", img.height(), img.width(), lab.height(), lab.width()),
            ));
        }
    }
    let weights = match cfg.loss_weights {
        Some(w) => w,
        None => default_loss_weights(labels),
    };
    LossWeights::new(weights.w1, weights.w2)?;

    let model = build_unet(h, w, cfg.unet, cfg.seed)?;
    let mut net = model.net;
    let mut adam = AdamState::new(net.param_len(), cfg.learning_rate, cfg.weight_decay);
    let onehots: Vec<OneHotLabel> = labels.iter().map(OneHotLabel::from_mask).collect();
    let inputs: Vec<Tensor> = images.iter().map(image_tensor).collect();

    let batch = cfg.batch_size.max(1);
    let mut slots: Vec<Workspace> = (0..batch.min(images.len())).map(|_| net.workspace()).collect();
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e67_a2d1_90b3_4c1f);

    let mut trace: Vec<SegEpochStats> = Vec::with_capacity(cfg.epochs);
    let mut stall = 0usize;
    let mut params = net.params_flat();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        let mut seen = 0usize;
        for chunk in order.chunks(batch) {
            let active = chunk.len();
            let results: Vec<Result<(f64, f64, f64, f64)>> = slots[..active]
                .par_iter_mut()
                .zip(chunk.par_iter())
                .map(|(ws, &ix)| {
                    ws.zero_param_grads();
                    net.forward(ws, &inputs[ix])?;
                    let out = net.activation(ws, net.output_id());
                    let p = ProbabilityMap::from_vec(h, w, out.to_vec())?;
                    let (lc, ls, ld) = loss_components(&p, &onehots[ix])?;
                    let total = weights.w1 * lc + (1.0 - weights.w1) * ls + weights.w2 * ld;
                    if !total.is_finite() {
                        return Err(Error::NonFinite {
                            context: format!("training loss on sample {ix}"),
                            index: 0,
                        });
                    }
                    let grad = combined_loss_grad(&p, &onehots[ix], weights)?;
                    net.backward(ws, &grad)?;
                    Ok((total, lc, ls, ld))
                })
                .collect();
            // fixed-order gradient reduction across the batch
            let mut grad = vec![0.0; net.param_len()];
            for (slot, res) in slots[..active].iter().zip(results) {
                let (l, lc, ls, ld) = res?;
                sums.0 += l;
                sums.1 += lc;
                sums.2 += ls;
                sums.3 += ld;
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
            seen += active;
        }
        let n = seen as f64;
        let mean_loss = sums.0 / n;
        let val_dice = match validation {
            Some((vi, vm)) if epoch + 1 == cfg.epochs => Some(validation_dice(&net, model.prob_node, vi, vm)?),
            _ => None,
        };
        trace.push(SegEpochStats {
            epoch,
            loss: mean_loss,
            cel: sums.1 / n,
            sl: sums.2 / n,
            dl: sums.3 / n,
            val_dice,
        });
        if cfg.early_stop_patience > 0 && epoch > 0 {
            let prev = trace[epoch - 1].loss;
            if prev - mean_loss < cfg.early_stop_min_delta * prev.abs() {
                stall += 1;
            } else {
                stall = 0;
            }
            if stall >= cfg.early_stop_patience {
                break;
            }
        }
    }
    Ok((
        SegModel {
            net,
            prob_node: model.prob_node,
        },
        trace,
    ))
}

fn validation_dice(net: &Network, prob_node: NodeId, images: &[Image], masks: &[LabelMask]) -> Result<f64> {
    let scores: Vec<Result<f64>> = images
        .par_iter()
        .zip(masks.par_iter())
        .map(|(img, mask)| {
            let mut ws = net.workspace();
            net.forward(&mut ws, &image_tensor(img))?;
            let p = ProbabilityMap::from_vec(img.height(), img.width(), net.activation(&ws, prob_node).to_vec())?;
            let pred = p.argmax_mask();
            let c = crate::metrics::confusion(&pred, mask)?;
            Ok(crate::metrics::derive_metrics(&c).dice)
        })
        .collect();
    let mut total = 0.0;
    for s in &scores {
        match s {
            Ok(v) => total += v,
            Err(_) => return Err(Error::InvalidConfig("validation failed".into())),
        }
    }
    Ok(total / images.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(h: usize, w: usize, seed: u64) -> (ProbabilityMap, OneHotLabel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plane = h * w;
        let mut values = vec![0.0; 2 * plane];
        let mut mask = LabelMask::zeros(h, w);
        for px in 0..plane {
            let p1: f64 = rng.gen_range(0.02..0.98);
            values[px] = 1.0 - p1;
            values[plane + px] = p1;
            mask.classes_mut()[px] = u8::from(rng.gen_bool(0.4));
        }
        (
            ProbabilityMap::from_vec(h, w, values).unwrap(),
            OneHotLabel::from_mask(&mask),
        )
    }

    /// Plain double-loop references for the three losses.
    fn cel_oracle(p: &ProbabilityMap, y: &OneHotLabel) -> f64 {
        let plane = p.height() * p.width();
        let mut acc = 0.0;
        for px in 0..plane {
            for k in 0..2 {
                if y.values()[k * plane + px] == 1 {
                    acc -= p.values()[k * plane + px].max(1e-12).ln();
                }
            }
        }
        acc / plane as f64
    }

    fn seed_oracle(p: &ProbabilityMap, y: &OneHotLabel) -> f64 {
        let plane = p.height() * p.width();
        let mut acc = 0.0;
        let mut n = 0usize;
        for px in 0..plane {
            if y.values()[plane + px] == 1 {
                acc -= p.values()[plane + px].max(1e-12).ln();
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            acc / n as f64
        }
    }

    fn dice_oracle(p: &ProbabilityMap, y: &OneHotLabel) -> f64 {
        let plane = p.height() * p.width();
        let mut acc = 0.0;
        for k in 0..2 {
            let mut inter = 0.0;
            let mut psq = 0.0;
            let mut ysq = 0.0;
            for px in 0..plane {
                let pv = p.values()[k * plane + px];
                let yv = y.values()[k * plane + px] as f64;
                inter += pv * yv;
                psq += pv * pv;
                ysq += yv * yv;
            }
            acc += 2.0 * inter / (psq + ysq + 1e-7);
        }
        1.0 - acc / 2.0
    }

    #[test]
    fn cel_perfect_prediction_is_zero() {
        // 16×16 with an 8×8 positive block; at this size the Dice epsilon
        // stabilizer perturbs the perfect score by well under 1e-9.
        let mut mask = LabelMask::zeros(16, 16);
        for r in 4..12 {
            for c in 4..12 {
                mask.set(r, c, 1);
            }
        }
        let y = OneHotLabel::from_mask(&mask);
        let plane = 256;
        let mut values = vec![0.0; 2 * plane];
        for px in 0..plane {
            let c = mask.classes()[px] as usize;
            values[c * plane + px] = 1.0;
        }
        let p = ProbabilityMap::from_vec(16, 16, values).unwrap();
        assert!(cel(&p, &y).unwrap().abs() <= 1e-10);
        assert!(dice_loss(&p, &y).unwrap().abs() <= 1e-9);
    }

    #[test]
    fn cel_uniform_is_ln_two() {
        let mask = LabelMask::zeros(4, 5);
        let y = OneHotLabel::from_mask(&mask);
        let p = ProbabilityMap::from_vec(4, 5, vec![0.5; 40]).unwrap();
        assert!((cel(&p, &y).unwrap() - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn losses_match_loop_oracles() {
        for seed in 0..20 {
            let (p, y) = random_instance(3, 3, seed);
            assert!((cel(&p, &y).unwrap() - cel_oracle(&p, &y)).abs() < 1e-12);
            assert!((seed_loss(&p, &y).unwrap() - seed_oracle(&p, &y)).abs() < 1e-12);
            assert!((dice_loss(&p, &y).unwrap() - dice_oracle(&p, &y)).abs() < 1e-12);
        }
    }

    #[test]
    fn seed_loss_cases() {
        // empty Ω₁ → 0
        let y = OneHotLabel::from_mask(&LabelMask::zeros(2, 2));
        let p = ProbabilityMap::from_vec(2, 2, vec![0.7, 0.7, 0.7, 0.7, 0.3, 0.3, 0.3, 0.3]).unwrap();
        assert_eq!(seed_loss(&p, &y).unwrap(), 0.0);
        assert!(seed_loss_grad(&p, &y).unwrap().iter().all(|&g| g == 0.0));

        // p₁ = 1 on Ω₁ → 0; p₁ = 0.5 on Ω₁ → ln 2
        let mut mask = LabelMask::zeros(2, 2);
        mask.set(0, 0, 1);
        mask.set(1, 1, 1);
        let y = OneHotLabel::from_mask(&mask);
        let p = ProbabilityMap::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(seed_loss(&p, &y).unwrap().abs() <= 1e-10);
        let p = ProbabilityMap::from_vec(2, 2, vec![0.5; 8]).unwrap();
        assert!((seed_loss(&p, &y).unwrap() - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn dice_disjoint_prediction() {
        let mut mask = LabelMask::zeros(2, 3);
        mask.set(0, 0, 1);
        mask.set(0, 1, 1);
        let y = OneHotLabel::from_mask(&mask);
        // p₁ ≡ 0
        let mut values = vec![0.0; 12];
        values[..6].fill(1.0);
        let p = ProbabilityMap::from_vec(2, 3, values).unwrap();
        // class-1 term vanishes, so loss = 1 − dice₀/2
        let dice0 = 2.0 * 4.0 / (6.0 + 4.0 + 1e-7);
        assert!((dice_loss(&p, &y).unwrap() - (1.0 - dice0 / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn combined_is_affine_in_components() {
        let (p, y) = random_instance(4, 4, 99);
        let (lc, ls, ld) = loss_components(&p, &y).unwrap();
        let w = LossWeights::new(0.3, 0.5).unwrap();
        let got = combined_loss(&p, &y, w).unwrap();
        assert!((got - (0.3 * lc + 0.7 * ls + 0.5 * ld)).abs() < 1e-12);
        // w1=1 → CEL + w2·DL exactly
        let w = LossWeights::new(1.0, 0.25).unwrap();
        assert!((combined_loss(&p, &y, w).unwrap() - (lc + 0.25 * ld)).abs() < 1e-12);
        // w1=0, w2=0 → seed loss alone
        let w = LossWeights::new(0.0, 0.0).unwrap();
        assert!((combined_loss(&p, &y, w).unwrap() - ls).abs() < 1e-12);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let (p, y) = random_instance(3, 4, 7);
        let h = 1e-6;
        let checks: [(fn(&ProbabilityMap, &OneHotLabel) -> Result<f64>,
                      fn(&ProbabilityMap, &OneHotLabel) -> Result<Vec<f64>>); 3] = [
            (cel, cel_grad),
            (seed_loss, seed_loss_grad),
            (dice_loss, dice_loss_grad),
        ];
        for (f, g) in checks {
            let grad = g(&p, &y).unwrap();
            for ix in [0usize, 5, 11, 13, 17, 23] {
                let mut plus = p.clone();
                plus.values[ix] += h;
                let mut minus = p.clone();
                minus.values[ix] -= h;
                let fd = (f(&plus, &y).unwrap() - f(&minus, &y).unwrap()) / (2.0 * h);
                let denom = grad[ix].abs().max(fd.abs()).max(1e-8);
                assert!(
                    ((grad[ix] - fd) / denom).abs() < 1e-6,
                    "grad {} vs fd {} at {ix}",
                    grad[ix],
                    fd
                );
            }
        }
    }

    #[test]
    fn unet_shapes_and_uniform_output_at_zero_head() {
        let mut model = build_unet(16, 24, UNetConfig { depth: 2, base_channels: 4 }, 3).unwrap();
        // zero the final 1×1 conv: logits become 0 → softmax = 0.5 everywhere
        let n = model.net.param_sets().len();
        let last = &mut model.net.param_sets_mut()[n - 1];
        last.weights.values_mut().fill(0.0);
        last.bias.values_mut().fill(0.0);
        let img = Image::zeros(16, 24);
        let p = {
            let mut ws = model.net.workspace();
            segment_probabilities(&model, &mut ws, &img).unwrap()
        };
        assert_eq!(p.values().len(), 2 * 16 * 24);
        for px in 0..16 * 24 {
            let s = p.values()[px] + p.values()[16 * 24 + px];
            assert!((s - 1.0).abs() < 1e-9);
            assert!((p.values()[px] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn unet_rejects_indivisible_input() {
        assert!(build_unet(60, 128, UNetConfig::default(), 0).is_err());
        assert!(build_unet(64, 128, UNetConfig::default(), 0).is_ok());
    }

    #[test]
    fn default_w1_clamps_label_proportion() {
        let mut m = LabelMask::zeros(10, 10);
        for r in 0..10 {
            m.set(r, 0, 1);
        } // 10% positive
        let w = default_loss_weights(&[m.clone()]);
        assert!((w.w1 - 0.1).abs() < 1e-12);
        assert!((w.w2 - 0.5).abs() < 1e-12);
        // all-negative clamps up to 0.1
        let w = default_loss_weights(&[LabelMask::zeros(4, 4)]);
        assert!((w.w1 - 0.1).abs() < 1e-12);
    }
}
