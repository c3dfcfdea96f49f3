//! Training loops: classifier pretraining and saliency-network training for
//! every ablation case, plus the ablation and `delta` sweep harnesses.
//!
//! Per-step losses by case:
//!
//! * 1, 2, 5, 6, 7: decoder BCE against the single (possibly fused) label,
//!   logged as `L1`.
//! * 3, 4: filter BCE against its label (`L1`) plus `Lmg` with
//!   `Ys = PAMR(P1)`.
//! * 8: each decoder's BCE against its label (`L1`, `L2`) plus the mean
//!   squared difference of the two decoders, logged as `Lss`.
//! * 9: `L1 + L2 + Lmg + delta * Lss` with `Ys = PAMR((P1 + P2) / 2)`.

mod ablation;
mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use ablation::{run_ablation, seed_schedule, sweep_delta, AblationReport, AblationRow, CaseSummary, DeltaReport, DeltaRow};
pub use config::{AblationSpec, LabelSource, TrainConfig};

use crate::error::{Error, Result};
use crate::cam::scaled_side;
use crate::imaging::{resize_bilinear, ImageRgb, Sample, ScoreMap};
use crate::labels::{fuse, FuseMode, LabelPair};
use crate::losses::{
    classification_loss, filter_loss, multi_guidance_loss, self_supervision_loss, total_loss, LossValue,
};
use crate::metrics::{evaluate, MetricsReport, ThresholdPolicy};
use crate::ndgrad::{adam_step, save_params, AdamConfig, AdamState, Graph, NodeId, ParamSet, Tensor};
use crate::nets::{
    batch_tensor, decoder_nodes, encoder_nodes, filter_nodes, head_nodes, infer_saliency, init_classifier, init_mfnet,
    mfnet_forward, Architecture, FeatureTap,
};
use crate::refine::{Affinity, PamrParams};

/// One line of the saliency training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    #[serde(rename = "L1")]
    pub l1: Option<f64>,
    #[serde(rename = "L2")]
    pub l2: Option<f64>,
    #[serde(rename = "Lmg")]
    pub lmg: Option<f64>,
    #[serde(rename = "Lss")]
    pub lss: Option<f64>,
    pub total: f64,
}

/// One line of the classifier training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierRecord {
    pub step: usize,
    #[serde(rename = "Lc")]
    pub lc: f64,
}

/// Optional side outputs of a training run.
#[derive(Default)]
pub struct TrainIo<'a> {
    /// JSON-lines log sink.
    pub log: Option<&'a mut dyn Write>,
    /// Checkpoints go to `{dir}/{run_id}/{step}/params`.
    pub checkpoint_dir: Option<&'a Path>,
    pub run_id: String,
}

impl TrainIo<'_> {
    fn write_line<T: Serialize>(&mut self, record: &T) -> Result<()> {
        if let Some(w) = self.log.as_mut() {
            serde_json::to_writer(&mut **w, record)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    fn checkpoint(&self, step: usize, params: &ParamSet) -> Result<Option<PathBuf>> {
        match self.checkpoint_dir {
            Some(dir) => {
                let path = dir.join(&self.run_id).join(step.to_string()).join("params");
                save_params(&path, params)?;
                Ok(Some(path))
            }
            None => Ok(None),
        }
    }

    fn due(every: usize, step: usize, last: usize) -> bool {
        step == last || (every > 0 && step % every == 0)
    }
}

/// Seed of an independent stream derived from the run seed.
fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Epoch-shuffled index stream; batches never straddle a reshuffle.
struct Batcher {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl Batcher {
    fn new(n: usize, seed: u64) -> Self {
        let mut b = Self { rng: ChaCha8Rng::seed_from_u64(seed), order: (0..n).collect(), pos: n };
        b.reshuffle();
        b
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        if self.pos + size > self.order.len() {
            self.reshuffle();
        }
        let out = self.order[self.pos..self.pos + size].to_vec();
        self.pos += size;
        out
    }
}

fn training_error(step: usize, err: Error, detail: impl FnOnce() -> String) -> Error {
    match err {
        Error::Numeric(m) => Error::Training { step, message: format!("{m}; {}", detail()) },
        other => other,
    }
}

pub struct ClassifierOutcome {
    pub params: ParamSet,
    pub final_loss: f64,
    /// Exact-match multi-label accuracy on the training set.
    pub train_accuracy: f64,
}

/// Adam on the multi-label classification loss.
pub fn train_classifier(samples: &[Sample], cfg: &TrainConfig, io: &mut TrainIo) -> Result<ClassifierOutcome> {
    cfg.validate()?;
    let first = samples.first().ok_or_else(|| Error::config("classifier training needs at least one sample"))?;
    let c = first.category.num_categories();
    let mut params = init_classifier(&cfg.arch, c, cfg.seed)?;
    let mut adam = AdamState::new(AdamConfig::default());
    let mut batcher = Batcher::new(samples.len(), stream_seed(cfg.seed, 1));
    let mut flips = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 3));
    let mut final_loss = f64::NAN;
    for step in 1..=cfg.iters_classifier {
        let idx = batcher.next(cfg.classifier_batch_size);
        let flip: Vec<bool> = idx.iter().map(|_| cfg.classifier_flip && flips.random_bool(0.5)).collect();
        let run = || -> Result<(f64, _)> {
            let mut g = Graph::<f32>::new();
            let b = params.bind(&mut g, true);
            let imgs = idx
                .iter()
                .zip(&flip)
                .map(|(&i, &f)| {
                    let img = classifier_input(&samples[i].image, cfg.classifier_scale)?;
                    Ok(if f { img.flip_horizontal() } else { img })
                })
                .collect::<Result<Vec<_>>>()?;
            let x = g.constant(batch_tensor(&imgs.iter().collect::<Vec<_>>())?);
            let feats = encoder_nodes(&mut g, &b, x)?;
            let s = head_nodes(&mut g, &b, feats.f5)?;
            let mut y = Vec::with_capacity(idx.len() * c);
            for &i in &idx {
                let bits = samples[i].category.bits();
                if bits.len() != c {
                    return Err(Error::shape(format!("sample {i} has {} categories, expected {c}", bits.len())));
                }
                y.extend(bits.iter().map(|&v| f32::from(v)));
            }
            let y = g.constant(Tensor::new(vec![idx.len(), c, 1, 1], y)?);
            let loss = classification_loss(&mut g, s, y)?;
            if !loss.value.is_finite() {
                return Err(Error::numeric("classification loss is not finite"));
            }
            g.backward(loss.node)?;
            Ok((loss.value, b.grads(&g)))
        };
        let (loss, grads) = run().map_err(|e| training_error(step, e, || format!("batch {idx:?}")))?;
        adam_step(&mut params, &grads, &mut adam, cfg.lr_classifier)
            .map_err(|e| training_error(step, e, || format!("batch {idx:?}, loss {loss}")))?;
        final_loss = loss;
        if TrainIo::due(cfg.log_every, step, cfg.iters_classifier) {
            io.write_line(&ClassifierRecord { step, lc: loss })?;
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.iters_classifier {
            io.checkpoint(step, &params)?;
        }
    }
    io.checkpoint(cfg.iters_classifier, &params)?;
    let train_accuracy = classifier_accuracy(&params, samples, cfg.classifier_scale)?;
    Ok(ClassifierOutcome { params, final_loss, train_accuracy })
}

/// An image magnified by `scale`, sides rounded to multiples of 32.
pub fn classifier_input(image: &ImageRgb, scale: f64) -> Result<ImageRgb> {
    let (h, w) = image.dims();
    resize_bilinear(image, scaled_side(h, scale)?, scaled_side(w, scale)?)
}

/// Fraction of samples whose every category bit is predicted correctly
/// (logit > 0 means present), with inputs magnified by `scale`.
pub fn classifier_accuracy(params: &ParamSet, samples: &[Sample], scale: f64) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for s in samples {
        let (_, scores) = crate::nets::classifier_forward(params, &classifier_input(&s.image, scale)?)?;
        if scores.iter().zip(s.category.bits()).all(|(&v, &b)| (v > 0.0) == (b == 1)) {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Training images with their fixed pseudo labels and cached PAMR
/// affinities (used to build `Ys` every step).
pub struct TrainingSet {
    images: Vec<ImageRgb>,
    labels: Vec<LabelPair>,
    affinities: Vec<Affinity>,
    pamr_iterations: usize,
}

impl TrainingSet {
    pub fn new(images: Vec<ImageRgb>, labels: Vec<LabelPair>, pamr: &PamrParams) -> Result<Self> {
        if images.is_empty() || images.len() != labels.len() {
            return Err(Error::Contract(format!("{} images for {} label pairs", images.len(), labels.len())));
        }
        let dims = images[0].dims();
        for (img, l) in images.iter().zip(&labels) {
            if img.dims() != dims || l.y1.mask.dims() != dims || l.y2.mask.dims() != dims {
                return Err(Error::shape("training images and labels must share one size"));
            }
        }
        let affinities = images.iter().map(|img| Affinity::new(img, pamr)).collect::<Result<Vec<_>>>()?;
        Ok(Self { images, labels, affinities, pamr_iterations: pamr.iterations })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[ImageRgb] {
        &self.images
    }

    pub fn labels(&self) -> &[LabelPair] {
        &self.labels
    }

    /// Per-image training targets `(first, second)` for a label source.
    fn targets(&self, source: LabelSource) -> Result<(Vec<Vec<f32>>, Vec<Vec<f32>>)> {
        let as_f32 = |m: &ScoreMap| m.values().iter().map(|&v| v as f32).collect::<Vec<f32>>();
        let mut first = Vec::with_capacity(self.len());
        let mut second = Vec::new();
        for l in &self.labels {
            let (a, b) = (&l.y1.mask, &l.y2.mask);
            match source {
                LabelSource::Y1 => first.push(as_f32(&a.to_score_map())),
                LabelSource::Y2 => first.push(as_f32(&b.to_score_map())),
                LabelSource::Avg => first.push(as_f32(&fuse(a, b, FuseMode::Avg)?.to_score_map())),
                LabelSource::Intersect => first.push(as_f32(&fuse(a, b, FuseMode::Intersect)?.to_score_map())),
                LabelSource::Union => first.push(as_f32(&fuse(a, b, FuseMode::Union)?.to_score_map())),
                LabelSource::Both => {
                    first.push(as_f32(&a.to_score_map()));
                    second.push(as_f32(&b.to_score_map()));
                }
            }
        }
        Ok((first, second))
    }

    /// `PAMR` of the filter average, binarized when `threshold` is set.
    fn ys(&self, idx: &[usize], p1: &Tensor<f32>, p2: Option<&Tensor<f32>>, threshold: Option<f64>) -> Result<Tensor<f32>> {
        let (h, w) = self.images[0].dims();
        let hw = h * w;
        let mut out = Vec::with_capacity(idx.len() * hw);
        for (k, &i) in idx.iter().enumerate() {
            let a = &p1.data()[k * hw..][..hw];
            let avg: Vec<f64> = match p2 {
                Some(p2) => {
                    let b = &p2.data()[k * hw..][..hw];
                    a.iter().zip(b).map(|(&x, &y)| (f64::from(x) + f64::from(y)) * 0.5).collect()
                }
                None => a.iter().map(|&x| f64::from(x)).collect(),
            };
            let refined = self.affinities[i].refine(&ScoreMap::clamped(h, w, avg)?, self.pamr_iterations)?;
            out.extend(refined.values().iter().map(|&v| match threshold {
                Some(t) => f32::from(u8::from(v > t)),
                None => v as f32,
            }));
        }
        Tensor::new(vec![idx.len(), 1, h, w], out)
    }
}

fn stack(targets: &[Vec<f32>], idx: &[usize], h: usize, w: usize) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(idx.len() * h * w);
    for &i in idx {
        data.extend_from_slice(&targets[i]);
    }
    Tensor::new(vec![idx.len(), 1, h, w], data)
}

pub struct MfnetOutcome {
    pub params: ParamSet,
    pub spec: AblationSpec,
    pub last: LossRecord,
}

struct StepResult {
    record: LossRecord,
    grads: std::collections::BTreeMap<String, Vec<f32>>,
}

fn mfnet_step(
    set: &TrainingSet,
    spec: &AblationSpec,
    cfg: &TrainConfig,
    params: &ParamSet,
    targets: &(Vec<Vec<f32>>, Vec<Vec<f32>>),
    idx: &[usize],
    step: usize,
) -> Result<StepResult> {
    let (h, w) = set.images[0].dims();
    let mut g = Graph::<f32>::new();
    let b = params.bind(&mut g, true);
    let imgs: Vec<&ImageRgb> = idx.iter().map(|&i| &set.images[i]).collect();
    let x = g.constant(batch_tensor(&imgs)?);
    let feats = encoder_nodes(&mut g, &b, x)?;
    let y1 = g.constant(stack(&targets.0, idx, h, w)?);
    let value = |l: &LossValue| Some(l.value);
    let (record, loss): (LossRecord, NodeId) = match spec.architecture {
        Architecture::SingleDecoder => {
            let ps = decoder_nodes(&mut g, &b, "dec", feats, h, w)?;
            let l1 = filter_loss(&mut g, ps, y1)?;
            (LossRecord { step, l1: value(&l1), l2: None, lmg: None, lss: None, total: l1.value }, l1.node)
        }
        Architecture::SingleDf => {
            let p1 = filter_nodes(&mut g, &b, "df1", feats, cfg.arch.filter_tap, h, w)?;
            let ps = decoder_nodes(&mut g, &b, "dec", feats, h, w)?;
            let l1 = filter_loss(&mut g, p1, y1)?;
            let ys = set.ys(idx, g.value(p1), None, cfg.ys_threshold)?;
            let ys = g.constant(ys);
            let lmg = multi_guidance_loss(&mut g, ps, ys)?;
            let total = g.add(l1.node, lmg.node)?;
            let t = g.value(total).item() as f64;
            (LossRecord { step, l1: value(&l1), l2: None, lmg: value(&lmg), lss: None, total: t }, total)
        }
        Architecture::DualDecoder => {
            let y2 = g.constant(stack(&targets.1, idx, h, w)?);
            let d1 = decoder_nodes(&mut g, &b, "dec", feats, h, w)?;
            let d2 = decoder_nodes(&mut g, &b, "dec2", feats, h, w)?;
            let l1 = filter_loss(&mut g, d1, y1)?;
            let l2 = filter_loss(&mut g, d2, y2)?;
            let mutual = self_supervision_loss(&mut g, d1, d2, crate::losses::SelfSupMode::Similarity)?;
            let a = g.add(l1.node, l2.node)?;
            let total = g.add(a, mutual.node)?;
            let t = g.value(total).item() as f64;
            (LossRecord { step, l1: value(&l1), l2: value(&l2), lmg: None, lss: value(&mutual), total: t }, total)
        }
        Architecture::Mdf => {
            let y2 = g.constant(stack(&targets.1, idx, h, w)?);
            let p1 = filter_nodes(&mut g, &b, "df1", feats, cfg.arch.filter_tap, h, w)?;
            let p2 = filter_nodes(&mut g, &b, "df2", feats, cfg.arch.filter_tap, h, w)?;
            let ps = decoder_nodes(&mut g, &b, "dec", feats, h, w)?;
            let l1 = filter_loss(&mut g, p1, y1)?;
            let l2 = filter_loss(&mut g, p2, y2)?;
            let ys = set.ys(idx, g.value(p1), Some(g.value(p2)), cfg.ys_threshold)?;
            let ys = g.constant(ys);
            let lmg = multi_guidance_loss(&mut g, ps, ys)?;
            let lss = self_supervision_loss(&mut g, p1, p2, cfg.self_supervision)?;
            let total = total_loss(&mut g, l1, l2, lmg, lss, cfg.delta)?;
            (
                LossRecord { step, l1: value(&l1), l2: value(&l2), lmg: value(&lmg), lss: value(&lss), total: total.value },
                total.node,
            )
        }
    };
    if !record.total.is_finite() {
        return Err(Error::numeric("total loss is not finite"));
    }
    g.backward(loss)?;
    Ok(StepResult { record, grads: b.grads(&g) })
}

/// Trains the saliency network for `cfg.ablation_case`.
pub fn train_mfnet(set: &TrainingSet, cfg: &TrainConfig, io: &mut TrainIo) -> Result<MfnetOutcome> {
    cfg.validate()?;
    let spec = AblationSpec::case(cfg.ablation_case)?;
    let targets = set.targets(spec.label_source)?;
    let mut params = init_mfnet(&cfg.arch, spec.architecture, cfg.seed)?;
    let mut adam = AdamState::new(AdamConfig::default());
    let mut batcher = Batcher::new(set.len(), stream_seed(cfg.seed, 2));
    let mut last = None;
    for step in 1..=cfg.iters_saliency {
        let idx = batcher.next(cfg.batch_size);
        let res = mfnet_step(set, &spec, cfg, &params, &targets, &idx, step)
            .map_err(|e| training_error(step, e, || format!("batch {idx:?}")))?;
        adam_step(&mut params, &res.grads, &mut adam, cfg.lr_saliency)
            .map_err(|e| training_error(step, e, || format!("batch {idx:?}, losses {:?}", res.record)))?;
        if TrainIo::due(cfg.log_every, step, cfg.iters_saliency) {
            io.write_line(&res.record)?;
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.iters_saliency {
            io.checkpoint(step, &params)?;
        }
        last = Some(res.record);
    }
    io.checkpoint(cfg.iters_saliency, &params)?;
    Ok(MfnetOutcome { params, spec, last: last.expect("at least one step") })
}

/// Test-time predictions (filters discarded) scored against ground truth.
pub fn evaluate_model(params: &ParamSet, test: &[Sample], policy: ThresholdPolicy) -> Result<MetricsReport> {
    let preds = test.iter().map(|s| infer_saliency(params, &s.image)).collect::<Result<Vec<_>>>()?;
    let gts: Vec<_> = test.iter().map(|s| s.gt_mask.clone()).collect();
    evaluate(&preds, &gts, policy)
}

/// Mean over images of the pixel-mean `|P1 - P2|` of the two filters.
pub fn mean_filter_gap(params: &ParamSet, images: &[ImageRgb], tap: FeatureTap) -> Result<f64> {
    let mut total = 0.0;
    for img in images {
        let out = mfnet_forward(params, img, tap)?;
        let (Some(p1), Some(p2)) = (out.p1, out.p2) else {
            return Err(Error::Contract("filter gap needs two directive filters".into()));
        };
        let n = p1.values().len() as f64;
        total += p1.values().iter().zip(p2.values()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    }
    Ok(total / images.len().max(1) as f64)
}
