//! Network definitions: the classifier with a GAP head and the multi-filter
//! saliency network (shared encoder, directive filters, decoder).
//!
//! Parameters live in a flat [`ParamSet`] keyed by name:
//!
//! * `enc.b{1..5}.{w,b}`: stride-2 3x3 conv blocks; `f3, f4, f5` are the
//!   outputs of blocks 3, 4, 5.
//! * `head.{w,b}`: classifier 1x1 conv from the last encoder width to `C`.
//! * `df1.*`, `df2.*`: directive filters. On one encoder tap they are
//!   `c{k}` (3x3 convs, last 1x1); on the pyramid tap they share the
//!   decoder's layout.
//! * `dec.*`, `dec2.*`: saliency decoders (`f45`, `f34`, `f23` fusion convs,
//!   `out`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{ImageRgb, ScoreMap};
use crate::ndgrad::{xavier_init, Bindings, Graph, NodeId, ParamSet, Real, Tensor};

/// Input sides must be multiples of the encoder's total stride.
pub const STRIDE: usize = 32;

/// Encoder output a directive filter reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureTap {
    /// Block 2, stride 4.
    F2,
    /// Block 3, stride 8: 8x8 at a 64x64 input.
    F3,
    F4,
    /// Block 5, stride 32: 2x2 at a 64x64 input.
    F5,
    /// All of `f2..f5` through a top-down head shaped like the decoder, with
    /// `filter_width` channels; `filter_depth` does not apply.
    #[default]
    Pyramid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub encoder_channels: [usize; 5],
    pub filter_tap: FeatureTap,
    pub filter_width: usize,
    /// Conv layers per directive filter, the last one being 1x1.
    pub filter_depth: usize,
    pub decoder_width: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            encoder_channels: [8, 16, 32, 64, 64],
            filter_tap: FeatureTap::Pyramid,
            filter_width: 16,
            filter_depth: 4,
            decoder_width: 32,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.contains(&0) || self.filter_width == 0 || self.decoder_width == 0 {
            return Err(Error::config("channel widths must be positive"));
        }
        if self.filter_depth < 2 {
            return Err(Error::config("filter_depth must be at least 2"));
        }
        Ok(())
    }
}

/// Network layout of one ablation case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Encoder and decoder only.
    SingleDecoder,
    /// One directive filter guiding the decoder.
    SingleDf,
    /// Two decoders, each on its own label.
    DualDecoder,
    /// Two directive filters guiding the decoder.
    Mdf,
}

impl Architecture {
    pub fn filters(self) -> &'static [&'static str] {
        match self {
            Architecture::SingleDecoder | Architecture::DualDecoder => &[],
            Architecture::SingleDf => &["df1"],
            Architecture::Mdf => &["df1", "df2"],
        }
    }

    pub fn decoders(self) -> &'static [&'static str] {
        match self {
            Architecture::DualDecoder => &["dec", "dec2"],
            _ => &["dec"],
        }
    }
}

fn name_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, folded into the run seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn add_conv(p: &mut ParamSet, name: &str, cout: usize, cin: usize, k: usize, seed: u64) {
    let w = format!("{name}.w");
    p.insert(w.clone(), xavier_init(&[cout, cin, k, k], name_seed(seed, &w)));
    p.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
}

fn add_encoder(p: &mut ParamSet, arch: &ArchConfig, seed: u64) {
    let mut cin = 3;
    for (i, &c) in arch.encoder_channels.iter().enumerate() {
        add_conv(p, &format!("enc.b{}", i + 1), c, cin, 3, seed);
        cin = c;
    }
}

pub fn init_classifier(arch: &ArchConfig, num_categories: usize, seed: u64) -> Result<ParamSet> {
    arch.validate()?;
    if num_categories == 0 {
        return Err(Error::config("classifier needs at least one category"));
    }
    let mut p = ParamSet::new();
    add_encoder(&mut p, arch, seed);
    add_conv(&mut p, "head", num_categories, arch.encoder_channels[4], 1, seed);
    Ok(p)
}

pub fn init_mfnet(arch: &ArchConfig, architecture: Architecture, seed: u64) -> Result<ParamSet> {
    arch.validate()?;
    let [_, c2, c3, c4, c5] = arch.encoder_channels;
    let mut p = ParamSet::new();
    add_encoder(&mut p, arch, seed);
    for f in architecture.filters() {
        let mut cin = match arch.filter_tap {
            FeatureTap::F2 => c2,
            FeatureTap::F3 => c3,
            FeatureTap::F4 => c4,
            FeatureTap::F5 => c5,
            FeatureTap::Pyramid => {
                add_top_down(&mut p, f, arch.filter_width, arch.encoder_channels, seed);
                continue;
            }
        };
        for k in 1..arch.filter_depth {
            add_conv(&mut p, &format!("{f}.c{k}"), arch.filter_width, cin, 3, seed);
            cin = arch.filter_width;
        }
        add_conv(&mut p, &format!("{f}.c{}", arch.filter_depth), 1, cin, 1, seed);
    }
    for d in architecture.decoders() {
        add_top_down(&mut p, d, arch.decoder_width, arch.encoder_channels, seed);
    }
    Ok(p)
}

fn add_top_down(p: &mut ParamSet, prefix: &str, width: usize, channels: [usize; 5], seed: u64) {
    let [_, c2, c3, c4, c5] = channels;
    add_conv(p, &format!("{prefix}.f45"), width, c5 + c4, 3, seed);
    add_conv(p, &format!("{prefix}.f34"), width, width + c3, 3, seed);
    add_conv(p, &format!("{prefix}.f23"), width, width + c2, 3, seed);
    add_conv(p, &format!("{prefix}.out"), 1, width, 1, seed);
}

/// Feature taps of the encoder as graph nodes.
#[derive(Debug, Clone, Copy)]
pub struct FeatureNodes {
    pub f2: NodeId,
    pub f3: NodeId,
    pub f4: NodeId,
    pub f5: NodeId,
}

impl FeatureNodes {
    /// The single feature map behind `tap`; `None` for [`FeatureTap::Pyramid`].
    pub fn tap(&self, tap: FeatureTap) -> Option<NodeId> {
        match tap {
            FeatureTap::F2 => Some(self.f2),
            FeatureTap::F3 => Some(self.f3),
            FeatureTap::F4 => Some(self.f4),
            FeatureTap::F5 => Some(self.f5),
            FeatureTap::Pyramid => None,
        }
    }
}

fn conv_layer<T: Real>(g: &mut Graph<T>, b: &Bindings, name: &str, x: NodeId, stride: Option<usize>) -> Result<NodeId> {
    let w = b.id(&format!("{name}.w"))?;
    let bias = b.opt(&format!("{name}.b"));
    match stride {
        Some(s) => g.conv3x3(x, w, bias, s),
        None => g.conv1x1(x, w, bias),
    }
}

fn spatial<T: Real>(g: &Graph<T>, x: NodeId) -> (usize, usize) {
    let s = g.value(x).shape();
    (s[2], s[3])
}

pub fn check_input_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 || height % STRIDE != 0 || width % STRIDE != 0 {
        return Err(Error::shape(format!("input {height}x{width} is not a multiple of {STRIDE}")));
    }
    Ok(())
}

/// Five stride-2 conv+relu blocks over an `[N, 3, H, W]` input.
pub fn encoder_nodes<T: Real>(g: &mut Graph<T>, b: &Bindings, x: NodeId) -> Result<FeatureNodes> {
    let (h, w) = spatial(g, x);
    check_input_dims(h, w)?;
    let mut cur = x;
    let mut taps = Vec::with_capacity(5);
    for i in 1..=5 {
        let c = conv_layer(g, b, &format!("enc.b{i}"), cur, Some(2))?;
        cur = g.relu(c)?;
        taps.push(cur);
    }
    Ok(FeatureNodes { f2: taps[1], f3: taps[2], f4: taps[3], f5: taps[4] })
}

/// Class logits `S = conv1x1(GAP(f5))`, shape `[N, C, 1, 1]`.
pub fn head_nodes<T: Real>(g: &mut Graph<T>, b: &Bindings, f5: NodeId) -> Result<NodeId> {
    let pooled = g.gap(f5)?;
    conv_layer(g, b, "head", pooled, None)
}

/// Directive filter `prefix` reading `tap`: probabilities at `(h, w)`.
pub fn filter_nodes<T: Real>(
    g: &mut Graph<T>,
    b: &Bindings,
    prefix: &str,
    feats: FeatureNodes,
    tap: FeatureTap,
    h: usize,
    w: usize,
) -> Result<NodeId> {
    let Some(mut cur) = feats.tap(tap) else {
        return decoder_nodes(g, b, prefix, feats, h, w);
    };
    let mut k = 1;
    while b.opt(&format!("{prefix}.c{}.w", k + 1)).is_some() {
        let c = conv_layer(g, b, &format!("{prefix}.c{k}"), cur, Some(1))?;
        cur = g.relu(c)?;
        k += 1;
    }
    let logits = conv_layer(g, b, &format!("{prefix}.c{k}"), cur, None)?;
    let up = g.upsample(logits, h, w)?;
    g.sigmoid(up)
}

/// Top-down decoder `prefix` over `f2..f5`: probabilities at `(h, w)`.
pub fn decoder_nodes<T: Real>(
    g: &mut Graph<T>,
    b: &Bindings,
    prefix: &str,
    feats: FeatureNodes,
    h: usize,
    w: usize,
) -> Result<NodeId> {
    let (h4, w4) = spatial(g, feats.f4);
    let up5 = g.upsample(feats.f5, h4, w4)?;
    let cat45 = g.concat(&[up5, feats.f4])?;
    let c45 = conv_layer(g, b, &format!("{prefix}.f45"), cat45, Some(1))?;
    let r45 = g.relu(c45)?;
    let (h3, w3) = spatial(g, feats.f3);
    let up4 = g.upsample(r45, h3, w3)?;
    let cat34 = g.concat(&[up4, feats.f3])?;
    let c34 = conv_layer(g, b, &format!("{prefix}.f34"), cat34, Some(1))?;
    let r34 = g.relu(c34)?;
    let (h2, w2) = spatial(g, feats.f2);
    let up3 = g.upsample(r34, h2, w2)?;
    let cat23 = g.concat(&[up3, feats.f2])?;
    let c23 = conv_layer(g, b, &format!("{prefix}.f23"), cat23, Some(1))?;
    let r23 = g.relu(c23)?;
    let logits = conv_layer(g, b, &format!("{prefix}.out"), r23, None)?;
    let up = g.upsample(logits, h, w)?;
    g.sigmoid(up)
}

/// Stacks images into an `[N, 3, H, W]` tensor.
pub fn batch_tensor<T: Real>(images: &[&ImageRgb]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| Error::Contract("empty image batch".into()))?;
    let (h, w) = first.dims();
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.dims() != (h, w) {
            return Err(Error::shape(format!("batch mixes {h}x{w} and {}x{}", img.height(), img.width())));
        }
        data.extend(img.to_planar_f32().into_iter().map(|v| T::from_f64(2.0 * f64::from(v) - 1.0)));
    }
    Tensor::new(vec![images.len(), 3, h, w], data)
}

/// Encoder features of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub f3: Tensor<f32>,
    pub f4: Tensor<f32>,
    pub f5: Tensor<f32>,
}

fn to_map(t: &Tensor<f32>, h: usize, w: usize) -> Result<ScoreMap> {
    ScoreMap::clamped(h, w, t.data().iter().map(|&v| f64::from(v)).collect())
}

/// Classifier pass on one image: encoder features and raw class logits.
pub fn classifier_forward(params: &ParamSet, image: &ImageRgb) -> Result<(FeatureStack, Vec<f64>)> {
    check_input_dims(image.height(), image.width())?;
    let mut g = Graph::<f32>::new();
    let b = params.bind(&mut g, false);
    let x = g.constant(batch_tensor(&[image])?);
    let feats = encoder_nodes(&mut g, &b, x)?;
    let s = head_nodes(&mut g, &b, feats.f5)?;
    let scores = g.value(s).data().iter().map(|&v| f64::from(v)).collect();
    let stack = FeatureStack {
        f3: g.value(feats.f3).clone(),
        f4: g.value(feats.f4).clone(),
        f5: g.value(feats.f5).clone(),
    };
    Ok((stack, scores))
}

/// All prediction maps of one image. `p1`/`p2` exist only for layouts with
/// directive filters; `ps` is the decoder prediction (the mean of both
/// decoders for the dual-decoder layout).
#[derive(Debug, Clone, PartialEq)]
pub struct MfnetOutput {
    pub p1: Option<ScoreMap>,
    pub p2: Option<ScoreMap>,
    pub ps: ScoreMap,
}

fn decoder_mean<T: Real>(g: &mut Graph<T>, b: &Bindings, feats: FeatureNodes, h: usize, w: usize) -> Result<NodeId> {
    let d1 = decoder_nodes(g, b, "dec", feats, h, w)?;
    if b.opt("dec2.out.w").is_none() {
        return Ok(d1);
    }
    let d2 = decoder_nodes(g, b, "dec2", feats, h, w)?;
    let s = g.add(d1, d2)?;
    g.mul_scalar(s, 0.5)
}

/// Every prediction of one image; `tap` must be the filter tap the
/// parameters were built for.
pub fn mfnet_forward(params: &ParamSet, image: &ImageRgb, tap: FeatureTap) -> Result<MfnetOutput> {
    let (h, w) = image.dims();
    check_input_dims(h, w)?;
    let mut g = Graph::<f32>::new();
    let b = params.bind(&mut g, false);
    let x = g.constant(batch_tensor(&[image])?);
    let feats = encoder_nodes(&mut g, &b, x)?;
    let mut filters = Vec::new();
    for f in ["df1", "df2"] {
        filters.push(if b.opt(&format!("{f}.c1.w")).or(b.opt(&format!("{f}.out.w"))).is_some() {
            let p = filter_nodes(&mut g, &b, f, feats, tap, h, w)?;
            Some(to_map(g.value(p), h, w)?)
        } else {
            None
        });
    }
    let ps = decoder_mean(&mut g, &b, feats, h, w)?;
    let ps = to_map(g.value(ps), h, w)?;
    let p2 = filters.pop().flatten();
    let p1 = filters.pop().flatten();
    Ok(MfnetOutput { p1, p2, ps })
}

/// Test-time saliency: encoder and decoder only. Filter parameters are never
/// touched and need not be present.
pub fn infer_saliency(params: &ParamSet, image: &ImageRgb) -> Result<ScoreMap> {
    let (h, w) = image.dims();
    check_input_dims(h, w)?;
    let mut g = Graph::<f32>::new();
    let needed = params.subset(&["enc.", "dec.", "dec2."]);
    let b = needed.bind(&mut g, false);
    let x = g.constant(batch_tensor(&[image])?);
    let feats = encoder_nodes(&mut g, &b, x)?;
    let ps = decoder_mean(&mut g, &b, feats, h, w)?;
    to_map(g.value(ps), h, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(h: usize, w: usize) -> ImageRgb {
        ImageRgb::from_fn(h, w, |y, x| [((y * 7 + x * 3) % 17) as f64 / 16.0, (x % 5) as f64 / 4.0, 0.5]).unwrap()
    }

    #[test]
    fn zero_head_gives_zero_scores() {
        let mut p = init_classifier(&ArchConfig::default(), 4, 1).unwrap();
        p.insert("head.w", Tensor::zeros(&[4, 64, 1, 1]));
        let (_, s) = classifier_forward(&p, &image(64, 64)).unwrap();
        assert_eq!(s, vec![0.0; 4]);
    }

    #[test]
    fn head_is_linear_in_weights() {
        let p = init_classifier(&ArchConfig::default(), 3, 2).unwrap();
        let (_, s) = classifier_forward(&p, &image(64, 64)).unwrap();
        let mut p2 = p.clone();
        for v in p2.get_mut("head.w").unwrap().data_mut() {
            *v *= 2.0;
        }
        let (_, s2) = classifier_forward(&p2, &image(64, 64)).unwrap();
        for (a, b) in s.iter().zip(&s2) {
            assert!((2.0 * a - b).abs() < 1e-5 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn feature_strides() {
        let p = init_classifier(&ArchConfig::default(), 2, 3).unwrap();
        let (f, _) = classifier_forward(&p, &image(64, 96)).unwrap();
        assert_eq!(f.f3.shape(), &[1, 32, 8, 12]);
        assert_eq!(f.f4.shape(), &[1, 64, 4, 6]);
        assert_eq!(f.f5.shape(), &[1, 64, 2, 3]);
    }

    #[test]
    fn indivisible_input_is_shape_error() {
        let p = init_classifier(&ArchConfig::default(), 2, 3).unwrap();
        assert!(matches!(classifier_forward(&p, &image(40, 64)), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_final_layers_give_half() {
        for (tap, last) in [(FeatureTap::Pyramid, "out"), (FeatureTap::F3, "c4")] {
            let arch = ArchConfig { filter_tap: tap, ..ArchConfig::default() };
            let mut p = init_mfnet(&arch, Architecture::Mdf, 4).unwrap();
            for name in [format!("df1.{last}.w"), format!("df2.{last}.w"), "dec.out.w".into()] {
                let shape = p.get(&name).unwrap().shape().to_vec();
                p.insert(&name, Tensor::zeros(&shape));
            }
            let out = mfnet_forward(&p, &image(64, 64), tap).unwrap();
            for m in [out.p1.unwrap(), out.p2.unwrap(), out.ps] {
                assert!(m.values().iter().all(|&v| v == 0.5));
            }
        }
    }

    #[test]
    fn output_dims_follow_input() {
        let p = init_mfnet(&ArchConfig::default(), Architecture::Mdf, 5).unwrap();
        for s in [64, 96, 128] {
            let out = mfnet_forward(&p, &image(s, s), FeatureTap::default()).unwrap();
            assert_eq!(out.ps.dims(), (s, s));
            assert_eq!(out.p1.unwrap().dims(), (s, s));
        }
    }

    #[test]
    fn filter_symmetry() {
        let p = init_mfnet(&ArchConfig::default(), Architecture::Mdf, 6).unwrap();
        let mut swapped = p.clone();
        for name in p.names().filter(|n| n.starts_with("df1.")) {
            let other = name.replacen("df1.", "df2.", 1);
            swapped.insert(name.clone(), p.get(&other).unwrap().clone());
            swapped.insert(other, p.get(name).unwrap().clone());
        }
        let img = image(64, 64);
        let a = mfnet_forward(&p, &img, FeatureTap::default()).unwrap();
        let b = mfnet_forward(&swapped, &img, FeatureTap::default()).unwrap();
        assert_eq!(a.p1, b.p2);
        assert_eq!(a.p2, b.p1);
        assert_eq!(a.ps, b.ps);
        let mut same = p.clone();
        for name in p.names().filter(|n| n.starts_with("df1.")) {
            same.insert(name.replacen("df1.", "df2.", 1), p.get(name).unwrap().clone());
        }
        let c = mfnet_forward(&same, &img, FeatureTap::default()).unwrap();
        assert_eq!(c.p1, c.p2);
    }

    #[test]
    fn infer_matches_forward_without_filters() {
        let p = init_mfnet(&ArchConfig::default(), Architecture::Mdf, 7).unwrap();
        let img = image(64, 64);
        let full = mfnet_forward(&p, &img, FeatureTap::default()).unwrap();
        let stripped = p.subset(&["enc.", "dec."]);
        assert_eq!(infer_saliency(&stripped, &img).unwrap(), full.ps);
    }

    #[test]
    fn decoder_depends_on_f3() {
        let p = init_mfnet(&ArchConfig::default(), Architecture::SingleDecoder, 8).unwrap();
        let img = image(64, 64);
        let run = |noise: f32| {
            let mut g = Graph::<f32>::new();
            let b = p.bind(&mut g, false);
            let x = g.constant(batch_tensor(&[&img]).unwrap());
            let mut feats = encoder_nodes(&mut g, &b, x).unwrap();
            let mut f3 = g.value(feats.f3).clone();
            for (i, v) in f3.data_mut().iter_mut().enumerate() {
                *v += noise * ((i * 37 % 11) as f32 / 10.0);
            }
            feats.f3 = g.constant(f3);
            let ps = decoder_nodes(&mut g, &b, "dec", feats, 64, 64).unwrap();
            g.value(ps).clone()
        };
        assert_ne!(run(0.0), run(0.5));
    }
}
