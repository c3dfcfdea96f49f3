use serde::{Deserialize, Serialize};

use super::{evaluate_model, mean_filter_gap, train_mfnet, AblationSpec, LabelSource, TrainConfig, TrainIo, TrainingSet};
use crate::error::{Error, Result};
use crate::imaging::{Provenance, Sample};
use crate::labels::FuseMode;
use crate::metrics::{ImageMetrics, ThresholdPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub case: u8,
    pub seed: u64,
    pub metrics: ImageMetrics,
}

/// Per-case metadata and the seed-averaged metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub spec: AblationSpec,
    /// Provenance of the training targets.
    pub label_provenance: Vec<Provenance>,
    pub mean: ImageMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub policy: ThresholdPolicy,
    pub seeds: Vec<u64>,
    pub cases: Vec<CaseSummary>,
    pub rows: Vec<AblationRow>,
}

fn label_provenance(source: LabelSource) -> Vec<Provenance> {
    match source {
        LabelSource::Y1 => vec![Provenance::Pixel],
        LabelSource::Y2 => vec![Provenance::Superpixel],
        LabelSource::Avg => vec![FuseMode::Avg.provenance()],
        LabelSource::Intersect => vec![FuseMode::Intersect.provenance()],
        LabelSource::Union => vec![FuseMode::Union.provenance()],
        LabelSource::Both => vec![Provenance::Pixel, Provenance::Superpixel],
    }
}

fn mean_metrics(rows: &[&ImageMetrics]) -> ImageMetrics {
    let n = rows.len().max(1) as f64;
    let sum = |f: fn(&ImageMetrics) -> f64| rows.iter().map(|m| f(m)).sum::<f64>() / n;
    ImageMetrics {
        mae: sum(|m| m.mae),
        f_beta: sum(|m| m.f_beta),
        s_alpha: sum(|m| m.s_alpha),
        e_s: sum(|m| m.e_s),
        f_beta_w: sum(|m| m.f_beta_w),
    }
}

/// Seeds `base, base + 1, ...`.
pub fn seed_schedule(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| base.wrapping_add(i)).collect()
}

fn check_request(cases: &[u8], seeds: usize) -> Result<()> {
    if cases.is_empty() || seeds == 0 {
        return Err(Error::config("at least one case and one seed are required"));
    }
    Ok(())
}

/// Trains every requested case under every seed and scores it on `test`.
pub fn run_ablation(
    set: &TrainingSet,
    test: &[Sample],
    cases: &[u8],
    seeds: usize,
    cfg: &TrainConfig,
    policy: ThresholdPolicy,
) -> Result<AblationReport> {
    check_request(cases, seeds)?;
    let seed_list = seed_schedule(cfg.seed, seeds);
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &case in cases {
        let spec = AblationSpec::case(case)?;
        let mut case_rows = Vec::new();
        for &seed in &seed_list {
            let run = TrainConfig { ablation_case: case, seed, ..cfg.clone() };
            let out = train_mfnet(set, &run, &mut TrainIo::default())?;
            let report = evaluate_model(&out.params, test, policy)?;
            case_rows.push(AblationRow { case, seed, metrics: report.mean });
        }
        let mean = mean_metrics(&case_rows.iter().map(|r| &r.metrics).collect::<Vec<_>>());
        summaries.push(CaseSummary { spec, label_provenance: label_provenance(spec.label_source), mean });
        rows.extend(case_rows);
    }
    Ok(AblationReport { policy, seeds: seed_list, cases: summaries, rows })
}

impl AblationReport {
    pub fn case_mean(&self, case: u8) -> Option<&ImageMetrics> {
        self.cases.iter().find(|c| c.spec.case == case).map(|c| &c.mean)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("case,seed,mae,f_beta,s_alpha,e_s,f_beta_w\n");
        for r in &self.rows {
            let m = &r.metrics;
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                r.case, r.seed, m.mae, m.f_beta, m.s_alpha, m.e_s, m.f_beta_w
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub delta: f64,
    pub seed: u64,
    pub metrics: ImageMetrics,
    /// Mean `|P1 - P2|` over the training images after training.
    pub filter_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub policy: ThresholdPolicy,
    pub seeds: Vec<u64>,
    pub rows: Vec<DeltaRow>,
}

impl DeltaReport {
    /// Seed-averaged filter gap for one `delta`.
    pub fn mean_gap(&self, delta: f64) -> Option<f64> {
        let gaps: Vec<f64> = self.rows.iter().filter(|r| r.delta == delta).map(|r| r.filter_gap).collect();
        (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("delta,seed,filter_gap,mae,f_beta,s_alpha,e_s,f_beta_w\n");
        for r in &self.rows {
            let m = &r.metrics;
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                r.delta, r.seed, r.filter_gap, m.mae, m.f_beta, m.s_alpha, m.e_s, m.f_beta_w
            ));
        }
        out
    }
}

/// Case-9 training for each `delta` and seed.
pub fn sweep_delta(
    set: &TrainingSet,
    test: &[Sample],
    deltas: &[f64],
    seeds: usize,
    cfg: &TrainConfig,
    policy: ThresholdPolicy,
) -> Result<DeltaReport> {
    if deltas.is_empty() || seeds == 0 {
        return Err(Error::config("at least one delta and one seed are required"));
    }
    let seed_list = seed_schedule(cfg.seed, seeds);
    let mut rows = Vec::new();
    for &delta in deltas {
        for &seed in &seed_list {
            let run = TrainConfig { ablation_case: 9, delta, seed, ..cfg.clone() };
            let out = train_mfnet(set, &run, &mut TrainIo::default())?;
            let metrics = evaluate_model(&out.params, test, policy)?.mean;
            let filter_gap = mean_filter_gap(&out.params, set.images(), run.arch.filter_tap)?;
            rows.push(DeltaRow { delta, seed, metrics, filter_gap });
        }
    }
    Ok(DeltaReport { policy, seeds: seed_list, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{BinaryMask, ImageRgb, PseudoLabel};
    use crate::labels::LabelPair;
    use crate::refine::PamrParams;
    use crate::synth::gen_synthetic_dataset;

    fn fixture() -> (TrainingSet, Vec<Sample>) {
        let data = gen_synthetic_dataset(4, 64, 4, 9).unwrap();
        let labels = data
            .iter()
            .map(|s| LabelPair {
                y1: PseudoLabel { mask: s.gt_mask.clone(), provenance: Provenance::Pixel },
                y2: PseudoLabel { mask: BinaryMask::from_fn(64, 64, |y, x| s.gt_mask.get(y, x) && y % 5 != 0), provenance: Provenance::Superpixel },
            })
            .collect();
        let images: Vec<ImageRgb> = data.iter().map(|s| s.image.clone()).collect();
        (TrainingSet::new(images, labels, &PamrParams::default()).unwrap(), data)
    }

    fn cfg() -> TrainConfig {
        TrainConfig { iters_saliency: 3, batch_size: 2, ..TrainConfig::default() }
    }

    #[test]
    fn single_case_gives_one_row_and_fusion_metadata() {
        let (set, test) = fixture();
        let r = run_ablation(&set, &test, &[6], 1, &cfg(), ThresholdPolicy::Adaptive).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.cases[0].label_provenance, vec![Provenance::FusedIntersect]);
        assert_eq!(r.to_csv().lines().count(), 2);
        let r = run_ablation(&set, &test, &[5, 7], 2, &cfg(), ThresholdPolicy::Adaptive).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert_eq!(r.cases[0].label_provenance, vec![Provenance::FusedAvg]);
        assert_eq!(r.cases[1].label_provenance, vec![Provenance::FusedUnion]);
    }

    #[test]
    fn zero_delta_sweep_matches_plain_case_nine() {
        let (set, test) = fixture();
        let c = TrainConfig { delta: 0.0, ..cfg() };
        let sweep = sweep_delta(&set, &test, &[0.0], 1, &c, ThresholdPolicy::Adaptive).unwrap();
        let plain = train_mfnet(&set, &TrainConfig { ablation_case: 9, ..c.clone() }, &mut TrainIo::default()).unwrap();
        let metrics = evaluate_model(&plain.params, &test, ThresholdPolicy::Adaptive).unwrap().mean;
        assert_eq!(sweep.rows.len(), 1);
        assert_eq!(sweep.rows[0].metrics, metrics);
        assert_eq!(sweep.rows[0].filter_gap, mean_filter_gap(&plain.params, set.images(), c.arch.filter_tap).unwrap());
    }

    #[test]
    fn empty_requests_are_config_errors() {
        let (set, test) = fixture();
        assert!(matches!(run_ablation(&set, &test, &[], 1, &cfg(), ThresholdPolicy::Adaptive), Err(Error::Config(_))));
        assert!(matches!(sweep_delta(&set, &test, &[1.0], 0, &cfg(), ThresholdPolicy::Adaptive), Err(Error::Config(_))));
    }
}
