use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::train::CheckpointState;
use crate::error::Result;
use crate::media_io::{delta_metrics_on, psnr, to_frames, write_reports, MetricPlane, MetricsReport};
use crate::nn::ParamStore;
use crate::pdis_net::{crds_forward, reconstruct_intermediate, Crds};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Evaluation {
    /// Pooled over every frame of every clip.
    pub pooled: MetricsReport,
    pub clips: Vec<(String, MetricsReport)>,
}

pub fn evaluate_model(
    store: &ParamStore,
    model: &Crds,
    testset: &Dataset,
    out_dir: Option<&Path>,
) -> Result<Evaluation> {
    evaluate_model_on(store, model, testset, out_dir, MetricPlane::Luma)
}

pub fn evaluate_model_on(
    store: &ParamStore,
    model: &Crds,
    testset: &Dataset,
    out_dir: Option<&Path>,
    plane: MetricPlane,
) -> Result<Evaluation> {
    let clips = testset
        .clips
        .iter()
        .map(|c| {
            let (enhanced, _) = crds_forward(store, model, &c.lq, false)?;
            Ok((c.name.clone(), delta_metrics_on(&enhanced, &c.lq, &c.gt, plane)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let pooled = match out_dir {
        Some(dir) => write_reports(dir, &clips)?,
        None => MetricsReport::merge(&clips.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>()),
    };
    Ok(Evaluation { pooled, clips })
}

/// Enhance every test clip with the checkpointed network; writes
/// `metrics.json` and `metrics.csv` when `out_dir` is given.
pub fn evaluate(state: &CheckpointState, testset: &Dataset, out_dir: Option<&Path>) -> Result<Evaluation> {
    let (model, store) = state.model()?;
    evaluate_model(&store, &model, testset, out_dir)
}

/// Mean PSNR of the clipped intermediate reconstructions against ground
/// truth, indexed by `s = 0..=N`.
pub fn stage_psnr(store: &ParamStore, model: &Crds, testset: &Dataset) -> Result<Vec<f64>> {
    let n = model.stages();
    let mut sums = vec![0.0; n + 1];
    let mut count = 0usize;
    for c in &testset.clips {
        let gt = to_frames(&c.gt);
        let (_, trace) = crds_forward(store, model, &c.lq, true)?;
        for (s, sum) in sums.iter_mut().enumerate() {
            for (r, g) in reconstruct_intermediate(store, model, &trace, s)?.iter().zip(&gt) {
                *sum += psnr(r, g)?;
            }
        }
        count += gt.len();
    }
    Ok(sums.into_iter().map(|v| v / count as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ldr_ae::LdraeConfig;
    use crate::muna::{FlowConfig, MunaConfig};
    use crate::pdis_net::CrdsConfig;
    use crate::synth::SynthConfig;
    use crate::toy_codec::CodecConfig;
    use crate::train_harness::{build_model, TrainConfig};

    fn cfg() -> TrainConfig {
        TrainConfig {
            model: CrdsConfig {
                ldrae: LdraeConfig {
                    channels: 4,
                    frame_channels: 1,
                    enc_blocks: 1,
                    dec_blocks: 1,
                    dec_channels: 0,
                },
                stages: 2,
                muna: MunaConfig {
                    heads: 2,
                    ..Default::default()
                },
                flow: FlowConfig::Zero,
                rp_blocks: 1,
            },
            ..TrainConfig::tiny()
        }
    }

    fn testset() -> Dataset {
        let s = SynthConfig {
            height: 16,
            width: 16,
            frames: 3,
            ..Default::default()
        };
        Dataset::synthesize(2, &s, CodecConfig::default(), 11).unwrap()
    }

    #[test]
    fn fresh_model_changes_nothing() {
        let (model, store) = build_model(&cfg()).unwrap();
        let ev = evaluate_model(&store, &model, &testset(), None).unwrap();
        assert_eq!(ev.pooled.delta_psnr, 0.0);
        assert_eq!(ev.pooled.delta_ssim, 0.0);
        assert_eq!(ev.clips.len(), 2);
        let sp = stage_psnr(&store, &model, &testset()).unwrap();
        assert_eq!(sp.len(), 3);
        assert!(sp.iter().all(|&v| v == sp[0]));
    }

    #[test]
    fn csv_aggregates_to_clip_means() {
        let (model, mut store) = build_model(&cfg()).unwrap();
        crate::nn::perturb_params(&mut store, 0.02, 3);
        let dir = tempfile::tempdir().unwrap();
        let ts = testset();
        let ev = evaluate_model(&store, &model, &ts, Some(dir.path())).unwrap();
        let again = evaluate_model(&store, &model, &ts, None).unwrap();
        assert_eq!(ev.pooled, again.pooled);
        let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        for (name, r) in &ev.clips {
            let rows: Vec<Vec<f64>> = csv
                .lines()
                .skip(1)
                .filter(|l| l.starts_with(&format!("{name},")))
                .map(|l| l.split(',').skip(2).map(|v| v.parse().unwrap()).collect())
                .collect();
            let mean = |k: usize| rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64;
            assert!((mean(1) - mean(0) - r.delta_psnr).abs() < 1e-5);
            assert!((mean(3) - mean(2) - r.delta_ssim).abs() < 1e-7);
        }
    }
}
