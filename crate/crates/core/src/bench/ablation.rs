//! Stage and selection ablations over a sample set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baseline::baseline_refine_reproj;
use super::metrics::PelvisMode;
use super::report::{summarize, MetricsReport};
use super::synth::SyntheticSample;
use crate::error::{KitroError, Result};
use crate::refiner::{refine_batch, RefineConfig, RefineJob, SelectionMode};
use crate::skeleton::{BodyState, SkeletonModel};

/// Focal length of the long-lens ablation row.
pub const LARGE_FOCAL: f64 = 5000.0;

impl RefineJob {
    pub fn from_sample(s: &SyntheticSample) -> Self {
        Self {
            state: s.init.clone(),
            intr: s.intr,
            keypoints: s.keypoints2d.clone(),
            gt: Some(s.gt.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub camera: bool,
    pub shape: bool,
    pub pose: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub soft_update: Option<bool>,
    pub mpjpe: f64,
    pub median_mpjpe: f64,
    pub pa_mpjpe: f64,
    pub median_pa_mpjpe: f64,
    pub reproj_px: f64,
    pub improvement_fraction: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub config: RefineConfig,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineSettings {
    pub steps: usize,
    pub lr: f64,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self {
            steps: 100,
            lr: 0.01,
        }
    }
}

fn stage_name(camera: bool, shape: bool, pose: bool) -> String {
    let parts: Vec<&str> = [(camera, "camera"), (shape, "shape"), (pose, "pose")]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
    if parts.is_empty() {
        "none".into()
    } else {
        parts.join("+")
    }
}

#[allow(clippy::too_many_arguments)]
fn make_row(
    name: String,
    camera: bool,
    shape: bool,
    pose: bool,
    selection: Option<SelectionMode>,
    soft_update: Option<bool>,
    report: &MetricsReport,
    failures: usize,
) -> AblationRow {
    AblationRow {
        name,
        camera,
        shape,
        pose,
        selection,
        soft_update,
        mpjpe: report.mpjpe,
        median_mpjpe: report.median_mpjpe,
        pa_mpjpe: report.pa_mpjpe,
        median_pa_mpjpe: report.median_pa_mpjpe,
        reproj_px: report.reproj_px,
        improvement_fraction: report.improvement_fraction,
        failures,
    }
}

/// Run the eight stage on/off combinations, the selection and update
/// variants of the full model, the long-focal variant and, when requested,
/// the gradient baseline.
pub fn run_ablation(
    model: &SkeletonModel,
    samples: &[SyntheticSample],
    base: &RefineConfig,
    threads: usize,
    mode: PelvisMode,
    baseline: Option<BaselineSettings>,
) -> Result<AblationTable> {
    if samples.is_empty() {
        return Err(KitroError::InvalidInput("no samples".into()));
    }
    let jobs: Vec<RefineJob> = samples.iter().map(RefineJob::from_sample).collect();
    let mut rows = Vec::new();
    let mut push = |name: String, cfg: &RefineConfig, variant: bool| -> Result<()> {
        let out = refine_batch(model, &jobs, cfg, threads)?;
        let states: Vec<BodyState> = out.results.iter().map(|r| r.state.clone()).collect();
        let report = summarize(model, samples, &states, mode, None)?;
        rows.push(make_row(
            name,
            cfg.enable_camera,
            cfg.enable_shape,
            cfg.enable_pose,
            variant.then_some(cfg.selection_mode),
            variant.then_some(cfg.soft_update),
            &report,
            out.summary.failures,
        ));
        Ok(())
    };

    for bits in (0..8u8).rev() {
        let (camera, shape, pose) = (bits & 4 != 0, bits & 2 != 0, bits & 1 != 0);
        let cfg = RefineConfig {
            enable_camera: camera,
            enable_shape: shape,
            enable_pose: pose,
            ..base.clone()
        };
        push(stage_name(camera, shape, pose), &cfg, false)?;
    }
    let full = RefineConfig {
        enable_camera: true,
        enable_shape: true,
        enable_pose: true,
        ..base.clone()
    };
    for (selection, soft) in [
        (SelectionMode::Tree, true),
        (SelectionMode::Tree, false),
        (SelectionMode::Greedy, true),
        (SelectionMode::Greedy, false),
    ] {
        let cfg = RefineConfig {
            selection_mode: selection,
            soft_update: soft,
            ..full.clone()
        };
        let name = format!(
            "{}+{}",
            match selection {
                SelectionMode::Tree => "tree",
                SelectionMode::Greedy => "greedy",
            },
            if soft { "soft" } else { "hard" }
        );
        push(name, &cfg, true)?;
    }
    let long = RefineConfig {
        focal_override: Some(LARGE_FOCAL),
        ..full.clone()
    };
    push("large-focal".into(), &long, false)?;

    if let Some(b) = baseline {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| KitroError::InvalidInput(format!("thread pool: {e}")))?;
        let outcomes: Vec<(BodyState, bool)> = pool.install(|| {
            samples
                .par_iter()
                .map(|s| {
                    match baseline_refine_reproj(
                        &s.init,
                        model,
                        &s.intr,
                        &s.keypoints2d,
                        b.steps,
                        b.lr,
                    ) {
                        Ok(o) => (o.state, false),
                        Err(_) => (s.init.clone(), true),
                    }
                })
                .collect()
        });
        let failures = outcomes.iter().filter(|(_, f)| *f).count();
        let states: Vec<BodyState> = outcomes.into_iter().map(|(s, _)| s).collect();
        let report = summarize(model, samples, &states, mode, None)?;
        rows.push(make_row(
            "reprojection-baseline".into(),
            false,
            false,
            false,
            None,
            None,
            &report,
            failures,
        ));
    }
    Ok(AblationTable {
        config: base.clone(),
        rows,
    })
}
