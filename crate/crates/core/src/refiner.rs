//! The outer refinement loop: camera, then shape, then pose, repeated.

use log::{debug, warn};
use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::metrics::{mean, median, mpjpe, pa_mpjpe, reprojection_of_joints, PelvisMode};
use crate::camera::{solve_translation, update_translation, CameraIntrinsics};
use crate::error::{KitroError, Result};
use crate::hypothesis::{
    apply_pose_update, build_tree, score_edges, select_greedy, select_path, HypothesisTree,
    PathSelection, TreeDump, DEFAULT_MAX_CHAIN_DEPTH,
};
use crate::shape_opt::{refine_shape, AdamState, DEFAULT_SHAPE_LR, DEFAULT_SHAPE_STEPS};
use crate::skeleton::{BodyState, Chain, SkeletonModel, StateRecord, NUM_BETAS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    /// Highest product of edge weights over whole paths.
    #[default]
    Tree,
    /// Locally heavier edge, bone by bone.
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub iterations: usize,
    pub shape_steps: usize,
    pub shape_lr: f64,
    pub enable_camera: bool,
    pub enable_shape: bool,
    pub enable_pose: bool,
    /// Blend each bone toward its candidate by the chosen edge weight;
    /// when false every bone moves fully onto its candidate.
    pub soft_update: bool,
    pub selection_mode: SelectionMode,
    pub dump_trees: bool,
    /// Keep shape optimizer moments across outer iterations.
    pub adam_carry: bool,
    /// Replace every sample's focal length.
    pub focal_override: Option<f64>,
    pub max_chain_depth: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            shape_steps: DEFAULT_SHAPE_STEPS,
            shape_lr: DEFAULT_SHAPE_LR,
            enable_camera: true,
            enable_shape: true,
            enable_pose: true,
            soft_update: true,
            selection_mode: SelectionMode::Tree,
            dump_trees: false,
            adam_carry: false,
            focal_override: None,
            max_chain_depth: DEFAULT_MAX_CHAIN_DEPTH,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.shape_lr > 0.0) || !self.shape_lr.is_finite() {
            return Err(KitroError::InvalidInput(format!(
                "shape learning rate must be positive, got {}",
                self.shape_lr
            )));
        }
        if let Some(f) = self.focal_override {
            if !(f > 0.0) || !f.is_finite() {
                return Err(KitroError::InvalidInput(format!(
                    "focal override must be positive, got {f}"
                )));
            }
        }
        Ok(())
    }
}

/// One entry of a refinement trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub state: StateRecord,
    pub reproj_px: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mpjpe: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pa_mpjpe: Option<f64>,
    pub tree_nodes: usize,
    pub rectified_nodes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trees: Option<Vec<TreeDump>>,
}

/// Entry 0 is the initialization; entry `m` follows iteration `m`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub iterations: Vec<IterationRecord>,
}

impl RefinementTrace {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn rectification_counts(&self) -> (usize, usize) {
        self.iterations.iter().fold((0, 0), |(r, n), it| {
            (r + it.rectified_nodes, n + it.tree_nodes)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    /// State after the last complete iteration.
    pub state: BodyState,
    pub trace: RefinementTrace,
    /// The stage error that stopped the loop early, if any.
    pub error: Option<KitroError>,
}

#[derive(Debug, Default)]
struct PoseStats {
    tree_nodes: usize,
    rectified_nodes: usize,
    dumps: Option<Vec<TreeDump>>,
}

fn camera_for(intr: &CameraIntrinsics, cfg: &RefineConfig) -> Result<CameraIntrinsics> {
    match cfg.focal_override {
        Some(f) => intr.with_focal(f),
        None => Ok(*intr),
    }
}

fn record(
    iteration: usize,
    model: &SkeletonModel,
    state: &BodyState,
    intr: &CameraIntrinsics,
    keypoints: &[Vector2<f64>],
    gt: Option<&[Vector3<f64>]>,
    stats: PoseStats,
) -> IterationRecord {
    let joints: Vec<Vector3<f64>> = model
        .pose(&state.theta, &state.beta)
        .joints
        .iter()
        .map(|j| j + state.trans)
        .collect();
    IterationRecord {
        iteration,
        state: StateRecord::from_state(state),
        reproj_px: reprojection_of_joints(&joints, intr, keypoints),
        mpjpe: gt.map(|g| mpjpe(&joints, g, PelvisMode::Joint0)),
        pa_mpjpe: gt.and_then(|g| pa_mpjpe(&joints, g).ok()),
        tree_nodes: stats.tree_nodes,
        rectified_nodes: stats.rectified_nodes,
        trees: stats.dumps,
    }
}

/// New rotations with the trees and selections that produced them.
pub type PoseStep = (Vec<Matrix3<f64>>, Vec<HypothesisTree>, Vec<PathSelection>);

/// Build, score and select one tree per chain, then rewrite the pose.
/// Chains hanging off another chain are rooted at the position and
/// hypothetical parent rotation of that chain's selected path.
pub fn pose_step(
    model: &SkeletonModel,
    state: &BodyState,
    intr: &CameraIntrinsics,
    keypoints: &[Vector2<f64>],
    chains: &[Chain],
    cfg: &RefineConfig,
) -> Result<PoseStep> {
    let posed = model.pose(&state.theta, &state.beta);
    let bone_lengths = model.bone_lengths(&state.beta);
    let mut trees: Vec<HypothesisTree> = Vec::with_capacity(chains.len());
    let mut selections: Vec<PathSelection> = Vec::with_capacity(chains.len());
    for (ci, chain) in chains.iter().enumerate() {
        let fk_root = posed.joints[chain.root] + state.trans;
        let (root_pos, anchor) = match chain.depends_on {
            None => (fk_root, None),
            Some(dep) => {
                let level = trees[dep]
                    .bones
                    .iter()
                    .position(|&(_, c)| c == chain.root)
                    .ok_or_else(|| {
                        KitroError::InvalidInput(format!(
                            "chain {ci} is rooted outside chain {dep}"
                        ))
                    })?;
                let node = &trees[dep].levels[level][selections[dep].node_indices[level]];
                if node.valid {
                    (node.position, Some(node.hyp_abs_rot))
                } else {
                    (fk_root, None)
                }
            }
        };
        let mut tree = build_tree(
            ci,
            chain,
            &root_pos,
            keypoints,
            &bone_lengths,
            intr,
            cfg.max_chain_depth,
        )?;
        tree.anchor_rot = anchor;
        score_edges(&mut tree, state, model)?;
        let sel = match cfg.selection_mode {
            SelectionMode::Tree => select_path(&tree),
            SelectionMode::Greedy => select_greedy(&tree),
        };
        trees.push(tree);
        selections.push(sel);
    }
    let theta = apply_pose_update(state, model, &trees, &selections, cfg.soft_update)?;
    Ok((theta, trees, selections))
}

fn iterate(
    model: &SkeletonModel,
    current: &BodyState,
    intr: &CameraIntrinsics,
    keypoints: &[Vector2<f64>],
    chains: &[Chain],
    cfg: &RefineConfig,
    adam: &mut AdamState,
) -> Result<(BodyState, PoseStats)> {
    let mut next = current.clone();
    if cfg.enable_camera {
        let joints = model.pose(&next.theta, &next.beta).joints;
        let t_star = solve_translation(&joints, keypoints, intr)?;
        next.trans = update_translation(&t_star, &next.trans);
    }
    if cfg.enable_shape {
        let carried = if cfg.adam_carry {
            Some(&mut *adam)
        } else {
            None
        };
        let out = refine_shape(
            model,
            &next.beta,
            &next.theta,
            &next.trans,
            intr,
            keypoints,
            cfg.shape_steps,
            cfg.shape_lr,
            carried,
        )?;
        if out.aborted {
            warn!("shape step stopped on a non-finite loss");
        }
        next.beta = out.beta;
    }
    let mut stats = PoseStats::default();
    if cfg.enable_pose {
        let (theta, trees, selections) = pose_step(model, &next, intr, keypoints, chains, cfg)?;
        next.theta = theta;
        stats.tree_nodes = trees.iter().map(HypothesisTree::node_count).sum();
        stats.rectified_nodes = trees.iter().map(HypothesisTree::rectified_count).sum();
        if cfg.dump_trees {
            stats.dumps = Some(
                trees
                    .iter()
                    .zip(&selections)
                    .map(|(t, s)| TreeDump::new(t, s))
                    .collect(),
            );
        }
    }
    next.validate()?;
    Ok((next, stats))
}

fn check_inputs(
    model: &SkeletonModel,
    state: &BodyState,
    keypoints: &[Vector2<f64>],
) -> Result<()> {
    let n = model.num_joints();
    if keypoints.len() != n || state.theta.len() != n {
        return Err(KitroError::InvalidInput(format!(
            "expected {n} joints, got {} rotations and {} keypoints",
            state.theta.len(),
            keypoints.len()
        )));
    }
    if keypoints
        .iter()
        .any(|k| !k.x.is_finite() || !k.y.is_finite())
    {
        return Err(KitroError::NonFinite("keypoints".into()));
    }
    if state
        .beta
        .iter()
        .chain(state.trans.iter())
        .any(|v| !v.is_finite())
    {
        return Err(KitroError::NonFinite("shape or translation".into()));
    }
    state.validate()
}

/// Run the refinement loop. `gt` adds MPJPE and PA-MPJPE to the trace.
/// A stage error stops the loop and returns the last complete state
/// together with the error.
pub fn refine(
    model: &SkeletonModel,
    state: &BodyState,
    intr: &CameraIntrinsics,
    keypoints: &[Vector2<f64>],
    cfg: &RefineConfig,
    gt: Option<&BodyState>,
) -> Refined {
    let fail = |e| Refined {
        state: state.clone(),
        trace: RefinementTrace::default(),
        error: Some(e),
    };
    if let Err(e) = cfg
        .validate()
        .and_then(|_| check_inputs(model, state, keypoints))
    {
        return fail(e);
    }
    let intr = match camera_for(intr, cfg) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let gt_joints = match gt.map(|g| model.camera_joints(g)).transpose() {
        Ok(j) => j,
        Err(e) => return fail(e),
    };
    let gt_ref = gt_joints.as_deref();
    let chains = model.tree().chains();

    let mut current = state.clone();
    let mut trace = RefinementTrace {
        iterations: vec![record(
            0,
            model,
            &current,
            &intr,
            keypoints,
            gt_ref,
            PoseStats::default(),
        )],
    };
    let mut adam = AdamState::new(NUM_BETAS, cfg.shape_lr);
    for m in 0..cfg.iterations {
        match iterate(model, &current, &intr, keypoints, &chains, cfg, &mut adam) {
            Ok((next, stats)) => {
                current = next;
                trace.iterations.push(record(
                    m + 1,
                    model,
                    &current,
                    &intr,
                    keypoints,
                    gt_ref,
                    stats,
                ));
            }
            Err(e) => {
                debug!("iteration {} failed: {e}", m + 1);
                return Refined {
                    state: current,
                    trace,
                    error: Some(e),
                };
            }
        }
    }
    Refined {
        state: current,
        trace,
        error: None,
    }
}

/// One unit of batch work.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineJob {
    pub state: BodyState,
    pub intr: CameraIntrinsics,
    pub keypoints: Vec<Vector2<f64>>,
    pub gt: Option<BodyState>,
}

/// Per-iteration aggregates across a batch, over samples that finished.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IterationCurves {
    pub mean_reproj_px: Vec<f64>,
    pub median_reproj_px: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub median_mpjpe: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub mean_mpjpe: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub median_pa_mpjpe: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub samples: usize,
    pub failures: usize,
    /// Indices and messages of failed samples.
    pub errors: Vec<(usize, String)>,
    pub curves: IterationCurves,
    /// Share of tree nodes that were rectified, over all samples.
    pub rectification_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    pub results: Vec<Refined>,
    pub summary: BatchSummary,
}

/// Refine every job, in parallel on `threads` workers (0 = rayon default).
/// Each job is independent and results keep the input order, so the output
/// does not depend on the thread count.
pub fn refine_batch(
    model: &SkeletonModel,
    jobs: &[RefineJob],
    cfg: &RefineConfig,
    threads: usize,
) -> Result<BatchOutput> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| KitroError::InvalidInput(format!("thread pool: {e}")))?;
    let results: Vec<Refined> = pool.install(|| {
        jobs.par_iter()
            .map(|j| refine(model, &j.state, &j.intr, &j.keypoints, cfg, j.gt.as_ref()))
            .collect()
    });
    let summary = summarize_batch(&results, cfg.iterations);
    Ok(BatchOutput { results, summary })
}

pub fn summarize_batch(results: &[Refined], iterations: usize) -> BatchSummary {
    let errors: Vec<(usize, String)> = results
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.error.as_ref().map(|e| (i, e.to_string())))
        .collect();
    let complete: Vec<&Refined> = results
        .iter()
        .filter(|r| r.error.is_none() && r.trace.len() == iterations + 1)
        .collect();
    let mut curves = IterationCurves::default();
    let has_gt = !complete.is_empty()
        && complete
            .iter()
            .all(|r| r.trace.iterations.iter().all(|it| it.mpjpe.is_some()));
    for m in 0..=iterations {
        if complete.is_empty() {
            break;
        }
        let reproj: Vec<f64> = complete
            .iter()
            .map(|r| r.trace.iterations[m].reproj_px)
            .filter(|v| v.is_finite())
            .collect();
        curves.mean_reproj_px.push(mean(&reproj));
        curves.median_reproj_px.push(median(&reproj));
        if has_gt {
            let mp: Vec<f64> = complete
                .iter()
                .map(|r| r.trace.iterations[m].mpjpe.unwrap_or(f64::NAN))
                .collect();
            curves.median_mpjpe.push(median(&mp));
            curves.mean_mpjpe.push(mean(&mp));
            let pa: Vec<f64> = complete
                .iter()
                .filter_map(|r| r.trace.iterations[m].pa_mpjpe)
                .collect();
            curves.median_pa_mpjpe.push(median(&pa));
        }
    }
    let (rect, nodes) = results.iter().fold((0, 0), |(r, n), res| {
        let (a, b) = res.trace.rectification_counts();
        (r + a, n + b)
    });
    BatchSummary {
        samples: results.len(),
        failures: errors.len(),
        errors,
        curves,
        rectification_rate: (nodes > 0).then(|| rect as f64 / nodes as f64),
    }
}
