//! Evaluation and analysis: MPJPE, the PCK curve and its AUC over 0-50 mm,
//! per-joint error breakdowns, attention-mass partitioning against the
//! skeleton, and the paired noise-robustness sweep.
//!
//! All error metrics run on wrist-relative coordinates. [`evaluate`]
//! re-centers model predictions by their own wrist row before scoring, so
//! the wrist error is zero by construction; the raw metric functions below
//! score exactly what they are given.

use crate::data::{add_2d_noise, CameraIntrinsics, PoseSample};
use crate::model::LiftingModel;
use crate::nn::AttentionMaps;
use crate::rng;
use crate::skeleton::{SkeletonGraph, FINGERTIPS, WRIST};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: pred has {pred} values, gt has {gt} (joints = {joints})")]
    ShapeMismatch {
        pred: usize,
        gt: usize,
        joints: usize,
    },
    #[error("empty input")]
    Empty,
    #[error("attention row (layer {layer}, head {head}, row {row}) sums to {sum}, not 1")]
    NonNormalizedRow {
        layer: usize,
        head: usize,
        row: usize,
        sum: f64,
    },
    #[error(transparent)]
    Tensor(#[from] crate::autodiff::TensorError),
}

/// PCK thresholds: inclusive integer millimeters 0..=50.
pub const PCK_THRESHOLDS: usize = 51;

/// Everything reported for one model on one evaluation set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub mpjpe_mm: f64,
    pub auc: f64,
    /// `(threshold mm, fraction correct)`, 51 points.
    pub pck: Vec<(f64, f64)>,
    pub per_joint_mm: Vec<f64>,
    pub n_samples: usize,
}

fn check_shapes(pred: &[f64], gt: &[f64], joints: usize) -> Result<usize, MetricsError> {
    if pred.len() != gt.len() || pred.len() % (joints * 3) != 0 {
        return Err(MetricsError::ShapeMismatch {
            pred: pred.len(),
            gt: gt.len(),
            joints,
        });
    }
    let n = pred.len() / (joints * 3);
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(n)
}

/// Euclidean error of every (sample, joint) pair, sample-major.
pub fn per_joint_errors(pred: &[f64], gt: &[f64], joints: usize) -> Result<Vec<f64>, MetricsError> {
    let n = check_shapes(pred, gt, joints)?;
    let mut out = Vec::with_capacity(n * joints);
    for s in 0..n {
        for j in 0..joints {
            let o = (s * joints + j) * 3;
            let d: f64 = (0..3).map(|k| (pred[o + k] - gt[o + k]).powi(2)).sum();
            out.push(d.sqrt());
        }
    }
    Ok(out)
}

/// Mean per-joint position error in millimeters.
pub fn mpjpe(pred: &[f64], gt: &[f64], joints: usize) -> Result<f64, MetricsError> {
    let errs = per_joint_errors(pred, gt, joints)?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Joint-wise mean errors (length J).
pub fn per_joint_mpjpe(pred: &[f64], gt: &[f64], joints: usize) -> Result<Vec<f64>, MetricsError> {
    let n = check_shapes(pred, gt, joints)?;
    let errs = per_joint_errors(pred, gt, joints)?;
    let mut out = vec![0.0; joints];
    for (i, e) in errs.iter().enumerate() {
        out[i % joints] += e;
    }
    for v in &mut out {
        *v /= n as f64;
    }
    Ok(out)
}

/// How much one model improves on another, split into fingertip joints
/// versus the remaining non-wrist joints.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TipGapSummary {
    /// Mean error reduction (mm) over the five TIP joints.
    pub tip_gain_mm: f64,
    /// Mean error reduction (mm) over non-tip, non-wrist joints.
    pub nontip_gain_mm: f64,
}

/// `baseline - improved`, averaged over tips and over the other non-wrist
/// joints. Positive numbers mean `improved` is better.
pub fn tip_vs_nontip_gap(baseline: &[f64], improved: &[f64]) -> TipGapSummary {
    let is_tip = |j: usize| FINGERTIPS.contains(&j);
    let mut tip = (0.0, 0);
    let mut rest = (0.0, 0);
    for j in 0..baseline.len() {
        if j == WRIST {
            continue;
        }
        let gain = baseline[j] - improved[j];
        if is_tip(j) {
            tip = (tip.0 + gain, tip.1 + 1);
        } else {
            rest = (rest.0 + gain, rest.1 + 1);
        }
    }
    TipGapSummary {
        tip_gain_mm: tip.0 / tip.1.max(1) as f64,
        nontip_gain_mm: rest.0 / rest.1.max(1) as f64,
    }
}

/// PCK curve over integer thresholds 0..=50 mm plus its AUC (the mean of
/// the curve over the grid). A threshold counts errors strictly below it;
/// the zero threshold counts exact zeros, so an all-zero error profile
/// scores AUC 1.
pub fn pck_auc(
    pred: &[f64],
    gt: &[f64],
    joints: usize,
) -> Result<(Vec<(f64, f64)>, f64), MetricsError> {
    let errs = per_joint_errors(pred, gt, joints)?;
    let total = errs.len() as f64;
    let mut pck = Vec::with_capacity(PCK_THRESHOLDS);
    for t in 0..PCK_THRESHOLDS {
        let thr = t as f64;
        let hits = if t == 0 {
            errs.iter().filter(|e| **e == 0.0).count()
        } else {
            errs.iter().filter(|e| **e < thr).count()
        };
        pck.push((thr, hits as f64 / total));
    }
    let auc = pck.iter().map(|(_, f)| f).sum::<f64>() / PCK_THRESHOLDS as f64;
    Ok((pck, auc))
}

/// Re-centers each predicted pose on its own wrist joint.
pub fn recenter_on_wrist(pred: &mut [f64], joints: usize) {
    for pose in pred.chunks_mut(joints * 3) {
        let (wx, wy, wz) = (pose[0], pose[1], pose[2]);
        for p in pose.chunks_mut(3) {
            p[0] -= wx;
            p[1] -= wy;
            p[2] -= wz;
        }
    }
}

/// Batched evaluation-mode predictions for a sample set, wrist-centered.
pub fn predictions(model: &LiftingModel, samples: &[PoseSample]) -> Result<Vec<f64>, MetricsError> {
    let joints = model.joints();
    let mut out = Vec::with_capacity(samples.len() * joints * 3);
    for chunk in samples.chunks(512) {
        let x: Vec<f64> = chunk.iter().flat_map(|s| s.x2d.iter().copied()).collect();
        let mut y = model.predict(&x, chunk.len())?;
        recenter_on_wrist(&mut y, joints);
        out.extend(y);
    }
    Ok(out)
}

/// Full evaluation of a model on a sample set.
pub fn evaluate(model: &LiftingModel, samples: &[PoseSample]) -> Result<EvalReport, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::Empty);
    }
    let joints = model.joints();
    let pred = predictions(model, samples)?;
    let gt: Vec<f64> = samples.iter().flat_map(|s| s.y3d.iter().copied()).collect();
    let (pck, auc) = pck_auc(&pred, &gt, joints)?;
    Ok(EvalReport {
        mpjpe_mm: mpjpe(&pred, &gt, joints)?,
        auc,
        pck,
        per_joint_mm: per_joint_mpjpe(&pred, &gt, joints)?,
        n_samples: samples.len(),
    })
}

/// Mass split of one head's attention rows.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HeadMass {
    pub self_mass: f64,
    pub skeleton: f64,
    pub off_skeleton: f64,
}

/// Where attention mass lands relative to the skeleton graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionStats {
    pub mass_self: f64,
    pub mass_on_skeleton: f64,
    pub mass_off_skeleton: f64,
    /// `[layer][head]` breakdown.
    pub per_layer_per_head: Vec<Vec<HeadMass>>,
    /// Non-adjacent, non-self pairs ranked by mean weight: `(from, to, weight)`.
    pub top_nonadjacent: Vec<(usize, usize, f64)>,
}

/// Partitions every attention row into self / skeleton-edge / non-skeleton
/// mass and averages over rows, heads, layers, and the batch. Rows must
/// already be normalized; a violation beyond 1e-9 is an error.
pub fn attention_skeleton_mass(
    layers: &[AttentionMaps],
    skeleton: &SkeletonGraph,
) -> Result<AttentionStats, MetricsError> {
    if layers.is_empty() {
        return Err(MetricsError::Empty);
    }
    let j = skeleton.joint_count();
    let adjacent = {
        let mut m = vec![false; j * j];
        for &(a, b) in skeleton.edges() {
            m[a * j + b] = true;
            m[b * j + a] = true;
        }
        m
    };

    let mut per_layer = Vec::with_capacity(layers.len());
    let mut total = HeadMass {
        self_mass: 0.0,
        skeleton: 0.0,
        off_skeleton: 0.0,
    };
    let mut rows_total = 0usize;
    let mut pair_mean = vec![0.0; j * j];
    let mut pair_rows = 0usize;

    for (layer_idx, maps) in layers.iter().enumerate() {
        let mut heads = Vec::with_capacity(maps.heads);
        for h in 0..maps.heads {
            let mut acc = HeadMass {
                self_mass: 0.0,
                skeleton: 0.0,
                off_skeleton: 0.0,
            };
            let mut rows = 0usize;
            for b in 0..maps.batch {
                for i in 0..j {
                    let mut sum = 0.0;
                    let mut m = HeadMass {
                        self_mass: 0.0,
                        skeleton: 0.0,
                        off_skeleton: 0.0,
                    };
                    for col in 0..j {
                        let w = maps.get(b, h, i, col);
                        sum += w;
                        if col == i {
                            m.self_mass += w;
                        } else if adjacent[i * j + col] {
                            m.skeleton += w;
                        } else {
                            m.off_skeleton += w;
                            pair_mean[i * j + col] += w;
                        }
                    }
                    if (sum - 1.0).abs() > 1e-9 {
                        return Err(MetricsError::NonNormalizedRow {
                            layer: layer_idx,
                            head: h,
                            row: i,
                            sum,
                        });
                    }
                    acc.self_mass += m.self_mass;
                    acc.skeleton += m.skeleton;
                    acc.off_skeleton += m.off_skeleton;
                    rows += 1;
                }
            }
            pair_rows += maps.batch;
            total.self_mass += acc.self_mass;
            total.skeleton += acc.skeleton;
            total.off_skeleton += acc.off_skeleton;
            rows_total += rows;
            heads.push(HeadMass {
                self_mass: acc.self_mass / rows as f64,
                skeleton: acc.skeleton / rows as f64,
                off_skeleton: acc.off_skeleton / rows as f64,
            });
        }
        per_layer.push(heads);
    }

    let denom = rows_total as f64;
    // Mean weight each (i, j) pair receives per (layer, head, sample) row.
    let mut ranked: Vec<(usize, usize, f64)> = (0..j * j)
        .filter(|idx| {
            let (a, b) = (idx / j, idx % j);
            a != b && !adjacent[*idx]
        })
        .map(|idx| (idx / j, idx % j, pair_mean[idx] / pair_rows.max(1) as f64))
        .collect();
    ranked.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    ranked.truncate(10);

    Ok(AttentionStats {
        mass_self: total.self_mass / denom,
        mass_on_skeleton: total.skeleton / denom,
        mass_off_skeleton: total.off_skeleton / denom,
        per_layer_per_head: per_layer,
        top_nonadjacent: ranked,
    })
}

/// One row of the noise-robustness table.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma_px: f64,
    pub mpjpe_a: f64,
    pub mpjpe_b: f64,
    /// `(mpjpe_b - mpjpe_a) / mpjpe_b`; positive when model A is better.
    pub relative_gap: f64,
}

/// Evaluates both models under shared Gaussian 2D noise per sigma (paired
/// realizations, so the gap column is low-variance). Deterministic in
/// `seed`; the sigma = 0 row equals plain evaluation.
pub fn noise_sweep(
    model_a: &LiftingModel,
    model_b: &LiftingModel,
    testset: &[PoseSample],
    sigmas: &[f64],
    cam: &CameraIntrinsics,
    seed: u64,
) -> Result<Vec<SweepRow>, MetricsError> {
    let joints = model_a.joints();
    let gt: Vec<f64> = testset.iter().flat_map(|s| s.y3d.iter().copied()).collect();
    sigmas
        .iter()
        .enumerate()
        .map(|(idx, &sigma)| {
            let mut r = rng::indexed_stream(seed, "noise", idx as u64);
            let noised = add_2d_noise(testset, sigma, cam, &mut r);
            let pa = predictions(model_a, &noised)?;
            let pb = predictions(model_b, &noised)?;
            let ma = mpjpe(&pa, &gt, joints)?;
            let mb = mpjpe(&pb, &gt, joints)?;
            Ok(SweepRow {
                sigma_px: sigma,
                mpjpe_a: ma,
                mpjpe_b: mb,
                relative_gap: (mb - ma) / mb,
            })
        })
        .collect()
}

/// Sample mean and (population) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::build_hand_skeleton;
    use rand::Rng;

    fn rand_poses(n: usize, joints: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::stream(seed, "metrics");
        (0..n * joints * 3).map(|_| r.gen_range(-60.0..60.0)).collect()
    }

    #[test]
    fn mpjpe_zero_for_identical_inputs() {
        let p = rand_poses(4, 21, 1);
        assert_eq!(mpjpe(&p, &p, 21).unwrap(), 0.0);
    }

    #[test]
    fn mpjpe_of_constant_offset_is_hypotenuse() {
        let gt = rand_poses(3, 21, 2);
        let pred: Vec<f64> = gt
            .chunks(3)
            .flat_map(|p| [p[0] + 3.0, p[1] + 4.0, p[2]])
            .collect();
        assert!((mpjpe(&pred, &gt, 21).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn mpjpe_matches_naive_double_loop_oracle() {
        let (n, j) = (10, 21);
        let pred = rand_poses(n, j, 3);
        let gt = rand_poses(n, j, 4);
        // Independent oracle: explicit loops, no shared helpers.
        let mut acc = 0.0;
        for s in 0..n {
            for joint in 0..j {
                let o = (s * j + joint) * 3;
                let dx = pred[o] - gt[o];
                let dy = pred[o + 1] - gt[o + 1];
                let dz = pred[o + 2] - gt[o + 2];
                acc += (dx * dx + dy * dy + dz * dz).sqrt();
            }
        }
        let oracle = acc / (n * j) as f64;
        assert!((mpjpe(&pred, &gt, j).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn mpjpe_rejects_mismatched_shapes() {
        let p = rand_poses(2, 21, 5);
        assert!(mpjpe(&p, &p[..63], 21).is_err());
        assert!(mpjpe(&p[..10], &p[..10], 21).is_err());
    }

    #[test]
    fn pck_auc_boundary_cases() {
        let j = 21;
        let gt = rand_poses(2, j, 6);
        let (pck, auc) = pck_auc(&gt, &gt, j).unwrap();
        assert_eq!(auc, 1.0);
        assert!(pck.iter().all(|(_, f)| *f == 1.0));

        // A uniform 25 mm error is counted by thresholds strictly above it.
        let off: Vec<f64> = gt.chunks(3).flat_map(|p| [p[0] + 25.0, p[1], p[2]]).collect();
        let (pck, auc) = pck_auc(&off, &gt, j).unwrap();
        assert!((auc - 25.0 / 51.0).abs() < 1e-12);
        assert_eq!(pck[25].1, 0.0);
        assert_eq!(pck[26].1, 1.0);

        let far: Vec<f64> = gt.chunks(3).flat_map(|p| [p[0] + 80.0, p[1], p[2]]).collect();
        let (_, auc) = pck_auc(&far, &gt, j).unwrap();
        assert_eq!(auc, 0.0);
    }

    #[test]
    fn pck_is_nondecreasing_and_auc_is_its_mean() {
        let j = 21;
        let pred = rand_poses(20, j, 7);
        let gt = rand_poses(20, j, 8);
        let (pck, auc) = pck_auc(&pred, &gt, j).unwrap();
        for w in pck.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
        let mean = pck.iter().map(|(_, f)| f).sum::<f64>() / pck.len() as f64;
        assert!((auc - mean).abs() < 1e-15);
    }

    #[test]
    fn metrics_are_rotation_invariant() {
        // Rotate pred and gt together by a fixed rotation; MPJPE and PCK
        // cannot change (isometry).
        let j = 21;
        let pred = rand_poses(5, j, 9);
        let gt = rand_poses(5, j, 10);
        let (s, c) = (0.6f64, 0.8f64); // rotation about z
        let rot = |v: &[f64]| -> Vec<f64> {
            v.chunks(3)
                .flat_map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]])
                .collect()
        };
        let m0 = mpjpe(&pred, &gt, j).unwrap();
        let m1 = mpjpe(&rot(&pred), &rot(&gt), j).unwrap();
        assert!((m0 - m1).abs() < 1e-9);
        let (_, a0) = pck_auc(&pred, &gt, j).unwrap();
        let (_, a1) = pck_auc(&rot(&pred), &rot(&gt), j).unwrap();
        assert!((a0 - a1).abs() < 1e-9);
    }

    #[test]
    fn per_joint_errors_and_tip_gap_fixture() {
        let j = 21;
        let gt = rand_poses(2, j, 11);
        assert!(per_joint_mpjpe(&gt, &gt, j).unwrap().iter().all(|v| *v == 0.0));

        // Hand-built per-joint profiles: baseline 10 mm everywhere, improved
        // gains 3 mm at tips and 1 mm elsewhere.
        let baseline = vec![10.0; 21];
        let mut improved = vec![9.0; 21];
        for &t in &FINGERTIPS {
            improved[t] = 7.0;
        }
        improved[WRIST] = 10.0; // wrist ignored either way
        let gap = tip_vs_nontip_gap(&baseline, &improved);
        assert!((gap.tip_gain_mm - 3.0).abs() < 1e-12);
        assert!((gap.nontip_gain_mm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_attention_off_skeleton_mass() {
        let g = build_hand_skeleton();
        let j = 21;
        let maps = AttentionMaps {
            batch: 2,
            heads: 3,
            joints: j,
            values: vec![1.0 / j as f64; 2 * 3 * j * j],
        };
        let stats = attention_skeleton_mass(&[maps], &g).unwrap();
        let expect = 1.0 - 61.0 / 441.0;
        assert!((stats.mass_off_skeleton - expect).abs() < 1e-12);
        assert!((stats.mass_self - 1.0 / 21.0).abs() < 1e-12);
        // Partition adds to one.
        let total = stats.mass_self + stats.mass_on_skeleton + stats.mass_off_skeleton;
        assert!((total - 1.0).abs() < 1e-9);
        // Strongest non-adjacent pairs all share the uniform weight.
        assert_eq!(stats.top_nonadjacent.len(), 10);
        for (_, _, w) in &stats.top_nonadjacent {
            assert!((w - 1.0 / 21.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_attention_has_no_off_mass() {
        let g = build_hand_skeleton();
        let j = 21;
        let mut values = vec![0.0; j * j];
        for i in 0..j {
            values[i * j + i] = 1.0;
        }
        let maps = AttentionMaps {
            batch: 1,
            heads: 1,
            joints: j,
            values,
        };
        let stats = attention_skeleton_mass(&[maps], &g).unwrap();
        assert_eq!(stats.mass_off_skeleton, 0.0);
        assert_eq!(stats.mass_self, 1.0);
    }

    #[test]
    fn non_normalized_rows_are_rejected() {
        let g = build_hand_skeleton();
        let maps = AttentionMaps {
            batch: 1,
            heads: 1,
            joints: 21,
            values: vec![0.1; 441],
        };
        assert!(matches!(
            attention_skeleton_mass(&[maps], &g),
            Err(MetricsError::NonNormalizedRow { .. })
        ));
    }

    #[test]
    fn mean_std_matches_hand_computation() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-15);
        assert!((s - (1.25f64).sqrt()).abs() < 1e-15);
    }
}
