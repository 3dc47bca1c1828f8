//! Synthetic hand poses from forward kinematics over the 21-joint tree.
//!
//! Each sample draws per-finger articulation angles, runs the kinematic
//! chain in a local hand frame, applies a random global rotation and
//! placement in front of the camera, and projects to normalized 2D. Sample
//! `i` of seed `s` is a pure function of `(s, i)`, so datasets regenerate
//! identically on any platform.

use super::{project_and_normalize, to_wrist_relative, CameraIntrinsics, DataError, PoseSample};
use crate::rng;
use crate::skeleton::JOINT_COUNT;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Average adult hand segment lengths in mm, ordered like the skeleton edge
/// list (per finger: wrist-MCP, MCP-PIP, PIP-DIP, DIP-TIP; fingers in
/// thumb..pinky order). Rounded from published hand-anthropometry surveys
/// (Buchholz, Armstrong & Goldstein 1992, Ergonomics 35).
pub const DEFAULT_BONE_LENGTHS: [f64; 20] = [
    48.0, 34.0, 30.0, 26.0, // thumb
    92.0, 42.0, 26.0, 20.0, // index
    88.0, 46.0, 30.0, 22.0, // middle
    82.0, 42.0, 28.0, 21.0, // ring
    74.0, 32.0, 20.0, 18.0, // pinky
];

/// Finger base directions in the palm plane, radians away from the middle
/// finger axis (negative toward the thumb).
const FINGER_SPLAY: [f64; 5] = [-1.05, -0.26, 0.0, 0.21, 0.49];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticHandConfig {
    /// 20 segment lengths (mm), skeleton edge order.
    pub bone_lengths: Vec<f64>,
    /// Flexion ranges (radians) at each articulation level.
    pub mcp_flexion: (f64, f64),
    pub pip_flexion: (f64, f64),
    pub dip_flexion: (f64, f64),
    /// Sideways MCP abduction range (radians).
    pub abduction: (f64, f64),
    /// Global hand rotation: max absolute angle (radians) about each axis.
    pub rotation: (f64, f64, f64),
    /// Camera-frame hand placement: depth range (mm) and lateral extent (mm).
    pub depth: (f64, f64),
    pub lateral: f64,
    pub camera: CameraIntrinsics,
    pub count: usize,
    pub seed: u64,
}

impl SyntheticHandConfig {
    pub fn new(count: usize, seed: u64) -> Self {
        SyntheticHandConfig {
            bone_lengths: DEFAULT_BONE_LENGTHS.to_vec(),
            mcp_flexion: (-0.17, 1.40),
            pip_flexion: (0.0, 1.75),
            dip_flexion: (0.0, 1.22),
            abduction: (-0.26, 0.26),
            rotation: (1.05, 1.05, std::f64::consts::PI),
            depth: (350.0, 550.0),
            lateral: 60.0,
            camera: CameraIntrinsics::default_synthetic(),
            count,
            seed,
        }
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.count == 0 {
            return Err(DataError::BadConfig("sample count must be positive".into()));
        }
        if self.bone_lengths.len() != 20 {
            return Err(DataError::BadConfig(format!(
                "need 20 bone lengths, got {}",
                self.bone_lengths.len()
            )));
        }
        if self.bone_lengths.iter().any(|&l| l <= 0.0) {
            return Err(DataError::BadConfig("bone lengths must be positive".into()));
        }
        for (name, (lo, hi)) in [
            ("mcp_flexion", self.mcp_flexion),
            ("pip_flexion", self.pip_flexion),
            ("dip_flexion", self.dip_flexion),
            ("abduction", self.abduction),
        ] {
            // Anatomically bounded articulation only.
            if lo > hi || lo < -1.6 || hi > 2.0 {
                return Err(DataError::BadConfig(format!("{name} range ({lo}, {hi})")));
            }
        }
        if self.depth.0 > self.depth.1 || self.depth.0 <= 0.0 {
            return Err(DataError::BadConfig(format!("depth range {:?}", self.depth)));
        }
        Ok(())
    }
}

type Vec3 = [f64; 3];

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Rodrigues rotation of `v` about the unit axis by `angle`.
fn rotate(v: Vec3, axis: Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    let term1 = scale(v, c);
    let term2 = scale(cross(axis, v), s);
    let term3 = scale(axis, dot(axis, v) * (1.0 - c));
    add(add(term1, term2), term3)
}

/// Joint positions (camera frame, mm) for sample `index` of the config.
fn sample_world(cfg: &SyntheticHandConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Local frame: +y runs wrist to fingers, +z is the palm normal.
    let palm_normal: Vec3 = [0.0, 0.0, 1.0];
    let heading: Vec3 = [0.0, 1.0, 0.0];

    let mut local = [[0.0f64; 3]; JOINT_COUNT];
    for finger in 0..5 {
        let base_dir = rotate(heading, palm_normal, FINGER_SPLAY[finger]);
        let lens = &cfg.bone_lengths[finger * 4..finger * 4 + 4];

        let abduction = rng.gen_range(cfg.abduction.0..=cfg.abduction.1);
        let mcp_flex = rng.gen_range(cfg.mcp_flexion.0..=cfg.mcp_flexion.1);
        let pip_flex = rng.gen_range(cfg.pip_flexion.0..=cfg.pip_flexion.1);
        let dip_flex = rng.gen_range(cfg.dip_flexion.0..=cfg.dip_flexion.1);

        let forward = rotate(base_dir, palm_normal, abduction);
        // Flexion folds toward the palm, about the axis across the finger.
        let bend_axis = cross(palm_normal, forward);

        let mcp = scale(base_dir, lens[0]);
        let d1 = rotate(forward, bend_axis, mcp_flex);
        let pip = add(mcp, scale(d1, lens[1]));
        let d2 = rotate(forward, bend_axis, mcp_flex + pip_flex);
        let dip = add(pip, scale(d2, lens[2]));
        let d3 = rotate(forward, bend_axis, mcp_flex + pip_flex + dip_flex);
        let tip = add(dip, scale(d3, lens[3]));

        local[1 + finger] = mcp;
        let chain = 6 + 3 * finger;
        local[chain] = pip;
        local[chain + 1] = dip;
        local[chain + 2] = tip;
    }

    // Global pose: rotate about x, y, z in turn, then place in front of the
    // camera.
    let ax = rng.gen_range(-cfg.rotation.0..=cfg.rotation.0);
    let ay = rng.gen_range(-cfg.rotation.1..=cfg.rotation.1);
    let az = rng.gen_range(-cfg.rotation.2..=cfg.rotation.2);
    let root: Vec3 = [
        rng.gen_range(-cfg.lateral..=cfg.lateral),
        rng.gen_range(-cfg.lateral..=cfg.lateral),
        rng.gen_range(cfg.depth.0..=cfg.depth.1),
    ];

    let mut world = Vec::with_capacity(JOINT_COUNT * 3);
    for p in local {
        let p = rotate(p, [1.0, 0.0, 0.0], ax);
        let p = rotate(p, [0.0, 1.0, 0.0], ay);
        let p = rotate(p, [0.0, 0.0, 1.0], az);
        world.extend(add(p, root));
    }
    world
}

const MAX_RETRIES: usize = 32;

/// Camera-frame joint positions for every sample, without projection.
pub fn generate_worlds(cfg: &SyntheticHandConfig) -> Result<Vec<Vec<f64>>, DataError> {
    cfg.validate()?;
    (0..cfg.count as u64)
        .map(|i| {
            let mut r = rng::indexed_stream(cfg.seed, "synth", i);
            for _ in 0..MAX_RETRIES {
                let world = sample_world(cfg, &mut r);
                if world.chunks(3).all(|p| p[2] > 0.0) {
                    return Ok(world);
                }
            }
            Err(DataError::RetriesExhausted(MAX_RETRIES))
        })
        .collect()
}

/// Projected and wrist-centered samples; deterministic in `(seed, index)`.
pub fn generate(cfg: &SyntheticHandConfig) -> Result<Vec<PoseSample>, DataError> {
    let worlds = generate_worlds(cfg)?;
    worlds
        .into_iter()
        .map(|world| {
            let x2d = project_and_normalize(&world, &cfg.camera)?;
            PoseSample::new(x2d, to_wrist_relative(&world), None)
        })
        .collect()
}
