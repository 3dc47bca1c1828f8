//! Declarative model configuration and assembly.
//!
//! A [`ModelConfig`] names one ablation variant: which spatial block the
//! stack uses, which positional encoding the embedding carries, and the
//! width/depth/head counts. Named presets cover the two ablation tables;
//! everything else (initialization, parameter naming, counting) lives in
//! [`LiftingModel`].

use crate::autodiff::{Tape, Tensor, TensorError};
use crate::nn::{
    self, AttentionLayer, AttentionMaps, ForwardCtx, GatBlock, GcnBlock, JointEmbedding, Param,
    PositionalTable, RegressionHead, SpatialBlock,
};
use crate::rng;
use crate::skeleton::{self, SkeletonGraph};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("width {width} is not divisible by {heads} heads")]
    WidthNotDivisible { width: usize, heads: usize },
    #[error("width must be an even number >= 2, got {0}")]
    BadWidth(usize),
    #[error("depth must be >= 1")]
    BadDepth,
    #[error("unknown preset {0:?}; available: {}", PRESETS.join(", "))]
    UnknownPreset(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Spatial mixing block used in every layer of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpatialKind {
    #[serde(rename = "gcn_1hop")]
    Gcn1Hop,
    #[serde(rename = "gcn_multihop")]
    GcnMultihop,
    #[serde(rename = "gat_skeleton")]
    GatSkeleton,
    #[serde(rename = "attention")]
    Attention,
}

impl SpatialKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SpatialKind::Gcn1Hop => "gcn_1hop",
            SpatialKind::GcnMultihop => "gcn_multihop",
            SpatialKind::GatSkeleton => "gat_skeleton",
            SpatialKind::Attention => "attention",
        }
    }
}

/// Positional-encoding variant added into the joint embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeKind {
    GraphDistance,
    None,
    Learnable,
}

impl PeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PeKind::GraphDistance => "graph_distance",
            PeKind::None => "none",
            PeKind::Learnable => "learnable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub spatial: SpatialKind,
    pub pe: PeKind,
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    pub dropout: f64,
}

const PRESETS: [&str; 8] = [
    "table1_a", "table1_b", "table1_c", "table1_d", "table1_e", "table2_a", "table2_b",
    "table2_c",
];

impl ModelConfig {
    /// Full-size attention model: D=256, L=4, 8 heads, graph-distance PE.
    pub fn attention_base() -> Self {
        ModelConfig {
            spatial: SpatialKind::Attention,
            pe: PeKind::GraphDistance,
            width: 256,
            depth: 4,
            heads: 8,
            dropout: 0.1,
        }
    }

    /// Named ablation variants. Table 1 rows (a)-(e) vary the spatial block
    /// under a shared embedding; Table 2 rows (a)-(c) vary the positional
    /// encoding of the attention model.
    pub fn preset(name: &str) -> Result<Self, ModelError> {
        let base = Self::attention_base();
        Ok(match name {
            "table1_a" => ModelConfig {
                spatial: SpatialKind::Gcn1Hop,
                ..base
            },
            "table1_b" => ModelConfig {
                spatial: SpatialKind::Gcn1Hop,
                width: 296,
                ..base
            },
            "table1_c" => ModelConfig {
                spatial: SpatialKind::GcnMultihop,
                width: 296,
                ..base
            },
            "table1_d" => ModelConfig {
                spatial: SpatialKind::GatSkeleton,
                ..base
            },
            "table1_e" | "table2_a" => base,
            "table2_b" => ModelConfig {
                pe: PeKind::None,
                ..base
            },
            "table2_c" => ModelConfig {
                pe: PeKind::Learnable,
                ..base
            },
            other => return Err(ModelError::UnknownPreset(other.to_string())),
        })
    }

    pub fn preset_names() -> &'static [&'static str] {
        &PRESETS
    }

    /// Same variant at a smaller width/depth, for desk-scale benchmarks.
    pub fn scaled(&self, width: usize, depth: usize) -> Self {
        ModelConfig {
            width,
            depth,
            ..*self
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.width < 2 || self.width % 2 != 0 {
            return Err(ModelError::BadWidth(self.width));
        }
        if self.width % self.heads != 0 {
            return Err(ModelError::WidthNotDivisible {
                width: self.width,
                heads: self.heads,
            });
        }
        if self.depth == 0 {
            return Err(ModelError::BadDepth);
        }
        Ok(())
    }
}

/// An assembled lifting network: embedding, L homogeneous spatial blocks,
/// regression head.
pub struct LiftingModel {
    pub config: ModelConfig,
    pub embedding: JointEmbedding,
    pub layers: Vec<SpatialBlock>,
    pub head: RegressionHead,
    joints: usize,
}

impl LiftingModel {
    /// Deterministic initialization from `seed` (its `"init"` substream).
    pub fn build(
        config: ModelConfig,
        skeleton: &SkeletonGraph,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let mut r = rng::stream(seed, "init");
        let joints = skeleton.joint_count();
        let hops = skeleton::hop_distances(skeleton);

        let positional = match config.pe {
            PeKind::GraphDistance => {
                PositionalTable::graph_distance(config.width, hops.wrist_dist(), &mut r)
            }
            PeKind::None => PositionalTable::None,
            PeKind::Learnable => PositionalTable::learnable(config.width, joints, &mut r),
        };
        let embedding = JointEmbedding::new(config.width, joints, positional, &mut r);

        let layers = (0..config.depth)
            .map(|_| match config.spatial {
                SpatialKind::Gcn1Hop => SpatialBlock::Gcn(GcnBlock::new(
                    config.width,
                    &skeleton::normalized_adjacency(skeleton),
                    &mut r,
                )),
                SpatialKind::GcnMultihop => SpatialBlock::Gcn(GcnBlock::new(
                    config.width,
                    &skeleton::multihop_adjacency(skeleton),
                    &mut r,
                )),
                SpatialKind::GatSkeleton => SpatialBlock::Gat(GatBlock::new(
                    config.width,
                    config.heads,
                    &skeleton::skeleton_mask(skeleton),
                    &mut r,
                )),
                SpatialKind::Attention => {
                    SpatialBlock::Attention(AttentionLayer::new(config.width, config.heads, &mut r))
                }
            })
            .collect();

        let head = RegressionHead::new(config.width, &mut r);
        Ok(LiftingModel {
            config,
            embedding,
            layers,
            head,
            joints,
        })
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    /// `(B, J, 2)` normalized 2D input to `(B, J, 3)` wrist-relative mm,
    /// plus per-layer attention maps when requested (attention/GAT only).
    pub fn forward(
        &self,
        ctx: &mut ForwardCtx,
        x: &Tensor,
        return_weights: bool,
    ) -> Result<(Tensor, Vec<AttentionMaps>), TensorError> {
        let mut h = self.embedding.forward(ctx, x)?;
        let mut maps = Vec::new();
        for layer in &self.layers {
            let (next, m) = layer.forward(ctx, &h, return_weights)?;
            h = next;
            if let Some(m) = m {
                maps.push(m);
            }
        }
        Ok((self.head.forward(ctx, &h)?, maps))
    }

    /// Evaluation-mode forward on plain values; returns `(B, J, 3)` values.
    pub fn predict(&self, x2d: &[f64], batch: usize) -> Result<Vec<f64>, TensorError> {
        let tape = Tape::new();
        let mut r = rng::stream(0, "eval");
        let mut ctx = ForwardCtx {
            tape: &tape,
            training: false,
            dropout: 0.0,
            rng: &mut r,
        };
        let x = Tensor::new(&[batch, self.joints, 2], x2d.to_vec())?;
        let (y, _) = self.forward(&mut ctx, &x, false)?;
        Ok(y.values())
    }

    /// Evaluation-mode forward that also returns each layer's attention maps.
    pub fn predict_with_attention(
        &self,
        x2d: &[f64],
        batch: usize,
    ) -> Result<(Vec<f64>, Vec<AttentionMaps>), TensorError> {
        let tape = Tape::new();
        let mut r = rng::stream(0, "eval");
        let mut ctx = ForwardCtx {
            tape: &tape,
            training: false,
            dropout: 0.0,
            rng: &mut r,
        };
        let x = Tensor::new(&[batch, self.joints, 2], x2d.to_vec())?;
        let (y, maps) = self.forward(&mut ctx, &x, true)?;
        Ok((y.values(), maps))
    }

    /// Whether forward passes can produce attention maps.
    pub fn has_attention(&self) -> bool {
        self.layers.first().map(|l| l.has_attention()).unwrap_or(false)
    }

    /// All trainable parameters, stably named and ordered.
    pub fn params(&self) -> Vec<Param> {
        let mut out = Vec::new();
        nn::collect_embedding(&self.embedding, &mut out);
        for (i, layer) in self.layers.iter().enumerate() {
            nn::collect_block(layer, i, &mut out);
        }
        nn::collect_head(&self.head, &mut out);
        out
    }

    /// Number of trainable scalars.
    pub fn count_parameters(&self) -> usize {
        self.params().iter().map(|p| p.tensor.numel()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::build_hand_skeleton;
    use crate::gradcheck;
    use rand::Rng;

    fn mini(spatial: SpatialKind, pe: PeKind) -> ModelConfig {
        ModelConfig {
            spatial,
            pe,
            width: 8,
            depth: 1,
            heads: 2,
            dropout: 0.0,
        }
    }

    #[test]
    fn presets_match_table_definitions() {
        let e = ModelConfig::preset("table1_e").unwrap();
        assert_eq!(e.spatial, SpatialKind::Attention);
        assert_eq!((e.width, e.depth, e.heads), (256, 4, 8));
        let b = ModelConfig::preset("table1_b").unwrap();
        assert_eq!(b.spatial, SpatialKind::Gcn1Hop);
        assert_eq!(b.width, 296);
        let c = ModelConfig::preset("table1_c").unwrap();
        assert_eq!(c.spatial, SpatialKind::GcnMultihop);
        let d = ModelConfig::preset("table1_d").unwrap();
        assert_eq!(d.spatial, SpatialKind::GatSkeleton);
        assert_eq!(ModelConfig::preset("table2_b").unwrap().pe, PeKind::None);
        assert_eq!(ModelConfig::preset("table2_c").unwrap().pe, PeKind::Learnable);
        // Table 2 row (a) is the Table 1 attention model.
        assert_eq!(
            ModelConfig::preset("table2_a").unwrap(),
            ModelConfig::preset("table1_e").unwrap()
        );
    }

    #[test]
    fn unknown_preset_lists_alternatives() {
        let err = ModelConfig::preset("table3_z").unwrap_err().to_string();
        assert!(err.contains("table1_a") && err.contains("table2_c"), "{err}");
    }

    #[test]
    fn build_rejects_indivisible_heads() {
        let g = build_hand_skeleton();
        let cfg = ModelConfig {
            width: 10,
            heads: 4,
            ..mini(SpatialKind::Attention, PeKind::None)
        };
        assert!(matches!(
            LiftingModel::build(cfg, &g, 0),
            Err(ModelError::WidthNotDivisible { .. })
        ));
    }

    #[test]
    fn same_seed_builds_bit_identical_parameters() {
        let g = build_hand_skeleton();
        let cfg = ModelConfig::preset("table1_e").unwrap().scaled(16, 2);
        let a = LiftingModel::build(cfg, &g, 42).unwrap();
        let b = LiftingModel::build(cfg, &g, 42).unwrap();
        let (pa, pb) = (a.params(), b.params());
        assert_eq!(pa.len(), pb.len());
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(x.name, y.name);
            let (vx, vy) = (x.tensor.values(), y.tensor.values());
            assert!(vx.iter().zip(&vy).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        // A different seed must differ somewhere.
        let c = LiftingModel::build(cfg, &g, 43).unwrap();
        assert_ne!(a.params()[0].tensor.values(), c.params()[0].tensor.values());
    }

    #[test]
    fn forward_shape_and_eval_purity() {
        let g = build_hand_skeleton();
        for preset in ["table1_a", "table1_c", "table1_d", "table1_e"] {
            let cfg = ModelConfig::preset(preset).unwrap().scaled(16, 2);
            let model = LiftingModel::build(cfg, &g, 1).unwrap();
            let mut r = rng::stream(5, "x");
            let one: Vec<f64> = (0..42).map(|_| r.gen_range(-1.0..1.0)).collect();
            let y1 = model.predict(&one, 1).unwrap();
            assert_eq!(y1.len(), 21 * 3);
            // Duplicate the sample in a batch: identical rows out.
            let two: Vec<f64> = one.iter().chain(one.iter()).copied().collect();
            let y2 = model.predict(&two, 2).unwrap();
            assert_eq!(&y2[..63], &y1[..]);
            assert_eq!(&y2[63..], &y1[..]);
        }
    }

    #[test]
    fn parameter_counts_match_hand_enumeration() {
        // D=2, L=1, heads=1, graph-distance PE over the 21-joint hand.
        let g = build_hand_skeleton();
        let cfg = ModelConfig {
            spatial: SpatialKind::Attention,
            pe: PeKind::GraphDistance,
            width: 2,
            depth: 1,
            heads: 1,
            dropout: 0.0,
        };
        let m = LiftingModel::build(cfg, &g, 0).unwrap();
        // embed: w_e 2*2 + identity 21*2 + pe 5*2 + ln 2*2          = 60
        // layer: 4 projections 2*2 + ln1 4 + ln2 4 + ffn 2*(2*8)    = 56
        // head:  ln 4 + w_r 2*1 + w_o 1*3                           = 9
        assert_eq!(m.count_parameters(), 60 + 56 + 9);

        let gcn = LiftingModel::build(
            ModelConfig {
                spatial: SpatialKind::Gcn1Hop,
                ..cfg
            },
            &g,
            0,
        )
        .unwrap();
        // layer: w 2*2 + ln1 4 + ln2 4 + ffn 32 = 44
        assert_eq!(gcn.count_parameters(), 60 + 44 + 9);
    }

    #[test]
    fn full_size_parameter_counts_track_the_ablation_table() {
        let g = build_hand_skeleton();
        let count = |name: &str| {
            LiftingModel::build(ModelConfig::preset(name).unwrap(), &g, 0)
                .unwrap()
                .count_parameters() as f64
        };
        let a = count("table1_a");
        let b = count("table1_b");
        let e = count("table1_e");
        assert!((a - 2.4e6).abs() / 2.4e6 < 0.05, "table1_a = {a}");
        assert!((b - 3.2e6).abs() / 3.2e6 < 0.05, "table1_b = {b}");
        assert!((e - 3.2e6).abs() / 3.2e6 < 0.05, "table1_e = {e}");
        // The widened 1-hop GCN matches attention within 5%.
        assert!((b - e).abs() / e < 0.05);
    }

    #[test]
    fn pe_variants_shape_the_positional_table() {
        let g = build_hand_skeleton();
        let table_shape = |pe: PeKind| {
            let m = LiftingModel::build(mini(SpatialKind::Attention, pe), &g, 0).unwrap();
            m.params()
                .iter()
                .find(|p| p.name == "embed.pe")
                .map(|p| p.tensor.shape())
        };
        assert_eq!(table_shape(PeKind::None), None);
        assert_eq!(table_shape(PeKind::GraphDistance), Some(vec![5, 8]));
        assert_eq!(table_shape(PeKind::Learnable), Some(vec![21, 8]));
    }

    #[test]
    fn all_presets_build_forward_backward() {
        let g = build_hand_skeleton();
        let mut r = rng::stream(9, "x");
        let x: Vec<f64> = (0..2 * 42).map(|_| r.gen_range(-1.0..1.0)).collect();
        for preset in ModelConfig::preset_names() {
            let cfg = ModelConfig::preset(preset).unwrap().scaled(16, 2);
            let model = LiftingModel::build(cfg, &g, 3).unwrap();
            let tape = Tape::new();
            let mut rr = rng::stream(4, "fwd");
            let mut ctx = ForwardCtx {
                tape: &tape,
                training: true,
                dropout: cfg.dropout,
                rng: &mut rr,
            };
            let xt = Tensor::new(&[2, 21, 2], x.clone()).unwrap();
            let (y, _) = model.forward(&mut ctx, &xt, false).unwrap();
            let loss = tape.sum_all(&tape.abs(&y));
            tape.backward(&loss).unwrap();
            for p in model.params() {
                assert!(p.tensor.grad().is_some(), "{preset}: {} missing grad", p.name);
            }
        }
    }

    #[test]
    fn miniature_model_gradients_match_finite_differences() {
        // One variant here; the acceptance suite covers all five.
        let g = build_hand_skeleton();
        let model =
            LiftingModel::build(mini(SpatialKind::Attention, PeKind::GraphDistance), &g, 7)
                .unwrap();
        let mut r = rng::stream(8, "x");
        let x: Vec<f64> = (0..42).map(|_| r.gen_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..63).map(|_| r.gen_range(-20.0..20.0)).collect();

        let loss_of = |tape: &Tape| {
            let mut rr = rng::stream(0, "fwd");
            let mut ctx = ForwardCtx {
                tape,
                training: false,
                dropout: 0.0,
                rng: &mut rr,
            };
            let xt = Tensor::new(&[1, 21, 2], x.clone()).unwrap();
            let (y, _) = model.forward(&mut ctx, &xt, false).unwrap();
            let t = Tensor::new(&[1, 21, 3], target.clone()).unwrap();
            tape.l1_to(&y, &t, 21.0).unwrap()
        };

        let tape = Tape::new();
        let loss = loss_of(&tape);
        tape.backward(&loss).unwrap();

        for p in model.params() {
            let at = p.tensor.values();
            let analytic = p.tensor.grad().unwrap();
            let err = gradcheck::check(
                |v| {
                    p.tensor.set_values(v);
                    let t = Tape::new();
                    let out = loss_of(&t).item();
                    p.tensor.set_values(&at);
                    out
                },
                &at,
                &analytic,
                1e-6,
            );
            assert!(err < 1e-4, "{}: rel err {err}", p.name);
        }
    }
}
