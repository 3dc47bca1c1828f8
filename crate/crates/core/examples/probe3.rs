
// Temporary residual-error diagnostic; not part of the deliverable.
use handlift::data::synthetic::{generate, SyntheticHandConfig};
use handlift::model::{LiftingModel, ModelConfig, PeKind, SpatialKind};
use handlift::trainer::{train, TrainConfig};
use handlift::{build_hand_skeleton, metrics};

fn main() {
    let g = build_hand_skeleton();
    let mut scfg = SyntheticHandConfig::new(64, 42);
    scfg.rotation = (0.25, 0.25, 0.4);
    scfg.depth = (430.0, 470.0);
    scfg.lateral = 20.0;
    let data = generate(&scfg).unwrap();
    let cfg = ModelConfig {
        spatial: SpatialKind::Attention,
        pe: PeKind::GraphDistance,
        width: 64,
        depth: 2,
        heads: 8,
        dropout: 0.0,
    };
    let model = LiftingModel::build(cfg, &g, 0).unwrap();
    let tc = TrainConfig { lr: 1e-2, epochs: 200, batch_size: 8, augment: false, ..Default::default() };
    train(&model, &data, None, &tc, 0).unwrap();
    let report = metrics::evaluate(&model, &data).unwrap();
    println!("MPJPE {:.4}", report.mpjpe_mm);
    println!("per-joint: {:?}", report.per_joint_mm.iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>());
    // per-sample errors
    let pred = metrics::predictions(&model, &data).unwrap();
    let gt: Vec<f64> = data.iter().flat_map(|s| s.y3d.iter().copied()).collect();
    let mut per_sample: Vec<(usize, f64)> = (0..64)
        .map(|s| {
            let e: f64 = (0..21)
                .map(|j| {
                    let o = (s * 21 + j) * 3;
                    ((pred[o] - gt[o]).powi(2) + (pred[o + 1] - gt[o + 1]).powi(2) + (pred[o + 2] - gt[o + 2]).powi(2)).sqrt()
                })
                .sum::<f64>() / 21.0;
            (s, e)
        })
        .collect();
    per_sample.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("worst samples: {:?}", &per_sample[..8].iter().map(|(s, e)| (*s, (e * 10.0).round() / 10.0)).collect::<Vec<_>>());
    println!("median err: {:.3}", per_sample[32].1);
    // amplitude ratio |pred| / |gt|
    let (mut np, mut ng) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(&gt) { np += p * p; ng += t * t; }
    println!("amplitude ratio: {:.4}", (np / ng).sqrt());
}
