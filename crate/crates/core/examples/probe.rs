// Temporary training-dynamics probe; not part of the deliverable.
use handlift::data::synthetic::{generate, SyntheticHandConfig};
use handlift::model::{LiftingModel, ModelConfig, PeKind, SpatialKind};
use handlift::trainer::{train, TrainConfig};
use handlift::{build_hand_skeleton, metrics};
use std::time::Instant;

fn main() {
    let g = build_hand_skeleton();
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("overfit");

    if mode == "overfit" {
        let data = generate(&SyntheticHandConfig::new(64, 42)).unwrap();
        let cfg = ModelConfig {
            spatial: SpatialKind::Attention,
            pe: PeKind::GraphDistance,
            width: 64,
            depth: 2,
            heads: 8,
            dropout: 0.0,
        };
        let model = LiftingModel::build(cfg, &g, 0).unwrap();
        let tc = TrainConfig {
            epochs: 200,
            batch_size: 8,
            augment: false,
            ..Default::default()
        };
        let t0 = Instant::now();
        let log = train(&model, &data, None, &tc, 0).unwrap();
        let report = metrics::evaluate(&model, &data).unwrap();
        println!(
            "overfit: final train loss {:.4}, train MPJPE {:.4} mm, {:.1}s",
            log.epochs.last().unwrap().train_loss,
            report.mpjpe_mm,
            t0.elapsed().as_secs_f64()
        );
        for e in log.epochs.iter().step_by(25) {
            println!("  epoch {:3}  loss {:.4}", e.epoch, e.train_loss);
        }
    } else {
        // mini directional probe
        let n_train: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3000);
        let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(40);
        let train_set = generate(&SyntheticHandConfig::new(n_train, 100)).unwrap();
        let test_set = generate(&SyntheticHandConfig::new(600, 200)).unwrap();
        for spatial in [SpatialKind::Attention, SpatialKind::GcnMultihop, SpatialKind::Gcn1Hop] {
            let cfg = ModelConfig {
                spatial,
                pe: PeKind::GraphDistance,
                width: 64,
                depth: 2,
                heads: 8,
                dropout: 0.1,
            };
            let model = LiftingModel::build(cfg, &g, 0).unwrap();
            let tc = TrainConfig {
                epochs,
                batch_size: 128,
                ..Default::default()
            };
            let t0 = Instant::now();
            let log = train(&model, &train_set, None, &tc, 0).unwrap();
            let report = metrics::evaluate(&model, &test_set).unwrap();
            println!(
                "{:>14}: test MPJPE {:.3} mm, AUC {:.3}, final loss {:.3}, {:.1}s",
                format!("{spatial:?}"),
                report.mpjpe_mm,
                report.auc,
                log.epochs.last().unwrap().train_loss,
                t0.elapsed().as_secs_f64()
            );
        }
    }
}
