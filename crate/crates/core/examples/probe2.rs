// Temporary overfit hyperparameter sweep; not part of the deliverable.
use handlift::data::synthetic::{generate, SyntheticHandConfig};
use handlift::model::{LiftingModel, ModelConfig, PeKind, SpatialKind};
use handlift::trainer::{train, TrainConfig};
use handlift::{build_hand_skeleton, metrics};
use std::time::Instant;

fn main() {
    let g = build_hand_skeleton();
    let mut scfg = SyntheticHandConfig::new(64, 42);
    let easy: bool = std::env::args().nth(1).map(|s| s == "easy").unwrap_or(false);
    if easy {
        scfg.rotation = (0.25, 0.25, 0.4);
        scfg.depth = (430.0, 470.0);
        scfg.lateral = 20.0;
    }
    let data = generate(&scfg).unwrap();
    let cfg = ModelConfig {
        spatial: SpatialKind::Attention,
        pe: PeKind::GraphDistance,
        width: 64,
        depth: 2,
        heads: 8,
        dropout: 0.0,
    };
    for (lr, wd, batch, epochs) in [
        (1.4e-2, 0.01, 8, 200usize),
        (1.6e-2, 0.01, 8, 200),
        (2e-2, 0.01, 8, 200),
        (2e-2, 0.01, 12, 200),
        (2.4e-2, 0.01, 16, 200),
        (3e-2, 0.01, 16, 200),
    ] {
        let model = LiftingModel::build(cfg, &g, 0).unwrap();
        let tc = TrainConfig {
            lr,
            weight_decay: wd,
            epochs,
            batch_size: batch,
            augment: false,
            ..Default::default()
        };
        let t0 = Instant::now();
        let log = train(&model, &data, None, &tc, 0).unwrap();
        let report = metrics::evaluate(&model, &data).unwrap();
        let wo = model
            .params()
            .into_iter()
            .find(|p| p.name == "head.w_o")
            .unwrap();
        let wo_max = wo.tensor.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        println!(
            "lr {:.1e} wd {:>4} batch {:>2} epochs {}: train MPJPE {:8.4} mm  (loss {:8.4}, |w_o|max {:5.2}, {:.0}s)",
            lr, wd, batch, epochs,
            report.mpjpe_mm,
            log.epochs.last().unwrap().train_loss,
            wo_max,
            t0.elapsed().as_secs_f64()
        );
    }
}
