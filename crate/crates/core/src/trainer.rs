//! The training recipe: L1 loss on wrist-relative joints, AdamW with
//! decoupled weight decay, cosine annealing to zero, global-norm gradient
//! clipping, and flip/scale augmentation. One call to [`train`] is one
//! seeded run; the multi-seed protocol lives in the experiment harness.

use crate::autodiff::{Tape, Tensor, TensorError};
use crate::data::PoseSample;
use crate::metrics;
use crate::model::{LiftingModel, ModelConfig};
use crate::nn::{self, ForwardCtx, Param};
use crate::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid train config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] nn::io::ParamFileError),
    #[error("checkpoint {0}: {1}")]
    CheckpointFormat(String, String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub flip_prob: f64,
    pub scale_range: (f64, f64),
    /// Master switch for flip/scale augmentation (off for overfit probes).
    pub augment: bool,
    /// Seeds for the multi-run protocol; single runs use one of them.
    pub seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 0.01,
            epochs: 100,
            clip_norm: 1.0,
            batch_size: 256,
            flip_prob: 0.5,
            scale_range: (0.9, 1.1),
            augment: true,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::BadConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch size must be >= 1".into()));
        }
        if self.scale_range.0 >= self.scale_range.1 {
            return Err(TrainError::BadConfig(format!(
                "scale range low {} must be below high {}",
                self.scale_range.0, self.scale_range.1
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(TrainError::BadConfig(format!(
                "flip probability {} outside [0, 1]",
                self.flip_prob
            )));
        }
        Ok(())
    }
}

/// `L = mean over batch of (1/J) sum_j |pred_j - target_j|_1`.
pub fn l1_loss(tape: &Tape, pred: &Tensor, target: &Tensor) -> Result<Tensor, TensorError> {
    let shape = pred.shape();
    if shape != target.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "l1_loss",
            lhs: shape,
            rhs: target.shape(),
        });
    }
    let (batch, joints) = (shape[0], shape[1]);
    tape.l1_to(pred, target, (batch * joints) as f64)
}

/// Cosine annealing from `lr` at epoch 0 to exactly 0 at the last epoch:
/// `0.5 lr (1 + cos(pi epoch / (epochs - 1)))`.
pub fn cosine_lr(epoch: usize, cfg: &TrainConfig) -> f64 {
    debug_assert!(epoch < cfg.epochs);
    if cfg.epochs == 1 {
        return cfg.lr;
    }
    let t = epoch as f64 / (cfg.epochs - 1) as f64;
    0.5 * cfg.lr * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`;
/// returns the pre-clip norm.
pub fn clip_gradients(params: &[Param], max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for p in params {
        if let Some(g) = p.tensor.grad() {
            sq += g.iter().map(|v| v * v).sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for p in params {
            p.tensor.update_grad(|g| g.iter_mut().for_each(|v| *v *= scale));
        }
    }
    norm
}

/// AdamW moments, aligned index-for-index with a parameter list.
pub struct AdamWState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamWState {
    pub fn new(params: &[Param]) -> Self {
        AdamWState {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
        }
    }

    /// One decoupled-weight-decay Adam step from the gradients currently on
    /// the parameters. Decay applies only to params flagged for it.
    pub fn step(&mut self, params: &[Param], lr_t: f64, weight_decay: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, p) in params.iter().enumerate() {
            let Some(grad) = p.tensor.grad() else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let decay = if p.decay { weight_decay } else { 0.0 };
            p.tensor.update_values(|theta| {
                for k in 0..theta.len() {
                    let g = grad[k];
                    m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                    v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                    let mhat = m[k] / bc1;
                    let vhat = v[k] / bc2;
                    theta[k] -= lr_t * decay * theta[k];
                    theta[k] -= lr_t * mhat / (vhat.sqrt() + self.epsilon);
                }
            });
        }
    }

    pub fn moments(&self, index: usize) -> (&[f64], &[f64]) {
        (&self.m[index], &self.v[index])
    }

    pub fn restore_moments(&mut self, index: usize, m: Vec<f64>, v: Vec<f64>) {
        self.m[index] = m;
        self.v[index] = v;
    }
}

/// Flip (probability `flip_prob`: negate x of both the 2D input and the 3D
/// target) and scale (one shared factor on input and target). The flip is
/// an involution and an isometry; a unit scale draw is the identity.
pub fn augment(sample: &PoseSample, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> PoseSample {
    let mut x2d = sample.x2d.clone();
    let mut y3d = sample.y3d.clone();
    if rng.gen::<f64>() < cfg.flip_prob {
        for p in x2d.chunks_mut(2) {
            p[0] = -p[0];
        }
        for p in y3d.chunks_mut(3) {
            p[0] = -p[0];
        }
    }
    let s = rng.gen_range(cfg.scale_range.0..=cfg.scale_range.1);
    for v in x2d.iter_mut().chain(y3d.iter_mut()) {
        *v *= s;
    }
    PoseSample {
        x2d,
        y3d,
        meta: sample.meta.clone(),
    }
}

/// One per-epoch log record; evaluation columns are present when an
/// evaluation set was supplied.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub eval_mpjpe: Option<f64>,
    pub eval_auc: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    /// CSV with header `epoch,lr,train_loss,eval_mpjpe,eval_auc`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,train_loss,eval_mpjpe,eval_auc\n");
        for e in &self.epochs {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch,
                e.lr,
                e.train_loss,
                opt(e.eval_mpjpe),
                opt(e.eval_auc)
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// Trains `model` in place from epoch 0 with fresh optimizer state.
pub fn train(
    model: &LiftingModel,
    train_set: &[PoseSample],
    eval_set: Option<&[PoseSample]>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainLog, TrainError> {
    let params = model.params();
    let mut opt = AdamWState::new(&params);
    train_from(model, &mut opt, 0, train_set, eval_set, cfg, seed)
}

/// Resumable core loop: runs epochs `start_epoch..cfg.epochs` against the
/// supplied optimizer state. Deterministic in `(cfg, seed)`: augmentation,
/// shuffling, and dropout each draw from their own substream, keyed by
/// epoch so resumed runs replay the identical schedule.
pub fn train_from(
    model: &LiftingModel,
    opt: &mut AdamWState,
    start_epoch: usize,
    train_set: &[PoseSample],
    eval_set: Option<&[PoseSample]>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainLog, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let params = model.params();
    let joints = model.joints();
    let mut log = TrainLog::default();

    for epoch in start_epoch..cfg.epochs {
        let lr_t = cosine_lr(epoch, cfg);
        let mut rng_aug = rng::indexed_stream(seed, "augment", epoch as u64);
        let mut rng_drop = rng::indexed_stream(seed, "dropout", epoch as u64);
        let mut rng_shuffle = rng::indexed_stream(seed, "shuffle", epoch as u64);

        let mut order: Vec<usize> = (0..train_set.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng_shuffle.gen_range(0..=i));
        }

        let mut loss_sum = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut x = Vec::with_capacity(batch.len() * joints * 2);
            let mut y = Vec::with_capacity(batch.len() * joints * 3);
            for &i in batch {
                if cfg.augment {
                    let s = augment(&train_set[i], cfg, &mut rng_aug);
                    x.extend_from_slice(&s.x2d);
                    y.extend_from_slice(&s.y3d);
                } else {
                    x.extend_from_slice(&train_set[i].x2d);
                    y.extend_from_slice(&train_set[i].y3d);
                }
            }

            let tape = Tape::new();
            let mut ctx = ForwardCtx {
                tape: &tape,
                training: true,
                dropout: model.config.dropout,
                rng: &mut rng_drop,
            };
            let xt = Tensor::new(&[batch.len(), joints, 2], x)?;
            let yt = Tensor::new(&[batch.len(), joints, 3], y)?;
            let (pred, _) = model.forward(&mut ctx, &xt, false)?;
            let loss = l1_loss(&tape, &pred, &yt)?;
            let loss_val = loss.item();
            if !loss_val.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    step,
                    loss: loss_val,
                });
            }
            for p in &params {
                p.tensor.zero_grad();
            }
            tape.backward(&loss)?;
            clip_gradients(&params, cfg.clip_norm);
            opt.step(&params, lr_t, cfg.weight_decay);
            loss_sum += loss_val * batch.len() as f64;
        }

        let (eval_mpjpe, eval_auc) = match eval_set {
            Some(set) => {
                let report = metrics::evaluate(model, set)?;
                (Some(report.mpjpe_mm), Some(report.auc))
            }
            None => (None, None),
        };
        log.epochs.push(EpochLog {
            epoch,
            lr: lr_t,
            train_loss: loss_sum / train_set.len() as f64,
            eval_mpjpe,
            eval_auc,
        });
    }
    Ok(log)
}

/// Checkpoint layout: magic `HLCKPT01`, u32 JSON length, a JSON header
/// `{config, epoch}`, then the named-array section holding parameters and
/// (for resumable checkpoints) `opt.m.*` / `opt.v.*` moments and an
/// `opt.step` scalar.
pub mod checkpoint {
    use super::*;
    use crate::nn::io::{self, NamedArray};
    use crate::skeleton::SkeletonGraph;
    use std::fs::File;
    use std::io::{BufReader, BufWriter, Read, Write};

    const MAGIC: &[u8; 8] = b"HLCKPT01";

    #[derive(Serialize, Deserialize)]
    struct Header {
        config: ModelConfig,
        epoch: usize,
    }

    pub fn save(
        path: &Path,
        model: &LiftingModel,
        epoch: usize,
        opt: Option<&AdamWState>,
    ) -> Result<(), TrainError> {
        let params = model.params();
        let mut arrays = io::params_to_arrays(&params);
        if let Some(state) = opt {
            for (i, p) in params.iter().enumerate() {
                let (m, v) = state.moments(i);
                arrays.push(NamedArray {
                    name: format!("opt.m.{}", p.name),
                    shape: p.tensor.shape(),
                    values: m.to_vec(),
                });
                arrays.push(NamedArray {
                    name: format!("opt.v.{}", p.name),
                    shape: p.tensor.shape(),
                    values: v.to_vec(),
                });
            }
            arrays.push(NamedArray {
                name: "opt.step".into(),
                shape: vec![1],
                values: vec![state.step as f64],
            });
        }
        let header = serde_json::to_vec(&Header {
            config: model.config,
            epoch,
        })
        .expect("header serializes");

        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        io::write_named_arrays(&mut w, &arrays)?;
        Ok(())
    }

    /// Rebuilds the model (and optimizer state, when stored) from a file.
    pub fn load(
        path: &Path,
        skeleton: &SkeletonGraph,
    ) -> Result<(LiftingModel, usize, Option<AdamWState>), TrainError> {
        let fmt_err = |m: &str| {
            TrainError::CheckpointFormat(path.display().to_string(), m.to_string())
        };
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(fmt_err("bad magic"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let mut header = vec![0u8; u32::from_le_bytes(b4) as usize];
        r.read_exact(&mut header)?;
        let header: Header =
            serde_json::from_slice(&header).map_err(|e| fmt_err(&e.to_string()))?;
        let arrays = io::read_named_arrays(&mut r)?;

        let model = LiftingModel::build(header.config, skeleton, 0)
            .map_err(|e| fmt_err(&e.to_string()))?;
        let params = model.params();
        io::apply_arrays(&params, &arrays)?;

        let opt = if arrays.iter().any(|a| a.name == "opt.step") {
            let mut state = AdamWState::new(&params);
            state.step = arrays
                .iter()
                .find(|a| a.name == "opt.step")
                .map(|a| a.values[0] as u64)
                .unwrap_or(0);
            for (i, p) in params.iter().enumerate() {
                let find = |prefix: &str| {
                    arrays
                        .iter()
                        .find(|a| a.name == format!("{prefix}.{}", p.name))
                        .map(|a| a.values.clone())
                        .ok_or_else(|| fmt_err(&format!("missing {prefix}.{}", p.name)))
                };
                state.restore_moments(i, find("opt.m")?, find("opt.v")?);
            }
            Some(state)
        } else {
            None
        };
        Ok((model, header.epoch, opt))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::build_hand_skeleton;
    use crate::data::synthetic::{generate, SyntheticHandConfig};
    use crate::model::{PeKind, SpatialKind};

    fn tiny_model(seed: u64) -> LiftingModel {
        let cfg = ModelConfig {
            spatial: SpatialKind::Attention,
            pe: PeKind::GraphDistance,
            width: 8,
            depth: 1,
            heads: 2,
            dropout: 0.0,
        };
        LiftingModel::build(cfg, &build_hand_skeleton(), seed).unwrap()
    }

    #[test]
    fn l1_loss_values() {
        let tape = Tape::new();
        let a = Tensor::new(&[1, 21, 3], vec![1.0; 63]).unwrap();
        assert_eq!(l1_loss(&tape, &a, &a).unwrap().item(), 0.0);

        // One joint off by (1, 2, 3) mm.
        let mut off = vec![1.0; 63];
        off[9] += 1.0;
        off[10] += 2.0;
        off[11] += 3.0;
        let b = Tensor::new(&[1, 21, 3], off).unwrap();
        let l = l1_loss(&tape, &b, &a).unwrap().item();
        assert!((l - 6.0 / 21.0).abs() < 1e-15);

        let c = Tensor::new(&[1, 20, 3], vec![0.0; 60]).unwrap();
        assert!(l1_loss(&tape, &a, &c).is_err());
    }

    #[test]
    fn l1_gradient_is_scaled_sign() {
        let tape = Tape::new();
        let pred = Tensor::param(&[2, 21, 3], (0..126).map(|i| i as f64 * 0.1 - 6.0).collect())
            .unwrap();
        let target = Tensor::new(&[2, 21, 3], vec![0.0; 126]).unwrap();
        let loss = l1_loss(&tape, &pred, &target).unwrap();
        tape.backward(&loss).unwrap();
        let g = pred.grad().unwrap();
        let pv = pred.values();
        for (gi, pi) in g.iter().zip(&pv) {
            let expect = pi.signum() / (2.0 * 21.0);
            if *pi != 0.0 {
                assert!((gi - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn cosine_schedule_endpoints_and_midpoint() {
        let cfg = TrainConfig {
            epochs: 101,
            ..Default::default()
        };
        assert_eq!(cosine_lr(0, &cfg), 1e-3);
        assert!((cosine_lr(100, &cfg) - 0.0).abs() < 1e-19);
        assert!((cosine_lr(50, &cfg) - 5e-4).abs() < 1e-12);
        // Single-epoch schedule degenerates to the base rate.
        let one = TrainConfig {
            epochs: 1,
            ..Default::default()
        };
        assert_eq!(cosine_lr(0, &one), 1e-3);
    }

    #[test]
    fn clip_rescales_to_unit_norm() {
        let p = Param {
            name: "w".into(),
            tensor: Tensor::param(&[2], vec![0.0, 0.0]).unwrap(),
            decay: true,
        };
        p.tensor.zero_grad();
        p.tensor.update_grad(|g| {
            g[0] = 3.0;
            g[1] = 4.0;
        });
        let norm = clip_gradients(std::slice::from_ref(&p), 1.0);
        assert!((norm - 5.0).abs() < 1e-15);
        let g = p.tensor.grad().unwrap();
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);

        // Below the threshold nothing changes.
        p.tensor.update_grad(|g| {
            g[0] = 0.3;
            g[1] = 0.4;
        });
        clip_gradients(std::slice::from_ref(&p), 1.0);
        assert_eq!(p.tensor.grad().unwrap(), vec![0.3, 0.4]);
    }

    #[test]
    fn clipped_norm_never_exceeds_bound() {
        let mut r = rng::stream(3, "clip");
        for _ in 0..50 {
            let p = Param {
                name: "w".into(),
                tensor: Tensor::param(&[16], vec![0.0; 16]).unwrap(),
                decay: true,
            };
            p.tensor.zero_grad();
            p.tensor.update_grad(|g| {
                for v in g.iter_mut() {
                    *v = r.gen_range(-3.0..3.0);
                }
            });
            clip_gradients(std::slice::from_ref(&p), 1.0);
            let norm: f64 = p.tensor.grad().unwrap().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn adamw_single_step_closed_form() {
        // One step with g = 1, theta = 0, wd = 0 moves by
        // lr * 1 / (1 + eps) (bias correction cancels exactly).
        let p = Param {
            name: "w".into(),
            tensor: Tensor::param(&[1], vec![0.0]).unwrap(),
            decay: true,
        };
        p.tensor.zero_grad();
        p.tensor.update_grad(|g| g[0] = 1.0);
        let mut opt = AdamWState::new(std::slice::from_ref(&p));
        opt.step(std::slice::from_ref(&p), 1e-3, 0.0);
        let expect = -1e-3 / (1.0 + 1e-8);
        assert!((p.tensor.values()[0] - expect).abs() < 1e-18);
    }

    #[test]
    fn adamw_pure_decay_shrinks_by_factor() {
        let p = Param {
            name: "w".into(),
            tensor: Tensor::param(&[1], vec![2.0]).unwrap(),
            decay: true,
        };
        p.tensor.zero_grad(); // g = 0
        let mut opt = AdamWState::new(std::slice::from_ref(&p));
        opt.step(std::slice::from_ref(&p), 1e-3, 0.01);
        assert!((p.tensor.values()[0] - 2.0 * (1.0 - 1e-5)).abs() < 1e-15);

        // Decay-exempt parameters stay put.
        let q = Param {
            name: "ln".into(),
            tensor: Tensor::param(&[1], vec![2.0]).unwrap(),
            decay: false,
        };
        q.tensor.zero_grad();
        let mut opt = AdamWState::new(std::slice::from_ref(&q));
        opt.step(std::slice::from_ref(&q), 1e-3, 0.01);
        assert_eq!(q.tensor.values()[0], 2.0);
    }

    #[test]
    fn adamw_identical_params_get_identical_updates() {
        let make = || {
            let p = Param {
                name: "w".into(),
                tensor: Tensor::param(&[3], vec![0.5, -0.25, 1.0]).unwrap(),
                decay: true,
            };
            p.tensor.zero_grad();
            p.tensor.update_grad(|g| g.copy_from_slice(&[0.1, -0.7, 0.3]));
            p
        };
        let (a, b) = (make(), make());
        let mut opt_a = AdamWState::new(std::slice::from_ref(&a));
        let mut opt_b = AdamWState::new(std::slice::from_ref(&b));
        opt_a.step(std::slice::from_ref(&a), 1e-3, 0.01);
        opt_b.step(std::slice::from_ref(&b), 1e-3, 0.01);
        assert_eq!(a.tensor.values(), b.tensor.values());
    }

    #[test]
    fn zero_lr_step_only_decays_and_zero_both_is_identity() {
        let model = tiny_model(1);
        let params = model.params();
        let before: Vec<Vec<f64>> = params.iter().map(|p| p.tensor.values()).collect();
        for p in &params {
            p.tensor.zero_grad();
            p.tensor.update_grad(|g| g.iter_mut().for_each(|v| *v = 0.25));
        }
        let mut opt = AdamWState::new(&params);
        opt.step(&params, 0.0, 0.01);
        for (p, b) in params.iter().zip(&before) {
            assert_eq!(&p.tensor.values(), b, "{} moved at lr 0", p.name);
        }
    }

    #[test]
    fn flip_is_an_involution_and_isometry() {
        let samples = generate(&SyntheticHandConfig::new(1000, 21)).unwrap();
        let cfg = TrainConfig {
            flip_prob: 1.0,
            ..Default::default()
        };
        let unit = TrainConfig {
            scale_range: (1.0, 1.0 + f64::EPSILON),
            flip_prob: 1.0,
            ..cfg
        };
        let mut r = rng::stream(0, "aug");
        for s in &samples {
            let once = augment(s, &unit, &mut r);
            let twice = augment(&once, &unit, &mut r);
            for (a, b) in twice.x2d.iter().zip(&s.x2d) {
                assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
            }
            for (a, b) in twice.y3d.iter().zip(&s.y3d) {
                assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
            }
            // Reflection preserves per-joint norms and pairwise distances.
            for j in 0..21 {
                let n0: f64 = (0..3).map(|k| s.y3d[j * 3 + k].powi(2)).sum();
                let n1: f64 = (0..3).map(|k| once.y3d[j * 3 + k].powi(2)).sum();
                assert!((n0 - n1).abs() < 1e-9 * n0.max(1.0));
            }
        }
    }

    #[test]
    fn unit_scale_is_identity() {
        let s = generate(&SyntheticHandConfig::new(1, 3)).unwrap().remove(0);
        let cfg = TrainConfig {
            flip_prob: 0.0,
            scale_range: (1.0, 1.0 + f64::EPSILON),
            ..Default::default()
        };
        let mut r = rng::stream(0, "aug");
        let out = augment(&s, &cfg, &mut r);
        for (a, b) in out.x2d.iter().zip(&s.x2d) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let data = generate(&SyntheticHandConfig::new(32, 5)).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            ..Default::default()
        };
        let run = |seed| {
            let model = tiny_model(seed);
            let log = train(&model, &data, Some(&data), &cfg, seed).unwrap();
            (
                log.to_csv(),
                model.params()[0].tensor.values(),
            )
        };
        let (log_a, w_a) = run(7);
        let (log_b, w_b) = run(7);
        assert_eq!(log_a, log_b);
        assert_eq!(
            w_a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            w_b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let (log_c, _) = run(8);
        assert_ne!(log_a, log_c);
    }

    #[test]
    fn training_loss_is_finite_and_logged_per_epoch() {
        let data = generate(&SyntheticHandConfig::new(24, 6)).unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 8,
            ..Default::default()
        };
        let model = tiny_model(2);
        let log = train(&model, &data, Some(&data), &cfg, 0).unwrap();
        assert_eq!(log.epochs.len(), 4);
        for e in &log.epochs {
            assert!(e.train_loss.is_finite());
            assert!(e.eval_mpjpe.unwrap().is_finite());
            let auc = e.eval_auc.unwrap();
            assert!((0.0..=1.0).contains(&auc));
        }
        assert_eq!(log.epochs[0].lr, 1e-3);
        assert!(log.epochs[3].lr < 1e-9);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let model = tiny_model(3);
        assert!(matches!(
            train(&model, &[], None, &TrainConfig::default(), 0),
            Err(TrainError::EmptyDataset)
        ));
    }

    #[test]
    fn checkpoint_round_trip_restores_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let g = build_hand_skeleton();
        let data = generate(&SyntheticHandConfig::new(16, 8)).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            ..Default::default()
        };
        let model = tiny_model(4);
        let params = model.params();
        let mut opt = AdamWState::new(&params);
        train_from(&model, &mut opt, 0, &data, None, &cfg, 0).unwrap();
        checkpoint::save(&path, &model, 2, Some(&opt)).unwrap();

        let (restored, epoch, opt2) = checkpoint::load(&path, &g).unwrap();
        assert_eq!(epoch, 2);
        let opt2 = opt2.unwrap();
        assert_eq!(opt2.step, opt.step);
        for (a, b) in model.params().iter().zip(restored.params().iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor.values(), b.tensor.values());
        }
        // Continued training from the restored state matches continuing the
        // original run, epoch counter included.
        let cfg4 = TrainConfig {
            epochs: 4,
            ..cfg.clone()
        };
        let mut opt_restored = opt2;
        let log_resumed =
            train_from(&restored, &mut opt_restored, 2, &data, None, &cfg4, 0).unwrap();
        let log_direct = train_from(&model, &mut opt, 2, &data, None, &cfg4, 0).unwrap();
        assert_eq!(log_resumed.epochs[0].epoch, 2);
        assert_eq!(log_resumed.to_csv(), log_direct.to_csv());
    }
}
