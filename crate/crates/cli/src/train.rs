use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use oocs_core::builder::mnist_base;
use oocs_core::data::{batches, BatchPlan, Dataset};
use oocs_core::nn::{
    adam_step, backward, forward, init_params, param_count, write_checkpoint, AdamHyper, AdamState, Graph, Mode,
    NetworkSpec, Params, Tensor,
};
use oocs_core::{OocsError, Result};

use crate::config::{sidecar, TrainConfig, VALIDATION_SEED};
use crate::eval::{argmax, evaluate};
use crate::{csv_err, mix_seed};

/// One row of the training history CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub wall_seconds: f64,
}

pub const HISTORY_HEADER: [&str; 6] = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "wall_seconds"];

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub spec: NetworkSpec,
    pub param_count: usize,
    pub history: Vec<EpochRecord>,
    pub checkpoint: PathBuf,
    pub spec_path: PathBuf,
    pub history_path: PathBuf,
    pub params: Params<f32>,
}

impl TrainOutcome {
    pub fn final_record(&self) -> &EpochRecord {
        self.history.last().expect("at least one epoch")
    }
}

pub fn write_history(path: &Path, rows: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    if rows.is_empty() {
        w.write_record(HISTORY_HEADER).map_err(|e| csv_err(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| OocsError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| OocsError::Io {
            path: dir.to_path_buf(),
            source: e,
        }),
        _ => Ok(()),
    }
}

/// Trains the configured network on `train_full` (the validation samples are
/// split off here) and writes the checkpoint, its spec sidecar
/// (`<checkpoint>.net`) and the history CSV.
///
/// Progress lines go to `log`. Everything except `wall_seconds` is a pure
/// function of the config and the data.
pub fn cmd_train(cfg: &TrainConfig, train_full: &Dataset, log: &mut dyn Write) -> Result<TrainOutcome> {
    let spec = cfg.spec()?;
    let graph = Graph::new(spec.clone())?;
    let count = param_count(&spec)?;
    let base_count = param_count(&mnist_base())?;
    if cfg.network.is_oocs() && count != base_count {
        return Err(OocsError::Spec(format!("parameter count {count} differs from base {base_count}")));
    }

    let (train, val) = train_full.split_validation(cfg.validation, VALIDATION_SEED)?;
    let train = match cfg.train_subset {
        Some(n) => train.take(n),
        None => train,
    };
    let _ = writeln!(
        log,
        "network={} params={count} base_params={base_count} train={} val={} epochs={} batch={} lr={} seed={}",
        cfg.network,
        train.len(),
        val.len(),
        cfg.epochs,
        cfg.batch_size,
        cfg.learning_rate,
        cfg.seed
    );

    let mut params: Params<f32> = init_params(&spec, cfg.seed)?;
    let hyper = AdamHyper {
        lr: cfg.learning_rate,
        ..AdamHyper::default()
    };
    let mut adam = AdamState::new(&params, hyper);
    let history_path = cfg.history_path();
    create_parent(&history_path)?;
    create_parent(&cfg.checkpoint)?;

    let start = Instant::now();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step: u64 = 0;
    for epoch in 1..=cfg.epochs {
        let plan = BatchPlan::new(cfg.batch_size, mix_seed(cfg.seed, epoch as u64))?;
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for batch in batches(&train, &plan) {
            let x: Tensor<f32> = Tensor::from_images(&batch.images)?;
            let (logits, cache) = forward(&graph, &params, &x, Mode::Train, mix_seed(cfg.seed ^ 0xD209, step))?;
            let (loss, grads) = backward(&graph, &params, &cache, &batch.labels)?;
            adam_step(&mut params, &grads, &mut adam)?;
            step += 1;
            loss_sum += loss as f64 * batch.labels.len() as f64;
            correct += (0..logits.n)
                .filter(|&i| argmax(logits.row(i)) == batch.labels[i] as usize)
                .count();
            seen += batch.labels.len();
        }
        let (val_acc, val_loss) = if val.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            evaluate(&graph, &params, &val)?
        };
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            val_loss,
            val_acc,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        let _ = writeln!(
            log,
            "epoch {epoch}: train_loss={:.4} train_acc={:.4} val_loss={:.4} val_acc={:.4} ({:.0}s)",
            rec.train_loss, rec.train_acc, rec.val_loss, rec.val_acc, rec.wall_seconds
        );
        history.push(rec);
        write_history(&history_path, &history)?;
    }

    write_checkpoint(&cfg.checkpoint, &spec, &params)?;
    let spec_path = sidecar(&cfg.checkpoint, "net");
    fs::write(&spec_path, spec.to_text()).map_err(|e| OocsError::Io {
        path: spec_path.clone(),
        source: e,
    })?;
    Ok(TrainOutcome {
        spec,
        param_count: count,
        history,
        checkpoint: cfg.checkpoint.clone(),
        spec_path,
        history_path,
        params,
    })
}
