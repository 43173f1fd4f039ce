//! Adversarial training loop, evaluation and run artifacts.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod schedule;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use crate::adversarial::{vtada_step_objective, AdversarialModel};
use crate::data::{self, apply_shift, gen_oriented_bars, make_batches, Domain, DomainDataset};
use crate::error::{Error, Result};

pub use checkpoint::{checkpoint_load, checkpoint_save, Checkpoint, CHECKPOINT_VERSION};
pub use config::{DataConfig, DataSource, TrainConfig};
pub use metrics::{read_metrics_csv, write_metrics_csv, MetricsRecord, METRICS_HEADER};
pub use schedule::{clip_grad_norm, sgd_momentum_step, TrainSchedule};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "final.ckpt";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Completed epochs over total epochs.
    pub progress: f64,
    pub step: usize,
    /// Completed epochs.
    pub epoch: usize,
    pub momentum_buffers: Vec<Vec<f64>>,
    pub rng_seed: u64,
    pub metrics: Vec<MetricsRecord>,
}

impl TrainState {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            progress: 0.0,
            step: 0,
            epoch: 0,
            momentum_buffers: Vec::new(),
            rng_seed,
            metrics: Vec::new(),
        }
    }
}

/// Source training set plus the target set. The target keeps its labels
/// when it has them; they are only ever used for `tgt_acc`.
#[derive(Debug, Clone)]
pub struct RunData {
    pub source: DomainDataset,
    pub target: DomainDataset,
}

fn load_source(src: &DataSource) -> Result<DomainDataset> {
    match src {
        DataSource::Builtin => unreachable!("handled by caller"),
        DataSource::Dir(p) => data::load_image_dir(p),
        DataSource::Manifest(p) => data::load_manifest(p),
    }
}

/// Seed of the builtin target images, distinct from the source draw.
pub fn target_image_seed(data_seed: u64) -> u64 {
    data_seed.wrapping_add(1)
}

/// Builds or loads the datasets named by `config.data`.
pub fn load_run_data(config: &TrainConfig) -> Result<RunData> {
    let d = &config.data;
    let size = config.model.vit.image_h;
    let source = match &d.source {
        DataSource::Builtin => gen_oriented_bars(d.n_per_class, d.classes, size, d.seed)?,
        other => load_source(other)?.with_domain(Domain::Source),
    };
    if !source.is_labeled() {
        return Err(Error::Data(
            "source data must be labeled (class-per-subdirectory tree)".into(),
        ));
    }
    let target = match &d.target {
        DataSource::Builtin => {
            let clean = gen_oriented_bars(d.target_n_per_class, d.classes, size, target_image_seed(d.seed))?;
            apply_shift(&clean, &d.shift, false)?.with_domain(Domain::Target)
        }
        other => load_source(other)?.with_domain(Domain::Target),
    };
    let want = config.model.vit.image_shape();
    for (name, ds) in [("source", &source), ("target", &target)] {
        if ds.is_empty() {
            return Err(Error::Data(format!("{name} dataset is empty")));
        }
        if ds.image_shape() != Some(&want[..]) {
            return Err(Error::Data(format!(
                "{name} images have shape {:?}, model expects {want:?}",
                ds.image_shape().unwrap_or(&[])
            )));
        }
    }
    if source.num_classes != config.model.num_classes {
        return Err(Error::Data(format!(
            "source has {} classes, model.classes = {}",
            source.num_classes, config.model.num_classes
        )));
    }
    if target.is_labeled() && target.num_classes > config.model.num_classes {
        return Err(Error::Data(format!(
            "target has {} classes, model.classes = {}",
            target.num_classes, config.model.num_classes
        )));
    }
    Ok(RunData { source, target })
}

const EVAL_CHUNK: usize = 64;

/// Fraction of argmax-correct predictions on a labeled dataset.
pub fn evaluate(model: &AdversarialModel, ds: &DomainDataset) -> Result<f64> {
    let labels = ds
        .labels
        .as_ref()
        .ok_or_else(|| Error::Data("evaluation needs a labeled dataset".into()))?;
    if ds.is_empty() {
        return Err(Error::Data("evaluation dataset is empty".into()));
    }
    let frozen = model.frozen();
    let mut correct = 0usize;
    for (imgs, labs) in ds.images.chunks(EVAL_CHUNK).zip(labels.chunks(EVAL_CHUNK)) {
        let pred = frozen.predict(imgs)?;
        correct += pred.iter().zip(labs).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: AdversarialModel,
    pub state: TrainState,
}

/// Trains on the datasets named by `config`. With `out_dir`, writes
/// `metrics.csv` as epochs complete and `final.ckpt` at the end.
pub fn train(config: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let run = load_run_data(config)?;
    train_on(config, &run, out_dir)
}

/// As [`train`] with the datasets supplied.
pub fn train_on(config: &TrainConfig, run: &RunData, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let mut model = AdversarialModel::new(config.model.clone())?;
    let mut state = TrainState::new(config.seed);
    let sched = &config.schedule;
    let train_target = run.target.unlabeled_target();

    let mut csv = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(METRICS_FILE);
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(file);
            metrics::write_metrics_header(&mut w).map_err(|e| Error::io(&path, e))?;
            w.flush().map_err(|e| Error::io(&path, e))?;
            Some((w, path))
        }
        None => None,
    };

    for epoch in 0..sched.total_epochs {
        let started = Instant::now();
        let p = sched.progress(epoch);
        let eta = sched.lr_at(p)?;
        let lambda = sched.lambda_at(p)?;
        let batches = make_batches(&run.source, &train_target, config.batch, config.seed, epoch)?;
        let (mut sum_c, mut sum_d, mut sum_acc) = (0.0, 0.0, 0.0);
        for batch in &batches {
            // A non-finite activation trips a guarded op before any loss
            // exists; report it the same way as a non-finite loss.
            let bundle =
                match vtada_step_objective(&model, &batch.src_images, &batch.src_labels, &batch.tgt_images, lambda) {
                    Err(Error::NumericDomain { op, detail }) => {
                        log::error!("{op}: {detail}");
                        None
                    }
                    other => Some(other?),
                };
            let (l_c, l_d) = bundle
                .as_ref()
                .map_or((f64::NAN, f64::NAN), |b| (b.l_c.item(), b.l_d.item()));
            let bundle = match bundle {
                Some(b) if l_c.is_finite() && l_d.is_finite() => b,
                _ => {
                    let err = Error::NonFinite {
                        step: state.step,
                        epoch,
                        l_c,
                        l_d,
                        lambda_d: lambda,
                        eta_p: eta,
                    };
                    if let Some(dir) = out_dir {
                        write_diagnostics(dir, &err, &model);
                    }
                    return Err(err);
                }
            };
            bundle.total.backward()?;
            let mut grads: Vec<Vec<f64>> = model
                .params()
                .iter()
                .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
                .collect();
            sum_c += l_c;
            sum_d += l_d;
            sum_acc += bundle.disc_accuracy;
            drop(bundle);
            if config.clip > 0.0 {
                clip_grad_norm(&mut grads, config.clip);
            }
            sgd_momentum_step(
                model.params_mut(),
                &grads,
                &mut state.momentum_buffers,
                sched.momentum,
                eta,
            )?;
            state.step += 1;
        }
        state.epoch = epoch + 1;
        state.progress = sched.progress(state.epoch);
        let n = batches.len() as f64;
        let src_acc = evaluate(&model, &run.source)?;
        let tgt_acc = if run.target.is_labeled() {
            evaluate(&model, &run.target)?
        } else {
            f64::NAN
        };
        let record = MetricsRecord {
            epoch: state.epoch,
            l_c: sum_c / n,
            l_d: sum_d / n,
            src_acc,
            tgt_acc,
            disc_acc: sum_acc / n,
            eta_p: eta,
            lambda_d: lambda,
            wall_ms: if config.wall_clock {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        };
        log::info!(
            "epoch {}/{}: l_c={:.4} l_d={:.4} src={:.1}% tgt={:.1}% disc={:.1}% eta={:.3e} lambda={:.4}",
            record.epoch,
            sched.total_epochs,
            record.l_c,
            record.l_d,
            100.0 * record.src_acc,
            100.0 * record.tgt_acc,
            100.0 * record.disc_acc,
            record.eta_p,
            record.lambda_d
        );
        if let Some((w, path)) = csv.as_mut() {
            writeln!(w, "{}", record.to_csv_row())
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(path.as_path(), e))?;
        }
        state.metrics.push(record);
    }

    if let Some(dir) = out_dir {
        let ckpt = Checkpoint::new(model.clone(), state.clone(), config.to_text());
        checkpoint_save(&ckpt, &dir.join(CHECKPOINT_FILE))?;
    }
    Ok(TrainOutcome { model, state })
}

fn write_diagnostics(dir: &Path, err: &Error, model: &AdversarialModel) {
    let mut text = format!("{err}\n\nparameter norms:\n");
    for (name, t) in model.named_params() {
        let norm = t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        text.push_str(&format!("{name}\t{norm}\n"));
    }
    let path = dir.join(DIAGNOSTICS_FILE);
    if let Err(e) = fs::write(&path, text) {
        log::error!("could not write {}: {e}", path.display());
    }
}
