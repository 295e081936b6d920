//! Training loop, evaluation and run artifacts.
//!
//! All randomness comes from the config seed through per-purpose derived
//! seeds: `train-data`, `eval-data`, `init` and `order`. Changing the
//! architecture therefore never changes the data or the visiting order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::thread;

use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::data::{self, SynthSample};
use crate::error::{Error, Result};
use crate::metrics::{offset_stats, EvalAccumulator, EvalSummary, OffsetStats};
use crate::nn::{Alignment, Model, OFFSET_CHANNELS};
use crate::ops::deform::OffsetField;
use crate::optim::{sgd_step, OptimState};
use crate::rng::{derive_seed, Rng};
use crate::tape::Tape;

pub const METRICS_HEADER: &str = "iter,lr,loss,miou,bmiou_1,bmiou_2,bmiou_3";

pub struct Datasets {
    pub train: Vec<SynthSample>,
    pub eval: Vec<SynthSample>,
}

impl Datasets {
    pub fn generate(cfg: &ExperimentConfig) -> Result<Self> {
        let spec = cfg.synth_spec();
        Ok(Datasets {
            train: data::generate_dataset(derive_seed(cfg.seed, "train-data"), cfg.train_size, &spec)?,
            eval: data::generate_dataset(derive_seed(cfg.seed, "eval-data"), cfg.eval_size, &spec)?,
        })
    }

    pub fn checksum(&self) -> u64 {
        data::checksum(&self.train) ^ data::checksum(&self.eval).rotate_left(1)
    }
}

pub fn build_model(cfg: &ExperimentConfig) -> Result<Model> {
    let mut rng = Rng::derived(cfg.seed, "init");
    Model::new(cfg.arch, cfg.classes, cfg.resolved_width(), &mut rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub lr: f64,
    /// Mean training loss since the previous row.
    pub loss: f64,
    pub eval: EvalSummary,
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in rows {
        let _ = write!(s, "{},{:.8},{:.6},{:.6}", r.iter, r.lr, r.loss, r.eval.miou);
        for b in &r.eval.bmiou {
            let _ = write!(s, ",{b:.6}");
        }
        s.push('\n');
    }
    s
}

/// Confusion matrices over `samples`, split into at most `threads`
/// contiguous chunks. Integer counts make the reduction order-free.
pub fn evaluate(model: &Model, samples: &[SynthSample], threads: usize) -> Result<EvalAccumulator> {
    let threads = threads.clamp(1, samples.len().max(1));
    let run = |chunk: &[SynthSample]| -> Result<EvalAccumulator> {
        let mut acc = EvalAccumulator::new(model.classes);
        for s in chunk {
            acc.add(&model.predict(&s.image)?, &s.label)?;
        }
        Ok(acc)
    };
    if threads == 1 {
        return run(samples);
    }
    let size = samples.len().div_ceil(threads);
    let parts: Vec<Result<EvalAccumulator>> = thread::scope(|scope| {
        let handles: Vec<_> = samples.chunks(size).map(|c| scope.spawn(move || run(c))).collect();
        handles.into_iter().map(|h| h.join().expect("eval worker panicked")).collect()
    });
    let mut total = EvalAccumulator::new(model.classes);
    for p in parts {
        total.merge(&p?)?;
    }
    Ok(total)
}

/// Offset statistics of every aligner, finest level first.
pub fn offset_report(model: &Model, image: &crate::Tensor) -> Result<Vec<(usize, OffsetStats)>> {
    let mut tape = Tape::new();
    let bound = model.store.bind_constants(&mut tape);
    let x = tape.constant(image.clone());
    let out = model.forward(&mut tape, &bound, x, Alignment::Deformable)?;
    out.pyramid
        .levels
        .iter()
        .filter_map(|l| l.offsets.map(|o| (l.level, o)))
        .map(|(level, o)| {
            let field = OffsetField::new(tape.value(o).clone(), OFFSET_CHANNELS / 2)?;
            Ok((level, offset_stats(&field)))
        })
        .collect()
}

/// Mean offset length over all aligners and the given samples.
pub fn mean_offset_magnitude(model: &Model, samples: &[SynthSample]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for s in samples {
        for (_, st) in offset_report(model, &s.image)? {
            total += st.mean_abs;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

pub struct TrainOutcome {
    pub model: Model,
    pub rows: Vec<MetricsRow>,
    /// Per-iteration training loss.
    pub losses: Vec<f64>,
    pub final_eval: EvalAccumulator,
}

pub fn train(cfg: &ExperimentConfig, sets: &Datasets, threads: usize) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = build_model(cfg)?;
    let mut state = OptimState::new(&model.store, cfg.base_lr, cfg.weight_decay, cfg.max_iters);
    let mut order_rng = Rng::derived(cfg.seed, "order");
    let mut order: Vec<usize> = Vec::new();
    let mut losses = Vec::with_capacity(cfg.max_iters);
    let mut rows = Vec::new();
    let mut window = 0.0;
    let mut window_len = 0usize;
    let mut final_eval = None;

    for iter in 0..cfg.max_iters {
        if order.is_empty() {
            order = (0..sets.train.len()).collect();
            order_rng.shuffle(&mut order);
            order.reverse();
        }
        let sample = &sets.train[order.pop().unwrap_or(0)];

        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape);
        let x = tape.constant(sample.image.clone());
        let out = model.forward(&mut tape, &bound, x, Alignment::Deformable)?;
        let loss_var = tape.cross_entropy(out.logits, sample.label.data())?;
        let loss = tape.value(loss_var).item()?;
        if !loss.is_finite() {
            let name = match tape.first_non_finite() {
                Some(v) => match bound.vars().iter().position(|&b| b == v) {
                    Some(i) => model.store.params()[i].name.clone(),
                    None => format!("node {} ({}) at iteration {iter}", v.index(), tape.op_name(v)),
                },
                None => format!("loss at iteration {iter}"),
            };
            return Err(Error::NonFinite(name));
        }
        let mut grads = tape.backward(loss_var)?;
        let grad_list: Vec<crate::Tensor> = bound
            .vars()
            .iter()
            .zip(model.store.params())
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| crate::Tensor::zeros(p.value.dims())))
            .collect();
        if let Some(i) = grad_list.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {}", model.store.params()[i].name)));
        }
        let lr = sgd_step(&mut model.store, &grad_list, &mut state)?;
        if let Some(p) = model.store.params().iter().find(|p| !p.value.is_finite()) {
            return Err(Error::NonFinite(p.name.clone()));
        }

        losses.push(loss);
        window += loss;
        window_len += 1;
        let done = iter + 1;
        if done % cfg.eval_interval == 0 || done == cfg.max_iters {
            let acc = evaluate(&model, &sets.eval, threads)?;
            rows.push(MetricsRow {
                iter: done,
                lr,
                loss: window / window_len as f64,
                eval: acc.summary(),
            });
            window = 0.0;
            window_len = 0;
            if done == cfg.max_iters {
                final_eval = Some(acc);
            }
        }
    }
    let final_eval = match final_eval {
        Some(a) => a,
        None => evaluate(&model, &sets.eval, threads)?,
    };
    Ok(TrainOutcome {
        model,
        rows,
        losses,
        final_eval,
    })
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// Writes the resolved config, metrics, final report and checkpoint under `dir`.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, outcome: &TrainOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write(CONFIG_FILE, cfg.to_text())?;
    write(METRICS_FILE, metrics_csv(&outcome.rows))?;
    write(REPORT_FILE, outcome.final_eval.report_csv())?;
    checkpoint::save(&outcome.model.store, &dir.join(CHECKPOINT_DIR))
}

/// Rebuilds the model described by `cfg` and loads parameters from `dir`.
pub fn load_model(cfg: &ExperimentConfig, dir: &Path) -> Result<Model> {
    let mut model = build_model(cfg)?;
    checkpoint::load_into(&mut model.store, dir)?;
    Ok(model)
}
