//! Adam training over (query, answer) pairs, checkpoints and resumption.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::kg::EntityId;
use crate::model::{Mode, ModelConfig, ModelParams};
use crate::query::{Query, QueryType};
use crate::rng::{indexed_stream, stream};
use crate::sampler::QueryInstance;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Total optimizer steps; a resumed run continues up to this count.
    pub steps: u64,
    pub seed: u64,
    /// Write `ckpt-<step>` every this many steps; 0 disables.
    pub checkpoint_every: u64,
    /// Evaluate on validation every this many steps and tag the best; 0
    /// disables.
    pub eval_every: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            steps: 1000,
            seed: 0,
            checkpoint_every: 0,
            eval_every: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Input(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Input("batch size must be at least 1".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Input(format!("{name} {b} outside [0, 1)")));
            }
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon <= 0.0 {
            return Err(Error::Input("adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Adam moments per parameter plus the number of completed updates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams<f32>) -> Self {
        let zeros = || {
            params
                .store
                .iter()
                .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

fn adam_update(params: &mut ModelParams<f32>, opt: &mut OptimizerState, cfg: &TrainConfig) {
    opt.step += 1;
    let t = opt.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = cfg.learning_rate as f32;
    let eps = cfg.adam_epsilon as f32;
    let (b1, b2, c1, c2) = (b1 as f32, b2 as f32, c1 as f32, c2 as f32);
    for (i, p) in params.store.iter_mut().enumerate() {
        let m = opt.m[i].data_mut();
        let v = opt.v[i].data_mut();
        let grad = p.grad.data();
        let value = p.value.data_mut();
        for j in 0..value.len() {
            let g = grad[j];
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * g * g;
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            value[j] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

/// One update on `batch`; returns the loss before the update.
pub fn train_step(
    params: &mut ModelParams<f32>,
    opt: &mut OptimizerState,
    batch: &[(&Query, EntityId)],
    cfg: &TrainConfig,
) -> Result<f32> {
    let mut rng = indexed_stream(cfg.seed, &["train"], opt.step);
    debug_assert!(params.store.iter().all(|p| p.grad.data().iter().all(|&g| g == 0.0)));
    let (loss, grads) = {
        let mut tape = params.tape();
        let loss = params.loss(&mut tape, batch, Mode::Train, &mut rng)?;
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "loss {value} at step {} over {} pairs",
                opt.step,
                batch.len()
            )));
        }
        (value, tape.backward(loss)?)
    };
    grads.accumulate_into(&mut params.store);
    adam_update(params, opt, cfg);
    params.store.zero_grads();
    Ok(loss)
}

/// Training pairs grouped by query type, one pair per answer.
#[derive(Debug, Clone)]
pub struct TrainingPairs<'a> {
    types: Vec<QueryType>,
    pairs: Vec<Vec<(&'a Query, EntityId)>>,
}

impl<'a> TrainingPairs<'a> {
    pub fn new(instances: &'a [QueryInstance]) -> Self {
        let mut by_type: HashMap<QueryType, Vec<(&'a Query, EntityId)>> = HashMap::new();
        for inst in instances {
            let answers = if inst.hard.is_empty() { &inst.easy } else { &inst.hard };
            let slot = by_type.entry(inst.query_type).or_default();
            slot.extend(answers.iter().map(|a| (&inst.query, a)));
        }
        let mut types = Vec::new();
        let mut pairs = Vec::new();
        for t in QueryType::SUPERVISED {
            if let Some(p) = by_type.remove(&t) {
                if !p.is_empty() {
                    types.push(t);
                    pairs.push(p);
                }
            }
        }
        Self { types, pairs }
    }

    pub fn types(&self) -> &[QueryType] {
        &self.types
    }

    pub fn len(&self) -> usize {
        self.pairs.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }
}

/// Deterministic batches: slot `g = step * B + j` goes to type `g mod T`, and
/// each type walks its own per-epoch shuffle. The batch for a step depends
/// only on `(seed, step, pairs)`, so a resumed run sees the same data.
pub struct BatchSchedule<'a> {
    pairs: &'a TrainingPairs<'a>,
    seed: u64,
    batch_size: usize,
    perms: Vec<Option<(u64, Vec<u32>)>>,
}

impl<'a> BatchSchedule<'a> {
    pub fn new(pairs: &'a TrainingPairs<'a>, seed: u64, batch_size: usize) -> Self {
        Self {
            perms: vec![None; pairs.types.len()],
            pairs,
            seed,
            batch_size,
        }
    }

    fn perm(&mut self, t: usize, epoch: u64) -> &[u32] {
        let fresh = !matches!(&self.perms[t], Some((e, _)) if *e == epoch);
        if fresh {
            let n = self.pairs.pairs[t].len() as u32;
            let mut p: Vec<u32> = (0..n).collect();
            let mut rng = indexed_stream(self.seed, &["shuffle", self.pairs.types[t].tag()], epoch);
            p.shuffle(&mut rng);
            self.perms[t] = Some((epoch, p));
        }
        &self.perms[t].as_ref().expect("just filled").1
    }

    pub fn batch(&mut self, step: u64) -> Vec<(&'a Query, EntityId)> {
        let types = self.pairs.types.len() as u64;
        let b = self.batch_size as u64;
        (0..b)
            .map(|j| {
                let g = step * b + j;
                let t = (g % types) as usize;
                let pos = g / types;
                let n = self.pairs.pairs[t].len() as u64;
                let idx = self.perm(t, pos / n)[(pos % n) as usize];
                self.pairs.pairs[t][idx as usize]
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub loss: f32,
    pub wall_ms: u64,
}

fn read_loss_log(path: &Path) -> Result<Vec<LossRecord>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let err = || Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: "expected step,loss,wall_ms".into(),
        };
        let mut f = line.split(',');
        let mut next = || f.next().ok_or_else(err);
        let step = next()?.parse().map_err(|_| err())?;
        let loss = next()?.parse().map_err(|_| err())?;
        let wall_ms = next()?.parse().map_err(|_| err())?;
        out.push(LossRecord { step, loss, wall_ms });
    }
    Ok(out)
}

fn write_loss_log(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut s = String::from("step,loss,wall_ms\n");
    for r in records {
        s.push_str(&format!("{},{},{}\n", r.step, r.loss, r.wall_ms));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Every logged step, including those before a resume.
    pub losses: Vec<LossRecord>,
    pub final_checkpoint: PathBuf,
    /// Best validation MRR and its step, when validation was enabled.
    pub best: Option<(u64, f64)>,
}

/// Trains from `opt.step` up to `cfg.steps`, writing `loss.csv`,
/// `ckpt-<step>` directories, `final`, and `best` when validating.
#[allow(clippy::too_many_arguments)]
pub fn train_loop(
    params: &mut ModelParams<f32>,
    opt: &mut OptimizerState,
    train: &[QueryInstance],
    valid: Option<&[QueryInstance]>,
    cfg: &TrainConfig,
    out_dir: &Path,
    echo: &Value,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let pairs = TrainingPairs::new(train);
    if pairs.is_empty() && cfg.steps > opt.step {
        return Err(Error::Input("no supervised training pairs in the dataset".into()));
    }
    let mut schedule = BatchSchedule::new(&pairs, cfg.seed, cfg.batch_size);

    let log_path = out_dir.join("loss.csv");
    let mut losses: Vec<LossRecord> = read_loss_log(&log_path)?
        .into_iter()
        .filter(|r| r.step <= opt.step)
        .collect();
    let mut best: Option<(u64, f64)> = None;
    if opt.step == 0 {
        losses.clear();
        save_checkpoint(&out_dir.join("ckpt-0"), params, opt, echo)?;
    }

    let started = Instant::now();
    let log_every = (cfg.steps / 20).max(1);
    while opt.step < cfg.steps {
        let batch = schedule.batch(opt.step);
        let loss = train_step(params, opt, &batch, cfg)?;
        losses.push(LossRecord {
            step: opt.step,
            loss,
            wall_ms: started.elapsed().as_millis() as u64,
        });
        if opt.step.is_multiple_of(log_every) {
            log::info!("step {} loss {loss:.4}", opt.step);
        }
        if cfg.checkpoint_every > 0 && opt.step.is_multiple_of(cfg.checkpoint_every) {
            write_loss_log(&log_path, &losses)?;
            save_checkpoint(&out_dir.join(format!("ckpt-{}", opt.step)), params, opt, echo)?;
        }
        if let Some(valid) = valid {
            if cfg.eval_every > 0 && opt.step.is_multiple_of(cfg.eval_every) {
                let mrr = evaluate(params, valid)?.overall.mrr;
                if best.is_none_or(|(_, b)| mrr > b) {
                    best = Some((opt.step, mrr));
                    save_checkpoint(&out_dir.join("best"), params, opt, echo)?;
                    let note = json!({"step": opt.step, "valid_mrr": mrr});
                    let p = out_dir.join("best.json");
                    fs::write(&p, note.to_string()).map_err(|e| Error::io(&p, e))?;
                }
            }
        }
    }
    write_loss_log(&log_path, &losses)?;
    let final_checkpoint = out_dir.join("final");
    save_checkpoint(&final_checkpoint, params, opt, echo)?;
    Ok(TrainOutcome {
        losses,
        final_checkpoint,
        best,
    })
}

/// Fresh parameters initialised from the `init` stream of `seed`.
pub fn init_model(
    config: ModelConfig,
    num_entities: usize,
    num_relations: usize,
    seed: u64,
) -> Result<ModelParams<f32>> {
    let mut rng = stream(seed, &["init"]);
    ModelParams::init(config, num_entities, num_relations, &mut rng)
}

// --- checkpoints ---------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model: ModelConfig,
    pub num_entities: usize,
    pub num_relations: usize,
    pub params: Vec<ParamEntry>,
    pub optimizer_step: u64,
    /// Effective run configuration at save time.
    #[serde(default)]
    pub config: Value,
}

fn write_f32s(path: &Path, tensors: &[&Tensor<f32>]) -> Result<()> {
    let total: usize = tensors.iter().map(|t| t.len()).sum();
    let mut buf = Vec::with_capacity(total * 4);
    for t in tensors {
        for x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn read_f32s(path: &Path, shapes: &[[usize; 2]]) -> Result<Vec<Tensor<f32>>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected: usize = shapes.iter().map(|s| s[0] * s[1] * 4).sum();
    if bytes.len() != expected {
        return Err(Error::CorruptCheckpoint(format!(
            "{} has {} bytes, expected {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let mut offset = 0;
    let mut out = Vec::with_capacity(shapes.len());
    for s in shapes {
        let n = s[0] * s[1];
        let data = bytes[offset..offset + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        offset += 4 * n;
        out.push(Tensor::from_vec(s[0], s[1], data).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?);
    }
    Ok(out)
}

/// Writes `manifest.json`, `params.bin` and `optimizer.bin` under `dir`.
pub fn save_checkpoint(dir: &Path, params: &ModelParams<f32>, opt: &OptimizerState, echo: &Value) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        model: params.config.clone(),
        num_entities: params.num_entities,
        num_relations: params.num_relations,
        params: params
            .store
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape(),
            })
            .collect(),
        optimizer_step: opt.step,
        config: echo.clone(),
    };
    let values: Vec<&Tensor<f32>> = params.store.iter().map(|p| &p.value).collect();
    write_f32s(&dir.join("params.bin"), &values)?;
    let moments: Vec<&Tensor<f32>> = opt.m.iter().chain(&opt.v).collect();
    write_f32s(&dir.join("optimizer.bin"), &moments)?;
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let raw: Value =
        serde_json::from_str(&text).map_err(|e| Error::CorruptCheckpoint(format!("{}: {e}", path.display())))?;
    let version = raw
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::CorruptCheckpoint("manifest lacks format_version".into()))?;
    if version != u64::from(CHECKPOINT_VERSION) {
        return Err(Error::VersionMismatch {
            found: version as u32,
            expected: CHECKPOINT_VERSION,
        });
    }
    serde_json::from_value(raw).map_err(|e| Error::CorruptCheckpoint(format!("{}: {e}", path.display())))
}

/// Loads a checkpoint. With `expected`, the stored shapes must match that
/// model configuration.
pub fn load_checkpoint(
    dir: &Path,
    expected: Option<&ModelConfig>,
) -> Result<(ModelParams<f32>, OptimizerState, Manifest)> {
    let manifest = read_manifest(dir)?;
    let config = expected.cloned().unwrap_or_else(|| manifest.model.clone());
    let mut params = ModelParams::<f32>::zeros(config, manifest.num_entities, manifest.num_relations)?;
    if params.store.len() != manifest.params.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "manifest lists {} parameters, model has {}",
            manifest.params.len(),
            params.store.len()
        )));
    }
    for (p, entry) in params.store.iter().zip(&manifest.params) {
        if p.name != entry.name {
            return Err(Error::CorruptCheckpoint(format!(
                "parameter `{}` found where `{}` was expected",
                entry.name, p.name
            )));
        }
        if p.value.shape() != entry.shape {
            return Err(Error::ShapeMismatch {
                name: entry.name.clone(),
                stored: entry.shape,
                expected: p.value.shape(),
            });
        }
    }
    let shapes: Vec<[usize; 2]> = manifest.params.iter().map(|e| e.shape).collect();
    for (p, t) in params
        .store
        .iter_mut()
        .zip(read_f32s(&dir.join("params.bin"), &shapes)?)
    {
        p.value = t;
    }
    let both: Vec<[usize; 2]> = shapes.iter().chain(&shapes).copied().collect();
    let mut moments = read_f32s(&dir.join("optimizer.bin"), &both)?;
    let v = moments.split_off(shapes.len());
    let opt = OptimizerState {
        step: manifest.optimizer_step,
        m: moments,
        v,
    };
    if opt.m.iter().chain(&opt.v).any(|t| !t.all_finite()) {
        return Err(Error::CorruptCheckpoint("non-finite optimizer moments".into()));
    }
    Ok((params, opt, manifest))
}
