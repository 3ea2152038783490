//! Finite-difference gradient checks of every model operation: analytic
//! gradients at 64 bits, difference quotients in double-double.

use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple, Vocab, Vocabularies};
use crate::model::{Layout, Mode, ModelConfig, ModelParams};
use crate::oracle::answer;
use crate::query::{parse_query, Query};
use crate::rng::{stream, StreamRng};
use crate::tensor::{finite_diff_check_reference, GradCheckReport, Real, ScalarFn, Tape, Tensor, Var};

#[derive(Debug, Clone, Serialize)]
pub struct GradCase {
    pub op: &'static str,
    pub d: usize,
    pub k: usize,
    pub seed: u64,
    pub max_rel_error: f64,
    pub worst: Option<String>,
    pub checked: usize,
    pub skipped: usize,
}

impl GradCase {
    fn new(op: &'static str, d: usize, k: usize, seed: u64, r: GradCheckReport) -> Self {
        Self {
            op,
            d,
            k,
            seed,
            max_rel_error: r.max_rel_error,
            worst: r.worst,
            checked: r.checked,
            skipped: r.skipped,
        }
    }
}

pub const GRAD_OPS: [&str; 6] = [
    "init_particles",
    "project",
    "intersect",
    "complement",
    "union_score",
    "loss",
];

const NUM_ENTITIES: usize = 5;
const NUM_RELATIONS: usize = 2;

fn uniform<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(rows, cols, data).expect("positive dims")
}

/// `sum(c ⊙ x)` with a fixed random `c`, so no coordinate cancels by symmetry.
fn weighted_sum<T: Real>(t: &mut Tape<'_, T>, x: Var, c: &Tensor<f64>) -> Result<Var> {
    let c = t.constant(c.cast());
    let h = t.hadamard(x, c)?;
    Ok(t.sum(h))
}

/// The rng handed to eval-mode operations; never drawn from.
fn eval_rng() -> StreamRng {
    stream(0, &["gradcheck", "eval"])
}

struct InitParticles<'a> {
    model: &'a Layout,
    v: EntityId,
    c: Tensor<f64>,
}

impl ScalarFn for InitParticles<'_> {
    fn eval<T: Real>(&self, t: &mut Tape<'_, T>, _: &[Var]) -> Result<Var> {
        let p = self.model.init_particles(t, self.v)?;
        weighted_sum(t, p, &self.c)
    }
}

struct Project<'a> {
    model: &'a Layout,
    r: RelationId,
    c: Tensor<f64>,
}

impl ScalarFn for Project<'_> {
    fn eval<T: Real>(&self, t: &mut Tape<'_, T>, x: &[Var]) -> Result<Var> {
        let out = self.model.project(t, x[0], self.r, Mode::Eval, &mut eval_rng())?;
        weighted_sum(t, out, &self.c)
    }
}

struct Intersect<'a> {
    model: &'a Layout,
    c: Tensor<f64>,
}

impl ScalarFn for Intersect<'_> {
    fn eval<T: Real>(&self, t: &mut Tape<'_, T>, x: &[Var]) -> Result<Var> {
        let out = self.model.intersect(t, x, Mode::Eval, &mut eval_rng())?;
        weighted_sum(t, out, &self.c)
    }
}

struct Complement<'a> {
    model: &'a Layout,
    c: Tensor<f64>,
}

impl ScalarFn for Complement<'_> {
    fn eval<T: Real>(&self, t: &mut Tape<'_, T>, x: &[Var]) -> Result<Var> {
        let out = self.model.complement(t, x[0], Mode::Eval, &mut eval_rng())?;
        weighted_sum(t, out, &self.c)
    }
}

struct UnionScore<'a> {
    model: &'a Layout,
    v: EntityId,
}

impl ScalarFn for UnionScore<'_> {
    fn eval<T: Real>(&self, t: &mut Tape<'_, T>, x: &[Var]) -> Result<Var> {
        let u = self.model.union(t, x)?;
        self.model.score(t, u, self.v)
    }
}

struct Loss<'a> {
    model: &'a Layout,
    batch: Vec<(Query, EntityId)>,
}

impl ScalarFn for Loss<'_> {
    fn eval<T: Real>(&self, t: &mut Tape<'_, T>, _: &[Var]) -> Result<Var> {
        let pairs: Vec<_> = self.batch.iter().map(|(q, a)| (q, *a)).collect();
        self.model.loss(t, &pairs, Mode::Eval, &mut eval_rng())
    }
}

fn toy_vocab() -> Vocabularies {
    Vocabularies {
        entities: Vocab::from_labels((0..NUM_ENTITIES).map(|i| format!("e{i}"))),
        relations: Vocab::from_labels((0..NUM_RELATIONS).map(|i| format!("r{i}"))),
    }
}

fn toy_graph() -> KnowledgeGraph {
    let edges = [
        Triple::new(0, 0, 1),
        Triple::new(0, 0, 2),
        Triple::new(1, 1, 3),
        Triple::new(2, 1, 3),
        Triple::new(2, 0, 4),
        Triple::new(3, 1, 0),
        Triple::new(4, 0, 1),
        Triple::new(4, 1, 2),
    ];
    KnowledgeGraph::build(&edges, NUM_ENTITIES, NUM_RELATIONS).expect("valid toy graph")
}

/// Runs one operation's check for the given width, particle count and seed.
pub fn check_op(op: &str, d: usize, k: usize, seed: u64, epsilon: f64) -> Result<GradCase> {
    let name = GRAD_OPS.iter().find(|&&o| o == op).copied().ok_or_else(|| {
        crate::Error::Input(format!(
            "unknown gradient check `{op}` (expected one of {})",
            GRAD_OPS.join(", ")
        ))
    })?;
    let mut rng = stream(seed, &["gradcheck", op]);
    let mut config = ModelConfig::new(d, k);
    config.label_smoothing = 0.1;
    let mut params = ModelParams::<f64>::init(config, NUM_ENTITIES, NUM_RELATIONS, &mut rng)?;
    // non-zero biases so every path is exercised
    for p in params.store.iter_mut() {
        if p.value.cols() == 1 {
            p.value = uniform(p.value.rows(), 1, &mut rng);
        }
    }
    let model = &params.layout;
    let store = &params.store;
    let v = EntityId(rng.gen_range(0..NUM_ENTITIES as u32));
    let r = RelationId(rng.gen_range(0..NUM_RELATIONS as u32));
    let p1 = uniform(d, k, &mut rng);
    let p2 = uniform(d, k, &mut rng);
    let c_k = uniform(d, k, &mut rng);
    let c_id = uniform(d, k, &mut rng);

    let report = match name {
        "init_particles" => finite_diff_check_reference(store, &[], epsilon, &InitParticles { model, v, c: c_k })?,
        "project" => finite_diff_check_reference(store, &[p1], epsilon, &Project { model, r, c: c_k })?,
        "intersect" => finite_diff_check_reference(store, &[p1, p2], epsilon, &Intersect { model, c: c_id })?,
        "complement" => finite_diff_check_reference(store, &[p1], epsilon, &Complement { model, c: c_k })?,
        "union_score" => finite_diff_check_reference(store, &[p1, p2], epsilon, &UnionScore { model, v })?,
        _ => {
            let vocab = toy_vocab();
            let g = toy_graph();
            let texts = [
                "(p r0 (a e0))",
                "(p r1 (p r0 (a e0)))",
                "(i (p r0 (a e0)) (p r0 (a e4)))",
                "(i (p r0 (a e4)) (n (p r1 (a e1))))",
                "(u (p r1 (a e2)) (p r0 (a e2)))",
            ];
            let mut batch = Vec::new();
            for text in texts {
                let q = parse_query(text, &vocab)?;
                let a = answer(&q, &g)?.iter().next().unwrap_or(EntityId(0));
                batch.push((q, a));
            }
            finite_diff_check_reference(store, &[], epsilon, &Loss { model, batch })?
        }
    };
    Ok(GradCase::new(name, d, k, seed, report))
}

/// Every operation for every `k` in `ks` and seeds `0..seeds`.
pub fn gradient_suite(d: usize, ks: &[usize], seeds: u64, epsilon: f64) -> Result<Vec<GradCase>> {
    let mut out = Vec::new();
    for op in GRAD_OPS {
        for &k in ks {
            for seed in 0..seeds {
                out.push(check_op(op, d, k, seed, epsilon)?);
            }
        }
    }
    Ok(out)
}
