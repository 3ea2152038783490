//! Particle query embeddings.
//!
//! A query is embedded as a `d x K` matrix whose columns ("particles") are
//! moved by four neural logic operations while the computational graph is
//! walked bottom-up. An entity's score is its best inner product with any
//! particle.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, RelationId};
use crate::query::{Query, QueryNode};
use crate::tensor::{ParamId, ParamStore, Real, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Embedding dimension.
    pub d: usize,
    /// Particles per query.
    #[serde(rename = "K")]
    pub k: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    /// Hidden width of the intersection and complement MLPs; `d` if unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    /// Half-width of the uniform initializer; `1/sqrt(d)` if unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_scale: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 32,
            k: 3,
            dropout: 0.0,
            label_smoothing: 0.0,
            hidden: None,
            init_scale: None,
        }
    }
}

impl ModelConfig {
    pub fn new(d: usize, k: usize) -> Self {
        Self {
            d,
            k,
            ..Self::default()
        }
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden.unwrap_or(self.d)
    }

    pub fn init_half_width(&self) -> f64 {
        self.init_scale.unwrap_or(1.0 / (self.d as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k == 0 {
            return Err(Error::Input(format!(
                "model needs d >= 1 and K >= 1, got d={} K={}",
                self.d, self.k
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Input(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Input(format!(
                "label smoothing {} outside [0, 1)",
                self.label_smoothing
            )));
        }
        if self.hidden == Some(0) {
            return Err(Error::Input("MLP hidden width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        self == Mode::Train
    }
}

/// Query/key/value projections of one single-head self-attention block.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub q: ParamId,
    pub k: ParamId,
    pub v: ParamId,
}

/// Two affine layers with a ReLU between them, applied per column.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// Gate weights of the relational projection.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionGates {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
}

/// Configuration plus the handles of every parameter. The operations live
/// here so that one model can run on stores of any precision.
#[derive(Debug, Clone)]
pub struct Layout {
    pub config: ModelConfig,
    pub num_entities: usize,
    pub num_relations: usize,
    /// `|V| x d`, row `v` is the embedding of entity `v`.
    pub entity: ParamId,
    /// `|R| x d`
    pub relation: ParamId,
    /// `d x K` offsets added to the anchor embedding.
    pub offset: ParamId,
    pub gates: ProjectionGates,
    pub projection_attention: Attention,
    pub intersection_attention: Attention,
    pub intersection_mlp: Mlp,
    pub complement_attention: Attention,
    pub complement_mlp: Mlp,
}

/// All trainable weights plus the handles needed to find them.
#[derive(Debug, Clone)]
pub struct ModelParams<T> {
    pub store: ParamStore<T>,
    pub layout: Layout,
}

impl<T> std::ops::Deref for ModelParams<T> {
    type Target = Layout;

    fn deref(&self) -> &Layout {
        &self.layout
    }
}

/// A particle matrix computed outside of any tape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState<T>(pub Tensor<T>);

impl<T: Real> ParticleState<T> {
    pub fn num_particles(&self) -> usize {
        self.0.cols()
    }

    pub fn particle(&self, k: usize) -> Vec<T> {
        self.0.column_values(k)
    }
}

impl<T: Real> ModelParams<T> {
    /// Parameters with every entry zero; mostly useful in tests.
    pub fn zeros(config: ModelConfig, num_entities: usize, num_relations: usize) -> Result<Self> {
        Self::build(config, num_entities, num_relations, |_, rows, cols, _| {
            Tensor::zeros(rows, cols)
        })
    }

    /// Weights and embeddings uniform in `[-s, s]`, biases zero.
    pub fn init<R: Rng>(config: ModelConfig, num_entities: usize, num_relations: usize, rng: &mut R) -> Result<Self> {
        let s = config.init_half_width();
        Self::build(config, num_entities, num_relations, |_, rows, cols, is_bias| {
            if is_bias {
                Tensor::zeros(rows, cols)
            } else {
                let data = (0..rows * cols).map(|_| T::from_f64(rng.gen_range(-s..=s))).collect();
                Tensor::from_vec(rows, cols, data).expect("positive dims")
            }
        })
    }

    fn build(
        config: ModelConfig,
        num_entities: usize,
        num_relations: usize,
        mut make: impl FnMut(&str, usize, usize, bool) -> Tensor<T>,
    ) -> Result<Self> {
        config.validate()?;
        if num_entities == 0 || num_relations == 0 {
            return Err(Error::Input("model needs at least one entity and one relation".into()));
        }
        let (d, k, h) = (config.d, config.k, config.hidden_width());
        let mut store = ParamStore::new();
        let mut add = |name: &str, rows: usize, cols: usize, bias: bool| {
            let t = make(name, rows, cols, bias);
            store.add(name, t)
        };
        let entity = add("entity", num_entities, d, false);
        let relation = add("relation", num_relations, d, false);
        let offset = add("offset", d, k, false);
        let gates = ProjectionGates {
            w_z: add("projection.w_z", d, d, false),
            w_r: add("projection.w_r", d, d, false),
            w_h: add("projection.w_h", d, d, false),
            u_z: add("projection.u_z", d, d, false),
            u_r: add("projection.u_r", d, d, false),
            u_h: add("projection.u_h", d, d, false),
            b_z: add("projection.b_z", d, 1, true),
            b_r: add("projection.b_r", d, 1, true),
            b_h: add("projection.b_h", d, 1, true),
        };
        let mut attention = |prefix: &str| Attention {
            q: add(&format!("{prefix}.w_q"), d, d, false),
            k: add(&format!("{prefix}.w_k"), d, d, false),
            v: add(&format!("{prefix}.w_v"), d, d, false),
        };
        let projection_attention = attention("projection.attention");
        let intersection_attention = attention("intersection.attention");
        let complement_attention = attention("complement.attention");
        let mut mlp = |prefix: &str| Mlp {
            w1: add(&format!("{prefix}.w1"), h, d, false),
            b1: add(&format!("{prefix}.b1"), h, 1, true),
            w2: add(&format!("{prefix}.w2"), d, h, false),
            b2: add(&format!("{prefix}.b2"), d, 1, true),
        };
        let intersection_mlp = mlp("intersection.mlp");
        let complement_mlp = mlp("complement.mlp");
        Ok(Self {
            store,
            layout: Layout {
                config,
                num_entities,
                num_relations,
                entity,
                relation,
                offset,
                gates,
                projection_attention,
                intersection_attention,
                intersection_mlp,
                complement_attention,
                complement_mlp,
            },
        })
    }

    /// A recording tape over these parameters.
    pub fn tape(&self) -> Tape<'_, T> {
        Tape::new(&self.store)
    }

    pub fn inference_tape(&self) -> Tape<'_, T> {
        Tape::inference(&self.store)
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            store: self.store.cast(),
            layout: self.layout.clone(),
        }
    }
}

impl Layout {
    fn check_entity(&self, v: EntityId) -> Result<()> {
        if v.index() < self.num_entities {
            Ok(())
        } else {
            Err(Error::Input(format!(
                "entity id {} out of range (|V| = {})",
                v.0, self.num_entities
            )))
        }
    }

    fn check_particles<T: Real>(&self, tape: &Tape<'_, T>, p: Var, op: &'static str) -> Result<()> {
        let s = tape.shape(p);
        if s[0] != self.config.d {
            return Err(Error::Shape {
                op,
                lhs: s,
                rhs: [self.config.d, self.config.k],
            });
        }
        Ok(())
    }

    // --- operations -----------------------------------------------------------

    /// `e_v + M`, the offset matrix shifted by the anchor embedding.
    pub fn init_particles<T: Real>(&self, tape: &mut Tape<'_, T>, v: EntityId) -> Result<Var> {
        self.check_entity(v)?;
        let table = tape.param(self.entity);
        let e = tape.lookup_row(table, v.index())?;
        let m = tape.param(self.offset);
        tape.add_column(m, e)
    }

    /// Single-head self-attention over the columns of `x` (tokens of width d).
    fn attention<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var, att: Attention) -> Result<Var> {
        let wq = tape.param(att.q);
        let wk = tape.param(att.k);
        let wv = tape.param(att.v);
        let q = tape.matmul(wq, x)?;
        let k = tape.matmul(wk, x)?;
        let v = tape.matmul(wv, x)?;
        let qt = tape.transpose(q);
        let logits = tape.matmul(qt, k)?;
        let scaled = tape.scale(logits, T::from_f64(1.0 / (self.config.d as f64).sqrt()));
        let weights = tape.softmax_rows(scaled);
        let wt = tape.transpose(weights);
        // columns of v mixed by each token's attention row
        tape.matmul(v, wt)
    }

    fn mlp<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var, mlp: Mlp) -> Result<Var> {
        let w1 = tape.param(mlp.w1);
        let b1 = tape.param(mlp.b1);
        let w2 = tape.param(mlp.w2);
        let b2 = tape.param(mlp.b2);
        let h = tape.matmul(w1, x)?;
        let h = tape.add_column(h, b1)?;
        let h = tape.relu(h);
        let y = tape.matmul(w2, h)?;
        tape.add_column(y, b2)
    }

    /// Gated relation transition per particle followed by self-attention.
    pub fn project<T: Real, R: Rng>(
        &self,
        tape: &mut Tape<'_, T>,
        p: Var,
        relation: RelationId,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        self.check_particles(tape, p, "project")?;
        if relation.index() >= self.num_relations {
            return Err(Error::Input(format!(
                "relation id {} out of range (|R| = {})",
                relation.0, self.num_relations
            )));
        }
        let g = self.gates;
        let table = tape.param(self.relation);
        let e = tape.lookup_row(table, relation.index())?;

        let gate = |tape: &mut Tape<'_, T>, w: ParamId, u: ParamId, b: ParamId, input: Var| -> Result<Var> {
            let w = tape.param(w);
            let u = tape.param(u);
            let b = tape.param(b);
            let we = tape.matmul(w, e)?;
            let bias = tape.add(we, b)?;
            let up = tape.matmul(u, input)?;
            tape.add_column(up, bias)
        };
        let z_pre = gate(tape, g.w_z, g.u_z, g.b_z, p)?;
        let z = tape.sigmoid(z_pre);
        let r_pre = gate(tape, g.w_r, g.u_r, g.b_r, p)?;
        let r = tape.sigmoid(r_pre);
        let rp = tape.hadamard(r, p)?;
        let t_pre = gate(tape, g.w_h, g.u_h, g.b_h, rp)?;
        let t = tape.tanh(t_pre);
        // (1 - Z) ⊙ P + Z ⊙ T  ==  P + Z ⊙ (T - P)
        let diff = tape.sub(t, p)?;
        let step = tape.hadamard(z, diff)?;
        let a = tape.add(p, step)?;

        let out = self.attention(tape, a, self.projection_attention)?;
        tape.dropout(out, self.config.dropout, mode.is_train(), rng)
    }

    /// Column indices kept when reducing `total` particles to `K`.
    pub fn subsample_columns<R: Rng>(&self, total: usize, mode: Mode, rng: &mut R) -> Vec<usize> {
        let k = self.config.k;
        if total <= k {
            return (0..total).collect();
        }
        match mode {
            Mode::Eval => (0..k)
                .map(|i| ((i * total) as f64 / k as f64).round() as usize)
                .map(|c| c.min(total - 1))
                .collect(),
            Mode::Train => {
                let mut idx = rand::seq::index::sample(rng, total, k).into_vec();
                idx.sort_unstable();
                idx
            }
        }
    }

    /// Merge all input particles, attend, apply the MLP, then keep K columns.
    pub fn intersect<T: Real, R: Rng>(
        &self,
        tape: &mut Tape<'_, T>,
        inputs: &[Var],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if inputs.len() < 2 {
            return Err(Error::Contract(format!(
                "intersection needs at least 2 inputs, got {}",
                inputs.len()
            )));
        }
        for &p in inputs {
            self.check_particles(tape, p, "intersect")?;
        }
        let merged = tape.concat_columns(inputs)?;
        let attended = self.attention(tape, merged, self.intersection_attention)?;
        let moved = self.mlp(tape, attended, self.intersection_mlp)?;
        let keep = self.subsample_columns(tape.shape(moved)[1], mode, rng);
        let out = tape.select_columns(moved, &keep)?;
        tape.dropout(out, self.config.dropout, mode.is_train(), rng)
    }

    /// Attention over the input particles followed by the complement MLP.
    pub fn complement<T: Real, R: Rng>(&self, tape: &mut Tape<'_, T>, p: Var, mode: Mode, rng: &mut R) -> Result<Var> {
        self.check_particles(tape, p, "complement")?;
        let attended = self.attention(tape, p, self.complement_attention)?;
        let out = self.mlp(tape, attended, self.complement_mlp)?;
        tape.dropout(out, self.config.dropout, mode.is_train(), rng)
    }

    /// Column concatenation; no parameters.
    pub fn union<T: Real>(&self, tape: &mut Tape<'_, T>, inputs: &[Var]) -> Result<Var> {
        if inputs.len() < 2 {
            return Err(Error::Contract(format!(
                "union needs at least 2 inputs, got {}",
                inputs.len()
            )));
        }
        for &p in inputs {
            self.check_particles(tape, p, "union")?;
        }
        tape.concat_columns(inputs)
    }

    /// Walks the query bottom-up and returns the target's particles.
    pub fn embed_query<T: Real, R: Rng>(
        &self,
        tape: &mut Tape<'_, T>,
        q: &Query,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let order = q.topological_order()?;
        let mut state: Vec<Option<Var>> = vec![None; q.len()];
        for id in order {
            let get = |c: &crate::query::NodeId| state[c.0].expect("children precede parents");
            let v = match q.node(id) {
                QueryNode::Anchor(e) => self.init_particles(tape, *e)?,
                QueryNode::Projection { child, relation } => {
                    let p = get(child);
                    self.project(tape, p, *relation, mode, rng)?
                }
                QueryNode::Intersection(children) => {
                    let inputs: Vec<Var> = children.iter().map(get).collect();
                    self.intersect(tape, &inputs, mode, rng)?
                }
                QueryNode::Union(children) => {
                    let inputs: Vec<Var> = children.iter().map(get).collect();
                    self.union(tape, &inputs)?
                }
                QueryNode::Complement(child) => {
                    let p = get(child);
                    self.complement(tape, p, mode, rng)?
                }
            };
            state[id.0] = Some(v);
        }
        Ok(state[q.target().0].expect("target embedded"))
    }

    /// `max_k <p_k, e_v>` as a `1 x 1` tape value.
    pub fn score<T: Real>(&self, tape: &mut Tape<'_, T>, p: Var, v: EntityId) -> Result<Var> {
        self.check_entity(v)?;
        self.check_particles(tape, p, "score")?;
        let table = tape.param(self.entity);
        let e = tape.lookup_row(table, v.index())?;
        let et = tape.transpose(e);
        let dots = tape.matmul(et, p)?;
        Ok(tape.max_over_columns(dots))
    }

    /// Scores of every entity as a `|V| x 1` column: `max` over columns of `E P`.
    pub fn score_all<T: Real>(&self, tape: &mut Tape<'_, T>, p: Var) -> Result<Var> {
        self.check_particles(tape, p, "score_all")?;
        let table = tape.param(self.entity);
        let dots = tape.matmul(table, p)?;
        Ok(tape.max_over_columns(dots))
    }

    /// Smoothed cross-entropy of one (query, answer) pair given its logits.
    fn pair_loss<T: Real>(&self, tape: &mut Tape<'_, T>, logits: Var, answer: EntityId) -> Result<Var> {
        if !tape.value(logits).all_finite() {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        let n = self.num_entities;
        let eps = self.config.label_smoothing;
        let mut target = Tensor::filled(1, n, T::from_f64(eps / n as f64));
        target.set(0, answer.index(), T::from_f64(1.0 - eps + eps / n as f64));
        let row = tape.transpose(logits);
        let logp = tape.log_softmax_rows(row);
        let target = tape.constant(target);
        let weighted = tape.hadamard(logp, target)?;
        let total = tape.sum(weighted);
        Ok(tape.neg(total))
    }

    /// Mean smoothed cross-entropy over `(query, answer)` pairs under a full
    /// softmax across all entities.
    pub fn loss<T: Real, R: Rng>(
        &self,
        tape: &mut Tape<'_, T>,
        batch: &[(&Query, EntityId)],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Contract("loss over an empty batch".into()));
        }
        let mut total: Option<Var> = None;
        for &(q, answer) in batch {
            self.check_entity(answer)?;
            let p = self.embed_query(tape, q, mode, rng)?;
            let logits = self.score_all(tape, p)?;
            let l = self.pair_loss(tape, logits, answer)?;
            total = Some(match total {
                None => l,
                Some(acc) => tape.add(acc, l)?,
            });
        }
        let total = total.expect("non-empty batch");
        Ok(tape.scale(total, T::from_f64(1.0 / batch.len() as f64)))
    }
}

impl<T: Real> ModelParams<T> {
    /// Evaluation-mode particles for a query.
    pub fn embed(&self, q: &Query) -> Result<ParticleState<T>> {
        let mut tape = self.inference_tape();
        let mut rng = crate::rng::stream(0, &["eval"]);
        let p = self.embed_query(&mut tape, q, Mode::Eval, &mut rng)?;
        Ok(ParticleState(tape.value(p).clone()))
    }

    /// Evaluation-mode scores of every entity for a query.
    pub fn scores(&self, q: &Query) -> Result<Vec<T>> {
        let mut tape = self.inference_tape();
        let mut rng = crate::rng::stream(0, &["eval"]);
        let p = self.embed_query(&mut tape, q, Mode::Eval, &mut rng)?;
        let s = self.score_all(&mut tape, p)?;
        Ok(tape.value(s).data().to_vec())
    }
}
