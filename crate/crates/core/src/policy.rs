//! Heterogeneous graph-attention policy: `L` layers of GATv2-style attention
//! over seven relations, an actor head scoring each `(machine, job)` edge and
//! a mean-pooled critic over job embeddings.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamStore, Tape, Tensor, Var};
use crate::graph_state::{
    EnvError, GraphState, HeteroGraph, MaskRule, JOB_FEATURES, MACHINE_FEATURES, MJ_FEATURES,
    OM_FEATURES, OP_FEATURES,
};

/// Additive logit penalty for masked actions; large enough that the masked
/// probabilities underflow to exactly zero.
pub const MASK_PENALTY: f64 = -1e30;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("state is terminal")]
    Terminal,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("mask has {mask} entries for {actions} actions")]
    MaskLength { mask: usize, actions: usize },
    #[error("every action is masked")]
    AllMasked,
    #[error("parameter `{0}` is missing or has the wrong shape")]
    BadParameter(String),
    #[error("invalid policy configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Number of attention layers `L`.
    pub layers: usize,
    /// Embedding width `d'`, also the hidden width of both heads.
    pub hidden: usize,
    /// Action mask applied by the actor.
    pub mask: MaskRule,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden: 32,
            mask: MaskRule::unrestricted(),
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.layers == 0 {
            return Err(PolicyError::Config("layers must be at least 1".into()));
        }
        if self.hidden == 0 {
            return Err(PolicyError::Config(
                "hidden width must be at least 1".into(),
            ));
        }
        if self.mask.k == 0 {
            return Err(PolicyError::Config("mask k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Op,
    Machine,
    Job,
}

/// The message-passing relations, named `dst <- src`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    /// Operation from itself and its successor.
    Op,
    /// Operation from the machines that can process it.
    OpMachine,
    /// Machine from the operations it can process.
    MachineOp,
    /// Machine from every machine.
    MachineMachine,
    /// Job from its remaining operations.
    JobOp,
    /// Job from every job.
    JobJob,
    /// Job from the machines it can be assigned to now.
    JobMachine,
}

impl Relation {
    pub const ALL: [Relation; 7] = [
        Relation::Op,
        Relation::OpMachine,
        Relation::MachineOp,
        Relation::MachineMachine,
        Relation::JobOp,
        Relation::JobJob,
        Relation::JobMachine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Relation::Op => "o",
            Relation::OpMachine => "om",
            Relation::MachineOp => "mo",
            Relation::MachineMachine => "mm",
            Relation::JobOp => "jo",
            Relation::JobJob => "jj",
            Relation::JobMachine => "mj",
        }
    }

    pub fn dst(self) -> NodeKind {
        match self {
            Relation::Op | Relation::OpMachine => NodeKind::Op,
            Relation::MachineOp | Relation::MachineMachine => NodeKind::Machine,
            Relation::JobOp | Relation::JobJob | Relation::JobMachine => NodeKind::Job,
        }
    }

    pub fn src(self) -> NodeKind {
        match self {
            Relation::Op | Relation::MachineOp | Relation::JobOp => NodeKind::Op,
            Relation::OpMachine | Relation::MachineMachine | Relation::JobMachine => {
                NodeKind::Machine
            }
            Relation::JobJob => NodeKind::Job,
        }
    }

    /// Width of the edge features, if the relation carries any.
    pub fn edge_features(self) -> Option<usize> {
        match self {
            Relation::OpMachine | Relation::MachineOp => Some(OM_FEATURES),
            Relation::JobMachine => Some(MJ_FEATURES),
            _ => None,
        }
    }
}

fn input_width(kind: NodeKind, layer: usize, hidden: usize) -> usize {
    if layer > 0 {
        return hidden;
    }
    match kind {
        NodeKind::Op => OP_FEATURES,
        NodeKind::Machine => MACHINE_FEATURES,
        NodeKind::Job => JOB_FEATURES,
    }
}

#[derive(Debug, Clone, Copy)]
struct RelationIdx {
    w1: usize,
    w2: usize,
    w3: Option<usize>,
    a: usize,
}

#[derive(Debug, Clone, Copy)]
struct MlpIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Borrowed view of one relation's weights. Weights are stored input-major,
/// so a row vector `h` maps to `h · W`.
#[derive(Debug, Clone, Copy)]
pub struct RelationParams<'a> {
    pub w1: &'a Tensor,
    pub w2: &'a Tensor,
    pub w3: Option<&'a Tensor>,
    pub a: &'a Tensor,
}

/// Trainable policy and value network.
#[derive(Debug, Clone)]
pub struct Policy {
    config: PolicyConfig,
    params: ParamStore,
    layers: Vec<[RelationIdx; 7]>,
    actor: MlpIdx,
    critic: MlpIdx,
}

/// Parameter names and shapes for a configuration, in store order.
fn layout(config: &PolicyConfig) -> Vec<(String, usize, usize)> {
    let h = config.hidden;
    let mut out = Vec::new();
    for l in 0..config.layers {
        for rel in Relation::ALL {
            let p = format!("layer{l}.{}", rel.name());
            out.push((format!("{p}.w1"), input_width(rel.dst(), l, h), h));
            out.push((format!("{p}.w2"), input_width(rel.src(), l, h), h));
            if let Some(e) = rel.edge_features() {
                out.push((format!("{p}.w3"), e, h));
            }
            out.push((format!("{p}.a"), h, 1));
        }
    }
    for (head, input) in [("actor", 2 * h + MJ_FEATURES), ("critic", h)] {
        out.push((format!("{head}.w1"), input, h));
        out.push((format!("{head}.b1"), 1, h));
        out.push((format!("{head}.w2"), h, 1));
        out.push((format!("{head}.b2"), 1, 1));
    }
    out
}

impl Policy {
    /// Xavier-initialized weights, zero biases.
    pub fn new<R: Rng + ?Sized>(config: PolicyConfig, rng: &mut R) -> Result<Self, PolicyError> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, r, c) in layout(&config) {
            if name.contains(".b") {
                params.add(name, Tensor::zeros(r, c));
            } else {
                params.add_xavier(name, r, c, rng);
            }
        }
        Self::from_params(config, params)
    }

    /// A policy with every parameter zero.
    pub fn zeros(config: PolicyConfig) -> Result<Self, PolicyError> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, r, c) in layout(&config) {
            params.add(name, Tensor::zeros(r, c));
        }
        Self::from_params(config, params)
    }

    /// Rebuilds a policy from stored parameters, checking names and shapes.
    pub fn from_params(config: PolicyConfig, params: ParamStore) -> Result<Self, PolicyError> {
        config.validate()?;
        let find = |name: &str, r: usize, c: usize| -> Result<usize, PolicyError> {
            params
                .index_of(name)
                .filter(|&i| params.get(i).shape() == (r, c))
                .ok_or_else(|| PolicyError::BadParameter(name.to_string()))
        };
        let expected = layout(&config);
        if expected.len() != params.len() {
            return Err(PolicyError::BadParameter(format!(
                "expected {} tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        let shape_of = |name: &str| {
            let (_, r, c) = expected
                .iter()
                .find(|(n, _, _)| n == name)
                .expect("name from layout");
            (*r, *c)
        };
        let idx = |name: String| {
            let (r, c) = shape_of(&name);
            find(&name, r, c)
        };
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let mut rels = Vec::with_capacity(7);
            for rel in Relation::ALL {
                let p = format!("layer{l}.{}", rel.name());
                rels.push(RelationIdx {
                    w1: idx(format!("{p}.w1"))?,
                    w2: idx(format!("{p}.w2"))?,
                    w3: match rel.edge_features() {
                        Some(_) => Some(idx(format!("{p}.w3"))?),
                        None => None,
                    },
                    a: idx(format!("{p}.a"))?,
                });
            }
            layers.push(rels.try_into().expect("seven relations"));
        }
        let mlp = |head: &str| -> Result<MlpIdx, PolicyError> {
            Ok(MlpIdx {
                w1: idx(format!("{head}.w1"))?,
                b1: idx(format!("{head}.b1"))?,
                w2: idx(format!("{head}.w2"))?,
                b2: idx(format!("{head}.b2"))?,
            })
        };
        let actor = mlp("actor")?;
        let critic = mlp("critic")?;
        Ok(Self {
            config,
            params,
            layers,
            actor,
            critic,
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn relation_params(&self, layer: usize, rel: Relation) -> RelationParams<'_> {
        let idx = self.layers[layer][rel as usize];
        RelationParams {
            w1: self.params.get(idx.w1),
            w2: self.params.get(idx.w2),
            w3: idx.w3.map(|i| self.params.get(i)),
            a: self.params.get(idx.a),
        }
    }

    /// Records every parameter on `tape`; the returned handles are indexed
    /// like the parameter store.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        (0..self.params.len())
            .map(|i| tape.param(i, self.params.get(i)))
            .collect()
    }

    /// Node embeddings after `L` layers, recorded on `tape`.
    pub fn embed_on(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        graph: &HeteroGraph,
    ) -> Result<Embeddings, PolicyError> {
        if graph.num_ops() == 0 {
            return Err(PolicyError::Terminal);
        }
        let edges = EdgeLists::new(graph);
        let mut h_op = tape.constant(Tensor::from_vec(
            graph.num_ops(),
            OP_FEATURES,
            graph.op_features.clone(),
        )?);
        let mut h_m = tape.constant(Tensor::from_vec(
            graph.num_machines,
            MACHINE_FEATURES,
            graph.machine_features.clone(),
        )?);
        let mut h_j = tape.constant(Tensor::from_vec(
            graph.num_jobs,
            JOB_FEATURES,
            graph.job_features.clone(),
        )?);
        let om_feat = tape.constant(Tensor::from_vec(
            edges.om.dst.len(),
            OM_FEATURES,
            graph.om_features.clone(),
        )?);
        let mj_feat = tape.constant(Tensor::from_vec(
            edges.mj.dst.len(),
            MJ_FEATURES,
            graph.mj_features.clone(),
        )?);
        let counts = [graph.num_ops(), graph.num_machines, graph.num_jobs];
        let mut attention = Vec::new();

        for (l, rels) in self.layers.iter().enumerate() {
            let mut sums: [Option<Var>; 3] = [None, None, None];
            for rel in Relation::ALL {
                let pick = |k: NodeKind| match k {
                    NodeKind::Op => h_op,
                    NodeKind::Machine => h_m,
                    NodeKind::Job => h_j,
                };
                let list = edges.get(rel);
                if list.dst.is_empty() {
                    continue;
                }
                let feat = match rel {
                    Relation::OpMachine | Relation::MachineOp => Some(om_feat),
                    Relation::JobMachine => Some(mj_feat),
                    _ => None,
                };
                let n_dst = counts[rel.dst() as usize];
                let (out, alpha) = attend(
                    tape,
                    vars,
                    rels[rel as usize],
                    pick(rel.dst()),
                    pick(rel.src()),
                    list,
                    feat,
                    n_dst,
                )?;
                attention.push(AttentionRecord {
                    layer: l,
                    relation: rel,
                    dst: list.dst.clone(),
                    alpha,
                });
                let slot = &mut sums[rel.dst() as usize];
                *slot = Some(match *slot {
                    Some(acc) => tape.add(acc, out)?,
                    None => out,
                });
            }
            let [o, m, j] = sums.map(|s| s.expect("every node kind has a self relation"));
            h_op = tape.elu(o);
            h_m = tape.elu(m);
            h_j = tape.elu(j);
        }
        Ok(Embeddings {
            op: h_op,
            machine: h_m,
            job: h_j,
            mj_features: mj_feat,
            attention,
        })
    }

    /// Actor logits, one per `graph.mj_edges` entry, with masked entries
    /// pushed to [`MASK_PENALTY`].
    pub fn actor_on(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        graph: &HeteroGraph,
        emb: &Embeddings,
        mask: &[bool],
    ) -> Result<Var, PolicyError> {
        let n = graph.mj_edges.len();
        if mask.len() != n {
            return Err(PolicyError::MaskLength {
                mask: mask.len(),
                actions: n,
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(PolicyError::AllMasked);
        }
        let machines: Vec<usize> = graph.mj_edges.iter().map(|a| a.machine).collect();
        let jobs: Vec<usize> = graph.mj_edges.iter().map(|a| a.job).collect();
        let hm = tape.gather_rows(emb.machine, &machines)?;
        let hj = tape.gather_rows(emb.job, &jobs)?;
        let x = tape.concat_cols(&[hm, hj, emb.mj_features])?;
        let logits = mlp(tape, vars, self.actor, x)?;
        if mask.iter().all(|&m| m) {
            return Ok(logits);
        }
        let penalty = tape.constant(Tensor::column(
            mask.iter()
                .map(|&m| if m { 0.0 } else { MASK_PENALTY })
                .collect(),
        ));
        Ok(tape.add(logits, penalty)?)
    }

    /// Critic value: mean of the per-job head outputs, as a `1 x 1` var.
    pub fn critic_on(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        emb: &Embeddings,
    ) -> Result<Var, PolicyError> {
        let per_job = mlp(tape, vars, self.critic, emb.job)?;
        Ok(tape.mean_rows(per_job)?)
    }

    /// Records the full forward pass for `state`: log-probabilities over
    /// the legal actions and the value estimate.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        state: &GraphState,
        mask: &[bool],
    ) -> Result<Heads, PolicyError> {
        if state.is_terminal() {
            return Err(PolicyError::Terminal);
        }
        let graph = state.graph();
        let emb = self.embed_on(tape, vars, &graph)?;
        let logits = self.actor_on(tape, vars, &graph, &emb, mask)?;
        let log_probs = tape.log_softmax(logits)?;
        let value = self.critic_on(tape, vars, &emb)?;
        Ok(Heads {
            logits,
            log_probs,
            value,
        })
    }

    /// Embedding tables `(operations, machines, jobs)` of `state`.
    pub fn embed(&self, state: &GraphState) -> Result<(Tensor, Tensor, Tensor), PolicyError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let emb = self.embed_on(&mut tape, &vars, &state.graph())?;
        Ok((
            tape.value(emb.op).clone(),
            tape.value(emb.machine).clone(),
            tape.value(emb.job).clone(),
        ))
    }

    /// Masked logits aligned with `state.legal_actions()`.
    pub fn actor_logits(&self, state: &GraphState, mask: &[bool]) -> Result<Vec<f64>, PolicyError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let graph = state.graph();
        let emb = self.embed_on(&mut tape, &vars, &graph)?;
        let logits = self.actor_on(&mut tape, &vars, &graph, &emb, mask)?;
        Ok(tape.value(logits).data().to_vec())
    }

    /// Action probabilities and value of `state`.
    pub fn evaluate(
        &self,
        state: &GraphState,
        mask: &[bool],
    ) -> Result<(Vec<f64>, f64), PolicyError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let heads = self.forward(&mut tape, &vars, state, mask)?;
        let probs = tape
            .value(heads.log_probs)
            .data()
            .iter()
            .map(|x| x.exp())
            .collect();
        Ok((probs, tape.value(heads.value).item()))
    }

    pub fn critic_value(&self, state: &GraphState) -> Result<f64, PolicyError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let emb = self.embed_on(&mut tape, &vars, &state.graph())?;
        let v = self.critic_on(&mut tape, &vars, &emb)?;
        Ok(tape.value(v).item())
    }

    /// The mask this policy applies to `state`'s legal actions.
    pub fn mask_for(&self, state: &GraphState) -> Vec<bool> {
        let actions = state.legal_actions();
        state.mask_actions(&actions, self.config.mask)
    }
}

/// Handles to the embedding tables on a tape.
#[derive(Debug, Clone)]
pub struct Embeddings {
    pub op: Var,
    pub machine: Var,
    pub job: Var,
    pub mj_features: Var,
    pub attention: Vec<AttentionRecord>,
}

/// Normalized attention coefficients of one relation in one layer.
#[derive(Debug, Clone)]
pub struct AttentionRecord {
    pub layer: usize,
    pub relation: Relation,
    /// Destination node of each edge.
    pub dst: Vec<usize>,
    /// `n_edges x 1` coefficients.
    pub alpha: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct Heads {
    pub logits: Var,
    pub log_probs: Var,
    pub value: Var,
}

#[derive(Debug, Clone, Default)]
struct EdgeList {
    dst: Vec<usize>,
    src: Vec<usize>,
}

#[derive(Debug, Clone)]
struct EdgeLists {
    o: EdgeList,
    om: EdgeList,
    mo: EdgeList,
    mm: EdgeList,
    jo: EdgeList,
    jj: EdgeList,
    mj: EdgeList,
}

impl EdgeLists {
    fn new(g: &HeteroGraph) -> Self {
        let mut o = EdgeList::default();
        for i in 0..g.num_ops() {
            o.dst.push(i);
            o.src.push(i);
        }
        for &(pred, succ) in &g.oo_edges {
            o.dst.push(pred);
            o.src.push(succ);
        }
        let om = EdgeList {
            dst: g.om_edges.iter().map(|e| e.0).collect(),
            src: g.om_edges.iter().map(|e| e.1).collect(),
        };
        let mo = EdgeList {
            dst: om.src.clone(),
            src: om.dst.clone(),
        };
        let complete = |pairs: Vec<(usize, usize)>| EdgeList {
            dst: pairs.iter().map(|p| p.0).collect(),
            src: pairs.iter().map(|p| p.1).collect(),
        };
        let jo = EdgeList {
            dst: g.oj_edges.iter().map(|e| e.1).collect(),
            src: g.oj_edges.iter().map(|e| e.0).collect(),
        };
        let mj = EdgeList {
            dst: g.mj_edges.iter().map(|a| a.job).collect(),
            src: g.mj_edges.iter().map(|a| a.machine).collect(),
        };
        Self {
            o,
            om,
            mo,
            mm: complete(g.mm_edges()),
            jo,
            jj: complete(g.jj_edges()),
            mj,
        }
    }

    fn get(&self, rel: Relation) -> &EdgeList {
        match rel {
            Relation::Op => &self.o,
            Relation::OpMachine => &self.om,
            Relation::MachineOp => &self.mo,
            Relation::MachineMachine => &self.mm,
            Relation::JobOp => &self.jo,
            Relation::JobJob => &self.jj,
            Relation::JobMachine => &self.mj,
        }
    }
}

/// One relation's attention aggregation: returns the `n_dst x d'` summed
/// messages and the `n_edges x 1` coefficients.
#[allow(clippy::too_many_arguments)]
fn attend(
    tape: &mut Tape,
    vars: &[Var],
    idx: RelationIdx,
    dst_h: Var,
    src_h: Var,
    edges: &EdgeList,
    edge_feat: Option<Var>,
    n_dst: usize,
) -> Result<(Var, Var), AutodiffError> {
    let a = tape.matmul(dst_h, vars[idx.w1])?;
    let b = tape.matmul(src_h, vars[idx.w2])?;
    let ga = tape.gather_rows(a, &edges.dst)?;
    let mut msg = tape.gather_rows(b, &edges.src)?;
    if let (Some(w3), Some(e)) = (idx.w3, edge_feat) {
        let ew = tape.matmul(e, vars[w3])?;
        msg = tape.add(msg, ew)?;
    }
    let pre = tape.add(ga, msg)?;
    let z = tape.leaky_relu(pre, LEAKY_SLOPE);
    let score = tape.matmul(z, vars[idx.a])?;
    let alpha = tape.segment_softmax(score, &edges.dst, n_dst)?;
    let weighted = tape.mul_rows(msg, alpha)?;
    let out = tape.scatter_add_rows(weighted, &edges.dst, n_dst)?;
    Ok((out, alpha))
}

fn mlp(tape: &mut Tape, vars: &[Var], idx: MlpIdx, x: Var) -> Result<Var, AutodiffError> {
    let h = tape.matmul(x, vars[idx.w1])?;
    let h = tape.add_row(h, vars[idx.b1])?;
    let h = tape.tanh(h);
    let y = tape.matmul(h, vars[idx.w2])?;
    tape.add_row(y, vars[idx.b2])
}

/// Unnormalized attention score `a · LeakyReLU(h_i W1 + h_j W2 + e W3)` of a
/// destination `h_i`, source `h_j` and optional edge features `e`.
pub fn attention_score(
    params: RelationParams<'_>,
    h_i: &[f64],
    h_j: &[f64],
    h_edge: Option<&[f64]>,
) -> Result<f64, PolicyError> {
    let row = |v: &[f64]| Tensor::from_vec(1, v.len(), v.to_vec());
    let mut pre = row(h_i)?.matmul(params.w1)?;
    let hj = check_width(row(h_j)?.matmul(params.w2)?, &pre)?;
    pre.add_assign(&hj);
    match (params.w3, h_edge) {
        (Some(w3), Some(e)) => {
            let he = check_width(row(e)?.matmul(w3)?, &pre)?;
            pre.add_assign(&he);
        }
        (None, None) => {}
        _ => {
            return Err(PolicyError::Config(
                "edge features must be given exactly for edge-featured relations".into(),
            ))
        }
    }
    let z = pre.map(|x| if x > 0.0 { x } else { LEAKY_SLOPE * x });
    Ok(z.matmul(params.a)?.item())
}

fn check_width(t: Tensor, like: &Tensor) -> Result<Tensor, AutodiffError> {
    if t.shape() != like.shape() {
        return Err(AutodiffError::Shape {
            op: "attention_score",
            left: like.shape(),
            right: t.shape(),
        });
    }
    Ok(t)
}

#[cfg(test)]
mod tests;
