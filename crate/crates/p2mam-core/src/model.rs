//! The attentive session model family and its analysis variants.
//!
//! A forward pass embeds the fixed-length session, runs position-sensitive
//! attention to get a first preference prediction, optionally refines it
//! with multi-head attention conditioned on that prediction, and scores all
//! candidate items against the tied embedding table. Seven variants share
//! this skeleton:
//!
//! * `O`    - score the position-sensitive prediction
//! * `P`    - score the refined prediction
//! * `OP`   - score their sum
//! * `LAST_OP` - condition the refinement on the last item instead
//! * `ORACLE`  - condition attention on the true next item (analysis only)
//! * `MEAN`    - uniform pooling over the session items
//! * `POP`     - within-session popularity, no learned parameters

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::autodiff::{NodeId, Tape};
use crate::corpus::FixedExample;
use crate::matrix::Matrix;
use crate::rng::SeededRng;
use crate::softmax::softmax_slice;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    O,
    P,
    Op,
    LastOp,
    Oracle,
    Mean,
    Pop,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::O => "o",
            Variant::P => "p",
            Variant::Op => "op",
            Variant::LastOp => "last",
            Variant::Oracle => "oracle",
            Variant::Mean => "mean",
            Variant::Pop => "pop",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Some(match s {
            "o" => Variant::O,
            "p" => Variant::P,
            "op" => Variant::Op,
            "last" => Variant::LastOp,
            "oracle" => Variant::Oracle,
            "mean" => Variant::Mean,
            "pop" => Variant::Pop,
            _ => return None,
        })
    }

    /// Stable tag used in checkpoint headers.
    pub fn tag(self) -> u8 {
        match self {
            Variant::O => 0,
            Variant::P => 1,
            Variant::Op => 2,
            Variant::LastOp => 3,
            Variant::Oracle => 4,
            Variant::Mean => 5,
            Variant::Pop => 6,
        }
    }

    pub fn from_tag(t: u8) -> Option<Variant> {
        Some(match t {
            0 => Variant::O,
            1 => Variant::P,
            2 => Variant::Op,
            3 => Variant::LastOp,
            4 => Variant::Oracle,
            5 => Variant::Mean,
            6 => Variant::Pop,
            _ => return None,
        })
    }

    /// `true` for variants with learnable parameters.
    pub fn trainable(self) -> bool {
        self != Variant::Pop
    }

    /// `true` if the forward pass reads the ground-truth target (upper-bound
    /// analysis only; never an honest evaluation).
    pub fn reads_target(self) -> bool {
        self == Variant::Oracle
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleMode {
    /// Divide attention logits by sqrt(d) in both attention stages.
    FullD,
    /// Divide the multi-head logits by sqrt(d / b) instead.
    PerHead,
}

impl ScaleMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScaleMode::FullD => "full-d",
            ScaleMode::PerHead => "per-head",
        }
    }

    pub fn parse(s: &str) -> Option<ScaleMode> {
        Some(match s {
            "full-d" => ScaleMode::FullD,
            "per-head" => ScaleMode::PerHead,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub d: usize,
    pub n: usize,
    pub b: usize,
    pub variant: Variant,
    pub use_position_embeddings: bool,
    pub use_pad_mask: bool,
    pub scale_mode: ScaleMode,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            d: 64,
            n: 10,
            b: 1,
            variant: Variant::Op,
            use_position_embeddings: true,
            use_pad_mask: true,
            scale_mode: ScaleMode::FullD,
            lr: 1e-3,
            epochs: 30,
            batch_size: 128,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d == 0 || self.n == 0 || self.b == 0 {
            return Err(ModelError::BadHyperParams("d, n and b must be positive"));
        }
        if self.d % self.b != 0 {
            return Err(ModelError::BadHyperParams("d must be divisible by b"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ModelError::BadHyperParams("epochs and batch_size must be positive"));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.d / self.b
    }

    fn ps_scale(&self) -> f64 {
        libm::sqrt(self.d as f64)
    }

    fn p2e_scale(&self) -> f64 {
        match self.scale_mode {
            ScaleMode::FullD => libm::sqrt(self.d as f64),
            ScaleMode::PerHead => libm::sqrt((self.d / self.b) as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub query_proj: Matrix,
    pub key_proj: Matrix,
    pub value_proj: Matrix,
}

/// All learnable tensors. Row 0 of `item_embed` is the padding embedding and
/// stays exactly zero across initialization and every optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub item_embed: Matrix,
    pub pos_embed: Matrix,
    pub query: Matrix,
    pub heads: Vec<Head>,
    pub out_proj: Matrix,
}

impl ModelParams {
    /// Number of real items `m` (the table has `m + 1` rows).
    pub fn item_count(&self) -> usize {
        self.item_embed.rows() - 1
    }

    pub fn dim(&self) -> usize {
        self.item_embed.cols()
    }

    /// Tensors in the canonical (checkpoint) order:
    /// item table, position table, query, all head query projections,
    /// all head key projections, all head value projections, output projection.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.item_embed, &self.pos_embed, &self.query];
        out.extend(self.heads.iter().map(|h| &h.query_proj));
        out.extend(self.heads.iter().map(|h| &h.key_proj));
        out.extend(self.heads.iter().map(|h| &h.value_proj));
        out.push(&self.out_proj);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::with_capacity(self.tensor_count());
        out.push(&mut self.item_embed);
        out.push(&mut self.pos_embed);
        out.push(&mut self.query);
        let (qs, rest): (Vec<_>, Vec<_>) = self
            .heads
            .iter_mut()
            .map(|h| (&mut h.query_proj, (&mut h.key_proj, &mut h.value_proj)))
            .unzip();
        let (ks, vs): (Vec<_>, Vec<_>) = rest.into_iter().unzip();
        out.extend(qs);
        out.extend(ks);
        out.extend(vs);
        out.push(&mut self.out_proj);
        out
    }

    pub fn tensor_count(&self) -> usize {
        4 + 3 * self.heads.len()
    }

    /// Rebuilds the parameter set from tensors listed in canonical order.
    pub fn from_tensor_list(hp: &HyperParams, tensors: &[Matrix]) -> Result<ModelParams, ModelError> {
        if tensors.len() != 4 + 3 * hp.b {
            return Err(ModelError::ShapeMismatch);
        }
        let b = hp.b;
        let heads = (0..b)
            .map(|i| Head {
                query_proj: tensors[3 + i].clone(),
                key_proj: tensors[3 + b + i].clone(),
                value_proj: tensors[3 + 2 * b + i].clone(),
            })
            .collect();
        let params = ModelParams {
            item_embed: tensors[0].clone(),
            pos_embed: tensors[1].clone(),
            query: tensors[2].clone(),
            heads,
            out_proj: tensors[3 + 3 * b].clone(),
        };
        if params.item_embed.rows() < 2 {
            return Err(ModelError::ShapeMismatch);
        }
        params.check_shapes(params.item_count(), hp)?;
        Ok(params)
    }

    pub fn zero_pad_row(&mut self) {
        self.item_embed.row_mut(0).fill(0.0);
    }

    pub fn check_shapes(&self, m: usize, hp: &HyperParams) -> Result<(), ModelError> {
        let ok = self.item_embed.rows() == m + 1
            && self.item_embed.cols() == hp.d
            && self.pos_embed.rows() == hp.n
            && self.pos_embed.cols() == hp.d
            && self.query.rows() == 1
            && self.query.cols() == hp.d
            && self.heads.len() == hp.b
            && self.heads.iter().all(|h| {
                [&h.query_proj, &h.key_proj, &h.value_proj]
                    .iter()
                    .all(|t| t.rows() == hp.d && t.cols() == hp.head_width())
            })
            && self.out_proj.rows() == hp.d
            && self.out_proj.cols() == hp.d;
        if ok {
            Ok(())
        } else {
            Err(ModelError::ShapeMismatch)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    BadHyperParams(&'static str),
    ShapeMismatch,
    ItemOutOfRange { id: u32, m: usize },
    NotTrainable(Variant),
    TargetRequired(Variant),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::BadHyperParams(msg) => write!(f, "invalid hyperparameters: {}", msg),
            ModelError::ShapeMismatch => write!(f, "parameter shapes do not match hyperparameters"),
            ModelError::ItemOutOfRange { id, m } => {
                write!(f, "item id {} outside vocabulary 1..={}", id, m)
            }
            ModelError::NotTrainable(v) => write!(f, "variant {} has no learnable parameters", v),
            ModelError::TargetRequired(v) => write!(f, "variant {} needs a target item", v),
        }
    }
}

/// Uniform initialization in `[-1/sqrt(d), 1/sqrt(d)]` for every tensor,
/// drawn in canonical order from one seeded stream; same seed, same bits.
pub fn init_params(m: usize, hp: &HyperParams, seed: u64) -> Result<ModelParams, ModelError> {
    hp.validate()?;
    if m == 0 {
        return Err(ModelError::BadHyperParams("vocabulary must be nonempty"));
    }
    let bound = 1.0 / libm::sqrt(hp.d as f64);
    let mut rng = SeededRng::new(seed);
    let mut draw = |rows: usize, cols: usize| {
        let data = (0..rows * cols).map(|_| rng.uniform_in(-bound, bound)).collect();
        Matrix::from_vec(rows, cols, data)
    };
    let mut item_embed = draw(m + 1, hp.d);
    let pos_embed = draw(hp.n, hp.d);
    let query = draw(1, hp.d);
    let hw = hp.head_width();
    let q_projs: Vec<Matrix> = (0..hp.b).map(|_| draw(hp.d, hw)).collect();
    let k_projs: Vec<Matrix> = (0..hp.b).map(|_| draw(hp.d, hw)).collect();
    let v_projs: Vec<Matrix> = (0..hp.b).map(|_| draw(hp.d, hw)).collect();
    let out_proj = draw(hp.d, hp.d);
    item_embed.row_mut(0).fill(0.0);
    let heads = q_projs
        .into_iter()
        .zip(k_projs)
        .zip(v_projs)
        .map(|((q, k), v)| Head {
            query_proj: q,
            key_proj: k,
            value_proj: v,
        })
        .collect();
    Ok(ModelParams {
        item_embed,
        pos_embed,
        query,
        heads,
        out_proj,
    })
}

/// Intermediate values of one forward pass, kept for inspection, analysis
/// exports and the loss.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Embedded session rows (`n x d`); pad slots are zero rows.
    pub embedded: Matrix,
    /// Embeddings plus position embeddings when those are enabled.
    pub combined: Matrix,
    /// Position-sensitive attention weights (`1 x n`); uniform pooling
    /// weights for the mean variant, absent for the popularity baseline.
    pub attn: Option<Matrix>,
    /// First-stage preference prediction (`1 x d`).
    pub pref_temporal: Option<Matrix>,
    /// Per-head attention weights of the refinement stage.
    pub head_attn: Vec<Matrix>,
    /// Refined preference prediction (`1 x d`), when the variant has one.
    pub pref_prospective: Option<Matrix>,
    /// Normalized recommendation distribution over items `1..=m`.
    pub scores: Vec<f64>,
}

impl ForwardTrace {
    /// The vector actually scored against the item table, which is also the
    /// prediction used by similarity analyses.
    pub fn prediction(&self) -> Option<Vec<f64>> {
        let t = self.pref_temporal.as_ref().map(|m| m.row(0).to_vec());
        let p = self.pref_prospective.as_ref().map(|m| m.row(0).to_vec());
        match (t, p) {
            (Some(t), Some(p)) => Some(t.iter().zip(&p).map(|(a, b)| a + b).collect()),
            (Some(t), None) => Some(t),
            (None, Some(p)) => Some(p),
            (None, None) => None,
        }
    }
}

struct Wiring {
    leaf_ids: Vec<NodeId>,
    embedded: NodeId,
    combined: NodeId,
    attn: Option<NodeId>,
    pref_temporal: Option<NodeId>,
    head_attn: Vec<NodeId>,
    pref_prospective: Option<NodeId>,
    logits: NodeId,
}

fn position_attention(
    tape: &mut Tape<'_>,
    query: NodeId,
    context: NodeId,
    mask: &[bool],
    scale: f64,
) -> (NodeId, NodeId) {
    let logits = tape.matmul_nt(query, context);
    let attn = tape.masked_softmax(logits, mask.to_vec(), scale);
    let pref = tape.matmul(attn, context);
    (attn, pref)
}

fn prospective_attention(
    tape: &mut Tape<'_>,
    query: NodeId,
    context: NodeId,
    mask: &[bool],
    head_leaves: &[(NodeId, NodeId, NodeId)],
    out_proj: NodeId,
    scale: f64,
) -> (Vec<NodeId>, NodeId) {
    let mut betas = Vec::with_capacity(head_leaves.len());
    let mut outputs = Vec::with_capacity(head_leaves.len());
    for &(qp, kp, vp) in head_leaves {
        let hq = tape.matmul(query, qp);
        let hk = tape.matmul(context, kp);
        let logits = tape.matmul_nt(hq, hk);
        let beta = tape.masked_softmax(logits, mask.to_vec(), scale);
        let hv = tape.matmul(context, vp);
        outputs.push(tape.matmul(beta, hv));
        betas.push(beta);
    }
    let merged = tape.concat_cols(outputs);
    let pref = tape.matmul(merged, out_proj);
    (betas, pref)
}

fn wire<'p>(
    tape: &mut Tape<'p>,
    params: &'p ModelParams,
    hp: &HyperParams,
    example: &FixedExample,
) -> Result<Wiring, ModelError> {
    hp.validate()?;
    let m = params.item_count();
    params.check_shapes(m, hp)?;
    if example.n() != hp.n {
        return Err(ModelError::ShapeMismatch);
    }
    for &s in &example.slots {
        if s.row() > m {
            return Err(ModelError::ItemOutOfRange { id: s.0, m });
        }
    }
    if hp.variant.reads_target() && (example.target.is_pad() || example.target.row() > m) {
        return Err(ModelError::TargetRequired(hp.variant));
    }

    let mask = if hp.use_pad_mask {
        example.pad_mask()
    } else {
        vec![false; hp.n]
    };

    let items = tape.leaf(&params.item_embed);
    let positions = tape.leaf(&params.pos_embed);
    let query = tape.leaf(&params.query);
    let head_leaves: Vec<(NodeId, NodeId, NodeId)> = params
        .heads
        .iter()
        .map(|h| {
            (
                tape.leaf(&h.query_proj),
                tape.leaf(&h.key_proj),
                tape.leaf(&h.value_proj),
            )
        })
        .collect();
    let out_proj = tape.leaf(&params.out_proj);

    let mut leaf_ids = vec![items, positions, query];
    leaf_ids.extend(head_leaves.iter().map(|h| h.0));
    leaf_ids.extend(head_leaves.iter().map(|h| h.1));
    leaf_ids.extend(head_leaves.iter().map(|h| h.2));
    leaf_ids.push(out_proj);

    let rows: Vec<usize> = example.slots.iter().map(|s| s.row()).collect();
    let embedded = tape.gather(items, rows);
    let with_positions = hp.use_position_embeddings && hp.variant != Variant::Oracle;
    let combined = if with_positions {
        tape.add(embedded, positions)
    } else {
        embedded
    };

    let ps = |tape: &mut Tape<'p>| position_attention(tape, query, combined, &mask, hp.ps_scale());

    let (attn, pref_temporal, head_attn, pref_prospective, scored) = match hp.variant {
        Variant::O => {
            let (a, h) = ps(tape);
            (Some(a), Some(h), Vec::new(), None, h)
        }
        Variant::P => {
            let (a, h) = ps(tape);
            let (betas, hp_node) =
                prospective_attention(tape, h, combined, &mask, &head_leaves, out_proj, hp.p2e_scale());
            (Some(a), Some(h), betas, Some(hp_node), hp_node)
        }
        Variant::Op => {
            let (a, h) = ps(tape);
            let (betas, hp_node) =
                prospective_attention(tape, h, combined, &mask, &head_leaves, out_proj, hp.p2e_scale());
            let joint = tape.add(h, hp_node);
            (Some(a), Some(h), betas, Some(hp_node), joint)
        }
        Variant::LastOp => {
            let (a, h) = ps(tape);
            // recency-based estimate: the last item plus its position
            let last_slot = example.slots[hp.n - 1];
            let last_item = tape.gather(items, vec![last_slot.row()]);
            let guess = if hp.use_position_embeddings {
                let last_pos = tape.gather(positions, vec![hp.n - 1]);
                tape.add(last_item, last_pos)
            } else {
                last_item
            };
            let (betas, hp_node) =
                prospective_attention(tape, guess, combined, &mask, &head_leaves, out_proj, hp.p2e_scale());
            let joint = tape.add(h, hp_node);
            (Some(a), Some(h), betas, Some(hp_node), joint)
        }
        Variant::Oracle => {
            // true-preference attention: query with the target's embedding
            // over plain item embeddings
            let target_embed = tape.gather(items, vec![example.target.row()]);
            let (a, h) = position_attention(tape, target_embed, combined, &mask, hp.ps_scale());
            (Some(a), Some(h), Vec::new(), None, h)
        }
        Variant::Mean => {
            // uniform pooling over plain item embeddings; positions play no role
            let live = example.live_len();
            let weights: Vec<f64> = example
                .slots
                .iter()
                .map(|s| if s.is_pad() { 0.0 } else { 1.0 / live as f64 })
                .collect();
            let pooling = tape.constant(Matrix::row_vector(weights));
            let h = tape.matmul(pooling, embedded);
            (Some(pooling), Some(h), Vec::new(), None, h)
        }
        Variant::Pop => unreachable!("popularity baseline never reaches the tape"),
    };

    let logits = tape.score_logits(scored, items);
    Ok(Wiring {
        leaf_ids,
        embedded,
        combined,
        attn,
        pref_temporal,
        head_attn,
        pref_prospective,
        logits,
    })
}

fn pop_scores(example: &FixedExample, m: usize) -> Result<Vec<f64>, ModelError> {
    let mut counts = vec![0usize; m];
    let mut total = 0usize;
    for &s in &example.slots {
        if s.is_pad() {
            continue;
        }
        if s.row() > m {
            return Err(ModelError::ItemOutOfRange { id: s.0, m });
        }
        counts[s.row() - 1] += 1;
        total += 1;
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Runs one example through the variant selected by `hp` and captures the
/// intermediate values. The popularity baseline needs `params` only for the
/// vocabulary size.
pub fn forward(
    params: &ModelParams,
    hp: &HyperParams,
    example: &FixedExample,
) -> Result<ForwardTrace, ModelError> {
    if hp.variant == Variant::Pop {
        let n = example.n();
        let scores = pop_scores(example, params.item_count())?;
        return Ok(ForwardTrace {
            embedded: Matrix::zeros(n, hp.d),
            combined: Matrix::zeros(n, hp.d),
            attn: None,
            pref_temporal: None,
            head_attn: Vec::new(),
            pref_prospective: None,
            scores,
        });
    }
    let mut tape = Tape::new();
    let w = wire(&mut tape, params, hp, example)?;
    let scores = softmax_slice(tape.value(w.logits).row(0));
    Ok(ForwardTrace {
        embedded: tape.value(w.embedded).clone(),
        combined: tape.value(w.combined).clone(),
        attn: w.attn.map(|id| tape.value(id).clone()),
        pref_temporal: w.pref_temporal.map(|id| tape.value(id).clone()),
        head_attn: w.head_attn.iter().map(|&id| tape.value(id).clone()).collect(),
        pref_prospective: w.pref_prospective.map(|id| tape.value(id).clone()),
        scores,
    })
}

/// Cross-entropy loss of one example and its gradients for every tensor, in
/// canonical order. The padding row of the item-table gradient is forced to
/// zero so the frozen embedding never moves.
pub fn loss_and_grads(
    params: &ModelParams,
    hp: &HyperParams,
    example: &FixedExample,
) -> Result<(f64, Vec<Matrix>), ModelError> {
    if !hp.variant.trainable() {
        return Err(ModelError::NotTrainable(hp.variant));
    }
    let m = params.item_count();
    if example.target.is_pad() || example.target.row() > m {
        return Err(ModelError::ItemOutOfRange { id: example.target.0, m });
    }
    let mut tape = Tape::new();
    let w = wire(&mut tape, params, hp, example)?;
    let loss_node = tape.softmax_xent(w.logits, example.target.0);
    let loss = tape.value(loss_node).at(0, 0);
    let all = tape.backward(loss_node);
    let mut grads: Vec<Matrix> = w.leaf_ids.iter().map(|&id| all[id].clone()).collect();
    grads[0].row_mut(0).fill(0.0);
    Ok((loss, grads))
}

/// Loss of one example without gradients.
pub fn loss(params: &ModelParams, hp: &HyperParams, example: &FixedExample) -> Result<f64, ModelError> {
    if !hp.variant.trainable() {
        return Err(ModelError::NotTrainable(hp.variant));
    }
    let m = params.item_count();
    if example.target.is_pad() || example.target.row() > m {
        return Err(ModelError::ItemOutOfRange { id: example.target.0, m });
    }
    let mut tape = Tape::new();
    let w = wire(&mut tape, params, hp, example)?;
    let loss_node = tape.softmax_xent(w.logits, example.target.0);
    Ok(tape.value(loss_node).at(0, 0))
}
