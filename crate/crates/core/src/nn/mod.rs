//! Composable layers for the lifting models: joint embedding, pre-norm
//! multi-head self-attention with FFN, graph-convolution and masked-GAT
//! blocks that reuse the same residual skeleton, and the per-joint
//! regression head.
//!
//! Weight matrices are stored `(fan_in, fan_out)` so the forward pass is a
//! plain right-multiplication; none of the layers carry bias terms (the
//! joint-identity table plays that role in the embedding).

pub mod io;

use crate::autodiff::{BoolMask, Tape, Tensor, TensorError};
use crate::skeleton::AdjacencyMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Everything a forward pass needs besides the inputs.
pub struct ForwardCtx<'a> {
    pub tape: &'a Tape,
    pub training: bool,
    pub dropout: f64,
    pub rng: &'a mut ChaCha8Rng,
}

/// A named trainable tensor plus its weight-decay eligibility. LayerNorm
/// parameters and the identity/positional tables are exempt from decay.
#[derive(Clone)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub decay: bool,
}

impl Param {
    fn new(name: impl Into<String>, tensor: Tensor, decay: bool) -> Self {
        Param {
            name: name.into(),
            tensor,
            decay,
        }
    }
}

/// Per-head attention maps from one layer, shaped `(batch, heads, J, J)`.
#[derive(Debug, Clone)]
pub struct AttentionMaps {
    pub batch: usize,
    pub heads: usize,
    pub joints: usize,
    pub values: Vec<f64>,
}

impl AttentionMaps {
    pub fn get(&self, b: usize, h: usize, i: usize, j: usize) -> f64 {
        let jj = self.joints;
        self.values[((b * self.heads + h) * jj + i) * jj + j]
    }
}

/// Uniform init with bound `1/sqrt(fan_in)`, stored `(fan_in, fan_out)`.
fn linear_param(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let values = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::param(&[fan_in, fan_out], values).expect("sized init")
}

fn table_param(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let values = (0..rows * cols).map(|_| crate::rng::normal(rng, std)).collect();
    Tensor::param(&[rows, cols], values).expect("sized init")
}

#[derive(Clone)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gain: Tensor::param(&[dim], vec![1.0; dim]).unwrap(),
            bias: Tensor::param(&[dim], vec![0.0; dim]).unwrap(),
        }
    }

    pub fn apply(&self, tape: &Tape, x: &Tensor) -> Result<Tensor, TensorError> {
        tape.layer_norm(x, &self.gain, &self.bias)
    }

    fn collect(&self, prefix: &str, out: &mut Vec<Param>) {
        out.push(Param::new(format!("{prefix}.gain"), self.gain.clone(), false));
        out.push(Param::new(format!("{prefix}.bias"), self.bias.clone(), false));
    }
}

/// Two linear layers with GELU and dropout, hidden width `4D`.
#[derive(Clone)]
pub struct FeedForward {
    pub w1: Tensor, // (D, 4D)
    pub w2: Tensor, // (4D, D)
}

impl FeedForward {
    pub fn new(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        FeedForward {
            w1: linear_param(dim, 4 * dim, rng),
            w2: linear_param(4 * dim, dim, rng),
        }
    }

    pub fn forward(&self, ctx: &mut ForwardCtx, x: &Tensor) -> Result<Tensor, TensorError> {
        let hidden = ctx.tape.gelu(&ctx.tape.matmul(x, &self.w1)?);
        let hidden = ctx.tape.dropout(&hidden, ctx.dropout, ctx.training, ctx.rng)?;
        ctx.tape.matmul(&hidden, &self.w2)
    }

    fn collect(&self, prefix: &str, out: &mut Vec<Param>) {
        out.push(Param::new(format!("{prefix}.w1"), self.w1.clone(), true));
        out.push(Param::new(format!("{prefix}.w2"), self.w2.clone(), true));
    }
}

/// Positional table added into the joint embedding.
#[derive(Clone)]
pub enum PositionalTable {
    /// No positional term.
    None,
    /// One learned vector per wrist hop-distance bucket; joints at the same
    /// distance share a row.
    GraphDistance { table: Tensor, indices: Vec<usize> },
    /// One learned vector per joint, no topology.
    Learnable { table: Tensor },
}

impl PositionalTable {
    pub fn graph_distance(dim: usize, wrist_dist: &[u32], rng: &mut ChaCha8Rng) -> Self {
        let buckets = wrist_dist.iter().copied().max().unwrap_or(0) as usize + 1;
        PositionalTable::GraphDistance {
            table: table_param(buckets, dim, 0.02, rng),
            indices: wrist_dist.iter().map(|&d| d as usize).collect(),
        }
    }

    pub fn learnable(dim: usize, joints: usize, rng: &mut ChaCha8Rng) -> Self {
        PositionalTable::Learnable {
            table: table_param(joints, dim, 0.02, rng),
        }
    }

    /// The effective `J x D` positional matrix on the tape, if any.
    fn materialize(&self, tape: &Tape) -> Result<Option<Tensor>, TensorError> {
        match self {
            PositionalTable::None => Ok(None),
            PositionalTable::GraphDistance { table, indices } => {
                Ok(Some(tape.index_rows(table, indices)?))
            }
            PositionalTable::Learnable { table } => Ok(Some(table.clone())),
        }
    }

    fn collect(&self, prefix: &str, out: &mut Vec<Param>) {
        match self {
            PositionalTable::None => {}
            PositionalTable::GraphDistance { table, .. }
            | PositionalTable::Learnable { table } => {
                out.push(Param::new(format!("{prefix}.pe"), table.clone(), false));
            }
        }
    }
}

/// Linear projection of the 2D coordinates plus joint-identity token plus
/// positional term, LayerNormed.
#[derive(Clone)]
pub struct JointEmbedding {
    pub w_e: Tensor,      // (2, D)
    pub identity: Tensor, // (J, D)
    pub positional: PositionalTable,
    pub ln: LayerNorm,
    joints: usize,
}

impl JointEmbedding {
    pub fn new(
        dim: usize,
        joints: usize,
        positional: PositionalTable,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        JointEmbedding {
            w_e: linear_param(2, dim, rng),
            identity: table_param(joints, dim, 0.02, rng),
            positional,
            ln: LayerNorm::new(dim),
            joints,
        }
    }

    /// `(B, J, 2)` normalized coordinates to `(B, J, D)` tokens.
    pub fn forward(&self, ctx: &mut ForwardCtx, x: &Tensor) -> Result<Tensor, TensorError> {
        let shape = x.shape();
        if shape.len() != 3 || shape[1] != self.joints || shape[2] != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "embed",
                lhs: shape,
                rhs: vec![self.joints, 2],
            });
        }
        let mut h = ctx.tape.matmul(x, &self.w_e)?;
        h = ctx.tape.add(&h, &self.identity)?;
        if let Some(p) = self.positional.materialize(ctx.tape)? {
            h = ctx.tape.add(&h, &p)?;
        }
        self.ln.apply(ctx.tape, &h)
    }

    fn collect(&self, prefix: &str, out: &mut Vec<Param>) {
        out.push(Param::new(format!("{prefix}.w_e"), self.w_e.clone(), true));
        out.push(Param::new(format!("{prefix}.identity"), self.identity.clone(), false));
        self.positional.collect(prefix, out);
        self.ln.collect(&format!("{prefix}.ln"), out);
    }
}

/// Scaled dot-product multi-head attention over the joint tokens; `mask`
/// (when given) zeroes attention off its support before normalization.
#[allow(clippy::too_many_arguments)]
fn multi_head_attention(
    ctx: &mut ForwardCtx,
    h: &Tensor,
    wq: &Tensor,
    wk: &Tensor,
    wv: &Tensor,
    wo: &Tensor,
    heads: usize,
    mask: Option<&BoolMask>,
    return_weights: bool,
) -> Result<(Tensor, Option<AttentionMaps>), TensorError> {
    let dim = wq.shape()[0];
    let dk = dim / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let shape = h.shape();
    let (batch, joints) = (shape[0], shape[1]);

    let q = ctx.tape.matmul(h, wq)?;
    let k = ctx.tape.matmul(h, wk)?;
    let v = ctx.tape.matmul(h, wv)?;

    let mut contexts = Vec::with_capacity(heads);
    let mut weights: Vec<Vec<f64>> = Vec::new();
    for i in 0..heads {
        let qh = ctx.tape.slice_last(&q, i * dk, dk)?;
        let kh = ctx.tape.slice_last(&k, i * dk, dk)?;
        let vh = ctx.tape.slice_last(&v, i * dk, dk)?;
        let scores = ctx
            .tape
            .scale(&ctx.tape.matmul(&qh, &ctx.tape.transpose_last2(&kh)?)?, scale);
        let attn = ctx.tape.softmax_lastdim(&scores, mask)?;
        if return_weights {
            weights.push(attn.values());
        }
        let attn = ctx.tape.dropout(&attn, ctx.dropout, ctx.training, ctx.rng)?;
        contexts.push(ctx.tape.matmul(&attn, &vh)?);
    }
    let refs: Vec<&Tensor> = contexts.iter().collect();
    let merged = ctx.tape.concat_last(&refs)?;
    let out = ctx.tape.matmul(&merged, wo)?;

    let maps = return_weights.then(|| {
        // Reorder head-major collections into (batch, heads, J, J).
        let jj = joints * joints;
        let mut values = vec![0.0; batch * heads * jj];
        for (head, w) in weights.iter().enumerate() {
            for b in 0..batch {
                let dst = (b * heads + head) * jj;
                values[dst..dst + jj].copy_from_slice(&w[b * jj..(b + 1) * jj]);
            }
        }
        AttentionMaps {
            batch,
            heads,
            joints,
            values,
        }
    });
    Ok((out, maps))
}

/// Pre-norm transformer layer: `z = h + MHA(LN(h))`, `h' = z + FFN(LN(z))`.
#[derive(Clone)]
pub struct AttentionLayer {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub heads: usize,
    pub ln1: LayerNorm,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

impl AttentionLayer {
    pub fn new(dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(dim % heads == 0, "width {dim} not divisible by {heads} heads");
        AttentionLayer {
            wq: linear_param(dim, dim, rng),
            wk: linear_param(dim, dim, rng),
            wv: linear_param(dim, dim, rng),
            wo: linear_param(dim, dim, rng),
            heads,
            ln1: LayerNorm::new(dim),
            ln2: LayerNorm::new(dim),
            ffn: FeedForward::new(dim, rng),
        }
    }

    pub fn forward(
        &self,
        ctx: &mut ForwardCtx,
        h: &Tensor,
        return_weights: bool,
    ) -> Result<(Tensor, Option<AttentionMaps>), TensorError> {
        self.forward_masked(ctx, h, None, return_weights)
    }

    fn forward_masked(
        &self,
        ctx: &mut ForwardCtx,
        h: &Tensor,
        mask: Option<&BoolMask>,
        return_weights: bool,
    ) -> Result<(Tensor, Option<AttentionMaps>), TensorError> {
        let hn = self.ln1.apply(ctx.tape, h)?;
        let (attn, maps) = multi_head_attention(
            ctx,
            &hn,
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            self.heads,
            mask,
            return_weights,
        )?;
        let z = ctx.tape.add(h, &attn)?;
        let zn = self.ln2.apply(ctx.tape, &z)?;
        let f = self.ffn.forward(ctx, &zn)?;
        Ok((ctx.tape.add(&z, &f)?, maps))
    }

    fn collect(&self, prefix: &str, out: &mut Vec<Param>) {
        out.push(Param::new(format!("{prefix}.wq"), self.wq.clone(), true));
        out.push(Param::new(format!("{prefix}.wk"), self.wk.clone(), true));
        out.push(Param::new(format!("{prefix}.wv"), self.wv.clone(), true));
        out.push(Param::new(format!("{prefix}.wo"), self.wo.clone(), true));
        self.ln1.collect(&format!("{prefix}.ln1"), out);
        self.ln2.collect(&format!("{prefix}.ln2"), out);
        self.ffn.collect(&format!("{prefix}.ffn"), out);
    }
}

/// Attention restricted to the skeleton: identical to [`AttentionLayer`]
/// except that logits off the edge-plus-self mask never receive weight.
#[derive(Clone)]
pub struct GatBlock {
    pub attn: AttentionLayer,
    pub mask: BoolMask,
}

impl GatBlock {
    pub fn new(
        dim: usize,
        heads: usize,
        mask: &AdjacencyMatrix,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let j = mask.size();
        let values = (0..j * j)
            .map(|i| mask.values()[i] != 0.0)
            .collect::<Vec<_>>();
        GatBlock {
            attn: AttentionLayer::new(dim, heads, rng),
            mask: BoolMask::new(&[j, j], values).expect("square mask"),
        }
    }

    pub fn forward(
        &self,
        ctx: &mut ForwardCtx,
        h: &Tensor,
        return_weights: bool,
    ) -> Result<(Tensor, Option<AttentionMaps>), TensorError> {
        self.attn.forward_masked(ctx, h, Some(&self.mask), return_weights)
    }

    fn collect(&self, prefix: &str, out: &mut Vec<Param>) {
        self.attn.collect(prefix, out);
    }
}

/// Graph convolution in the same residual skeleton as attention: the
/// spatial sublayer is `ReLU((A_hat . LN(h)) . W)`, the FFN is unchanged.
#[derive(Clone)]
pub struct GcnBlock {
    pub w: Tensor,   // (D, D)
    pub adj: Tensor, // (J, J), constant
    pub ln1: LayerNorm,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

impl GcnBlock {
    pub fn new(dim: usize, adj: &AdjacencyMatrix, rng: &mut ChaCha8Rng) -> Self {
        let j = adj.size();
        GcnBlock {
            w: linear_param(dim, dim, rng),
            adj: Tensor::new(&[j, j], adj.values().to_vec()).expect("square adjacency"),
            ln1: LayerNorm::new(dim),
            ln2: LayerNorm::new(dim),
            ffn: FeedForward::new(dim, rng),
        }
    }

    pub fn forward(&self, ctx: &mut ForwardCtx, h: &Tensor) -> Result<Tensor, TensorError> {
        let hn = self.ln1.apply(ctx.tape, h)?;
        let mixed = ctx.tape.matmul(&self.adj, &hn)?;
        let spatial = ctx.tape.relu(&ctx.tape.matmul(&mixed, &self.w)?);
        let z = ctx.tape.add(h, &spatial)?;
        let zn = self.ln2.apply(ctx.tape, &z)?;
        let f = self.ffn.forward(ctx, &zn)?;
        ctx.tape.add(&z, &f)
    }

    fn collect(&self, prefix: &str, out: &mut Vec<Param>) {
        out.push(Param::new(format!("{prefix}.w"), self.w.clone(), true));
        self.ln1.collect(&format!("{prefix}.ln1"), out);
        self.ln2.collect(&format!("{prefix}.ln2"), out);
        self.ffn.collect(&format!("{prefix}.ffn"), out);
    }
}

/// One spatial block of any kind; layers in a model are homogeneous.
#[derive(Clone)]
pub enum SpatialBlock {
    Gcn(GcnBlock),
    Gat(GatBlock),
    Attention(AttentionLayer),
}

impl SpatialBlock {
    pub fn forward(
        &self,
        ctx: &mut ForwardCtx,
        h: &Tensor,
        return_weights: bool,
    ) -> Result<(Tensor, Option<AttentionMaps>), TensorError> {
        match self {
            SpatialBlock::Gcn(b) => Ok((b.forward(ctx, h)?, None)),
            SpatialBlock::Gat(b) => b.forward(ctx, h, return_weights),
            SpatialBlock::Attention(b) => b.forward(ctx, h, return_weights),
        }
    }

    /// Whether this block produces attention maps.
    pub fn has_attention(&self) -> bool {
        !matches!(self, SpatialBlock::Gcn(_))
    }

    pub(crate) fn collect(&self, prefix: &str, out: &mut Vec<Param>) {
        match self {
            SpatialBlock::Gcn(b) => b.collect(prefix, out),
            SpatialBlock::Gat(b) => b.collect(prefix, out),
            SpatialBlock::Attention(b) => b.collect(prefix, out),
        }
    }
}

/// Per-joint MLP decoding tokens to wrist-relative millimeters:
/// `y_j = (GELU(LN(h_j) . W_r)) . W_o`.
#[derive(Clone)]
pub struct RegressionHead {
    pub ln: LayerNorm,
    pub w_r: Tensor, // (D, D/2)
    pub w_o: Tensor, // (D/2, 3)
}

impl RegressionHead {
    pub fn new(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        RegressionHead {
            ln: LayerNorm::new(dim),
            w_r: linear_param(dim, dim / 2, rng),
            w_o: linear_param(dim / 2, 3, rng),
        }
    }

    pub fn forward(&self, ctx: &mut ForwardCtx, h: &Tensor) -> Result<Tensor, TensorError> {
        let hn = self.ln.apply(ctx.tape, h)?;
        let hidden = ctx.tape.gelu(&ctx.tape.matmul(&hn, &self.w_r)?);
        ctx.tape.matmul(&hidden, &self.w_o)
    }

    fn collect(&self, prefix: &str, out: &mut Vec<Param>) {
        self.ln.collect(&format!("{prefix}.ln"), out);
        out.push(Param::new(format!("{prefix}.w_r"), self.w_r.clone(), true));
        out.push(Param::new(format!("{prefix}.w_o"), self.w_o.clone(), true));
    }
}

/// Collects the embedding's parameters under `embed.*`.
pub fn collect_embedding(emb: &JointEmbedding, out: &mut Vec<Param>) {
    emb.collect("embed", out);
}

/// Collects a block's parameters under `layers.<i>.*`.
pub fn collect_block(block: &SpatialBlock, index: usize, out: &mut Vec<Param>) {
    block.collect(&format!("layers.{index}"), out);
}

/// Collects the head's parameters under `head.*`.
pub fn collect_head(head: &RegressionHead, out: &mut Vec<Param>) {
    head.collect("head", out);
}
