//! The text-matching network: convolution + multi-head self-attention
//! encoder, co-attention, three-way aggregation, iterated for a configurable
//! number of blocks, then bidirectional attention and max/mean pooling.
//!
//! Every sequence is a [`Seq`]: a `len × width` matrix on the tape of which
//! only the first `valid` rows are real tokens. Padding rows are masked out
//! of every softmax and of the final pooling, so a padded input pools to the
//! same vector as the unpadded one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tape::{Reduce, Tape, Var};
use crate::tensor::{Real, Tensor};

/// Additive logit for masked positions.
pub const MASK_LOGIT: f64 = -1e9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchConfig {
    /// Width `d` of encoder, attention and aggregation outputs.
    pub hidden: usize,
    pub heads: usize,
    pub conv_width: usize,
    /// Number of encode / co-attend / aggregate iterations.
    pub blocks: usize,
    pub dropout: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            hidden: 200,
            heads: 4,
            conv_width: 3,
            blocks: 2,
            dropout: 0.2,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        let d = self.hidden;
        if d == 0 || !d.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "hidden size must be even and positive, got {d}"
            )));
        }
        if self.heads == 0 || !(d / 2).is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "half the hidden size ({}) must be divisible by heads ({})",
                d / 2,
                self.heads
            )));
        }
        if self.blocks == 0 {
            return Err(Error::Config(
                "at least one matching block is required".into(),
            ));
        }
        if self.conv_width.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "convolution width must be odd, got {}",
                self.conv_width
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} not in [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Width of the pooled output, `8d`.
    pub fn output_dim(&self) -> usize {
        8 * self.hidden
    }
}

/// A sequence on the tape whose first `valid` rows are real tokens.
#[derive(Clone, Copy, Debug)]
pub struct Seq {
    pub var: Var,
    pub valid: usize,
}

impl Seq {
    pub fn full<T: Real>(tape: &Tape<T>, var: Var) -> Self {
        Seq {
            var,
            valid: tape.shape(var)[0],
        }
    }

    fn with(self, var: Var) -> Self {
        Seq { var, ..self }
    }
}

fn rows<T: Real>(tape: &Tape<T>, s: Seq) -> usize {
    tape.shape(s.var)[0]
}

/// `x · W + b` with `W` stored `[in × out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = store.add_glorot(format!("{name}.w"), fan_in, fan_out, rng)?;
        let b = if bias {
            Some(store.add_zeros(format!("{name}.b"), &[fan_out])?)
        } else {
            None
        };
        Ok(Linear { w, b })
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = self.b.map(|b| tape.param(store, b));
        tape.linear(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHead {
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

/// Parameters of one interaction block, shared by both sentences of a pair
/// and by the text and knowledge passes.
#[derive(Clone, Debug)]
pub struct BlockParams {
    /// Projects `[previous output : embedding]` back to embedding width.
    /// Absent for the first block.
    pub input_proj: Option<Linear>,
    /// Convolution filters `[width·k × d/2]` and bias.
    pub conv: Linear,
    pub attention: MultiHead,
    pub w_c: ParamId,
    pub w_q: ParamId,
    pub agg_concat: Linear,
    pub agg_diff: Linear,
    pub agg_prod: Linear,
    pub agg_out: Linear,
}

#[derive(Clone, Debug)]
pub struct Matcher {
    pub config: MatchConfig,
    pub embed_dim: usize,
    pub blocks: Vec<BlockParams>,
    /// Trilinear similarity weights `[3d × 1]` for bidirectional attention.
    pub similarity: ParamId,
}

pub struct Encoded {
    pub p: Var,
    /// One `m × m` weight matrix per head.
    pub self_attention: Vec<Var>,
}

pub struct CoAttention {
    /// `a · H`, one attended row per row of `P`.
    pub p_attn: Var,
    /// Rows of `P` attended from each row of `H`.
    pub h_attn: Var,
    /// Row-normalized similarity `a`, `m × n`.
    pub weights: Var,
    /// Column-normalized similarity, transposed, `n × m`.
    pub weights_t: Var,
}

pub struct BiAttention {
    /// `m × 4d` rows `[c; v; c⊙v; c⊙u]`.
    pub g: Var,
    /// Context-to-query weights, `m × n`.
    pub alpha: Var,
    /// Query-to-context weights over context rows, `1 × m`.
    pub beta: Var,
}

pub struct MatchOutput {
    /// Pooled representation `[8d]`.
    pub h: Var,
    /// Co-attention weights of the last block.
    pub attention: Var,
    pub bi: BiAttention,
}

impl Matcher {
    pub fn new<T: Real>(
        config: MatchConfig,
        embed_dim: usize,
        store: &mut ParamStore<T>,
        prefix: &str,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.hidden;
        let half = d / 2;
        let k = embed_dim;
        let mut blocks = Vec::with_capacity(config.blocks);
        for t in 0..config.blocks {
            let name = |part: &str| format!("{prefix}.block{t}.{part}");
            let input_proj = if t == 0 {
                None
            } else {
                Some(Linear::new(
                    store,
                    &name("input_proj"),
                    d + k,
                    k,
                    true,
                    rng,
                )?)
            };
            let conv = Linear::new(store, &name("conv"), config.conv_width * k, half, true, rng)?;
            let attn_in = half + k;
            let attention = MultiHead {
                heads: config.heads,
                query: Linear::new(store, &name("attn.query"), attn_in, half, true, rng)?,
                // A key bias adds a per-row constant to the logits, which the
                // softmax removes, so it would be a parameter with zero gradient.
                key: Linear::new(store, &name("attn.key"), attn_in, half, false, rng)?,
                value: Linear::new(store, &name("attn.value"), attn_in, half, true, rng)?,
                output: Linear::new(store, &name("attn.output"), half, half, true, rng)?,
            };
            let w_c = store.add_glorot(name("co_attn.w_c"), d, d, rng)?;
            let w_q = store.add_glorot(name("co_attn.w_q"), d, d, rng)?;
            blocks.push(BlockParams {
                input_proj,
                conv,
                attention,
                w_c,
                w_q,
                agg_concat: Linear::new(store, &name("agg.concat"), 2 * d, d, true, rng)?,
                agg_diff: Linear::new(store, &name("agg.diff"), 2 * d, d, true, rng)?,
                agg_prod: Linear::new(store, &name("agg.prod"), 2 * d, d, true, rng)?,
                agg_out: Linear::new(store, &name("agg.out"), 3 * d, d, true, rng)?,
            });
        }
        let similarity = store.add_glorot(format!("{prefix}.bi_attn.w"), 3 * d, 1, rng)?;
        Ok(Matcher {
            config,
            embed_dim,
            blocks,
            similarity,
        })
    }

    /// Encoder: `A_c = relu(conv(X))`, `A_m = MultiHead([A_c : X])`,
    /// `P = [A_c : A_m]`.
    pub fn encode<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        block: &BlockParams,
        x: Seq,
    ) -> Result<Encoded> {
        if rows(tape, x) == 0 {
            return Err(Error::EmptySequence("encode"));
        }
        let filters = tape.param(store, block.conv.w);
        let bias = block.conv.b.map(|b| tape.param(store, b));
        let conv = tape.conv1d_same(x.var, filters, bias, self.config.conv_width)?;
        let a_c = tape.relu(conv);
        let joined = tape.concat_last(&[a_c, x.var])?;
        let (a_m, self_attention) = multi_head(tape, store, &block.attention, x.with(joined))?;
        let p = tape.concat_last(&[a_c, a_m])?;
        Ok(Encoded { p, self_attention })
    }

    /// `S = relu(P W_cᵀ) · relu(H W_qᵀ)ᵀ`; `P' = softmax_rows(S) · H` and
    /// `H' = softmax_rows(Sᵀ) · P`.
    pub fn co_attention<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        block: &BlockParams,
        p: Seq,
        h: Seq,
    ) -> Result<CoAttention> {
        let w_c = tape.param(store, block.w_c);
        let w_q = tape.param(store, block.w_q);
        let w_c_t = tape.transpose(w_c)?;
        let w_q_t = tape.transpose(w_q)?;
        let pc = tape.matmul(p.var, w_c_t)?;
        let pc = tape.relu(pc);
        let hq = tape.matmul(h.var, w_q_t)?;
        let hq = tape.relu(hq);
        let hq_t = tape.transpose(hq)?;
        let s = tape.matmul(pc, hq_t)?;

        let s_rows = mask_columns(tape, s, h.valid)?;
        let weights = tape.softmax_rows(s_rows)?;
        let p_attn = tape.matmul(weights, h.var)?;

        let s_t = tape.transpose(s)?;
        let s_t = mask_columns(tape, s_t, p.valid)?;
        let weights_t = tape.softmax_rows(s_t)?;
        let h_attn = tape.matmul(weights_t, p.var)?;
        Ok(CoAttention {
            p_attn,
            h_attn,
            weights,
            weights_t,
        })
    }

    /// `C = G([G₁([P;P']); G₂([P;P−P']); G₃([P;P⊙P'])])`, each `G` a relu
    /// layer to width `d`.
    pub fn aggregate<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        block: &BlockParams,
        p: Var,
        p_attn: Var,
    ) -> Result<Var> {
        if tape.shape(p) != tape.shape(p_attn) {
            return Err(Error::dim("aggregate", tape.shape(p), tape.shape(p_attn)));
        }
        let diff = tape.sub(p, p_attn)?;
        let prod = tape.mul(p, p_attn)?;
        let mut branches = Vec::with_capacity(3);
        for (layer, other) in [
            (&block.agg_concat, p_attn),
            (&block.agg_diff, diff),
            (&block.agg_prod, prod),
        ] {
            let input = tape.concat_last(&[p, other])?;
            let out = layer.forward(tape, store, input)?;
            branches.push(tape.relu(out));
        }
        let joined = tape.concat_last(&branches)?;
        let out = block.agg_out.forward(tape, store, joined)?;
        Ok(tape.relu(out))
    }

    /// Bidirectional attention between context `C[m×d]` and query `Q[n×d]`.
    ///
    /// `t_ij = w₁·c_i + w₂·q_j + w₃·(c_i⊙q_j)`. Context-to-query:
    /// `u_i = Σ_j softmax(T_i:)_j q_j`. Query-to-context:
    /// `β = softmax_i(max_j t_ij)`, `v = Σ_i β_i c_i`, repeated for every row.
    /// Row `i` of the result is `[c_i; v; c_i⊙v; c_i⊙u_i]`.
    pub fn bidirectional_attention<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        c: Seq,
        q: Seq,
    ) -> Result<BiAttention> {
        let d = self.config.hidden;
        let (m, dc) = tape.value(c.var).dims2()?;
        let (n, dq) = tape.value(q.var).dims2()?;
        if dc != d || dq != d {
            return Err(Error::dim(
                "bidirectional_attention",
                tape.shape(c.var),
                tape.shape(q.var),
            ));
        }
        let w = tape.param(store, self.similarity);
        let w_c = tape.slice_rows(w, 0, d)?;
        let w_q = tape.slice_rows(w, d, 2 * d)?;
        let w_cq = tape.slice_rows(w, 2 * d, 3 * d)?;
        let ones_m = tape.constant(Tensor::full(&[m, 1], T::one()));
        let ones_n = tape.constant(Tensor::full(&[1, n], T::one()));

        let tc = tape.matmul(c.var, w_c)?;
        let tc = tape.matmul(tc, ones_n)?;
        let tq = tape.matmul(q.var, w_q)?;
        let tq = tape.transpose(tq)?;
        let tq = tape.matmul(ones_m, tq)?;
        let w_cq_row = tape.transpose(w_cq)?;
        let w_cq_rows = tape.matmul(ones_m, w_cq_row)?;
        let cw = tape.mul(c.var, w_cq_rows)?;
        let q_t = tape.transpose(q.var)?;
        let tcq = tape.matmul(cw, q_t)?;
        let sim = tape.add(tc, tq)?;
        let sim = tape.add(sim, tcq)?;
        let sim = mask_columns(tape, sim, q.valid)?;

        let alpha = tape.softmax_rows(sim)?;
        let u = tape.matmul(alpha, q.var)?;

        let sim_t = tape.transpose(sim)?;
        let row_max = tape.reduce_seq(sim_t, Reduce::Max)?;
        let row_max = tape.reshape(row_max, vec![1, m])?;
        let row_max = mask_columns(tape, row_max, c.valid)?;
        let beta = tape.softmax_rows(row_max)?;
        let v = tape.matmul(beta, c.var)?;
        let v_rows = tape.matmul(ones_m, v)?;

        let cv = tape.mul(c.var, v_rows)?;
        let cu = tape.mul(c.var, u)?;
        let g = tape.concat_last(&[c.var, v_rows, cv, cu])?;
        Ok(BiAttention { g, alpha, beta })
    }

    /// `[max_rows(G); mean_rows(G)]` over the valid rows.
    pub fn pool<T: Real>(&self, tape: &mut Tape<T>, g: Seq) -> Result<Var> {
        pool(tape, g)
    }

    /// Runs every block on the pair, then bidirectional attention and pooling.
    ///
    /// Block `t > 0` takes `proj([C_{t-1} : X])` as its input, so the original
    /// embedding is re-supplied to every iteration.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Seq,
        y: Seq,
    ) -> Result<MatchOutput> {
        let mut prev: Option<(Var, Var)> = None;
        let mut attention = None;
        for block in &self.blocks {
            let (ia, ib) = match (prev, &block.input_proj) {
                (Some((c, q)), Some(proj)) => {
                    let ja = tape.concat_last(&[c, x.var])?;
                    let jb = tape.concat_last(&[q, y.var])?;
                    (
                        proj.forward(tape, store, ja)?,
                        proj.forward(tape, store, jb)?,
                    )
                }
                _ => (x.var, y.var),
            };
            let ia = zero_padding_rows(tape, x.with(ia))?;
            let ib = zero_padding_rows(tape, y.with(ib))?;
            let p = self.encode(tape, store, block, x.with(ia))?.p;
            let h = self.encode(tape, store, block, y.with(ib))?.p;
            let co = self.co_attention(tape, store, block, x.with(p), y.with(h))?;
            let c = self.aggregate(tape, store, block, p, co.p_attn)?;
            let q = self.aggregate(tape, store, block, h, co.h_attn)?;
            prev = Some((c, q));
            attention = Some(co.weights);
        }
        let (c, q) = prev.expect("at least one block");
        let bi = self.bidirectional_attention(tape, store, x.with(c), y.with(q))?;
        let h = pool(tape, x.with(bi.g))?;
        Ok(MatchOutput {
            h,
            attention: attention.expect("at least one block"),
            bi,
        })
    }
}

pub fn pool<T: Real>(tape: &mut Tape<T>, g: Seq) -> Result<Var> {
    if g.valid == 0 {
        return Err(Error::EmptySequence("pool"));
    }
    let real = tape.slice_rows(g.var, 0, g.valid)?;
    let max = tape.reduce_seq(real, Reduce::Max)?;
    let mean = tape.reduce_seq(real, Reduce::Mean)?;
    tape.concat_last(&[max, mean])
}

/// Scaled dot-product self-attention with `heads` heads over the valid rows.
fn multi_head<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    params: &MultiHead,
    x: Seq,
) -> Result<(Var, Vec<Var>)> {
    let q = params.query.forward(tape, store, x.var)?;
    let k = params.key.forward(tape, store, x.var)?;
    let v = params.value.forward(tape, store, x.var)?;
    let width = tape.value(q).last_dim();
    let dh = width / params.heads;
    let scale = T::c(1.0 / (dh as f64).sqrt());
    let mut outs = Vec::with_capacity(params.heads);
    let mut weights = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = tape.slice_last(q, lo, hi)?;
        let kh = tape.slice_last(k, lo, hi)?;
        let vh = tape.slice_last(v, lo, hi)?;
        let kh_t = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kh_t)?;
        let scores = tape.scale(scores, scale);
        let scores = mask_columns(tape, scores, x.valid)?;
        let w = tape.softmax_rows(scores)?;
        outs.push(tape.matmul(w, vh)?);
        weights.push(w);
    }
    let joined = tape.concat_last(&outs)?;
    Ok((params.output.forward(tape, store, joined)?, weights))
}

/// Adds [`MASK_LOGIT`] to columns `valid..` so softmax ignores them. Records
/// nothing when every column is valid.
fn mask_columns<T: Real>(tape: &mut Tape<T>, logits: Var, valid: usize) -> Result<Var> {
    let (r, c) = tape.value(logits).dims2()?;
    if valid >= c {
        return Ok(logits);
    }
    if valid == 0 {
        return Err(Error::EmptySequence(
            "attention over a fully padded sequence",
        ));
    }
    let mut mask = vec![T::zero(); r * c];
    for row in mask.chunks_mut(c) {
        row[valid..].fill(T::c(MASK_LOGIT));
    }
    let mask = tape.constant(Tensor::new(vec![r, c], mask)?);
    tape.add(logits, mask)
}

/// Multiplies padding rows by zero. Records nothing for unpadded input.
fn zero_padding_rows<T: Real>(tape: &mut Tape<T>, x: Seq) -> Result<Var> {
    let (r, c) = tape.value(x.var).dims2()?;
    if x.valid >= r {
        return Ok(x.var);
    }
    let mut keep = vec![T::one(); r * c];
    keep[x.valid * c..].fill(T::zero());
    let keep = tape.constant(Tensor::new(vec![r, c], keep)?);
    tape.mul(x.var, keep)
}
