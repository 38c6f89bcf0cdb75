use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{GraphCtx, Var};
use super::{Matrix, TensorError};

/// Transformer block dimensions shared by the program encoder and the TFM
/// backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub max_seq_len: usize,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 || self.d_ff == 0 {
            return Err(TensorError::Config(
                "d_model, n_heads, n_layers, d_ff must be positive".into(),
            ));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(TensorError::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TensorError::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Allow/deny attention mask; entry (i, j) > 0 lets position i attend to j.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask(pub Matrix);

impl AttentionMask {
    pub fn full(seq: usize) -> Self {
        AttentionMask(Array2::from_elem((seq, seq), 1.0))
    }

    pub fn self_only(seq: usize) -> Self {
        AttentionMask(Array2::from_shape_fn((seq, seq), |(i, j)| {
            if i == j {
                1.0
            } else {
                0.0
            }
        }))
    }

    pub fn seq_len(&self) -> usize {
        self.0.nrows()
    }
}

/// Parameter names used by one transformer block under `prefix`.
pub struct BlockParamNames;

impl BlockParamNames {
    pub fn all(prefix: &str) -> Vec<String> {
        [
            "ln1.g", "ln1.b", "attn.wq", "attn.wk", "attn.wv", "attn.wo", "attn.bo", "ln2.g",
            "ln2.b", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2",
        ]
        .iter()
        .map(|s| format!("{prefix}.{s}"))
        .collect()
    }
}

/// Pre-norm transformer block: multi-head self-attention with residual, then
/// a GELU feed-forward with residual. Denied mask entries get exactly zero
/// attention weight; rows of attention over allowed entries sum to 1.
pub fn forward_block(
    ctx: &mut GraphCtx,
    x: Var,
    prefix: &str,
    cfg: &TransformerConfig,
    mask: &AttentionMask,
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<Var, TensorError> {
    let (seq, d) = ctx.tape.value(x).dim();
    if d != cfg.d_model {
        return Err(TensorError::ShapeMismatch {
            expected: format!("(seq, {})", cfg.d_model),
            got: format!("({seq}, {d})"),
            context: "forward_block input",
        });
    }
    if mask.0.dim() != (seq, seq) {
        return Err(TensorError::ShapeMismatch {
            expected: format!("({seq}, {seq})"),
            got: format!("{:?}", mask.0.dim()),
            context: "forward_block mask",
        });
    }

    let d_head = cfg.d_model / cfg.n_heads;
    let scale = 1.0 / (d_head as f64).sqrt();

    let g1 = ctx.param_const(&format!("{prefix}.ln1.g"), 1, d, 1.0);
    let b1 = ctx.param_const(&format!("{prefix}.ln1.b"), 1, d, 0.0);
    let normed = ctx.tape.layer_norm(x, g1, b1);

    let wq = ctx.param(&format!("{prefix}.attn.wq"), d, d, d);
    let wk = ctx.param(&format!("{prefix}.attn.wk"), d, d, d);
    let wv = ctx.param(&format!("{prefix}.attn.wv"), d, d, d);
    let q = ctx.tape.matmul(normed, wq);
    let k = ctx.tape.matmul(normed, wk);
    let v = ctx.tape.matmul(normed, wv);

    let mut head_outputs = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let from = h * d_head;
        let to = from + d_head;
        let qh = ctx.tape.slice_cols(q, from, to);
        let kh = ctx.tape.slice_cols(k, from, to);
        let vh = ctx.tape.slice_cols(v, from, to);
        let kht = ctx.tape.transpose(kh);
        let scores = ctx.tape.matmul(qh, kht);
        let scores = ctx.tape.scale(scores, scale);
        let weights = ctx.tape.row_softmax_masked(scores, &mask.0);
        let out = ctx.tape.matmul(weights, vh);
        head_outputs.push(out);
    }
    let concat = if head_outputs.len() == 1 {
        head_outputs[0]
    } else {
        ctx.tape.concat_cols(&head_outputs)
    };

    let wo = ctx.param(&format!("{prefix}.attn.wo"), d, d, d);
    let bo = ctx.param_const(&format!("{prefix}.attn.bo"), 1, d, 0.0);
    let projected = ctx.tape.matmul(concat, wo);
    let mut attn_out = ctx.tape.add_row_broadcast(projected, bo);
    if let Some(rng) = dropout {
        attn_out = apply_dropout(ctx, attn_out, cfg.dropout, rng);
        let x1 = ctx.tape.add(x, attn_out);
        return finish_ffn(ctx, x1, prefix, cfg, Some(rng));
    }
    let x1 = ctx.tape.add(x, attn_out);
    finish_ffn(ctx, x1, prefix, cfg, None)
}

fn finish_ffn(
    ctx: &mut GraphCtx,
    x1: Var,
    prefix: &str,
    cfg: &TransformerConfig,
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<Var, TensorError> {
    let d = cfg.d_model;
    let g2 = ctx.param_const(&format!("{prefix}.ln2.g"), 1, d, 1.0);
    let b2 = ctx.param_const(&format!("{prefix}.ln2.b"), 1, d, 0.0);
    let normed = ctx.tape.layer_norm(x1, g2, b2);

    let w1 = ctx.param(&format!("{prefix}.ffn.w1"), d, cfg.d_ff, d);
    let b1 = ctx.param_const(&format!("{prefix}.ffn.b1"), 1, cfg.d_ff, 0.0);
    let w2 = ctx.param(&format!("{prefix}.ffn.w2"), cfg.d_ff, d, cfg.d_ff);
    let b2f = ctx.param_const(&format!("{prefix}.ffn.b2"), 1, d, 0.0);

    let h = ctx.tape.matmul(normed, w1);
    let h = ctx.tape.add_row_broadcast(h, b1);
    let h = ctx.tape.gelu(h);
    let h = ctx.tape.matmul(h, w2);
    let mut ff = ctx.tape.add_row_broadcast(h, b2f);
    if let Some(rng) = dropout {
        ff = apply_dropout(ctx, ff, cfg.dropout, rng);
    }
    Ok(ctx.tape.add(x1, ff))
}

fn apply_dropout(ctx: &mut GraphCtx, x: Var, rate: f64, rng: &mut ChaCha8Rng) -> Var {
    if rate <= 0.0 {
        return x;
    }
    let keep = 1.0 - rate;
    let shape = ctx.tape.value(x).dim();
    let mask = Array2::from_shape_fn(shape, |_| {
        if rng.random::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    });
    ctx.tape.mul_const_mask(x, &mask)
}

/// Standalone layer-norm helper for code outside a transformer block.
pub fn layer_norm(ctx: &mut GraphCtx, x: Var, name_prefix: &str) -> Var {
    let d = ctx.tape.value(x).ncols();
    let g = ctx.param_const(&format!("{name_prefix}.g"), 1, d, 1.0);
    let b = ctx.param_const(&format!("{name_prefix}.b"), 1, d, 0.0);
    ctx.tape.layer_norm(x, g, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_engine::ParamStore;

    fn tiny_cfg() -> TransformerConfig {
        TransformerConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 16,
            dropout: 0.0,
            max_seq_len: 32,
        }
    }

    #[test]
    fn output_shape_matches_input() {
        let mut store = ParamStore::new(3);
        let mut ctx = GraphCtx::new(&mut store);
        let x = ctx.tape.constant(Array2::from_elem((5, 8), 0.3));
        let y = forward_block(&mut ctx, x, "blk", &tiny_cfg(), &AttentionMask::full(5), None)
            .unwrap();
        assert_eq!(ctx.tape.value(y).dim(), (5, 8));
    }

    #[test]
    fn diagonal_mask_attends_only_to_self() {
        // With a self-only mask each position's attention mixes only its own
        // value projection, so two inputs differing in row r must produce
        // attention outputs differing only in row r.
        let cfg = tiny_cfg();
        let mut store = ParamStore::new(5);
        let base = Array2::from_shape_fn((4, 8), |(i, j)| (i * 8 + j) as f64 * 0.01);
        let mut other = base.clone();
        other[[2, 3]] += 1.0;

        let mut out = Vec::new();
        for input in [base, other] {
            let mut ctx = GraphCtx::new(&mut store);
            let x = ctx.tape.constant(input);
            let y =
                forward_block(&mut ctx, x, "blk", &cfg, &AttentionMask::self_only(4), None)
                    .unwrap();
            out.push(ctx.tape.value(y).clone());
        }
        for r in [0usize, 1, 3] {
            assert_eq!(out[0].row(r), out[1].row(r), "row {r} should be untouched");
        }
        assert_ne!(out[0].row(2), out[1].row(2));
    }

    #[test]
    fn dropout_zero_is_deterministic() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::new(9);
        let input = Array2::from_elem((3, 8), 0.5);
        let mut outs = Vec::new();
        for seed in [1u64, 2] {
            let mut rng = rand::SeedableRng::seed_from_u64(seed);
            let mut ctx = GraphCtx::new(&mut store);
            let x = ctx.tape.constant(input.clone());
            let y = forward_block(
                &mut ctx,
                x,
                "blk",
                &cfg,
                &AttentionMask::full(3),
                Some(&mut rng),
            )
            .unwrap();
            outs.push(ctx.tape.value(y).clone());
        }
        assert_eq!(outs[0], outs[1]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut store = ParamStore::new(3);
        let mut ctx = GraphCtx::new(&mut store);
        let x = ctx.tape.constant(Array2::from_elem((5, 4), 0.0));
        let err = forward_block(&mut ctx, x, "blk", &tiny_cfg(), &AttentionMask::full(5), None);
        assert!(err.is_err());
    }
}
