//! The neural operator: transition embedding, a linear self-attention
//! encoder over the context set, and a softmax cross-attention decoder
//! that turns query locations into normalized field estimates plus a
//! log-variance.
//!
//! The forward pass is generic over [`Cx`] so inference and training run
//! the same code path.

use crate::config::ModelConfig;
use crate::error::ModelError;
use crate::features::{FEATURE_COLS, MAX_DIM};
use crate::graph::Cx;
use crate::params::ParamSpec;

const MASK_NEG: f64 = -1e30;

/// Parameter handle indices resolved once per configuration.
#[derive(Debug, Clone)]
struct Layout {
    feat: Vec<(usize, usize)>,
    enc: Vec<AttnBlock>,
    xembed: (usize, usize),
    dec: Vec<AttnBlock>,
    final_ln: (usize, usize),
    head_field: [usize; 6],
    head_u: [usize; 6],
}

#[derive(Debug, Clone)]
struct AttnBlock {
    ln1: (usize, usize),
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    bo: usize,
    ln2: (usize, usize),
    ffn: [usize; 4],
}

fn resolve_block(spec: &ParamSpec, prefix: &str) -> AttnBlock {
    let ix = |suffix: &str| spec.index_of(&format!("{prefix}.{suffix}"));
    AttnBlock {
        ln1: (ix("ln1.g"), ix("ln1.b")),
        wq: ix("attn.wq"),
        wk: ix("attn.wk"),
        wv: ix("attn.wv"),
        wo: ix("attn.wo"),
        bo: ix("attn.bo"),
        ln2: (ix("ln2.g"), ix("ln2.b")),
        ffn: [ix("ffn.w1"), ix("ffn.b1"), ix("ffn.w2"), ix("ffn.b2")],
    }
}

/// The architecture plus its resolved parameter layout.
#[derive(Debug, Clone)]
pub struct ModelNet {
    pub cfg: ModelConfig,
    spec: ParamSpec,
    layout: Layout,
}

/// Per-graph parameter handles, aligned with the spec order.
pub struct Bound<H>(pub Vec<H>);

/// Cached per-block key/value projections of the encoded context.
pub struct DecoderCache<H> {
    pub kv: Vec<(H, H)>,
    /// Additive logit bias row masking invalid context positions.
    pub mask_bias: Option<Vec<f64>>,
}

impl ModelNet {
    pub fn new(cfg: ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let spec = ParamSpec::for_config(&cfg);
        let feat = ["y", "dy", "dy2", "dtau"]
            .iter()
            .map(|t| {
                (
                    spec.index_of(&format!("feat.{t}.w")),
                    spec.index_of(&format!("feat.{t}.b")),
                )
            })
            .collect();
        let enc = (0..cfg.encoder_layers)
            .map(|l| resolve_block(&spec, &format!("enc.{l}")))
            .collect();
        let dec = (0..cfg.decoder_blocks)
            .map(|l| resolve_block(&spec, &format!("dec.{l}")))
            .collect();
        let head = |tag: &str| -> [usize; 6] {
            [
                spec.index_of(&format!("head.{tag}.w1")),
                spec.index_of(&format!("head.{tag}.b1")),
                spec.index_of(&format!("head.{tag}.w2")),
                spec.index_of(&format!("head.{tag}.b2")),
                spec.index_of(&format!("head.{tag}.w3")),
                spec.index_of(&format!("head.{tag}.b3")),
            ]
        };
        let layout = Layout {
            feat,
            enc,
            xembed: (spec.index_of("xembed.w"), spec.index_of("xembed.b")),
            dec,
            final_ln: (spec.index_of("final.ln.g"), spec.index_of("final.ln.b")),
            head_field: head("field"),
            head_u: head("u"),
        };
        Ok(Self { cfg, spec, layout })
    }

    pub fn spec(&self) -> &ParamSpec {
        &self.spec
    }

    pub fn bind<C: Cx>(&self, cx: &mut C) -> Bound<C::H> {
        Bound((0..self.spec.entries.len()).map(|i| cx.param(i)).collect())
    }

    /// Project the four feature components to width n/4 each and concat.
    pub fn embed_transitions<C: Cx>(&self, cx: &mut C, p: &Bound<C::H>, feats: &C::H) -> C::H {
        debug_assert_eq!(cx.value(feats).ncols(), FEATURE_COLS);
        let ranges = [(0, MAX_DIM), (MAX_DIM, MAX_DIM), (2 * MAX_DIM, MAX_DIM), (3 * MAX_DIM, 1)];
        let mut parts = Vec::with_capacity(4);
        for (k, (start, len)) in ranges.into_iter().enumerate() {
            let (wi, bi) = self.layout.feat[k];
            let sl = cx.slice_cols(feats, start, len);
            let pr = cx.matmul(&sl, &p.0[wi]);
            parts.push(cx.add_row(&pr, &p.0[bi]));
        }
        cx.concat_cols(&parts)
    }

    fn linear_attention<C: Cx>(
        &self,
        cx: &mut C,
        p: &Bound<C::H>,
        blk: &AttnBlock,
        x: &C::H,
        mask: Option<&[f64]>,
    ) -> C::H {
        let w = self.cfg.head_width();
        let q = cx.matmul(x, &p.0[blk.wq]);
        let k = cx.matmul(x, &p.0[blk.wk]);
        let v = cx.matmul(x, &p.0[blk.wv]);
        let qf = cx.elu1(&q);
        let kf = cx.elu1(&k);
        // Invalid rows must contribute nothing to the key/value sums.
        let (kf, v) = match mask {
            Some(m) => (cx.mask_rows(&kf, m), cx.mask_rows(&v, m)),
            None => (kf, v),
        };
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let qh = cx.slice_cols(&qf, h * w, w);
            let kh = cx.slice_cols(&kf, h * w, w);
            let vh = cx.slice_cols(&v, h * w, w);
            let kv = cx.matmul_ta(&kh, &vh); // w x w
            let ksum = cx.sum_rows(&kh); // 1 x w
            let num = cx.matmul(&qh, &kv); // J x w
            let den = cx.matmul_tb(&qh, &ksum); // J x 1
            heads.push(cx.div_col(&num, &den));
        }
        let cat = cx.concat_cols(&heads);
        let out = cx.matmul(&cat, &p.0[blk.wo]);
        cx.add_row(&out, &p.0[blk.bo])
    }

    fn ffn<C: Cx>(&self, cx: &mut C, p: &Bound<C::H>, blk: &AttnBlock, x: &C::H) -> C::H {
        let h = cx.matmul(x, &p.0[blk.ffn[0]]);
        let h = cx.add_row(&h, &p.0[blk.ffn[1]]);
        let h = cx.gelu(&h);
        let h = cx.matmul(&h, &p.0[blk.ffn[2]]);
        cx.add_row(&h, &p.0[blk.ffn[3]])
    }

    /// Encode embedded transitions (J x n) into the context matrix C.
    /// Pre-norm residual blocks with kernelized linear self-attention.
    pub fn encode<C: Cx>(
        &self,
        cx: &mut C,
        p: &Bound<C::H>,
        embedded: &C::H,
        mask: Option<&[f64]>,
    ) -> Result<C::H, ModelError> {
        if let Some(m) = mask {
            if m.iter().all(|&v| v == 0.0) {
                return Err(ModelError::AllMasked);
            }
        }
        if cx.value(embedded).nrows() == 0 {
            return Err(ModelError::EmptyContext);
        }
        let mut x = embedded.clone();
        for blk in &self.layout.enc {
            let ln = cx.layer_norm(&x, &p.0[blk.ln1.0], &p.0[blk.ln1.1]);
            let att = self.linear_attention(cx, p, blk, &ln, mask);
            let att = cx.dropout(&att, self.cfg.dropout);
            x = cx.add(&x, &att);
            let ln2 = cx.layer_norm(&x, &p.0[blk.ln2.0], &p.0[blk.ln2.1]);
            let f = self.ffn(cx, p, blk, &ln2);
            let f = cx.dropout(&f, self.cfg.dropout);
            x = cx.add(&x, &f);
        }
        Ok(x)
    }

    /// Precompute per-block key/value projections of the context.
    pub fn decoder_cache<C: Cx>(
        &self,
        cx: &mut C,
        p: &Bound<C::H>,
        context: &C::H,
        mask: Option<&[f64]>,
    ) -> DecoderCache<C::H> {
        let kv = self
            .layout
            .dec
            .iter()
            .map(|blk| {
                let k = cx.matmul(context, &p.0[blk.wk]);
                let v = cx.matmul(context, &p.0[blk.wv]);
                (k, v)
            })
            .collect();
        let mask_bias = mask.map(|m| {
            m.iter()
                .map(|&v| if v == 0.0 { MASK_NEG } else { 0.0 })
                .collect()
        });
        DecoderCache { kv, mask_bias }
    }

    fn head<C: Cx>(&self, cx: &mut C, p: &Bound<C::H>, idx: &[usize; 6], x: &C::H) -> C::H {
        let h = cx.matmul(x, &p.0[idx[0]]);
        let h = cx.add_row(&h, &p.0[idx[1]]);
        let h = cx.gelu(&h);
        let h = cx.matmul(&h, &p.0[idx[2]]);
        let h = cx.add_row(&h, &p.0[idx[3]]);
        let h = cx.gelu(&h);
        let h = cx.matmul(&h, &p.0[idx[4]]);
        cx.add_row(&h, &p.0[idx[5]])
    }

    /// Decode queries (Q x max_dim, normalized coordinates) against the
    /// cached context: returns the normalized field estimate (Q x max_dim)
    /// and the log-variance column (Q x 1).
    pub fn decode<C: Cx>(
        &self,
        cx: &mut C,
        p: &Bound<C::H>,
        cache: &DecoderCache<C::H>,
        queries: &C::H,
    ) -> (C::H, C::H) {
        let w = self.cfg.head_width();
        let emb = cx.matmul(queries, &p.0[self.layout.xembed.0]);
        let mut h = cx.add_row(&emb, &p.0[self.layout.xembed.1]);
        let scale = 1.0 / (w as f64).sqrt();
        for (blk, (kc, vc)) in self.layout.dec.iter().zip(&cache.kv) {
            let ln = cx.layer_norm(&h, &p.0[blk.ln1.0], &p.0[blk.ln1.1]);
            let q = cx.matmul(&ln, &p.0[blk.wq]);
            let mut heads = Vec::with_capacity(self.cfg.heads);
            for hd in 0..self.cfg.heads {
                let qh = cx.slice_cols(&q, hd * w, w);
                let kh = cx.slice_cols(kc, hd * w, w);
                let vh = cx.slice_cols(vc, hd * w, w);
                let logits = cx.matmul_tb(&qh, &kh);
                let logits = cx.scale(&logits, scale);
                let attn = cx.softmax_rows(&logits, cache.mask_bias.as_deref());
                heads.push(cx.matmul(&attn, &vh));
            }
            let cat = cx.concat_cols(&heads);
            let out = cx.matmul(&cat, &p.0[blk.wo]);
            let out = cx.add_row(&out, &p.0[blk.bo]);
            let out = cx.dropout(&out, self.cfg.dropout);
            h = cx.add(&h, &out);
            let ln2 = cx.layer_norm(&h, &p.0[blk.ln2.0], &p.0[blk.ln2.1]);
            let f = self.ffn(cx, p, blk, &ln2);
            let f = cx.dropout(&f, self.cfg.dropout);
            h = cx.add(&h, &f);
        }
        let hf = cx.layer_norm(&h, &p.0[self.layout.final_ln.0], &p.0[self.layout.final_ln.1]);
        let field = self.head(cx, p, &self.layout.head_field, &hf);
        let u = self.head(cx, p, &self.layout.head_u, &hf);
        (field, u)
    }
}
