//! Parameter layout, initialization, and the checkpoint container.
//!
//! The layout is a flat, named list of matrices whose order is a pure
//! function of the [`ModelConfig`]; checkpoints serialize the raw arrays
//! in that order behind a JSON manifest and a SHA-256 body checksum.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::ModelError;

const CKPT_MAGIC: &[u8; 8] = b"VFCKPT01";

/// Named shapes in declared order.
#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub entries: Vec<(String, (usize, usize))>,
}

impl ParamSpec {
    /// Layout for the full architecture: four feature projections, the
    /// encoder stack, the location embedding, the decoder stack, a final
    /// layer norm, and the two output heads.
    pub fn for_config(cfg: &ModelConfig) -> Self {
        let n = cfg.embed_dim;
        let f = cfg.feature_width();
        let h = cfg.ffn_hidden();
        let m = cfg.mlp_hidden;
        let d = cfg.max_dim;
        let mut e: Vec<(String, (usize, usize))> = Vec::new();
        let mut push = |name: String, rows: usize, cols: usize| e.push((name, (rows, cols)));

        for (tag, rows) in [("y", d), ("dy", d), ("dy2", d), ("dtau", 1)] {
            push(format!("feat.{tag}.w"), rows, f);
            push(format!("feat.{tag}.b"), 1, f);
        }
        for l in 0..cfg.encoder_layers {
            push(format!("enc.{l}.ln1.g"), 1, n);
            push(format!("enc.{l}.ln1.b"), 1, n);
            push(format!("enc.{l}.attn.wq"), n, n);
            push(format!("enc.{l}.attn.wk"), n, n);
            push(format!("enc.{l}.attn.wv"), n, n);
            push(format!("enc.{l}.attn.wo"), n, n);
            push(format!("enc.{l}.attn.bo"), 1, n);
            push(format!("enc.{l}.ln2.g"), 1, n);
            push(format!("enc.{l}.ln2.b"), 1, n);
            push(format!("enc.{l}.ffn.w1"), n, h);
            push(format!("enc.{l}.ffn.b1"), 1, h);
            push(format!("enc.{l}.ffn.w2"), h, n);
            push(format!("enc.{l}.ffn.b2"), 1, n);
        }
        push("xembed.w".into(), d, n);
        push("xembed.b".into(), 1, n);
        for l in 0..cfg.decoder_blocks {
            push(format!("dec.{l}.ln1.g"), 1, n);
            push(format!("dec.{l}.ln1.b"), 1, n);
            push(format!("dec.{l}.attn.wq"), n, n);
            push(format!("dec.{l}.attn.wk"), n, n);
            push(format!("dec.{l}.attn.wv"), n, n);
            push(format!("dec.{l}.attn.wo"), n, n);
            push(format!("dec.{l}.attn.bo"), 1, n);
            push(format!("dec.{l}.ln2.g"), 1, n);
            push(format!("dec.{l}.ln2.b"), 1, n);
            push(format!("dec.{l}.ffn.w1"), n, h);
            push(format!("dec.{l}.ffn.b1"), 1, h);
            push(format!("dec.{l}.ffn.w2"), h, n);
            push(format!("dec.{l}.ffn.b2"), 1, n);
        }
        push("final.ln.g".into(), 1, n);
        push("final.ln.b".into(), 1, n);
        for (tag, out) in [("field", d), ("u", 1)] {
            push(format!("head.{tag}.w1"), n, m);
            push(format!("head.{tag}.b1"), 1, m);
            push(format!("head.{tag}.w2"), m, m);
            push(format!("head.{tag}.b2"), 1, m);
            push(format!("head.{tag}.w3"), m, out);
            push(format!("head.{tag}.b3"), 1, out);
        }
        Self { entries: e }
    }

    pub fn index_of(&self, name: &str) -> usize {
        self.entries
            .iter()
            .position(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|(_, (r, c))| r * c).sum()
    }
}

/// The learnable state. Arrays are shared so graphs can reference them
/// without copying; the optimizer replaces them wholesale each step.
#[derive(Debug, Clone)]
pub struct ParamSet {
    pub arrays: Vec<Arc<Array2<f64>>>,
}

impl ParamSet {
    /// Xavier-uniform weights, zero biases, unit layer-norm gains. The
    /// draw order follows the spec order so initialization is stable.
    pub fn init<R: Rng>(spec: &ParamSpec, rng: &mut R) -> Self {
        let arrays = spec
            .entries
            .iter()
            .map(|&(ref name, (r, c))| {
                let last = name.rsplit('.').next().unwrap();
                let a = if last == "g" {
                    Array2::ones((r, c))
                } else if last.starts_with('b') {
                    Array2::zeros((r, c))
                } else {
                    let limit = (6.0 / (r + c) as f64).sqrt();
                    Array2::from_shape_fn((r, c), |_| rng.gen_range(-limit..limit))
                };
                Arc::new(a)
            })
            .collect();
        Self { arrays }
    }

    /// Uniform init in [-limit, limit] for every entry; test helper.
    pub fn init_uniform<R: Rng>(spec: &ParamSpec, limit: f64, rng: &mut R) -> Self {
        let arrays = spec
            .entries
            .iter()
            .map(|&(_, (r, c))| Arc::new(Array2::from_shape_fn((r, c), |_| rng.gen_range(-limit..limit))))
            .collect();
        Self { arrays }
    }

    pub fn total_scalars(&self) -> usize {
        self.arrays.iter().map(|a| a.nrows() * a.ncols()).sum()
    }
}

/// Checkpoint manifest fields; shapes are re-derived from the config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub config: ModelConfig,
    pub step: u64,
    pub run_seed: u64,
}

pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamSet,
}

/// Write a checkpoint: magic, manifest length + JSON, raw little-endian
/// f64 arrays in spec order, SHA-256 of everything after the magic.
pub fn save_checkpoint(path: &Path, meta: &CheckpointMeta, params: &ParamSet) -> Result<(), ModelError> {
    let spec = ParamSpec::for_config(&meta.config);
    if spec.entries.len() != params.arrays.len() {
        return Err(ModelError::Format("parameter count does not match config".into()));
    }
    let manifest = serde_json::to_vec(meta).map_err(|e| ModelError::Format(e.to_string()))?;

    let mut body: Vec<u8> = Vec::new();
    body.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    body.extend_from_slice(&manifest);
    for ((_, (r, c)), arr) in spec.entries.iter().zip(&params.arrays) {
        assert_eq!(arr.dim(), (*r, *c), "array shape drifted from spec");
        for v in arr.iter() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&body);

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&body)?;
    w.write_all(&digest)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(ModelError::Format("bad checkpoint magic".into()));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if rest.len() < 32 {
        return Err(ModelError::Format("checkpoint truncated".into()));
    }
    let (body, digest) = rest.split_at(rest.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(ModelError::Format("checkpoint checksum mismatch".into()));
    }

    let mut cur = body;
    let mut take = |n: usize| -> Result<&[u8], ModelError> {
        if cur.len() < n {
            return Err(ModelError::Format("checkpoint truncated".into()));
        }
        let (head, tail) = cur.split_at(n);
        cur = tail;
        Ok(head)
    };
    let mlen = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let meta: CheckpointMeta =
        serde_json::from_slice(take(mlen)?).map_err(|e| ModelError::Format(e.to_string()))?;
    if meta.format_version != 1 {
        return Err(ModelError::Format(format!(
            "unsupported checkpoint version {}",
            meta.format_version
        )));
    }
    meta.config.validate()?;

    let spec = ParamSpec::for_config(&meta.config);
    let mut arrays = Vec::with_capacity(spec.entries.len());
    for (_, (rows, cols)) in &spec.entries {
        let bytes = take(rows * cols * 8)?;
        let mut a = Array2::zeros((*rows, *cols));
        for (v, chunk) in a.iter_mut().zip(bytes.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        arrays.push(Arc::new(a));
    }
    if !cur.is_empty() {
        return Err(ModelError::Format("trailing bytes after parameters".into()));
    }
    Ok(Checkpoint {
        meta,
        params: ParamSet { arrays },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spec_shapes_are_consistent() {
        let cfg = ModelConfig::tiny();
        let spec = ParamSpec::for_config(&cfg);
        assert!(spec.total_scalars() > 0);
        // biases are rows, weights are matrices
        for (name, (r, _)) in &spec.entries {
            if name.ends_with(".b") || name.ends_with(".g") {
                assert_eq!(*r, 1, "{name}");
            }
        }
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::tiny();
        let spec = ParamSpec::for_config(&cfg);
        let a = ParamSet::init(&spec, &mut ChaCha8Rng::seed_from_u64(1));
        let b = ParamSet::init(&spec, &mut ChaCha8Rng::seed_from_u64(1));
        for (x, y) in a.arrays.iter().zip(&b.arrays) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let cfg = ModelConfig::tiny();
        let spec = ParamSpec::for_config(&cfg);
        let params = ParamSet::init(&spec, &mut ChaCha8Rng::seed_from_u64(7));
        let meta = CheckpointMeta {
            format_version: 1,
            config: cfg,
            step: 123,
            run_seed: 42,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &meta, &params).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.meta.step, 123);
        assert_eq!(loaded.meta.run_seed, 42);
        for (x, y) in params.arrays.iter().zip(&loaded.params.arrays) {
            assert_eq!(x.as_ref(), y.as_ref());
        }
    }

    #[test]
    fn corrupted_checkpoint_is_rejected() {
        let cfg = ModelConfig::tiny();
        let spec = ParamSpec::for_config(&cfg);
        let params = ParamSet::init(&spec, &mut ChaCha8Rng::seed_from_u64(7));
        let meta = CheckpointMeta {
            format_version: 1,
            config: cfg,
            step: 1,
            run_seed: 2,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &meta, &params).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(ModelError::Format(_))));
    }
}
