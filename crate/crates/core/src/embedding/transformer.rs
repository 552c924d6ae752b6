//! Pre-norm transformer text encoder pooled at the `<cls>` position.

use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tokenizer::BpeTokenizer;
use super::EmbeddingMatrix;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::optim::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextEncoderConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub out_dim: usize,
    /// Token cap including the leading `<cls>`.
    pub max_len: usize,
    /// Target BPE vocabulary size.
    pub vocab_size: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            width: 128,
            heads: 4,
            ffn_mult: 4,
            out_dim: 128,
            max_len: 128,
            vocab_size: 4096,
        }
    }
}

impl TextEncoderConfig {
    /// One narrow layer; used for frozen feature pooling and quick runs.
    pub fn small() -> Self {
        Self {
            layers: 1,
            width: 32,
            heads: 2,
            ffn_mult: 2,
            out_dim: 32,
            max_len: 128,
            vocab_size: 1024,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "text encoder width {} must be a positive multiple of heads {} with layers >= 1",
                self.width, self.heads
            )));
        }
        if self.out_dim == 0 || self.ffn_mult == 0 || self.max_len == 0 {
            return Err(Error::Config("text encoder dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerSlots {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
struct Slots {
    tok_emb: usize,
    pos_emb: usize,
    layers: Vec<LayerSlots>,
    lnf_g: usize,
    lnf_b: usize,
    proj: usize,
}

fn layer_shapes(c: &TextEncoderConfig, i: usize) -> Vec<(String, (usize, usize))> {
    let w = c.width;
    let f = c.width * c.ffn_mult;
    [
        ("ln1.g", (1, w)),
        ("ln1.b", (1, w)),
        ("wq", (w, w)),
        ("bq", (1, w)),
        ("wk", (w, w)),
        ("bk", (1, w)),
        ("wv", (w, w)),
        ("bv", (1, w)),
        ("wo", (w, w)),
        ("bo", (1, w)),
        ("ln2.g", (1, w)),
        ("ln2.b", (1, w)),
        ("w1", (w, f)),
        ("b1", (1, f)),
        ("w2", (f, w)),
        ("b2", (1, w)),
    ]
    .into_iter()
    .map(|(n, s)| (format!("l{i}.{n}"), s))
    .collect()
}

fn all_shapes(c: &TextEncoderConfig, vocab: usize) -> Vec<(String, (usize, usize))> {
    let mut out = vec![
        ("tok_emb".to_string(), (vocab, c.width)),
        ("pos_emb".to_string(), (c.max_len, c.width)),
    ];
    for i in 0..c.layers {
        out.extend(layer_shapes(c, i));
    }
    out.push(("lnf.g".into(), (1, c.width)));
    out.push(("lnf.b".into(), (1, c.width)));
    out.push(("proj".into(), (c.width, c.out_dim)));
    out
}

fn resolve(params: &ParamSet, layers: usize) -> Slots {
    let s = |n: &str| params.slot(n).expect("tensor present");
    Slots {
        tok_emb: s("tok_emb"),
        pos_emb: s("pos_emb"),
        layers: (0..layers)
            .map(|i| {
                let l = |n: &str| s(&format!("l{i}.{n}"));
                LayerSlots {
                    ln1_g: l("ln1.g"),
                    ln1_b: l("ln1.b"),
                    wq: l("wq"),
                    bq: l("bq"),
                    wk: l("wk"),
                    bk: l("bk"),
                    wv: l("wv"),
                    bv: l("bv"),
                    wo: l("wo"),
                    bo: l("bo"),
                    ln2_g: l("ln2.g"),
                    ln2_b: l("ln2.b"),
                    w1: l("w1"),
                    b1: l("b1"),
                    w2: l("w2"),
                    b2: l("b2"),
                }
            })
            .collect(),
        lnf_g: s("lnf.g"),
        lnf_b: s("lnf.b"),
        proj: s("proj"),
    }
}

#[derive(Debug, Clone)]
pub struct TextEncoder {
    config: TextEncoderConfig,
    tokenizer: BpeTokenizer,
    params: ParamSet,
    slots: Slots,
}

impl PartialEq for TextEncoder {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.tokenizer == other.tokenizer && self.params == other.params
    }
}

const LN_EPS: f64 = 1e-5;

impl TextEncoder {
    pub fn new(config: TextEncoderConfig, tokenizer: BpeTokenizer, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        for (name, (r, c)) in all_shapes(&config, tokenizer.vocab_len()) {
            if name.ends_with("emb") {
                params.push(name, Array2::from_shape_fn((r, c), |_| rng.random_range(-0.1..0.1)));
            } else if name.ends_with(".g") {
                params.push(name, Array2::ones((r, c)));
            } else if r == 1 {
                params.push(name, Array2::zeros((r, c)));
            } else {
                params.push_xavier(name, r, c, rng);
            }
        }
        let slots = resolve(&params, config.layers);
        Ok(Self {
            config,
            tokenizer,
            params,
            slots,
        })
    }

    pub fn from_params(config: TextEncoderConfig, tokenizer: BpeTokenizer, stored: &ParamSet) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        for (name, shape) in all_shapes(&config, tokenizer.vocab_len()) {
            let t = stored
                .by_name(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing text-encoder tensor {name}")))?;
            if t.dim() != shape {
                return Err(Error::Shape(format!("tensor {name} is {:?}, expected {shape:?}", t.dim())));
            }
            params.push(name, t.clone());
        }
        let slots = resolve(&params, config.layers);
        Ok(Self {
            config,
            tokenizer,
            params,
            slots,
        })
    }

    pub fn config(&self) -> &TextEncoderConfig {
        &self.config
    }

    pub fn tokenizer(&self) -> &BpeTokenizer {
        &self.tokenizer
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        self.tokenizer.encode(text)
    }

    /// Records the forward pass for pre-tokenized sequences; returns
    /// `batch × out_dim`. `vars` are parameter leaves in [`TextEncoder::params`] order.
    pub fn forward(&self, tape: &mut Tape, seqs: &[&[u32]], vars: &[Var]) -> Var {
        let mut ids = Vec::new();
        let mut pos = Vec::new();
        let mut segments = Vec::with_capacity(seqs.len());
        let mut starts = Vec::with_capacity(seqs.len());
        for seq in seqs {
            let seq = &seq[..seq.len().min(self.config.max_len)];
            starts.push(ids.len());
            segments.push((ids.len(), seq.len()));
            ids.extend(seq.iter().map(|&t| t as usize));
            pos.extend(0..seq.len());
        }
        let segments = Rc::new(segments);
        let s = &self.slots;
        let tok = tape.gather(vars[s.tok_emb], Rc::new(ids));
        let p = tape.gather(vars[s.pos_emb], Rc::new(pos));
        let mut x = tape.add(tok, p);
        for l in &s.layers {
            let a = tape.layer_norm(x, vars[l.ln1_g], vars[l.ln1_b], LN_EPS);
            let q = tape.matmul(a, vars[l.wq]);
            let q = tape.add_row(q, vars[l.bq]);
            let k = tape.matmul(a, vars[l.wk]);
            let k = tape.add_row(k, vars[l.bk]);
            let v = tape.matmul(a, vars[l.wv]);
            let v = tape.add_row(v, vars[l.bv]);
            let att = tape.attention(q, k, v, Rc::clone(&segments), self.config.heads);
            let o = tape.matmul(att, vars[l.wo]);
            let o = tape.add_row(o, vars[l.bo]);
            x = tape.add(x, o);
            let f = tape.layer_norm(x, vars[l.ln2_g], vars[l.ln2_b], LN_EPS);
            let f = tape.matmul(f, vars[l.w1]);
            let f = tape.add_row(f, vars[l.b1]);
            let f = tape.gelu(f);
            let f = tape.matmul(f, vars[l.w2]);
            let f = tape.add_row(f, vars[l.b2]);
            x = tape.add(x, f);
        }
        let x = tape.layer_norm(x, vars[s.lnf_g], vars[s.lnf_b], LN_EPS);
        let pooled = tape.gather(x, Rc::new(starts));
        tape.matmul(pooled, vars[s.proj])
    }

    /// Inference-mode encoding, one row per text.
    pub fn encode(&self, texts: &[String]) -> EmbeddingMatrix {
        let tokens: Vec<Vec<u32>> = texts.iter().map(|t| self.tokenize(t)).collect();
        self.encode_tokens(&tokens)
    }

    pub fn encode_tokens(&self, tokens: &[Vec<u32>]) -> EmbeddingMatrix {
        let mut out = Array2::zeros((tokens.len(), self.config.out_dim));
        for (chunk_no, chunk) in tokens.chunks(256).enumerate() {
            let mut tape = Tape::new();
            let vars: Vec<Var> = self.params.values().iter().map(|p| tape.leaf(p.clone())).collect();
            let seqs: Vec<&[u32]> = chunk.iter().map(Vec::as_slice).collect();
            let h = self.forward(&mut tape, &seqs, &vars);
            let base = chunk_no * 256;
            out.slice_mut(ndarray::s![base..base + chunk.len(), ..]).assign(tape.value(h));
        }
        EmbeddingMatrix(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::max_rel_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> TextEncoder {
        let corpus: Vec<String> = ["graph neural network", "genetic algorithm search", "reward policy agent"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let config = TextEncoderConfig {
            layers: 2,
            width: 8,
            heads: 2,
            ffn_mult: 2,
            out_dim: 4,
            max_len: 6,
            vocab_size: 64,
        };
        let tok = BpeTokenizer::train(&corpus, config.vocab_size, config.max_len);
        TextEncoder::new(config, tok, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn deterministic_and_shaped() {
        let enc = tiny();
        let texts: Vec<String> = vec!["graph search".into(), "".into(), "graph search".into()];
        let h = enc.encode(&texts);
        assert_eq!(h.dim(), 4);
        assert_eq!(h.rows(), 3);
        assert_eq!(h.as_array().row(0), h.as_array().row(2));
        assert!(h.as_array().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn truncation_makes_long_text_equal_prefix() {
        let enc = tiny();
        // both exceed the 6-token cap and share their first 6 tokens
        let long = "graph ".repeat(40);
        let prefix = "graph ".repeat(enc.config().max_len - 1);
        assert_eq!(enc.tokenize(&long), enc.tokenize(&prefix));
        let h = enc.encode(&[long, prefix]);
        assert_eq!(h.as_array().row(0), h.as_array().row(1));
    }

    #[test]
    fn trailing_whitespace_ignored() {
        let enc = tiny();
        let h = enc.encode(&["reward policy".into(), "reward policy  \n\t".into()]);
        assert_eq!(h.as_array().row(0), h.as_array().row(1));
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let enc = tiny();
        let seqs: Vec<Vec<u32>> = ["graph neural network", "reward", "genetic search policy"]
            .iter()
            .map(|t| enc.tokenize(t))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let probe = Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0));
        let run = |p: &ParamSet, slot: usize| {
            let e = TextEncoder::from_params(*enc.config(), enc.tokenizer().clone(), p).unwrap();
            let mut t = Tape::new();
            let vars: Vec<Var> = p.values().iter().map(|v| t.leaf(v.clone())).collect();
            let refs: Vec<&[u32]> = seqs.iter().map(Vec::as_slice).collect();
            let h = e.forward(&mut t, &refs, &vars);
            let val = (t.value(h) * &probe).sum();
            let out = t.scalar_with_grads(val, vec![(h, probe.clone())]);
            let mut g = t.backward(out);
            (val, g.take_or_zeros(vars[slot], p.get(slot)))
        };
        for name in ["tok_emb", "pos_emb", "l0.wq", "l0.wk", "l1.wv", "l0.ln1.g", "l1.w1", "l1.b2", "lnf.b", "proj"] {
            let slot = enc.params().slot(name).unwrap();
            let (_, analytic) = run(enc.params(), slot);
            let mut f = |w: &Array2<f64>| {
                let mut p = enc.params().clone();
                *p.get_mut(slot) = w.clone();
                run(&p, slot).0
            };
            let err = max_rel_error(&mut f, enc.params().get(slot), &analytic, 1e-6);
            assert!(err < 1e-4, "{name}: {err}");
        }
    }
}
