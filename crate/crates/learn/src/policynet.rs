//! Attention policy over the augmented roadmap.
//!
//! Node embedding: `h_i = W^L v_i + b^L + W^PE λ_i + b^PE`, with `W^D, b^D`
//! in place of `W^L, b^L` for the current node. One self-attention layer
//! (multi-head attention and a ReLU feedforward, each wrapped in a residual
//! connection and layer norm) turns the embeddings into context-aware
//! features. The decoder attends from the current node to its neighbors,
//! reads the state value off the result, and scores each neighbor with a
//! single-head pointer whose compatibilities are clipped to `C·tanh(u)`.
//!
//! Rows are nodes and weights multiply from the right (`x W`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ipp3d_core::roadmap::Roadmap;
use ipp3d_core::simenv::Observation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::{read_params, write_params, NamedTensor, Tape, Tensor, Var};
use crate::{LearnError, Result};

/// Per-node input width: normalized x, y, z, mean and uncertainty.
pub const NODE_FEATURES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub k_pe: usize,
    /// Pointer logits are `logit_clip · tanh(u)`.
    pub logit_clip: f64,
    pub ff_hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { embed_dim: 128, heads: 4, k_pe: 32, logit_clip: 10.0, ff_hidden: 512 }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(LearnError::Config(format!("embed_dim {} must be a positive multiple of heads {}", self.embed_dim, self.heads)));
        }
        if !(self.logit_clip > 0.0) || self.ff_hidden == 0 {
            return Err(LearnError::Config(format!("need logit_clip > 0 and ff_hidden > 0: {self:?}")));
        }
        Ok(())
    }
}

/// Attention block parameter slots, relative to the block's base.
const WQ: usize = 0;
const WK: usize = 1;
const WV: usize = 2;
const WO: usize = 3;
const LN1_G: usize = 4;
const LN1_B: usize = 5;
const FF1_W: usize = 6;
const FF1_B: usize = 7;
const FF2_W: usize = 8;
const FF2_B: usize = 9;
const LN2_G: usize = 10;
const LN2_B: usize = 11;
const BLOCK: usize = 12;

const EMB_WL: usize = 0;
const EMB_BL: usize = 1;
const EMB_WD: usize = 2;
const EMB_BD: usize = 3;
const EMB_WPE: usize = 4;
const EMB_BPE: usize = 5;
const ENC: usize = 6;
const DEC: usize = ENC + BLOCK;
const VALUE_W: usize = DEC + BLOCK;
const VALUE_B: usize = VALUE_W + 1;
const PTR_WQ: usize = VALUE_B + 1;
const PTR_WK: usize = PTR_WQ + 1;
const PARAM_COUNT: usize = PTR_WK + 1;

#[derive(Clone, Copy)]
enum Init {
    /// Uniform in `±1/√fan_in`.
    Uniform,
    Zeros,
    Ones,
}

fn layout(cfg: &NetConfig) -> Vec<(String, [usize; 2], Init)> {
    let (d, f) = (cfg.embed_dim, cfg.ff_hidden);
    let mut out = vec![
        ("embed.w_l".into(), [NODE_FEATURES, d], Init::Uniform),
        ("embed.b_l".into(), [1, d], Init::Zeros),
        ("embed.w_d".into(), [NODE_FEATURES, d], Init::Uniform),
        ("embed.b_d".into(), [1, d], Init::Zeros),
        ("embed.w_pe".into(), [cfg.k_pe, d], Init::Uniform),
        ("embed.b_pe".into(), [1, d], Init::Zeros),
    ];
    for block in ["encoder", "decoder"] {
        let p = |s: &str| format!("{block}.{s}");
        out.extend([
            (p("w_q"), [d, d], Init::Uniform),
            (p("w_k"), [d, d], Init::Uniform),
            (p("w_v"), [d, d], Init::Uniform),
            (p("w_o"), [d, d], Init::Uniform),
            (p("ln1.gain"), [1, d], Init::Ones),
            (p("ln1.bias"), [1, d], Init::Zeros),
            (p("ff1.w"), [d, f], Init::Uniform),
            (p("ff1.b"), [1, f], Init::Zeros),
            (p("ff2.w"), [f, d], Init::Uniform),
            (p("ff2.b"), [1, d], Init::Zeros),
            (p("ln2.gain"), [1, d], Init::Ones),
            (p("ln2.bias"), [1, d], Init::Zeros),
        ]);
    }
    out.extend([
        ("value.w".into(), [d, 1], Init::Uniform),
        ("value.b".into(), [1, 1], Init::Zeros),
        ("pointer.w_q".into(), [d, d], Init::Uniform),
        ("pointer.w_k".into(), [d, d], Init::Uniform),
    ]);
    debug_assert_eq!(out.len(), PARAM_COUNT);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub cfg: NetConfig,
    pub tensors: Vec<NamedTensor>,
}

impl PolicyParams {
    pub fn init(cfg: NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = layout(&cfg)
            .into_iter()
            .map(|(name, [r, c], init)| {
                let t = match init {
                    Init::Zeros => Tensor::zeros(r, c),
                    Init::Ones => Tensor::filled(r, c, 1.0),
                    Init::Uniform => {
                        let bound = 1.0 / (r as f64).sqrt();
                        let data = (0..r * c).map(|_| rng.random_range(-bound..bound)).collect();
                        Tensor::new(r, c, data).expect("sized")
                    }
                };
                (name, t)
            })
            .collect();
        Ok(Self { cfg, tensors })
    }

    /// Checks names, shapes and finiteness against `cfg`.
    pub fn from_named(cfg: NetConfig, tensors: Vec<NamedTensor>) -> Result<Self> {
        cfg.validate()?;
        let expected = layout(&cfg);
        if tensors.len() != expected.len() {
            return Err(LearnError::Format(format!("expected {} tensors, found {}", expected.len(), tensors.len())));
        }
        for ((name, t), (ename, shape, _)) in tensors.iter().zip(&expected) {
            if name != ename || t.shape() != *shape {
                return Err(LearnError::Format(format!("tensor {name} {:?} where {ename} {shape:?} was expected", t.shape())));
            }
        }
        let p = Self { cfg, tensors };
        p.check_finite()?;
        Ok(p)
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.tensors.iter().find(|(_, t)| !t.is_finite()) {
            Some((name, _)) => Err(LearnError::Numerical(format!("parameter {name} is not finite"))),
            None => Ok(()),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Puts every parameter on `tape`; `trainable` decides whether they
    /// collect gradients.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(_, t)| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        BoundParams { vars }
    }

    /// Writes `<path>` in the parameter format and `<path>.manifest` with
    /// the network configuration.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        write_params(&mut out, &self.tensors)?;
        out.flush()?;
        let manifest = toml::to_string(&Manifest { net: self.cfg, num_scalars: self.num_scalars() })
            .map_err(|e| LearnError::Format(e.to_string()))?;
        std::fs::write(manifest_path(path), manifest)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest_path(path))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| LearnError::Format(e.to_string()))?;
        let tensors = read_params(BufReader::new(File::open(path)?))?;
        Self::from_named(manifest.net, tensors)
    }

    /// Action distribution and value without recording gradients.
    pub fn act(&self, input: &PolicyInput) -> Result<PolicyEval> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let out = forward(&mut tape, &bound, input, &self.cfg)?;
        Ok(out.eval(&tape))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    net: NetConfig,
    num_scalars: usize,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// Parameters placed on a tape, in layout order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

impl BoundParams {
    fn at(&self, i: usize) -> Var {
        self.vars[i]
    }
}

/// Everything the network reads about one decision.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyInput {
    /// `N × 5` node features.
    pub features: Tensor,
    /// `N × k_pe` positional encodings, shared by every decision on a map.
    pub pe: Arc<Tensor>,
    pub current: usize,
    pub neighbors: Vec<usize>,
    pub affordable: Vec<bool>,
}

impl PolicyInput {
    pub fn from_observation(obs: &Observation, pe: Arc<Tensor>) -> Result<Self> {
        let n = obs.graph.node_mu.len();
        let mut data = Vec::with_capacity(n * NODE_FEATURES);
        for i in 0..n {
            data.extend_from_slice(&obs.graph.node_features(i));
        }
        Ok(Self {
            features: Tensor::new(n, NODE_FEATURES, data)?,
            pe,
            current: obs.current_node,
            neighbors: obs.neighbors.clone(),
            affordable: obs.affordable.clone(),
        })
    }

    pub fn validate(&self, cfg: &NetConfig) -> Result<()> {
        let n = self.features.rows();
        if self.features.cols() != NODE_FEATURES {
            return Err(LearnError::Shape(format!("node features have {} columns", self.features.cols())));
        }
        if self.pe.shape() != [n, cfg.k_pe] {
            return Err(LearnError::Shape(format!("positional encoding {:?} for {n} nodes, k_pe {}", self.pe.shape(), cfg.k_pe)));
        }
        if self.current >= n || self.neighbors.iter().any(|&j| j >= n) {
            return Err(LearnError::Shape("node index out of range".into()));
        }
        if self.neighbors.is_empty() {
            return Err(LearnError::State("no neighbors to choose from".into()));
        }
        if self.affordable.len() != self.neighbors.len() {
            return Err(LearnError::Shape("affordable mask does not match neighbors".into()));
        }
        if !self.affordable.iter().any(|&a| a) {
            return Err(LearnError::State("no affordable neighbor".into()));
        }
        Ok(())
    }
}

/// Positional encodings of `roadmap` as an `N × k_pe` tensor.
pub fn pe_tensor(roadmap: &Roadmap) -> Result<Tensor> {
    let k = roadmap.pe_dim();
    if roadmap.pe.len() != roadmap.len() {
        return Err(LearnError::Shape("roadmap has no positional encodings".into()));
    }
    Tensor::new(roadmap.len(), k, roadmap.pe.concat())
}

/// `h^n`: one embedding row per node.
pub fn embed_nodes(tape: &mut Tape, p: &BoundParams, features: Var, pe: Var, current: usize) -> Result<Var> {
    let n = tape.shape(features)[0];
    if current >= n {
        return Err(LearnError::Shape(format!("current node {current} of {n}")));
    }
    let xl = tape.matmul(features, p.at(EMB_WL))?;
    let base = tape.add_row(xl, p.at(EMB_BL))?;
    let cur_x = tape.gather_rows(features, &[current])?;
    let xd = tape.matmul(cur_x, p.at(EMB_WD))?;
    let cur = tape.add_row(xd, p.at(EMB_BD))?;
    let stacked = tape.concat_rows(&[base, cur])?;
    let index: Vec<usize> = (0..n).map(|i| if i == current { n } else { i }).collect();
    let h = tape.gather_rows(stacked, &index)?;
    let pw = tape.matmul(pe, p.at(EMB_WPE))?;
    let pe_term = tape.add_row(pw, p.at(EMB_BPE))?;
    tape.add(h, pe_term)
}

/// Output of one attention layer plus the per-head attention weights.
pub struct AttentionOut {
    pub out: Var,
    /// One `queries × keys` matrix per head.
    pub weights: Vec<Var>,
}

/// Multi-head attention from `hq` to `hkv`, then the feedforward sublayer,
/// each with residual connection and layer norm.
pub fn attention_layer(tape: &mut Tape, p: &BoundParams, base: usize, hq: Var, hkv: Var, cfg: &NetConfig) -> Result<AttentionOut> {
    let d = cfg.embed_dim;
    let dk = d / cfg.heads;
    let q = tape.matmul(hq, p.at(base + WQ))?;
    let k = tape.matmul(hkv, p.at(base + WK))?;
    let v = tape.matmul(hkv, p.at(base + WV))?;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.heads);
    let mut weights = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = tape.slice_cols(q, h * dk, dk)?;
        let kh = tape.slice_cols(k, h * dk, dk)?;
        let vh = tape.slice_cols(v, h * dk, dk)?;
        let kt = tape.transpose(kh);
        let raw = tape.matmul(qh, kt)?;
        let scores = tape.scale(raw, scale);
        let a = tape.softmax_rows(scores);
        heads.push(tape.matmul(a, vh)?);
        weights.push(a);
    }
    let cat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
    let mixed = tape.matmul(cat, p.at(base + WO))?;
    let res1 = tape.add(hq, mixed)?;
    let x = tape.layer_norm(res1, p.at(base + LN1_G), p.at(base + LN1_B))?;
    let f1 = tape.matmul(x, p.at(base + FF1_W))?;
    let f1 = tape.add_row(f1, p.at(base + FF1_B))?;
    let f1 = tape.relu(f1);
    let f2 = tape.matmul(f1, p.at(base + FF2_W))?;
    let f2 = tape.add_row(f2, p.at(base + FF2_B))?;
    let res2 = tape.add(x, f2)?;
    let out = tape.layer_norm(res2, p.at(base + LN2_G), p.at(base + LN2_B))?;
    Ok(AttentionOut { out, weights })
}

/// `h^en` for every node.
pub fn encode(tape: &mut Tape, p: &BoundParams, hn: Var, cfg: &NetConfig) -> Result<AttentionOut> {
    attention_layer(tape, p, ENC, hn, hn, cfg)
}

/// `h^en` for the listed nodes only. Each output row depends on its own
/// query and on every node as key and value, so this equals the matching
/// rows of [`encode`].
pub fn encode_rows(tape: &mut Tape, p: &BoundParams, hn: Var, rows: &[usize], cfg: &NetConfig) -> Result<AttentionOut> {
    let hq = tape.gather_rows(hn, rows)?;
    attention_layer(tape, p, ENC, hq, hn, cfg)
}

pub struct DecodeOut {
    /// `1 × k` log-probabilities over the neighbors; unaffordable ones are `-inf`.
    pub log_probs: Var,
    /// `1 × k` pointer logits after the `C·tanh` clip, before masking.
    pub logits: Var,
    /// `1 × 1` state value.
    pub value: Var,
}

/// Scores the neighbors of the current node. `h_current` is `1 × d`,
/// `h_neighbors` is `k × d`.
pub fn decode(
    tape: &mut Tape,
    p: &BoundParams,
    h_current: Var,
    h_neighbors: Var,
    affordable: &[bool],
    cfg: &NetConfig,
) -> Result<DecodeOut> {
    let k = tape.shape(h_neighbors)[0];
    if k == 0 {
        return Err(LearnError::State("empty neighbor list".into()));
    }
    if affordable.len() != k {
        return Err(LearnError::Shape(format!("mask of {} for {k} neighbors", affordable.len())));
    }
    if !affordable.iter().any(|&a| a) {
        return Err(LearnError::State("no affordable neighbor".into()));
    }
    let ctx = attention_layer(tape, p, DEC, h_current, h_neighbors, cfg)?.out;
    let vw = tape.matmul(ctx, p.at(VALUE_W))?;
    let value = tape.add_row(vw, p.at(VALUE_B))?;

    let q = tape.matmul(ctx, p.at(PTR_WQ))?;
    let keys = tape.matmul(h_neighbors, p.at(PTR_WK))?;
    let kt = tape.transpose(keys);
    let u = tape.matmul(q, kt)?;
    let u = tape.scale(u, 1.0 / (cfg.embed_dim as f64).sqrt());
    let t = tape.tanh(u);
    let logits = tape.scale(t, cfg.logit_clip);
    let blocked: Vec<bool> = affordable.iter().map(|a| !a).collect();
    let masked = tape.masked_fill(logits, &blocked, f64::NEG_INFINITY)?;
    let log_probs = tape.log_softmax_rows(masked);
    Ok(DecodeOut { log_probs, logits, value })
}

/// Result of a full forward pass.
pub struct ForwardOut {
    pub log_probs: Var,
    pub logits: Var,
    pub value: Var,
}

/// Plain numbers read off a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEval {
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub value: f64,
}

impl ForwardOut {
    pub fn eval(&self, tape: &Tape) -> PolicyEval {
        let log_probs = tape.value(self.log_probs).data().to_vec();
        PolicyEval {
            probs: log_probs.iter().map(|l| l.exp()).collect(),
            log_probs,
            value: tape.value(self.value).data()[0],
        }
    }
}

/// Embedding, encoder rows for the current node and its neighbors, decoder.
pub fn forward(tape: &mut Tape, p: &BoundParams, input: &PolicyInput, cfg: &NetConfig) -> Result<ForwardOut> {
    input.validate(cfg)?;
    let x = tape.constant(input.features.clone());
    let pe = tape.constant((*input.pe).clone());
    let hn = embed_nodes(tape, p, x, pe, input.current)?;
    let mut rows = Vec::with_capacity(input.neighbors.len() + 1);
    rows.push(input.current);
    rows.extend_from_slice(&input.neighbors);
    let hen = encode_rows(tape, p, hn, &rows, cfg)?.out;
    let h_cur = tape.gather_rows(hen, &[0])?;
    let nbr: Vec<usize> = (1..rows.len()).collect();
    let h_nbr = tape.gather_rows(hen, &nbr)?;
    let d = decode(tape, p, h_cur, h_nbr, &input.affordable, cfg)?;
    Ok(ForwardOut { log_probs: d.log_probs, logits: d.logits, value: d.value })
}
