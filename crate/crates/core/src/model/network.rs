use super::tape::{sigmoid, Tape, Tensor, Var};
use super::ModelError;
use crate::molgraph::{Element, Molecule};
use crate::seed::rng_for;
use crate::synthesis::{Token, TokenKind};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub n_reaction_types: usize,
    pub max_seq_len: usize,
    pub fingerprint_dim: usize,
    /// Hidden width of the feed-forward sublayers.
    pub d_ff: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn desk(n_reaction_types: usize) -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            n_reaction_types,
            max_seq_len: 16,
            fingerprint_dim: crate::fingerprint::RETRIEVAL_BITS,
            d_ff: 128,
            seed: 0,
        }
    }

    /// Small configuration used by the gradient check.
    pub fn tiny(n_reaction_types: usize) -> Self {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            d_ff: 16,
            ..Self::desk(n_reaction_types)
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad("d_model must be a positive multiple of n_heads");
        }
        if self.max_seq_len < 2 {
            return bad("max_seq_len must be at least 2");
        }
        if self.n_reaction_types == 0 || self.fingerprint_dim == 0 || self.d_ff == 0 {
            return bad("n_reaction_types, fingerprint_dim and d_ff must be positive");
        }
        Ok(())
    }
}

const N_ELEMENTS: usize = Element::ALL.len();
const H_SLOTS: usize = 5;
const CHARGE_SLOTS: usize = 5;
const DEGREE_SLOTS: usize = 6;
/// Rows of the atom embedding table: element, H count, charge, aromatic flag, degree.
pub const ATOM_FEATURES: usize = N_ELEMENTS + H_SLOTS + CHARGE_SLOTS + 2 + DEGREE_SLOTS;
/// Bond classes for the attention bias; 0 is "not bonded".
pub const BOND_CLASSES: usize = 5;

/// Heavy-atom graph as seen by the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    /// Embedding-table rows summed for each atom.
    pub features: Vec<Vec<usize>>,
    /// Row-major n×n bond classes.
    pub bonds: Vec<u8>,
}

impl GraphInput {
    pub fn from_molecule(mol: &Molecule) -> Result<Self, ModelError> {
        let heavy: Vec<usize> = (0..mol.atom_count())
            .filter(|&i| mol.atom(i).element != Element::H)
            .collect();
        if heavy.is_empty() {
            return Err(ModelError::ShapeMismatch("molecule has no heavy atoms".into()));
        }
        let mut row = vec![usize::MAX; mol.atom_count()];
        for (k, &i) in heavy.iter().enumerate() {
            row[i] = k;
        }
        let n = heavy.len();
        let mut bonds = vec![0u8; n * n];
        let mut features = Vec::with_capacity(n);
        for &i in &heavy {
            let a = mol.atom(i);
            let mut h = a.hydrogens as usize;
            let mut deg = 0;
            for (j, order) in mol.neighbors(i) {
                if row[j] == usize::MAX {
                    h += 1;
                } else {
                    deg += 1;
                    bonds[row[i] * n + row[j]] = order.code();
                }
            }
            let charge = (a.charge.clamp(-2, 2) + 2) as usize;
            let mut off = N_ELEMENTS;
            let mut f = vec![a.element.index()];
            f.push(off + h.min(H_SLOTS - 1));
            off += H_SLOTS;
            f.push(off + charge);
            off += CHARGE_SLOTS;
            f.push(off + a.aromatic as usize);
            off += 2;
            f.push(off + deg.min(DEGREE_SLOTS - 1));
            features.push(f);
        }
        Ok(GraphInput { features, bonds })
    }

    pub fn atom_count(&self) -> usize {
        self.features.len()
    }
}

/// Sinusoidal positional encoding of position `pos`.
pub fn positional_encoding(pos: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| {
            let angle = pos as f64 / 10000f64.powf((j - j % 2) as f64 / d as f64);
            if j % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Zeros,
    Ones,
    Uniform(f64),
}

struct EncoderLayer {
    ln1: (usize, usize),
    qkv: (usize, usize),
    bond_bias: usize,
    out: (usize, usize),
    ln2: (usize, usize),
    ff1: (usize, usize),
    ff2: (usize, usize),
}

struct DecoderLayer {
    ln1: (usize, usize),
    qkv: (usize, usize),
    out: (usize, usize),
    ln2: (usize, usize),
    cross_q: (usize, usize),
    cross_kv: (usize, usize),
    cross_out: (usize, usize),
    ln3: (usize, usize),
    ff1: (usize, usize),
    ff2: (usize, usize),
}

struct Mlp {
    l1: (usize, usize),
    l2: (usize, usize),
}

struct Layout {
    atom_embed: usize,
    encoder: Vec<EncoderLayer>,
    enc_ln: (usize, usize),
    e_start: usize,
    fp_in: Mlp,
    rxn_embed: usize,
    decoder: Vec<DecoderLayer>,
    dec_ln: (usize, usize),
    type_head: Mlp,
    fp_head: Mlp,
    rxn_head: Mlp,
}

struct Builder<'a> {
    params: Vec<Tensor>,
    names: Vec<String>,
    rng: &'a mut rand_chacha::ChaCha8Rng,
}

impl Builder<'_> {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        let data = (0..rows * cols)
            .map(|_| match init {
                Init::Zeros => 0.0,
                Init::Ones => 1.0,
                Init::Uniform(b) => self.rng.gen_range(-b..b) as f32 as f64,
            })
            .collect();
        self.params.push(Tensor::from_vec(rows, cols, data));
        self.names.push(name);
        self.params.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, zero: bool) -> (usize, usize) {
        let init = if zero {
            Init::Zeros
        } else {
            Init::Uniform(1.0 / (fan_in as f64).sqrt())
        };
        let w = self.add(format!("{name}.w"), fan_in, fan_out, init);
        let b = self.add(format!("{name}.b"), 1, fan_out, Init::Zeros);
        (w, b)
    }

    fn norm(&mut self, name: &str, d: usize) -> (usize, usize) {
        let g = self.add(format!("{name}.g"), 1, d, Init::Ones);
        let b = self.add(format!("{name}.b"), 1, d, Init::Zeros);
        (g, b)
    }

    fn mlp(&mut self, name: &str, d_in: usize, d_hidden: usize, d_out: usize, zero_out: bool) -> Mlp {
        Mlp {
            l1: self.linear(&format!("{name}.1"), d_in, d_hidden, false),
            l2: self.linear(&format!("{name}.2"), d_hidden, d_out, zero_out),
        }
    }
}

/// Per-position head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    /// ℓ×3 logits over BB, RXN, END.
    pub type_logits: Tensor,
    /// ℓ×F fingerprint probabilities.
    pub fp_probs: Tensor,
    /// ℓ×R reaction logits.
    pub rxn_logits: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossValues {
    pub total: f64,
    pub l_type: f64,
    pub l_bb: f64,
    pub l_rxn: f64,
}

pub(crate) struct LossVars {
    pub total: Var,
    pub l_type: Var,
    pub l_bb: Var,
    pub l_rxn: Var,
    pub type_logits: Var,
}

pub struct Model {
    pub config: ModelConfig,
    pub params: Vec<Tensor>,
    names: Vec<String>,
    layout: Layout,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("parameters", &self.parameter_count())
            .finish()
    }
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = rng_for(config.seed, &[0x6d6f_6465_6c]);
        let d = config.d_model;
        let (f, r, h, ff) = (
            config.fingerprint_dim,
            config.n_reaction_types,
            config.n_heads,
            config.d_ff,
        );
        let mut b = Builder {
            params: Vec::new(),
            names: Vec::new(),
            rng: &mut rng,
        };
        let atom_embed = b.add("enc.atom_embed".into(), ATOM_FEATURES, d, Init::Uniform(0.5));
        let encoder = (0..config.n_encoder_layers)
            .map(|l| {
                let p = format!("enc.{l}");
                EncoderLayer {
                    ln1: b.norm(&format!("{p}.ln1"), d),
                    qkv: b.linear(&format!("{p}.qkv"), d, 3 * d, false),
                    bond_bias: b.add(format!("{p}.bond_bias"), BOND_CLASSES, h, Init::Zeros),
                    out: b.linear(&format!("{p}.out"), d, d, false),
                    ln2: b.norm(&format!("{p}.ln2"), d),
                    ff1: b.linear(&format!("{p}.ff1"), d, ff, false),
                    ff2: b.linear(&format!("{p}.ff2"), ff, d, false),
                }
            })
            .collect();
        let enc_ln = b.norm("enc.ln", d);
        let e_start = b.add("dec.e_start".into(), 1, d, Init::Uniform(0.5));
        let fp_in = b.mlp("dec.fp_in", f, d, d, false);
        let rxn_embed = b.add("dec.rxn_embed".into(), r, d, Init::Uniform(0.5));
        let decoder = (0..config.n_decoder_layers)
            .map(|l| {
                let p = format!("dec.{l}");
                DecoderLayer {
                    ln1: b.norm(&format!("{p}.ln1"), d),
                    qkv: b.linear(&format!("{p}.qkv"), d, 3 * d, false),
                    out: b.linear(&format!("{p}.out"), d, d, false),
                    ln2: b.norm(&format!("{p}.ln2"), d),
                    cross_q: b.linear(&format!("{p}.cross_q"), d, d, false),
                    cross_kv: b.linear(&format!("{p}.cross_kv"), d, 2 * d, false),
                    cross_out: b.linear(&format!("{p}.cross_out"), d, d, false),
                    ln3: b.norm(&format!("{p}.ln3"), d),
                    ff1: b.linear(&format!("{p}.ff1"), d, ff, false),
                    ff2: b.linear(&format!("{p}.ff2"), ff, d, false),
                }
            })
            .collect();
        let dec_ln = b.norm("dec.ln", d);
        let type_head = b.mlp("head.type", d, d, TokenKind::COUNT, true);
        let fp_head = b.mlp("head.fp", d, d, f, false);
        let rxn_head = b.mlp("head.rxn", d, d, r, true);
        let layout = Layout {
            atom_embed,
            encoder,
            enc_ln,
            e_start,
            fp_in,
            rxn_embed,
            decoder,
            dec_ln,
            type_head,
            fp_head,
            rxn_head,
        };
        let (params, names) = (b.params, b.names);
        Ok(Model {
            config,
            params,
            names,
            layout,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Parameter names in declaration order.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| vec![0.0; p.len()]).collect()
    }

    fn lin(t: &mut Tape, x: Var, (w, b): (usize, usize)) -> Var {
        let (w, b) = (t.param(w), t.param(b));
        t.linear(x, w, b)
    }

    fn norm(t: &mut Tape, x: Var, (g, b): (usize, usize)) -> Var {
        let (g, b) = (t.param(g), t.param(b));
        t.layer_norm(x, g, b)
    }

    fn mlp(t: &mut Tape, x: Var, m: &Mlp) -> Var {
        let h = Self::lin(t, x, m.l1);
        let h = t.gelu(h);
        Self::lin(t, h, m.l2)
    }

    /// Multi-head attention; `bias[h]` and `mask` are added to the scores.
    fn attention(&self, t: &mut Tape, q: Var, k: Var, v: Var, bias: &[Var], mask: Option<Var>) -> Var {
        let h = self.config.n_heads;
        let dh = self.config.d_model / h;
        let scale = 1.0 / (dh as f64).sqrt();
        let heads = (0..h)
            .map(|i| {
                let qh = t.slice_cols(q, i * dh, dh);
                let kh = t.slice_cols(k, i * dh, dh);
                let vh = t.slice_cols(v, i * dh, dh);
                let s = t.matmul_nt(qh, kh);
                let mut s = t.scale(s, scale);
                if let Some(&b) = bias.get(i) {
                    s = t.add(s, b);
                }
                if let Some(m) = mask {
                    s = t.add(s, m);
                }
                let a = t.softmax(s);
                t.matmul(a, vh)
            })
            .collect();
        t.concat_cols(heads)
    }

    pub(crate) fn encode_on(&self, t: &mut Tape, g: &GraphInput) -> Var {
        let d = self.config.d_model;
        let n = g.atom_count();
        let table = t.param(self.layout.atom_embed);
        let mut x = t.gather_sum(table, g.features.clone());
        for layer in &self.layout.encoder {
            let h = Self::norm(t, x, layer.ln1);
            let qkv = Self::lin(t, h, layer.qkv);
            let q = t.slice_cols(qkv, 0, d);
            let k = t.slice_cols(qkv, d, d);
            let v = t.slice_cols(qkv, 2 * d, d);
            let table = t.param(layer.bond_bias);
            let bias: Vec<Var> = (0..self.config.n_heads)
                .map(|hd| t.pair_bias(table, g.bonds.clone(), n, hd))
                .collect();
            let o = self.attention(t, q, k, v, &bias, None);
            let o = Self::lin(t, o, layer.out);
            x = t.add(x, o);
            let h = Self::norm(t, x, layer.ln2);
            let h = Self::lin(t, h, layer.ff1);
            let h = t.gelu(h);
            let h = Self::lin(t, h, layer.ff2);
            x = t.add(x, h);
        }
        Self::norm(t, x, self.layout.enc_ln)
    }

    /// Eq. 2 token embeddings for a prefix starting with `Start`.
    pub(crate) fn embed_on(&self, t: &mut Tape, prefix: &[Token]) -> Result<Var, ModelError> {
        let (d, f) = (self.config.d_model, self.config.fingerprint_dim);
        if prefix.len() > self.config.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                len: prefix.len(),
                max: self.config.max_seq_len,
            });
        }
        if prefix.first() != Some(&Token::Start) {
            return Err(ModelError::ShapeMismatch("prefix must start with Start".into()));
        }
        let mut fps = Vec::new();
        let mut rxns = Vec::new();
        // (source block, row within block) per position
        let mut slots = Vec::with_capacity(prefix.len());
        for (i, tok) in prefix.iter().enumerate() {
            match tok {
                Token::Start if i == 0 => slots.push((0, 0)),
                Token::Bb { fp, .. } => {
                    if fp.len() != f {
                        return Err(ModelError::ShapeMismatch(format!(
                            "fingerprint has {} bits, model expects {f}",
                            fp.len()
                        )));
                    }
                    slots.push((1, fps.len()));
                    fps.push(fp);
                }
                Token::Rxn { r, .. } => {
                    if *r >= self.config.n_reaction_types {
                        return Err(ModelError::ShapeMismatch(format!("reaction index {r} out of range")));
                    }
                    slots.push((2, rxns.len()));
                    rxns.push(vec![*r]);
                }
                _ => {
                    return Err(ModelError::ShapeMismatch(format!("unexpected {tok:?} at position {i}")));
                }
            }
        }
        let mut parts = vec![t.param(self.layout.e_start)];
        let n_fp = fps.len();
        if n_fp > 0 {
            let data = fps.iter().flat_map(|fp| fp.to_f64()).collect();
            let x = t.input(Tensor::from_vec(n_fp, f, data));
            parts.push(Self::mlp(t, x, &self.layout.fp_in));
        }
        if !rxns.is_empty() {
            let table = t.param(self.layout.rxn_embed);
            parts.push(t.gather_sum(table, rxns));
        }
        let stacked = t.concat_rows(parts);
        let order = slots
            .iter()
            .map(|&(src, k)| match src {
                0 => 0,
                1 => 1 + k,
                _ => 1 + n_fp + k,
            })
            .collect();
        let x = t.select_rows(stacked, order);
        let pe = (0..prefix.len()).flat_map(|i| positional_encoding(i, d)).collect();
        let pe = t.input(Tensor::from_vec(prefix.len(), d, pe));
        Ok(t.add(x, pe))
    }

    /// Decoder stack and heads. Returns (type, fingerprint, reaction) logits.
    pub(crate) fn decode_on(&self, t: &mut Tape, memory: Var, prefix: &[Token]) -> Result<(Var, Var, Var), ModelError> {
        let d = self.config.d_model;
        let mut x = self.embed_on(t, prefix)?;
        let l = prefix.len();
        let mut mask = vec![0.0; l * l];
        for i in 0..l {
            for j in i + 1..l {
                mask[i * l + j] = f64::NEG_INFINITY;
            }
        }
        let mask = t.input(Tensor::from_vec(l, l, mask));
        for layer in &self.layout.decoder {
            let h = Self::norm(t, x, layer.ln1);
            let qkv = Self::lin(t, h, layer.qkv);
            let q = t.slice_cols(qkv, 0, d);
            let k = t.slice_cols(qkv, d, d);
            let v = t.slice_cols(qkv, 2 * d, d);
            let o = self.attention(t, q, k, v, &[], Some(mask));
            let o = Self::lin(t, o, layer.out);
            x = t.add(x, o);
            let h = Self::norm(t, x, layer.ln2);
            let q = Self::lin(t, h, layer.cross_q);
            let kv = Self::lin(t, memory, layer.cross_kv);
            let k = t.slice_cols(kv, 0, d);
            let v = t.slice_cols(kv, d, d);
            let o = self.attention(t, q, k, v, &[], None);
            let o = Self::lin(t, o, layer.cross_out);
            x = t.add(x, o);
            let h = Self::norm(t, x, layer.ln3);
            let h = Self::lin(t, h, layer.ff1);
            let h = t.gelu(h);
            let h = Self::lin(t, h, layer.ff2);
            x = t.add(x, h);
        }
        let x = Self::norm(t, x, self.layout.dec_ln);
        let ty = Self::mlp(t, x, &self.layout.type_head);
        let fp = Self::mlp(t, x, &self.layout.fp_head);
        let rx = Self::mlp(t, x, &self.layout.rxn_head);
        Ok((ty, fp, rx))
    }

    /// Teacher-forced loss of one finalized program on the tape.
    pub(crate) fn loss_on(&self, t: &mut Tape, graph: &GraphInput, tokens: &[Token]) -> Result<LossVars, ModelError> {
        if tokens.len() < 2 || tokens.last() != Some(&Token::End) {
            return Err(ModelError::ShapeMismatch("program must be finalized".into()));
        }
        let memory = self.encode_on(t, graph);
        let (inputs, targets) = (&tokens[..tokens.len() - 1], &tokens[1..]);
        let (ty, fp, rx) = self.decode_on(t, memory, inputs)?;
        let mut kinds = Vec::with_capacity(targets.len());
        let (mut bb_rows, mut bits) = (Vec::new(), Vec::new());
        let (mut rxn_rows, mut rxn_targets) = (Vec::new(), Vec::new());
        for (i, tok) in targets.iter().enumerate() {
            let kind = tok
                .kind()
                .ok_or_else(|| ModelError::ShapeMismatch(format!("Start at target position {i}")))?;
            kinds.push(kind as usize);
            match tok {
                Token::Bb { fp, .. } => {
                    bb_rows.push(i);
                    bits.extend(fp.to_f64());
                }
                Token::Rxn { r, .. } => {
                    rxn_rows.push(i);
                    rxn_targets.push(*r);
                }
                _ => {}
            }
        }
        let l_type = t.cross_entropy(ty, kinds);
        let bb = t.select_rows(fp, bb_rows);
        let l_bb = t.bce(bb, bits);
        let rx_sel = t.select_rows(rx, rxn_rows);
        let l_rxn = t.cross_entropy(rx_sel, rxn_targets);
        let partial = t.add(l_type, l_bb);
        let total = t.add(partial, l_rxn);
        Ok(LossVars {
            total,
            l_type,
            l_bb,
            l_rxn,
            type_logits: ty,
        })
    }

    /// Per-atom embeddings of a molecule.
    pub fn encode(&self, graph: &GraphInput) -> Tensor {
        let mut t = Tape::new(&self.params);
        let v = self.encode_on(&mut t, graph);
        t.tensor(v)
    }

    pub fn embed_tokens(&self, prefix: &[Token]) -> Result<Tensor, ModelError> {
        let mut t = Tape::new(&self.params);
        let v = self.embed_on(&mut t, prefix)?;
        Ok(t.tensor(v))
    }

    /// Head outputs for every prefix position given encoder memory.
    pub fn decode(&self, memory: &Tensor, prefix: &[Token]) -> Result<Outputs, ModelError> {
        if memory.cols != self.config.d_model {
            return Err(ModelError::ShapeMismatch("memory width".into()));
        }
        let mut t = Tape::new(&self.params);
        let m = t.input(memory.clone());
        let (ty, fp, rx) = self.decode_on(&mut t, m, prefix)?;
        let mut fp_probs = t.tensor(fp);
        fp_probs.data.iter_mut().for_each(|z| *z = sigmoid(*z));
        Ok(Outputs {
            type_logits: t.tensor(ty),
            fp_probs,
            rxn_logits: t.tensor(rx),
        })
    }

    pub fn forward(&self, graph: &GraphInput, prefix: &[Token]) -> Result<Outputs, ModelError> {
        self.decode(&self.encode(graph), prefix)
    }

    /// Loss terms for one example without gradients.
    pub fn loss(&self, graph: &GraphInput, tokens: &[Token]) -> Result<LossValues, ModelError> {
        let mut t = Tape::new(&self.params);
        let v = self.loss_on(&mut t, graph, tokens)?;
        Ok(values(&t, &v))
    }

    /// Loss terms and `scale`-weighted gradients accumulated into `grads`.
    pub fn loss_and_grad(
        &self,
        graph: &GraphInput,
        tokens: &[Token],
        scale: f64,
        grads: &mut [Vec<f64>],
    ) -> Result<LossValues, ModelError> {
        let mut t = Tape::new(&self.params);
        let v = self.loss_on(&mut t, graph, tokens)?;
        t.backward(v.total, scale, grads);
        Ok(values(&t, &v))
    }

    /// Teacher-forced type predictions that match their targets, and the position count.
    pub fn type_hits(&self, graph: &GraphInput, tokens: &[Token]) -> Result<(usize, usize), ModelError> {
        let mut t = Tape::new(&self.params);
        let v = self.loss_on(&mut t, graph, tokens)?;
        let logits = t.tensor(v.type_logits);
        let mut hits = 0;
        for (i, tok) in tokens[1..].iter().enumerate() {
            let row = logits.row(i);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            if tok.kind().map(|k| k as usize) == Some(best) {
                hits += 1;
            }
        }
        Ok((hits, tokens.len() - 1))
    }
}

fn values(t: &Tape, v: &LossVars) -> LossValues {
    LossValues {
        total: t.scalar(v.total),
        l_type: t.scalar(v.l_type),
        l_bb: t.scalar(v.l_bb),
        l_rxn: t.scalar(v.l_rxn),
    }
}
