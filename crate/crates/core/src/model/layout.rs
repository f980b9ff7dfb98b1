//! Placement of every tensor inside the flat parameter vector.

use super::config::ModelConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    /// Input width used for uniform ±1/sqrt(fan_in) initialization; 0 marks
    /// layer-norm gains (1) and shifts (0).
    pub fan_in: usize,
    pub kind: TensorKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Embedding,
    Weight,
    Bias,
    NormGain,
    NormBias,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub n_in: usize,
    pub n_out: usize,
}

impl Linear {
    pub fn w<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.w..self.w + self.n_in * self.n_out]
    }
    pub fn b<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.b..self.b + self.n_out]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Norm {
    pub gain: usize,
    pub bias: usize,
    pub dim: usize,
}

impl Norm {
    pub fn gain<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.gain..self.gain + self.dim]
    }
    pub fn bias<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.bias..self.bias + self.dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Head {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    pub norm1: Norm,
    pub heads: Vec<Head>,
    pub mix: Linear,
    pub norm2: Norm,
    pub ff1: Linear,
    pub ff2: Linear,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub emb_occ: usize,
    pub emb_lvl: usize,
    pub emb_oct: usize,
    pub layers: Vec<LayerLayout>,
    pub norm_out: Norm,
    pub hidden: Linear,
    pub logits: Linear,
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
}

pub const OCC_TABLE: usize = 256;
pub const OCT_TABLE: usize = 9;
pub const SYMBOLS: usize = 255;

struct Builder {
    tensors: Vec<TensorSpec>,
    total: usize,
}

impl Builder {
    fn push(&mut self, name: String, rows: usize, cols: usize, fan_in: usize, kind: TensorKind) -> usize {
        let offset = self.total;
        self.tensors.push(TensorSpec {
            name,
            rows,
            cols,
            offset,
            fan_in,
            kind,
        });
        self.total += rows * cols;
        offset
    }

    fn linear(&mut self, name: &str, n_in: usize, n_out: usize) -> Linear {
        let w = self.push(format!("{name}.weight"), n_in, n_out, n_in, TensorKind::Weight);
        let b = self.push(format!("{name}.bias"), 1, n_out, n_in, TensorKind::Bias);
        Linear { w, b, n_in, n_out }
    }

    fn norm(&mut self, name: &str, dim: usize) -> Norm {
        let gain = self.push(format!("{name}.gain"), 1, dim, 0, TensorKind::NormGain);
        let bias = self.push(format!("{name}.shift"), 1, dim, 0, TensorKind::NormBias);
        Norm { gain, bias, dim }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut b = Builder {
            tensors: Vec::new(),
            total: 0,
        };
        let emb_occ = b.push("embed.occupancy".into(), OCC_TABLE, cfg.d_occ, 1, TensorKind::Embedding);
        let emb_lvl = b.push("embed.level".into(), cfg.max_level + 1, cfg.d_lvl, 1, TensorKind::Embedding);
        let emb_oct = b.push("embed.octant".into(), OCT_TABLE, cfg.d_oct, 1, TensorKind::Embedding);
        let d = cfg.model_dim();
        let e = cfg.slot_dim();
        let layers = (0..cfg.layers)
            .map(|l| {
                let norm1 = b.norm(&format!("layer{l}.norm1"), d);
                let heads = (0..cfg.k)
                    .map(|t| Head {
                        query: b.linear(&format!("layer{l}.head{t}.query"), e, cfg.head_dim),
                        key: b.linear(&format!("layer{l}.head{t}.key"), e, cfg.head_dim),
                        value: b.linear(&format!("layer{l}.head{t}.value"), e, cfg.head_dim),
                    })
                    .collect();
                let mix = b.linear(&format!("layer{l}.mix"), cfg.heads_dim(), d);
                let norm2 = b.norm(&format!("layer{l}.norm2"), d);
                let ff1 = b.linear(&format!("layer{l}.ff1"), d, cfg.ffn_hidden);
                let ff2 = b.linear(&format!("layer{l}.ff2"), cfg.ffn_hidden, d);
                LayerLayout {
                    norm1,
                    heads,
                    mix,
                    norm2,
                    ff1,
                    ff2,
                }
            })
            .collect();
        let norm_out = b.norm("out.norm", d);
        let hidden = b.linear("out.hidden", d, cfg.out_hidden);
        let logits = b.linear("out.logits", cfg.out_hidden, SYMBOLS);
        Self {
            emb_occ,
            emb_lvl,
            emb_oct,
            layers,
            norm_out,
            hidden,
            logits,
            total: b.total,
            tensors: b.tensors,
        }
    }
}
