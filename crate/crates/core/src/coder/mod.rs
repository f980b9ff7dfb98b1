//! Lossless coding of quantized clouds: octree serialization, per-node
//! probabilities from the attention model or the adaptive baseline, and the
//! range coder.

mod baseline;
mod bitstream;
mod range;

pub use baseline::{adaptive_bits, AdaptiveModel};
pub use bitstream::{Bitstream, Header, ModelKind, HEADER_LEN, MAGIC, VERSION};
pub use range::{symbol_bits, RangeDecoder, RangeEncoder};

use rayon::prelude::*;

use crate::context::{assemble_row, build_windows, window_plans, NodeFeatureRow, RowRole, WindowParams};
use crate::error::{Error, Result};
use crate::geometry::QuantizedCloud;
use crate::model::{quantize_dist, Distribution255, Model32, QuantizedCdf};
use crate::octree::{build, NodeSequence, SequenceBuilder};

/// Windows whose distributions are computed together before range coding.
const ENCODE_BATCH: usize = 32;

#[derive(Debug, Clone, Copy)]
pub enum Coder<'a> {
    Baseline,
    Attention { model: &'a Model32, window: WindowParams },
}

impl<'a> Coder<'a> {
    /// Attention coder using the model's default window.
    pub fn attention(model: &'a Model32) -> Result<Self> {
        let c = model.config();
        Ok(Self::Attention {
            model,
            window: WindowParams::new(c.n, c.k, c.n0)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EncodeReport {
    pub bitstream: Bitstream,
    pub nodes: usize,
    /// `Σ -log2 q̂(x)` over all coded symbols.
    pub ideal_bits: f64,
}

impl EncodeReport {
    pub fn payload_bits(&self) -> u64 {
        self.bitstream.payload_bits()
    }
}

fn cdf_of(probs: &[f32]) -> QuantizedCdf {
    quantize_dist(&Distribution255(probs.to_vec()))
}

fn check_model(model: &Model32, window: WindowParams) -> Result<()> {
    if window.k != model.config().k {
        return Err(Error::ModelMismatch(format!(
            "stream uses K={}, model has K={}",
            window.k,
            model.config().k
        )));
    }
    Ok(())
}

/// Per-node quantized distributions the attention coder uses for `ns`.
pub fn attention_cdfs(ns: &NodeSequence, model: &Model32, window: WindowParams) -> Result<Vec<QuantizedCdf>> {
    check_model(model, window)?;
    let windows = build_windows(ns, window);
    let mut out = Vec::with_capacity(ns.len());
    for chunk in windows.chunks(ENCODE_BATCH) {
        let per_window: Vec<Vec<QuantizedCdf>> = chunk
            .par_iter()
            .map(|w| Ok(model.run_window(w)?.outputs().map(cdf_of).collect()))
            .collect::<Result<_>>()?;
        out.extend(per_window.into_iter().flatten());
    }
    Ok(out)
}

pub fn encode(qc: &QuantizedCloud, coder: Coder<'_>) -> Result<EncodeReport> {
    let ns = build(qc)?;
    encode_sequence(&ns, qc, coder)
}

/// Codes an already built sequence of `qc`.
pub fn encode_sequence(ns: &NodeSequence, qc: &QuantizedCloud, coder: Coder<'_>) -> Result<EncodeReport> {
    let mut enc = RangeEncoder::new();
    let mut ideal_bits = 0.0;
    let (kind, (n, k, n0)) = match coder {
        Coder::Baseline => {
            let mut m = AdaptiveModel::new();
            for s in ns.occupancies() {
                let cdf = m.cdf();
                ideal_bits += symbol_bits(&cdf, s);
                enc.encode_symbol(&cdf, s)?;
                m.update(s);
            }
            (ModelKind::Baseline, (0, 0, 0))
        }
        Coder::Attention { model, window } => {
            let cdfs = attention_cdfs(ns, model, window)?;
            for (cdf, s) in cdfs.iter().zip(ns.occupancies()) {
                ideal_bits += symbol_bits(cdf, s);
                enc.encode_symbol(cdf, s)?;
            }
            let hash = model.content_hash();
            (
                ModelKind::Attention { hash },
                (window.n as u32, window.k as u32, window.n0 as u32),
            )
        }
    };
    let bitstream = Bitstream {
        header: Header {
            kind,
            depth: qc.depth,
            qs: qc.qs,
            offset: qc.offset,
            n,
            k,
            n0,
            nodes: ns.len() as u64,
        },
        payload: enc.finish(),
    };
    Ok(EncodeReport {
        bitstream,
        nodes: ns.len(),
        ideal_bits,
    })
}

pub fn decode(bs: &Bitstream, model: Option<&Model32>) -> Result<QuantizedCloud> {
    decode_inner(bs, model, None)
}

/// Decodes a serialized bitstream. Structural decode errors are reported
/// with their node position; a stream that decodes cleanly but fails the
/// digest check is reported as corrupt at the end of the sequence.
pub fn decode_bytes(bytes: &[u8], model: Option<&Model32>) -> Result<QuantizedCloud> {
    let (bs, intact) = Bitstream::parse(bytes)?;
    let qc = decode(&bs, model)?;
    if !intact {
        return Err(Error::Corrupt {
            position: bs.header.nodes as usize,
            message: "digest mismatch".into(),
        });
    }
    Ok(qc)
}

/// Like [`decode`], also returning every feature row fed to the model in
/// order, for comparison with the encoder's windows.
pub fn decode_with_rows(bs: &Bitstream, model: Option<&Model32>) -> Result<(QuantizedCloud, Vec<NodeFeatureRow>)> {
    let mut rows = Vec::new();
    let qc = decode_inner(bs, model, Some(&mut rows))?;
    Ok((qc, rows))
}

/// Rows the encoder feeds to the model, in the order [`decode_with_rows`]
/// reports them.
pub fn encoder_rows(ns: &NodeSequence, window: WindowParams) -> Vec<NodeFeatureRow> {
    build_windows(ns, window).into_iter().flat_map(|w| w.rows).collect()
}

fn open_next(b: &mut SequenceBuilder, position: usize) -> Result<usize> {
    b.open().ok_or_else(|| Error::Corrupt {
        position,
        message: "octree complete before the declared node count".into(),
    })
}

fn decode_inner(
    bs: &Bitstream,
    model: Option<&Model32>,
    mut rows_out: Option<&mut Vec<NodeFeatureRow>>,
) -> Result<QuantizedCloud> {
    let h = &bs.header;
    h.validate()?;
    if bs.payload.is_empty() {
        return Err(Error::Format("empty payload".into()));
    }
    let count = usize::try_from(h.nodes).map_err(|_| Error::Format("node count too large".into()))?;
    let mut dec = RangeDecoder::new(&bs.payload);
    let mut b = SequenceBuilder::new(h.depth);
    match h.kind {
        ModelKind::Baseline => {
            let mut m = AdaptiveModel::new();
            for p in 0..count {
                open_next(&mut b, p)?;
                let s = dec.decode_symbol(&m.cdf(), p)?;
                b.close(s)?;
                m.update(s);
            }
        }
        ModelKind::Attention { hash } => {
            let model = model.ok_or_else(|| Error::ModelMismatch("stream needs an attention model".into()))?;
            if model.content_hash() != hash {
                return Err(Error::ModelMismatch("model hash differs from the stream header".into()));
            }
            let window = WindowParams::new(h.n as usize, h.k as usize, h.n0 as usize)?;
            check_model(model, window)?;
            let k = window.k;
            for plan in window_plans(count, window) {
                let mut trace = model.trace();
                for r in 0..plan.n {
                    let row = match plan.position_of_row(r) {
                        None => NodeFeatureRow::padding(k),
                        Some(p) if p < plan.first_target => assemble_row(b.nodes(), p, k, RowRole::Context),
                        Some(p) => {
                            let pos = open_next(&mut b, p)?;
                            debug_assert_eq!(pos, p);
                            let row = assemble_row(b.nodes(), p, k, RowRole::Target);
                            let probs = trace.push_row(&row, true)?.expect("output requested");
                            let s = dec.decode_symbol(&cdf_of(probs), p)?;
                            b.close(s)?;
                            if let Some(out) = rows_out.as_deref_mut() {
                                out.push(row);
                            }
                            continue;
                        }
                    };
                    trace.push_row(&row, false)?;
                    if let Some(out) = rows_out.as_deref_mut() {
                        out.push(row);
                    }
                }
            }
        }
    }
    if !b.is_complete() {
        return Err(Error::Corrupt {
            position: count,
            message: format!("{} nodes still expected after the declared count", b.remaining()),
        });
    }
    if dec.consumed() < bs.payload.len() {
        return Err(Error::Corrupt {
            position: count,
            message: format!("{} unread payload bytes", bs.payload.len() - dec.consumed()),
        });
    }
    QuantizedCloud::new(b.leaves().to_vec(), h.offset, h.qs, h.depth)
}
