//! Row-incremental forward pass with recorded activations, and its reverse
//! pass.
//!
//! Rows are pushed one at a time. Row `m` attends to rows `0..=m` only, and
//! its computation reads nothing from later rows, so pushing a whole window at
//! once and pushing a prefix produce identical values for every prefix row.
//! Coding relies on that: the encoder runs whole windows and the decoder runs
//! one row at a time.

use super::kernels::{affine, affine_backward, axpy, dot, gelu, gelu_grad, layer_norm, layer_norm_backward, softmax_in_place};
use super::layout::{Linear, Norm, SYMBOLS};
use super::Model;
use crate::context::NodeFeatureRow;
use crate::error::Result;
use crate::scalar::Scalar;

#[derive(Debug, Default, Clone)]
struct LayerTrace<T> {
    x_in: Vec<T>,
    xhat1: Vec<T>,
    inv1: Vec<T>,
    u: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// Per head, row `m` stores its `m + 1` weights at offset `m (m + 1) / 2`.
    att: Vec<Vec<T>>,
    cat: Vec<T>,
    x_mid: Vec<T>,
    xhat2: Vec<T>,
    inv2: Vec<T>,
    z: Vec<T>,
    f_pre: Vec<T>,
    f_act: Vec<T>,
}

#[derive(Debug, Clone)]
struct OutputTrace<T> {
    row: usize,
    xhat: Vec<T>,
    inv: T,
    y: Vec<T>,
    h_pre: Vec<T>,
    h_act: Vec<T>,
    probs: Vec<T>,
}

/// Activations of one context window.
#[derive(Debug, Clone)]
pub struct WindowTrace<'m, T> {
    model: &'m Model<T>,
    rows: Vec<NodeFeatureRow>,
    x0: Vec<T>,
    x_final: Vec<T>,
    layers: Vec<LayerTrace<T>>,
    outputs: Vec<OutputTrace<T>>,
}

#[inline]
fn tri(m: usize) -> usize {
    m * (m + 1) / 2
}

fn split_linear<'a, T>(grads: &'a mut [T], lin: &Linear) -> (&'a mut [T], &'a mut [T]) {
    debug_assert!(lin.w < lin.b);
    let (left, right) = grads.split_at_mut(lin.b);
    (&mut left[lin.w..lin.w + lin.n_in * lin.n_out], &mut right[..lin.n_out])
}

fn split_norm<'a, T>(grads: &'a mut [T], norm: &Norm) -> (&'a mut [T], &'a mut [T]) {
    let (left, right) = grads.split_at_mut(norm.bias);
    (&mut left[norm.gain..norm.gain + norm.dim], &mut right[..norm.dim])
}

impl<'m, T: Scalar> WindowTrace<'m, T> {
    pub fn new(model: &'m Model<T>) -> Self {
        let heads = model.config.k;
        let layers = (0..model.config.layers)
            .map(|_| LayerTrace {
                att: vec![Vec::new(); heads],
                ..Default::default()
            })
            .collect();
        Self {
            model,
            rows: Vec::new(),
            x0: Vec::new(),
            x_final: Vec::new(),
            layers,
            outputs: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Runs one row through every layer. With `output` set, also evaluates the
    /// prediction head and returns the 255 symbol probabilities.
    pub fn push_row(&mut self, row: &NodeFeatureRow, output: bool) -> Result<Option<&[T]>> {
        let model = self.model;
        let cfg = &model.config;
        let p = &model.params[..];
        let lay = &model.layout;
        let d = cfg.model_dim();
        let e = cfg.slot_dim();
        let dh = cfg.head_dim;
        let hd = cfg.heads_dim();
        let m = self.rows.len();
        let scale = T::one() / T::lit(dh as f64).sqrt();

        let mut x = vec![T::zero(); d];
        model.embed_into(row, &mut x)?;
        self.x0.extend_from_slice(&x);
        self.rows.push(row.clone());

        let mut xhat = vec![T::zero(); d];
        let mut u = vec![T::zero(); d];
        let mut proj = vec![T::zero(); dh];
        let mut cat = vec![T::zero(); hd];
        let mut mixed = vec![T::zero(); d];
        let mut weights: Vec<T> = Vec::with_capacity(m + 1);
        let mut f_pre = vec![T::zero(); cfg.ffn_hidden];

        for (lt, ll) in self.layers.iter_mut().zip(&lay.layers) {
            lt.x_in.extend_from_slice(&x);
            let inv = layer_norm(&x, ll.norm1.gain(p), ll.norm1.bias(p), &mut xhat, &mut u);
            lt.xhat1.extend_from_slice(&xhat);
            lt.inv1.push(inv);
            lt.u.extend_from_slice(&u);

            for (t, head) in ll.heads.iter().enumerate() {
                let ut = &u[t * e..(t + 1) * e];
                affine(ut, head.query.w(p), head.query.b(p), &mut proj);
                lt.q.extend_from_slice(&proj);
                affine(ut, head.key.w(p), head.key.b(p), &mut proj);
                lt.k.extend_from_slice(&proj);
                affine(ut, head.value.w(p), head.value.b(p), &mut proj);
                lt.v.extend_from_slice(&proj);
            }
            // q/k/v rows are stored head-major within a row: [head0 | head1 | ...]
            let q_row: Vec<T> = lt.q[m * hd..(m + 1) * hd].to_vec();
            for t in 0..ll.heads.len() {
                let qt = &q_row[t * dh..(t + 1) * dh];
                weights.clear();
                for n in 0..=m {
                    let kn = &lt.k[n * hd + t * dh..n * hd + (t + 1) * dh];
                    weights.push(dot(qt, kn) * scale);
                }
                softmax_in_place(&mut weights);
                let ct = &mut cat[t * dh..(t + 1) * dh];
                ct.iter_mut().for_each(|c| *c = T::zero());
                for (n, &a) in weights.iter().enumerate() {
                    let vn = &lt.v[n * hd + t * dh..n * hd + (t + 1) * dh];
                    axpy(a, vn, ct);
                }
                debug_assert_eq!(lt.att[t].len(), tri(m));
                lt.att[t].extend_from_slice(&weights);
            }
            lt.cat.extend_from_slice(&cat);

            affine(&cat, ll.mix.w(p), ll.mix.b(p), &mut mixed);
            for (xi, &mi) in x.iter_mut().zip(&mixed) {
                *xi += mi;
            }
            lt.x_mid.extend_from_slice(&x);

            let inv = layer_norm(&x, ll.norm2.gain(p), ll.norm2.bias(p), &mut xhat, &mut u);
            lt.xhat2.extend_from_slice(&xhat);
            lt.inv2.push(inv);
            lt.z.extend_from_slice(&u);
            affine(&u, ll.ff1.w(p), ll.ff1.b(p), &mut f_pre);
            lt.f_pre.extend_from_slice(&f_pre);
            for f in f_pre.iter_mut() {
                *f = gelu(*f);
            }
            lt.f_act.extend_from_slice(&f_pre);
            affine(&f_pre, ll.ff2.w(p), ll.ff2.b(p), &mut mixed);
            for (xi, &mi) in x.iter_mut().zip(&mixed) {
                *xi += mi;
            }
        }
        self.x_final.extend_from_slice(&x);

        if !output {
            return Ok(None);
        }
        let mut y = vec![T::zero(); d];
        let inv = layer_norm(&x, lay.norm_out.gain(p), lay.norm_out.bias(p), &mut xhat, &mut y);
        let mut h_pre = vec![T::zero(); cfg.out_hidden];
        affine(&y, lay.hidden.w(p), lay.hidden.b(p), &mut h_pre);
        let h_act: Vec<T> = h_pre.iter().map(|&h| gelu(h)).collect();
        let mut probs = vec![T::zero(); SYMBOLS];
        affine(&h_act, lay.logits.w(p), lay.logits.b(p), &mut probs);
        softmax_in_place(&mut probs);
        self.outputs.push(OutputTrace {
            row: m,
            xhat,
            inv,
            y,
            h_pre,
            h_act,
            probs,
        });
        Ok(Some(&self.outputs.last().unwrap().probs))
    }

    /// Probabilities of every row that was pushed with `output` set, in order.
    pub fn outputs(&self) -> impl Iterator<Item = &[T]> {
        self.outputs.iter().map(|o| o.probs.as_slice())
    }

    /// Rows that produced outputs.
    pub fn output_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.outputs.iter().map(|o| o.row)
    }

    /// Attention weights of one head as a dense row-major `len × len` matrix,
    /// zero above the diagonal.
    pub fn attention_map(&self, layer: usize, head: usize) -> Vec<T> {
        let n = self.len();
        let att = &self.layers[layer].att[head];
        let mut out = vec![T::zero(); n * n];
        for m in 0..n {
            out[m * n..m * n + m + 1].copy_from_slice(&att[tri(m)..tri(m) + m + 1]);
        }
        out
    }

    /// Embedded input row `r` (the concatenated slot features).
    pub fn input_features(&self, r: usize) -> &[T] {
        let d = self.model.config.model_dim();
        &self.x0[r * d..(r + 1) * d]
    }

    /// Output of the last attention layer for row `r`, before the final norm.
    pub fn final_features(&self, r: usize) -> &[T] {
        let d = self.model.config.model_dim();
        &self.x_final[r * d..(r + 1) * d]
    }

    /// Accumulates `weight · ∇(-Σ ln p(target))` into `grads` and returns the
    /// summed cross-entropy in nats. `targets` pairs with the outputs in order.
    pub fn backward(&self, targets: &[u8], weight: T, grads: &mut [T]) -> f64 {
        assert_eq!(targets.len(), self.outputs.len(), "one target per output row");
        assert_eq!(grads.len(), self.model.params.len());
        let model = self.model;
        let cfg = &model.config;
        let p = &model.params[..];
        let lay = &model.layout;
        let d = cfg.model_dim();
        let e = cfg.slot_dim();
        let dh = cfg.head_dim;
        let hd = cfg.heads_dim();
        let ff = cfg.ffn_hidden;
        let rows = self.len();
        let scale = T::one() / T::lit(dh as f64).sqrt();

        let mut loss = 0.0f64;
        let mut dx = vec![T::zero(); rows * d];
        let mut dlog = vec![T::zero(); SYMBOLS];
        let mut dh_act = vec![T::zero(); cfg.out_hidden];
        let mut dy = vec![T::zero(); d];
        for (o, &target) in self.outputs.iter().zip(targets) {
            assert!(target != 0, "occupancy targets are 1..=255");
            let ti = target as usize - 1;
            loss -= o.probs[ti].as_f64().ln();
            for (g, &pr) in dlog.iter_mut().zip(&o.probs) {
                *g = pr * weight;
            }
            dlog[ti] -= weight;
            dh_act.iter_mut().for_each(|v| *v = T::zero());
            let (dw, db) = split_linear(grads, &lay.logits);
            affine_backward(&o.h_act, lay.logits.w(p), &dlog, dw, db, Some(&mut dh_act));
            for (g, &h) in dh_act.iter_mut().zip(&o.h_pre) {
                *g *= gelu_grad(h);
            }
            dy.iter_mut().for_each(|v| *v = T::zero());
            let (dw, db) = split_linear(grads, &lay.hidden);
            affine_backward(&o.y, lay.hidden.w(p), &dh_act, dw, db, Some(&mut dy));
            let (dg, dbias) = split_norm(grads, &lay.norm_out);
            layer_norm_backward(
                &o.xhat,
                o.inv,
                lay.norm_out.gain(p),
                &dy,
                dg,
                dbias,
                &mut dx[o.row * d..(o.row + 1) * d],
            );
        }

        let mut d_act = vec![T::zero(); ff];
        let mut dz = vec![T::zero(); d];
        for (lt, ll) in self.layers.iter().zip(&lay.layers).rev() {
            // feed-forward block: x_out = x_mid + ff2(gelu(ff1(norm2(x_mid))))
            let mut dx_mid = dx.clone();
            for r in 0..rows {
                let dout = &dx[r * d..(r + 1) * d];
                d_act.iter_mut().for_each(|v| *v = T::zero());
                let (dw, db) = split_linear(grads, &ll.ff2);
                affine_backward(&lt.f_act[r * ff..(r + 1) * ff], ll.ff2.w(p), dout, dw, db, Some(&mut d_act));
                for (g, &pre) in d_act.iter_mut().zip(&lt.f_pre[r * ff..(r + 1) * ff]) {
                    *g *= gelu_grad(pre);
                }
                dz.iter_mut().for_each(|v| *v = T::zero());
                let (dw, db) = split_linear(grads, &ll.ff1);
                affine_backward(&lt.z[r * d..(r + 1) * d], ll.ff1.w(p), &d_act, dw, db, Some(&mut dz));
                let (dg, dbias) = split_norm(grads, &ll.norm2);
                layer_norm_backward(
                    &lt.xhat2[r * d..(r + 1) * d],
                    lt.inv2[r],
                    ll.norm2.gain(p),
                    &dz,
                    dg,
                    dbias,
                    &mut dx_mid[r * d..(r + 1) * d],
                );
            }

            // attention block: x_mid = x_in + mix(concat_t C_t)
            let mut dx_in = dx_mid.clone();
            let mut dcat = vec![T::zero(); rows * hd];
            for r in 0..rows {
                let (dw, db) = split_linear(grads, &ll.mix);
                affine_backward(
                    &lt.cat[r * hd..(r + 1) * hd],
                    ll.mix.w(p),
                    &dx_mid[r * d..(r + 1) * d],
                    dw,
                    db,
                    Some(&mut dcat[r * hd..(r + 1) * hd]),
                );
            }
            let mut dq = vec![T::zero(); rows * hd];
            let mut dk = vec![T::zero(); rows * hd];
            let mut dv = vec![T::zero(); rows * hd];
            let mut da: Vec<T> = Vec::with_capacity(rows);
            for t in 0..ll.heads.len() {
                let h0 = t * dh;
                for m in 0..rows {
                    let a = &lt.att[t][tri(m)..tri(m) + m + 1];
                    let dc = &dcat[m * hd + h0..m * hd + h0 + dh];
                    da.clear();
                    let mut mean = T::zero();
                    for (n, &an) in a.iter().enumerate() {
                        let vn = &lt.v[n * hd + h0..n * hd + h0 + dh];
                        let s = dot(dc, vn);
                        da.push(s);
                        mean += an * s;
                        let dvn = &mut dv[n * hd + h0..n * hd + h0 + dh];
                        axpy(an, dc, dvn);
                    }
                    for (n, &an) in a.iter().enumerate() {
                        let ds = an * (da[n] - mean) * scale;
                        if ds == T::zero() {
                            continue;
                        }
                        axpy(ds, &lt.k[n * hd + h0..n * hd + h0 + dh], &mut dq[m * hd + h0..m * hd + h0 + dh]);
                        axpy(ds, &lt.q[m * hd + h0..m * hd + h0 + dh], &mut dk[n * hd + h0..n * hd + h0 + dh]);
                    }
                }
            }
            let mut du = vec![T::zero(); rows * d];
            for r in 0..rows {
                for (t, head) in ll.heads.iter().enumerate() {
                    let ut = &lt.u[r * d + t * e..r * d + (t + 1) * e];
                    let dut = &mut du[r * d + t * e..r * d + (t + 1) * e];
                    let span = r * hd + t * dh..r * hd + (t + 1) * dh;
                    for (lin, g) in [(&head.query, &dq), (&head.key, &dk), (&head.value, &dv)] {
                        let (dw, db) = split_linear(grads, lin);
                        affine_backward(ut, lin.w(p), &g[span.clone()], dw, db, Some(&mut *dut));
                    }
                }
                let (dg, dbias) = split_norm(grads, &ll.norm1);
                layer_norm_backward(
                    &lt.xhat1[r * d..(r + 1) * d],
                    lt.inv1[r],
                    ll.norm1.gain(p),
                    &du[r * d..(r + 1) * d],
                    dg,
                    dbias,
                    &mut dx_in[r * d..(r + 1) * d],
                );
            }
            dx = dx_in;
        }

        let (d_occ, d_lvl, d_oct) = (cfg.d_occ, cfg.d_lvl, cfg.d_oct);
        for (r, row) in self.rows.iter().enumerate() {
            for (t, slot) in row.slots.iter().enumerate() {
                let g = &dx[r * d + t * e..r * d + (t + 1) * e];
                let o = lay.emb_occ + slot.occupancy as usize * d_occ;
                for (dst, &src) in grads[o..o + d_occ].iter_mut().zip(&g[..d_occ]) {
                    *dst += src;
                }
                let o = lay.emb_lvl + slot.level as usize * d_lvl;
                for (dst, &src) in grads[o..o + d_lvl].iter_mut().zip(&g[d_occ..d_occ + d_lvl]) {
                    *dst += src;
                }
                let o = lay.emb_oct + slot.octant as usize * d_oct;
                for (dst, &src) in grads[o..o + d_oct].iter_mut().zip(&g[d_occ + d_lvl..]) {
                    *dst += src;
                }
            }
        }
        loss
    }
}
