//! Pre-LN decoder-only transformer over `f64`.
//!
//! A batch is a list of sequences concatenated row-wise; attention is causal
//! within each sequence and never crosses sequence boundaries. Logits are
//! only produced for the rows asked for.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::params::{BlockOffsets, ParamLayout};
use super::{ActivationTrace, ForwardOutput, LanguageModel, ModelConfig, ModelError, PatchSpec};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone)]
pub struct TinyLm {
    config: ModelConfig,
    layout: ParamLayout,
    params: Vec<f64>,
}

/// `c[m,n] (+)= op(a)[m,k] * op(b)[k,n]` for row-major buffers. With `ta`
/// the buffer `a` holds `[k,m]`; with `tb` the buffer `b` holds `[n,k]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: bounds are asserted above and the strides describe exactly the
    // row-major layouts of the given slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn add_bias(x: &mut [f64], bias: &[f64]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn sum_rows_into(x: &[f64], width: usize, out: &mut [f64]) {
    for row in x.chunks_exact(width) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64], xhat: &mut [f64], rstd: &mut [f64], out: &mut [f64]) {
    let d = g.len();
    for (r, row) in x.chunks_exact(d).enumerate() {
        let mu = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for c in 0..d {
            let h = (row[c] - mu) * rs;
            xhat[r * d + c] = h;
            out[r * d + c] = h * g[c] + b[c];
        }
    }
}

/// Accumulates into `dx`, `dg`, `db`.
fn layer_norm_backward(
    dout: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    g: &[f64],
    dx: &mut [f64],
    dg: &mut [f64],
    db: &mut [f64],
) {
    let d = g.len();
    let mut dxhat = vec![0.0; d];
    for (r, dorow) in dout.chunks_exact(d).enumerate() {
        let xh = &xhat[r * d..(r + 1) * d];
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for c in 0..d {
            dg[c] += dorow[c] * xh[c];
            db[c] += dorow[c];
            dxhat[c] = dorow[c] * g[c];
            m1 += dxhat[c];
            m2 += dxhat[c] * xh[c];
        }
        m1 /= d as f64;
        m2 /= d as f64;
        for c in 0..d {
            dx[r * d + c] += rstd[r] * (dxhat[c] - m1 - xh[c] * m2);
        }
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[derive(Debug, Clone, Copy)]
struct Span {
    start: usize,
    len: usize,
    prob_offset: usize,
}

#[derive(Debug, Default)]
struct LayerCache {
    xhat1: Vec<f64>,
    rstd1: Vec<f64>,
    a1: Vec<f64>,
    qkv: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
    xhat2: Vec<f64>,
    rstd2: Vec<f64>,
    a2: Vec<f64>,
    hpre: Vec<f64>,
    hact: Vec<f64>,
}

/// Activations retained for the backward pass.
#[derive(Debug)]
pub(crate) struct BatchForward {
    rows: usize,
    spans: Vec<Span>,
    tokens: Vec<u32>,
    /// Residual stream after each hidden layer, `0..=n_layers`, post-patch.
    pub(crate) resid: Vec<Vec<f64>>,
    layers: Vec<LayerCache>,
    xhatf: Vec<f64>,
    rstdf: Vec<f64>,
    af: Vec<f64>,
    logit_rows: Vec<usize>,
    /// `[logit_rows.len(), vocab]`.
    pub(crate) logits: Vec<f64>,
}

impl TinyLm {
    /// Seeded initialization: N(0, 0.02) weights with the residual
    /// projections scaled by `1/sqrt(2 L)`, unit LN gains, zero biases.
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let resid_scale = 1.0 / (2.0 * config.n_layers as f64).sqrt();
        for slot in &layout.slots {
            let name = slot.name.as_str();
            let range = slot.range();
            if name.ends_with(".g") {
                params[range].fill(1.0);
            } else if slot.shape.len() == 2 {
                let scale = if name.ends_with("attn.wo") || name.ends_with("mlp.w2") {
                    resid_scale
                } else {
                    1.0
                };
                for p in &mut params[range] {
                    *p = normal.sample(&mut rng) * scale;
                }
            }
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if params.len() != layout.total {
            return Err(ModelError::InvalidConfig(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(ModelError::InvalidConfig("non-finite parameter".into()));
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    fn p(&self, offset: usize, len: usize) -> &[f64] {
        &self.params[offset..offset + len]
    }

    pub(crate) fn forward_batch(
        &self,
        seqs: &[&[u32]],
        patch: Option<&PatchSpec>,
        logit_rows: &[usize],
    ) -> BatchForward {
        let cfg = &self.config;
        let (d, f, v, nh) = (cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.n_heads);
        let hd = cfg.head_dim();
        let lay = &self.layout;

        let mut spans = Vec::with_capacity(seqs.len());
        let mut tokens = Vec::new();
        let mut prob_total = 0;
        for s in seqs {
            spans.push(Span {
                start: tokens.len(),
                len: s.len(),
                prob_offset: prob_total,
            });
            prob_total += nh * s.len() * s.len();
            tokens.extend_from_slice(s);
        }
        let n = tokens.len();

        let wte = self.p(lay.wte, v * d);
        let wpe = self.p(lay.wpe, cfg.max_seq_len * d);
        let mut x = vec![0.0; n * d];
        for sp in &spans {
            for i in 0..sp.len {
                let r = sp.start + i;
                let t = tokens[r] as usize;
                for c in 0..d {
                    x[r * d + c] = wte[t * d + c] + wpe[i * d + c];
                }
            }
        }
        if let Some(p) = patch {
            p.apply(0, &mut x, d);
        }
        let mut resid = Vec::with_capacity(cfg.n_layers + 1);
        resid.push(x);

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for (l, b) in lay.blocks.iter().enumerate() {
            let xin = &resid[l];
            let mut c = LayerCache::default();
            let mut xmid = xin.clone();
            if cfg.attention {
                c.xhat1 = vec![0.0; n * d];
                c.rstd1 = vec![0.0; n];
                c.a1 = vec![0.0; n * d];
                layer_norm(
                    xin,
                    self.p(b.ln1_g, d),
                    self.p(b.ln1_b, d),
                    &mut c.xhat1,
                    &mut c.rstd1,
                    &mut c.a1,
                );
                c.qkv = vec![0.0; n * 3 * d];
                gemm(n, d, 3 * d, &c.a1, false, self.p(b.wqkv, d * 3 * d), false, &mut c.qkv, false);
                add_bias(&mut c.qkv, self.p(b.bqkv, 3 * d));
                c.probs = vec![0.0; prob_total];
                c.ctx = vec![0.0; n * d];
                attention_forward(&spans, &c.qkv, &mut c.probs, &mut c.ctx, d, nh, hd);
                let mut proj = vec![0.0; n * d];
                gemm(n, d, d, &c.ctx, false, self.p(b.wo, d * d), false, &mut proj, false);
                add_bias(&mut proj, self.p(b.bo, d));
                for (m, pr) in xmid.iter_mut().zip(&proj) {
                    *m += pr;
                }
            }
            c.xhat2 = vec![0.0; n * d];
            c.rstd2 = vec![0.0; n];
            c.a2 = vec![0.0; n * d];
            layer_norm(
                &xmid,
                self.p(b.ln2_g, d),
                self.p(b.ln2_b, d),
                &mut c.xhat2,
                &mut c.rstd2,
                &mut c.a2,
            );
            c.hpre = vec![0.0; n * f];
            gemm(n, d, f, &c.a2, false, self.p(b.w1, d * f), false, &mut c.hpre, false);
            add_bias(&mut c.hpre, self.p(b.b1, f));
            c.hact = c.hpre.iter().map(|&h| gelu(h)).collect();
            let mut xout = xmid;
            gemm(n, f, d, &c.hact, false, self.p(b.w2, f * d), false, &mut xout, true);
            add_bias(&mut xout, self.p(b.b2, d));
            if let Some(p) = patch {
                p.apply(l + 1, &mut xout, d);
            }
            resid.push(xout);
            layers.push(c);
        }

        let xl = resid.last().expect("at least the embedding");
        let mut xhatf = vec![0.0; n * d];
        let mut rstdf = vec![0.0; n];
        let mut af = vec![0.0; n * d];
        layer_norm(
            xl,
            self.p(lay.lnf_g, d),
            self.p(lay.lnf_b, d),
            &mut xhatf,
            &mut rstdf,
            &mut af,
        );
        let m = logit_rows.len();
        let mut gathered = vec![0.0; m * d];
        for (i, &r) in logit_rows.iter().enumerate() {
            gathered[i * d..(i + 1) * d].copy_from_slice(&af[r * d..(r + 1) * d]);
        }
        let mut logits = vec![0.0; m * v];
        gemm(m, d, v, &gathered, false, self.p(lay.head_w, d * v), false, &mut logits, false);
        add_bias(&mut logits, self.p(lay.head_b, v));

        BatchForward {
            rows: n,
            spans,
            tokens,
            resid,
            layers,
            xhatf,
            rstdf,
            af,
            logit_rows: logit_rows.to_vec(),
            logits,
        }
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d logits`
    /// for the rows the forward pass produced logits for.
    pub(crate) fn backward(&self, fwd: &BatchForward, dlogits: &[f64], grad: &mut [f64]) {
        let cfg = &self.config;
        let (d, f, v, nh) = (cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.n_heads);
        let hd = cfg.head_dim();
        let lay = &self.layout;
        let n = fwd.rows;
        let m = fwd.logit_rows.len();
        assert_eq!(dlogits.len(), m * v);
        assert_eq!(grad.len(), lay.total);

        let mut gathered = vec![0.0; m * d];
        for (i, &r) in fwd.logit_rows.iter().enumerate() {
            gathered[i * d..(i + 1) * d].copy_from_slice(&fwd.af[r * d..(r + 1) * d]);
        }
        gemm(d, m, v, &gathered, true, dlogits, false, &mut grad[lay.head_w..lay.head_w + d * v], true);
        sum_rows_into(dlogits, v, &mut grad[lay.head_b..lay.head_b + v]);
        let mut dgathered = vec![0.0; m * d];
        gemm(m, v, d, dlogits, false, self.p(lay.head_w, d * v), true, &mut dgathered, false);
        let mut daf = vec![0.0; n * d];
        for (i, &r) in fwd.logit_rows.iter().enumerate() {
            for c in 0..d {
                daf[r * d + c] += dgathered[i * d + c];
            }
        }

        let mut dres = vec![0.0; n * d];
        {
            let (gf, rest) = grad[lay.lnf_g..].split_at_mut(d);
            layer_norm_backward(
                &daf,
                &fwd.xhatf,
                &fwd.rstdf,
                self.p(lay.lnf_g, d),
                &mut dres,
                gf,
                &mut rest[..d],
            );
        }

        for (l, b) in lay.blocks.iter().enumerate().rev() {
            let c = &fwd.layers[l];
            self.block_backward(b, c, &fwd.spans, n, &mut dres, grad, (d, f, nh, hd));
        }

        for sp in &fwd.spans {
            for i in 0..sp.len {
                let r = sp.start + i;
                let t = fwd.tokens[r] as usize;
                for col in 0..d {
                    grad[lay.wte + t * d + col] += dres[r * d + col];
                    grad[lay.wpe + i * d + col] += dres[r * d + col];
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn block_backward(
        &self,
        b: &BlockOffsets,
        c: &LayerCache,
        spans: &[Span],
        n: usize,
        dres: &mut [f64],
        grad: &mut [f64],
        (d, f, nh, hd): (usize, usize, usize, usize),
    ) {
        // MLP branch
        gemm(f, n, d, &c.hact, true, dres, false, &mut grad[b.w2..b.w2 + f * d], true);
        sum_rows_into(dres, d, &mut grad[b.b2..b.b2 + d]);
        let mut dh = vec![0.0; n * f];
        gemm(n, d, f, dres, false, self.p(b.w2, f * d), true, &mut dh, false);
        for (g, &h) in dh.iter_mut().zip(&c.hpre) {
            *g *= gelu_grad(h);
        }
        gemm(d, n, f, &c.a2, true, &dh, false, &mut grad[b.w1..b.w1 + d * f], true);
        sum_rows_into(&dh, f, &mut grad[b.b1..b.b1 + f]);
        let mut da2 = vec![0.0; n * d];
        gemm(n, f, d, &dh, false, self.p(b.w1, d * f), true, &mut da2, false);
        {
            let (g2, rest) = grad[b.ln2_g..].split_at_mut(d);
            layer_norm_backward(&da2, &c.xhat2, &c.rstd2, self.p(b.ln2_g, d), dres, g2, &mut rest[..d]);
        }
        if !self.config.attention {
            return;
        }

        // attention branch
        gemm(d, n, d, &c.ctx, true, dres, false, &mut grad[b.wo..b.wo + d * d], true);
        sum_rows_into(dres, d, &mut grad[b.bo..b.bo + d]);
        let mut dctx = vec![0.0; n * d];
        gemm(n, d, d, dres, false, self.p(b.wo, d * d), true, &mut dctx, false);
        let mut dqkv = vec![0.0; n * 3 * d];
        attention_backward(spans, &c.qkv, &c.probs, &dctx, &mut dqkv, d, nh, hd);
        gemm(d, n, 3 * d, &c.a1, true, &dqkv, false, &mut grad[b.wqkv..b.wqkv + d * 3 * d], true);
        sum_rows_into(&dqkv, 3 * d, &mut grad[b.bqkv..b.bqkv + 3 * d]);
        let mut da1 = vec![0.0; n * d];
        gemm(n, 3 * d, d, &dqkv, false, self.p(b.wqkv, d * 3 * d), true, &mut da1, false);
        let (g1, rest) = grad[b.ln1_g..].split_at_mut(d);
        layer_norm_backward(&da1, &c.xhat1, &c.rstd1, self.p(b.ln1_g, d), dres, g1, &mut rest[..d]);
    }

    /// Mean cross-entropy over target rows. Each target is a distribution
    /// given as `(token, weight)` pairs summing to one. Returns the loss and
    /// the forward cache; `dlogits` receives the gradient of the mean.
    pub(crate) fn loss_and_dlogits(
        &self,
        seqs: &[&[u32]],
        targets: &[(usize, Vec<(u32, f64)>)],
        dlogits: &mut Vec<f64>,
    ) -> (f64, BatchForward) {
        let v = self.config.vocab_size;
        let rows: Vec<usize> = targets.iter().map(|(r, _)| *r).collect();
        let fwd = self.forward_batch(seqs, None, &rows);
        let m = rows.len();
        dlogits.clear();
        dlogits.resize(m * v, 0.0);
        let mut loss = 0.0;
        for (i, (_, dist)) in targets.iter().enumerate() {
            let z = &fwd.logits[i * v..(i + 1) * v];
            let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|&a| (a - mx).exp()).sum();
            let lse = mx + sum.ln();
            let g = &mut dlogits[i * v..(i + 1) * v];
            for (gj, &zj) in g.iter_mut().zip(z) {
                *gj = (zj - lse).exp() / m as f64;
            }
            for &(t, w) in dist {
                loss -= w * (z[t as usize] - lse);
                g[t as usize] -= w / m as f64;
            }
        }
        (loss / m as f64, fwd)
    }
}

fn attention_forward(
    spans: &[Span],
    qkv: &[f64],
    probs: &mut [f64],
    ctx: &mut [f64],
    d: usize,
    nh: usize,
    hd: usize,
) {
    let scale = 1.0 / (hd as f64).sqrt();
    let w = 3 * d;
    let mut s = Vec::new();
    for sp in spans {
        let len = sp.len;
        for h in 0..nh {
            let pbase = sp.prob_offset + h * len * len;
            for i in 0..len {
                let qi = &qkv[(sp.start + i) * w + h * hd..][..hd];
                s.clear();
                let mut mx = f64::NEG_INFINITY;
                for j in 0..=i {
                    let kj = &qkv[(sp.start + j) * w + d + h * hd..][..hd];
                    let dot: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    mx = mx.max(dot);
                    s.push(dot);
                }
                let mut z = 0.0;
                for e in s.iter_mut() {
                    *e = (*e - mx).exp();
                    z += *e;
                }
                let out = &mut ctx[(sp.start + i) * d + h * hd..][..hd];
                for (j, e) in s.iter().enumerate() {
                    let p = e / z;
                    probs[pbase + i * len + j] = p;
                    let vj = &qkv[(sp.start + j) * w + 2 * d + h * hd..][..hd];
                    for (o, vv) in out.iter_mut().zip(vj) {
                        *o += p * vv;
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    spans: &[Span],
    qkv: &[f64],
    probs: &[f64],
    dctx: &[f64],
    dqkv: &mut [f64],
    d: usize,
    nh: usize,
    hd: usize,
) {
    let scale = 1.0 / (hd as f64).sqrt();
    let w = 3 * d;
    let mut dp = Vec::new();
    for sp in spans {
        let len = sp.len;
        for h in 0..nh {
            let pbase = sp.prob_offset + h * len * len;
            for i in 0..len {
                let ri = sp.start + i;
                let dci = &dctx[ri * d + h * hd..][..hd];
                dp.clear();
                let mut inner = 0.0;
                for j in 0..=i {
                    let rj = sp.start + j;
                    let p = probs[pbase + i * len + j];
                    let vj = &qkv[rj * w + 2 * d + h * hd..][..hd];
                    let g: f64 = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                    dp.push(g);
                    inner += p * g;
                    let dv = &mut dqkv[rj * w + 2 * d + h * hd..][..hd];
                    for (o, a) in dv.iter_mut().zip(dci) {
                        *o += p * a;
                    }
                }
                for j in 0..=i {
                    let rj = sp.start + j;
                    let p = probs[pbase + i * len + j];
                    let ds = p * (dp[j] - inner) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in 0..hd {
                        let kjc = qkv[rj * w + d + h * hd + c];
                        let qic = qkv[ri * w + h * hd + c];
                        dqkv[ri * w + h * hd + c] += ds * kjc;
                        dqkv[rj * w + d + h * hd + c] += ds * qic;
                    }
                }
            }
        }
    }
}

impl LanguageModel for TinyLm {
    fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    fn d_model(&self) -> usize {
        self.config.d_model
    }

    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn max_seq_len(&self) -> usize {
        self.config.max_seq_len
    }

    fn forward(
        &self,
        tokens: &[u32],
        capture: &[(usize, usize)],
        patch: Option<&PatchSpec>,
    ) -> Result<ForwardOutput, ModelError> {
        self.check_inputs(tokens, capture, patch)?;
        let rows: Vec<usize> = (0..tokens.len()).collect();
        let fwd = self.forward_batch(&[tokens], patch, &rows);
        let d = self.config.d_model;
        let trace = ActivationTrace {
            entries: capture
                .iter()
                .map(|&(l, p)| ((l, p), fwd.resid[l][p * d..(p + 1) * d].to_vec()))
                .collect(),
        };
        Ok(ForwardOutput {
            logits: fwd.logits,
            vocab_size: self.config.vocab_size,
            trace,
        })
    }

    fn next_token_logits(
        &self,
        tokens: &[u32],
        patch: Option<&PatchSpec>,
    ) -> Result<Vec<f64>, ModelError> {
        self.check_inputs(tokens, &[], patch)?;
        Ok(self.forward_batch(&[tokens], patch, &[tokens.len() - 1]).logits)
    }
}
