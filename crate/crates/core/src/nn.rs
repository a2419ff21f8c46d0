//! Minimal layers with hand-written backward passes.
//!
//! Activations for a batch of sequences are stored as a `[batch * width, d]`
//! matrix; row `b * width + t` holds position `t` of sequence `b`. Positions
//! at or beyond a sequence's length are padding and never attended to.

use std::fmt::{Debug, Display};

use ndarray::{s, Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive, NumAssign};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Floating-point element type for model parameters and activations.
pub trait Real:
    Float + NumAssign + LinalgScalar + ScalarOperand + FromPrimitive + Send + Sync + Debug + Display + Default + 'static
{
    fn cst(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub value: Array2<F>,
    pub grad: Array2<F>,
}

impl<F: Real> Param<F> {
    pub fn new(value: Array2<F>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn normal(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Self {
        let dist = Normal::new(0.0, std).expect("valid std");
        Self::new(Array2::from_shape_fn((rows, cols), |_| F::cst(dist.sample(rng))))
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self::new(Array2::from_elem((rows, cols), F::cst(v)))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    pub weight: Param<F>,
    pub bias: Option<Param<F>>,
}

impl<F: Real> Linear<F> {
    pub fn new(d_in: usize, d_out: usize, bias: bool, std: f64, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::normal(d_in, d_out, std, rng),
            bias: bias.then(|| Param::filled(1, d_out, 0.0)),
        }
    }

    pub fn forward(&self, x: &ArrayView2<F>) -> Array2<F> {
        let mut y = x.dot(&self.weight.value);
        if let Some(b) = &self.bias {
            y += &b.value;
        }
        y
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub fn backward(&mut self, x: &ArrayView2<F>, dy: &ArrayView2<F>, want_input_grad: bool) -> Option<Array2<F>> {
        self.weight.grad += &x.t().dot(dy);
        if let Some(b) = &mut self.bias {
            b.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        want_input_grad.then(|| dy.dot(&self.weight.value.t()))
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<F>)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        if let Some(b) = &self.bias {
            out.push((format!("{prefix}.bias"), b));
        }
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<F>)>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        if let Some(b) = &mut self.bias {
            out.push((format!("{prefix}.bias"), b));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<F> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<F> {
    xhat: Array2<F>,
    inv_std: Array1<F>,
}

const LN_EPS: f64 = 1e-5;

impl<F: Real> LayerNorm<F> {
    pub fn new(d: usize) -> Self {
        Self {
            gamma: Param::filled(1, d, 1.0),
            beta: Param::filled(1, d, 0.0),
        }
    }

    pub fn forward(&self, x: &ArrayView2<F>) -> (Array2<F>, LayerNormCache<F>) {
        let d = F::from_usize(x.ncols()).unwrap();
        let eps = F::cst(LN_EPS);
        let mut xhat = x.to_owned();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().fold(F::zero(), |acc, &v| acc + v * v) / d;
            *is = F::one() / (var + eps).sqrt();
            let k = *is;
            row.mapv_inplace(|v| v * k);
        }
        let y = &xhat * &self.gamma.value + &self.beta.value;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, dy: &ArrayView2<F>, cache: &LayerNormCache<F>) -> Array2<F> {
        self.gamma.grad += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.beta.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let d = F::from_usize(dy.ncols()).unwrap();
        let mut dx = dy * &self.gamma.value;
        for ((mut row, xh), &is) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.inv_std) {
            let sum = row.sum();
            let dot = row.iter().zip(xh).fold(F::zero(), |acc, (&a, &b)| acc + a * b);
            Zip::from(&mut row).and(&xh).for_each(|g, &h| {
                *g = is / d * (d * *g - sum - h * dot);
            });
        }
        dx
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<F>)>) {
        out.push((format!("{prefix}.gamma"), &self.gamma));
        out.push((format!("{prefix}.beta"), &self.beta));
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<F>)>) {
        out.push((format!("{prefix}.gamma"), &mut self.gamma));
        out.push((format!("{prefix}.beta"), &mut self.beta));
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu<F: Real>(x: &Array2<F>) -> Array2<F> {
    let (c, a, half) = (F::cst(GELU_C), F::cst(GELU_A), F::cst(0.5));
    x.mapv(|v| half * v * (F::one() + (c * (v + a * v * v * v)).tanh()))
}

pub fn gelu_backward<F: Real>(x: &Array2<F>, dy: &ArrayView2<F>) -> Array2<F> {
    let (c, a, half, three) = (F::cst(GELU_C), F::cst(GELU_A), F::cst(0.5), F::cst(3.0));
    let mut dx = x.to_owned();
    Zip::from(&mut dx).and(dy).for_each(|v, &g| {
        let x = *v;
        let t = (c * (x + a * x * x * x)).tanh();
        let d = half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + three * a * x * x);
        *v = g * d;
    });
    dx
}

/// Sequence lengths and layout of a padded batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqLayout {
    pub lens: Vec<usize>,
    pub width: usize,
}

impl SeqLayout {
    pub fn new(lens: Vec<usize>) -> Self {
        let width = lens.iter().copied().max().unwrap_or(0);
        Self { lens, width }
    }

    pub fn batch(&self) -> usize {
        self.lens.len()
    }

    pub fn rows(&self) -> usize {
        self.lens.len() * self.width
    }

    /// Row of the last valid position of sequence `b`.
    pub fn last_row(&self, b: usize) -> usize {
        b * self.width + self.lens[b] - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention<F> {
    pub query: Linear<F>,
    pub key: Linear<F>,
    pub value: Linear<F>,
    pub output: Linear<F>,
    pub n_heads: usize,
    pub d_kv: usize,
    pub causal: bool,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<F> {
    input: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    probs: Vec<Array2<F>>,
    context: Array2<F>,
}

impl<F: Real> MultiHeadAttention<F> {
    pub fn new(d_model: usize, n_heads: usize, d_kv: usize, causal: bool, std: f64, rng: &mut impl Rng) -> Self {
        let inner = n_heads * d_kv;
        Self {
            query: Linear::new(d_model, inner, false, std, rng),
            key: Linear::new(d_model, inner, false, std, rng),
            value: Linear::new(d_model, inner, false, std, rng),
            output: Linear::new(inner, d_model, false, std, rng),
            n_heads,
            d_kv,
            causal,
        }
    }

    pub fn forward(&self, x: Array2<F>, layout: &SeqLayout) -> (Array2<F>, AttentionCache<F>) {
        let xv = x.view();
        let q = self.query.forward(&xv);
        let k = self.key.forward(&xv);
        let v = self.value.forward(&xv);
        let scale = F::one() / F::from_usize(self.d_kv).unwrap().sqrt();
        let mut context = Array2::zeros(q.raw_dim());
        let mut probs = Vec::with_capacity(layout.batch() * self.n_heads);
        for (b, &len) in layout.lens.iter().enumerate() {
            let r0 = b * layout.width;
            for h in 0..self.n_heads {
                let c0 = h * self.d_kv;
                let qb = q.slice(s![r0..r0 + len, c0..c0 + self.d_kv]);
                let kb = k.slice(s![r0..r0 + len, c0..c0 + self.d_kv]);
                let vb = v.slice(s![r0..r0 + len, c0..c0 + self.d_kv]);
                let mut p = qb.dot(&kb.t());
                for (i, mut row) in p.rows_mut().into_iter().enumerate() {
                    let lim = if self.causal { i + 1 } else { len };
                    let max = row.iter().take(lim).fold(F::neg_infinity(), |m, &v| m.max(v * scale));
                    let mut sum = F::zero();
                    for (j, e) in row.iter_mut().enumerate() {
                        *e = if j < lim { (*e * scale - max).exp() } else { F::zero() };
                        sum += *e;
                    }
                    row.mapv_inplace(|e| e / sum);
                }
                context
                    .slice_mut(s![r0..r0 + len, c0..c0 + self.d_kv])
                    .assign(&p.dot(&vb));
                probs.push(p);
            }
        }
        let out = self.output.forward(&context.view());
        (
            out,
            AttentionCache {
                input: x,
                q,
                k,
                v,
                probs,
                context,
            },
        )
    }

    pub fn backward(&mut self, dy: &ArrayView2<F>, cache: &AttentionCache<F>, layout: &SeqLayout) -> Array2<F> {
        let dctx = self
            .output
            .backward(&cache.context.view(), dy, true)
            .expect("input grad requested");
        let scale = F::one() / F::from_usize(self.d_kv).unwrap().sqrt();
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (b, &len) in layout.lens.iter().enumerate() {
            let r0 = b * layout.width;
            for h in 0..self.n_heads {
                let c0 = h * self.d_kv;
                let rows = s![r0..r0 + len, c0..c0 + self.d_kv];
                let p = &cache.probs[b * self.n_heads + h];
                let g = dctx.slice(rows);
                let mut dp = g.dot(&cache.v.slice(rows).t());
                dv.slice_mut(rows).assign(&p.t().dot(&g));
                for (mut dpr, pr) in dp.rows_mut().into_iter().zip(p.rows()) {
                    let dot = dpr.iter().zip(pr).fold(F::zero(), |acc, (&a, &b)| acc + a * b);
                    Zip::from(&mut dpr).and(&pr).for_each(|d, &pp| *d = pp * (*d - dot) * scale);
                }
                dq.slice_mut(rows).assign(&dp.dot(&cache.k.slice(rows)));
                dk.slice_mut(rows).assign(&dp.t().dot(&cache.q.slice(rows)));
            }
        }
        let x = cache.input.view();
        let mut dx = self.query.backward(&x, &dq.view(), true).unwrap();
        dx += &self.key.backward(&x, &dk.view(), true).unwrap();
        dx += &self.value.backward(&x, &dv.view(), true).unwrap();
        dx
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<F>)>) {
        self.query.params(&format!("{prefix}.q"), out);
        self.key.params(&format!("{prefix}.k"), out);
        self.value.params(&format!("{prefix}.v"), out);
        self.output.params(&format!("{prefix}.o"), out);
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<F>)>) {
        self.query.params_mut(&format!("{prefix}.q"), out);
        self.key.params_mut(&format!("{prefix}.k"), out);
        self.value.params_mut(&format!("{prefix}.v"), out);
        self.output.params_mut(&format!("{prefix}.o"), out);
    }
}

/// Pre-norm transformer block: `x + attn(ln(x))`, then `h + ffn(ln(h))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<F> {
    pub ln_attn: LayerNorm<F>,
    pub attn: MultiHeadAttention<F>,
    pub ln_ffn: LayerNorm<F>,
    pub ff_in: Linear<F>,
    pub ff_out: Linear<F>,
}

#[derive(Debug, Clone)]
pub struct BlockCache<F> {
    ln_attn: LayerNormCache<F>,
    attn: AttentionCache<F>,
    ln_ffn: LayerNormCache<F>,
    ffn_input: Array2<F>,
    pre_act: Array2<F>,
    act: Array2<F>,
}

impl<F: Real> Block<F> {
    pub fn new(d_model: usize, n_heads: usize, d_kv: usize, d_ff: usize, causal: bool, std: f64, rng: &mut impl Rng) -> Self {
        Self {
            ln_attn: LayerNorm::new(d_model),
            attn: MultiHeadAttention::new(d_model, n_heads, d_kv, causal, std, rng),
            ln_ffn: LayerNorm::new(d_model),
            ff_in: Linear::new(d_model, d_ff, true, std, rng),
            ff_out: Linear::new(d_ff, d_model, true, std, rng),
        }
    }

    pub fn forward(&self, x: Array2<F>, layout: &SeqLayout) -> (Array2<F>, BlockCache<F>) {
        let (a, ln_attn) = self.ln_attn.forward(&x.view());
        let (att, attn) = self.attn.forward(a, layout);
        let h = x + att;
        let (c, ln_ffn) = self.ln_ffn.forward(&h.view());
        let pre_act = self.ff_in.forward(&c.view());
        let act = gelu(&pre_act);
        let out = self.ff_out.forward(&act.view()) + h;
        (
            out,
            BlockCache {
                ln_attn,
                attn,
                ln_ffn,
                ffn_input: c,
                pre_act,
                act,
            },
        )
    }

    pub fn backward(&mut self, dy: Array2<F>, cache: &BlockCache<F>, layout: &SeqLayout) -> Array2<F> {
        let dact = self.ff_out.backward(&cache.act.view(), &dy.view(), true).unwrap();
        let dpre = gelu_backward(&cache.pre_act, &dact.view());
        let dc = self.ff_in.backward(&cache.ffn_input.view(), &dpre.view(), true).unwrap();
        let dh = dy + self.ln_ffn.backward(&dc.view(), &cache.ln_ffn);
        let da = self.attn.backward(&dh.view(), &cache.attn, layout);
        dh + self.ln_attn.backward(&da.view(), &cache.ln_attn)
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<F>)>) {
        self.ln_attn.params(&format!("{prefix}.ln_attn"), out);
        self.attn.params(&format!("{prefix}.attn"), out);
        self.ln_ffn.params(&format!("{prefix}.ln_ffn"), out);
        self.ff_in.params(&format!("{prefix}.ff_in"), out);
        self.ff_out.params(&format!("{prefix}.ff_out"), out);
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<F>)>) {
        self.ln_attn.params_mut(&format!("{prefix}.ln_attn"), out);
        self.attn.params_mut(&format!("{prefix}.attn"), out);
        self.ln_ffn.params_mut(&format!("{prefix}.ln_ffn"), out);
        self.ff_in.params_mut(&format!("{prefix}.ff_in"), out);
        self.ff_out.params_mut(&format!("{prefix}.ff_out"), out);
    }
}
