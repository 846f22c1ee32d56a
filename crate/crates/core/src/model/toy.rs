//! Small text-conditioned segmentation network for desk-scale runs.
//!
//! ```text
//! image ─ conv3x3/2 ─ conv3x3/2 ─ conv3x3 ─┐
//!                                          ├─ FiLM(t) ─┐
//! tokens ─ mean(embedding) = t ────────────┤           ├─ [f, <c,t>, (a,b)(t)·(x,y), x, y] ─ conv3x3 ─ FiLM(t) ─ conv3x3 ─ conv1x1 ─ bilinear up ─ sigmoid
//!                                          └─ <c, t> ──┘
//! ```
//!
//! All activations are ReLU. Output resolution equals input resolution. The
//! text-weighted coordinate channel gives position words a direct path to a
//! spatial prior.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{relu_backward, relu_inplace, Conv2d};
use super::{Mode, ResModel, Vocabulary};
use crate::error::{Error, Result};
use crate::resample::Bilinear;
use crate::rng::SeedTree;
use crate::types::{Expression, Image, PredictionMap, ProbGrad};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyModelConfig {
    pub stem_channels: usize,
    /// Feature width after the stem; also the text embedding width.
    pub channels: usize,
    pub max_params: usize,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        Self {
            stem_channels: 16,
            channels: 24,
            max_params: 500_000,
        }
    }
}

/// Channels appended to the modulated features: `<c,t>`, spatial prior, x, y.
const EXTRA_CHANNELS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    conv_a: Conv2d,
    conv_b: Conv2d,
    conv_c: Conv2d,
    conv_d: Conv2d,
    conv_e: Conv2d,
    conv_o: Conv2d,
    embed: usize,
    film_gamma_w: usize,
    film_gamma_b: usize,
    film_beta_w: usize,
    film_beta_b: usize,
    film2_gamma_w: usize,
    film2_gamma_b: usize,
    film2_beta_w: usize,
    film2_beta_b: usize,
    spatial_w: usize,
    total: usize,
}

impl Layout {
    fn new(cfg: &ToyModelConfig, vocab_len: usize) -> Self {
        let (s, c) = (cfg.stem_channels, cfg.channels);
        let mut off = 0;
        let conv_a = Conv2d::new(3, s, 3, 2, &mut off);
        let conv_b = Conv2d::new(s, c, 3, 2, &mut off);
        let conv_c = Conv2d::new(c, c, 3, 1, &mut off);
        let mut take = |n: usize| {
            let at = off;
            off += n;
            at
        };
        let embed = take(vocab_len * c);
        let film_gamma_w = take(c * c);
        let film_gamma_b = take(c);
        let film_beta_w = take(c * c);
        let film_beta_b = take(c);
        let film2_gamma_w = take(c * c);
        let film2_gamma_b = take(c);
        let film2_beta_w = take(c * c);
        let film2_beta_b = take(c);
        let spatial_w = take(2 * c);
        let conv_d = Conv2d::new(c + EXTRA_CHANNELS, c, 3, 1, &mut off);
        let conv_e = Conv2d::new(c, c, 3, 1, &mut off);
        let conv_o = Conv2d::new(c, 1, 1, 1, &mut off);
        Self {
            conv_a,
            conv_b,
            conv_c,
            conv_d,
            conv_e,
            conv_o,
            embed,
            film_gamma_w,
            film_gamma_b,
            film_beta_w,
            film_beta_b,
            film2_gamma_w,
            film2_gamma_b,
            film2_beta_w,
            film2_beta_b,
            spatial_w,
            total: off,
        }
    }

    fn convs(&self) -> [&Conv2d; 6] {
        [
            &self.conv_a,
            &self.conv_b,
            &self.conv_c,
            &self.conv_d,
            &self.conv_e,
            &self.conv_o,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct ToyResModel {
    config: ToyModelConfig,
    vocab: Vocabulary,
    layout: Layout,
    params: Vec<f64>,
    mode: Mode,
}

/// Activations kept for one backward pass.
#[derive(Debug, Clone)]
pub struct ToyTape {
    dims: [usize; 6],
    col_a: Vec<f64>,
    a: Vec<f64>,
    col_b: Vec<f64>,
    b: Vec<f64>,
    col_c: Vec<f64>,
    c: Vec<f64>,
    ids: Vec<usize>,
    t: Vec<f64>,
    gamma: Vec<f64>,
    f: Vec<f64>,
    col_d: Vec<f64>,
    d_pre: Vec<f64>,
    gamma2: Vec<f64>,
    d: Vec<f64>,
    col_e: Vec<f64>,
    e: Vec<f64>,
    col_o: Vec<f64>,
    probs: Vec<[f64; 2]>,
}

impl ToyResModel {
    pub fn new(config: ToyModelConfig, vocab: Vocabulary, seed: SeedTree) -> Result<Self> {
        let mut model = Self::zeros(config, vocab)?;
        model.initialize(seed);
        Ok(model)
    }

    /// All-zero parameters: every pixel predicts exactly (0.5, 0.5).
    pub fn zeros(config: ToyModelConfig, vocab: Vocabulary) -> Result<Self> {
        if config.stem_channels == 0 || config.channels == 0 {
            return Err(Error::Config("model channel widths must be positive".into()));
        }
        let layout = Layout::new(&config, vocab.len());
        if layout.total > config.max_params {
            return Err(Error::Config(format!(
                "toy model has {} parameters, cap is {}",
                layout.total, config.max_params
            )));
        }
        Ok(Self {
            params: vec![0.0; layout.total],
            config,
            vocab,
            layout,
            mode: Mode::Train,
        })
    }

    pub fn from_parameters(config: ToyModelConfig, vocab: Vocabulary, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::zeros(config, vocab)?;
        if params.len() != model.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                model.params.len(),
                params.len()
            )));
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ToyModelConfig {
        &self.config
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn initialize(&mut self, seed: SeedTree) {
        let mut rng = seed.rng();
        let l = self.layout.clone();
        let c = self.config.channels;
        for conv in l.convs() {
            let std = if conv == &l.conv_o {
                (1.0 / conv.fan_in() as f64).sqrt()
            } else {
                (2.0 / conv.fan_in() as f64).sqrt()
            };
            fill_normal(
                &mut self.params[conv.w_off..conv.w_off + conv.weight_len()],
                std,
                &mut rng,
            );
        }
        fill_normal(&mut self.params[l.embed..l.embed + self.vocab.len() * c], 1.0, &mut rng);
        let film_std = 0.5 / (c as f64).sqrt();
        fill_normal(
            &mut self.params[l.film_gamma_w..l.film_gamma_w + c * c],
            film_std,
            &mut rng,
        );
        fill_normal(
            &mut self.params[l.film_beta_w..l.film_beta_w + c * c],
            film_std,
            &mut rng,
        );
        fill_normal(
            &mut self.params[l.film2_gamma_w..l.film2_gamma_w + c * c],
            film_std,
            &mut rng,
        );
        fill_normal(
            &mut self.params[l.film2_beta_w..l.film2_beta_w + c * c],
            film_std,
            &mut rng,
        );
        fill_normal(&mut self.params[l.spatial_w..l.spatial_w + 2 * c], film_std, &mut rng);
        self.params[l.film_gamma_b..l.film_gamma_b + c].fill(1.0);
        self.params[l.film2_gamma_b..l.film2_gamma_b + c].fill(1.0);
    }

    fn run(&self, image: &Image, expression: &Expression) -> (PredictionMap, ToyTape) {
        let l = &self.layout;
        let p = &self.params;
        let ch = self.config.channels;
        let (h, w) = image.dims();

        let ca = l.conv_a.forward(p, image.data(), h, w);
        let (h1, w1) = (ca.ho, ca.wo);
        let mut a = ca.out;
        relu_inplace(&mut a);

        let cb = l.conv_b.forward(p, &a, h1, w1);
        let (h2, w2) = (cb.ho, cb.wo);
        let mut b = cb.out;
        relu_inplace(&mut b);

        let cc = l.conv_c.forward(p, &b, h2, w2);
        let mut c = cc.out;
        relu_inplace(&mut c);

        let ids = self.vocab.ids(expression);
        let mut t = vec![0.0; ch];
        for id in &ids {
            for (tj, e) in t.iter_mut().zip(&p[l.embed + id * ch..l.embed + (id + 1) * ch]) {
                *tj += e;
            }
        }
        for tj in &mut t {
            *tj /= ids.len() as f64;
        }
        let affine = |w_off: usize, b_off: usize| -> Vec<f64> {
            (0..ch)
                .map(|i| {
                    p[b_off + i]
                        + p[w_off + i * ch..w_off + (i + 1) * ch]
                            .iter()
                            .zip(&t)
                            .map(|(w, x)| w * x)
                            .sum::<f64>()
                })
                .collect()
        };
        let gamma = affine(l.film_gamma_w, l.film_gamma_b);
        let beta = affine(l.film_beta_w, l.film_beta_b);
        let gamma2 = affine(l.film2_gamma_w, l.film2_gamma_b);
        let beta2 = affine(l.film2_beta_w, l.film2_beta_b);
        let dot = |off: usize| -> f64 { p[off..off + ch].iter().zip(&t).map(|(w, x)| w * x).sum() };
        let spatial = [dot(l.spatial_w), dot(l.spatial_w + ch)];

        let plane = h2 * w2;
        let inv_sqrt = 1.0 / (ch as f64).sqrt();
        let mut z = vec![0.0; (ch + EXTRA_CHANNELS) * plane];
        for k in 0..ch {
            let src = &c[k * plane..(k + 1) * plane];
            for (dst, v) in z[k * plane..(k + 1) * plane].iter_mut().zip(src) {
                *dst = (v * gamma[k] + beta[k]).max(0.0);
            }
            let tk = t[k] * inv_sqrt;
            for (q, v) in z[ch * plane..(ch + 1) * plane].iter_mut().zip(src) {
                *q += v * tk;
            }
        }
        for y in 0..h2 {
            for x in 0..w2 {
                let (cx, cy) = coords(y, x, h2, w2);
                z[(ch + 1) * plane + y * w2 + x] = spatial[0] * cx + spatial[1] * cy;
                z[(ch + 2) * plane + y * w2 + x] = cx;
                z[(ch + 3) * plane + y * w2 + x] = cy;
            }
        }
        let f = z[..ch * plane].to_vec();

        let cd = l.conv_d.forward(p, &z, h2, w2);
        let d_pre = cd.out;
        let mut d = vec![0.0; d_pre.len()];
        for k in 0..ch {
            for (o, v) in d[k * plane..(k + 1) * plane]
                .iter_mut()
                .zip(&d_pre[k * plane..(k + 1) * plane])
            {
                *o = (v * gamma2[k] + beta2[k]).max(0.0);
            }
        }
        let ce = l.conv_e.forward(p, &d, h2, w2);
        let mut e = ce.out;
        relu_inplace(&mut e);
        let co = l.conv_o.forward(p, &e, h2, w2);

        let up = Bilinear::new(h2, w2, h, w);
        let mut logits = vec![0.0; h * w];
        up.forward(&co.out, &mut logits);
        let map = PredictionMap::from_sigmoid_logits(h, w, &logits);
        let tape = ToyTape {
            dims: [h, w, h1, w1, h2, w2],
            col_a: ca.col,
            a,
            col_b: cb.col,
            b,
            col_c: cc.col,
            c,
            ids,
            t,
            gamma,
            f,
            col_d: cd.col,
            d_pre,
            gamma2,
            d,
            col_e: ce.col,
            e,
            col_o: co.col,
            probs: map.probs().to_vec(),
        };
        (map, tape)
    }

    /// Backward of `out = W t + b` for a `C x C` block at `w_off`.
    fn affine_backward(&self, w_off: usize, b_off: usize, dout: &[f64], t: &[f64], g: &mut [f64], dt: &mut [f64]) {
        let ch = self.config.channels;
        for i in 0..ch {
            g[b_off + i] += dout[i];
            for j in 0..ch {
                g[w_off + i * ch + j] += dout[i] * t[j];
                dt[j] += self.params[w_off + i * ch + j] * dout[i];
            }
        }
    }

    fn run_backward(&self, tape: &ToyTape, grad: &ProbGrad, g: &mut [f64]) {
        let l = &self.layout;
        let p = &self.params;
        let ch = self.config.channels;
        let [h, w, h1, w1, h2, w2] = tape.dims;
        let plane = h2 * w2;

        let dlogit: Vec<f64> = tape
            .probs
            .iter()
            .zip(&grad.values)
            .map(|([pf, pb], [gf, gb])| (gf - gb) * pf * pb)
            .collect();
        let mut dlow = vec![0.0; plane];
        Bilinear::new(h2, w2, h, w).backward(&dlogit, &mut dlow);

        let mut de = l
            .conv_o
            .backward(p, &tape.col_o, &dlow, h2, w2, h2, w2, g, true)
            .expect("input gradient requested");
        relu_backward(&mut de, &tape.e);
        let mut dd = l
            .conv_e
            .backward(p, &tape.col_e, &de, h2, w2, h2, w2, g, true)
            .expect("input gradient requested");
        relu_backward(&mut dd, &tape.d);
        let mut dt = vec![0.0; ch];
        let mut dgamma2 = vec![0.0; ch];
        let mut dbeta2 = vec![0.0; ch];
        for (k, (dk, pre)) in dd.chunks_mut(plane).zip(tape.d_pre.chunks(plane)).enumerate() {
            for (d, x) in dk.iter_mut().zip(pre) {
                dgamma2[k] += *d * x;
                dbeta2[k] += *d;
                *d *= tape.gamma2[k];
            }
        }
        self.affine_backward(l.film2_gamma_w, l.film2_gamma_b, &dgamma2, &tape.t, g, &mut dt);
        self.affine_backward(l.film2_beta_w, l.film2_beta_b, &dbeta2, &tape.t, g, &mut dt);
        let dz = l
            .conv_d
            .backward(p, &tape.col_d, &dd, h2, w2, h2, w2, g, true)
            .expect("input gradient requested");

        let dr = &dz[(ch + 1) * plane..(ch + 2) * plane];
        let mut dspatial = [0.0; 2];
        for y in 0..h2 {
            for x in 0..w2 {
                let (cx, cy) = coords(y, x, h2, w2);
                dspatial[0] += dr[y * w2 + x] * cx;
                dspatial[1] += dr[y * w2 + x] * cy;
            }
        }
        for (row, ds) in dspatial.iter().enumerate() {
            let off = l.spatial_w + row * ch;
            for j in 0..ch {
                g[off + j] += ds * tape.t[j];
                dt[j] += ds * p[off + j];
            }
        }

        let inv_sqrt = 1.0 / (ch as f64).sqrt();
        let dq = &dz[ch * plane..(ch + 1) * plane];
        let mut dc = vec![0.0; ch * plane];
        let mut dgamma = vec![0.0; ch];
        let mut dbeta = vec![0.0; ch];
        for k in 0..ch {
            let span = k * plane..(k + 1) * plane;
            let (cv, fv, dfv) = (&tape.c[span.clone()], &tape.f[span.clone()], &dz[span.clone()]);
            let tk = tape.t[k] * inv_sqrt;
            let mut dt_q = 0.0;
            for i in 0..plane {
                let dpre = if fv[i] > 0.0 { dfv[i] } else { 0.0 };
                dgamma[k] += dpre * cv[i];
                dbeta[k] += dpre;
                dc[k * plane + i] = dpre * tape.gamma[k] + dq[i] * tk;
                dt_q += dq[i] * cv[i];
            }
            dt[k] += dt_q * inv_sqrt;
        }
        self.affine_backward(l.film_gamma_w, l.film_gamma_b, &dgamma, &tape.t, g, &mut dt);
        self.affine_backward(l.film_beta_w, l.film_beta_b, &dbeta, &tape.t, g, &mut dt);
        let n = tape.ids.len() as f64;
        for id in &tape.ids {
            for (gj, dtj) in g[l.embed + id * ch..l.embed + (id + 1) * ch].iter_mut().zip(&dt) {
                *gj += dtj / n;
            }
        }

        relu_backward(&mut dc, &tape.c);
        let mut db = l
            .conv_c
            .backward(p, &tape.col_c, &dc, h2, w2, h2, w2, g, true)
            .expect("input gradient requested");
        relu_backward(&mut db, &tape.b);
        let mut da = l
            .conv_b
            .backward(p, &tape.col_b, &db, h1, w1, h2, w2, g, true)
            .expect("input gradient requested");
        relu_backward(&mut da, &tape.a);
        l.conv_a.backward(p, &tape.col_a, &da, h, w, h1, w1, g, false);
    }
}

/// Pixel-center coordinates in `[-1, 1]`.
fn coords(y: usize, x: usize, h: usize, w: usize) -> (f64, f64) {
    (
        -1.0 + 2.0 * (x as f64 + 0.5) / w as f64,
        -1.0 + 2.0 * (y as f64 + 0.5) / h as f64,
    )
}

fn fill_normal<R: Rng>(values: &mut [f64], std: f64, rng: &mut R) {
    let dist = Normal::new(0.0, std).expect("finite positive std");
    for v in values {
        *v = dist.sample(rng);
    }
}

impl ResModel for ToyResModel {
    type Tape = ToyTape;

    fn forward(&self, image: &Image, expression: &Expression) -> PredictionMap {
        self.run(image, expression).0
    }

    fn forward_with_tape(&self, image: &Image, expression: &Expression) -> (PredictionMap, ToyTape) {
        self.run(image, expression)
    }

    fn backward(&self, tape: &ToyTape, grad: &ProbGrad, param_grads: &mut [f64]) {
        assert_eq!(param_grads.len(), self.params.len(), "gradient buffer size");
        assert_eq!(grad.values.len(), tape.probs.len(), "probability gradient size");
        self.run_backward(tape, grad, param_grads);
    }

    fn parameters(&self) -> &[f64] {
        &self.params
    }

    fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }
}
