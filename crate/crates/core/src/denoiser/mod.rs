//! The x0-predicting denoiser: token assembly with the seed/speech split,
//! cross-local attention, relative-position self-attention and a linear
//! head back to gesture features.

mod config;

use std::path::{Path, PathBuf};
use std::rc::Rc;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

pub use config::{AblationLayout, DenoiserConfig, WindowDirection};

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::nn::{Graph, Mat, ParamSet, Var};

/// Conditioning for one clip. `audio` and `text` cover the predicted frames;
/// `lead_audio` and `lead_text` cover the seed frames and are only read by
/// [`AblationLayout::FullLengthSeedAndSpeech`] (zeros when absent).
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub seed: Array2<f64>,
    pub audio: Array2<f64>,
    pub text: Array2<f64>,
    pub lead_audio: Option<Array2<f64>>,
    pub lead_text: Option<Array2<f64>>,
    pub speaker: usize,
    pub mask_speaker: bool,
    pub mask_seed: bool,
}

impl Conditioning {
    pub fn new(seed: Array2<f64>, audio: Array2<f64>, text: Array2<f64>, speaker: usize) -> Self {
        Conditioning {
            seed,
            audio,
            text,
            lead_audio: None,
            lead_text: None,
            speaker,
            mask_speaker: false,
            mask_seed: false,
        }
    }

    pub fn with_lead(mut self, lead_audio: Array2<f64>, lead_text: Array2<f64>) -> Self {
        self.lead_audio = Some(lead_audio);
        self.lead_text = Some(lead_text);
        self
    }

    pub fn n_pred(&self) -> usize {
        self.audio.nrows()
    }

    pub fn speaker_masked(&self) -> Self {
        Conditioning {
            mask_speaker: true,
            ..self.clone()
        }
    }

    pub fn check(&self, config: &DenoiserConfig) -> Result<()> {
        let want = |what: &str, m: &Array2<f64>, rows: usize, cols: usize| {
            if m.dim() != (rows, cols) {
                return Err(Error::Shape(format!(
                    "{what}: expected {rows}x{cols}, got {:?}",
                    m.dim()
                )));
            }
            Ok(())
        };
        let n_pred = self.n_pred();
        if n_pred == 0 {
            return Err(Error::Shape("conditioning has no predicted frames".into()));
        }
        want("seed", &self.seed, config.n_seed, config.gesture_width)?;
        want("audio", &self.audio, n_pred, config.audio_width)?;
        want("text", &self.text, n_pred, config.text_width)?;
        if let Some(a) = &self.lead_audio {
            want("lead audio", a, config.n_seed, config.audio_width)?;
        }
        if let Some(t) = &self.lead_text {
            want("lead text", t, config.n_seed, config.text_width)?;
        }
        if self.speaker >= config.speakers {
            return Err(Error::Invalid(format!(
                "speaker {} out of range 0..{}",
                self.speaker, config.speakers
            )));
        }
        Ok(())
    }
}

/// Sinusoidal encoding of a noising step: `dim / 2` sines then `dim / 2`
/// cosines over geometric frequencies `10000^(-k / (dim / 2))`.
pub fn timestep_embedding(t: f64, dim: usize) -> Array1<f64> {
    let half = dim / 2;
    let mut out = Array1::zeros(dim);
    for k in 0..half {
        let freq = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        out[k] = (t * freq).sin();
        out[half + k] = (t * freq).cos();
    }
    out
}

/// Training-time condition dropout. Each flag is set independently with
/// probability `p_mask`; the seed is only considered when `mask_seed` is on.
pub fn apply_condition_masks<R: Rng + ?Sized>(
    cond: &Conditioning,
    p_mask: f64,
    mask_seed: bool,
    rng: &mut R,
) -> Conditioning {
    let mut out = cond.clone();
    out.mask_speaker = rng.random::<f64>() < p_mask;
    if mask_seed {
        out.mask_seed = rng.random::<f64>() < p_mask;
    }
    out
}

/// `mask[i, j]` is true when query `i` may attend key `j`: both tokens'
/// windows are equal, or key's window is the neighbour in `direction`.
pub fn local_attention_mask(len: usize, window: usize, direction: WindowDirection) -> Array2<bool> {
    Array2::from_shape_fn((len, len), |(i, j)| {
        let (wi, wj) = (i / window, j / window);
        match direction {
            WindowDirection::Preceding => wj == wi || wj + 1 == wi,
            WindowDirection::Following => wj == wi || wj == wi + 1,
        }
    })
}

/// Index into a bias table of width `2 * radius + 1` for offset `j - i`,
/// with offsets clamped to `[-radius, radius]`.
pub fn relative_positions(len: usize, radius: usize) -> Array2<usize> {
    let r = radius as isize;
    Array2::from_shape_fn((len, len), |(i, j)| {
        ((j as isize - i as isize).clamp(-r, r) + r) as usize
    })
}

/// One noisy clip with its conditioning.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub x_t: &'a Array2<f64>,
    pub t: usize,
    pub cond: &'a Conditioning,
}

struct Dropout<'r> {
    p: f64,
    rng: Option<&'r mut dyn RngCore>,
}

impl Dropout<'_> {
    fn apply(&mut self, g: &mut Graph, v: Var) -> Var {
        let Some(rng) = self.rng.as_deref_mut() else { return v };
        if self.p == 0.0 {
            return v;
        }
        let keep = 1.0 / (1.0 - self.p);
        let p = self.p;
        let mask = Mat::from_shape_simple_fn(
            g.value(v).raw_dim(),
            || {
                if rng.random::<f64>() < p {
                    0.0
                } else {
                    keep
                }
            },
        );
        g.mul_const(v, mask)
    }
}

struct Masks {
    len: usize,
    local: Array2<bool>,
    local_rel: Rc<Array2<usize>>,
    full: Array2<bool>,
    self_rel: Rc<Array2<usize>>,
}

/// Parameter names and shapes for a config, in creation order.
pub fn param_shapes(config: &DenoiserConfig) -> Vec<(String, (usize, usize))> {
    let d = config.latent_dim;
    let lc = config.local_channels();
    let mut v: Vec<(String, (usize, usize))> = vec![
        ("input.weight".into(), (config.gesture_width, d)),
        ("input.bias".into(), (1, d)),
        ("seed.weight".into(), (config.gesture_width, d)),
        ("speech.weight".into(), (config.speech_width(), d)),
        ("speech.bias".into(), (1, d)),
        ("time.weight".into(), (d, d)),
        ("time.bias".into(), (1, d)),
        ("speaker.weight".into(), (config.speakers, d)),
        ("local.norm.gamma".into(), (1, d)),
        ("local.norm.beta".into(), (1, d)),
        ("local.query.weight".into(), (d, lc)),
        ("local.key.weight".into(), (d, lc)),
        ("local.value.weight".into(), (d, lc)),
        ("local.out.weight".into(), (lc, d)),
        ("local.out.bias".into(), (1, d)),
        ("local.rpe".into(), (config.local_heads, 4 * config.window + 1)),
    ];
    for l in 0..config.self_layers {
        let p = format!("layer{l}");
        v.extend([
            (format!("{p}.attn_norm.gamma"), (1, d)),
            (format!("{p}.attn_norm.beta"), (1, d)),
            (format!("{p}.query.weight"), (d, d)),
            (format!("{p}.key.weight"), (d, d)),
            (format!("{p}.value.weight"), (d, d)),
            (format!("{p}.out.weight"), (d, d)),
            (format!("{p}.out.bias"), (1, d)),
            (format!("{p}.rpe"), (config.self_heads, 2 * config.max_relative + 1)),
            (format!("{p}.ff_norm.gamma"), (1, d)),
            (format!("{p}.ff_norm.beta"), (1, d)),
            (format!("{p}.ff1.weight"), (d, config.ff_dim)),
            (format!("{p}.ff1.bias"), (1, config.ff_dim)),
            (format!("{p}.ff2.weight"), (config.ff_dim, d)),
            (format!("{p}.ff2.bias"), (1, d)),
        ]);
    }
    v.extend([
        ("final_norm.gamma".into(), (1, d)),
        ("final_norm.beta".into(), (1, d)),
        ("head.weight".into(), (d, config.gesture_width)),
        ("head.bias".into(), (1, config.gesture_width)),
    ]);
    v
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    config: DenoiserConfig,
    params: ParamSet,
}

impl Denoiser {
    /// Fresh parameters: weights ~ N(0, 1/fan_in), zero biases and position
    /// tables, unit norm gains, and a zero output head.
    pub fn new<R: Rng + ?Sized>(config: DenoiserConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::default();
        for (name, (rows, cols)) in param_shapes(&config) {
            let value = if name.ends_with(".gamma") {
                Mat::ones((rows, cols))
            } else if name.ends_with(".weight") && name != "head.weight" {
                let scale = 1.0 / (rows as f64).sqrt();
                Mat::from_shape_simple_fn((rows, cols), || {
                    let z: f64 = StandardNormal.sample(rng);
                    scale * z
                })
            } else {
                Mat::zeros((rows, cols))
            };
            params.insert(&name, value);
        }
        Ok(Denoiser { config, params })
    }

    pub fn from_params(config: DenoiserConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let shapes = param_shapes(&config);
        if shapes.len() != params.len() {
            return Err(Error::Shape(format!(
                "config expects {} tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        let mut ordered = ParamSet::default();
        for (name, dim) in shapes {
            let v = params
                .get(&name)
                .ok_or_else(|| Error::Invalid(format!("missing parameter '{name}'")))?;
            if v.dim() != dim {
                return Err(Error::Shape(format!(
                    "parameter '{name}': expected {dim:?}, got {:?}",
                    v.dim()
                )));
            }
            ordered.insert(&name, v.clone());
        }
        if !ordered.all_finite() {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(Denoiser {
            config,
            params: ordered,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Config sidecar path for a checkpoint: same stem, `.cfg` extension.
    pub fn config_path(checkpoint: &Path) -> PathBuf {
        checkpoint.with_extension("cfg")
    }

    pub fn save(&self, checkpoint: &Path) -> Result<()> {
        self.params.save(checkpoint)?;
        self.config.to_kv().save(&Self::config_path(checkpoint))
    }

    pub fn load(checkpoint: &Path) -> Result<Self> {
        let kv = KeyValues::load(&Self::config_path(checkpoint))?;
        let config = DenoiserConfig::desk().apply_kv(&kv)?;
        Denoiser::from_params(config, ParamSet::load(checkpoint)?)
    }

    fn masks(&self, len: usize) -> Masks {
        let c = &self.config;
        Masks {
            len,
            local: local_attention_mask(len, c.window, c.direction),
            local_rel: Rc::new(relative_positions(len, 2 * c.window)),
            full: Array2::from_elem((len, len), true),
            self_rel: Rc::new(relative_positions(len, c.max_relative)),
        }
    }

    fn check_sample(&self, s: &Sample) -> Result<()> {
        let c = &self.config;
        s.cond.check(c)?;
        let len = c.n_seed + s.cond.n_pred();
        if s.x_t.dim() != (len, c.gesture_width) {
            return Err(Error::Shape(format!(
                "x_t: expected {len}x{}, got {:?}",
                c.gesture_width,
                s.x_t.dim()
            )));
        }
        Ok(())
    }

    fn speech_rows(&self, cond: &Conditioning) -> Array2<f64> {
        let c = &self.config;
        let pred = concatenate![Axis(1), cond.audio, cond.text];
        if !c.layout.speech_full_length() {
            return pred;
        }
        let lead_a = cond
            .lead_audio
            .clone()
            .unwrap_or_else(|| Array2::zeros((c.n_seed, c.audio_width)));
        let lead_t = cond
            .lead_text
            .clone()
            .unwrap_or_else(|| Array2::zeros((c.n_seed, c.text_width)));
        let lead = concatenate![Axis(1), lead_a, lead_t];
        concatenate![Axis(0), lead, pred]
    }

    /// Pre-attention token sequences, one `(n_seed + n_pred) x latent` node
    /// per sample.
    fn tokens_graph(&self, g: &mut Graph, samples: &[Sample]) -> Result<Vec<Var>> {
        let c = &self.config;
        let ns = c.n_seed;
        for s in samples {
            self.check_sample(s)?;
        }
        let xs: Vec<ArrayView2<f64>> = samples.iter().map(|s| s.x_t.view()).collect();
        let seeds: Vec<Array2<f64>> = samples
            .iter()
            .map(|s| {
                if s.cond.mask_seed {
                    Array2::zeros(s.cond.seed.raw_dim())
                } else {
                    s.cond.seed.clone()
                }
            })
            .collect();
        let speech: Vec<Array2<f64>> = samples.iter().map(|s| self.speech_rows(s.cond)).collect();
        let mut temb = Mat::zeros((samples.len(), c.latent_dim));
        let mut spk = Mat::zeros((samples.len(), c.speakers));
        for (b, s) in samples.iter().enumerate() {
            temb.row_mut(b).assign(&timestep_embedding(s.t as f64, c.latent_dim));
            if !s.cond.mask_speaker {
                spk[[b, s.cond.speaker]] = 1.0;
            }
        }

        let x_all = g.input(concatenate(Axis(0), &xs).expect("uniform widths"));
        let w = g.param_named("input.weight");
        let bias = g.param_named("input.bias");
        let x_proj = g.linear(x_all, w, Some(bias));

        let seed_views: Vec<_> = seeds.iter().map(|m| m.view()).collect();
        let seed_all = g.input(concatenate(Axis(0), &seed_views).expect("uniform widths"));
        let w = g.param_named("seed.weight");
        let seed_proj = g.matmul(seed_all, w);

        let speech_views: Vec<_> = speech.iter().map(|m| m.view()).collect();
        let speech_all = g.input(concatenate(Axis(0), &speech_views).expect("uniform widths"));
        let w = g.param_named("speech.weight");
        let bias = g.param_named("speech.bias");
        let speech_proj = g.linear(speech_all, w, Some(bias));

        let temb = g.input(temb);
        let w = g.param_named("time.weight");
        let bias = g.param_named("time.bias");
        let z = g.linear(temb, w, Some(bias));
        let spk = g.input(spk);
        let w = g.param_named("speaker.weight");
        let spk_proj = g.matmul(spk, w);
        let z = g.add(z, spk_proj);

        let mut out = Vec::with_capacity(samples.len());
        let (mut x_off, mut c_off) = (0, 0);
        for (b, s) in samples.iter().enumerate() {
            let np = s.cond.n_pred();
            let len = ns + np;
            let xb = g.slice_rows(x_proj, x_off, len);
            x_off += len;
            let seed_b = g.slice_rows(seed_proj, b * ns, ns);
            let rows = speech[b].nrows();
            let speech_b = g.slice_rows(speech_proj, c_off, rows);
            c_off += rows;
            let cond = match c.layout {
                AblationLayout::SplitConditioning => g.concat_rows(&[seed_b, speech_b]),
                AblationLayout::FullLengthSeed => {
                    let pooled = g.mean_rows(seed_b);
                    let pad = g.input(Mat::zeros((ns, c.latent_dim)));
                    let speech_full = g.concat_rows(&[pad, speech_b]);
                    g.add_row(speech_full, pooled)
                }
                AblationLayout::FullLengthSeedAndSpeech => {
                    let pooled = g.mean_rows(seed_b);
                    g.add_row(speech_b, pooled)
                }
            };
            let tok = g.add(xb, cond);
            let zb = g.slice_rows(z, b, 1);
            out.push(g.add_row(tok, zb));
        }
        Ok(out)
    }

    /// Multi-head attention with a per-head relative-position bias.
    /// Returns the projected output and each head's attention weights.
    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        g: &mut Graph,
        x: Var,
        prefix: &str,
        heads: usize,
        head_dim: usize,
        mask: &Array2<bool>,
        rel: &Rc<Array2<usize>>,
    ) -> (Var, Vec<Var>) {
        let wq = g.param_named(&format!("{prefix}.query.weight"));
        let wk = g.param_named(&format!("{prefix}.key.weight"));
        let wv = g.param_named(&format!("{prefix}.value.weight"));
        let q = g.matmul(x, wq);
        let k = g.matmul(x, wk);
        let v = g.matmul(x, wv);
        let table = g.param_named(&format!("{prefix}.rpe"));
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        let mut weights = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice_cols(q, h * head_dim, head_dim);
            let kh = g.slice_cols(k, h * head_dim, head_dim);
            let vh = g.slice_cols(v, h * head_dim, head_dim);
            let logits = g.matmul_t(qh, kh);
            let row = g.slice_rows(table, h, 1);
            let att = g.biased_softmax(logits, scale, row, rel.clone(), mask);
            weights.push(att);
            outs.push(g.matmul(att, vh));
        }
        let cat = g.concat_cols(&outs);
        let wo = g.param_named(&format!("{prefix}.out.weight"));
        let bo = g.param_named(&format!("{prefix}.out.bias"));
        (g.linear(cat, wo, Some(bo)), weights)
    }

    fn norm(&self, g: &mut Graph, x: Var, prefix: &str) -> Var {
        let gamma = g.param_named(&format!("{prefix}.gamma"));
        let beta = g.param_named(&format!("{prefix}.beta"));
        g.layer_norm(x, gamma, beta)
    }

    fn cross_local_graph(&self, g: &mut Graph, h: Var, masks: &Masks, drop: &mut Dropout) -> (Var, Vec<Var>) {
        let c = &self.config;
        let n = self.norm(g, h, "local.norm");
        let (a, w) = self.attention(
            g,
            n,
            "local",
            c.local_heads,
            c.local_head_dim,
            &masks.local,
            &masks.local_rel,
        );
        let a = drop.apply(g, a);
        (g.add(h, a), w)
    }

    fn self_layer_graph(&self, g: &mut Graph, h: Var, layer: usize, masks: &Masks, drop: &mut Dropout) -> Var {
        let c = &self.config;
        let p = format!("layer{layer}");
        let n = self.norm(g, h, &format!("{p}.attn_norm"));
        let head_dim = c.latent_dim / c.self_heads;
        let (a, _) = self.attention(g, n, &p, c.self_heads, head_dim, &masks.full, &masks.self_rel);
        let a = drop.apply(g, a);
        let h = g.add(h, a);
        let n = self.norm(g, h, &format!("{p}.ff_norm"));
        let w1 = g.param_named(&format!("{p}.ff1.weight"));
        let b1 = g.param_named(&format!("{p}.ff1.bias"));
        let f = g.linear(n, w1, Some(b1));
        let f = g.gelu(f);
        let w2 = g.param_named(&format!("{p}.ff2.weight"));
        let b2 = g.param_named(&format!("{p}.ff2.bias"));
        let f = g.linear(f, w2, Some(b2));
        let f = drop.apply(g, f);
        g.add(h, f)
    }

    /// Full network on a batch. With `pred_only` the head runs on the last
    /// `n_pred` rows of each sample only. Outputs are stacked by sample.
    fn forward_graph(&self, g: &mut Graph, samples: &[Sample], pred_only: bool, drop: &mut Dropout) -> Result<Var> {
        let c = &self.config;
        let tokens = self.tokens_graph(g, samples)?;
        let mut cached: Option<Masks> = None;
        let mut finals = Vec::with_capacity(samples.len());
        for (tok, s) in tokens.into_iter().zip(samples) {
            let len = c.n_seed + s.cond.n_pred();
            if cached.as_ref().is_none_or(|m| m.len != len) {
                cached = Some(self.masks(len));
            }
            let masks = cached.as_ref().unwrap();
            let (mut h, _) = self.cross_local_graph(g, tok, masks, drop);
            for l in 0..c.self_layers {
                h = self.self_layer_graph(g, h, l, masks, drop);
            }
            let h = self.norm(g, h, "final_norm");
            finals.push(if pred_only {
                g.slice_rows(h, c.n_seed, s.cond.n_pred())
            } else {
                h
            });
        }
        let stacked = if finals.len() == 1 {
            finals[0]
        } else {
            g.concat_rows(&finals)
        };
        let w = g.param_named("head.weight");
        let b = g.param_named("head.bias");
        let out = g.linear(stacked, w, Some(b));
        if g.value(out).iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite denoiser output".into()));
        }
        Ok(out)
    }

    /// Predicted clean clip, same shape as `x_t`. Dropout is off.
    pub fn forward(&self, x_t: &Array2<f64>, t: usize, cond: &Conditioning) -> Result<Array2<f64>> {
        let mut g = Graph::new(&self.params);
        let mut drop = Dropout { p: 0.0, rng: None };
        let out = self.forward_graph(&mut g, &[Sample { x_t, t, cond }], false, &mut drop)?;
        Ok(g.value(out).to_owned())
    }

    /// Token sequence entering the first attention block.
    pub fn assemble_tokens(&self, x_t: &Array2<f64>, t: usize, cond: &Conditioning) -> Result<Array2<f64>> {
        let mut g = Graph::new(&self.params);
        let tok = self.tokens_graph(&mut g, &[Sample { x_t, t, cond }])?;
        Ok(g.value(tok[0]).to_owned())
    }

    /// One cross-local attention block (with its residual) applied to a
    /// token sequence, plus each head's attention weights.
    pub fn cross_local_attention(&self, tokens: &Array2<f64>) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        if tokens.ncols() != self.config.latent_dim || tokens.nrows() == 0 {
            return Err(Error::Shape(format!(
                "tokens: expected Nx{}, got {:?}",
                self.config.latent_dim,
                tokens.dim()
            )));
        }
        let mut g = Graph::new(&self.params);
        let masks = self.masks(tokens.nrows());
        let x = g.input(tokens.clone());
        let mut drop = Dropout { p: 0.0, rng: None };
        let (out, w) = self.cross_local_graph(&mut g, x, &masks, &mut drop);
        Ok((
            g.value(out).to_owned(),
            w.iter().map(|&v| g.value(v).to_owned()).collect(),
        ))
    }

    fn loss_graph<'p>(
        &'p self,
        g: &mut Graph<'p>,
        samples: &[Sample],
        targets: &[Array2<f64>],
        delta: f64,
        drop: &mut Dropout,
    ) -> Result<Var> {
        if samples.len() != targets.len() || samples.is_empty() {
            return Err(Error::Shape(format!(
                "{} samples vs {} targets",
                samples.len(),
                targets.len()
            )));
        }
        for (s, t) in samples.iter().zip(targets) {
            if t.dim() != (s.cond.n_pred(), self.config.gesture_width) {
                return Err(Error::Shape(format!("target: {:?}", t.dim())));
            }
        }
        let pred = self.forward_graph(g, samples, true, drop)?;
        let views: Vec<_> = targets.iter().map(|t| t.view()).collect();
        let target = concatenate(Axis(0), &views).expect("uniform widths");
        Ok(g.huber(pred, target, delta))
    }

    /// Mean Huber loss of the predicted frames against `targets`
    /// (`n_pred x width` each). Dropout is off.
    pub fn loss(&self, samples: &[Sample], targets: &[Array2<f64>], delta: f64) -> Result<f64> {
        let mut g = Graph::new(&self.params);
        let mut drop = Dropout { p: 0.0, rng: None };
        let l = self.loss_graph(&mut g, samples, targets, delta, &mut drop)?;
        Ok(g.scalar(l))
    }

    /// Loss and per-parameter gradients. Dropout is active when `rng` is given.
    pub fn loss_and_grads(
        &self,
        samples: &[Sample],
        targets: &[Array2<f64>],
        delta: f64,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(f64, Vec<Option<Mat>>)> {
        let mut g = Graph::new(&self.params);
        let mut drop = Dropout {
            p: self.config.dropout,
            rng,
        };
        let l = self.loss_graph(&mut g, samples, targets, delta, &mut drop)?;
        let value = g.scalar(l);
        if !value.is_finite() {
            return Err(Error::Numeric("non-finite loss".into()));
        }
        Ok((value, g.backward(l)))
    }
}

/// Anything that predicts a clean clip from a noisy one.
pub trait X0Predictor {
    fn predict_x0(&self, x_t: &Array2<f64>, t: usize, cond: &Conditioning) -> Result<Array2<f64>>;
}

impl X0Predictor for Denoiser {
    fn predict_x0(&self, x_t: &Array2<f64>, t: usize, cond: &Conditioning) -> Result<Array2<f64>> {
        self.forward(x_t, t, cond)
    }
}

/// Seed rows of a clip (`n_seed x width`).
pub fn seed_rows(clip: &Array2<f64>, n_seed: usize) -> Array2<f64> {
    clip.slice(s![..n_seed, ..]).to_owned()
}
