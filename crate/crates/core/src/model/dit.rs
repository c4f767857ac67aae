use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::attention::cross_attention_node;
use super::Denoiser;
use crate::conditioning::PromptTrack;
use crate::error::{ensure, Result};
use crate::latent::{read_f64, read_u32, read_u64, TimestepVector};
use crate::numerics::{Graph, Matrix, NodeId, ParamSet};
use crate::rng::SeedStream;

const LN_EPS: f64 = 1e-5;
const CHECKPOINT_MAGIC: &[u8; 4] = b"DLCK";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    /// Latent width `D`.
    pub latent_dim: usize,
    pub text_dim: usize,
    /// Tokens per caption block.
    pub text_tokens: usize,
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    /// Training window length in frames.
    pub window: usize,
    /// Schedule length `T`; sizes the timestep table.
    pub steps: usize,
    /// Sinusoidal offsets relative to the window start.
    pub positional: bool,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            text_dim: 8,
            text_tokens: 1,
            layers: 2,
            heads: 2,
            hidden: 64,
            window: 21,
            steps: 100,
            positional: true,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.latent_dim >= 1 && self.text_dim >= 1 && self.text_tokens >= 1,
            Config,
            "model widths must be positive"
        );
        ensure!(self.layers >= 1, Config, "at least one layer");
        ensure!(
            self.heads >= 1 && self.hidden.is_multiple_of(self.heads),
            Config,
            "heads ({}) must divide hidden ({})",
            self.heads,
            self.hidden
        );
        ensure!(self.hidden.is_multiple_of(2), Config, "hidden width must be even for sinusoidal tables");
        ensure!(self.window >= 1, Config, "window must be at least 1");
        ensure!(self.steps >= 1, Config, "schedule needs at least one step");
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct BlockIdx {
    ln1: (usize, usize),
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    bo: usize,
    ln2: (usize, usize),
    cq: usize,
    ck: usize,
    cv: usize,
    co: usize,
    ln3: (usize, usize),
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    w_in: usize,
    b_in: usize,
    t1: usize,
    tb1: usize,
    t2: usize,
    tb2: usize,
    blocks: Vec<BlockIdx>,
    ln_out: (usize, usize),
    w_out: usize,
    b_out: usize,
}

/// Small transformer denoiser: per block, temporal self-attention, then
/// frame-level cross-attention, then an MLP, each pre-normalized with a
/// residual connection. Per-frame timestep and relative position
/// embeddings are added to the input projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Dit {
    config: DenoiserConfig,
    params: ParamSet,
    layout: Layout,
    time_table: Matrix,
}

/// `rows×width` sinusoidal table: row `i` at position `i·scale`.
fn sinusoid(rows: usize, width: usize, scale: f64) -> Matrix {
    let half = width / 2;
    Matrix::from_fn(rows, width, |r, c| {
        let freq = (-(10_000f64.ln()) * (c % half) as f64 / half as f64).exp();
        let a = r as f64 * scale * freq;
        if c < half {
            a.sin()
        } else {
            a.cos()
        }
    })
}

impl Dit {
    /// Fresh weights. The output head starts at zero, so an untrained model
    /// predicts all zeros.
    pub fn init(config: DenoiserConfig, seed: SeedStream) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let mut params = ParamSet::new();
        let mut tag = 0u64;
        let mut dense = |params: &mut ParamSet, name: String, rows: usize, cols: usize, gain: f64| {
            tag += 1;
            let m = seed.derive(tag).normal_matrix(rows, cols);
            let s = gain / (rows as f64).sqrt();
            params.push(name, m.map(|v| v * s))
        };
        let zeros = |params: &mut ParamSet, name: String, cols: usize| params.push(name, Matrix::zeros(1, cols));
        let ones = |params: &mut ParamSet, name: String, cols: usize| params.push(name, Matrix::filled(1, cols, 1.0));
        let residual_gain = 1.0 / (2.0 * config.layers as f64).sqrt();

        let w_in = dense(&mut params, "in.w".into(), config.latent_dim, h, 1.0);
        let b_in = zeros(&mut params, "in.b".into(), h);
        let t1 = dense(&mut params, "time.w1".into(), h, h, 1.0);
        let tb1 = zeros(&mut params, "time.b1".into(), h);
        let t2 = dense(&mut params, "time.w2".into(), h, h, 1.0);
        let tb2 = zeros(&mut params, "time.b2".into(), h);
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = |s: &str| format!("blk{l}.{s}");
            blocks.push(BlockIdx {
                ln1: (ones(&mut params, p("ln1.g"), h), zeros(&mut params, p("ln1.b"), h)),
                wq: dense(&mut params, p("attn.wq"), h, h, 1.0),
                wk: dense(&mut params, p("attn.wk"), h, h, 1.0),
                wv: dense(&mut params, p("attn.wv"), h, h, 1.0),
                wo: dense(&mut params, p("attn.wo"), h, h, residual_gain),
                bo: zeros(&mut params, p("attn.bo"), h),
                ln2: (ones(&mut params, p("ln2.g"), h), zeros(&mut params, p("ln2.b"), h)),
                cq: dense(&mut params, p("cross.wq"), h, h, 1.0),
                ck: dense(&mut params, p("cross.wk"), config.text_dim, h, 1.0),
                cv: dense(&mut params, p("cross.wv"), config.text_dim, h, 1.0),
                co: dense(&mut params, p("cross.wo"), h, h, residual_gain),
                ln3: (ones(&mut params, p("ln3.g"), h), zeros(&mut params, p("ln3.b"), h)),
                w1: dense(&mut params, p("mlp.w1"), h, 2 * h, 1.0),
                b1: zeros(&mut params, p("mlp.b1"), 2 * h),
                w2: dense(&mut params, p("mlp.w2"), 2 * h, h, residual_gain),
                b2: zeros(&mut params, p("mlp.b2"), h),
            });
        }
        let ln_out = (ones(&mut params, "out.ln.g".into(), h), zeros(&mut params, "out.ln.b".into(), h));
        let w_out = params.push("out.w", Matrix::zeros(h, config.latent_dim));
        let b_out = zeros(&mut params, "out.b".into(), config.latent_dim);

        let layout = Layout { w_in, b_in, t1, tb1, t2, tb2, blocks, ln_out, w_out, b_out };
        // Timesteps are spread over [0, 1000] whatever T is.
        let time_table = sinusoid(config.steps + 1, h, 1000.0 / config.steps as f64);
        Ok(Self { config, params, layout, time_table })
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

    /// Records the forward pass on `g`, which must borrow [`Dit::params`].
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        z_t: &Matrix,
        t_vec: &TimestepVector,
        prompts: &PromptTrack,
    ) -> Result<NodeId> {
        let cfg = &self.config;
        let f = z_t.rows();
        ensure!(f >= 1, Dimension, "empty window");
        ensure!(z_t.cols() == cfg.latent_dim, Dimension, "latent width {} vs {}", z_t.cols(), cfg.latent_dim);
        ensure!(t_vec.len() == f, Dimension, "{} timesteps for {f} frames", t_vec.len());
        ensure!(prompts.frames() == f, Dimension, "{} prompt blocks for {f} frames", prompts.frames());
        ensure!(
            prompts.tokens() == cfg.text_tokens && prompts.text_dim() == cfg.text_dim,
            Dimension,
            "prompt blocks {}x{} vs model {}x{}",
            prompts.tokens(),
            prompts.text_dim(),
            cfg.text_tokens,
            cfg.text_dim
        );
        t_vec.check_range(cfg.steps)?;
        let h = cfg.hidden;
        let l = &self.layout;

        let z = g.constant(z_t.clone());
        let w_in = g.param(l.w_in);
        let mut x = g.matmul(z, w_in)?;
        let b_in = g.param(l.b_in);
        x = g.add_row(x, b_in)?;
        if cfg.positional {
            let pos = g.constant(sinusoid(f, h, 1.0));
            x = g.add(x, pos)?;
        }
        let mut table = Matrix::zeros(f, h);
        for (r, &t) in t_vec.as_slice().iter().enumerate() {
            table.row_mut(r).copy_from_slice(self.time_table.row(t));
        }
        let te = g.constant(table);
        let te = self.dense(g, te, l.t1, Some(l.tb1))?;
        let te = g.gelu(te);
        let te = self.dense(g, te, l.t2, Some(l.tb2))?;
        x = g.add(x, te)?;

        let c = g.constant(prompts.stacked().clone());
        let dh = h / cfg.heads;
        for b in &l.blocks {
            // Temporal self-attention, bidirectional.
            let n = self.norm(g, x, b.ln1)?;
            let q = self.dense(g, n, b.wq, None)?;
            let k = self.dense(g, n, b.wk, None)?;
            let v = self.dense(g, n, b.wv, None)?;
            let mut heads = Vec::with_capacity(cfg.heads);
            for hd in 0..cfg.heads {
                let qh = g.slice_cols(q, hd * dh, dh)?;
                let kh = g.slice_cols(k, hd * dh, dh)?;
                let vh = g.slice_cols(v, hd * dh, dh)?;
                let s = g.matmul_bt(qh, kh)?;
                let s = g.scale(s, 1.0 / (dh as f64).sqrt());
                let a = g.softmax_rows(s)?;
                heads.push(g.matmul(a, vh)?);
            }
            let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
            let o = self.dense(g, cat, b.wo, Some(b.bo))?;
            x = g.add(x, o)?;

            // Frame-level cross-attention.
            let n = self.norm(g, x, b.ln2)?;
            let (cq, ck, cv) = (g.param(b.cq), g.param(b.ck), g.param(b.cv));
            let a = cross_attention_node(g, n, c, cq, ck, cv, cfg.text_tokens)?;
            let o = self.dense(g, a, b.co, None)?;
            x = g.add(x, o)?;

            let n = self.norm(g, x, b.ln3)?;
            let m = self.dense(g, n, b.w1, Some(b.b1))?;
            let m = g.gelu(m);
            let m = self.dense(g, m, b.w2, Some(b.b2))?;
            x = g.add(x, m)?;
        }
        let n = self.norm(g, x, l.ln_out)?;
        self.dense(g, n, l.w_out, Some(l.b_out))
    }

    fn dense(&self, g: &mut Graph<'_>, x: NodeId, w: usize, b: Option<usize>) -> Result<NodeId> {
        let w = g.param(w);
        let y = g.matmul(x, w)?;
        match b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }

    fn norm(&self, g: &mut Graph<'_>, x: NodeId, (gain, bias): (usize, usize)) -> Result<NodeId> {
        let (gn, bn) = (g.param(gain), g.param(bias));
        g.layer_norm(x, gn, bn, LN_EPS)
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let cfg = serde_json::to_vec(&self.config).map_err(|e| crate::Error::Format(e.to_string()))?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(cfg.len() as u32).to_le_bytes())?;
        w.write_all(&cfg)?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, m) in self.params.iter() {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(m.rows() as u64).to_le_bytes())?;
            w.write_all(&(m.cols() as u64).to_le_bytes())?;
            for v in m.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        ensure!(&magic == CHECKPOINT_MAGIC, Format, "bad checkpoint magic {magic:?}");
        let version = read_u32(&mut r)?;
        ensure!(version == CHECKPOINT_VERSION, Format, "unsupported checkpoint version {version}");
        let len = read_u32(&mut r)? as usize;
        ensure!(len <= 1 << 20, Format, "implausible config length {len}");
        let mut cfg = vec![0u8; len];
        r.read_exact(&mut cfg)?;
        let config: DenoiserConfig =
            serde_json::from_slice(&cfg).map_err(|e| crate::Error::Format(format!("checkpoint config: {e}")))?;
        let mut model = Self::init(config, SeedStream::new(0))?;
        let count = read_u32(&mut r)? as usize;
        ensure!(count == model.params.len(), Format, "{count} parameters, expected {}", model.params.len());
        for idx in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            ensure!(name_len <= 256, Format, "implausible parameter name length");
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            ensure!(
                name == model.params.name(idx).as_bytes(),
                Format,
                "parameter {idx} is {:?}, expected {}",
                String::from_utf8_lossy(&name),
                model.params.name(idx)
            );
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            let slot = model.params.get_mut(idx);
            ensure!((rows, cols) == slot.shape(), Format, "parameter {idx} has shape {rows}x{cols}");
            for v in slot.data_mut() {
                *v = read_f64(&mut r)?;
            }
            ensure!(slot.is_finite(), NonFinite, "parameter {} has non-finite entries", model.params.name(idx));
        }
        let mut trailing = [0u8; 1];
        ensure!(r.read(&mut trailing)? == 0, Format, "trailing bytes after checkpoint");
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf).expect("writing to memory");
        buf
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_checkpoint(std::fs::read(path)?.as_slice())
    }
}

impl Denoiser for Dit {
    fn evaluate(&self, z_t: &Matrix, t_vec: &TimestepVector, prompts: &PromptTrack) -> Result<Matrix> {
        let mut g = Graph::new(&self.params);
        let out = self.forward(&mut g, z_t, t_vec, prompts)?;
        Ok(g.value(out).clone())
    }

    fn record(
        &self,
        g: &mut Graph<'_>,
        z_t: &Matrix,
        t_vec: &TimestepVector,
        prompts: &PromptTrack,
    ) -> Result<NodeId> {
        self.forward(g, z_t, t_vec, prompts)
    }
}
