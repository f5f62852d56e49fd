//! U-shaped hybrid spatial-spectral transformer used as the learned
//! proximal operator. Shallow levels use spectral (channel-token) attention
//! inside non-overlapping windows, the deepest level uses low-rank spatial
//! attention; encoder and decoder are joined by frequency-aware fusion or
//! plain additive skips.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tensorgrad::{Graph, ParamStore, Scalar, Tensor, Var};

use crate::error::{Error, Result};
use crate::fusion::{
    fuse, plain_skip, register_fusion, register_plain_skip, FusionConfig, FusionProbes,
};
use crate::layout::{crop_index, pad_index, window_merge_index, window_partition_index};
use crate::nn::{Init, Scope};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Spectral,
    Spatial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub window: usize,
    /// Per level; empty means spectral everywhere except a spatial deepest
    /// level.
    pub attention_schedule: Vec<AttentionKind>,
    /// Per-level low-rank width for spatial attention; empty means
    /// `max(C / 4, 8)`.
    pub lowrank_dim: Vec<usize>,
    pub ffn_expansion: usize,
    pub use_attention: bool,
    pub use_freq_fusion: bool,
    pub fusion: FusionConfig,
    pub use_outer_skip: bool,
    pub stage_conditioning: bool,
    pub layernorm_eps: f64,
}

impl Default for ProxConfig {
    fn default() -> Self {
        ProxConfig {
            levels: 3,
            base_channels: 16,
            window: 8,
            attention_schedule: Vec::new(),
            lowrank_dim: Vec::new(),
            ffn_expansion: 2,
            use_attention: true,
            use_freq_fusion: true,
            fusion: FusionConfig::default(),
            use_outer_skip: true,
            stage_conditioning: true,
            layernorm_eps: 1e-6,
        }
    }
}

impl ProxConfig {
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn attention(&self, level: usize) -> AttentionKind {
        match self.attention_schedule.get(level) {
            Some(&k) => k,
            None if level + 1 == self.levels && self.levels > 1 => AttentionKind::Spatial,
            None => AttentionKind::Spectral,
        }
    }

    pub fn lowrank(&self, level: usize) -> usize {
        match self.lowrank_dim.get(level) {
            Some(&d) => d,
            None => (self.channels(level) / 4)
                .max(8)
                .min(self.channels(level) / 2)
                .max(1),
        }
    }

    /// Spatial extents are padded to a multiple of this.
    pub fn pad_multiple(&self) -> usize {
        (1 << (self.levels - 1)) * self.window
    }

    pub fn padded(&self, n: usize) -> usize {
        n.div_ceil(self.pad_multiple()) * self.pad_multiple()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.levels == 0
            || self.base_channels == 0
            || self.window == 0
            || self.ffn_expansion == 0
        {
            return bad("prox extents must be positive".into());
        }
        if !self.attention_schedule.is_empty() && self.attention_schedule.len() != self.levels {
            return bad(format!(
                "attention schedule has {} entries for {} levels",
                self.attention_schedule.len(),
                self.levels
            ));
        }
        if !self.lowrank_dim.is_empty() && self.lowrank_dim.len() != self.levels {
            return bad("lowrank_dim must have one entry per level".into());
        }
        for l in 0..self.levels {
            if self.use_attention && self.attention(l) == AttentionKind::Spatial {
                let (c, r) = (self.channels(l), self.lowrank(l));
                if r == 0 || r >= c {
                    return bad(format!("level {l}: low-rank width {r} must be in 1..{c}"));
                }
            }
        }
        self.fusion.validate()
    }
}

/// Graph handles of internal quantities, for invariant checks.
#[derive(Clone, Debug, Default)]
pub struct ProxProbes {
    /// Softmax attention matrices, one per attention block.
    pub attention: Vec<Var>,
    pub fusion: Vec<FusionProbes>,
}

#[derive(Clone, Debug)]
pub struct ProxOutput {
    pub out: Var,
    pub probes: ProxProbes,
}

fn block_name(part: &str, level: usize) -> String {
    format!("{part}{level}")
}

fn register_block(init: &mut Init<'_>, name: &str, cfg: &ProxConfig, level: usize) -> Result<()> {
    let c = cfg.channels(level);
    if cfg.use_attention {
        init.layernorm(&format!("{name}.ln1"), c)?;
        let qk = match cfg.attention(level) {
            AttentionKind::Spectral => c,
            AttentionKind::Spatial => cfg.lowrank(level),
        };
        init.linear(&format!("{name}.q"), c, qk, true, 1.0)?;
        init.linear(&format!("{name}.k"), c, qk, true, 1.0)?;
        init.linear(&format!("{name}.v"), c, c, true, 1.0)?;
        init.linear(&format!("{name}.proj"), c, c, true, 0.5)?;
    }
    init.layernorm(&format!("{name}.ln2"), c)?;
    init.linear(&format!("{name}.ffn1"), c, c * cfg.ffn_expansion, true, 1.0)?;
    init.linear(&format!("{name}.ffn2"), c * cfg.ffn_expansion, c, true, 0.5)?;
    Ok(())
}

/// Adds all parameters of one proximal network under `prefix`.
/// `stages` sizes the stage embedding (ignored without conditioning).
pub fn register_prox(
    store: &mut ParamStore<f64>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    cfg: &ProxConfig,
    bands: usize,
    stages: usize,
) -> Result<()> {
    cfg.validate()?;
    let mut init = Init { store, rng };
    let c0 = cfg.channels(0);
    init.linear(&format!("{prefix}in"), bands, c0, true, 1.0)?;
    if cfg.stage_conditioning {
        init.tensor(
            &format!("{prefix}stage_embed"),
            Tensor::zeros(vec![stages.max(1), c0]),
        )?;
    }
    for l in 0..cfg.levels {
        let name = format!("{prefix}{}", block_name("enc", l));
        register_block(&mut init, &name, cfg, l)?;
        if l + 1 < cfg.levels {
            init.linear(
                &format!("{prefix}down{l}"),
                cfg.channels(l),
                cfg.channels(l + 1),
                true,
                1.0,
            )?;
        }
    }
    for l in (0..cfg.levels - 1).rev() {
        let skip = format!("{prefix}skip{l}");
        if cfg.use_freq_fusion {
            register_fusion(
                &mut init,
                &skip,
                cfg.channels(l),
                cfg.channels(l + 1),
                &cfg.fusion,
            )?;
        } else {
            register_plain_skip(&mut init, &skip, cfg.channels(l), cfg.channels(l + 1))?;
        }
        register_block(
            &mut init,
            &format!("{prefix}{}", block_name("dec", l)),
            cfg,
            l,
        )?;
    }
    init.linear(&format!("{prefix}head"), c0, bands, true, 0.0)?;
    Ok(())
}

/// Channel-token attention inside `win x win` windows of `h [H, W, C]`:
/// `softmax(Q^T K / sqrt(win^2))` is `C x C`, applied to `V^T`.
pub fn spectral_attention<T: Scalar>(
    g: &mut Graph<T>,
    s: Scope<'_>,
    name: &str,
    h: Var,
    win: usize,
) -> Result<(Var, Var)> {
    let &[hh, ww, c] = g.shape(h) else {
        return Err(Error::Dimension(format!(
            "expected [h, w, c], got {:?}",
            g.shape(h)
        )));
    };
    let tokens = win * win;
    let nwin = (hh / win) * (ww / win);
    let part = window_partition_index(hh, ww, c, win);
    let shape = [nwin, tokens, c];
    let q = s.linear(g, &format!("{name}.q"), h)?;
    let k = s.linear(g, &format!("{name}.k"), h)?;
    let v = s.linear(g, &format!("{name}.v"), h)?;
    let qw = g.gather(q, part.clone(), &shape)?;
    let kw = g.gather(k, part.clone(), &shape)?;
    let vw = g.gather(v, part, &shape)?;
    let qt = g.transpose(qw)?;
    let logits = g.matmul(qt, kw)?;
    let logits = g.scale(logits, 1.0 / (tokens as f64).sqrt())?;
    let attn = g.softmax(logits)?;
    let vt = g.transpose(vw)?;
    let y = g.matmul(attn, vt)?;
    let y = g.transpose(y)?;
    let merged = g.gather(y, window_merge_index(hh, ww, c, win), &[hh, ww, c])?;
    Ok((s.linear(g, &format!("{name}.proj"), merged)?, attn))
}

/// Token attention inside windows with `C'`-dimensional queries and keys:
/// `softmax(Q K^T / sqrt(C'))` is `win^2 x win^2`, applied to `V`.
pub fn spatial_lowrank_attention<T: Scalar>(
    g: &mut Graph<T>,
    s: Scope<'_>,
    name: &str,
    h: Var,
    win: usize,
) -> Result<(Var, Var)> {
    let &[hh, ww, c] = g.shape(h) else {
        return Err(Error::Dimension(format!(
            "expected [h, w, c], got {:?}",
            g.shape(h)
        )));
    };
    let tokens = win * win;
    let nwin = (hh / win) * (ww / win);
    let q = s.linear(g, &format!("{name}.q"), h)?;
    let k = s.linear(g, &format!("{name}.k"), h)?;
    let v = s.linear(g, &format!("{name}.v"), h)?;
    let r = *g.shape(q).last().unwrap();
    let qw = g.gather(
        q,
        window_partition_index(hh, ww, r, win),
        &[nwin, tokens, r],
    )?;
    let kw = g.gather(
        k,
        window_partition_index(hh, ww, r, win),
        &[nwin, tokens, r],
    )?;
    let vw = g.gather(
        v,
        window_partition_index(hh, ww, c, win),
        &[nwin, tokens, c],
    )?;
    let kt = g.transpose(kw)?;
    let logits = g.matmul(qw, kt)?;
    let logits = g.scale(logits, 1.0 / (r as f64).sqrt())?;
    let attn = g.softmax(logits)?;
    let y = g.matmul(attn, vw)?;
    let merged = g.gather(y, window_merge_index(hh, ww, c, win), &[hh, ww, c])?;
    Ok((s.linear(g, &format!("{name}.proj"), merged)?, attn))
}

/// `x + attn(LN(x))`, then `x + FFN(LN(x))` with a conv1x1-GELU-conv1x1 FFN.
pub fn transformer_block<T: Scalar>(
    g: &mut Graph<T>,
    s: Scope<'_>,
    name: &str,
    cfg: &ProxConfig,
    level: usize,
    x: Var,
    probes: &mut ProxProbes,
) -> Result<Var> {
    let mut x = x;
    if cfg.use_attention {
        let h = s.layernorm(g, &format!("{name}.ln1"), x, cfg.layernorm_eps)?;
        let (a, attn) = match cfg.attention(level) {
            AttentionKind::Spectral => spectral_attention(g, s, name, h, cfg.window)?,
            AttentionKind::Spatial => spatial_lowrank_attention(g, s, name, h, cfg.window)?,
        };
        probes.attention.push(attn);
        x = g.add(x, a)?;
    }
    let h = s.layernorm(g, &format!("{name}.ln2"), x, cfg.layernorm_eps)?;
    let h = s.linear(g, &format!("{name}.ffn1"), h)?;
    let h = g.gelu(h)?;
    let h = s.linear(g, &format!("{name}.ffn2"), h)?;
    Ok(g.add(x, h)?)
}

/// Denoises `x [H, W+, L]`; output has the same shape. Extents are reflect
/// padded to a multiple of [`ProxConfig::pad_multiple`] and cropped back.
pub fn prox_forward<T: Scalar>(
    g: &mut Graph<T>,
    s: Scope<'_>,
    cfg: &ProxConfig,
    x: Var,
    stage: usize,
) -> Result<ProxOutput> {
    let &[h, w, l] = g.shape(x) else {
        return Err(Error::Dimension(format!(
            "expected [H, W+, L], got {:?}",
            g.shape(x)
        )));
    };
    let (ph, pw) = (cfg.padded(h), cfg.padded(w));
    let xp = if (ph, pw) == (h, w) {
        x
    } else {
        g.gather(x, pad_index(h, w, l, ph, pw), &[ph, pw, l])?
    };
    let mut probes = ProxProbes::default();
    let mut f = s.linear(g, "in", xp)?;
    if cfg.stage_conditioning {
        let table = s.get("stage_embed")?;
        let stages = g.shape(table)[0];
        let row = g.slice(table, 0, stage.min(stages - 1), stage.min(stages - 1) + 1)?;
        let row = g.reshape(row, &[cfg.channels(0)])?;
        f = g.add_bias(f, row)?;
    }
    let mut skips = Vec::with_capacity(cfg.levels - 1);
    for lvl in 0..cfg.levels {
        f = transformer_block(g, s, &block_name("enc", lvl), cfg, lvl, f, &mut probes)?;
        if lvl + 1 < cfg.levels {
            skips.push(f);
            f = g.avg_pool2d(f, 2)?;
            f = s.linear(g, &format!("down{lvl}"), f)?;
        }
    }
    for lvl in (0..cfg.levels - 1).rev() {
        let skip = format!("skip{lvl}");
        f = if cfg.use_freq_fusion {
            let (fused, p) = fuse(g, s, &skip, &cfg.fusion, skips[lvl], f)?;
            probes.fusion.push(p);
            fused
        } else {
            plain_skip(g, s, &skip, skips[lvl], f)?
        };
        f = transformer_block(g, s, &block_name("dec", lvl), cfg, lvl, f, &mut probes)?;
    }
    let mut out = s.linear(g, "head", f)?;
    if (ph, pw) != (h, w) {
        out = g.gather(out, crop_index(pw, l, h, w), &[h, w, l])?;
    }
    if cfg.use_outer_skip {
        out = g.add(out, x)?;
    }
    Ok(ProxOutput { out, probes })
}
