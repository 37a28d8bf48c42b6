//! Vision encoders shared by pretraining and segmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{NnError, Result};
use crate::graph::{ConvOpts, Graph, Var};
use crate::layers::{Conv2d, TransformerEncoder};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Convolutional,
    Transformer,
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EncoderKind::Convolutional => "convolutional",
            EncoderKind::Transformer => "transformer",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Channel widths of the three convolutional stages.
    pub conv_widths: Vec<usize>,
    pub vit_dim: usize,
    pub vit_patch: usize,
    pub vit_depth: usize,
    pub vit_heads: usize,
    pub vit_mlp: usize,
    /// Side of the learned position grid; other grids are interpolated.
    pub vit_grid: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Convolutional,
            conv_widths: vec![8, 16, 32],
            vit_dim: 32,
            vit_patch: 4,
            vit_depth: 2,
            vit_heads: 4,
            vit_mlp: 64,
            vit_grid: 8,
        }
    }
}

impl EncoderConfig {
    pub fn with_kind(kind: EncoderKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    /// Architecture summary stored in archives and compared on import.
    pub fn descriptor(&self) -> Value {
        match self.kind {
            EncoderKind::Convolutional => json!({
                "kind": self.kind.to_string(),
                "conv_widths": self.conv_widths,
            }),
            EncoderKind::Transformer => json!({
                "kind": self.kind.to_string(),
                "vit_dim": self.vit_dim,
                "vit_patch": self.vit_patch,
                "vit_depth": self.vit_depth,
                "vit_heads": self.vit_heads,
                "vit_mlp": self.vit_mlp,
                "vit_grid": self.vit_grid,
            }),
        }
    }

    pub fn check_descriptor(&self, found: &Value) -> Result<()> {
        let want = self.descriptor();
        if &want == found {
            Ok(())
        } else {
            Err(NnError::ArchitectureMismatch(format!(
                "encoder expects {want}, archive holds {found}"
            )))
        }
    }
}

#[derive(Debug, Clone)]
struct ResidualStage {
    down: Conv2d,
    body: Conv2d,
}

#[derive(Debug, Clone)]
pub struct ConvEncoder {
    stem: Conv2d,
    stages: Vec<ResidualStage>,
    widths: Vec<usize>,
}

impl ConvEncoder {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, widths: &[usize], rng: &mut R) -> Self {
        assert_eq!(widths.len(), 3, "convolutional encoder has three stages");
        let pad1 = ConvOpts {
            padding: 1,
            ..ConvOpts::default()
        };
        let stem = Conv2d::new(store, &format!("{prefix}.stem"), 3, widths[0], 3, pad1, true, rng);
        let mut stages = Vec::new();
        let mut in_ch = widths[0];
        for (i, &w) in widths.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            let down_opts = ConvOpts {
                stride,
                ..pad1
            };
            let down = Conv2d::new(store, &format!("{prefix}.stage{i}.down"), in_ch, w, 3, down_opts, true, rng);
            let body = Conv2d::new(store, &format!("{prefix}.stage{i}.body"), w, w, 3, pad1, true, rng);
            stages.push(ResidualStage { down, body });
            in_ch = w;
        }
        Self {
            stem,
            stages,
            widths: widths.to_vec(),
        }
    }

    /// Stage outputs at strides 1, 2 and 4 (1, 2 and 2 when `dilated`).
    fn forward(&self, g: &mut Graph, x: Var, dilated: bool) -> Vec<Var> {
        let mut h = self.stem.forward(g, x);
        h = g.relu(h);
        let mut outs = Vec::new();
        let last = self.stages.len() - 1;
        for (i, stage) in self.stages.iter().enumerate() {
            let (down_opts, body_opts) = if dilated && i == last {
                let d = ConvOpts {
                    stride: 1,
                    padding: 2,
                    dilation: 2,
                };
                (d, d)
            } else {
                (stage.down.opts, stage.body.opts)
            };
            let a = stage.down.forward_with(g, h, down_opts);
            let a = g.relu(a);
            let b = stage.body.forward_with(g, a, body_opts);
            let b = g.add(b, a);
            h = g.relu(b);
            outs.push(h);
        }
        outs
    }
}

#[derive(Debug, Clone)]
pub struct VitEncoder {
    patch: Conv2d,
    pos: ParamId,
    body: TransformerEncoder,
    dim: usize,
    grid: usize,
}

impl VitEncoder {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cfg: &EncoderConfig, rng: &mut R) -> Self {
        let d = cfg.vit_dim;
        let opts = ConvOpts {
            stride: cfg.vit_patch,
            ..ConvOpts::default()
        };
        let patch = Conv2d::new(store, &format!("{prefix}.patch"), 3, d, cfg.vit_patch, opts, true, rng);
        let l = cfg.vit_grid * cfg.vit_grid;
        let pos_data = (0..l * d).map(|_| rng.gen_range(-0.02..0.02)).collect();
        let pos = store.add(format!("{prefix}.pos"), Tensor::new(&[l, d], pos_data));
        let body = TransformerEncoder::new(
            store,
            &format!("{prefix}.body"),
            d,
            cfg.vit_depth,
            cfg.vit_heads,
            cfg.vit_mlp,
            rng,
        );
        Self {
            patch,
            pos,
            body,
            dim: d,
            grid: cfg.vit_grid,
        }
    }

    fn position_embedding(&self, g: &mut Graph, h: usize, w: usize) -> Var {
        let pos = g.param(self.pos);
        if h == self.grid && w == self.grid {
            return pos;
        }
        let grid = g.reshape(pos, &[1, self.grid, self.grid, self.dim]);
        let grid = g.permute(grid, &[0, 3, 1, 2]);
        let resized = g.upsample_bilinear(grid, h, w);
        let resized = g.permute(resized, &[0, 2, 3, 1]);
        g.reshape(resized, &[h * w, self.dim])
    }

    /// Final token map as `[N, D, H / patch, W / patch]`.
    fn forward(&self, g: &mut Graph, x: Var) -> Vec<Var> {
        let tokens = self.patch.forward(g, x);
        let s = g.shape(tokens).to_vec();
        let (n, d, h, w) = (s[0], s[1], s[2], s[3]);
        let seq = g.reshape(tokens, &[n, d, h * w]);
        let seq = g.permute(seq, &[0, 2, 1]);
        let pos = self.position_embedding(g, h, w);
        let seq = g.add_broadcast(seq, pos);
        let seq = self.body.forward(g, seq);
        let map = g.permute(seq, &[0, 2, 1]);
        vec![g.reshape(map, &[n, d, h, w])]
    }
}

#[derive(Debug, Clone)]
enum Arch {
    Conv(ConvEncoder),
    Vit(VitEncoder),
}

/// A vision encoder whose parameters live under one name prefix.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub prefix: String,
    arch: Arch,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, config: &EncoderConfig, rng: &mut R) -> Self {
        let arch = match config.kind {
            EncoderKind::Convolutional => Arch::Conv(ConvEncoder::new(store, prefix, &config.conv_widths, rng)),
            EncoderKind::Transformer => Arch::Vit(VitEncoder::new(store, prefix, config, rng)),
        };
        Self {
            config: config.clone(),
            prefix: prefix.to_string(),
            arch,
        }
    }

    pub fn kind(&self) -> EncoderKind {
        self.config.kind
    }

    /// Channel count of each feature map returned by [`Encoder::forward`].
    pub fn out_channels(&self) -> Vec<usize> {
        match &self.arch {
            Arch::Conv(c) => c.widths.clone(),
            Arch::Vit(v) => vec![v.dim],
        }
    }

    /// Feature maps `[N, C_i, H_i, W_i]` for `x: [N, 3, H, W]`, shallow
    /// first. `dilated` keeps the last convolutional stage at the previous
    /// resolution by trading its stride for dilation; it has no effect on
    /// the transformer.
    pub fn forward(&self, g: &mut Graph, x: Var, dilated: bool) -> Vec<Var> {
        match &self.arch {
            Arch::Conv(c) => c.forward(g, x, dilated),
            Arch::Vit(v) => v.forward(g, x),
        }
    }
}
