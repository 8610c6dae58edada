//! Declarative stage grammar with JSON round-tripping and validation.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::ops::out_dim;
use crate::rev::ResidualKind;

pub const DEFAULT_EMBEDDING_DIM: usize = 256;
pub const DEFAULT_FEAT_DIM: usize = 80;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMethod {
    Gsp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Stage {
    /// Conv -> BN -> ReLU.
    Conv { channels: usize, kernel: usize, stride: usize },
    /// `repeat` non-reversible residual blocks with `channels x expansion` outputs.
    Res { kind: ResidualKind, channels: usize, repeat: usize },
    /// `repeat` reversible blocks whose branches act on `c_half` channels.
    RevRes { kind: ResidualKind, c_half: usize, repeat: usize },
    /// Strided non-reversible residual block with projection shortcut.
    Ds { kind: ResidualKind, channels: usize },
    /// Space-to-depth rearrangement by ratio `r`.
    RevDs { r: usize, c_out: usize },
    Pooling { method: PoolMethod },
    Fc { d_in: usize, d_out: usize },
}

impl Stage {
    pub fn op(&self) -> &'static str {
        match self {
            Stage::Conv { .. } => "conv",
            Stage::Res { .. } => "res",
            Stage::RevRes { .. } => "rev_res",
            Stage::Ds { .. } => "ds",
            Stage::RevDs { .. } => "rev_ds",
            Stage::Pooling { .. } => "pooling",
            Stage::Fc { .. } => "fc",
        }
    }
}

fn default_embedding_dim() -> usize {
    DEFAULT_EMBEDDING_DIM
}

fn default_feat_dim() -> usize {
    DEFAULT_FEAT_DIM
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub name: String,
    pub stages: Vec<Stage>,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_feat_dim")]
    pub feat_dim: usize,
}

/// Shape summary produced by [`NetworkSpec::validate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpecSummary {
    /// Channels and frequency bins entering the pooling stage.
    pub final_channels: usize,
    pub final_freq: usize,
    pub fc: Option<(usize, usize)>,
    pub param_count: usize,
}

fn conv_params(c_in: usize, c_out: usize, k: usize) -> usize {
    c_in * c_out * k * k
}

/// Parameters of a residual branch as built by `ResidualFn::new`.
pub(crate) fn branch_params(kind: ResidualKind, c_in: usize, c_out: usize) -> usize {
    match kind {
        ResidualKind::Basic => conv_params(c_in, c_out, 3) + 2 * c_out + conv_params(c_out, c_out, 3),
        ResidualKind::Bottleneck => {
            let m = c_out / 4;
            conv_params(c_in, m, 1) + 2 * m + conv_params(m, m, 3) + conv_params(m, c_out, 1)
        }
        ResidualKind::DfBottleneck => {
            let m = 4 * c_in;
            conv_params(c_in, m, 1) + 2 * m + 9 * m + conv_params(m, c_out, 1)
        }
    }
}

impl NetworkSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("network spec: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// Checks every stage invariant and computes the analytic parameter count.
    pub fn validate(&self) -> Result<SpecSummary> {
        if self.feat_dim == 0 || self.embedding_dim == 0 {
            return Err(config_err!("{}: feature and embedding dimensions must be positive", self.name));
        }
        let (mut c, mut f) = (1usize, self.feat_dim);
        let mut flat: Option<usize> = None;
        let mut params = 0usize;
        let mut fc = None;
        let n = self.stages.len();
        let mut pooled = None;
        for (i, st) in self.stages.iter().enumerate() {
            let err = |msg: String| Error::Config(format!("{}: stage {i} ({}): {msg}", self.name, st.op()));
            if flat.is_some() && !matches!(st, Stage::Fc { .. }) {
                return Err(err("only fc stages may follow pooling".into()));
            }
            match *st {
                Stage::Conv { channels, kernel, stride } => {
                    if channels == 0 || stride == 0 || kernel % 2 == 0 {
                        return Err(err("needs positive channels and stride and an odd kernel".into()));
                    }
                    f = out_dim(f, kernel, stride, kernel / 2).map_err(|e| err(e.to_string()))?;
                    params += conv_params(c, channels, kernel) + 2 * channels;
                    c = channels;
                }
                Stage::Res { kind, channels, repeat } => {
                    let out = channels * kind.expansion();
                    if channels == 0 || repeat == 0 {
                        return Err(err("needs positive channels and repeat".into()));
                    }
                    for _ in 0..repeat {
                        params += branch_params(kind, c, out) + if c != out { c * out } else { 0 };
                        c = out;
                    }
                }
                Stage::Ds { kind, channels } => {
                    let out = channels * kind.expansion();
                    if channels == 0 || (kind == ResidualKind::Bottleneck && out % 4 != 0) {
                        return Err(err("invalid output width".into()));
                    }
                    f = out_dim(f, 1, 2, 0).map_err(|e| err(e.to_string()))?;
                    params += branch_params(kind, c, out) + c * out;
                    c = out;
                }
                Stage::RevRes { kind, c_half, repeat } => {
                    if c % 2 != 0 || c_half * 2 != c {
                        return Err(err(format!("{c} input channels cannot be split into halves of {c_half}")));
                    }
                    if repeat == 0 {
                        return Err(err("needs at least one block".into()));
                    }
                    if kind == ResidualKind::Bottleneck && c_half % 4 != 0 {
                        return Err(err(format!("bottleneck stream width {c_half} is not a multiple of 4")));
                    }
                    params += repeat * 2 * branch_params(kind, c_half, c_half);
                }
                Stage::RevDs { r, c_out } => {
                    if r < 2 || c_out != r * r * c {
                        return Err(err(format!("ratio {r} maps {c} channels to {}, not {c_out}", r * r * c)));
                    }
                    if f % r != 0 {
                        return Err(err(format!("{f} frequency bins not divisible by {r}")));
                    }
                    f /= r;
                    c = c_out;
                }
                Stage::Pooling { .. } => {
                    pooled = Some((c, f));
                    flat = Some(2 * c * f);
                }
                Stage::Fc { d_in, d_out } => {
                    let width = flat.ok_or_else(|| err("fc must follow pooling".into()))?;
                    if d_in != width {
                        return Err(err(format!("d_in {d_in} does not match pooled width {width}")));
                    }
                    if i + 1 == n && d_out != self.embedding_dim {
                        return Err(err(format!("output {d_out} does not match embedding dimension {}", self.embedding_dim)));
                    }
                    params += d_in * d_out + d_out;
                    flat = Some(d_out);
                    fc = Some((d_in, d_out));
                }
            }
        }
        let (final_channels, final_freq) = pooled.unwrap_or((c, f));
        Ok(SpecSummary { final_channels, final_freq, fc, param_count: params })
    }

    /// Number of reversible blocks across all stages.
    pub fn rev_blocks(&self) -> usize {
        self.stages.iter().map(|s| if let Stage::RevRes { repeat, .. } = s { *repeat } else { 0 }).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RevType {
    /// Strided downsampling stays non-reversible.
    TypeI,
    /// Downsampling by channel reducer plus invertible rearrangement.
    TypeII,
}

/// Desk-scale network following the same grammar as the registry entries.
/// Widths double at every stage.
pub fn toy_spec(stage_blocks: &[usize], width: usize, kind: ResidualKind, ty: RevType) -> Result<NetworkSpec> {
    if width < 4 || width % 2 != 0 {
        return Err(config_err!("toy width must be even and at least 4, got {width}"));
    }
    if kind == ResidualKind::Bottleneck && width % 8 != 0 {
        return Err(config_err!("bottleneck toy width must be a multiple of 8, got {width}"));
    }
    if stage_blocks.is_empty() {
        return Err(config_err!("a toy network needs at least one stage"));
    }
    let mut stages = vec![Stage::Conv { channels: width, kernel: 3, stride: 1 }];
    let mut w = width;
    for (i, &b) in stage_blocks.iter().enumerate() {
        if i > 0 {
            match ty {
                RevType::TypeII => {
                    stages.push(Stage::Conv { channels: w / 2, kernel: 3, stride: 1 });
                    stages.push(Stage::RevDs { r: 2, c_out: 2 * w });
                }
                RevType::TypeI if kind == ResidualKind::DfBottleneck => {
                    stages.push(Stage::Conv { channels: 2 * w, kernel: 3, stride: 2 });
                }
                RevType::TypeI => stages.push(Stage::Ds { kind, channels: 2 * w / kind.expansion() }),
            }
            w *= 2;
        }
        if b > 0 {
            stages.push(Stage::RevRes { kind, c_half: w / 2, repeat: b });
        }
    }
    let freq = DEFAULT_FEAT_DIM >> (stage_blocks.len() - 1);
    let embedding_dim = 32;
    stages.push(Stage::Pooling { method: PoolMethod::Gsp });
    stages.push(Stage::Fc { d_in: 2 * w * freq, d_out: embedding_dim });
    let name = format!("toy-{}-{}-w{width}-{}", kind.name(), if ty == RevType::TypeI { "I" } else { "II" }, join(stage_blocks));
    Ok(NetworkSpec { name, stages, embedding_dim, feat_dim: DEFAULT_FEAT_DIM })
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}
