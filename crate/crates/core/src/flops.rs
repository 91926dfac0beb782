//! Architecture-level MAC accounting.
//!
//! One multiply-accumulate is counted as one FLOP, the convention behind
//! published MobileNet mult-add totals. Per block, at output resolution
//! `h' x h'`:
//!
//! | kind         | MACs                                         |
//! |--------------|----------------------------------------------|
//! | `conv`       | `h'^2 * k^2 * c_in * c_out`                  |
//! | `depthwise`  | `h'^2 * k^2 * c`                             |
//! | `pointwise`  | `h'^2 * c_in * c_out`                        |
//! | `bft_fusion` | `h'^2 * count_flops(n = max(c_in, c_out), base)` |
//! | `fc`         | `c_in * c_out` (input must be 1x1)           |
//! | `pool`       | `h'^2 * k^2 * c`; `kernel = 0` is global pooling, `h^2 * c` |
//! | `concat`     | 0 (joins parallel branches)                  |
//!
//! Spatial size propagates as `h' = ceil(h / stride)`. Channel counts are
//! scaled by the width multiplier and rounded to the nearest integer (ties
//! to even), with a floor of 8. The image channels (`in_ch` of the first
//! block) and the `out_ch` of `fc` blocks are not scaled.
//!
//! Blocks marked `branch` model one arm of a multi-branch unit: they read the
//! current resolution but do not advance it, and their channel counts are not
//! checked against the main path. A following `concat` sets the joined
//! channel count and spatial size.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::butterfly::{count_flops, ButterflySpec};
use crate::{BftError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Conv,
    Depthwise,
    Pointwise,
    BftFusion,
    Fc,
    Pool,
    Concat,
}

impl BlockKind {
    pub fn is_fusion(self) -> bool {
        matches!(self, BlockKind::Pointwise | BlockKind::BftFusion)
    }

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Conv => "conv",
            BlockKind::Depthwise => "depthwise",
            BlockKind::Pointwise => "pointwise",
            BlockKind::BftFusion => "bft_fusion",
            BlockKind::Fc => "fc",
            BlockKind::Pool => "pool",
            BlockKind::Concat => "concat",
        }
    }
}

fn one() -> usize {
    1
}

fn default_base() -> usize {
    4
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    pub in_ch: usize,
    pub out_ch: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default = "one")]
    pub kernel: usize,
    /// Butterfly base for `bft_fusion` blocks.
    #[serde(default = "default_base")]
    pub base: usize,
    #[serde(default, skip_serializing_if = "is_false")]
    pub branch: bool,
    /// Pointwise blocks that [`ArchConfig::with_fusion`] leaves alone.
    #[serde(default, skip_serializing_if = "is_false")]
    pub pinned: bool,
}

impl Block {
    pub fn new(kind: BlockKind, in_ch: usize, out_ch: usize, stride: usize, kernel: usize) -> Self {
        Self {
            kind,
            in_ch,
            out_ch,
            stride,
            kernel,
            base: default_base(),
            branch: false,
            pinned: false,
        }
    }

    fn branch(mut self) -> Self {
        self.branch = true;
        self
    }

    fn pinned(mut self) -> Self {
        self.pinned = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Fusion {
    Pointwise,
    Bft { base: usize },
}

impl FromStr for Fusion {
    type Err = BftError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pointwise" | "pw" => Ok(Fusion::Pointwise),
            "bft" | "butterfly" => Ok(Fusion::Bft { base: 4 }),
            _ => Err(BftError::Unknown {
                what: "fusion kind",
                name: s.into(),
            }),
        }
    }
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fusion::Pointwise => f.write_str("pointwise"),
            Fusion::Bft { base } => write!(f, "bft(k={base})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub name: String,
    pub width_multiplier: f64,
    pub input_resolution: usize,
    pub blocks: Vec<Block>,
}

impl ArchConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Swaps every unpinned fusion block to the requested kind.
    pub fn with_fusion(&self, fusion: Fusion) -> Self {
        let mut out = self.clone();
        for b in out.blocks.iter_mut().filter(|b| b.kind.is_fusion() && !b.pinned) {
            match fusion {
                Fusion::Pointwise => b.kind = BlockKind::Pointwise,
                Fusion::Bft { base } => {
                    b.kind = BlockKind::BftFusion;
                    b.base = base;
                }
            }
        }
        out.name = format!("{}+{}", self.name, fusion);
        out
    }

    /// Looks up a built-in config: `mobilenetv1-<width>-<resolution>` or
    /// `shufflenetv2-1.25[-<resolution>]`.
    pub fn builtin(name: &str) -> Result<Self> {
        let unknown = || BftError::Unknown {
            what: "architecture",
            name: name.to_string(),
        };
        let lower = name.to_ascii_lowercase();
        let parts: Vec<&str> = lower.split('-').collect();
        match parts.as_slice() {
            ["mobilenetv1", width, res] => {
                let width: f64 = width.parse().map_err(|_| unknown())?;
                let res: usize = res.parse().map_err(|_| unknown())?;
                if width <= 0.0 || res == 0 {
                    return Err(unknown());
                }
                Ok(mobilenet_v1(width, res))
            }
            ["shufflenetv2", "1.25"] => Ok(shufflenet_v2_1_25(224)),
            ["shufflenetv2", "1.25", res] => Ok(shufflenet_v2_1_25(res.parse().map_err(|_| unknown())?)),
            _ => Err(unknown()),
        }
    }
}

/// MobileNetV1 with pointwise fusion; channel counts are for width 1.0.
pub fn mobilenet_v1(width_multiplier: f64, input_resolution: usize) -> ArchConfig {
    const STAGES: [(usize, usize); 13] = [
        (64, 1),
        (128, 2),
        (128, 1),
        (256, 2),
        (256, 1),
        (512, 2),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (1024, 2),
        (1024, 1),
    ];
    let mut blocks = vec![Block::new(BlockKind::Conv, 3, 32, 2, 3)];
    let mut c = 32;
    for (out, stride) in STAGES {
        blocks.push(Block::new(BlockKind::Depthwise, c, c, stride, 3));
        blocks.push(Block::new(BlockKind::Pointwise, c, out, 1, 1));
        c = out;
    }
    blocks.push(Block::new(BlockKind::Pool, c, c, 1, 0));
    blocks.push(Block::new(BlockKind::Fc, c, 1000, 1, 1));
    ArchConfig {
        name: format!("mobilenetv1-{width_multiplier}-{input_resolution}"),
        width_multiplier,
        input_resolution,
        blocks,
    }
}

/// ShuffleNetV2-1.25 as listed stage by stage: conv1 24, stages 128/256/1024
/// with 4/8/4 units, conv5 1024, global pool, fc 1000. Stage 4 is taken at the
/// listed width of 1024 even though that column may mean the conv5 width.
/// The two pointwise convolutions reading the 24-channel stem are pinned.
pub fn shufflenet_v2_1_25(input_resolution: usize) -> ArchConfig {
    use BlockKind::*;
    let mut blocks = vec![Block::new(Conv, 3, 24, 2, 3), Block::new(Pool, 24, 24, 2, 3)];
    let mut c = 24;
    for (out, repeat) in [(128, 4), (256, 8), (1024, 4)] {
        let half = out / 2;
        let pin = |b: Block, c: usize| if c == 24 { b.pinned() } else { b };
        // stride-2 unit: both branches downsample
        blocks.push(Block::new(Depthwise, c, c, 2, 3).branch());
        blocks.push(pin(Block::new(Pointwise, c, half, 2, 1).branch(), c));
        blocks.push(pin(Block::new(Pointwise, c, half, 1, 1).branch(), c));
        blocks.push(Block::new(Depthwise, half, half, 2, 3).branch());
        blocks.push(Block::new(Pointwise, half, half, 2, 1).branch());
        blocks.push(Block::new(Concat, c, out, 2, 1));
        c = out;
        for _ in 1..repeat {
            blocks.push(Block::new(Pointwise, half, half, 1, 1).branch());
            blocks.push(Block::new(Depthwise, half, half, 1, 3).branch());
            blocks.push(Block::new(Pointwise, half, half, 1, 1).branch());
            blocks.push(Block::new(Concat, c, c, 1, 1));
        }
    }
    blocks.push(Block::new(Pointwise, c, 1024, 1, 1));
    blocks.push(Block::new(Pool, 1024, 1024, 1, 0));
    blocks.push(Block::new(Fc, 1024, 1000, 1, 1));
    ArchConfig {
        name: format!("shufflenetv2-1.25-{input_resolution}"),
        width_multiplier: 1.0,
        input_resolution,
        blocks,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockFlops {
    pub index: usize,
    pub kind: BlockKind,
    pub in_ch: usize,
    pub out_ch: usize,
    pub out_resolution: usize,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlopReport {
    pub name: String,
    pub total: u64,
    pub blocks: Vec<BlockFlops>,
    pub totals_by_kind: BTreeMap<String, u64>,
    pub percent_by_kind: BTreeMap<String, f64>,
}

impl FlopReport {
    /// MACs in `pointwise` and `bft_fusion` blocks.
    pub fn fusion_macs(&self) -> u64 {
        self.blocks.iter().filter(|b| b.kind.is_fusion()).map(|b| b.macs).sum()
    }

    pub fn fusion_share(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.fusion_macs() as f64 / self.total as f64
        }
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{}\n", self.name);
        s.push_str(&format!("{:<12} {:>14} {:>8}\n", "kind", "MACs", "%"));
        for (kind, macs) in &self.totals_by_kind {
            s.push_str(&format!(
                "{:<12} {:>14} {:>7.2}%\n",
                kind, macs, self.percent_by_kind[kind]
            ));
        }
        s.push_str(&format!(
            "{:<12} {:>14} ({:.2} M)\nfusion share {:.2}%\n",
            "total",
            self.total,
            self.total as f64 / 1e6,
            self.fusion_share()
        ));
        s
    }
}

pub fn scale_channels(c: usize, width_multiplier: f64) -> usize {
    ((c as f64 * width_multiplier).round_ties_even() as usize).max(8)
}

pub fn profile(arch: &ArchConfig) -> Result<FlopReport> {
    if arch.width_multiplier.is_nan() || arch.width_multiplier <= 0.0 || arch.input_resolution == 0 {
        return Err(BftError::Arch(format!(
            "{}: width multiplier and resolution must be positive",
            arch.name
        )));
    }
    let first = arch
        .blocks
        .first()
        .ok_or_else(|| BftError::Arch(format!("{}: no blocks", arch.name)))?;
    let image_ch = first.in_ch;
    let scale = |c: usize| scale_channels(c, arch.width_multiplier);

    let mut h = arch.input_resolution;
    let mut c = image_ch;
    let mut blocks = Vec::with_capacity(arch.blocks.len());
    for (index, b) in arch.blocks.iter().enumerate() {
        let err = |msg: String| BftError::Arch(format!("{} block {index} ({}): {msg}", arch.name, b.kind.name()));
        if b.stride == 0 {
            return Err(err("stride must be positive".into()));
        }
        let in_ch = if index == 0 { image_ch } else { scale(b.in_ch) };
        let out_ch = if b.kind == BlockKind::Fc {
            b.out_ch
        } else {
            scale(b.out_ch)
        };
        if !b.branch && b.kind != BlockKind::Concat && in_ch != c {
            return Err(err(format!(
                "expects {in_ch} input channels, previous block produced {c}"
            )));
        }
        let out_h = h.div_ceil(b.stride);
        let site = (out_h * out_h) as u64;
        let k2 = (b.kernel * b.kernel) as u64;
        let (macs, out_h, out_ch) = match b.kind {
            BlockKind::Conv => (site * k2 * in_ch as u64 * out_ch as u64, out_h, out_ch),
            BlockKind::Depthwise => {
                if in_ch != out_ch {
                    return Err(err(format!("depthwise maps {in_ch} to {out_ch} channels")));
                }
                (site * k2 * in_ch as u64, out_h, out_ch)
            }
            BlockKind::Pointwise => {
                if b.kernel != 1 {
                    return Err(err(format!("pointwise kernel is {}", b.kernel)));
                }
                (site * in_ch as u64 * out_ch as u64, out_h, out_ch)
            }
            BlockKind::BftFusion => {
                let spec = ButterflySpec::with_base(in_ch.max(out_ch), b.base).map_err(|e| err(e.to_string()))?;
                (site * count_flops(&spec), out_h, out_ch)
            }
            BlockKind::Fc => {
                if h != 1 {
                    return Err(err(format!("fully connected input is {h}x{h}, expected 1x1")));
                }
                (in_ch as u64 * out_ch as u64, 1, out_ch)
            }
            BlockKind::Pool if b.kernel == 0 => ((h * h * in_ch) as u64, 1, in_ch),
            BlockKind::Pool => (site * k2 * in_ch as u64, out_h, in_ch),
            BlockKind::Concat => (0, out_h, out_ch),
        };
        blocks.push(BlockFlops {
            index,
            kind: b.kind,
            in_ch,
            out_ch,
            out_resolution: out_h,
            macs,
        });
        if !b.branch {
            h = out_h;
            c = out_ch;
        }
    }

    let total: u64 = blocks.iter().map(|b| b.macs).sum();
    let mut totals_by_kind = BTreeMap::new();
    for b in &blocks {
        *totals_by_kind.entry(b.kind.name().to_string()).or_insert(0) += b.macs;
    }
    let percent_by_kind = totals_by_kind
        .iter()
        .map(|(k, &v)| {
            let pct = if total == 0 {
                0.0
            } else {
                100.0 * v as f64 / total as f64
            };
            (k.clone(), pct)
        })
        .collect();
    Ok(FlopReport {
        name: arch.name.clone(),
        total,
        blocks,
        totals_by_kind,
        percent_by_kind,
    })
}

/// Percentage of MACs spent in fusion blocks.
pub fn bottleneck_share(arch: &ArchConfig) -> Result<f64> {
    Ok(profile(arch)?.fusion_share())
}
