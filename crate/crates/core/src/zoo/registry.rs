//! Named architectures and their reference parameter counts.

use super::spec::{NetworkSpec, PoolMethod, Stage, DEFAULT_EMBEDDING_DIM, DEFAULT_FEAT_DIM};
use crate::error::{config_err, Result};
use crate::rev::ResidualKind::{self, Basic, Bottleneck, DfBottleneck};

#[derive(Clone, Copy, Debug)]
enum Family {
    ResNet(ResidualKind),
    RevTypeI(ResidualKind),
    RevTypeII(ResidualKind),
    DfResNet,
    DfRevTypeI,
    DfRevTypeII,
}

struct Entry {
    name: &'static str,
    family: Family,
    widths: [usize; 4],
    blocks: [usize; 4],
    /// Reference parameter count in millions.
    reference_m: f64,
}

const RES_W: [usize; 4] = [32, 64, 128, 256];
const W300: [usize; 4] = [48, 96, 192, 300];
const W384: [usize; 4] = [48, 96, 192, 384];

const ENTRIES: &[Entry] = &[
    Entry { name: "ResNet34", family: Family::ResNet(Basic), widths: RES_W, blocks: [3, 4, 6, 3], reference_m: 6.6 },
    Entry { name: "ResNet101", family: Family::ResNet(Bottleneck), widths: RES_W, blocks: [3, 4, 23, 3], reference_m: 15.9 },
    Entry { name: "ResNet152", family: Family::ResNet(Bottleneck), widths: RES_W, blocks: [3, 8, 36, 3], reference_m: 19.8 },
    Entry { name: "RevNet46", family: Family::RevTypeI(Basic), widths: W300, blocks: [2, 3, 5, 3], reference_m: 6.7 },
    Entry { name: "RevNet126", family: Family::RevTypeI(Basic), widths: W384, blocks: [3, 4, 23, 3], reference_m: 15.0 },
    Entry { name: "RevNet140", family: Family::RevTypeI(Bottleneck), widths: W300, blocks: [3, 4, 15, 3], reference_m: 15.8 },
    Entry { name: "RevNet178", family: Family::RevTypeI(Basic), widths: W384, blocks: [3, 8, 32, 3], reference_m: 18.3 },
    Entry { name: "RevNet230", family: Family::RevTypeI(Bottleneck), widths: W300, blocks: [3, 8, 26, 3], reference_m: 19.6 },
    Entry { name: "RevNet57", family: Family::RevTypeII(Basic), widths: W300, blocks: [2, 3, 5, 3], reference_m: 6.1 },
    Entry { name: "RevNet137", family: Family::RevTypeII(Basic), widths: W384, blocks: [3, 4, 23, 3], reference_m: 14.2 },
    Entry { name: "RevNet155", family: Family::RevTypeII(Bottleneck), widths: W300, blocks: [3, 4, 15, 3], reference_m: 15.6 },
    Entry { name: "RevNet197", family: Family::RevTypeII(Basic), widths: W384, blocks: [3, 8, 34, 3], reference_m: 18.2 },
    Entry { name: "RevNet245", family: Family::RevTypeII(Bottleneck), widths: W300, blocks: [3, 8, 26, 3], reference_m: 19.4 },
    Entry { name: "DF-ResNet56", family: Family::DfResNet, widths: RES_W, blocks: [3, 3, 9, 3], reference_m: 4.5 },
    Entry { name: "DF-ResNet110", family: Family::DfResNet, widths: RES_W, blocks: [3, 3, 27, 3], reference_m: 7.0 },
    Entry { name: "DF-ResNet179", family: Family::DfResNet, widths: RES_W, blocks: [3, 8, 45, 3], reference_m: 9.8 },
    Entry { name: "DF-ResNet233", family: Family::DfResNet, widths: RES_W, blocks: [3, 8, 63, 3], reference_m: 12.3 },
    Entry { name: "DF-RevNet66", family: Family::DfRevTypeI, widths: W384, blocks: [3, 3, 5, 3], reference_m: 4.4 },
    Entry { name: "DF-RevNet89", family: Family::DfRevTypeII, widths: W384, blocks: [3, 3, 5, 3], reference_m: 4.1 },
    Entry { name: "DF-RevNet126", family: Family::DfRevTypeI, widths: W384, blocks: [3, 3, 15, 3], reference_m: 6.8 },
    Entry { name: "DF-RevNet149", family: Family::DfRevTypeII, widths: W384, blocks: [3, 3, 15, 3], reference_m: 6.5 },
    Entry { name: "DF-RevNet258", family: Family::DfRevTypeI, widths: W384, blocks: [3, 8, 32, 3], reference_m: 9.5 },
    Entry { name: "DF-RevNet281", family: Family::DfRevTypeII, widths: W384, blocks: [3, 8, 32, 3], reference_m: 9.1 },
    Entry { name: "DF-RevNet354", family: Family::DfRevTypeI, widths: W384, blocks: [3, 8, 48, 3], reference_m: 11.9 },
    Entry { name: "DF-RevNet377", family: Family::DfRevTypeII, widths: W384, blocks: [3, 8, 48, 3], reference_m: 11.5 },
];

/// Second reference count for architectures listed with two different totals, in millions.
const ALTERNATE_M: &[(&str, f64)] = &[("DF-RevNet66", 4.8), ("DF-RevNet89", 4.5)];

pub fn names() -> Vec<&'static str> {
    ENTRIES.iter().map(|e| e.name).collect()
}

/// Registry entries built from reversible and depthwise-separable families (no plain ResNets).
pub fn reversible_family_names() -> Vec<&'static str> {
    ENTRIES.iter().filter(|e| !matches!(e.family, Family::ResNet(_))).map(|e| e.name).collect()
}

fn entry(name: &str) -> Result<&'static Entry> {
    ENTRIES.iter().find(|e| e.name == name).ok_or_else(|| config_err!("unknown network `{name}`"))
}

/// Reference parameter count (absolute) for a registry name.
pub fn reference_param_count(name: &str) -> Result<f64> {
    Ok(entry(name)?.reference_m * 1e6)
}

pub fn alternate_param_count(name: &str) -> Option<f64> {
    ALTERNATE_M.iter().find(|(n, _)| *n == name).map(|(_, m)| m * 1e6)
}

pub fn spec(name: &str) -> Result<NetworkSpec> {
    let e = entry(name)?;
    let (c, b) = (e.widths, e.blocks);
    let mut st = Vec::new();
    let last_width = match e.family {
        Family::ResNet(kind) => {
            st.push(Stage::Conv { channels: c[0], kernel: 3, stride: 1 });
            for i in 0..4 {
                let mut repeat = b[i];
                if i > 0 {
                    st.push(Stage::Ds { kind, channels: c[i] });
                    repeat -= 1;
                }
                if repeat > 0 {
                    st.push(Stage::Res { kind, channels: c[i], repeat });
                }
            }
            c[3] * kind.expansion()
        }
        Family::RevTypeI(kind) => {
            let x = kind.expansion();
            st.push(Stage::Conv { channels: c[0], kernel: 3, stride: 1 });
            for i in 0..4 {
                if i == 0 {
                    st.push(Stage::Res { kind, channels: c[0], repeat: 1 });
                } else {
                    st.push(Stage::Ds { kind, channels: c[i] });
                }
                if b[i] > 1 {
                    st.push(Stage::RevRes { kind, c_half: c[i] * x / 2, repeat: b[i] - 1 });
                }
            }
            c[3] * x
        }
        Family::RevTypeII(kind) => {
            let w = c.map(|v| v * kind.expansion());
            st.push(Stage::Conv { channels: w[0], kernel: 3, stride: 1 });
            for i in 0..4 {
                st.push(Stage::RevRes { kind, c_half: w[i] / 2, repeat: b[i] });
                if i < 3 {
                    st.push(Stage::Conv { channels: w[i + 1] / 4, kernel: 3, stride: 1 });
                    st.push(Stage::RevDs { r: 2, c_out: w[i + 1] });
                }
            }
            w[3]
        }
        Family::DfResNet => {
            st.push(Stage::Conv { channels: c[0], kernel: 3, stride: 1 });
            for i in 0..4 {
                if i > 0 {
                    st.push(Stage::Conv { channels: c[i], kernel: 3, stride: 2 });
                }
                st.push(Stage::Res { kind: DfBottleneck, channels: c[i], repeat: b[i] });
            }
            c[3]
        }
        Family::DfRevTypeI => {
            st.push(Stage::Conv { channels: c[0], kernel: 3, stride: 1 });
            st.push(Stage::Conv { channels: c[0], kernel: 3, stride: 1 });
            for i in 0..4 {
                if i > 0 {
                    st.push(Stage::Conv { channels: c[i], kernel: 3, stride: 2 });
                }
                if b[i] > 1 {
                    st.push(Stage::RevRes { kind: DfBottleneck, c_half: c[i] / 2, repeat: b[i] - 1 });
                }
            }
            c[3]
        }
        Family::DfRevTypeII => {
            st.push(Stage::Conv { channels: c[0], kernel: 3, stride: 1 });
            for i in 0..4 {
                st.push(Stage::RevRes { kind: DfBottleneck, c_half: c[i] / 2, repeat: b[i] });
                if i < 3 {
                    st.push(Stage::Conv { channels: c[i + 1] / 4, kernel: 3, stride: 1 });
                    st.push(Stage::RevDs { r: 2, c_out: c[i + 1] });
                }
            }
            c[3]
        }
    };
    let d_in = 2 * last_width * (DEFAULT_FEAT_DIM / 8);
    st.push(Stage::Pooling { method: PoolMethod::Gsp });
    st.push(Stage::Fc { d_in, d_out: DEFAULT_EMBEDDING_DIM });
    Ok(NetworkSpec {
        name: e.name.to_string(),
        stages: st,
        embedding_dim: DEFAULT_EMBEDDING_DIM,
        feat_dim: DEFAULT_FEAT_DIM,
    })
}
