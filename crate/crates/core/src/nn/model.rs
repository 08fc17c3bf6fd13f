use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, ConvCache, ConvShape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Keeps the whole final feature map, and with it where things are.
    Flatten,
    GlobalAverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorConfig {
    pub stages: usize,
    pub channels: Vec<usize>,
    pub kernel_size: usize,
    pub residual: bool,
    pub pooling: Pooling,
    /// `M_H` for the CFR branch, `M_A` for the ADCAM branch.
    pub feature_len: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            stages: 3,
            channels: vec![4, 8, 16],
            kernel_size: 3,
            residual: true,
            pooling: Pooling::Flatten,
            feature_len: 64,
        }
    }
}

impl ExtractorConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.stages == 0 {
            v.push("extractor needs at least one stage".to_string());
        }
        if self.channels.len() != self.stages {
            v.push(format!("{} channel counts given for {} stages", self.channels.len(), self.stages));
        }
        if self.channels.contains(&0) {
            v.push("channel counts must be positive".to_string());
        }
        if self.kernel_size.is_multiple_of(2) {
            v.push(format!("kernel size {} must be odd", self.kernel_size));
        }
        if self.feature_len == 0 {
            v.push("feature length must be at least 1".to_string());
        }
        v
    }
}

/// One input branch of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BranchSpec {
    Conv {
        input_channels: usize,
        height: usize,
        width: usize,
        extractor: ExtractorConfig,
    },
    /// Small MLP over a flat vector, used for ground-truth path features.
    Dense {
        input_len: usize,
        hidden: usize,
        feature_len: usize,
    },
}

impl BranchSpec {
    pub fn input_len(&self) -> usize {
        match self {
            BranchSpec::Conv {
                input_channels,
                height,
                width,
                ..
            } => input_channels * height * width,
            BranchSpec::Dense { input_len, .. } => *input_len,
        }
    }

    pub fn feature_len(&self) -> usize {
        match self {
            BranchSpec::Conv { extractor, .. } => extractor.feature_len,
            BranchSpec::Dense { feature_len, .. } => *feature_len,
        }
    }
}

/// Branch features are concatenated and fed to one of `num_heads` linear
/// heads, each mapping to two coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub branches: Vec<BranchSpec>,
    pub num_heads: usize,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.branches.is_empty() {
            v.push("at least one input branch is required".to_string());
        }
        if self.num_heads == 0 {
            v.push("at least one head is required".to_string());
        }
        for (i, b) in self.branches.iter().enumerate() {
            match b {
                BranchSpec::Conv {
                    input_channels,
                    height,
                    width,
                    extractor,
                } => {
                    if input_channels * height * width == 0 {
                        v.push(format!("branch {i}: empty input"));
                    }
                    v.extend(extractor.violations().into_iter().map(|m| format!("branch {i}: {m}")));
                }
                BranchSpec::Dense {
                    input_len,
                    hidden,
                    feature_len,
                } => {
                    if input_len * hidden * feature_len == 0 {
                        v.push(format!("branch {i}: dense sizes must be positive"));
                    }
                }
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }

    pub fn feature_len(&self) -> usize {
        self.branches.iter().map(BranchSpec::feature_len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    /// Xavier fan sizes; biases have none and start at zero.
    #[serde(skip)]
    fans: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy)]
struct DenseIds {
    n_in: usize,
    n_out: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct StageIds {
    shape: ConvShape,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
enum BranchNet {
    Conv {
        stages: Vec<StageIds>,
        pooling: Pooling,
        proj: DenseIds,
    },
    Dense {
        hidden: DenseIds,
        out: DenseIds,
    },
}

/// Parameter layout and wiring derived from an [`Architecture`]. All
/// weights live in one flat vector; sections index into it.
#[derive(Debug, Clone)]
pub struct Network {
    arch: Architecture,
    sections: Vec<SectionInfo>,
    branches: Vec<BranchNet>,
    heads: Vec<DenseIds>,
    num_params: usize,
}

struct LayoutBuilder {
    sections: Vec<SectionInfo>,
    next: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, fans: Option<(usize, usize)>) -> usize {
        let len = shape.iter().product();
        self.sections.push(SectionInfo {
            name,
            shape,
            offset: self.next,
            len,
            fans,
        });
        self.next += len;
        self.sections.len() - 1
    }

    fn dense(&mut self, prefix: &str, n_in: usize, n_out: usize) -> DenseIds {
        let w = self.push(format!("{prefix}.weight"), vec![n_out, n_in], Some((n_in, n_out)));
        let b = self.push(format!("{prefix}.bias"), vec![n_out], None);
        DenseIds { n_in, n_out, w, b }
    }
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct Trace {
    branches: Vec<BranchTrace>,
    features: Vec<f64>,
}

#[derive(Debug, Clone)]
enum BranchTrace {
    Conv {
        caches: Vec<ConvCache>,
        pooled: Vec<f64>,
        proj_pre: Vec<f64>,
    },
    Dense {
        input: Vec<f64>,
        hidden_pre: Vec<f64>,
        hidden: Vec<f64>,
        out_pre: Vec<f64>,
    },
}

impl Network {
    pub fn new(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        let mut lb = LayoutBuilder {
            sections: Vec::new(),
            next: 0,
        };
        let mut branches = Vec::new();
        for (bi, spec) in arch.branches.iter().enumerate() {
            let g = format!("g{}", bi + 1);
            branches.push(match spec {
                BranchSpec::Conv {
                    input_channels,
                    height,
                    width,
                    extractor,
                } => {
                    let (mut c, mut h, mut w) = (*input_channels, *height, *width);
                    let mut stages = Vec::new();
                    for (si, &c_out) in extractor.channels.iter().enumerate() {
                        let shape = ConvShape::new(c, h, w, c_out, extractor.kernel_size, extractor.residual);
                        let k2 = extractor.kernel_size * extractor.kernel_size;
                        let wid = lb.push(
                            format!("{g}.conv{si}.weight"),
                            vec![c_out, c, extractor.kernel_size, extractor.kernel_size],
                            Some((c * k2, c_out * k2)),
                        );
                        let bid = lb.push(format!("{g}.conv{si}.bias"), vec![c_out], None);
                        stages.push(StageIds { shape, w: wid, b: bid });
                        (c, h, w) = (c_out, shape.h_out, shape.w_out);
                    }
                    let pooled_len = match extractor.pooling {
                        Pooling::Flatten => c * h * w,
                        Pooling::GlobalAverage => c,
                    };
                    let proj = lb.dense(&format!("{g}.proj"), pooled_len, extractor.feature_len);
                    BranchNet::Conv {
                        stages,
                        pooling: extractor.pooling,
                        proj,
                    }
                }
                BranchSpec::Dense {
                    input_len,
                    hidden,
                    feature_len,
                } => BranchNet::Dense {
                    hidden: lb.dense(&format!("{g}.fc0"), *input_len, *hidden),
                    out: lb.dense(&format!("{g}.fc1"), *hidden, *feature_len),
                },
            });
        }
        let f = arch.feature_len();
        let heads = (0..arch.num_heads).map(|i| lb.dense(&format!("head{i}"), f, 2)).collect();
        Ok(Network {
            arch: arch.clone(),
            num_params: lb.next,
            sections: lb.sections,
            branches,
            heads,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn sections(&self) -> &[SectionInfo] {
        &self.sections
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    /// Section ids of head `h` (weight, bias).
    pub fn head_sections(&self, h: usize) -> [usize; 2] {
        [self.heads[h].w, self.heads[h].b]
    }

    pub fn is_head_section(&self, id: usize) -> bool {
        self.heads.iter().any(|h| h.w == id || h.b == id)
    }

    pub fn section_range(&self, id: usize) -> std::ops::Range<usize> {
        let s = &self.sections[id];
        s.offset..s.offset + s.len
    }

    fn sl<'a>(&self, v: &'a [f64], id: usize) -> &'a [f64] {
        &v[self.section_range(id)]
    }

    /// Xavier-uniform weights, zero biases.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; self.num_params];
        for s in &self.sections {
            if let Some((fan_in, fan_out)) = s.fans {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for p in &mut params[s.offset..s.offset + s.len] {
                    *p = rng.gen_range(-a..a);
                }
            }
        }
        params
    }

    fn check_inputs(&self, inputs: &[&[f64]], head: usize) -> Result<()> {
        if inputs.len() != self.arch.branches.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} inputs for {} branches",
                inputs.len(),
                self.arch.branches.len()
            )));
        }
        for (i, (x, b)) in inputs.iter().zip(&self.arch.branches).enumerate() {
            if x.len() != b.input_len() {
                return Err(Error::DimensionMismatch(format!(
                    "branch {i} expects {} values, got {}",
                    b.input_len(),
                    x.len()
                )));
            }
        }
        if head >= self.heads.len() {
            return Err(Error::domain(format!("head {head} out of range for {} heads", self.heads.len())));
        }
        Ok(())
    }

    /// Raw (standardized-space) output and the trace for backprop.
    pub fn forward_trace(&self, params: &[f64], inputs: &[&[f64]], head: usize) -> Result<([f64; 2], Trace)> {
        self.check_inputs(inputs, head)?;
        let mut features = Vec::with_capacity(self.arch.feature_len());
        let mut traces = Vec::with_capacity(self.branches.len());
        for (net, x) in self.branches.iter().zip(inputs) {
            match net {
                BranchNet::Conv { stages, pooling, proj } => {
                    let mut act = x.to_vec();
                    let mut caches = Vec::with_capacity(stages.len());
                    for st in stages {
                        let (out, cache) =
                            layers::conv_forward(&st.shape, self.sl(params, st.w), self.sl(params, st.b), &act);
                        caches.push(cache);
                        act = out;
                    }
                    let last = stages.last().expect("validated").shape;
                    let pooled = match pooling {
                        Pooling::Flatten => act,
                        Pooling::GlobalAverage => {
                            let n = last.h_out * last.w_out;
                            act.chunks(n).map(|c| c.iter().sum::<f64>() / n as f64).collect()
                        }
                    };
                    let proj_pre =
                        layers::dense_forward(proj.n_in, proj.n_out, self.sl(params, proj.w), self.sl(params, proj.b), &pooled);
                    features.extend(proj_pre.iter().map(|v| v.max(0.0)));
                    traces.push(BranchTrace::Conv {
                        caches,
                        pooled,
                        proj_pre,
                    });
                }
                BranchNet::Dense { hidden, out } => {
                    let hidden_pre = layers::dense_forward(
                        hidden.n_in,
                        hidden.n_out,
                        self.sl(params, hidden.w),
                        self.sl(params, hidden.b),
                        x,
                    );
                    let mut h = hidden_pre.clone();
                    layers::relu_in_place(&mut h);
                    let out_pre =
                        layers::dense_forward(out.n_in, out.n_out, self.sl(params, out.w), self.sl(params, out.b), &h);
                    features.extend(out_pre.iter().map(|v| v.max(0.0)));
                    traces.push(BranchTrace::Dense {
                        input: x.to_vec(),
                        hidden_pre,
                        hidden: h,
                        out_pre,
                    });
                }
            }
        }
        let hd = &self.heads[head];
        let y = layers::dense_forward(hd.n_in, 2, self.sl(params, hd.w), self.sl(params, hd.b), &features);
        Ok((
            [y[0], y[1]],
            Trace {
                branches: traces,
                features,
            },
        ))
    }

    /// Accumulates `d(loss)/d(params)` into `grad` given `dy = d(loss)/d(output)`.
    pub fn backward(&self, params: &[f64], trace: &Trace, head: usize, dy: [f64; 2], grad: &mut [f64]) {
        let hd = self.heads[head];
        let (hw, hb) = (self.section_range(hd.w), self.section_range(hd.b));
        let dfeat = {
            let (gw, gb) = split_two(grad, hw, hb);
            layers::dense_backward(hd.n_in, &params[self.section_range(hd.w)], &trace.features, &dy, gw, gb, true)
                .expect("dx requested")
        };
        let mut offset = 0;
        for (net, tr) in self.branches.iter().zip(&trace.branches) {
            match (net, tr) {
                (
                    BranchNet::Conv { stages, pooling, proj },
                    BranchTrace::Conv {
                        caches,
                        pooled,
                        proj_pre,
                    },
                ) => {
                    let mut d = dfeat[offset..offset + proj.n_out].to_vec();
                    offset += proj.n_out;
                    layers::relu_backward(proj_pre, &mut d);
                    let dpooled = {
                        let (gw, gb) = split_two(grad, self.section_range(proj.w), self.section_range(proj.b));
                        layers::dense_backward(proj.n_in, self.sl(params, proj.w), pooled, &d, gw, gb, true)
                            .expect("dx requested")
                    };
                    let last = stages.last().expect("validated").shape;
                    let mut dact = match pooling {
                        Pooling::Flatten => dpooled,
                        Pooling::GlobalAverage => {
                            let n = last.h_out * last.w_out;
                            dpooled
                                .iter()
                                .flat_map(|g| std::iter::repeat_n(g / n as f64, n))
                                .collect()
                        }
                    };
                    for (si, (st, cache)) in stages.iter().zip(caches).enumerate().rev() {
                        let (gw, gb) = split_two(grad, self.section_range(st.w), self.section_range(st.b));
                        match layers::conv_backward(&st.shape, self.sl(params, st.w), cache, &dact, gw, gb, si > 0) {
                            Some(dx) => dact = dx,
                            None => break,
                        }
                    }
                }
                (
                    BranchNet::Dense { hidden, out },
                    BranchTrace::Dense {
                        input,
                        hidden_pre,
                        hidden: h,
                        out_pre,
                    },
                ) => {
                    let mut d = dfeat[offset..offset + out.n_out].to_vec();
                    offset += out.n_out;
                    layers::relu_backward(out_pre, &mut d);
                    let mut dh = {
                        let (gw, gb) = split_two(grad, self.section_range(out.w), self.section_range(out.b));
                        layers::dense_backward(out.n_in, self.sl(params, out.w), h, &d, gw, gb, true)
                            .expect("dx requested")
                    };
                    layers::relu_backward(hidden_pre, &mut dh);
                    let (gw, gb) = split_two(grad, self.section_range(hidden.w), self.section_range(hidden.b));
                    layers::dense_backward(hidden.n_in, self.sl(params, hidden.w), input, &dh, gw, gb, false);
                }
                _ => unreachable!("trace built by this network"),
            }
        }
    }
}

/// Two disjoint mutable sub-slices; `a` must precede `b`.
fn split_two(v: &mut [f64], a: std::ops::Range<usize>, b: std::ops::Range<usize>) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (left, right) = v.split_at_mut(b.start);
    (&mut left[a], &mut right[..b.end - b.start])
}
