//! Layer-list description of a segmentation network and the two builders.
//!
//! Every node consumes the previous node's output, except `SkipConv`, which
//! reads an earlier node (`source`) and adds its result to the previous
//! node's output. Weighted nodes either fire (LIF, or BN+ReLU in ANN mode)
//! or accumulate (no leak, no firing; summed over time-steps).

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::ops::{conv_output_shape, transpose_output_shape, ConvSpec};
use crate::tensor::Shape4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv(ConvSpec),
    DilatedConv(ConvSpec),
    AvgPool,
    TransposeConv(ConvSpec),
    SkipConv { source: usize, conv: ConvSpec },
    /// Non-firing accumulator convolution producing class scores.
    Classifier(ConvSpec),
    BilinearHead { height: usize, width: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Weighted layers only: integrate over time without firing.
    pub accumulate: bool,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        let accumulate = matches!(kind, LayerKind::Classifier(_));
        LayerSpec {
            name: name.into(),
            kind,
            accumulate,
        }
    }

    pub fn accumulating(mut self) -> Self {
        self.accumulate = true;
        self
    }

    pub fn conv(&self) -> Option<&ConvSpec> {
        match &self.kind {
            LayerKind::Conv(c)
            | LayerKind::DilatedConv(c)
            | LayerKind::TransposeConv(c)
            | LayerKind::Classifier(c)
            | LayerKind::SkipConv { conv: c, .. } => Some(c),
            LayerKind::AvgPool | LayerKind::BilinearHead { .. } => None,
        }
    }

    pub fn is_weighted(&self) -> bool {
        self.conv().is_some()
    }

    /// Weighted and firing.
    pub fn is_lif(&self) -> bool {
        self.is_weighted() && !self.accumulate
    }

    pub fn is_transpose(&self) -> bool {
        matches!(self.kind, LayerKind::TransposeConv(_))
    }

    pub fn skip_source(&self) -> Option<usize> {
        match self.kind {
            LayerKind::SkipConv { source, .. } => Some(source),
            _ => None,
        }
    }

    /// Expected weight tensor shape.
    pub fn weight_shape(&self) -> Option<Shape4> {
        let c = self.conv()?;
        Some(if self.is_transpose() {
            c.transpose_weight_shape()
        } else {
            c.weight_shape()
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputDims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputDims {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        InputDims {
            channels,
            height,
            width,
        }
    }

    pub fn shape(&self, n: usize) -> Shape4 {
        Shape4::new(n, self.channels, self.height, self.width)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input: InputDims,
    pub num_classes: usize,
    /// First node after the feature extractor. ANN mode averages multi-frame
    /// embeddings at this boundary.
    pub head_start: usize,
    pub layers: Vec<LayerSpec>,
}

/// Options shared by the two builders.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArchOptions {
    /// Every channel count of the reference architecture is divided by this.
    pub width_divisor: usize,
    /// Dilation rates of the two dilated layers (DeepLab only).
    pub dilation: [usize; 2],
}

impl Default for ArchOptions {
    fn default() -> Self {
        ArchOptions {
            width_divisor: 1,
            dilation: [2, 2],
        }
    }
}

impl ArchOptions {
    fn ch(&self, c: usize) -> usize {
        (c / self.width_divisor.max(1)).max(1)
    }
}

fn check_builder(num_classes: usize, input: InputDims, factor: usize, opts: &ArchOptions) -> Result<()> {
    if num_classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
    }
    if input.channels == 0 || input.height == 0 || input.width == 0 {
        return Err(Error::Config("input dimensions must be >= 1".into()));
    }
    if input.height % factor != 0 || input.width % factor != 0 {
        return Err(Error::Config(format!(
            "input {}x{} must be divisible by {factor}",
            input.height, input.width
        )));
    }
    if opts.width_divisor == 0 || opts.dilation.contains(&0) {
        return Err(Error::Config("width divisor and dilation rates must be >= 1".into()));
    }
    Ok(())
}

/// VGG-style backbone (64,64 / pool / 128,128 / pool / 256, dilated 256,
/// dilated 256), classifier (3x3 1024, 1x1 1024, 1x1 classes) and a bilinear
/// head back to input resolution.
pub fn spiking_deeplab(num_classes: usize, input: InputDims, opts: ArchOptions) -> Result<NetworkSpec> {
    check_builder(num_classes, input, 4, &opts)?;
    let (c64, c128, c256, c1024) = (opts.ch(64), opts.ch(128), opts.ch(256), opts.ch(1024));
    use LayerKind::*;
    let layers = vec![
        LayerSpec::new("conv1_1", Conv(ConvSpec::same(3, input.channels, c64))),
        LayerSpec::new("conv1_2", Conv(ConvSpec::same(3, c64, c64))),
        LayerSpec::new("pool1", AvgPool),
        LayerSpec::new("conv2_1", Conv(ConvSpec::same(3, c64, c128))),
        LayerSpec::new("conv2_2", Conv(ConvSpec::same(3, c128, c128))),
        LayerSpec::new("pool2", AvgPool),
        LayerSpec::new("conv3_1", Conv(ConvSpec::same(3, c128, c256))),
        LayerSpec::new("conv3_2", DilatedConv(ConvSpec::dilated(3, c256, c256, opts.dilation[0]))),
        LayerSpec::new("conv3_3", DilatedConv(ConvSpec::dilated(3, c256, c256, opts.dilation[1]))),
        LayerSpec::new("fc6", Conv(ConvSpec::same(3, c256, c1024))),
        LayerSpec::new("fc7", Conv(ConvSpec::same(1, c1024, c1024))),
        LayerSpec::new("classifier", Classifier(ConvSpec::same(1, c1024, num_classes))),
        LayerSpec::new(
            "upsample",
            BilinearHead {
                height: input.height,
                width: input.width,
            },
        ),
    ];
    let spec = NetworkSpec {
        input,
        num_classes,
        head_start: 9,
        layers,
    };
    spec.validate()?;
    Ok(spec)
}

/// Three pooled blocks (64,64 / 128,128 / 256,256,256), two 1024 layers, a
/// class projection, then three 2x transposed convolutions each fused by
/// addition with a 1x1 projection of a pre-pool encoder map.
pub fn spiking_fcn(num_classes: usize, input: InputDims, opts: ArchOptions) -> Result<NetworkSpec> {
    check_builder(num_classes, input, 8, &opts)?;
    let (c64, c128, c256, c1024) = (opts.ch(64), opts.ch(128), opts.ch(256), opts.ch(1024));
    let k = num_classes;
    use LayerKind::*;
    let layers = vec![
        LayerSpec::new("conv1_1", Conv(ConvSpec::same(3, input.channels, c64))),
        LayerSpec::new("conv1_2", Conv(ConvSpec::same(3, c64, c64))),
        LayerSpec::new("pool1", AvgPool),
        LayerSpec::new("conv2_1", Conv(ConvSpec::same(3, c64, c128))),
        LayerSpec::new("conv2_2", Conv(ConvSpec::same(3, c128, c128))),
        LayerSpec::new("pool2", AvgPool),
        LayerSpec::new("conv3_1", Conv(ConvSpec::same(3, c128, c256))),
        LayerSpec::new("conv3_2", Conv(ConvSpec::same(3, c256, c256))),
        LayerSpec::new("conv3_3", Conv(ConvSpec::same(3, c256, c256))),
        LayerSpec::new("pool3", AvgPool),
        LayerSpec::new("fc6", Conv(ConvSpec::same(3, c256, c1024))),
        LayerSpec::new("fc7", Conv(ConvSpec::same(1, c1024, c1024))),
        LayerSpec::new("score", Conv(ConvSpec::same(1, c1024, k))),
        LayerSpec::new("up1", TransposeConv(ConvSpec::upsample2x(k, k))),
        LayerSpec::new(
            "skip1",
            SkipConv {
                source: 8,
                conv: ConvSpec::same(1, c256, k),
            },
        ),
        LayerSpec::new("up2", TransposeConv(ConvSpec::upsample2x(k, k))),
        LayerSpec::new(
            "skip2",
            SkipConv {
                source: 4,
                conv: ConvSpec::same(1, c128, k),
            },
        ),
        LayerSpec::new("up3", TransposeConv(ConvSpec::upsample2x(k, k))).accumulating(),
        LayerSpec::new(
            "skip3",
            SkipConv {
                source: 1,
                conv: ConvSpec::same(1, c64, k),
            },
        )
        .accumulating(),
    ];
    let spec = NetworkSpec {
        input,
        num_classes,
        head_start: 10,
        layers,
    };
    spec.validate()?;
    Ok(spec)
}

impl NetworkSpec {
    /// Per-item (n = 1) output shape of every node.
    pub fn layer_shapes(&self) -> Result<Vec<Shape4>> {
        let mut shapes: Vec<Shape4> = Vec::with_capacity(self.layers.len());
        let input = self.input.shape(1);
        for (i, layer) in self.layers.iter().enumerate() {
            let prev = if i == 0 { input } else { shapes[i - 1] };
            let ctx = |e: Error| Error::Config(format!("layer {i} `{}`: {e}", layer.name));
            let out = match &layer.kind {
                LayerKind::Conv(c) | LayerKind::DilatedConv(c) | LayerKind::Classifier(c) => {
                    conv_output_shape(prev, c).map_err(ctx)?
                }
                LayerKind::TransposeConv(c) => transpose_output_shape(prev, c).map_err(ctx)?,
                LayerKind::AvgPool => {
                    if prev.h % 2 != 0 || prev.w % 2 != 0 {
                        return Err(ctx(Error::Config(format!(
                            "cannot pool odd map {}x{}",
                            prev.h, prev.w
                        ))));
                    }
                    Shape4::new(1, prev.c, prev.h / 2, prev.w / 2)
                }
                LayerKind::BilinearHead { height, width } => {
                    if *height < prev.h || *width < prev.w {
                        return Err(ctx(Error::Config("bilinear head cannot shrink".into())));
                    }
                    Shape4::new(1, prev.c, *height, *width)
                }
                LayerKind::SkipConv { source, conv } => {
                    if *source + 1 >= i {
                        return Err(ctx(Error::Config(format!(
                            "skip source {source} must precede the fused node"
                        ))));
                    }
                    let branch = conv_output_shape(shapes[*source], conv).map_err(ctx)?;
                    if branch != prev {
                        return Err(ctx(Error::Config(format!(
                            "skip branch {branch} does not match fused map {prev}"
                        ))));
                    }
                    prev
                }
            };
            shapes.push(out);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        if self.head_start > self.layers.len() {
            return Err(Error::Config("head boundary beyond last layer".into()));
        }
        let shapes = self.layer_shapes()?;
        let out = shapes.last().expect("non-empty");
        if out.c != self.num_classes {
            return Err(Error::Config(format!(
                "network emits {} channels for {} classes",
                out.c, self.num_classes
            )));
        }
        if (out.h, out.w) != (self.input.height, self.input.width) {
            return Err(Error::Config(format!(
                "network output {}x{} does not match input {}x{}",
                out.h, out.w, self.input.height, self.input.width
            )));
        }
        // Once a node accumulates over time, nothing downstream may fire.
        let mut accumulated = false;
        for (i, l) in self.layers.iter().enumerate() {
            if accumulated && l.is_lif() {
                return Err(Error::Config(format!(
                    "layer {i} `{}` fires after the output accumulator",
                    l.name
                )));
            }
            if l.is_lif() && l.skip_source().is_some() && i > 0 && self.reduced_in_time(i - 1) {
                return Err(Error::Config(format!("firing skip `{}` after accumulator", l.name)));
            }
            accumulated |= l.accumulate && l.is_weighted();
        }
        if !accumulated {
            return Err(Error::Config("network has no accumulating output layer".into()));
        }
        Ok(())
    }

    /// Whether node `i`'s spiking-mode output has already been summed over time.
    pub fn reduced_in_time(&self, i: usize) -> bool {
        let l = &self.layers[i];
        if l.is_weighted() {
            l.accumulate
        } else {
            i > 0 && self.reduced_in_time(i - 1)
        }
    }

    pub fn lif_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&i| self.layers[i].is_lif()).collect()
    }

    pub fn weighted_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].is_weighted())
            .collect()
    }

    pub fn output_shape(&self, n: usize) -> Shape4 {
        Shape4::new(n, self.num_classes, self.input.height, self.input.width)
    }

    /// One header line per field, then one `type key=value ...` line per layer.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "input {} {} {}",
            self.input.channels, self.input.height, self.input.width
        );
        let _ = writeln!(s, "classes {}", self.num_classes);
        let _ = writeln!(s, "head {}", self.head_start);
        for l in &self.layers {
            let conv_args = |c: &ConvSpec| {
                format!(
                    "k={} in={} out={} s={} p={} r={}",
                    c.kernel, c.in_channels, c.out_channels, c.stride, c.padding, c.dilation
                )
            };
            let acc = if l.accumulate && !matches!(l.kind, LayerKind::Classifier(_)) {
                " acc"
            } else {
                ""
            };
            let line = match &l.kind {
                LayerKind::Conv(c) => format!("conv name={} {}{acc}", l.name, conv_args(c)),
                LayerKind::DilatedConv(c) => format!("dconv name={} {}{acc}", l.name, conv_args(c)),
                LayerKind::TransposeConv(c) => format!("tconv name={} {}{acc}", l.name, conv_args(c)),
                LayerKind::Classifier(c) => format!("classifier name={} {}", l.name, conv_args(c)),
                LayerKind::SkipConv { source, conv } => {
                    format!("skip name={} src={source} {}{acc}", l.name, conv_args(conv))
                }
                LayerKind::AvgPool => format!("pool name={}", l.name),
                LayerKind::BilinearHead { height, width } => {
                    format!("bilinear name={} h={height} w={width}", l.name)
                }
            };
            s.push_str(&line);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut input = None;
        let mut classes = None;
        let mut head = None;
        let mut layers = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| Error::Config(format!("architecture line {}: {msg}", no + 1));
            let mut parts = line.split_whitespace();
            let ty = parts.next().expect("non-empty line");
            let rest: Vec<&str> = parts.collect();
            let num = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("`{s}`: {e}")));
            match ty {
                "input" => {
                    let [c, h, w] = rest[..] else {
                        return Err(bad("expected `input C H W`".into()));
                    };
                    input = Some(InputDims::new(num(c)?, num(h)?, num(w)?));
                }
                "classes" => classes = Some(num(rest.first().copied().unwrap_or(""))?),
                "head" => head = Some(num(rest.first().copied().unwrap_or(""))?),
                _ => {
                    let mut kv: std::collections::BTreeMap<&str, &str> = std::collections::BTreeMap::new();
                    let mut acc = false;
                    for tok in &rest {
                        match tok.split_once('=') {
                            Some((k, v)) => {
                                kv.insert(k, v);
                            }
                            None if *tok == "acc" => acc = true,
                            None => return Err(bad(format!("unexpected token `{tok}`"))),
                        }
                    }
                    let name = kv
                        .get("name")
                        .ok_or_else(|| bad("missing name".into()))?
                        .to_string();
                    let get = |k: &str| -> Result<usize> {
                        num(kv.get(k).ok_or_else(|| bad(format!("missing `{k}`")))?)
                    };
                    let conv = || -> Result<ConvSpec> {
                        Ok(ConvSpec {
                            kernel: get("k")?,
                            in_channels: get("in")?,
                            out_channels: get("out")?,
                            stride: get("s")?,
                            padding: get("p")?,
                            dilation: get("r")?,
                        })
                    };
                    let kind = match ty {
                        "conv" => LayerKind::Conv(conv()?),
                        "dconv" => LayerKind::DilatedConv(conv()?),
                        "tconv" => LayerKind::TransposeConv(conv()?),
                        "classifier" => LayerKind::Classifier(conv()?),
                        "skip" => LayerKind::SkipConv {
                            source: get("src")?,
                            conv: conv()?,
                        },
                        "pool" => LayerKind::AvgPool,
                        "bilinear" => LayerKind::BilinearHead {
                            height: get("h")?,
                            width: get("w")?,
                        },
                        other => return Err(bad(format!("unknown layer type `{other}`"))),
                    };
                    let mut l = LayerSpec::new(name, kind);
                    l.accumulate |= acc;
                    layers.push(l);
                }
            }
        }
        let spec = NetworkSpec {
            input: input.ok_or_else(|| Error::Config("architecture lacks `input`".into()))?,
            num_classes: classes.ok_or_else(|| Error::Config("architecture lacks `classes`".into()))?,
            head_start: head.ok_or_else(|| Error::Config("architecture lacks `head`".into()))?,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deeplab_shapes_at_64() {
        let spec = spiking_deeplab(21, InputDims::new(3, 64, 64), ArchOptions::default()).unwrap();
        let shapes = spec.layer_shapes().unwrap();
        // classifier input (fc7) is 16x16 after two pools
        assert_eq!(shapes[10], Shape4::new(1, 1024, 16, 16));
        assert_eq!(*shapes.last().unwrap(), Shape4::new(1, 21, 64, 64));
        assert_eq!(spec.lif_layers().len(), 9);
        assert!(matches!(spec.layers[7].kind, LayerKind::DilatedConv(c) if c.dilation == 2));
        assert!(matches!(spec.layers[8].kind, LayerKind::DilatedConv(c) if c.dilation == 2));
        // no pooling after the second pool
        assert!(!spec.layers[6..].iter().any(|l| l.kind == LayerKind::AvgPool));
    }

    #[test]
    fn deeplab_small() {
        let spec = spiking_deeplab(2, InputDims::new(1, 16, 16), ArchOptions::default()).unwrap();
        assert_eq!(spec.output_shape(1), Shape4::new(1, 2, 16, 16));
        assert!(spiking_deeplab(2, InputDims::new(1, 18, 16), ArchOptions::default()).is_err());
        assert!(spiking_deeplab(1, InputDims::new(1, 16, 16), ArchOptions::default()).is_err());
    }

    #[test]
    fn fcn_topology() {
        let spec = spiking_fcn(6, InputDims::new(2, 64, 64), ArchOptions::default()).unwrap();
        let shapes = spec.layer_shapes().unwrap();
        assert_eq!(shapes[9], Shape4::new(1, 256, 8, 8));
        assert_eq!(*shapes.last().unwrap(), Shape4::new(1, 6, 64, 64));
        let sources: Vec<usize> = spec.layers.iter().filter_map(LayerSpec::skip_source).collect();
        assert_eq!(sources, vec![8, 4, 1]);
        // each source is the block output right before a pool
        for &s in &sources {
            assert_eq!(spec.layers[s + 1].kind, LayerKind::AvgPool);
        }
        let sizes: Vec<usize> = sources.iter().map(|&s| shapes[s].h).collect();
        assert_eq!(sizes, vec![16, 32, 64]);
        assert!(spiking_fcn(6, InputDims::new(2, 60, 64), ArchOptions::default()).is_err());
    }

    #[test]
    fn text_round_trip() {
        for spec in [
            spiking_deeplab(3, InputDims::new(1, 32, 32), ArchOptions { width_divisor: 8, dilation: [2, 3] })
                .unwrap(),
            spiking_fcn(4, InputDims::new(3, 32, 32), ArchOptions::default()).unwrap(),
        ] {
            let text = spec.to_text();
            assert_eq!(NetworkSpec::parse(&text).unwrap(), spec);
        }
    }

    #[test]
    fn rejects_broken_chain() {
        let mut spec = spiking_deeplab(3, InputDims::new(1, 16, 16), ArchOptions::default()).unwrap();
        if let LayerKind::Conv(c) = &mut spec.layers[3].kind {
            c.in_channels += 1;
        }
        assert!(spec.validate().is_err());
    }
}
