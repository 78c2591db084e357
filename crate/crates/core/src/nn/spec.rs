use std::fmt;
use std::str::FromStr;

use super::NnError;

/// Per-sample activation shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
    Flat(usize),
}

impl Shape {
    pub fn image(channels: usize, height: usize, width: usize) -> Self {
        Shape::Image {
            channels,
            height,
            width,
        }
    }

    pub fn size(&self) -> usize {
        match *self {
            Shape::Image {
                channels,
                height,
                width,
            } => channels * height * width,
            Shape::Flat(d) => d,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Shape::Image {
                channels,
                height,
                width,
            } => write!(f, "{channels}x{height}x{width}"),
            Shape::Flat(d) => write!(f, "{d}"),
        }
    }
}

impl FromStr for Shape {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let dims: Result<Vec<usize>, _> = s.trim().split('x').map(|p| p.trim().parse()).collect();
        match dims.as_deref() {
            Ok([d]) if *d > 0 => Ok(Shape::Flat(*d)),
            Ok([c, h, w]) if *c > 0 && *h > 0 && *w > 0 => Ok(Shape::image(*c, *h, *w)),
            _ => Err(NnError::Spec(format!("bad shape {s:?}"))),
        }
    }
}

/// One layer of an encoder or projector.
///
/// Convolutions use zero padding of `kernel / 2` on every side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        kernel: usize,
        stride: usize,
        out_channels: usize,
    },
    Dense {
        out_dim: usize,
    },
    Relu,
    /// Per-feature standardisation over the batch (per channel for images).
    Standardize,
    GlobalMeanPool,
    L2Norm,
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Standardize => "standardize",
            LayerSpec::GlobalMeanPool => "global_mean_pool",
            LayerSpec::L2Norm => "l2norm",
        }
    }

    /// Output shape for `input`, or an error naming the incompatibility.
    pub fn output_shape(&self, input: Shape) -> Result<Shape, NnError> {
        match (*self, input) {
            (
                LayerSpec::Conv {
                    kernel,
                    stride,
                    out_channels,
                },
                Shape::Image { height, width, .. },
            ) => {
                let pad = kernel / 2;
                if height + 2 * pad < kernel || width + 2 * pad < kernel {
                    return Err(NnError::Shape(format!(
                        "conv kernel {kernel} larger than padded input {input}"
                    )));
                }
                Ok(Shape::image(
                    out_channels,
                    (height + 2 * pad - kernel) / stride + 1,
                    (width + 2 * pad - kernel) / stride + 1,
                ))
            }
            (LayerSpec::Conv { .. }, Shape::Flat(_)) => {
                Err(NnError::Shape(format!("conv needs an image input, got {input}")))
            }
            (LayerSpec::Dense { out_dim }, _) => Ok(Shape::Flat(out_dim)),
            (LayerSpec::GlobalMeanPool, Shape::Image { channels, .. }) => Ok(Shape::Flat(channels)),
            (LayerSpec::GlobalMeanPool, Shape::Flat(_)) => Err(NnError::Shape(format!(
                "global_mean_pool needs an image input, got {input}"
            ))),
            (LayerSpec::Relu | LayerSpec::Standardize | LayerSpec::L2Norm, s) => Ok(s),
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv {
                kernel,
                stride,
                out_channels,
            } => write!(f, "conv({kernel},{stride},{out_channels})"),
            LayerSpec::Dense { out_dim } => write!(f, "dense({out_dim})"),
            other => f.write_str(other.kind_name()),
        }
    }
}

fn parse_args(s: &str, name: &str, count: usize) -> Result<Vec<usize>, NnError> {
    let inner = s
        .strip_prefix(name)
        .and_then(|r| r.trim().strip_prefix('('))
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| NnError::Spec(format!("bad layer {s:?}")))?;
    let args: Vec<usize> = inner
        .split(',')
        .map(|a| a.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| NnError::Spec(format!("bad arguments in {s:?}")))?;
    if args.len() != count || args.contains(&0) {
        return Err(NnError::Spec(format!(
            "{name} takes {count} positive arguments, got {s:?}"
        )));
    }
    Ok(args)
}

impl FromStr for LayerSpec {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "relu" => Ok(LayerSpec::Relu),
            "standardize" => Ok(LayerSpec::Standardize),
            "global_mean_pool" => Ok(LayerSpec::GlobalMeanPool),
            "l2norm" => Ok(LayerSpec::L2Norm),
            _ if s.starts_with("conv") => {
                let a = parse_args(s, "conv", 3)?;
                Ok(LayerSpec::Conv {
                    kernel: a[0],
                    stride: a[1],
                    out_channels: a[2],
                })
            }
            _ if s.starts_with("dense") => {
                let a = parse_args(s, "dense", 1)?;
                Ok(LayerSpec::Dense { out_dim: a[0] })
            }
            _ => Err(NnError::Spec(format!("unknown layer {s:?}"))),
        }
    }
}

/// Parses `conv(3,2,32),standardize,relu,...` (commas inside parentheses
/// belong to the layer).
pub fn parse_layers(s: &str) -> Result<Vec<LayerSpec>, NnError> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    for (i, ch) in s.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                out.push(s[start..i].parse()?);
                start = i + 1;
            }
            _ => {}
        }
    }
    if !s[start..].trim().is_empty() {
        out.push(s[start..].parse()?);
    }
    Ok(out)
}

pub fn format_layers(layers: &[LayerSpec]) -> String {
    layers
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_list_round_trip() {
        let text = "conv(3,2,32),standardize,relu,global_mean_pool,dense(64),l2norm";
        let layers = parse_layers(text).unwrap();
        assert_eq!(layers.len(), 6);
        assert_eq!(format_layers(&layers), text);
    }

    #[test]
    fn rejects_malformed_layers() {
        for bad in ["conv(3,2)", "dense(0)", "dense(x)", "sigmoid", "conv(3,2,4"] {
            assert!(parse_layers(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn conv_output_geometry() {
        let conv = LayerSpec::Conv {
            kernel: 3,
            stride: 2,
            out_channels: 8,
        };
        let mut s = Shape::image(1, 7, 7);
        let mut sides = vec![];
        for _ in 0..3 {
            s = conv.output_shape(s).unwrap();
            if let Shape::Image { height, .. } = s {
                sides.push(height);
            }
        }
        assert_eq!(sides, vec![4, 2, 1]);
        assert!(conv.output_shape(Shape::Flat(4)).is_err());
    }

    #[test]
    fn shape_parse() {
        assert_eq!("3x32x32".parse::<Shape>().unwrap(), Shape::image(3, 32, 32));
        assert_eq!("64".parse::<Shape>().unwrap(), Shape::Flat(64));
        assert!("3x32".parse::<Shape>().is_err());
    }
}
