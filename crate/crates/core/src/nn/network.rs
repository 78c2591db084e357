use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use rayon::prelude::*;

use super::{LayerSpec, NnError, Shape};

/// Denominator epsilon of the standardisation layer.
pub const STANDARDIZE_EPS: f64 = 1e-5;
const L2_FLOOR: f64 = 1e-12;
/// Samples per work unit in convolutions. Fixed so partial sums are always
/// reduced in the same grouping regardless of the thread count.
const CONV_CHUNK: usize = 8;

/// Whether standardisation uses batch statistics or the stored ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A layer resolved against its input shape, with its parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub input: Shape,
    pub output: Shape,
    /// Start of this layer's block in the flat parameter vector.
    pub offset: usize,
    pub weight_len: usize,
    pub bias_len: usize,
    /// Stored standardisation statistics (means then variances).
    pub stat_len: usize,
}

impl Layer {
    pub fn param_len(&self) -> usize {
        self.weight_len + self.bias_len + self.stat_len
    }

    /// Number of standardised feature groups.
    fn features(&self) -> usize {
        match self.input {
            Shape::Image { channels, .. } => channels,
            Shape::Flat(d) => d,
        }
    }

    fn spatial(&self) -> usize {
        match self.input {
            Shape::Image { height, width, .. } => height * width,
            Shape::Flat(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub input: Shape,
    pub layers: Vec<Layer>,
}

/// Per-layer values retained for the backward pass.
#[derive(Debug)]
pub(crate) enum Cache {
    Conv { cols: Vec<Array2<f64>> },
    Dense { input: Array2<f64> },
    Relu { output: Array2<f64> },
    Standardize(StandardizeCache),
    Pool,
    L2Norm { output: Array2<f64>, norms: Vec<f64> },
}

#[derive(Debug)]
pub(crate) struct StandardizeCache {
    pub normalized: Array2<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub batch_stats: bool,
}

struct ConvGeom {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    out_h: usize,
    out_w: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn of(layer: &Layer) -> Self {
        let (LayerSpec::Conv { kernel, stride, .. }, Shape::Image { channels: in_c, height: in_h, width: in_w }, Shape::Image { channels: out_c, height: out_h, width: out_w }) =
            (layer.spec, layer.input, layer.output)
        else {
            unreachable!("conv geometry on a non-conv layer");
        };
        Self {
            in_c,
            in_h,
            in_w,
            out_c,
            out_h,
            out_w,
            kernel,
            stride,
            pad: kernel / 2,
        }
    }

    fn patch_len(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Maps (column row, output position) to the input index, if not padding.
    fn source(&self, r: usize, pos: usize) -> Option<usize> {
        let kk = self.kernel * self.kernel;
        let (c, rem) = (r / kk, r % kk);
        let (ky, kx) = (rem / self.kernel, rem % self.kernel);
        let (oy, ox) = (pos / self.out_w, pos % self.out_w);
        let iy = (oy * self.stride + ky).checked_sub(self.pad)?;
        let ix = (ox * self.stride + kx).checked_sub(self.pad)?;
        (iy < self.in_h && ix < self.in_w).then(|| (c * self.in_h + iy) * self.in_w + ix)
    }

    /// Columns for consecutive samples in `x`, side by side.
    fn im2col(&self, x: &[f64], in_len: usize) -> Array2<f64> {
        let n = x.len() / in_len;
        let pos = self.positions();
        let mut col = Array2::zeros((self.patch_len(), n * pos));
        for r in 0..self.patch_len() {
            for p in 0..pos {
                if let Some(i) = self.source(r, p) {
                    for k in 0..n {
                        col[[r, k * pos + p]] = x[k * in_len + i];
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, dcol: &Array2<f64>, dx: &mut [f64], in_len: usize) {
        let n = dx.len() / in_len;
        let pos = self.positions();
        for r in 0..self.patch_len() {
            for p in 0..pos {
                if let Some(i) = self.source(r, p) {
                    for k in 0..n {
                        dx[k * in_len + i] += dcol[[r, k * pos + p]];
                    }
                }
            }
        }
    }
}

fn row_view<'a>(x: &'a [f64], rows: usize, cols: usize) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((rows, cols), x).expect("parameter block layout")
}

impl Network {
    /// Resolves `specs` against `input`, laying parameters out from `offset`.
    pub fn new(input: Shape, specs: &[LayerSpec], offset: usize) -> Result<Self, NnError> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input;
        let mut at = offset;
        for spec in specs {
            let output = spec.output_shape(shape)?;
            let (weight_len, bias_len, stat_len) = match (*spec, shape) {
                (
                    LayerSpec::Conv {
                        kernel,
                        out_channels,
                        ..
                    },
                    Shape::Image { channels, .. },
                ) => (out_channels * channels * kernel * kernel, out_channels, 0),
                (LayerSpec::Dense { out_dim }, s) => (out_dim * s.size(), out_dim, 0),
                (LayerSpec::Standardize, Shape::Image { channels, .. }) => (0, 0, 2 * channels),
                (LayerSpec::Standardize, Shape::Flat(d)) => (0, 0, 2 * d),
                _ => (0, 0, 0),
            };
            layers.push(Layer {
                spec: *spec,
                input: shape,
                output,
                offset: at,
                weight_len,
                bias_len,
                stat_len,
            });
            at += weight_len + bias_len + stat_len;
            shape = output;
        }
        Ok(Self { input, layers })
    }

    pub fn output(&self) -> Shape {
        self.layers.last().map_or(self.input, |l| l.output)
    }

    pub fn param_len(&self) -> usize {
        self.layers.iter().map(Layer::param_len).sum()
    }

    pub(crate) fn forward(
        &self,
        params: &[f64],
        mut x: Array2<f64>,
        mode: Mode,
        name: &str,
    ) -> Result<(Array2<f64>, Vec<Cache>), NnError> {
        if x.ncols() != self.input.size() {
            return Err(NnError::Shape(format!(
                "{name}: input has {} features, expected {} ({})",
                x.ncols(),
                self.input.size(),
                self.input
            )));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, cache) = layer_forward(layer, params, x, mode)
                .map_err(|e| e.in_layer(&format!("{name}.{i}.{}", layer.spec.kind_name())))?;
            caches.push(cache);
            x = y;
        }
        Ok((x, caches))
    }

    pub(crate) fn backward(
        &self,
        params: &[f64],
        grads: &mut [f64],
        caches: Vec<Cache>,
        mut dy: Array2<f64>,
    ) -> Array2<f64> {
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            dy = layer_backward(layer, params, grads, cache, dy);
        }
        dy
    }
}

fn layer_forward(
    layer: &Layer,
    params: &[f64],
    x: Array2<f64>,
    mode: Mode,
) -> Result<(Array2<f64>, Cache), NnError> {
    let batch = x.nrows();
    let w0 = layer.offset;
    let b0 = w0 + layer.weight_len;
    match layer.spec {
        LayerSpec::Conv { .. } => {
            let g = ConvGeom::of(layer);
            let weight = row_view(&params[w0..b0], g.out_c, g.patch_len());
            let bias = &params[b0..b0 + layer.bias_len];
            let (in_len, out_len, pos) = (layer.input.size(), layer.output.size(), g.positions());
            let x = x.as_standard_layout();
            let chunks: Vec<(Array2<f64>, Vec<f64>)> = x
                .as_slice()
                .expect("standard layout")
                .par_chunks(CONV_CHUNK * in_len)
                .map(|xs| {
                    let col = g.im2col(xs, in_len);
                    let out = weight.dot(&col);
                    let n = xs.len() / in_len;
                    let mut ys = vec![0.0; n * out_len];
                    for ((o, p), v) in out.indexed_iter() {
                        let (k, q) = (p / pos, p % pos);
                        ys[k * out_len + o * pos + q] = v + bias[o];
                    }
                    (col, ys)
                })
                .collect();
            let mut y = Vec::with_capacity(batch * out_len);
            let mut cols = Vec::with_capacity(chunks.len());
            for (col, ys) in chunks {
                y.extend_from_slice(&ys);
                cols.push(col);
            }
            let y = Array2::from_shape_vec((batch, out_len), y).expect("conv output size");
            Ok((y, Cache::Conv { cols }))
        }
        LayerSpec::Dense { out_dim } => {
            let weight = row_view(&params[w0..b0], out_dim, layer.input.size());
            let bias = ndarray::ArrayView1::from(&params[b0..b0 + out_dim]);
            let y = x.dot(&weight.t()) + bias;
            Ok((y, Cache::Dense { input: x }))
        }
        LayerSpec::Relu => {
            let y = x.mapv(|v| v.max(0.0));
            Ok((y.clone(), Cache::Relu { output: y }))
        }
        LayerSpec::Standardize => standardize_forward_layer(layer, params, x, mode),
        LayerSpec::GlobalMeanPool => {
            let Shape::Image { channels, .. } = layer.input else {
                unreachable!()
            };
            let area = layer.spatial();
            let mut y = Array2::zeros((batch, channels));
            for (xr, mut yr) in x.axis_iter(Axis(0)).zip(y.axis_iter_mut(Axis(0))) {
                let xs = xr.as_slice().expect("contiguous rows");
                for (c, v) in yr.iter_mut().enumerate() {
                    *v = xs[c * area..(c + 1) * area].iter().sum::<f64>() / area as f64;
                }
            }
            Ok((y, Cache::Pool))
        }
        LayerSpec::L2Norm => {
            let mut y = x;
            let mut norms = Vec::with_capacity(batch);
            for mut r in y.axis_iter_mut(Axis(0)) {
                let n = r.dot(&r).sqrt().max(L2_FLOOR);
                r /= n;
                norms.push(n);
            }
            Ok((y.clone(), Cache::L2Norm { output: y, norms }))
        }
    }
}

/// Visits every element of feature group `f` (a column, or a channel plane
/// across the batch).
fn for_group<F: FnMut(usize, usize)>(layer: &Layer, batch: usize, f_idx: usize, mut f: F) {
    let area = layer.spatial();
    for n in 0..batch {
        for j in f_idx * area..(f_idx + 1) * area {
            f(n, j);
        }
    }
}

fn standardize_forward_layer(
    layer: &Layer,
    params: &[f64],
    x: Array2<f64>,
    mode: Mode,
) -> Result<(Array2<f64>, Cache), NnError> {
    let batch = x.nrows();
    let feats = layer.features();
    let stats = &params[layer.offset..layer.offset + layer.stat_len];
    let (mean, var, batch_stats) = match mode {
        Mode::Train => {
            if batch < 2 {
                return Err(NnError::BatchTooSmall { batch, layer: String::new() });
            }
            let count = (batch * layer.spatial()) as f64;
            let mut mean = vec![0.0; feats];
            let mut var = vec![0.0; feats];
            for f in 0..feats {
                let mut s = 0.0;
                for_group(layer, batch, f, |n, j| s += x[[n, j]]);
                let m = s / count;
                let mut q = 0.0;
                for_group(layer, batch, f, |n, j| q += (x[[n, j]] - m).powi(2));
                mean[f] = m;
                var[f] = q / count;
            }
            (mean, var, true)
        }
        Mode::Eval => (stats[..feats].to_vec(), stats[feats..].to_vec(), false),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + STANDARDIZE_EPS).sqrt()).collect();
    let mut y = x;
    for f in 0..feats {
        let (m, s) = (mean[f], inv_std[f]);
        let mut yv = y.view_mut();
        for_group(layer, batch, f, |n, j| yv[[n, j]] = (yv[[n, j]] - m) * s);
    }
    Ok((
        y.clone(),
        Cache::Standardize(StandardizeCache {
            normalized: y,
            inv_std,
            mean,
            var,
            batch_stats,
        }),
    ))
}

fn layer_backward(
    layer: &Layer,
    params: &[f64],
    grads: &mut [f64],
    cache: Cache,
    dy: Array2<f64>,
) -> Array2<f64> {
    let batch = dy.nrows();
    let w0 = layer.offset;
    let b0 = w0 + layer.weight_len;
    match cache {
        Cache::Conv { cols } => {
            let g = ConvGeom::of(layer);
            let weight = row_view(&params[w0..b0], g.out_c, g.patch_len());
            let (in_len, out_len, pos) = (layer.input.size(), layer.output.size(), g.positions());
            let dy = dy.as_standard_layout();
            let partials: Vec<(Vec<f64>, Vec<f64>)> = dy
                .as_slice()
                .expect("standard layout")
                .par_chunks(CONV_CHUNK * out_len)
                .zip(cols.par_iter())
                .map(|(dys, col)| {
                    let n = dys.len() / out_len;
                    let mut dout = Array2::<f64>::zeros((g.out_c, n * pos));
                    for ((o, p), v) in dout.indexed_iter_mut() {
                        let (k, q) = (p / pos, p % pos);
                        *v = dys[k * out_len + o * pos + q];
                    }
                    let dw = dout.dot(&col.t());
                    let dcol = weight.t().dot(&dout);
                    let mut dx = vec![0.0; n * in_len];
                    g.col2im(&dcol, &mut dx, in_len);
                    let db = dout.sum_axis(Axis(1));
                    let dwb: Vec<f64> = dw.iter().chain(db.iter()).copied().collect();
                    (dwb, dx)
                })
                .collect();
            let mut dx = Vec::with_capacity(batch * in_len);
            let wb = &mut grads[w0..b0 + layer.bias_len];
            for (dwb, dxs) in partials {
                for (acc, v) in wb.iter_mut().zip(dwb.iter()) {
                    *acc += v;
                }
                dx.extend_from_slice(&dxs);
            }
            Array2::from_shape_vec((batch, in_len), dx).expect("conv input size")
        }
        Cache::Dense { input } => {
            let out_dim = layer.output.size();
            let weight = row_view(&params[w0..b0], out_dim, layer.input.size());
            let dw = dy.t().dot(&input);
            for (acc, v) in grads[w0..b0].iter_mut().zip(dw.iter()) {
                *acc += v;
            }
            let db = dy.sum_axis(Axis(0));
            for (acc, v) in grads[b0..b0 + out_dim].iter_mut().zip(db.iter()) {
                *acc += v;
            }
            dy.dot(&weight)
        }
        Cache::Relu { output } => {
            let mut dx = dy;
            dx.zip_mut_with(&output, |d, &o| {
                if o <= 0.0 {
                    *d = 0.0;
                }
            });
            dx
        }
        Cache::Standardize(c) => standardize_backward_layer(layer, &c, dy),
        Cache::Pool => {
            let area = layer.spatial();
            let mut dx = Array2::zeros((batch, layer.input.size()));
            for (dr, mut xr) in dy.axis_iter(Axis(0)).zip(dx.axis_iter_mut(Axis(0))) {
                for (j, v) in xr.iter_mut().enumerate() {
                    *v = dr[j / area] / area as f64;
                }
            }
            dx
        }
        Cache::L2Norm { output, norms } => {
            let mut dx = dy;
            for ((mut d, y), n) in dx.axis_iter_mut(Axis(0)).zip(output.axis_iter(Axis(0))).zip(norms) {
                let proj = y.dot(&d);
                d.zip_mut_with(&y, |dv, &yv| *dv = (*dv - yv * proj) / n);
            }
            dx
        }
    }
}

fn standardize_backward_layer(layer: &Layer, c: &StandardizeCache, dy: Array2<f64>) -> Array2<f64> {
    let batch = dy.nrows();
    let feats = layer.features();
    let mut dx = dy;
    if !c.batch_stats {
        for f in 0..feats {
            let s = c.inv_std[f];
            let mut v: ArrayViewMut2<f64> = dx.view_mut();
            for_group(layer, batch, f, |n, j| v[[n, j]] *= s);
        }
        return dx;
    }
    let count = (batch * layer.spatial()) as f64;
    for f in 0..feats {
        let (mut sd, mut sdy) = (0.0, 0.0);
        for_group(layer, batch, f, |n, j| {
            sd += dx[[n, j]];
            sdy += dx[[n, j]] * c.normalized[[n, j]];
        });
        let (md, mdy, s) = (sd / count, sdy / count, c.inv_std[f]);
        let mut v = dx.view_mut();
        for_group(layer, batch, f, |n, j| {
            v[[n, j]] = s * (v[[n, j]] - md - c.normalized[[n, j]] * mdy);
        });
    }
    dx
}

/// Batch standardisation of feature columns without parameters, as a free
/// function: returns the standardised batch.
pub fn standardize_forward(x: &Array2<f64>) -> Result<Array2<f64>, NnError> {
    let layer = Network::new(Shape::Flat(x.ncols()), &[LayerSpec::Standardize], 0)?
        .layers
        .remove(0);
    let stats = vec![0.0; layer.stat_len];
    standardize_forward_layer(&layer, &stats, x.clone(), Mode::Train)
        .map(|(y, _)| y)
        .map_err(|e| e.in_layer("standardize"))
}

/// Vector-Jacobian product of [`standardize_forward`] at `x`.
pub fn standardize_backward(x: &Array2<f64>, dy: &Array2<f64>) -> Result<Array2<f64>, NnError> {
    let layer = Network::new(Shape::Flat(x.ncols()), &[LayerSpec::Standardize], 0)?
        .layers
        .remove(0);
    let stats = vec![0.0; layer.stat_len];
    let (_, cache) = standardize_forward_layer(&layer, &stats, x.clone(), Mode::Train)
        .map_err(|e| e.in_layer("standardize"))?;
    let Cache::Standardize(c) = cache else {
        unreachable!()
    };
    Ok(standardize_backward_layer(&layer, &c, dy.clone()))
}
