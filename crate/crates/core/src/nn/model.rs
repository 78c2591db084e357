use std::ops::Range;

use ndarray::Array2;
use rand::Rng;

use super::network::{Cache, Mode, Network};
use super::{format_layers, parse_layers, LayerSpec, ModelCheckpoint, NnError, Shape};

/// Architecture of an encoder/projector pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// Per-patch input shape (channels x canonical x canonical).
    pub input: Shape,
    pub encoder: Vec<LayerSpec>,
    pub projector: Vec<LayerSpec>,
    /// Trained on multi-scale crops rather than fixed-scale patches.
    pub multi_scale: bool,
}

impl ModelSpec {
    /// Three stride-2 3x3 convolutions with standardisation and ReLU, global
    /// mean pooling, then a 64-d embedding; projector 128-standardize-ReLU-32.
    pub fn desk_default(channels: usize, canonical: usize) -> Self {
        let encoder = parse_layers(
            "conv(3,2,32),standardize,relu,conv(3,2,64),standardize,relu,\
             conv(3,2,64),standardize,relu,global_mean_pool,dense(64)",
        )
        .expect("static spec");
        let projector = parse_layers("dense(128),standardize,relu,dense(32)").expect("static spec");
        Self {
            input: Shape::image(channels, canonical, canonical),
            encoder,
            projector,
            multi_scale: false,
        }
    }

    /// Checks that every layer accepts the shape it is given.
    pub fn validate(&self) -> Result<(), NnError> {
        let encoder = Network::new(self.input, &self.encoder, 0)?;
        Network::new(encoder.output(), &self.projector, 0).map(|_| ())
    }

    pub fn to_text(&self) -> String {
        format!(
            "kind=model\ninput={}\nencoder={}\nprojector={}\npatch_mode={}\n",
            self.input,
            format_layers(&self.encoder),
            format_layers(&self.projector),
            if self.multi_scale { "multi_scale" } else { "fixed" }
        )
    }

    pub fn from_text(text: &str) -> Result<Self, NnError> {
        let mut kind = None;
        let mut input = None;
        let mut encoder = None;
        let mut projector = None;
        let mut multi_scale = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| NnError::Checkpoint(format!("bad spec line {line:?}")))?;
            match k.trim() {
                "kind" => kind = Some(v.trim().to_string()),
                "input" => input = Some(v.parse::<Shape>()?),
                "encoder" => encoder = Some(parse_layers(v)?),
                "projector" => projector = Some(parse_layers(v)?),
                "patch_mode" => {
                    multi_scale = Some(match v.trim() {
                        "fixed" => false,
                        "multi_scale" => true,
                        other => {
                            return Err(NnError::Checkpoint(format!("unknown patch_mode {other}")))
                        }
                    })
                }
                other => return Err(NnError::Checkpoint(format!("unknown spec key {other}"))),
            }
        }
        if kind.as_deref() != Some("model") {
            return Err(NnError::Checkpoint(format!(
                "expected a model checkpoint, found kind {kind:?}"
            )));
        }
        let missing = |what: &str| NnError::Checkpoint(format!("spec block lacks {what}"));
        Ok(Self {
            input: input.ok_or_else(|| missing("input"))?,
            encoder: encoder.ok_or_else(|| missing("encoder"))?,
            projector: projector.ok_or_else(|| missing("projector"))?,
            multi_scale: multi_scale.unwrap_or(false),
        })
    }
}

/// A named block of the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    pub range: Range<usize>,
    /// Stored standardisation statistics are not trained.
    pub trainable: bool,
}

/// Flat parameter values with paired gradient storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
    pub slots: Vec<ParamSlot>,
}

impl ParamSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Activations kept by [`Model::forward`]; consumed by [`Model::backward`].
#[derive(Debug)]
pub struct Tape {
    encoder: Vec<Cache>,
    projector: Vec<Cache>,
    batch: usize,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

#[derive(Debug)]
pub struct ForwardPass {
    /// Embeddings, one row per input.
    pub h: Array2<f64>,
    /// Projections, one row per input.
    pub z: Array2<f64>,
    pub tape: Tape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub encoder: Network,
    pub projector: Network,
    pub params: ParamSet,
}

fn slots_for(prefix: &str, net: &Network) -> Vec<ParamSlot> {
    let mut slots = Vec::new();
    for (i, l) in net.layers.iter().enumerate() {
        let base = format!("{prefix}.{i}.{}", l.spec.kind_name());
        let w = l.offset..l.offset + l.weight_len;
        let b = w.end..w.end + l.bias_len;
        let st = b.end..b.end + l.stat_len;
        for (suffix, range, trainable) in [("weight", w, true), ("bias", b, true), ("stats", st, false)] {
            if !range.is_empty() {
                slots.push(ParamSlot {
                    name: format!("{base}.{suffix}"),
                    range,
                    trainable,
                });
            }
        }
    }
    slots
}

impl Model {
    /// Builds the networks and an all-zero parameter vector.
    fn layout(spec: ModelSpec) -> Result<Self, NnError> {
        let encoder = Network::new(spec.input, &spec.encoder, 0)?;
        let projector = Network::new(encoder.output(), &spec.projector, encoder.param_len())?;
        let n = encoder.param_len() + projector.param_len();
        let mut slots = slots_for("encoder", &encoder);
        slots.extend(slots_for("projector", &projector));
        Ok(Self {
            spec,
            encoder,
            projector,
            params: ParamSet {
                values: vec![0.0; n],
                grads: vec![0.0; n],
                slots,
            },
        })
    }

    /// Glorot-uniform weights, zero biases, identity standardisation stats.
    pub fn new<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self, NnError> {
        let mut m = Self::layout(spec)?;
        let values = &mut m.params.values;
        for l in m.encoder.layers.iter().chain(&m.projector.layers) {
            let (fan_in, fan_out) = match (l.spec, l.input) {
                (LayerSpec::Conv { kernel, out_channels, .. }, Shape::Image { channels, .. }) => {
                    (channels * kernel * kernel, out_channels * kernel * kernel)
                }
                (LayerSpec::Dense { out_dim }, s) => (s.size(), out_dim),
                _ => (0, 0),
            };
            if l.weight_len > 0 {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in &mut values[l.offset..l.offset + l.weight_len] {
                    *v = rng.random_range(-bound..bound);
                }
            }
            if l.stat_len > 0 {
                let s0 = l.offset + l.weight_len + l.bias_len;
                let half = l.stat_len / 2;
                values[s0 + half..s0 + l.stat_len].iter_mut().for_each(|v| *v = 1.0);
            }
        }
        Ok(m)
    }

    /// Wraps an existing flat parameter vector.
    pub fn with_params(spec: ModelSpec, values: Vec<f64>) -> Result<Self, NnError> {
        let mut m = Self::layout(spec)?;
        if values.len() != m.params.len() {
            return Err(NnError::Checkpoint(format!(
                "parameter count {} does not match the architecture ({})",
                values.len(),
                m.params.len()
            )));
        }
        m.params.values = values;
        Ok(m)
    }

    pub fn embed_dim(&self) -> usize {
        self.encoder.output().size()
    }

    pub fn proj_dim(&self) -> usize {
        self.projector.output().size()
    }

    pub fn input_len(&self) -> usize {
        self.spec.input.size()
    }

    pub fn forward(&self, x: &Array2<f64>, mode: Mode) -> Result<ForwardPass, NnError> {
        if x.nrows() == 0 {
            return Err(NnError::Shape("empty batch".into()));
        }
        let p = &self.params.values;
        let (h, encoder) = self.encoder.forward(p, x.clone(), mode, "encoder")?;
        let (z, projector) = self.projector.forward(p, h.clone(), mode, "projector")?;
        Ok(ForwardPass {
            h,
            z,
            tape: Tape {
                encoder,
                projector,
                batch: x.nrows(),
            },
        })
    }

    /// Embeddings and projections without keeping a tape.
    pub fn infer(&self, x: &Array2<f64>, mode: Mode) -> Result<(Array2<f64>, Array2<f64>), NnError> {
        let pass = self.forward(x, mode)?;
        Ok((pass.h, pass.z))
    }

    /// Accumulates parameter gradients for upstream `grad_z` (and optionally
    /// an extra `grad_h` on the embeddings) and returns the input gradient.
    pub fn backward(
        &mut self,
        tape: Tape,
        grad_z: &Array2<f64>,
        grad_h: Option<&Array2<f64>>,
    ) -> Result<Array2<f64>, NnError> {
        let check = |g: &Array2<f64>, cols: usize, what: &str| {
            if g.dim() != (tape.batch, cols) {
                Err(NnError::GradShape(format!(
                    "{what} gradient is {:?}, expected ({}, {cols})",
                    g.dim(),
                    tape.batch
                )))
            } else {
                Ok(())
            }
        };
        check(grad_z, self.proj_dim(), "projection")?;
        if let Some(gh) = grad_h {
            check(gh, self.embed_dim(), "embedding")?;
        }
        let Tape {
            encoder, projector, ..
        } = tape;
        let (values, grads) = (&self.params.values, &mut self.params.grads);
        let mut dh = self.projector.backward(values, grads, projector, grad_z.clone());
        if let Some(gh) = grad_h {
            dh += gh;
        }
        Ok(self.encoder.backward(values, grads, encoder, dh))
    }

    /// Replaces the stored standardisation statistics with the average of the
    /// batch statistics seen over `batches` in training mode.
    pub fn calibrate(&mut self, batches: &[Array2<f64>]) -> Result<(), NnError> {
        if batches.is_empty() {
            return Ok(());
        }
        let layers: Vec<_> = self
            .encoder
            .layers
            .iter()
            .chain(&self.projector.layers)
            .cloned()
            .collect();
        let mut sums = vec![0.0; self.params.len()];
        for x in batches {
            let pass = self.forward(x, Mode::Train)?;
            let caches = pass.tape.encoder.iter().chain(&pass.tape.projector);
            for (l, cache) in layers.iter().zip(caches) {
                if let Cache::Standardize(c) = cache {
                    let s0 = l.offset + l.weight_len + l.bias_len;
                    let half = l.stat_len / 2;
                    for (k, (m, v)) in c.mean.iter().zip(&c.var).enumerate() {
                        sums[s0 + k] += m;
                        sums[s0 + half + k] += v;
                    }
                }
            }
        }
        let n = batches.len() as f64;
        for l in layers.iter().filter(|l| l.stat_len > 0) {
            let s0 = l.offset + l.weight_len + l.bias_len;
            let range = s0..s0 + l.stat_len;
            for (p, s) in self.params.values[range.clone()].iter_mut().zip(&sums[range]) {
                *p = s / n;
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, step: u64, seed: u64) -> ModelCheckpoint {
        ModelCheckpoint {
            spec_text: self.spec.to_text(),
            params: self.params.values.clone(),
            step,
            seed,
        }
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self, NnError> {
        Self::with_params(ModelSpec::from_text(&ck.spec_text)?, ck.params.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense_spec(input: usize, encoder: &str, projector: &str) -> ModelSpec {
        ModelSpec {
            input: Shape::Flat(input),
            encoder: parse_layers(encoder).unwrap(),
            projector: parse_layers(projector).unwrap(),
            multi_scale: false,
        }
    }

    #[test]
    fn identity_dense_encoder_passes_input_through() {
        let spec = dense_spec(3, "dense(3)", "relu");
        let mut values = vec![0.0; 12];
        for i in 0..3 {
            values[i * 3 + i] = 1.0;
        }
        let m = Model::with_params(spec, values).unwrap();
        let x = array![[0.5, -1.0, 2.0], [3.0, 0.0, -0.25]];
        let (h, _) = m.infer(&x, Mode::Eval).unwrap();
        assert_eq!(h, x);
    }

    #[test]
    fn dense_layer_hand_arithmetic() {
        let spec = dense_spec(3, "dense(2)", "relu");
        // W = [[1, 2, 3], [-1, 0, 4]], b = [0.5, -2]
        let values = vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0, 0.5, -2.0];
        let m = Model::with_params(spec, values).unwrap();
        let (h, z) = m.infer(&array![[1.0, -1.0, 2.0]], Mode::Eval).unwrap();
        // Wv + b = [1 - 2 + 6 + 0.5, -1 + 0 + 8 - 2]
        assert_eq!(h, array![[5.5, 5.0]]);
        assert_eq!(z, array![[5.5, 5.0]]);
    }

    #[test]
    fn l2norm_rows_have_unit_norm() {
        let spec = dense_spec(4, "dense(5),l2norm", "dense(2)");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Model::new(spec, &mut rng).unwrap();
        let x = Array2::from_shape_fn((6, 4), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let (h, _) = m.infer(&x, Mode::Train).unwrap();
        for r in h.rows() {
            let n = r.dot(&r).sqrt();
            if n > 0.0 {
                assert!((n - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Model::new(ModelSpec::desk_default(1, 7), &mut rng).unwrap();
        let x = Array2::zeros((2, 50));
        assert!(matches!(m.forward(&x, Mode::Train), Err(NnError::Shape(_))));
        let x = Array2::zeros((1, 49));
        assert!(matches!(
            m.forward(&x, Mode::Train),
            Err(NnError::BatchTooSmall { .. })
        ));
        assert!(m.forward(&x, Mode::Eval).is_ok());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = Model::new(ModelSpec::desk_default(1, 7), &mut rng).unwrap();
        let x = Array2::from_shape_fn((4, 49), |(i, j)| ((i + j) % 3) as f64 / 2.0);
        let pass = m.forward(&x, Mode::Train).unwrap();
        let gz = Array2::zeros(pass.z.dim());
        m.backward(pass.tape, &gz, None).unwrap();
        assert!(m.params.grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_rejects_wrong_gradient_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = Model::new(dense_spec(3, "dense(4)", "dense(2)"), &mut rng).unwrap();
        let pass = m.forward(&Array2::zeros((3, 3)), Mode::Train).unwrap();
        let bad = Array2::zeros((3, 3));
        assert!(matches!(
            m.backward(pass.tape, &bad, None),
            Err(NnError::GradShape(_))
        ));
    }

    #[test]
    fn spec_text_round_trip() {
        let mut spec = ModelSpec::desk_default(3, 14);
        spec.multi_scale = true;
        assert_eq!(ModelSpec::from_text(&spec.to_text()).unwrap(), spec);
    }

    #[test]
    fn calibration_matches_single_batch_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = Model::new(dense_spec(3, "dense(4),standardize", "dense(2)"), &mut rng).unwrap();
        let x = Array2::from_shape_fn((8, 3), |(i, j)| (i as f64).sin() + j as f64);
        m.calibrate(std::slice::from_ref(&x)).unwrap();
        let (train_h, _) = m.infer(&x, Mode::Train).unwrap();
        let (eval_h, _) = m.infer(&x, Mode::Eval).unwrap();
        for (a, b) in train_h.iter().zip(eval_h.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
