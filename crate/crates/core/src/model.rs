//! Desk-scale model builders with pluggable pooling: a small stage-based
//! classifier and a convolutional autoencoder.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pooling::{PoolConfig, PoolLayer};
use crate::scalar::Scalar;
use crate::tensor::{Parameter, Shape, Tape, Tensor};

/// Anything with parameters and a batched forward pass.
pub trait Network<T: Scalar>: Send + Sync {
    fn forward(&self, x: &Tensor<T>, tape: Option<&Tape<T>>) -> Result<Tensor<T>>;

    /// Parameters in a stable order (checkpoint order).
    fn parameters(&self) -> Vec<Arc<Parameter<T>>>;

    /// Canonical description of the architecture; hashed into checkpoints
    /// so weights cannot be loaded into a different model.
    fn spec_string(&self) -> String;
}

fn conv_init<T: Scalar, R: Rng>(
    name: &str,
    cout: usize,
    cin: usize,
    k: usize,
    rng: &mut R,
) -> (Arc<Parameter<T>>, Arc<Parameter<T>>) {
    let bound = 1.0 / ((cin * k * k) as f64).sqrt();
    let w = Parameter::new(
        format!("{name}.w"),
        Tensor::uniform(Shape::new(cout, cin, k, k), bound, rng),
    );
    let b = Parameter::new(
        format!("{name}.b"),
        Tensor::uniform(Shape::new(1, cout, 1, 1), bound, rng),
    );
    (w, b)
}

/// Stage-based image classifier: per stage a 3×3 conv + ReLU + pooling,
/// then global average pooling and a linear head.
#[derive(Clone, Debug)]
pub struct ClassifierSpec {
    /// Input (channels, height, width).
    pub input: (usize, usize, usize),
    pub stage_widths: Vec<usize>,
    pub pool: PoolConfig,
    pub classes: usize,
}

impl ClassifierSpec {
    pub fn desk(pool: PoolConfig, classes: usize) -> Self {
        ClassifierSpec {
            input: (3, 64, 64),
            stage_widths: vec![16, 32, 64],
            pool,
            classes,
        }
    }

    fn validate(&self) -> Result<()> {
        let (c, h, w) = self.input;
        if c == 0 || self.stage_widths.is_empty() {
            return Err(Error::Config("classifier: empty input or stages".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "classifier: need at least 2 classes, got {}",
                self.classes
            )));
        }
        let div = self.pool.stride.pow(self.stage_widths.len() as u32);
        if h % div != 0 || w % div != 0 {
            return Err(Error::Config(format!(
                "classifier: input {h}x{w} not divisible by stride^stages = {div}"
            )));
        }
        Ok(())
    }

    fn spec_string(&self) -> String {
        format!(
            "classifier;in={}x{}x{};widths={:?};classes={};pool={},{:?},s{},g{},r{},rand{}",
            self.input.0,
            self.input.1,
            self.input.2,
            self.stage_widths,
            self.classes,
            self.pool.kind.label(),
            self.pool.terminal,
            self.pool.stride,
            self.pool.gaussian_size,
            self.pool.se_reduction,
            self.pool.random_reduce_init,
        )
    }
}

struct ConvStage<T: Scalar> {
    w: Arc<Parameter<T>>,
    b: Arc<Parameter<T>>,
    pool: Option<PoolLayer<T>>,
}

impl<T: Scalar> ConvStage<T> {
    fn forward(&self, x: &Tensor<T>, tape: Option<&Tape<T>>) -> Result<Tensor<T>> {
        let (w, b) = match tape {
            Some(t) => (t.watch_param(&self.w), t.watch_param(&self.b)),
            None => (self.w.value(), self.b.value()),
        };
        let y = x.conv2d(&w, Some(&b), 1, 1, 1)?.relu();
        match &self.pool {
            Some(p) => p.forward(&y, tape),
            None => Ok(y),
        }
    }

    fn parameters(&self) -> Vec<Arc<Parameter<T>>> {
        let mut out = vec![Arc::clone(&self.w), Arc::clone(&self.b)];
        if let Some(p) = &self.pool {
            out.extend(p.parameters());
        }
        out
    }
}

pub struct Classifier<T: Scalar> {
    spec: ClassifierSpec,
    stages: Vec<ConvStage<T>>,
    head_w: Arc<Parameter<T>>,
    head_b: Arc<Parameter<T>>,
}

/// Deterministic classifier for a spec and seed.
pub fn build_classifier<T: Scalar>(spec: &ClassifierSpec, seed: u64) -> Result<Classifier<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stages = Vec::new();
    let mut cin = spec.input.0;
    for (i, &width) in spec.stage_widths.iter().enumerate() {
        let (w, b) = conv_init(&format!("stage{i}.conv"), width, cin, 3, &mut rng);
        let pool = PoolLayer::new(&format!("stage{i}.pool"), width, spec.pool, &mut rng)?;
        stages.push(ConvStage { w, b, pool: Some(pool) });
        cin = width;
    }
    let bound = 1.0 / (cin as f64).sqrt();
    let head_w = Parameter::new(
        "head.w",
        Tensor::uniform(Shape::new(spec.classes, cin, 1, 1), bound, &mut rng),
    );
    let head_b = Parameter::new(
        "head.b",
        Tensor::uniform(Shape::new(1, spec.classes, 1, 1), bound, &mut rng),
    );
    Ok(Classifier {
        spec: spec.clone(),
        stages,
        head_w,
        head_b,
    })
}

impl<T: Scalar> Classifier<T> {
    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }
}

impl<T: Scalar> Network<T> for Classifier<T> {
    fn forward(&self, x: &Tensor<T>, tape: Option<&Tape<T>>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for stage in &self.stages {
            h = stage.forward(&h, tape)?;
        }
        let pooled = h.global_avg_pool();
        let (w, b) = match tape {
            Some(t) => (t.watch_param(&self.head_w), t.watch_param(&self.head_b)),
            None => (self.head_w.value(), self.head_b.value()),
        };
        pooled.fully_connected(&w, Some(&b))
    }

    fn parameters(&self) -> Vec<Arc<Parameter<T>>> {
        let mut out = Vec::new();
        for s in &self.stages {
            out.extend(s.parameters());
        }
        out.push(Arc::clone(&self.head_w));
        out.push(Arc::clone(&self.head_b));
        out
    }

    fn spec_string(&self) -> String {
        self.spec.spec_string()
    }
}

/// Convolutional autoencoder: three pooled encoder blocks plus a
/// bottleneck block, mirrored by three transposed-conv upsampling blocks
/// and a final projection back to the input channels. Spatial dims shrink
/// by `stride³` at the bottleneck and are restored exactly.
#[derive(Clone, Debug)]
pub struct CaeSpec {
    pub input: (usize, usize, usize),
    /// Encoder widths; the last entry is the bottleneck width.
    pub widths: [usize; 4],
    pub pool: PoolConfig,
}

impl CaeSpec {
    pub fn desk(pool: PoolConfig) -> Self {
        CaeSpec {
            input: (3, 64, 64),
            widths: [48, 96, 192, 32],
            pool,
        }
    }

    fn validate(&self) -> Result<()> {
        let (c, h, w) = self.input;
        if c == 0 || self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("cae: zero-width layer".into()));
        }
        let div = self.pool.stride.pow(3);
        if h % div != 0 || w % div != 0 {
            return Err(Error::Config(format!(
                "cae: input {h}x{w} not divisible by stride³ = {div}"
            )));
        }
        Ok(())
    }

    fn spec_string(&self) -> String {
        format!(
            "cae;in={}x{}x{};widths={:?};pool={},{:?},s{},g{},r{},rand{}",
            self.input.0,
            self.input.1,
            self.input.2,
            self.widths,
            self.pool.kind.label(),
            self.pool.terminal,
            self.pool.stride,
            self.pool.gaussian_size,
            self.pool.se_reduction,
            self.pool.random_reduce_init,
        )
    }
}

pub struct Cae<T: Scalar> {
    spec: CaeSpec,
    encoder: Vec<ConvStage<T>>,
    up_w: Vec<Arc<Parameter<T>>>,
    up_b: Vec<Arc<Parameter<T>>>,
    out_w: Arc<Parameter<T>>,
    out_b: Arc<Parameter<T>>,
}

/// Deterministic autoencoder for a spec and seed.
pub fn build_cae<T: Scalar>(spec: &CaeSpec, seed: u64) -> Result<Cae<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cin, _, _) = spec.input;
    let s = spec.pool.stride;

    let mut encoder = Vec::new();
    let mut prev = cin;
    for (i, &width) in spec.widths.iter().enumerate() {
        let (w, b) = conv_init(&format!("enc{i}.conv"), width, prev, 3, &mut rng);
        let pool = if i < 3 {
            Some(PoolLayer::new(&format!("enc{i}.pool"), width, spec.pool, &mut rng)?)
        } else {
            None
        };
        encoder.push(ConvStage { w, b, pool });
        prev = width;
    }

    // decoder: transpose arrangement of the pooled encoder widths
    let mut up_w = Vec::new();
    let mut up_b = Vec::new();
    for (i, &(from, to)) in [
        (spec.widths[3], spec.widths[2]),
        (spec.widths[2], spec.widths[1]),
        (spec.widths[1], spec.widths[0]),
    ]
    .iter()
    .enumerate()
    {
        let bound = 1.0 / ((from * s * s) as f64).sqrt();
        up_w.push(Parameter::new(
            format!("dec{i}.up.w"),
            Tensor::uniform(Shape::new(from, to, s, s), bound, &mut rng),
        ));
        up_b.push(Parameter::new(
            format!("dec{i}.up.b"),
            Tensor::uniform(Shape::new(1, to, 1, 1), bound, &mut rng),
        ));
    }
    let (out_w, out_b) = conv_init("dec.out", cin, spec.widths[0], 3, &mut rng);

    Ok(Cae {
        spec: spec.clone(),
        encoder,
        up_w,
        up_b,
        out_w,
        out_b,
    })
}

impl<T: Scalar> Cae<T> {
    pub fn spec(&self) -> &CaeSpec {
        &self.spec
    }
}

impl<T: Scalar> Network<T> for Cae<T> {
    fn forward(&self, x: &Tensor<T>, tape: Option<&Tape<T>>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for stage in &self.encoder {
            h = stage.forward(&h, tape)?;
        }
        let s = self.spec.pool.stride;
        for i in 0..3 {
            let (w, b) = match tape {
                Some(t) => (t.watch_param(&self.up_w[i]), t.watch_param(&self.up_b[i])),
                None => (self.up_w[i].value(), self.up_b[i].value()),
            };
            h = h.conv_transpose2d(&w, Some(&b), s)?.relu();
        }
        let (w, b) = match tape {
            Some(t) => (t.watch_param(&self.out_w), t.watch_param(&self.out_b)),
            None => (self.out_w.value(), self.out_b.value()),
        };
        h.conv2d(&w, Some(&b), 1, 1, 1)
    }

    fn parameters(&self) -> Vec<Arc<Parameter<T>>> {
        let mut out = Vec::new();
        for s in &self.encoder {
            out.extend(s.parameters());
        }
        for i in 0..3 {
            out.push(Arc::clone(&self.up_w[i]));
            out.push(Arc::clone(&self.up_b[i]));
        }
        out.push(Arc::clone(&self.out_w));
        out.push(Arc::clone(&self.out_b));
        out
    }

    fn spec_string(&self) -> String {
        self.spec.spec_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pooling::PoolKind;

    fn cfg(kind: PoolKind) -> PoolConfig {
        PoolConfig::new(kind)
    }

    #[test]
    fn classifier_forward_shape() {
        let spec = ClassifierSpec {
            input: (3, 32, 32),
            stage_widths: vec![8, 16, 32],
            pool: cfg(PoolKind::Normal),
            classes: 4,
        };
        let model = build_classifier::<f64>(&spec, 0).unwrap();
        let x = Tensor::zeros(Shape::new(2, 3, 32, 32));
        let y = model.forward(&x, None).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 4, 1, 1));
    }

    #[test]
    fn indivisible_input_is_rejected() {
        let spec = ClassifierSpec {
            input: (3, 36, 36),
            stage_widths: vec![8, 16, 32],
            pool: cfg(PoolKind::Normal),
            classes: 2,
        };
        assert!(build_classifier::<f64>(&spec, 0).is_err());
        assert!(build_classifier::<f64>(
            &ClassifierSpec {
                classes: 1,
                ..ClassifierSpec::desk(cfg(PoolKind::Normal), 2)
            },
            0
        )
        .is_err());
    }

    #[test]
    fn parameter_count_is_deterministic() {
        let spec = ClassifierSpec::desk(cfg(PoolKind::Lgca), 2);
        let a = build_classifier::<f32>(&spec, 7).unwrap();
        let b = build_classifier::<f32>(&spec, 7).unwrap();
        let pa = a.parameters();
        let pb = b.parameters();
        assert_eq!(pa.len(), pb.len());
        for (x, y) in pa.iter().zip(pb.iter()) {
            assert_eq!(x.name(), y.name());
            assert_eq!(x.value().values(), y.value().values());
        }
    }

    #[test]
    fn parameter_names_are_unique() {
        for kind in PoolKind::all() {
            let model = build_classifier::<f32>(&ClassifierSpec::desk(cfg(kind), 3), 1).unwrap();
            let mut names: Vec<_> = model.parameters().iter().map(|p| p.name().to_string()).collect();
            let before = names.len();
            names.sort();
            names.dedup();
            assert_eq!(names.len(), before, "{}", kind.label());
        }
    }

    #[test]
    fn cae_restores_the_input_shape_for_all_variants() {
        for kind in PoolKind::all() {
            let spec = CaeSpec {
                input: (3, 32, 32),
                widths: [8, 12, 16, 6],
                pool: cfg(kind),
            };
            let model = build_cae::<f64>(&spec, 3).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
            let x = Tensor::uniform(Shape::new(2, 3, 32, 32), 1.0, &mut rng);
            let y = model.forward(&x, None).unwrap();
            assert_eq!(y.shape(), x.shape(), "{}", kind.label());
            assert!(y.is_finite(), "{}", kind.label());
        }
    }

    #[test]
    fn cae_rejects_indivisible_spatial_dims() {
        let spec = CaeSpec {
            input: (3, 20, 20),
            widths: [8, 12, 16, 6],
            pool: cfg(PoolKind::Normal),
        };
        assert!(build_cae::<f64>(&spec, 0).is_err());
    }

    #[test]
    fn spec_strings_distinguish_architectures() {
        let a = ClassifierSpec::desk(cfg(PoolKind::Normal), 2).spec_string();
        let b = ClassifierSpec::desk(cfg(PoolKind::Lgca), 2).spec_string();
        assert_ne!(a, b);
    }
}
