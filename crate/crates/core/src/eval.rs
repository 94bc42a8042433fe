//! Robustness-evaluation protocols: accuracy under random transforms,
//! classification consistency over systematic transform grids, per-image
//! stability curves, and noise robustness — plus the image transforms they
//! are built on.
//!
//! Rotation and translation act on raw `[0,1]` images before
//! normalization; Gaussian noise acts on the normalized tensor (injected
//! equivalently as `σ·std` on the raw scale). All protocols are
//! deterministic given (model, dataset, seed) and may fan out over worker
//! threads without changing results.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::Serialize;

use crate::data::{Dataset, Image, Normalize};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

// ---------------------------------------------------------------------
// transforms

/// Rotate about the image center, bilinear interpolation, zero fill.
/// Evaluation-only: not differentiated.
pub fn rotate_image<T: Scalar>(x: &Tensor<T>, degrees: f64) -> Tensor<T> {
    if degrees == 0.0 {
        return x.detach();
    }
    let s = x.shape();
    let (h, w) = (s.h as f64, s.w as f64);
    let (cy, cx) = ((h - 1.0) / 2.0, (w - 1.0) / 2.0);
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let xv = x.values();
    let mut out = vec![T::zero(); s.numel()];
    for p in 0..s.n * s.c {
        let plane = p * s.h * s.w;
        for i in 0..s.h {
            for j in 0..s.w {
                // sample the source at the inverse rotation of (i, j)
                let dy = i as f64 - cy;
                let dx = j as f64 - cx;
                let sy = cy + dy * cos + dx * sin;
                let sx = cx - dy * sin + dx * cos;
                if sy < -1.0 || sy > h || sx < -1.0 || sx > w {
                    continue;
                }
                let y0 = sy.floor();
                let x0 = sx.floor();
                let fy = sy - y0;
                let fx = sx - x0;
                let mut acc = 0.0f64;
                for (oy, wy) in [(0isize, 1.0 - fy), (1, fy)] {
                    let yy = y0 as isize + oy;
                    if yy < 0 || yy >= s.h as isize {
                        continue;
                    }
                    for (ox, wx) in [(0isize, 1.0 - fx), (1, fx)] {
                        let xx = x0 as isize + ox;
                        if xx < 0 || xx >= s.w as isize {
                            continue;
                        }
                        acc += wy * wx * xv[plane + yy as usize * s.w + xx as usize].as_f64();
                    }
                }
                out[plane + i * s.w + j] = T::from_f64(acc);
            }
        }
    }
    Tensor::from_vec(s, out).expect("rotation preserves shape")
}

/// Integer-pixel shift; pixel (i, j) moves to (i+dy, j+dx), vacated area
/// zero-filled.
pub fn translate_image<T: Scalar>(x: &Tensor<T>, dx: isize, dy: isize) -> Result<Tensor<T>> {
    let s = x.shape();
    if dx.unsigned_abs() >= s.w || dy.unsigned_abs() >= s.h {
        return Err(Error::InvalidArgument {
            op: "translate_image",
            detail: format!("offset ({dx},{dy}) out of bounds for {}x{}", s.h, s.w),
        });
    }
    if dx == 0 && dy == 0 {
        return Ok(x.detach());
    }
    let xv = x.values();
    let mut out = vec![T::zero(); s.numel()];
    for p in 0..s.n * s.c {
        let plane = p * s.h * s.w;
        for i in 0..s.h {
            let si = i as isize - dy;
            if si < 0 || si >= s.h as isize {
                continue;
            }
            for j in 0..s.w {
                let sj = j as isize - dx;
                if sj < 0 || sj >= s.w as isize {
                    continue;
                }
                out[plane + i * s.w + j] = xv[plane + si as usize * s.w + sj as usize];
            }
        }
    }
    Ok(Tensor::from_vec(s, out).expect("translation preserves shape"))
}

/// Add i.i.d. Gaussian noise, deterministic per seed.
pub fn add_gaussian_noise<T: Scalar>(x: &Tensor<T>, mean: f64, sigma: f64, seed: u64) -> Tensor<T> {
    if sigma == 0.0 && mean == 0.0 {
        return x.detach();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::Normal::new(mean, sigma).expect("sigma must be non-negative");
    let out: Vec<T> = x
        .values()
        .iter()
        .map(|&v| v + T::from_f64(normal.sample(&mut rng)))
        .collect();
    Tensor::from_vec(x.shape(), out).expect("noise preserves shape")
}

/// Family of perturbations a protocol draws from.
#[derive(Clone, Copy, Debug)]
pub enum TransformSpec {
    Identity,
    /// Angles sampled uniformly from `[0, max_degrees]`.
    Rotation { max_degrees: f64 },
    /// Integer offsets sampled uniformly from `[-max, max]` per axis.
    Translation { max_dx: isize, max_dy: isize },
    /// Noise on the normalized tensor scale.
    Noise { mean: f64, sigma: f64 },
}

impl TransformSpec {
    pub fn validate(&self, image: Shape) -> Result<()> {
        match *self {
            TransformSpec::Rotation { max_degrees } => {
                if !(-180.0..=180.0).contains(&max_degrees) {
                    return Err(Error::InvalidArgument {
                        op: "TransformSpec",
                        detail: format!("rotation {max_degrees} outside [-180, 180]"),
                    });
                }
            }
            TransformSpec::Translation { max_dx, max_dy } => {
                if max_dx.unsigned_abs() >= image.w || max_dy.unsigned_abs() >= image.h {
                    return Err(Error::InvalidArgument {
                        op: "TransformSpec",
                        detail: format!(
                            "translation bound ({max_dx},{max_dy}) exceeds image {}x{}",
                            image.h, image.w
                        ),
                    });
                }
            }
            TransformSpec::Noise { sigma, .. } => {
                if sigma < 0.0 {
                    return Err(Error::InvalidArgument {
                        op: "TransformSpec",
                        detail: format!("negative noise sigma {sigma}"),
                    });
                }
            }
            TransformSpec::Identity => {}
        }
        Ok(())
    }

    pub fn label(&self) -> &'static str {
        match self {
            TransformSpec::Identity => "identity",
            TransformSpec::Rotation { .. } => "rotation",
            TransformSpec::Translation { .. } => "translation",
            TransformSpec::Noise { .. } => "noise",
        }
    }
}

// ---------------------------------------------------------------------
// classifier abstraction

/// A trained classifier over raw `[0,1]` images. `logits` returns
/// row-major `N×classes` scores in f64.
pub trait ImageClassifier<T: Scalar>: Send + Sync {
    fn classes(&self) -> usize;

    fn logits(&self, images: &[Image<T>]) -> Result<Vec<f64>>;

    /// Std of the wrapper's normalization; converts a normalized-scale
    /// noise sigma to the raw image scale.
    fn noise_scale(&self) -> f64 {
        1.0
    }
}

/// A [`Network`] bundled with its input normalization.
pub struct NetClassifier<'a, T: Scalar> {
    pub model: &'a dyn Network<T>,
    pub norm: Normalize,
    pub classes: usize,
    pub batch: usize,
}

impl<'a, T: Scalar> NetClassifier<'a, T> {
    pub fn new(model: &'a dyn Network<T>, norm: Normalize, classes: usize) -> Self {
        NetClassifier {
            model,
            norm,
            classes,
            batch: 32,
        }
    }
}

impl<T: Scalar> ImageClassifier<T> for NetClassifier<'_, T> {
    fn classes(&self) -> usize {
        self.classes
    }

    fn logits(&self, images: &[Image<T>]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(images.len() * self.classes);
        let mean = T::from_f64(self.norm.mean);
        let inv_std = T::from_f64(1.0 / self.norm.std);
        for chunk in images.chunks(self.batch.max(1)) {
            let s = chunk[0].shape();
            let mut values = Vec::with_capacity(chunk.len() * s.numel());
            for img in chunk {
                values.extend(img.values().iter().map(|&v| (v - mean) * inv_std));
            }
            let batch = Tensor::from_vec(Shape::new(chunk.len(), s.c, s.h, s.w), values)?;
            let logits = self.model.forward(&batch, None)?;
            out.extend(logits.values().iter().map(|v| v.as_f64()));
        }
        Ok(out)
    }

    fn noise_scale(&self) -> f64 {
        self.norm.std
    }
}

/// Always predicts the same class; the fidelity baseline for protocols.
pub struct ConstantClassifier {
    pub classes: usize,
    pub class: usize,
}

impl<T: Scalar> ImageClassifier<T> for ConstantClassifier {
    fn classes(&self) -> usize {
        self.classes
    }

    fn logits(&self, images: &[Image<T>]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; images.len() * self.classes];
        for row in 0..images.len() {
            out[row * self.classes + self.class] = 1.0;
        }
        Ok(out)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Predictions for a stack of images, optionally fanned out over threads;
/// results are merged in image order so the thread count never changes
/// the outcome.
pub fn predict<T: Scalar>(
    clf: &dyn ImageClassifier<T>,
    images: &[Image<T>],
    threads: usize,
) -> Result<Vec<usize>> {
    let k = clf.classes();
    let collect = |logits: Vec<f64>| -> Vec<usize> {
        logits.chunks_exact(k).map(argmax).collect()
    };
    if threads <= 1 || images.len() < 2 * threads {
        return Ok(collect(clf.logits(images)?));
    }
    let per = images.len().div_ceil(threads);
    let chunks: Vec<&[Image<T>]> = images.chunks(per).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = chunks
            .iter()
            .map(|chunk| scope.spawn(move || clf.logits(chunk)))
            .collect();
        let mut out = Vec::with_capacity(images.len());
        for h in handles {
            out.extend(collect(h.join().expect("prediction thread panicked")?));
        }
        Ok(out)
    })
}

// ---------------------------------------------------------------------
// reports

/// Per-variant metric record with an optional per-magnitude curve.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub variant: String,
    pub metric: String,
    pub transform: String,
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
    /// `(magnitude, value)` pairs with strictly increasing magnitudes.
    pub curve: Vec<(f64, f64)>,
}

impl EvalReport {
    /// CSV rows (no header): summary row first (empty magnitude), then one
    /// row per curve point.
    pub fn csv_rows(&self) -> String {
        let mut out = format!(
            "{},{},{},,{:.12e},{:.12e},{}\n",
            self.variant, self.metric, self.transform, self.mean, self.sd, self.n
        );
        for (mag, val) in &self.curve {
            out.push_str(&format!(
                "{},{},{},{mag},{val:.12e},,{}\n",
                self.variant, self.metric, self.transform, self.n
            ));
        }
        out
    }
}

pub const REPORT_CSV_HEADER: &str = "variant,metric,transform,magnitude,mean,sd,n\n";

/// Render reports as a CSV document.
pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    for r in reports {
        out.push_str(&r.csv_rows());
    }
    out
}

/// Render reports as a JSON document mirroring the CSV fields.
pub fn reports_to_json(reports: &[EvalReport]) -> String {
    serde_json::to_string_pretty(reports).expect("reports serialize")
}

/// Two-pass sample statistics: mean and (n−1)-normalized standard
/// deviation, 0 for fewer than two samples.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (values.len() - 1) as f64;
    (mean, var.sqrt())
}

/// Sort (magnitude, value) pairs and merge duplicate magnitudes by mean so
/// curve magnitudes are strictly increasing.
fn build_curve(mut points: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut out: Vec<(f64, f64, usize)> = Vec::new();
    for (mag, val) in points {
        match out.last_mut() {
            Some((m, v, k)) if *m == mag => {
                *v += val;
                *k += 1;
            }
            _ => out.push((mag, val, 1)),
        }
    }
    out.into_iter().map(|(m, v, k)| (m, v / k as f64)).collect()
}

fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    let correct = preds.iter().zip(labels.iter()).filter(|(p, l)| p == l).count();
    correct as f64 / labels.len().max(1) as f64
}

// ---------------------------------------------------------------------
// protocols

/// Accuracy over `trials` random draws of the transform: per trial, one
/// magnitude is sampled and applied to every test image; the report is the
/// mean ± sd over trials with a per-trial curve.
#[allow(clippy::too_many_arguments)]
pub fn accuracy_under_transform<T: Scalar>(
    clf: &dyn ImageClassifier<T>,
    dataset: &Dataset<T>,
    spec: TransformSpec,
    trials: usize,
    seed: u64,
    variant: &str,
    threads: usize,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::Data("accuracy protocol on an empty dataset".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument {
            op: "accuracy_under_transform",
            detail: "trials must be >= 1".into(),
        });
    }
    spec.validate(dataset.image_shape())?;

    let mut per_trial = Vec::with_capacity(trials);
    let mut points = Vec::with_capacity(trials);
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64).wrapping_mul(0x9E3779B97F4A7C15));
        let (magnitude, transformed): (f64, Vec<Image<T>>) = match spec {
            TransformSpec::Identity => (0.0, dataset.images.clone()),
            TransformSpec::Rotation { max_degrees } => {
                let theta = rng.gen_range(0.0..=max_degrees);
                let imgs = dataset
                    .images
                    .iter()
                    .map(|im| Image::from_tensor(&rotate_image(&im.to_tensor(), theta)))
                    .collect();
                (theta, imgs)
            }
            TransformSpec::Translation { max_dx, max_dy } => {
                let dx = rng.gen_range(-max_dx..=max_dx);
                let dy = rng.gen_range(-max_dy..=max_dy);
                let imgs = dataset
                    .images
                    .iter()
                    .map(|im| {
                        translate_image(&im.to_tensor(), dx, dy).map(|t| Image::from_tensor(&t))
                    })
                    .collect::<Result<Vec<_>>>()?;
                (((dx * dx + dy * dy) as f64).sqrt(), imgs)
            }
            TransformSpec::Noise { mean, sigma } => {
                let scale = clf.noise_scale();
                let imgs = dataset
                    .images
                    .iter()
                    .enumerate()
                    .map(|(i, im)| {
                        let img_seed = seed ^ (trial as u64) << 32 ^ i as u64;
                        Image::from_tensor(&add_gaussian_noise(
                            &im.to_tensor(),
                            mean * scale,
                            sigma * scale,
                            img_seed,
                        ))
                    })
                    .collect();
                (sigma, imgs)
            }
        };
        let preds = predict(clf, &transformed, threads)?;
        let acc = accuracy(&preds, &dataset.labels);
        per_trial.push(acc);
        points.push((magnitude, acc));
    }
    let (mean, sd) = mean_sd(&per_trial);
    Ok(EvalReport {
        variant: variant.to_string(),
        metric: "accuracy".into(),
        transform: spec.label().into(),
        mean,
        sd,
        n: trials,
        curve: build_curve(points),
    })
}

/// Options for the consistency grid.
#[derive(Clone, Copy, Debug)]
pub struct ConsistencyOptions {
    /// Rotations 0..=max_degrees in 1° steps.
    pub max_degrees: usize,
    /// Translations (t, t) for t in 0..=max_shift; the full
    /// (dx, dy) grid when `full_grid` is set.
    pub max_shift: usize,
    pub full_grid: bool,
}

impl Default for ConsistencyOptions {
    fn default() -> Self {
        ConsistencyOptions {
            max_degrees: 15,
            max_shift: 12,
            full_grid: false,
        }
    }
}

fn consistency_of(preds: &[usize]) -> f64 {
    let m = preds.len();
    if m < 2 {
        return 1.0;
    }
    let mut agree = 0usize;
    for i in 0..m {
        for j in 0..m {
            if i != j && preds[i] == preds[j] {
                agree += 1;
            }
        }
    }
    agree as f64 / (m * (m - 1)) as f64
}

/// Fraction of ordered pairs of transformed versions receiving the same
/// predicted class, per image; reported mean ± sd over images, separately
/// for the rotation sweep and the translation grid.
pub fn classification_consistency<T: Scalar>(
    clf: &dyn ImageClassifier<T>,
    dataset: &Dataset<T>,
    opts: ConsistencyOptions,
    variant: &str,
    threads: usize,
) -> Result<(EvalReport, EvalReport)> {
    if dataset.is_empty() {
        return Err(Error::Data("consistency protocol on an empty dataset".into()));
    }
    let shape = dataset.image_shape();
    if opts.max_shift >= shape.h.min(shape.w) {
        return Err(Error::InvalidArgument {
            op: "classification_consistency",
            detail: format!("shift bound {} exceeds image {}x{}", opts.max_shift, shape.h, shape.w),
        });
    }

    // all transformed versions of all images, predicted in one batch sweep
    let mut rot_versions: Vec<Image<T>> = Vec::new();
    let rot_steps = opts.max_degrees + 1;
    for im in &dataset.images {
        let t = im.to_tensor();
        for deg in 0..rot_steps {
            rot_versions.push(Image::from_tensor(&rotate_image(&t, deg as f64)));
        }
    }
    let shifts: Vec<(isize, isize)> = if opts.full_grid {
        (0..=opts.max_shift as isize)
            .flat_map(|dx| (0..=opts.max_shift as isize).map(move |dy| (dx, dy)))
            .collect()
    } else {
        (0..=opts.max_shift as isize).map(|t| (t, t)).collect()
    };
    let mut tr_versions: Vec<Image<T>> = Vec::new();
    for im in &dataset.images {
        let t = im.to_tensor();
        for &(dx, dy) in &shifts {
            tr_versions.push(Image::from_tensor(&translate_image(&t, dx, dy)?));
        }
    }

    let rot_preds = predict(clf, &rot_versions, threads)?;
    let tr_preds = predict(clf, &tr_versions, threads)?;

    let summarize = |preds: &[usize],
                     per_image: usize,
                     magnitudes: &dyn Fn(usize) -> f64,
                     transform: &str|
     -> EvalReport {
        let mut scores = Vec::with_capacity(dataset.len());
        let mut points = Vec::new();
        for (img_idx, chunk) in preds.chunks_exact(per_image).enumerate() {
            scores.push(consistency_of(chunk));
            for (v, &p) in chunk.iter().enumerate() {
                // curve: agreement with the untransformed prediction
                points.push((magnitudes(v), if p == chunk[0] { 1.0 } else { 0.0 }));
            }
            let _ = img_idx;
        }
        let (mean, sd) = mean_sd(&scores);
        EvalReport {
            variant: variant.to_string(),
            metric: "consistency".into(),
            transform: transform.into(),
            mean,
            sd,
            n: dataset.len(),
            curve: build_curve(points),
        }
    };

    let rotation = summarize(&rot_preds, rot_steps, &|v| v as f64, "rotation");
    let translation = summarize(
        &tr_preds,
        shifts.len(),
        &|v| {
            let (dx, dy) = shifts[v];
            ((dx * dx + dy * dy) as f64).sqrt()
        },
        "translation",
    );
    Ok((rotation, translation))
}

/// Probability assigned to the true class as the transform magnitude grows
/// systematically (1° or 1px-diagonal steps).
pub fn stability_curve<T: Scalar>(
    clf: &dyn ImageClassifier<T>,
    image: &Image<T>,
    label: usize,
    spec: TransformSpec,
    steps: usize,
) -> Result<Vec<(f64, f64)>> {
    spec.validate(image.shape())?;
    let t = image.to_tensor();
    let mut versions = Vec::with_capacity(steps + 1);
    let mut magnitudes = Vec::with_capacity(steps + 1);
    for s in 0..=steps {
        match spec {
            TransformSpec::Rotation { max_degrees } => {
                let deg = max_degrees * s as f64 / steps.max(1) as f64;
                versions.push(Image::from_tensor(&rotate_image(&t, deg)));
                magnitudes.push(deg);
            }
            TransformSpec::Translation { .. } | TransformSpec::Identity => {
                let d = s as isize;
                versions.push(Image::from_tensor(&translate_image(&t, d, d)?));
                magnitudes.push(((2 * s * s) as f64).sqrt());
            }
            TransformSpec::Noise { mean, sigma } => {
                let scale = clf.noise_scale();
                let sg = sigma * s as f64 / steps.max(1) as f64;
                versions.push(Image::from_tensor(&add_gaussian_noise(
                    &t,
                    mean * scale,
                    sg * scale,
                    s as u64,
                )));
                magnitudes.push(sg);
            }
        }
    }
    let logits = clf.logits(&versions)?;
    let k = clf.classes();
    if label >= k {
        return Err(Error::InvalidArgument {
            op: "stability_curve",
            detail: format!("label {label} out of range for {k} classes"),
        });
    }
    Ok(magnitudes
        .into_iter()
        .zip(logits.chunks_exact(k).map(|row| softmax(row)[label]))
        .collect())
}

/// Accuracy on a noise-corrupted test set over independent trials, plus
/// the clean-minus-noisy accuracy drop.
pub struct NoiseRobustness {
    pub report: EvalReport,
    pub clean_accuracy: f64,
    pub accuracy_drop: f64,
}

pub fn noise_robustness<T: Scalar>(
    clf: &dyn ImageClassifier<T>,
    dataset: &Dataset<T>,
    sigma: f64,
    trials: usize,
    seed: u64,
    variant: &str,
    threads: usize,
) -> Result<NoiseRobustness> {
    let clean_preds = predict(clf, &dataset.images, threads)?;
    let clean = accuracy(&clean_preds, &dataset.labels);
    let report = accuracy_under_transform(
        clf,
        dataset,
        TransformSpec::Noise { mean: 0.0, sigma },
        trials,
        seed,
        variant,
        threads,
    )?;
    let drop = clean - report.mean;
    Ok(NoiseRobustness {
        clean_accuracy: clean,
        accuracy_drop: drop,
        report: EvalReport {
            metric: "noise_accuracy".into(),
            ..report
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, SynthKind};

    fn image_from(values: Vec<f64>, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(Shape::new(1, 1, h, w), values).unwrap()
    }

    #[test]
    fn zero_rotation_and_translation_are_bit_exact() {
        let x = image_from((0..64).map(f64::from).collect(), 8, 8);
        assert_eq!(rotate_image(&x, 0.0).values(), x.values());
        assert_eq!(translate_image(&x, 0, 0).unwrap().values(), x.values());
    }

    #[test]
    fn quarter_turn_matches_transpose_flip() {
        let x = image_from((0..36).map(|i| f64::from(i) * 0.1).collect(), 6, 6);
        let r = rotate_image(&x, 90.0);
        // 90° ccw in image coords: out[i][j] = x[j][H-1-i]
        for i in 0..6 {
            for j in 0..6 {
                let expect = x.values()[j * 6 + (5 - i)];
                let got = r.values()[i * 6 + j];
                assert!((got - expect).abs() < 1e-6, "({i},{j}): {got} vs {expect}");
            }
        }
    }

    #[test]
    fn full_turn_matches_four_quarter_turns() {
        let x = image_from((0..64).map(|i| (f64::from(i) * 0.3).sin()).collect(), 8, 8);
        let mut four = x.detach();
        for _ in 0..4 {
            four = rotate_image(&four, 90.0);
        }
        let one = rotate_image(&x, 360.0);
        for (a, b) in one.values().iter().zip(four.values().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn translation_moves_an_impulse() {
        let mut v = vec![0.0; 64];
        v[2 * 8 + 3] = 1.0;
        let x = image_from(v, 8, 8);
        let t = translate_image(&x, 2, 1).unwrap();
        assert_eq!(t.values()[3 * 8 + 5], 1.0);
        assert_eq!(t.values().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn translation_inverse_restores_the_interior() {
        let x = image_from((0..64).map(|i| f64::from(i) + 1.0).collect(), 8, 8);
        let back = translate_image(&translate_image(&x, 2, 1).unwrap(), -2, -1).unwrap();
        for i in 1..7 {
            for j in 2..6 {
                assert_eq!(back.values()[i * 8 + j], x.values()[i * 8 + j]);
            }
        }
    }

    #[test]
    fn out_of_bounds_translation_is_rejected() {
        let x = image_from(vec![0.0; 64], 8, 8);
        assert!(translate_image(&x, 8, 0).is_err());
        assert!(translate_image(&x, 0, -8).is_err());
    }

    #[test]
    fn noise_statistics_match_parameters() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 1, 1000, 1000));
        let y = add_gaussian_noise(&x, 0.25, 2.0, 99);
        let (mean, sd) = mean_sd(y.values());
        assert!((mean - 0.25).abs() < 0.25 * 0.01 + 0.002, "mean {mean}");
        assert!((sd - 2.0).abs() < 2.0 * 0.01, "sd {sd}");
    }

    #[test]
    fn zero_sigma_noise_is_identity() {
        let x = image_from((0..64).map(f64::from).collect(), 8, 8);
        assert_eq!(add_gaussian_noise(&x, 0.0, 0.0, 1).values(), x.values());
    }

    #[test]
    fn noise_is_reproducible_per_seed() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 1, 8, 8));
        let a = add_gaussian_noise(&x, 0.0, 1.0, 7);
        let b = add_gaussian_noise(&x, 0.0, 1.0, 7);
        let c = add_gaussian_noise(&x, 0.0, 1.0, 8);
        assert_eq!(a.values(), b.values());
        assert!(a.values() != c.values());
    }

    #[test]
    fn identity_spec_reproduces_plain_accuracy_with_zero_sd() {
        let ds = synth_dataset::<f64>(SynthKind::Shapes2, 10, 16, 3).unwrap();
        let clf = ConstantClassifier { classes: 2, class: 0 };
        let report =
            accuracy_under_transform(&clf, &ds, TransformSpec::Identity, 5, 0, "const", 1).unwrap();
        assert_eq!(report.mean, 0.5); // constant model hits the majority fraction
        assert_eq!(report.sd, 0.0);
        assert_eq!(report.curve, vec![(0.0, 0.5)]);
    }

    #[test]
    fn constant_model_consistency_is_exactly_one() {
        let ds = synth_dataset::<f64>(SynthKind::Shapes2, 4, 20, 5).unwrap();
        let clf = ConstantClassifier { classes: 2, class: 1 };
        let (rot, tr) =
            classification_consistency(&clf, &ds, ConsistencyOptions::default(), "const", 2)
                .unwrap();
        assert_eq!(rot.mean, 1.0);
        assert_eq!(rot.sd, 0.0);
        assert_eq!(tr.mean, 1.0);
        assert_eq!(tr.n, 4);
    }

    #[test]
    fn consistency_grid_sizes_follow_options() {
        let ds = synth_dataset::<f64>(SynthKind::Shapes2, 2, 20, 6).unwrap();
        let clf = ConstantClassifier { classes: 2, class: 0 };
        let opts = ConsistencyOptions {
            max_degrees: 3,
            max_shift: 2,
            full_grid: true,
        };
        let (rot, tr) = classification_consistency(&clf, &ds, opts, "const", 1).unwrap();
        assert_eq!(rot.curve.len(), 4); // 0..=3 degrees
        // full grid: offsets (0,0),(0,1),(1,0),(1,1),(0,2)... distinct magnitudes merged
        assert!(tr.curve.len() >= 4);
    }

    #[test]
    fn mean_sd_matches_a_naive_oracle_to_high_precision() {
        let values = [0.91, 0.87, 0.94, 0.855, 0.9025];
        let (mean, sd) = mean_sd(&values);
        let n = values.len() as f64;
        let oracle_mean = values.iter().sum::<f64>() / n;
        let oracle_sd = (values.iter().map(|v| (v - oracle_mean).powi(2)).sum::<f64>()
            / (n - 1.0))
            .sqrt();
        assert!((mean - oracle_mean).abs() < 1e-12);
        assert!((sd - oracle_sd).abs() < 1e-12);
    }

    #[test]
    fn report_mean_stays_within_trial_range() {
        let ds = synth_dataset::<f64>(SynthKind::Shapes2, 8, 20, 7).unwrap();
        let clf = ConstantClassifier { classes: 2, class: 0 };
        let report = accuracy_under_transform(
            &clf,
            &ds,
            TransformSpec::Rotation { max_degrees: 30.0 },
            6,
            11,
            "const",
            1,
        )
        .unwrap();
        let lo = report.curve.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let hi = report.curve.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        assert!(report.mean >= lo && report.mean <= hi);
        let mags: Vec<f64> = report.curve.iter().map(|p| p.0).collect();
        assert!(mags.windows(2).all(|w| w[0] < w[1]), "magnitudes not increasing");
    }

    #[test]
    fn stability_curve_of_constant_model_is_flat_and_normalized() {
        let ds = synth_dataset::<f64>(SynthKind::Shapes2, 2, 20, 8).unwrap();
        let clf = ConstantClassifier { classes: 2, class: 0 };
        let curve = stability_curve(
            &clf,
            &ds.images[0],
            0,
            TransformSpec::Rotation { max_degrees: 10.0 },
            10,
        )
        .unwrap();
        assert_eq!(curve.len(), 11);
        assert_eq!(curve[0].0, 0.0);
        let first = curve[0].1;
        for (_, p) in &curve {
            assert!((0.0..=1.0).contains(p));
            assert_eq!(*p, first);
        }
    }

    #[test]
    fn noise_robustness_of_constant_model_has_zero_drop() {
        let ds = synth_dataset::<f64>(SynthKind::Shapes2, 6, 16, 9).unwrap();
        let clf = ConstantClassifier { classes: 2, class: 0 };
        let out = noise_robustness(&clf, &ds, 2.0, 3, 1, "const", 1).unwrap();
        assert_eq!(out.accuracy_drop, 0.0);
        assert!(out.report.mean >= 0.0 && out.report.mean <= 1.0);
    }

    #[test]
    fn csv_and_json_reports_are_well_formed() {
        let report = EvalReport {
            variant: "lgca".into(),
            metric: "accuracy".into(),
            transform: "rotation".into(),
            mean: 0.9,
            sd: 0.05,
            n: 4,
            curve: vec![(0.0, 0.95), (5.0, 0.85)],
        };
        let csv = reports_to_csv(std::slice::from_ref(&report));
        assert!(csv.starts_with(REPORT_CSV_HEADER));
        assert_eq!(csv.lines().count(), 4);
        let json = reports_to_json(std::slice::from_ref(&report));
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed[0]["variant"], "lgca");
        assert_eq!(parsed[0]["curve"][1][0], 5.0);
    }
}
