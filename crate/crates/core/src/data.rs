//! Datasets: a deterministic synthetic-shapes generator, directory loading
//! of PNG/PPM images, and batch assembly with normalization.
//!
//! Directory layout for on-disk datasets: `<root>/<class_name>/*.png|ppm`,
//! labels assigned by sorted class-name order.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Channel standardization applied at batch time: `(v − mean) / std`.
#[derive(Clone, Copy, Debug)]
pub struct Normalize {
    pub mean: f64,
    pub std: f64,
}

impl Default for Normalize {
    fn default() -> Self {
        Normalize { mean: 0.5, std: 0.5 }
    }
}

impl Normalize {
    pub fn identity() -> Self {
        Normalize { mean: 0.0, std: 1.0 }
    }
}

/// Plain image buffer: shape plus shared storage, never attached to a
/// tape, so datasets can be shared across evaluation/training threads.
#[derive(Clone)]
pub struct Image<T: Scalar> {
    shape: Shape,
    values: std::sync::Arc<Vec<T>>,
}

impl<T: Scalar> Image<T> {
    pub fn from_tensor(t: &Tensor<T>) -> Self {
        Image {
            shape: t.shape(),
            values: t.values_arc(),
        }
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::from_arc(self.shape, std::sync::Arc::clone(&self.values))
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }
}

/// Labeled image set held in memory; images are `(1, 3, H, W)` in `[0, 1]`.
pub struct Dataset<T: Scalar> {
    pub images: Vec<Image<T>>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn image_shape(&self) -> Shape {
        self.images.first().map(|t| t.shape()).unwrap_or(Shape::new(0, 0, 0, 0))
    }

    /// Stack the selected images into one normalized `(N, 3, H, W)` batch.
    pub fn batch(&self, indices: &[usize], norm: Normalize) -> Result<(Tensor<T>, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let s = self.images[indices[0]].shape();
        let mut values = Vec::with_capacity(indices.len() * s.numel());
        let mut labels = Vec::with_capacity(indices.len());
        let mean = T::from_f64(norm.mean);
        let inv_std = T::from_f64(1.0 / norm.std);
        for &i in indices {
            let img = &self.images[i];
            if img.shape() != s {
                return Err(Error::Data(format!(
                    "mixed image shapes in batch: {} vs {}",
                    img.shape(),
                    s
                )));
            }
            values.extend(img.values().iter().map(|&v| (v - mean) * inv_std));
            labels.push(self.labels[i]);
        }
        let batch = Tensor::from_vec(Shape::new(indices.len(), s.c, s.h, s.w), values)?;
        Ok((batch, labels))
    }
}

/// Shape classes drawable by the generator, in label order.
const SHAPES2: [&str; 2] = ["circle", "square"];
const SHAPES4: [&str; 4] = ["circle", "square", "triangle", "cross"];

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SynthKind {
    Shapes2,
    Shapes4,
}

impl SynthKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "shapes2" => Ok(SynthKind::Shapes2),
            "shapes4" => Ok(SynthKind::Shapes4),
            other => Err(Error::Data(format!(
                "unknown synthetic dataset kind '{other}' (expected shapes2 or shapes4)"
            ))),
        }
    }

    pub fn class_names(self) -> Vec<String> {
        match self {
            SynthKind::Shapes2 => SHAPES2.iter().map(|s| s.to_string()).collect(),
            SynthKind::Shapes4 => SHAPES4.iter().map(|s| s.to_string()).collect(),
        }
    }
}

fn draw_shape(plane: &mut [f64], size: usize, class: usize, rng: &mut ChaCha8Rng) {
    let background = rng.gen_range(0.0..0.12);
    let foreground = rng.gen_range(0.55..1.0);
    let cx = rng.gen_range(0.32..0.68) * size as f64;
    let cy = rng.gen_range(0.32..0.68) * size as f64;
    let half = rng.gen_range(0.14..0.30) * size as f64;

    for v in plane.iter_mut() {
        *v = background;
    }
    for y in 0..size {
        for x in 0..size {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let inside = match class {
                0 => dx * dx + dy * dy <= half * half,
                1 => dx.abs() <= half && dy.abs() <= half,
                2 => {
                    // upward triangle: width grows linearly toward the base
                    let t = (dy + half) / (2.0 * half);
                    (0.0..=1.0).contains(&t) && dx.abs() <= t * half
                }
                _ => {
                    let arm = half / 3.0;
                    (dx.abs() <= half && dy.abs() <= arm) || (dy.abs() <= half && dx.abs() <= arm)
                }
            };
            if inside {
                plane[y * size + x] = foreground;
            }
        }
    }
    // quantize like an 8-bit image so file round-trips are faithful
    for v in plane.iter_mut() {
        *v = (*v * 255.0).round() / 255.0;
    }
}

/// Deterministic, class-balanced set of grayscale shapes replicated to
/// 3 channels. `n` must divide evenly among the classes; `size ≥ 16`.
pub fn synth_dataset<T: Scalar>(
    kind: SynthKind,
    n: usize,
    size: usize,
    seed: u64,
) -> Result<Dataset<T>> {
    let class_names = kind.class_names();
    let classes = class_names.len();
    if n == 0 || n % classes != 0 {
        return Err(Error::Data(format!(
            "sample count {n} is not a positive multiple of {classes} classes"
        )));
    }
    if size < 16 {
        return Err(Error::Data(format!("image size {size} below minimum 16")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut plane = vec![0.0f64; size * size];
    for i in 0..n {
        let class = i % classes;
        draw_shape(&mut plane, size, class, &mut rng);
        let mut values = Vec::with_capacity(3 * size * size);
        for _ in 0..3 {
            values.extend(plane.iter().map(|&v| T::from_f64(v)));
        }
        images.push(Image {
            shape: Shape::new(1, 3, size, size),
            values: std::sync::Arc::new(values),
        });
        labels.push(class);
    }
    Ok(Dataset {
        images,
        labels,
        class_names,
    })
}

/// Write a dataset to `root` in the directory layout `load_image_dir`
/// reads, one grayscale PNG per image.
pub fn write_dataset<T: Scalar>(ds: &Dataset<T>, root: &Path) -> Result<()> {
    for name in &ds.class_names {
        fs::create_dir_all(root.join(name))?;
    }
    let digits = ds.len().to_string().len().max(4);
    for (i, (img, &label)) in ds.images.iter().zip(ds.labels.iter()).enumerate() {
        let s = img.shape();
        let gray: Vec<u8> = img.values()[..s.h * s.w]
            .iter()
            .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let path = ds.class_names[label].clone();
        let file = root.join(path).join(format!("{i:0digits$}.png"));
        write_gray_png(&file, s.w as u32, s.h as u32, &gray)?;
    }
    Ok(())
}

pub fn write_gray_png(path: &Path, width: u32, height: u32, gray: &[u8]) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut encoder = png::Encoder::new(std::io::BufWriter::new(file), width, height);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Data(format!("png encode {}: {e}", path.display())))?;
    writer
        .write_image_data(gray)
        .map_err(|e| Error::Data(format!("png encode {}: {e}", path.display())))?;
    Ok(())
}

fn decode_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let file = fs::File::open(path)?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Data(format!("png {}: {e}", path.display())))?;
    let buf_size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Data(format!("png {}: image too large", path.display())))?;
    let mut buf = vec![0u8; buf_size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Data(format!("png {}: {e}", path.display())))?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width as usize, info.height as usize);

    // normalize to 8-bit rgb
    let to8 = |hi: u8, _lo: u8| hi;
    let mut rgb = Vec::with_capacity(w * h * 3);
    use png::{BitDepth, ColorType};
    match (info.color_type, info.bit_depth) {
        (ColorType::Grayscale, BitDepth::Eight) => {
            for &g in &buf {
                rgb.extend_from_slice(&[g, g, g]);
            }
        }
        (ColorType::Grayscale, BitDepth::Sixteen) => {
            for px in buf.chunks_exact(2) {
                let g = to8(px[0], px[1]);
                rgb.extend_from_slice(&[g, g, g]);
            }
        }
        (ColorType::GrayscaleAlpha, BitDepth::Eight) => {
            for px in buf.chunks_exact(2) {
                rgb.extend_from_slice(&[px[0], px[0], px[0]]);
            }
        }
        (ColorType::Rgb, BitDepth::Eight) => rgb = buf,
        (ColorType::Rgb, BitDepth::Sixteen) => {
            for px in buf.chunks_exact(2) {
                rgb.push(to8(px[0], px[1]));
            }
        }
        (ColorType::Rgba, BitDepth::Eight) => {
            for px in buf.chunks_exact(4) {
                rgb.extend_from_slice(&px[..3]);
            }
        }
        (ct, bd) => {
            return Err(Error::Data(format!(
                "png {}: unsupported format {ct:?}/{bd:?}",
                path.display()
            )))
        }
    }
    Ok((w, h, rgb))
}

/// Binary PPM (P6), 8-bit.
fn decode_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |msg: &str| Error::Data(format!("ppm {}: {msg}", path.display()));

    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        while pos < bytes.len() {
            match bytes[pos] {
                b' ' | b'\t' | b'\r' | b'\n' => pos += 1,
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Data("ppm: truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(&bytes)? != "P6" {
        return Err(bad("not a binary P6 file"));
    }
    let w: usize = token(&bytes)?.parse().map_err(|_| bad("bad width"))?;
    let h: usize = token(&bytes)?.parse().map_err(|_| bad("bad height"))?;
    let maxval: usize = token(&bytes)?.parse().map_err(|_| bad("bad maxval"))?;
    if maxval != 255 {
        return Err(bad("only maxval 255 supported"));
    }
    pos += 1; // single whitespace after maxval
    if bytes.len() < pos + w * h * 3 {
        return Err(bad("truncated pixel data"));
    }
    Ok((w, h, bytes[pos..pos + w * h * 3].to_vec()))
}

fn bilinear_resize(rgb: &[u8], w: usize, h: usize, nw: usize, nh: usize) -> Vec<u8> {
    let mut out = vec![0u8; nw * nh * 3];
    let sx = w as f64 / nw as f64;
    let sy = h as f64 / nh as f64;
    for y in 0..nh {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let dy = fy - y0 as f64;
        for x in 0..nw {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let dx = fx - x0 as f64;
            for c in 0..3 {
                let v00 = rgb[(y0 * w + x0) * 3 + c] as f64;
                let v01 = rgb[(y0 * w + x1) * 3 + c] as f64;
                let v10 = rgb[(y1 * w + x0) * 3 + c] as f64;
                let v11 = rgb[(y1 * w + x1) * 3 + c] as f64;
                let v = v00 * (1.0 - dx) * (1.0 - dy)
                    + v01 * dx * (1.0 - dy)
                    + v10 * (1.0 - dx) * dy
                    + v11 * dx * dy;
                out[(y * nw + x) * 3 + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

fn center_crop(rgb: &[u8], w: usize, h: usize, cw: usize, ch: usize) -> (usize, usize, Vec<u8>) {
    let cw = cw.min(w);
    let ch = ch.min(h);
    let x0 = (w - cw) / 2;
    let y0 = (h - ch) / 2;
    let mut out = Vec::with_capacity(cw * ch * 3);
    for y in 0..ch {
        let start = ((y0 + y) * w + x0) * 3;
        out.extend_from_slice(&rgb[start..start + cw * 3]);
    }
    (cw, ch, out)
}

/// Optional preprocessing applied while loading from disk.
#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Resize the short specification: both dims to `resize` when > 0.
    pub resize: usize,
    /// Center-crop to this size when > 0 (after any resize).
    pub center_crop: usize,
}

/// Report of one directory load.
pub struct LoadReport {
    pub skipped: usize,
}

/// Read `<root>/<class>/*` into a dataset. Labels follow sorted class-dir
/// order; undecodable files are skipped and counted; an empty class is an
/// error.
pub fn load_image_dir<T: Scalar>(
    root: &Path,
    opts: LoadOptions,
) -> Result<(Dataset<T>, LoadReport)> {
    let mut class_dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(Error::Data(format!(
            "no class directories under {}",
            root.display()
        )));
    }

    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut class_names = Vec::new();
    let mut skipped = 0usize;
    for (label, dir) in class_dirs.iter().enumerate() {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        let mut added = 0usize;
        for file in files {
            let decoded = match file.extension().and_then(|e| e.to_str()) {
                Some("png") => decode_png(&file),
                Some("ppm") => decode_ppm(&file),
                _ => Err(Error::Data("unknown extension".into())),
            };
            let (mut w, mut h, mut rgb) = match decoded {
                Ok(v) => v,
                Err(_) => {
                    skipped += 1;
                    continue;
                }
            };
            if opts.resize > 0 && (w != opts.resize || h != opts.resize) {
                rgb = bilinear_resize(&rgb, w, h, opts.resize, opts.resize);
                w = opts.resize;
                h = opts.resize;
            }
            if opts.center_crop > 0 && (w > opts.center_crop || h > opts.center_crop) {
                let (cw, ch, cropped) = center_crop(&rgb, w, h, opts.center_crop, opts.center_crop);
                rgb = cropped;
                w = cw;
                h = ch;
            }
            // planar (3, H, W) in [0, 1]
            let mut values = vec![T::zero(); 3 * w * h];
            for (i, px) in rgb.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    values[c * w * h + i] = T::from_f64(px[c] as f64 / 255.0);
                }
            }
            images.push(Image {
                shape: Shape::new(1, 3, h, w),
                values: std::sync::Arc::new(values),
            });
            labels.push(label);
            added += 1;
        }
        if added == 0 {
            return Err(Error::Data(format!("class '{name}' has no readable images")));
        }
        class_names.push(name);
    }
    Ok((
        Dataset {
            images,
            labels,
            class_names,
        },
        LoadReport { skipped },
    ))
}
