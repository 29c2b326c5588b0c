//! Datasets: MNIST IDX files, the whitespace-separated `amat` format of
//! rotated MNIST, bilinear rotation, and a synthetic rotated-glyph set.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
/// Values per `amat` row: a 28×28 image followed by the label.
pub const AMAT_ROW_LEN: usize = 785;
pub const SYNTH_SIZE: usize = 28;

/// Grayscale images in `[0, 1]` with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    /// `[count][rows][cols]`.
    pub images: Array3<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: String,
}

impl LabeledDataset {
    pub fn new(images: Array3<f64>, labels: Vec<usize>, classes: usize, split: &str) -> Result<Self> {
        if images.dim().0 != labels.len() {
            return Err(Error::DimMismatch(format!("{} images but {} labels", images.dim().0, labels.len())));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::DimMismatch(format!("label {l} outside {classes} classes")));
        }
        Ok(LabeledDataset { images, labels, classes, split: split.to_string() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> (usize, usize) {
        let (_, r, c) = self.images.dim();
        (r, c)
    }

    /// The items at `indices`, in that order.
    pub fn subset(&self, indices: &[usize], split: &str) -> LabeledDataset {
        LabeledDataset {
            images: self.images.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            split: split.to_string(),
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: String,
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "{}: needed {n} bytes at offset {}, {} left",
                self.what,
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    Ok(fs::read(path)?)
}

/// Parses an IDX image file (`0x00000803`, `count × rows × cols` unsigned
/// bytes, big-endian header); pixels are scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Array3<f64>> {
    let mut r = Reader { bytes, pos: 0, what: "IDX images".into() };
    let magic = r.u32()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic { found: magic, expected: IDX_IMAGES_MAGIC });
    }
    let (n, rows, cols) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let len = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::DimMismatch("IDX dimensions overflow".into()))?;
    let px = r.take(len)?;
    if r.pos != bytes.len() {
        return Err(Error::DimMismatch(format!(
            "{} trailing bytes after {n}×{rows}×{cols} images",
            bytes.len() - r.pos
        )));
    }
    Ok(Array3::from_shape_vec((n, rows, cols), px.iter().map(|&p| p as f64 / 255.0).collect()).expect("shape"))
}

/// Parses an IDX label file (`0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let mut r = Reader { bytes, pos: 0, what: "IDX labels".into() };
    let magic = r.u32()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic { found: magic, expected: IDX_LABELS_MAGIC });
    }
    let n = r.u32()? as usize;
    let labels = r.take(n)?.iter().map(|&l| l as usize).collect();
    if r.pos != bytes.len() {
        return Err(Error::DimMismatch(format!("{} trailing bytes after {n} labels", bytes.len() - r.pos)));
    }
    Ok(labels)
}

/// Reads an MNIST-style pair of IDX files. The class count is one more
/// than the largest label (at least 10, as in MNIST).
pub fn read_idx(images: &Path, labels: &Path) -> Result<LabeledDataset> {
    let imgs = parse_idx_images(&read_file(images)?)?;
    let labs = parse_idx_labels(&read_file(labels)?)?;
    let classes = labs.iter().max().map_or(10, |&m| (m + 1).max(10));
    LabeledDataset::new(imgs, labs, classes, "idx")
}

/// Encodes images (values in `[0, 1]`, rounded to bytes) as IDX.
pub fn encode_idx_images(images: &Array3<f64>) -> Vec<u8> {
    let (n, r, c) = images.dim();
    let mut out = Vec::with_capacity(16 + n * r * c);
    for v in [IDX_IMAGES_MAGIC, n as u32, r as u32, c as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(images.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn encode_idx_labels(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&l| l as u8));
    out
}

/// Writes `ds` as an IDX image/label pair.
pub fn write_idx(ds: &LabeledDataset, images: &Path, labels: &Path) -> Result<()> {
    fs::File::create(images)?.write_all(&encode_idx_images(&ds.images))?;
    fs::File::create(labels)?.write_all(&encode_idx_labels(&ds.labels))?;
    Ok(())
}

/// Parses `amat` text: one example per non-empty line, 784 pixel values
/// (row-major 28×28) followed by the label.
pub fn parse_amat(text: &str) -> Result<LabeledDataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for (row, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::MalformedRow { row, expected: AMAT_ROW_LEN, found: 0 }))
            .collect::<Result<_>>()?;
        if values.len() != AMAT_ROW_LEN {
            return Err(Error::MalformedRow { row, expected: AMAT_ROW_LEN, found: values.len() });
        }
        let label = values[AMAT_ROW_LEN - 1];
        if label < 0.0 || label.fract() != 0.0 {
            return Err(Error::MalformedRow { row, expected: AMAT_ROW_LEN, found: values.len() });
        }
        labels.push(label as usize);
        pixels.extend_from_slice(&values[..AMAT_ROW_LEN - 1]);
    }
    let images = Array3::from_shape_vec((labels.len(), 28, 28), pixels).expect("shape");
    let classes = labels.iter().max().map_or(10, |&m| (m + 1).max(10));
    LabeledDataset::new(images, labels, classes, "amat")
}

pub fn read_amat(path: &Path) -> Result<LabeledDataset> {
    parse_amat(&fs::read_to_string(path)?)
}

/// Rotates counterclockwise by `theta` about the image center with
/// bilinear interpolation; samples falling outside the image are 0.
pub fn rotate_bilinear(image: ArrayView2<f64>, theta: f64) -> Array2<f64> {
    const SNAP: f64 = 1e-9;
    let (rows, cols) = image.dim();
    let (cy, cx) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
    let (s, c) = theta.sin_cos();
    Array2::from_shape_fn((rows, cols), |(r, q)| {
        // Output point in y-up coordinates, pulled back by the inverse rotation.
        let (x, y) = (q as f64 - cx, cy - r as f64);
        let (xs, ys) = (c * x + s * y, -s * x + c * y);
        let (sc, sr) = (cx + xs, cy - ys);
        if sc < -SNAP || sr < -SNAP || sc > cols as f64 - 1.0 + SNAP || sr > rows as f64 - 1.0 + SNAP {
            return 0.0;
        }
        let sc = sc.clamp(0.0, cols as f64 - 1.0);
        let sr = sr.clamp(0.0, rows as f64 - 1.0);
        let (r0, c0) = (sr.floor() as usize, sc.floor() as usize);
        let (r1, c1) = ((r0 + 1).min(rows - 1), (c0 + 1).min(cols - 1));
        let (fr, fc) = (sr - r0 as f64, sc - c0 as f64);
        let top = image[[r0, c0]] * (1.0 - fc) + image[[r0, c1]] * fc;
        let bottom = image[[r1, c0]] * (1.0 - fc) + image[[r1, c1]] * fc;
        top * (1.0 - fr) + bottom * fr
    })
}

/// Every image rotated by its own uniform angle in `[0, 2π)`.
pub fn rotate_dataset(ds: &LabeledDataset, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = ds.images.clone();
    for mut img in images.outer_iter_mut() {
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let rotated = rotate_bilinear(img.view(), theta);
        img.assign(&rotated);
    }
    LabeledDataset { images, labels: ds.labels.clone(), classes: ds.classes, split: format!("{}-rotated", ds.split) }
}

/// Mean and standard deviation over all pixels.
pub fn pixel_stats(images: &Array3<f64>) -> (f64, f64) {
    let n = images.len().max(1) as f64;
    let mean = images.sum() / n;
    let var = images.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt().max(1e-8))
}

type Segment = ([f64; 2], [f64; 2]);

/// Names of the synthetic glyph classes, by label.
pub const GLYPHS: [&str; 6] = ["bar", "L", "T", "plus", "triangle", "zigzag"];

/// Strokes of each glyph in pixel units, centered near the origin.
fn glyph(class: usize) -> Vec<Segment> {
    match class {
        0 => vec![([-8.0, 0.0], [8.0, 0.0])],
        1 => vec![([-3.5, 6.5], [-3.5, -5.5]), ([-3.5, -5.5], [5.5, -5.5])],
        2 => vec![([-7.0, 6.0], [7.0, 6.0]), ([0.0, 6.0], [0.0, -7.0])],
        3 => vec![([-7.0, 0.0], [7.0, 0.0]), ([0.0, -7.0], [0.0, 7.0])],
        4 => vec![([-7.0, -5.0], [7.0, -5.0]), ([7.0, -5.0], [0.0, 7.0]), ([0.0, 7.0], [-7.0, -5.0])],
        _ => vec![([-6.0, 6.0], [6.0, 6.0]), ([6.0, 6.0], [-6.0, -6.0]), ([-6.0, -6.0], [6.0, -6.0])],
    }
}

fn segment_distance(p: [f64; 2], (a, b): Segment) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) };
    ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
}

/// Anti-aliased strokes of half-width `half_width` on a `size × size`
/// canvas centered at the origin (pixel units, `y` up).
fn render(segs: &[Segment], half_width: f64, size: usize) -> Array2<f64> {
    let center = (size as f64 - 1.0) / 2.0;
    Array2::from_shape_fn((size, size), |(r, q)| {
        let p = [q as f64 - center, center - r as f64];
        let d = segs.iter().map(|&sg| segment_distance(p, sg)).fold(f64::INFINITY, f64::min);
        (half_width + 0.5 - d).clamp(0.0, 1.0)
    })
}

/// Nuisance factors of the synthetic glyph set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthOptions {
    /// Standard deviation of additive pixel noise (clipped to `[0, 1]`).
    pub noise: f64,
    /// Short random strokes added anywhere on the canvas.
    pub distractors: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions { noise: 0.0, distractors: 0 }
    }
}

impl SynthOptions {
    /// The setting used for CPU-scale model comparisons: clean glyphs are
    /// separable by any small network within a couple of epochs.
    pub fn desk() -> Self {
        SynthOptions { noise: 0.2, distractors: 2 }
    }
}

/// `count` glyph images, 28×28, at uniform random angles in `[0, 2π)` with
/// mild scale, position and stroke-width jitter. Labels cycle through the
/// classes; everything is determined by `seed`.
pub fn synth_rotated_shapes(count: usize, classes: usize, seed: u64) -> Result<LabeledDataset> {
    synth_rotated_shapes_with(count, classes, seed, &SynthOptions::default())
}

/// [`synth_rotated_shapes`] with explicit nuisance factors.
pub fn synth_rotated_shapes_with(
    count: usize,
    classes: usize,
    seed: u64,
    opts: &SynthOptions,
) -> Result<LabeledDataset> {
    if classes == 0 || classes > GLYPHS.len() {
        return Err(Error::InvalidArgument(format!(
            "synthetic glyphs support 1..={} classes, got {classes}",
            GLYPHS.len()
        )));
    }
    if !(opts.noise >= 0.0 && opts.noise.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise level must be finite and non-negative, got {}", opts.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Array3::zeros((count, SYNTH_SIZE, SYNTH_SIZE));
    let mut labels = Vec::with_capacity(count);
    let noise = Normal::new(0.0, opts.noise).expect("valid std");
    let reach = SYNTH_SIZE as f64 / 2.0 - 2.0;
    for (i, mut img) in images.outer_iter_mut().enumerate() {
        let label = i % classes;
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let scale = rng.gen_range(0.85..1.15);
        let shift = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let half_width = rng.gen_range(0.6..1.2);
        let (s, c) = theta.sin_cos();
        let place = |p: [f64; 2]| [scale * (c * p[0] - s * p[1]) + shift[0], scale * (s * p[0] + c * p[1]) + shift[1]];
        let mut segs: Vec<Segment> = glyph(label).into_iter().map(|(a, b)| (place(a), place(b))).collect();
        for _ in 0..opts.distractors {
            let a = [rng.gen_range(-reach..reach), rng.gen_range(-reach..reach)];
            let (len, phi) = (rng.gen_range(2.0..5.0), rng.gen_range(0.0..std::f64::consts::TAU));
            segs.push((a, [a[0] + len * phi.cos(), a[1] + len * phi.sin()]));
        }
        let mut rendered = render(&segs, half_width, SYNTH_SIZE);
        if opts.noise > 0.0 {
            rendered.mapv_inplace(|v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0));
        }
        img.assign(&rendered);
        labels.push(label);
    }
    LabeledDataset::new(images, labels, classes, "synthetic")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_images() -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 4, 0, 0, 0, 2, 0, 0, 0, 2];
        b.extend_from_slice(&[0, 255, 51, 102, 1, 2, 3, 4, 255, 255, 0, 0, 10, 20, 30, 40]);
        b
    }

    #[test]
    fn parses_hand_encoded_idx() {
        let imgs = parse_idx_images(&fixture_images()).unwrap();
        assert_eq!(imgs.dim(), (4, 2, 2));
        assert_eq!(imgs[[0, 0, 1]], 1.0);
        assert_eq!(imgs[[0, 1, 0]], 0.2);
        assert_eq!(imgs[[1, 1, 1]], 4.0 / 255.0);
        assert_eq!(imgs[[3, 0, 0]], 10.0 / 255.0);
        let labels = parse_idx_labels(&[0, 0, 8, 1, 0, 0, 0, 4, 3, 1, 4, 1]).unwrap();
        assert_eq!(labels, vec![3, 1, 4, 1]);
    }

    #[test]
    fn idx_errors() {
        assert!(matches!(parse_idx_images(&[]), Err(Error::Truncated(_))));
        assert!(matches!(parse_idx_labels(&fixture_images()), Err(Error::BadMagic { found: 0x803, .. })));
        let mut short = fixture_images();
        short.pop();
        assert!(matches!(parse_idx_images(&short), Err(Error::Truncated(_))));
        let mut long = fixture_images();
        long.push(0);
        assert!(matches!(parse_idx_images(&long), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn idx_round_trip() {
        let ds = synth_rotated_shapes(5, 3, 1).unwrap();
        let back = parse_idx_images(&encode_idx_images(&ds.images)).unwrap();
        assert!(back.iter().zip(ds.images.iter()).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-12));
        assert_eq!(parse_idx_labels(&encode_idx_labels(&ds.labels)).unwrap(), ds.labels);
    }

    fn amat_row(fill: f64, label: &str) -> String {
        let mut v: Vec<String> = vec![format!("{fill}"); 784];
        v.push(label.into());
        v.join(" ")
    }

    #[test]
    fn amat_rows() {
        let ds = parse_amat(&amat_row(0.0, "7.0")).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.labels, vec![7]);
        assert!(ds.images.iter().all(|&v| v == 0.0));

        let text = [amat_row(0.1, "1"), amat_row(0.2, "0"), amat_row(0.3, "2")].join("\n");
        let ds = parse_amat(&text).unwrap();
        assert_eq!(ds.labels, vec![1, 0, 2]);
        assert_eq!(ds.images[[2, 27, 27]], 0.3);

        let short = vec!["0"; 783].join(" ");
        assert!(matches!(parse_amat(&short), Err(Error::MalformedRow { row: 0, expected: 785, found: 783 })));
    }

    #[test]
    fn rotation_examples() {
        let ds = synth_rotated_shapes(1, 3, 4).unwrap();
        let img = ds.images.index_axis(Axis(0), 0);
        assert_eq!(rotate_bilinear(img, 0.0), img);
        let quarter = rotate_bilinear(img, std::f64::consts::FRAC_PI_2);
        let exact = img.t().slice(ndarray::s![..;-1, ..]).to_owned();
        assert!(quarter.iter().zip(exact.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(quarter.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn rotation_round_trip_is_bounded() {
        let n = 32;
        let smooth = Array2::from_shape_fn((n, n), |(r, c)| {
            let (x, y) = (c as f64 - 15.5, r as f64 - 15.5);
            (-(x * x + y * y) / 40.0).exp()
        });
        let theta = 0.4;
        let once = rotate_bilinear(smooth.view(), theta);
        let back = rotate_bilinear(once.view(), -theta);
        // Single-pass error against the analytic rotation of an isotropic bump is its own interpolation error.
        let single = once.iter().zip(smooth.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let round = back.iter().zip(smooth.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(round <= 2.0 * single + 1e-12, "{round} vs {single}");
    }

    #[test]
    fn synthetic_set_is_deterministic_and_learnable() {
        let a = synth_rotated_shapes(100, 2, 9).unwrap();
        assert_eq!(a, synth_rotated_shapes(100, 2, 9).unwrap());
        assert_eq!(a.len(), 100);
        assert!(a.labels.iter().all(|&l| l < 2));
        assert!(a.images.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_ne!(a, synth_rotated_shapes(100, 2, 10).unwrap());

        let b = synth_rotated_shapes(600, 3, 2).unwrap();
        let means: Vec<f64> = (0..3)
            .map(|c| {
                let idx: Vec<usize> = (0..b.len()).filter(|&i| b.labels[i] == c).collect();
                b.subset(&idx, "c").images.mean().unwrap()
            })
            .collect();
        assert!((means[0] - means[2]).abs() > 0.01 && (means[0] - means[1]).abs() > 0.005, "{means:?}");
        assert!(synth_rotated_shapes(10, 7, 0).is_err());
    }

    #[test]
    fn rotated_dataset_keeps_labels() {
        let ds = synth_rotated_shapes(6, 3, 0).unwrap();
        let r = rotate_dataset(&ds, 1);
        assert_eq!(r.labels, ds.labels);
        assert!(r.images.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
    }
}
