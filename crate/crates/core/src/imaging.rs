//! Grayscale images, binary PGM I/O, cropping, and patch tiling.

use std::fs;
use std::path::Path;

use crate::error::{Error, PgmError, Result};
use crate::numeric::{Matrix, Vector};

/// Row-major grayscale image with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::mismatch(
                "image pixel count",
                height * width,
                pixels.len(),
            ));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(GrayImage {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Copies the `h × w` window whose top-left corner is `(top, left)`.
    pub fn window(&self, top: usize, left: usize, h: usize, w: usize) -> Result<GrayImage> {
        if top + h > self.height || left + w > self.width {
            return Err(Error::invalid(format!(
                "window {h}x{w} at ({top}, {left}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        let mut pixels = Vec::with_capacity(h * w);
        for r in top..top + h {
            let start = r * self.width + left;
            pixels.extend_from_slice(&self.pixels[start..start + w]);
        }
        Ok(GrayImage {
            height: h,
            width: w,
            pixels,
        })
    }
}

// ---------------------------------------------------------------------------
// PGM

/// Parses a binary (P5) PGM. Samples are scaled by `1 / maxval`.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, PgmError> {
    let mut pos = 0;
    let magic = bytes
        .get(..2)
        .ok_or_else(|| PgmError::MalformedHeader("missing magic".into()))?;
    if magic != b"P5" {
        return Err(PgmError::UnsupportedMagic(
            String::from_utf8_lossy(magic).into_owned(),
        ));
    }
    pos += 2;
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(PgmError::MalformedHeader(format!(
            "maxval {maxval} outside 1..=65535"
        )));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(PgmError::MalformedHeader(
                "missing whitespace after maxval".into(),
            ))
        }
    }
    let sample_bytes = if maxval > 255 { 2 } else { 1 };
    let count = width
        .checked_mul(height)
        .ok_or_else(|| PgmError::MalformedHeader("image dimensions overflow".into()))?;
    let expected = count * sample_bytes;
    let raster = &bytes[pos..];
    if raster.len() < expected {
        return Err(PgmError::Truncated {
            expected,
            found: raster.len(),
        });
    }
    let scale = maxval as f64;
    let mut pixels = Vec::with_capacity(count);
    for i in 0..count {
        let v = if sample_bytes == 2 {
            u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as usize
        } else {
            raster[i] as usize
        };
        if v > maxval {
            return Err(PgmError::SampleOutOfRange {
                value: v as u32,
                maxval: maxval as u32,
            });
        }
        pixels.push(v as f64 / scale);
    }
    Ok(GrayImage {
        height,
        width,
        pixels,
    })
}

fn header_number(bytes: &[u8], pos: &mut usize, field: &str) -> Result<usize, PgmError> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' || b == b'\r' {
                        break;
                    }
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return Err(PgmError::MalformedHeader(format!("expected {field}")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .expect("ascii digits")
        .parse()
        .map_err(|_| PgmError::MalformedHeader(format!("{field} out of range")))
}

/// Encodes as P5 with maxval 255, `round(v · 255)` clamped.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(
        img.pixels
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    out
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let bytes = fs::read(path)?;
    Ok(decode_pgm(&bytes)?)
}

pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pgm(img))?;
    Ok(())
}

/// The `size × size` region centered in `img`, offsets rounded down.
pub fn central_crop(img: &GrayImage, size: usize) -> Result<GrayImage> {
    if img.height < size || img.width < size {
        return Err(Error::invalid(format!(
            "{}x{} image is smaller than crop size {size}",
            img.height, img.width
        )));
    }
    img.window((img.height - size) / 2, (img.width - size) / 2, size, size)
}

// ---------------------------------------------------------------------------
// Patches

/// Square patches cut from one image, flattened row-major, with their
/// top-left origins.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch {
    pub patch_size: usize,
    pub stride: usize,
    pub patches: Vec<Vector>,
    pub origins: Vec<(usize, usize)>,
}

impl PatchBatch {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.patch_size * self.patch_size
    }

    /// One patch per row.
    pub fn to_matrix(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.len() * self.dim());
        for p in &self.patches {
            data.extend_from_slice(p);
        }
        Matrix::from_vec(self.len(), self.dim(), data).expect("patches share a dimension")
    }

    /// Same geometry, patch contents taken from the rows of `rows`.
    pub fn with_contents(&self, rows: &Matrix) -> Result<PatchBatch> {
        if rows.rows() != self.len() {
            return Err(Error::mismatch("patch count", self.len(), rows.rows()));
        }
        if rows.cols() != self.dim() {
            return Err(Error::mismatch("patch dimension", self.dim(), rows.cols()));
        }
        Ok(PatchBatch {
            patches: rows.row_iter().map(Vector::from).collect(),
            ..self.clone()
        })
    }
}

/// Number of placements `(⌊(h−p)/s⌋+1)·(⌊(w−p)/s⌋+1)`.
pub fn patch_count(height: usize, width: usize, patch_size: usize, stride: usize) -> usize {
    if patch_size == 0 || stride == 0 || patch_size > height || patch_size > width {
        return 0;
    }
    ((height - patch_size) / stride + 1) * ((width - patch_size) / stride + 1)
}

fn check_geometry(height: usize, width: usize, patch_size: usize, stride: usize) -> Result<()> {
    if patch_size == 0 || patch_size > height.min(width) {
        return Err(Error::invalid(format!(
            "patch size {patch_size} must be in 1..={}",
            height.min(width)
        )));
    }
    if stride == 0 || stride > patch_size {
        return Err(Error::invalid(format!(
            "stride {stride} must be in 1..={patch_size}"
        )));
    }
    Ok(())
}

/// Every `patch_size` square at origins `(i·stride, j·stride)` that lies fully
/// inside `img`, in row-major origin order.
pub fn extract_patches(img: &GrayImage, patch_size: usize, stride: usize) -> Result<PatchBatch> {
    check_geometry(img.height, img.width, patch_size, stride)?;
    let count = patch_count(img.height, img.width, patch_size, stride);
    let mut patches = Vec::with_capacity(count);
    let mut origins = Vec::with_capacity(count);
    for top in (0..=img.height - patch_size).step_by(stride) {
        for left in (0..=img.width - patch_size).step_by(stride) {
            let mut p = Vec::with_capacity(patch_size * patch_size);
            for r in top..top + patch_size {
                let start = r * img.width + left;
                p.extend_from_slice(&img.pixels[start..start + patch_size]);
            }
            patches.push(Vector::from(p));
            origins.push((top, left));
        }
    }
    Ok(PatchBatch {
        patch_size,
        stride,
        patches,
        origins,
    })
}

/// Places each patch at its origin and averages overlapping values.
///
/// Each pixel is accumulated as `first + Σ(v − first) / count`, where `first`
/// is the earliest patch value covering it. Agreeing patches therefore give
/// back their common value bit for bit.
pub fn reassemble(batch: &PatchBatch, height: usize, width: usize) -> Result<GrayImage> {
    let p = batch.patch_size;
    if batch.patches.len() != batch.origins.len() {
        return Err(Error::mismatch(
            "patch origins",
            batch.patches.len(),
            batch.origins.len(),
        ));
    }
    let mut first = vec![f64::NAN; height * width];
    let mut deviation = vec![0.0; height * width];
    let mut count = vec![0u32; height * width];
    for (patch, &(top, left)) in batch.patches.iter().zip(&batch.origins) {
        if patch.dim() != p * p {
            return Err(Error::mismatch("patch dimension", p * p, patch.dim()));
        }
        if top + p > height || left + p > width {
            return Err(Error::invalid(format!(
                "patch at ({top}, {left}) exceeds {height}x{width} image"
            )));
        }
        for r in 0..p {
            for c in 0..p {
                let idx = (top + r) * width + left + c;
                let v = patch[r * p + c];
                if count[idx] == 0 {
                    first[idx] = v;
                } else {
                    deviation[idx] += v - first[idx];
                }
                count[idx] += 1;
            }
        }
    }
    let mut pixels = Vec::with_capacity(height * width);
    for idx in 0..height * width {
        if count[idx] == 0 {
            return Err(Error::UncoveredPixel {
                row: idx / width,
                col: idx % width,
            });
        }
        let v = first[idx] + deviation[idx] / count[idx] as f64;
        pixels.push(v.clamp(0.0, 1.0));
    }
    GrayImage::new(height, width, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pgm(w: usize, h: usize, maxval: usize, raster: &[u8]) -> Vec<u8> {
        let mut out = format!("P5\n{w} {h}\n{maxval}\n").into_bytes();
        out.extend_from_slice(raster);
        out
    }

    fn ramp(h: usize, w: usize) -> GrayImage {
        GrayImage::from_fn(h, w, |r, c| ((r * 31 + c * 17) % 97) as f64 / 96.0).unwrap()
    }

    #[test]
    fn pgm_normalization() {
        let img = decode_pgm(&pgm(3, 2, 255, &[255; 6])).unwrap();
        assert!(img.pixels().iter().all(|&p| p == 1.0));
        let img = decode_pgm(&pgm(3, 2, 255, &[0; 6])).unwrap();
        assert!(img.pixels().iter().all(|&p| p == 0.0));
        let img = decode_pgm(&pgm(2, 2, 255, &[0, 51, 102, 255])).unwrap();
        assert_eq!(img.pixels(), &[0.0, 0.2, 0.4, 1.0]);
    }

    #[test]
    fn pgm_sixteen_bit_and_comments() {
        let mut bytes = b"P5 # comment\n2 1\n# another\n65535\n".to_vec();
        bytes.extend_from_slice(&[0xFF, 0xFF, 0x00, 0x00]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (2, 1));
        assert_eq!(img.pixels(), &[1.0, 0.0]);
    }

    #[test]
    fn pgm_errors_are_distinct() {
        assert!(matches!(
            decode_pgm(b"P2\n1 1\n255\n0"),
            Err(PgmError::UnsupportedMagic(_))
        ));
        assert!(matches!(
            decode_pgm(b"P5\n1 x\n255\n0"),
            Err(PgmError::MalformedHeader(_))
        ));
        assert!(matches!(
            decode_pgm(b"P5\n1 1\n0\n\0"),
            Err(PgmError::MalformedHeader(_))
        ));
        assert!(matches!(
            decode_pgm(b"P5\n1 1\n70000\n\0\0"),
            Err(PgmError::MalformedHeader(_))
        ));
        assert_eq!(
            decode_pgm(&pgm(2, 2, 255, &[1, 2, 3])),
            Err(PgmError::Truncated {
                expected: 4,
                found: 3
            })
        );
        assert_eq!(
            decode_pgm(&pgm(1, 1, 100, &[200])),
            Err(PgmError::SampleOutOfRange {
                value: 200,
                maxval: 100
            })
        );
    }

    #[test]
    fn pgm_encode_round_trip() {
        let img = decode_pgm(&pgm(2, 2, 255, &[0, 51, 102, 255])).unwrap();
        let bytes = encode_pgm(&img);
        assert_eq!(bytes, pgm(2, 2, 255, &[0, 51, 102, 255]));
        assert_eq!(decode_pgm(&bytes).unwrap(), img);
    }

    #[test]
    fn crop_offsets() {
        let img = ramp(256, 256);
        assert_eq!(central_crop(&img, 256).unwrap(), img);
        let img = ramp(258, 258);
        let crop = central_crop(&img, 256).unwrap();
        assert_eq!(crop.get(0, 0), img.get(1, 1));
        let img = ramp(300, 260);
        let crop = central_crop(&img, 256).unwrap();
        assert_eq!(crop.get(0, 0), img.get(22, 2));
        assert_eq!(crop.get(255, 255), img.get(277, 257));
        assert!(central_crop(&ramp(100, 300), 256).is_err());
    }

    #[test]
    fn patch_counts() {
        let img = ramp(256, 256);
        assert_eq!(extract_patches(&img, 32, 32).unwrap().len(), 64);
        assert_eq!(extract_patches(&img, 32, 16).unwrap().len(), 225);
        let small = ramp(32, 32);
        for stride in [1, 7, 32] {
            let batch = extract_patches(&small, 32, stride).unwrap();
            assert_eq!(batch.len(), 1);
            assert_eq!(batch.patches[0].as_slice(), small.pixels());
        }
        assert!(extract_patches(&img, 32, 48).is_err());
        assert!(extract_patches(&img, 32, 0).is_err());
        assert!(extract_patches(&small, 64, 16).is_err());
    }

    #[test]
    fn reassembly_examples() {
        let img = ramp(64, 64);
        let tiles = extract_patches(&img, 16, 16).unwrap();
        assert_eq!(reassemble(&tiles, 64, 64).unwrap(), img);

        let mut batch = extract_patches(&img, 16, 8).unwrap();
        for p in &mut batch.patches {
            p.as_mut_slice().fill(0.3);
        }
        let flat = reassemble(&batch, 64, 64).unwrap();
        assert!(flat.pixels().iter().all(|&v| v == 0.3));

        let two = PatchBatch {
            patch_size: 1,
            stride: 1,
            patches: vec![Vector::from(vec![0.2]), Vector::from(vec![0.6])],
            origins: vec![(0, 0), (0, 0)],
        };
        let out = reassemble(&two, 1, 1).unwrap();
        assert!((out.get(0, 0) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn uncovered_pixels_rejected() {
        let img = ramp(40, 40);
        let batch = extract_patches(&img, 32, 16).unwrap();
        assert!(matches!(
            reassemble(&batch, 40, 40),
            Err(Error::UncoveredPixel { .. })
        ));
    }
}
