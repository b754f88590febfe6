//! Images, fixed-kernel convolution and the perturbations used for
//! robustness sweeps.
//!
//! Intensities live in `[0, 1]`. All randomness is drawn from a ChaCha
//! generator seeded explicitly by the caller.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{OocsError, Result};
use crate::kernels::{DogParams, KernelMatrix, KernelProfile, Polarity};

/// Row-major, channel-last image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(OocsError::Dimension(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(OocsError::Dimension(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(OocsError::Domain(format!("non-finite intensity at index {i}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels])
            .expect("filled image with positive dimensions")
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f64) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// One channel as its own single-channel image.
    pub fn channel(&self, c: usize) -> ImageTensor {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        ImageTensor {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> ImageTensor {
        ImageTensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pixels with at least `margin` pixels to every border.
    pub fn interior(&self, margin: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (h, w) = (self.height, self.width);
        (margin..h.saturating_sub(margin))
            .flat_map(move |y| (margin..w.saturating_sub(margin)).map(move |x| (y, x)))
    }
}

/// On and off responses of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsePair {
    pub on: ImageTensor,
    pub off: ImageTensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

/// Cross-correlation of a single-channel image with a kernel.
pub fn convolve2d(
    image: &ImageTensor,
    kernel: &KernelMatrix,
    padding: Padding,
    stride: usize,
) -> Result<ImageTensor> {
    if image.channels != 1 {
        return Err(OocsError::Dimension(format!(
            "convolve2d expects a single channel, got {}",
            image.channels
        )));
    }
    if stride == 0 {
        return Err(OocsError::Domain("stride must be at least 1".into()));
    }
    let k = kernel.size();
    let pad = match padding {
        Padding::Same => k / 2,
        Padding::Valid => 0,
    };
    let (h, w) = (image.height, image.width);
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(OocsError::Dimension(format!(
            "kernel {k}x{k} is larger than the padded image {}x{}",
            h + 2 * pad,
            w + 2 * pad
        )));
    }
    let out_h = (h + 2 * pad - k) / stride + 1;
    let out_w = (w + 2 * pad - k) / stride + 1;
    let weights = kernel.weights();
    let mut out = vec![0.0; out_h * out_w];
    for oy in 0..out_h {
        for ox in 0..out_w {
            let mut acc = 0.0;
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                let row = iy as usize * w;
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    acc += image.data[row + ix as usize] * weights[ky * k + kx];
                }
            }
            out[oy * out_w + ox] = acc;
        }
    }
    ImageTensor::new(out_h, out_w, 1, out)
}

/// Same-padded on/off responses, channels averaged into one map.
pub fn on_off_responses(image: &ImageTensor, params: &DogParams) -> Result<ResponsePair> {
    on_off_responses_with(image, params, KernelProfile::Dog)
}

pub fn on_off_responses_with(
    image: &ImageTensor,
    params: &DogParams,
    profile: KernelProfile,
) -> Result<ResponsePair> {
    let kernel = params.with_polarity(Polarity::On).kernel(profile)?;
    let mut acc = vec![0.0; image.height * image.width];
    for c in 0..image.channels {
        let r = convolve2d(&image.channel(c), &kernel, Padding::Same, 1)?;
        for (a, v) in acc.iter_mut().zip(&r.data) {
            *a += v;
        }
    }
    if image.channels > 1 {
        let n = image.channels as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    let on = ImageTensor::new(image.height, image.width, 1, acc)?;
    let off = on.map(|v| -v);
    Ok(ResponsePair { on, off })
}

/// Additive i.i.d. Gaussian noise, clamped to `[0, 1]`.
pub fn perturb_gaussian(image: &ImageTensor, sigma: f64, seed: u64) -> Result<ImageTensor> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(OocsError::Domain(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| OocsError::Domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(image.map(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0)))
}

/// Salt-and-pepper noise: each pixel (all channels together) becomes 0 with
/// probability `p/2` and 1 with probability `p/2`.
pub fn perturb_salt_pepper(image: &ImageTensor, p: f64, seed: u64) -> Result<ImageTensor> {
    if !(0.0..=1.0).contains(&p) {
        return Err(OocsError::Domain(format!("corruption probability must lie in [0, 1], got {p}")));
    }
    if p == 0.0 {
        return Ok(image.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = image.clone();
    for px in out.data.chunks_mut(image.channels) {
        let u: f64 = rng.random();
        if u < p {
            let v = if u < p / 2.0 { 0.0 } else { 1.0 };
            px.fill(v);
        }
    }
    Ok(out)
}

/// Power-law intensity map; `g > 1` darkens, `g < 1` brightens.
pub fn gamma_correct(image: &ImageTensor, g: f64) -> Result<ImageTensor> {
    if !(g > 0.0 && g.is_finite()) {
        return Err(OocsError::Domain(format!("gamma must be positive, got {g}")));
    }
    if g == 1.0 {
        return Ok(image.clone());
    }
    Ok(image.map(|v| v.max(0.0).powf(g)))
}

/// Scales deviations from the image mean by `factor`, clamped to `[0, 1]`.
pub fn adjust_contrast(image: &ImageTensor, factor: f64) -> Result<ImageTensor> {
    if !(factor >= 0.0 && factor.is_finite()) {
        return Err(OocsError::Domain(format!("contrast factor must be >= 0, got {factor}")));
    }
    if factor == 1.0 {
        return Ok(image.clone());
    }
    let mean = image.mean();
    Ok(image.map(|v| (mean + factor * (v - mean)).clamp(0.0, 1.0)))
}

pub fn invert(image: &ImageTensor) -> ImageTensor {
    image.map(|v| 1.0 - v)
}

/// How real values are mapped to 8-bit gray levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PgmScaling {
    /// `[min, max]` onto `[0, 255]`; constant images become 128.
    #[default]
    MinMax,
    /// `[-M, M]` onto `[0, 255]` with `M = max |v|`, so zero lands on 128.
    Symmetric,
}

fn to_gray(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn pgm_bytes(image: &ImageTensor, scaling: PgmScaling) -> Result<Vec<u8>> {
    if image.channels != 1 {
        return Err(OocsError::Dimension(format!(
            "PGM export needs a single channel, got {}",
            image.channels
        )));
    }
    let pixels: Vec<u8> = match scaling {
        PgmScaling::MinMax => {
            let lo = image.data.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = image.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                image.data.iter().map(|&v| to_gray((v - lo) / (hi - lo) * 255.0)).collect()
            } else {
                vec![128; image.data.len()]
            }
        }
        PgmScaling::Symmetric => {
            let m = image.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if m > 0.0 {
                image
                    .data
                    .iter()
                    .map(|&v| {
                        // rounding noise around zero must not straddle 127.5
                        let t = v / m;
                        if t.abs() < 1e-9 {
                            128
                        } else {
                            to_gray((t + 1.0) * 127.5)
                        }
                    })
                    .collect()
            } else {
                vec![128; image.data.len()]
            }
        }
    };
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}

/// Writes a binary 8-bit PGM after min/max rescaling.
pub fn export_pgm(image: &ImageTensor, path: &Path) -> Result<()> {
    export_pgm_scaled(image, path, PgmScaling::MinMax)
}

pub fn export_pgm_scaled(image: &ImageTensor, path: &Path, scaling: PgmScaling) -> Result<()> {
    let bytes = pgm_bytes(image, scaling)?;
    let mut f = fs::File::create(path).map_err(|e| OocsError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| OocsError::io(path, e))
}

/// Reads a binary (P5) or ASCII (P2) PGM into `[0, 1]` intensities.
pub fn read_pgm(path: &Path) -> Result<ImageTensor> {
    let bytes = fs::read(path).map_err(|e| OocsError::io(path, e))?;
    parse_pgm(&bytes)
}

pub fn parse_pgm(bytes: &[u8]) -> Result<ImageTensor> {
    let mut pos = 0;
    let next_token = |pos: &mut usize| -> Result<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(OocsError::Format("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = next_token(&mut pos)?;
    let num = |s: String| -> Result<usize> {
        s.parse()
            .map_err(|_| OocsError::Format(format!("bad PGM header value `{s}`")))
    };
    let width = num(next_token(&mut pos)?)?;
    let height = num(next_token(&mut pos)?)?;
    let maxval = num(next_token(&mut pos)?)?;
    if maxval == 0 || maxval > 255 {
        return Err(OocsError::Format(format!("unsupported PGM maxval {maxval}")));
    }
    let n = width * height;
    let scale = maxval as f64;
    let data: Vec<f64> = match magic.as_str() {
        "P5" => {
            pos += 1; // single whitespace after maxval
            let raster = bytes
                .get(pos..pos + n)
                .ok_or_else(|| OocsError::Format("truncated PGM raster".into()))?;
            raster.iter().map(|&b| b as f64 / scale).collect()
        }
        "P2" => (0..n)
            .map(|_| next_token(&mut pos).and_then(num).map(|v| v as f64 / scale))
            .collect::<Result<_>>()?,
        other => return Err(OocsError::Format(format!("not a PGM file (magic `{other}`)"))),
    };
    ImageTensor::new(height, width, 1, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::build_oocs_kernel;

    fn on5() -> KernelMatrix {
        build_oocs_kernel(5, 2.0 / 3.0, Polarity::On).unwrap()
    }

    fn noise_image(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w).map(|_| rng.random::<f64>()).collect();
        ImageTensor::new(h, w, 1, data).unwrap()
    }

    #[test]
    fn uniform_image_is_annihilated() {
        let img = ImageTensor::filled(12, 9, 1, 0.37);
        let out = convolve2d(&img, &on5(), Padding::Valid, 1).unwrap();
        assert_eq!((out.height(), out.width()), (8, 5));
        assert!(out.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn delta_reproduces_kernel() {
        let k = on5();
        let mut img = ImageTensor::zeros(11, 11, 1);
        img.set(5, 5, 0, 1.0);
        let out = convolve2d(&img, &k, Padding::Same, 1).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                // correlation with a delta yields the kernel flipped; it is symmetric
                assert_eq!(out.get(3 + i, 3 + j, 0), k.get(4 - i, 4 - j));
            }
        }
        assert_eq!(out.get(0, 0, 0), 0.0);
    }

    #[test]
    fn block_spot_hits_unit_response() {
        let mut img = ImageTensor::zeros(15, 15, 1);
        for y in 6..9 {
            for x in 6..9 {
                img.set(y, x, 0, 1.0);
            }
        }
        let out = convolve2d(&img, &on5(), Padding::Same, 1).unwrap();
        assert!((out.get(7, 7, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stride_and_dimension_errors() {
        let img = ImageTensor::zeros(10, 10, 1);
        let out = convolve2d(&img, &on5(), Padding::Same, 2).unwrap();
        assert_eq!((out.height(), out.width()), (5, 5));
        let tiny = ImageTensor::zeros(3, 3, 1);
        assert!(matches!(
            convolve2d(&tiny, &on5(), Padding::Valid, 1),
            Err(OocsError::Dimension(_))
        ));
        assert!(convolve2d(&img, &on5(), Padding::Same, 0).is_err());
        assert!(convolve2d(&ImageTensor::zeros(5, 5, 2), &on5(), Padding::Same, 1).is_err());
    }

    #[test]
    fn linearity() {
        let k = on5();
        let x = noise_image(9, 13, 1);
        let y = noise_image(9, 13, 2);
        let (a, b) = (0.7, -1.3);
        let combo = ImageTensor::new(
            9,
            13,
            1,
            x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect(),
        )
        .unwrap();
        let lhs = convolve2d(&combo, &k, Padding::Same, 1).unwrap();
        let cx = convolve2d(&x, &k, Padding::Same, 1).unwrap();
        let cy = convolve2d(&y, &k, Padding::Same, 1).unwrap();
        for i in 0..lhs.data().len() {
            assert!((lhs.data()[i] - (a * cx.data()[i] + b * cy.data()[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn responses_antisymmetric_and_inversion_dual() {
        let p = DogParams::new(5, 2.0 / 3.0, Polarity::On).unwrap();
        let img = noise_image(16, 16, 3);
        let r = on_off_responses(&img, &p).unwrap();
        for (a, b) in r.on.data().iter().zip(r.off.data()) {
            assert_eq!(*a, -*b);
        }
        let inv = on_off_responses(&invert(&img), &p).unwrap();
        for (y, x) in img.interior(2) {
            assert!((inv.on.get(y, x, 0) - r.off.get(y, x, 0)).abs() < 1e-6);
        }
        let flat = on_off_responses(&ImageTensor::filled(8, 8, 1, 0.8), &p).unwrap();
        for (y, x) in flat.on.interior(2) {
            assert!(flat.on.get(y, x, 0).abs() < 1e-12);
        }
    }

    #[test]
    fn multichannel_responses_average() {
        let p = DogParams::new(3, 0.5, Polarity::On).unwrap();
        let a = noise_image(6, 6, 4);
        let b = noise_image(6, 6, 5);
        let mut data = Vec::new();
        for i in 0..36 {
            data.push(a.data()[i]);
            data.push(b.data()[i]);
        }
        let rgb = ImageTensor::new(6, 6, 2, data).unwrap();
        let r = on_off_responses(&rgb, &p).unwrap();
        let ra = on_off_responses(&a, &p).unwrap();
        let rb = on_off_responses(&b, &p).unwrap();
        for i in 0..36 {
            let want = (ra.on.data()[i] + rb.on.data()[i]) / 2.0;
            assert!((r.on.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_noise() {
        let img = ImageTensor::filled(96, 96, 1, 0.5);
        assert_eq!(perturb_gaussian(&img, 0.0, 7).unwrap(), img);
        let out = perturb_gaussian(&img, 0.1, 7).unwrap();
        let diffs: Vec<f64> = out.data().iter().map(|v| v - 0.5).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
        assert!((0.095..=0.105).contains(&var.sqrt()), "{}", var.sqrt());
        assert_eq!(out, perturb_gaussian(&img, 0.1, 7).unwrap());
        assert_ne!(out, perturb_gaussian(&img, 0.1, 8).unwrap());
        let loud = perturb_gaussian(&img, 2.0, 1).unwrap();
        assert!(loud.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(perturb_gaussian(&img, -0.1, 1).is_err());
    }

    #[test]
    fn salt_and_pepper() {
        let img = ImageTensor::filled(96, 96, 1, 0.5);
        assert_eq!(perturb_salt_pepper(&img, 0.0, 3).unwrap(), img);
        let all = perturb_salt_pepper(&img, 1.0, 3).unwrap();
        assert!(all.data().iter().all(|&v| v == 0.0 || v == 1.0));
        let some = perturb_salt_pepper(&img, 0.1, 3).unwrap();
        let frac = some.data().iter().filter(|&&v| v != 0.5).count() as f64 / 9216.0;
        assert!((0.08..=0.12).contains(&frac), "{frac}");
        let salt = some.data().iter().filter(|&&v| v == 1.0).count() as f64 / 9216.0;
        assert!((0.035..=0.065).contains(&salt), "{salt}");
        assert!(perturb_salt_pepper(&img, 1.5, 3).is_err());
    }

    #[test]
    fn gamma_and_contrast() {
        let img = ImageTensor::new(1, 4, 1, vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        assert_eq!(gamma_correct(&img, 1.0).unwrap(), img);
        let g2 = gamma_correct(&img, 2.0).unwrap();
        assert_eq!(g2.data(), &[0.0, 0.0625, 0.25, 1.0]);
        let g_half = gamma_correct(&img, 0.5).unwrap();
        assert_eq!(g_half.data()[0], 0.0);
        assert_eq!(g_half.data()[3], 1.0);
        assert!(g_half.data()[1] > 0.25);
        assert!(gamma_correct(&img, 0.0).is_err());

        assert_eq!(adjust_contrast(&img, 1.0).unwrap(), img);
        let flat = adjust_contrast(&img, 0.0).unwrap();
        assert!(flat.data().iter().all(|&v| (v - img.mean()).abs() < 1e-15));
        let uniform = ImageTensor::filled(3, 3, 1, 0.3);
        for f in [0.4, 1.6] {
            let out = adjust_contrast(&uniform, f).unwrap();
            assert!(out.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        }
        let hi = adjust_contrast(&img, 1.6).unwrap();
        assert!(hi.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn inversion() {
        let img = ImageTensor::new(1, 3, 1, vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(invert(&img).data(), &[1.0, 0.5, 0.0]);
        assert_eq!(invert(&ImageTensor::zeros(2, 2, 1)), ImageTensor::filled(2, 2, 1, 1.0));
        let x = noise_image(5, 5, 9);
        let back = invert(&invert(&x));
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() <= f64::EPSILON);
        }
    }

    #[test]
    fn pgm_export() {
        let img = ImageTensor::new(2, 2, 1, vec![0.0, 1.0, 0.5, 0.25]).unwrap();
        let bytes = pgm_bytes(&img, PgmScaling::MinMax).unwrap();
        assert_eq!(&bytes[..11], b"P5\n2 2\n255\n");
        assert_eq!(&bytes[11..], &[0, 255, 128, 64]);
        let constant = pgm_bytes(&ImageTensor::filled(3, 2, 1, 0.7), PgmScaling::MinMax).unwrap();
        assert!(constant[11..].iter().all(|&b| b == 128));
        let signed = ImageTensor::new(1, 3, 1, vec![-2.0, 0.0, 2.0]).unwrap();
        let sym = pgm_bytes(&signed, PgmScaling::Symmetric).unwrap();
        assert_eq!(&sym[sym.len() - 3..], &[0, 128, 255]);
        assert!(export_pgm(&img, Path::new("")).is_err());
        assert!(pgm_bytes(&ImageTensor::zeros(2, 2, 3), PgmScaling::MinMax).is_err());
    }

    #[test]
    fn pgm_round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        let img = ImageTensor::new(2, 3, 1, vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
        export_pgm(&img, &path).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!((back.height(), back.width()), (2, 3));
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        let ascii = parse_pgm(b"P2\n# comment\n2 1\n10\n0 10\n").unwrap();
        assert_eq!(ascii.data(), &[0.0, 1.0]);
        assert!(parse_pgm(b"P6\n1 1\n255\n\0\0\0").is_err());
        assert!(parse_pgm(b"P5\n4 4\n255\n\0").is_err());
    }
}
