//! Seeded training-time image augmentation.
//!
//! Rotation, zoom and scaling are combined into one inverse affine map about
//! the image center and resampled bilinearly with zero fill. Flip, intensity
//! shift and gamma lighting are applied afterwards, then values are clamped
//! to `[0, 1]`.

use rand::Rng;

use crate::data::{epoch_permutation, Dataset, Split, IMAGE_SHAPE};
use crate::error::{Error, Result};
use crate::rng::{purpose, stream, StreamRng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentSpec {
    pub scaling: bool,
    pub horizontal_flip: bool,
    pub rotation: bool,
    pub zoom: bool,
    pub intensity_shift: bool,
    pub lighting: bool,
    /// Degrees; the angle is drawn from `[-rotation_max, rotation_max]`.
    pub rotation_max: f64,
    pub zoom_range: (f64, f64),
    /// Independent horizontal and vertical factors are drawn from this range.
    pub scale_range: (f64, f64),
    pub intensity_shift_range: (f64, f64),
    pub lighting_gamma_range: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            scaling: true,
            horizontal_flip: true,
            rotation: true,
            zoom: true,
            intensity_shift: true,
            lighting: true,
            rotation_max: 10.0,
            zoom_range: (0.9, 1.1),
            scale_range: (0.9, 1.1),
            intensity_shift_range: (-0.1, 0.1),
            lighting_gamma_range: (0.8, 1.25),
            seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn disabled() -> Self {
        Self {
            scaling: false,
            horizontal_flip: false,
            rotation: false,
            zoom: false,
            intensity_shift: false,
            lighting: false,
            ..Self::default()
        }
    }

    pub fn any_enabled(&self) -> bool {
        self.scaling || self.horizontal_flip || self.rotation || self.zoom || self.intensity_shift || self.lighting
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, (lo, hi): (f64, f64), identity: f64| {
            if !(lo.is_finite() && hi.is_finite() && lo <= identity && identity <= hi) {
                return Err(Error::Config(format!(
                    "{name} range [{lo}, {hi}] must be finite and contain {identity}"
                )));
            }
            Ok(())
        };
        if !(0.0..=10.0).contains(&self.rotation_max) {
            return Err(Error::Config(format!(
                "rotation_max must lie in [0, 10] degrees, got {}",
                self.rotation_max
            )));
        }
        check("zoom", self.zoom_range, 1.0)?;
        check("scale", self.scale_range, 1.0)?;
        check("intensity shift", self.intensity_shift_range, 0.0)?;
        check("lighting gamma", self.lighting_gamma_range, 1.0)?;
        if self.zoom_range.0 <= 0.0 || self.scale_range.0 <= 0.0 || self.lighting_gamma_range.0 <= 0.0 {
            return Err(Error::Config("multiplicative ranges must be positive".into()));
        }
        Ok(())
    }
}

/// Concrete transform parameters for one image; identity values mean "off".
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub zoom: f64,
    pub scale_x: f64,
    pub scale_y: f64,
    pub flip: bool,
    pub shift: f64,
    pub gamma: f64,
}

impl AugmentParams {
    pub const IDENTITY: Self = Self {
        rotation_deg: 0.0,
        zoom: 1.0,
        scale_x: 1.0,
        scale_y: 1.0,
        flip: false,
        shift: 0.0,
        gamma: 1.0,
    };

    pub fn is_geometric_identity(&self) -> bool {
        self.rotation_deg == 0.0 && self.zoom == 1.0 && self.scale_x == 1.0 && self.scale_y == 1.0
    }
}

fn draw_range<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

pub fn draw_params<R: Rng + ?Sized>(spec: &AugmentSpec, rng: &mut R) -> AugmentParams {
    let mut p = AugmentParams::IDENTITY;
    if spec.scaling {
        p.scale_x = draw_range(rng, spec.scale_range);
        p.scale_y = draw_range(rng, spec.scale_range);
    }
    if spec.horizontal_flip {
        p.flip = rng.random_bool(0.5);
    }
    if spec.rotation {
        p.rotation_deg = draw_range(rng, (-spec.rotation_max, spec.rotation_max));
    }
    if spec.zoom {
        p.zoom = draw_range(rng, spec.zoom_range);
    }
    if spec.intensity_shift {
        p.shift = draw_range(rng, spec.intensity_shift_range);
    }
    if spec.lighting {
        p.gamma = draw_range(rng, spec.lighting_gamma_range);
    }
    p
}

fn check_image(image: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    let &[h, w, c] = image.shape() else {
        return Err(Error::Shape(format!("expected an (h, w, c) image, got {:?}", image.shape())));
    };
    if let Some(v) = image.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("pixel value {v} outside [0, 1]")));
    }
    Ok((h, w, c))
}

/// Bilinear sample at fractional `(y, x)`, treating out-of-image pixels as 0.
fn sample(src: &[f32], (h, w, c): (usize, usize, usize), y: f64, x: f64, out: &mut [f32]) {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    out.fill(0.0);
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let (yy, xx) = (y0 as i64 + dy, x0 as i64 + dx);
            let wgt = wy * wx;
            if wgt == 0.0 || yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                continue;
            }
            let o = (yy as usize * w + xx as usize) * c;
            for (k, v) in out.iter_mut().enumerate() {
                *v += (wgt * f64::from(src[o + k])) as f32;
            }
        }
    }
}

/// Resamples `image` under rotation (degrees), isotropic zoom and
/// anisotropic scaling, all about the image center.
pub fn warp(image: &Tensor<f32>, rotation_deg: f64, zoom: f64, scale_x: f64, scale_y: f64) -> Result<Tensor<f32>> {
    let dims @ (h, w, c) = check_image(image)?;
    let (sin, cos) = rotation_deg.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (kx, ky) = (zoom * scale_x, zoom * scale_y);
    let mut out = vec![0.0f32; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let rx = cos * dx + sin * dy;
            let ry = -sin * dx + cos * dy;
            let o = (y * w + x) * c;
            sample(image.data(), dims, cy + ry / ky, cx + rx / kx, &mut out[o..o + c]);
        }
    }
    Tensor::new(image.shape(), out)
}

pub fn flip_horizontal(image: &Tensor<f32>) -> Result<Tensor<f32>> {
    let &[h, w, c] = image.shape() else {
        return Err(Error::Shape(format!("expected an (h, w, c) image, got {:?}", image.shape())));
    };
    let src = image.data();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in (0..w).rev() {
            let o = (y * w + x) * c;
            out.extend_from_slice(&src[o..o + c]);
        }
    }
    Tensor::new(image.shape(), out)
}

pub fn apply_params(image: &Tensor<f32>, p: &AugmentParams) -> Result<Tensor<f32>> {
    check_image(image)?;
    let mut out = if p.is_geometric_identity() {
        image.clone()
    } else {
        warp(image, p.rotation_deg, p.zoom, p.scale_x, p.scale_y)?
    };
    if p.flip {
        out = flip_horizontal(&out)?;
    }
    if p.shift != 0.0 || p.gamma != 1.0 {
        let (shift, gamma) = (p.shift as f32, p.gamma as f32);
        for v in out.data_mut() {
            let mut x = (*v + shift).clamp(0.0, 1.0);
            if gamma != 1.0 {
                x = x.powf(gamma);
            }
            *v = x;
        }
    }
    for v in out.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(out)
}

pub fn augment_image<R: Rng + ?Sized>(image: &Tensor<f32>, spec: &AugmentSpec, rng: &mut R) -> Result<Tensor<f32>> {
    let params = draw_params(spec, rng);
    apply_params(image, &params)
}

/// Generator for the augmentation of one item in one epoch.
pub fn item_rng(seed: u64, epoch: u64, item: usize) -> StreamRng {
    stream(seed, &[purpose::AUGMENT, epoch, item as u64])
}

/// One epoch of `(image, label)` pairs in the epoch's shuffled order, each
/// re-augmented from its own stream.
pub fn augmented_stream<'a>(
    dataset: &'a Dataset,
    spec: &'a AugmentSpec,
    epoch: u64,
) -> Result<impl Iterator<Item = Result<(Tensor<f32>, u8)>> + 'a> {
    if dataset.split != Split::Train {
        return Err(Error::Usage(format!(
            "augmentation applies to the training split only, got {:?}",
            dataset.split
        )));
    }
    spec.validate()?;
    let order = epoch_permutation(dataset.len(), spec.seed, epoch);
    Ok(order.into_iter().map(move |i| {
        let item = &dataset.items[i];
        let image = augment_item(item.image.clone(), spec, epoch, i)?;
        Ok((image, item.label))
    }))
}

/// Augments item `index` of the training set for `epoch`; a no-op when every
/// transform is disabled.
pub fn augment_item(image: Tensor<f32>, spec: &AugmentSpec, epoch: u64, index: usize) -> Result<Tensor<f32>> {
    if !spec.any_enabled() {
        return Ok(image);
    }
    debug_assert_eq!(image.shape(), IMAGE_SHAPE);
    augment_image(&image, spec, &mut item_rng(spec.seed, epoch, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_cross;

    fn smooth() -> Tensor<f32> {
        Tensor::from_fn(&IMAGE_SHAPE, |i| {
            let (y, x, c) = (i / 96, (i / 3) % 32, i % 3);
            let (dy, dx) = (y as f32 - 15.5, x as f32 - 15.5);
            (0.5 + 0.4 * (-(dy * dy + dx * dx) / 120.0).exp() * (1.0 - 0.2 * c as f32)).clamp(0.0, 1.0)
        })
    }

    #[test]
    fn disabled_is_identity() {
        let img = smooth();
        let out = augment_image(&img, &AugmentSpec::disabled(), &mut item_rng(1, 0, 0)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn flip_is_involution() {
        let img = smooth();
        assert_eq!(flip_horizontal(&flip_horizontal(&img).unwrap()).unwrap(), img);
        let f = flip_horizontal(&img).unwrap();
        assert_eq!(f.get(&[3, 0, 1]), img.get(&[3, 31, 1]));
    }

    #[test]
    fn identity_warp_reproduces_input() {
        let img = smooth();
        let out = warp(&img, 0.0, 1.0, 1.0, 1.0).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rotation_round_trip() {
        let img = smooth();
        let theta = draw_params(&AugmentSpec::default(), &mut item_rng(7, 0, 0)).rotation_deg;
        let there = warp(&img, theta, 1.0, 1.0, 1.0).unwrap();
        let back = warp(&there, -theta, 1.0, 1.0, 1.0).unwrap();
        // Corners rotate out of frame and come back zero-filled; only the
        // inscribed disc is free of that loss.
        let (mut err, mut count) = (0.0f32, 0usize);
        for i in 0..img.len() {
            let (y, x) = ((i / 96) as f32 - 15.5, ((i / 3) % 32) as f32 - 15.5);
            if y * y + x * x <= 15.0 * 15.0 {
                err += (back.data()[i] - img.data()[i]).abs();
                count += 1;
            }
        }
        let mae = err / count as f32;
        assert!(mae < 0.02, "mae {mae} at theta {theta}");
    }

    #[test]
    fn out_of_range_input_rejected() {
        let mut img = smooth();
        img.data_mut()[5] = 1.5;
        assert!(matches!(
            augment_image(&img, &AugmentSpec::default(), &mut item_rng(0, 0, 0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn output_stays_in_unit_range() {
        let img = smooth();
        for i in 0..50 {
            let out = augment_image(&img, &AugmentSpec::default(), &mut item_rng(3, 1, i)).unwrap();
            assert_eq!(out.shape(), IMAGE_SHAPE);
            assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn stream_rejects_non_training_split() {
        let d = synthetic_cross(4, 0, Split::Val);
        assert!(matches!(
            augmented_stream(&d, &AugmentSpec::default(), 0).map(|_| ()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn disabled_stream_is_shuffled_originals() {
        let d = synthetic_cross(6, 0, Split::Train);
        let spec = AugmentSpec::disabled();
        let order = epoch_permutation(6, spec.seed, 2);
        let got: Vec<_> = augmented_stream(&d, &spec, 2).unwrap().map(Result::unwrap).collect();
        for (k, (img, label)) in got.iter().enumerate() {
            assert_eq!(img, &d.items[order[k]].image);
            assert_eq!(*label, d.items[order[k]].label);
        }
    }

    #[test]
    fn validation_catches_bad_ranges() {
        let spec = AugmentSpec { rotation_max: 15.0, ..AugmentSpec::default() };
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        let spec = AugmentSpec { zoom_range: (1.05, 1.2), ..AugmentSpec::default() };
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        AugmentSpec::default().validate().unwrap();
    }
}
