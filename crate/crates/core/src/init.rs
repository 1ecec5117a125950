//! Slope-angle random initialization.
//!
//! Instead of drawing weights directly, each unit first draws the slope angle
//! of its activation, `alpha`, from `(-90, -alpha_min) U (alpha_min, 90)`
//! degrees. A random normal vector `w'_1..w'_n` fixes the orientation of the
//! activation's tangent hyperplane, and the rotation component follows from
//!
//! ```text
//! w'_0 = (-1)^c * ||w'|| / tan(alpha),   c ~ U{0, 1}
//! ```
//!
//! The weights are then
//!
//! ```text
//! omega_j = -4 * w'_j / w'_0,   j = 1..n
//! ```
//!
//! so `||omega|| = 4 |tan(alpha)|`: the slope angle alone sets the steepness.
//! With data alignment the bias places each unit's hyperplane through a
//! randomly chosen input patch `x*`: `bias = -<omega, x*>`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{Conv2d, Dense, Layer};
use crate::tensor::{Real, Tensor};

/// Normal vectors shorter than this are redrawn.
pub const MIN_NORMAL_NORM: f64 = 1e-12;
/// Slope angles with `|tan(alpha)|` above this are redrawn (`w'_0` would vanish).
pub const MAX_ABS_TAN: f64 = 1e8;

/// `(-90, -alpha_min) U (alpha_min, 90)` in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeInterval {
    alpha_min: f64,
}

impl Default for SlopeInterval {
    fn default() -> Self {
        Self { alpha_min: 30.0 }
    }
}

impl SlopeInterval {
    pub fn new(alpha_min_deg: f64) -> Result<Self> {
        if !(0.0..90.0).contains(&alpha_min_deg) {
            return Err(Error::Domain(format!(
                "alpha_min must lie in [0, 90) degrees, got {alpha_min_deg}"
            )));
        }
        Ok(Self {
            alpha_min: alpha_min_deg,
        })
    }

    pub fn alpha_min(&self) -> f64 {
        self.alpha_min
    }

    pub fn contains(&self, alpha_deg: f64) -> bool {
        let a = alpha_deg.abs();
        a > self.alpha_min && a < 90.0
    }
}

/// Draws `alpha` uniformly from the interval: `|alpha| ~ U(alpha_min, 90)`,
/// negated with probability one half.
pub fn sample_slope_angle<R: Rng + ?Sized>(interval: &SlopeInterval, rng: &mut R) -> f64 {
    let magnitude = loop {
        let u = rng.random_range(interval.alpha_min..90.0);
        if u > interval.alpha_min {
            break u;
        }
    };
    if rng.random::<bool>() {
        -magnitude
    } else {
        magnitude
    }
}

/// Rotation component `w'_0` for a given normal vector, slope and sign bit.
pub fn rotation_component(normal: &[f64], alpha_deg: f64, sign_c: u8) -> Result<f64> {
    if normal.is_empty() {
        return Err(Error::Domain("normal vector needs at least one component".into()));
    }
    if !(alpha_deg.abs() > 0.0 && alpha_deg.abs() < 90.0) {
        return Err(Error::Domain(format!(
            "slope angle must satisfy 0 < |alpha| < 90, got {alpha_deg}"
        )));
    }
    let norm = normal.iter().map(|w| w * w).sum::<f64>().sqrt();
    let sign = if sign_c.is_multiple_of(2) { 1.0 } else { -1.0 };
    Ok(sign * norm / alpha_deg.to_radians().tan())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RotatedNormal {
    pub normal: Vec<f64>,
    pub w0: f64,
    pub sign_c: u8,
}

/// Random hyperplane orientation: components i.i.d. `U(-1, 1)` (redrawn if
/// the vector is degenerate) and a fair sign bit.
pub fn rotate_normal<R: Rng + ?Sized>(
    n_dims: usize,
    alpha_deg: f64,
    rng: &mut R,
) -> Result<RotatedNormal> {
    if n_dims == 0 {
        return Err(Error::Domain("fan-in must be at least 1".into()));
    }
    let normal = loop {
        let v: Vec<f64> = (0..n_dims).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().map(|w| w * w).sum::<f64>().sqrt() >= MIN_NORMAL_NORM {
            break v;
        }
    };
    let sign_c = u8::from(rng.random::<bool>());
    let w0 = rotation_component(&normal, alpha_deg, sign_c)?;
    Ok(RotatedNormal { normal, w0, sign_c })
}

/// `omega_j = -4 * w'_j / w'_0`.
pub fn weights_from_normal(normal: &[f64], w0: f64) -> Result<Vec<f64>> {
    if w0 == 0.0 || !w0.is_finite() {
        return Err(Error::Singularity(format!(
            "rotation component w'_0 = {w0}; resample the slope angle"
        )));
    }
    Ok(normal.iter().map(|w| -4.0 * w / w0).collect())
}

/// Everything drawn and derived for one unit.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronInit {
    /// Degrees.
    pub alpha: f64,
    pub normal: Vec<f64>,
    pub w0: f64,
    pub sign_c: u8,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Input patch the hyperplane was aligned to, if any.
    pub anchor: Option<Vec<f64>>,
}

impl NeuronInit {
    pub fn normal_norm(&self) -> f64 {
        self.normal.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.weights.iter().fold(0.0, |m, w| m.max(w.abs()))
    }

    /// Relative residual of `w'_0 * tan(alpha) * (-1)^c == ||w'||`.
    pub fn rotation_residual(&self) -> f64 {
        let sign = if self.sign_c.is_multiple_of(2) { 1.0 } else { -1.0 };
        let lhs = self.w0 * self.alpha.to_radians().tan() * sign;
        let norm = self.normal_norm();
        (lhs - norm).abs() / norm
    }

    /// Largest relative residual of `omega_j * w'_0 == -4 * w'_j`.
    pub fn weight_residual(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.normal)
            .map(|(w, n)| {
                let rhs = -4.0 * n;
                let scale = rhs.abs().max(f64::MIN_POSITIVE);
                (w * self.w0 - rhs).abs() / scale
            })
            .fold(0.0, f64::max)
    }

    /// `<omega, x*> + bias` evaluated in the order the bias was computed.
    pub fn response_at_anchor(&self) -> Option<f64> {
        self.anchor
            .as_ref()
            .map(|x| dot(&self.weights, x) + self.bias)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// Raw per-unit draw: slope, normal vector and sign bit.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitDraw {
    pub alpha: f64,
    pub normal: Vec<f64>,
    pub sign_c: u8,
}

/// Supplies per-unit draws and anchor picks to [`eri_init_layer_with`].
pub trait UnitSource {
    fn draw(&mut self, fan_in: usize) -> Result<UnitDraw>;
    /// Index of the anchor patch among `count` candidates.
    fn pick_anchor(&mut self, count: usize) -> usize;
}

/// The random source: slope from the interval, `U(-1, 1)` normal, fair sign,
/// with the near-vertical slope guard applied.
pub struct RandomUnits<'a, R: Rng + ?Sized> {
    pub interval: SlopeInterval,
    pub rng: &'a mut R,
}

impl<R: Rng + ?Sized> UnitSource for RandomUnits<'_, R> {
    fn draw(&mut self, fan_in: usize) -> Result<UnitDraw> {
        let alpha = loop {
            let a = sample_slope_angle(&self.interval, self.rng);
            if a.to_radians().tan().abs() <= MAX_ABS_TAN {
                break a;
            }
        };
        let rotated = rotate_normal(fan_in, alpha, self.rng)?;
        Ok(UnitDraw {
            alpha,
            normal: rotated.normal,
            sign_c: rotated.sign_c,
        })
    }

    fn pick_anchor(&mut self, count: usize) -> usize {
        self.rng.random_range(0..count)
    }
}

fn neuron_from_draw(draw: UnitDraw) -> Result<NeuronInit> {
    let w0 = rotation_component(&draw.normal, draw.alpha, draw.sign_c)?;
    let weights = weights_from_normal(&draw.normal, w0)?;
    Ok(NeuronInit {
        alpha: draw.alpha,
        normal: draw.normal,
        w0,
        sign_c: draw.sign_c,
        weights,
        bias: 0.0,
        anchor: None,
    })
}

/// One unaligned unit with `fan_in` inputs.
pub fn sample_neuron<R: Rng + ?Sized>(
    fan_in: usize,
    interval: &SlopeInterval,
    rng: &mut R,
) -> Result<NeuronInit> {
    let draw = RandomUnits { interval: *interval, rng }.draw(fan_in)?;
    neuron_from_draw(draw)
}

/// A layer whose units can be initialized one at a time.
pub trait InitTarget<T: Real> {
    fn fan_in(&self) -> usize;
    fn units(&self) -> usize;
    fn set_unit(&mut self, unit: usize, weights: &[f64], bias: f64);
    /// Number of distinct fan-in-shaped patches available in `data`.
    fn anchor_count(&self, data: &Tensor<T>) -> Result<usize>;
    fn anchor_patch(&self, data: &Tensor<T>, index: usize) -> Result<Vec<f64>>;
}

impl<T: Real> InitTarget<T> for Conv2d<T> {
    fn fan_in(&self) -> usize {
        Conv2d::fan_in(self)
    }

    fn units(&self) -> usize {
        self.out_channels()
    }

    /// Column `unit` of the `[kh * kw * cin, cout]` filter matrix.
    fn set_unit(&mut self, unit: usize, weights: &[f64], bias: f64) {
        let cout = self.out_channels();
        let f = self.filters_mut().data_mut();
        for (k, &w) in weights.iter().enumerate() {
            f[k * cout + unit] = T::from_f64_lossy(w);
        }
        self.bias_mut().data_mut()[unit] = T::from_f64_lossy(bias);
    }

    fn anchor_count(&self, data: &Tensor<T>) -> Result<usize> {
        let (n, h, w, c, _) = crate::layers::image_batch_dims(data.shape())?;
        Ok(n * self.geometry(h, w, c)?.rows())
    }

    fn anchor_patch(&self, data: &Tensor<T>, index: usize) -> Result<Vec<f64>> {
        let (_, h, w, c, _) = crate::layers::image_batch_dims(data.shape())?;
        let geom = self.geometry(h, w, c)?;
        let (sample, row) = (index / geom.rows(), index % geom.rows());
        let img = data
            .data()
            .chunks_exact(geom.image_len())
            .nth(sample)
            .ok_or_else(|| Error::Shape(format!("anchor index {index} out of range")))?;
        Ok(geom.patch_at(img, row).into_iter().map(Real::as_f64).collect())
    }
}

impl<T: Real> InitTarget<T> for Dense<T> {
    fn fan_in(&self) -> usize {
        self.inputs()
    }

    fn units(&self) -> usize {
        self.outputs()
    }

    fn set_unit(&mut self, unit: usize, weights: &[f64], bias: f64) {
        let out = self.outputs();
        let wm = self.weights_mut().data_mut();
        for (i, &w) in weights.iter().enumerate() {
            wm[i * out + unit] = T::from_f64_lossy(w);
        }
        self.bias_mut().data_mut()[unit] = T::from_f64_lossy(bias);
    }

    fn anchor_count(&self, data: &Tensor<T>) -> Result<usize> {
        let width = self.inputs();
        if !data.len().is_multiple_of(width) || data.shape().last() != Some(&width) {
            return Err(Error::Shape(format!(
                "anchor data {:?} does not have {width} features",
                data.shape()
            )));
        }
        Ok(data.len() / width)
    }

    fn anchor_patch(&self, data: &Tensor<T>, index: usize) -> Result<Vec<f64>> {
        data.data()
            .chunks_exact(self.inputs())
            .nth(index)
            .map(|row| row.iter().map(|v| v.as_f64()).collect())
            .ok_or_else(|| Error::Shape(format!("anchor index {index} out of range")))
    }
}

/// Slope-angle initialization of every unit in `layer`.
///
/// With `data_sample` (a batch of the layer's inputs) each unit's bias puts
/// its hyperplane through a patch drawn uniformly from the batch; without it
/// biases are zero.
pub fn eri_init_layer<T, L, R>(
    layer: &mut L,
    interval: &SlopeInterval,
    data_sample: Option<&Tensor<T>>,
    rng: &mut R,
) -> Result<Vec<NeuronInit>>
where
    T: Real,
    L: InitTarget<T>,
    R: Rng + ?Sized,
{
    let mut source = RandomUnits {
        interval: *interval,
        rng,
    };
    eri_init_layer_with(layer, &mut source, data_sample)
}

/// As [`eri_init_layer`] with an explicit unit source.
pub fn eri_init_layer_with<T, L, S>(
    layer: &mut L,
    source: &mut S,
    data_sample: Option<&Tensor<T>>,
) -> Result<Vec<NeuronInit>>
where
    T: Real,
    L: InitTarget<T>,
    S: UnitSource + ?Sized,
{
    let fan_in = layer.fan_in();
    if fan_in == 0 {
        return Err(Error::Domain("fan-in must be at least 1".into()));
    }
    let anchors = match data_sample {
        Some(d) => Some((d, checked_anchor_count(layer, d)?)),
        None => None,
    };
    let mut units = Vec::with_capacity(layer.units());
    for unit in 0..layer.units() {
        let draw = source.draw(fan_in)?;
        let anchor = anchors.map(|(d, count)| (d, source.pick_anchor(count)));
        units.push(finish_unit(layer, unit, draw, anchor)?);
    }
    Ok(units)
}

fn checked_anchor_count<T: Real, L: InitTarget<T>>(layer: &L, data: &Tensor<T>) -> Result<usize> {
    let count = layer.anchor_count(data)?;
    if count == 0 {
        return Err(Error::Domain("data alignment needs a nonempty data sample".into()));
    }
    Ok(count)
}

fn finish_unit<T: Real, L: InitTarget<T>>(
    layer: &mut L,
    unit: usize,
    draw: UnitDraw,
    anchor: Option<(&Tensor<T>, usize)>,
) -> Result<NeuronInit> {
    if draw.normal.len() != layer.fan_in() {
        return Err(Error::Shape(format!(
            "unit draw has {} components, layer fan-in is {}",
            draw.normal.len(),
            layer.fan_in()
        )));
    }
    let mut neuron = neuron_from_draw(draw)?;
    if let Some((d, i)) = anchor {
        let anchor = layer.anchor_patch(d, i)?;
        neuron.bias = -dot(&neuron.weights, &anchor);
        neuron.anchor = Some(anchor);
    }
    layer.set_unit(unit, &neuron.weights, neuron.bias);
    Ok(neuron)
}

/// Control scheme: weights `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero bias.
pub fn baseline_init_layer<T, L, R>(layer: &mut L, rng: &mut R) -> Result<()>
where
    T: Real,
    L: InitTarget<T>,
    R: Rng + ?Sized,
{
    let fan_in = layer.fan_in();
    if fan_in == 0 {
        return Err(Error::Domain("fan-in must be at least 1".into()));
    }
    let bound = 1.0 / (fan_in as f64).sqrt();
    for unit in 0..layer.units() {
        let w: Vec<f64> = (0..fan_in).map(|_| rng.random_range(-bound..=bound)).collect();
        layer.set_unit(unit, &w, 0.0);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InitScheme {
    #[default]
    Eri,
    Baseline,
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitScheme::Eri => "eri",
            InitScheme::Baseline => "baseline",
        })
    }
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eri" => Ok(InitScheme::Eri),
            "baseline" | "uniform-fanin" => Ok(InitScheme::Baseline),
            other => Err(Error::Config(format!("unknown init scheme `{other}`"))),
        }
    }
}

/// Initializes a trainable layer in place; other layers are left untouched.
pub(crate) fn init_any_layer<T: Real, R: Rng + ?Sized>(
    layer: &mut Layer<T>,
    scheme: InitScheme,
    interval: &SlopeInterval,
    data_sample: Option<&Tensor<T>>,
    rng: &mut R,
) -> Result<Vec<NeuronInit>> {
    match (layer, scheme) {
        (Layer::Conv(c), InitScheme::Eri) => eri_init_layer(c, interval, data_sample, rng),
        (Layer::Dense(d), InitScheme::Eri) => eri_init_layer(d, interval, data_sample, rng),
        (Layer::Conv(c), InitScheme::Baseline) => baseline_init_layer(c, rng).map(|_| Vec::new()),
        (Layer::Dense(d), InitScheme::Baseline) => baseline_init_layer(d, rng).map(|_| Vec::new()),
        _ => Ok(Vec::new()),
    }
}
