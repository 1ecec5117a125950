//! The classifier network, its training loop, evaluation and weight files.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use log::info;
use rand::seq::index::sample;

use crate::augment::{augment_item, AugmentSpec};
use crate::data::{stack_images, Dataset, Split, IMAGE_SHAPE};
use crate::error::{Error, Result};
use crate::init::{init_any_layer, InitScheme, NeuronInit, SlopeInterval};
use crate::layers::{sigmoid_scalar, Layer, LayerSpec, ParamGrads};
use crate::metrics::{bce_loss, compute_metrics, MetricsReport, DEFAULT_THRESHOLD};
use crate::optim::{Adam, AdamConfig, ParamSlot};
use crate::rng::{purpose, stream};
use crate::tensor::{Real, Tensor};

/// Images fed per forward pass during validation and evaluation.
const EVAL_CHUNK: usize = 64;
/// Training images whose activations supply alignment anchors.
pub const DEFAULT_ANCHOR_IMAGES: usize = 64;

/// The classifier: four same-padded convolution blocks, each ending in 2x2
/// max pooling, then a 128-unit hidden layer and a sigmoid output unit.
pub fn eri_cnn_layers() -> Vec<LayerSpec> {
    use LayerSpec::*;
    let conv = |kernel, filters| [Conv { kernel, filters }, Relu];
    let mut v = Vec::new();
    v.extend(conv(2, 16));
    v.push(MaxPool);
    for _ in 0..2 {
        v.extend(conv(2, 32));
    }
    v.push(MaxPool);
    for _ in 0..3 {
        v.extend(conv(3, 64));
    }
    v.push(MaxPool);
    for _ in 0..3 {
        v.extend(conv(3, 128));
    }
    v.push(MaxPool);
    v.extend([Flatten, Dense { units: 128 }, Relu, Dense { units: 1 }, Sigmoid]);
    v
}

#[derive(Clone, Debug)]
pub struct Network<T: Real = f32> {
    input_shape: Vec<usize>,
    specs: Vec<LayerSpec>,
    layers: Vec<Layer<T>>,
    /// Per-sample output shape of each layer.
    shapes: Vec<Vec<usize>>,
    /// `conv3`, `fc1`, ... for trainable layers.
    names: Vec<Option<String>>,
    grads: Vec<Option<ParamGrads<T>>>,
}

impl<T: Real> Network<T> {
    /// Zero-initialized network for a per-sample `input_shape`.
    pub fn new(input_shape: &[usize], specs: &[LayerSpec]) -> Result<Self> {
        let mut shape = input_shape.to_vec();
        let (mut layers, mut shapes, mut names) = (Vec::new(), Vec::new(), Vec::new());
        let (mut convs, mut denses) = (0, 0);
        for &spec in specs {
            let (layer, out) = Layer::from_spec(spec, &shape)?;
            names.push(match layer {
                Layer::Conv(_) => {
                    convs += 1;
                    Some(format!("conv{convs}"))
                }
                Layer::Dense(_) => {
                    denses += 1;
                    Some(format!("fc{denses}"))
                }
                _ => None,
            });
            layers.push(layer);
            shapes.push(out.clone());
            shape = out;
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            specs: specs.to_vec(),
            grads: vec![None; layers.len()],
            layers,
            shapes,
            names,
        })
    }

    /// The 32x32x3 classifier with zero parameters.
    pub fn eri_cnn() -> Self {
        Self::new(&IMAGE_SHAPE, &eri_cnn_layers()).expect("fixed architecture is consistent")
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().map_or(&self.input_shape, Vec::as_slice)
    }

    /// `(layer kind, per-sample output shape)` for each layer.
    pub fn shape_trace(&self) -> Vec<(&'static str, Vec<usize>)> {
        self.layers.iter().map(Layer::kind).zip(self.shapes.iter().cloned()).collect()
    }

    /// Named parameter tensors, e.g. `conv1.filters`, `fc2.bias`.
    pub fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .zip(&self.names)
            .filter_map(|(l, n)| n.as_ref().map(|n| (l, n)))
            .flat_map(|(l, n)| l.params().into_iter().map(move |(s, t)| (format!("{n}.{s}"), t)))
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (l, n) in self.layers.iter_mut().zip(&self.names) {
            if let Some(n) = n {
                let suffixes: Vec<_> = l.params().into_iter().map(|(s, _)| s).collect();
                for (s, t) in suffixes.into_iter().zip(l.params_mut()) {
                    out.push((format!("{n}.{s}"), t));
                }
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }

    /// Gradients from the last [`Network::backward_logits`], named like
    /// [`Network::parameters`].
    pub fn gradients(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for ((l, n), g) in self.layers.iter().zip(&self.names).zip(&self.grads) {
            if let (Some(n), Some(g)) = (n, g) {
                for ((s, _), t) in l.params().into_iter().zip(g.iter()) {
                    out.push((format!("{n}.{s}"), t));
                }
            }
        }
        out
    }

    /// Initializes every trainable layer with `scheme`. For the slope-angle
    /// scheme with `anchors` (a batch of inputs), each layer's biases are
    /// aligned to patches of that batch as seen at the layer's input, using
    /// the already-initialized layers below it.
    pub fn initialize(
        &mut self,
        scheme: InitScheme,
        interval: &SlopeInterval,
        anchors: Option<&Tensor<T>>,
        seed: u64,
    ) -> Result<Vec<Vec<NeuronInit>>> {
        let mut current = anchors.cloned();
        let mut record = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if layer.is_trainable() {
                let mut rng = stream(seed, &[purpose::INIT, i as u64]);
                let sample = if scheme == InitScheme::Eri { current.as_ref() } else { None };
                record.push(init_any_layer(layer, scheme, interval, sample, &mut rng)?);
            }
            if let Some(x) = current.take() {
                current = Some(layer.infer(&x)?);
            }
        }
        Ok(record)
    }

    fn logit_layers(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Sigmoid(_)) => self.layers.len() - 1,
            _ => self.layers.len(),
        }
    }

    /// Training forward pass up to the pre-sigmoid output; caches state for
    /// [`Network::backward_logits`].
    pub fn forward_logits(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let end = self.logit_layers();
        let mut h = x.clone();
        for layer in &mut self.layers[..end] {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    /// Pure pre-sigmoid output.
    pub fn predict_logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for layer in &self.layers[..self.logit_layers()] {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    /// Pure full output (probabilities for the classifier).
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = self.predict_logits(x)?;
        for layer in &self.layers[self.logit_layers()..] {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    /// Backpropagates `dlogits` (gradient of the loss with respect to the
    /// pre-sigmoid output) and stores parameter gradients. Returns the
    /// gradient with respect to the input.
    pub fn backward_logits(&mut self, dlogits: &Tensor<T>) -> Result<Tensor<T>> {
        let end = self.logit_layers();
        let mut g = dlogits.clone();
        for i in (0..end).rev() {
            let (dx, pg) = self.layers[i].backward(&g)?;
            self.grads[i] = pg;
            g = dx;
        }
        Ok(g)
    }

    /// Applies one optimizer step with the stored gradients.
    pub fn apply_gradients(&mut self, adam: &mut Adam<T>) -> Result<()> {
        let mut slots = Vec::new();
        for ((layer, name), grads) in self.layers.iter_mut().zip(&self.names).zip(&self.grads) {
            let Some(name) = name else { continue };
            let Some(grads) = grads else {
                return Err(Error::State(format!("{name} has no gradient; run backward first")));
            };
            for ((value, grad), suffix) in layer.params_mut().into_iter().zip(grads.iter()).zip(["0", "1"]) {
                slots.push(ParamSlot {
                    name: format!("{name}.{suffix}"),
                    value,
                    grad,
                });
            }
        }
        adam.step(&mut slots)
    }

    pub fn clear_caches(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
        self.grads.iter_mut().for_each(|g| *g = None);
    }
}

/// Picks up to `count` training images (seeded) as alignment anchors.
pub fn anchor_batch(train: &Dataset, count: usize, seed: u64) -> Result<Tensor<f32>> {
    if train.is_empty() || count == 0 {
        return Err(Error::Domain("data alignment needs at least one training image".into()));
    }
    let n = count.min(train.len());
    let mut idx = sample(&mut stream(seed, &[purpose::ANCHORS]), train.len(), n).into_vec();
    idx.sort_unstable();
    train.stack(&idx)
}

/// The classifier initialized with `scheme`; slope-angle biases are aligned
/// to anchors drawn from `train`.
pub fn build_eri_cnn(
    scheme: InitScheme,
    interval: &SlopeInterval,
    train: &Dataset,
    seed: u64,
) -> Result<Network<f32>> {
    build_network(scheme, interval, train, DEFAULT_ANCHOR_IMAGES, seed)
}

/// As [`build_eri_cnn`] with `align_images` anchor images; 0 leaves the
/// slope-angle biases at zero.
pub fn build_network(
    scheme: InitScheme,
    interval: &SlopeInterval,
    train: &Dataset,
    align_images: usize,
    seed: u64,
) -> Result<Network<f32>> {
    let mut net = Network::eri_cnn();
    let anchors = match scheme {
        InitScheme::Eri if align_images > 0 => Some(anchor_batch(train, align_images, seed)?),
        _ => None,
    };
    net.initialize(scheme, interval, anchors.as_ref(), seed)?;
    Ok(net)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Applied to training batches only; disable every transform for none.
    pub augment: AugmentSpec,
    /// Batch order seed.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: crate::data::DEFAULT_BATCH_SIZE,
            adam: AdamConfig::default(),
            augment: AugmentSpec::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub history: Vec<EpochStats>,
    pub duration: Duration,
}

impl TrainRun {
    /// Epoch with the highest validation accuracy (earliest on ties).
    pub fn best_epoch(&self) -> Option<&EpochStats> {
        self.history
            .iter()
            .fold(None, |best: Option<&EpochStats>, e| match best {
                Some(b) if b.val_acc >= e.val_acc => Some(b),
                _ => Some(e),
            })
    }

    pub fn final_epoch(&self) -> Option<&EpochStats> {
        self.history.last()
    }

    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for e in &self.history {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc
            );
        }
        s
    }
}

fn with_context(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch}, batch {batch}: {m}")),
        other => other,
    }
}

/// Mean loss and accuracy over `data` without augmentation.
fn score(net: &Network<f32>, data: &Dataset) -> Result<(f64, f64)> {
    let probs = predict_dataset(net, data)?;
    let (mut loss, mut correct) = (0.0, 0usize);
    for (p, item) in probs.iter().zip(&data.items) {
        loss += bce_loss(*p, item.label);
        correct += usize::from((*p >= DEFAULT_THRESHOLD) == (item.label == 1));
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Output probabilities for every item, in dataset order.
pub fn predict_dataset(net: &Network<f32>, data: &Dataset) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let logits = net.predict_logits(&data.stack(chunk)?)?.ensure_finite("network output")?;
        out.extend(logits.data().iter().map(|&z| sigmoid_scalar(f64::from(z))));
    }
    Ok(out)
}

/// Mini-batch Adam on binary cross-entropy with per-epoch validation.
pub fn train(net: &mut Network<f32>, train: &Dataset, val: &Dataset, config: &TrainConfig) -> Result<TrainRun> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Domain("training and validation sets must be nonempty".into()));
    }
    if train.split != Split::Train {
        return Err(Error::Usage(format!("expected the training split, got {:?}", train.split)));
    }
    let seen: HashSet<_> = train.items.iter().map(|i| &i.path).collect();
    if let Some(dup) = val.items.iter().find(|i| seen.contains(&i.path)) {
        return Err(Error::Usage(format!(
            "{} appears in both training and validation sets",
            dup.path.display()
        )));
    }
    config.augment.validate()?;

    let start = Instant::now();
    let mut adam = Adam::new(config.adam);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let order = crate::data::batch_order(train.len(), config.batch_size, config.seed, epoch as u64)?;
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, indices) in order.iter().enumerate() {
            let images = indices
                .iter()
                .map(|&i| augment_item(train.items[i].image.clone(), &config.augment, epoch as u64, i))
                .collect::<Result<Vec<_>>>()?;
            let x = stack_images(&images)?;
            let logits = net.forward_logits(&x).map_err(|e| with_context(e, epoch, b))?;
            let scale = 1.0 / indices.len() as f64;
            let mut dlogits = Vec::with_capacity(indices.len());
            for (&z, &i) in logits.data().iter().zip(indices) {
                let label = train.items[i].label;
                let p = sigmoid_scalar(f64::from(z));
                let l = bce_loss(p, label);
                if !l.is_finite() {
                    return Err(Error::NonFinite(format!("epoch {epoch}, batch {b}: loss is {l}")));
                }
                loss_sum += l;
                correct += usize::from((p >= DEFAULT_THRESHOLD) == (label == 1));
                dlogits.push(((p - f64::from(label)) * scale) as f32);
            }
            net.backward_logits(&Tensor::new(logits.shape(), dlogits)?)
                .map_err(|e| with_context(e, epoch, b))?;
            net.apply_gradients(&mut adam).map_err(|e| with_context(e, epoch, b))?;
        }
        net.clear_caches();
        let (val_loss, val_acc) = score(net, val)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_loss,
            val_acc,
        };
        info!(
            "epoch {epoch}: train loss {:.4} acc {:.4}, val loss {:.4} acc {:.4}",
            stats.train_loss, stats.train_acc, stats.val_loss, stats.val_acc
        );
        history.push(stats);
    }
    Ok(TrainRun {
        history,
        duration: start.elapsed(),
    })
}

/// Thresholded metrics over a held-out set; never augments or mutates.
pub fn evaluate(net: &Network<f32>, test: &Dataset) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::Domain("test set is empty".into()));
    }
    let probs = predict_dataset(net, test)?;
    compute_metrics(&probs, &test.labels(), DEFAULT_THRESHOLD)
}

pub const WEIGHTS_MAGIC: &[u8; 8] = b"ERICNN01";

/// Serializes every parameter tensor of `net`.
///
/// Layout, little-endian: magic, `u32` record count, then per record a `u16`
/// name length, the name, `u8` rank, `u32` dims and `f32` data; finally a
/// `u64` wrapping sum of all data bytes.
pub fn encode_weights(net: &Network<f32>) -> Result<Vec<u8>> {
    let params = net.parameters();
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&u32::try_from(params.len()).map_err(|_| Error::Format("too many tensors".into()))?.to_le_bytes());
    let mut checksum = 0u64;
    for (name, t) in params {
        let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("{name}: name too long")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(u8::try_from(t.rank()).map_err(|_| Error::Format(format!("{name}: rank too large")))?);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Format(format!("{name}: dimension too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            for byte in v.to_le_bytes() {
                checksum = checksum.wrapping_add(u64::from(byte));
                out.push(byte);
            }
        }
    }
    out.extend_from_slice(&checksum.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("{what}: file truncated at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }
}

/// Decodes a weight file into a copy of `template`. Every record must match a
/// parameter of the template by name and shape; nothing is returned unless
/// the whole file validates.
pub fn decode_weights(bytes: &[u8], template: &Network<f32>) -> Result<Network<f32>> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8, "header")? != WEIGHTS_MAGIC {
        return Err(Error::Format("header: bad magic, not a weight file".into()));
    }
    let count = u32::from_le_bytes(c.array("header")?) as usize;
    let mut net = template.clone();
    net.clear_caches();
    let expected = net.parameters().len();
    if count != expected {
        return Err(Error::Format(format!("header: {count} records, network has {expected}")));
    }
    let mut checksum = 0u64;
    {
        let mut params = net.parameters_mut();
        for (k, (name, tensor)) in params.iter_mut().enumerate() {
            let what = format!("record {k}");
            let len = u16::from_le_bytes(c.array(&what)?) as usize;
            let got = String::from_utf8(c.take(len, &what)?.to_vec())
                .map_err(|_| Error::Format(format!("{what}: name is not UTF-8")))?;
            if &got != name {
                return Err(Error::Format(format!("{what} ({got}): expected {name}")));
            }
            let what = format!("record {k} ({name})");
            let rank = c.take(1, &what)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(c.array(&what)?) as usize);
            }
            if shape != tensor.shape() {
                return Err(Error::Format(format!(
                    "{what}: shape {shape:?}, expected {:?}",
                    tensor.shape()
                )));
            }
            let raw = c.take(tensor.len() * 4, &what)?;
            checksum = raw.iter().fold(checksum, |s, &b| s.wrapping_add(u64::from(b)));
            for (v, chunk) in tensor.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
            }
        }
    }
    let stored = u64::from_le_bytes(c.array("checksum")?);
    if stored != checksum {
        return Err(Error::Format(format!("checksum: stored {stored}, computed {checksum}")));
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!("trailer: {} unexpected bytes", bytes.len() - c.pos)));
    }
    Ok(net)
}

pub fn write_weights<W: Write>(net: &Network<f32>, mut w: W) -> Result<()> {
    w.write_all(&encode_weights(net)?)
        .map_err(|e| Error::io("writing weights", e))
}

pub fn read_weights<R: Read>(mut r: R, template: &Network<f32>) -> Result<Network<f32>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| Error::io("reading weights", e))?;
    decode_weights(&buf, template)
}

pub fn save_weights(net: &Network<f32>, path: &Path) -> Result<()> {
    fs::write(path, encode_weights(net)?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Loads a weight file for the standard classifier.
pub fn load_weights(path: &Path) -> Result<Network<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_weights(&bytes, &Network::eri_cnn())
}

/// Wrapping byte sum of all parameter data, as stored in the weight file.
pub fn weights_checksum(net: &Network<f32>) -> u64 {
    net.parameters()
        .iter()
        .flat_map(|(_, t)| t.data().iter().flat_map(|v| v.to_le_bytes()))
        .fold(0u64, |s, b| s.wrapping_add(u64::from(b)))
}
