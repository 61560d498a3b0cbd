//! The activity network: smoothing and discretization, a shared embedding
//! table, `conv1d -> ReLU -> max-pool -> dropout` blocks and a dense
//! classification layer trained with softmax cross-entropy.

mod checkpoint;

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes, MAGIC, VERSION};

use crate::error::{HarError, Result};
use crate::layers::{
    accumulate_embedding_grad, conv1d_backward_impl, conv1d_forward, dense_backward, dense_forward, dropout,
    dropout_backward, embedding_forward, maxpool1d_with_argmax, relu, relu_backward, route_to_argmax,
    softmax_cross_entropy, DropoutMask, Mode,
};
use crate::optim::{AdamConfig, OptimizerState};
use crate::rng::{seeded, HarRng};
use crate::signal::{
    discretize, fit_discretizer, smooth_channels, validate_label_set, ActivityLabel, DiscretizerSpec,
    SegmentTensor,
};
use crate::tensor::{Parameter, Tensor};

pub const EMBEDDING: &str = "embedding";
pub const CLASSIFIER_WEIGHT: &str = "classifier.weight";
pub const CLASSIFIER_BIAS: &str = "classifier.bias";

/// One `conv -> ReLU -> pool -> dropout` stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlock {
    pub filters: usize,
    pub kernel: usize,
    pub pool: usize,
    pub dropout: f64,
}

impl ConvBlock {
    pub fn new(filters: usize, kernel: usize, pool: usize, dropout: f64) -> Self {
        ConvBlock {
            filters,
            kernel,
            pool,
            dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub window: usize,
    pub bins: usize,
    pub embedding_dim: usize,
    pub blocks: Vec<ConvBlock>,
    pub classes: usize,
    pub smooth_width: usize,
    pub clip_percentiles: (f64, f64),
    pub optimizer: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl NetworkConfig {
    /// Default architecture for the given input geometry: 16 bins, 8-dim
    /// embedding, two blocks `(32, 5, 2, 0.5)` and `(64, 5, 2, 0.5)`,
    /// 50 epochs of batch 32.
    pub fn new(input_channels: usize, window: usize, classes: usize) -> Self {
        NetworkConfig {
            input_channels,
            window,
            bins: 16,
            embedding_dim: 8,
            blocks: Self::default_blocks(),
            classes,
            smooth_width: 3,
            clip_percentiles: (1.0, 99.0),
            optimizer: AdamConfig::default(),
            epochs: 50,
            batch_size: 32,
            seed: 0,
        }
    }

    pub fn default_blocks() -> Vec<ConvBlock> {
        vec![ConvBlock::new(32, 5, 2, 0.5), ConvBlock::new(64, 5, 2, 0.5)]
    }

    /// Signal length at every stage: the window, then after each conv and
    /// each pool in turn.
    pub fn stage_lengths(&self) -> Result<Vec<usize>> {
        let mut lengths = vec![self.window];
        let mut len = self.window;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.kernel == 0 || b.kernel > len {
                return Err(HarError::Config(format!(
                    "block {i}: kernel size {} does not fit input length {len}",
                    b.kernel
                )));
            }
            len = len - b.kernel + 1;
            lengths.push(len);
            if b.pool == 0 || b.pool > len {
                return Err(HarError::Config(format!(
                    "block {i}: pool size {} does not fit conv output length {len}",
                    b.pool
                )));
            }
            len /= b.pool;
            lengths.push(len);
        }
        Ok(lengths)
    }

    /// Length of the flattened vector fed to the classification layer.
    pub fn feature_len(&self) -> Result<usize> {
        let len = *self.stage_lengths()?.last().expect("non-empty");
        let channels = self
            .blocks
            .last()
            .map_or(self.input_channels * self.embedding_dim, |b| b.filters);
        Ok(channels * len)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(HarError::Config(msg));
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.embedding_dim < 1 {
            return fail("embedding_dim must be at least 1".into());
        }
        if self.bins < 2 {
            return fail(format!("need at least 2 bins, got {}", self.bins));
        }
        if self.input_channels == 0 || self.window == 0 {
            return fail("input channels and window must be positive".into());
        }
        if self.smooth_width % 2 == 0 || self.smooth_width > self.window {
            return fail(format!(
                "smooth_width must be odd and at most the window, got {}",
                self.smooth_width
            ));
        }
        let (lo, hi) = self.clip_percentiles;
        if !(0.0 <= lo && lo < hi && hi <= 100.0) {
            return fail(format!(
                "clip_percentiles must satisfy 0 <= lo < hi <= 100, got ({lo}, {hi})"
            ));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.filters == 0 {
                return fail(format!("block {i}: filters must be positive"));
            }
            if !(0.0..1.0).contains(&b.dropout) {
                return fail(format!("block {i}: dropout must be in [0, 1), got {}", b.dropout));
            }
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        self.optimizer.validate()?;
        self.stage_lengths()?;
        Ok(())
    }

    /// Parameter names and shapes in model order.
    pub fn parameter_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        self.validate()?;
        let mut shapes = vec![(EMBEDDING.to_string(), vec![self.bins, self.embedding_dim])];
        let mut in_ch = self.input_channels * self.embedding_dim;
        for (i, b) in self.blocks.iter().enumerate() {
            shapes.push((format!("conv{i}.kernels"), vec![b.filters, in_ch, b.kernel]));
            shapes.push((format!("conv{i}.bias"), vec![b.filters]));
            in_ch = b.filters;
        }
        let features = self.feature_len()?;
        shapes.push((CLASSIFIER_WEIGHT.to_string(), vec![self.classes, features]));
        shapes.push((CLASSIFIER_BIAS.to_string(), vec![self.classes]));
        Ok(shapes)
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    /// Mean loss of the first mini-batch, measured before any update.
    pub initial_loss: Option<f64>,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

pub fn is_classifier_param(name: &str) -> bool {
    name == CLASSIFIER_WEIGHT || name == CLASSIFIER_BIAS
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: NetworkConfig,
    pub parameters: Vec<Parameter>,
    pub discretizer: DiscretizerSpec,
    pub labels: Vec<ActivityLabel>,
}

/// Builds an untrained network.
///
/// The embedding table and conv kernels are Glorot-uniform; biases and the
/// whole classification layer start at zero, so every class initially gets
/// the same score. The discretizer defaults to `[-1, 1]` on every channel
/// until [`TrainedModel::fit_discretizer`] is called, and labels default to
/// `class_0 .. class_{M-1}`.
pub fn build_network<R: Rng + ?Sized>(config: &NetworkConfig, rng: &mut R) -> Result<TrainedModel> {
    let shapes = config.parameter_shapes()?;
    let parameters = shapes
        .into_iter()
        .map(|(name, shape)| {
            let n: usize = shape.iter().product();
            let values = if name == EMBEDDING {
                glorot(rng, n, shape[0], shape[1])
            } else if name.ends_with(".kernels") {
                let (f, c, k) = (shape[0], shape[1], shape[2]);
                glorot(rng, n, c * k, f * k)
            } else {
                vec![0.0; n]
            };
            Ok(Parameter::new(name, Tensor::new(&shape, values)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainedModel {
        config: config.clone(),
        parameters,
        discretizer: DiscretizerSpec::uniform(config.input_channels, config.bins, -1.0, 1.0),
        labels: (0..config.classes)
            .map(|i| ActivityLabel::new(i, format!("class_{i}")))
            .collect(),
    })
}

fn glorot<R: Rng + ?Sized>(rng: &mut R, n: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-a..=a)).collect()
}

struct BlockTrace {
    input: Tensor,
    pre: Tensor,
    pooled_shape: Vec<usize>,
    argmax: Vec<usize>,
    mask: DropoutMask,
}

struct Trace {
    blocks: Vec<BlockTrace>,
    features: Tensor,
    scores: Tensor,
}

impl TrainedModel {
    pub fn parameter(&self, name: &str) -> Option<&Parameter> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.parameters.iter_mut().find(|p| p.name == name)
    }

    pub fn num_classes(&self) -> usize {
        self.config.classes
    }

    pub fn set_labels(&mut self, labels: Vec<ActivityLabel>) -> Result<()> {
        validate_label_set(&labels)?;
        if labels.len() != self.config.classes {
            return Err(HarError::Config(format!(
                "model has {} classes but {} labels were given",
                self.config.classes,
                labels.len()
            )));
        }
        self.labels = labels;
        Ok(())
    }

    /// Fits per-channel ranges on the smoothed training signals.
    pub fn fit_discretizer(&mut self, segments: &[SegmentTensor]) -> Result<()> {
        let smoothed = segments
            .iter()
            .map(|s| {
                self.check_geometry(s)?;
                Ok(SegmentTensor {
                    channels: smooth_channels(&s.channels, self.config.smooth_width)?,
                    ..s.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.discretizer = fit_discretizer(&smoothed, self.config.bins, self.config.clip_percentiles)?;
        Ok(())
    }

    /// Sets `frozen` on everything except the classification layer, and
    /// clears it there.
    pub fn freeze_all_but_classifier(&mut self) {
        for p in &mut self.parameters {
            p.frozen = !is_classifier_param(&p.name);
        }
    }

    fn check_geometry(&self, segment: &SegmentTensor) -> Result<()> {
        let expected = [self.config.input_channels, self.config.window];
        if segment.channels.shape() != expected {
            let axis = if segment.num_channels() != expected[0] {
                "channels"
            } else {
                "window"
            };
            return Err(HarError::dim(
                axis,
                format!(
                    "segment has shape {:?}, model expects {expected:?}",
                    segment.channels.shape()
                ),
            ));
        }
        Ok(())
    }

    /// Smooths and discretizes a segment into `C * w` bin ids, channel-major.
    pub fn encode(&self, segment: &SegmentTensor) -> Result<Vec<usize>> {
        self.check_geometry(segment)?;
        let smoothed = smooth_channels(&segment.channels, self.config.smooth_width)?;
        Ok(discretize(&smoothed, &self.discretizer)?.concat())
    }

    fn embed(&self, ids: &[usize]) -> Result<Tensor> {
        let (c, w, e) = (
            self.config.input_channels,
            self.config.window,
            self.config.embedding_dim,
        );
        let table = &self.parameters[0].tensor;
        let mut x = vec![0.0; c * e * w];
        for ch in 0..c {
            let emb = embedding_forward(&ids[ch * w..(ch + 1) * w], table)?;
            x[ch * e * w..(ch + 1) * e * w].copy_from_slice(emb.values());
        }
        Tensor::new(&[c * e, w], x)
    }

    fn classifier_index(&self) -> usize {
        1 + 2 * self.config.blocks.len()
    }

    fn forward_trace<R: Rng + ?Sized>(&self, ids: &[usize], mode: Mode, rng: &mut R) -> Result<Trace> {
        let mut current = self.embed(ids)?;
        let mut blocks = Vec::with_capacity(self.config.blocks.len());
        for (i, b) in self.config.blocks.iter().enumerate() {
            let kernels = &self.parameters[1 + 2 * i].tensor;
            let bias = &self.parameters[2 + 2 * i].tensor;
            let pre = conv1d_forward(&current, kernels, bias)?;
            let (pooled, argmax) = maxpool1d_with_argmax(&relu(&pre), b.pool)?;
            let (dropped, mask) = dropout(&pooled, b.dropout, mode, rng)?;
            blocks.push(BlockTrace {
                input: current,
                pre,
                pooled_shape: pooled.shape().to_vec(),
                argmax,
                mask,
            });
            current = dropped;
        }
        let n = current.len();
        let features = current.reshape(&[n])?;
        let ci = self.classifier_index();
        let scores = dense_forward(
            &features,
            &self.parameters[ci].tensor,
            &self.parameters[ci + 1].tensor,
        )?;
        Ok(Trace {
            blocks,
            features,
            scores,
        })
    }

    /// Backpropagates `dscores` and adds parameter gradients into every
    /// `Some` slot of `grads`. Stops below the lowest slot that needs one.
    fn backward(
        &self,
        ids: &[usize],
        trace: &Trace,
        dscores: &Tensor,
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<()> {
        let ci = self.classifier_index();
        let dense = dense_backward(&trace.features, &self.parameters[ci].tensor, dscores)?;
        add_into(&mut grads[ci], dense.weight.values());
        add_into(&mut grads[ci + 1], dense.bias.values());

        let lowest = match grads[..ci].iter().position(Option::is_some) {
            Some(i) => i,
            None => return Ok(()),
        };

        let up_shape = trace.blocks.last().map_or_else(
            || {
                vec![
                    self.config.input_channels * self.config.embedding_dim,
                    self.config.window,
                ]
            },
            |b| b.pooled_shape.clone(),
        );
        let mut up = dense.input.reshape(&up_shape)?;

        for (i, bt) in trace.blocks.iter().enumerate().rev() {
            let kernel_idx = 1 + 2 * i;
            if lowest > kernel_idx + 1 {
                return Ok(());
            }
            let g = dropout_backward(&bt.mask, &up)?;
            let g = route_to_argmax(bt.pre.shape(), &bt.argmax, &bt.pooled_shape, &g)?;
            let g = relu_backward(&bt.pre, &g)?;
            let want_input = lowest < kernel_idx;
            let cg = conv1d_backward_impl(&bt.input, &self.parameters[kernel_idx].tensor, &g, want_input)?;
            add_into(&mut grads[kernel_idx], cg.kernels.values());
            add_into(&mut grads[kernel_idx + 1], cg.bias.values());
            if !want_input {
                return Ok(());
            }
            up = cg.input;
        }

        if let Some(table_grad) = grads[0].as_mut() {
            let (w, e) = (self.config.window, self.config.embedding_dim);
            for ch in 0..self.config.input_channels {
                accumulate_embedding_grad(
                    &ids[ch * w..(ch + 1) * w],
                    &up.values()[ch * e * w..(ch + 1) * e * w],
                    e,
                    table_grad,
                );
            }
        }
        Ok(())
    }

    /// Class scores for one segment.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        segment: &SegmentTensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Tensor> {
        let ids = self.encode(segment)?;
        Ok(self.forward_trace(&ids, mode, rng)?.scores)
    }

    /// Eval-mode class scores.
    pub fn scores(&self, segment: &SegmentTensor) -> Result<Tensor> {
        let ids = self.encode(segment)?;
        self.scores_encoded(&ids)
    }

    pub(crate) fn scores_encoded(&self, ids: &[usize]) -> Result<Tensor> {
        // Eval mode never draws from the generator.
        let mut rng = seeded(0);
        Ok(self.forward_trace(ids, Mode::Eval, &mut rng)?.scores)
    }

    /// Loss on one labeled segment and the gradient for every parameter,
    /// frozen or not, in model order.
    pub fn loss_and_gradients<R: Rng + ?Sized>(
        &self,
        segment: &SegmentTensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(f64, Vec<Tensor>)> {
        let ids = self.encode(segment)?;
        let trace = self.forward_trace(&ids, mode, rng)?;
        let (loss, dscores) = softmax_cross_entropy(&trace.scores, segment.label.index)?;
        let mut grads: Vec<Option<Vec<f64>>> = self
            .parameters
            .iter()
            .map(|p| Some(vec![0.0; p.tensor.len()]))
            .collect();
        self.backward(&ids, &trace, &dscores, &mut grads)?;
        let tensors = grads
            .into_iter()
            .zip(&self.parameters)
            .map(|(g, p)| Tensor::new(p.tensor.shape(), g.expect("allocated")))
            .collect::<Result<Vec<_>>>()?;
        Ok((loss, tensors))
    }

    /// Eval-mode loss for one labeled segment.
    pub fn loss(&self, segment: &SegmentTensor) -> Result<f64> {
        let scores = self.scores(segment)?;
        Ok(softmax_cross_entropy(&scores, segment.label.index)?.0)
    }

    /// Index of the highest eval-mode score; ties go to the lowest index.
    pub fn predict_index(&self, segment: &SegmentTensor) -> Result<usize> {
        Ok(argmax(self.scores(segment)?.values()))
    }

    pub fn predict(&self, segment: &SegmentTensor) -> Result<ActivityLabel> {
        let i = self.predict_index(segment)?;
        Ok(self.labels[i].clone())
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn add_into(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    if let Some(acc) = slot.as_mut() {
        for (a, v) in acc.iter_mut().zip(g) {
            *a += v;
        }
    }
}

fn canonical_order(a: &SegmentTensor, b: &SegmentTensor) -> Ordering {
    a.subject_id
        .cmp(&b.subject_id)
        .then(a.origin_index.cmp(&b.origin_index))
        .then(a.label.index.cmp(&b.label.index))
        .then_with(|| {
            a.channels
                .values()
                .iter()
                .zip(b.channels.values())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Checks that every segment's label belongs to the model and that every
/// class has at least one segment.
fn check_training_labels(model: &TrainedModel, segments: &[SegmentTensor]) -> Result<()> {
    let mut counts = vec![0usize; model.num_classes()];
    for s in segments {
        match model.labels.get(s.label.index) {
            Some(l) if l.name == s.label.name => counts[s.label.index] += 1,
            _ => {
                return Err(HarError::TrainingData(format!(
                    "segment label {} (`{}`) is not in the model label set",
                    s.label.index, s.label.name
                )))
            }
        }
    }
    let missing: Vec<&str> = counts
        .iter()
        .zip(&model.labels)
        .filter(|(&n, _)| n == 0)
        .map(|(_, l)| l.name.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(HarError::TrainingData(format!(
            "no training segments for classes: {}",
            missing.join(", ")
        )));
    }
    Ok(())
}

/// Seeded mini-batch training with Adam on softmax cross-entropy.
///
/// The result depends only on the set of segments, not their order: they
/// are put in a canonical order before the seeded shuffle. Only non-frozen
/// parameters change.
pub fn train(
    model: &TrainedModel,
    segments: &[SegmentTensor],
    options: &TrainOptions,
) -> Result<(TrainedModel, TrainingHistory)> {
    if options.batch_size == 0 {
        return Err(HarError::Config("batch_size must be positive".into()));
    }
    options.optimizer.validate()?;
    check_training_labels(model, segments)?;

    let mut model = model.clone();
    for p in &mut model.parameters {
        p.tensor.clear_grad();
    }
    let mut history = TrainingHistory::default();
    if options.epochs == 0 {
        return Ok((model, history));
    }

    let encoded = segments
        .iter()
        .map(|s| model.encode(s))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.sort_by(|&a, &b| canonical_order(&segments[a], &segments[b]));

    let mut rng: HarRng = seeded(options.seed);
    let mut state = OptimizerState::new(options.optimizer, &model.parameters);
    let trainable: Vec<bool> = model.parameters.iter().map(|p| !p.frozen).collect();

    for _ in 0..options.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(options.batch_size) {
            let mut grads: Vec<Option<Vec<f64>>> = model
                .parameters
                .iter()
                .zip(&trainable)
                .map(|(p, &t)| t.then(|| vec![0.0; p.tensor.len()]))
                .collect();
            let mut batch_loss = 0.0;
            for &i in batch {
                let trace = model.forward_trace(&encoded[i], Mode::Train, &mut rng)?;
                let (loss, dscores) = softmax_cross_entropy(&trace.scores, segments[i].label.index)?;
                batch_loss += loss;
                model.backward(&encoded[i], &trace, &dscores, &mut grads)?;
            }
            if history.initial_loss.is_none() {
                history.initial_loss = Some(batch_loss / batch.len() as f64);
            }
            epoch_loss += batch_loss;

            let scale = 1.0 / batch.len() as f64;
            for (p, g) in model.parameters.iter_mut().zip(grads) {
                if let Some(mut g) = g {
                    g.iter_mut().for_each(|v| *v *= scale);
                    p.tensor.set_grad(g)?;
                }
            }
            state.step(&mut model.parameters)?;
            for p in &mut model.parameters {
                p.tensor.clear_grad();
            }
        }
        history.epoch_losses.push(epoch_loss / segments.len() as f64);
    }
    Ok((model, history))
}
