//! From raw tri-axial readings to discretized multi-channel windows.

use serde::{Deserialize, Serialize};

use crate::error::{HarError, Result};
use crate::tensor::Tensor;

/// One activity class. Indices of a label set are contiguous from zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActivityLabel {
    pub index: usize,
    pub name: String,
}

impl ActivityLabel {
    pub fn new(index: usize, name: impl Into<String>) -> Self {
        ActivityLabel {
            index,
            name: name.into(),
        }
    }
}

/// Builds a label set `0..n` from names, rejecting duplicates.
pub fn label_set<S: AsRef<str>>(names: &[S]) -> Result<Vec<ActivityLabel>> {
    let labels: Vec<ActivityLabel> = names
        .iter()
        .enumerate()
        .map(|(i, n)| ActivityLabel::new(i, n.as_ref()))
        .collect();
    validate_label_set(&labels)?;
    Ok(labels)
}

pub fn validate_label_set(labels: &[ActivityLabel]) -> Result<()> {
    for (i, l) in labels.iter().enumerate() {
        if l.index != i {
            return Err(HarError::Data(format!(
                "label `{}` has index {} at position {i}",
                l.name, l.index
            )));
        }
        if labels[..i].iter().any(|o| o.name == l.name) {
            return Err(HarError::Data(format!("duplicate label name `{}`", l.name)));
        }
    }
    Ok(())
}

/// A single accelerometer reading.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    pub subject_id: String,
    pub activity: ActivityLabel,
    pub timestamp_ns: i64,
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
}

impl RawSample {
    pub fn axes(&self) -> [f64; 3] {
        [self.ax, self.ay, self.az]
    }
}

/// A labeled `[C, w]` window cut from one subject performing one activity.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentTensor {
    pub channels: Tensor,
    pub label: ActivityLabel,
    pub subject_id: String,
    /// Index of the first sample within the subject's recording.
    pub origin_index: usize,
}

/// Identity of a segment within a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SegmentId {
    pub subject_id: String,
    pub origin_index: usize,
}

impl SegmentTensor {
    pub fn num_channels(&self) -> usize {
        self.channels.shape()[0]
    }

    pub fn window(&self) -> usize {
        self.channels.shape().get(1).copied().unwrap_or(1)
    }

    pub fn id(&self) -> SegmentId {
        SegmentId {
            subject_id: self.subject_id.clone(),
            origin_index: self.origin_index,
        }
    }
}

/// Centered moving average of odd `width`; samples beyond either end repeat
/// the end value.
pub fn smooth(channel: &[f64], width: usize) -> Result<Vec<f64>> {
    if width == 0 || width % 2 == 0 {
        return Err(HarError::Parameter(format!(
            "smoothing width must be odd and positive, got {width}"
        )));
    }
    if width > channel.len() {
        return Err(HarError::Parameter(format!(
            "smoothing width {width} exceeds signal length {}",
            channel.len()
        )));
    }
    if width == 1 {
        return Ok(channel.to_vec());
    }
    let n = channel.len() as isize;
    let half = (width / 2) as isize;
    let at = |i: isize| channel[i.clamp(0, n - 1) as usize];
    Ok((0..n)
        .map(|i| (i - half..=i + half).map(at).sum::<f64>() / width as f64)
        .collect())
}

/// Smooths every row of a `[C, w]` tensor.
pub fn smooth_channels(channels: &Tensor, width: usize) -> Result<Tensor> {
    let (c, w) = (channels.shape()[0], channels.len() / channels.shape()[0]);
    let mut out = Vec::with_capacity(c * w);
    for i in 0..c {
        out.extend(smooth(&channels.values()[i * w..(i + 1) * w], width)?);
    }
    Tensor::new(channels.shape(), out)
}

/// Cuts fixed windows out of one subject-activity run.
///
/// Emits `floor((N - w) / s) + 1` segments starting at `0, s, 2s, ...`, or
/// none when the run is shorter than the window. `origin_index` is relative
/// to the start of `stream`.
pub fn segment(stream: &[RawSample], window: usize, stride: usize) -> Result<Vec<SegmentTensor>> {
    if window == 0 || stride == 0 {
        return Err(HarError::Parameter(format!(
            "window and stride must be positive (window {window}, stride {stride})"
        )));
    }
    let Some(first) = stream.first() else {
        return Ok(Vec::new());
    };
    if let Some(bad) = stream
        .iter()
        .find(|s| s.subject_id != first.subject_id || s.activity != first.activity)
    {
        return Err(HarError::Data(format!(
            "segment() needs a single subject-activity run; found subject {} / {} after subject {} / {}",
            bad.subject_id, bad.activity.name, first.subject_id, first.activity.name
        )));
    }
    if stream.len() < window {
        return Ok(Vec::new());
    }
    let count = (stream.len() - window) / stride + 1;
    (0..count)
        .map(|i| {
            let t = i * stride;
            let run = &stream[t..t + window];
            let mut values = vec![0.0; 3 * window];
            for (j, s) in run.iter().enumerate() {
                for (a, v) in s.axes().into_iter().enumerate() {
                    values[a * window + j] = v;
                }
            }
            Ok(SegmentTensor {
                channels: Tensor::new(&[3, window], values)?,
                label: first.activity.clone(),
                subject_id: first.subject_id.clone(),
                origin_index: t,
            })
        })
        .collect()
}

/// Stacks per-unit 3-axis segments so that unit `u`, axis `a` lands on
/// channel `3u + a`.
pub fn stack_channels(units: &[SegmentTensor]) -> Result<SegmentTensor> {
    let first = units
        .first()
        .ok_or_else(|| HarError::dim("units", "no sensor units to stack"))?;
    let window = first.window();
    let mut values = Vec::with_capacity(3 * units.len() * window);
    for (u, seg) in units.iter().enumerate() {
        if seg.channels.shape() != [3, window] {
            return Err(HarError::dim(
                "window",
                format!(
                    "unit {u} has shape {:?}, expected [3, {window}]",
                    seg.channels.shape()
                ),
            ));
        }
        values.extend_from_slice(seg.channels.values());
    }
    Ok(SegmentTensor {
        channels: Tensor::new(&[3 * units.len(), window], values)?,
        label: first.label.clone(),
        subject_id: first.subject_id.clone(),
        origin_index: first.origin_index,
    })
}

/// Bin count plus a fitted `[lo, hi]` range per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizerSpec {
    pub bins: usize,
    pub ranges: Vec<(f64, f64)>,
}

impl DiscretizerSpec {
    pub fn uniform(channels: usize, bins: usize, lo: f64, hi: f64) -> Self {
        DiscretizerSpec {
            bins,
            ranges: vec![(lo, hi); channels],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(HarError::Config(format!(
                "need at least 2 bins, got {}",
                self.bins
            )));
        }
        if let Some((c, r)) = self
            .ranges
            .iter()
            .enumerate()
            .find(|(_, (lo, hi))| !(lo < hi) || !lo.is_finite() || !hi.is_finite())
        {
            return Err(HarError::Config(format!("channel {c} has invalid range {r:?}")));
        }
        Ok(())
    }

    pub fn bin(&self, channel: usize, v: f64) -> usize {
        let (lo, hi) = self.ranges[channel];
        discretize_value(v, lo, hi, self.bins)
    }
}

/// `clamp(floor((v - lo) / (hi - lo) * bins), 0, bins - 1)`.
pub fn discretize_value(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let x = ((v - lo) / (hi - lo) * bins as f64).floor();
    if x.is_nan() || x < 0.0 {
        0
    } else if x >= (bins - 1) as f64 {
        bins - 1
    } else {
        x as usize
    }
}

/// Linear-interpolated percentile of already sorted data, `p` in `[0, 100]`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Per-channel `(p_lo, p_hi)` percentile ranges over all training values.
///
/// A channel whose range collapses to a point is widened by `1e-6` on each
/// side.
pub fn fit_discretizer(
    segments: &[SegmentTensor],
    bins: usize,
    percentiles: (f64, f64),
) -> Result<DiscretizerSpec> {
    let (p_lo, p_hi) = percentiles;
    if !(0.0 <= p_lo && p_lo < p_hi && p_hi <= 100.0) {
        return Err(HarError::Parameter(format!(
            "percentiles must satisfy 0 <= lo < hi <= 100, got ({p_lo}, {p_hi})"
        )));
    }
    if bins < 2 {
        return Err(HarError::Parameter(format!("need at least 2 bins, got {bins}")));
    }
    let first = segments
        .first()
        .ok_or_else(|| HarError::TrainingData("cannot fit a discretizer on zero segments".into()))?;
    let channels = first.num_channels();
    let window = first.window();
    if let Some(s) = segments
        .iter()
        .find(|s| s.channels.shape() != first.channels.shape())
    {
        return Err(HarError::dim(
            "channels",
            format!(
                "segment shape {:?} differs from {:?}",
                s.channels.shape(),
                first.channels.shape()
            ),
        ));
    }

    let mut ranges = Vec::with_capacity(channels);
    for c in 0..channels {
        let mut values: Vec<f64> = segments
            .iter()
            .flat_map(|s| s.channels.values()[c * window..(c + 1) * window].iter().copied())
            .collect();
        values.sort_by(f64::total_cmp);
        let lo = percentile_sorted(&values, p_lo);
        let hi = percentile_sorted(&values, p_hi);
        if lo < hi {
            ranges.push((lo, hi));
        } else {
            log::warn!("channel {c} is degenerate (all values {lo}); widening range by 1e-6");
            ranges.push((lo - 1e-6, lo + 1e-6));
        }
    }
    Ok(DiscretizerSpec { bins, ranges })
}

/// One id sequence per channel.
pub fn discretize(channels: &Tensor, spec: &DiscretizerSpec) -> Result<Vec<Vec<usize>>> {
    let c = channels.shape()[0];
    if c != spec.ranges.len() {
        return Err(HarError::dim(
            "channels",
            format!(
                "segment has {c} channels, discretizer fitted on {}",
                spec.ranges.len()
            ),
        ));
    }
    let w = channels.len() / c;
    Ok((0..c)
        .map(|ch| {
            channels.values()[ch * w..(ch + 1) * w]
                .iter()
                .map(|&v| spec.bin(ch, v))
                .collect()
        })
        .collect())
}
