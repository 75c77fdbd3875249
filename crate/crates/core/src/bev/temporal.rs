use std::collections::VecDeque;

use super::{warp_bev, EgoPose};
use crate::error::{Error, Result};
use crate::tensor::init::{fan_in_uniform, named_seed};
use crate::tensor::{conv2d, relu, ConvSpec2d, Real, Tensor};
use crate::view::GridSpec;

#[derive(Debug, Clone)]
pub struct QueueEntry<T> {
    pub bev: Tensor<T>,
    pub pose: EgoPose,
    pub timestamp: u64,
}

/// Fixed-capacity history of BEV maps; the oldest entry is evicted first.
#[derive(Debug, Clone)]
pub struct TemporalQueue<T> {
    capacity: usize,
    entries: VecDeque<QueueEntry<T>>,
}

impl<T: Real> TemporalQueue<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Timestamps must strictly increase.
    pub fn push(&mut self, bev: Tensor<T>, pose: EgoPose, timestamp: u64) -> Result<()> {
        if let Some(last) = self.entries.back() {
            if timestamp <= last.timestamp {
                return Err(Error::invalid(
                    "TemporalQueue::push",
                    format!("timestamp {timestamp} not after {}", last.timestamp),
                ));
            }
        }
        if self.capacity == 0 {
            return Ok(());
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(QueueEntry {
            bev,
            pose,
            timestamp,
        });
        Ok(())
    }

    /// Oldest first.
    pub fn entries(&self) -> impl DoubleEndedIterator<Item = &QueueEntry<T>> {
        self.entries.iter()
    }
}

/// Two 3×3 convolutions mapping `C·(τ+1)` stacked channels back to `C`.
/// Input slot 0 is the current frame; slots `1..=τ` are history, newest first.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights<T> {
    pub conv1_weight: Tensor<T>,
    pub conv1_bias: Tensor<T>,
    pub conv2_weight: Tensor<T>,
    pub conv2_bias: Tensor<T>,
}

impl<T: Real> FusionWeights<T> {
    pub fn seeded(channels: usize, history: usize, seed: u64) -> Self {
        let stacked = channels * (history + 1);
        Self {
            conv1_weight: fan_in_uniform(&[channels, stacked, 3, 3], named_seed(seed, "conv1")),
            conv1_bias: Tensor::zeros(&[channels]),
            conv2_weight: fan_in_uniform(&[channels, channels, 3, 3], named_seed(seed, "conv2")),
            conv2_bias: Tensor::zeros(&[channels]),
        }
    }

    /// First conv averages each channel over all `τ+1` slots, second conv
    /// is the identity.
    pub fn averaging(channels: usize, history: usize) -> Self {
        let slots = history + 1;
        let w = T::from_f64(1.0 / slots as f64);
        let conv1_weight = Tensor::from_fn(&[channels, channels * slots, 3, 3], |i| {
            if i[2] == 1 && i[3] == 1 && i[1] % channels == i[0] {
                w
            } else {
                T::zero()
            }
        });
        let conv2_weight = Tensor::from_fn(&[channels, channels, 3, 3], |i| {
            if i[2] == 1 && i[3] == 1 && i[0] == i[1] {
                T::one()
            } else {
                T::zero()
            }
        });
        Self {
            conv1_weight,
            conv1_bias: Tensor::zeros(&[channels]),
            conv2_weight,
            conv2_bias: Tensor::zeros(&[channels]),
        }
    }

    pub fn channels(&self) -> usize {
        self.conv2_weight.shape()[0]
    }

    /// Number of history slots τ these weights expect.
    pub fn history(&self) -> usize {
        self.conv1_weight.shape()[1] / self.channels() - 1
    }

    /// Zeroes every weight that reads a history slot.
    pub fn without_history(mut self) -> Self {
        let c = self.channels();
        let s = self.conv1_weight.shape().to_vec();
        let per_in = s[2] * s[3];
        for co in 0..s[0] {
            for ci in c..s[1] {
                let off = (co * s[1] + ci) * per_in;
                self.conv1_weight.data_mut()[off..off + per_in].fill(T::zero());
            }
        }
        self
    }
}

/// Aligns every queued map to `pose_now`, stacks them behind `current`
/// (empty slots are zero maps), runs the fusion convs and finally pushes
/// `current` onto the queue. Output is `[C, X, Y]` at any fill level.
pub fn temporal_fuse<T: Real>(
    queue: &mut TemporalQueue<T>,
    current: &Tensor<T>,
    pose_now: &EgoPose,
    timestamp: u64,
    weights: &FusionWeights<T>,
    grid: &GridSpec,
) -> Result<Tensor<T>> {
    let c = weights.channels();
    if current.rank() != 3 || current.shape()[0] != c {
        return Err(Error::shape(
            "temporal_fuse",
            format!("current BEV {:?} vs {c} fusion channels", current.shape()),
        ));
    }
    if weights.history() != queue.capacity() {
        return Err(Error::shape(
            "temporal_fuse",
            format!(
                "fusion weights expect {} history frames, queue holds {}",
                weights.history(),
                queue.capacity()
            ),
        ));
    }
    let mut slots = vec![current.clone()];
    for entry in queue.entries().rev() {
        if entry.bev.shape() != current.shape() {
            return Err(Error::shape(
                "temporal_fuse",
                format!(
                    "history BEV {:?} vs current {:?}",
                    entry.bev.shape(),
                    current.shape()
                ),
            ));
        }
        slots.push(warp_bev(&entry.bev, &entry.pose, pose_now, grid)?);
    }
    let zero = Tensor::zeros(current.shape());
    while slots.len() < queue.capacity() + 1 {
        slots.push(zero.clone());
    }
    let refs: Vec<&Tensor<T>> = slots.iter().collect();
    let stacked = Tensor::concat(&refs)?;
    let spec = ConvSpec2d::same([3, 3]);
    let hidden = relu(&conv2d(
        &stacked,
        &weights.conv1_weight,
        Some(&weights.conv1_bias),
        &spec,
    )?);
    let fused = conv2d(
        &hidden,
        &weights.conv2_weight,
        Some(&weights.conv2_bias),
        &spec,
    )?;
    queue.push(current.clone(), *pose_now, timestamp)?;
    Ok(fused)
}
