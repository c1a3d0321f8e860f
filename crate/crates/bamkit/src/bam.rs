//! Greedy fusion of first-layer activation channels into a saliency map.
//!
//! Each channel of the first convolutional activation is min-max
//! normalized, inverted when it anti-correlates with the class activation
//! heatmap, and greedily added to a running arithmetic mean as long as the
//! Spearman rank correlation with the heatmap strictly improves. The mean
//! lives at the activation resolution, which is far finer than the last
//! convolutional layer the heatmap came from.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcam::{normalize_minmax, Heatmap};
use crate::tensor::Tensor;

/// Minimum correlation gain for the greedy loop to accept a channel.
pub const IMPROVEMENT_TOLERANCE: f64 = 1e-9;

/// Upper bound on subsets [`exhaustive_fuse`] will enumerate.
pub const SUBSET_GUARD: u128 = 1_000_000;

/// First-layer activation channels, each min-max normalized to [0, 1].
/// Constant channels normalize to all zeros and are recorded as such.
#[derive(Debug, Clone)]
pub struct ChannelStack {
    height: usize,
    width: usize,
    channels: Vec<Vec<f64>>,
    constant: Vec<bool>,
}

impl ChannelStack {
    /// Build from a `[C, H, W]` activation tensor.
    pub fn from_activation(activation: &Tensor) -> Result<Self> {
        if activation.rank() != 3 {
            return Err(Error::ShapeMismatch {
                op: "channel_stack",
                detail: format!("expected [C,H,W], got {:?}", activation.shape()),
            });
        }
        let (c, h, w) = (
            activation.shape()[0],
            activation.shape()[1],
            activation.shape()[2],
        );
        if c == 0 || h * w == 0 {
            return Err(Error::EmptyInput { op: "channel_stack" });
        }
        let data = activation.to_f64_vec();
        let mut channels = Vec::with_capacity(c);
        let mut constant = Vec::with_capacity(c);
        for k in 0..c {
            let plane = &data[k * h * w..(k + 1) * h * w];
            let lo = plane.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                channels.push(plane.iter().map(|&v| (v - lo) / (hi - lo)).collect());
                constant.push(false);
            } else {
                channels.push(vec![0.0; h * w]);
                constant.push(true);
            }
        }
        Ok(ChannelStack {
            height: h,
            width: w,
            channels,
            constant,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index]
    }

    pub fn is_constant(&self, index: usize) -> bool {
        self.constant[index]
    }
}

/// Record of the greedy selection: which channels were fused, whether each
/// was inverted first, and the correlation after every accepted iteration.
/// The raw fused mean is kept alongside; it is exported separately from
/// the JSON audit record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub selected: Vec<usize>,
    pub inverted: Vec<bool>,
    pub correlations: Vec<f64>,
    #[serde(skip)]
    fused: Heatmap,
}

impl SelectionTrace {
    /// Final correlation with the reference heatmap; 0 when nothing was
    /// selected.
    pub fn final_rho(&self) -> f64 {
        self.correlations.last().copied().unwrap_or(0.0)
    }

    /// Arithmetic mean of the oriented selected channels (all zeros for an
    /// empty selection).
    pub fn fused_mean(&self) -> &Heatmap {
        &self.fused
    }
}

/// Average (fractional) ranks, 1-based; tied values share the mean of the
/// positions they occupy.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    (cov / (va * vb).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman rank correlation with average ranks for ties. Either argument
/// being constant yields 0 by definition.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "spearman_rho",
            detail: format!("lengths {} and {}", a.len(), b.len()),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument {
            op: "spearman_rho",
            detail: format!("need at least 2 values, got {}", a.len()),
        });
    }
    Ok(pearson(&average_ranks(a), &average_ranks(b)))
}

/// Invert a [0,1]-normalized channel when it anti-correlates with the
/// reference, so every channel enters fusion positively correlated.
pub fn orient_channel(channel: &[f64], reference: &[f64]) -> Result<(Vec<f64>, bool)> {
    if spearman_rho(channel, reference)? < 0.0 {
        Ok((channel.iter().map(|&v| 1.0 - v).collect(), true))
    } else {
        Ok((channel.to_vec(), false))
    }
}

fn check_reference(stack: &ChannelStack, reference: &Heatmap) -> Result<()> {
    if reference.height() != stack.height || reference.width() != stack.width {
        return Err(Error::ShapeMismatch {
            op: "channel_fusion",
            detail: format!(
                "reference {}x{} vs stack {}x{}",
                reference.height(),
                reference.width(),
                stack.height,
                stack.width
            ),
        });
    }
    Ok(())
}

fn orient_all(stack: &ChannelStack, reference: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
    let mut oriented = Vec::with_capacity(stack.num_channels());
    let mut flags = Vec::with_capacity(stack.num_channels());
    for ch in &stack.channels {
        let (o, inv) = orient_channel(ch, reference)?;
        oriented.push(o);
        flags.push(inv);
    }
    Ok((oriented, flags))
}

/// Greedy channel selection maximizing Spearman correlation between the
/// running mean and the reference heatmap. Stops as soon as no remaining
/// channel improves the correlation by more than [`IMPROVEMENT_TOLERANCE`];
/// equal candidates resolve to the lowest channel index.
pub fn greedy_fuse(stack: &ChannelStack, reference: &Heatmap) -> Result<SelectionTrace> {
    check_reference(stack, reference)?;
    let refv = reference.data();
    let (oriented, flags) = orient_all(stack, refv)?;
    let c = stack.num_channels();
    let hw = stack.height * stack.width;

    let mut in_use = vec![false; c];
    let mut running_sum = vec![0.0; hw];
    let mut running_rho = 0.0;
    let mut selected = Vec::new();
    let mut inverted = Vec::new();
    let mut correlations = Vec::new();

    loop {
        // Ranks ignore positive scaling, so the candidate sum stands in
        // for the candidate mean.
        let scores: Vec<(usize, f64)> = (0..c)
            .into_par_iter()
            .filter(|&k| !in_use[k])
            .map(|k| {
                let candidate: Vec<f64> = running_sum
                    .iter()
                    .zip(&oriented[k])
                    .map(|(&s, &v)| s + v)
                    .collect();
                (k, spearman_rho(&candidate, refv).unwrap_or(0.0))
            })
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for &(k, rho) in &scores {
            if best.map_or(true, |(_, br)| rho > br) {
                best = Some((k, rho));
            }
        }
        match best {
            Some((k, rho)) if rho > running_rho + IMPROVEMENT_TOLERANCE => {
                in_use[k] = true;
                for (s, &v) in running_sum.iter_mut().zip(&oriented[k]) {
                    *s += v;
                }
                running_rho = rho;
                selected.push(k);
                inverted.push(flags[k]);
                correlations.push(rho);
                if selected.len() == c {
                    break;
                }
            }
            _ => break,
        }
    }

    let fused = if selected.is_empty() {
        Heatmap::new(stack.height, stack.width, vec![0.0; hw])
    } else {
        let n = selected.len() as f64;
        Heatmap::new(
            stack.height,
            stack.width,
            running_sum.iter().map(|&s| s / n).collect(),
        )
    };
    Ok(SelectionTrace {
        selected,
        inverted,
        correlations,
        fused,
    })
}

/// Exact search over all channel subsets up to `max_subset` elements,
/// scoring each subset's oriented mean against the reference. Serves as
/// the oracle the greedy search is measured against.
pub fn exhaustive_fuse(
    stack: &ChannelStack,
    reference: &Heatmap,
    max_subset: usize,
) -> Result<(Vec<usize>, f64)> {
    check_reference(stack, reference)?;
    if stack.num_channels() == 0 || max_subset == 0 {
        return Err(Error::EmptyInput {
            op: "exhaustive_fuse",
        });
    }
    let c = stack.num_channels();
    let max_subset = max_subset.min(c);
    let mut total: u128 = 0;
    let mut choose: u128 = 1;
    for k in 1..=max_subset {
        choose = choose * (c - k + 1) as u128 / k as u128;
        total += choose;
        if total > SUBSET_GUARD {
            return Err(Error::SubsetGuardExceeded {
                subsets: total,
                limit: SUBSET_GUARD,
            });
        }
    }

    let refv = reference.data();
    let (oriented, _) = orient_all(stack, refv)?;
    let hw = stack.height * stack.width;

    let mut best_subset = Vec::new();
    let mut best_rho = f64::NEG_INFINITY;
    for size in 1..=max_subset {
        let mut indices: Vec<usize> = (0..size).collect();
        loop {
            let mut sum = vec![0.0; hw];
            for &k in &indices {
                for (s, &v) in sum.iter_mut().zip(&oriented[k]) {
                    *s += v;
                }
            }
            let rho = spearman_rho(&sum, refv).unwrap_or(0.0);
            if rho > best_rho {
                best_rho = rho;
                best_subset = indices.clone();
            }
            if !next_combination(&mut indices, c) {
                break;
            }
        }
    }
    Ok((best_subset, best_rho.clamp(0.0, 1.0)))
}

/// Advance a strictly increasing index vector to the next combination in
/// lexicographic order; false when the last combination was reached.
fn next_combination(indices: &mut [usize], c: usize) -> bool {
    let size = indices.len();
    let mut pos = size;
    while pos > 0 {
        pos -= 1;
        if indices[pos] != pos + c - size {
            indices[pos] += 1;
            for later in pos + 1..size {
                indices[later] = indices[later - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Min-max-normalized fused mean at the activation resolution; all zeros
/// when the trace selected nothing.
pub fn bam_heatmap(trace: &SelectionTrace) -> Heatmap {
    normalize_minmax(trace.fused_mean())
}
