//! Large-kernel re-parameterized 3D convolution.
//!
//! At train time the geometric encoder runs several parallel branches, each
//! a (possibly dilated) small-kernel conv followed by batch norm, and sums
//! their outputs. All of those are linear, so the branch set folds into one
//! dense large kernel plus bias:
//!
//! 1. a dilated kernel becomes a sparse undilated one by zero insertion
//!    ([`dilate_to_sparse`]),
//! 2. batch norm folds into that kernel's weight and bias ([`fuse_bn`]),
//! 3. every branch is zero-padded to the large extent and summed
//!    ([`merge_branches`]).
//!
//! [`forward_train`] and [`forward_deploy`] compute the same function; the
//! deploy path touches each input voxel once per large-kernel tap instead
//! of once per tap of every branch.

mod manifest;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::conv::effective_extent;
use crate::tensor::init::{fan_in_uniform, named_seed, uniform_range};
use crate::tensor::{batch_norm, conv3d, conv_transpose3d, ConvSpec};
use crate::tensor::{BatchNormParams, Real, Tensor};

pub use manifest::{load_branches, load_merged, save_branches, save_merged};

/// Kernel extents and dilation of one branch, written `11x11x1@1x1x1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchShape {
    pub kernel: [usize; 3],
    pub dilation: [usize; 3],
}

impl BranchShape {
    pub fn new(kernel: [usize; 3], dilation: [usize; 3]) -> Self {
        Self { kernel, dilation }
    }

    pub fn effective(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| effective_extent(self.kernel[a], self.dilation[a]))
    }

    /// Checks that this branch fits inside `target` and can be centered in it.
    pub fn check_fits(&self, target: [usize; 3]) -> Result<()> {
        if self.kernel.contains(&0) || self.dilation.contains(&0) {
            return Err(Error::invalid(
                "merge_branches",
                format!("branch {self} has a zero extent or dilation"),
            ));
        }
        let eff = self.effective();
        for axis in 0..3 {
            if eff[axis] > target[axis] {
                return Err(Error::invalid(
                    "merge_branches",
                    format!(
                        "branch {self} has effective extent {eff:?} exceeding target {target:?}"
                    ),
                ));
            }
            if eff[axis] % 2 != target[axis] % 2 {
                return Err(Error::invalid(
                    "merge_branches",
                    format!(
                        "branch {self} effective extent {eff:?} parity differs from {target:?}"
                    ),
                ));
            }
        }
        Ok(())
    }
}

fn fmt_triple(v: [usize; 3]) -> String {
    format!("{}x{}x{}", v[0], v[1], v[2])
}

pub(crate) fn parse_triple(s: &str, sep: char) -> Option<[usize; 3]> {
    let parts: Vec<usize> = s
        .split(sep)
        .map(|p| p.trim().parse().ok())
        .collect::<Option<_>>()?;
    parts.try_into().ok()
}

impl fmt::Display for BranchShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}@{}",
            fmt_triple(self.kernel),
            fmt_triple(self.dilation)
        )
    }
}

impl FromStr for BranchShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("branch `{s}` is not of the form KxKxK@DxDxD"));
        let (k, d) = s.split_once('@').ok_or_else(bad)?;
        let kernel = parse_triple(k, 'x').ok_or_else(bad)?;
        let dilation = parse_triple(d, 'x').ok_or_else(bad)?;
        Ok(Self { kernel, dilation })
    }
}

/// Branch layout for a `[K, K', Kz]` large kernel: one undilated full-size
/// branch plus the `5@2` and `3@3` dilated branches on the first two axes,
/// each kept only if its effective extent fits.
pub fn default_layout(target: [usize; 3]) -> Vec<BranchShape> {
    let mut layout = vec![BranchShape::new(target, [1, 1, 1])];
    for (k, r) in [(5, 2), (3, 3)] {
        let shape = BranchShape::new([k, k, target[2]], [r, r, 1]);
        if shape.check_fits(target).is_ok() && shape.kernel != target {
            layout.push(shape);
        }
    }
    layout
}

/// One train-time branch: conv weight `[C_out, C_in, kx, ky, kz]`, its
/// dilation, and the batch norm that follows it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBranch<T> {
    pub weight: Tensor<T>,
    pub dilation: [usize; 3],
    pub bn: BatchNormParams<T>,
}

impl<T: Real> ConvBranch<T> {
    pub fn new(weight: Tensor<T>, dilation: [usize; 3], bn: BatchNormParams<T>) -> Result<Self> {
        let branch = Self {
            weight,
            dilation,
            bn,
        };
        branch.validate()?;
        Ok(branch)
    }

    fn validate(&self) -> Result<()> {
        if self.weight.rank() != 5 {
            return Err(Error::shape(
                "ConvBranch",
                format!("weight must be rank 5, got {:?}", self.weight.shape()),
            ));
        }
        if self.bn.channels() != self.weight.shape()[0] {
            return Err(Error::shape(
                "ConvBranch",
                format!(
                    "{} batch norm channels for {} output channels",
                    self.bn.channels(),
                    self.weight.shape()[0]
                ),
            ));
        }
        self.bn.validate()
    }

    /// Seeded branch: weights uniform in `±1/sqrt(fan_in)`, batch norm
    /// statistics drawn from modest ranges around identity.
    pub fn seeded(c_out: usize, c_in: usize, shape: BranchShape, seed: u64) -> Self {
        let [kx, ky, kz] = shape.kernel;
        let weight = fan_in_uniform(&[c_out, c_in, kx, ky, kz], named_seed(seed, "weight"));
        let draw = |name, lo, hi| -> Vec<T> {
            uniform_range::<T>(&[c_out], lo, hi, named_seed(seed, name)).into_data()
        };
        let bn = BatchNormParams {
            mean: draw("bn.mean", -0.1, 0.1),
            std: draw("bn.std", 0.5, 1.5),
            gamma: draw("bn.gamma", 0.5, 1.5),
            beta: draw("bn.beta", -0.1, 0.1),
        };
        Self {
            weight,
            dilation: shape.dilation,
            bn,
        }
    }

    pub fn shape(&self) -> BranchShape {
        let s = self.weight.shape();
        BranchShape::new([s[2], s[3], s[4]], self.dilation)
    }

    pub fn cast<U: Real>(&self) -> ConvBranch<U> {
        ConvBranch {
            weight: self.weight.cast(),
            dilation: self.dilation,
            bn: self.bn.cast(),
        }
    }
}

/// Seeded branch set for `layout`, one named seed per branch.
pub fn seeded_branches<T: Real>(
    c_out: usize,
    c_in: usize,
    layout: &[BranchShape],
    seed: u64,
) -> Vec<ConvBranch<T>> {
    layout
        .iter()
        .enumerate()
        .map(|(i, &shape)| {
            ConvBranch::seeded(c_out, c_in, shape, named_seed(seed, &format!("branch{i}")))
        })
        .collect()
}

/// The fused inference-time kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedKernel<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> MergedKernel<T> {
    pub fn extents(&self) -> [usize; 3] {
        let s = self.weight.shape();
        [s[2], s[3], s[4]]
    }
}

/// Rewrites a dilated kernel as the equivalent undilated sparse kernel by
/// transposed convolution with a unit `1×1×1` kernel at stride `dilation`.
pub fn dilate_to_sparse<T: Real>(weight: &Tensor<T>, dilation: [usize; 3]) -> Result<Tensor<T>> {
    let unit = Tensor::full(&[1, 1, 1], T::one());
    conv_transpose3d(weight, &unit, dilation)
}

/// Folds batch norm into a conv: `W'' = (γ/σ)·W'` per output channel and
/// `b'' = −μγ/σ + β`.
pub fn fuse_bn<T: Real>(
    weight: &Tensor<T>,
    bn: &BatchNormParams<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    bn.validate()?;
    if weight.rank() == 0 || weight.shape()[0] != bn.channels() {
        return Err(Error::shape(
            "fuse_bn",
            format!("weight {:?} vs {} channels", weight.shape(), bn.channels()),
        ));
    }
    let mut fused = weight.clone();
    let mut bias = Vec::with_capacity(bn.channels());
    for c in 0..bn.channels() {
        let scale = bn.gamma[c] / bn.std[c];
        for v in fused.slab_mut(c) {
            *v *= scale;
        }
        bias.push(-bn.mean[c] * scale + bn.beta[c]);
    }
    Ok((fused, Tensor::new(vec![bn.channels()], bias)?))
}

/// Centers `small` (`[.., a, b, c]`) inside zeros of extents `target`.
fn zero_pad_centered<T: Real>(small: &Tensor<T>, target: [usize; 3]) -> Result<Tensor<T>> {
    let r = small.rank();
    let lead = &small.shape()[..r - 3];
    let ext = [
        small.shape()[r - 3],
        small.shape()[r - 2],
        small.shape()[r - 1],
    ];
    let off = [0, 1, 2].map(|a| (target[a] - ext[a]) / 2);
    let mut shape = lead.to_vec();
    shape.extend_from_slice(&target);
    let mut out = Tensor::zeros(&shape);
    let lead_n: usize = lead.iter().product();
    let (in_slab, out_slab) = (
        ext.iter().product::<usize>(),
        target.iter().product::<usize>(),
    );
    let src = small.data();
    let dst = out.data_mut();
    for l in 0..lead_n {
        for i in 0..ext[0] {
            for j in 0..ext[1] {
                let s = l * in_slab + (i * ext[1] + j) * ext[2];
                let d = l * out_slab + ((i + off[0]) * target[1] + j + off[1]) * target[2] + off[2];
                dst[d..d + ext[2]].copy_from_slice(&src[s..s + ext[2]]);
            }
        }
    }
    Ok(out)
}

/// Folds a branch set into one `target`-sized kernel and bias.
pub fn merge_branches<T: Real>(
    branches: &[ConvBranch<T>],
    target: [usize; 3],
) -> Result<MergedKernel<T>> {
    let first = branches
        .first()
        .ok_or_else(|| Error::invalid("merge_branches", "empty branch set"))?;
    let (c_out, c_in) = (first.weight.shape()[0], first.weight.shape()[1]);
    let mut weight = Tensor::zeros(&[c_out, c_in, target[0], target[1], target[2]]);
    let mut bias = Tensor::zeros(&[c_out]);
    for branch in branches {
        branch.validate()?;
        if branch.weight.shape()[..2] != [c_out, c_in] {
            return Err(Error::shape(
                "merge_branches",
                format!(
                    "branch channels {:?} vs {:?}",
                    &branch.weight.shape()[..2],
                    [c_out, c_in]
                ),
            ));
        }
        branch.shape().check_fits(target)?;
        let sparse = dilate_to_sparse(&branch.weight, branch.dilation)?;
        let (w, b) = fuse_bn(&sparse, &branch.bn)?;
        weight.add_assign(&zero_pad_centered(&w, target)?)?;
        bias.add_assign(&b)?;
    }
    Ok(MergedKernel { weight, bias })
}

/// Train-form forward: sum over branches of `BN(conv(x, W, dilation))`,
/// each with centered "same" padding.
pub fn forward_train<T: Real>(input: &Tensor<T>, branches: &[ConvBranch<T>]) -> Result<Tensor<T>> {
    let mut acc: Option<Tensor<T>> = None;
    for branch in branches {
        branch.validate()?;
        let shape = branch.shape();
        let eff = shape.effective();
        if eff.iter().any(|e| e % 2 == 0) {
            return Err(Error::invalid(
                "forward_train",
                format!("branch {shape} has an even effective extent; same padding is ambiguous"),
            ));
        }
        let spec = ConvSpec::same(shape.kernel, shape.dilation);
        let y = batch_norm(&conv3d(input, &branch.weight, None, &spec)?, &branch.bn)?;
        match acc.as_mut() {
            None => acc = Some(y),
            Some(a) => a.add_assign(&y)?,
        }
    }
    acc.ok_or_else(|| Error::invalid("forward_train", "empty branch set"))
}

/// Deploy-form forward: one convolution with the merged kernel.
pub fn forward_deploy<T: Real>(input: &Tensor<T>, merged: &MergedKernel<T>) -> Result<Tensor<T>> {
    let ext = merged.extents();
    if ext.iter().any(|e| e % 2 == 0) {
        return Err(Error::invalid(
            "forward_deploy",
            format!("merged extents {ext:?} must be odd for centered padding"),
        ));
    }
    conv3d(
        input,
        &merged.weight,
        Some(&merged.bias),
        &ConvSpec::same(ext, [1, 1, 1]),
    )
}
