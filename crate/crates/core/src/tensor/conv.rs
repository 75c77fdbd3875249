//! Direct (cross-correlation) convolutions with zero padding.
//!
//! Layouts: inputs are `[C, X, Y, Z]` (or `[C, X, Y]` in 2D), kernels are
//! `[C_out, C_in, kx, ky, kz]`, transpose-conv kernels are
//! `[C_in, C_out, kx, ky, kz]`.

use super::{ensure_rank, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: [usize; 3],
    pub dilation: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvSpec {
    /// Unit dilation and stride, no padding.
    pub fn valid(kernel: [usize; 3]) -> Self {
        Self {
            kernel,
            dilation: [1; 3],
            stride: [1; 3],
            padding: [0; 3],
        }
    }

    /// Stride 1 with centered padding so the output keeps the input extents.
    /// Effective extents must be odd.
    pub fn same(kernel: [usize; 3], dilation: [usize; 3]) -> Self {
        let mut padding = [0; 3];
        for axis in 0..3 {
            padding[axis] = (effective_extent(kernel[axis], dilation[axis]) - 1) / 2;
        }
        Self {
            kernel,
            dilation,
            stride: [1; 3],
            padding,
        }
    }

    pub fn effective(&self) -> [usize; 3] {
        let mut eff = [0; 3];
        for axis in 0..3 {
            eff[axis] = effective_extent(self.kernel[axis], self.dilation[axis]);
        }
        eff
    }

    pub fn validate(&self) -> Result<()> {
        for axis in 0..3 {
            if self.kernel[axis] == 0 {
                return Err(Error::invalid("conv", "kernel extent must be >= 1"));
            }
            if self.dilation[axis] == 0 || self.stride[axis] == 0 {
                return Err(Error::invalid(
                    "conv",
                    format!(
                        "dilation {:?} and stride {:?} must be >= 1",
                        self.dilation, self.stride
                    ),
                ));
            }
        }
        Ok(())
    }

    /// `floor((in + 2·pad − eff)/stride) + 1` per axis.
    pub fn output_extents(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let eff = self.effective();
        let mut out = [0; 3];
        for axis in 0..3 {
            let padded = input[axis] + 2 * self.padding[axis];
            if padded < eff[axis] {
                return Err(Error::shape(
                    "conv",
                    format!(
                        "padded extent {padded} smaller than effective kernel {} on axis {axis}",
                        eff[axis]
                    ),
                ));
            }
            out[axis] = (padded - eff[axis]) / self.stride[axis] + 1;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec2d {
    pub kernel: [usize; 2],
    pub dilation: [usize; 2],
    pub stride: [usize; 2],
    pub padding: [usize; 2],
}

impl ConvSpec2d {
    pub fn same(kernel: [usize; 2]) -> Self {
        Self {
            kernel,
            dilation: [1; 2],
            stride: [1; 2],
            padding: [(kernel[0] - 1) / 2, (kernel[1] - 1) / 2],
        }
    }

    pub fn strided(kernel: [usize; 2], stride: usize) -> Self {
        Self {
            stride: [stride; 2],
            ..Self::same(kernel)
        }
    }

    fn to_3d(self) -> ConvSpec {
        ConvSpec {
            kernel: [self.kernel[0], self.kernel[1], 1],
            dilation: [self.dilation[0], self.dilation[1], 1],
            stride: [self.stride[0], self.stride[1], 1],
            padding: [self.padding[0], self.padding[1], 0],
        }
    }
}

pub(crate) fn effective_extent(k: usize, dilation: usize) -> usize {
    (k - 1) * dilation + 1
}

/// Output indices `o` in `0..out_len` for which `o*stride + offset` lands in `0..in_len`.
fn valid_range(offset: isize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 {
        0
    } else {
        (-offset + s - 1) / s
    };
    let last = in_len as isize - 1 - offset;
    if last < 0 {
        return (0, 0);
    }
    let hi = ((last / s) + 1).min(out_len as isize);
    if lo >= hi {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

#[inline]
fn axpy<T: Real>(dst: &mut [T], src: &[T], w: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += w * s;
    }
}

fn dims4<T: Real>(t: &Tensor<T>) -> [usize; 4] {
    [t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]]
}

/// 3D cross-correlation. `bias`, when given, has one entry per output channel.
pub fn conv3d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    spec.validate()?;
    ensure_rank("conv3d", input, 4)?;
    ensure_rank("conv3d", weight, 5)?;
    let [c_in, ix, iy, iz] = dims4(input);
    let ws = weight.shape();
    let (c_out, kx, ky, kz) = (ws[0], ws[2], ws[3], ws[4]);
    if ws[1] != c_in {
        return Err(Error::shape(
            "conv3d",
            format!("weight expects {} input channels, input has {c_in}", ws[1]),
        ));
    }
    if [kx, ky, kz] != spec.kernel {
        return Err(Error::shape(
            "conv3d",
            format!(
                "weight extents {:?} vs spec {:?}",
                [kx, ky, kz],
                spec.kernel
            ),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(Error::shape(
                "conv3d",
                format!("bias shape {:?}, expected [{c_out}]", b.shape()),
            ));
        }
    }
    let [ox, oy, oz] = spec.output_extents([ix, iy, iz])?;
    let [dx, dy, dz] = spec.dilation;
    let [sx, sy, sz] = spec.stride;
    let [px, py, pz] = spec.padding;

    let in_slab = ix * iy * iz;
    let out_slab = ox * oy * oz;
    let mut out = vec![T::zero(); c_out * out_slab];
    let w = weight.data();
    let x = input.data();

    for co in 0..c_out {
        let dst_all = &mut out[co * out_slab..(co + 1) * out_slab];
        if let Some(b) = bias {
            dst_all.fill(b.data()[co]);
        }
        for ci in 0..c_in {
            let src_all = &x[ci * in_slab..(ci + 1) * in_slab];
            let w_base = (co * c_in + ci) * kx * ky * kz;
            for a in 0..kx {
                let off_x = (a * dx) as isize - px as isize;
                let (x_lo, x_hi) = valid_range(off_x, sx, ix, ox);
                for b in 0..ky {
                    let off_y = (b * dy) as isize - py as isize;
                    let (y_lo, y_hi) = valid_range(off_y, sy, iy, oy);
                    if y_lo == y_hi {
                        continue;
                    }
                    for c in 0..kz {
                        let off_z = (c * dz) as isize - pz as isize;
                        let (z_lo, z_hi) = valid_range(off_z, sz, iz, oz);
                        if z_lo == z_hi {
                            continue;
                        }
                        let wv = w[w_base + (a * ky + b) * kz + c];
                        // Whole (y, z) planes are contiguous when z maps 1:1.
                        let planar = sy == 1 && sz == 1 && off_z == 0 && oz == iz;
                        for oxi in x_lo..x_hi {
                            let xi = (oxi * sx) as isize + off_x;
                            let src_plane = xi as usize * iy * iz;
                            let dst_plane = oxi * oy * oz;
                            if planar {
                                let yi_lo = (y_lo as isize + off_y) as usize;
                                let len = (y_hi - y_lo) * oz;
                                let s0 = src_plane + yi_lo * iz;
                                let d0 = dst_plane + y_lo * oz;
                                axpy(&mut dst_all[d0..d0 + len], &src_all[s0..s0 + len], wv);
                                continue;
                            }
                            for oyi in y_lo..y_hi {
                                let yi = ((oyi * sy) as isize + off_y) as usize;
                                let src_row = src_plane + yi * iz;
                                let dst_row = dst_plane + oyi * oz;
                                if sz == 1 {
                                    let zi_lo = (z_lo as isize + off_z) as usize;
                                    let len = z_hi - z_lo;
                                    axpy(
                                        &mut dst_all[dst_row + z_lo..dst_row + z_lo + len],
                                        &src_all[src_row + zi_lo..src_row + zi_lo + len],
                                        wv,
                                    );
                                } else {
                                    for ozi in z_lo..z_hi {
                                        let zi = ((ozi * sz) as isize + off_z) as usize;
                                        dst_all[dst_row + ozi] += wv * src_all[src_row + zi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![c_out, ox, oy, oz], out)
}

/// 2D cross-correlation on `[C, X, Y]` with kernels `[C_out, C_in, kx, ky]`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec2d,
) -> Result<Tensor<T>> {
    ensure_rank("conv2d", input, 3)?;
    ensure_rank("conv2d", weight, 4)?;
    let s = input.shape();
    let ws = weight.shape();
    let input3 = Tensor::new(vec![s[0], s[1], s[2], 1], input.data().to_vec())?;
    let weight3 = Tensor::new(vec![ws[0], ws[1], ws[2], ws[3], 1], weight.data().to_vec())?;
    let out = conv3d(&input3, &weight3, bias, &spec.to_3d())?;
    let os = out.shape().to_vec();
    out.reshape(&os[..3])
}

/// Single-kernel transpose convolution over the three trailing axes of
/// `input`: each entry is scattered to `stride·i` and spread by `kernel`.
/// With a `1×1×1` unit kernel this inserts `stride − 1` zeros between entries.
pub fn conv_transpose3d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: [usize; 3],
) -> Result<Tensor<T>> {
    if input.rank() < 3 {
        return Err(Error::shape(
            "conv_transpose3d",
            format!("need at least 3 axes, got {:?}", input.shape()),
        ));
    }
    ensure_rank("conv_transpose3d", kernel, 3)?;
    if stride.contains(&0) {
        return Err(Error::invalid("conv_transpose3d", "stride must be >= 1"));
    }
    let r = input.rank();
    let [kx, ky, kz] = [
        input.shape()[r - 3],
        input.shape()[r - 2],
        input.shape()[r - 1],
    ];
    let [ka, kb, kc] = [kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]];
    if kx == 0 || ky == 0 || kz == 0 || ka == 0 || kb == 0 || kc == 0 {
        return Err(Error::shape("conv_transpose3d", "empty spatial extent"));
    }
    let out_ext = [
        (kx - 1) * stride[0] + ka,
        (ky - 1) * stride[1] + kb,
        (kz - 1) * stride[2] + kc,
    ];
    let lead: usize = input.shape()[..r - 3].iter().product();
    let in_slab = kx * ky * kz;
    let out_slab = out_ext.iter().product::<usize>();
    let mut out = vec![T::zero(); lead * out_slab];
    let src = input.data();
    let kv = kernel.data();
    for l in 0..lead {
        let dst = &mut out[l * out_slab..(l + 1) * out_slab];
        for i in 0..kx {
            for j in 0..ky {
                for k in 0..kz {
                    let v = src[l * in_slab + (i * ky + j) * kz + k];
                    for a in 0..ka {
                        for b in 0..kb {
                            for c in 0..kc {
                                let (x, y, z) =
                                    (i * stride[0] + a, j * stride[1] + b, k * stride[2] + c);
                                dst[(x * out_ext[1] + y) * out_ext[2] + z] +=
                                    v * kv[(a * kb + b) * kc + c];
                            }
                        }
                    }
                }
            }
        }
    }
    let mut shape = input.shape()[..r - 3].to_vec();
    shape.extend_from_slice(&out_ext);
    Tensor::new(shape, out)
}

/// Channel-mixing transpose convolution whose kernel extent equals its
/// stride, so output blocks do not overlap. Weight is `[C_in, C_out, fx, fy, fz]`.
pub(crate) fn upsample_transpose3d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    factor: [usize; 3],
) -> Result<Tensor<T>> {
    ensure_rank("upsample_transpose3d", input, 4)?;
    ensure_rank("upsample_transpose3d", weight, 5)?;
    let [c_in, x, y, z] = dims4(input);
    let ws = weight.shape();
    let c_out = ws[1];
    if ws[0] != c_in || ws[2..] != factor {
        return Err(Error::shape(
            "upsample_transpose3d",
            format!(
                "weight {:?} for input {:?} and factor {factor:?}",
                ws,
                input.shape()
            ),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(Error::shape(
                "upsample_transpose3d",
                format!("bias shape {:?}, expected [{c_out}]", b.shape()),
            ));
        }
    }
    let [fx, fy, fz] = factor;
    let (ox, oy, oz) = (x * fx, y * fy, z * fz);
    let out_slab = ox * oy * oz;
    let in_slab = x * y * z;
    let mut out = vec![T::zero(); c_out * out_slab];
    let src = input.data();
    let w = weight.data();
    for co in 0..c_out {
        let dst = &mut out[co * out_slab..(co + 1) * out_slab];
        if let Some(b) = bias {
            dst.fill(b.data()[co]);
        }
        for ci in 0..c_in {
            let s = &src[ci * in_slab..(ci + 1) * in_slab];
            let wb = (ci * c_out + co) * fx * fy * fz;
            for i in 0..x {
                for j in 0..y {
                    let row = &s[(i * y + j) * z..(i * y + j + 1) * z];
                    for a in 0..fx {
                        for b in 0..fy {
                            let drow = ((i * fx + a) * oy + j * fy + b) * oz;
                            for c in 0..fz {
                                let wv = w[wb + (a * fy + b) * fz + c];
                                for (k, &v) in row.iter().enumerate() {
                                    dst[drow + k * fz + c] += wv * v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![c_out, ox, oy, oz], out)
}

/// Stride-2, kernel-2 transpose 3D convolution: every spatial extent doubles.
pub fn upsample2x_transpose3d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    upsample_transpose3d(input, weight, bias, [2, 2, 2])
}
