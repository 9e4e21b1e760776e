use num_traits::{Float, NumCast};

use super::ConvInputs;
use crate::error::Result;
use crate::tensor::{Element, Tensor4D};

/// Reference convolution accumulating in the element type.
///
/// Supports the full descriptor space: stride, symmetric padding, dilation,
/// groups and rectangular kernels. Out-of-bounds taps contribute zero.
pub fn conv_direct_naive<T: Element>(inputs: &ConvInputs<T>) -> Result<Tensor4D<T>> {
    naive_with_accumulator::<T, T>(inputs)
}

/// Same as [`conv_direct_naive`] but accumulates in `f64`, for settling
/// disputes between two 32-bit implementations.
pub fn conv_direct_naive_wide<T: Element>(inputs: &ConvInputs<T>) -> Result<Tensor4D<T>> {
    naive_with_accumulator::<T, f64>(inputs)
}

fn naive_with_accumulator<T: Element, A: Float>(inputs: &ConvInputs<T>) -> Result<Tensor4D<T>> {
    let d = &inputs.desc;
    let (oh, ow) = d.output_shape()?;
    let cg = d.channels_per_group();
    let fg = d.filters_per_group();
    let cast = |v: T| -> A { <A as NumCast>::from(v).unwrap_or_else(A::nan) };
    let mut out = Tensor4D::zeros(d.batch, d.out_channels, oh, ow);

    for n in 0..d.batch {
        for f in 0..d.out_channels {
            let g = f / fg;
            let bias = inputs.bias.as_ref().map_or(A::zero(), |b| cast(b[f]));
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias;
                    for c in 0..cg {
                        for ky in 0..d.k_h {
                            let iy = (oy * d.stride_h + ky * d.dil_h) as isize - d.pad_h as isize;
                            if iy < 0 || iy >= d.in_h as isize {
                                continue;
                            }
                            for kx in 0..d.k_w {
                                let ix = (ox * d.stride_w + kx * d.dil_w) as isize - d.pad_w as isize;
                                if ix < 0 || ix >= d.in_w as isize {
                                    continue;
                                }
                                let x = inputs.input.get(n, g * cg + c, iy as usize, ix as usize);
                                let w = inputs.weights.get(f, c, ky, kx);
                                acc = acc + cast(x) * cast(w);
                            }
                        }
                    }
                    out.set(n, f, oy, ox, <T as NumCast>::from(acc).unwrap_or_else(T::nan));
                }
            }
        }
    }
    Ok(out)
}
