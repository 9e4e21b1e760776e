use super::{gemm, ConvInputs, GemmBlocking};
use crate::error::Result;
use crate::tensor::{Element, MatMut, MatRef, MatrixRM, Tensor4D};
use crate::timing::{Phase, PhaseLedger};

/// Unrolls input patches into matrix columns.
///
/// The result has `groups · (C/groups)·k_h·k_w` rows (group-major) and
/// `n·out_h·out_w` columns. Row `(g, c, ky, kx)` of column `(n, oy, ox)`
/// holds the input tap under that filter position, or zero in the padding.
pub fn im2col_transform<T: Element>(inputs: &ConvInputs<T>) -> Result<MatrixRM<T>> {
    let d = &inputs.desc;
    let (oh, ow) = d.output_shape()?;
    let cg = d.channels_per_group();
    let rows = d.in_channels * d.k_h * d.k_w;
    let cols = d.batch * oh * ow;
    let mut m = MatrixRM::zeros(rows, cols);
    let out = m.as_mut_slice();
    let src = inputs.input.as_slice();
    let plane = d.in_h * d.in_w;

    // Channels are laid out group-major already, so row (g, c, ky, kx) is
    // row ((g·cg + c)·k_h + ky)·k_w + kx.
    for ch in 0..d.in_channels {
        debug_assert!(ch / cg < d.groups);
        for ky in 0..d.k_h {
            for kx in 0..d.k_w {
                let r = (ch * d.k_h + ky) * d.k_w + kx;
                let row = &mut out[r * cols..(r + 1) * cols];
                for n in 0..d.batch {
                    let chan = &src[(n * d.in_channels + ch) * plane..][..plane];
                    let dst = &mut row[n * oh * ow..(n + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * d.stride_h + ky * d.dil_h) as isize - d.pad_h as isize;
                        let line = &mut dst[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= d.in_h as isize {
                            continue;
                        }
                        let in_row = &chan[iy as usize * d.in_w..][..d.in_w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * d.stride_w + kx * d.dil_w) as isize - d.pad_w as isize;
                            if ix >= 0 && (ix as usize) < d.in_w {
                                *v = in_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(m)
}

/// Im2col followed by one packed GEMM per (image, group).
///
/// The transform is the single pre-convolution reorder. Weights are used in
/// place as an `F/groups × (C/groups)·k_h·k_w` matrix per group, and each
/// GEMM writes straight into the NCHW output, so no post-reorder happens.
pub fn conv_baseline_im2col_gemm<T: Element>(
    inputs: &ConvInputs<T>,
    blocking: &GemmBlocking,
    ledger: &mut PhaseLedger,
) -> Result<Tensor4D<T>> {
    let d = &inputs.desc;
    let (oh, ow) = d.output_shape()?;
    blocking.validate()?;

    ledger.start(Phase::PreReorder)?;
    let cols = im2col_transform(inputs);
    ledger.update(Phase::PreReorder)?;
    let cols = cols?;

    let mut out = inputs.bias_initialized_output();
    let kg = d.channels_per_group() * d.k_h * d.k_w;
    let fg = d.filters_per_group();
    let pixels = oh * ow;
    let total_cols = cols.cols();
    let weights = inputs.weights.as_slice();
    let patches = cols.as_slice();
    let out_buf = out.as_mut_slice();

    for n in 0..d.batch {
        for g in 0..d.groups {
            let a = MatRef::new(&weights[g * fg * kg..(g + 1) * fg * kg], fg, kg, kg)?;
            let b = MatRef::new(&patches[g * kg * total_cols + n * pixels..], kg, pixels, total_cols)?;
            let c_off = (n * d.out_channels + g * fg) * pixels;
            let c = MatMut::new(&mut out_buf[c_off..c_off + fg * pixels], fg, pixels, pixels)?;
            gemm(a, b, c, blocking, ledger)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algos::conv_direct_naive;
    use crate::descriptor::ConvDescriptor;
    use crate::tensor::allclose;

    #[test]
    fn pointwise_is_a_reshape() {
        let d = ConvDescriptor::new(3, 4, 5, 2, 1, 1).with_batch(2);
        let inputs = ConvInputs::<f32>::random(d, 1).unwrap();
        let m = im2col_transform(&inputs).unwrap();
        assert_eq!((m.rows(), m.cols()), (3, 40));
        for n in 0..2 {
            for c in 0..3 {
                for p in 0..20 {
                    assert_eq!(m.get(c, n * 20 + p), inputs.input.as_slice()[(n * 3 + c) * 20 + p]);
                }
            }
        }
    }

    #[test]
    fn full_window_is_one_column() {
        let d = ConvDescriptor::new(2, 3, 3, 1, 3, 3);
        let inputs = ConvInputs::<f32>::random(d, 2).unwrap();
        let m = im2col_transform(&inputs).unwrap();
        assert_eq!((m.rows(), m.cols()), (18, 1));
        let col: Vec<f32> = (0..18).map(|r| m.get(r, 0)).collect();
        assert_eq!(col, inputs.input.as_slice());
    }

    #[test]
    fn padded_corner_columns() {
        let d = ConvDescriptor::new(1, 2, 2, 1, 3, 3).with_pad(1, 1);
        let inputs = ConvInputs::<f32>::constant(d, 1.0).unwrap();
        let m = im2col_transform(&inputs).unwrap();
        assert_eq!((m.rows(), m.cols()), (9, 4));
        // Enumerate which taps of each output anchor fall outside the input.
        for col in 0..4 {
            let (oy, ox) = (col / 2, col % 2);
            let mut out_of_bounds = 0;
            for ky in 0..3 {
                for kx in 0..3 {
                    let (iy, ix) = (oy as isize + ky - 1, ox as isize + kx - 1);
                    if !(0..2).contains(&iy) || !(0..2).contains(&ix) {
                        out_of_bounds += 1;
                    }
                }
            }
            assert_eq!(out_of_bounds, 5);
            let zeros = (0..9).filter(|&r| m.get(r, col) == 0.0).count();
            assert_eq!(zeros, out_of_bounds);
        }
    }

    #[test]
    fn all_ones_baseline() {
        let d = ConvDescriptor::new(1, 6, 6, 1, 3, 3).with_bias(true);
        let inputs = ConvInputs::<f32>::constant(d, 1.0).unwrap();
        let mut ledger = PhaseLedger::new();
        let out = conv_baseline_im2col_gemm(&inputs, &GemmBlocking::default(), &mut ledger).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 10.0));
        let r = ledger.snapshot().unwrap();
        assert_eq!(r.calls(Phase::PreReorder), 1);
        assert!(r.calls(Phase::InPacking) >= 1);
        assert_eq!(r.calls(Phase::PostReorder), 0);
        assert_eq!(r.calls(Phase::InUnpacking), 0);
    }

    #[test]
    fn grouped_batched_matches_naive() {
        let d = ConvDescriptor::new(4, 7, 6, 6, 3, 2)
            .with_groups(2)
            .with_batch(3)
            .with_stride(2, 1)
            .with_pad(1, 1)
            .with_dilation(1, 2)
            .with_bias(true);
        let inputs = ConvInputs::<f32>::random(d, 3).unwrap();
        let expected = conv_direct_naive(&inputs).unwrap();
        let got = conv_baseline_im2col_gemm(&inputs, &GemmBlocking::default(), &mut PhaseLedger::new()).unwrap();
        assert!(allclose(&got, &expected, 1e-4, 1e-6).unwrap().0);
    }
}
