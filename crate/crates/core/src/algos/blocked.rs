//! Tiled direct convolution.
//!
//! The output of each image is cut into `tile_h × tile_w` spatial tiles.
//! Per tile the input window it reads is copied into a zero-padded,
//! contiguous buffer (`InPacking`), a register-blocked kernel computes
//! `FILTER_BLOCK × PIXEL_BLOCK` accumulators at a time for every filter
//! (`InMicrokernel`), and the tile result is scattered back into the NCHW
//! output (`InUnpacking`). Weights are interleaved once per call by filter
//! block (`PreReorder`), and tile sizes are chosen once from the descriptor
//! and cache sizes (`PreAnalysis`).

use super::ConvInputs;
use crate::descriptor::ConvDescriptor;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor4D};
use crate::timing::{Phase, PhaseLedger};

const FILTER_BLOCK: usize = 8;
const PIXEL_BLOCK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheParams {
    pub l1_bytes: usize,
    pub l2_bytes: usize,
}

impl Default for CacheParams {
    fn default() -> Self {
        CacheParams {
            l1_bytes: 32 * 1024,
            l2_bytes: 1024 * 1024,
        }
    }
}

/// Tile decomposition chosen for one descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DirectPlan {
    pub batch: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub tile_h: usize,
    pub tile_w: usize,
    pub tiles_y: usize,
    pub tiles_x: usize,
}

impl DirectPlan {
    /// Number of spatial tiles over all images; one input pack per tile.
    pub fn tile_count(&self) -> usize {
        self.batch * self.tiles_y * self.tiles_x
    }

    fn padded_tile_w(&self) -> usize {
        self.tile_w.div_ceil(PIXEL_BLOCK) * PIXEL_BLOCK
    }
}

pub(crate) fn check_supported(desc: &ConvDescriptor) -> Result<()> {
    desc.validate()?;
    let reason = if desc.groups != 1 {
        format!("groups = {}", desc.groups)
    } else if desc.dil_h != 1 || desc.dil_w != 1 {
        format!("dilation = {}x{}", desc.dil_h, desc.dil_w)
    } else {
        return Ok(());
    };
    Err(Error::Unsupported {
        algorithm: "blocked_direct",
        reason,
    })
}

/// Picks the largest tile height whose packed input window and tile output
/// buffer fit in half of L2, with tiles at most four pixel blocks wide.
pub fn plan_direct<T: Element>(desc: &ConvDescriptor, cache: &CacheParams) -> Result<DirectPlan> {
    check_supported(desc)?;
    let (out_h, out_w) = desc.output_shape()?;
    let elem = std::mem::size_of::<T>();
    let tile_w = out_w.min(4 * PIXEL_BLOCK);
    let tile_w_pad = tile_w.div_ceil(PIXEL_BLOCK) * PIXEL_BLOCK;
    let window_w = (tile_w_pad - 1) * desc.stride_w + desc.k_w;
    let filters_pad = desc.out_channels.div_ceil(FILTER_BLOCK) * FILTER_BLOCK;
    let budget = cache.l2_bytes / 2;
    let footprint = |th: usize| {
        let window_h = (th - 1) * desc.stride_h + desc.k_h;
        (desc.in_channels * window_h * window_w + filters_pad * th * tile_w_pad) * elem
    };
    let mut tile_h = 1;
    while tile_h < out_h && footprint(tile_h + 1) <= budget {
        tile_h += 1;
    }
    Ok(DirectPlan {
        batch: desc.batch,
        out_h,
        out_w,
        tile_h,
        tile_w,
        tiles_y: out_h.div_ceil(tile_h),
        tiles_x: out_w.div_ceil(tile_w),
    })
}

/// Direct convolution over cache-sized output tiles. Supports stride,
/// padding and rectangular kernels; grouped and dilated descriptors are
/// rejected with [`Error::Unsupported`].
pub fn conv_main_blocked_direct<T: Element>(
    inputs: &ConvInputs<T>,
    cache: &CacheParams,
    ledger: &mut PhaseLedger,
) -> Result<Tensor4D<T>> {
    let d = inputs.desc;
    ledger.start(Phase::PreAnalysis)?;
    let plan = plan_direct::<T>(&d, cache);
    ledger.update(Phase::PreAnalysis)?;
    let plan = plan?;

    let weights = ledger.time(Phase::PreReorder, || interleave_weights(inputs))?;

    let c_in = d.in_channels;
    let filter_blocks = d.out_channels.div_ceil(FILTER_BLOCK);
    let tile_w_pad = plan.padded_tile_w();
    let window_w = (tile_w_pad - 1) * d.stride_w + d.k_w;
    let window_h_max = (plan.tile_h - 1) * d.stride_h + d.k_h;
    let mut window = vec![T::zero(); c_in * window_h_max * window_w];
    let mut tile_out = vec![T::zero(); filter_blocks * FILTER_BLOCK * plan.tile_h * tile_w_pad];
    let mut bias = vec![T::zero(); filter_blocks * FILTER_BLOCK];
    if let Some(b) = &inputs.bias {
        bias[..d.out_channels].copy_from_slice(b);
    }
    let mut out = Tensor4D::zeros(d.batch, d.out_channels, plan.out_h, plan.out_w);

    for n in 0..d.batch {
        for ty in 0..plan.tiles_y {
            for tx in 0..plan.tiles_x {
                let tile = ledger.time(Phase::InTiling, || {
                    let oy0 = ty * plan.tile_h;
                    let ox0 = tx * plan.tile_w;
                    let rows = plan.tile_h.min(plan.out_h - oy0);
                    let cols = plan.tile_w.min(plan.out_w - ox0);
                    TileGeom {
                        n,
                        oy0,
                        ox0,
                        rows,
                        cols,
                        window_h: (rows - 1) * d.stride_h + d.k_h,
                        window_w,
                    }
                })?;
                ledger.time(Phase::InPacking, || pack_window(inputs, &tile, &mut window))?;
                ledger.time(Phase::InMicrokernel, || {
                    compute_tile(&d, &tile, &window, &weights, &bias, plan.tile_h, tile_w_pad, &mut tile_out)
                })?;
                ledger.time(Phase::InUnpacking, || {
                    unpack_tile(&tile, &tile_out, plan.tile_h, tile_w_pad, &mut out)
                })?;
            }
        }
    }
    Ok(out)
}

struct TileGeom {
    n: usize,
    oy0: usize,
    ox0: usize,
    rows: usize,
    cols: usize,
    window_h: usize,
    window_w: usize,
}

/// `(F/FILTER_BLOCK, C, k_h, k_w, FILTER_BLOCK)`, zero-padded filters.
fn interleave_weights<T: Element>(inputs: &ConvInputs<T>) -> Vec<T> {
    let d = &inputs.desc;
    let blocks = d.out_channels.div_ceil(FILTER_BLOCK);
    let taps = d.in_channels * d.k_h * d.k_w;
    let mut packed = vec![T::zero(); blocks * taps * FILTER_BLOCK];
    let src = inputs.weights.as_slice();
    for f in 0..d.out_channels {
        let (fb, lane) = (f / FILTER_BLOCK, f % FILTER_BLOCK);
        for t in 0..taps {
            packed[(fb * taps + t) * FILTER_BLOCK + lane] = src[f * taps + t];
        }
    }
    packed
}

/// Copies the input window of `tile` into `window` as `(C, window_h,
/// window_w)`, writing zeros wherever the window hangs over the padding.
fn pack_window<T: Element>(inputs: &ConvInputs<T>, tile: &TileGeom, window: &mut [T]) {
    let d = &inputs.desc;
    let src = inputs.input.as_slice();
    let plane = d.in_h * d.in_w;
    let y0 = (tile.oy0 * d.stride_h) as isize - d.pad_h as isize;
    let x0 = (tile.ox0 * d.stride_w) as isize - d.pad_w as isize;
    // Columns of the window that map inside the input.
    let lo = (-x0).clamp(0, tile.window_w as isize) as usize;
    let hi = (d.in_w as isize - x0).clamp(lo as isize, tile.window_w as isize) as usize;
    for c in 0..d.in_channels {
        let chan = &src[(tile.n * d.in_channels + c) * plane..][..plane];
        for r in 0..tile.window_h {
            let dst = &mut window[(c * tile.window_h + r) * tile.window_w..][..tile.window_w];
            let iy = y0 + r as isize;
            if iy < 0 || iy >= d.in_h as isize || lo == hi {
                dst.fill(T::zero());
                continue;
            }
            let row = &chan[iy as usize * d.in_w..][..d.in_w];
            dst[..lo].fill(T::zero());
            let start = (x0 + lo as isize) as usize;
            dst[lo..hi].copy_from_slice(&row[start..start + (hi - lo)]);
            dst[hi..].fill(T::zero());
        }
    }
}

/// Register-blocked accumulation for every filter over one packed tile.
/// Results land in `tile_out` as `(F_padded, tile_h, tile_w_pad)`.
#[allow(clippy::too_many_arguments)]
fn compute_tile<T: Element>(
    d: &ConvDescriptor,
    tile: &TileGeom,
    window: &[T],
    weights: &[T],
    bias: &[T],
    tile_h: usize,
    tile_w_pad: usize,
    tile_out: &mut [T],
) {
    let (kh, kw, sw, sh) = (d.k_h, d.k_w, d.stride_w, d.stride_h);
    let taps = d.in_channels * kh * kw;
    let ww = tile.window_w;
    for (fb, wblock) in weights.chunks_exact(taps * FILTER_BLOCK).enumerate() {
        let bias_block = &bias[fb * FILTER_BLOCK..(fb + 1) * FILTER_BLOCK];
        for y in 0..tile.rows {
            for xs in (0..tile_w_pad).step_by(PIXEL_BLOCK) {
                let mut acc = [[T::zero(); PIXEL_BLOCK]; FILTER_BLOCK];
                for (i, row) in acc.iter_mut().enumerate() {
                    row.fill(bias_block[i]);
                }
                for c in 0..d.in_channels {
                    for ky in 0..kh {
                        let in_row = &window[(c * tile.window_h + y * sh + ky) * ww..][..ww];
                        let w_row = &wblock[((c * kh + ky) * kw) * FILTER_BLOCK..][..kw * FILTER_BLOCK];
                        for (kx, w) in w_row.chunks_exact(FILTER_BLOCK).enumerate() {
                            let mut px = [T::zero(); PIXEL_BLOCK];
                            for (j, p) in px.iter_mut().enumerate() {
                                *p = in_row[(xs + j) * sw + kx];
                            }
                            for i in 0..FILTER_BLOCK {
                                let wi = w[i];
                                for j in 0..PIXEL_BLOCK {
                                    acc[i][j] = acc[i][j] + wi * px[j];
                                }
                            }
                        }
                    }
                }
                for (i, row) in acc.iter().enumerate() {
                    let f = fb * FILTER_BLOCK + i;
                    let dst = &mut tile_out[(f * tile_h + y) * tile_w_pad + xs..][..PIXEL_BLOCK];
                    dst.copy_from_slice(row);
                }
            }
        }
    }
}

fn unpack_tile<T: Element>(tile: &TileGeom, tile_out: &[T], tile_h: usize, tile_w_pad: usize, out: &mut Tensor4D<T>) {
    let [_, filters, _, _] = out.dims();
    for f in 0..filters {
        for y in 0..tile.rows {
            let src = &tile_out[(f * tile_h + y) * tile_w_pad..][..tile.cols];
            let start = out.index(tile.n, f, tile.oy0 + y, tile.ox0);
            out.as_mut_slice()[start..start + tile.cols].copy_from_slice(src);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algos::conv_direct_naive;
    use crate::tensor::allclose;

    fn check(desc: ConvDescriptor, cache: CacheParams) -> PhaseLedger {
        let inputs = ConvInputs::<f32>::random(desc, 17).unwrap();
        let mut ledger = PhaseLedger::new();
        let got = conv_main_blocked_direct(&inputs, &cache, &mut ledger).unwrap();
        let expected = conv_direct_naive(&inputs).unwrap();
        let (pass, err) = allclose(&got, &expected, 1e-4, 1e-6).unwrap();
        assert!(pass, "{desc}: {err}");
        ledger
    }

    #[test]
    fn matches_naive_with_many_tiles() {
        let tiny = CacheParams {
            l1_bytes: 1024,
            l2_bytes: 4096,
        };
        for desc in [
            ConvDescriptor::new(3, 20, 45, 10, 3, 3).with_pad(1, 1).with_bias(true),
            ConvDescriptor::new(2, 19, 17, 9, 5, 3).with_stride(2, 2).with_pad(3, 1),
            ConvDescriptor::new(5, 9, 40, 17, 1, 1).with_batch(2),
            ConvDescriptor::new(1, 7, 7, 1, 7, 7).with_pad(3, 3),
        ] {
            let plan = plan_direct::<f32>(&desc, &tiny).unwrap();
            assert!(plan.tile_count() > desc.batch, "{plan:?}");
            check(desc, tiny);
            check(desc, CacheParams::default());
        }
    }

    #[test]
    fn instrumentation_contract() {
        let desc = ConvDescriptor::new(3, 32, 32, 16, 3, 3).with_stride(2, 2).with_pad(1, 1);
        let cache = CacheParams {
            l1_bytes: 8 * 1024,
            l2_bytes: 16 * 1024,
        };
        let plan = plan_direct::<f32>(&desc, &cache).unwrap();
        let r = check(desc, cache).snapshot().unwrap();
        for p in [Phase::InTiling, Phase::InPacking, Phase::InMicrokernel, Phase::InUnpacking] {
            assert_eq!(r.calls(p), plan.tile_count() as u64, "{p}");
        }
        assert!(r.elapsed(Phase::InPacking) > 0);
        assert_eq!(r.calls(Phase::PreAnalysis), 1);
        assert_eq!(r.calls(Phase::PostReorder), 0);
        assert_eq!(r.elapsed(Phase::PostReorder), 0);
    }

    #[test]
    fn rejects_grouped_and_dilated() {
        let mut ledger = PhaseLedger::new();
        for desc in [
            ConvDescriptor::new(4, 8, 8, 4, 3, 3).with_groups(2),
            ConvDescriptor::new(4, 8, 8, 4, 3, 3).with_dilation(2, 1),
        ] {
            let inputs = ConvInputs::<f32>::random(desc, 0).unwrap();
            let err = conv_main_blocked_direct(&inputs, &CacheParams::default(), &mut ledger);
            assert!(matches!(err, Err(Error::Unsupported { .. })));
            ledger.snapshot().unwrap();
        }
    }

    #[test]
    fn plan_never_exceeds_output() {
        let desc = ConvDescriptor::new(1, 3, 3, 1, 3, 3);
        let plan = plan_direct::<f32>(&desc, &CacheParams::default()).unwrap();
        assert_eq!((plan.tile_h, plan.tile_w, plan.tile_count()), (1, 1, 1));
    }
}
