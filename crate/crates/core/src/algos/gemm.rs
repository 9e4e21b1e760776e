//! Cache-blocked GEMM with packed panels, BLIS loop order:
//!
//! ```text
//! for jc in N step nc        B block column
//!   for pc in K step kc      pack B[pc.., jc..] into nr-wide panels
//!     for ic in M step mc    pack A[ic.., pc..] into mr-tall panels
//!       for jr, ir           mr x nr microkernel, C += A_panel * B_panel
//! ```
//!
//! Block-bound bookkeeping is timed as `InTiling`, every pack as
//! `InPacking`, every micro-tile as `InMicrokernel`.

use super::GemmBlocking;
use crate::error::{Error, Result};
use crate::tensor::{Element, MatMut, MatRef};
use crate::timing::{Phase, PhaseLedger};

/// `c += a · b`. The caller initializes `c` (zeros or bias).
pub fn gemm<T: Element>(
    a: MatRef<'_, T>,
    b: MatRef<'_, T>,
    mut c: MatMut<'_, T>,
    blocking: &GemmBlocking,
    ledger: &mut PhaseLedger,
) -> Result<()> {
    blocking.validate()?;
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    if b.rows() != k || c.rows() != m || c.cols() != n {
        return Err(Error::DimMismatch(format!(
            "gemm {}x{} * {}x{} into {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols(),
            c.rows(),
            c.cols()
        )));
    }
    if m == 0 || n == 0 || k == 0 {
        return Ok(());
    }
    let GemmBlocking { mc, kc, nc, mr, nr } = *blocking;
    let kernel = select_kernel::<T>(mr, nr);

    let mut a_pack = vec![T::zero(); round_up(mc.min(m), mr) * kc.min(k)];
    let mut b_pack = vec![T::zero(); round_up(nc.min(n), nr) * kc.min(k)];

    let mut jc = 0;
    while jc < n {
        let nb = ledger.time(Phase::InTiling, || nc.min(n - jc))?;
        let mut pc = 0;
        while pc < k {
            let kb = ledger.time(Phase::InTiling, || kc.min(k - pc))?;
            ledger.time(Phase::InPacking, || pack_b(&b, pc, jc, kb, nb, nr, &mut b_pack))?;
            let mut ic = 0;
            while ic < m {
                let mb = ledger.time(Phase::InTiling, || mc.min(m - ic))?;
                ledger.time(Phase::InPacking, || pack_a(&a, ic, pc, mb, kb, mr, &mut a_pack))?;
                for jr in (0..nb).step_by(nr) {
                    let b_panel = &b_pack[jr * kb..(jr + nr) * kb];
                    let cols = nr.min(nb - jr);
                    for ir in (0..mb).step_by(mr) {
                        let a_panel = &a_pack[ir * kb..(ir + mr) * kb];
                        let rows = mr.min(mb - ir);
                        let tile = Tile {
                            row0: ic + ir,
                            col0: jc + jr,
                            rows,
                            cols,
                        };
                        ledger.time(Phase::InMicrokernel, || {
                            kernel(kb, a_panel, b_panel, &mut c, tile, mr, nr)
                        })?;
                    }
                }
                ic += mb;
            }
            pc += kb;
        }
        jc += nb;
    }
    Ok(())
}

#[inline]
fn round_up(x: usize, to: usize) -> usize {
    x.div_ceil(to) * to
}

/// Packs `a[ic..ic+mb, pc..pc+kb]` into consecutive `mr`-row panels, each
/// stored k-major (`mr` values per k step). Rows past `mb` are zero.
fn pack_a<T: Element>(a: &MatRef<'_, T>, ic: usize, pc: usize, mb: usize, kb: usize, mr: usize, out: &mut [T]) {
    for (p, ir) in (0..mb).step_by(mr).enumerate() {
        let panel = &mut out[p * mr * kb..(p + 1) * mr * kb];
        let rows = mr.min(mb - ir);
        for i in 0..mr {
            if i < rows {
                let src = &a.row(ic + ir + i)[pc..pc + kb];
                for (kk, &v) in src.iter().enumerate() {
                    panel[kk * mr + i] = v;
                }
            } else {
                for kk in 0..kb {
                    panel[kk * mr + i] = T::zero();
                }
            }
        }
    }
}

/// Packs `b[pc..pc+kb, jc..jc+nb]` into consecutive `nr`-column panels,
/// each stored k-major. Columns past `nb` are zero.
fn pack_b<T: Element>(b: &MatRef<'_, T>, pc: usize, jc: usize, kb: usize, nb: usize, nr: usize, out: &mut [T]) {
    for (p, jr) in (0..nb).step_by(nr).enumerate() {
        let panel = &mut out[p * nr * kb..(p + 1) * nr * kb];
        let cols = nr.min(nb - jr);
        for kk in 0..kb {
            let src = &b.row(pc + kk)[jc + jr..jc + jr + cols];
            let dst = &mut panel[kk * nr..(kk + 1) * nr];
            dst[..cols].copy_from_slice(src);
            dst[cols..].fill(T::zero());
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Tile {
    row0: usize,
    col0: usize,
    rows: usize,
    cols: usize,
}

type KernelFn<T> = fn(usize, &[T], &[T], &mut MatMut<'_, T>, Tile, usize, usize);

fn select_kernel<T: Element>(mr: usize, nr: usize) -> KernelFn<T> {
    match (mr, nr) {
        (8, 8) => fixed_kernel::<T, 8, 8>,
        (4, 4) => fixed_kernel::<T, 4, 4>,
        (4, 8) => fixed_kernel::<T, 4, 8>,
        (8, 4) => fixed_kernel::<T, 8, 4>,
        (6, 8) => fixed_kernel::<T, 6, 8>,
        (8, 16) => fixed_kernel::<T, 8, 16>,
        _ => dynamic_kernel::<T>,
    }
}

/// Register-tiled inner product with compile-time tile sizes.
#[inline(never)]
fn fixed_kernel<T: Element, const MR: usize, const NR: usize>(
    kb: usize,
    a: &[T],
    b: &[T],
    c: &mut MatMut<'_, T>,
    tile: Tile,
    _mr: usize,
    _nr: usize,
) {
    let mut acc = [[T::zero(); NR]; MR];
    for (ap, bp) in a.chunks_exact(MR).zip(b.chunks_exact(NR)).take(kb) {
        for i in 0..MR {
            let av = ap[i];
            for j in 0..NR {
                acc[i][j] = acc[i][j] + av * bp[j];
            }
        }
    }
    store(c, tile, |i, j| acc[i][j]);
}

fn dynamic_kernel<T: Element>(
    kb: usize,
    a: &[T],
    b: &[T],
    c: &mut MatMut<'_, T>,
    tile: Tile,
    mr: usize,
    nr: usize,
) {
    let mut acc = vec![T::zero(); mr * nr];
    for (ap, bp) in a.chunks_exact(mr).zip(b.chunks_exact(nr)).take(kb) {
        for i in 0..mr {
            for j in 0..nr {
                acc[i * nr + j] = acc[i * nr + j] + ap[i] * bp[j];
            }
        }
    }
    store(c, tile, |i, j| acc[i * nr + j]);
}

#[inline(always)]
fn store<T: Element>(c: &mut MatMut<'_, T>, tile: Tile, acc: impl Fn(usize, usize) -> T) {
    for i in 0..tile.rows {
        let row = &mut c.row_mut(tile.row0 + i)[tile.col0..tile.col0 + tile.cols];
        for (j, v) in row.iter_mut().enumerate() {
            *v = *v + acc(i, j);
        }
    }
}
