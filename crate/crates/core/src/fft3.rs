//! Pruned 3D complex FFTs built from rustfft line transforms.
//!
//! Layout is x-fastest, `dims[0]` along x. The forward transform skips lines
//! that are identically zero because the input lives in a corner block, and
//! the inverse skips lines whose outputs are never read.

use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

fn planner() -> &'static Mutex<FftPlanner<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    PLANNER.get_or_init(|| Mutex::new(FftPlanner::new()))
}

/// Smallest integer `>= n` whose prime factors are 2, 3 and 5.
pub(crate) fn nice_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

#[derive(Clone, Copy)]
struct SendPtr(*mut Complex64);
unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}

pub(crate) struct Fft3 {
    dims: [usize; 3],
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
}

impl Fft3 {
    pub(crate) fn new(dims: [usize; 3]) -> Self {
        let mut p = planner().lock().expect("fft planner poisoned");
        let forward = dims.map(|d| p.plan_fft_forward(d));
        let inverse = dims.map(|d| p.plan_fft_inverse(d));
        Fft3 {
            dims,
            forward,
            inverse,
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.dims.iter().product()
    }

    /// Forward transform of data supported in `[0, support)`.
    pub(crate) fn forward(&self, buf: &mut [Complex64], support: [usize; 3]) {
        let [n0, n1, n2] = self.dims;
        assert_eq!(buf.len(), self.len());
        let s = [support[0].min(n0), support[1].min(n1), support[2].min(n2)];
        let plane = n0 * n1;
        // x lines
        buf.par_chunks_mut(plane).take(s[2]).for_each(|pl| {
            let fft = &self.forward[0];
            let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
            fft.process_with_scratch(&mut pl[..n0 * s[1]], &mut scratch);
        });
        // y lines
        buf.par_chunks_mut(plane).take(s[2]).for_each(|pl| {
            line_pass_strided(pl, &self.forward[1], n0, n1, 0..n0);
        });
        self.z_pass(buf, &self.forward[2], 0..n1);
    }

    /// Unnormalized inverse transform; only the block `[lo, lo + len)` of the
    /// result is valid afterwards.
    pub(crate) fn inverse(&self, buf: &mut [Complex64], lo: [usize; 3], len: [usize; 3]) {
        let [n0, n1, _] = self.dims;
        assert_eq!(buf.len(), self.len());
        let plane = n0 * n1;
        self.z_pass(buf, &self.inverse[2], 0..n1);
        buf.par_chunks_mut(plane)
            .skip(lo[2])
            .take(len[2])
            .for_each(|pl| {
                line_pass_strided(pl, &self.inverse[1], n0, n1, 0..n0);
                let fft = &self.inverse[0];
                let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
                fft.process_with_scratch(
                    &mut pl[n0 * lo[1]..n0 * (lo[1] + len[1])],
                    &mut scratch,
                );
            });
    }

    fn z_pass(&self, buf: &mut [Complex64], fft: &Arc<dyn Fft<f64>>, rows: std::ops::Range<usize>) {
        let [n0, n1, n2] = self.dims;
        let plane = n0 * n1;
        let ptr = SendPtr(buf.as_mut_ptr());
        rows.into_par_iter().for_each_init(
            || {
                (
                    vec![Complex64::default(); n0 * n2],
                    vec![Complex64::default(); fft.get_inplace_scratch_len()],
                )
            },
            |(tmp, scratch), y| {
                let p = ptr;
                // SAFETY: each y touches only the cells with this y index, so
                // concurrent rows never alias.
                unsafe {
                    for z in 0..n2 {
                        let row = p.0.add(y * n0 + z * plane);
                        for x in 0..n0 {
                            tmp[x * n2 + z] = *row.add(x);
                        }
                    }
                    fft.process_with_scratch(tmp, scratch);
                    for z in 0..n2 {
                        let row = p.0.add(y * n0 + z * plane);
                        for x in 0..n0 {
                            *row.add(x) = tmp[x * n2 + z];
                        }
                    }
                }
            },
        );
    }
}

/// Transforms the y lines of one xy plane for the given x columns.
fn line_pass_strided(
    pl: &mut [Complex64],
    fft: &Arc<dyn Fft<f64>>,
    n0: usize,
    n1: usize,
    cols: std::ops::Range<usize>,
) {
    let mut tmp = vec![Complex64::default(); n0 * n1];
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let (c0, c1) = (cols.start, cols.end);
    for y in 0..n1 {
        for x in c0..c1 {
            tmp[(x - c0) * n1 + y] = pl[x + n0 * y];
        }
    }
    fft.process_with_scratch(&mut tmp[..(c1 - c0) * n1], &mut scratch);
    for y in 0..n1 {
        for x in c0..c1 {
            pl[x + n0 * y] = tmp[(x - c0) * n1 + y];
        }
    }
}
