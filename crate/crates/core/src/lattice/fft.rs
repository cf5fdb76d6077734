use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// In-place unnormalized multi-dimensional DFT of a row-major array.
///
/// Forward uses `exp(-i k x)`. The inverse is not divided by the size; see
/// [`ifft_nd`] for the normalized inverse.
pub fn fft_nd_raw(data: &mut [Complex64], dims: &[usize], inverse: bool) {
    let total: usize = dims.iter().product();
    assert_eq!(total, data.len(), "fft_nd: data length does not match dims");
    let mut stride = 1usize;
    let mut buf = Vec::new();
    let mut scratch = Vec::new();
    for axis in (0..dims.len()).rev() {
        let len = dims[axis];
        let fft = plan(len, inverse);
        scratch.resize(fft.get_inplace_scratch_len(), Complex64::new(0.0, 0.0));
        if stride == 1 {
            fft.process_with_scratch(data, &mut scratch);
        } else {
            // Gather lines of this axis into a contiguous batch, transform, scatter back.
            let block = len * stride;
            buf.resize(total, Complex64::new(0.0, 0.0));
            for (outer, chunk) in data.chunks(block).enumerate() {
                for s in 0..stride {
                    let line = &mut buf[(outer * stride + s) * len..(outer * stride + s + 1) * len];
                    for (j, v) in line.iter_mut().enumerate() {
                        *v = chunk[j * stride + s];
                    }
                }
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for (outer, chunk) in data.chunks_mut(block).enumerate() {
                for s in 0..stride {
                    let line = &buf[(outer * stride + s) * len..(outer * stride + s + 1) * len];
                    for (j, v) in line.iter().enumerate() {
                        chunk[j * stride + s] = *v;
                    }
                }
            }
        }
        stride *= len;
    }
}

pub fn fft_nd(data: &mut [Complex64], dims: &[usize]) {
    fft_nd_raw(data, dims, false);
}

/// Normalized inverse: `ifft_nd(fft_nd(x)) == x`.
pub fn ifft_nd(data: &mut [Complex64], dims: &[usize]) {
    fft_nd_raw(data, dims, true);
    let scale = 1.0 / data.len() as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
}
