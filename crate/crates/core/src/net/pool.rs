//! Per-thread recycling of the batch engine's matrices.
//!
//! Each work chunk allocates dozens of `B × width` matrices. Returning them
//! to the system allocator after every chunk makes it trim and re-fault the
//! same pages, which costs more than the arithmetic at desk widths.

use std::cell::RefCell;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2};

const MAX_POOLED: usize = 256;

thread_local! {
    static POOL: RefCell<Vec<Vec<f64>>> = const { RefCell::new(Vec::new()) };
}

/// A zero-filled `rows × cols` matrix, reusing a pooled buffer when one is
/// large enough.
pub fn zeros(rows: usize, cols: usize) -> Array2<f64> {
    let n = rows * cols;
    let mut buf = POOL.with(|p| {
        let mut p = p.borrow_mut();
        let best = p
            .iter()
            .enumerate()
            .filter(|(_, b)| b.capacity() >= n)
            .min_by_key(|(_, b)| b.capacity())
            .map(|(i, _)| i);
        match best {
            Some(i) => p.swap_remove(i),
            None => Vec::with_capacity(n),
        }
    });
    buf.clear();
    buf.resize(n, 0.0);
    Array2::from_shape_vec((rows, cols), buf).expect("buffer length matches shape")
}

pub fn recycle(a: Array2<f64>) {
    let (buf, _) = a.into_raw_vec_and_offset();
    if buf.capacity() == 0 {
        return;
    }
    POOL.with(|p| {
        let mut p = p.borrow_mut();
        if p.len() < MAX_POOLED {
            p.push(buf);
        }
    });
}

pub fn recycle_all(arrays: impl IntoIterator<Item = Array2<f64>>) {
    arrays.into_iter().for_each(recycle);
}

/// `a · b` into a pooled matrix.
pub fn matmul(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>) -> Array2<f64> {
    let mut c = zeros(a.nrows(), b.ncols());
    general_mat_mul(1.0, a, b, 0.0, &mut c);
    c
}
