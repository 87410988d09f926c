//! Row-major f32 GEMM with deterministic parallelism: the output columns are
//! split at fixed boundaries, so results are bit-identical regardless of
//! thread count.

use rayon::prelude::*;

/// Columns per parallel task. Fixed so partitioning never depends on the
/// thread pool size.
const COL_CHUNK: usize = 1536;

struct SendPtr(*mut f32);
unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}

impl SendPtr {
    fn get(&self) -> *mut f32 {
        self.0
    }
}

struct SendConstPtr(*const f32);
unsafe impl Send for SendConstPtr {}
unsafe impl Sync for SendConstPtr {}

impl SendConstPtr {
    fn get(&self) -> *const f32 {
        self.0
    }
}

/// C[m,n] = alpha * A[m,k] (strided) * B[k,n] (strided) + beta * C.
///
/// Strides are row/col element strides of the logical matrices, allowing
/// transposed views without copying.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    rsa: isize,
    csa: isize,
    b: &[f32],
    rsb: isize,
    csb: isize,
    beta: f32,
    c: &mut [f32],
    rsc: isize,
    csc: isize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let n_chunks = n.div_ceil(COL_CHUNK);
    if n_chunks <= 1 || csc != 1 || csb != 1 {
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
        return;
    }
    let pa = SendConstPtr(a.as_ptr());
    let pb = SendConstPtr(b.as_ptr());
    let pc = SendPtr(c.as_mut_ptr());
    (0..n_chunks).into_par_iter().for_each(|chunk| {
        let j0 = chunk * COL_CHUNK;
        let nj = COL_CHUNK.min(n - j0);
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                nj,
                alpha,
                pa.get(),
                rsa,
                csa,
                pb.get().add(j0),
                rsb,
                1,
                beta,
                pc.get().add(j0),
                rsc,
                1,
            );
        }
    });
}

/// Plain row-major C = alpha*A*B + beta*C.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    b: &[f32],
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    gemm_strided(
        m, k, n, alpha, a, k as isize, 1, b, n as isize, 1, beta, c, n as isize, 1,
    );
}
