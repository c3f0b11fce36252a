//! Thin wrapper over `rustfft` with per-thread plan caching.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

thread_local! {
    static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> =
        RefCell::new(HashMap::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        cell.borrow_mut()
            .entry((len, inverse))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

/// Unnormalized forward DFT: `X_m = sum_j x_j e^{-2 pi i j m / n}`.
pub fn fft(values: &[Complex64]) -> Vec<Complex64> {
    let mut buf = values.to_vec();
    fft_inplace(&mut buf);
    buf
}

/// Inverse DFT including the `1/n` normalization.
pub fn ifft(modes: &[Complex64]) -> Vec<Complex64> {
    let mut buf = modes.to_vec();
    ifft_inplace(&mut buf);
    buf
}

pub fn fft_inplace(buf: &mut [Complex64]) {
    plan(buf.len(), false).process(buf);
}

pub fn ifft_inplace(buf: &mut [Complex64]) {
    plan(buf.len(), true).process(buf);
    let scale = 1.0 / buf.len() as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// Compensated (Kahan) summation; keeps norm accumulations at O(eps)
/// independent of the number of terms.
pub fn kahan_sum(terms: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for t in terms {
        let y = t - carry;
        let s = sum + y;
        carry = (s - sum) - y;
        sum = s;
    }
    sum
}
