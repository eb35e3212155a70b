//! Runtime multiply-accumulate counter.
//!
//! Kernels add their exact MAC count once per call, so the hot loops never
//! touch the counter.

use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Debug, Default)]
pub struct MacCounter {
    spmm: AtomicU64,
    matmul: AtomicU64,
}

impl MacCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_spmm(&self, macs: u64) {
        self.spmm.fetch_add(macs, Ordering::Relaxed);
    }

    pub fn add_matmul(&self, macs: u64) {
        self.matmul.fetch_add(macs, Ordering::Relaxed);
    }

    pub fn spmm_macs(&self) -> u64 {
        self.spmm.load(Ordering::Relaxed)
    }

    pub fn matmul_macs(&self) -> u64 {
        self.matmul.load(Ordering::Relaxed)
    }

    /// Total MACs tallied so far.
    pub fn measured_macs(&self) -> u64 {
        self.spmm_macs() + self.matmul_macs()
    }

    pub fn reset(&self) {
        self.spmm.store(0, Ordering::Relaxed);
        self.matmul.store(0, Ordering::Relaxed);
    }
}

pub(crate) fn tally_spmm(counter: Option<&MacCounter>, macs: u64) {
    if let Some(c) = counter {
        c.add_spmm(macs);
    }
}

pub(crate) fn tally_matmul(counter: Option<&MacCounter>, macs: u64) {
    if let Some(c) = counter {
        c.add_matmul(macs);
    }
}
