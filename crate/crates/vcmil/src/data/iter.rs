//! Paired sampling of one abnormal and one normal video per step.
//!
//! Each class keeps its own shuffled order and reshuffles independently when
//! exhausted, so classes of different sizes pair up uniformly. The shuffle of
//! class pass `k` is a pure function of (seed, class tag, k), which makes the
//! stream both deterministic and resumable from a bare step counter.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

#[derive(Debug)]
pub struct PairedIterator {
    seed: u64,
    n_abnormal: usize,
    n_normal: usize,
    step: u64,
    abnormal_order: Vec<usize>,
    normal_order: Vec<usize>,
    abnormal_pass: u64,
    normal_pass: u64,
}

impl PairedIterator {
    pub fn new(seed: u64, n_abnormal: usize, n_normal: usize) -> Result<PairedIterator> {
        if n_abnormal == 0 || n_normal == 0 {
            return Err(Error::Config(format!(
                "paired iteration needs both classes in the train split \
                 (abnormal: {}, normal: {})",
                n_abnormal, n_normal
            )));
        }
        let mut it = PairedIterator {
            seed,
            n_abnormal,
            n_normal,
            step: 0,
            abnormal_order: Vec::new(),
            normal_order: Vec::new(),
            abnormal_pass: u64::MAX,
            normal_pass: u64::MAX,
        };
        it.load_pass(true, 0);
        it.load_pass(false, 0);
        Ok(it)
    }

    /// Pairs per epoch: the larger class is visited exactly once.
    pub fn pairs_per_epoch(&self) -> usize {
        self.n_abnormal.max(self.n_normal)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    fn load_pass(&mut self, abnormal: bool, pass: u64) {
        let (tag, n) = if abnormal {
            (stream::SHUFFLE_ABNORMAL, self.n_abnormal)
        } else {
            (stream::SHUFFLE_NORMAL, self.n_normal)
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_rng(self.seed, tag, pass));
        if abnormal {
            self.abnormal_order = order;
            self.abnormal_pass = pass;
        } else {
            self.normal_order = order;
            self.normal_pass = pass;
        }
    }

    /// Indices of the next (abnormal, normal) pair.
    pub fn next_pair(&mut self) -> (usize, usize) {
        let a_pass = self.step / self.n_abnormal as u64;
        let n_pass = self.step / self.n_normal as u64;
        if a_pass != self.abnormal_pass {
            self.load_pass(true, a_pass);
        }
        if n_pass != self.normal_pass {
            self.load_pass(false, n_pass);
        }
        let a = self.abnormal_order[(self.step % self.n_abnormal as u64) as usize];
        let n = self.normal_order[(self.step % self.n_normal as u64) as usize];
        self.step += 1;
        (a, n)
    }

    /// Jump to an absolute step, e.g. when resuming from a checkpoint.
    pub fn seek(&mut self, step: u64) {
        self.step = step;
    }
}
