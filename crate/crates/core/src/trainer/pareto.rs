use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::qlayers::QModel;
use crate::resource::CalibrationResult;

/// Objective values of a front member: higher `metric`, lower `ebops`.
pub trait ParetoPoint {
    fn metric(&self) -> f64;
    fn ebops(&self) -> f64;
    /// Orders members with identical objectives so merging is
    /// order-independent; the smaller key is kept.
    fn tie_key(&self) -> (usize, &str);

    fn dominates(&self, other: &Self) -> bool {
        let (a, b) = ((self.metric(), self.ebops()), (other.metric(), other.ebops()));
        a.0 >= b.0 && a.1 <= b.1 && a != b
    }
}

/// A saved model together with its objectives.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    /// Run that produced the checkpoint.
    pub label: String,
    pub val_metric: f64,
    /// Exact after [`finalize`](super::finalize), surrogate before.
    pub ebops: f64,
    pub surrogate_ebops: f64,
    pub exact: bool,
    pub model: QModel,
    pub calibration: Option<CalibrationResult>,
}

impl ParetoPoint for Checkpoint {
    fn metric(&self) -> f64 {
        self.val_metric
    }

    fn ebops(&self) -> f64 {
        self.ebops
    }

    fn tie_key(&self) -> (usize, &str) {
        (self.epoch, &self.label)
    }
}

/// Non-dominated set, ordered by increasing EBOPs.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoSet<T = Checkpoint> {
    members: Vec<T>,
}

impl<T> Default for ParetoSet<T> {
    fn default() -> Self {
        Self { members: Vec::new() }
    }
}

impl<T: ParetoPoint> ParetoSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn members(&self) -> &[T] {
        &self.members
    }

    pub fn into_members(self) -> Vec<T> {
        self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Inserts `c` unless a member dominates it, evicting members it
    /// dominates. Returns whether `c` was kept. Points with NaN objectives are
    /// rejected.
    pub fn insert(&mut self, c: T) -> bool {
        if c.metric().is_nan() || c.ebops().is_nan() {
            return false;
        }
        for m in &self.members {
            if m.dominates(&c) {
                return false;
            }
            let same = m.metric() == c.metric() && m.ebops() == c.ebops();
            if same && m.tie_key() <= c.tie_key() {
                return false;
            }
        }
        self.members.retain(|m| {
            !(c.dominates(m) || (m.metric() == c.metric() && m.ebops() == c.ebops()))
        });
        let pos = self
            .members
            .iter()
            .position(|m| m.ebops().partial_cmp(&c.ebops()) == Some(Ordering::Greater))
            .unwrap_or(self.members.len());
        self.members.insert(pos, c);
        true
    }

    pub fn merge(mut self, other: Self) -> Self {
        for c in other.members {
            self.insert(c);
        }
        self
    }

    /// Member with the best metric (ties: lowest EBOPs).
    pub fn best(&self) -> Option<&T> {
        self.members.iter().max_by(|a, b| {
            a.metric()
                .total_cmp(&b.metric())
                .then(b.ebops().total_cmp(&a.ebops()))
        })
    }
}
