use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::autograd::{Gradients, Var};
use crate::ops::BatchStats;
use crate::tensor::Tensor;

static NEXT_SET_UID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    /// Buffers (batch-norm running statistics) are persisted but never optimised.
    pub trainable: bool,
}

/// Named, ordered storage for every tensor a model owns.
///
/// Layers keep [`ParamId`]s into the set; the set itself is plain data and can
/// be shared read-only across threads for inference.
#[derive(Debug)]
pub struct ParamSet {
    uid: u64,
    entries: Vec<ParamEntry>,
}

impl Clone for ParamSet {
    fn clone(&self) -> Self {
        Self { uid: NEXT_SET_UID.fetch_add(1, Ordering::Relaxed), entries: self.entries.clone() }
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self { uid: NEXT_SET_UID.fetch_add(1, Ordering::Relaxed), entries: Vec::new() }
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.push(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.push(name.into(), value, false)
    }

    fn push(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        debug_assert!(self.entries.iter().all(|e| e.name != name), "duplicate parameter {name}");
        self.entries.push(ParamEntry { name, value, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.numel()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }
}

/// Per-forward-pass state: train/eval switch, parameter leaves and pending
/// batch-norm statistic updates.
///
/// Only sets registered with [`Ctx::track`] produce gradient-carrying leaves;
/// all other parameters enter the graph as constants.
pub struct Ctx {
    train: bool,
    tracked: HashSet<u64>,
    leaves: RefCell<HashMap<(u64, usize), Var>>,
    bn_updates: RefCell<Vec<BufferUpdate>>,
}

struct BufferUpdate {
    set_uid: u64,
    mean: ParamId,
    var: ParamId,
    momentum: f32,
    stats: BatchStats,
}

impl Ctx {
    pub fn eval() -> Self {
        Self::new(false)
    }

    pub fn train() -> Self {
        Self::new(true)
    }

    pub fn new(train: bool) -> Self {
        Self {
            train,
            tracked: HashSet::new(),
            leaves: RefCell::new(HashMap::new()),
            bn_updates: RefCell::new(Vec::new()),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn track(mut self, set: &ParamSet) -> Self {
        self.tracked.insert(set.uid);
        self
    }

    pub fn param(&self, set: &ParamSet, id: ParamId) -> Var {
        let key = (set.uid, id.0);
        if let Some(v) = self.leaves.borrow().get(&key) {
            return v.clone();
        }
        let entry = &set.entries[id.0];
        let v = if entry.trainable && self.tracked.contains(&set.uid) {
            Var::leaf(entry.value.clone())
        } else {
            Var::constant(entry.value.clone())
        };
        self.leaves.borrow_mut().insert(key, v.clone());
        v
    }

    pub(crate) fn record_bn(&self, set: &ParamSet, mean: ParamId, var: ParamId, momentum: f32, stats: BatchStats) {
        self.bn_updates.borrow_mut().push(BufferUpdate { set_uid: set.uid, mean, var, momentum, stats });
    }

    /// Gradient for every entry of `set`, indexed by [`ParamId`]; `None` for
    /// buffers and parameters that were not reached.
    pub fn param_grads(&self, set: &ParamSet, grads: &Gradients) -> Vec<Option<Tensor>> {
        let leaves = self.leaves.borrow();
        (0..set.entries.len())
            .map(|i| leaves.get(&(set.uid, i)).and_then(|v| grads.get(v)).cloned())
            .collect()
    }

    /// Applies the running-statistic updates recorded for `set`, in forward order.
    pub fn apply_buffer_updates(&self, set: &mut ParamSet) {
        let mut updates = self.bn_updates.borrow_mut();
        let (mine, rest): (Vec<_>, Vec<_>) = updates.drain(..).partition(|u| u.set_uid == set.uid);
        *updates = rest;
        for u in mine {
            let m = u.momentum;
            for (r, &b) in set.get_mut(u.mean).data_mut().iter_mut().zip(&u.stats.mean) {
                *r = (1.0 - m) * *r + m * b;
            }
            for (r, &b) in set.get_mut(u.var).data_mut().iter_mut().zip(&u.stats.var) {
                *r = (1.0 - m) * *r + m * b;
            }
        }
    }
}
