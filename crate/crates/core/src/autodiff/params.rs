use std::collections::HashMap;

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter slot inside a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotId(pub(crate) usize);

impl SlotId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Slot {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub first_moment: Tensor,
    pub second_moment: Tensor,
}

/// Named trainable tensors with gradients and Adam moments.
///
/// Slots keep their insertion order, which is also the serialization order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    slots: Vec<Slot>,
    by_name: HashMap<String, SlotId>,
    step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<SlotId> {
        if self.by_name.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        let id = SlotId(self.slots.len());
        let zeros = Tensor::zeros(value.shape());
        self.slots.push(Slot {
            name: name.to_string(),
            grad: zeros.clone(),
            first_moment: zeros.clone(),
            second_moment: zeros,
            value,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    /// Inserts a tensor drawn uniformly from `[-bound, bound]`.
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> Result<SlotId> {
        let mut t = Tensor::zeros(shape);
        for v in t.values_mut() {
            *v = rng.random_range(-bound..=bound);
        }
        self.insert(name, t)
    }

    pub fn id(&self, name: &str) -> Option<SlotId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slot(&self, id: SlotId) -> &Slot {
        &self.slots[id.0]
    }

    pub fn slot_mut(&mut self, id: SlotId) -> &mut Slot {
        &mut self.slots[id.0]
    }

    pub fn slots(&self) -> impl Iterator<Item = (SlotId, &Slot)> {
        self.slots.iter().enumerate().map(|(i, s)| (SlotId(i), s))
    }

    pub fn ids(&self) -> impl Iterator<Item = SlotId> {
        (0..self.slots.len()).map(SlotId)
    }

    pub fn value(&self, id: SlotId) -> &Tensor {
        &self.slots[id.0].value
    }

    pub fn value_mut(&mut self, id: SlotId) -> &mut Tensor {
        &mut self.slots[id.0].value
    }

    pub fn grad(&self, id: SlotId) -> &Tensor {
        &self.slots[id.0].grad
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn zero_grads(&mut self) {
        for s in &mut self.slots {
            s.grad.fill(0.0);
        }
    }

    pub fn accumulate(&mut self, grads: &GradBuffer) {
        for (slot, g) in self.slots.iter_mut().zip(&grads.slots) {
            if let Some(g) = g {
                slot.grad.add_assign(g);
            }
        }
    }

    pub fn num_values(&self) -> usize {
        self.slots.iter().map(|s| s.value.len()).sum()
    }
}

/// Per-slot gradient accumulator filled by a backward pass.
///
/// Slots are allocated lazily, so a buffer only costs memory for the
/// parameters a graph actually touched.
#[derive(Clone, Debug)]
pub struct GradBuffer {
    slots: Vec<Option<Tensor>>,
}

impl GradBuffer {
    pub fn for_store(store: &ParameterStore) -> Self {
        Self {
            slots: vec![None; store.len()],
        }
    }

    /// The gradient tensor of `id`, allocated as zeros of `shape` on first use.
    pub fn slot_mut(&mut self, id: SlotId, shape: &[usize]) -> &mut Tensor {
        self.slots[id.0].get_or_insert_with(|| Tensor::zeros(shape))
    }

    pub fn get(&self, id: SlotId) -> Option<&Tensor> {
        self.slots[id.0].as_ref()
    }

    pub fn merge(&mut self, other: &GradBuffer) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.add_assign(b),
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().flatten().all(Tensor::all_finite)
    }
}
