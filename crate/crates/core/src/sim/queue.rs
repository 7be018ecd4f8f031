use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// Min-queue on virtual time. Events scheduled for the same instant pop in
/// the order they were pushed.
#[derive(Debug)]
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<(u64, u64)>>,
    slots: Vec<Option<E>>,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self { heap: BinaryHeap::new(), slots: Vec::new() }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, at_us: u64, event: E) {
        let seq = self.slots.len() as u64;
        self.slots.push(Some(event));
        self.heap.push(Reverse((at_us, seq)));
    }

    pub fn pop(&mut self) -> Option<(u64, E)> {
        let Reverse((at, seq)) = self.heap.pop()?;
        let event = self.slots[seq as usize].take().expect("each slot pops once");
        Some((at, event))
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
