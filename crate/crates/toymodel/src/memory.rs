//! The memory bank: every prompted entry plus a FIFO of recent ones.

use crate::model::MemoryEntry;

#[derive(Clone, Debug, PartialEq)]
struct Slot<E> {
    entry: E,
    frame: usize,
    prompted: bool,
}

/// Holds all prompted entries and at most `capacity` non-prompted ones,
/// evicting the oldest non-prompted entry first.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank<E = MemoryEntry> {
    capacity: usize,
    slots: Vec<Slot<E>>,
}

impl<E> MemoryBank<E> {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, slots: Vec::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Adds an entry. A prompted entry replaces an earlier prompted entry of
    /// the same frame.
    pub fn push(&mut self, entry: E, frame: usize, prompted: bool) {
        if prompted {
            self.slots.retain(|s| !(s.prompted && s.frame == frame));
        }
        self.slots.push(Slot { entry, frame, prompted });
        while self.unprompted_len() > self.capacity {
            let oldest = self.slots.iter().position(|s| !s.prompted).expect("an unprompted slot exists");
            self.slots.remove(oldest);
        }
    }

    /// Drops every non-prompted entry.
    pub fn clear_unprompted(&mut self) {
        self.slots.retain(|s| s.prompted);
    }

    pub fn clear(&mut self) {
        self.slots.clear();
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn prompted_len(&self) -> usize {
        self.slots.iter().filter(|s| s.prompted).count()
    }

    pub fn unprompted_len(&self) -> usize {
        self.slots.iter().filter(|s| !s.prompted).count()
    }

    /// `(entry, frame index, prompted)` in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&E, usize, bool)> {
        self.slots.iter().map(|s| (&s.entry, s.frame, s.prompted))
    }

    pub fn entries(&self) -> impl Iterator<Item = &E> {
        self.slots.iter().map(|s| &s.entry)
    }
}

impl MemoryBank<MemoryEntry> {
    /// Stores `entry` under its own frame index and prompt flag.
    pub fn insert(&mut self, entry: MemoryEntry) {
        let (frame, prompted) = (entry.frame_index, entry.is_prompted);
        self.push(entry, frame, prompted);
    }
}
