//! Watch streams over committed events.
//!
//! A watch starting at a past revision first pages through the historical
//! index, then switches to live delivery. Both steps run in the context that
//! owns the index, so the switch happens at a known head and no event is
//! skipped or repeated. Live events are buffered per watch; a watch that falls
//! more than [`DEFAULT_BUFFER`] events behind is cancelled.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{Event, HistoricalIndex};
use crate::kv::KeyRange;
use crate::types::Revision;

pub const DEFAULT_BUFFER: usize = 1024;

pub type WatchId = i64;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WatchState {
    Active,
    Cancelled { reason: Option<Error> },
}

#[derive(Debug)]
struct Watch {
    range: KeyRange,
    /// Next revision to read from the index while replaying.
    cursor: Revision,
    live: bool,
    buffer: VecDeque<Event>,
    state: WatchState,
}

#[derive(Debug)]
pub struct WatchEngine {
    next_id: WatchId,
    capacity: usize,
    watches: BTreeMap<WatchId, Watch>,
}

impl Default for WatchEngine {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_BUFFER)
    }
}

impl WatchEngine {
    pub fn with_capacity(capacity: usize) -> Self {
        WatchEngine {
            next_id: 1,
            capacity,
            watches: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.watches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.watches.is_empty()
    }

    /// Register a watch. `start_revision = None` delivers only events after the
    /// current index head.
    pub fn create(
        &mut self,
        range: KeyRange,
        start_revision: Option<Revision>,
        index: &HistoricalIndex,
    ) -> Result<WatchId> {
        let head = index.head().revision;
        let cursor = match start_revision {
            Some(r) if r > 0 => {
                if r < index.compacted() {
                    return Err(Error::Compacted {
                        requested: r,
                        compacted: index.compacted(),
                    });
                }
                r
            }
            _ => head + 1,
        };
        let id = self.next_id;
        self.next_id += 1;
        self.watches.insert(
            id,
            Watch {
                range,
                cursor,
                live: cursor > head,
                buffer: VecDeque::new(),
                state: WatchState::Active,
            },
        );
        Ok(id)
    }

    /// Deliver events just applied to the index.
    pub fn publish(&mut self, events: &[Event]) {
        let capacity = self.capacity;
        for (id, w) in self.watches.iter_mut() {
            if !w.live || w.state != WatchState::Active {
                continue;
            }
            for e in events {
                if e.revision() >= w.cursor && w.range.contains(&e.kv.key) {
                    w.buffer.push_back(e.clone());
                }
            }
            if let Some(last) = events.last() {
                w.cursor = w.cursor.max(last.revision() + 1);
            }
            if w.buffer.len() > capacity {
                w.buffer.clear();
                w.state = WatchState::Cancelled {
                    reason: Some(Error::Overflow(*id)),
                };
            }
        }
    }

    /// Take pending events for `id`. Replaying watches read from the index.
    pub fn poll(&mut self, id: WatchId, index: &HistoricalIndex) -> Result<(Vec<Event>, WatchState)> {
        let capacity = self.capacity;
        let w = self
            .watches
            .get_mut(&id)
            .ok_or_else(|| Error::NotFound(format!("watch {id}")))?;
        if w.state == WatchState::Active && !w.live {
            match index.events_from(w.cursor, capacity) {
                Ok((events, next)) => {
                    w.buffer.extend(events.into_iter().filter(|e| w.range.contains(&e.kv.key)));
                    w.cursor = next;
                    w.live = next > index.head().revision;
                }
                Err(e) => {
                    w.state = WatchState::Cancelled { reason: Some(e) };
                }
            }
        }
        let events: Vec<Event> = w.buffer.drain(..).collect();
        let state = w.state.clone();
        if state != WatchState::Active {
            self.watches.remove(&id);
        }
        Ok((events, state))
    }

    /// Close a watch. Cancelling an unknown or closed watch does nothing.
    pub fn cancel(&mut self, id: WatchId) {
        self.watches.remove(&id);
    }

    pub fn ids(&self) -> Vec<WatchId> {
        self.watches.keys().copied().collect()
    }
}
