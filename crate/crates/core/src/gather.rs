//! Asynchronous staging of LM-head rows into a pre-allocated repack buffer.
//!
//! Each decode session runs two workers: the compute worker (the caller) and
//! a copy worker owned by [`GatherPipeline`]. `schedule` hands the copy
//! worker a row-gather job and returns immediately with a [`GatherEvent`];
//! the compute worker overlaps its backbone work with the copy and calls
//! [`RepackBuffer::wait`] immediately before the first pruned LM-head read
//! of the round. Reading the buffer while a gather is still in flight is a
//! contract violation and fails loudly.
//!
//! Two gather plans produce the same row/owner consistency: `Full` repacks
//! every row of the new vocabulary; `Delta` keeps surviving rows in place
//! (compacted, preserving their relative order) and copies only entries that
//! entered since the previous gather.

use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::models::LMHead;
use crate::stream::{ActiveVocab, ActiveVocabulary};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatherMode {
    Full,
    Delta,
}

impl GatherMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(GatherMode::Full),
            "delta" => Ok(GatherMode::Delta),
            other => Err(Error::InvalidConfig(format!(
                "unknown gather mode {other:?}, expected full|delta"
            ))),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum EventState {
    /// No gather has ever been scheduled against this event.
    Idle,
    Pending,
    Signaled,
}

/// Completion flag for one scheduled gather. Monotone: once signaled it
/// never becomes pending again; a new gather gets a fresh event.
#[derive(Clone, Debug)]
pub struct GatherEvent {
    cell: Arc<(Mutex<EventState>, Condvar)>,
}

impl GatherEvent {
    /// The event of a buffer that has never been gathered into.
    pub fn idle() -> Self {
        GatherEvent {
            cell: Arc::new((Mutex::new(EventState::Idle), Condvar::new())),
        }
    }

    fn pending() -> Self {
        GatherEvent {
            cell: Arc::new((Mutex::new(EventState::Pending), Condvar::new())),
        }
    }

    /// Block until the gather completes. Idempotent once signaled; waiting on
    /// an event that was never scheduled is an error.
    pub fn wait(&self) -> Result<()> {
        let (lock, cv) = &*self.cell;
        let mut state = lock.lock().unwrap();
        loop {
            match *state {
                EventState::Idle => return Err(Error::NoGatherScheduled),
                EventState::Signaled => return Ok(()),
                EventState::Pending => state = cv.wait(state).unwrap(),
            }
        }
    }

    pub fn is_signaled(&self) -> bool {
        *self.cell.0.lock().unwrap() == EventState::Signaled
    }

    fn is_pending(&self) -> bool {
        *self.cell.0.lock().unwrap() == EventState::Pending
    }

    fn signal(&self) {
        let (lock, cv) = &*self.cell;
        let mut state = lock.lock().unwrap();
        debug_assert_eq!(*state, EventState::Pending);
        *state = EventState::Signaled;
        cv.notify_all();
    }
}

/// Dense scores over one active vocabulary; `values[j]` scores
/// `vocab.ids()[j]`.
#[derive(Clone, Debug)]
pub struct PrunedLogits {
    pub values: Vec<f64>,
    pub vocab: ActiveVocab,
}

struct Cells {
    rows: Vec<f64>,
    occupancy: usize,
    owner: ActiveVocab,
}

/// Pre-allocated `capacity x dim` staging area for gathered head rows.
pub struct RepackBuffer {
    cells: Arc<Mutex<Cells>>,
    event: GatherEvent,
    capacity: usize,
    dim: usize,
}

impl RepackBuffer {
    pub fn new(capacity: usize, dim: usize) -> Self {
        RepackBuffer {
            cells: Arc::new(Mutex::new(Cells {
                rows: vec![0.0; capacity * dim],
                occupancy: 0,
                owner: Arc::new(ActiveVocabulary::empty()),
            })),
            event: GatherEvent::idle(),
            capacity,
            dim,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn event(&self) -> &GatherEvent {
        &self.event
    }

    /// Wait for the most recently scheduled gather into this buffer.
    pub fn wait(&self) -> Result<()> {
        self.event.wait()
    }

    /// The vocabulary whose rows the buffer holds (requires a completed gather).
    pub fn owner(&self) -> Result<ActiveVocab> {
        self.ensure_readable()?;
        Ok(Arc::clone(&self.cells.lock().unwrap().owner))
    }

    pub fn occupancy(&self) -> Result<usize> {
        self.ensure_readable()?;
        Ok(self.cells.lock().unwrap().occupancy)
    }

    /// Row contents in local-index order (test support).
    pub fn snapshot_rows(&self) -> Result<Vec<f64>> {
        self.ensure_readable()?;
        let cells = self.cells.lock().unwrap();
        Ok(cells.rows[..cells.occupancy * self.dim].to_vec())
    }

    fn ensure_readable(&self) -> Result<()> {
        let state = *self.event.cell.0.lock().unwrap();
        match state {
            EventState::Signaled => Ok(()),
            EventState::Pending => Err(Error::GatherIncomplete),
            EventState::Idle => Err(Error::NoGatherScheduled),
        }
    }

    /// Pruned LM head: `values[j] = rows[j,:] . h`, summed in ascending
    /// hidden-index order so each entry is bit-identical to the full head's
    /// logit for the same token. Reading before the gather signals fails.
    pub fn pruned_logits(&self, h: &[f64]) -> Result<PrunedLogits> {
        self.ensure_readable()?;
        if h.len() != self.dim {
            return Err(Error::DimMismatch(format!(
                "hidden state of length {} against buffer dim {}",
                h.len(),
                self.dim
            )));
        }
        let cells = self.cells.lock().unwrap();
        let mut values = Vec::with_capacity(cells.occupancy);
        for j in 0..cells.occupancy {
            let row = &cells.rows[j * self.dim..(j + 1) * self.dim];
            let mut acc = 0.0;
            for k in 0..self.dim {
                acc += row[k] * h[k];
            }
            values.push(acc);
        }
        Ok(PrunedLogits {
            values,
            vocab: Arc::clone(&cells.owner),
        })
    }
}

enum Plan {
    /// Copy a head row into each local index: (local, token).
    Copy(Vec<(usize, TokenId)>),
    /// Compact survivors (new_index, old_index) in ascending new order, then
    /// copy entered rows.
    Compact {
        moves: Vec<(usize, usize)>,
        copies: Vec<(usize, TokenId)>,
    },
}

struct Job {
    head: LMHead,
    plan: Plan,
    owner: ActiveVocab,
    cells: Arc<Mutex<Cells>>,
    dim: usize,
    event: GatherEvent,
    delay: Option<Duration>,
}

/// Handle to the copy worker of one decode session.
pub struct GatherPipeline {
    tx: Option<mpsc::Sender<Job>>,
    worker: Option<thread::JoinHandle<()>>,
}

impl GatherPipeline {
    pub fn new() -> Self {
        let (tx, rx) = mpsc::channel::<Job>();
        let worker = thread::spawn(move || {
            while let Ok(job) = rx.recv() {
                if let Some(d) = job.delay {
                    thread::sleep(d);
                }
                {
                    let mut cells = job.cells.lock().unwrap();
                    match &job.plan {
                        Plan::Copy(targets) => {
                            for &(local, token) in targets {
                                let dst = local * job.dim;
                                cells.rows[dst..dst + job.dim]
                                    .copy_from_slice(job.head.row(token));
                            }
                        }
                        Plan::Compact { moves, copies } => {
                            for &(new_i, old_i) in moves {
                                if new_i != old_i {
                                    cells
                                        .rows
                                        .copy_within(old_i * job.dim..(old_i + 1) * job.dim, new_i * job.dim);
                                }
                            }
                            for &(local, token) in copies {
                                let dst = local * job.dim;
                                cells.rows[dst..dst + job.dim]
                                    .copy_from_slice(job.head.row(token));
                            }
                        }
                    }
                    cells.occupancy = job.owner.len();
                    cells.owner = Arc::clone(&job.owner);
                }
                job.event.signal();
            }
        });
        GatherPipeline {
            tx: Some(tx),
            worker: Some(worker),
        }
    }

    /// Schedule a full repack of `vocab` into `buffer`.
    pub fn schedule(
        &self,
        head: &LMHead,
        vocab: ActiveVocabulary,
        buffer: &mut RepackBuffer,
    ) -> Result<GatherEvent> {
        self.schedule_with(head, vocab, buffer, GatherMode::Full, None)
    }

    /// Schedule a gather with an explicit plan mode and (for stress tests) an
    /// injected copy delay. Returns the event that will signal completion,
    /// along with recording it on the buffer.
    pub fn schedule_with(
        &self,
        head: &LMHead,
        vocab: ActiveVocabulary,
        buffer: &mut RepackBuffer,
        mode: GatherMode,
        delay: Option<Duration>,
    ) -> Result<GatherEvent> {
        if vocab.len() > buffer.capacity {
            return Err(Error::WindowOverflow {
                requested: vocab.len(),
                capacity: buffer.capacity,
            });
        }
        if head.dim() != buffer.dim {
            return Err(Error::DimMismatch(format!(
                "head dim {} against buffer dim {}",
                head.dim(),
                buffer.dim
            )));
        }
        if let Some(&t) = vocab.ids().iter().find(|t| t.index() >= head.vocab_size()) {
            return Err(Error::DimMismatch(format!(
                "token id {t} outside head vocabulary of size {}",
                head.vocab_size()
            )));
        }
        if buffer.event.is_pending() {
            return Err(Error::GatherInFlight);
        }

        let (plan, owner) = match mode {
            GatherMode::Full => full_plan(vocab),
            GatherMode::Delta => {
                // Delta is relative to the buffer's current contents; without
                // a completed prior gather it degenerates to a full repack.
                if buffer.event.is_signaled() {
                    let prev = Arc::clone(&buffer.cells.lock().unwrap().owner);
                    delta_plan(&prev, vocab)
                } else {
                    full_plan(vocab)
                }
            }
        };

        let event = GatherEvent::pending();
        buffer.event = event.clone();
        let job = Job {
            head: head.clone(),
            plan,
            owner: Arc::new(owner),
            cells: Arc::clone(&buffer.cells),
            dim: buffer.dim,
            event: event.clone(),
            delay,
        };
        self.tx
            .as_ref()
            .expect("pipeline already shut down")
            .send(job)
            .map_err(|_| Error::InvalidConfig("copy worker has exited".into()))?;
        Ok(event)
    }

    /// Rows the given transition would copy (full: every row; delta: only
    /// entries absent from `prev`).
    pub fn planned_rows(mode: GatherMode, prev: Option<&ActiveVocabulary>, next: &ActiveVocabulary) -> usize {
        match (mode, prev) {
            (GatherMode::Full, _) | (GatherMode::Delta, None) => next.len(),
            (GatherMode::Delta, Some(p)) => {
                next.ids().iter().filter(|&&t| !p.contains(t)).count()
            }
        }
    }
}

impl Default for GatherPipeline {
    fn default() -> Self {
        GatherPipeline::new()
    }
}

impl Drop for GatherPipeline {
    fn drop(&mut self) {
        drop(self.tx.take());
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn full_plan(vocab: ActiveVocabulary) -> (Plan, ActiveVocabulary) {
    let targets = vocab
        .ids()
        .iter()
        .enumerate()
        .map(|(j, &t)| (j, t))
        .collect();
    (Plan::Copy(targets), vocab)
}

/// Keep survivors of `prev` in their relative order at the front, append
/// entries of `next` that are new. The resulting owner is a permutation of
/// `next` with stable local indices for surviving rows.
fn delta_plan(prev: &ActiveVocabulary, next: ActiveVocabulary) -> (Plan, ActiveVocabulary) {
    let mut moves = Vec::new();
    let mut owner_ids = Vec::with_capacity(next.len());
    for (old_i, &t) in prev.ids().iter().enumerate() {
        if next.contains(t) {
            moves.push((owner_ids.len(), old_i));
            owner_ids.push(t);
        }
    }
    let mut copies = Vec::new();
    for &t in next.ids() {
        if !prev.contains(t) {
            copies.push((owner_ids.len(), t));
            owner_ids.push(t);
        }
    }
    (Plan::Compact { moves, copies }, ActiveVocabulary::new(owner_ids))
}

/// Byte footprint of the per-session device state for a deployment shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferSizing {
    /// Membership bitmap: one bit per vocabulary entry.
    pub token_ids_bytes: u64,
    /// Window of token ids, 4 bytes each.
    pub tokens_tensor_bytes: u64,
    /// Dense repack buffer: window x dim elements.
    pub repack_buf_bytes: u64,
    pub total_bytes: u64,
}

/// Exact integer sizing for a vocabulary/dim/window/element-width shape.
pub fn buffer_sizing(vocab_size: u64, dim: u64, window: u64, bytes_per_element: u64) -> BufferSizing {
    let token_ids_bytes = vocab_size.div_ceil(8);
    let tokens_tensor_bytes = window * 4;
    let repack_buf_bytes = window * dim * bytes_per_element;
    BufferSizing {
        token_ids_bytes,
        tokens_tensor_bytes,
        repack_buf_bytes,
        total_bytes: token_ids_bytes + tokens_tensor_bytes + repack_buf_bytes,
    }
}
