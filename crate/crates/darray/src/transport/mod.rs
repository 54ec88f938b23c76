//! Rank abstraction and communication over a deterministic in-process
//! simulated cluster.
//!
//! A [`SimulatedCluster`] executes the same program on `size` logical ranks,
//! each running on its own thread with its own [`Comm`]. Payloads are copied
//! between ranks through per-pair FIFO queues, so no mutable state is shared:
//! the semantics match a distributed-memory machine. Collectives are built on
//! top of point-to-point messages, which makes the per-rank [`Counters`]
//! reflect the true communication cost of every operation.
//!
//! The transport contract is deliberately small (send/recv plus the
//! collectives below), so an adapter to a real message-passing runtime can be
//! swapped in behind the same calls later.

mod wire;

pub use wire::Wire;

use std::cell::{Cell, RefCell};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::time::Duration;

use crate::error::{DeadlockError, Error, Result};

/// Identifies one logical process of a cluster. Stable for the lifetime of
/// the communication context it belongs to.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct RankId(pub usize);

impl std::fmt::Display for RankId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Monotonically non-decreasing communication counters for one rank.
///
/// Only payload-carrying point-to-point messages are counted; a collective
/// on a single rank, or one where this rank has nothing to send, costs zero.
#[derive(Clone, Copy, Default, Debug, PartialEq, Eq)]
pub struct Counters {
    pub messages_sent: u64,
    pub bytes_sent: u64,
    pub messages_received: u64,
    pub collectives_entered: u64,
}

struct CommInner {
    rank: usize,
    size: usize,
    timeout: Duration,
    senders: Vec<Sender<Vec<u8>>>,
    receivers: Vec<Receiver<Vec<u8>>>,
    counters: RefCell<Counters>,
    /// Number of collectives this rank has entered; mirrored in `board` so
    /// other ranks can diagnose who is missing from a stalled collective.
    seq: Cell<u64>,
    current_collective: Cell<Option<&'static str>>,
    board: Arc<Vec<AtomicU64>>,
    checks: Cell<bool>,
}

/// Per-rank communication context: rank identity, cluster size, collectives
/// and instrumentation counters.
///
/// A `Comm` is confined to its rank's thread. Cloning is cheap and yields a
/// handle to the same context.
#[derive(Clone)]
pub struct Comm(Rc<CommInner>);

/// Everything needed to build a [`Comm`] inside the rank's own thread.
struct CommSeed {
    rank: usize,
    size: usize,
    timeout: Duration,
    senders: Vec<Sender<Vec<u8>>>,
    receivers: Vec<Receiver<Vec<u8>>>,
    board: Arc<Vec<AtomicU64>>,
}

impl Comm {
    fn from_seed(seed: CommSeed) -> Self {
        Comm(Rc::new(CommInner {
            rank: seed.rank,
            size: seed.size,
            timeout: seed.timeout,
            senders: seed.senders,
            receivers: seed.receivers,
            counters: RefCell::new(Counters::default()),
            seq: Cell::new(0),
            current_collective: Cell::new(None),
            board: seed.board,
            checks: Cell::new(true),
        }))
    }

    pub fn rank(&self) -> RankId {
        RankId(self.0.rank)
    }

    pub fn size(&self) -> usize {
        self.0.size
    }

    pub fn counters(&self) -> Counters {
        *self.0.counters.borrow()
    }

    /// Whether cross-rank sanity checks on user input are performed.
    /// Disabling them trades safety for construction speed.
    pub fn consistency_checks(&self) -> bool {
        self.0.checks.get()
    }

    pub fn set_consistency_checks(&self, on: bool) {
        self.0.checks.set(on);
    }

    /// Sends `value` to `dest`. Self-sends are permitted and loop through the
    /// queue like any other message.
    pub fn send<T: Wire>(&self, dest: RankId, value: &T) -> Result<()> {
        self.send_bytes(dest.0, value.to_wire())
    }

    /// Receives the oldest undelivered payload from `src`. Delivery between a
    /// fixed (sender, receiver) pair preserves send order.
    pub fn recv<T: Wire>(&self, src: RankId) -> Result<T> {
        T::from_wire(&self.recv_bytes(src.0)?)
    }

    fn send_bytes(&self, dest: usize, bytes: Vec<u8>) -> Result<()> {
        let inner = &*self.0;
        if dest >= inner.size {
            return Err(Error::InvalidRank {
                rank: dest,
                size: inner.size,
            });
        }
        {
            let mut c = inner.counters.borrow_mut();
            c.messages_sent += 1;
            c.bytes_sent += bytes.len() as u64;
        }
        inner.senders[dest]
            .send(bytes)
            .map_err(|_| Error::Protocol("destination rank has shut down"))
    }

    fn recv_bytes(&self, src: usize) -> Result<Vec<u8>> {
        let inner = &*self.0;
        if src >= inner.size {
            return Err(Error::InvalidRank {
                rank: src,
                size: inner.size,
            });
        }
        match inner.receivers[src].recv_timeout(inner.timeout) {
            Ok(bytes) => {
                inner.counters.borrow_mut().messages_received += 1;
                Ok(bytes)
            }
            Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => {
                Err(self.deadlock_error(src))
            }
        }
    }

    fn deadlock_error(&self, src: usize) -> Error {
        let inner = &*self.0;
        let collective = inner.current_collective.get();
        let missing = if collective.is_some() {
            let mine = inner.seq.get();
            (0..inner.size)
                .filter(|&r| inner.board[r].load(Ordering::SeqCst) < mine)
                .collect()
        } else {
            Vec::new()
        };
        Error::Deadlock(DeadlockError {
            rank: inner.rank,
            waiting_for: src,
            collective,
            missing,
        })
    }

    fn enter(&self, name: &'static str) {
        let inner = &*self.0;
        let seq = inner.seq.get() + 1;
        inner.seq.set(seq);
        inner.board[inner.rank].store(seq, Ordering::SeqCst);
        inner.current_collective.set(Some(name));
        inner.counters.borrow_mut().collectives_entered += 1;
    }

    fn leave(&self) {
        self.0.current_collective.set(None);
    }

    /// Blocks until every rank of the cluster has entered the barrier.
    pub fn barrier(&self) -> Result<()> {
        self.enter("barrier");
        let out = self.barrier_impl();
        self.leave();
        out
    }

    fn barrier_impl(&self) -> Result<()> {
        let (me, size) = (self.0.rank, self.0.size);
        if me == 0 {
            for src in 1..size {
                self.recv_bytes(src)?;
            }
            for dest in 1..size {
                self.send_bytes(dest, Vec::new())?;
            }
        } else {
            self.send_bytes(0, Vec::new())?;
            self.recv_bytes(0)?;
        }
        Ok(())
    }

    /// Distributes the root's value to every rank. Only the root passes
    /// `Some`; every rank returns the root's value.
    pub fn broadcast<T: Wire>(&self, root: RankId, value: Option<&T>) -> Result<T> {
        self.enter("broadcast");
        let out = self.broadcast_impl(root, value);
        self.leave();
        out
    }

    fn broadcast_impl<T: Wire>(&self, root: RankId, value: Option<&T>) -> Result<T> {
        let (me, size) = (self.0.rank, self.0.size);
        if root.0 >= size {
            return Err(Error::InvalidRank {
                rank: root.0,
                size,
            });
        }
        if me == root.0 {
            let value = value.ok_or(Error::Protocol("broadcast root must supply a value"))?;
            let bytes = value.to_wire();
            for dest in 0..size {
                if dest != me {
                    self.send_bytes(dest, bytes.clone())?;
                }
            }
            T::from_wire(&bytes)
        } else {
            self.recv(root)
        }
    }

    /// Gathers one value from every rank; the result is ordered by rank and
    /// identical on every rank.
    pub fn allgather<T: Wire>(&self, value: &T) -> Result<Vec<T>> {
        self.enter("allgather");
        let out = self.allgather_impl(value);
        self.leave();
        out
    }

    fn allgather_impl<T: Wire>(&self, value: &T) -> Result<Vec<T>> {
        let (me, size) = (self.0.rank, self.0.size);
        let bytes = value.to_wire();
        for dest in 0..size {
            if dest != me {
                self.send_bytes(dest, bytes.clone())?;
            }
        }
        let mut gathered = Vec::with_capacity(size);
        for src in 0..size {
            if src == me {
                gathered.push(T::from_wire(&bytes)?);
            } else {
                gathered.push(T::from_wire(&self.recv_bytes(src)?)?);
            }
        }
        Ok(gathered)
    }

    /// Reduces one value per rank into a single result present on every rank.
    /// `combine` is folded over the contributions in rank order, so the
    /// result is deterministic even for non-associative float addition.
    pub fn allreduce<T: Wire>(&self, value: &T, combine: impl Fn(T, T) -> T) -> Result<T> {
        self.enter("allreduce");
        let out = self.allgather_impl(value).map(|parts| {
            let mut iter = parts.into_iter();
            let first = iter.next().expect("cluster size is at least one");
            iter.fold(first, combine)
        });
        self.leave();
        out
    }

    /// Personalized all-to-all exchange. `sends[d]` is delivered to rank `d`;
    /// `None` (and the self entry) costs no message. Because only non-empty
    /// buffers travel, every rank must know which sources will address it:
    /// `expect_from[s]` must be true exactly when rank `s` passes a `Some`
    /// for this rank. Callers derive both sides from shared knowledge such as
    /// layouts, so the expectation needs no extra communication.
    pub fn alltoallv<T: Wire>(
        &self,
        sends: Vec<Option<T>>,
        expect_from: &[bool],
    ) -> Result<Vec<Option<T>>> {
        self.enter("alltoallv");
        let out = self.alltoallv_impl(sends, expect_from);
        self.leave();
        out
    }

    fn alltoallv_impl<T: Wire>(
        &self,
        sends: Vec<Option<T>>,
        expect_from: &[bool],
    ) -> Result<Vec<Option<T>>> {
        let (me, size) = (self.0.rank, self.0.size);
        if sends.len() != size || expect_from.len() != size {
            return Err(Error::Protocol("alltoallv buffers must cover every rank"));
        }
        let mut received: Vec<Option<T>> = Vec::with_capacity(size);
        let mut own: Option<T> = None;
        for (dest, payload) in sends.into_iter().enumerate() {
            match payload {
                Some(v) if dest == me => own = Some(T::from_wire(&v.to_wire())?),
                Some(v) => self.send_bytes(dest, v.to_wire())?,
                None => {}
            }
        }
        for src in 0..size {
            if src == me {
                received.push(own.take());
            } else if expect_from[src] {
                received.push(Some(T::from_wire(&self.recv_bytes(src)?)?));
            } else {
                received.push(None);
            }
        }
        Ok(received)
    }

    /// Exclusive prefix reduction: rank `r` receives the combination of the
    /// values contributed by ranks `0..r`; rank 0 receives `identity`.
    pub fn exscan<T: Wire>(
        &self,
        value: &T,
        identity: T,
        combine: impl Fn(&T, &T) -> T,
    ) -> Result<T> {
        self.enter("exscan");
        let out = self.exscan_impl(value, identity, combine);
        self.leave();
        out
    }

    fn exscan_impl<T: Wire>(
        &self,
        value: &T,
        identity: T,
        combine: impl Fn(&T, &T) -> T,
    ) -> Result<T> {
        let (me, size) = (self.0.rank, self.0.size);
        let prefix = if me == 0 {
            identity
        } else {
            T::from_wire(&self.recv_bytes(me - 1)?)?
        };
        if me + 1 < size {
            let next = combine(&prefix, value);
            self.send_bytes(me + 1, next.to_wire())?;
        }
        Ok(prefix)
    }
}

/// A deterministic in-process cluster of `size` logical ranks.
///
/// Each rank runs on its own thread; message delivery between a fixed
/// (sender, receiver) pair preserves send order, and a collective completes
/// only once every rank has entered it. A stalled collective is converted
/// into a [`DeadlockError`] after `timeout`.
pub struct SimulatedCluster {
    size: usize,
    timeout: Duration,
}

pub const DEFAULT_DEADLOCK_TIMEOUT: Duration = Duration::from_secs(10);

impl SimulatedCluster {
    pub fn new(size: usize) -> Self {
        assert!(size >= 1, "a cluster needs at least one rank");
        SimulatedCluster {
            size,
            timeout: DEFAULT_DEADLOCK_TIMEOUT,
        }
    }

    /// Sets how long a blocking receive may wait before it is reported as a
    /// deadlock.
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Executes `program` concurrently on every rank and returns the per-rank
    /// results ordered by rank. The first failing rank's error is propagated,
    /// preferring root-cause errors over the deadlock timeouts they induce in
    /// other ranks.
    pub fn run<T, F>(&self, program: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(Comm) -> Result<T> + Send + Sync,
    {
        let size = self.size;
        let board: Arc<Vec<AtomicU64>> = Arc::new((0..size).map(|_| AtomicU64::new(0)).collect());

        // Channel matrix: one FIFO queue per (sender, receiver) pair.
        let mut sender_rows: Vec<Vec<Sender<Vec<u8>>>> = (0..size).map(|_| Vec::new()).collect();
        let mut receiver_cols: Vec<Vec<Receiver<Vec<u8>>>> =
            (0..size).map(|_| Vec::new()).collect();
        for receiver in 0..size {
            for row in sender_rows.iter_mut() {
                let (tx, rx) = channel();
                row.push(tx);
                receiver_cols[receiver].push(rx);
            }
        }

        let mut seeds: Vec<CommSeed> = sender_rows
            .into_iter()
            .zip(receiver_cols)
            .enumerate()
            .map(|(rank, (senders, receivers))| CommSeed {
                rank,
                size,
                timeout: self.timeout,
                senders,
                receivers,
                board: Arc::clone(&board),
            })
            .collect();

        let program = &program;
        let results: Vec<Result<T>> = std::thread::scope(|scope| {
            let handles: Vec<_> = seeds
                .drain(..)
                .map(|seed| {
                    let rank = seed.rank;
                    std::thread::Builder::new()
                        .name(format!("rank{rank}"))
                        .spawn_scoped(scope, move || {
                            let comm = Comm::from_seed(seed);
                            match catch_unwind(AssertUnwindSafe(|| program(comm))) {
                                Ok(result) => result,
                                Err(payload) => Err(Error::RankPanicked {
                                    rank,
                                    message: panic_message(&payload),
                                }),
                            }
                        })
                        .expect("failed to spawn rank thread")
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("rank thread poisoned"))
                .collect()
        });

        let mut outputs = Vec::with_capacity(size);
        let mut first_error: Option<(usize, Error)> = None;
        for (rank, result) in results.into_iter().enumerate() {
            match result {
                Ok(v) => outputs.push(v),
                Err(e) => {
                    let replace = match &first_error {
                        None => true,
                        // A non-deadlock error is the root cause; deadlocks in
                        // other ranks are its fallout.
                        Some((_, prev)) => prev.is_deadlock() && !e.is_deadlock(),
                    };
                    if replace {
                        first_error = Some((rank, e));
                    }
                }
            }
        }
        if let Some((rank, source)) = first_error {
            return Err(match source {
                e @ (Error::Deadlock(_) | Error::RankPanicked { .. }) => e,
                other => Error::Rank {
                    rank,
                    source: Box::new(other),
                },
            });
        }
        Ok(outputs)
    }
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic payload of unknown type".to_string()
    }
}

/// Runs `program` on a fresh simulated cluster with the default deadlock
/// timeout.
pub fn run_cluster<T, F>(size: usize, program: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(Comm) -> Result<T> + Send + Sync,
{
    SimulatedCluster::new(size).run(program)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_rank_identity() {
        let out = run_cluster(1, |comm| Ok(comm.rank().0)).unwrap();
        assert_eq!(out, vec![0]);
    }

    #[test]
    fn pure_per_rank_function() {
        let out = run_cluster(4, |comm| Ok(comm.rank().0 * comm.rank().0)).unwrap();
        assert_eq!(out, vec![0, 1, 4, 9]);
    }

    #[test]
    fn allgather_of_ranks() {
        let out = run_cluster(3, |comm| comm.allgather(&(comm.rank().0 as u64))).unwrap();
        for per_rank in out {
            assert_eq!(per_rank, vec![0, 1, 2]);
        }
    }

    #[test]
    fn send_recv_fifo_order() {
        let out = run_cluster(2, |comm| {
            if comm.rank().0 == 0 {
                comm.send(RankId(1), &1u64)?;
                comm.send(RankId(1), &2u64)?;
                Ok(vec![])
            } else {
                let a: u64 = comm.recv(RankId(0))?;
                let b: u64 = comm.recv(RankId(0))?;
                Ok(vec![a, b])
            }
        })
        .unwrap();
        assert_eq!(out[1], vec![1, 2]);
    }

    #[test]
    fn ring_shift() {
        let out = run_cluster(4, |comm| {
            let me = comm.rank().0;
            let size = comm.size();
            comm.send(RankId((me + 1) % size), &(me as u64))?;
            comm.recv::<u64>(RankId((me + size - 1) % size))
        })
        .unwrap();
        assert_eq!(out, vec![3, 0, 1, 2]);
    }

    #[test]
    fn self_send_loops_through_queue() {
        let out = run_cluster(1, |comm| {
            comm.send(RankId(0), &7u64)?;
            comm.recv::<u64>(RankId(0))
        })
        .unwrap();
        assert_eq!(out, vec![7]);
    }

    #[test]
    fn allreduce_sum_of_ranks() {
        let out = run_cluster(4, |comm| {
            comm.allreduce(&(comm.rank().0 as u64), |a, b| a + b)
        })
        .unwrap();
        assert_eq!(out, vec![6, 6, 6, 6]);
    }

    #[test]
    fn exscan_prefix_sums() {
        let lengths = [2u64, 2, 1, 1];
        let out = run_cluster(4, |comm| {
            comm.exscan(&lengths[comm.rank().0], 0u64, |a, b| a + b)
        })
        .unwrap();
        assert_eq!(out, vec![0, 2, 4, 5]);
    }

    #[test]
    fn allgather_of_shard_lengths() {
        let out = run_cluster(4, |comm| comm.allgather(&1u64)).unwrap();
        for per_rank in out {
            assert_eq!(per_rank, vec![1, 1, 1, 1]);
        }
    }

    #[test]
    fn broadcast_from_nonzero_root() {
        let out = run_cluster(3, |comm| {
            let value = (comm.rank().0 == 2).then_some(99u64);
            comm.broadcast(RankId(2), value.as_ref())
        })
        .unwrap();
        assert_eq!(out, vec![99, 99, 99]);
    }

    #[test]
    fn alltoallv_moves_declared_buffers() {
        // Rank r sends r*10+d to every other rank d.
        let out = run_cluster(3, |comm| {
            let me = comm.rank().0 as u64;
            let sends: Vec<Option<u64>> = (0..3).map(|d| Some(me * 10 + d)).collect();
            let expect = vec![true; 3];
            comm.alltoallv(sends, &expect)
        })
        .unwrap();
        assert_eq!(out[1], vec![Some(1), Some(11), Some(21)]);
        assert_eq!(out[2], vec![Some(2), Some(12), Some(22)]);
    }

    #[test]
    fn deadlock_names_missing_rank() {
        let cluster = SimulatedCluster::new(3).with_timeout(Duration::from_millis(100));
        let err = cluster
            .run(|comm| {
                if comm.rank().0 == 1 {
                    return Ok(0u64); // rank 1 skips the collective
                }
                comm.allreduce(&1u64, |a, b| a + b)
            })
            .unwrap_err();
        match err {
            Error::Deadlock(d) => {
                assert!(d.missing.contains(&1), "missing ranks: {:?}", d.missing);
                assert!(!d.missing.contains(&0));
            }
            other => panic!("expected deadlock, got {other}"),
        }
    }

    #[test]
    fn recv_without_sender_times_out() {
        let cluster = SimulatedCluster::new(2).with_timeout(Duration::from_millis(50));
        let err = cluster
            .run(|comm| {
                if comm.rank().0 == 0 {
                    comm.recv::<u64>(RankId(1))
                } else {
                    Ok(0)
                }
            })
            .unwrap_err();
        assert!(err.is_deadlock());
    }

    #[test]
    fn counters_balance_across_ranks() {
        let out = run_cluster(4, |comm| {
            comm.allgather(&(comm.rank().0 as u64))?;
            comm.allreduce(&1u64, |a, b| a + b)?;
            comm.barrier()?;
            Ok(comm.counters())
        })
        .unwrap();
        let sent: u64 = out.iter().map(|c| c.messages_sent).sum();
        let received: u64 = out.iter().map(|c| c.messages_received).sum();
        assert_eq!(sent, received);
        assert!(sent > 0);
    }

    #[test]
    fn collective_programs_are_deterministic() {
        let run = || {
            run_cluster(4, |comm| {
                let me = comm.rank().0 as u64;
                let gathered = comm.allgather(&me)?;
                let total = comm.allreduce(&(me * 3), |a, b| a + b)?;
                let prefix = comm.exscan(&me, 0, |a, b| a + b)?;
                Ok((gathered, total, prefix, comm.counters()))
            })
            .unwrap()
        };
        let first = run();
        for _ in 0..9 {
            assert_eq!(run(), first);
        }
    }

    #[test]
    fn per_rank_error_is_propagated_with_rank() {
        let cluster = SimulatedCluster::new(2).with_timeout(Duration::from_millis(50));
        let err = cluster
            .run(|comm| -> Result<()> {
                if comm.rank().0 == 1 {
                    return Err(Error::InvalidArgument("boom".into()));
                }
                comm.barrier()
            })
            .unwrap_err();
        match err {
            Error::Rank { rank, source } => {
                assert_eq!(rank, 1);
                assert!(matches!(*source, Error::InvalidArgument(_)));
            }
            other => panic!("expected rank error, got {other}"),
        }
    }
}
