//! Layer-pipelined streaming execution over double-buffered channels.
//!
//! Each layer stage runs on its own worker. Adjacent stages share a
//! [`PingPong`] pair of buffers: the producer fills one while the consumer
//! drains the other, and the two swap only once both sides have finished the
//! current phase.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use crate::bitcore::FixedTensor;
use crate::error::{Error, Result};
use crate::layers::{run_layer, Activation, Model, Prediction};

#[derive(Debug)]
struct PingPongState<T> {
    slots: [Option<T>; 2],
    /// Phases the producer has completed.
    produced: u64,
    /// Phases the consumer has completed (slot released).
    consumed: u64,
    /// Whether the consumer currently holds slot `consumed % 2`.
    holding: bool,
    closed: bool,
}

/// Two-slot ping/pong buffer between one producer and one consumer.
#[derive(Debug)]
pub struct PingPong<T> {
    state: Mutex<PingPongState<T>>,
    cv: Condvar,
}

impl<T> Default for PingPong<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> PingPong<T> {
    pub fn new() -> Self {
        Self {
            state: Mutex::new(PingPongState {
                slots: [None, None],
                produced: 0,
                consumed: 0,
                holding: false,
                closed: false,
            }),
            cv: Condvar::new(),
        }
    }

    /// Ends a producer phase with `item` in the back buffer.
    ///
    /// Blocks while the consumer still holds the other buffer from the
    /// previous phase.
    pub fn publish(&self, item: T) {
        let mut s = self.state.lock().unwrap();
        while s.produced - s.consumed >= 2 {
            s = self.cv.wait(s).unwrap();
        }
        let slot = (s.produced % 2) as usize;
        debug_assert!(s.slots[slot].is_none());
        s.slots[slot] = Some(item);
        s.produced += 1;
        self.cv.notify_all();
    }

    /// Ends a consumer phase: releases the held buffer and waits for the next.
    ///
    /// Returns `None` once the producer has closed and everything is drained.
    pub fn swap(&self) -> Option<T> {
        let mut s = self.state.lock().unwrap();
        if s.holding {
            s.holding = false;
            s.consumed += 1;
            self.cv.notify_all();
        }
        loop {
            if s.produced > s.consumed {
                let slot = (s.consumed % 2) as usize;
                let item = s.slots[slot].take();
                s.holding = true;
                return item;
            }
            if s.closed {
                return None;
            }
            s = self.cv.wait(s).unwrap();
        }
    }

    pub fn close(&self) {
        let mut s = self.state.lock().unwrap();
        s.closed = true;
        self.cv.notify_all();
    }

    /// Completed swaps so far, for diagnostics.
    pub fn phases(&self) -> (u64, u64) {
        let s = self.state.lock().unwrap();
        (s.produced, s.consumed)
    }
}

/// Injected per-stage delay, called with `(stage, item)`.
pub type DelayFn<'a> = dyn Fn(usize, usize) -> Duration + Sync + 'a;

type Packet = (usize, Result<Activation>);

/// Worker count cap from `BINFER_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("BINFER_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Splits `n` layers into at most `workers` contiguous groups.
fn stage_groups(n: usize, workers: usize) -> Vec<std::ops::Range<usize>> {
    let workers = workers.clamp(1, n.max(1));
    let base = n / workers;
    let extra = n % workers;
    let mut out = Vec::with_capacity(workers);
    let mut start = 0;
    for g in 0..workers {
        let len = base + usize::from(g < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}

/// Pipelined batch inference with one worker per layer.
///
/// Results are returned in input order and equal `run_network` per image.
pub fn run_streaming(model: &Model, inputs: &[FixedTensor]) -> Result<Vec<Prediction>> {
    let workers = thread_cap().unwrap_or(usize::MAX);
    run_streaming_with(model, inputs, workers, None)
}

/// Streaming run with an explicit worker count and optional injected delays.
pub fn run_streaming_with(
    model: &Model,
    inputs: &[FixedTensor],
    workers: usize,
    delay: Option<&DelayFn<'_>>,
) -> Result<Vec<Prediction>> {
    if inputs.is_empty() {
        return Err(Error::DimMismatch(
            "streaming batch must hold at least one image".into(),
        ));
    }
    let groups = stage_groups(model.num_layers(), workers);
    // Channel g feeds stage group g; the last channel feeds the collector.
    let channels: Vec<PingPong<Packet>> = (0..=groups.len()).map(|_| PingPong::new()).collect();
    let mut results: Vec<Option<Result<Prediction>>> = (0..inputs.len()).map(|_| None).collect();

    thread::scope(|scope| {
        let channels = &channels;
        scope.spawn(move || {
            for (i, x) in inputs.iter().enumerate() {
                channels[0].publish((i, Ok(Activation::Input(x.clone()))));
            }
            channels[0].close();
        });
        for (g, range) in groups.iter().cloned().enumerate() {
            scope.spawn(move || {
                let (rx, tx) = (&channels[g], &channels[g + 1]);
                while let Some((idx, act)) = rx.swap() {
                    let out = act.and_then(|mut a| {
                        for layer in range.clone() {
                            if let Some(d) = delay {
                                let pause = d(layer, idx);
                                if !pause.is_zero() {
                                    thread::sleep(pause);
                                }
                            }
                            a = run_layer(model, layer, a)?;
                        }
                        Ok(a)
                    });
                    tx.publish((idx, out));
                }
                tx.close();
            });
        }
        let sink = &channels[groups.len()];
        while let Some((idx, act)) = sink.swap() {
            results[idx] = Some(act.and_then(|a| match a {
                Activation::Output(p) => Ok(p),
                _ => Err(Error::InvalidNetwork(
                    "pipeline ended without a prediction".into(),
                )),
            }));
        }
    });

    results
        .into_iter()
        .map(|r| r.expect("every image passes through the pipeline"))
        .collect()
}
