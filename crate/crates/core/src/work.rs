//! Work-unit scheduling shared by the batch solver and the engine.
//!
//! A batch of independent items is cut into contiguous units. The units are
//! pushed onto a shared injector queue and drained by `workers` threads. Every
//! item is computed by a pure function of its index and written to its own
//! output slot, so the output never depends on which worker ran which unit.

use std::ops::Range;

use crossbeam::deque::{Injector, Steal};

/// Splits `0..len` into contiguous units whose summed `cost` reaches at least
/// `unit_cost` (the last unit may be lighter). Every unit holds at least one
/// item.
pub fn units_by_cost(len: usize, unit_cost: usize, cost: impl Fn(usize) -> usize) -> Vec<Range<usize>> {
    let unit_cost = unit_cost.max(1);
    let mut units = Vec::new();
    let mut start = 0;
    let mut acc = 0;
    for i in 0..len {
        acc += cost(i).max(1);
        if acc >= unit_cost {
            units.push(start..i + 1);
            start = i + 1;
            acc = 0;
        }
    }
    if start < len {
        units.push(start..len);
    }
    units
}

/// Fills `out[i] = compute(i)` for every index, processing the given units on
/// `workers` threads. `units` must partition `0..out.len()` in order.
pub fn fill_units<T, F>(out: &mut [T], units: &[Range<usize>], workers: usize, compute: F)
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    debug_assert_eq!(units.last().map_or(0, |u| u.end), out.len());
    let workers = workers.max(1).min(units.len());
    if workers <= 1 {
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = compute(i);
        }
        return;
    }

    let queue = Injector::new();
    let mut rest = out;
    let mut offset = 0;
    for unit in units {
        let (head, tail) = rest.split_at_mut(unit.end - offset);
        queue.push((offset, head));
        offset = unit.end;
        rest = tail;
    }

    let drain = || loop {
        match queue.steal() {
            Steal::Success((start, slots)) => {
                for (k, slot) in slots.iter_mut().enumerate() {
                    *slot = compute(start + k);
                }
            }
            Steal::Retry => continue,
            Steal::Empty => break,
        }
    };

    std::thread::scope(|scope| {
        for _ in 1..workers {
            scope.spawn(drain);
        }
        drain();
    });
}

/// Convenience wrapper: evaluates `compute` over `0..len` in units of
/// `unit_len` items.
pub fn map_indexed<T, F>(len: usize, unit_len: usize, workers: usize, compute: F) -> Vec<T>
where
    T: Send + Default,
    F: Fn(usize) -> T + Sync,
{
    let mut out: Vec<T> = (0..len).map(|_| T::default()).collect();
    let units = units_by_cost(len, unit_len, |_| 1);
    fill_units(&mut out, &units, workers, compute);
    out
}
