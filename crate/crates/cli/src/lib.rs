//! Experiment harness: configuration, the five subcommands, and their CSV
//! outputs. `main.rs` is a thin clap front end over these functions.

pub mod commands;
pub mod config;
pub mod output;
pub mod sweep;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

pub use commands::{analyze, control, gen_data, train_rep, Context};
pub use config::{ExperimentConfig, FeatureKind};
pub use sweep::sweep;

/// Maps `f` over `0..n` on up to `workers` threads pulling from a shared
/// counter. Results come back in index order regardless of scheduling.
pub fn par_map<T: Send>(n: usize, workers: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let v = f(i);
                slots.lock().expect("worker panicked")[i] = Some(v);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|v| v.expect("every index is visited"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_keeps_order() {
        let seq = par_map(50, 1, |i| i * i);
        let par = par_map(50, 4, |i| i * i);
        assert_eq!(seq, par);
        assert!(par_map(0, 4, |i| i).is_empty());
    }
}
