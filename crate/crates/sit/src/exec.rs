use std::sync::Mutex;

use sit_core::train::Executor;

/// Fixed pool of scoped worker threads. Job `j` runs on worker `j mod n`;
/// results come back in job order.
#[derive(Debug, Clone, Copy)]
pub struct Threaded {
    workers: usize,
}

impl Threaded {
    pub fn new(workers: usize) -> Self {
        Threaded { workers: workers.max(1) }
    }
}

impl Executor for Threaded {
    fn run<R, F>(&self, jobs: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync,
    {
        if self.workers == 1 || jobs <= 1 {
            return (0..jobs).map(f).collect();
        }
        let slots: Vec<Mutex<Option<R>>> = (0..jobs).map(|_| Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for w in 0..self.workers.min(jobs) {
                let (f, slots) = (&f, &slots);
                s.spawn(move || {
                    for j in (w..jobs).step_by(self.workers) {
                        *slots[j].lock().unwrap() = Some(f(j));
                    }
                });
            }
        });
        slots.into_iter().map(|m| m.into_inner().unwrap().expect("every job ran")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_preserved() {
        let out = Threaded::new(3).run(10, |j| j * j);
        assert_eq!(out, (0..10).map(|j| j * j).collect::<Vec<_>>());
    }
}
