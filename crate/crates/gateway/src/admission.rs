use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

/// Concurrency cap plus a rolling-window request ceiling.
#[derive(Debug)]
pub struct Admission {
    max_concurrent: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
    per_window: usize,
    window: Duration,
    issued: Mutex<VecDeque<Instant>>,
}

/// Held while a request is in flight.
#[derive(Debug)]
pub struct Permit<'a> {
    owner: &'a Admission,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.owner.in_flight.lock().expect("admission lock");
        *n -= 1;
        self.owner.freed.notify_one();
    }
}

impl Admission {
    pub fn new(max_concurrent: usize, per_window: usize, window: Duration) -> Self {
        assert!(max_concurrent >= 1 && per_window >= 1);
        Admission {
            max_concurrent,
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            per_window,
            window,
            issued: Mutex::new(VecDeque::new()),
        }
    }

    /// Blocks until a concurrency slot and a rate slot are both free.
    pub fn acquire(&self) -> Permit<'_> {
        {
            let mut n = self.in_flight.lock().expect("admission lock");
            while *n >= self.max_concurrent {
                n = self.freed.wait(n).expect("admission lock");
            }
            *n += 1;
        }
        let permit = Permit { owner: self };
        loop {
            let wait = {
                let mut issued = self.issued.lock().expect("rate lock");
                let now = Instant::now();
                while issued.front().is_some_and(|&t| now.duration_since(t) >= self.window) {
                    issued.pop_front();
                }
                if issued.len() < self.per_window {
                    issued.push_back(now);
                    None
                } else {
                    let oldest = *issued.front().expect("non-empty");
                    Some(self.window.saturating_sub(now.duration_since(oldest)))
                }
            };
            match wait {
                None => return permit,
                Some(d) => thread::sleep(d.max(Duration::from_millis(1))),
            }
        }
    }

    pub fn in_flight(&self) -> usize {
        *self.in_flight.lock().expect("admission lock")
    }
}
