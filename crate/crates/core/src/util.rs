//! Small shared plumbing.

use std::sync::{Condvar, Mutex};

pub fn hex_lower(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        use std::fmt::Write;
        let _ = write!(s, "{b:02x}");
    }
    s
}

pub fn sha256_hex(data: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex_lower(&Sha256::digest(data))
}

pub struct Semaphore {
    available: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    pub fn new(n: usize) -> Self {
        Semaphore {
            available: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self, n: usize) -> SemGuard<'_> {
        let mut avail = self.available.lock().unwrap();
        while *avail < n {
            avail = self.cv.wait(avail).unwrap();
        }
        *avail -= n;
        SemGuard { sem: self, n }
    }
}

pub struct SemGuard<'a> {
    sem: &'a Semaphore,
    n: usize,
}

impl Drop for SemGuard<'_> {
    fn drop(&mut self) {
        let mut avail = self.sem.available.lock().unwrap();
        *avail += self.n;
        self.sem.cv.notify_all();
    }
}
