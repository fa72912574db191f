//! Single-slot input mailbox: the network reader writes, the tick loop reads.
//! Only the highest sequence number survives.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use sharedctl::lander::ControlInput;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    seq: u64,
    input: ControlInput,
    /// `None` after a clear; the sequence number is still remembered.
    received: Option<Instant>,
}

#[derive(Debug, Default)]
pub struct Mailbox {
    slot: Mutex<Option<Entry>>,
}

impl Mailbox {
    /// Store an input unless a newer one is already held. Returns whether it
    /// was kept.
    pub fn put(&self, seq: u64, input: ControlInput, received: Instant) -> bool {
        let mut slot = self.slot.lock().unwrap();
        if slot.is_some_and(|e| e.seq >= seq) {
            return false;
        }
        *slot = Some(Entry { seq, input, received: Some(received) });
        true
    }

    /// Newest input, or zeros if none arrived within `staleness`.
    pub fn read(&self, now: Instant, staleness: Duration) -> ControlInput {
        match *self.slot.lock().unwrap() {
            Some(Entry { input, received: Some(at), .. }) if now.saturating_duration_since(at) <= staleness => input,
            _ => ControlInput::ZERO,
        }
    }

    /// Forget the held input but keep its sequence number, so late frames
    /// from before the clear are still rejected.
    pub fn clear(&self) {
        if let Some(e) = self.slot.lock().unwrap().as_mut() {
            e.received = None;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latest_wins_and_goes_stale() {
        let mb = Mailbox::default();
        let t0 = Instant::now();
        let stale = Duration::from_millis(200);
        assert_eq!(mb.read(t0, stale), ControlInput::ZERO);
        assert!(mb.put(2, ControlInput::new(0.5, 0.1), t0));
        assert!(!mb.put(1, ControlInput::new(0.9, 0.9), t0));
        assert!(!mb.put(2, ControlInput::new(0.9, 0.9), t0));
        assert_eq!(mb.read(t0 + Duration::from_millis(150), stale), ControlInput::new(0.5, 0.1));
        assert_eq!(mb.read(t0 + Duration::from_millis(201), stale), ControlInput::ZERO);
        assert!(mb.put(3, ControlInput::new(0.2, 0.0), t0 + Duration::from_millis(300)));
        assert_eq!(mb.read(t0 + Duration::from_millis(310), stale), ControlInput::new(0.2, 0.0));
        mb.clear();
        assert_eq!(mb.read(t0 + Duration::from_millis(310), stale), ControlInput::ZERO);
        assert!(!mb.put(3, ControlInput::new(0.2, 0.0), t0 + Duration::from_millis(310)));
        assert!(mb.put(4, ControlInput::new(0.3, 0.0), t0 + Duration::from_millis(320)));
    }
}
