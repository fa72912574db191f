//! Outbound frame queue. State frames are dropped oldest-first once the
//! queue holds `cap` of them; control frames are always kept.

use std::collections::VecDeque;
use std::sync::Mutex;

use tokio::sync::Notify;

use crate::protocol::ServerMsg;

#[derive(Debug)]
pub struct Outbox {
    inner: Mutex<Inner>,
    notify: Notify,
    cap: usize,
}

#[derive(Debug, Default)]
struct Inner {
    queue: VecDeque<ServerMsg>,
    states: usize,
    dropped: u64,
    closed: bool,
}

impl Outbox {
    pub fn new(cap: usize) -> Self {
        Self { inner: Mutex::default(), notify: Notify::new(), cap: cap.max(1) }
    }

    /// Never blocks.
    pub fn push(&self, msg: ServerMsg) {
        let mut inner = self.inner.lock().unwrap();
        if msg.is_droppable() {
            if inner.states >= self.cap {
                if let Some(pos) = inner.queue.iter().position(ServerMsg::is_droppable) {
                    inner.queue.remove(pos);
                    inner.states -= 1;
                    inner.dropped += 1;
                }
            }
            inner.states += 1;
        }
        inner.queue.push_back(msg);
        drop(inner);
        self.notify.notify_one();
    }

    /// Wait for frames and take all of them. `None` once closed and empty.
    pub async fn next_batch(&self) -> Option<Vec<ServerMsg>> {
        loop {
            {
                let mut inner = self.inner.lock().unwrap();
                if !inner.queue.is_empty() {
                    inner.states = 0;
                    return Some(inner.queue.drain(..).collect());
                }
                if inner.closed {
                    return None;
                }
            }
            self.notify.notified().await;
        }
    }

    pub fn close(&self) {
        self.inner.lock().unwrap().closed = true;
        self.notify.notify_one();
    }

    pub fn dropped(&self) -> u64 {
        self.inner.lock().unwrap().dropped
    }
}
