use super::order::OrderStatTree;
use super::quartile_index;
use std::collections::VecDeque;

/// Fixed-length sliding window over one signal, with incrementally
/// maintained moments and order statistics.
#[derive(Debug, Clone)]
pub struct SlidingWindow {
    capacity: usize,
    buffer: VecDeque<(f64, u64)>,
    order: OrderStatTree,
    next_tag: u64,
    mean: f64,
    m2: f64,
    /// Replacements since the moments were last recomputed from the buffer.
    since_resync: usize,
}

impl SlidingWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "window capacity must be positive");
        Self {
            capacity,
            buffer: VecDeque::with_capacity(capacity),
            order: OrderStatTree::with_capacity(capacity + 1),
            next_tag: 0,
            mean: 0.0,
            m2: 0.0,
            since_resync: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.buffer.len() == self.capacity
    }

    pub fn push(&mut self, x: f64) {
        let tag = self.next_tag;
        self.next_tag += 1;
        self.order.insert(x, tag);
        if self.buffer.len() < self.capacity {
            self.buffer.push_back((x, tag));
            let n = self.buffer.len() as f64;
            let delta = x - self.mean;
            self.mean += delta / n;
            self.m2 += delta * (x - self.mean);
            return;
        }
        let (old, old_tag) = self.buffer.pop_front().expect("full window");
        self.buffer.push_back((x, tag));
        let removed = self.order.remove(old, old_tag);
        debug_assert!(removed);
        let w = self.capacity as f64;
        let prev_mean = self.mean;
        self.mean += (x - old) / w;
        self.m2 += (x - old) * (x - self.mean + old - prev_mean);
        self.since_resync += 1;
        if self.since_resync >= self.capacity {
            self.resync();
        }
    }

    /// Recomputes the moments from the buffer to shed accumulated rounding.
    fn resync(&mut self) {
        let n = self.buffer.len() as f64;
        let mean = self.buffer.iter().map(|p| p.0).sum::<f64>() / n;
        self.m2 = self.buffer.iter().map(|p| (p.0 - mean) * (p.0 - mean)).sum();
        self.mean = mean;
        self.since_resync = 0;
    }

    pub fn values(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.buffer.iter().map(|p| p.0)
    }

    /// True when every element is identical.
    pub fn is_constant(&self) -> bool {
        self.order.min() == self.order.max()
    }

    /// Running mean; exact when the window is constant.
    pub fn mean(&self) -> f64 {
        match (self.order.min(), self.order.max()) {
            (Some(lo), Some(hi)) if lo == hi => lo,
            _ => self.mean,
        }
    }

    /// Population standard deviation from the running second moment. Cheap,
    /// but loses relative precision when the spread is tiny next to the level.
    pub fn running_std(&self) -> f64 {
        if self.buffer.is_empty() || self.is_constant() {
            return 0.0;
        }
        (self.m2.max(0.0) / self.buffer.len() as f64).sqrt()
    }

    /// Population standard deviation, summing squared deviations from the
    /// running mean over the buffer.
    pub fn std(&self) -> f64 {
        if self.buffer.is_empty() || self.is_constant() {
            return 0.0;
        }
        let mean = self.mean();
        let m2: f64 = self.buffer.iter().map(|p| (p.0 - mean) * (p.0 - mean)).sum();
        (m2 / self.buffer.len() as f64).sqrt()
    }

    /// Nearest-rank quartile `k` in `1..=3` of the current contents.
    pub fn quartile(&self, k: usize) -> f64 {
        let n = self.buffer.len();
        self.order.select(quartile_index(k, n)).unwrap_or(0.0)
    }

    pub fn sorted(&self) -> Vec<f64> {
        self.order.to_sorted_vec()
    }
}
