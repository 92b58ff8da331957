//! Order-statistic treap: O(log n) expected insert, remove and k-th select.
//!
//! Keys are `(value, tag)` pairs; the tag disambiguates equal values so every
//! stored element is unique. Nodes live in an arena with a free list, so a
//! window of fixed length allocates once.

const NIL: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    value: f64,
    tag: u64,
    priority: u32,
    left: u32,
    right: u32,
    size: u32,
}

#[derive(Debug, Clone)]
pub struct OrderStatTree {
    nodes: Vec<Node>,
    free: Vec<u32>,
    root: u32,
    rng: u64,
}

impl Default for OrderStatTree {
    fn default() -> Self {
        Self::with_capacity(0)
    }
}

impl OrderStatTree {
    pub fn with_capacity(capacity: usize) -> Self {
        Self { nodes: Vec::with_capacity(capacity), free: Vec::new(), root: NIL, rng: 0x9E37_79B9_7F4A_7C15 }
    }

    pub fn len(&self) -> usize {
        self.size(self.root) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.root == NIL
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.free.clear();
        self.root = NIL;
    }

    #[inline]
    fn size(&self, n: u32) -> u32 {
        if n == NIL {
            0
        } else {
            self.nodes[n as usize].size
        }
    }

    #[inline]
    fn update(&mut self, n: u32) {
        let (l, r) = {
            let node = &self.nodes[n as usize];
            (node.left, node.right)
        };
        self.nodes[n as usize].size = 1 + self.size(l) + self.size(r);
    }

    fn next_priority(&mut self) -> u32 {
        // xorshift64*
        self.rng ^= self.rng >> 12;
        self.rng ^= self.rng << 25;
        self.rng ^= self.rng >> 27;
        (self.rng.wrapping_mul(0x2545_F491_4F6C_DD1D) >> 32) as u32
    }

    #[inline]
    fn less(&self, n: u32, value: f64, tag: u64) -> bool {
        let node = &self.nodes[n as usize];
        node.value.total_cmp(&value).then(node.tag.cmp(&tag)).is_lt()
    }

    /// Splits `n` into keys strictly below `(value, tag)` and the rest.
    fn split(&mut self, n: u32, value: f64, tag: u64) -> (u32, u32) {
        if n == NIL {
            return (NIL, NIL);
        }
        if self.less(n, value, tag) {
            let right = self.nodes[n as usize].right;
            let (a, b) = self.split(right, value, tag);
            self.nodes[n as usize].right = a;
            self.update(n);
            (n, b)
        } else {
            let left = self.nodes[n as usize].left;
            let (a, b) = self.split(left, value, tag);
            self.nodes[n as usize].left = b;
            self.update(n);
            (a, n)
        }
    }

    fn merge(&mut self, a: u32, b: u32) -> u32 {
        if a == NIL {
            return b;
        }
        if b == NIL {
            return a;
        }
        if self.nodes[a as usize].priority > self.nodes[b as usize].priority {
            let right = self.nodes[a as usize].right;
            let merged = self.merge(right, b);
            self.nodes[a as usize].right = merged;
            self.update(a);
            a
        } else {
            let left = self.nodes[b as usize].left;
            let merged = self.merge(a, left);
            self.nodes[b as usize].left = merged;
            self.update(b);
            b
        }
    }

    /// Inserts `(value, tag)`; the pair must not already be present.
    pub fn insert(&mut self, value: f64, tag: u64) {
        let priority = self.next_priority();
        let node = Node { value, tag, priority, left: NIL, right: NIL, size: 1 };
        let idx = match self.free.pop() {
            Some(i) => {
                self.nodes[i as usize] = node;
                i
            }
            None => {
                self.nodes.push(node);
                (self.nodes.len() - 1) as u32
            }
        };
        let (l, r) = self.split(self.root, value, tag);
        let l = self.merge(l, idx);
        self.root = self.merge(l, r);
    }

    /// Removes `(value, tag)`; returns whether it was present.
    pub fn remove(&mut self, value: f64, tag: u64) -> bool {
        let (l, rest) = self.split(self.root, value, tag);
        let (mid, r) = match tag.checked_add(1) {
            Some(next) => self.split(rest, value, next),
            None => (rest, NIL),
        };
        let found = mid != NIL;
        if found {
            debug_assert_eq!(self.size(mid), 1);
            self.free.push(mid);
        }
        self.root = self.merge(l, r);
        found
    }

    /// The `k`-th smallest value (0-based).
    pub fn select(&self, mut k: usize) -> Option<f64> {
        let mut n = self.root;
        while n != NIL {
            let node = &self.nodes[n as usize];
            let left = self.size(node.left) as usize;
            if k < left {
                n = node.left;
            } else if k == left {
                return Some(node.value);
            } else {
                k -= left + 1;
                n = node.right;
            }
        }
        None
    }

    pub fn min(&self) -> Option<f64> {
        self.select(0)
    }

    pub fn max(&self) -> Option<f64> {
        self.len().checked_sub(1).and_then(|k| self.select(k))
    }

    /// In-order values, for diagnostics and tests.
    pub fn to_sorted_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        let mut stack = Vec::new();
        let mut n = self.root;
        while n != NIL || !stack.is_empty() {
            while n != NIL {
                stack.push(n);
                n = self.nodes[n as usize].left;
            }
            let top = stack.pop().unwrap();
            out.push(self.nodes[top as usize].value);
            n = self.nodes[top as usize].right;
        }
        out
    }
}
