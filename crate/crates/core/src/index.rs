//! Counted B+-tree over Z-order keys.
//!
//! Every leaf entry carries the multiplicity `o(t)` of its key, and every
//! internal node caches the number of stored tuples below each child
//! (`C_Num`). Those two counters turn the tree into a bijection between keys
//! and global ranks `1..=N`, maintained under tuple-level inserts, deletes and
//! modifications in `O(log N)`.
//!
//! Rank convention: [`IceIndex::key2rank`] is inclusive (`<= key`),
//! [`IceIndex::key2rank_exclusive`] counts strictly smaller keys, and
//! [`IceIndex::rank2key`] is 1-indexed.

use std::io::{Read, Write};

use crate::error::{IceError, Result};
use crate::zorder::{AttributeSchema, QueryBox, ZKey};

pub const DEFAULT_FANOUT: usize = 100;
pub const MIN_FANOUT: usize = 4;

#[derive(Clone, Debug)]
pub(crate) struct Leaf {
    keys: Vec<ZKey>,
    freqs: Vec<u64>,
    count: u64,
}

#[derive(Clone, Debug)]
pub(crate) struct Internal {
    /// `seps[i]` is a lower bound for every key under `children[i + 1]` and a
    /// strict upper bound for every key under `children[..=i]`.
    seps: Vec<ZKey>,
    children: Vec<Node>,
    counts: Vec<u64>,
    count: u64,
}

#[derive(Clone, Debug)]
pub(crate) enum Node {
    Leaf(Leaf),
    Internal(Internal),
}

impl Node {
    fn count(&self) -> u64 {
        match self {
            Node::Leaf(l) => l.count,
            Node::Internal(n) => n.count,
        }
    }

    fn len(&self) -> usize {
        match self {
            Node::Leaf(l) => l.keys.len(),
            Node::Internal(n) => n.children.len(),
        }
    }

    fn empty_leaf() -> Node {
        Node::Leaf(Leaf { keys: Vec::new(), freqs: Vec::new(), count: 0 })
    }
}

impl Internal {
    #[inline]
    fn route(&self, key: ZKey) -> usize {
        self.seps.partition_point(|s| *s <= key)
    }

    fn from_children(children: Vec<Node>, seps: Vec<ZKey>) -> Internal {
        let counts: Vec<u64> = children.iter().map(Node::count).collect();
        let count = counts.iter().sum();
        Internal { seps, children, counts, count }
    }
}

impl Leaf {
    fn from_entries(keys: Vec<ZKey>, freqs: Vec<u64>) -> Leaf {
        let count = freqs.iter().sum();
        Leaf { keys, freqs, count }
    }
}

/// Result of an exact range execution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RangeCount {
    pub cardinality: u64,
    /// Distinct keys visited by the scan.
    pub tuples_scanned: u64,
}

/// The counted index.
#[derive(Clone, Debug)]
pub struct IceIndex {
    root: Node,
    fanout: usize,
    schema: AttributeSchema,
    total: u64,
    touched: usize,
}

fn min_occupancy(fanout: usize) -> usize {
    fanout.div_ceil(2)
}

impl IceIndex {
    pub fn new(schema: AttributeSchema, fanout: usize) -> Result<Self> {
        check_fanout(fanout)?;
        Ok(IceIndex { root: Node::empty_leaf(), fanout, schema, total: 0, touched: 0 })
    }

    /// Builds the index bottom-up from an unsorted multiset of keys.
    pub fn bulk_load<I>(schema: AttributeSchema, keys: I, fanout: usize) -> Result<Self>
    where
        I: IntoIterator<Item = ZKey>,
    {
        let mut keys: Vec<ZKey> = keys.into_iter().collect();
        keys.sort_unstable();
        let mut runs: Vec<(ZKey, u64)> = Vec::new();
        for k in keys {
            match runs.last_mut() {
                Some((last, f)) if *last == k => *f += 1,
                _ => runs.push((k, 1)),
            }
        }
        Self::bulk_load_sorted(schema, runs, fanout)
    }

    /// Builds from strictly increasing `(key, frequency)` runs.
    pub fn bulk_load_sorted(schema: AttributeSchema, runs: Vec<(ZKey, u64)>, fanout: usize) -> Result<Self> {
        check_fanout(fanout)?;
        if runs.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(IceError::Precondition("bulk-load runs must be strictly increasing".into()));
        }
        if runs.iter().any(|r| r.1 == 0) {
            return Err(IceError::Precondition("bulk-load frequencies must be positive".into()));
        }
        let total = runs.iter().map(|r| r.1).sum();
        if runs.is_empty() {
            return Self::new(schema, fanout);
        }

        let mut level: Vec<(ZKey, Node)> = pack(runs, fanout)
            .into_iter()
            .map(|chunk| {
                let first = chunk[0].0;
                let (keys, freqs) = chunk.into_iter().unzip();
                (first, Node::Leaf(Leaf::from_entries(keys, freqs)))
            })
            .collect();

        while level.len() > 1 {
            level = pack(level, fanout)
                .into_iter()
                .map(|chunk| {
                    let first = chunk[0].0;
                    let seps = chunk[1..].iter().map(|(k, _)| *k).collect();
                    let children = chunk.into_iter().map(|(_, n)| n).collect();
                    (first, Node::Internal(Internal::from_children(children, seps)))
                })
                .collect();
        }
        let root = level.pop().map(|(_, n)| n).unwrap();
        Ok(IceIndex { root, fanout, schema, total, touched: 0 })
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn fanout(&self) -> usize {
        self.fanout
    }

    /// `N`: total stored tuples, duplicates included.
    pub fn total_count(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Number of levels; a lone leaf root has depth 1.
    pub fn depth(&self) -> usize {
        let mut d = 1;
        let mut node = &self.root;
        while let Node::Internal(n) = node {
            d += 1;
            node = &n.children[0];
        }
        d
    }

    /// Nodes read or written by the most recent insert/delete.
    pub fn last_touched_nodes(&self) -> usize {
        self.touched
    }

    pub fn distinct_keys(&self) -> usize {
        fn walk(n: &Node) -> usize {
            match n {
                Node::Leaf(l) => l.keys.len(),
                Node::Internal(i) => i.children.iter().map(walk).sum(),
            }
        }
        walk(&self.root)
    }

    /// Multiplicity `o(t)` of `key` (0 if absent).
    pub fn freq(&self, key: ZKey) -> u64 {
        let leaf = self.leaf_for(key);
        leaf.keys.binary_search(&key).map(|i| leaf.freqs[i]).unwrap_or(0)
    }

    pub fn contains(&self, key: ZKey) -> bool {
        self.freq(key) > 0
    }

    /// Probability mass `o(t) / N` of `key`.
    pub fn pdf(&self, key: ZKey) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.freq(key) as f64 / self.total as f64
        }
    }

    fn leaf_for(&self, key: ZKey) -> &Leaf {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf(l) => return l,
                Node::Internal(n) => node = &n.children[n.route(key)],
            }
        }
    }

    pub fn insert(&mut self, key: ZKey) -> Result<()> {
        self.check_key(key)?;
        let mut touched = 0;
        if let Some((sep, right)) = insert_rec(&mut self.root, key, self.fanout, &mut touched) {
            let left = std::mem::replace(&mut self.root, Node::empty_leaf());
            self.root = Node::Internal(Internal::from_children(vec![left, right], vec![sep]));
            touched += 1;
        }
        self.total += 1;
        self.touched = touched;
        Ok(())
    }

    /// Removes one copy of `key`. Fails without touching the tree if absent.
    pub fn delete(&mut self, key: ZKey) -> Result<()> {
        if !self.contains(key) {
            return Err(IceError::KeyNotFound(key));
        }
        let mut touched = 0;
        delete_rec(&mut self.root, key, self.fanout, &mut touched)?;
        if let Node::Internal(n) = &mut self.root {
            if n.children.len() == 1 {
                self.root = n.children.pop().unwrap();
            }
        }
        self.total -= 1;
        self.touched = touched;
        Ok(())
    }

    /// Delete of `old` followed by insert of `new`.
    pub fn modify(&mut self, old: ZKey, new: ZKey) -> Result<()> {
        self.check_key(new)?;
        self.delete(old)?;
        let t = self.touched;
        self.insert(new)?;
        self.touched += t;
        Ok(())
    }

    fn check_key(&self, key: ZKey) -> Result<()> {
        if key > self.schema.max_key() {
            return Err(IceError::InvalidArgument(format!(
                "key {key} exceeds the {}-bit key space",
                self.schema.total_bits()
            )));
        }
        Ok(())
    }

    /// Number of stored copies with key `<= key`.
    pub fn key2rank(&self, key: ZKey) -> u64 {
        let mut rank = 0;
        let mut node = &self.root;
        loop {
            match node {
                Node::Internal(n) => {
                    let j = n.route(key);
                    rank += n.counts[..j].iter().sum::<u64>();
                    node = &n.children[j];
                }
                Node::Leaf(l) => {
                    let j = l.keys.partition_point(|k| *k <= key);
                    return rank + l.freqs[..j].iter().sum::<u64>();
                }
            }
        }
    }

    /// Number of stored copies with key `< key`.
    pub fn key2rank_exclusive(&self, key: ZKey) -> u64 {
        let mut rank = 0;
        let mut node = &self.root;
        loop {
            match node {
                Node::Internal(n) => {
                    let j = n.route(key);
                    rank += n.counts[..j].iter().sum::<u64>();
                    node = &n.children[j];
                }
                Node::Leaf(l) => {
                    let j = l.keys.partition_point(|k| *k < key);
                    return rank + l.freqs[..j].iter().sum::<u64>();
                }
            }
        }
    }

    /// Key of the `rank`-th stored copy in key order, `rank` in `1..=N`.
    pub fn rank2key(&self, rank: u64) -> Result<ZKey> {
        if rank == 0 || rank > self.total {
            return Err(IceError::RankOutOfRange { rank, total: self.total });
        }
        Ok(self.rank2key_unchecked(rank))
    }

    #[inline]
    pub(crate) fn rank2key_unchecked(&self, mut rank: u64) -> ZKey {
        let mut node = &self.root;
        loop {
            match node {
                Node::Internal(n) => {
                    let mut j = 0;
                    while rank > n.counts[j] {
                        rank -= n.counts[j];
                        j += 1;
                    }
                    node = &n.children[j];
                }
                Node::Leaf(l) => {
                    let mut j = 0;
                    while rank > l.freqs[j] {
                        rank -= l.freqs[j];
                        j += 1;
                    }
                    return l.keys[j];
                }
            }
        }
    }

    /// Exact `card(box)` by a forward scan from the box's low corner that
    /// jumps ahead with BIGMIN whenever it meets a key outside the box.
    pub fn range_query_exact(&self, qbox: &QueryBox) -> RangeCount {
        let mut out = RangeCount::default();
        if self.total == 0 {
            return out;
        }
        let (lo, hi) = self.schema.box_corners(qbox);
        let mut cur = Cursor::seek(&self.root, lo);
        while let Some((key, freq)) = cur.current() {
            if key > hi {
                break;
            }
            out.tuples_scanned += 1;
            if self.schema.in_box(key, qbox) {
                out.cardinality += freq;
                cur.advance();
            } else {
                match self.schema.bigmin_with_corners(ZKey(key.0 + 1), lo, hi) {
                    Some(next) if next <= hi => cur.skip_to(&self.root, next),
                    _ => break,
                }
            }
        }
        out
    }

    /// All `(key, frequency)` entries in key order.
    pub fn iter(&self) -> impl Iterator<Item = (ZKey, u64)> + '_ {
        let mut cur = Cursor::seek(&self.root, ZKey::MIN);
        std::iter::from_fn(move || {
            let item = cur.current();
            if item.is_some() {
                cur.advance();
            }
            item
        })
    }

    /// Recomputes every counter from the leaves up and checks the structural
    /// invariants (ordering, occupancy, equal leaf depth, separator bounds).
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let min = min_occupancy(self.fanout);
        let mut leaf_depth = None;
        let count = audit(&self.root, self.fanout, min, true, None, None, 1, &mut leaf_depth)?;
        if count != self.total {
            return Err(format!("root covers {count} tuples, index reports {}", self.total));
        }
        Ok(())
    }

    /// Writes the versioned binary snapshot.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        let betas = self.schema.betas();
        w.write_all(&(betas.len() as u32).to_le_bytes())?;
        w.write_all(betas)?;
        w.write_all(&(self.fanout as u32).to_le_bytes())?;
        w.write_all(&self.total.to_le_bytes())?;

        let mut queue = std::collections::VecDeque::from([&self.root]);
        let mut nodes = Vec::new();
        while let Some(n) = queue.pop_front() {
            nodes.push(n);
            if let Node::Internal(i) = n {
                queue.extend(i.children.iter());
            }
        }
        w.write_all(&(nodes.len() as u64).to_le_bytes())?;
        for n in nodes {
            match n {
                Node::Leaf(l) => {
                    w.write_all(&[0u8])?;
                    w.write_all(&(l.keys.len() as u32).to_le_bytes())?;
                    for (k, f) in l.keys.iter().zip(&l.freqs) {
                        w.write_all(&k.0.to_le_bytes())?;
                        w.write_all(&f.to_le_bytes())?;
                    }
                }
                Node::Internal(i) => {
                    w.write_all(&[1u8])?;
                    w.write_all(&(i.children.len() as u32).to_le_bytes())?;
                    for s in &i.seps {
                        w.write_all(&s.0.to_le_bytes())?;
                    }
                    for c in &i.counts {
                        w.write_all(&c.to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_snapshot_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_snapshot(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(IceError::Snapshot("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != SNAPSHOT_VERSION {
            return Err(IceError::Snapshot(format!("unsupported version {version}")));
        }
        let m = read_u32(&mut r)? as usize;
        if m > 128 {
            return Err(IceError::Snapshot(format!("implausible attribute count {m}")));
        }
        let mut betas = vec![0u8; m];
        r.read_exact(&mut betas)?;
        let schema = AttributeSchema::new(betas)?;
        let fanout = read_u32(&mut r)? as usize;
        check_fanout(fanout)?;
        let total = read_u64(&mut r)?;
        let node_count = read_u64(&mut r)? as usize;

        enum Raw {
            Leaf(Leaf),
            Internal(Vec<ZKey>, Vec<u64>),
        }
        let mut raws = Vec::with_capacity(node_count.min(1 << 20));
        for _ in 0..node_count {
            let mut tag = [0u8];
            r.read_exact(&mut tag)?;
            let len = read_u32(&mut r)? as usize;
            match tag[0] {
                0 => {
                    let mut keys = Vec::with_capacity(len);
                    let mut freqs = Vec::with_capacity(len);
                    for _ in 0..len {
                        keys.push(ZKey(read_u128(&mut r)?));
                        freqs.push(read_u64(&mut r)?);
                    }
                    raws.push(Raw::Leaf(Leaf::from_entries(keys, freqs)));
                }
                1 => {
                    if len == 0 {
                        return Err(IceError::Snapshot("internal node without children".into()));
                    }
                    let seps = (1..len).map(|_| read_u128(&mut r).map(ZKey)).collect::<Result<_>>()?;
                    let counts = (0..len).map(|_| read_u64(&mut r)).collect::<Result<_>>()?;
                    raws.push(Raw::Internal(seps, counts));
                }
                t => return Err(IceError::Snapshot(format!("unknown node tag {t}"))),
            }
        }
        if raws.is_empty() {
            return Err(IceError::Snapshot("no root node".into()));
        }

        // Level order: the children of each internal node are contiguous and
        // follow every node enqueued before it.
        let mut child_start = vec![0usize; raws.len()];
        let mut next = 1;
        for (i, raw) in raws.iter().enumerate() {
            if let Raw::Internal(_, counts) = raw {
                child_start[i] = next;
                next += counts.len();
            }
        }
        if next != raws.len() {
            return Err(IceError::Snapshot("node count does not match child links".into()));
        }
        let mut built: Vec<Option<Node>> = (0..raws.len()).map(|_| None).collect();
        for (i, raw) in raws.into_iter().enumerate().rev() {
            let node = match raw {
                Raw::Leaf(l) => Node::Leaf(l),
                Raw::Internal(seps, counts) => {
                    let start = child_start[i];
                    let children = (start..start + counts.len())
                        .map(|c| built[c].take().ok_or_else(|| IceError::Snapshot("dangling child".into())))
                        .collect::<Result<Vec<_>>>()?;
                    let node = Internal::from_children(children, seps);
                    if node.counts != counts {
                        return Err(IceError::Snapshot("stored counters disagree with subtree sizes".into()));
                    }
                    Node::Internal(node)
                }
            };
            built[i] = Some(node);
        }
        let root = built[0].take().unwrap();
        let idx = IceIndex { root, fanout, schema, total, touched: 0 };
        idx.check_invariants().map_err(IceError::Snapshot)?;
        Ok(idx)
    }
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"ICEIDX\0\x01";
const SNAPSHOT_VERSION: u32 = 1;

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_u128<R: Read>(r: &mut R) -> Result<u128> {
    let mut b = [0u8; 16];
    r.read_exact(&mut b)?;
    Ok(u128::from_le_bytes(b))
}

fn check_fanout(fanout: usize) -> Result<()> {
    if fanout < MIN_FANOUT {
        return Err(IceError::InvalidArgument(format!("fanout must be at least {MIN_FANOUT}, got {fanout}")));
    }
    Ok(())
}

/// Chunks `items` into full nodes; a short trailing node is evened out with its
/// left neighbour so both meet minimum occupancy.
fn pack<T>(items: Vec<T>, fanout: usize) -> Vec<Vec<T>> {
    let min = min_occupancy(fanout);
    let mut out: Vec<Vec<T>> = Vec::with_capacity(items.len().div_ceil(fanout));
    let mut cur = Vec::with_capacity(fanout);
    for it in items {
        cur.push(it);
        if cur.len() >= fanout {
            out.push(std::mem::replace(&mut cur, Vec::with_capacity(fanout)));
        }
    }
    if !cur.is_empty() {
        if cur.len() < min && !out.is_empty() {
            let mut prev = out.pop().unwrap();
            let total = prev.len() + cur.len();
            let tail = prev.split_off(total.div_ceil(2));
            let mut last = tail;
            last.extend(cur);
            out.push(prev);
            out.push(last);
        } else {
            out.push(cur);
        }
    }
    out
}

fn insert_rec(node: &mut Node, key: ZKey, fanout: usize, touched: &mut usize) -> Option<(ZKey, Node)> {
    *touched += 1;
    match node {
        Node::Leaf(l) => {
            match l.keys.binary_search(&key) {
                Ok(i) => l.freqs[i] += 1,
                Err(i) => {
                    l.keys.insert(i, key);
                    l.freqs.insert(i, 1);
                }
            }
            l.count += 1;
            if l.keys.len() <= fanout {
                return None;
            }
            let mid = l.keys.len() / 2;
            let right = Leaf::from_entries(l.keys.split_off(mid), l.freqs.split_off(mid));
            l.count -= right.count;
            *touched += 1;
            Some((right.keys[0], Node::Leaf(right)))
        }
        Node::Internal(n) => {
            let j = n.route(key);
            let split = insert_rec(&mut n.children[j], key, fanout, touched);
            n.counts[j] += 1;
            n.count += 1;
            let (sep, right) = split?;
            n.counts[j] = n.children[j].count();
            n.counts.insert(j + 1, right.count());
            n.seps.insert(j, sep);
            n.children.insert(j + 1, right);
            if n.children.len() <= fanout {
                return None;
            }
            let mid = n.children.len() / 2;
            let children = n.children.split_off(mid);
            let counts = n.counts.split_off(mid);
            let seps = n.seps.split_off(mid);
            let promoted = n.seps.pop().unwrap();
            let right_count: u64 = counts.iter().sum();
            n.count -= right_count;
            *touched += 1;
            Some((promoted, Node::Internal(Internal { seps, children, counts, count: right_count })))
        }
    }
}

/// Returns whether `node` fell below minimum occupancy.
fn delete_rec(node: &mut Node, key: ZKey, fanout: usize, touched: &mut usize) -> Result<bool> {
    *touched += 1;
    let min = min_occupancy(fanout);
    match node {
        Node::Leaf(l) => {
            let i = l.keys.binary_search(&key).map_err(|_| IceError::KeyNotFound(key))?;
            l.freqs[i] -= 1;
            if l.freqs[i] == 0 {
                l.keys.remove(i);
                l.freqs.remove(i);
            }
            l.count -= 1;
            Ok(l.keys.len() < min)
        }
        Node::Internal(n) => {
            let j = n.route(key);
            let underflow = delete_rec(&mut n.children[j], key, fanout, touched)?;
            n.counts[j] -= 1;
            n.count -= 1;
            if underflow {
                rebalance(n, j, min, touched);
            }
            Ok(n.children.len() < min)
        }
    }
}

/// Restores occupancy of `n.children[j]`: borrow from a sibling, else merge.
fn rebalance(n: &mut Internal, j: usize, min: usize, touched: &mut usize) {
    if j > 0 && n.children[j - 1].len() > min {
        *touched += 1;
        let (left, rest) = n.children.split_at_mut(j);
        let (left, child) = (&mut left[j - 1], &mut rest[0]);
        let moved = match (left, child) {
            (Node::Leaf(l), Node::Leaf(c)) => {
                let k = l.keys.pop().unwrap();
                let f = l.freqs.pop().unwrap();
                l.count -= f;
                c.keys.insert(0, k);
                c.freqs.insert(0, f);
                c.count += f;
                n.seps[j - 1] = k;
                f
            }
            (Node::Internal(l), Node::Internal(c)) => {
                let ch = l.children.pop().unwrap();
                let cnt = l.counts.pop().unwrap();
                let sep = l.seps.pop().unwrap();
                l.count -= cnt;
                c.children.insert(0, ch);
                c.counts.insert(0, cnt);
                c.seps.insert(0, std::mem::replace(&mut n.seps[j - 1], sep));
                c.count += cnt;
                cnt
            }
            _ => unreachable!("siblings at different levels"),
        };
        n.counts[j - 1] -= moved;
        n.counts[j] += moved;
    } else if j + 1 < n.children.len() && n.children[j + 1].len() > min {
        *touched += 1;
        let (head, right) = n.children.split_at_mut(j + 1);
        let (child, right) = (&mut head[j], &mut right[0]);
        let moved = match (child, right) {
            (Node::Leaf(c), Node::Leaf(r)) => {
                let k = r.keys.remove(0);
                let f = r.freqs.remove(0);
                r.count -= f;
                c.keys.push(k);
                c.freqs.push(f);
                c.count += f;
                n.seps[j] = r.keys[0];
                f
            }
            (Node::Internal(c), Node::Internal(r)) => {
                let ch = r.children.remove(0);
                let cnt = r.counts.remove(0);
                let sep = r.seps.remove(0);
                r.count -= cnt;
                c.children.push(ch);
                c.counts.push(cnt);
                c.seps.push(std::mem::replace(&mut n.seps[j], sep));
                c.count += cnt;
                cnt
            }
            _ => unreachable!("siblings at different levels"),
        };
        n.counts[j + 1] -= moved;
        n.counts[j] += moved;
    } else if n.children.len() > 1 {
        *touched += 1;
        // merge the pair (l, l + 1)
        let l = if j > 0 { j - 1 } else { j };
        let right = n.children.remove(l + 1);
        let right_count = n.counts.remove(l + 1);
        let sep = n.seps.remove(l);
        match (&mut n.children[l], right) {
            (Node::Leaf(a), Node::Leaf(b)) => {
                a.keys.extend(b.keys);
                a.freqs.extend(b.freqs);
                a.count += b.count;
            }
            (Node::Internal(a), Node::Internal(b)) => {
                a.seps.push(sep);
                a.seps.extend(b.seps);
                a.children.extend(b.children);
                a.counts.extend(b.counts);
                a.count += b.count;
            }
            _ => unreachable!("siblings at different levels"),
        }
        n.counts[l] += right_count;
    }
}

#[allow(clippy::too_many_arguments)]
fn audit(
    node: &Node,
    fanout: usize,
    min: usize,
    is_root: bool,
    lower: Option<ZKey>,
    upper: Option<ZKey>,
    depth: usize,
    leaf_depth: &mut Option<usize>,
) -> std::result::Result<u64, String> {
    let len = node.len();
    if len > fanout {
        return Err(format!("node with {len} entries exceeds fanout {fanout}"));
    }
    if !is_root && len < min {
        return Err(format!("non-root node with {len} entries below minimum {min}"));
    }
    let in_bounds = |k: ZKey| lower.is_none_or(|lo| k >= lo) && upper.is_none_or(|hi| k < hi);
    match node {
        Node::Leaf(l) => {
            match *leaf_depth {
                None => *leaf_depth = Some(depth),
                Some(d) if d != depth => return Err(format!("leaves at depths {d} and {depth}")),
                _ => {}
            }
            if l.keys.len() != l.freqs.len() {
                return Err("leaf key/frequency length mismatch".into());
            }
            if l.keys.windows(2).any(|w| w[0] >= w[1]) {
                return Err("leaf keys not strictly increasing".into());
            }
            if let Some(k) = l.keys.iter().find(|k| !in_bounds(**k)) {
                return Err(format!("leaf key {k} outside separator bounds"));
            }
            if l.freqs.contains(&0) {
                return Err("leaf entry with zero frequency".into());
            }
            let sum: u64 = l.freqs.iter().sum();
            if sum != l.count {
                return Err(format!("leaf C_Num {} but frequencies sum to {sum}", l.count));
            }
            Ok(sum)
        }
        Node::Internal(n) => {
            if len == 0 || n.seps.len() + 1 != len || n.counts.len() != len {
                return Err("internal node arity mismatch".into());
            }
            if is_root && len < 2 {
                return Err("internal root with a single child".into());
            }
            if n.seps.windows(2).any(|w| w[0] >= w[1]) {
                return Err("separators not strictly increasing".into());
            }
            let mut sum = 0;
            for (i, child) in n.children.iter().enumerate() {
                let lo = if i == 0 { lower } else { Some(n.seps[i - 1]) };
                let hi = if i + 1 == len { upper } else { Some(n.seps[i]) };
                let c = audit(child, fanout, min, false, lo, hi, depth + 1, leaf_depth)?;
                if c != n.counts[i] {
                    return Err(format!("cached child counter {} but subtree holds {c}", n.counts[i]));
                }
                sum += c;
            }
            if sum != n.count {
                return Err(format!("internal C_Num {} but children sum to {sum}", n.count));
            }
            Ok(sum)
        }
    }
}

/// Forward cursor over leaf entries.
struct Cursor<'a> {
    stack: Vec<(&'a Internal, usize)>,
    leaf: &'a Leaf,
    pos: usize,
}

impl<'a> Cursor<'a> {
    /// Positions on the first entry with key `>= key`.
    fn seek(root: &'a Node, key: ZKey) -> Cursor<'a> {
        let mut stack = Vec::new();
        let mut node = root;
        let leaf = loop {
            match node {
                Node::Internal(n) => {
                    let j = n.route(key);
                    stack.push((n, j));
                    node = &n.children[j];
                }
                Node::Leaf(l) => break l,
            }
        };
        let pos = leaf.keys.partition_point(|k| *k < key);
        let mut c = Cursor { stack, leaf, pos };
        c.normalize();
        c
    }

    fn current(&self) -> Option<(ZKey, u64)> {
        (self.pos < self.leaf.keys.len()).then(|| (self.leaf.keys[self.pos], self.leaf.freqs[self.pos]))
    }

    fn advance(&mut self) {
        self.pos += 1;
        self.normalize();
    }

    /// Moves forward to the first entry `>= key`, re-seeking only when the
    /// target lies beyond the current leaf.
    fn skip_to(&mut self, root: &'a Node, key: ZKey) {
        match self.leaf.keys.last() {
            Some(last) if *last >= key => {
                self.pos += self.leaf.keys[self.pos..].partition_point(|k| *k < key);
            }
            _ => *self = Cursor::seek(root, key),
        }
    }

    /// Steps into the next leaf while positioned past the end of this one.
    fn normalize(&mut self) {
        while self.pos >= self.leaf.keys.len() {
            // climb to the first ancestor with an unvisited right child
            let Some(level) = self.stack.iter().rposition(|(n, j)| j + 1 < n.children.len()) else {
                return;
            };
            self.stack.truncate(level + 1);
            let (n, j) = self.stack.pop().unwrap();
            self.stack.push((n, j + 1));
            let mut node = &n.children[j + 1];
            loop {
                match node {
                    Node::Internal(i) => {
                        self.stack.push((i, 0));
                        node = &i.children[0];
                    }
                    Node::Leaf(l) => {
                        self.leaf = l;
                        self.pos = 0;
                        break;
                    }
                }
            }
        }
    }
}
