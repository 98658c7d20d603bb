//! Hierarchical Navigable Small World graph over component means.
//!
//! Nodes are inserted in input order. Each node draws a top layer from a
//! seeded geometric distribution with multiplier `m_L = 1/ln(M)`, is located
//! by greedy descent through the layers above it, and is then linked on each
//! of its own layers to the `M` nearest results of a beam search of width
//! `ef_construction`. Neighbour lists that overflow (`M` per layer, `2M` at
//! layer 0) are trimmed back to their nearest members.
//!
//! All distance comparisons use squared Euclidean distance with ties broken
//! by ascending node id; reported distances are Euclidean.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::math::{floor, ln, sqrt, squared_distance};

/// Highest layer a node may be assigned to.
const MAX_LEVEL: usize = 31;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KnnError {
    #[error("no points supplied")]
    Empty,
    #[error("point dimension must be at least 1")]
    ZeroDimension,
    #[error("point buffer length {len} is not a multiple of dimension {dim}")]
    RaggedPoints { len: usize, dim: usize },
    #[error("query has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("k = {k} outside [1, {n}]")]
    KOutOfRange { k: usize, n: usize },
    #[error("ef_search = {ef} is smaller than k = {k}")]
    BeamTooNarrow { ef: usize, k: usize },
    #[error("M must be at least 2, got {0}")]
    BadM(usize),
    #[error("inconsistent index structure: {0}")]
    Corrupt(&'static str),
    #[error("index checksum {stored:#018x} does not match points {actual:#018x}")]
    ChecksumMismatch { stored: u64, actual: u64 },
    #[error("no queries supplied")]
    NoQueries,
}

/// Checksum binding an index (or density model) to a set of means.
pub fn means_checksum(means: &[f64], n: usize, dim: usize) -> u64 {
    let mut h = Sha256::new();
    h.update((n as u64).to_le_bytes());
    h.update((dim as u64).to_le_bytes());
    for v in means {
        h.update(v.to_bits().to_le_bytes());
    }
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HnswParams {
    /// Maximum links per node on layers above 0; layer 0 allows `2·m`.
    pub m: usize,
    pub ef_construction: usize,
    pub seed: u64,
}

impl HnswParams {
    pub const DEFAULT_EF_SEARCH: usize = 200;

    pub fn level_multiplier(&self) -> f64 {
        1.0 / ln(self.m as f64)
    }

    pub fn max_links(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.m
        } else {
            self.m
        }
    }
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 16,
            ef_construction: 200,
            seed: 0,
        }
    }
}

/// One query result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: usize,
    pub distance: f64,
}

/// Heap key ordered by squared distance, then id.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Key {
    dist2: f64,
    id: u32,
}

impl Eq for Key {}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Reusable visited-set for searches over an index of a given size.
#[derive(Debug, Clone)]
pub struct SearchScratch {
    stamps: Vec<u32>,
    epoch: u32,
}

impl SearchScratch {
    pub fn new(n: usize) -> Self {
        Self {
            stamps: vec![0; n],
            epoch: 0,
        }
    }

    fn reset(&mut self, n: usize) {
        if self.stamps.len() < n {
            self.stamps.resize(n, 0);
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamps.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
    }

    #[inline]
    fn visit(&mut self, id: u32) -> bool {
        let slot = &mut self.stamps[id as usize];
        if *slot == self.epoch {
            false
        } else {
            *slot = self.epoch;
            true
        }
    }

    #[inline]
    fn seen(&self, id: usize) -> bool {
        self.stamps[id] == self.epoch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnIndex {
    params: HnswParams,
    dim: usize,
    points: Vec<f64>,
    /// `links[node][layer]`; a node's layer count is `links[node].len()`.
    links: Vec<Vec<Vec<u32>>>,
    entry: u32,
    checksum: u64,
}

fn validate_points(points: &[f64], dim: usize) -> Result<usize, KnnError> {
    if dim == 0 {
        return Err(KnnError::ZeroDimension);
    }
    if !points.len().is_multiple_of(dim) {
        return Err(KnnError::RaggedPoints {
            len: points.len(),
            dim,
        });
    }
    let n = points.len() / dim;
    if n == 0 {
        return Err(KnnError::Empty);
    }
    Ok(n)
}

/// Builds the graph over `points` (flat row-major `N × dim`).
pub fn build_index(points: &[f64], dim: usize, params: &HnswParams) -> Result<KnnIndex, KnnError> {
    let n = validate_points(points, dim)?;
    if n > u32::MAX as usize {
        return Err(KnnError::Corrupt("too many points"));
    }
    if params.m < 2 {
        return Err(KnnError::BadM(params.m));
    }
    let mut index = KnnIndex {
        params: *params,
        dim,
        points: points.to_vec(),
        links: Vec::with_capacity(n),
        entry: 0,
        checksum: means_checksum(points, n, dim),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let ml = params.level_multiplier();
    let mut scratch = SearchScratch::new(n);
    for node in 0..n {
        let u: f64 = 1.0 - rng.random::<f64>();
        let level = (floor(-ln(u) * ml) as usize).min(MAX_LEVEL);
        index.insert(node as u32, level, &mut scratch);
    }
    Ok(index)
}

impl KnnIndex {
    /// Reassembles an index from stored structure, validating it against
    /// the points it will search.
    pub fn from_parts(
        points: &[f64],
        dim: usize,
        params: HnswParams,
        links: Vec<Vec<Vec<u32>>>,
        entry: u32,
        stored_checksum: u64,
    ) -> Result<Self, KnnError> {
        let n = validate_points(points, dim)?;
        let actual = means_checksum(points, n, dim);
        if actual != stored_checksum {
            return Err(KnnError::ChecksumMismatch {
                stored: stored_checksum,
                actual,
            });
        }
        if links.len() != n {
            return Err(KnnError::Corrupt("node count differs from point count"));
        }
        if entry as usize >= n {
            return Err(KnnError::Corrupt("entry point out of range"));
        }
        let top = links[entry as usize].len();
        for node in &links {
            if node.is_empty() {
                return Err(KnnError::Corrupt("node without layer 0"));
            }
            if node.len() > top {
                return Err(KnnError::Corrupt("node above the entry point's layer"));
            }
            for (layer, nbrs) in node.iter().enumerate() {
                if nbrs.len() > params.max_links(layer) {
                    return Err(KnnError::Corrupt("too many links"));
                }
                for &nb in nbrs {
                    if nb as usize >= n || links[nb as usize].len() <= layer {
                        return Err(KnnError::Corrupt("link to a node absent from the layer"));
                    }
                }
            }
        }
        Ok(Self {
            params,
            dim,
            points: points.to_vec(),
            links,
            entry,
            checksum: actual,
        })
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    pub fn entry_point(&self) -> usize {
        self.entry as usize
    }

    /// Number of layers the graph spans (top layer index + 1).
    pub fn num_layers(&self) -> usize {
        self.links[self.entry as usize].len()
    }

    /// Number of layers node `id` belongs to.
    pub fn node_layers(&self, id: usize) -> usize {
        self.links[id].len()
    }

    pub fn neighbors(&self, id: usize, layer: usize) -> &[u32] {
        self.links[id].get(layer).map_or(&[], Vec::as_slice)
    }

    /// Raw adjacency, `links()[node][layer]`.
    pub fn links(&self) -> &[Vec<Vec<u32>>] {
        &self.links
    }

    #[inline]
    fn point(&self, id: u32) -> &[f64] {
        let i = id as usize * self.dim;
        &self.points[i..i + self.dim]
    }

    #[inline]
    fn key(&self, q: &[f64], id: u32) -> Key {
        Key {
            dist2: squared_distance(q, self.point(id)),
            id,
        }
    }

    fn insert(&mut self, node: u32, level: usize, scratch: &mut SearchScratch) {
        self.links.push(vec![Vec::new(); level + 1]);
        if node == 0 {
            self.entry = 0;
            return;
        }
        let q = self.point(node).to_vec();
        let top = self.num_layers() - 1;
        let mut ep = vec![self.key(&q, self.entry)];
        for layer in (level + 1..=top).rev() {
            ep = self.search_layer(&q, &ep, 1, layer, scratch);
        }
        for layer in (0..=level.min(top)).rev() {
            let found = self.search_layer(&q, &ep, self.params.ef_construction, layer, scratch);
            let chosen: Vec<u32> = found.iter().take(self.params.m).map(|k| k.id).collect();
            for &nb in &chosen {
                self.links[nb as usize][layer].push(node);
                if self.links[nb as usize][layer].len() > self.params.max_links(layer) {
                    self.shrink(nb, layer);
                }
            }
            self.links[node as usize][layer] = chosen;
            ep = found;
        }
        if level > top {
            self.entry = node;
        }
    }

    /// Keeps the nearest `max_links(layer)` neighbours of `node`.
    fn shrink(&mut self, node: u32, layer: usize) {
        let base = self.point(node);
        let mut keyed: Vec<Key> = self.links[node as usize][layer]
            .iter()
            .map(|&nb| self.key(base, nb))
            .collect();
        keyed.sort_unstable();
        keyed.truncate(self.params.max_links(layer));
        self.links[node as usize][layer] = keyed.into_iter().map(|k| k.id).collect();
    }

    /// Beam search on one layer; returns up to `ef` keys in ascending order.
    fn search_layer(
        &self,
        q: &[f64],
        entries: &[Key],
        ef: usize,
        layer: usize,
        scratch: &mut SearchScratch,
    ) -> Vec<Key> {
        scratch.reset(self.len());
        let mut candidates: BinaryHeap<Reverse<Key>> = BinaryHeap::with_capacity(ef * 2);
        let mut results: BinaryHeap<Key> = BinaryHeap::with_capacity(ef + 1);
        for &e in entries {
            if scratch.visit(e.id) {
                candidates.push(Reverse(e));
                results.push(e);
                if results.len() > ef {
                    results.pop();
                }
            }
        }
        while let Some(Reverse(c)) = candidates.pop() {
            let worst = *results.peek().expect("results never empty here");
            if c > worst && results.len() >= ef {
                break;
            }
            for &nb in self.neighbors(c.id as usize, layer) {
                if !scratch.visit(nb) {
                    continue;
                }
                let k = self.key(q, nb);
                if results.len() < ef || k < *results.peek().expect("nonempty") {
                    candidates.push(Reverse(k));
                    results.push(k);
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        results.into_sorted_vec()
    }

    /// Approximate `k` nearest neighbours of `q` with beam width `ef_search`.
    pub fn query(&self, q: &[f64], k: usize, ef_search: usize) -> Result<Vec<Neighbor>, KnnError> {
        let mut scratch = SearchScratch::new(self.len());
        self.query_with(&mut scratch, q, k, ef_search)
    }

    /// [`query`](KnnIndex::query) with caller-provided scratch space.
    ///
    /// If the layer-0 beam reaches fewer than `k` nodes (possible when
    /// trimming disconnects part of the graph), the remainder is filled by a
    /// scan over unvisited nodes so the result always has length `k`.
    pub fn query_with(
        &self,
        scratch: &mut SearchScratch,
        q: &[f64],
        k: usize,
        ef_search: usize,
    ) -> Result<Vec<Neighbor>, KnnError> {
        if q.len() != self.dim {
            return Err(KnnError::DimensionMismatch {
                expected: self.dim,
                got: q.len(),
            });
        }
        if k == 0 || k > self.len() {
            return Err(KnnError::KOutOfRange { k, n: self.len() });
        }
        if ef_search < k {
            return Err(KnnError::BeamTooNarrow { ef: ef_search, k });
        }
        let mut ep = vec![self.key(q, self.entry)];
        for layer in (1..self.num_layers()).rev() {
            ep = self.search_layer(q, &ep, 1, layer, scratch);
        }
        let mut found = self.search_layer(q, &ep, ef_search, 0, scratch);
        if found.len() < k {
            for id in 0..self.len() {
                if !scratch.seen(id) {
                    found.push(self.key(q, id as u32));
                }
            }
            found.sort_unstable();
        }
        found.truncate(k);
        Ok(found
            .into_iter()
            .map(|key| Neighbor {
                id: key.id as usize,
                distance: sqrt(key.dist2),
            })
            .collect())
    }
}

/// Exact `k` nearest rows of `points` (flat `N × dim`) by full scan, sorted
/// ascending by distance with ties broken by ascending id.
pub fn brute_force_knn(points: &[f64], dim: usize, q: &[f64], k: usize) -> Result<Vec<Neighbor>, KnnError> {
    let n = validate_points(points, dim)?;
    if q.len() != dim {
        return Err(KnnError::DimensionMismatch {
            expected: dim,
            got: q.len(),
        });
    }
    if k == 0 || k > n {
        return Err(KnnError::KOutOfRange { k, n });
    }
    let mut keys: Vec<Key> = points
        .chunks_exact(dim)
        .enumerate()
        .map(|(i, p)| Key {
            dist2: squared_distance(q, p),
            id: i as u32,
        })
        .collect();
    if k < n {
        keys.select_nth_unstable(k - 1);
        keys.truncate(k);
    }
    keys.sort_unstable();
    Ok(keys
        .into_iter()
        .map(|key| Neighbor {
            id: key.id as usize,
            distance: sqrt(key.dist2),
        })
        .collect())
}

/// Mean over queries of `|approx ∩ exact| / k`.
pub fn recall_at_k<Q: AsRef<[f64]>>(
    index: &KnnIndex,
    points: &[f64],
    queries: &[Q],
    k: usize,
    ef_search: usize,
) -> Result<f64, KnnError> {
    if queries.is_empty() {
        return Err(KnnError::NoQueries);
    }
    let mut scratch = SearchScratch::new(index.len());
    let mut total = 0.0;
    for q in queries {
        let q = q.as_ref();
        let approx = index.query_with(&mut scratch, q, k, ef_search)?;
        let exact = brute_force_knn(points, index.dim(), q, k)?;
        let mut exact_ids: Vec<usize> = exact.iter().map(|n| n.id).collect();
        exact_ids.sort_unstable();
        let hits = approx
            .iter()
            .filter(|n| exact_ids.binary_search(&n.id).is_ok())
            .count();
        total += hits as f64 / k as f64;
    }
    Ok(total / queries.len() as f64)
}
