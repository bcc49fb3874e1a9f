//! Maximum-inner-product search over the frozen entity matrix.
//!
//! Two modes share one interface: an exact scan, and a hierarchical
//! navigable small-world graph that uses the raw inner product as its
//! similarity both while building and while searching. Results are always
//! re-scored exactly and ordered by score descending, ties by lower index.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::io::Write;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binary;
use crate::catalog::EntityCatalog;
use crate::error::{ElqError, Result};
use crate::matrix::{dot_f32, dot_mixed};

const INDEX_MAGIC: &[u8; 4] = b"ELQI";
const INDEX_VERSION: u32 = 1;
const MAX_LEVEL: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexMode {
    Exact,
    Hnsw,
}

impl std::str::FromStr for IndexMode {
    type Err = ElqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(IndexMode::Exact),
            "hnsw" => Ok(IndexMode::Hnsw),
            other => Err(ElqError::InvalidInput(format!(
                "unknown index mode {other:?} (expected exact or hnsw)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswParams {
    /// Max neighbors per node on upper layers; layer 0 allows twice this.
    pub max_neighbors: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams {
            max_neighbors: 32,
            ef_construction: 200,
            ef_search: 256,
        }
    }
}

impl HnswParams {
    fn validate(&self) -> Result<()> {
        if self.max_neighbors < 2 || self.ef_construction == 0 || self.ef_search == 0 {
            return Err(ElqError::InvalidInput(format!(
                "hnsw params must satisfy M >= 2, ef >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    fn layer_capacity(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.max_neighbors
        } else {
            self.max_neighbors
        }
    }
}

/// Candidate ordered so that `a > b` means `a` ranks ahead of `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    sim: f64,
    id: u32,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Graph {
    /// `links[node][layer]`, layers `0..=level(node)`.
    links: Vec<Vec<Vec<u32>>>,
    entry: u32,
    max_level: usize,
}

#[derive(Debug, Clone)]
pub struct MipsIndex {
    mode: IndexMode,
    params: HnswParams,
    seed: u64,
    dim: usize,
    vectors: Vec<f32>,
    fingerprint: [u8; 32],
    graph: Option<Graph>,
}

impl MipsIndex {
    /// Builds an index over the catalog rows. Deterministic given
    /// `(catalog, params, seed)`.
    pub fn build(
        catalog: &EntityCatalog,
        mode: IndexMode,
        params: HnswParams,
        seed: u64,
    ) -> Result<Self> {
        if catalog.is_empty() {
            return Err(ElqError::Empty("cannot index an empty catalog".into()));
        }
        params.validate()?;
        let mut index = MipsIndex {
            mode,
            params,
            seed,
            dim: catalog.dim(),
            vectors: catalog.embeddings().to_vec(),
            fingerprint: catalog.fingerprint(),
            graph: None,
        };
        if mode == IndexMode::Hnsw {
            index.graph = Some(index.build_graph()?);
        }
        Ok(index)
    }

    pub fn mode(&self) -> IndexMode {
        self.mode
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.vectors.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn set_ef_search(&mut self, ef: usize) {
        self.params.ef_search = ef.max(1);
    }

    #[inline]
    fn vector(&self, id: u32) -> &[f32] {
        let i = id as usize;
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Top-`min(k, m)` entities by inner product with `query`.
    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
        if k == 0 {
            return Err(ElqError::InvalidInput("k must be >= 1".into()));
        }
        if query.len() != self.dim {
            return Err(ElqError::DimensionMismatch(format!(
                "query has dim {}, index has dim {}",
                query.len(),
                self.dim
            )));
        }
        let found = match &self.graph {
            None => self.exact_top_k(query, k),
            Some(g) => self.graph_top_k(g, query, k),
        };
        Ok(found.into_iter().map(|s| (s.id as usize, s.sim)).collect())
    }

    fn exact_top_k(&self, query: &[f64], k: usize) -> Vec<Scored> {
        let mut heap: BinaryHeap<Reverse<Scored>> = BinaryHeap::with_capacity(k + 1);
        for (i, row) in self.vectors.chunks_exact(self.dim).enumerate() {
            let cand = Scored {
                sim: dot_mixed(query, row),
                id: i as u32,
            };
            if heap.len() < k {
                heap.push(Reverse(cand));
            } else if let Some(Reverse(worst)) = heap.peek() {
                if cand > *worst {
                    heap.pop();
                    heap.push(Reverse(cand));
                }
            }
        }
        sorted_desc(heap.into_iter().map(|r| r.0).collect())
    }

    fn graph_top_k(&self, g: &Graph, query: &[f64], k: usize) -> Vec<Scored> {
        let sim = |id: u32| dot_mixed(query, self.vector(id));
        let mut ep = Scored {
            sim: sim(g.entry),
            id: g.entry,
        };
        for layer in (1..=g.max_level).rev() {
            ep = greedy_closest(g, layer, ep, &sim);
        }
        let ef = self.params.ef_search.max(k);
        let mut found = search_layer(g, 0, &[ep], ef, self.len(), &sim);
        found.truncate(k);
        found
    }

    /// Neighbor ids of `node` at `layer` (empty for exact indexes or
    /// layers above the node's level).
    pub fn neighbors(&self, node: usize, layer: usize) -> &[u32] {
        self.graph
            .as_ref()
            .and_then(|g| g.links.get(node))
            .and_then(|l| l.get(layer))
            .map_or(&[], Vec::as_slice)
    }

    pub fn node_level(&self, node: usize) -> Option<usize> {
        self.graph
            .as_ref()
            .and_then(|g| g.links.get(node))
            .map(|l| l.len() - 1)
    }

    /// Whether every node is reachable from the entry point over layer-0
    /// edges. Exact indexes are trivially connected.
    pub fn is_layer0_connected(&self) -> bool {
        match &self.graph {
            None => true,
            Some(g) => reachable_from_entry(g).iter().all(|&r| r),
        }
    }

    fn level_for(rng: &mut ChaCha8Rng, mult: f64) -> usize {
        // u in (0, 1]
        let u: f64 = 1.0 - rng.random::<f64>();
        ((-u.ln() * mult).floor() as usize).min(MAX_LEVEL)
    }

    fn build_graph(&self) -> Result<Graph> {
        let m = self.len();
        let max_n = self.params.max_neighbors;
        let mult = 1.0 / (max_n as f64).ln();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let levels: Vec<usize> = (0..m).map(|_| Self::level_for(&mut rng, mult)).collect();

        let mut g = Graph {
            links: Vec::with_capacity(m),
            entry: 0,
            max_level: levels[0],
        };
        g.links.push(vec![Vec::new(); levels[0] + 1]);

        for (node, &level) in levels.iter().enumerate().skip(1) {
            let id = node as u32;
            g.links.push(vec![Vec::new(); level + 1]);
            let q = self.vector(id);
            let sim = |other: u32| dot_f32(q, self.vector(other));

            let mut ep = Scored {
                sim: sim(g.entry),
                id: g.entry,
            };
            for layer in (level + 1..=g.max_level).rev() {
                ep = greedy_closest(&g, layer, ep, &sim);
            }
            let mut eps = vec![ep];
            for layer in (0..=level.min(g.max_level)).rev() {
                let found =
                    search_layer(&g, layer, &eps, self.params.ef_construction, node + 1, &sim);
                let chosen = self.select_neighbors(&found, max_n, true);
                g.links[node][layer] = chosen.iter().map(|s| s.id).collect();
                for s in &chosen {
                    self.add_reverse_link(&mut g, s.id, id, layer);
                }
                eps = found;
            }
            if level > g.max_level {
                g.max_level = level;
                g.entry = id;
            }
        }
        self.repair_connectivity(&mut g)?;
        Ok(g)
    }

    /// Diversity heuristic: keep a candidate only if it is more similar to
    /// the base point than to every already kept neighbor. With `fill`,
    /// pruned candidates top the list back up to `limit`.
    fn select_neighbors(&self, candidates: &[Scored], limit: usize, fill: bool) -> Vec<Scored> {
        let mut kept: Vec<Scored> = Vec::with_capacity(limit);
        let mut pruned = Vec::new();
        for &c in candidates {
            if kept.len() >= limit {
                break;
            }
            let cv = self.vector(c.id);
            let diverse = kept
                .iter()
                .all(|k| c.sim > dot_f32(cv, self.vector(k.id)));
            if diverse {
                kept.push(c);
            } else {
                pruned.push(c);
            }
        }
        if fill {
            for c in pruned {
                if kept.len() >= limit {
                    break;
                }
                kept.push(c);
            }
        }
        kept
    }

    fn add_reverse_link(&self, g: &mut Graph, from: u32, to: u32, layer: usize) {
        let cap = self.params.layer_capacity(layer);
        let list = &mut g.links[from as usize][layer];
        if list.contains(&to) {
            return;
        }
        if list.len() < cap {
            list.push(to);
            return;
        }
        let base = self.vector(from);
        let mut cands: Vec<Scored> = list
            .iter()
            .chain(std::iter::once(&to))
            .map(|&id| Scored {
                sim: dot_f32(base, self.vector(id)),
                id,
            })
            .collect();
        cands.sort_by(|a, b| b.cmp(a));
        let kept = self.select_neighbors(&cands, cap, false);
        g.links[from as usize][layer] = kept.into_iter().map(|s| s.id).collect();
    }

    /// Links every node unreachable from the entry point over layer 0 into
    /// the reachable component, using the most similar reachable node that
    /// still has spare capacity as the new edge's source.
    fn repair_connectivity(&self, g: &mut Graph) -> Result<()> {
        let cap = self.params.layer_capacity(0);
        let mut reached = reachable_from_entry(g);
        for node in 0..reached.len() {
            if reached[node] {
                continue;
            }
            let target = self.vector(node as u32);
            let source = (0..reached.len())
                .filter(|&v| reached[v] && g.links[v][0].len() < cap)
                .map(|v| Scored {
                    sim: dot_f32(target, self.vector(v as u32)),
                    id: v as u32,
                })
                .max()
                .ok_or_else(|| {
                    ElqError::InvalidInput(
                        "hnsw graph cannot be connected within the neighbor limit".into(),
                    )
                })?;
            g.links[source.id as usize][0].push(node as u32);
            mark_reachable(g, node as u32, &mut reached);
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = binary::create(path)?;
        self.write_to(&mut w)
            .map_err(|e| ElqError::io(path, e))?;
        w.flush().map_err(|e| ElqError::io(path, e))
    }

    fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        binary::write_magic(w, INDEX_MAGIC)?;
        w.write_u32::<LittleEndian>(INDEX_VERSION)?;
        w.write_u8(match self.mode {
            IndexMode::Exact => 0,
            IndexMode::Hnsw => 1,
        })?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        w.write_u32::<LittleEndian>(self.len() as u32)?;
        w.write_u32::<LittleEndian>(self.params.max_neighbors as u32)?;
        w.write_u32::<LittleEndian>(self.params.ef_construction as u32)?;
        w.write_u32::<LittleEndian>(self.params.ef_search as u32)?;
        w.write_u64::<LittleEndian>(self.seed)?;
        w.write_all(&self.fingerprint)?;
        if let Some(g) = &self.graph {
            w.write_u32::<LittleEndian>(g.entry)?;
            w.write_u32::<LittleEndian>(g.max_level as u32)?;
            for node in &g.links {
                w.write_u8((node.len() - 1) as u8)?;
            }
            for node in &g.links {
                for layer in node {
                    w.write_u32::<LittleEndian>(layer.len() as u32)?;
                    for &n in layer {
                        w.write_u32::<LittleEndian>(n)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Loads an index file; the catalog must be the one it was built from.
    pub fn load(path: &Path, catalog: &EntityCatalog) -> Result<Self> {
        const WHAT: &str = "index file";
        let t = binary::truncated(WHAT);
        let mut r = binary::open(path)?;
        binary::read_magic(&mut r, INDEX_MAGIC, WHAT)?;
        let version = r.read_u32::<LittleEndian>().map_err(&t)?;
        if version != INDEX_VERSION {
            return Err(ElqError::Version {
                kind: "index",
                found: version,
                expected: INDEX_VERSION,
            });
        }
        let mode = match r.read_u8().map_err(&t)? {
            0 => IndexMode::Exact,
            1 => IndexMode::Hnsw,
            b => return Err(ElqError::Format(format!("{WHAT}: unknown mode byte {b}"))),
        };
        let dim = r.read_u32::<LittleEndian>().map_err(&t)? as usize;
        let m = r.read_u32::<LittleEndian>().map_err(&t)? as usize;
        let params = HnswParams {
            max_neighbors: r.read_u32::<LittleEndian>().map_err(&t)? as usize,
            ef_construction: r.read_u32::<LittleEndian>().map_err(&t)? as usize,
            ef_search: r.read_u32::<LittleEndian>().map_err(&t)? as usize,
        };
        let seed = r.read_u64::<LittleEndian>().map_err(&t)?;
        let mut fingerprint = [0u8; 32];
        std::io::Read::read_exact(&mut r, &mut fingerprint).map_err(&t)?;
        if dim != catalog.dim() || m != catalog.len() || fingerprint != catalog.fingerprint() {
            return Err(ElqError::InvalidInput(format!(
                "{} was built over a different catalog ({m}x{dim}, catalog is {}x{})",
                path.display(),
                catalog.len(),
                catalog.dim()
            )));
        }
        let graph = match mode {
            IndexMode::Exact => None,
            IndexMode::Hnsw => {
                let entry = r.read_u32::<LittleEndian>().map_err(&t)?;
                let max_level = r.read_u32::<LittleEndian>().map_err(&t)? as usize;
                let mut levels = vec![0u8; m];
                std::io::Read::read_exact(&mut r, &mut levels).map_err(&t)?;
                let mut links = Vec::with_capacity(m);
                for &level in &levels {
                    let mut node = Vec::with_capacity(level as usize + 1);
                    for _ in 0..=level {
                        let len = r.read_u32::<LittleEndian>().map_err(&t)? as usize;
                        let mut layer = vec![0u32; len];
                        r.read_u32_into::<LittleEndian>(&mut layer).map_err(&t)?;
                        if layer.iter().any(|&n| n as usize >= m) {
                            return Err(ElqError::Format(format!("{WHAT}: neighbor id out of range")));
                        }
                        node.push(layer);
                    }
                    links.push(node);
                }
                if entry as usize >= m {
                    return Err(ElqError::Format(format!("{WHAT}: entry point out of range")));
                }
                Some(Graph {
                    links,
                    entry,
                    max_level,
                })
            }
        };
        Ok(MipsIndex {
            mode,
            params,
            seed,
            dim,
            vectors: catalog.embeddings().to_vec(),
            fingerprint,
            graph,
        })
    }

    /// Graph equality, for determinism checks.
    pub fn same_structure(&self, other: &MipsIndex) -> bool {
        self.mode == other.mode && self.graph == other.graph
    }
}

fn sorted_desc(mut v: Vec<Scored>) -> Vec<Scored> {
    v.sort_by(|a, b| b.cmp(a));
    v
}

fn greedy_closest(g: &Graph, layer: usize, mut best: Scored, sim: &impl Fn(u32) -> f64) -> Scored {
    loop {
        let mut improved = false;
        for &n in &g.links[best.id as usize][layer] {
            let cand = Scored { sim: sim(n), id: n };
            if cand > best {
                best = cand;
                improved = true;
            }
        }
        if !improved {
            return best;
        }
    }
}

/// Beam search on one layer; returns up to `ef` nodes best-first.
/// `bound` is the number of nodes currently in the graph.
fn search_layer(
    g: &Graph,
    layer: usize,
    entry_points: &[Scored],
    ef: usize,
    bound: usize,
    sim: &impl Fn(u32) -> f64,
) -> Vec<Scored> {
    let mut visited = vec![false; bound];
    let mut frontier: BinaryHeap<Scored> = BinaryHeap::new();
    let mut results: BinaryHeap<Reverse<Scored>> = BinaryHeap::with_capacity(ef + 1);
    for &ep in entry_points {
        if !std::mem::replace(&mut visited[ep.id as usize], true) {
            frontier.push(ep);
            results.push(Reverse(ep));
            if results.len() > ef {
                results.pop();
            }
        }
    }
    while let Some(cur) = frontier.pop() {
        if let Some(Reverse(worst)) = results.peek() {
            if results.len() >= ef && cur < *worst {
                break;
            }
        }
        for &n in &g.links[cur.id as usize][layer] {
            let slot = &mut visited[n as usize];
            if *slot {
                continue;
            }
            *slot = true;
            let cand = Scored { sim: sim(n), id: n };
            let admit = results.len() < ef || results.peek().is_some_and(|w| cand > w.0);
            if admit {
                frontier.push(cand);
                results.push(Reverse(cand));
                if results.len() > ef {
                    results.pop();
                }
            }
        }
    }
    sorted_desc(results.into_iter().map(|r| r.0).collect())
}

fn reachable_from_entry(g: &Graph) -> Vec<bool> {
    let mut reached = vec![false; g.links.len()];
    mark_reachable(g, g.entry, &mut reached);
    reached
}

fn mark_reachable(g: &Graph, from: u32, reached: &mut [bool]) {
    if reached[from as usize] {
        return;
    }
    reached[from as usize] = true;
    let mut stack = vec![from];
    while let Some(n) = stack.pop() {
        for &next in &g.links[n as usize][0] {
            if !reached[next as usize] {
                reached[next as usize] = true;
                stack.push(next);
            }
        }
    }
}

/// Mean of `|approx ∩ exact| / k` over queries.
pub fn recall_at_k(
    index: &MipsIndex,
    oracle: &[Vec<usize>],
    queries: &[Vec<f64>],
    k: usize,
) -> Result<f64> {
    if oracle.len() != queries.len() {
        return Err(ElqError::InvalidInput(format!(
            "{} oracle lists for {} queries",
            oracle.len(),
            queries.len()
        )));
    }
    if queries.is_empty() {
        return Ok(1.0);
    }
    let mut total = 0.0;
    for (q, truth) in queries.iter().zip(oracle) {
        let got = index.search(q, k)?;
        let hits = got.iter().filter(|(id, _)| truth.contains(id)).count();
        total += hits as f64 / k.min(index.len()) as f64;
    }
    Ok(total / queries.len() as f64)
}
