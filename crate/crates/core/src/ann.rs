//! `(c, r)`-approximate near neighbor search over average-distortion sketches.
//!
//! Each node of a recursion tree holds a point set `X`, its coordinate-wise
//! median `m`, a witness `w ∈ X` with `‖w − m‖_p ≤ (c+1)r/2` when one exists,
//! and a boosted sketch at scale `r` with failure probability `ε`. A query
//! `q` either stops at the median,
//!
//! ```text
//! ‖q − m‖_p ≤ (c−1)r/2  ⟹  ‖q − w‖_p ≤ cr,
//! ```
//!
//! or descends into the child for `σ = sk(q − m)`, which holds
//! `X_σ = {x ∈ X : Alg(sk(x − m), σ) = CLOSE}`. A point within `r` of `q`
//! survives each step with probability `1 − ε`, while contraction removes a
//! quarter of `X` in expectation, so depth `⌈log_{4/3} n⌉` reaches leaves of
//! constant expected size. `R = ⌈a·n^ε⌉` independent trees boost success.
//!
//! Children are a pure function of `(X_σ, seed, σ)`: the child seed is derived
//! from the parent seed and the bytes of `σ`. Trees therefore need not be
//! materialized ahead of time; a query computes the child it needs, and a
//! stored child (see [`AnnIndex::materialize`]) is identical to the one it
//! would compute.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boosted::{vote, BoostedSketch, BoostedSketcher, Boosting};
use crate::error::{param, Error, Result};
use crate::metric::{check_dims, distance_of, median_of_ids, Dataset, IntVector};
use crate::randomness::SharedSeed;
use crate::sketch::single::Reader;
use crate::sketch::{Overrides, SketchParams};

fn snap_ceil(v: f64) -> f64 {
    let n = v.round();
    if (v - n).abs() <= 1e-9 * n.abs().max(1.0) {
        n
    } else {
        v.ceil()
    }
}

/// `max(1, ⌈log_{4/3} n⌉)`.
pub fn default_depth(n: usize) -> u32 {
    snap_ceil((n.max(1) as f64).ln() / (4.0f64 / 3.0).ln()).max(1.0) as u32
}

/// `⌈a·n^ε⌉`, at least one.
pub fn default_trees(n: usize, eps: f64, a: f64) -> u32 {
    snap_ceil(a * (n.max(1) as f64).powf(eps)).max(1.0) as u32
}

/// Index configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnConfig {
    pub r: f64,
    pub c: f64,
    pub p: f64,
    /// Per-node failure probability `δ0 = ε` and tree-count exponent.
    pub eps: f64,
    /// Constant `a` in `R = ⌈a·n^ε⌉`.
    #[serde(default = "default_tree_constant")]
    pub tree_constant: f64,
    #[serde(default)]
    pub depth: Option<u32>,
    #[serde(default)]
    pub trees: Option<u32>,
    #[serde(default)]
    pub overrides: Overrides,
    /// Replaces the derived boosting repetition count.
    #[serde(default)]
    pub reps: Option<u32>,
}

fn default_tree_constant() -> f64 {
    3.0
}

impl AnnConfig {
    pub fn new(r: f64, c: f64, p: f64, eps: f64) -> Self {
        AnnConfig {
            r,
            c,
            p,
            eps,
            tree_constant: default_tree_constant(),
            depth: None,
            trees: None,
            overrides: Overrides::default(),
            reps: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r.is_finite()) {
            return param(format!("r must be positive, got {}", self.r));
        }
        if !(self.c > 1.0 && self.c.is_finite()) {
            return param(format!("c must exceed 1, got {}", self.c));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return param(format!("ε must lie in (0, 1), got {}", self.eps));
        }
        if !(self.tree_constant > 0.0) {
            return param("tree constant must be positive");
        }
        if self.trees == Some(0) {
            return param("tree count must be positive");
        }
        Ok(())
    }

    pub fn params(&self) -> Result<SketchParams> {
        SketchParams::canonical(self.c, self.p, self.overrides)?.with_scale(self.r)
    }

    pub fn boosting(&self) -> Boosting {
        Boosting {
            delta0: self.eps,
            reps_override: self.reps,
        }
    }

    pub fn depth_for(&self, n: usize) -> u32 {
        self.depth.unwrap_or_else(|| default_depth(n))
    }

    pub fn trees_for(&self, n: usize) -> u32 {
        self.trees
            .unwrap_or_else(|| default_trees(n, self.eps, self.tree_constant))
    }
}

/// One node of a recursion tree. A node with `depth == 0` is a leaf.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnNode {
    depth: u32,
    members: Vec<u32>,
    median: IntVector,
    close: Option<u32>,
    seed: SharedSeed,
    children: BTreeMap<Vec<u8>, AnnNode>,
}

impl AnnNode {
    fn new(data: &Dataset, members: Vec<u32>, depth: u32, seed: SharedSeed, cfg: &AnnConfig) -> Self {
        let ids: Vec<usize> = members.iter().map(|&i| i as usize).collect();
        let median = median_of_ids(data, &ids);
        let radius = (cfg.c + 1.0) * cfg.r / 2.0;
        let close = members
            .iter()
            .copied()
            .find(|&i| distance_of(data.point(i as usize).coords(), median.coords(), cfg.p) <= radius);
        AnnNode {
            depth,
            members,
            median,
            close,
            seed,
            children: BTreeMap::new(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.depth == 0
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn members(&self) -> &[u32] {
        &self.members
    }

    pub fn median(&self) -> &IntVector {
        &self.median
    }

    pub fn close(&self) -> Option<u32> {
        self.close
    }

    pub fn children(&self) -> &BTreeMap<Vec<u8>, AnnNode> {
        &self.children
    }

    /// Number of stored nodes in this subtree.
    pub fn node_count(&self) -> usize {
        1 + self.children.values().map(AnnNode::node_count).sum::<usize>()
    }

    fn sketcher(&self, data: &Dataset, cfg: &AnnConfig, params: &SketchParams) -> Result<BoostedSketcher> {
        BoostedSketcher::new(params.clone(), cfg.boosting(), &self.seed, data.dim())
    }

    fn child_seed(&self, key: &[u8]) -> SharedSeed {
        self.seed.derive_bytes("CHILD", key)
    }

    /// `X_σ` for a given sketch value.
    fn bucket(&self, member_sketches: &[BoostedSketch], sigma: &BoostedSketch, stored: u32) -> Vec<u32> {
        self.members
            .iter()
            .zip(member_sketches)
            .filter(|(_, s)| !vote(s.votes_unchecked(sigma, stored), s.reps()).is_far())
            .map(|(&i, _)| i)
            .collect()
    }

    fn member_sketches(&self, data: &Dataset, sketcher: &BoostedSketcher) -> Result<Vec<BoostedSketch>> {
        self.members
            .iter()
            .map(|&i| sketcher.sketch(data.point(i as usize), &self.median))
            .collect()
    }

    fn materialize(
        &mut self,
        data: &Dataset,
        cfg: &AnnConfig,
        params: &SketchParams,
        budget: &mut usize,
    ) -> Result<()> {
        if self.is_leaf() {
            return Ok(());
        }
        let sketcher = self.sketcher(data, cfg, params)?;
        let sketches = self.member_sketches(data, &sketcher)?;
        for s in &sketches {
            let key = s.to_bytes();
            if self.children.contains_key(&key) {
                continue;
            }
            let bucket = self.bucket(&sketches, s, params.stored);
            if *budget == 0 {
                return Err(Error::Parameter(
                    "materialization exceeded the node budget".into(),
                ));
            }
            *budget -= 1;
            let mut child = AnnNode::new(data, bucket, self.depth - 1, self.child_seed(&key), cfg);
            child.materialize(data, cfg, params, budget)?;
            self.children.insert(key, child);
        }
        Ok(())
    }
}

/// Per-node measurements gathered during a query.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct QueryTrace {
    pub answer: Option<u32>,
    /// Trees tried, including the successful one.
    pub trees_tried: u32,
    /// `(|X|, |X_σ|)` at every descent with `‖q − m‖_p ≥ (c−1)r/2`.
    pub shrink: Vec<(usize, usize)>,
}

/// `R` independent recursion trees over one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnIndex {
    config: AnnConfig,
    params: SketchParams,
    data: Dataset,
    seed: SharedSeed,
    roots: Vec<AnnNode>,
}

impl AnnIndex {
    /// Tree `t` uses the root seed `seed.derive("TREE", t)`.
    pub fn build(data: Dataset, config: AnnConfig, seed: &SharedSeed) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let params = config.params()?;
        config.boosting().reps()?;
        let n = data.len();
        let depth = config.depth_for(n);
        let members: Vec<u32> = (0..n as u32).collect();
        let roots = (0..config.trees_for(n))
            .into_par_iter()
            .map(|t| {
                AnnNode::new(
                    &data,
                    members.clone(),
                    depth,
                    seed.derive("TREE", t as u64),
                    &config,
                )
            })
            .collect();
        Ok(AnnIndex {
            config,
            params,
            data,
            seed: seed.clone(),
            roots,
        })
    }

    /// Eagerly stores every child realized by a member's own sketch, down
    /// to the leaves, failing once more than `max_nodes` nodes are created.
    /// Only sensible for small datasets; queries do not need it.
    pub fn materialize(&mut self, max_nodes: usize) -> Result<()> {
        let mut budget = max_nodes;
        for root in &mut self.roots {
            root.materialize(&self.data, &self.config, &self.params, &mut budget)?;
        }
        Ok(())
    }

    pub fn config(&self) -> &AnnConfig {
        &self.config
    }

    pub fn params(&self) -> &SketchParams {
        &self.params
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn seed(&self) -> &SharedSeed {
        &self.seed
    }

    pub fn roots(&self) -> &[AnnNode] {
        &self.roots
    }

    pub fn depth(&self) -> u32 {
        self.roots[0].depth
    }

    /// Queries trees in order and returns the first non-FAIL answer.
    pub fn query(&self, q: &IntVector) -> Result<Option<u32>> {
        Ok(self.query_traced(q)?.answer)
    }

    pub fn query_traced(&self, q: &IntVector) -> Result<QueryTrace> {
        check_dims(self.data.dim(), q.dim())?;
        let mut trace = QueryTrace::default();
        for root in &self.roots {
            trace.trees_tried += 1;
            if let Some(id) = self.core_query(q, root, &mut trace.shrink)? {
                trace.answer = Some(id);
                break;
            }
        }
        Ok(trace)
    }

    /// The walk on a single tree.
    pub fn core_query(
        &self,
        q: &IntVector,
        root: &AnnNode,
        shrink: &mut Vec<(usize, usize)>,
    ) -> Result<Option<u32>> {
        check_dims(self.data.dim(), q.dim())?;
        self.walk(q, root, shrink)
    }

    fn walk(&self, q: &IntVector, node: &AnnNode, shrink: &mut Vec<(usize, usize)>) -> Result<Option<u32>> {
        let (c, r, p) = (self.config.c, self.config.r, self.config.p);
        let within = |id: u32| distance_of(self.data.point(id as usize).coords(), q.coords(), p) <= c * r;
        if node.is_leaf() {
            return Ok(node.members.iter().copied().find(|&i| within(i)));
        }
        if distance_of(q.coords(), node.median.coords(), p) <= (c - 1.0) * r / 2.0 {
            // The triangle inequality guarantees the witness; the explicit
            // check only guards against rounding at the boundary.
            return Ok(node.close.filter(|&w| within(w)));
        }
        let sketcher = node.sketcher(&self.data, &self.config, &self.params)?;
        let sigma = sketcher.sketch(q, &node.median)?;
        let key = sigma.to_bytes();
        if let Some(child) = node.children.get(&key) {
            shrink.push((node.members.len(), child.members.len()));
            return self.walk(q, child, shrink);
        }
        let sketches = node.member_sketches(&self.data, &sketcher)?;
        let bucket = node.bucket(&sketches, &sigma, self.params.stored);
        shrink.push((node.members.len(), bucket.len()));
        if bucket.is_empty() {
            return Ok(None);
        }
        let child = AnnNode::new(
            &self.data,
            bucket,
            node.depth - 1,
            node.child_seed(&key),
            &self.config,
        );
        self.walk(q, &child, shrink)
    }

    /// Writes `manifest.json`, `data.csv` and one `tree-NNN.bin` per tree.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let manifest = Manifest {
            version: 1,
            config: self.config.clone(),
            seed: self.seed.clone(),
            n: self.data.len(),
            dim: self.data.dim(),
            range: self.data.range(),
            depth: self.depth(),
            trees: self.roots.len() as u32,
        };
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        self.data.save(dir.join("data.csv"))?;
        for (t, root) in self.roots.iter().enumerate() {
            let mut out = Vec::new();
            write_node(root, &mut out);
            fs::write(dir.join(format!("tree-{t:03}.bin")), out)?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.version != 1 {
            return Err(Error::Encoding(format!(
                "unsupported index version {}",
                manifest.version
            )));
        }
        let data = Dataset::load(dir.join("data.csv"))?;
        if data.len() != manifest.n || data.dim() != manifest.dim {
            return Err(Error::Encoding("dataset does not match manifest".into()));
        }
        let params = manifest.config.params()?;
        let mut roots = Vec::with_capacity(manifest.trees as usize);
        for t in 0..manifest.trees {
            let bytes = fs::read(dir.join(format!("tree-{t:03}.bin")))?;
            let mut rd = Reader::new(&bytes);
            let root = read_node(&mut rd, &data)?;
            if !rd.is_empty() {
                return Err(Error::Encoding(format!("trailing bytes in tree {t}")));
            }
            roots.push(root);
        }
        Ok(AnnIndex {
            config: manifest.config,
            params,
            data,
            seed: manifest.seed,
            roots,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    config: AnnConfig,
    seed: SharedSeed,
    n: usize,
    dim: usize,
    range: i64,
    depth: u32,
    trees: u32,
}

// Node record: u32 payload length, then depth, members, median, witness
// (-1 when absent), seed, child keys; children follow in key order.
fn write_node(node: &AnnNode, out: &mut Vec<u8>) {
    let mut payload = Vec::new();
    payload.extend_from_slice(&node.depth.to_le_bytes());
    payload.extend_from_slice(&(node.members.len() as u32).to_le_bytes());
    for m in &node.members {
        payload.extend_from_slice(&m.to_le_bytes());
    }
    for v in node.median.coords() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    payload.extend_from_slice(&node.close.map_or(-1i64, |w| w as i64).to_le_bytes());
    payload.extend_from_slice(node.seed.master());
    payload.extend_from_slice(&(node.children.len() as u32).to_le_bytes());
    for key in node.children.keys() {
        payload.extend_from_slice(&(key.len() as u32).to_le_bytes());
        payload.extend_from_slice(key);
    }
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    for child in node.children.values() {
        write_node(child, out);
    }
}

fn read_node(rd: &mut Reader<'_>, data: &Dataset) -> Result<AnnNode> {
    let len = rd.u32()? as usize;
    let mut p = Reader::new(rd.take(len)?);
    let depth = p.u32()?;
    let count = p.u32()? as usize;
    let members = (0..count)
        .map(|_| {
            let id = p.u32()?;
            if id as usize >= data.len() {
                return Err(Error::Encoding(format!("member {id} out of range")));
            }
            Ok(id)
        })
        .collect::<Result<Vec<_>>>()?;
    let median = IntVector::new((0..data.dim()).map(|_| p.i64()).collect::<Result<Vec<_>>>()?);
    let close = match p.i64()? {
        -1 => None,
        w if w >= 0 && (w as usize) < data.len() => Some(w as u32),
        w => return Err(Error::Encoding(format!("witness {w} out of range"))),
    };
    let mut master = [0u8; 32];
    master.copy_from_slice(p.take(32)?);
    let keys = (0..p.u32()?)
        .map(|_| {
            let n = p.u32()? as usize;
            Ok(p.take(n)?.to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    if !p.is_empty() {
        return Err(Error::Encoding("trailing bytes in node payload".into()));
    }
    if depth == 0 && !keys.is_empty() {
        return Err(Error::Encoding("leaf with children".into()));
    }
    let mut children = BTreeMap::new();
    for key in keys {
        let child = read_node(rd, data)?;
        if child.depth + 1 != depth {
            return Err(Error::Encoding("child depth mismatch".into()));
        }
        children.insert(key, child);
    }
    Ok(AnnNode {
        depth,
        members,
        median,
        close,
        seed: SharedSeed::new(master),
        children,
    })
}

/// Exact nearest neighbor by linear scan; ties go to the smallest id.
pub fn brute_force_near(data: &Dataset, q: &IntVector, p: f64) -> Result<(usize, f64)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_dims(data.dim(), q.dim())?;
    let mut best = (0, f64::INFINITY);
    for (id, x) in data.points().iter().enumerate() {
        let d = distance_of(x.coords(), q.coords(), p);
        if d < best.1 {
            best = (id, d);
        }
    }
    Ok(best)
}
