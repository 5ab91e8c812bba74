//! Depth-first branching random walk engine.
//!
//! One replica is one tree, traversed with an explicit stack so that memory
//! stays `O(depth * N_max)` no matter how many particles the tree holds. Every
//! internal node opens its own random stream keyed by its path from the root,
//! which makes a replica bit-reproducible, independent of scheduling, and lets
//! a pruned traversal see exactly the same upper tree as a full one.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{ComplexParam, ModelError, ReproductionLaw};
use crate::regimes::BoundaryParams;
use crate::rng;

/// Hard limit on `depth_n + extra_m`.
pub const MAX_DEPTH: usize = 26;
/// Default bound on the expected node count `E[N]^(n+m)`.
pub const DEFAULT_NODE_CAP: f64 = (1u64 << 27) as f64;
/// Largest allowed number of retained tips.
pub const MAX_TIPS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("depth {depth} exceeds the hard cap {cap}")]
    DepthCap { depth: usize, cap: usize },
    #[error("expected node count {expected:.3e} exceeds the cap {cap:.3e}")]
    NodeCap { expected: f64, cap: f64 },
    #[error("tip_k = {0} exceeds {MAX_TIPS}")]
    TooManyTips(usize),
    #[error("tip pruning and tip visiting need boundary parameters")]
    NeedsBoundary,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Settings shared by all replicas of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Observation generation `n`.
    pub depth_n: usize,
    /// Extra generations; `Z` is approximated by `Z_{n+m}`.
    pub extra_m: usize,
    /// Parameters at which `Z_d(lambda)` is accumulated.
    pub params: Vec<Complex64>,
    /// Number of lowest depth-`n` particles retained as tip records.
    pub tip_k: usize,
    pub master_seed: u64,
    /// Enables the boundary statistics `W_d`, `dW_d`, `min V_d`, `sup e^{-V}`.
    pub boundary: Option<BoundaryParams>,
    /// Depth-`n` particles whose centered position exceeds this value are not
    /// expanded; their descendant martingale is replaced by its mean `1`.
    pub prune_tips_above: Option<f64>,
    pub node_cap: f64,
    pub max_depth: usize,
    /// Depths at which `Z_d` is accumulated, as a bit mask (bit `d`). Other
    /// depths are reported as `NaN`. Defaults to every depth.
    pub z_depth_mask: u64,
}

impl SimConfig {
    pub fn new(depth_n: usize, extra_m: usize, params: Vec<Complex64>, master_seed: u64) -> Self {
        Self {
            depth_n,
            extra_m,
            params,
            tip_k: 0,
            master_seed,
            boundary: None,
            prune_tips_above: None,
            node_cap: DEFAULT_NODE_CAP,
            max_depth: MAX_DEPTH,
            z_depth_mask: u64::MAX,
        }
    }

    /// Accumulates `Z_d` only at the listed depths.
    pub fn with_z_depths(mut self, depths: &[usize]) -> Self {
        self.z_depth_mask = depths.iter().fold(0u64, |m, &d| m | (1u64 << d.min(63)));
        self
    }

    pub fn records_z(&self, depth: usize) -> bool {
        depth < 64 && self.z_depth_mask & (1u64 << depth) != 0
    }

    pub fn with_boundary(mut self, boundary: BoundaryParams) -> Self {
        self.boundary = Some(boundary);
        self
    }

    pub fn with_tips(mut self, tip_k: usize) -> Self {
        self.tip_k = tip_k;
        self
    }

    pub fn with_pruning(mut self, cutoff: f64) -> Self {
        self.prune_tips_above = Some(cutoff);
        self
    }

    pub fn total_depth(&self) -> usize {
        self.depth_n + self.extra_m
    }

    pub fn validate(&self, law: &ReproductionLaw) -> Result<(), SimError> {
        let depth = self.total_depth();
        if depth > self.max_depth.min(MAX_DEPTH) {
            return Err(SimError::DepthCap { depth, cap: self.max_depth.min(MAX_DEPTH) });
        }
        let expected = law.mean_offspring().powi(depth as i32);
        if expected > self.node_cap {
            return Err(SimError::NodeCap { expected, cap: self.node_cap });
        }
        if self.tip_k > MAX_TIPS {
            return Err(SimError::TooManyTips(self.tip_k));
        }
        if self.prune_tips_above.is_some() && self.boundary.is_none() {
            return Err(SimError::NeedsBoundary);
        }
        for &l in &self.params {
            ComplexParam::new(law, l)?;
        }
        Ok(())
    }
}

/// One depth-`n` particle seen from the tip of the walk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TipRecord {
    /// `V(u) - 1.5 log n` (no centering at `n <= 1`).
    pub v_centered: f64,
    /// Descendant martingale `[Z_m(lambda)]_u` at the first configured parameter;
    /// `0` when no parameter is configured.
    pub subtree_z: Complex64,
    /// Position of the particle in DFS order among depth-`n` particles.
    pub order: u64,
}

impl TipRecord {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.v_centered.total_cmp(&other.v_centered).then(self.order.cmp(&other.order))
    }
}

struct ByKey(TipRecord);

impl PartialEq for ByKey {
    fn eq(&self, other: &Self) -> bool {
        self.0.key_cmp(&other.0) == Ordering::Equal
    }
}
impl Eq for ByKey {}
impl PartialOrd for ByKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for ByKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.key_cmp(&other.0)
    }
}

/// Keeps the `k` smallest records by `(v_centered, order)`.
pub struct TipHeap {
    k: usize,
    heap: BinaryHeap<ByKey>,
}

impl TipHeap {
    pub fn new(k: usize) -> Self {
        Self { k, heap: BinaryHeap::with_capacity(k + 1) }
    }

    /// Whether a record with this key would be kept.
    pub fn admits(&self, v_centered: f64, order: u64) -> bool {
        if self.k == 0 {
            return false;
        }
        match self.heap.peek() {
            Some(top) if self.heap.len() >= self.k => {
                let probe = TipRecord { v_centered, subtree_z: Complex64::default(), order };
                probe.key_cmp(&top.0) == Ordering::Less
            }
            _ => true,
        }
    }

    pub fn push(&mut self, rec: TipRecord) {
        if !self.admits(rec.v_centered, rec.order) {
            return;
        }
        self.heap.push(ByKey(rec));
        if self.heap.len() > self.k {
            self.heap.pop();
        }
    }

    /// Records in ascending key order.
    pub fn into_sorted(self) -> Vec<TipRecord> {
        self.heap.into_sorted_vec().into_iter().map(|r| r.0).collect()
    }
}

/// The `k` smallest records of the union of two tip lists.
pub fn merge_tips(a: &[TipRecord], b: &[TipRecord], k: usize) -> Vec<TipRecord> {
    let mut out: Vec<TipRecord> = a.iter().chain(b).copied().collect();
    out.sort_by(TipRecord::key_cmp);
    out.truncate(k);
    out
}

/// Streamed statistics of one tree.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaResult {
    pub replica: u64,
    pub depth_n: usize,
    pub extra_m: usize,
    /// `z[p][d] = Z_d(params[p])`.
    pub z: Vec<Vec<Complex64>>,
    /// `W_d`; empty without boundary parameters. Same for the next three.
    pub w: Vec<f64>,
    pub dw: Vec<f64>,
    pub min_v: Vec<f64>,
    pub sup_weight: Vec<f64>,
    /// Simulated particles per generation (pruned subtrees are not counted).
    pub population: Vec<u64>,
    pub tips: Vec<TipRecord>,
    pub extinct: bool,
    /// Depth-`n` particles whose subtree was replaced by its mean.
    pub pruned: u64,
    pub nodes: u64,
    /// Largest stack length reached during the traversal.
    pub peak_stack: usize,
}

impl ReplicaResult {
    pub fn total_depth(&self) -> usize {
        self.depth_n + self.extra_m
    }
}

#[derive(Clone, Copy)]
struct Frame {
    depth: u32,
    s: f64,
    key: u64,
}

/// Stream key of child `i` of a node with key `parent`.
#[inline]
fn child_key(parent: u64, i: usize) -> u64 {
    rng::mix64(parent ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

struct OpenTip {
    v_centered: f64,
    s: f64,
    acc: Complex64,
    order: u64,
}

fn tip_centering(n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        1.5 * (n as f64).ln()
    }
}

/// Simulates replica `replica` of `cfg`.
pub fn run_replica(law: &ReproductionLaw, cfg: &SimConfig, replica: u64) -> Result<ReplicaResult, SimError> {
    run_replica_inner(law, cfg, replica, None)
}

/// As [`run_replica`], additionally calling `visit(v_centered, order)` for every
/// depth-`n` particle, with no bound on their number. Needs boundary parameters.
pub fn run_replica_visiting(
    law: &ReproductionLaw,
    cfg: &SimConfig,
    replica: u64,
    visit: &mut dyn FnMut(f64, u64),
) -> Result<ReplicaResult, SimError> {
    if cfg.boundary.is_none() {
        return Err(SimError::NeedsBoundary);
    }
    run_replica_inner(law, cfg, replica, Some(visit))
}

fn run_replica_inner(
    law: &ReproductionLaw,
    cfg: &SimConfig,
    replica: u64,
    mut visit: Option<&mut dyn FnMut(f64, u64)>,
) -> Result<ReplicaResult, SimError> {
    cfg.validate(law)?;
    let depth_total = cfg.total_depth();
    let n = cfg.depth_n;
    let levels = depth_total + 1;
    // inv_m_pow[p][d] = m(lambda_p)^{-d}, by repeated multiplication so that
    // integer powers of exactly representable transforms stay exact.
    let inv_m_pow: Vec<Vec<Complex64>> = cfg
        .params
        .iter()
        .map(|&l| {
            let inv = law.laplace_m(l).inv();
            std::iter::successors(Some(Complex64::new(1.0, 0.0)), |z| Some(z * inv)).take(levels).collect()
        })
        .collect();
    let tip_lambda = cfg.params.first().copied().unwrap_or_default();
    let centering = tip_centering(n);
    let want_tips = cfg.tip_k > 0;
    let prune = cfg.prune_tips_above;

    let mut z = vec![vec![Complex64::new(0.0, 0.0); levels]; cfg.params.len()];
    let boundary = cfg.boundary;
    let vlen = if boundary.is_some() { levels } else { 0 };
    let mut w = vec![0.0; vlen];
    let mut dw = vec![0.0; vlen];
    let mut min_v = vec![f64::INFINITY; vlen];
    let mut population = vec![0u64; levels];
    let mut heap = TipHeap::new(cfg.tip_k);
    let mut open: Option<OpenTip> = None;
    let mut tip_order = 0u64;
    let mut pruned = 0u64;
    let mut nodes = 0u64;
    let seed = rng::replica_seed(cfg.master_seed, replica);

    let mut stack = vec![Frame { depth: 0, s: 0.0, key: seed }];
    let mut peak_stack = 1usize;
    let mut children: Vec<f64> = Vec::with_capacity(law.max_offspring());

    while let Some(Frame { depth, s, key }) = stack.pop() {
        let d = depth as usize;
        nodes += 1;
        population[d] += 1;
        if cfg.z_depth_mask & (1u64 << d) != 0 {
            for (p, &l) in cfg.params.iter().enumerate() {
                z[p][d] += (-(l * s)).exp() * inv_m_pow[p][d];
            }
        }
        let mut v_here = 0.0;
        if let Some(b) = &boundary {
            let v = b.v(s, d);
            let e = (-v).exp();
            w[d] += e;
            dw[d] += v * e;
            if v < min_v[d] {
                min_v[d] = v;
            }
            v_here = v;
        }

        let mut expand = d < depth_total;
        if want_tips || prune.is_some() || visit.is_some() {
            if d <= n {
                if let Some(t) = open.take() {
                    heap.push(TipRecord { v_centered: t.v_centered, subtree_z: t.acc, order: t.order });
                }
            }
            if d == n {
                let v_centered = v_here - centering;
                let order = tip_order;
                tip_order += 1;
                if let Some(f) = visit.as_mut() {
                    f(v_centered, order);
                }
                if prune.is_some_and(|c| v_centered > c && d < depth_total) {
                    pruned += 1;
                    expand = false;
                    // Impute the mean 1 for every descendant martingale.
                    for (p, &l) in cfg.params.iter().enumerate() {
                        let e = (-(l * s)).exp() * inv_m_pow[p][d];
                        for zz in &mut z[p][d + 1..] {
                            *zz += e;
                        }
                    }
                    if boundary.is_some() {
                        let e = (-v_here).exp();
                        for dd in d + 1..levels {
                            w[dd] += e;
                            dw[dd] += v_here * e;
                        }
                    }
                    if want_tips {
                        heap.push(TipRecord { v_centered, subtree_z: Complex64::new(1.0, 0.0), order });
                    }
                } else if want_tips && heap.admits(v_centered, order) {
                    open = Some(OpenTip { v_centered, s, acc: Complex64::new(0.0, 0.0), order });
                }
            }
            if d == depth_total {
                if let (Some(t), Some(inv)) = (open.as_mut(), inv_m_pow.first()) {
                    t.acc += (-(tip_lambda * (s - t.s))).exp() * inv[depth_total - n];
                }
            }
        }
        if !expand {
            continue;
        }

        let mut stream = rng::SplitMix64::new(key);
        children.clear();
        law.sample_offspring(&mut stream, &mut children);
        for (i, &x) in children.iter().enumerate().rev() {
            stack.push(Frame { depth: depth + 1, s: s + x, key: child_key(key, i) });
        }
        peak_stack = peak_stack.max(stack.len());
    }
    if let Some(t) = open.take() {
        heap.push(TipRecord { v_centered: t.v_centered, subtree_z: t.acc, order: t.order });
    }

    for zp in &mut z {
        for (d, zz) in zp.iter_mut().enumerate() {
            if !cfg.records_z(d) {
                *zz = Complex64::new(f64::NAN, f64::NAN);
            }
        }
    }
    let sup_weight = min_v.iter().map(|&v| (-v).exp()).collect();
    Ok(ReplicaResult {
        replica,
        depth_n: n,
        extra_m: cfg.extra_m,
        z,
        w,
        dw,
        min_v,
        sup_weight,
        extinct: population[n] == 0,
        population,
        tips: heap.into_sorted(),
        pruned,
        nodes,
        peak_stack,
    })
}

/// Runs the given replicas in parallel; output order follows `replicas`.
pub fn run_replicas(
    law: &ReproductionLaw,
    cfg: &SimConfig,
    replicas: std::ops::Range<u64>,
) -> Result<Vec<ReplicaResult>, SimError> {
    cfg.validate(law)?;
    replicas.into_par_iter().map(|r| run_replica(law, cfg, r)).collect()
}

/// `a_n (Z_{n+m} - Z_n)` at parameter index `param`, using the replica's own
/// `n` and `m`.
pub fn residual(rep: &ReplicaResult, param: usize, a_n: Complex64) -> Complex64 {
    residual_between(rep, param, rep.depth_n, rep.extra_m, a_n)
}

/// `a_n (Z_{n+m} - Z_n)` for any `n + m` within the simulated depth.
pub fn residual_between(rep: &ReplicaResult, param: usize, n: usize, m: usize, a_n: Complex64) -> Complex64 {
    let z = &rep.z[param];
    a_n * (z[n + m] - z[n])
}

/// Median of a sample; `NaN` when empty.
pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

/// Median over replicas of `sqrt(n) sup_{|u|=n} e^{-V(u)}` for each `n` in the grid.
pub fn sup_weight_trend(
    law: &ReproductionLaw,
    boundary: BoundaryParams,
    n_grid: &[usize],
    replicas: u64,
    seed: u64,
) -> Result<Vec<(usize, f64)>, SimError> {
    let depth = n_grid.iter().copied().max().unwrap_or(0);
    let cfg = SimConfig::new(depth, 0, Vec::new(), seed).with_boundary(boundary);
    let reps = run_replicas(law, &cfg, 0..replicas)?;
    Ok(sup_weight_medians(&reps, n_grid))
}

/// The statistic of [`sup_weight_trend`] on replicas that are already simulated.
pub fn sup_weight_medians(reps: &[ReplicaResult], n_grid: &[usize]) -> Vec<(usize, f64)> {
    n_grid
        .iter()
        .map(|&n| {
            let mut vals: Vec<f64> = reps.iter().map(|r| (n as f64).sqrt() * r.sup_weight[n]).collect();
            (n, median(&mut vals))
        })
        .collect()
}
