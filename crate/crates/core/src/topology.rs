//! Morse census of a gridded field by two dual union-find level sweeps.
//!
//! Vertices are totally ordered by `(value, index)`. The descending sweep
//! grows superlevel sets `{f > ℓ}`: a vertex with no processed neighbour is
//! a maximum, and a vertex that joins `k ≥ 2` components is a lower
//! connected saddle of multiplicity `k - 1`. The ascending sweep does the
//! same for sublevel sets `{f ≤ ℓ}` with minima and upper connected saddles.
//! Superlevel and sublevel sets always use dual connectivities (8/4 or 4/8).
//!
//! Component counts at queried levels are recomputed from scratch by
//! thresholding, which makes [`audit_morse_identity`] an independent check
//! of the sweep.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::FieldGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
        const EIGHT: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

/// A dual pair of connectivities for (superlevel, sublevel) sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum ConnectivityPair {
    #[default]
    #[serde(rename = "8-4")]
    Super8Sub4,
    #[serde(rename = "4-8")]
    Super4Sub8,
}

impl ConnectivityPair {
    pub fn superlevel(self) -> Connectivity {
        match self {
            ConnectivityPair::Super8Sub4 => Connectivity::Eight,
            ConnectivityPair::Super4Sub8 => Connectivity::Four,
        }
    }

    pub fn sublevel(self) -> Connectivity {
        match self {
            ConnectivityPair::Super8Sub4 => Connectivity::Four,
            ConnectivityPair::Super4Sub8 => Connectivity::Eight,
        }
    }

    pub fn swapped(self) -> Self {
        match self {
            ConnectivityPair::Super8Sub4 => ConnectivityPair::Super4Sub8,
            ConnectivityPair::Super4Sub8 => ConnectivityPair::Super8Sub4,
        }
    }

    /// Builds a pair from explicit choices; they must be dual.
    pub fn from_parts(superlevel: Connectivity, sublevel: Connectivity) -> Result<Self> {
        match (superlevel, sublevel) {
            (Connectivity::Eight, Connectivity::Four) => Ok(ConnectivityPair::Super8Sub4),
            (Connectivity::Four, Connectivity::Eight) => Ok(ConnectivityPair::Super4Sub8),
            _ => Err(Error::InvalidParameter("superlevel and sublevel connectivity must be dual".into())),
        }
    }
}

impl FromStr for ConnectivityPair {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "8-4" => Ok(ConnectivityPair::Super8Sub4),
            "4-8" => Ok(ConnectivityPair::Super4Sub8),
            other => Err(Error::InvalidParameter(format!("connectivity {other:?}, expected 8-4 or 4-8"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Max,
    Min,
    LowerSaddle,
    UpperSaddle,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::Max => "max",
            EventKind::Min => "min",
            EventKind::LowerSaddle => "lower_saddle",
            EventKind::UpperSaddle => "upper_saddle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalEvent {
    pub kind: EventKind,
    pub level: f64,
    pub grid_index: usize,
    pub multiplicity: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ComponentCounts {
    pub super_all: u32,
    pub super_contained: u32,
    pub sub_all: u32,
    pub sub_contained: u32,
    pub levelset_contained: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SetKind {
    Superlevel,
    Sublevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Containment {
    All,
    Contained,
}

/// Disjoint-set forest with a per-root "touches the window boundary" flag.
struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
    touches: Vec<bool>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n as u32).collect(), size: vec![1; n], touches: vec![false; n] }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return a;
        }
        if self.size[a as usize] < self.size[b as usize] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b as usize] = a;
        self.size[a as usize] += self.size[b as usize];
        self.touches[a as usize] |= self.touches[b as usize];
        a
    }
}

#[inline]
fn on_boundary(index: usize, n: usize) -> bool {
    let (row, col) = (index / n, index % n);
    row == 0 || col == 0 || row == n - 1 || col == n - 1
}

#[inline]
fn neighbors(index: usize, n: usize, conn: Connectivity) -> impl Iterator<Item = usize> {
    let (row, col) = ((index / n) as isize, (index % n) as isize);
    let n = n as isize;
    conn.offsets().iter().filter_map(move |&(dr, dc)| {
        let (r, c) = (row + dr, col + dc);
        (r >= 0 && c >= 0 && r < n && c < n).then(|| (r * n + c) as usize)
    })
}

/// Strict total order on vertices: by value, then by index.
#[inline]
fn above(values: &[f64], a: usize, b: usize) -> bool {
    match values[a].total_cmp(&values[b]) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => a > b,
    }
}

/// Number of components and boundary-touching components after each step
/// of one sweep; entry `k` describes the set formed by the first `k`
/// vertices.
type Profile = Vec<(u32, u32)>;

/// Outcome of [`sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// All critical events, sorted by `(level, grid_index)`.
    pub events: Vec<CriticalEvent>,
    pub boundary_tangents: usize,
    /// Thresholded component counts at each level queried in [`sweep`].
    pub component_counts: Vec<(f64, ComponentCounts)>,
    pub connectivity: ConnectivityPair,
    pub points_per_side: usize,
    #[serde(skip)]
    sorted_values: Vec<f64>,
    #[serde(skip)]
    super_profile: Profile,
    #[serde(skip)]
    sub_profile: Profile,
}

impl SweepResult {
    pub fn is_interior(&self, grid_index: usize) -> bool {
        !on_boundary(grid_index, self.points_per_side)
    }

    pub fn count_kind(&self, kind: EventKind) -> u32 {
        self.events.iter().filter(|e| e.kind == kind).map(|e| e.multiplicity).sum()
    }

    /// `#{maxima above ℓ} - #{lower saddle merges above ℓ}`.
    pub fn superlevel_census(&self, level: f64) -> i64 {
        self.events
            .iter()
            .filter(|e| e.level > level)
            .map(|e| match e.kind {
                EventKind::Max => 1,
                EventKind::LowerSaddle => -(e.multiplicity as i64),
                _ => 0,
            })
            .sum()
    }

    /// `#{minima at or below ℓ} - #{upper saddle merges at or below ℓ}`.
    pub fn sublevel_census(&self, level: f64) -> i64 {
        self.events
            .iter()
            .filter(|e| e.level <= level)
            .map(|e| match e.kind {
                EventKind::Min => 1,
                EventKind::UpperSaddle => -(e.multiplicity as i64),
                _ => 0,
            })
            .sum()
    }

    /// Component counts read off the sweep itself (no thresholding). The
    /// level-set count uses the contained super + sub identity.
    pub fn sweep_counts(&self, level: f64) -> ComponentCounts {
        let below = self.sorted_values.partition_point(|v| *v <= level);
        let (super_all, super_touch) = self.super_profile[self.sorted_values.len() - below];
        let (sub_all, sub_touch) = self.sub_profile[below];
        ComponentCounts {
            super_all,
            super_contained: super_all - super_touch,
            sub_all,
            sub_contained: sub_all - sub_touch,
            levelset_contained: (super_all - super_touch) + (sub_all - sub_touch),
        }
    }

    /// Thresholded counts stored for a queried level.
    pub fn counts_at(&self, level: f64) -> Result<ComponentCounts> {
        self.component_counts
            .iter()
            .find(|(l, _)| *l == level)
            .map(|(_, c)| *c)
            .ok_or(Error::MissingLevel(level))
    }

    pub fn events_csv(&self) -> String {
        let mut out = String::from("kind,level,grid_index,multiplicity\n");
        for e in &self.events {
            let _ = writeln!(out, "{},{},{},{}", e.kind.name(), e.level, e.grid_index, e.multiplicity);
        }
        out
    }

    pub fn counts_csv(&self) -> String {
        let mut out =
            String::from("level,n_super_all,n_super_contained,n_sub_all,n_sub_contained,n_levelset_contained\n");
        for (l, c) in &self.component_counts {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                l, c.super_all, c.super_contained, c.sub_all, c.sub_contained, c.levelset_contained
            );
        }
        out
    }
}

/// One pass of the level sweep over vertices in `order`.
fn run_pass(
    field: &FieldGrid,
    order: impl Iterator<Item = usize>,
    conn: Connectivity,
    birth: EventKind,
    merge: EventKind,
    events: &mut Vec<CriticalEvent>,
) -> Profile {
    let n = field.side();
    let len = field.values.len();
    let mut uf = UnionFind::new(len);
    let mut processed = vec![false; len];
    let mut roots: Vec<u32> = Vec::with_capacity(8);
    let mut profile = Vec::with_capacity(len + 1);
    let (mut components, mut touching) = (0u32, 0u32);
    profile.push((0, 0));
    for v in order {
        roots.clear();
        for w in neighbors(v, n, conn) {
            if processed[w] {
                let r = uf.find(w as u32);
                if !roots.contains(&r) {
                    roots.push(r);
                }
            }
        }
        processed[v] = true;
        let was_touching = roots.iter().filter(|&&r| uf.touches[r as usize]).count() as u32;
        uf.touches[v] = on_boundary(v, n);
        let mut root = v as u32;
        for &r in &roots {
            root = uf.union(root, r);
        }
        let now_touching = uf.touches[root as usize] as u32;
        match roots.len() {
            0 => {
                components += 1;
                events.push(CriticalEvent { kind: birth, level: field.values[v], grid_index: v, multiplicity: 1 });
            }
            1 => {}
            k => {
                components -= k as u32 - 1;
                events.push(CriticalEvent {
                    kind: merge,
                    level: field.values[v],
                    grid_index: v,
                    multiplicity: k as u32 - 1,
                });
            }
        }
        touching = touching + now_touching - was_touching;
        profile.push((components, touching));
    }
    profile
}

/// Runs both sweeps and thresholded component counts at `levels`.
pub fn sweep(field: &FieldGrid, conn: ConnectivityPair, levels: &[f64]) -> SweepResult {
    let values = &field.values;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_unstable_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));

    let mut events = Vec::new();
    let super_profile =
        run_pass(field, order.iter().rev().copied(), conn.superlevel(), EventKind::Max, EventKind::LowerSaddle, &mut events);
    let sub_profile =
        run_pass(field, order.iter().copied(), conn.sublevel(), EventKind::Min, EventKind::UpperSaddle, &mut events);
    events.sort_by(|a, b| a.level.total_cmp(&b.level).then(a.grid_index.cmp(&b.grid_index)));

    let component_counts = levels.iter().map(|&l| (l, threshold_counts(field, l, conn))).collect();
    SweepResult {
        events,
        boundary_tangents: boundary_tangents(field),
        component_counts,
        connectivity: conn,
        points_per_side: field.side(),
        sorted_values: order.iter().map(|&i| values[i]).collect(),
        super_profile,
        sub_profile,
    }
}

/// Events of one sweep direction only: `Superlevel` runs the descending
/// pass (maxima, lower saddles), `Sublevel` the ascending one.
pub fn single_pass(field: &FieldGrid, kind: SetKind, conn: Connectivity) -> Vec<CriticalEvent> {
    let values = &field.values;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_unstable_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut events = Vec::new();
    match kind {
        SetKind::Superlevel => {
            run_pass(field, order.into_iter().rev(), conn, EventKind::Max, EventKind::LowerSaddle, &mut events)
        }
        SetKind::Sublevel => run_pass(field, order.into_iter(), conn, EventKind::Min, EventKind::UpperSaddle, &mut events),
    };
    events
}

/// Connected-component labels of `{f > ℓ}` or `{f ≤ ℓ}` by a raster scan;
/// vertices outside the set get `u32::MAX`. Returns labels, label count and
/// per-label boundary contact.
fn label_set(field: &FieldGrid, level: f64, kind: SetKind, conn: Connectivity) -> (Vec<u32>, usize, Vec<bool>) {
    let n = field.side();
    let len = field.values.len();
    let member = |i: usize| match kind {
        SetKind::Superlevel => field.values[i] > level,
        SetKind::Sublevel => field.values[i] <= level,
    };
    let mut uf = UnionFind::new(len);
    for i in 0..len {
        if !member(i) {
            continue;
        }
        uf.touches[i] = on_boundary(i, n);
        for w in neighbors(i, n, conn) {
            if w < i && member(w) {
                uf.union(i as u32, w as u32);
            }
        }
    }
    let mut labels = vec![u32::MAX; len];
    let mut root_label = vec![u32::MAX; len];
    let mut touches = Vec::new();
    for i in 0..len {
        if !member(i) {
            continue;
        }
        let r = uf.find(i as u32) as usize;
        if root_label[r] == u32::MAX {
            root_label[r] = touches.len() as u32;
            touches.push(uf.touches[r]);
        }
        labels[i] = root_label[r];
    }
    (labels, touches.len(), touches)
}

/// Number of components of the thresholded set.
pub fn count_components(
    field: &FieldGrid,
    level: f64,
    kind: SetKind,
    containment: Containment,
    conn: ConnectivityPair,
) -> usize {
    let c = match kind {
        SetKind::Superlevel => conn.superlevel(),
        SetKind::Sublevel => conn.sublevel(),
    };
    let (_, count, touches) = label_set(field, level, kind, c);
    match containment {
        Containment::All => count,
        Containment::Contained => touches.iter().filter(|t| !**t).count(),
    }
}

/// Number of level-set components at `ℓ` that do not meet the window
/// boundary.
///
/// Superlevel and sublevel components form the nodes of a bipartite
/// adjacency graph whose edges are the level curves separating them. With
/// `V` nodes and `C` graph components there are `V - C` curves; the curves
/// that run between two boundary-touching components are arcs ending on
/// the boundary, and there are `V_b - C_b` of those.
pub fn count_level_components(field: &FieldGrid, level: f64, conn: ConnectivityPair) -> usize {
    let sup = label_set(field, level, SetKind::Superlevel, conn.superlevel());
    let sub = label_set(field, level, SetKind::Sublevel, conn.sublevel());
    level_components_from_labels(field.side(), &sup, &sub)
}

type Labels = (Vec<u32>, usize, Vec<bool>);

fn level_components_from_labels(n: usize, (sup, n_sup, sup_touch): &Labels, (sub, _, sub_touch): &Labels) -> usize {
    let n_sup = *n_sup;
    let node = |i: usize| if sup[i] != u32::MAX { sup[i] as usize } else { n_sup + sub[i] as usize };

    let mut edges = Vec::new();
    for i in 0..sup.len() {
        for w in neighbors(i, n, Connectivity::Four).filter(|&w| w > i) {
            let (a, b) = (node(i), node(w));
            if (a < n_sup) != (b < n_sup) {
                edges.push((a.min(b) as u32, a.max(b) as u32));
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    let touches: Vec<bool> = sup_touch.iter().chain(sub_touch.iter()).copied().collect();
    let v = touches.len();
    let v_b = touches.iter().filter(|t| **t).count();

    let mut all = UnionFind::new(v);
    let mut boundary = UnionFind::new(v);
    for &(a, b) in &edges {
        all.union(a, b);
        if touches[a as usize] && touches[b as usize] {
            boundary.union(a, b);
        }
    }
    let c = (0..v).filter(|&i| all.find(i as u32) == i as u32).count();
    let c_b = (0..v).filter(|&i| touches[i] && boundary.find(i as u32) == i as u32).count();
    (v - c) - (v_b - c_b)
}

/// Thresholded counts at one level, independent of any sweep.
pub fn threshold_counts(field: &FieldGrid, level: f64, conn: ConnectivityPair) -> ComponentCounts {
    let sup = label_set(field, level, SetKind::Superlevel, conn.superlevel());
    let sub = label_set(field, level, SetKind::Sublevel, conn.sublevel());
    let contained = |l: &Labels| l.2.iter().filter(|t| !**t).count() as u32;
    ComponentCounts {
        super_all: sup.1 as u32,
        super_contained: contained(&sup),
        sub_all: sub.1 as u32,
        sub_contained: contained(&sub),
        levelset_contained: level_components_from_labels(field.side(), &sup, &sub) as u32,
    }
}

/// Boundary vertices in cyclic order: top row, right column, bottom row
/// reversed, left column upwards.
fn boundary_cycle(n: usize) -> Vec<usize> {
    let mut cycle = Vec::with_capacity(4 * (n - 1));
    cycle.extend(0..n);
    cycle.extend((1..n).map(|r| r * n + n - 1));
    cycle.extend((0..n - 1).rev().map(|c| (n - 1) * n + c));
    cycle.extend((1..n - 1).rev().map(|r| r * n));
    cycle
}

/// Strict local extrema of the field restricted to the boundary cycle,
/// under the `(value, index)` order.
pub fn boundary_tangents(field: &FieldGrid) -> usize {
    let n = field.side();
    if n < 2 {
        return 0;
    }
    let cycle = boundary_cycle(n);
    let m = cycle.len();
    (0..m)
        .filter(|&i| {
            let (p, v, q) = (cycle[(i + m - 1) % m], cycle[i], cycle[(i + 1) % m]);
            let up = above(&field.values, v, p) && above(&field.values, v, q);
            let down = above(&field.values, p, v) && above(&field.values, q, v);
            up || down
        })
        .count()
}

/// 2×2 blocks whose diagonal corners lie in the superlevel set and whose
/// anti-diagonal corners do not (or vice versa). Only these blocks are
/// connected differently by the 8-4 and 4-8 conventions.
pub fn ambiguous_blocks(field: &FieldGrid, level: f64) -> usize {
    let n = field.side();
    let mut count = 0;
    for r in 0..n - 1 {
        for c in 0..n - 1 {
            let a = field.at(r, c) > level;
            let b = field.at(r, c + 1) > level;
            let d = field.at(r + 1, c) > level;
            let e = field.at(r + 1, c + 1) > level;
            if a == e && b == d && a != b {
                count += 1;
            }
        }
    }
    count
}

/// Per-level audit of the census identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub level: f64,
    pub census: i64,
    pub delta_all: i64,
    pub delta_sub_all: i64,
    pub delta_contained: i64,
    pub boundary_tangents: usize,
    pub within_boundary_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub rows: Vec<AuditRow>,
}

impl AuditReport {
    pub fn max_abs_delta_all(&self) -> i64 {
        self.rows.iter().map(|r| r.delta_all.abs().max(r.delta_sub_all.abs())).max().unwrap_or(0)
    }

    /// Largest `|Δ_contained| - (tangents + 2)`; non-positive when the
    /// boundary bound holds everywhere.
    pub fn max_contained_excess(&self) -> i64 {
        self.rows
            .iter()
            .map(|r| r.delta_contained.abs() - (r.boundary_tangents as i64 + 2))
            .max()
            .unwrap_or(i64::MIN)
    }

    pub fn boundary_bound_holds(&self) -> bool {
        self.rows.iter().all(|r| r.within_boundary_bound)
    }
}

/// Checks `n_super_all(ℓ) = #max > ℓ - #lower saddles > ℓ` (and the sublevel
/// dual) against the thresholded counts, exactly; records how far the
/// contained counts fall short of the census.
pub fn audit_morse_identity(sr: &SweepResult, levels: &[f64]) -> Result<AuditReport> {
    let mut rows = Vec::with_capacity(levels.len());
    for &level in levels {
        let counts = sr.counts_at(level)?;
        let census = sr.superlevel_census(level);
        let sub_census = sr.sublevel_census(level);
        let delta_all = counts.super_all as i64 - census;
        let delta_sub_all = counts.sub_all as i64 - sub_census;
        if delta_all != 0 || delta_sub_all != 0 {
            return Err(Error::IdentityViolation {
                level,
                detail: format!(
                    "superlevel: {} components vs census {census}; sublevel: {} components vs census {sub_census}",
                    counts.super_all, counts.sub_all
                ),
            });
        }
        let delta_contained = counts.super_contained as i64 - census;
        rows.push(AuditRow {
            level,
            census,
            delta_all,
            delta_sub_all,
            delta_contained,
            boundary_tangents: sr.boundary_tangents,
            within_boundary_bound: delta_contained.unsigned_abs() as usize <= sr.boundary_tangents + 2,
        });
    }
    Ok(AuditReport { rows })
}
