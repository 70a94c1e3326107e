//! Consensus clustering of per-image dot annotations.
//!
//! Dots are merged agglomeratively under Euclidean distance. Two clusters that
//! share a user may never merge (cannot-link); among the permitted merges the
//! one with the smallest linkage distance is taken first, ties going to the
//! lexicographically smallest pair of cluster ids. Merging stops once no
//! permitted merge is within `distance_threshold`. Surviving clusters smaller
//! than `min_cluster_size` are dropped, and each remaining cluster is labelled
//! per attribute by majority vote.
//!
//! Cluster ids come from a canonical sort of the input dots, so the output does
//! not depend on input order.
//!
//! Both supported linkages are bounded below by the closest cross pair, so no
//! merge can join points that are not connected through pairs within the
//! threshold. Each such connected component is clustered independently.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attributes::{Attribute, Label, Responses, NUM_ATTRIBUTES};
use crate::error::{Error, Result};
use crate::ingest::DotAnnotation;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Orders by `y`, then `x`.
    pub fn cmp_yx(&self, other: &Point) -> Ordering {
        self.y.total_cmp(&other.y).then(self.x.total_cmp(&other.x))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Single,
    Average,
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Linkage::Single => "single",
            Linkage::Average => "average",
        })
    }
}

impl FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Linkage::Single),
            "average" => Ok(Linkage::Average),
            _ => Err(Error::InvalidParameter(format!("unknown linkage '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub linkage: Linkage,
    /// Pixels. A merge is permitted while its linkage distance is `<=` this.
    pub distance_threshold: f64,
    pub min_cluster_size: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            linkage: Linkage::Average,
            distance_threshold: 24.0,
            min_cluster_size: 2,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.distance_threshold.is_finite() && self.distance_threshold > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "distance_threshold must be a positive number, got {}",
                self.distance_threshold
            )));
        }
        if self.min_cluster_size == 0 {
            return Err(Error::InvalidParameter("min_cluster_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// A consensus object: the dots of one cluster, its medoid and majority labels.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregatedObject {
    pub image_id: String,
    /// Member dots in canonical order.
    pub members: Vec<DotAnnotation>,
    pub medoid: Point,
    pub labels: Responses,
}

impl AggregatedObject {
    /// Number of member dots (J_k).
    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    pub fn member_points(&self) -> impl Iterator<Item = Point> + '_ {
        self.members.iter().map(|d| Point::new(d.x, d.y))
    }
}

/// Result of clustering one image.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClusterOutcome {
    pub objects: Vec<AggregatedObject>,
    /// Dots that belonged to clusters below `min_cluster_size`.
    pub discarded: usize,
}

/// Returns the member minimizing the summed distance to all members.
/// Near-equal sums (within 1e-9 relative) tie and go to the smallest `(y, x)`.
pub fn medoid(points: &[Point]) -> Result<Point> {
    if points.is_empty() {
        return Err(Error::Empty("medoid of an empty point set"));
    }
    let sums: Vec<f64> = points
        .iter()
        .map(|p| points.iter().map(|q| p.distance(*q)).sum())
        .collect();
    let best = sums.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-9 * best.max(1.0);
    let winner = points
        .iter()
        .zip(&sums)
        .filter(|(_, &s)| s <= best + tol)
        .map(|(p, _)| *p)
        .min_by(|a, b| a.cmp_yx(b))
        .expect("nonempty");
    Ok(winner)
}

/// Per-attribute vote: a known class wins when it has strictly more votes
/// than the other known class and at least as many as `unknown`.
pub fn majority_vote<'a, I>(responses: I) -> Responses
where
    I: IntoIterator<Item = &'a Responses>,
{
    let mut votes = [[0usize; 3]; NUM_ATTRIBUTES];
    for r in responses {
        for (a, l) in r.iter() {
            votes[a.index()][l.index()] += 1;
        }
    }
    let mut out = Responses::default();
    for a in Attribute::ALL {
        let [c0, c1, unknown] = votes[a.index()];
        let label = if c0 > c1 && c0 >= unknown {
            Label::Class0
        } else if c1 > c0 && c1 >= unknown {
            Label::Class1
        } else {
            Label::Unknown
        };
        out.set(a, label);
    }
    out
}

pub fn majority_vote_labels(members: &[DotAnnotation]) -> Responses {
    majority_vote(members.iter().map(|d| &d.responses))
}

fn canonical_cmp(a: &DotAnnotation, b: &DotAnnotation) -> Ordering {
    a.y.total_cmp(&b.y)
        .then(a.x.total_cmp(&b.x))
        .then_with(|| a.user_id.cmp(&b.user_id))
        .then_with(|| a.responses.cmp(&b.responses))
}

/// Clusters the dots of one image. See the module docs for the procedure.
pub fn cluster_image_annotations<'a, I>(dots: I, params: &ClusterParams) -> Result<Vec<AggregatedObject>>
where
    I: IntoIterator<Item = &'a DotAnnotation>,
{
    cluster_with_stats(dots, params).map(|o| o.objects)
}

/// Same as [`cluster_image_annotations`], also reporting discarded dots.
pub fn cluster_with_stats<'a, I>(dots: I, params: &ClusterParams) -> Result<ClusterOutcome>
where
    I: IntoIterator<Item = &'a DotAnnotation>,
{
    params.validate()?;
    let mut dots: Vec<&DotAnnotation> = dots.into_iter().collect();
    let Some(first) = dots.first() else {
        return Ok(ClusterOutcome::default());
    };
    let image_id = first.image_id.clone();
    if let Some(d) = dots.iter().find(|d| d.image_id != image_id) {
        return Err(Error::InvalidParameter(format!(
            "dots from several images passed to one clustering call ({} and {})",
            image_id, d.image_id
        )));
    }
    dots.sort_by(|a, b| canonical_cmp(a, b));

    let mut user_ids: HashMap<&str, u32> = HashMap::new();
    let users: Vec<u32> = dots
        .iter()
        .map(|d| {
            let next = user_ids.len() as u32;
            *user_ids.entry(d.user_id.as_str()).or_insert(next)
        })
        .collect();
    let points: Vec<Point> = dots.iter().map(|d| Point::new(d.x, d.y)).collect();

    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for component in threshold_components(&points, params.distance_threshold) {
        if component.len() == 1 {
            clusters.push(component);
            continue;
        }
        let comp_points: Vec<Point> = component.iter().map(|&i| points[i]).collect();
        let comp_users: Vec<u32> = component.iter().map(|&i| users[i]).collect();
        for local in agglomerate(&comp_points, &comp_users, params.linkage, params.distance_threshold) {
            clusters.push(local.into_iter().map(|k| component[k]).collect());
        }
    }

    let mut outcome = ClusterOutcome::default();
    let mut keyed = Vec::new();
    for mut members in clusters {
        if members.len() < params.min_cluster_size {
            outcome.discarded += members.len();
            continue;
        }
        members.sort_unstable();
        let pts: Vec<Point> = members.iter().map(|&i| points[i]).collect();
        let med = medoid(&pts)?;
        let member_dots: Vec<DotAnnotation> = members.iter().map(|&i| dots[i].clone()).collect();
        let labels = majority_vote_labels(&member_dots);
        keyed.push((
            members[0],
            AggregatedObject {
                image_id: image_id.clone(),
                members: member_dots,
                medoid: med,
                labels,
            },
        ));
    }
    keyed.sort_by(|(ia, a), (ib, b)| a.medoid.cmp_yx(&b.medoid).then(ia.cmp(ib)));
    outcome.objects = keyed.into_iter().map(|(_, o)| o).collect();
    Ok(outcome)
}

/// Connected components of the graph joining points at distance `<= radius`.
/// Each component lists point indices in ascending order; components are
/// ordered by their smallest index.
fn threshold_components(points: &[Point], radius: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }

    let cell = |p: &Point| ((p.x / radius).floor() as i64, (p.y / radius).floor() as i64);
    let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        buckets.entry(cell(p)).or_default().push(i);
    }
    for (i, p) in points.iter().enumerate() {
        let (cx, cy) = cell(p);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let Some(bucket) = buckets.get(&(cx + dx, cy + dy)) else {
                    continue;
                };
                for &j in bucket {
                    if j > i && p.distance(points[j]) <= radius {
                        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                        if ri != rj {
                            parent[ri.max(rj)] = ri.min(rj);
                        }
                    }
                }
            }
        }
    }

    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort_unstable_by_key(|g| g[0]);
    out
}

/// Greedy constrained agglomeration over one component.
///
/// Keeps a full linkage matrix updated with the Lance-Williams recurrences and
/// a per-row cache of the best permitted partner with a larger id. A merged
/// cluster keeps the smaller of the two ids.
fn agglomerate(points: &[Point], users: &[u32], linkage: Linkage, threshold: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dist = vec![0.0f64; n * n];
    let mut blocked = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            dist[i * n + j] = points[i].distance(points[j]);
            blocked[i * n + j] = users[i] == users[j];
        }
    }
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();

    // best[i] = smallest (distance, j) over active permitted j > i.
    let row_best = |i: usize, dist: &[f64], blocked: &[bool], active: &[bool]| -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for j in i + 1..n {
            if active[j] && !blocked[i * n + j] {
                let d = dist[i * n + j];
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, j));
                }
            }
        }
        best
    };
    let mut best: Vec<Option<(f64, usize)>> = (0..n).map(|i| row_best(i, &dist, &blocked, &active)).collect();

    loop {
        let mut pick: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            if let Some((d, j)) = best[i] {
                if d <= threshold && pick.is_none_or(|(pd, _, _)| d < pd) {
                    pick = Some((d, i, j));
                }
            }
        }
        let Some((_, a, b)) = pick else { break };

        let (na, nb) = (size[a] as f64, size[b] as f64);
        for k in 0..n {
            if !active[k] || k == a || k == b {
                continue;
            }
            let (dak, dbk) = (dist[a * n + k], dist[b * n + k]);
            let merged = match linkage {
                Linkage::Single => dak.min(dbk),
                Linkage::Average => (na * dak + nb * dbk) / (na + nb),
            };
            dist[a * n + k] = merged;
            dist[k * n + a] = merged;
            let blk = blocked[a * n + k] || blocked[b * n + k];
            blocked[a * n + k] = blk;
            blocked[k * n + a] = blk;
        }
        active[b] = false;
        size[a] += size[b];
        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);
        best[b] = None;

        for k in 0..n {
            if !active[k] {
                continue;
            }
            if k == a {
                best[k] = row_best(k, &dist, &blocked, &active);
                continue;
            }
            let stale = matches!(best[k], Some((_, j)) if j == a || j == b);
            if stale {
                best[k] = row_best(k, &dist, &blocked, &active);
            } else if k < a && !blocked[k * n + a] {
                let d = dist[k * n + a];
                let better = match best[k] {
                    None => true,
                    Some((bd, bj)) => d < bd || (d == bd && a < bj),
                };
                if better {
                    best[k] = Some((d, a));
                }
            }
        }
    }

    members.into_iter().filter(|m| !m.is_empty()).collect()
}

// ---------------------------------------------------------------------------
// JSONL interchange

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberRecord {
    pub user_id: String,
    pub x: f64,
    pub y: f64,
}

/// One line of the aggregated-object JSONL file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub image_id: String,
    pub medoid: [f64; 2],
    pub n_members: usize,
    pub members: Vec<MemberRecord>,
    pub labels: Responses,
}

impl From<&AggregatedObject> for ObjectRecord {
    fn from(o: &AggregatedObject) -> Self {
        ObjectRecord {
            image_id: o.image_id.clone(),
            medoid: [o.medoid.x, o.medoid.y],
            n_members: o.n_members(),
            members: o
                .members
                .iter()
                .map(|d| MemberRecord {
                    user_id: d.user_id.clone(),
                    x: d.x,
                    y: d.y,
                })
                .collect(),
            labels: o.labels,
        }
    }
}

impl ObjectRecord {
    /// Rebuilds the object. Per-member responses are not part of the record
    /// and come back as unknown.
    pub fn into_object(self) -> AggregatedObject {
        AggregatedObject {
            members: self
                .members
                .into_iter()
                .map(|m| DotAnnotation {
                    image_id: self.image_id.clone(),
                    user_id: m.user_id,
                    x: m.x,
                    y: m.y,
                    responses: Responses::default(),
                })
                .collect(),
            image_id: self.image_id,
            medoid: Point::new(self.medoid[0], self.medoid[1]),
            labels: self.labels,
        }
    }
}

pub fn write_objects_jsonl<W: Write>(mut writer: W, objects: &[AggregatedObject]) -> Result<()> {
    for o in objects {
        serde_json::to_writer(&mut writer, &ObjectRecord::from(o))?;
        writer.write_all(b"\n").map_err(serde_json::Error::io)?;
    }
    Ok(())
}

pub fn read_objects_jsonl<R: BufRead>(reader: R) -> Result<Vec<AggregatedObject>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let text = line.map_err(|e| Error::parse(line_no, e.to_string()))?;
        if text.trim().is_empty() {
            continue;
        }
        let rec: ObjectRecord =
            serde_json::from_str(&text).map_err(|e| Error::parse(line_no, e.to_string()))?;
        if rec.members.is_empty() || rec.n_members != rec.members.len() {
            return Err(Error::parse(line_no, "n_members does not match members"));
        }
        out.push(rec.into_object());
    }
    Ok(out)
}
