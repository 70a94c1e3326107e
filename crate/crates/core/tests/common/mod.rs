#![allow(dead_code)]

use std::cmp::Ordering;

use fgcount::cluster::{AggregatedObject, Linkage, Point};
use fgcount::ingest::DotAnnotation;
use fgcount::sim::SimRng;
use fgcount::{Label, Responses};

pub fn dot(image: &str, user: &str, x: f64, y: f64, responses: Responses) -> DotAnnotation {
    DotAnnotation {
        image_id: image.into(),
        user_id: user.into(),
        x,
        y,
        responses,
    }
}

pub fn labels(species: Label, sex: Label, age: Label) -> Responses {
    Responses::new(species, sex, age)
}

pub fn all_unknown() -> Responses {
    Responses::default()
}

/// An object whose members are given points, one user each; the medoid is the
/// first point.
pub fn object(image: &str, points: &[(f64, f64)], l: Responses) -> AggregatedObject {
    AggregatedObject {
        image_id: image.into(),
        members: points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| dot(image, &format!("u{i}"), x, y, l))
            .collect(),
        medoid: Point::new(points[0].0, points[0].1),
        labels: l,
    }
}

pub fn random_label(rng: &mut SimRng) -> Label {
    Label::from_index(rng.categorical(&[0.4, 0.4, 0.2])).unwrap()
}

pub fn random_responses(rng: &mut SimRng) -> Responses {
    Responses::new(random_label(rng), random_label(rng), random_label(rng))
}

/// Random object with 1..=max_members dots scattered around a center inside
/// `width x height`. Centers are drawn with probability 1/2 within 3 px of
/// an edge.
pub fn random_object(rng: &mut SimRng, image: &str, width: f64, height: f64, max_members: usize) -> AggregatedObject {
    let coord = |rng: &mut SimRng, extent: f64| {
        if rng.uniform() < 0.5 {
            let d = rng.uniform() * 3.0;
            if rng.uniform() < 0.5 {
                d
            } else {
                (extent - d).next_down()
            }
        } else {
            rng.uniform() * extent
        }
    };
    let cx = coord(rng, width);
    let cy = coord(rng, height);
    let j = 1 + (rng.uniform() * max_members as f64) as usize;
    let pts: Vec<(f64, f64)> = (0..j)
        .map(|_| {
            let x = (cx + 4.0 * rng.normal()).clamp(0.0, width.next_down());
            let y = (cy + 4.0 * rng.normal()).clamp(0.0, height.next_down());
            (x, y)
        })
        .collect();
    object(image, &pts, random_responses(rng))
}

// ---------------------------------------------------------------------------
// Brute-force clustering oracle, straight from the definition: at each step
// scan every permitted pair, recomputing the linkage from the member points.

fn canonical(a: &DotAnnotation, b: &DotAnnotation) -> Ordering {
    a.y.total_cmp(&b.y)
        .then(a.x.total_cmp(&b.x))
        .then_with(|| a.user_id.cmp(&b.user_id))
        .then_with(|| a.responses.cmp(&b.responses))
}

fn dist(a: &DotAnnotation, b: &DotAnnotation) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}

fn linkage_distance(dots: &[DotAnnotation], a: &[usize], b: &[usize], linkage: Linkage) -> f64 {
    let pairs = a.iter().flat_map(|&i| b.iter().map(move |&j| (i, j)));
    match linkage {
        Linkage::Single => pairs.map(|(i, j)| dist(&dots[i], &dots[j])).fold(f64::INFINITY, f64::min),
        Linkage::Average => {
            let total: f64 = pairs.map(|(i, j)| dist(&dots[i], &dots[j])).sum();
            total / (a.len() * b.len()) as f64
        }
    }
}

/// Clusters as lists of dots, each sorted canonically, clusters sorted by
/// their first dot.
pub fn oracle_clusters(
    input: &[DotAnnotation],
    linkage: Linkage,
    threshold: f64,
    min_size: usize,
) -> Vec<Vec<DotAnnotation>> {
    let mut dots = input.to_vec();
    dots.sort_by(canonical);
    let mut clusters: Vec<Option<Vec<usize>>> = (0..dots.len()).map(|i| Some(vec![i])).collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..clusters.len() {
            let Some(a) = &clusters[i] else { continue };
            for j in i + 1..clusters.len() {
                let Some(b) = &clusters[j] else { continue };
                let shared = a.iter().any(|&p| b.iter().any(|&q| dots[p].user_id == dots[q].user_id));
                if shared {
                    continue;
                }
                let d = linkage_distance(&dots, a, b, linkage);
                if d <= threshold && best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else { break };
        let b = clusters[j].take().unwrap();
        clusters[i].as_mut().unwrap().extend(b);
    }
    let mut out: Vec<Vec<DotAnnotation>> = clusters
        .into_iter()
        .flatten()
        .filter(|c| c.len() >= min_size)
        .map(|mut c| {
            c.sort_unstable();
            c.into_iter().map(|i| dots[i].clone()).collect()
        })
        .collect();
    out.sort_by(|a, b| canonical(&a[0], &b[0]));
    out
}

/// Library output in the oracle's shape.
pub fn normalize(objects: &[AggregatedObject]) -> Vec<Vec<DotAnnotation>> {
    let mut out: Vec<Vec<DotAnnotation>> = objects
        .iter()
        .map(|o| {
            let mut m = o.members.clone();
            m.sort_by(canonical);
            m
        })
        .collect();
    out.sort_by(|a, b| canonical(&a[0], &b[0]));
    out
}

/// Medoid by direct minimization; sums within 1e-9 relative of the minimum
/// tie and go to the smallest `(y, x)`.
pub fn oracle_medoid(points: &[(f64, f64)]) -> (f64, f64) {
    let cost = |p: &(f64, f64)| -> f64 {
        points.iter().map(|q| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()).sum()
    };
    let costs: Vec<f64> = points.iter().map(cost).collect();
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-9 * min.max(1.0);
    points
        .iter()
        .zip(&costs)
        .filter(|(_, &c)| c <= min + tol)
        .map(|(p, _)| *p)
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)))
        .unwrap()
}
