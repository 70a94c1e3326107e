//! Synthetic scenes and crowd annotators.
//!
//! # Random streams
//!
//! All randomness comes from ChaCha8. The 256-bit key is four SplitMix64
//! outputs seeded with `seed`, written little-endian. Image `i` uses ChaCha
//! stream `i`; within it, lane `0` (scene layout) starts at word 0 and lane
//! `u + 1` (user `u`) starts at word `(u + 1) * 2^36`. Uniform variates take
//! the top 53 bits of the next u64. Normals use Box-Muller (cosine branch, two
//! uniforms per variate), Poisson counts use inversion by sequential search
//! (normal approximation above a mean of 500), categorical draws use
//! inversion over the cumulative probabilities.

use std::f64::consts::TAU;
use std::io::Write;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::attributes::{Attribute, Label, Responses, NUM_ATTRIBUTES};
use crate::cluster::{AggregatedObject, Point};
use crate::error::{Error, Result};
use crate::ingest::{DotAnnotation, ImageRecord};

/// Attempts per object when placing objects under `min_separation`.
pub const MAX_PLACEMENT_TRIES: usize = 10_000;
/// Added to `2 * sigma_user` to form the oracle matching radius.
pub const MATCH_EPSILON: f64 = 1.0;

/// Response distribution per true label: `matrix[true][response]`.
pub type Confusion = [[f64; 3]; 3];

pub const IDENTITY_CONFUSION: Confusion = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub n_images: usize,
    /// Poisson mean of objects per image.
    pub mean_objects: f64,
    pub min_separation: f64,
    pub n_users: usize,
    /// Probability that a user annotates a given image.
    pub participation: f64,
    /// Standard deviation of each dot's displacement, per axis, in pixels.
    pub sigma_user: f64,
    /// Per attribute.
    pub confusion: [Confusion; NUM_ATTRIBUTES],
    /// Per attribute, probabilities of the true label (class0, class1, unknown).
    pub priors: [[f64; 3]; NUM_ATTRIBUTES],
    pub start_time: DateTime<Utc>,
    /// Image timestamps are spread evenly over this many seconds.
    pub span_seconds: i64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            width: 1280,
            height: 960,
            n_images: 10,
            mean_objects: 34.0,
            min_separation: 0.0,
            n_users: 11,
            participation: 1.0,
            sigma_user: 3.0,
            confusion: [IDENTITY_CONFUSION; NUM_ATTRIBUTES],
            priors: [[0.5, 0.5, 0.0]; NUM_ATTRIBUTES],
            start_time: Utc.with_ymd_and_hms(2014, 11, 1, 0, 0, 0).unwrap(),
            span_seconds: 92 * 24 * 3600,
        }
    }
}

fn check_distribution(what: &str, p: &[f64; 3]) -> Result<()> {
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!("{what} must be probabilities summing to 1, got {p:?}")));
    }
    Ok(())
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("image dimensions must be positive".into()));
        }
        if !(self.mean_objects.is_finite() && self.mean_objects >= 0.0) {
            return Err(Error::InvalidParameter(format!("invalid mean_objects {}", self.mean_objects)));
        }
        if !(self.min_separation.is_finite() && self.min_separation >= 0.0) {
            return Err(Error::InvalidParameter(format!("invalid min_separation {}", self.min_separation)));
        }
        if !(0.0..=1.0).contains(&self.participation) {
            return Err(Error::InvalidParameter(format!("invalid participation {}", self.participation)));
        }
        if !(self.sigma_user.is_finite() && self.sigma_user >= 0.0) {
            return Err(Error::InvalidParameter(format!("invalid sigma_user {}", self.sigma_user)));
        }
        if self.span_seconds < 0 {
            return Err(Error::InvalidParameter("span_seconds must be nonnegative".into()));
        }
        for a in Attribute::ALL {
            check_distribution(&format!("{a} prior"), &self.priors[a.index()])?;
            for (t, row) in self.confusion[a.index()].iter().enumerate() {
                check_distribution(&format!("{a} confusion row {t}"), row)?;
            }
        }
        Ok(())
    }

    pub fn image_id(&self, image_index: usize) -> String {
        format!("img{image_index:05}")
    }

    pub fn user_id(&self, user: usize) -> String {
        format!("u{user:04}")
    }

    pub fn image_record(&self, image_index: usize) -> ImageRecord {
        let offset = if self.n_images == 0 {
            0
        } else {
            (self.span_seconds as i128 * image_index as i128 / self.n_images as i128) as i64
        };
        ImageRecord {
            image_id: self.image_id(image_index),
            width: self.width,
            height: self.height,
            timestamp: self.start_time + Duration::seconds(offset),
        }
    }
}

// ---------------------------------------------------------------------------
// Random streams

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One reproducible random stream.
pub struct SimRng(ChaCha8Rng);

impl SimRng {
    /// Stream for `(seed, image_index, lane)`, see the module docs.
    pub fn new(seed: u64, image_index: u64, lane: u64) -> Self {
        let mut state = seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(image_index);
        rng.set_word_pos((lane as u128) << 36);
        SimRng(rng)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }

    pub fn poisson(&mut self, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        if mean > 500.0 {
            return (mean + mean.sqrt() * self.normal()).round().max(0.0) as u64;
        }
        let u = self.uniform();
        let mut k = 0u64;
        let mut p = (-mean).exp();
        let mut cdf = p;
        while u >= cdf {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
            if p == 0.0 && cdf <= u {
                break;
            }
        }
        k
    }

    /// Index drawn from `probs` by inversion.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

// ---------------------------------------------------------------------------
// Scenes

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueObject {
    pub location: Point,
    pub labels: Responses,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimScene {
    pub image_id: String,
    pub image_index: usize,
    pub objects: Vec<TrueObject>,
    pub dots: Vec<DotAnnotation>,
    /// `provenance[i]` is the index of the object that dot `i` marks.
    pub provenance: Vec<usize>,
}

/// Draws the true objects of one image. The result depends only on the
/// config and `image_index`.
pub fn generate_scene(config: &SimConfig, image_index: usize) -> Result<SimScene> {
    config.validate()?;
    let mut rng = SimRng::new(config.seed, image_index as u64, 0);
    let n = rng.poisson(config.mean_objects) as usize;
    let (w, h) = (config.width as f64, config.height as f64);
    let mut objects: Vec<TrueObject> = Vec::with_capacity(n);
    for k in 0..n {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let p = Point::new(rng.uniform() * w, rng.uniform() * h);
            if objects.iter().all(|o| o.location.distance(p) >= config.min_separation) {
                placed = Some(p);
                break;
            }
        }
        let Some(location) = placed else {
            return Err(Error::Infeasible(format!(
                "could not place object {} of {n} in image {image_index} with min_separation {} after {MAX_PLACEMENT_TRIES} tries; lower the object density or the separation",
                k + 1,
                config.min_separation
            )));
        };
        let mut labels = Responses::default();
        for a in Attribute::ALL {
            let l = rng.categorical(&config.priors[a.index()]);
            labels.set(a, Label::from_index(l).expect("3 labels"));
        }
        objects.push(TrueObject { location, labels });
    }
    Ok(SimScene {
        image_id: config.image_id(image_index),
        image_index,
        objects,
        dots: Vec::new(),
        provenance: Vec::new(),
    })
}

/// Emits the dots of every participating user: one per object, displaced by
/// isotropic Gaussian noise (clamped into the image), with each response drawn
/// through the confusion matrix. Returns the dots and their provenance.
pub fn simulate_annotations(scene: &SimScene, config: &SimConfig) -> (Vec<DotAnnotation>, Vec<usize>) {
    let (xmax, ymax) = ((config.width as f64).next_down(), (config.height as f64).next_down());
    let mut dots = Vec::new();
    let mut provenance = Vec::new();
    for u in 0..config.n_users {
        let mut rng = SimRng::new(config.seed, scene.image_index as u64, u as u64 + 1);
        if rng.uniform() >= config.participation {
            continue;
        }
        let user_id = config.user_id(u);
        for (k, obj) in scene.objects.iter().enumerate() {
            let dx = config.sigma_user * rng.normal();
            let dy = config.sigma_user * rng.normal();
            let mut responses = Responses::default();
            for a in Attribute::ALL {
                let truth = obj.labels.get(a).index();
                let r = rng.categorical(&config.confusion[a.index()][truth]);
                responses.set(a, Label::from_index(r).expect("3 labels"));
            }
            dots.push(DotAnnotation {
                image_id: scene.image_id.clone(),
                user_id: user_id.clone(),
                x: (obj.location.x + dx).clamp(0.0, xmax),
                y: (obj.location.y + dy).clamp(0.0, ymax),
                responses,
            });
            provenance.push(k);
        }
    }
    (dots, provenance)
}

/// Scene plus its annotations.
pub fn simulate_scene(config: &SimConfig, image_index: usize) -> Result<SimScene> {
    let mut scene = generate_scene(config, image_index)?;
    let (dots, provenance) = simulate_annotations(&scene, config);
    scene.dots = dots;
    scene.provenance = provenance;
    Ok(scene)
}

// ---------------------------------------------------------------------------
// Oracle

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub n_true: usize,
    pub n_recovered: usize,
    /// `|n_recovered - n_true|`.
    pub count_error: usize,
    pub matched: usize,
    /// `matched / n_true`, 1 when there is nothing to recover.
    pub matched_fraction: f64,
    pub unmatched_true: usize,
    pub unmatched_recovered: usize,
    /// Mean medoid-to-truth distance over matches.
    pub mean_localization_error: Option<f64>,
    /// Per attribute, fraction of matches whose label equals the true label.
    pub label_accuracy: [Option<f64>; NUM_ATTRIBUTES],
}

/// Greedy matching of recovered medoids to true objects, closest pairs first,
/// within `2 * sigma_user + MATCH_EPSILON`.
pub fn oracle_evaluate(scene: &SimScene, aggregated: &[AggregatedObject], sigma_user: f64) -> RecoveryReport {
    let radius = 2.0 * sigma_user + MATCH_EPSILON;
    let mut pairs = Vec::new();
    for (i, o) in aggregated.iter().enumerate() {
        for (j, t) in scene.objects.iter().enumerate() {
            let d = o.medoid.distance(t.location);
            if d <= radius {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_rec = vec![false; aggregated.len()];
    let mut used_true = vec![false; scene.objects.len()];
    let mut matches = Vec::new();
    for (d, i, j) in pairs {
        if !used_rec[i] && !used_true[j] {
            used_rec[i] = true;
            used_true[j] = true;
            matches.push((d, i, j));
        }
    }
    let n_true = scene.objects.len();
    let m = matches.len();
    let label_accuracy = std::array::from_fn(|a| {
        (m > 0).then(|| {
            let attr = Attribute::ALL[a];
            let agree = matches
                .iter()
                .filter(|(_, i, j)| aggregated[*i].labels.get(attr) == scene.objects[*j].labels.get(attr))
                .count();
            agree as f64 / m as f64
        })
    });
    RecoveryReport {
        n_true,
        n_recovered: aggregated.len(),
        count_error: aggregated.len().abs_diff(n_true),
        matched: m,
        matched_fraction: if n_true == 0 { 1.0 } else { m as f64 / n_true as f64 },
        unmatched_true: n_true - m,
        unmatched_recovered: aggregated.len() - m,
        mean_localization_error: (m > 0).then(|| matches.iter().map(|(d, _, _)| d).sum::<f64>() / m as f64),
        label_accuracy,
    }
}

/// One line of the truth JSONL file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub image_id: String,
    pub object: usize,
    pub x: f64,
    pub y: f64,
    pub labels: Responses,
    pub n_dots: usize,
}

pub fn write_truth_jsonl<W: Write>(mut writer: W, scene: &SimScene) -> Result<()> {
    let mut n_dots = vec![0usize; scene.objects.len()];
    for &k in &scene.provenance {
        n_dots[k] += 1;
    }
    for (k, o) in scene.objects.iter().enumerate() {
        let rec = TruthRecord {
            image_id: scene.image_id.clone(),
            object: k,
            x: o.location.x,
            y: o.location.y,
            labels: o.labels,
            n_dots: n_dots[k],
        };
        serde_json::to_writer(&mut writer, &rec)?;
        writer.write_all(b"\n").map_err(serde_json::Error::io)?;
    }
    Ok(())
}
