//! Annotation and image-metadata tables: parsing, validation, temporal split.
//!
//! Two tables feed the pipeline. The image table (`image_id,width,height,timestamp`)
//! supplies dimensions and capture times; the annotation table
//! (`image_id,user_id,x,y,species,sex,age`) holds one dot per row. Both may be
//! CSV or JSON lines with the same field names. Blank or missing attribute
//! cells are normalized to [`Label::Unknown`] at parse time.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::attributes::{Attribute, Label, Responses};
use crate::error::{Error, Result};

pub const ANNOTATION_HEADER: [&str; 7] = ["image_id", "user_id", "x", "y", "species", "sex", "age"];
pub const IMAGE_HEADER: [&str; 4] = ["image_id", "width", "height", "timestamp"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// `.jsonl` / `.ndjson` are JSON lines, anything else is CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("jsonl") || e.eq_ignore_ascii_case("ndjson") => {
                Format::Jsonl
            }
            _ => Format::Csv,
        }
    }
}

/// One crowd-sourced click.
#[derive(Clone, Debug, PartialEq)]
pub struct DotAnnotation {
    pub image_id: String,
    pub user_id: String,
    pub x: f64,
    pub y: f64,
    pub responses: Responses,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub timestamp: DateTime<Utc>,
}

impl ImageRecord {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<DotAnnotation>,
}

impl Dataset {
    /// Annotations grouped per image, in image-table order. Images without
    /// annotations get an empty list.
    pub fn by_image(&self) -> Vec<(&ImageRecord, Vec<&DotAnnotation>)> {
        let index: HashMap<&str, usize> = self
            .images
            .iter()
            .enumerate()
            .map(|(i, im)| (im.image_id.as_str(), i))
            .collect();
        let mut groups: Vec<Vec<&DotAnnotation>> = vec![Vec::new(); self.images.len()];
        for a in &self.annotations {
            if let Some(&i) = index.get(a.image_id.as_str()) {
                groups[i].push(a);
            }
        }
        self.images.iter().zip(groups).collect()
    }
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Deserialize)]
struct RawImage {
    image_id: String,
    width: i64,
    height: i64,
    timestamp: String,
}

#[derive(Deserialize)]
struct RawAnnotation {
    image_id: String,
    user_id: String,
    x: f64,
    y: f64,
    #[serde(flatten)]
    responses: Responses,
}

fn image_from_fields(line: u64, id: &str, w: i64, h: i64, ts: &str) -> Result<ImageRecord> {
    if id.is_empty() {
        return Err(Error::parse(line, "empty image_id"));
    }
    if w < 1 || h < 1 || w > u32::MAX as i64 || h > u32::MAX as i64 {
        return Err(Error::parse(line, format!("invalid image dimensions {w}x{h}")));
    }
    let timestamp = DateTime::parse_from_rfc3339(ts.trim())
        .map_err(|e| Error::parse(line, format!("invalid timestamp '{ts}': {e}")))?
        .with_timezone(&Utc);
    Ok(ImageRecord {
        image_id: id.to_string(),
        width: w as u32,
        height: h as u32,
        timestamp,
    })
}

fn check_coordinate(line: u64, name: &str, v: f64) -> Result<f64> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::parse(line, format!("invalid {name} coordinate {v}")));
    }
    Ok(v)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::read(path, e))
}

fn csv_reader<R: Read>(reader: R, expected: &[&str]) -> Result<csv::Reader<R>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(1, format!("unreadable header: {e}")))?;
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::parse(
            1,
            format!("expected header '{}', found '{}'", expected.join(","), got.join(",")),
        ));
    }
    Ok(rdr)
}

fn csv_line(err: &csv::Error, fallback: u64) -> u64 {
    err.position().map(|p| p.line()).unwrap_or(fallback)
}

/// Parses an image metadata table.
pub fn parse_images<R: Read>(reader: R, format: Format) -> Result<Vec<ImageRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut push = |line: u64, rec: ImageRecord, out: &mut Vec<ImageRecord>| -> Result<()> {
        if !seen.insert(rec.image_id.clone()) {
            return Err(Error::parse(line, format!("duplicate image_id '{}'", rec.image_id)));
        }
        out.push(rec);
        Ok(())
    };
    match format {
        Format::Csv => {
            let mut rdr = csv_reader(reader, &IMAGE_HEADER)?;
            let mut record = csv::StringRecord::new();
            let mut last = 1;
            loop {
                match rdr.read_record(&mut record) {
                    Ok(false) => break,
                    Ok(true) => {}
                    Err(e) => return Err(Error::parse(csv_line(&e, last + 1), e.to_string())),
                }
                let line = record.position().map(|p| p.line()).unwrap_or(last + 1);
                last = line;
                let int = |i: usize, name: &str| -> Result<i64> {
                    record[i]
                        .trim()
                        .parse::<i64>()
                        .map_err(|_| Error::parse(line, format!("invalid {name} '{}'", &record[i])))
                };
                let rec = image_from_fields(line, record[0].trim(), int(1, "width")?, int(2, "height")?, &record[3])?;
                push(line, rec, &mut out)?;
            }
        }
        Format::Jsonl => {
            for (i, line_text) in BufReader::new(reader).lines().enumerate() {
                let line = i as u64 + 1;
                let text = line_text.map_err(|e| Error::parse(line, e.to_string()))?;
                if text.trim().is_empty() {
                    continue;
                }
                let raw: RawImage = serde_json::from_str(&text)
                    .map_err(|e| Error::parse(line, e.to_string()))?;
                let rec = image_from_fields(line, &raw.image_id, raw.width, raw.height, &raw.timestamp)?;
                push(line, rec, &mut out)?;
            }
        }
    }
    Ok(out)
}

/// Parses an annotation table, returning each dot with its source line number.
/// Row order is preserved.
pub fn parse_annotation_rows<R: Read>(reader: R, format: Format) -> Result<Vec<(u64, DotAnnotation)>> {
    let mut out = Vec::new();
    match format {
        Format::Csv => {
            let mut rdr = csv_reader(reader, &ANNOTATION_HEADER)?;
            let mut record = csv::StringRecord::new();
            let mut last = 1;
            loop {
                match rdr.read_record(&mut record) {
                    Ok(false) => break,
                    Ok(true) => {}
                    Err(e) => return Err(Error::parse(csv_line(&e, last + 1), e.to_string())),
                }
                let line = record.position().map(|p| p.line()).unwrap_or(last + 1);
                last = line;
                let coord = |i: usize, name: &str| -> Result<f64> {
                    let v = record[i]
                        .trim()
                        .parse::<f64>()
                        .map_err(|_| Error::parse(line, format!("invalid {name} '{}'", &record[i])))?;
                    check_coordinate(line, name, v)
                };
                let (x, y) = (coord(2, "x")?, coord(3, "y")?);
                let mut responses = Responses::default();
                for (k, a) in Attribute::ALL.into_iter().enumerate() {
                    let cell = &record[4 + k];
                    let label = a
                        .parse_label(cell)
                        .ok_or_else(|| Error::parse(line, format!("invalid {a} value '{cell}'")))?;
                    responses.set(a, label);
                }
                let (image_id, user_id) = (record[0].trim(), record[1].trim());
                if image_id.is_empty() || user_id.is_empty() {
                    return Err(Error::parse(line, "empty image_id or user_id"));
                }
                out.push((
                    line,
                    DotAnnotation {
                        image_id: image_id.to_string(),
                        user_id: user_id.to_string(),
                        x,
                        y,
                        responses,
                    },
                ));
            }
        }
        Format::Jsonl => {
            for (i, line_text) in BufReader::new(reader).lines().enumerate() {
                let line = i as u64 + 1;
                let text = line_text.map_err(|e| Error::parse(line, e.to_string()))?;
                if text.trim().is_empty() {
                    continue;
                }
                let raw: RawAnnotation = serde_json::from_str(&text)
                    .map_err(|e| Error::parse(line, e.to_string()))?;
                if raw.image_id.is_empty() || raw.user_id.is_empty() {
                    return Err(Error::parse(line, "empty image_id or user_id"));
                }
                out.push((
                    line,
                    DotAnnotation {
                        image_id: raw.image_id,
                        user_id: raw.user_id,
                        x: check_coordinate(line, "x", raw.x)?,
                        y: check_coordinate(line, "y", raw.y)?,
                        responses: raw.responses,
                    },
                ));
            }
        }
    }
    Ok(out)
}

/// Checks parsed rows against the image table: every referenced image must
/// exist and every dot must lie inside its image.
pub fn resolve_annotations(
    rows: Vec<(u64, DotAnnotation)>,
    images: &[ImageRecord],
) -> Result<Vec<DotAnnotation>> {
    let index: HashMap<&str, &ImageRecord> =
        images.iter().map(|im| (im.image_id.as_str(), im)).collect();
    let mut missing = BTreeSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, dot) in rows {
        match index.get(dot.image_id.as_str()) {
            None => {
                missing.insert(dot.image_id.clone());
            }
            Some(im) if !im.contains(dot.x, dot.y) => {
                return Err(Error::parse(line, "coordinate out of bounds"));
            }
            Some(_) => out.push(dot),
        }
    }
    if !missing.is_empty() {
        return Err(Error::UnknownImages(missing.into_iter().collect()));
    }
    Ok(out)
}

pub fn parse_image_file(path: &Path, format: Format) -> Result<Vec<ImageRecord>> {
    parse_images(open(path)?, format)
}

/// Parses an annotation file together with its image metadata file.
pub fn parse_annotation_file(annotations: &Path, images: &Path, format: Format) -> Result<Dataset> {
    let images = parse_image_file(images, format)?;
    let rows = parse_annotation_rows(open(annotations)?, format)?;
    let annotations = resolve_annotations(rows, &images)?;
    Ok(Dataset { images, annotations })
}

/// Like [`parse_annotation_file`], inferring each file's format from its extension.
pub fn load_dataset(annotations: &Path, images: &Path) -> Result<Dataset> {
    let images = parse_image_file(images, Format::from_path(images))?;
    let rows = parse_annotation_rows(open(annotations)?, Format::from_path(annotations))?;
    let annotations = resolve_annotations(rows, &images)?;
    Ok(Dataset { images, annotations })
}

// ---------------------------------------------------------------------------
// Writing

pub fn write_annotations<W: Write>(writer: W, dots: &[DotAnnotation], format: Format) -> Result<()> {
    write_annotations_iter(writer, dots, format)
}

/// Streams annotations from any iterator, e.g. several images in sequence.
pub fn write_annotations_iter<'a, W, I>(writer: W, dots: I, format: Format) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a DotAnnotation>,
{
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(writer);
            w.write_record(ANNOTATION_HEADER)?;
            for d in dots {
                let [s, x, a] = d.responses.0;
                w.write_record([
                    d.image_id.as_str(),
                    d.user_id.as_str(),
                    &d.x.to_string(),
                    &d.y.to_string(),
                    Attribute::Species.label_name(s),
                    Attribute::Sex.label_name(x),
                    Attribute::Age.label_name(a),
                ])?;
            }
            w.flush().map_err(csv::Error::from)?;
        }
        Format::Jsonl => {
            let mut w = std::io::BufWriter::new(writer);
            for d in dots {
                let mut obj = serde_json::Map::new();
                obj.insert("image_id".into(), d.image_id.clone().into());
                obj.insert("user_id".into(), d.user_id.clone().into());
                obj.insert("x".into(), d.x.into());
                obj.insert("y".into(), d.y.into());
                for (a, l) in d.responses.iter() {
                    obj.insert(a.name().into(), a.label_name(l).into());
                }
                serde_json::to_writer(&mut w, &obj)?;
                w.write_all(b"\n").map_err(serde_json::Error::io)?;
            }
            w.flush().map_err(serde_json::Error::io)?;
        }
    }
    Ok(())
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

pub fn write_images<W: Write>(writer: W, images: &[ImageRecord], format: Format) -> Result<()> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(writer);
            w.write_record(IMAGE_HEADER)?;
            for im in images {
                w.write_record([
                    im.image_id.as_str(),
                    &im.width.to_string(),
                    &im.height.to_string(),
                    &format_timestamp(&im.timestamp),
                ])?;
            }
            w.flush().map_err(csv::Error::from)?;
        }
        Format::Jsonl => {
            let mut w = std::io::BufWriter::new(writer);
            for im in images {
                let obj = serde_json::json!({
                    "image_id": im.image_id,
                    "width": im.width,
                    "height": im.height,
                    "timestamp": format_timestamp(&im.timestamp),
                });
                serde_json::to_writer(&mut w, &obj)?;
                w.write_all(b"\n").map_err(serde_json::Error::io)?;
            }
            w.flush().map_err(serde_json::Error::io)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Validation

/// Summary of the clustering stage, attached by the aggregation pipeline.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusteringSummary {
    pub objects: usize,
    /// Dots that ended up in clusters below the minimum size.
    pub discarded_dots: usize,
    pub objects_per_image: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_images: usize,
    pub n_annotations: usize,
    /// attribute name -> label name -> count (unknown included).
    pub class_counts: BTreeMap<String, BTreeMap<String, usize>>,
    pub annotations_per_image: BTreeMap<String, usize>,
    pub annotations_per_user: BTreeMap<String, usize>,
    pub users_per_image: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clustering: Option<ClusteringSummary>,
}

impl ValidationReport {
    pub fn class_count(&self, attribute: Attribute, label: Label) -> usize {
        self.class_counts
            .get(attribute.name())
            .and_then(|m| m.get(attribute.label_name(label)))
            .copied()
            .unwrap_or(0)
    }
}

/// Tallies annotation statistics. Never fails; suspicious input only produces warnings.
pub fn validate_dataset(images: &[ImageRecord], annotations: &[DotAnnotation]) -> ValidationReport {
    let mut report = ValidationReport {
        n_images: images.len(),
        n_annotations: annotations.len(),
        ..Default::default()
    };
    for a in Attribute::ALL {
        let m = report.class_counts.entry(a.name().to_string()).or_default();
        for l in Label::ALL {
            m.insert(a.label_name(l).to_string(), 0);
        }
    }
    for im in images {
        report.annotations_per_image.insert(im.image_id.clone(), 0);
        report.users_per_image.insert(im.image_id.clone(), 0);
    }

    let mut users: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut seen: HashSet<(&str, &str, u64, u64)> = HashSet::new();
    let mut duplicates: BTreeMap<(&str, &str, u64, u64), usize> = BTreeMap::new();
    for d in annotations {
        for (a, l) in d.responses.iter() {
            *report
                .class_counts
                .get_mut(a.name())
                .and_then(|m| m.get_mut(a.label_name(l)))
                .expect("all labels pre-seeded") += 1;
        }
        *report.annotations_per_image.entry(d.image_id.clone()).or_default() += 1;
        *report.annotations_per_user.entry(d.user_id.clone()).or_default() += 1;
        users.entry(&d.image_id).or_default().insert(&d.user_id);
        let key = (d.image_id.as_str(), d.user_id.as_str(), d.x.to_bits(), d.y.to_bits());
        if !seen.insert(key) {
            *duplicates.entry(key).or_default() += 1;
        }
    }
    for (image, u) in users {
        report.users_per_image.insert(image.to_string(), u.len());
    }
    for ((image, user, x, y), n) in duplicates {
        report.warnings.push(format!(
            "duplicate dot: image {image}, user {user} at ({}, {}) repeated {n} time(s)",
            f64::from_bits(x),
            f64::from_bits(y)
        ));
    }
    report
}

// ---------------------------------------------------------------------------
// Temporal split

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Splits images by capture time: `t < train_before` is train,
/// `train_before <= t < val_before` is validation, the rest is test.
/// Input order is kept within each part.
pub fn temporal_split(
    images: &[ImageRecord],
    train_before: DateTime<Utc>,
    val_before: DateTime<Utc>,
) -> Result<DatasetSplit> {
    if train_before > val_before {
        return Err(Error::InvalidParameter(format!(
            "split boundaries out of order: {} > {}",
            format_timestamp(&train_before),
            format_timestamp(&val_before)
        )));
    }
    let mut split = DatasetSplit::default();
    for im in images {
        let part = if im.timestamp < train_before {
            &mut split.train
        } else if im.timestamp < val_before {
            &mut split.val
        } else {
            &mut split.test
        };
        part.push(im.image_id.clone());
    }
    Ok(split)
}
