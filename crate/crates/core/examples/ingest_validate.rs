//! Parse annotation and image tables, print a validation summary and split
//! the images by capture time.
//!
//! ```text
//! cargo run --example ingest_validate
//! ```

use std::io::Cursor;

use chrono::{TimeZone, Utc};
use fgcount::ingest::{parse_annotation_rows, parse_images, resolve_annotations, Format};
use fgcount::{temporal_split, validate_dataset, Attribute, Label};

const IMAGES: &str = "\
image_id,width,height,timestamp
colony_a,640,480,2014-11-02T09:15:00Z
colony_b,640,480,2014-12-20T13:40:00Z
colony_c,640,480,2015-01-18T07:05:00Z
";

const ANNOTATIONS: &str = "\
image_id,user_id,x,y,species,sex,age
colony_a,ana,120.5,88.0,elephant,male,adult
colony_a,ben,122.0,90.5,elephant,,adult
colony_a,ana,300.0,210.0,fur,female,pup
colony_b,ben,50.0,60.0,,,
colony_b,cal,52.5,61.0,fur,female,
colony_c,cal,400.0,300.0,elephant,male,adult
";

fn main() -> fgcount::Result<()> {
    let images = parse_images(Cursor::new(IMAGES), Format::Csv)?;
    let rows = parse_annotation_rows(Cursor::new(ANNOTATIONS), Format::Csv)?;
    let dots = resolve_annotations(rows, &images)?;

    let report = validate_dataset(&images, &dots);
    println!("{} images, {} dots", report.n_images, report.n_annotations);
    for a in Attribute::ALL {
        let counts: Vec<String> = Label::ALL
            .iter()
            .map(|&l| format!("{}={}", a.label_name(l), report.class_count(a, l)))
            .collect();
        println!("  {a:<8} {}", counts.join(" "));
    }
    for (user, n) in &report.annotations_per_user {
        println!("  user {user}: {n} dots");
    }
    for w in &report.warnings {
        println!("  warning: {w}");
    }

    let split = temporal_split(
        &images,
        Utc.with_ymd_and_hms(2014, 12, 1, 0, 0, 0).unwrap(),
        Utc.with_ymd_and_hms(2015, 1, 1, 0, 0, 0).unwrap(),
    )?;
    println!("train {:?}  val {:?}  test {:?}", split.train, split.val, split.test);

    // Malformed rows are reported with their line number.
    let bad = "image_id,user_id,x,y,species,sex,age\ncolony_a,ana,12,oops,,,\n";
    if let Err(e) = parse_annotation_rows(Cursor::new(bad), Format::Csv) {
        println!("rejected: {e}");
    }
    Ok(())
}
