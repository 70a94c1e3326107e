//! Group one image's dots into consensus objects and compare linkages.
//!
//! ```text
//! cargo run --example clustering
//! ```

use fgcount::cluster::{cluster_with_stats, ClusterParams, Linkage};
use fgcount::{Attribute, DotAnnotation, Label, Responses};

fn dot(user: &str, x: f64, y: f64, species: Label) -> DotAnnotation {
    DotAnnotation {
        image_id: "beach".into(),
        user_id: user.into(),
        x,
        y,
        responses: Responses::new(species, Label::Unknown, Label::Class0),
    }
}

fn main() -> fgcount::Result<()> {
    use Label::*;
    let dots = vec![
        // Two animals lying close together, each clicked by three people.
        dot("u1", 100.0, 100.0, Class0),
        dot("u2", 102.0, 99.0, Class0),
        dot("u3", 101.0, 103.0, Class1),
        dot("u1", 118.0, 101.0, Class1),
        dot("u2", 120.0, 100.0, Class1),
        dot("u3", 119.0, 98.0, Class1),
        // A lone click far away.
        dot("u4", 400.0, 300.0, Class0),
        // A chain of single clicks 20 px apart.
        dot("u5", 200.0, 200.0, Unknown),
        dot("u6", 220.0, 200.0, Unknown),
        dot("u7", 240.0, 200.0, Unknown),
        dot("u8", 260.0, 200.0, Unknown),
    ];

    for linkage in [Linkage::Average, Linkage::Single] {
        let params = ClusterParams { linkage, ..ClusterParams::default() };
        let outcome = cluster_with_stats(&dots, &params)?;
        println!("{linkage} linkage: {} objects, {} dots discarded", outcome.objects.len(), outcome.discarded);
        for o in &outcome.objects {
            println!(
                "  medoid ({:.1}, {:.1})  {} members  species {}",
                o.medoid.x,
                o.medoid.y,
                o.n_members(),
                Attribute::Species.label_name(o.labels.get(Attribute::Species))
            );
        }
    }
    Ok(())
}
