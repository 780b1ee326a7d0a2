//! Builds the fixture catalog and prints a manifest plus a few segment
//! descriptors.

use otfstream::content::{Catalog, CatalogConfig, RepresentationId, SegmentLookup};

fn main() {
    let catalog = Catalog::new(&CatalogConfig::fixture(2.0)).expect("fixture catalog");
    let manifest = catalog.manifest_for("seq0").expect("known sequence");
    println!("{}", serde_json::to_string_pretty(&manifest).unwrap());

    for rank in 1..=5 {
        let desc = catalog
            .descriptor("seq0", RepresentationId::new(rank), 3)
            .unwrap();
        let how = match catalog.get_segment(&desc).unwrap() {
            SegmentLookup::Stored(_) => "stored",
            SegmentLookup::NotStored => "needs transcode",
        };
        println!("{} {} bytes, {how}", desc.path(), desc.size);
    }
}
