//! Byte-capacity LRU: fill past capacity and watch the oldest entries go.

use std::sync::Arc;

use otfstream::backend::SegmentCache;
use otfstream::content::{RepresentationId, SegmentDescriptor, SegmentPayload};

fn desc(index: u32) -> SegmentDescriptor {
    SegmentDescriptor {
        sequence: Arc::from("demo"),
        rep: RepresentationId::new(2),
        index,
        duration: 2.0,
        size: 400,
    }
}

fn main() {
    let mut cache = SegmentCache::new(1_000);
    for i in 0..2 {
        cache
            .put(desc(i), SegmentPayload::new(400, i as u64))
            .unwrap();
    }
    // touching 0 makes 1 the eviction candidate
    cache.get(&desc(0));
    let evicted = cache.put(desc(2), SegmentPayload::new(400, 2)).unwrap();
    println!(
        "evicted: {:?}",
        evicted.iter().map(|d| d.index).collect::<Vec<_>>()
    );
    println!(
        "{} entries, {} of {} bytes",
        cache.len(),
        cache.current_bytes(),
        cache.capacity()
    );
    match cache.put(desc(9), SegmentPayload::new(5_000, 9)) {
        Ok(_) => unreachable!(),
        Err(e) => println!("rejected: {e}"),
    }
}
