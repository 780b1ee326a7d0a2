//! Sixteen clients ask for the same untranscoded segment at once; one job
//! runs and everyone gets the same bytes.

use std::sync::Arc;

use futures::future::join_all;
use otfstream::backend::{Backend, BackendPolicy, Variant};
use otfstream::content::{Catalog, CatalogConfig, RepresentationId};
use otfstream::runtime::{spawn_with_handle, VirtualRuntime};
use otfstream::transcode::{LatencyModel, LatencyModelConfig, MockTranscoder};

fn main() {
    let vrt = VirtualRuntime::new();
    let rt = vrt.handle();
    let catalog = Arc::new(Catalog::new(&CatalogConfig::fixture(2.0)).unwrap());
    let model = LatencyModel::new(&LatencyModelConfig::default()).unwrap();
    let tx = Arc::new(MockTranscoder::new(catalog.clone(), model, rt.clone()));
    let backend = Backend::new(
        catalog.clone(),
        BackendPolicy::for_variant(Variant::Tc, 4),
        tx,
        rt.clone(),
    );
    backend.start();

    let desc = catalog
        .descriptor("seq1", RepresentationId::new(2), 4)
        .unwrap();
    let b = backend.clone();
    let h = rt.clone();
    let outcomes = vrt
        .block_on(async move {
            let waiters = (0..16).map(|_| {
                let b = b.clone();
                let d = desc.clone();
                spawn_with_handle(&*h, async move { b.handle(&d).await })
            });
            let out = join_all(waiters).await;
            (out, h.now())
        })
        .unwrap();
    let (results, finished) = outcomes;
    for r in &results {
        let o = r.as_ref().unwrap().as_ref().unwrap();
        print!("{:?} ", o.path);
    }
    println!();
    println!(
        "jobs run: {}, all served at t={finished:.3}s",
        backend.jobs().len()
    );
    println!("{:?}", backend.stats());
}
