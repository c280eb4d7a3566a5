mod common;

use std::time::Duration;

use moviebench::services::proto::{codes, Section};
use moviebench::services::MovieClient;
use moviebench::topology::Deployment;

#[test]
fn browse_review_rent_on_both_deployments() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    common::small_dataset(&data, 20, 7);
    let t = common::fast_topology();
    for (i, d) in [Deployment::Microservices, Deployment::Monolith].into_iter().enumerate() {
        let work = dir.path().join(format!("work{i}"));
        let mut h = common::launch_tasks(&t, d, &data, &work, None);
        let c = MovieClient::connect(h.entry_addr(), Duration::from_secs(5)).unwrap();
        let page = c.browse(3).unwrap();
        assert_eq!(page.sections.len(), 8);
        assert!(page.section(Section::Plot).is_ok());
        let before = page.rating().unwrap();
        let (id, after) = c.compose_review(1, 3, b"fine", 4).unwrap();
        assert!(id > 0);
        assert_eq!(after.count, before.count + 1);
        assert_eq!(after.sum, before.sum + 4);
        assert_eq!(c.browse(3).unwrap().rating().unwrap(), after);
        let err = c.compose_review(1, 3, b"x", 0).unwrap_err();
        assert_eq!(err.code(), Some(codes::INVALID_STARS));
        let nf = c.browse(10_000).unwrap_err();
        assert_eq!(nf.code(), Some(codes::NOT_FOUND));
        let r = c.rent(2, 4, 3).unwrap();
        assert_eq!(r.bytes, 256 << 10);
        assert_eq!(r.manifest.chunk_count, 4);
        let s1 = h.shutdown();
        let s2 = h.shutdown();
        assert_eq!(s1, s2);
        assert!(s1.forced().is_empty());
    }
}
