use burnscar::indices::IndexKind;
use burnscar_demo::{burned_polarity, Explorer};

#[test]
fn same_seed_same_scene() {
    let a = Explorer::generate(11, 96).unwrap();
    let b = Explorer::generate(11, 96).unwrap();
    let c = Explorer::generate(12, 96).unwrap();
    assert_eq!(a.true_color().unwrap(), b.true_color().unwrap());
    assert_ne!(a.true_color().unwrap(), c.true_color().unwrap());
    assert_eq!(a.burned_fraction(), b.burned_fraction());
}

#[test]
fn every_index_can_be_thresholded() {
    let mut e = Explorer::generate(5, 128).unwrap();
    assert!(e.burned_fraction() > 0.0);
    for kind in [IndexKind::Nbr, IndexKind::Dnbr, IndexKind::Ndvi, IndexKind::Bais2] {
        let image = e.compute(kind).unwrap();
        assert_eq!(image.len(), 128 * 128 * 4);
        let (lo, hi) = e.range().unwrap();
        assert!(lo.is_finite() && hi.is_finite() && lo < hi, "{kind:?}: {lo}..{hi}");
        let scores: Vec<f64> = (0..=10)
            .map(|i| e.threshold(lo + (hi - lo) * i as f64 / 10.0).unwrap().1)
            .collect();
        assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)), "{kind:?}: {scores:?}");
        // Some threshold beats labelling the whole scene one way.
        let best = scores.iter().copied().fold(0.0, f64::max);
        assert!(best > scores[0].min(scores[10]), "{kind:?}: {scores:?}");
    }
}

#[test]
fn overlay_marks_only_clear_pixels() {
    let mut e = Explorer::generate(9, 64).unwrap();
    e.compute(IndexKind::Dnbr).unwrap();
    let (overlay, _) = e.threshold(0.27).unwrap();
    for px in overlay.chunks(4) {
        assert!(px[3] == 0 || px[3] == 200);
    }
    assert_eq!(burned_polarity(IndexKind::Dnbr), burnscar::indices::Polarity::Greater);
    assert_eq!(burned_polarity(IndexKind::Ndvi), burnscar::indices::Polarity::Less);
}
