use medseg_core::metrics::{boundary_bits, boundary_f, dsc, jaccard, jf_scores, nsd, summarize, GridShape, MetricConfig};
use medseg_core::types::{Mask2D, Mask3D};
use medseg_testkit as tk;
use proptest::prelude::*;

fn plane() -> impl Strategy<Value = (usize, usize, Vec<bool>, Vec<bool>)> {
    (1usize..=12, 1usize..=12).prop_flat_map(|(h, w)| {
        (Just(h), Just(w), prop::collection::vec(any::<bool>(), h * w), prop::collection::vec(any::<bool>(), h * w))
    })
}

fn volume() -> impl Strategy<Value = (usize, usize, usize, Vec<bool>, Vec<bool>)> {
    (1usize..=5, 1usize..=6, 1usize..=6).prop_flat_map(|(d, h, w)| {
        let n = d * h * w;
        (Just(d), Just(h), Just(w), prop::collection::vec(any::<bool>(), n), prop::collection::vec(any::<bool>(), n))
    })
}

fn stack(d: usize, h: usize, w: usize, bits: &[bool]) -> Mask3D {
    let slices: Vec<Mask2D> = bits.chunks(h * w).map(|s| Mask2D::new(h, w, s.to_vec()).unwrap()).collect();
    assert_eq!(slices.len(), d);
    Mask3D::from_slices(&slices).unwrap()
}

proptest! {
    #[test]
    fn planar_metrics_match_brute_force((h, w, a, b) in plane(), tau in 0.1f64..5.0, radius in 0.5f64..4.0) {
        let (ga, gb) = (tk::Grid::plane(h, w, a.clone()), tk::Grid::plane(h, w, b.clone()));
        let (ma, mb) = (Mask2D::new(h, w, a).unwrap(), Mask2D::new(h, w, b).unwrap());
        prop_assert!((dsc(&ma, &mb).unwrap() - tk::dice(&ga, &gb)).abs() <= 1e-12);
        prop_assert!((jaccard(&ma, &mb).unwrap() - tk::iou(&ga, &gb)).abs() <= 1e-12);
        prop_assert!((nsd(&ma, &mb, tau).unwrap() - tk::surface_dice(&ga, &gb, tau)).abs() <= 1e-12);
        prop_assert!((boundary_f(&ma, &mb, radius).unwrap() - tk::boundary_f(&ga, &gb, radius)).abs() <= 1e-12);
    }

    #[test]
    fn volumetric_metrics_match_brute_force((d, h, w, a, b) in volume(), tau in 0.1f64..4.0) {
        let (ga, gb) = (tk::Grid::volume(d, h, w, a.clone()), tk::Grid::volume(d, h, w, b.clone()));
        let (ma, mb) = (stack(d, h, w, &a), stack(d, h, w, &b));
        prop_assert!((dsc(&ma, &mb).unwrap() - tk::dice(&ga, &gb)).abs() <= 1e-12);
        prop_assert!((jaccard(&ma, &mb).unwrap() - tk::iou(&ga, &gb)).abs() <= 1e-12);
        prop_assert!((nsd(&ma, &mb, tau).unwrap() - tk::surface_dice(&ga, &gb, tau)).abs() <= 1e-12);
    }

    #[test]
    fn boundaries_match_brute_force((d, h, w, a, _) in volume()) {
        let shape = GridShape { depth: d, height: h, width: w, volumetric: true };
        let got: Vec<(i64, i64, i64)> = boundary_bits(shape, &a)
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| ((i / (h * w)) as i64, ((i / w) % h) as i64, (i % w) as i64))
            .collect();
        prop_assert_eq!(got, tk::boundary(&tk::Grid::volume(d, h, w, a)));
    }

    #[test]
    fn scores_are_symmetric_and_bounded((h, w, a, b) in plane()) {
        let (ma, mb) = (Mask2D::new(h, w, a).unwrap(), Mask2D::new(h, w, b).unwrap());
        for f in [dsc::<Mask2D>, jaccard::<Mask2D>] {
            let (x, y) = (f(&ma, &mb).unwrap(), f(&mb, &ma).unwrap());
            prop_assert_eq!(x, y);
            prop_assert!((0.0..=1.0).contains(&x));
        }
        prop_assert_eq!(nsd(&ma, &mb, 2.0).unwrap(), nsd(&mb, &ma, 2.0).unwrap());
        prop_assert_eq!(dsc(&ma, &ma).unwrap(), 1.0);
        prop_assert_eq!(nsd(&ma, &ma, 0.5).unwrap(), 1.0);
        prop_assert!(nsd(&ma, &mb, 0.0).is_err());
    }

    #[test]
    fn jaccard_is_a_function_of_dice((h, w, a, b) in plane()) {
        let (ma, mb) = (Mask2D::new(h, w, a).unwrap(), Mask2D::new(h, w, b).unwrap());
        let d = dsc(&ma, &mb).unwrap();
        prop_assert!((jaccard(&ma, &mb).unwrap() - d / (2.0 - d)).abs() <= 1e-12);
    }

    #[test]
    fn nsd_grows_with_tolerance((h, w, a, b) in plane(), t1 in 0.1f64..6.0, dt in 0.0f64..6.0) {
        let (ma, mb) = (Mask2D::new(h, w, a).unwrap(), Mask2D::new(h, w, b).unwrap());
        prop_assert!(nsd(&ma, &mb, t1).unwrap() <= nsd(&ma, &mb, t1 + dt).unwrap());
    }

    #[test]
    fn summary_matches_population_formula(xs in prop::collection::vec(-1e3f64..1e3, 1..40)) {
        let s = summarize(&xs).unwrap();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        prop_assert!((s.mean - mean).abs() <= 1e-9);
        prop_assert!((s.std - var.sqrt()).abs() <= 1e-9);
        prop_assert_eq!(s.n, xs.len());
    }
}

#[test]
fn paired_random_masks_up_to_24_match_brute_force() {
    let mut source = tk::PairSource::new(5, 24);
    let cfg = MetricConfig::default();
    for _ in 0..300 {
        let (p, g) = source.next_pair();
        let mp = Mask2D::new(p.height, p.width, p.bits.clone()).unwrap();
        let mg = Mask2D::new(g.height, g.width, g.bits.clone()).unwrap();
        let r = cfg.boundary_radius(p.height, p.width);
        assert!((nsd(&mp, &mg, 2.0).unwrap() - tk::surface_dice(&p, &g, 2.0)).abs() <= 1e-12);
        assert!((boundary_f(&mp, &mg, r).unwrap() - tk::boundary_f(&p, &g, r)).abs() <= 1e-12);
    }
}

#[test]
fn jf_averages_over_evaluated_frames_only() {
    let gt = Mask2D::from_fn(10, 10, |r, c| (2..6).contains(&r) && (2..6).contains(&c));
    let empty = Mask2D::empty(10, 10);
    let preds = vec![empty.clone(), gt.clone(), empty];
    let gts = vec![gt.clone(), gt.clone(), gt];
    let cfg = MetricConfig::default();
    let s = jf_scores(&preds, &gts, &[1], &cfg).unwrap();
    assert_eq!((s.j, s.f, s.jf), (1.0, 1.0, 100.0));
    let s = jf_scores(&preds, &gts, &[1, 2], &cfg).unwrap();
    assert_eq!((s.j, s.f, s.jf), (0.5, 0.5, 50.0));
    assert!(jf_scores(&preds, &gts, &[], &cfg).is_err());
}

#[test]
fn shape_mismatch_is_an_error() {
    let a = Mask2D::empty(3, 4);
    let b = Mask2D::empty(4, 3);
    assert!(dsc(&a, &b).is_err());
    assert!(nsd(&a, &b, 1.0).is_err());
    assert!(boundary_f(&a, &b, 1.0).is_err());
}
