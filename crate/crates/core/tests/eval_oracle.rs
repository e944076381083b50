use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vfq_core::eval::{localization_error, match_boxes, roc_auc};
use vfq_core::genant::VertebraKeypoints;
use vfq_core::geometry::{Box2D, Point2, Point3};

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

#[test]
fn auc_equals_pair_count_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in 2..=200 {
        for _ in 0..3 {
            // Few distinct levels force many ties.
            let levels = rng.random_range(1..=n.min(12));
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            labels[0] = true;
            labels[1] = false;
            assert_eq!(roc_auc(&scores, &labels).unwrap(), pairwise_auc(&scores, &labels), "n {n}");
        }
    }
}

proptest! {
    #[test]
    fn auc_complement_and_monotone_invariance(
        data in proptest::collection::vec((-5.0..5.0f64, any::<bool>()), 2..80),
    ) {
        let scores: Vec<f64> = data.iter().map(|d| d.0).collect();
        let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let auc = roc_auc(&scores, &labels).unwrap();
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        prop_assert!((auc + roc_auc(&scores, &flipped).unwrap() - 1.0).abs() < 1e-12);
        let warped: Vec<f64> = scores.iter().map(|s| (0.7 * s).exp() + 3.0).collect();
        prop_assert_eq!(roc_auc(&warped, &labels).unwrap(), auc);
    }

    #[test]
    fn localization_is_nearest_and_order_free(
        gt_z in proptest::collection::vec(-100.0..100.0f64, 1..8),
        preds in proptest::collection::vec((-10.0..10.0f64, -10.0..10.0f64, -120.0..120.0f64), 1..8),
    ) {
        let gt: Vec<VertebraKeypoints> = gt_z
            .iter()
            .map(|&z| {
                let mut pts = [Point3::zeros(); 6];
                for (i, p) in pts.iter_mut().enumerate() {
                    let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                    *p = Point3::new(1.0, i as f64, z + s * 4.0);
                }
                VertebraKeypoints::new(pts).unwrap()
            })
            .collect();
        let centers: Vec<Point3> = preds.iter().map(|p| Point3::new(p.0, p.1, p.2)).collect();
        let errs = localization_error(&centers, &gt).unwrap();
        let mut reversed = gt.clone();
        reversed.reverse();
        prop_assert_eq!(&localization_error(&centers, &reversed).unwrap(), &errs);
        for (c, e) in centers.iter().zip(&errs) {
            let brute = gt_z
                .iter()
                .map(|&z| {
                    let m = Point3::new(1.0, 2.5, z);
                    (c - m).norm()
                })
                .fold(f64::INFINITY, f64::min);
            prop_assert!((brute - e).abs() < 1e-9);
        }
    }
}

#[test]
fn matching_independent_of_input_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let gt: Vec<Box2D> = (0..6)
            .map(|i| Box2D::new(Point2::new(0.0, 30.0 * i as f64), 20.0, 20.0).unwrap())
            .collect();
        let dets: Vec<(f64, Box2D)> = (0..8)
            .map(|_| {
                let c = Point2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..160.0));
                (rng.random_range(0.0..1.0), Box2D::new(c, 20.0, 20.0).unwrap())
            })
            .collect();
        let base = match_boxes(&dets, &gt, 0.5);
        let perm: Vec<usize> = (0..dets.len()).rev().collect();
        let shuffled: Vec<(f64, Box2D)> = perm.iter().map(|&i| dets[i]).collect();
        let m = match_boxes(&shuffled, &gt, 0.5);
        let mut pairs: Vec<(usize, usize)> = m.matches.iter().map(|x| (perm[x.detection], x.gt)).collect();
        pairs.sort();
        let want: Vec<(usize, usize)> = base.matches.iter().map(|x| (x.detection, x.gt)).collect();
        assert_eq!(pairs, want);
        assert_eq!(base.tp() + base.fn_(), gt.len());
        assert_eq!(base.tp() + base.fp(), dets.len());
    }
}
