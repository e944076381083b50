use serde::{Deserialize, Serialize};

use crate::geometry::{Box2D, Keypoints2D, Point2};

/// Number of encoded coordinates per anchor (six keypoints, x and y).
pub const ENCODED_LEN: usize = 12;

/// Keypoint offsets relative to an anchor, normalized by its size:
/// `[e0x, e0y, e1x, e1y, ...]` in keypoint order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodedKeypoints(pub [f64; ENCODED_LEN]);

/// `e = (g - a_center) / a_size` per coordinate.
pub fn encode_keypoints(g: &Keypoints2D, anchor: &Box2D) -> EncodedKeypoints {
    let c = anchor.center();
    let mut e = [0.0; ENCODED_LEN];
    for (n, p) in g.iter().enumerate() {
        e[2 * n] = (p.x - c.x) / anchor.width();
        e[2 * n + 1] = (p.y - c.y) / anchor.height();
    }
    EncodedKeypoints(e)
}

/// Inverse of [`encode_keypoints`].
pub fn decode_keypoints(e: &[f64], anchor: &Box2D) -> Keypoints2D {
    debug_assert_eq!(e.len(), ENCODED_LEN);
    let c = anchor.center();
    std::array::from_fn(|n| {
        Point2::new(
            e[2 * n] * anchor.width() + c.x,
            e[2 * n + 1] * anchor.height() + c.y,
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn anchor(x: f64, y: f64, w: f64, h: f64) -> Box2D {
        Box2D::new(Point2::new(x, y), w, h).unwrap()
    }

    #[test]
    fn center_encodes_to_zero() {
        let a = anchor(3.0, -4.0, 5.0, 6.0);
        let e = encode_keypoints(&[a.center(); 6], &a);
        assert!(e.0.iter().all(|&v| v == 0.0));
        assert!(decode_keypoints(&[0.0; 12], &a).iter().all(|p| *p == a.center()));
    }

    #[test]
    fn hand_example() {
        let a = anchor(10.0, 20.0, 4.0, 8.0);
        let e = encode_keypoints(&[Point2::new(12.0, 24.0); 6], &a);
        for n in 0..6 {
            assert_eq!((e.0[2 * n], e.0[2 * n + 1]), (0.5, 0.5));
        }
        let g = decode_keypoints(&[0.5; 12], &a);
        assert!(g.iter().all(|p| *p == Point2::new(12.0, 24.0)));
    }

    fn arb_kps() -> impl Strategy<Value = Keypoints2D> {
        proptest::array::uniform6((-100.0..100.0f64, -100.0..100.0f64))
            .prop_map(|a| a.map(|(x, y)| Point2::new(x, y)))
    }

    proptest! {
        #[test]
        fn round_trip(g in arb_kps(), x in -50.0..50.0f64, y in -50.0..50.0f64, w in 1.0..40.0f64, h in 1.0..40.0f64) {
            let a = anchor(x, y, w, h);
            let back = decode_keypoints(&encode_keypoints(&g, &a).0, &a);
            for (p, q) in g.iter().zip(&back) {
                prop_assert!((p.x - q.x).abs() < 1e-9 && (p.y - q.y).abs() < 1e-9);
            }
        }

        #[test]
        fn shift_invariant(g in arb_kps(), dx in -30.0..30.0f64, dy in -30.0..30.0f64) {
            let a = anchor(1.0, 2.0, 7.0, 9.0);
            let b = anchor(1.0 + dx, 2.0 + dy, 7.0, 9.0);
            let gs = g.map(|p| Point2::new(p.x + dx, p.y + dy));
            let (ea, eb) = (encode_keypoints(&g, &a), encode_keypoints(&gs, &b));
            for (u, v) in ea.0.iter().zip(&eb.0) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }
}
