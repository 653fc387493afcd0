use proptest::prelude::*;
use stgkit::geometry::{box_giou, box_iou, clamp_box, temporal_iou, BBox, Corners, TimeSpan};

fn unit_box() -> impl Strategy<Value = BBox> {
    (0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64).prop_map(|(a, b, c, d)| {
        BBox::from_corners(Corners {
            x1: a.min(c),
            y1: b.min(d),
            x2: a.max(c),
            y2: b.max(d),
        })
        .unwrap()
    })
}

fn any_box() -> impl Strategy<Value = BBox> {
    (-2.0..3.0f64, -2.0..3.0f64, -1.0..3.0f64, -1.0..3.0f64)
        .prop_map(|(cx, cy, w, h)| BBox { cx, cy, w, h })
}

fn span() -> impl Strategy<Value = TimeSpan> {
    (0.0..100.0f64, 0.0..50.0f64).prop_map(|(s, d)| TimeSpan::new(s, s + d).unwrap())
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in unit_box(), b in unit_box()) {
        let ab = box_iou(&a, &b);
        prop_assert_eq!(ab, box_iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn giou_bounded_by_iou(a in unit_box(), b in unit_box()) {
        let g = box_giou(&a, &b);
        prop_assert!(g <= box_iou(&a, &b));
        prop_assert!((-1.0..=1.0).contains(&g));
        prop_assert_eq!(g, box_giou(&b, &a));
    }

    #[test]
    fn self_overlap_is_one(a in unit_box()) {
        prop_assert_eq!(box_iou(&a, &a), 1.0);
        prop_assert_eq!(box_giou(&a, &a), 1.0);
    }

    #[test]
    fn clamp_is_idempotent_and_in_frame(b in any_box()) {
        let once = clamp_box(&b).unwrap();
        let twice = clamp_box(&once).unwrap();
        prop_assert_eq!(once, twice);
        let c = once.to_corners();
        prop_assert!(0.0 <= c.x1 && c.x1 <= c.x2 && c.x2 <= 1.0, "{:?}", c);
        prop_assert!(0.0 <= c.y1 && c.y1 <= c.y2 && c.y2 <= 1.0, "{:?}", c);
        prop_assert!(once.validate().is_ok());
    }

    #[test]
    fn corner_round_trip(b in unit_box()) {
        let back = BBox::from_corners(b.to_corners()).unwrap();
        for (x, y) in <[f64; 4]>::from(b).iter().zip(<[f64; 4]>::from(back)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn temporal_iou_is_symmetric_and_bounded(a in span(), b in span()) {
        let ab = temporal_iou(&a, &b);
        prop_assert_eq!(ab, temporal_iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(temporal_iou(&a, &a), 1.0);
    }
}
