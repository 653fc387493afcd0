use proptest::prelude::*;
use stgkit::geometry::{BBox, Tube};
use stgkit::losses::{giou_loss, l1_loss, space_loss, time_loss, LossWeights, TokenBatch};
use stgkit::tensor::Tensor;

fn tube(n: usize) -> impl Strategy<Value = Tube> {
    prop::collection::vec(
        (0.1..0.9f64, 0.1..0.9f64, 0.0..0.2f64, 0.0..0.2f64)
            .prop_map(|(cx, cy, w, h)| BBox { cx, cy, w, h }),
        n,
    )
    .prop_map(|b| Tube::new(2, b).unwrap())
}

fn tubes() -> impl Strategy<Value = (Tube, Tube)> {
    (1usize..6).prop_flat_map(|n| (tube(n), tube(n)))
}

proptest! {
    #[test]
    fn space_terms_are_bounded((p, g) in tubes()) {
        let l1 = l1_loss(&p, &g).unwrap();
        let gl = giou_loss(&p, &g).unwrap();
        prop_assert!(l1 >= 0.0);
        prop_assert!((0.0..=2.0).contains(&gl));
        let w = LossWeights::default();
        prop_assert!((space_loss(&p, &g, &w).unwrap() - (3.0 * l1 + gl)).abs() < 1e-12);
    }

    #[test]
    fn identical_tubes_cost_nothing((p, _) in tubes()) {
        prop_assert_eq!(space_loss(&p, &p, &LossWeights::default()).unwrap(), 0.0);
    }

    #[test]
    fn zeroed_l1_weight_leaves_giou((p, g) in tubes()) {
        let w = LossWeights { lambda_l1: 0.0, lambda_giou: 1.0, ..Default::default() };
        prop_assert_eq!(space_loss(&p, &g, &w).unwrap(), giou_loss(&p, &g).unwrap());
    }

    #[test]
    fn cross_entropy_is_non_negative(
        steps in 1usize..5,
        vocab in 2usize..10,
        seed in prop::collection::vec(-20.0..20.0f64, 50),
        t in prop::collection::vec(0usize..100, 5),
    ) {
        let logits = Tensor::new(vec![steps, vocab], seed[..steps * vocab].to_vec()).unwrap();
        let targets: Vec<usize> = t[..steps].iter().map(|x| x % vocab).collect();
        let loss = time_loss(&TokenBatch::new(logits, targets).unwrap()).unwrap();
        prop_assert!(loss >= 0.0 && loss.is_finite());
    }
}
