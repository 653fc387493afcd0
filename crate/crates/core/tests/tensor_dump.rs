use proptest::prelude::*;
use stgkit::tensor::Tensor;

proptest! {
    #[test]
    fn dump_round_trips(shape in prop::collection::vec(1usize..5, 1..=3), seed in prop::collection::vec(-1e6..1e6f64, 64)) {
        let n: usize = shape.iter().product();
        let t = Tensor::new(shape.clone(), seed[..n].to_vec()).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        prop_assert_eq!(Tensor::read_from(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn truncated_dumps_are_rejected(cut in 0usize..40) {
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let cut = cut.min(buf.len() - 1);
        prop_assert!(Tensor::read_from(&buf[..cut]).is_err());
    }
}
