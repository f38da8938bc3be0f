use flashmhf_cli::container::{decode_container, write_container, Stored};
use flashmhf_core::Tensor;
use proptest::prelude::*;

fn stored() -> impl Strategy<Value = (String, Stored)> {
    let shape = prop::collection::vec(1usize..5, 1..4);
    ("[a-z_.]{0,12}", shape, any::<bool>(), any::<u64>()).prop_map(|(name, shape, single, seed)| {
        let n: usize = shape.iter().product();
        let vals: Vec<f64> = (0..n).map(|i| ((seed.wrapping_mul(i as u64 + 1) % 2001) as f64 - 1000.0) / 7.0).collect();
        let t = Tensor::new(&shape, vals).unwrap();
        let s = if single { Stored::Single(t.cast()) } else { Stored::Double(t) };
        (name, s)
    })
}

proptest! {
    #[test]
    fn container_round_trip(entries in prop::collection::vec(stored(), 0..6)) {
        let mut buf = Vec::new();
        write_container(&mut buf, &entries).unwrap();
        prop_assert_eq!(decode_container(&buf).unwrap(), entries);
    }

    #[test]
    fn truncation_is_always_an_error(entries in prop::collection::vec(stored(), 1..4), cut in any::<prop::sample::Index>()) {
        let mut buf = Vec::new();
        write_container(&mut buf, &entries).unwrap();
        let at = cut.index(buf.len());
        prop_assert!(decode_container(&buf[..at]).is_err());
    }
}
