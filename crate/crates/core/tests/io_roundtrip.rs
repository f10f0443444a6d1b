use condmean_core::io::{read_dataset_from, write_dataset};
use condmean_core::SubjectRecord;
use proptest::prelude::*;

fn arb_records() -> impl Strategy<Value = (Vec<SubjectRecord>, usize)> {
    (0usize..4, any::<bool>()).prop_flat_map(|(p, with_y)| {
        let row = (0.0f64..1e6, any::<bool>(), prop::collection::vec(-1e3f64..1e3, p), -1e3f64..1e3);
        prop::collection::vec(row, 1..40).prop_map(move |rows| {
            let recs = rows
                .into_iter()
                .map(|(t, delta, z, y)| SubjectRecord { t, delta, z, y: with_y.then_some(y) })
                .collect();
            (recs, p)
        })
    })
}

proptest! {
    #[test]
    fn write_then_read_is_identity((recs, p) in arb_records()) {
        let names: Vec<String> = (0..p).map(|k| format!("z_{k}")).collect();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &recs, &names).unwrap();
        let back = read_dataset_from(buf.as_slice(), "roundtrip", false).unwrap();
        prop_assert_eq!(&back.z_names, &names);
        prop_assert_eq!(back.records, recs);
    }
}
